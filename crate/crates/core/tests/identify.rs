use epident::data::CumulativeSeries;
use epident::epimodel::{simulate_si, simulate_siur, EpiParams, TauProfile};
use epident::identify::{
    i0_from_bv, siur_init, sweep_record_model, sweep_uncertainty, tau_bv_value, tau_exact,
    SweepFixed, SweepGrid, SweepRecord,
};
use epident::pheno::{BVModel, Convention, ExponentialModel};

fn round_trip(tau: TauProfile) {
    let p = EpiParams::si(1e6, 0.2, 0.4, 0.0, 20.0, 5.0);
    let grid: Vec<f64> = (0..=120).map(|d| d as f64).collect();
    let tr = simulate_si(&p, &tau, &grid).unwrap();
    let sm = tr.to_smoothed(&p, &tau).unwrap();
    let rec = tau_exact(&sm, &p).unwrap();
    assert!(rec.negativity_flag.is_none());
    for (k, &t) in grid.iter().enumerate() {
        let truth = tau.value(t);
        assert!(
            (rec.tau[k] - truth).abs() <= 1e-5 * truth,
            "t={t}: {} vs {truth}",
            rec.tau[k]
        );
    }
}

#[test]
fn exact_formula_recovers_constant_rate() {
    round_trip(TauProfile::Constant { tau0: 0.5e-6 });
}

#[test]
fn exact_formula_recovers_intervention_profile() {
    round_trip(TauProfile::Chowell {
        tau0: 0.6e-6,
        p: 0.8,
        mu: 0.15,
        n: 25.0,
    });
}

#[test]
fn closed_form_rate_reproduces_bv_curve() {
    let m = BVModel::new(0.66, 0.22, 198.0, 67102.0, 0.0).unwrap();
    for nu in [0.1, 0.2] {
        let p = EpiParams::si(1.4e9, nu, 0.5, 0.0, i0_from_bv(&m, nu, 0.5), 198.0);
        let pc = p;
        let tau = TauProfile::custom(move |t| tau_bv_value(&m, &pc, t), vec![]);
        let grid: Vec<f64> = (0..=100).map(|d| d as f64).collect();
        let tr = simulate_si(&p, &tau, &grid).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let want = m.eval(t);
            assert!(
                (tr.cr[k] - want).abs() <= 1e-4 * want,
                "nu={nu} t={t}: {} vs {want}",
                tr.cr[k]
            );
        }
    }
}

#[test]
fn sweep_recovers_generating_cell() {
    let fixed = SweepFixed {
        nu: 0.25,
        eta: 0.2,
        s0: 1e9,
    };
    let chi = ExponentialModel::new(2.0, 0.25, 0.0, 0.0, Convention::Calendar).unwrap();
    let (f, n, mu) = (0.3, 20.0, 0.1);
    let base = EpiParams {
        eta: fixed.eta,
        ..EpiParams::si(fixed.s0, fixed.nu, f, 0.0, 0.0, 0.0)
    };
    let init = siur_init(&chi, &base).unwrap();
    let truth = SweepRecord {
        t1: 0,
        t2: 12,
        n,
        f,
        mu,
        mad: 0.0,
        chi1: chi.chi1,
        chi2: chi.chi2,
        tau0: init.tau0,
        i0: init.i0,
        u0: init.u0,
        cr0: chi.eval(0.0),
    };
    let (p, tau) = sweep_record_model(&truth, &fixed);
    let days: Vec<f64> = (0..=60).map(|d| d as f64).collect();
    let tr = simulate_siur(&p, &tau, &days).unwrap();
    let s = CumulativeSeries::new(0, tr.cr.clone(), "synthetic").unwrap();

    let grids = SweepGrid {
        t1: vec![0],
        t2: vec![10, 12, 15],
        n: vec![16.0, 18.0, 20.0, 22.0],
        f: vec![0.2, 0.3, 0.4],
    };
    let res = sweep_uncertainty(&s, &grids, &fixed, 40.0).unwrap();
    assert_eq!(res.records.len(), 36);
    assert_eq!(res.skipped, 0);
    let gen = res
        .records
        .iter()
        .find(|r| r.t2 == 12 && r.n == n && r.f == f)
        .unwrap();
    let scale = s.values().last().unwrap();
    assert!(
        gen.mad <= res.mad_min + 1e-6 * scale,
        "{} vs {}",
        gen.mad,
        res.mad_min
    );
    assert!((gen.mu - mu).abs() <= 0.02 * mu, "mu {}", gen.mu);
    assert!(res.retained_records().any(|r| r == gen));
    // lexicographic order of cells
    let keys: Vec<_> = res.records.iter().map(|r| (r.t1, r.t2, r.n, r.f)).collect();
    assert!(keys
        .windows(2)
        .all(|w| w[0].partial_cmp(&w[1]) == Some(std::cmp::Ordering::Less)));
}

#[test]
fn sweep_skips_short_windows() {
    let vals: Vec<f64> = (0..30).map(|d| 5.0 * (0.2 * d as f64).exp()).collect();
    let s = CumulativeSeries::new(0, vals, "x").unwrap();
    let grids = SweepGrid {
        t1: vec![0, 8],
        t2: vec![10],
        n: vec![15.0],
        f: vec![0.5],
    };
    let fixed = SweepFixed {
        nu: 0.2,
        eta: 0.2,
        s0: 1e8,
    };
    let res = sweep_uncertainty(&s, &grids, &fixed, 10.0).unwrap();
    assert_eq!(res.records.len(), 1);
    assert_eq!(res.skipped, 1);
}
