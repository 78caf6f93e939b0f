#![allow(clippy::needless_range_loop)]

use epident::data::CumulativeSeries;
use epident::epimodel::{simulate_siur_with, EpiParams, TauProfile};
use epident::identify::siur_init;
use epident::ode::OdeOptions;
use epident::pheno::{Convention, ExponentialModel};
use epident::spectral::{
    age_exponential_fits, age_initial_state, age_simulate, age_simulate_with, age_star_states,
    age_tau_star, check_single_exponential, dominant_mode, AgeMode, AgeModel, AgeState,
    CooperativeMatrix,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// det(A − λI) by Gaussian elimination with partial pivoting
fn char_poly(a: &[Vec<f64>], lambda: f64) -> f64 {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for i in 0..n {
        m[i][i] -= lambda;
    }
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))
            .unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let k = m[r][c] / m[c][c];
            for j in c..n {
                m[r][j] -= k * m[c][j];
            }
        }
    }
    det
}

// largest real root: scan down from a Gershgorin bound, then bisect
fn largest_real_root(a: &[Vec<f64>]) -> f64 {
    let bound = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r[i] + r
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v.abs())
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0;
    let step = 1e-3;
    let mut hi = bound;
    let mut lo = hi - step;
    while char_poly(a, lo).signum() == char_poly(a, hi).signum() {
        hi = lo;
        lo -= step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if char_poly(a, mid).signum() == char_poly(a, hi).signum() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn dominant_eigenvalue_matches_characteristic_polynomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..4)
                    .map(|j| {
                        if i == j {
                            rng.random_range(-2.0..0.5)
                        } else {
                            rng.random_range(0.01..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let a = CooperativeMatrix::from_rows(&rows).unwrap();
        let d = dominant_mode(&a).unwrap();
        let oracle = largest_real_root(&rows);
        assert!((d.s - oracle).abs() < 1e-8, "{} vs {oracle}", d.s);
        assert!(d.v_right.iter().chain(d.v_left.iter()).all(|v| *v > 0.0));
        let m = a.matrix();
        let scale = d.s.abs().max(1.0);
        assert!((m * &d.v_right - &d.v_right * d.s).amax() <= 1e-10 * scale * d.v_right.amax());
        assert!(
            (m.transpose() * &d.v_left - &d.v_left * d.s).amax() <= 1e-10 * scale * d.v_left.amax()
        );
    }
}

#[test]
fn siur_matrix_has_fitted_rate_as_spectral_bound() {
    let chi = ExponentialModel::new(1.2, 0.27, 0.0, 0.0, Convention::Calendar).unwrap();
    let p = EpiParams {
        eta: 1.0 / 7.0,
        ..EpiParams::si(1.4e9, 0.2, 0.3, 0.0, 0.0, 0.0)
    };
    let init = siur_init(&chi, &p).unwrap();
    assert!(init.eigen_residual < 1e-12);
    let a = CooperativeMatrix::siur(init.tau0, p.s0, p.nu, p.f, p.eta).unwrap();
    let d = dominant_mode(&a).unwrap();
    assert!((d.s - 0.27).abs() < 1e-9, "{}", d.s);
    // (I₀, U₀) is the right Perron direction
    assert!((d.v_right[1] / d.v_right[0] - init.u0 / init.i0).abs() < 1e-9);
}

fn test_matrix() -> CooperativeMatrix {
    CooperativeMatrix::from_rows(&[vec![0.05, 0.4], vec![0.15, -0.3]]).unwrap()
}

#[test]
fn eigen_initialized_output_is_single_exponential() {
    let a = test_matrix();
    let d = dominant_mode(&a).unwrap();
    let y0 = [1.0, 0.5];
    let chi1 = 7.0;
    let w = y0[0] * d.v_right[0] + y0[1] * d.v_right[1];
    let x0: Vec<f64> = d.v_right.iter().map(|v| v * chi1 / w).collect();
    let v = check_single_exponential(&a, &y0, &x0, 30.0).unwrap();
    assert!(v.is_single_exp, "variation {}", v.max_rel_variation);
    assert!((v.chi1_est - chi1).abs() < 1e-9 * chi1);
    assert!((v.chi2_est - d.s).abs() < 1e-15);
}

#[test]
fn generic_initialization_converges_to_projection() {
    let a = test_matrix();
    let d = dominant_mode(&a).unwrap();
    let trace = a.matrix()[(0, 0)] + a.matrix()[(1, 1)];
    let gap = d.s - (trace - d.s);
    let y0 = [1.0, 1.0];
    let x0 = [1.0, 3.0];
    let long = check_single_exponential(&a, &y0, &x0, 100.0 / gap).unwrap();
    assert!((long.final_ratio - long.chi1_est).abs() < 1e-8 * long.chi1_est);
    let short = check_single_exponential(&a, &y0, &x0, 5.0).unwrap();
    assert!(!short.is_single_exp);
}

#[test]
fn block_triangular_outputs_with_distinct_rates_are_reducible() {
    // two positive outputs growing at different rates cannot come from an irreducible matrix
    for (a, c) in [(0.3, 0.1), (0.2, -0.1), (0.05, 0.4)] {
        let m = CooperativeMatrix::from_rows(&[vec![a, 1.0], vec![0.0, c]]).unwrap();
        assert!(!m.is_irreducible());
        let lower = CooperativeMatrix::from_rows(&[vec![a, 0.0], vec![0.7, c]]).unwrap();
        assert!(!lower.is_irreducible());
    }
}

fn one_group(chi: ExponentialModel, s: f64, f: f64, phi: f64) -> AgeModel {
    AgeModel {
        phi: DMatrix::from_element(1, 1, phi),
        populations: vec![1e6],
        susceptibles: vec![s],
        nu: 0.2,
        f: vec![f],
        chi: vec![chi],
        eta: 0.15,
    }
}

#[test]
fn identical_groups_give_identical_fits() {
    let vals: Vec<f64> = (0..20)
        .map(|d| 4.0 * (0.21 * d as f64).exp() - 1.0)
        .collect();
    let s = CumulativeSeries::new(0, vals, "g").unwrap();
    let fits = age_exponential_fits(&[s.clone(), s.clone(), s], (0, 19)).unwrap();
    assert!(fits.windows(2).all(|w| w[0] == w[1]));
    assert!((fits[0].chi2 - 0.21).abs() < 1e-8);
}

#[test]
fn distinct_groups_recovered_and_errors_name_group() {
    let series: Vec<CumulativeSeries> = [(2.0, 0.15, 1.0), (5.0, 0.3, 4.0)]
        .iter()
        .map(|&(a, b, c)| {
            CumulativeSeries::new(
                0,
                (0..20).map(|d| a * (b * d as f64).exp() - c).collect(),
                "g",
            )
            .unwrap()
        })
        .collect();
    let fits = age_exponential_fits(&series, (2, 15)).unwrap();
    for (m, (a, b, c)) in fits.iter().zip([(2.0, 0.15, 1.0), (5.0, 0.3, 4.0)]) {
        assert!(
            (m.chi1 - a).abs() < 1e-6 * a
                && (m.chi2 - b).abs() < 1e-8
                && (m.chi3 - c).abs() < 1e-6 * a
        );
    }
    let short = CumulativeSeries::new(0, vec![1.0, 2.0, 3.0], "g").unwrap();
    let e = age_exponential_fits(&[series[0].clone(), short], (0, 2)).unwrap_err();
    assert!(e.to_string().contains("group"), "{e}");
}

#[test]
fn star_states_satisfy_unreported_equation() {
    let chi = ExponentialModel::new(3.0, 0.25, 0.0, 0.0, Convention::Calendar).unwrap();
    let m = one_group(chi, 1e6, 0.4, 1.0);
    let st = age_star_states(&m).unwrap()[0];
    let nu2 = m.nu * (1.0 - m.f[0]);
    for t in [0.0f64, 3.0, 10.0] {
        let g = (0.25 * t).exp();
        let resid = 0.25 * st.ustar * g - (nu2 * st.istar * g - m.eta * st.ustar * g);
        assert!(resid.abs() < 1e-12 * st.istar * g);
        // CU' = ν₂I integrates from CU*
        let cu = st.custar * g;
        assert!((cu - (st.custar + nu2 * st.istar * (g - 1.0) / 0.25)).abs() < 1e-12 * cu);
    }
}

#[test]
fn tau_star_is_one_when_k_equals_h() {
    let chi = ExponentialModel::new(3.0, 0.25, 0.0, 0.0, Convention::Calendar).unwrap();
    let probe = one_group(chi, 1.0, 0.4, 2.0);
    let st = age_star_states(&probe).unwrap()[0];
    let s = (0.25 + probe.nu) * st.istar * probe.populations[0] / (2.0 * (st.istar + st.ustar));
    let m = one_group(chi, s, 0.4, 2.0);
    let tau = age_tau_star(&m, (0.0, 10.0)).unwrap();
    assert!((tau[0] - 1.0).abs() < 1e-13);
}

#[test]
fn tau_star_matches_quadrature() {
    let chi = ExponentialModel::new(3.0, 0.25, 0.0, 0.0, Convention::Calendar).unwrap();
    let m = one_group(chi, 9e5, 0.4, 1.3);
    let st = age_star_states(&m).unwrap()[0];
    let k = |t: f64| (0.25 + m.nu) * st.istar * (0.25 * t).exp();
    let h = |t: f64| {
        m.susceptibles[0] * 1.3 * (st.istar + st.ustar) / m.populations[0] * (0.25 * t).exp()
    };
    let simpson = |g: &dyn Fn(f64) -> f64, a: f64, b: f64| {
        let n = 100_000;
        let dx = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * g(a + i as f64 * dx)
            })
            .sum::<f64>()
            * dx
            / 3.0
    };
    let oracle = simpson(&|t| k(t) * h(t), 5.0, 20.0) / simpson(&|t| h(t) * h(t), 5.0, 20.0);
    let tau = age_tau_star(&m, (5.0, 20.0)).unwrap()[0];
    assert!((tau - oracle).abs() < 1e-10 * oracle, "{tau} vs {oracle}");
}

fn two_group_eigenmode() -> (AgeModel, [f64; 2]) {
    let tau = [0.35, 0.2];
    let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.4, 1.5]);
    let pops = [4e6, 6e6];
    let sus = [3.9e6, 5.8e6];
    let (nu, eta, f) = (0.2, 0.15, [0.3, 0.6]);
    // linear system on (I₁, I₂, U₁, U₂)
    let mut a = DMatrix::zeros(4, 4);
    for j in 0..2 {
        for k in 0..2 {
            let c = tau[j] * sus[j] * phi[(j, k)] / pops[k];
            a[(j, k)] += c;
            a[(j, 2 + k)] += c;
        }
        a[(j, j)] -= nu;
        a[(2 + j, j)] = nu * (1.0 - f[j]);
        a[(2 + j, 2 + j)] = -eta;
    }
    let d = dominant_mode(&CooperativeMatrix::new(a).unwrap()).unwrap();
    let chi = (0..2)
        .map(|j| {
            let istar = 100.0 * d.v_right[j];
            ExponentialModel::new(nu * f[j] * istar / d.s, d.s, 0.0, 0.0, Convention::Calendar)
                .unwrap()
        })
        .collect();
    (
        AgeModel {
            phi,
            populations: pops.to_vec(),
            susceptibles: sus.to_vec(),
            nu,
            f: f.to_vec(),
            chi,
            eta,
        },
        tau,
    )
}

#[test]
fn tau_star_recovers_eigenmode_rates() {
    let (m, tau) = two_group_eigenmode();
    let est = age_tau_star(&m, (0.0, 20.0)).unwrap();
    for (a, b) in est.iter().zip(tau) {
        assert!((a - b).abs() < 1e-8 * b, "{a} vs {b}");
    }
}

#[test]
fn frozen_eigenmode_grows_at_common_rate() {
    let (m, tau) = two_group_eigenmode();
    let init = age_initial_state(&m, 0.0).unwrap();
    let grid: Vec<f64> = (0..=15).map(|d| d as f64).collect();
    let tr = age_simulate(&m, &tau, &init, &grid, AgeMode::FrozenS).unwrap();
    let rate = m.chi[0].chi2;
    for j in 0..2 {
        let base = m.nu * m.f[j] * tr.i[j][0];
        for (k, &t) in grid.iter().enumerate() {
            let got = m.nu * m.f[j] * tr.i[j][k];
            let want = base * (rate * t).exp();
            assert!((got - want).abs() < 1e-7 * want, "group {j} t={t}");
        }
        assert!(tr.s[j].iter().all(|s| *s == m.susceptibles[j]));
    }
}

#[test]
fn single_group_reduces_to_siur() {
    let chi = ExponentialModel::new(3.0, 0.25, 0.0, 0.0, Convention::Calendar).unwrap();
    let m = one_group(chi, 9e5, 0.4, 1.3);
    let tau = 0.4;
    let init = AgeState {
        s: vec![9e5],
        i: vec![50.0],
        u: vec![20.0],
        cr: vec![10.0],
        cu: vec![0.0],
    };
    let grid: Vec<f64> = (0..=80).map(|d| d as f64).collect();
    let opts = OdeOptions::with_tolerances(1e-12, 1e-10);
    let age = age_simulate_with(&m, &[tau], &init, &grid, AgeMode::Full, &opts).unwrap();
    let p = EpiParams {
        eta: m.eta,
        u0: 20.0,
        ..EpiParams::si(9e5, m.nu, 0.4, 0.0, 50.0, 10.0)
    };
    let rate = TauProfile::Constant {
        tau0: tau * 1.3 / 1e6,
    };
    let siur = simulate_siur_with(&p, &rate, &grid, &opts).unwrap();
    let u = siur.u.as_ref().unwrap();
    for k in 0..grid.len() {
        for (a, b) in [
            (age.s[0][k], siur.s[k]),
            (age.i[0][k], siur.i[k]),
            (age.u[0][k], u[k]),
            (age.cr[0][k], siur.cr[k]),
        ] {
            assert!(
                (a - b).abs() <= 1e-9 * b.abs().max(1.0),
                "k={k}: {a} vs {b}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn age_compartments_stay_non_negative(
        t1 in 0.05f64..1.0, t2 in 0.05f64..1.0, c in 0.0f64..2.0, i1 in 0.0f64..1e3, i2 in 1.0f64..1e3,
    ) {
        let chi = ExponentialModel::new(1.0, 0.2, 0.0, 0.0, Convention::Calendar).unwrap();
        let m = AgeModel {
            phi: DMatrix::from_row_slice(2, 2, &[1.0, c, 0.5, 1.0]),
            populations: vec![1e5, 2e5],
            susceptibles: vec![1e5, 2e5],
            nu: 0.2,
            f: vec![0.5, 0.8],
            chi: vec![chi, chi],
            eta: 0.1,
        };
        let init = AgeState { s: vec![1e5, 2e5], i: vec![i1, i2], u: vec![0.0, 0.0], cr: vec![0.0, 0.0], cu: vec![0.0, 0.0] };
        let grid: Vec<f64> = (0..=200).map(|d| d as f64).collect();
        let tr = age_simulate(&m, &[t1, t2], &init, &grid, AgeMode::Full).unwrap();
        for v in [&tr.s, &tr.i, &tr.u, &tr.cr, &tr.cu] {
            prop_assert!(v.iter().flatten().all(|x| *x >= -1e-9));
        }
    }

    #[test]
    fn projector_is_idempotent_and_commutes(entries in proptest::collection::vec(0.01f64..1.0, 9), diag in proptest::collection::vec(-1.0f64..0.5, 3)) {
        let a = DMatrix::from_fn(3, 3, |i, j| if i == j { diag[i] } else { entries[3 * i + j] });
        let m = CooperativeMatrix::new(a.clone()).unwrap();
        let d = dominant_mode(&m).unwrap();
        let p = &d.projector;
        prop_assert!((p * p - p).amax() < 1e-10);
        prop_assert!((&a * p - p * d.s).amax() < 1e-10);
        prop_assert!((p * &a - p * d.s).amax() < 1e-10);
    }
}
