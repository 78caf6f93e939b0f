use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use epident::data::{
    parse_integer_day, read_age_series, read_series, ColumnSpec, CumulativeSeries,
};
use epident::epimodel::{simulate_siur, EpiParams, TauProfile};
use epident::fitkit::{fit_bv, fit_exponential};
use epident::identify::{i0_from_bv, tau_bv_closed};
use epident::io;
use epident::pheno::{BVModel, Convention, PhenoModel};
use epident::spectral::{age_exponential_fits, age_star_states, age_tau_star, AgeModel};
use nalgebra::DMatrix;
use tempfile::TempDir;

fn epident(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epident"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_series(
    dir: &Path,
    name: &str,
    days: impl Iterator<Item = i64>,
    f: impl Fn(f64) -> f64,
) -> PathBuf {
    let mut text = String::from("date,cumulative\n");
    for d in days {
        text.push_str(&format!("{d},{:e}\n", f(d as f64)));
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn load(path: &Path) -> CumulativeSeries {
    let label = path.file_stem().unwrap().to_string_lossy().into_owned();
    read_series(
        fs::File::open(path).unwrap(),
        &ColumnSpec::default(),
        &parse_integer_day,
        &label,
    )
    .unwrap()
}

fn exp_data(t: f64) -> f64 {
    2.0 * (0.2 * t).exp() + 5.0 + 0.3 * t.sin()
}

fn bv() -> BVModel {
    BVModel::new(0.2, 0.5, 100.0, 1e5, 0.0).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_outputs_match_library_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let data = write_series(dir.path(), "exp.csv", 0..=20, exp_data);
    let out = dir.path().join("out");
    let o = epident(&[
        "fit",
        s(&data),
        "--model",
        "exp",
        "--window",
        "2:18",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let fit = fit_exponential(&load(&data), (2, 18), Convention::Calendar).unwrap();
    assert_eq!(
        fs::read_to_string(out.join("fit_table.csv")).unwrap(),
        io::fit_table_csv(&fit)
    );
    let text = fs::read_to_string(out.join("fit_params.txt")).unwrap();
    assert_eq!(text, fit.model.to_text());
    assert_eq!(PhenoModel::from_text(&text).unwrap(), fit.model);
    let svg = fs::read_to_string(out.join("fit.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn missing_input_exits_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let o = epident(&[
        "fit",
        s(&dir.path().join("nope.csv")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bv_on_three_points_reports_short_window() {
    let dir = TempDir::new().unwrap();
    let data = write_series(dir.path(), "tiny.csv", 0..=2, |t| 10.0 + t);
    let o = epident(&["fit", s(&data), "--model", "bv", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("window too short"), "{}", stderr(&o));
}

#[test]
fn raw_reconstruction_is_refused() {
    let dir = TempDir::new().unwrap();
    let data = write_series(dir.path(), "bv.csv", 0..=40, |t| bv().eval(t));
    for extra in [&["--regularize", "none"][..], &[]] {
        let mut args = vec![
            "reconstruct",
            s(&data),
            "--s0",
            "1e7",
            "--out",
            s(dir.path()),
        ];
        args.extend_from_slice(extra);
        let o = epident(&args);
        assert_eq!(o.status.code(), Some(2));
        assert!(
            stderr(&o).contains("negative transmission rates"),
            "{}",
            stderr(&o)
        );
    }
}

#[test]
fn bv_reconstruction_matches_library() {
    let dir = TempDir::new().unwrap();
    let data = write_series(dir.path(), "bv.csv", 0..=60, |t| bv().eval(t));
    let out = dir.path().join("out");
    let o = epident(&[
        "reconstruct",
        s(&data),
        "--regularize",
        "bv",
        "--s0",
        "1e7",
        "--nu",
        "0.2",
        "--f",
        "0.5",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let fit = fit_bv(&load(&data), (0, 60)).unwrap();
    let PhenoModel::BernoulliVerhulst(m) = fit.model else {
        panic!()
    };
    let grid: Vec<f64> = (0..=60).map(f64::from).collect();
    let p = EpiParams::si(1e7, 0.2, 0.5, 0.0, i0_from_bv(&m, 0.2, 0.5), m.eval(0.0));
    let curve = tau_bv_closed(&m, &p, &grid).unwrap();
    assert_eq!(
        fs::read_to_string(out.join("tau.csv")).unwrap(),
        io::tau_csv(&curve)
    );
    for f in [
        "repro.csv",
        "smoothed.csv",
        "positivity.txt",
        "tau.svg",
        "repro.svg",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(out.join("repro.svg"))
        .unwrap()
        .contains("Re = 1 at t ="));
}

#[test]
fn daywise_bracket_failure_exits_with_numerical_code() {
    let dir = TempDir::new().unwrap();
    let data = write_series(dir.path(), "bv.csv", 0..=40, |t| bv().eval(t));
    let o = epident(&[
        "reconstruct",
        s(&data),
        "--regularize",
        "spline",
        "--s0",
        "1e7",
        "--daywise",
        "--tau-max",
        "1e-15",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("larger tau_max"));
}

#[test]
fn single_cell_sweep_retains_one_row() {
    let dir = TempDir::new().unwrap();
    let p = EpiParams {
        s0: 1e6,
        nu: 1.0 / 3.0,
        f: 0.5,
        eta: 1.0 / 7.0,
        t0: 0.0,
        i0: 20.0,
        u0: 10.0,
        cr0: 5.0,
    };
    let tau = TauProfile::ExponentialDecay {
        tau0: 6e-7,
        mu: 0.1,
        n: 12.0,
    };
    let grid: Vec<f64> = (0..=30).map(f64::from).collect();
    let tr = simulate_siur(&p, &tau, &grid).unwrap();
    let data = write_series(dir.path(), "siur.csv", 0..=30, |t| tr.cr[t as usize]);
    let out = dir.path().join("out");
    let o = epident(&[
        "sweep",
        s(&data),
        "--grid-t1",
        "0",
        "--grid-t2",
        "10",
        "--grid-N",
        "12",
        "--f-set",
        "0.5",
        "--s0",
        "1e6",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("sweep_retained.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2, "{text}");
    assert!(rows[0].starts_with("t1,t2,N,f,mu,mad"));
    assert!(out.join("fan.svg").exists());
}

#[test]
fn zero_transmission_keeps_susceptibles_constant() {
    let dir = TempDir::new().unwrap();
    let o = epident(&[
        "simulate",
        "--model",
        "siur",
        "--s0",
        "1e5",
        "--i0",
        "50",
        "--tau0",
        "0",
        "--horizon",
        "30",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, cols) =
        io::read_columns(&fs::read_to_string(dir.path().join("trajectory.csv")).unwrap()).unwrap();
    let si = header.iter().position(|h| h == "S").unwrap();
    assert_eq!(cols[si].len(), 31);
    assert!(cols[si].iter().all(|&v| v == 1e5));
}

#[test]
fn agefit_table_matches_library_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("date,young,old\n");
    for d in 0..=20 {
        let t = d as f64;
        text.push_str(&format!(
            "{d},{:e},{:e}\n",
            10.0 * (0.15 * t).exp(),
            20.0 * (0.15 * t).exp()
        ));
    }
    let data = dir.path().join("age.csv");
    fs::write(&data, &text).unwrap();
    let contact = dir.path().join("phi.csv");
    fs::write(&contact, "1.0,0.5\n0.5,1.0\n").unwrap();
    let out = dir.path().join("out");
    let o = epident(&[
        "agefit",
        s(&data),
        "--contact",
        s(&contact),
        "--populations",
        "1e6,2e6",
        "--window",
        "2:18",
        "--nu",
        "0.25",
        "--f",
        "0.5",
        "--horizon",
        "5",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let series = read_age_series(text.as_bytes(), &parse_integer_day).unwrap();
    let chi = age_exponential_fits(&series, (2, 18)).unwrap();
    let m = AgeModel {
        phi: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        populations: vec![1e6, 2e6],
        susceptibles: vec![1e6, 2e6],
        nu: 0.25,
        f: vec![0.5, 0.5],
        chi: chi.clone(),
        eta: 1.0 / 7.0,
    };
    let star = age_star_states(&m).unwrap();
    let tau = age_tau_star(&m, (2.0, 18.0)).unwrap();
    let groups = vec!["young".to_string(), "old".to_string()];
    assert_eq!(
        fs::read_to_string(out.join("age_table.csv")).unwrap(),
        io::age_table_csv(&groups, &chi, &star, &tau)
    );
    assert!(out.join("age_trajectory.csv").exists());
}

#[test]
fn config_values_apply_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let data = write_series(dir.path(), "exp.csv", 0..=20, exp_data);
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# run settings\nmodel = bv\nwindow = 2:18\nconvention = anchored\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = epident(&[
        "fit",
        s(&data),
        "--config",
        s(&cfg),
        "--model",
        "exp",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("fit_params.txt")).unwrap();
    assert!(text.contains("model = exponential"));
    assert!(text.contains("convention = anchored"));
    assert!(fs::read_to_string(out.join("fit_table.csv"))
        .unwrap()
        .contains("# window = 2:18"));

    fs::write(&cfg, "no_such_flag = 1\n").unwrap();
    let o = epident(&["fit", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn iso_dates_count_from_first_row() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("date,cumulative\n");
    for d in 0..=20 {
        let date =
            chrono::NaiveDate::from_ymd_opt(2020, 2, 10).unwrap() + chrono::Duration::days(d);
        text.push_str(&format!(
            "{},{:e}\n",
            date.format("%Y-%m-%d"),
            exp_data(d as f64)
        ));
    }
    let data = dir.path().join("dated.csv");
    fs::write(&data, text).unwrap();
    let out = dir.path().join("out");
    let o = epident(&[
        "fit",
        s(&data),
        "--window",
        "2020-02-12:2020-02-28",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(out.join("fit_table.csv"))
        .unwrap()
        .contains("# window = 2:18"));
}

#[test]
fn explain_defaults_labels_origins() {
    let o = epident(&["--explain-defaults"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["nu", "f", "sigma", "band", "eta"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "{key}");
    }
    assert!(text.contains("published value") && text.contains("tool default"));
}
