use std::fs::File;
use std::path::{Path, PathBuf};

use epident::data::{
    apply_jump_correction, gaussian_window_smooth, read_age_series, read_series,
    rolling_mean_smooth, spline_smooth, uniform_grid, ColumnSpec, CumulativeSeries, JumpCorrection,
    SmoothedSeries,
};
use epident::epimodel::{horizon_grid, simulate_si, simulate_siur, EpiParams, TauProfile};
use epident::fitkit::{fit_bv, fit_exponential, fit_multiwave, FitResult};
use epident::identify::{
    daywise_tau_smoothed, i0_from_bv, positivity_check, repro_numbers, sweep_record_model,
    sweep_uncertainty, tau_bv_closed, tau_exact, DaywiseOptions, ReproSeries, SweepFixed,
    SweepGrid, TransmissionCurve, DEFAULT_SWEEP_BAND,
};
use epident::io;
use epident::pheno::{Convention, MultiWaveModel, PhaseKind, PhenoModel};
use epident::spectral::{
    age_exponential_fits, age_initial_state, age_simulate, age_star_states, age_tau_star, AgeMode,
    AgeModel,
};
use log::warn;

use crate::args::*;
use crate::dates::{float_list, DayCodec};
use crate::error::{invalid, CliResult};
use crate::output::OutDir;
use crate::svg::{Plot, Series, Style, PALETTE};

pub const DEFAULT_NU: f64 = 1.0 / 3.0;
pub const DEFAULT_F: f64 = 0.9;
pub const DEFAULT_ETA: f64 = 1.0 / 7.0;
pub const DEFAULT_SIGMA: f64 = 7.0;
pub const DEFAULT_SMOOTH_WINDOW: usize = 7;
pub const DEFAULT_HORIZON: f64 = 100.0;
pub const DEFAULT_STEP: f64 = 1.0;
pub const DEFAULT_OUT: &str = "epident-out";

pub fn explain_defaults() -> String {
    let rows: Vec<(&str, String, &str)> = vec![
        (
            "nu",
            format!("{DEFAULT_NU}"),
            "tool default: 1/nu = 3-day infectious period",
        ),
        ("f", format!("{DEFAULT_F}"), "published value"),
        ("sigma", format!("{DEFAULT_SIGMA}"), "published value: days"),
        (
            "band",
            format!("{DEFAULT_SWEEP_BAND}"),
            "published value: MAD band of the sweep",
        ),
        ("eta", format!("{DEFAULT_ETA}"), "tool default: 1/day"),
        (
            "smooth-window",
            format!("{DEFAULT_SMOOTH_WINDOW}"),
            "tool default: days",
        ),
        (
            "horizon",
            format!("{DEFAULT_HORIZON}"),
            "tool default: days",
        ),
        ("step", format!("{DEFAULT_STEP}"), "tool default: days"),
        ("tau-max", "100(1+nu)/S0".into(), "tool default"),
        ("epoch", "first date of the input".into(), "tool default"),
        ("out", DEFAULT_OUT.into(), "tool default"),
        ("convention", "calendar".into(), "tool default"),
    ];
    let mut out = format!("{:<14} {:<24} origin\n", "name", "value");
    for (k, v, o) in rows {
        out.push_str(&format!("{k:<14} {v:<24} {o}\n"));
    }
    out
}

pub struct Globals {
    pub out: PathBuf,
    pub epoch: Option<String>,
}

fn input_path(file: &Option<PathBuf>, input: &Option<PathBuf>) -> CliResult<PathBuf> {
    file.clone()
        .or_else(|| input.clone())
        .ok_or_else(|| invalid("no input file given"))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))
}

fn parse_jump(codec: &DayCodec, s: &str) -> CliResult<JumpCorrection> {
    let (d, m) = s
        .rsplit_once(':')
        .ok_or_else(|| invalid(format!("expected DATE:MAG, got {s:?}")))?;
    let magnitude = m
        .trim()
        .parse()
        .map_err(|_| invalid(format!("cannot parse jump magnitude {m:?}")))?;
    Ok(JumpCorrection {
        day: codec.day_or_err(d)?,
        magnitude,
    })
}

struct Loaded {
    series: CumulativeSeries,
    window: (i64, i64),
}

fn load(data: &DataArgs, g: &Globals) -> CliResult<Loaded> {
    let path = input_path(&data.file, &data.input)?;
    let codec = DayCodec::for_file(&path, g.epoch.as_deref())?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut series = read_series(
        open(&path)?,
        &ColumnSpec::default(),
        &|s| codec.day(s),
        &label,
    )?;
    for j in &data.jumps {
        series = apply_jump_correction(&series, parse_jump(&codec, j)?)?;
    }
    let window = match &data.window {
        Some(w) => codec.range(w)?,
        None => (series.t0(), series.last_day()),
    };
    if window.0 < series.t0() || window.1 > series.last_day() {
        return Err(invalid(format!(
            "window [{}, {}] outside data range [{}, {}]",
            window.0,
            window.1,
            series.t0(),
            series.last_day()
        )));
    }
    Ok(Loaded { series, window })
}

fn days_f64(a: i64, b: i64) -> Vec<f64> {
    (a..=b).map(|d| d as f64).collect()
}

fn data_points(s: &CumulativeSeries, window: (i64, i64)) -> Vec<(f64, f64)> {
    s.days()
        .zip(s.values())
        .filter(|(d, _)| *d >= window.0 && *d <= window.1)
        .map(|(d, v)| (d as f64, *v))
        .collect()
}

fn multiwave_inputs(
    mw: &MultiwaveArgs,
    codec: &DayCodec,
) -> CliResult<(Vec<f64>, Vec<PhaseKind>, f64)> {
    let bps = mw
        .breakpoints
        .as_deref()
        .ok_or_else(|| invalid("multiwave needs --breakpoints"))?;
    let phases = mw
        .phases
        .as_deref()
        .ok_or_else(|| invalid("multiwave needs --phases"))?;
    let breakpoints = bps
        .split(',')
        .map(|b| codec.day_or_err(b).map(|d| d as f64))
        .collect::<CliResult<Vec<f64>>>()?;
    let kinds = phases
        .split(',')
        .map(|p| p.parse::<PhaseKind>().map_err(Into::into))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((breakpoints, kinds, mw.sigma.unwrap_or(DEFAULT_SIGMA)))
}

fn codec_for(data: &DataArgs, g: &Globals) -> CliResult<DayCodec> {
    DayCodec::for_file(&input_path(&data.file, &data.input)?, g.epoch.as_deref())
}

fn print_fit(fit: &FitResult) {
    println!(
        "model {} on days {}..{}",
        fit.model.name(),
        fit.window.0,
        fit.window.1
    );
    for (k, v) in fit.model.parameters() {
        println!("  {k:<16} {v:.6e}");
    }
    if let Some(ci) = &fit.ci95 {
        for c in ci {
            println!("  95% {:<12} [{:.6e}, {:.6e}]", c.name, c.lower, c.upper);
        }
    }
    println!("  sse {:.6e}  mad {:.6e}", fit.sse, fit.mad);
    for w in &fit.diagnostics.warnings {
        warn!("{w}");
    }
}

pub fn run_fit(a: &FitArgs, g: &Globals) -> CliResult<()> {
    let Loaded { series, window } = load(&a.data, g)?;
    let fit = match a.model {
        ModelKind::Exp => {
            let conv = match a.convention {
                ConventionArg::Calendar => Convention::Calendar,
                ConventionArg::Anchored => Convention::Anchored,
            };
            fit_exponential(&series, window, conv)?
        }
        ModelKind::Bv => fit_bv(&series, window)?,
        ModelKind::Multiwave => {
            let codec = codec_for(&a.data, g)?;
            let (bps, kinds, sigma) = multiwave_inputs(&a.multiwave, &codec)?;
            let sw = series.window(window.0, window.1)?;
            fit_multiwave(&sw, &bps, &kinds, sigma)?
        }
    };
    print_fit(&fit);

    let grid = days_f64(fit.window.0, fit.window.1);
    let model_vals: Vec<f64> = match &fit.model {
        PhenoModel::MultiWave(m) => m.regularize(&grid)?.value,
        m => grid.iter().map(|&t| m.eval(t)).collect(),
    };
    let data: Vec<f64> = grid
        .iter()
        .map(|&t| series.value_at(t as i64).unwrap_or(f64::NAN))
        .collect();

    let mut out = OutDir::create(&g.out)?;
    out.write("fit_params.txt", &fit.model.to_text())?;
    out.write("fit_table.csv", &io::fit_table_csv(&fit))?;
    out.write(
        "fitted_curve.csv",
        &io::columns_csv(&["t", "data", "model"], &[&grid, &data, &model_vals]),
    )?;
    let mut plot = Plot::new(
        &format!("{} fit", fit.model.name()),
        "day",
        "cumulative reported cases",
    );
    plot.series.push(Series::new(
        "data",
        data_points(&series, fit.window),
        Style::Dots,
        PALETTE[0],
    ));
    plot.series.push(Series::new(
        "model",
        grid.iter()
            .copied()
            .zip(model_vals.iter().copied())
            .collect(),
        Style::Line,
        PALETTE[1],
    ));
    out.write("fit.svg", &plot.render())?;
    out.report();
    Ok(())
}

fn require(v: Option<f64>, name: &str) -> CliResult<f64> {
    v.ok_or_else(|| invalid(format!("--{name} is required")))
}

const RAW_REFUSAL: &str = "reconstruction needs --regularize bv|multiwave|spline|rolling|gauss: \
    differentiating raw cumulative counts amplifies reporting noise and yields negative transmission rates";

/// First downward crossing of 1, linearly interpolated.
fn re_crossing(r: &ReproSeries) -> Option<f64> {
    (1..r.re.len()).find_map(|k| {
        let (a, b) = (r.re[k - 1], r.re[k]);
        (a >= 1.0 && b < 1.0)
            .then(|| r.grid[k - 1] + (a - 1.0) / (a - b) * (r.grid[k] - r.grid[k - 1]))
    })
}

fn report_curve(c: &TransmissionCurve) {
    for w in &c.warnings {
        warn!("{w}");
    }
    if let Some(t) = c.negativity_flag {
        warn!("transmission rate becomes negative (or undefined) from t = {t}");
    }
}

pub fn run_reconstruct(a: &ReconstructArgs, g: &Globals) -> CliResult<()> {
    let reg = match a.regularize {
        None | Some(Regularization::None) => return Err(invalid(RAW_REFUSAL)),
        Some(r) => r,
    };
    let Loaded { series, window } = load(&a.data, g)?;
    let nu = a.epi.nu.unwrap_or(DEFAULT_NU);
    let f = a.epi.f.unwrap_or(DEFAULT_F);
    let s0 = require(a.epi.s0, "s0")?;
    let grid = days_f64(window.0, window.1);
    let sw = series.window(window.0, window.1)?;
    let win = a.smooth_window.unwrap_or(DEFAULT_SMOOTH_WINDOW);

    let mut bv = None;
    let sm: SmoothedSeries = match reg {
        Regularization::Bv => {
            let fit = fit_bv(&series, window)?;
            print_fit(&fit);
            let PhenoModel::BernoulliVerhulst(m) = fit.model else {
                unreachable!("bv fit returns a bv model")
            };
            let sm = SmoothedSeries::from_curve(&m, &grid)?;
            bv = Some(m);
            sm
        }
        Regularization::Multiwave => {
            let codec = codec_for(&a.data, g)?;
            let (bps, kinds, sigma) = multiwave_inputs(&a.multiwave, &codec)?;
            let fit = fit_multiwave(&sw, &bps, &kinds, sigma)?;
            print_fit(&fit);
            let PhenoModel::MultiWave(m) = &fit.model else {
                unreachable!("multiwave fit returns a multiwave model")
            };
            MultiWaveModel::regularize(m, &grid)?
        }
        Regularization::Spline => spline_smooth(&sw)?,
        Regularization::Rolling => rolling_mean_smooth(&sw, win)?,
        Regularization::Gauss => gaussian_window_smooth(&sw, win)?,
        Regularization::None => unreachable!(),
    };

    let i0 = match (a.i0, &bv) {
        (Some(i0), _) => i0,
        (None, Some(m)) => i0_from_bv(m, nu, f),
        (None, None) => sm.d1[0] / (nu * f),
    };
    let p = EpiParams::si(s0, nu, f, grid[0], i0, sm.value[0]);

    let mut out = OutDir::create(&g.out)?;
    let curve = match &bv {
        Some(m) => {
            let d = positivity_check(m, &p);
            let text = format!(
                "nu_min = {}\nmax_duration = {}\nf_min = {}\nf_min_sufficient = {}\nnu_condition = {}\nf_condition = {}\nholds = {}\n",
                d.nu_min, d.max_duration, d.f_min, d.f_min_sufficient, d.nu_condition, d.f_condition, d.holds
            );
            if !d.holds {
                warn!(
                    "positivity conditions fail: nu >= {} is {}, f > {} is {}",
                    d.nu_min, d.nu_condition, d.f_min_sufficient, d.f_condition
                );
            }
            out.write("positivity.txt", &text)?;
            tau_bv_closed(m, &p, &grid)?
        }
        None => tau_exact(&sm, &p)?,
    };
    report_curve(&curve);
    let repro = repro_numbers(&curve, &sm, &p)?;
    let crossing = re_crossing(&repro);

    println!("I0 = {i0:.6e}, CR0 = {:.6e}, t0 = {}", p.cr0, p.t0);
    match crossing {
        Some(t) => println!("Re crosses 1 at t = {t:.3}"),
        None => println!("Re does not cross 1 downward in the window"),
    }

    out.write("smoothed.csv", &io::smoothed_csv(&sm))?;
    out.write("tau.csv", &io::tau_csv(&curve))?;
    out.write("repro.csv", &io::repro_csv(&repro))?;

    let mut tp = Plot::new("transmission rate", "day", "tau");
    tp.series.push(Series::new(
        curve.source.as_str(),
        curve
            .grid
            .iter()
            .copied()
            .zip(curve.tau.iter().copied())
            .collect(),
        Style::Line,
        PALETTE[0],
    ));

    if a.daywise {
        let opts = DaywiseOptions {
            tau_max: a.tau_max,
            ..Default::default()
        };
        let dw = daywise_tau_smoothed(&sm, &p, &opts)?;
        if !dw.shortfall_days.is_empty() {
            warn!(
                "day-by-day reconstruction: tau = 0 still overshoots on {} interval(s), first at t = {}",
                dw.shortfall_days.len(),
                dw.shortfall_days[0]
            );
        }
        report_curve(&dw.curve);
        out.write("tau_daywise.csv", &io::tau_csv(&dw.curve))?;
        tp.series.push(Series::new(
            "day by day",
            dw.curve
                .grid
                .iter()
                .copied()
                .zip(dw.curve.tau.iter().copied())
                .collect(),
            Style::Dots,
            PALETTE[1],
        ));
    }
    out.write("tau.svg", &tp.render())?;

    let mut rp = Plot::new("reproduction numbers", "day", "R");
    rp.series.push(Series::new(
        "Re",
        repro
            .grid
            .iter()
            .copied()
            .zip(repro.re.iter().copied())
            .collect(),
        Style::Line,
        PALETTE[0],
    ));
    rp.series.push(Series::new(
        "Re0",
        repro
            .grid
            .iter()
            .copied()
            .zip(repro.re0.iter().copied())
            .collect(),
        Style::Line,
        PALETTE[1],
    ));
    rp.hlines.push((1.0, "R = 1".into()));
    if let Some(t) = crossing {
        rp.vlines.push((t, format!("Re = 1 at t = {t:.1}")));
    }
    out.write("repro.svg", &rp.render())?;
    out.report();
    Ok(())
}

pub fn run_simulate(a: &SimulateArgs, g: &Globals) -> CliResult<()> {
    let t0 = a.t0.unwrap_or(0.0);
    let siur = a.model == SimModel::Siur;
    let p = EpiParams {
        s0: require(a.epi.s0, "s0")?,
        nu: a.epi.nu.unwrap_or(DEFAULT_NU),
        f: a.epi.f.unwrap_or(DEFAULT_F),
        eta: if siur {
            a.eta.unwrap_or(DEFAULT_ETA)
        } else {
            1.0
        },
        t0,
        i0: require(a.i0, "i0")?,
        u0: if siur { a.u0.unwrap_or(0.0) } else { 0.0 },
        cr0: a.cr0.unwrap_or(0.0),
    };
    let tau0 = require(a.tau0, "tau0")?;
    let tau = match a.tau_profile {
        TauKind::Constant => TauProfile::Constant { tau0 },
        TauKind::Chowell => TauProfile::Chowell {
            tau0,
            p: require(a.p, "p")?,
            mu: require(a.mu, "mu")?,
            n: a.intervention.unwrap_or(t0),
        },
        TauKind::Decay => TauProfile::ExponentialDecay {
            tau0,
            mu: require(a.mu, "mu")?,
            n: a.intervention.unwrap_or(t0),
        },
    };
    let grid = horizon_grid(
        &p,
        a.horizon.unwrap_or(DEFAULT_HORIZON),
        a.step.unwrap_or(DEFAULT_STEP),
    )?;
    let tr = if siur {
        simulate_siur(&p, &tau, &grid)?
    } else {
        simulate_si(&p, &tau, &grid)?
    };
    let last = tr.grid.len() - 1;
    println!(
        "t = {}: S = {:.6e}, I = {:.6e}, CR = {:.6e}",
        tr.grid[last], tr.s[last], tr.i[last], tr.cr[last]
    );

    let mut out = OutDir::create(&g.out)?;
    out.write("trajectory.csv", &io::trajectory_csv(&tr))?;
    let pts = |v: &[f64]| {
        tr.grid
            .iter()
            .copied()
            .zip(v.iter().copied())
            .collect::<Vec<_>>()
    };
    let mut plot = Plot::new(
        if siur {
            "SIUR simulation"
        } else {
            "SI simulation"
        },
        "day",
        "individuals",
    );
    plot.series
        .push(Series::new("CR", pts(&tr.cr), Style::Line, PALETTE[0]));
    plot.series
        .push(Series::new("I", pts(&tr.i), Style::Line, PALETTE[1]));
    if let Some(u) = &tr.u {
        plot.series
            .push(Series::new("U", pts(u), Style::Line, PALETTE[2]));
    }
    out.write("trajectory.svg", &plot.render())?;
    out.report();
    Ok(())
}

pub fn run_sweep(a: &SweepArgs, g: &Globals) -> CliResult<()> {
    let Loaded { series, window } = load(&a.data, g)?;
    let series = series.window(window.0, window.1)?;
    let codec = codec_for(&a.data, g)?;
    let list = |v: &Option<String>, name: &str| -> CliResult<Vec<i64>> {
        codec.day_list(
            v.as_deref()
                .ok_or_else(|| invalid(format!("--{name} is required")))?,
        )
    };
    let grids = SweepGrid {
        t1: list(&a.grid_t1, "grid-t1")?,
        t2: list(&a.grid_t2, "grid-t2")?,
        n: list(&a.grid_n, "grid-N")?
            .into_iter()
            .map(|d| d as f64)
            .collect(),
        f: match &a.f_set {
            Some(s) => float_list(s)?,
            None => vec![a.epi.f.unwrap_or(DEFAULT_F)],
        },
    };
    let fixed = SweepFixed {
        nu: a.epi.nu.unwrap_or(DEFAULT_NU),
        eta: a.eta.unwrap_or(DEFAULT_ETA),
        s0: require(a.epi.s0, "s0")?,
    };
    let res = sweep_uncertainty(
        &series,
        &grids,
        &fixed,
        a.band.unwrap_or(DEFAULT_SWEEP_BAND),
    )?;
    println!(
        "{} cells evaluated, {} skipped, {} retained (MAD <= {:.4} + {})",
        res.records.len(),
        res.skipped,
        res.retained.len(),
        res.mad_min,
        res.band
    );

    let mut out = OutDir::create(&g.out)?;
    out.write("sweep.csv", &io::sweep_csv(&res, false))?;
    out.write("sweep_retained.csv", &io::sweep_csv(&res, true))?;

    let mut plot = Plot::new(
        "retained sweep trajectories",
        "day",
        "cumulative reported cases",
    );
    for rec in res.retained_records() {
        let (p, tau) = sweep_record_model(rec, &fixed);
        let grid = uniform_grid(p.t0, series.last_day() as f64, 1.0);
        if grid.len() < 2 {
            continue;
        }
        match simulate_siur(&p, &tau, &grid) {
            Ok(tr) => plot.series.push(Series {
                label: plot
                    .series
                    .is_empty()
                    .then(|| format!("retained cells ({})", res.retained.len())),
                points: grid.iter().copied().zip(tr.cr).collect(),
                style: Style::Line,
                color: PALETTE[1].into(),
                opacity: 0.2,
            }),
            Err(e) => warn!(
                "cell t1={} t2={} N={} f={}: {e}",
                rec.t1, rec.t2, rec.n, rec.f
            ),
        }
    }
    plot.series.push(Series::new(
        "data",
        data_points(&series, (series.t0(), series.last_day())),
        Style::Dots,
        PALETTE[0],
    ));
    out.write("fan.svg", &plot.render())?;
    out.report();
    Ok(())
}

pub fn run_agefit(a: &AgeArgs, g: &Globals) -> CliResult<()> {
    let path = input_path(&a.file, &a.input)?;
    let codec = DayCodec::for_file(&path, g.epoch.as_deref())?;
    let series = read_age_series(open(&path)?, &|s| codec.day(s))?;
    let groups: Vec<String> = series.iter().map(|s| s.label().to_string()).collect();
    let n = groups.len();
    let window = match &a.window {
        Some(w) => codec.range(w)?,
        None => (series[0].t0(), series[0].last_day()),
    };

    let contact = a
        .contact
        .as_ref()
        .ok_or_else(|| invalid("--contact is required"))?;
    let text = std::fs::read_to_string(contact)
        .map_err(|e| invalid(format!("cannot read {}: {e}", contact.display())))?;
    let phi = io::parse_contact_matrix(&text)?;
    let populations = float_list(
        a.populations
            .as_deref()
            .ok_or_else(|| invalid("--populations is required"))?,
    )?;
    let susceptibles = match &a.susceptibles {
        Some(s) => float_list(s)?,
        None => populations.clone(),
    };
    let f = match &a.f_set {
        Some(s) => float_list(s)?,
        None => vec![a.f.unwrap_or(DEFAULT_F); n],
    };
    for (name, len) in [
        ("populations", populations.len()),
        ("susceptibles", susceptibles.len()),
        ("f-set", f.len()),
    ] {
        if len != n {
            return Err(invalid(format!(
                "--{name} has {len} entries for {n} groups"
            )));
        }
    }

    let chi = age_exponential_fits(&series, window)?;
    let model = AgeModel {
        phi,
        populations,
        susceptibles,
        nu: a.nu.unwrap_or(DEFAULT_NU),
        f,
        chi: chi.clone(),
        eta: a.eta.unwrap_or(DEFAULT_ETA),
    };
    let star = age_star_states(&model)?;
    let tau = age_tau_star(&model, (window.0 as f64, window.1 as f64))?;
    for (j, g) in groups.iter().enumerate() {
        println!("{g}: chi2 = {:.6e}, tau* = {:.6e}", chi[j].chi2, tau[j]);
    }

    let mut out = OutDir::create(&g.out)?;
    out.write(
        "age_table.csv",
        &io::age_table_csv(&groups, &chi, &star, &tau),
    )?;
    if let Some(h) = a.horizon {
        if !(h > 0.0) {
            return Err(invalid("--horizon must be positive"));
        }
        let t0 = window.0 as f64;
        let init = age_initial_state(&model, t0)?;
        let grid = uniform_grid(t0, t0 + h, 1.0);
        let tr = age_simulate(&model, &tau, &init, &grid, AgeMode::Full)?;
        out.write("age_trajectory.csv", &io::age_trajectory_csv(&groups, &tr))?;
    }

    let grid = days_f64(window.0, window.1);
    let mut plot = Plot::new(
        "age-group exponential fits",
        "day",
        "cumulative reported cases",
    );
    for (j, s) in series.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        plot.series.push(Series {
            label: None,
            points: data_points(s, window),
            style: Style::Dots,
            color: color.into(),
            opacity: 0.6,
        });
        plot.series.push(Series::new(
            &groups[j],
            grid.iter().map(|&t| (t, chi[j].eval(t))).collect(),
            Style::Line,
            color,
        ));
    }
    out.write("age_fit.svg", &plot.render())?;
    out.report();
    Ok(())
}
