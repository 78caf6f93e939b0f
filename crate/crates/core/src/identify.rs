//! Parameter identification from cumulative reported cases: exponential-phase
//! constants, transmission-rate reconstruction (exact, closed-form and
//! day-by-day), positivity diagnostics, reproduction numbers and the
//! window/intervention uncertainty sweep.

use log::warn;
use rayon::prelude::*;

use crate::data::{check_uniform_grid, CumulativeSeries, SmoothedSeries};
use crate::epimodel::{simulate_siur, EpiParams, TauProfile};
use crate::error::{Error, Result};
use crate::fitkit::fit_exponential;
use crate::ode::rk4;
use crate::pheno::{BVModel, Convention, ExponentialModel, PhenoModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauSource {
    ClosedFormBv,
    ExactFormula,
    DaywiseMonotone,
}

impl TauSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TauSource::ClosedFormBv => "closed_form_bv",
            TauSource::ExactFormula => "exact_formula",
            TauSource::DaywiseMonotone => "daywise_monotone",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionCurve {
    pub grid: Vec<f64>,
    pub tau: Vec<f64>,
    pub source: TauSource,
    /// First grid time where the rate is negative (or its denominator is not positive).
    pub negativity_flag: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct I0Tau0 {
    pub i0: f64,
    pub tau0: f64,
}

fn calendar(chi: &ExponentialModel) -> Result<ExponentialModel> {
    if !(chi.chi2 > 0.0) {
        return Err(Error::invalid(format!(
            "chi2 must be positive, got {}",
            chi.chi2
        )));
    }
    Ok(chi.to_calendar())
}

/// `I₀ = χ₁χ₂e^{χ₂t₀}/(νf)` from the calendar-form fit and `τ₀ = (χ₂+ν)/S₀`.
/// Uses `p.nu`, `p.f`, `p.s0` and `p.t0`.
pub fn derive_i0_tau0(chi: &ExponentialModel, p: &EpiParams) -> Result<I0Tau0> {
    let c = calendar(chi)?;
    if p.f == 0.0 || p.nu == 0.0 {
        return Err(Error::invalid("nu and f must be non-zero"));
    }
    if !(p.s0 > 0.0) {
        return Err(Error::invalid(format!("S0 must be positive, got {}", p.s0)));
    }
    Ok(I0Tau0 {
        i0: c.chi1 * c.chi2 * (c.chi2 * p.t0).exp() / (p.nu * p.f),
        tau0: (c.chi2 + p.nu) / p.s0,
    })
}

/// `I₀ = CR'(t₀)/(νf) = χ₂CR₀(1 − (CR₀/CR∞)^θ)/(νf)`.
pub fn i0_from_bv(m: &BVModel, nu: f64, f: f64) -> f64 {
    m.chi2 * m.cr0 * (1.0 - (m.cr0 / m.cr_inf).powf(m.theta)) / (nu * f)
}

/// Exact reconstruction
/// `τ = νf(CR''/CR' + ν) / (νf(I₀+S₀) − CR' − ν(CR − CR₀))` on the grid of `cr`.
pub fn tau_exact(cr: &SmoothedSeries, p: &EpiParams) -> Result<TransmissionCurve> {
    p.validate(false)?;
    check_uniform_grid(&cr.grid)?;
    let nf = p.nu * p.f;
    if let Some(k) = cr.d1.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::invalid(format!(
            "CR' = {} is not positive at t = {}; the exact formula needs a strictly increasing curve",
            cr.d1[k], cr.grid[k]
        )));
    }
    let mut warnings = Vec::new();
    if (cr.grid[0] - p.t0).abs() < 1e-9 {
        let expected = nf * p.i0;
        if (cr.d1[0] - expected).abs() > 0.05 * expected {
            let msg = format!(
                "CR'(t0) = {} differs from nu*f*I0 = {expected} by more than 5%",
                cr.d1[0]
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mut tau = Vec::with_capacity(cr.len());
    let mut flag = None;
    for k in 0..cr.len() {
        let num = nf * (cr.d2[k] / cr.d1[k] + p.nu);
        let den = nf * (p.i0 + p.s0) - cr.d1[k] - p.nu * (cr.value[k] - p.cr0);
        let v = num / den;
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "transmission rate is not finite at t = {} (denominator {den})",
                cr.grid[k]
            )));
        }
        if flag.is_none() && (den <= 0.0 || v < 0.0) {
            flag = Some(cr.grid[k]);
        }
        tau.push(v);
    }
    Ok(TransmissionCurve {
        grid: cr.grid.clone(),
        tau,
        source: TauSource::ExactFormula,
        negativity_flag: flag,
        warnings,
    })
}

/// Closed-form rate for a Bernoulli–Verhulst curve:
/// `τ = νf(χ₂(1−(1+θ)r) + ν) / (νf(I₀+S₀) + νCR₀ − CR(χ₂(1−r) + ν))`,
/// `r = (CR/CR∞)^θ`. Uses `m.cr0` as the initial cumulative count.
pub fn tau_bv_closed(m: &BVModel, p: &EpiParams, grid: &[f64]) -> Result<TransmissionCurve> {
    p.validate(false)?;
    check_uniform_grid(grid)?;
    let mut tau = Vec::with_capacity(grid.len());
    let mut flag = None;
    for &t in grid {
        let v = tau_bv_value(m, p, t);
        if flag.is_none() && v < 0.0 {
            flag = Some(t);
        }
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "transmission rate is not finite at t = {t}"
            )));
        }
        tau.push(v);
    }
    Ok(TransmissionCurve {
        grid: grid.to_vec(),
        tau,
        source: TauSource::ClosedFormBv,
        negativity_flag: flag,
        warnings: Vec::new(),
    })
}

/// Pointwise closed-form Bernoulli–Verhulst rate.
pub fn tau_bv_value(m: &BVModel, p: &EpiParams, t: f64) -> f64 {
    let nf = p.nu * p.f;
    let cr = m.eval(t);
    let r = m.saturation(t);
    let num = nf * (m.chi2 * (1.0 - (1.0 + m.theta) * r) + p.nu);
    let den = nf * (p.i0 + p.s0) + p.nu * m.cr0 - cr * (m.chi2 * (1.0 - r) + p.nu);
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityDiagnostics {
    /// `χ₂θ`: the rate stays non-negative only if `ν ≥ χ₂θ`.
    pub nu_min: f64,
    /// `1/(χ₂θ)`, the longest admissible infectious period in days.
    pub max_duration: f64,
    /// `(CR∞χ₂ + (CR∞−CR₀)ν)/(S₀+I₀)`, the reporting-fraction bound as usually quoted.
    pub f_min: f64,
    /// `f_min/ν`: the bound that actually keeps the denominator positive.
    pub f_min_sufficient: f64,
    pub nu_condition: bool,
    pub f_condition: bool,
    pub holds: bool,
}

pub fn positivity_check(m: &BVModel, p: &EpiParams) -> PositivityDiagnostics {
    let nu_min = m.chi2 * m.theta;
    let f_min = (m.cr_inf * m.chi2 + (m.cr_inf - m.cr0) * p.nu) / (p.s0 + p.i0);
    let f_min_sufficient = f_min / p.nu;
    let nu_condition = p.nu >= nu_min;
    let f_condition = p.f > f_min_sufficient;
    PositivityDiagnostics {
        nu_min,
        max_duration: 1.0 / nu_min,
        f_min,
        f_min_sufficient,
        nu_condition,
        f_condition,
        holds: nu_condition && f_condition,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaywiseOptions {
    /// Upper end of the bisection bracket; defaults to `100(1+ν)/S₀`.
    pub tau_max: Option<f64>,
    /// RK4 substeps per grid interval.
    pub substeps: usize,
    /// Relative bisection tolerance on τ.
    pub rel_tol: f64,
}

impl Default for DaywiseOptions {
    fn default() -> Self {
        Self {
            tau_max: None,
            substeps: 64,
            rel_tol: 1e-12,
        }
    }
}

/// Piecewise-constant rate reproducing the data interval by interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DaywiseResult {
    /// `tau[k]` applies on `[grid[k], grid[k+1])`.
    pub curve: TransmissionCurve,
    /// Left ends of the intervals where even τ = 0 overshoots the data.
    pub shortfall_days: Vec<f64>,
}

fn si_step(state: &[f64], t0: f64, t1: f64, tau: f64, nu: f64, substeps: usize) -> Vec<f64> {
    rk4(
        |_, y, dy| {
            let force = tau * y[0] * y[1];
            dy[0] = -force;
            dy[1] = force - nu * y[1];
            dy[2] = y[1];
        },
        t0,
        state,
        t1,
        substeps,
    )
}

/// Day-by-day reconstruction: on every interval the constant τ is found by
/// bisection so that the simulated cumulative infections match
/// `(CR − CR₀)/(νf)` at the interval's end. `grid[0]` must equal `p.t0`.
pub fn daywise_tau(
    grid: &[f64],
    cr: &[f64],
    p: &EpiParams,
    opts: &DaywiseOptions,
) -> Result<DaywiseResult> {
    p.validate(false)?;
    check_uniform_grid(grid)?;
    if grid.len() != cr.len() || grid.len() < 2 {
        return Err(Error::invalid(
            "grid and values must have equal length of at least 2",
        ));
    }
    if (grid[0] - p.t0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "the series must start at t0 = {}, got {}",
            p.t0, grid[0]
        )));
    }
    if cr.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid(
            "cumulative values decrease; regularize the series before day-by-day reconstruction",
        ));
    }
    let tau_max = opts.tau_max.unwrap_or(100.0 * (1.0 + p.nu) / p.s0);
    if !(tau_max > 0.0 && tau_max.is_finite()) {
        return Err(Error::invalid("tau_max must be positive"));
    }
    let nf = p.nu * p.f;
    let mut state = vec![p.s0, p.i0, 0.0];
    let mut taus = Vec::with_capacity(grid.len() - 1);
    let mut shortfall = Vec::new();
    let mut warnings = Vec::new();
    for k in 0..grid.len() - 1 {
        let (a, b) = (grid[k], grid[k + 1]);
        let target = (cr[k + 1] - p.cr0) / nf;
        let ci_at = |tau: f64| si_step(&state, a, b, tau, p.nu, opts.substeps)[2];
        let tau_k = if ci_at(0.0) >= target {
            shortfall.push(a);
            warnings.push(format!(
                "day {a}: data below the zero-transmission trajectory; rate set to 0"
            ));
            0.0
        } else if ci_at(tau_max) < target {
            return Err(Error::NonConvergence(format!(
                "day {a}: data above the trajectory for tau_max = {tau_max:e}; try a larger tau_max"
            )));
        } else {
            let (mut lo, mut hi) = (0.0, tau_max);
            while hi - lo > opts.rel_tol * hi {
                let mid = 0.5 * (lo + hi);
                if ci_at(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        state = si_step(&state, a, b, tau_k, p.nu, opts.substeps);
        taus.push(tau_k);
    }
    if !shortfall.is_empty() {
        warn!(
            "{} interval(s) fell short of the zero-transmission trajectory",
            shortfall.len()
        );
    }
    Ok(DaywiseResult {
        curve: TransmissionCurve {
            grid: grid[..grid.len() - 1].to_vec(),
            tau: taus,
            source: TauSource::DaywiseMonotone,
            negativity_flag: None,
            warnings,
        },
        shortfall_days: shortfall,
    })
}

pub fn daywise_tau_series(
    s: &CumulativeSeries,
    p: &EpiParams,
    opts: &DaywiseOptions,
) -> Result<DaywiseResult> {
    let grid: Vec<f64> = s.days().map(|d| d as f64).collect();
    daywise_tau(&grid, s.values(), p, opts)
}

pub fn daywise_tau_smoothed(
    s: &SmoothedSeries,
    p: &EpiParams,
    opts: &DaywiseOptions,
) -> Result<DaywiseResult> {
    daywise_tau(&s.grid, &s.value, p, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproSeries {
    pub grid: Vec<f64>,
    /// `τS/ν` with `S` recovered from the curve.
    pub re: Vec<f64>,
    /// `τS₀/ν`.
    pub re0: Vec<f64>,
}

/// Instantaneous and quasi-instantaneous reproduction numbers, with
/// `S = I₀ + S₀ − CR'/(νf) − ν(CR − CR₀)/(νf)`.
pub fn repro_numbers(
    tau: &TransmissionCurve,
    cr: &SmoothedSeries,
    p: &EpiParams,
) -> Result<ReproSeries> {
    p.validate(false)?;
    if tau.grid.len() != cr.grid.len()
        || tau
            .grid
            .iter()
            .zip(&cr.grid)
            .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::invalid(
            "transmission curve and smoothed series use different grids",
        ));
    }
    let nf = p.nu * p.f;
    let mut re = Vec::with_capacity(tau.grid.len());
    let mut re0 = Vec::with_capacity(tau.grid.len());
    for k in 0..tau.grid.len() {
        let i = cr.d1[k] / nf;
        let ci = (cr.value[k] - p.cr0) / nf;
        let s = p.i0 + p.s0 - i - p.nu * ci;
        if !(s > 0.0) {
            return Err(Error::invalid(format!(
                "recovered susceptibles S = {s} are not positive at t = {}",
                tau.grid[k]
            )));
        }
        re.push(tau.tau[k] * s / p.nu);
        re0.push(tau.tau[k] * p.s0 / p.nu);
    }
    Ok(ReproSeries {
        grid: tau.grid.clone(),
        re,
        re0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiurInit {
    pub tau0: f64,
    pub i0: f64,
    pub u0: f64,
    /// `‖A(I₀,U₀) − χ₂(I₀,U₀)‖ / ‖(I₀,U₀)‖`.
    pub eigen_residual: f64,
}

/// Frozen-susceptible SIUR matrix `[[τS₀−ν, τS₀], [ν(1−f), −η]]`.
pub fn siur_matrix(tau: f64, s0: f64, nu: f64, f: f64, eta: f64) -> [[f64; 2]; 2] {
    [[tau * s0 - nu, tau * s0], [nu * (1.0 - f), -eta]]
}

/// Exponential-phase initialization of the SIUR model. `I₀` is fixed by
/// `νfI(t) = χ₁χ₂e^{χ₂t}` at `p.t0`, and `(τ, U₀)` make `(I₀, U₀)` an
/// eigenvector of the linearized system for the eigenvalue `χ₂`.
pub fn siur_init(chi: &ExponentialModel, p: &EpiParams) -> Result<SiurInit> {
    let c = calendar(chi)?;
    if !(p.eta + c.chi2 > 0.0) {
        return Err(Error::invalid("eta + chi2 must be positive"));
    }
    if !(p.s0 > 0.0 && p.nu > 0.0 && p.f > 0.0 && p.f <= 1.0) {
        return Err(Error::invalid("need S0 > 0, nu > 0 and 0 < f <= 1"));
    }
    let chi2 = c.chi2;
    let g = p.nu * (1.0 - p.f);
    let tau0 = (chi2 + p.nu) / p.s0 * (p.eta + chi2) / (g + p.eta + chi2);
    let i0 = c.chi1 * chi2 * (chi2 * p.t0).exp() / (p.nu * p.f);
    let u0 = g / (p.eta + chi2) * i0;
    let a = siur_matrix(tau0, p.s0, p.nu, p.f, p.eta);
    let r0 = a[0][0] * i0 + a[0][1] * u0 - chi2 * i0;
    let r1 = a[1][0] * i0 + a[1][1] * u0 - chi2 * u0;
    let eigen_residual = r0.hypot(r1) / i0.hypot(u0);
    if !(eigen_residual <= 1e-9) {
        return Err(Error::Numerical(format!(
            "initial state is not an eigenvector (relative residual {eigen_residual:e})"
        )));
    }
    Ok(SiurInit {
        tau0,
        i0,
        u0,
        eigen_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub t1: Vec<i64>,
    pub t2: Vec<i64>,
    /// First days of intervention.
    pub n: Vec<f64>,
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepFixed {
    pub nu: f64,
    pub eta: f64,
    pub s0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub t1: i64,
    pub t2: i64,
    pub n: f64,
    pub f: f64,
    pub mu: f64,
    pub mad: f64,
    pub chi1: f64,
    pub chi2: f64,
    pub tau0: f64,
    pub i0: f64,
    pub u0: f64,
    /// Cumulative reported count the simulation starts from (fitted curve at `t1`).
    pub cr0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Every evaluated cell, ordered lexicographically by `(t1, t2, N, f)`.
    pub records: Vec<SweepRecord>,
    pub mad_min: f64,
    pub band: f64,
    /// Indices into `records` with `MAD ≤ MADmin + band`.
    pub retained: Vec<usize>,
    /// Cells skipped because the window was too short or a fit failed.
    pub skipped: usize,
}

impl SweepResult {
    pub fn retained_records(&self) -> impl Iterator<Item = &SweepRecord> {
        self.retained.iter().map(|&i| &self.records[i])
    }
}

pub const SWEEP_MU_MAX: f64 = 10.0;
pub const SWEEP_MU_TOL: f64 = 1e-6;
pub const DEFAULT_SWEEP_BAND: f64 = 40.0;

/// SIUR parameters and decaying rate described by one sweep record.
pub fn sweep_record_model(rec: &SweepRecord, fixed: &SweepFixed) -> (EpiParams, TauProfile) {
    (
        EpiParams {
            s0: fixed.s0,
            nu: fixed.nu,
            f: rec.f,
            eta: fixed.eta,
            t0: rec.t1 as f64,
            i0: rec.i0,
            u0: rec.u0,
            cr0: rec.cr0,
        },
        TauProfile::ExponentialDecay {
            tau0: rec.tau0,
            mu: rec.mu,
            n: rec.n,
        },
    )
}

fn golden_section(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    // the ends are candidates too: the optimum often sits at μ = 0
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .fold((f64::NAN, f64::INFINITY), |best, cand| {
            if cand.1 < best.1 {
                cand
            } else {
                best
            }
        })
}

fn sweep_cell(
    s: &CumulativeSeries,
    t1: i64,
    t2: i64,
    n: f64,
    f: f64,
    fixed: &SweepFixed,
) -> Result<SweepRecord> {
    let fit = fit_exponential(s, (t1, t2), Convention::Calendar)?;
    let PhenoModel::Exponential(chi) = fit.model else {
        unreachable!("exponential fit returns an exponential model")
    };
    let base = EpiParams {
        s0: fixed.s0,
        nu: fixed.nu,
        f,
        eta: fixed.eta,
        t0: t1 as f64,
        i0: 0.0,
        u0: 0.0,
        cr0: 0.0,
    };
    let init = siur_init(&chi, &base)?;
    let cr0 = chi.eval(t1 as f64).max(0.0);
    let p = EpiParams {
        i0: init.i0,
        u0: init.u0,
        cr0,
        ..base
    };
    let days: Vec<f64> = (t1..=s.last_day()).map(|d| d as f64).collect();
    let data: Vec<f64> = (t1..=s.last_day())
        .map(|d| s.value_at(d).unwrap())
        .collect();
    let mad_for = |mu: f64| -> f64 {
        let tau = TauProfile::ExponentialDecay {
            tau0: init.tau0,
            mu,
            n,
        };
        match simulate_siur(&p, &tau, &days) {
            Ok(tr) => {
                tr.cr
                    .iter()
                    .zip(&data)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / data.len() as f64
            }
            Err(_) => f64::INFINITY,
        }
    };
    let (mu, mad) = golden_section(0.0, SWEEP_MU_MAX, SWEEP_MU_TOL, mad_for);
    if !mad.is_finite() {
        return Err(Error::Numerical(
            "simulation failed for every decay rate".into(),
        ));
    }
    Ok(SweepRecord {
        t1,
        t2,
        n,
        f,
        mu,
        mad,
        chi1: chi.chi1,
        chi2: chi.chi2,
        tau0: init.tau0,
        i0: init.i0,
        u0: init.u0,
        cr0,
    })
}

/// Evaluates every `(t₁, t₂, N, f)` cell in parallel: exponential fit on
/// `[t₁, t₂]`, SIUR initialization, then the decay rate `μ` minimizing the
/// mean absolute deviation on `[t₁, last day]`. Cells whose window has fewer
/// than 4 days or whose fit fails are skipped and counted.
pub fn sweep_uncertainty(
    s: &CumulativeSeries,
    grids: &SweepGrid,
    fixed: &SweepFixed,
    band: f64,
) -> Result<SweepResult> {
    if grids.t1.is_empty() || grids.t2.is_empty() || grids.n.is_empty() || grids.f.is_empty() {
        return Err(Error::invalid("every sweep grid must be non-empty"));
    }
    if !(band >= 0.0 && band.is_finite()) {
        return Err(Error::invalid(format!(
            "band must be non-negative, got {band}"
        )));
    }
    for &d in grids.t1.iter().chain(&grids.t2) {
        if d < s.t0() || d > s.last_day() {
            return Err(Error::invalid(format!(
                "window day {d} outside series range [{}, {}]",
                s.t0(),
                s.last_day()
            )));
        }
    }
    if grids.f.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::invalid("every f must lie in (0, 1]"));
    }
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let mut t1s = grids.t1.clone();
    t1s.sort_unstable();
    t1s.dedup();
    let mut t2s = grids.t2.clone();
    t2s.sort_unstable();
    t2s.dedup();
    let (ns, fs) = (sorted(&grids.n), sorted(&grids.f));

    let mut cells = Vec::new();
    let mut skipped = 0;
    for &t1 in &t1s {
        for &t2 in &t2s {
            if t2 - t1 + 1 < 4 {
                skipped += ns.len() * fs.len();
                continue;
            }
            for &n in &ns {
                for &f in &fs {
                    cells.push((t1, t2, n, f));
                }
            }
        }
    }
    let outcomes: Vec<Result<SweepRecord>> = cells
        .par_iter()
        .map(|&(t1, t2, n, f)| sweep_cell(s, t1, t2, n, f, fixed))
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    for (cell, out) in cells.iter().zip(outcomes) {
        match out {
            Ok(r) => records.push(r),
            Err(e) => {
                warn!("sweep cell {cell:?} skipped: {e}");
                skipped += 1;
            }
        }
    }
    if records.is_empty() {
        return Err(Error::NonConvergence(format!(
            "no sweep cell could be evaluated ({skipped} skipped)"
        )));
    }
    let mad_min = records.iter().map(|r| r.mad).fold(f64::INFINITY, f64::min);
    let retained = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.mad <= mad_min + band)
        .map(|(i, _)| i)
        .collect();
    Ok(SweepResult {
        records,
        mad_min,
        band,
        retained,
        skipped,
    })
}
