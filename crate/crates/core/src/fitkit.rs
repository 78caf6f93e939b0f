//! Least-squares fitting of the phenomenological models.
//!
//! Every fit runs a fixed grid of starting points through a damped
//! Gauss–Newton iteration with analytic Jacobians. Rejected steps are
//! shortened by raising a Levenberg–Marquardt damping term. The best
//! local optimum is chosen by lowest SSE, ties going to the lexicographically
//! smallest parameter vector, so results do not depend on thread scheduling.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::CumulativeSeries;
use crate::error::{Error, Result};
use crate::pheno::{
    BVModel, Convention, EndemicPhase, EpidemicPhase, ExponentialModel, MultiWaveModel, Phase,
    PhaseKind, PhenoModel,
};

const MAX_ITER: usize = 400;
const MAX_DAMPING_TRIES: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInterval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Outcome of one multi-start initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct StartRecord {
    pub start: Vec<f64>,
    pub initial_sse: f64,
    pub final_sse: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Starts of the (last) multi-start search, in grid order.
    pub starts: Vec<StartRecord>,
    /// SSE of the un-regularized curve; only set for multi-wave fits.
    pub unregularized_sse: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: PhenoModel,
    pub sse: f64,
    pub mad: f64,
    pub ci95: Option<Vec<ParamInterval>>,
    /// Inclusive day range the fit used.
    pub window: (i64, i64),
    pub diagnostics: FitDiagnostics,
}

/// Model with parameters `p` evaluated at `t`, plus its parameter gradient.
trait LsqModel: Sync {
    fn value(&self, p: &[f64], t: f64) -> f64;
    fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]);
    fn feasible(&self, p: &[f64]) -> bool;
}

#[derive(Debug, Clone)]
struct GnOutcome {
    x: Vec<f64>,
    initial_sse: f64,
    sse: f64,
    iterations: usize,
    converged: bool,
}

fn sse_at<M: LsqModel>(m: &M, p: &[f64], ts: &[f64], ys: &[f64]) -> f64 {
    let s: f64 = ts
        .iter()
        .zip(ys)
        .map(|(&t, &y)| (m.value(p, t) - y).powi(2))
        .sum();
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

fn jacobian<M: LsqModel>(m: &M, p: &[f64], ts: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(ts.len(), p.len());
    let mut g = vec![0.0; p.len()];
    for (i, &t) in ts.iter().enumerate() {
        m.gradient(p, t, &mut g);
        for (k, v) in g.iter().enumerate() {
            j[(i, k)] = *v;
        }
    }
    j
}

fn column_norms(j: &DMatrix<f64>) -> Vec<f64> {
    (0..j.ncols())
        .map(|k| {
            let n = j.column(k).norm();
            if n > 0.0 && n.is_finite() {
                n
            } else {
                1.0
            }
        })
        .collect()
}

fn gauss_newton<M: LsqModel>(m: &M, ts: &[f64], ys: &[f64], x0: &[f64]) -> GnOutcome {
    let mut x = x0.to_vec();
    let initial_sse = if m.feasible(&x) {
        sse_at(m, &x, ts, ys)
    } else {
        f64::INFINITY
    };
    let mut out = GnOutcome {
        x: x.clone(),
        initial_sse,
        sse: initial_sse,
        iterations: 0,
        converged: false,
    };
    if !initial_sse.is_finite() {
        return out;
    }
    let scale_y: f64 = ys.iter().map(|y| y * y).sum::<f64>().max(1e-300);
    let mut sse = initial_sse;
    let mut damping = 0.0;
    for it in 0..MAX_ITER {
        out.iterations = it + 1;
        if sse <= 1e-30 * scale_y {
            out.converged = true;
            break;
        }
        let r = DVector::from_iterator(
            ts.len(),
            ts.iter().zip(ys).map(|(&t, &y)| m.value(&x, t) - y),
        );
        let mut j = jacobian(m, &x, ts);
        if j.iter().any(|v| !v.is_finite()) {
            break;
        }
        let norms = column_norms(&j);
        for (k, n) in norms.iter().enumerate() {
            j.column_mut(k).unscale_mut(*n);
        }
        let svd = j.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let (Some(u), Some(v_t)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
            break;
        };
        let utr = u.transpose() * &r;
        let sv = &svd.singular_values;

        // damped step dz = -V diag(s/(s²+μ)) Uᵀr; μ = 0 is the Gauss–Newton step
        let mut accepted = None;
        let mut mu = damping;
        for _ in 0..MAX_DAMPING_TRIES {
            let mut dz = DVector::zeros(sv.len());
            for i in 0..sv.len() {
                let si = sv[i];
                if si > 1e-14 * smax {
                    dz[i] = -si / (si * si + mu) * utr[i];
                }
            }
            let dz = v_t.transpose() * dz;
            let xn: Vec<f64> = x
                .iter()
                .zip(dz.iter().zip(&norms))
                .map(|(a, (d, n))| a + d / n)
                .collect();
            if m.feasible(&xn) {
                let sn = sse_at(m, &xn, ts, ys);
                if sn < sse {
                    accepted = Some((xn, sn));
                    break;
                }
            }
            mu = if mu == 0.0 {
                1e-6 * smax * smax
            } else {
                mu * 4.0
            };
        }
        let Some((xn, sn)) = accepted else {
            // no descent left: accept as a local minimum when the scaled gradient is negligible
            let g = j.transpose() * &r;
            let rel = g.norm() / (smax * r.norm()).max(1e-300);
            out.converged = rel < 1e-6;
            break;
        };
        damping = if mu == 0.0 { 0.0 } else { mu / 16.0 };
        if damping < 1e-12 * smax * smax {
            damping = 0.0;
        }
        let step_small = x
            .iter()
            .zip(&xn)
            .all(|(a, b)| (a - b).abs() <= 1e-13 * a.abs().max(1e-300));
        let gain_small = mu == 0.0 && sse - sn <= 1e-15 * sse;
        x = xn;
        sse = sn;
        if step_small || gain_small {
            out.converged = true;
            break;
        }
    }
    out.x = x;
    out.sse = sse;
    out
}

fn tie_break(a: &GnOutcome, b: &GnOutcome) -> Ordering {
    a.sse.total_cmp(&b.sse).then_with(|| {
        a.x.iter()
            .zip(&b.x)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Runs every start (in parallel) and returns the records plus the winner.
fn multi_start<M: LsqModel>(
    m: &M,
    ts: &[f64],
    ys: &[f64],
    starts: &[Vec<f64>],
    what: &str,
) -> Result<(GnOutcome, Vec<StartRecord>)> {
    let outcomes: Vec<GnOutcome> = starts
        .par_iter()
        .map(|x0| gauss_newton(m, ts, ys, x0))
        .collect();
    let records: Vec<StartRecord> = starts
        .iter()
        .zip(&outcomes)
        .map(|(s, o)| StartRecord {
            start: s.clone(),
            initial_sse: o.initial_sse,
            final_sse: o.sse,
            iterations: o.iterations,
            converged: o.converged,
        })
        .collect();
    let best = outcomes
        .into_iter()
        .filter(|o| o.converged && o.sse.is_finite())
        .min_by(tie_break);
    match best {
        Some(b) => Ok((b, records)),
        None => {
            let summary: Vec<String> = records
                .iter()
                .map(|r| format!("{:?} -> {:e}", r.start, r.final_sse))
                .collect();
            Err(Error::NonConvergence(format!(
                "{what}: none of {} starts converged [{}]",
                records.len(),
                summary.join("; ")
            )))
        }
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64))
        .collect()
}

fn window_data(
    s: &CumulativeSeries,
    window: (i64, i64),
    min_points: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = s.window(window.0, window.1)?;
    if w.len() < min_points {
        return Err(Error::invalid(format!(
            "window too short: need at least {min_points} points, got {}",
            w.len()
        )));
    }
    Ok((w.days().map(|d| d as f64).collect(), w.values().to_vec()))
}

fn sse_and_mad(f: impl Fn(f64) -> f64, ts: &[f64], ys: &[f64]) -> (f64, f64) {
    let mut sse = 0.0;
    let mut abs = 0.0;
    for (&t, &y) in ts.iter().zip(ys) {
        let e = f(t) - y;
        sse += e * e;
        abs += e.abs();
    }
    (sse, abs / ts.len() as f64)
}

struct AnchoredExp {
    t0: f64,
}

impl LsqModel for AnchoredExp {
    fn value(&self, p: &[f64], t: f64) -> f64 {
        p[0] * (p[1] * (t - self.t0)).exp_m1() + p[2]
    }

    fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]) {
        let dt = t - self.t0;
        let e = (p[1] * dt).exp();
        out[0] = e - 1.0;
        out[1] = p[0] * dt * e;
        out[2] = 1.0;
    }

    fn feasible(&self, p: &[f64]) -> bool {
        p[0] > 0.0 && p[1] > 0.0 && p[1] < 50.0 && p.iter().all(|v| v.is_finite())
    }
}

/// Growth-rate starts for the exponential fit: 16 values log-spaced on [0.01, 1].
pub fn exponential_start_rates() -> Vec<f64> {
    log_grid(0.01, 1.0, 16)
}

/// Fits `χ₁(e^{χ₂(t−d₁)} − 1) + χ₃` on the inclusive window `[d₁, d₂]` and
/// reports the model in `convention`.
pub fn fit_exponential(
    s: &CumulativeSeries,
    window: (i64, i64),
    convention: Convention,
) -> Result<FitResult> {
    let (ts, ys) = window_data(s, window, 4)?;
    if ys.iter().any(|&y| y <= 0.0) {
        return Err(Error::invalid(
            "exponential fit needs positive data in the window",
        ));
    }
    let t0 = window.0 as f64;
    let model = AnchoredExp { t0 };
    let starts: Vec<Vec<f64>> = exponential_start_rates()
        .into_iter()
        .map(|chi2| {
            // with χ₂ fixed the model is linear in (χ₁, χ₃)
            let n = ts.len() as f64;
            let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
            for (&t, &y) in ts.iter().zip(&ys) {
                let x = (chi2 * (t - t0)).exp_m1();
                sx += x;
                sxx += x * x;
                sy += y;
                sxy += x * y;
            }
            let det = n * sxx - sx * sx;
            let chi1 = (n * sxy - sx * sy) / det;
            let chi3 = (sy - chi1 * sx) / n;
            let floor = 1e-6 * ys[ys.len() - 1];
            vec![if chi1 > floor { chi1 } else { floor }, chi2, chi3]
        })
        .collect();
    let (best, records) = multi_start(&model, &ts, &ys, &starts, "exponential fit")?;
    let anchored =
        ExponentialModel::new(best.x[0], best.x[1], best.x[2], t0, Convention::Anchored)?;
    let fitted = anchored.with_convention(convention);
    let (sse, mad) = sse_and_mad(|t| fitted.eval(t), &ts, &ys);
    finish(
        PhenoModel::Exponential(fitted),
        sse,
        mad,
        window,
        s,
        FitDiagnostics {
            starts: records,
            ..Default::default()
        },
    )
}

struct PinnedBv {
    cr0: f64,
    t0: f64,
}

impl PinnedBv {
    fn model(&self, p: &[f64]) -> BVModel {
        BVModel {
            chi2: p[0],
            theta: p[1],
            cr0: self.cr0,
            cr_inf: p[2],
            t0: self.t0,
        }
    }
}

impl LsqModel for PinnedBv {
    fn value(&self, p: &[f64], t: f64) -> f64 {
        self.model(p).eval(t)
    }

    fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]) {
        let g = self.model(p).gradient(t);
        out[0] = g[0];
        out[1] = g[1];
        out[2] = g[3];
    }

    fn feasible(&self, p: &[f64]) -> bool {
        p.iter().all(|v| v.is_finite())
            && p[0] > 0.0
            && p[0] < 50.0
            && p[1] > 1e-4
            && p[1] < 100.0
            && p[2] > self.cr0 * (1.0 + 1e-12)
    }
}

fn bv_starts(last: f64) -> Vec<Vec<f64>> {
    let mut starts = Vec::new();
    for chi2 in log_grid(0.02, 2.0, 6) {
        for theta in log_grid(0.05, 5.0, 6) {
            for k in [1.05, 1.5, 3.0] {
                starts.push(vec![chi2, theta, k * last]);
            }
        }
    }
    starts
}

fn fit_bv_points(ts: &[f64], ys: &[f64], t0: f64) -> Result<(BVModel, Vec<StartRecord>)> {
    let cr0 = ys[0];
    if cr0 <= 0.0 {
        return Err(Error::invalid(
            "Bernoulli-Verhulst fit needs a positive first datum",
        ));
    }
    let problem = PinnedBv { cr0, t0 };
    let starts = bv_starts(ys[ys.len() - 1].max(cr0 * 1.01));
    let (best, records) = multi_start(&problem, ts, ys, &starts, "Bernoulli-Verhulst fit")?;
    Ok((
        BVModel::new(best.x[0], best.x[1], cr0, best.x[2], t0)?,
        records,
    ))
}

/// Fits the Bernoulli–Verhulst curve over `(χ₂, θ, CR∞)` with `CR₀` pinned to
/// the first datum of the window and `t₀` at its first day.
pub fn fit_bv(s: &CumulativeSeries, window: (i64, i64)) -> Result<FitResult> {
    let (ts, ys) = window_data(s, window, 4)?;
    let (m, records) = fit_bv_points(&ts, &ys, window.0 as f64)?;
    let (sse, mad) = sse_and_mad(|t| m.eval(t), &ts, &ys);
    finish(
        PhenoModel::BernoulliVerhulst(m),
        sse,
        mad,
        window,
        s,
        FitDiagnostics {
            starts: records,
            ..Default::default()
        },
    )
}

/// Later epidemic phase: `level − N₀ + N(t)` over `(N₀, N∞, χ, θ)`.
struct ShiftedWave {
    level: f64,
    start: f64,
}

impl ShiftedWave {
    fn model(&self, p: &[f64]) -> BVModel {
        BVModel {
            chi2: p[2],
            theta: p[3],
            cr0: p[0],
            cr_inf: p[1],
            t0: self.start,
        }
    }
}

impl LsqModel for ShiftedWave {
    fn value(&self, p: &[f64], t: f64) -> f64 {
        self.level - p[0] + self.model(p).eval(t)
    }

    fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]) {
        let g = self.model(p).gradient(t);
        out[0] = g[2] - 1.0;
        out[1] = g[3];
        out[2] = g[0];
        out[3] = g[1];
    }

    fn feasible(&self, p: &[f64]) -> bool {
        p.iter().all(|v| v.is_finite())
            && p[0] > 0.0
            && p[1] > p[0] * (1.0 + 1e-12)
            && p[2] > 0.0
            && p[2] < 50.0
            && p[3] > 1e-4
            && p[3] < 100.0
    }
}

fn shifted_wave_starts(level: f64, last: f64) -> Vec<Vec<f64>> {
    let w = (last - level).max(1.0);
    let mut starts = Vec::new();
    for n0 in [0.01 * w, 0.1 * w] {
        for k in [1.05, 1.5, 3.0] {
            for chi in [0.05, 0.15, 0.45, 1.35] {
                for theta in [0.1, 0.5, 2.0] {
                    starts.push(vec![n0, n0 + k * w, chi, theta]);
                }
            }
        }
    }
    starts
}

fn phase_points(s: &CumulativeSeries, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    s.days()
        .zip(s.values())
        .filter(|(d, _)| (*d as f64) >= lo && (*d as f64) <= hi)
        .map(|(d, v)| (d as f64, *v))
        .unzip()
}

fn check_breakpoints(s: &CumulativeSeries, breakpoints: &[f64], kinds: &[PhaseKind]) -> Result<()> {
    if kinds.is_empty() || breakpoints.len() != kinds.len() + 1 {
        return Err(Error::invalid(format!(
            "{} phase kinds need {} breakpoints, got {}",
            kinds.len(),
            kinds.len() + 1,
            breakpoints.len()
        )));
    }
    if breakpoints
        .iter()
        .any(|b| b.fract() != 0.0 || !b.is_finite())
    {
        return Err(Error::invalid("breakpoints must be whole days"));
    }
    if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("breakpoints must be strictly increasing"));
    }
    let (first, last) = (breakpoints[0], breakpoints[breakpoints.len() - 1]);
    if first < s.t0() as f64 || last > s.last_day() as f64 {
        return Err(Error::invalid(format!(
            "breakpoints [{first}, {last}] outside series range [{}, {}]",
            s.t0(),
            s.last_day()
        )));
    }
    Ok(())
}

/// Fits a multi-wave model phase by phase, left to right, each later phase
/// starting from the level the fitted curve reached at its breakpoint. The
/// reported SSE and MAD are those of the Gaussian-regularized curve.
pub fn fit_multiwave(
    s: &CumulativeSeries,
    breakpoints: &[f64],
    kinds: &[PhaseKind],
    sigma: f64,
) -> Result<FitResult> {
    check_breakpoints(s, breakpoints, kinds)?;
    let mut phases: Vec<Phase> = Vec::with_capacity(kinds.len());
    let mut records = Vec::new();
    for (i, kind) in kinds.iter().enumerate() {
        let (lo, hi) = (breakpoints[i], breakpoints[i + 1]);
        let (ts, ys) = phase_points(s, lo, hi);
        if ts.len() < 3 {
            return Err(Error::invalid(format!(
                "phase {i} has {} data points; at least 3 are needed",
                ts.len()
            )));
        }
        let level = (i > 0).then(|| {
            let prev = MultiWaveModel::new(breakpoints[..=i].to_vec(), phases.clone(), sigma)
                .expect("validated phases");
            prev.eval_phase(i - 1, lo)
        });
        let phase = match (kind, level) {
            (PhaseKind::Endemic, None) => {
                let n = ts.len() as f64;
                let xs: Vec<f64> = ts.iter().map(|t| t - lo).collect();
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
                let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
                let a = sxy / sxx;
                Phase::Endemic(EndemicPhase { n0: my - a * mx, a })
            }
            (PhaseKind::Endemic, Some(level)) => {
                let sxy: f64 = ts
                    .iter()
                    .zip(&ys)
                    .map(|(t, y)| (t - lo) * (y - level))
                    .sum();
                let sxx: f64 = ts.iter().map(|t| (t - lo).powi(2)).sum();
                Phase::Endemic(EndemicPhase {
                    n0: level,
                    a: sxy / sxx,
                })
            }
            (PhaseKind::Epidemic, None) => {
                let (m, recs) = fit_bv_points(&ts, &ys, lo)?;
                records = recs;
                Phase::Epidemic(EpidemicPhase {
                    n_base: 0.0,
                    n0: m.cr0,
                    n_inf: m.cr_inf,
                    chi: m.chi2,
                    theta: m.theta,
                })
            }
            (PhaseKind::Epidemic, Some(level)) => {
                let problem = ShiftedWave { level, start: lo };
                let starts = shifted_wave_starts(level, ys[ys.len() - 1]);
                let (best, recs) =
                    multi_start(&problem, &ts, &ys, &starts, &format!("phase {i} wave fit"))?;
                records = recs;
                Phase::Epidemic(EpidemicPhase {
                    n_base: level - best.x[0],
                    n0: best.x[0],
                    n_inf: best.x[1],
                    chi: best.x[2],
                    theta: best.x[3],
                })
            }
        };
        phases.push(phase);
    }
    let model = MultiWaveModel::new(breakpoints.to_vec(), phases, sigma)?;
    let window = (
        breakpoints[0] as i64,
        breakpoints[breakpoints.len() - 1] as i64,
    );
    let (ts, ys) = window_data(s, window, 2)?;
    let smoothed = model.regularize(&ts)?;
    let mut sse = 0.0;
    let mut abs = 0.0;
    for (v, y) in smoothed.value.iter().zip(&ys) {
        sse += (v - y).powi(2);
        abs += (v - y).abs();
    }
    let (raw_sse, _) = sse_and_mad(|t| model.eval(t), &ts, &ys);
    finish(
        PhenoModel::MultiWave(model),
        sse,
        abs / ts.len() as f64,
        window,
        s,
        FitDiagnostics {
            starts: records,
            unregularized_sse: Some(raw_sse),
            warnings: Vec::new(),
        },
    )
}

fn finish(
    model: PhenoModel,
    sse: f64,
    mad: f64,
    window: (i64, i64),
    s: &CumulativeSeries,
    mut diagnostics: FitDiagnostics,
) -> Result<FitResult> {
    let mut fit = FitResult {
        model,
        sse,
        mad,
        ci95: None,
        window,
        diagnostics: FitDiagnostics::default(),
    };
    match confidence_interval(&fit, s, window) {
        Ok(ci) => fit.ci95 = Some(ci),
        Err(e) => diagnostics
            .warnings
            .push(format!("no confidence intervals: {e}")),
    }
    fit.diagnostics = diagnostics;
    Ok(fit)
}

/// `estimate ± 1.96 σ̂ sqrt(diag((JᵀJ)⁻¹))` with `σ̂² = SSE / (n − p)`.
fn linearized_intervals(
    names: Vec<String>,
    estimates: &[f64],
    mut j: DMatrix<f64>,
    residual_sse: f64,
) -> Result<Vec<ParamInterval>> {
    let (n, p) = j.shape();
    if n <= p {
        return Err(Error::NonIdentifiable(format!(
            "{n} data points cannot support intervals for {p} parameters"
        )));
    }
    let norms = column_norms(&j);
    for (k, c) in norms.iter().enumerate() {
        j.column_mut(k).unscale_mut(*c);
    }
    let svd = j.svd(false, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    if !(smax > 0.0) || sv.min() <= 1e-13 * smax {
        return Err(Error::NonIdentifiable(format!(
            "singular Jacobian for parameters {}",
            names.join(", ")
        )));
    }
    let v_t = svd.v_t.expect("requested");
    let sigma2 = residual_sse / (n - p) as f64;
    Ok(names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            // diag((JᵀJ)⁻¹)_k = Σ_i (V_ki / s_i)² / c_k²
            let var: f64 = (0..sv.len())
                .map(|i| (v_t[(i, k)] / sv[i]).powi(2))
                .sum::<f64>()
                / (norms[k] * norms[k]);
            let half = 1.96 * (sigma2 * var).sqrt();
            ParamInterval {
                name,
                estimate: estimates[k],
                lower: estimates[k] - half,
                upper: estimates[k] + half,
            }
        })
        .collect())
}

fn rows<const P: usize>(ts: &[f64], g: impl Fn(f64) -> [f64; P]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(ts.len(), P);
    for (i, &t) in ts.iter().enumerate() {
        for (k, v) in g(t).into_iter().enumerate() {
            j[(i, k)] = v;
        }
    }
    j
}

/// Asymptotic 95% intervals for the free parameters of a fit, from the
/// Jacobian at the optimum. Multi-wave fits get one independent block per
/// phase, each with its own residual variance.
pub fn confidence_interval(
    fit: &FitResult,
    s: &CumulativeSeries,
    window: (i64, i64),
) -> Result<Vec<ParamInterval>> {
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match &fit.model {
        PhenoModel::Exponential(m) => {
            let (ts, ys) = window_data(s, window, 2)?;
            let (sse, _) = sse_and_mad(|t| m.eval(t), &ts, &ys);
            linearized_intervals(
                names(&["chi1", "chi2", "chi3"]),
                &[m.chi1, m.chi2, m.chi3],
                rows(&ts, |t| m.gradient(t)),
                sse,
            )
        }
        PhenoModel::BernoulliVerhulst(m) => {
            let (ts, ys) = window_data(s, window, 2)?;
            let (sse, _) = sse_and_mad(|t| m.eval(t), &ts, &ys);
            linearized_intervals(
                names(&["chi2", "theta", "cr_inf"]),
                &[m.chi2, m.theta, m.cr_inf],
                rows(&ts, |t| {
                    let g = m.gradient(t);
                    [g[0], g[1], g[3]]
                }),
                sse,
            )
        }
        PhenoModel::MultiWave(m) => {
            let mut out = Vec::new();
            let b = m.breakpoints();
            for (i, phase) in m.phases().iter().enumerate() {
                let (ts, ys) = phase_points(s, b[i], b[i + 1]);
                let (sse, _) = sse_and_mad(|t| m.eval_phase(i, t), &ts, &ys);
                let lo = b[i];
                let tag = |n: &str| format!("phase.{i}.{n}");
                let block = match (phase, i) {
                    (Phase::Endemic(e), 0) => linearized_intervals(
                        vec![tag("n0"), tag("a")],
                        &[e.n0, e.a],
                        rows(&ts, |t| [1.0, t - lo]),
                        sse,
                    )?,
                    (Phase::Endemic(e), _) => {
                        linearized_intervals(vec![tag("a")], &[e.a], rows(&ts, |t| [t - lo]), sse)?
                    }
                    (Phase::Epidemic(e), _) => {
                        let wave = BVModel {
                            chi2: e.chi,
                            theta: e.theta,
                            cr0: e.n0,
                            cr_inf: e.n_inf,
                            t0: lo,
                        };
                        if i == 0 {
                            linearized_intervals(
                                vec![tag("chi"), tag("theta"), tag("n_inf")],
                                &[e.chi, e.theta, e.n_inf],
                                rows(&ts, |t| {
                                    let g = wave.gradient(t);
                                    [g[0], g[1], g[3]]
                                }),
                                sse,
                            )?
                        } else {
                            linearized_intervals(
                                vec![tag("n0"), tag("n_inf"), tag("chi"), tag("theta")],
                                &[e.n0, e.n_inf, e.chi, e.theta],
                                rows(&ts, |t| {
                                    let g = wave.gradient(t);
                                    [g[2] - 1.0, g[3], g[0], g[1]]
                                }),
                                sse,
                            )?
                        }
                    }
                };
                out.extend(block);
            }
            Ok(out)
        }
    }
}

/// Mean absolute deviation between `model` and the data on the inclusive window.
pub fn mad(model: &dyn Fn(f64) -> f64, s: &CumulativeSeries, window: (i64, i64)) -> Result<f64> {
    let (ts, ys) = window_data(s, window, 1)?;
    Ok(sse_and_mad(model, &ts, &ys).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series_from(mut f: impl FnMut(f64) -> f64, t0: i64, n: usize) -> CumulativeSeries {
        CumulativeSeries::new(
            t0,
            (0..n).map(|k| f((t0 + k as i64) as f64)).collect(),
            "syn",
        )
        .unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn exponential_exact_recovery() {
        let truth = ExponentialModel::new(2.0, 0.3, 50.0, 5.0, Convention::Anchored).unwrap();
        let s = series_from(|t| truth.eval(t), 0, 30);
        let fit = fit_exponential(&s, (5, 25), Convention::Anchored).unwrap();
        let PhenoModel::Exponential(m) = fit.model else {
            panic!()
        };
        assert!(
            rel(m.chi1, 2.0) < 1e-6 && rel(m.chi2, 0.3) < 1e-6 && rel(m.chi3, 50.0) < 1e-6,
            "{m:?}"
        );
        let ci = fit.ci95.unwrap();
        assert!(ci.iter().all(|c| c.upper - c.lower < 1e-6), "{ci:?}");
    }

    #[test]
    fn calendar_fit_describes_same_curve() {
        let truth = ExponentialModel::new(2.0, 0.3, 50.0, 5.0, Convention::Anchored).unwrap();
        let s = series_from(|t| truth.eval(t), 0, 30);
        let fit = fit_exponential(&s, (5, 25), Convention::Calendar).unwrap();
        let PhenoModel::Exponential(m) = fit.model else {
            panic!()
        };
        assert_eq!(m.convention, Convention::Calendar);
        for t in [5.0, 15.0, 25.0] {
            assert!(rel(m.eval(t), truth.eval(t)) < 1e-8);
        }
    }

    #[test]
    fn short_window_rejected() {
        let s = series_from(|t| t + 1.0, 0, 10);
        let e = fit_exponential(&s, (0, 2), Convention::Anchored).unwrap_err();
        assert!(e.to_string().contains("window too short"), "{e}");
        assert!(fit_bv(&s, (0, 2))
            .unwrap_err()
            .to_string()
            .contains("window too short"));
    }

    #[test]
    fn bv_exact_recovery() {
        let truth = BVModel::new(0.4, 0.6, 30.0, 5000.0, 0.0).unwrap();
        let s = series_from(|t| truth.eval(t), 0, 50);
        let fit = fit_bv(&s, (0, 49)).unwrap();
        let PhenoModel::BernoulliVerhulst(m) = fit.model else {
            panic!()
        };
        assert!(
            rel(m.chi2, 0.4) < 1e-6 && rel(m.theta, 0.6) < 1e-6 && rel(m.cr_inf, 5000.0) < 1e-6,
            "{m:?}"
        );
        assert_eq!(m.cr0, 30.0);
    }

    #[test]
    fn returned_sse_not_above_any_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = BVModel::new(0.3, 1.2, 10.0, 2000.0, 0.0).unwrap();
        let s = series_from(
            |t| truth.eval(t) * (1.0 + 0.01 * rng.random_range(-1.0..1.0)),
            0,
            45,
        );
        let fit = fit_bv(&s, (0, 44)).unwrap();
        for r in &fit.diagnostics.starts {
            assert!(
                fit.sse <= r.initial_sse * (1.0 + 1e-12),
                "{} > {}",
                fit.sse,
                r.initial_sse
            );
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = ExponentialModel::new(3.0, 0.2, 20.0, 0.0, Convention::Anchored).unwrap();
        let s = series_from(
            |t| truth.eval(t) * (1.0 + 0.01 * rng.random_range(-1.0..1.0)),
            0,
            20,
        );
        let a = fit_exponential(&s, (0, 19), Convention::Calendar).unwrap();
        let b = fit_exponential(&s, (0, 19), Convention::Calendar).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn endemic_rate_recovered() {
        let s = series_from(|t| 100.0 + 7.5 * t, 0, 20);
        let fit = fit_multiwave(&s, &[0.0, 19.0], &[PhaseKind::Endemic], 7.0).unwrap();
        let PhenoModel::MultiWave(m) = &fit.model else {
            panic!()
        };
        let Phase::Endemic(e) = m.phases()[0] else {
            panic!()
        };
        assert!((e.a - 7.5).abs() < 1e-12 && (e.n0 - 100.0).abs() < 1e-10);
        // linear data is a fixed point of the regularization
        assert!(fit.sse < 1e-12, "{}", fit.sse);
    }

    #[test]
    fn single_wave_matches_bv_fit() {
        let truth = BVModel::new(0.35, 0.8, 20.0, 3000.0, 0.0).unwrap();
        let s = series_from(|t| truth.eval(t) + 0.3 * (t * 1.3).sin(), 0, 40);
        let bv = fit_bv(&s, (0, 39)).unwrap();
        let mw = fit_multiwave(&s, &[0.0, 39.0], &[PhaseKind::Epidemic], 7.0).unwrap();
        let (PhenoModel::BernoulliVerhulst(b), PhenoModel::MultiWave(m)) = (&bv.model, &mw.model)
        else {
            panic!()
        };
        let Phase::Epidemic(e) = m.phases()[0] else {
            panic!()
        };
        assert!((e.chi - b.chi2).abs() <= 1e-9 * b.chi2);
        assert!((e.theta - b.theta).abs() <= 1e-9 * b.theta);
        assert!((e.n_inf - b.cr_inf).abs() <= 1e-9 * b.cr_inf);
        assert_eq!(e.n0, b.cr0);
    }

    #[test]
    fn two_phase_round_trip() {
        let truth = MultiWaveModel::new(
            vec![0.0, 20.0, 80.0],
            vec![
                Phase::Endemic(EndemicPhase { n0: 200.0, a: 10.0 }),
                Phase::Epidemic(EpidemicPhase {
                    n_base: 0.0,
                    n0: 40.0,
                    n_inf: 6000.0,
                    chi: 0.25,
                    theta: 0.7,
                }),
            ],
            7.0,
        )
        .unwrap();
        let s = series_from(|t| truth.eval(t), 0, 81);
        let fit = fit_multiwave(
            &s,
            &[0.0, 20.0, 80.0],
            &[PhaseKind::Endemic, PhaseKind::Epidemic],
            7.0,
        )
        .unwrap();
        let PhenoModel::MultiWave(m) = &fit.model else {
            panic!()
        };
        let (Phase::Endemic(a), Phase::Epidemic(b)) = (m.phases()[0], m.phases()[1]) else {
            panic!()
        };
        assert!(rel(a.a, 10.0) < 0.01 && rel(a.n0, 200.0) < 0.01);
        assert!(rel(b.n0, 40.0) < 0.01, "{b:?}");
        assert!(
            rel(b.n_inf, 6000.0) < 0.01 && rel(b.chi, 0.25) < 0.01 && rel(b.theta, 0.7) < 0.01,
            "{b:?}"
        );
    }

    #[test]
    fn phase_with_too_few_points_rejected() {
        let s = series_from(|t| 10.0 + t, 0, 30);
        let e = fit_multiwave(
            &s,
            &[0.0, 1.0, 29.0],
            &[PhaseKind::Endemic, PhaseKind::Endemic],
            7.0,
        )
        .unwrap_err();
        assert!(e.is_validation(), "{e}");
    }

    #[test]
    fn mad_basics() {
        let s = series_from(|t| 3.0 * t, 0, 10);
        assert_eq!(mad(&|t| 3.0 * t, &s, (0, 9)).unwrap(), 0.0);
        assert!((mad(&|t| 3.0 * t + 2.5, &s, (0, 9)).unwrap() - 2.5).abs() < 1e-12);
        let vals: Vec<f64> = s.values().to_vec();
        let oracle: f64 = vals
            .iter()
            .enumerate()
            .map(|(k, v)| (k as f64 * k as f64 - v).abs())
            .sum::<f64>()
            / vals.len() as f64;
        assert!((mad(&|t| t * t, &s, (0, 9)).unwrap() - oracle).abs() < 1e-12);
    }
}
