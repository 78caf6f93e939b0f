//! SI model with a reported flow, its unreported-compartment extension (SIUR),
//! the scalar cumulative equation, the final size and the daily-case
//! auxiliary model.
//!
//! ```text
//! S' = -τ(t) S (I + U)
//! I' =  τ(t) S (I + U) - ν I
//! U' =  ν (1 - f) I - η U        (SIUR only; U ≡ 0 otherwise)
//! CR' = ν f I,   CI' = I
//! ```

use std::fmt;
use std::sync::Arc;

use crate::curve::Curve;
use crate::data::{check_uniform_grid, SmoothedSeries};
use crate::error::{Error, Result};
use crate::ode::{integrate, OdeOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpiParams {
    pub s0: f64,
    pub nu: f64,
    pub f: f64,
    /// Exit rate of unreported infectious; only used by the SIUR model.
    pub eta: f64,
    pub t0: f64,
    pub i0: f64,
    pub u0: f64,
    pub cr0: f64,
}

impl EpiParams {
    /// SI parameters with `η = 1`, `U₀ = 0`.
    pub fn si(s0: f64, nu: f64, f: f64, t0: f64, i0: f64, cr0: f64) -> Self {
        Self {
            s0,
            nu,
            f,
            eta: 1.0,
            t0,
            i0,
            u0: 0.0,
            cr0,
        }
    }

    pub fn validate(&self, siur: bool) -> Result<()> {
        let all = [
            self.s0, self.nu, self.f, self.eta, self.t0, self.i0, self.u0, self.cr0,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("epidemic parameters must be finite"));
        }
        if self.s0 <= 0.0 {
            return Err(Error::invalid(format!(
                "S0 must be positive, got {}",
                self.s0
            )));
        }
        if self.nu <= 0.0 {
            return Err(Error::invalid(format!(
                "nu must be positive, got {}",
                self.nu
            )));
        }
        if !(self.f > 0.0 && self.f <= 1.0) {
            return Err(Error::invalid(format!(
                "f must lie in (0, 1], got {}",
                self.f
            )));
        }
        if self.i0 < 0.0 || self.u0 < 0.0 || self.cr0 < 0.0 {
            return Err(Error::invalid("I0, U0 and CR0 must be non-negative"));
        }
        if siur && self.eta <= 0.0 {
            return Err(Error::invalid(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Closure-backed transmission rate.
#[derive(Clone)]
pub struct CustomTau {
    pub rate: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Times where the rate is not smooth; integration is split there.
    pub kinks: Vec<f64>,
}

impl fmt::Debug for CustomTau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomTau")
            .field("kinks", &self.kinks)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum TauProfile {
    Constant {
        tau0: f64,
    },
    /// `τ₀ (p e^{−μ(t−N)⁺} + 1 − p)`.
    Chowell {
        tau0: f64,
        p: f64,
        mu: f64,
        n: f64,
    },
    /// Linear interpolation between samples, constant outside.
    Sampled {
        grid: Vec<f64>,
        values: Vec<f64>,
    },
    /// `τ₀ e^{−μ(t−N)⁺}`.
    ExponentialDecay {
        tau0: f64,
        mu: f64,
        n: f64,
    },
    Custom(CustomTau),
}

impl TauProfile {
    pub fn custom(rate: impl Fn(f64) -> f64 + Send + Sync + 'static, kinks: Vec<f64>) -> Self {
        TauProfile::Custom(CustomTau {
            rate: Arc::new(rate),
            kinks,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TauProfile::Constant { tau0 } => {
                if !tau0.is_finite() {
                    return Err(Error::invalid("tau0 must be finite"));
                }
            }
            TauProfile::Chowell { tau0, p, mu, n } => {
                if ![*tau0, *p, *mu, *n].iter().all(|v| v.is_finite()) {
                    return Err(Error::invalid("Chowell parameters must be finite"));
                }
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
                }
                if *mu < 0.0 {
                    return Err(Error::invalid(format!("mu must be non-negative, got {mu}")));
                }
            }
            TauProfile::ExponentialDecay { tau0, mu, n } => {
                if ![*tau0, *mu, *n].iter().all(|v| v.is_finite()) {
                    return Err(Error::invalid("decay parameters must be finite"));
                }
                if *mu < 0.0 {
                    return Err(Error::invalid(format!("mu must be non-negative, got {mu}")));
                }
            }
            TauProfile::Sampled { grid, values } => {
                if grid.is_empty() || grid.len() != values.len() {
                    return Err(Error::invalid(
                        "sampled tau needs equal, non-empty grid and values",
                    ));
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid(
                        "sampled tau grid must be strictly increasing",
                    ));
                }
                if grid.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("sampled tau must be finite"));
                }
            }
            TauProfile::Custom(_) => {}
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            TauProfile::Constant { tau0 } => *tau0,
            TauProfile::Chowell { tau0, p, mu, n } => {
                tau0 * (p * (-mu * (t - n).max(0.0)).exp() + 1.0 - p)
            }
            TauProfile::ExponentialDecay { tau0, mu, n } => tau0 * (-mu * (t - n).max(0.0)).exp(),
            TauProfile::Sampled { grid, values } => {
                if t <= grid[0] {
                    return values[0];
                }
                let last = grid.len() - 1;
                if t >= grid[last] {
                    return values[last];
                }
                let i = grid.partition_point(|&g| g <= t) - 1;
                let w = (t - grid[i]) / (grid[i + 1] - grid[i]);
                values[i] + w * (values[i + 1] - values[i])
            }
            TauProfile::Custom(c) => (c.rate)(t),
        }
    }

    /// Right derivative in `t`.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            TauProfile::Constant { .. } => 0.0,
            TauProfile::Chowell { tau0, p, mu, n } => {
                if t < *n {
                    0.0
                } else {
                    -tau0 * p * mu * (-mu * (t - n)).exp()
                }
            }
            TauProfile::ExponentialDecay { tau0, mu, n } => {
                if t < *n {
                    0.0
                } else {
                    -tau0 * mu * (-mu * (t - n)).exp()
                }
            }
            TauProfile::Sampled { grid, values } => {
                let last = grid.len() - 1;
                if last == 0 || t < grid[0] || t >= grid[last] {
                    return 0.0;
                }
                let i = grid.partition_point(|&g| g <= t) - 1;
                (values[i + 1] - values[i]) / (grid[i + 1] - grid[i])
            }
            TauProfile::Custom(c) => {
                let h = 1e-5 * t.abs().max(1.0);
                ((c.rate)(t + h) - (c.rate)(t - h)) / (2.0 * h)
            }
        }
    }

    pub fn kinks(&self) -> Vec<f64> {
        match self {
            TauProfile::Constant { .. } => Vec::new(),
            TauProfile::Chowell { n, .. } | TauProfile::ExponentialDecay { n, .. } => vec![*n],
            TauProfile::Sampled { grid, .. } => grid.clone(),
            TauProfile::Custom(c) => c.kinks.clone(),
        }
    }
}

/// Model states on an output grid. `cr` is `CR₀ + νf·CI`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub u: Option<Vec<f64>>,
    pub cr: Vec<f64>,
    pub ci: Vec<f64>,
}

impl Trajectory {
    /// `CR` and its first three derivatives computed from the model states,
    /// so that exact-reconstruction formulas can be applied without smoothing.
    pub fn to_smoothed(&self, p: &EpiParams, tau: &TauProfile) -> Result<SmoothedSeries> {
        check_uniform_grid(&self.grid)?;
        let nf = p.nu * p.f;
        let mut d1 = Vec::with_capacity(self.grid.len());
        let mut d2 = Vec::with_capacity(self.grid.len());
        let mut d3 = Vec::with_capacity(self.grid.len());
        for k in 0..self.grid.len() {
            let t = self.grid[k];
            let (s, i) = (self.s[k], self.i[k]);
            let u = self.u.as_ref().map_or(0.0, |u| u[k]);
            let (tv, dtv) = (tau.value(t), tau.derivative(t));
            let force = tv * s * (i + u);
            let ds = -force;
            let di = force - p.nu * i;
            let du = if self.u.is_some() {
                p.nu * (1.0 - p.f) * i - p.eta * u
            } else {
                0.0
            };
            let dforce = dtv * s * (i + u) + tv * ds * (i + u) + tv * s * (di + du);
            d1.push(nf * i);
            d2.push(nf * di);
            d3.push(nf * (dforce - p.nu * di));
        }
        let monotone = self.cr.windows(2).all(|w| w[1] >= w[0]) && d1.iter().all(|&d| d >= 0.0);
        Ok(SmoothedSeries {
            grid: self.grid.clone(),
            value: self.cr.clone(),
            d1,
            d2,
            d3,
            monotone,
        })
    }
}

/// Integrator settings used by the simulations: rtol 1e-9, atol 1e-12·S₀.
pub fn default_options(p: &EpiParams) -> OdeOptions {
    OdeOptions::with_tolerances(1e-9, 1e-12 * p.s0)
}

fn check_grid(p: &EpiParams, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("output grid is empty"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid(
            "output grid must be finite and strictly increasing",
        ));
    }
    if grid[0] < p.t0 {
        return Err(Error::invalid(format!(
            "output grid starts at {} before t0 = {}",
            grid[0], p.t0
        )));
    }
    Ok(())
}

/// Output grid `t₀, t₀ + step, …, t₀ + horizon`.
pub fn horizon_grid(p: &EpiParams, horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && step > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon and step must be positive"));
    }
    Ok(crate::data::uniform_grid(p.t0, p.t0 + horizon, step))
}

pub fn simulate_si(p: &EpiParams, tau: &TauProfile, grid: &[f64]) -> Result<Trajectory> {
    simulate_si_with(p, tau, grid, &default_options(p))
}

/// SI model with reporting; state `(S, I, CI)`.
pub fn simulate_si_with(
    p: &EpiParams,
    tau: &TauProfile,
    grid: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory> {
    p.validate(false)?;
    tau.validate()?;
    check_grid(p, grid)?;
    let sol = integrate(
        |t, y, dy| {
            let force = tau.value(t) * y[0] * y[1];
            dy[0] = -force;
            dy[1] = force - p.nu * y[1];
            dy[2] = y[1];
        },
        p.t0,
        &[p.s0, p.i0, 0.0],
        grid,
        &tau.kinks(),
        opts,
    )?;
    let col = |k: usize| sol.states.iter().map(|y| y[k]).collect::<Vec<_>>();
    let ci = col(2);
    Ok(Trajectory {
        grid: grid.to_vec(),
        s: col(0),
        i: col(1),
        u: None,
        cr: ci.iter().map(|c| p.cr0 + p.nu * p.f * c).collect(),
        ci,
    })
}

pub fn simulate_siur(p: &EpiParams, tau: &TauProfile, grid: &[f64]) -> Result<Trajectory> {
    simulate_siur_with(p, tau, grid, &default_options(p))
}

/// SIUR model; state `(S, I, U, CI)`.
pub fn simulate_siur_with(
    p: &EpiParams,
    tau: &TauProfile,
    grid: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory> {
    p.validate(true)?;
    tau.validate()?;
    check_grid(p, grid)?;
    let sol = integrate(
        |t, y, dy| {
            let force = tau.value(t) * y[0] * (y[1] + y[2]);
            dy[0] = -force;
            dy[1] = force - p.nu * y[1];
            dy[2] = p.nu * (1.0 - p.f) * y[1] - p.eta * y[2];
            dy[3] = y[1];
        },
        p.t0,
        &[p.s0, p.i0, p.u0, 0.0],
        grid,
        &tau.kinks(),
        opts,
    )?;
    let col = |k: usize| sol.states.iter().map(|y| y[k]).collect::<Vec<_>>();
    let ci = col(3);
    Ok(Trajectory {
        grid: grid.to_vec(),
        s: col(0),
        i: col(1),
        u: Some(col(2)),
        cr: ci.iter().map(|c| p.cr0 + p.nu * p.f * c).collect(),
        ci,
    })
}

/// Integrates `CI' = I₀ + S₀(1 − e^{−τCI}) − νCI` from `CI(t₀) = ci0` and
/// returns `CI` on `grid`.
pub fn cumulative_ode_solve(p: &EpiParams, tau0: f64, ci0: f64, grid: &[f64]) -> Result<Vec<f64>> {
    p.validate(false)?;
    check_grid(p, grid)?;
    if !(tau0 >= 0.0 && tau0.is_finite()) || !(ci0 >= 0.0 && ci0.is_finite()) {
        return Err(Error::invalid(
            "tau0 and CI0 must be finite and non-negative",
        ));
    }
    let sol = integrate(
        |_, y, dy| dy[0] = p.i0 - p.s0 * (-tau0 * y[0]).exp_m1() - p.nu * y[0],
        p.t0,
        &[ci0],
        grid,
        &[],
        &default_options(p),
    )?;
    Ok(sol.states.into_iter().map(|y| y[0]).collect())
}

/// Positive root of `0 = I₀ + S₀(1 − e^{−τ₀ CI∞}) − ν CI∞`.
pub fn final_size(p: &EpiParams, tau0: f64) -> Result<f64> {
    p.validate(false)?;
    if !(tau0 >= 0.0 && tau0.is_finite()) {
        return Err(Error::invalid(format!(
            "tau0 must be finite and non-negative, got {tau0}"
        )));
    }
    if p.i0 == 0.0 {
        return Ok(0.0);
    }
    if tau0 == 0.0 {
        return Ok(p.i0 / p.nu);
    }
    let g = |x: f64| p.i0 - p.s0 * (-tau0 * x).exp_m1() - p.nu * x;
    let (mut lo, mut hi) = (0.0, (p.i0 + p.s0) / p.nu);
    let tol = 1e-9 * hi;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Daily-case compartment `D' = fνI − D` evaluated two ways.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub grid: Vec<f64>,
    /// `e^{−(t−t₀)}D₀ + ∫ e^{−(t−σ)} flow(σ) dσ` by composite Simpson quadrature.
    pub convolution: Vec<f64>,
    /// Adaptive integration of the equivalent ODE.
    pub ode: Vec<f64>,
}

const DAILY_QUADRATURE_STEP: f64 = 0.01;

/// `flow` is `t ↦ fνI(t)`; `grid` must start at or after `t0`.
pub fn daily_from_cumulative(
    flow: &dyn Fn(f64) -> f64,
    d0: f64,
    t0: f64,
    grid: &[f64],
) -> Result<DailySeries> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < t0 {
        return Err(Error::invalid(
            "grid must be strictly increasing and start at or after t0",
        ));
    }
    let mut convolution = Vec::with_capacity(grid.len());
    let (mut t, mut d) = (t0, d0);
    for &target in grid {
        let span = target - t;
        if span > 0.0 {
            let n = 2 * ((span / (2.0 * DAILY_QUADRATURE_STEP)).ceil() as usize).max(1);
            let h = span / n as f64;
            let mut acc = 0.0;
            for k in 0..=n {
                let s = t + k as f64 * h;
                let w = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * (-(target - s)).exp() * flow(s);
            }
            d = (-span).exp() * d + acc * h / 3.0;
            t = target;
        }
        convolution.push(d);
    }
    let sol = integrate(
        |s, y, dy| dy[0] = flow(s) - y[0],
        t0,
        &[d0],
        grid,
        &[],
        &OdeOptions::with_tolerances(1e-11, 1e-12 * d0.abs().max(1.0)),
    )?;
    Ok(DailySeries {
        grid: grid.to_vec(),
        convolution,
        ode: sol.states.into_iter().map(|y| y[0]).collect(),
    })
}

/// One corner of a confidence envelope: parameters plus a constant rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub params: EpiParams,
    pub tau0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub grid: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub cr_low: Vec<f64>,
    pub cr_high: Vec<f64>,
}

/// Simulates the two parameter corners. Cumulative infections are monotone in
/// `I₀`, `S₀`, `τ` and `1/ν`, so the corners bound every trajectory in between.
pub fn envelope_ci(low: &Corner, high: &Corner, grid: &[f64]) -> Result<Envelope> {
    let (a, b) = (&low.params, &high.params);
    if a.i0 > b.i0 || a.s0 > b.s0 || low.tau0 > high.tau0 || a.nu < b.nu {
        return Err(Error::invalid(
            "envelope corners must be ordered in I0, S0, tau and 1/nu (low <= high)",
        ));
    }
    if a.t0 != b.t0 {
        return Err(Error::invalid("envelope corners must share t0"));
    }
    let lo = simulate_si(a, &TauProfile::Constant { tau0: low.tau0 }, grid)?;
    let hi = simulate_si(b, &TauProfile::Constant { tau0: high.tau0 }, grid)?;
    Ok(Envelope {
        grid: grid.to_vec(),
        ci_low: lo.ci,
        ci_high: hi.ci,
        cr_low: lo.cr,
        cr_high: hi.cr,
    })
}

/// Any curve `t ↦ CR(t)` turned into the flow `CR'(t)`.
pub fn flow_of<C: Curve>(curve: &C) -> impl Fn(f64) -> f64 + '_ {
    move |t| curve.derivatives(t)[1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn china() -> EpiParams {
        EpiParams::si(1.4e9, 0.2, 0.5, 0.0, 1521.9, 0.0)
    }

    fn days(n: usize) -> Vec<f64> {
        (0..=n).map(|k| k as f64).collect()
    }

    #[test]
    fn zero_rate_decouples() {
        let p = EpiParams::si(1e6, 0.25, 0.6, 0.0, 100.0, 7.0);
        let tr = simulate_si(&p, &TauProfile::Constant { tau0: 0.0 }, &days(40)).unwrap();
        for (k, &t) in tr.grid.iter().enumerate() {
            assert_eq!(tr.s[k], 1e6);
            let i = 100.0 * (-0.25 * t).exp();
            assert!((tr.i[k] - i).abs() < 1e-8 * 100.0);
            let cr = 7.0 + 0.6 * 100.0 * (1.0 - (-0.25 * t).exp());
            assert!((tr.cr[k] - cr).abs() < 1e-8 * cr);
        }
    }

    #[test]
    fn frozen_susceptibles_early_on() {
        let p = china();
        let tau0 = (0.265 + 0.2) / 1.4e9;
        let tr = simulate_si(&p, &TauProfile::Constant { tau0 }, &days(5)).unwrap();
        for (k, &t) in tr.grid.iter().enumerate() {
            let lin = p.i0 * ((tau0 * p.s0 - p.nu) * t).exp();
            assert!((tr.i[k] - lin).abs() < 0.005 * lin);
        }
    }

    #[test]
    fn si_first_integral_conserved() {
        let p = china();
        let tau = TauProfile::Chowell {
            tau0: 3.32e-10,
            p: 0.9,
            mu: 0.1,
            n: 20.0,
        };
        let tr = simulate_si(&p, &tau, &days(150)).unwrap();
        let c0 = p.s0 + p.i0;
        for k in 0..tr.grid.len() {
            let c = tr.s[k] + tr.i[k] + p.nu * tr.ci[k];
            assert!((c - c0).abs() <= 1e-8 * c0);
            assert!((tr.cr[k] - p.cr0 - p.nu * p.f * tr.ci[k]).abs() <= 1e-12 * tr.cr[k].max(1.0));
        }
        assert!(tr.s.windows(2).all(|w| w[1] <= w[0]));
        assert!(tr.cr.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn siur_with_full_reporting_matches_si() {
        let p = EpiParams {
            f: 1.0,
            eta: 0.3,
            u0: 50.0,
            ..china()
        };
        let tau = TauProfile::Constant { tau0: 3.0e-10 };
        let tight = OdeOptions::with_tolerances(1e-10, 1e-10);
        let tr = simulate_siur_with(&p, &tau, &days(30), &tight).unwrap();
        let u = tr.u.as_ref().unwrap();
        for (k, &t) in tr.grid.iter().enumerate() {
            assert!((u[k] - 50.0 * (-0.3 * t).exp()).abs() < 1e-8 * 50.0);
        }
        let p0 = EpiParams { u0: 0.0, ..p };
        let a = simulate_siur_with(&p0, &tau, &days(30), &tight).unwrap();
        let b = simulate_si_with(&p0, &tau, &days(30), &tight).unwrap();
        for k in 0..a.grid.len() {
            assert!((a.i[k] - b.i[k]).abs() <= 1e-8 * b.i[k]);
        }
    }

    #[test]
    fn cumulative_equation_matches_system() {
        let p = china();
        let tau0 = 3.32142857e-10;
        let grid = days(120);
        let ci = cumulative_ode_solve(&p, tau0, 0.0, &grid).unwrap();
        let tr = simulate_si(&p, &TauProfile::Constant { tau0 }, &grid).unwrap();
        for k in 1..grid.len() {
            assert!((ci[k] - tr.ci[k]).abs() <= 1e-7 * tr.ci[k], "t={}", grid[k]);
        }
        assert!(ci.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn cumulative_equation_linear_case() {
        let p = EpiParams::si(1e6, 0.3, 0.5, 2.0, 80.0, 0.0);
        let grid: Vec<f64> = (0..=30).map(|k| 2.0 + k as f64).collect();
        let ci = cumulative_ode_solve(&p, 0.0, 10.0, &grid).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let exact = 80.0 / 0.3 + (10.0 - 80.0 / 0.3) * (-0.3 * (t - 2.0)).exp();
            assert!((ci[k] - exact).abs() <= 1e-9 * exact);
        }
    }

    #[test]
    fn final_size_special_cases() {
        let p = china();
        assert_eq!(final_size(&p, 0.0).unwrap(), p.i0 / p.nu);
        assert_eq!(final_size(&EpiParams { i0: 0.0, ..p }, 3e-10).unwrap(), 0.0);
    }

    #[test]
    fn final_size_is_long_run_limit() {
        let p = china();
        let tau0 = 3.32142857e-10;
        let ci_inf = final_size(&p, tau0).unwrap();
        let ci = cumulative_ode_solve(&p, tau0, 0.0, &[2000.0]).unwrap();
        assert!(
            (ci[0] - ci_inf).abs() <= 1e-3 * ci_inf,
            "{} vs {ci_inf}",
            ci[0]
        );
    }

    #[test]
    fn daily_model_relaxes_to_constant_flow() {
        let c = 250.0;
        let d = daily_from_cumulative(&|_| c, 0.0, 0.0, &[20.0]).unwrap();
        let bound = c * (-20f64).exp() + 1e-9;
        assert!((d.convolution[0] - c).abs() < bound);
        assert!((d.ode[0] - c).abs() < bound);
        let z = daily_from_cumulative(&|_| 0.0, 0.0, 0.0, &days(10)).unwrap();
        assert!(z.convolution.iter().chain(&z.ode).all(|v| *v == 0.0));
    }

    #[test]
    fn daily_model_two_forms_agree() {
        let flow = |t: f64| 3.7 * 0.26 * (0.26 * t).exp();
        let d = daily_from_cumulative(&flow, 5.0, 0.0, &days(25)).unwrap();
        for (a, b) in d.convolution.iter().zip(&d.ode) {
            assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn envelope_orders_and_collapses() {
        let p = china();
        let corner = Corner {
            params: p,
            tau0: 3.3e-10,
        };
        let e = envelope_ci(&corner, &corner, &days(50)).unwrap();
        assert_eq!(e.cr_low, e.cr_high);
        let high = Corner {
            params: EpiParams { i0: 2000.0, ..p },
            tau0: 3.4e-10,
        };
        assert!(envelope_ci(&high, &corner, &days(5))
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn tighter_tolerance_changes_little() {
        let p = china();
        let tau = TauProfile::Chowell {
            tau0: 3.32e-10,
            p: 0.8,
            mu: 0.05,
            n: 15.0,
        };
        let grid = days(100);
        let coarse = simulate_si_with(
            &p,
            &tau,
            &grid,
            &OdeOptions::with_tolerances(1e-8, 1e-12 * p.s0),
        )
        .unwrap();
        let fine = simulate_si_with(
            &p,
            &tau,
            &grid,
            &OdeOptions::with_tolerances(5e-9, 0.5e-12 * p.s0),
        )
        .unwrap();
        // global error grows with the epidemic's amplification, so allow ten
        // times the coarse tolerance against each component's scale
        let cols = |t: &Trajectory| [t.s.clone(), t.i.clone(), t.ci.clone()];
        for (a, b) in cols(&coarse).iter().zip(cols(&fine).iter()) {
            let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let worst = a
                .iter()
                .zip(b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(worst <= 1e-7 * scale, "{worst} vs scale {scale}");
        }
    }

    #[test]
    fn tau_profiles() {
        let c = TauProfile::Chowell {
            tau0: 2.0,
            p: 0.5,
            mu: 0.1,
            n: 10.0,
        };
        assert_eq!(c.value(3.0), 2.0);
        assert!((c.value(20.0) - 2.0 * (0.5 * (-1f64).exp() + 0.5)).abs() < 1e-15);
        let s = TauProfile::Sampled {
            grid: vec![0.0, 1.0, 2.0],
            values: vec![1.0, 3.0, 2.0],
        };
        assert_eq!(s.value(0.5), 2.0);
        assert_eq!(s.value(-1.0), 1.0);
        assert_eq!(s.value(9.0), 2.0);
        assert!(TauProfile::Chowell {
            tau0: 1.0,
            p: 1.5,
            mu: 0.0,
            n: 0.0
        }
        .validate()
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn siur_compartments_non_negative(
            s0 in 1e3f64..1e7,
            nu in 0.05f64..1.0,
            f in 0.05f64..1.0,
            eta in 0.05f64..1.0,
            i0 in 0.0f64..100.0,
            u0 in 0.0f64..100.0,
            r0 in 0.5f64..5.0,
        ) {
            let p = EpiParams { s0, nu, f, eta, t0: 0.0, i0, u0, cr0: 0.0 };
            let tau = TauProfile::Constant { tau0: r0 * nu / s0 };
            let tr = simulate_siur(&p, &tau, &days(150)).unwrap();
            let tol = 1e-9 * s0;
            prop_assert!(tr.s.iter().chain(&tr.i).chain(tr.u.as_ref().unwrap()).all(|v| *v >= -tol));
            prop_assert!(tr.ci.windows(2).all(|w| w[1] >= w[0] - tol));
        }
    }
}
