//! Perron–Frobenius tools for exponential-phase identifiability and the
//! age-structured exponential-phase estimation.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::CumulativeSeries;
use crate::error::{Error, Result};
use crate::fitkit::fit_exponential;
use crate::ode::{integrate, OdeOptions};
use crate::pheno::{Convention, ExponentialModel, PhenoModel};

/// Square matrix with non-negative off-diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CooperativeMatrix {
    a: DMatrix<f64>,
    irreducible: bool,
}

impl CooperativeMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::invalid(format!(
                "matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if i != j && a[(i, j)] < 0.0 {
                    return Err(Error::invalid(format!(
                        "off-diagonal entry ({i}, {j}) = {} is negative",
                        a[(i, j)]
                    )));
                }
            }
        }
        let irreducible = strongly_connected(&a);
        Ok(Self { a, irreducible })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid(
                "matrix rows must all have length equal to the row count",
            ));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Frozen-susceptible SIUR matrix `[[τS₀−ν, τS₀], [ν(1−f), −η]]`.
    pub fn siur(tau: f64, s0: f64, nu: f64, f: f64, eta: f64) -> Result<Self> {
        let m = crate::identify::siur_matrix(tau, s0, nu, f, eta);
        Self::new(DMatrix::from_fn(2, 2, |i, j| m[i][j]))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn is_irreducible(&self) -> bool {
        self.irreducible
    }
}

fn reaches_all(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = VecDeque::from([0]);
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && i != j && edge(i, j) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn strongly_connected(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    reaches_all(n, |i, j| a[(i, j)] != 0.0) && reaches_all(n, |i, j| a[(j, i)] != 0.0)
}

pub fn is_irreducible(a: &CooperativeMatrix) -> bool {
    a.is_irreducible()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominantMode {
    /// Spectral bound `s(A)`.
    pub s: f64,
    /// Right Perron vector, normalized to unit sum.
    pub v_right: DVector<f64>,
    /// Left Perron vector, normalized to unit sum.
    pub v_left: DVector<f64>,
    /// `Π = v_R v_Lᵀ / ⟨v_L, v_R⟩`.
    pub projector: DMatrix<f64>,
}

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;

fn perron_vector(b: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = b.nrows();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_MAX_ITER {
        let mut w = b * &v;
        let sum = w.sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Numerical("power iteration lost positivity".into()));
        }
        w /= sum;
        let diff = (&w - &v).amax();
        v = w;
        if diff < POWER_TOL {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence(format!(
        "power iteration did not converge in {POWER_MAX_ITER} iterations"
    )))
}

// A few inverse-iteration steps at the converged shift bring the residual
// from the power-iteration tolerance down to rounding level.
fn polish(a: &DMatrix<f64>, s: f64, v: DVector<f64>) -> DVector<f64> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * s;
    let lu = shifted.lu();
    let mut v = v;
    for _ in 0..2 {
        match lu.solve(&v) {
            Some(w) if w.iter().all(|x| x.is_finite()) && w.sum() != 0.0 => {
                let w = &w / w.sum();
                if w.iter().all(|x| *x > 0.0) {
                    v = w;
                } else {
                    break;
                }
            }
            _ => break,
        }
    }
    v
}

/// Perron–Frobenius eigenvalue and eigenvectors by power iteration on
/// `A + δI`, `δ = 1 + max|aᵢᵢ|`.
pub fn dominant_mode(a: &CooperativeMatrix) -> Result<DominantMode> {
    if !a.is_irreducible() {
        return Err(Error::invalid(
            "matrix is reducible; the dominant mode need not be positive",
        ));
    }
    let m = a.matrix();
    let n = a.n();
    let delta = 1.0 + (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let b = m + DMatrix::identity(n, n) * delta;
    let vr = perron_vector(&b)?;
    let vl = perron_vector(&b.transpose())?;
    let rayleigh = |vr: &DVector<f64>, vl: &DVector<f64>| vl.dot(&(m * vr)) / vl.dot(vr);
    let s0 = rayleigh(&vr, &vl);
    let vr = polish(m, s0, vr);
    let vl = polish(&m.transpose(), s0, vl);
    let s = rayleigh(&vr, &vl);
    if vr.iter().chain(vl.iter()).any(|x| !(*x > 0.0)) {
        return Err(Error::Numerical(
            "Perron vectors are not strictly positive".into(),
        ));
    }
    let projector = &vr * vl.transpose() / vl.dot(&vr);
    Ok(DominantMode {
        s,
        v_right: vr,
        v_left: vl,
        projector,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleExpVerdict {
    pub is_single_exp: bool,
    /// `s(A)`.
    pub chi2_est: f64,
    /// `⟨y₀, Πx₀⟩`.
    pub chi1_est: f64,
    /// `(max − min)/|r(0)|` of `r(t) = ⟨y₀,x(t)⟩e^{−s(A)t}` over the horizon.
    pub max_rel_variation: f64,
    /// `r(horizon)`.
    pub final_ratio: f64,
}

pub const SINGLE_EXP_TOL: f64 = 1e-6;

/// Integrates `x' = Ax` from `x₀` on `[0, horizon]` and tests whether the
/// output `⟨y₀, x(t)⟩` is a single exponential with rate `s(A)`.
pub fn check_single_exponential(
    a: &CooperativeMatrix,
    y0: &[f64],
    x0: &[f64],
    horizon: f64,
) -> Result<SingleExpVerdict> {
    let n = a.n();
    if y0.len() != n || x0.len() != n {
        return Err(Error::invalid(format!(
            "weight and state vectors must have length {n}"
        )));
    }
    if y0.iter().any(|v| !(*v > 0.0)) || x0.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid(
            "weight and initial state must be componentwise positive",
        ));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let mode = dominant_mode(a)?;
    let m = a.matrix();
    let y = DVector::from_column_slice(y0);
    let x = DVector::from_column_slice(x0);
    let chi1 = y.dot(&(&mode.projector * &x));
    // integrate the scaled state z = x e^{-s t}, which stays bounded
    let shifted = m - DMatrix::identity(n, n) * mode.s;
    let outputs: Vec<f64> = (0..=400).map(|k| horizon * k as f64 / 400.0).collect();
    let scale = x.amax();
    let sol = integrate(
        |_, z, dz| {
            for i in 0..n {
                dz[i] = (0..n).map(|j| shifted[(i, j)] * z[j]).sum();
            }
        },
        0.0,
        x0,
        &outputs,
        &[],
        &OdeOptions::with_tolerances(1e-12, 1e-14 * scale),
    )?;
    let ratios: Vec<f64> = sol
        .states
        .iter()
        .map(|z| z.iter().zip(y0).map(|(a, b)| a * b).sum())
        .collect();
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| {
            (l.min(r), h.max(r))
        });
    let variation = (hi - lo) / ratios[0].abs();
    Ok(SingleExpVerdict {
        is_single_exp: variation < SINGLE_EXP_TOL,
        chi2_est: mode.s,
        chi1_est: chi1,
        max_rel_variation: variation,
        final_ratio: *ratios.last().unwrap(),
    })
}

/// Age-structured SIUR model in the exponential phase.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeModel {
    /// Contact rates; row = receiving group.
    pub phi: DMatrix<f64>,
    pub populations: Vec<f64>,
    pub susceptibles: Vec<f64>,
    pub nu: f64,
    pub f: Vec<f64>,
    /// Calendar-convention exponential fits per group.
    pub chi: Vec<ExponentialModel>,
    pub eta: f64,
}

impl AgeModel {
    pub fn n(&self) -> usize {
        self.populations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::invalid("age model needs at least one group"));
        }
        if self.phi.nrows() != n || self.phi.ncols() != n {
            return Err(Error::invalid(format!("contact matrix must be {n}x{n}")));
        }
        if self.susceptibles.len() != n || self.f.len() != n || self.chi.len() != n {
            return Err(Error::invalid(format!(
                "every per-group vector must have length {n}"
            )));
        }
        if self.phi.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "contact rates must be finite and non-negative",
            ));
        }
        for j in 0..n {
            if !(self.populations[j] > 0.0) {
                return Err(Error::invalid(format!(
                    "group {j}: population must be positive"
                )));
            }
            if !(self.susceptibles[j] >= 0.0) {
                return Err(Error::invalid(format!(
                    "group {j}: susceptibles must be non-negative"
                )));
            }
            if !(self.f[j] > 0.0 && self.f[j] <= 1.0) {
                return Err(Error::invalid(format!("group {j}: f must lie in (0, 1]")));
            }
        }
        if !(self.nu > 0.0 && self.eta >= 0.0) {
            return Err(Error::invalid("need nu > 0 and eta >= 0"));
        }
        Ok(())
    }

    fn chi_calendar(&self, j: usize) -> ExponentialModel {
        self.chi[j].to_calendar()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarState {
    pub istar: f64,
    pub ustar: f64,
    pub custar: f64,
}

/// `I*ⱼ = χ₁ʲχ₂ʲ/(νfⱼ)`, `U*ⱼ = ν(1−fⱼ)I*ⱼ/(η+χ₂ʲ)`, `CU*ⱼ = ν(1−fⱼ)I*ⱼ/χ₂ʲ`.
pub fn age_star_states(m: &AgeModel) -> Result<Vec<StarState>> {
    m.validate()?;
    (0..m.n())
        .map(|j| {
            let c = m.chi_calendar(j);
            if !(c.chi2 > 0.0) {
                return Err(Error::invalid(format!("group {j}: chi2 must be positive")));
            }
            if !(m.eta + c.chi2 > 0.0) {
                return Err(Error::invalid(format!(
                    "group {j}: eta + chi2 must be positive"
                )));
            }
            let nu1 = m.nu * m.f[j];
            let nu2 = m.nu * (1.0 - m.f[j]);
            let istar = c.chi1 * c.chi2 / nu1;
            Ok(StarState {
                istar,
                ustar: nu2 * istar / (m.eta + c.chi2),
                custar: nu2 * istar / c.chi2,
            })
        })
        .collect()
}

/// Calendar-convention exponential fit of every group on the same window.
pub fn age_exponential_fits(
    series: &[CumulativeSeries],
    window: (i64, i64),
) -> Result<Vec<ExponentialModel>> {
    series
        .par_iter()
        .enumerate()
        .map(|(j, s)| {
            let fit =
                fit_exponential(s, window, Convention::Calendar).map_err(|e| tag_group(j, e))?;
            match fit.model {
                PhenoModel::Exponential(m) => Ok(m),
                _ => unreachable!("exponential fit returns an exponential model"),
            }
        })
        .collect()
}

fn tag_group(j: usize, e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("group {j}: {m}")),
        Error::NonConvergence(m) => Error::NonConvergence(format!("group {j}: {m}")),
        Error::NonIdentifiable(m) => Error::NonIdentifiable(format!("group {j}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("group {j}: {m}")),
        other => other,
    }
}

/// `∫_{d1}^{d2} e^{rt} dt`, with the linear limit at `r = 0`.
fn exp_integral(r: f64, d1: f64, d2: f64) -> f64 {
    let len = d2 - d1;
    if (r * len).abs() < 1e-12 {
        return len * (r * d1).exp() * (1.0 + 0.5 * r * len);
    }
    (r * d1).exp() * (r * len).exp_m1() / r
}

/// Least-squares transmission rates `τ*ⱼ = ∫KⱼHⱼ / ∫Hⱼ²` over `[d1, d2]`,
/// with `Kⱼ = (χ₂ʲ+ν)I*ⱼe^{χ₂ʲt}` and
/// `Hⱼ = Sⱼ Σₖ φⱼₖ(I*ₖ+U*ₖ)/Nₖ e^{χ₂ᵏt}`. Integrals are exact.
pub fn age_tau_star(m: &AgeModel, window: (f64, f64)) -> Result<Vec<f64>> {
    let (d1, d2) = window;
    if !(d2 > d1) {
        return Err(Error::invalid(format!("window [{d1}, {d2}] is empty")));
    }
    let star = age_star_states(m)?;
    let n = m.n();
    let rates: Vec<f64> = (0..n).map(|j| m.chi_calendar(j).chi2).collect();
    (0..n)
        .map(|j| {
            let c: Vec<f64> = (0..n)
                .map(|k| {
                    m.susceptibles[j] * m.phi[(j, k)] * (star[k].istar + star[k].ustar)
                        / m.populations[k]
                })
                .collect();
            let kj = (rates[j] + m.nu) * star[j].istar;
            let mut kh = 0.0;
            let mut hh = 0.0;
            for k in 0..n {
                kh += kj * c[k] * exp_integral(rates[j] + rates[k], d1, d2);
                for l in 0..n {
                    hh += c[k] * c[l] * exp_integral(rates[k] + rates[l], d1, d2);
                }
            }
            if !(hh > 0.0) {
                return Err(Error::NonIdentifiable(format!(
                    "group {j}: no contacts with infected groups, the rate is undetermined"
                )));
            }
            Ok(kh / hh)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgeMode {
    /// Full nonlinear system with depleting susceptibles.
    Full,
    /// Linearization with susceptibles frozen at their initial values.
    FrozenS,
}

/// Per-group compartments at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeState {
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub u: Vec<f64>,
    pub cr: Vec<f64>,
    pub cu: Vec<f64>,
}

/// Exponential-phase state at `t`: `Iⱼ = I*ⱼe^{χ₂ʲt}`, `Uⱼ = U*ⱼe^{χ₂ʲt}`,
/// `CRⱼ` from the fitted curve and `CUⱼ = CU*ⱼe^{χ₂ʲt}`.
pub fn age_initial_state(m: &AgeModel, t: f64) -> Result<AgeState> {
    let star = age_star_states(m)?;
    let n = m.n();
    let g = |j: usize| (m.chi_calendar(j).chi2 * t).exp();
    Ok(AgeState {
        s: m.susceptibles.clone(),
        i: (0..n).map(|j| star[j].istar * g(j)).collect(),
        u: (0..n).map(|j| star[j].ustar * g(j)).collect(),
        cr: (0..n).map(|j| m.chi_calendar(j).eval(t)).collect(),
        cu: (0..n).map(|j| star[j].custar * g(j)).collect(),
    })
}

/// Trajectories indexed `[group][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeTrajectory {
    pub grid: Vec<f64>,
    pub s: Vec<Vec<f64>>,
    pub i: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub cr: Vec<Vec<f64>>,
    pub cu: Vec<Vec<f64>>,
}

/// Integrates the age-structured system from `init` at `grid[0]` with
/// per-group rates `tau`.
pub fn age_simulate(
    m: &AgeModel,
    tau: &[f64],
    init: &AgeState,
    grid: &[f64],
    mode: AgeMode,
) -> Result<AgeTrajectory> {
    let scale: f64 = init.s.iter().chain(&init.i).fold(1.0, |a, b| a.max(*b));
    age_simulate_with(
        m,
        tau,
        init,
        grid,
        mode,
        &OdeOptions::with_tolerances(1e-10, 1e-12 * scale),
    )
}

pub fn age_simulate_with(
    m: &AgeModel,
    tau: &[f64],
    init: &AgeState,
    grid: &[f64],
    mode: AgeMode,
    opts: &OdeOptions,
) -> Result<AgeTrajectory> {
    m.validate()?;
    let n = m.n();
    if tau.len() != n || tau.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::invalid(format!(
            "need {n} finite non-negative rates"
        )));
    }
    for v in [&init.s, &init.i, &init.u, &init.cr, &init.cu] {
        if v.len() != n || v.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::invalid(format!(
                "initial state needs {n} non-negative values per compartment"
            )));
        }
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "output grid must be non-empty and increasing",
        ));
    }
    let mut y0 = Vec::with_capacity(5 * n);
    for v in [&init.s, &init.i, &init.u, &init.cr, &init.cu] {
        y0.extend_from_slice(v);
    }
    let phi = &m.phi;
    let sol = integrate(
        |_, y, dy| {
            let (s, rest) = y.split_at(n);
            let (i, rest) = rest.split_at(n);
            let u = &rest[..n];
            for j in 0..n {
                let pressure: f64 = (0..n)
                    .map(|k| phi[(j, k)] * (i[k] + u[k]) / m.populations[k])
                    .sum();
                let force = tau[j] * s[j] * pressure;
                dy[j] = if mode == AgeMode::Full { -force } else { 0.0 };
                dy[n + j] = force - m.nu * i[j];
                dy[2 * n + j] = m.nu * (1.0 - m.f[j]) * i[j] - m.eta * u[j];
                dy[3 * n + j] = m.nu * m.f[j] * i[j];
                dy[4 * n + j] = m.nu * (1.0 - m.f[j]) * i[j];
            }
        },
        grid[0],
        &y0,
        grid,
        &[],
        opts,
    )?;
    let block = |b: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|j| sol.states.iter().map(|y| y[b * n + j]).collect())
            .collect()
    };
    Ok(AgeTrajectory {
        grid: grid.to_vec(),
        s: block(0),
        i: block(1),
        u: block(2),
        cr: block(3),
        cu: block(4),
    })
}
