//! Explicit Runge-Kutta integration: adaptive Dormand-Prince 5(4) with exact
//! landing on requested output times and kink points, plus a fixed-step RK4.
//!
//! Values at the requested output times are integrator stop points. Between
//! accepted steps the solution is available through cubic Hermite
//! interpolation on the stored nodes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; estimated from the right-hand side when `None`.
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 2_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Default::default()
        }
    }
}

/// Accepted integration nodes with their derivatives.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    ts: Vec<f64>,
    ys: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
}

impl DenseSolution {
    pub fn nodes(&self) -> &[f64] {
        &self.ts
    }

    pub fn t_start(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.ts.len();
        if t <= self.ts[0] {
            return 0;
        }
        if t >= self.ts[n - 1] {
            return n.saturating_sub(2);
        }
        // first index with ts[i] > t
        let i = self.ts.partition_point(|&x| x <= t);
        i - 1
    }

    /// Cubic Hermite interpolation of the state at `t` (clamped to the range).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let dim = self.ys[0].len();
        if self.ts.len() == 1 {
            return self.ys[0].clone();
        }
        let t = t.clamp(self.t_start(), self.t_end());
        let i = self.segment(t);
        let (t0, t1) = (self.ts[i], self.ts[i + 1]);
        let h = t1 - t0;
        if h == 0.0 {
            return self.ys[i + 1].clone();
        }
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        (0..dim)
            .map(|k| {
                h00 * self.ys[i][k]
                    + h * h10 * self.fs[i][k]
                    + h01 * self.ys[i + 1][k]
                    + h * h11 * self.fs[i + 1][k]
            })
            .collect()
    }
}

/// Result of [`integrate`]: states at the requested output times and the dense record.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub dense: DenseSolution,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], opts: &OdeOptions) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F>(rhs: &mut F, t: f64, y: &[f64], f0: &[f64], opts: &OdeOptions) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y.len();
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / dim as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; dim];
    rhs(t + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
    let d2 = rms(&diff);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    (100.0 * h0).min(h1)
}

/// Integrates `y' = rhs(t, y)` from `t0`, landing exactly on every time in
/// `outputs` (sorted, ≥ `t0`) and on every `kinks` point inside the range.
pub fn integrate<F>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    outputs: &[f64],
    kinks: &[f64],
    opts: &OdeOptions,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if outputs.windows(2).any(|w| w[1] < w[0]) || outputs.first().is_some_and(|&t| t < t0) {
        return Err(Error::invalid(
            "output times must be sorted and not precede t0",
        ));
    }
    let dim = y0.len();
    let t_end = outputs.last().copied().unwrap_or(t0);

    let mut landings: Vec<f64> = outputs
        .iter()
        .copied()
        .chain(kinks.iter().copied().filter(|&k| k > t0 && k < t_end))
        .filter(|&x| x > t0)
        .collect();
    landings.sort_by(|a, b| a.partial_cmp(b).unwrap());
    landings.dedup();

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut f = vec![0.0; dim];
    rhs(t, &y, &mut f);

    let mut dense = DenseSolution {
        ts: vec![t],
        ys: vec![y.clone()],
        fs: vec![f.clone()],
    };
    let mut times = Vec::with_capacity(outputs.len());
    let mut states = Vec::with_capacity(outputs.len());
    let mut out_idx = 0;
    while out_idx < outputs.len() && outputs[out_idx] <= t0 {
        times.push(outputs[out_idx]);
        states.push(y.clone());
        out_idx += 1;
    }

    let mut h = opts
        .h_init
        .unwrap_or_else(|| initial_step(&mut rhs, t, &y, &f, opts))
        .min(opts.h_max);

    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut steps = 0usize;
    let mut last_rejected = false;

    for &target in &landings {
        while t < target {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::NonConvergence(format!(
                    "step budget of {} exhausted at t = {t}",
                    opts.max_steps
                )));
            }
            let remaining = target - t;
            let mut step = h.min(remaining);
            // avoid a sliver step just before the landing point
            if remaining - step < 1e-10 * remaining.max(1.0) {
                step = remaining;
            }
            if step < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t });
            }

            for i in 0..dim {
                tmp[i] = y[i] + step * A21 * f[i];
            }
            rhs(t + C2 * step, &tmp, &mut k2);
            for i in 0..dim {
                tmp[i] = y[i] + step * (A31 * f[i] + A32 * k2[i]);
            }
            rhs(t + C3 * step, &tmp, &mut k3);
            for i in 0..dim {
                tmp[i] = y[i] + step * (A41 * f[i] + A42 * k2[i] + A43 * k3[i]);
            }
            rhs(t + C4 * step, &tmp, &mut k4);
            for i in 0..dim {
                tmp[i] = y[i] + step * (A51 * f[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            rhs(t + C5 * step, &tmp, &mut k5);
            for i in 0..dim {
                tmp[i] = y[i]
                    + step * (A61 * f[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            // left limit at a landing point, so a jump exactly there is not seen early
            let t_end_stage = if step == remaining {
                target.next_down()
            } else {
                t + step
            };
            rhs(t_end_stage, &tmp, &mut k6);
            for i in 0..dim {
                y_new[i] = y[i]
                    + step * (A71 * f[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            let t_new = if step == remaining { target } else { t + step };
            rhs(t_end_stage, &y_new, &mut k7);
            for i in 0..dim {
                err[i] = step
                    * (E1 * f[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let en = error_norm(&err, &y, &y_new, opts);
            if !en.is_finite() {
                h = step * 0.2;
                last_rejected = true;
                continue;
            }
            if en <= 1.0 {
                t = t_new;
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut f, &mut k7);
                dense.ts.push(t);
                dense.ys.push(y.clone());
                dense.fs.push(f.clone());
                let mut fac = 0.9 * en.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, 5.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                let proposed = step * fac;
                // a step clipped by a landing point says little about the natural step size
                h = if step < h { proposed.max(h) } else { proposed };
                h = h.min(opts.h_max);
                last_rejected = false;
            } else {
                let fac = (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
                h = step * fac;
                last_rejected = true;
            }
        }
        // restart derivative at landing points so one-sided kinks are respected
        rhs(t, &y, &mut f);
        if let Some(last) = dense.fs.last_mut() {
            last.copy_from_slice(&f);
        }
        while out_idx < outputs.len() && outputs[out_idx] <= t {
            times.push(outputs[out_idx]);
            states.push(y.clone());
            out_idx += 1;
        }
    }

    Ok(OdeSolution {
        times,
        states,
        dense,
    })
}

/// Classical RK4 with `substeps` equal steps from `t0` to `t1`.
pub fn rk4<F>(mut rhs: F, t0: f64, y0: &[f64], t1: f64, substeps: usize) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let n = substeps.max(1);
    let h = (t1 - t0) / n as f64;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for s in 0..n {
        let t = t0 + s as f64 * h;
        rhs(t, &y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}
