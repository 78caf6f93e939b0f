//! Cumulative case series: ingestion, reporting-jump correction and the
//! regularizations used before any derivative of the data is taken.
//!
//! Four regularizations are available. `spline_smooth` interpolates the raw
//! cumulative counts with a natural cubic spline. `rolling_mean_smooth` and
//! `gaussian_window_smooth` average the daily increments over a centered
//! window, re-accumulate and then spline. `convolve_gaussian` convolves a
//! piecewise phenomenological model with a Gaussian and differentiates the
//! kernel instead of the data.

use std::io::Read;
use std::path::Path;

use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::spline::CubicSpline;

/// Day-indexed cumulative counts on a uniform one-day grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeSeries {
    t0: i64,
    values: Vec<f64>,
    label: String,
}

impl CumulativeSeries {
    pub fn new(t0: i64, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "series needs at least 2 values, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::invalid(format!(
                "count at day {} is {v}; counts must be finite and non-negative",
                t0 + i as i64
            )));
        }
        Ok(Self {
            t0,
            values,
            label: label.into(),
        })
    }

    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn last_day(&self) -> i64 {
        self.t0 + self.values.len() as i64 - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn days(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.values.len() as i64).map(move |k| self.t0 + k)
    }

    pub fn value_at(&self, day: i64) -> Option<f64> {
        let k = day.checked_sub(self.t0)?;
        usize::try_from(k)
            .ok()
            .and_then(|k| self.values.get(k).copied())
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }

    /// Daily increments `v[k] - v[k-1]`, one fewer than the values.
    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Sub-series restricted to `[d1, d2]` inclusive.
    pub fn window(&self, d1: i64, d2: i64) -> Result<Self> {
        if d2 < d1 {
            return Err(Error::invalid(format!("window [{d1}, {d2}] is reversed")));
        }
        if d1 < self.t0 || d2 > self.last_day() {
            return Err(Error::invalid(format!(
                "window [{d1}, {d2}] outside series range [{}, {}]",
                self.t0,
                self.last_day()
            )));
        }
        let a = (d1 - self.t0) as usize;
        let b = (d2 - self.t0) as usize;
        Self::new(d1, self.values[a..=b].to_vec(), self.label.clone())
    }
}

/// Removes a reporting-method jump of `magnitude` starting on `day`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpCorrection {
    pub day: i64,
    pub magnitude: f64,
}

/// Regularized cumulative curve sampled on a uniform grid with derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedSeries {
    pub grid: Vec<f64>,
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Vec<f64>,
    /// Whether the sampled values are non-decreasing with non-negative slope.
    pub monotone: bool,
}

impl SmoothedSeries {
    pub fn from_curve<C: Curve + ?Sized>(curve: &C, grid: &[f64]) -> Result<Self> {
        check_uniform_grid(grid)?;
        let mut out = Self {
            grid: grid.to_vec(),
            value: Vec::with_capacity(grid.len()),
            d1: Vec::with_capacity(grid.len()),
            d2: Vec::with_capacity(grid.len()),
            d3: Vec::with_capacity(grid.len()),
            monotone: true,
        };
        for &t in grid {
            let [v, a, b, c] = curve.derivatives(t);
            out.value.push(v);
            out.d1.push(a);
            out.d2.push(b);
            out.d3.push(c);
        }
        out.monotone = compute_monotone(&out.value, &out.d1);
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn step(&self) -> f64 {
        if self.grid.len() < 2 {
            0.0
        } else {
            self.grid[1] - self.grid[0]
        }
    }
}

fn compute_monotone(value: &[f64], d1: &[f64]) -> bool {
    value.windows(2).all(|w| w[1] >= w[0]) && d1.iter().all(|&d| d >= 0.0)
}

pub(crate) fn check_uniform_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("grid is empty"));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("grid contains non-finite values"));
    }
    if grid.len() >= 2 {
        let h = grid[1] - grid[0];
        if h <= 0.0 {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        let tol = 1e-9 * h.max(grid[0].abs().max(grid[grid.len() - 1].abs()) * 1e-6);
        if grid
            .windows(2)
            .any(|w| ((w[1] - w[0]) - h).abs() > tol.max(1e-12))
        {
            return Err(Error::invalid("grid must have a uniform step"));
        }
    }
    Ok(())
}

/// Uniform grid `start, start + step, ..., end` (end included when hit).
pub fn uniform_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

/// Column names of the cumulative-series CSV.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub date: String,
    pub value: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            date: "date".into(),
            value: "cumulative".into(),
        }
    }
}

/// Parses a plain integer day index.
pub fn parse_integer_day(s: &str) -> Option<i64> {
    s.trim().parse().ok()
}

fn check_day_sequence(days: &[i64], lines: &[usize]) -> Result<()> {
    for k in 1..days.len() {
        let gap = days[k] - days[k - 1];
        if gap <= 0 {
            return Err(Error::Parse {
                line: lines[k],
                msg: format!(
                    "non-monotone dates: day {} follows day {}",
                    days[k],
                    days[k - 1]
                ),
            });
        }
        if gap != 1 {
            return Err(Error::Parse {
                line: lines[k],
                msg: format!(
                    "non-uniform dates: gap of {gap} days after day {}",
                    days[k - 1]
                ),
            });
        }
    }
    Ok(())
}

fn parse_count(raw: &str, line: usize) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse count {raw:?}"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Parse {
            line,
            msg: format!("negative or non-finite count {v}"),
        });
    }
    Ok(v)
}

/// Reads a `date,cumulative` CSV from any reader. `parse_day` maps the date
/// field to a day index.
pub fn read_series<R: Read>(
    reader: R,
    columns: &ColumnSpec,
    parse_day: &dyn Fn(&str) -> Option<i64>,
    label: &str,
) -> Result<CumulativeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("missing column {name:?}"),
            })
    };
    let di = find(&columns.date)?;
    let vi = find(&columns.value)?;

    let mut days = Vec::new();
    let mut lines = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let raw_day = rec.get(di).unwrap_or("");
        let day = parse_day(raw_day).ok_or_else(|| Error::Parse {
            line,
            msg: format!("cannot parse date {raw_day:?}"),
        })?;
        values.push(parse_count(rec.get(vi).unwrap_or(""), line)?);
        days.push(day);
        lines.push(line);
    }
    if days.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    check_day_sequence(&days, &lines)?;
    CumulativeSeries::new(days[0], values, label)
}

/// Loads a cumulative series from a CSV file with integer day indices.
pub fn load_series(path: impl AsRef<Path>, columns: &ColumnSpec) -> Result<CumulativeSeries> {
    load_series_with(path, columns, &parse_integer_day)
}

pub fn load_series_with(
    path: impl AsRef<Path>,
    columns: &ColumnSpec,
    parse_day: &dyn Fn(&str) -> Option<i64>,
) -> Result<CumulativeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_series(file, columns, parse_day, &label)
}

/// Reads an age-structured CSV `date,g0,g1,...`: one series per group column.
pub fn read_age_series<R: Read>(
    reader: R,
    parse_day: &dyn Fn(&str) -> Option<i64>,
) -> Result<Vec<CumulativeSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "date" {
        return Err(Error::Parse {
            line: 1,
            msg: "age CSV header must be date,g0,g1,...".into(),
        });
    }
    let groups: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut days = Vec::new();
    let mut lines = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); groups.len()];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let raw_day = rec.get(0).unwrap_or("");
        days.push(parse_day(raw_day).ok_or_else(|| Error::Parse {
            line,
            msg: format!("cannot parse date {raw_day:?}"),
        })?);
        lines.push(line);
        for (g, col) in cols.iter_mut().enumerate() {
            col.push(parse_count(rec.get(g + 1).unwrap_or(""), line)?);
        }
    }
    if days.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    check_day_sequence(&days, &lines)?;
    cols.into_iter()
        .zip(groups)
        .map(|(values, label)| CumulativeSeries::new(days[0], values, label))
        .collect()
}

pub fn apply_jump_correction(s: &CumulativeSeries, c: JumpCorrection) -> Result<CumulativeSeries> {
    if c.day < s.t0() || c.day > s.last_day() {
        return Err(Error::invalid(format!(
            "jump day {} outside series range [{}, {}]",
            c.day,
            s.t0(),
            s.last_day()
        )));
    }
    let start = (c.day - s.t0()) as usize;
    let mut values = s.values().to_vec();
    for (k, v) in values.iter_mut().enumerate().skip(start) {
        *v -= c.magnitude;
        if *v < 0.0 {
            return Err(Error::invalid(format!(
                "jump correction of {} on day {} makes day {} negative",
                c.magnitude,
                c.day,
                s.t0() + k as i64
            )));
        }
    }
    CumulativeSeries::new(s.t0(), values, s.label())
}

fn day_grid(s: &CumulativeSeries) -> Vec<f64> {
    s.days().map(|d| d as f64).collect()
}

/// Natural cubic spline through the cumulative values, sampled on the data days.
pub fn spline_smooth(s: &CumulativeSeries) -> Result<SmoothedSeries> {
    let grid = day_grid(s);
    let spline = CubicSpline::natural(&grid, s.values())?;
    SmoothedSeries::from_curve(&spline, &grid)
}

fn check_window(s: &CumulativeSeries, window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "window must be odd and at least 1, got {window}"
        )));
    }
    if window > s.len() {
        return Err(Error::invalid(format!(
            "window {window} exceeds series length {}",
            s.len()
        )));
    }
    Ok(())
}

/// Centered weighted average of `xs`; the window shrinks symmetrically near the edges.
fn windowed_average(xs: &[f64], half: usize, weight: impl Fn(usize) -> f64) -> Vec<f64> {
    let m = xs.len();
    (0..m)
        .map(|k| {
            let h = half.min(k).min(m - 1 - k);
            let mut num = 0.0;
            let mut den = 0.0;
            for j in (k - h)..=(k + h) {
                let w = weight(j.abs_diff(k));
                num += w * xs[j];
                den += w;
            }
            num / den
        })
        .collect()
}

fn reaccumulate(first: f64, incs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(incs.len() + 1);
    let mut acc = first;
    out.push(acc);
    for d in incs {
        acc += d;
        out.push(acc);
    }
    out
}

/// Smoothed daily increments with a centered moving mean.
pub fn rolling_mean_increments(s: &CumulativeSeries, window: usize) -> Result<Vec<f64>> {
    check_window(s, window)?;
    Ok(windowed_average(&s.increments(), window / 2, |_| 1.0))
}

/// Truncated discrete Gaussian weights for a window, sigma = window / 5, summing to 1.
pub fn gaussian_window_kernel(window: usize) -> Vec<f64> {
    let half = window / 2;
    let sigma = window as f64 / 5.0;
    let raw: Vec<f64> = (0..window)
        .map(|i| {
            let j = i as f64 - half as f64;
            (-j * j / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Smoothed daily increments with a truncated Gaussian window.
pub fn gaussian_window_increments(s: &CumulativeSeries, window: usize) -> Result<Vec<f64>> {
    check_window(s, window)?;
    let sigma = window as f64 / 5.0;
    Ok(windowed_average(&s.increments(), window / 2, |d| {
        let d = d as f64;
        (-d * d / (2.0 * sigma * sigma)).exp()
    }))
}

fn spline_from_increments(s: &CumulativeSeries, incs: &[f64]) -> Result<SmoothedSeries> {
    let values = reaccumulate(s.values()[0], incs);
    let grid = day_grid(s);
    let spline = CubicSpline::natural(&grid, &values)?;
    SmoothedSeries::from_curve(&spline, &grid)
}

pub fn rolling_mean_smooth(s: &CumulativeSeries, window: usize) -> Result<SmoothedSeries> {
    let incs = rolling_mean_increments(s, window)?;
    spline_from_increments(s, &incs)
}

pub fn gaussian_window_smooth(s: &CumulativeSeries, window: usize) -> Result<SmoothedSeries> {
    let incs = gaussian_window_increments(s, window)?;
    spline_from_increments(s, &incs)
}

/// Truncation of the convolution integral, in units of sigma.
pub const CONVOLUTION_HALF_WIDTH: f64 = 6.0;
/// Quadrature panels per sigma.
const CONVOLUTION_PANELS_PER_SIGMA: usize = 4;

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Gaussian `G` and its first three derivatives at `u`.
fn gaussian_derivatives(u: f64, sigma: f64) -> [f64; 4] {
    let s2 = sigma * sigma;
    let g = (-u * u / (2.0 * s2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    [
        g,
        -u / s2 * g,
        (u * u / (s2 * s2) - 1.0 / s2) * g,
        (-u.powi(3) / (s2 * s2 * s2) + 3.0 * u / (s2 * s2)) * g,
    ]
}

/// Composite 8-point Gauss-Legendre rule on `[a, b]` split at `cuts`, with
/// panels no wider than `max_panel`. Calls `f(u, weight)` for every node.
fn gauss_legendre(a: f64, b: f64, cuts: &[f64], max_panel: f64, mut f: impl FnMut(f64, f64)) {
    let mut edges = vec![a];
    edges.extend(cuts.iter().copied().filter(|c| *c > a && *c < b));
    edges.push(b);
    edges.sort_by(f64::total_cmp);
    for seg in edges.windows(2) {
        let len = seg[1] - seg[0];
        if len <= 0.0 {
            continue;
        }
        let panels = (len / max_panel).ceil().max(1.0) as usize;
        let h = len / panels as f64;
        for p in 0..panels {
            let mid = seg[0] + (p as f64 + 0.5) * h;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                f(mid + 0.5 * h * x, 0.5 * h * w);
            }
        }
    }
}

/// Corrections making the truncated quadrature exact on low-degree
/// polynomials: the n-th output is exact on `t^n`.
#[derive(Debug, Clone, Copy)]
struct TruncationCorrection {
    scale: [f64; 4],
    // zeroth moment of G'' and first moment of G''' vanish analytically
    alpha: f64,
    beta: f64,
}

impl TruncationCorrection {
    fn new(sigma: f64) -> Self {
        let l = CONVOLUTION_HALF_WIDTH * sigma;
        // m[n][p] = ∫ G^(n)(u) u^p du over the truncated range
        let mut m = [[0.0; 4]; 4];
        gauss_legendre(
            -l,
            l,
            &[],
            sigma / CONVOLUTION_PANELS_PER_SIGMA as f64,
            |u, w| {
                let g = gaussian_derivatives(u, sigma);
                for (n, row) in m.iter_mut().enumerate() {
                    for (p, v) in row.iter_mut().enumerate() {
                        *v += w * g[n] * u.powi(p as i32);
                    }
                }
            },
        );
        let alpha = m[2][0] / m[0][0];
        let beta = m[3][1] / m[1][1];
        Self {
            scale: [
                1.0 / m[0][0],
                -1.0 / m[1][1],
                2.0 / (m[2][2] - alpha * m[0][2]),
                -6.0 / (m[3][3] - beta * m[1][3]),
            ],
            alpha,
            beta,
        }
    }

    fn apply(&self, raw: [f64; 4]) -> [f64; 4] {
        [
            self.scale[0] * raw[0],
            self.scale[1] * raw[1],
            self.scale[2] * (raw[2] - self.alpha * raw[0]),
            self.scale[3] * (raw[3] - self.beta * raw[1]),
        ]
    }
}

/// A model convolved with the mean-zero Gaussian of standard deviation `sigma`.
/// Points where the model or one of its derivatives jumps (`kinks`) become
/// quadrature breakpoints, so the result stays smooth in `t`.
pub struct GaussianConvolution<'a> {
    model: &'a dyn Fn(f64) -> f64,
    sigma: f64,
    kinks: Vec<f64>,
    correction: TruncationCorrection,
}

impl<'a> GaussianConvolution<'a> {
    /// `model` must be evaluable within six sigma of every time queried.
    pub fn new(model: &'a dyn Fn(f64) -> f64, sigma: f64) -> Result<Self> {
        Self::with_kinks(model, sigma, Vec::new())
    }

    pub fn with_kinks(model: &'a dyn Fn(f64) -> f64, sigma: f64, kinks: Vec<f64>) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if kinks.iter().any(|k| !k.is_finite()) {
            return Err(Error::invalid("kinks must be finite"));
        }
        Ok(Self {
            model,
            sigma,
            kinks,
            correction: TruncationCorrection::new(sigma),
        })
    }
}

impl Curve for GaussianConvolution<'_> {
    fn derivatives(&self, t: f64) -> [f64; 4] {
        // (G * f)^(n)(t) = ∫ G^(n)(u) f(t − u) du
        let l = CONVOLUTION_HALF_WIDTH * self.sigma;
        let cuts: Vec<f64> = self.kinks.iter().map(|k| t - k).collect();
        let mut raw = [0.0; 4];
        gauss_legendre(
            -l,
            l,
            &cuts,
            self.sigma / CONVOLUTION_PANELS_PER_SIGMA as f64,
            |u, w| {
                let f = (self.model)(t - u);
                let g = gaussian_derivatives(u, self.sigma);
                for (r, gn) in raw.iter_mut().zip(g) {
                    *r += w * gn * f;
                }
            },
        );
        self.correction.apply(raw)
    }
}

/// `(G * model)(t)` and its first three derivatives on `grid`.
pub fn convolve_gaussian(
    model: &dyn Fn(f64) -> f64,
    domain: (f64, f64),
    sigma: f64,
    grid: &[f64],
) -> Result<SmoothedSeries> {
    convolve_gaussian_with_kinks(model, domain, sigma, &[], grid)
}

/// As [`convolve_gaussian`], splitting the quadrature at the model's kinks.
pub fn convolve_gaussian_with_kinks(
    model: &dyn Fn(f64) -> f64,
    domain: (f64, f64),
    sigma: f64,
    kinks: &[f64],
    grid: &[f64],
) -> Result<SmoothedSeries> {
    let conv = GaussianConvolution::with_kinks(model, sigma, kinks.to_vec())?;
    check_uniform_grid(grid)?;
    let pad = CONVOLUTION_HALF_WIDTH * sigma;
    let lo = grid[0] - pad;
    let hi = grid[grid.len() - 1] + pad;
    if lo < domain.0 || hi > domain.1 {
        return Err(Error::invalid(format!(
            "model domain [{}, {}] does not cover the padded interval [{lo}, {hi}]",
            domain.0, domain.1
        )));
    }
    SmoothedSeries::from_curve(&conv, grid)
}
