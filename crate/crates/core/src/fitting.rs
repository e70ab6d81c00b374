//! Sinusoidal fringe fitting.
//!
//! The model `y = A + a cos(2 pi f x') + b sin(2 pi f x')`, with `x'` measured
//! from the middle of the scan, is refined by damped Gauss-Newton
//! (Levenberg-Marquardt) from a discrete-spectrum starting point. Visibility
//! and phase are recovered afterwards: `V = sqrt(a^2 + b^2) / A` and
//! `y = A (1 + V cos(2 pi x / period + phase))` in the original coordinate.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::FringeScan;
use crate::units::wrap_phase;

pub const MIN_POINTS: usize = 8;
pub const MIN_PERIODS: f64 = 1.5;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_PERIOD_TOLERANCE: f64 = 0.005;
const OVERSAMPLING: f64 = 8.0;
const AMBIGUOUS_POWER_RATIO: f64 = 0.8;
const DEGENERATE_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub offset: f64,
    pub visibility: f64,
    pub period: f64,
    /// In (-pi, pi], referred to x = 0.
    pub phase_rad: f64,
    pub rms_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the data carry no measurable modulation; the period is then
    /// only the spectral initializer's guess.
    pub degenerate: bool,
    /// `(max - min) / (max + min)` of the data.
    pub raw_visibility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// `(max - min) / (max + min)`; zero for all-zero data.
pub fn raw_visibility(y: &[f64]) -> f64 {
    let max = y.iter().cloned().fold(f64::MIN, f64::max);
    let min = y.iter().cloned().fold(f64::MAX, f64::min);
    if max + min > 0.0 {
        (max - min) / (max + min)
    } else {
        0.0
    }
}

/// Poisson variances for count data, floored at 1.
pub fn poisson_variances(counts: &[f64]) -> Vec<f64> {
    counts.iter().map(|&c| c.max(1.0)).collect()
}

pub fn fit_fringe(x: &[f64], y: &[f64], variances: Option<&[f64]>) -> Result<FitResult> {
    fit_fringe_with(x, y, variances, &FitOptions::default())
}

/// Fits a scan; noisy (count) scans are weighted by Poisson variances.
pub fn fit_scan(scan: &FringeScan) -> Result<FitResult> {
    let noisy = scan.metadata.options.noise.as_ref().is_some_and(|n| n.enabled);
    let var = noisy.then(|| poisson_variances(&scan.rates));
    fit_fringe(&scan.axis, &scan.rates, var.as_deref())
}

#[derive(Debug, Clone, Copy)]
struct Params {
    offset: f64,
    a: f64,
    b: f64,
    freq: f64,
}

struct Problem<'a> {
    x: Vec<f64>,
    y: &'a [f64],
    w: Vec<f64>,
}

impl Problem<'_> {
    fn cost(&self, p: &Params) -> f64 {
        self.x
            .iter()
            .zip(self.y)
            .zip(&self.w)
            .map(|((&x, &y), &w)| {
                let u = 2.0 * PI * p.freq * x;
                let r = y - (p.offset + p.a * u.cos() + p.b * u.sin());
                w * r * r
            })
            .sum()
    }

    /// Weighted least-squares `(A, a, b)` at fixed frequency.
    fn linear(&self, freq: f64) -> Params {
        let mut m = [[0.0; 3]; 3];
        let mut v = [0.0; 3];
        for ((&x, &y), &w) in self.x.iter().zip(self.y).zip(&self.w) {
            let u = 2.0 * PI * freq * x;
            let basis = [1.0, u.cos(), u.sin()];
            for i in 0..3 {
                v[i] += w * basis[i] * y;
                for j in 0..3 {
                    m[i][j] += w * basis[i] * basis[j];
                }
            }
        }
        let s = solve(m, v).unwrap_or([0.0; 3]);
        Params {
            offset: s[0],
            a: s[1],
            b: s[2],
            freq,
        }
    }

    fn refine(&self, mut p: Params, opts: &FitOptions) -> (Params, bool, usize) {
        let mut cost = self.cost(&p);
        let mut lambda = 1e-3;
        for it in 1..=opts.max_iterations {
            let mut jtj = [[0.0; 4]; 4];
            let mut jtr = [0.0; 4];
            for ((&x, &y), &w) in self.x.iter().zip(self.y).zip(&self.w) {
                let u = 2.0 * PI * p.freq * x;
                let (s, c) = u.sin_cos();
                let r = y - (p.offset + p.a * c + p.b * s);
                let j = [1.0, c, s, 2.0 * PI * x * (p.b * c - p.a * s)];
                for i in 0..4 {
                    jtr[i] += w * j[i] * r;
                    for k in 0..4 {
                        jtj[i][k] += w * j[i] * j[k];
                    }
                }
            }
            loop {
                let mut damped = jtj;
                for (i, row) in damped.iter_mut().enumerate() {
                    row[i] += lambda * jtj[i][i].max(1e-300);
                }
                let Some(d) = solve(damped, jtr) else {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        return (p, false, it);
                    }
                    continue;
                };
                let trial = Params {
                    offset: p.offset + d[0],
                    a: p.a + d[1],
                    b: p.b + d[2],
                    freq: p.freq + d[3],
                };
                let trial_cost = self.cost(&trial);
                if trial_cost <= cost {
                    let scale_ab = p.offset.abs().max((p.a * p.a + p.b * p.b).sqrt());
                    let rel = [
                        d[0].abs() / p.offset.abs().max(1e-300),
                        d[1].abs() / scale_ab.max(1e-300),
                        d[2].abs() / scale_ab.max(1e-300),
                        d[3].abs() / p.freq.abs().max(1e-300),
                    ];
                    p = trial;
                    cost = trial_cost;
                    lambda = (lambda * 0.1).max(1e-12);
                    if rel.iter().all(|&r| r < opts.tolerance) {
                        return (p, true, it);
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e16 {
                    // No downhill step left at working precision.
                    return (p, true, it);
                }
            }
        }
        (p, false, opts.max_iterations)
    }
}

/// Gaussian elimination with partial pivoting.
fn solve<const N: usize>(mut m: [[f64; N]; N], mut v: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if !(m[piv][col].abs() > 0.0) || !m[piv][col].is_finite() {
            return None;
        }
        m.swap(col, piv);
        v.swap(col, piv);
        for row in col + 1..N {
            let f = m[row][col] / m[col][col];
            for k in col..N {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut out = [0.0; N];
    for row in (0..N).rev() {
        let mut s = v[row];
        for k in row + 1..N {
            s -= m[row][k] * out[k];
        }
        out[row] = s / m[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Local maxima of the weighted periodogram of the mean-subtracted data,
/// strongest first, as (frequency, power).
fn spectral_peaks(x: &[f64], y: &[f64], w: &[f64]) -> Vec<(f64, f64)> {
    let wsum: f64 = w.iter().sum();
    let mean = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let n = x.len();
    let span = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
    let step = span / (n - 1) as f64;
    let df = 1.0 / (OVERSAMPLING * (span + step));
    let fmax = 0.5 / step;
    let bins = (fmax / df).floor() as usize;
    let power: Vec<f64> = (1..=bins)
        .map(|k| {
            let f = k as f64 * df;
            let (mut re, mut im) = (0.0, 0.0);
            for ((&x, &y), &wt) in x.iter().zip(y).zip(w) {
                let (s, c) = (2.0 * PI * f * x).sin_cos();
                re += wt * (y - mean) * c;
                im += wt * (y - mean) * s;
            }
            re * re + im * im
        })
        .collect();
    let mut peaks: Vec<(f64, f64)> = (0..power.len())
        .filter(|&i| {
            let left = if i == 0 { 0.0 } else { power[i - 1] };
            let right = power.get(i + 1).copied().unwrap_or(0.0);
            power[i] > 0.0 && power[i] >= left && power[i] >= right
        })
        .map(|i| ((i + 1) as f64 * df, power[i]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks
}

pub fn fit_fringe_with(
    x: &[f64],
    y: &[f64],
    variances: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if x.len() != y.len() {
        return Err(Error::InsufficientData(format!(
            "{} axis values but {} rates",
            x.len(),
            y.len()
        )));
    }
    if x.len() < MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points, at least {MIN_POINTS} required",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData("non-finite data".into()));
    }
    let w: Vec<f64> = match variances {
        None => vec![1.0; x.len()],
        Some(v) => {
            if v.len() != x.len() || v.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::invalid("variances must be positive, one per point"));
            }
            v.iter().map(|s| 1.0 / s).collect()
        }
    };
    let xmin = x.iter().cloned().fold(f64::MAX, f64::min);
    let xmax = x.iter().cloned().fold(f64::MIN, f64::max);
    let span = xmax - xmin;
    if !(span > 0.0) {
        return Err(Error::InsufficientData("scan axis has zero span".into()));
    }
    let mid = 0.5 * (xmin + xmax);
    let problem = Problem {
        x: x.iter().map(|v| v - mid).collect(),
        y,
        w,
    };
    let raw = raw_visibility(y);

    let peaks = spectral_peaks(&problem.x, y, &problem.w);
    let mut starts: Vec<f64> = peaks.iter().take(1).map(|p| p.0).collect();
    if let (Some(a), Some(b)) = (peaks.first(), peaks.get(1)) {
        if b.1 >= AMBIGUOUS_POWER_RATIO * a.1 {
            starts.push(b.0);
        }
    }

    let flat = |freq: f64| {
        let p = problem.linear(freq);
        FitResult {
            offset: p.offset,
            visibility: 0.0,
            period: 1.0 / freq,
            phase_rad: 0.0,
            rms_residual: rms(&problem, &p),
            converged: true,
            iterations: 0,
            degenerate: true,
            raw_visibility: raw,
        }
    };
    if starts.is_empty() {
        return Ok(flat(1.0 / span));
    }

    let mut best: Option<(f64, Params, bool, usize)> = None;
    for f0 in starts {
        let p0 = problem.linear(f0);
        let (p, conv, it) = problem.refine(p0, opts);
        let c = problem.cost(&p);
        if best.as_ref().is_none_or(|b| c < b.0) {
            best = Some((c, p, conv, it));
        }
    }
    let (_, mut p, converged, iterations) = best.expect("at least one start");
    if p.freq < 0.0 {
        p.freq = -p.freq;
        p.b = -p.b;
    }
    let amp = (p.a * p.a + p.b * p.b).sqrt();
    if amp <= DEGENERATE_RATIO * p.offset.abs() {
        let mut r = flat(p.freq);
        r.offset = p.offset;
        r.visibility = if p.offset != 0.0 { amp / p.offset.abs() } else { 0.0 };
        return Ok(r);
    }
    if span * p.freq < MIN_PERIODS {
        return Err(Error::InsufficientData(format!(
            "scan spans {:.3} periods, at least {MIN_PERIODS} required",
            span * p.freq
        )));
    }
    // a cos u + b sin u = amp cos(u + phi), phi = atan2(-b, a); refer to x = 0.
    let phase = wrap_phase((-p.b).atan2(p.a) - 2.0 * PI * p.freq * mid);
    Ok(FitResult {
        offset: p.offset,
        visibility: if p.offset != 0.0 { amp / p.offset } else { f64::INFINITY }.clamp(0.0, 1.0),
        period: 1.0 / p.freq,
        phase_rad: phase,
        rms_residual: rms(&problem, &p),
        converged,
        iterations,
        degenerate: false,
        raw_visibility: raw,
    })
}

fn rms(problem: &Problem<'_>, p: &Params) -> f64 {
    let s: f64 = problem
        .x
        .iter()
        .zip(problem.y)
        .map(|(&x, &y)| {
            let u = 2.0 * PI * p.freq * x;
            let r = y - (p.offset + p.a * u.cos() + p.b * u.sin());
            r * r
        })
        .sum();
    (s / problem.x.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodCheck {
    pub fitted: f64,
    pub expected: f64,
    /// `(fitted - expected) / expected`
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodReport {
    pub tolerance: f64,
    pub checks: Vec<PeriodCheck>,
    pub all_pass: bool,
}

pub fn compare_periods(fits: &[FitResult], expected: &[f64], tolerance: f64) -> Result<PeriodReport> {
    if fits.len() != expected.len() {
        return Err(Error::invalid(format!(
            "{} fits but {} expected periods",
            fits.len(),
            expected.len()
        )));
    }
    let checks: Vec<PeriodCheck> = fits
        .iter()
        .zip(expected)
        .map(|(f, &e)| {
            let deviation = (f.period - e) / e;
            PeriodCheck {
                fitted: f.period,
                expected: e,
                deviation,
                pass: deviation.abs() <= tolerance,
            }
        })
        .collect();
    Ok(PeriodReport {
        tolerance,
        all_pass: checks.iter().all(|c| c.pass),
        checks,
    })
}
