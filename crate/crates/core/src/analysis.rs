// SPDX-License-Identifier: Apache-2.0

//! Baseline removal, Fourier spectra, peak picking and modulation depth.
//!
//! Traces are sampled on the total free-evolution time axis (2τ for a Hahn
//! echo). Spectra are taken against the inter-pulse delay τ itself, which is
//! the variable the echo modulation oscillates in, so peaks fall at the
//! nuclear transition frequencies ω₀, ω₊ and ω₀ ± ω₊.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequences::EseemTrace;

/// Fraction of leading samples left out of the baseline fit.
pub const TRANSIENT_GUARD: f64 = 0.02;
pub const MAX_FIT_ITERATIONS: usize = 200;
pub const FIT_TOLERANCE: f64 = 1e-8;
const STRETCH_RANGE: (f64, f64) = (0.5, 3.0);

/// Signal sampled on a free-evolution time axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub time_us: Vec<f64>,
    pub values: Vec<f64>,
    /// Free-evolution time per unit τ (2 for Hahn, 2n for CPMG-n); 0 when the
    /// axis is not tied to τ, in which case spectra use `time_us` directly.
    pub free_time_per_tau: f64,
}

impl Record {
    pub fn new(time_us: Vec<f64>, values: Vec<f64>, free_time_per_tau: f64) -> Self {
        Self { time_us, values, free_time_per_tau }
    }

    /// Axis the spectrum is taken against, µs.
    pub fn spectral_axis(&self) -> Vec<f64> {
        if self.free_time_per_tau > 0.0 {
            self.time_us.iter().map(|t| t / self.free_time_per_tau).collect()
        } else {
            self.time_us.clone()
        }
    }

    fn guard(&self) -> usize {
        (TRANSIENT_GUARD * self.values.len() as f64).ceil() as usize
    }
}

impl From<&EseemTrace> for Record {
    fn from(t: &EseemTrace) -> Self {
        Self::new(t.time_us.clone(), t.signal.clone(), t.free_time_per_tau)
    }
}

/// A·exp(−(t/T)^p) + C.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    pub amplitude: f64,
    pub decay_time: f64,
    pub stretch: f64,
    pub offset: f64,
    pub rms: f64,
    pub iterations: usize,
}

impl BaselineFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * self.envelope(t) + self.offset
    }

    /// Decaying part without the offset, A·exp(−(t/T)^p).
    pub fn echo(&self, t: f64) -> f64 {
        self.amplitude * self.envelope(t)
    }

    fn envelope(&self, t: f64) -> f64 {
        (-(t.max(0.0) / self.decay_time).powf(self.stretch)).exp()
    }

    fn from_params(v: &Vector4<f64>) -> Self {
        Self {
            amplitude: v[0],
            decay_time: v[1],
            stretch: v[2],
            offset: v[3],
            rms: f64::NAN,
            iterations: 0,
        }
    }
}

fn model_and_jacobian(theta: &Vector4<f64>, t: f64) -> (f64, Vector4<f64>) {
    let (a, tt, p, _c) = (theta[0], theta[1], theta[2], theta[3]);
    let x = t.max(0.0) / tt;
    let (u, lnx) = if x > 0.0 { (x.powf(p), x.ln()) } else { (0.0, 0.0) };
    let e = (-u).exp();
    let f = a * e + theta[3];
    let j = Vector4::new(e, a * e * u * p / tt, -a * e * u * lnx, 1.0);
    (f, j)
}

fn cost(theta: &Vector4<f64>, t: &[f64], y: &[f64]) -> f64 {
    t.iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let r = yi - model_and_jacobian(theta, ti).0;
            r * r
        })
        .sum()
}

/// Least-squares fit of a stretched exponential plus offset.
///
/// Starts from a log-linear fit with p = 1 and refines all four parameters
/// with damped Gauss–Newton (Levenberg–Marquardt) steps. The leading 2% of
/// samples are skipped.
pub fn fit_baseline(record: &Record) -> Result<BaselineFit> {
    let n = record.values.len();
    if n < 10 || record.time_us.len() != n {
        return Err(Error::Degenerate(format!("need at least 10 samples, got {n}")));
    }
    let skip = record.guard();
    let t = &record.time_us[skip..];
    let y = &record.values[skip..];
    let (lo, hi) = y
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 1e-12 * hi.abs().max(lo.abs()).max(1e-300)) {
        return Err(Error::Degenerate("trace is constant".into()));
    }

    let mut theta = initial_guess(t, y, lo, hi);
    let mut current = cost(&theta, t, y);
    let mut lambda = 1e-3;
    let mut best = theta;
    for iter in 1..=MAX_FIT_ITERATIONS {
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&ti, &yi) in t.iter().zip(y) {
            let (f, j) = model_and_jacobian(&theta, ti);
            jtj += j * j.transpose();
            jtr += j * (yi - f);
        }
        loop {
            let mut damped = jtj;
            for k in 0..4 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break;
                    }
                    continue;
                }
            };
            let mut trial = theta + step;
            trial[2] = trial[2].clamp(STRETCH_RANGE.0, STRETCH_RANGE.1);
            let trial_cost = if trial[1] > 0.0 { cost(&trial, t, y) } else { f64::INFINITY };
            if trial_cost <= current {
                let rel = (0..4)
                    .map(|k| (trial[k] - theta[k]).abs() / theta[k].abs().max(1e-12))
                    .fold(0.0, f64::max);
                theta = trial;
                best = theta;
                current = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                if rel < FIT_TOLERANCE || current == 0.0 {
                    return Ok(finish(best, current, t.len(), iter));
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if lambda > 1e16 {
            // no descent direction left: stationary point
            return Ok(finish(best, current, t.len(), iter));
        }
    }
    Err(Error::FitNotConverged {
        iterations: MAX_FIT_ITERATIONS,
        best: Box::new(finish(best, current, t.len(), MAX_FIT_ITERATIONS)),
    })
}

fn finish(theta: Vector4<f64>, cost: f64, n: usize, iterations: usize) -> BaselineFit {
    BaselineFit {
        rms: (cost / n as f64).sqrt(),
        iterations,
        ..BaselineFit::from_params(&theta)
    }
}

fn initial_guess(t: &[f64], y: &[f64], lo: f64, hi: f64) -> Vector4<f64> {
    let range = hi - lo;
    let decaying_down = y[0] >= y[y.len() - 1];
    let (c0, sign) = if decaying_down {
        (lo - 0.05 * range, 1.0)
    } else {
        (hi + 0.05 * range, -1.0)
    };
    // ln|y − C| = ln|A| − t/T
    let n = t.len() as f64;
    let z: Vec<f64> = y.iter().map(|&v| (sign * (v - c0)).ln()).collect();
    let mt = t.iter().sum::<f64>() / n;
    let mz = z.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(&z).map(|(a, b)| (a - mt) * (b - mz)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    let slope = sxy / sxx;
    let span = t[t.len() - 1] - t[0];
    let decay = if slope < 0.0 { -1.0 / slope } else { span.max(1e-6) };
    let amp = sign * (mz - slope * mt).exp();
    Vector4::new(amp, decay, 1.0, c0)
}

/// Pointwise `signal − fit`.
pub fn subtract_baseline(record: &Record, fit: &BaselineFit) -> Record {
    let values = record
        .time_us
        .iter()
        .zip(&record.values)
        .map(|(&t, &v)| v - fit.eval(t))
        .collect();
    Record { values, ..record.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    None,
    Hann,
}

impl std::str::FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(Window::None),
            "hann" => Ok(Window::Hann),
            other => Err(format!("unknown window `{other}` (expected none|hann)")),
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Window::None => "none",
            Window::Hann => "hann",
        })
    }
}

/// One-sided magnitude spectrum, scaled so |X(f)| approximates the
/// continuous transform (DFT magnitude times the sample spacing).
#[derive(Clone, Debug, Serialize)]
pub struct Spectrum {
    pub freq_mhz: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub window: Window,
    pub zero_pad: usize,
    /// Transform length after padding.
    pub n_fft: usize,
    /// Bin spacing, MHz.
    pub df: f64,
}

impl Spectrum {
    /// Σ|X|²·Δf over the full two-sided spectrum.
    pub fn energy(&self) -> f64 {
        let m = self.n_fft;
        let last = self.amplitude.len() - 1;
        let s: f64 = self
            .amplitude
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let twice = k != 0 && !(m % 2 == 0 && k == last);
                a * a * if twice { 2.0 } else { 1.0 }
            })
            .sum();
        s * self.df
    }
}

fn uniform_step(axis: &[f64]) -> Result<f64> {
    if axis.len() < 2 {
        return Err(Error::NonUniformAxis);
    }
    let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(Error::NonUniformAxis);
    }
    let uniform = axis
        .windows(2)
        .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-6 * step);
    if uniform {
        Ok(step)
    } else {
        Err(Error::NonUniformAxis)
    }
}

/// Fourier magnitude of a (baseline-subtracted) record against τ.
pub fn spectrum(residual: &Record, window: Window, zero_pad: usize) -> Result<Spectrum> {
    let axis = residual.spectral_axis();
    let dt = uniform_step(&axis)?;
    let n = residual.values.len();
    let pad = zero_pad.max(1);
    let m = n * pad;
    let mut buf: Vec<Complex64> = residual
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let w = match window {
                Window::None => 1.0,
                Window::Hann => 0.5 * (1.0 - (2.0 * PI * k as f64 / (n - 1) as f64).cos()),
            };
            Complex64::new(v * w, 0.0)
        })
        .collect();
    buf.resize(m, Complex64::default());
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let df = 1.0 / (m as f64 * dt);
    let half = m / 2;
    Ok(Spectrum {
        freq_mhz: (0..=half).map(|k| k as f64 * df).collect(),
        amplitude: buf[..=half].iter().map(|z| z.norm() * dt).collect(),
        window,
        zero_pad: pad,
        n_fft: m,
        df,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub freq_mhz: f64,
    pub amplitude: f64,
    pub prominence: f64,
}

/// Local maxima whose topographic prominence is at least `min_prominence`
/// times the largest non-DC amplitude, refined by a parabola through the
/// three top bins. Sorted by amplitude, largest first.
pub fn find_peaks(spec: &Spectrum, min_prominence: f64) -> Result<Vec<Peak>> {
    let a = &spec.amplitude;
    if a.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let max = a.iter().skip(1).copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Ok(Vec::new());
    }
    let threshold = min_prominence * max;
    let mut peaks = Vec::new();
    for i in 1..a.len().saturating_sub(1) {
        if !(a[i] > a[i - 1] && a[i] >= a[i + 1]) {
            continue;
        }
        let mut left_min = a[i];
        for j in (0..i).rev() {
            if a[j] > a[i] {
                break;
            }
            left_min = left_min.min(a[j]);
        }
        let mut right_min = a[i];
        for &v in &a[i + 1..] {
            if v > a[i] {
                break;
            }
            right_min = right_min.min(v);
        }
        let prominence = a[i] - left_min.max(right_min);
        if prominence < threshold || prominence <= 0.0 {
            continue;
        }
        let (l, c, r) = (a[i - 1], a[i], a[i + 1]);
        let denom = l - 2.0 * c + r;
        let off = if denom.abs() > 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
        peaks.push(Peak {
            freq_mhz: spec.freq_mhz[i] + off * spec.df,
            amplitude: c - 0.25 * (l - r) * off,
            prominence,
        });
    }
    peaks.sort_by(|x, y| y.amplitude.total_cmp(&x.amplitude));
    Ok(peaks)
}

/// Prominence used when looking for the dominant modulation frequency.
pub const DEPTH_PEAK_PROMINENCE: f64 = 0.1;

/// Modulation depth of the echo envelope.
///
/// The residual is divided pointwise by the decaying echo part of the
/// baseline, A·exp(−(t/T)^p), and the depth is half the peak-to-peak of that
/// ratio over one period of the dominant modulation, starting right after
/// the transient guard. The constant offset is not part of the echo and is
/// left out of the normalization.
pub fn modulation_depth(record: &Record, fit: &BaselineFit) -> Result<f64> {
    let residual = subtract_baseline(record, fit);
    let start = record.guard().min(record.values.len() - 1);
    let t0 = record.time_us[start];
    let spec = spectrum(&residual, Window::Hann, 4)?;
    let period = find_peaks(&spec, DEPTH_PEAK_PROMINENCE)?
        .first()
        .map(|p| {
            let scale = if record.free_time_per_tau > 0.0 { record.free_time_per_tau } else { 1.0 };
            scale / p.freq_mhz
        })
        .unwrap_or(f64::INFINITY);
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for (&t, &v) in residual.time_us.iter().zip(&residual.values).skip(start) {
        if t > t0 + period {
            break;
        }
        let echo = fit.echo(t).abs();
        if !(echo > 1e-12) {
            return Err(Error::Degenerate("echo baseline vanishes".into()));
        }
        lo = lo.min(v / echo);
        hi = hi.max(v / echo);
    }
    Ok(0.5 * (hi - lo))
}

/// Peak-to-peak residual within a window of the time axis.
pub fn peak_to_peak(residual: &Record, t_from: f64, t_to: f64) -> f64 {
    let (lo, hi) = residual
        .time_us
        .iter()
        .zip(&residual.values)
        .filter(|(t, _)| **t >= t_from && **t <= t_to)
        .fold((f64::MAX, f64::MIN), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)));
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}
