use serde::Serialize;

use crate::dsp::{self, IirFilter};
use crate::error::{invalid, Result};
use crate::series::DisplacementSeries;
use crate::templates::{ParamBounds, PulseShape, TemplateBank, TemplateParams};

/// Cutoff of the smoothing low-pass used before autocorrelation and
/// zero-crossing analysis, Hz. Sits above the fastest allowed respiration.
const RESP_SMOOTHING_HZ: f64 = 1.0;
const MIN_PEAK_CORRELATION: f64 = 0.2;
const RESP_LAG_RANGE_S: (f64, f64) = (1.0, 10.0);
const FALLBACK_BAND_HZ: (f64, f64) = (0.1, 0.8);

/// Two linear regressors fitted to white noise over a few hundred samples and
/// a 500-cell grid explain a few percent of it at most.
pub const WEAK_HEART_FRACTION: f64 = 0.05;

/// Respiration starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RespInit {
    pub t_res: f64,
    pub t_off_r: f64,
    pub a_res: f64,
    pub y_off_r: f64,
    /// The autocorrelation had no usable peak and the period came from the
    /// spectrum instead.
    pub low_periodicity: bool,
}

/// Heartbeat starting point from the coarse grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeartInit {
    pub t_h: f64,
    pub t_off_h: f64,
    pub a_h: f64,
    pub c: f64,
    pub sse: f64,
    /// The best cell explains less than [`WEAK_HEART_FRACTION`] of the
    /// residual left by the respiration part alone.
    pub weak: bool,
}

fn smoothed(x: &DisplacementSeries) -> Vec<f64> {
    let centered = dsp::remove_mean(&x.values);
    if x.frame_rate > 2.5 * RESP_SMOOTHING_HZ && centered.len() > 12 {
        IirFilter::butter_lowpass(4, RESP_SMOOTHING_HZ, x.frame_rate).filtfilt(&centered)
    } else {
        centered
    }
}

/// Upward zero crossings, linearly interpolated, in seconds from `t0`.
fn rising_crossings(y: &[f64], fs: f64, t0: f64) -> Vec<f64> {
    y.windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < 0.0 && w[1] >= 0.0)
        .map(|(m, w)| t0 + (m as f64 + w[0] / (w[0] - w[1])) / fs)
        .collect()
}

fn period_from_autocorrelation(y: &[f64], fs: f64) -> Option<f64> {
    let max_lag = ((RESP_LAG_RANGE_S.1 * fs).round() as usize).min(y.len().saturating_sub(2));
    let min_lag = ((RESP_LAG_RANGE_S.0 * fs).ceil() as usize).max(1);
    if max_lag < min_lag + 1 {
        return None;
    }
    let r = dsp::autocorrelation(y, max_lag);
    (min_lag..max_lag)
        .find(|&k| r[k] > MIN_PEAK_CORRELATION && r[k] >= r[k - 1] && r[k] > r[k + 1])
        .map(|k| (k as f64 + dsp::parabolic_offset(r[k - 1], r[k], r[k + 1])) / fs)
}

fn period_from_spectrum(y: &[f64], fs: f64) -> Option<f64> {
    let power = dsp::power_spectrum(y);
    dsp::spectral_peak(&power, y.len(), fs, dsp::Band::closed(FALLBACK_BAND_HZ.0, FALLBACK_BAND_HZ.1)).map(|(_, f)| 1.0 / f)
}

/// Least-squares `(gain, offset)` of `x ≈ gain · u + offset`.
pub(crate) fn affine_fit(u: &[f64], x: &[f64]) -> (f64, f64) {
    let (mu, mx) = (dsp::mean(u), dsp::mean(x));
    let mut suu = 0.0;
    let mut sux = 0.0;
    for (a, b) in u.iter().zip(x) {
        suu += (a - mu) * (a - mu);
        sux += (a - mu) * (b - mx);
    }
    let gain = if suu > 0.0 { sux / suu } else { 0.0 };
    (gain, mx - gain * mu)
}

/// Respiration period from the first autocorrelation peak in `[1, 10]` s,
/// offset from the rising zero crossings of the smoothed series against
/// those of the equally smoothed template, and amplitude and level by
/// least squares.
pub fn init_resp(x: &DisplacementSeries, bank: &TemplateBank, bounds: &ParamBounds) -> Result<RespInit> {
    if x.len() < 8 {
        return Err(invalid("respiration initialization needs at least 8 samples"));
    }
    let fs = x.frame_rate;
    let y = smoothed(x);
    let (t_res, low_periodicity) = match period_from_autocorrelation(&y, fs) {
        Some(t) => (t, false),
        None => (period_from_spectrum(&dsp::remove_mean(&x.values), fs).unwrap_or(4.0), true),
    };
    let t_res = t_res.clamp(bounds.lower[3], bounds.upper[3]);

    let times = x.times();
    let unit: Vec<f64> = times.iter().map(|t| bank.respiration.value(t / t_res)).collect();
    let tmpl = smoothed(&DisplacementSeries {
        values: unit,
        frame_rate: fs,
        start_time: x.start_time,
    });
    let t_off_r = match (
        rising_crossings(&tmpl, fs, x.start_time).first(),
        rising_crossings(&y, fs, x.start_time),
    ) {
        (Some(&tc), xs) if !xs.is_empty() => {
            let w = 2.0 * std::f64::consts::PI / t_res;
            let (s, c) = xs
                .iter()
                .fold((0.0, 0.0), |(s, c), tx| (s + (w * (tx - tc)).sin(), c + (w * (tx - tc)).cos()));
            (s.atan2(c) / w).rem_euclid(t_res)
        }
        _ => 0.0,
    };
    let t_off_r = t_off_r.clamp(bounds.lower[5], bounds.upper[5]);

    let unit: Vec<f64> = times.iter().map(|t| bank.respiration.value((t - t_off_r) / t_res)).collect();
    let (gain, offset) = affine_fit(&unit, &x.values);
    Ok(RespInit {
        t_res,
        t_off_r,
        a_res: gain.clamp(bounds.lower[1], bounds.upper[1]),
        y_off_r: offset.clamp(bounds.lower[7], bounds.upper[7]),
        low_periodicity,
    })
}

/// `(n_periods, n_offsets)` for a grid of about `points` cells, split 5:4.
pub fn grid_shape(points: usize) -> (usize, usize) {
    let n_t = ((points as f64 * 1.25).sqrt().round() as usize).max(1);
    (n_t, (points / n_t).max(1))
}

/// Evaluates one heartbeat hypothesis against the respiration fit. The
/// heartbeat gain and coupling enter the model linearly (as `A_h` and
/// `A_h · c`), so they are solved in closed form and clamped to the box.
pub(crate) struct HeartProbe<'a> {
    pub x: &'a [f64],
    pub times: &'a [f64],
    pub y_res: Vec<f64>,
    pub bank: &'a TemplateBank,
    pub bounds: &'a ParamBounds,
}

impl<'a> HeartProbe<'a> {
    pub fn new(x: &'a DisplacementSeries, times: &'a [f64], resp: &TemplateParams, bank: &'a TemplateBank, bounds: &'a ParamBounds) -> Self {
        let y_res = times
            .iter()
            .map(|t| resp.a_res * bank.respiration.value((t - resp.t_off_r) / resp.t_res) + resp.y_off_r)
            .collect();
        HeartProbe {
            x: &x.values,
            times,
            y_res,
            bank,
            bounds,
        }
    }

    /// SSE with no heartbeat term.
    pub fn baseline_sse(&self) -> f64 {
        self.x.iter().zip(&self.y_res).map(|(x, y)| (x - y).powi(2)).sum()
    }

    /// Returns `(sse, a_h, c)`.
    pub fn eval(&self, t_h: f64, t_off_h: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        let mut u = Vec::with_capacity(n);
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for m in 0..n {
            let uh = self.bank.heart.value((self.times[m] - t_off_h) / t_h);
            let v = uh * self.y_res[m];
            let e = self.x[m] - self.y_res[m];
            s11 += uh * uh;
            s12 += uh * v;
            s22 += v * v;
            b1 += uh * e;
            b2 += v * e;
            u.push(uh);
        }
        let det = s11 * s22 - s12 * s12;
        let (mut beta1, mut beta2) = if det > 1e-12 * s11 * s22 && det > 0.0 {
            ((b1 * s22 - b2 * s12) / det, (s11 * b2 - s12 * b1) / det)
        } else if s11 > 0.0 {
            (b1 / s11, 0.0)
        } else {
            (0.0, 0.0)
        };
        beta1 = beta1.clamp(self.bounds.lower[0], self.bounds.upper[0]);
        let c = if beta1 > 0.0 {
            (beta2 / beta1).clamp(self.bounds.lower[8], self.bounds.upper[8])
        } else {
            0.0
        };
        beta2 = beta1 * c;
        let sse = (0..n)
            .map(|m| {
                let r = self.x[m] - self.y_res[m] - beta1 * u[m] - beta2 * u[m] * self.y_res[m];
                r * r
            })
            .sum();
        (sse, beta1, c)
    }
}

/// Exhaustive grid over `T_h` within its bounds and `t_off_h ∈ [0, T_h)` with
/// the respiration part held at `resp`. Ties resolve to the smallest `T_h`,
/// then the smallest offset.
pub fn init_heart(
    x: &DisplacementSeries,
    resp: &TemplateParams,
    coarse_points: usize,
    bank: &TemplateBank,
    bounds: &ParamBounds,
) -> HeartInit {
    let times = x.times();
    let probe = HeartProbe::new(x, &times, resp, bank, bounds);
    let cells = heart_grid(&probe, coarse_points, bounds);
    best_cell(&cells)
}

pub(crate) fn heart_grid(probe: &HeartProbe<'_>, coarse_points: usize, bounds: &ParamBounds) -> Vec<HeartInit> {
    let (n_t, n_off) = grid_shape(coarse_points);
    let (lo, hi) = (bounds.lower[2], bounds.upper[2]);
    let mut cells = Vec::with_capacity(n_t * n_off);
    for i in 0..n_t {
        let t_h = if n_t == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n_t - 1) as f64 };
        for j in 0..n_off {
            let t_off_h = t_h * j as f64 / n_off as f64;
            let (sse, a_h, c) = probe.eval(t_h, t_off_h);
            cells.push(HeartInit {
                t_h,
                t_off_h,
                a_h,
                c,
                sse,
                weak: false,
            });
        }
    }
    let min = cells.iter().fold(f64::INFINITY, |lo, c| lo.min(c.sse));
    let base = probe.baseline_sse();
    let weak = base - min <= WEAK_HEART_FRACTION * base;
    cells.iter_mut().for_each(|c| c.weak = weak);
    cells
}

fn best_cell(cells: &[HeartInit]) -> HeartInit {
    let mut best = cells[0];
    for c in &cells[1..] {
        if c.sse < best.sse {
            best = *c;
        }
    }
    best
}
