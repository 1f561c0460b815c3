//! Small signal-processing toolbox shared by the pipeline stages.
//!
//! Everything here works on real `f64` slices sampled at a known rate: phase
//! unwrapping, one-sided power spectra, Butterworth biquad cascades with
//! zero-phase filtering, and normalized correlation estimates.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn remove_mean(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Unwraps a wrapped phase sequence: any step larger than π in magnitude is
/// brought back into (−π, π] by adding a multiple of 2π to the remainder.
pub fn unwrap(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    let mut prev = match phase.first() {
        Some(&p) => p,
        None => return out,
    };
    out.push(prev);
    for &p in &phase[1..] {
        let mut d = p - prev;
        while d > PI {
            d -= 2.0 * PI;
            offset -= 2.0 * PI;
        }
        while d < -PI {
            d += 2.0 * PI;
            offset += 2.0 * PI;
        }
        out.push(p + offset);
        prev = p;
    }
    out
}

/// Frequency in Hz of FFT bin `k` for an `n`-point transform at `fs`.
pub fn bin_frequency(k: usize, n: usize, fs: f64) -> f64 {
    k as f64 * fs / n as f64
}

/// One-sided power spectrum `|X_k|²` for `k = 0..=n/2` (no windowing, no
/// zero padding).
pub fn power_spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Index and frequency of the largest spectral line in `(0, fs/2]` within
/// `band`. Ties resolve to the lowest frequency.
pub fn spectral_peak(power: &[f64], n: usize, fs: f64, band: Band) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &p) in power.iter().enumerate().skip(1) {
        let f = bin_frequency(k, n, fs);
        if !band.contains(f) {
            continue;
        }
        if best.map_or(true, |(_, bp)| p > bp) {
            best = Some((k, p));
        }
    }
    best.filter(|&(_, p)| p > 0.0).map(|(k, _)| (k, bin_frequency(k, n, fs)))
}

/// Closed-interval band membership with a tolerance for bin frequencies that
/// land exactly on an edge.
pub fn in_band(f: f64, lo: f64, hi: f64) -> bool {
    f >= lo - EDGE_EPS && f <= hi + EDGE_EPS
}

const EDGE_EPS: f64 = 1e-9;

/// Frequency interval, Hz. The lower edge may be exclusive so that two
/// adjacent bands sharing an edge stay disjoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub open_lo: bool,
}

impl Band {
    /// `[lo, hi]`.
    pub fn closed(lo: f64, hi: f64) -> Self {
        Band { lo, hi, open_lo: false }
    }

    /// `(lo, hi]`.
    pub fn above(lo: f64, hi: f64) -> Self {
        Band { lo, hi, open_lo: true }
    }

    pub fn contains(&self, f: f64) -> bool {
        let lo_ok = if self.open_lo { f > self.lo + EDGE_EPS } else { f >= self.lo - EDGE_EPS };
        lo_ok && f <= self.hi + EDGE_EPS
    }
}

/// Second-order IIR section in direct form II transposed, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn lowpass(fc: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (sn, cs) = w0.sin_cos();
        let alpha = sn / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cs) / a0;
        Biquad {
            b: [b1 / 2.0, b1, b1 / 2.0],
            a: [-2.0 * cs / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(fc: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (sn, cs) = w0.sin_cos();
        let alpha = sn / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 + cs) / 2.0 / a0;
        Biquad {
            b: [b0, -2.0 * b0, b0],
            a: [-2.0 * cs / a0, (1.0 - alpha) / a0],
        }
    }

    fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * out + z2;
            z2 = self.b[2] * input - self.a[1] * out;
            *v = out;
        }
    }
}

/// Cascade of biquads realizing an even-order Butterworth response.
#[derive(Debug, Clone, PartialEq)]
pub struct IirFilter {
    sections: Vec<Biquad>,
}

fn butterworth_qs(order: usize) -> impl Iterator<Item = f64> {
    assert!(order >= 2 && order % 2 == 0, "butterworth order must be even");
    (1..=order / 2).map(move |k| 1.0 / (2.0 * ((2 * k - 1) as f64 * PI / (2 * order) as f64).cos()))
}

impl IirFilter {
    pub fn butter_lowpass(order: usize, fc: f64, fs: f64) -> Self {
        IirFilter {
            sections: butterworth_qs(order).map(|q| Biquad::lowpass(fc, fs, q)).collect(),
        }
    }

    pub fn butter_highpass(order: usize, fc: f64, fs: f64) -> Self {
        IirFilter {
            sections: butterworth_qs(order).map(|q| Biquad::highpass(fc, fs, q)).collect(),
        }
    }

    /// High-pass at `lo` cascaded with low-pass at `hi`, each of `order`.
    pub fn butter_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Self {
        let mut f = Self::butter_highpass(order, lo, fs);
        f.sections
            .extend(Self::butter_lowpass(order, hi, fs).sections);
        f
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Causal single pass.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y);
        }
        y
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding at
    /// both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = n - 1;
        let mut buf = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            buf.push(2.0 * x[0] - x[i]);
        }
        buf.extend_from_slice(x);
        for i in 1..=pad {
            buf.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.filter(&buf);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Biased autocorrelation normalized by lag-0 energy, for lags `0..=max_lag`,
/// computed on the mean-removed series. All zeros for a constant input.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let x = remove_mean(x);
    let n = x.len();
    let r0: f64 = x.iter().map(|v| v * v).sum();
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|lag| {
            if r0 == 0.0 {
                return 0.0;
            }
            x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / r0
        })
        .collect()
}

/// Pearson correlation; `None` when either input has zero variance or the
/// lengths disagree.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Refines a discrete peak location by fitting a parabola through the sample
/// and its two neighbours; returns the fractional offset in `[-0.5, 0.5]`.
pub fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom.abs() < f64::EPSILON * center.abs().max(1.0) {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unwrap_removes_artificial_jump() {
        let mut p: Vec<f64> = (0..50).map(|i| 0.05 * i as f64).collect();
        for v in p.iter_mut().skip(20) {
            *v += 2.0 * PI;
        }
        let u = unwrap(&p);
        for (i, v) in u.iter().enumerate() {
            assert!((v - 0.05 * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn unwrap_follows_linear_ramp_through_many_wraps() {
        let truth: Vec<f64> = (0..400).map(|i| 0.7 * i as f64).collect();
        let wrapped: Vec<f64> = truth.iter().map(|t| t.sin().atan2(t.cos())).collect();
        let u = unwrap(&wrapped);
        for (a, b) in u.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn spectrum_peak_of_bin_centered_tone() {
        let fs = 20.0;
        let n = 300;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 0.4 * i as f64 / fs).cos()).collect();
        let p = power_spectrum(&x);
        let (k, f) = spectral_peak(&p, n, fs, Band::closed(0.0, 10.0)).unwrap();
        assert_eq!(k, 6);
        assert!((f - 0.4).abs() < 1e-12);
    }

    #[test]
    fn butterworth_magnitude_is_half_power_at_cutoff() {
        let fs = 20.0;
        let lp = IirFilter::butter_lowpass(4, 2.0, fs);
        let w = 2.0 * PI * 2.0 / fs;
        let z = Complex64::from_polar(1.0, w);
        let mut h = Complex64::new(1.0, 0.0);
        for s in lp.sections() {
            let num = s.b[0] + s.b[1] / z + s.b[2] / (z * z);
            let den = 1.0 + s.a[0] / z + s.a[1] / (z * z);
            h *= num / den;
        }
        assert!((h.norm_sqr() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn filtfilt_passes_inband_tone_without_delay() {
        let fs = 20.0;
        let n = 600;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 0.3 * i as f64 / fs).sin()).collect();
        let y = IirFilter::butter_bandpass(4, 0.1, 0.8, fs).filtfilt(&x);
        let mid = &y[150..450];
        let xm = &x[150..450];
        let err = mid.iter().zip(xm).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.05, "max deviation {err}");
    }

    #[test]
    fn autocorrelation_of_periodic_signal_peaks_at_period() {
        let x: Vec<f64> = (0..300).map(|i| (2.0 * PI * i as f64 / 25.0).sin()).collect();
        let r = autocorrelation(&x, 60);
        assert!((r[0] - 1.0).abs() < 1e-12);
        let peak = (10..40).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
        assert_eq!(peak, 25);
    }

    #[test]
    fn pearson_edge_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [-2.0, -4.0, -6.0, -8.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &b).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&a, &[1.0; 4]).is_none());
        assert!(pearson(&a, &a[..3]).is_none());
    }
}
