//! Delay-aligned coherent combining of the selected range bins.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{domain, invalid, Result};
use crate::preprocess::{extract_phase, RangeMap};
use crate::series::DisplacementSeries;

/// Default search range for inter-bin delays, s.
pub const DEFAULT_MAX_LAG: f64 = 1.0;

/// Reference bin and per-bin alignment relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    /// Bins in ascending order.
    pub bins: Vec<usize>,
    pub reference_bin: usize,
    /// Lag of each bin behind the reference, s. Positive means the bin
    /// follows the reference.
    pub delays: Vec<f64>,
    /// Lags in whole frames, the rounded form of `delays`.
    pub lags: Vec<i64>,
    /// Peak normalized correlation of each bin with the reference.
    pub correlations: Vec<f64>,
}

/// Whole frames that fit inside `max_lag`, so no reported lag exceeds it.
fn lag_frames(max_lag: f64, frame_rate: f64) -> usize {
    (max_lag * frame_rate + 1e-9).floor().max(0.0) as usize
}

fn lag_order(max: usize) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=max as i64).flat_map(|l| [l, -l]))
}

fn correlation_at(a: &[f64], b: &[f64], lag: i64) -> Option<f64> {
    let n = a.len();
    let l = lag.unsigned_abs() as usize;
    if lag >= 0 {
        dsp::pearson(&a[..n - l], &b[l..])
    } else {
        dsp::pearson(&a[l..], &b[..n - l])
    }
}

/// Peak Pearson correlation between `a` and lagged copies of `b` over lags in
/// `[-max_lag, max_lag]`, returned with its lag in frames. A positive lag
/// means `b` is a delayed copy of `a`. Ties resolve to the smallest |lag|,
/// then to the positive one.
pub fn xcorr_frames(a: &[f64], b: &[f64], max_lag: usize) -> Result<(f64, i64)> {
    if a.len() != b.len() {
        return Err(invalid(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if 2 * max_lag >= a.len() {
        return Err(domain(format!(
            "max lag of {max_lag} frames must be below half the series length {}",
            a.len()
        )));
    }
    if dsp::variance(a) == 0.0 || dsp::variance(b) == 0.0 {
        return Ok((0.0, 0));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for lag in lag_order(max_lag) {
        let c = correlation_at(a, b, lag).unwrap_or(0.0);
        if c > best.0 {
            best = (c, lag);
        }
    }
    Ok(best)
}

/// [`xcorr_frames`] with the lag range and result in seconds.
pub fn pairwise_xcorr(a: &[f64], b: &[f64], frame_rate: f64, max_lag: f64) -> Result<(f64, f64)> {
    let frames = lag_frames(max_lag, frame_rate);
    let (c, lag) = xcorr_frames(a, b, frames)?;
    Ok((c, lag as f64 / frame_rate))
}

/// Picks the bin whose summed correlation with all others is largest (lowest
/// bin on ties) and measures every bin's lag against it.
///
/// `series` pairs each bin index with its phase (or displacement) series.
pub fn choose_reference(
    series: &[(usize, &[f64])],
    frame_rate: f64,
    max_lag: f64,
) -> Result<ChannelEstimate> {
    if series.is_empty() {
        return Err(invalid("at least one series is required"));
    }
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by_key(|&i| series[i].0);
    let sorted: Vec<(usize, &[f64])> = order.iter().map(|&i| series[i]).collect();
    let n = sorted.len();
    let frames = lag_frames(max_lag, frame_rate);

    let mut corr = vec![vec![(1.0, 0i64); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (c, lag) = xcorr_frames(sorted[i].1, sorted[j].1, frames)?;
            corr[i][j] = (c, lag);
            corr[j][i] = (c, -lag);
        }
    }
    let mut reference = 0;
    let mut best_sum = f64::NEG_INFINITY;
    for (i, row) in corr.iter().enumerate() {
        let s: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v.0).sum();
        if s > best_sum {
            best_sum = s;
            reference = i;
        }
    }
    let lags: Vec<i64> = corr[reference].iter().map(|v| v.1).collect();
    Ok(ChannelEstimate {
        bins: sorted.iter().map(|s| s.0).collect(),
        reference_bin: sorted[reference].0,
        delays: lags.iter().map(|&l| l as f64 / frame_rate).collect(),
        lags,
        correlations: corr[reference].iter().map(|v| v.0).collect(),
    })
}

/// Extracts the phase of each bin and runs [`choose_reference`].
pub fn estimate_channels(map: &RangeMap, bins: &[usize], max_lag: f64) -> Result<ChannelEstimate> {
    let phases = bins
        .iter()
        .map(|&b| extract_phase(map, b).map(|p| (b, p.values)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(usize, &[f64])> = phases.iter().map(|(b, v)| (*b, v.as_slice())).collect();
    choose_reference(&refs, map.frame_rate, max_lag)
}

/// Aligns each bin's complex slow-time series to the reference by whole-frame
/// shifts and a constant carrier-phase rotation, averages them, and converts
/// the phase of the average to displacement.
///
/// Frames that are not covered by every shifted series are dropped, so the
/// output can be shorter than the map; `start_time` records the first kept
/// frame.
pub fn coherent_combine(map: &RangeMap, est: &ChannelEstimate, wavelength: f64) -> Result<DisplacementSeries> {
    if est.bins.is_empty() || est.bins.len() != est.lags.len() {
        return Err(invalid("channel estimate has no bins or mismatched lags"));
    }
    if let Some(&b) = est.bins.iter().find(|&&b| b >= map.n_bins) {
        return Err(invalid(format!("bin {b} out of range (map has {} bins)", map.n_bins)));
    }
    let m = map.n_frames as i64;
    let start = est.lags.iter().map(|&l| -l).chain([0]).max().unwrap_or(0);
    let end = est.lags.iter().map(|&l| m - l).chain([m]).min().unwrap_or(m);
    if end - start < 2 {
        return Err(invalid("delays leave fewer than 2 aligned frames"));
    }
    let (start, end) = (start as usize, end as usize);

    let aligned: Vec<Vec<Complex64>> = est
        .bins
        .iter()
        .zip(&est.lags)
        .map(|(&b, &l)| {
            let s = map.bin_series(b);
            let from = (start as i64 + l) as usize;
            s[from..from + (end - start)].to_vec()
        })
        .collect();
    let ref_idx = est
        .bins
        .iter()
        .position(|&b| b == est.reference_bin)
        .ok_or_else(|| invalid("reference bin is not among the estimate's bins"))?;
    let reference = &aligned[ref_idx];

    let mut sum = vec![Complex64::new(0.0, 0.0); end - start];
    for series in &aligned {
        let cross: Complex64 = series.iter().zip(reference).map(|(y, r)| y * r.conj()).sum();
        let rot = Complex64::cis(-cross.arg());
        for (acc, y) in sum.iter_mut().zip(series) {
            *acc += y * rot;
        }
    }
    let count = aligned.len() as f64;
    let wrapped: Vec<f64> = sum.iter().map(|c| (c / count).arg()).collect();
    let phase = dsp::remove_mean(&dsp::unwrap(&wrapped));
    let scale = wavelength / (4.0 * std::f64::consts::PI);
    let mut out = DisplacementSeries::new(phase.iter().map(|p| p * scale).collect(), map.frame_rate);
    out.start_time = start as f64 / map.frame_rate;
    Ok(out)
}
