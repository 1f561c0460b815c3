//! IF cube → range map → unwrapped slow-time phase.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{invalid, Result};
use crate::sim::IFDataCube;

/// Fast-time window applied before the range FFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    pub fn coefficients(self, k: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; k],
            Window::Hann => (0..k)
                .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / k as f64).cos()))
                .collect(),
        }
    }
}

/// Complex slow-time series per range bin, stored frame-major
/// (`bins[m * n_bins + n]`).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeMap {
    pub bins: Vec<Complex64>,
    pub n_frames: usize,
    pub n_bins: usize,
    /// Range spanned by one bin, m.
    pub bin_spacing: f64,
    pub frame_rate: f64,
}

impl RangeMap {
    pub fn new(
        bins: Vec<Complex64>,
        n_frames: usize,
        n_bins: usize,
        bin_spacing: f64,
        frame_rate: f64,
    ) -> Result<Self> {
        if bins.len() != n_frames * n_bins {
            return Err(invalid(format!(
                "range map has {} cells, expected {n_frames} × {n_bins}",
                bins.len()
            )));
        }
        Ok(RangeMap {
            bins,
            n_frames,
            n_bins,
            bin_spacing,
            frame_rate,
        })
    }

    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.bins[frame * self.n_bins + bin]
    }

    pub fn bin_series(&self, bin: usize) -> Vec<Complex64> {
        (0..self.n_frames).map(|m| self.at(m, bin)).collect()
    }

    pub fn range_of(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_spacing
    }

    /// Slow-time energy of one bin after removing its slow-time mean, i.e.
    /// the energy left once the static background is subtracted.
    pub fn motion_energy(&self, bin: usize) -> f64 {
        let s = self.bin_series(bin);
        let mean = s.iter().sum::<Complex64>() / s.len().max(1) as f64;
        s.iter().map(|v| (v - mean).norm_sqr()).sum()
    }

    pub fn motion_energies(&self) -> Vec<f64> {
        (0..self.n_bins).map(|n| self.motion_energy(n)).collect()
    }

    pub fn total_energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn scaled(&self, k: f64) -> RangeMap {
        RangeMap {
            bins: self.bins.iter().map(|c| c * k).collect(),
            ..self.clone()
        }
    }
}

/// Unwrapped, mean-removed phase of one range bin, radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pub values: Vec<f64>,
    pub bin_index: usize,
    pub frame_rate: f64,
}

impl PhaseSeries {
    /// Displacement in meters, `φ · λ / 4π`; pass
    /// [`RadarConfig::effective_wavelength`](crate::sim::RadarConfig::effective_wavelength) for radar data.
    pub fn to_displacement(&self, wavelength: f64) -> Vec<f64> {
        let s = wavelength / (4.0 * std::f64::consts::PI);
        self.values.iter().map(|p| p * s).collect()
    }
}

/// Subtracts the slow-time mean of every fast-time sample.
pub fn remove_clutter(cube: &IFDataCube) -> Result<IFDataCube> {
    let m = cube.n_frames();
    let k = cube.samples_per_chirp();
    if m < 2 {
        return Err(invalid("clutter removal needs at least 2 frames"));
    }
    let mut mean = vec![Complex64::new(0.0, 0.0); k];
    for f in 0..m {
        for (acc, v) in mean.iter_mut().zip(cube.frame(f)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let samples = cube
        .samples
        .chunks_exact(k)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, mu)| v - mu))
        .collect();
    Ok(IFDataCube {
        samples,
        config: cube.config,
    })
}

/// Unitary FFT along fast time per frame, so the map carries the same
/// energy as the windowed cube. Bin `n` maps to range `n · c / 2B`.
pub fn range_fft(cube: &IFDataCube, window: Window) -> RangeMap {
    let k = cube.samples_per_chirp();
    let m = cube.n_frames();
    let w = window.coefficients(k);
    let fft = FftPlanner::new().plan_fft_forward(k);
    let scale = 1.0 / (k as f64).sqrt();
    let mut bins = Vec::with_capacity(m * k);
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    for f in 0..m {
        for ((b, v), wk) in buf.iter_mut().zip(cube.frame(f)).zip(&w) {
            *b = v * *wk;
        }
        fft.process(&mut buf);
        bins.extend(buf.iter().map(|c| c * scale));
    }
    RangeMap {
        bins,
        n_frames: m,
        n_bins: k,
        bin_spacing: cube.config.range_resolution(),
        frame_rate: cube.config.frame_rate,
    }
}

/// `arg` of the slow-time series of `bin`, unwrapped with a π threshold and
/// then mean-removed.
pub fn extract_phase(map: &RangeMap, bin: usize) -> Result<PhaseSeries> {
    if bin >= map.n_bins {
        return Err(invalid(format!("bin {bin} out of range (map has {} bins)", map.n_bins)));
    }
    let wrapped: Vec<f64> = map.bin_series(bin).iter().map(|c| c.arg()).collect();
    let values = dsp::remove_mean(&dsp::unwrap(&wrapped));
    Ok(PhaseSeries {
        values,
        bin_index: bin,
        frame_rate: map.frame_rate,
    })
}
