use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::series::DisplacementSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RbmKind {
    None,
    Sway,
    Shake,
}

impl RbmKind {
    pub fn default_band(self) -> (f64, f64) {
        match self {
            RbmKind::None => (0.0, 0.0),
            RbmKind::Sway => (0.05, 0.3),
            RbmKind::Shake => (2.0, 5.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RbmKind::None => "none",
            RbmKind::Sway => "sway",
            RbmKind::Shake => "shake",
        }
    }
}

/// Micro random body movement: seeded band-limited Gaussian displacement
/// with a prescribed RMS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmSpec {
    pub kind: RbmKind,
    /// RMS displacement, m.
    pub amplitude: f64,
    /// Pass band in Hz; the kind's default when absent.
    #[serde(default)]
    pub band: Option<(f64, f64)>,
    #[serde(default)]
    pub seed: u64,
}

impl RbmSpec {
    pub fn new(kind: RbmKind, amplitude: f64, seed: u64) -> Self {
        RbmSpec {
            kind,
            amplitude,
            band: None,
            seed,
        }
    }

    pub fn band(&self) -> (f64, f64) {
        self.band.unwrap_or_else(|| self.kind.default_band())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(domain(format!("rbm amplitude must be >= 0, got {}", self.amplitude)));
        }
        if self.kind != RbmKind::None {
            let (lo, hi) = self.band();
            if !(lo >= 0.0 && lo < hi) {
                return Err(domain(format!("rbm band must satisfy 0 <= low < high, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Generates the movement by drawing independent complex Gaussian
/// coefficients on every DFT bin inside the band and inverting; the result
/// is rescaled to the requested RMS. Bins outside the band carry no energy.
pub fn make_rbm(spec: &RbmSpec, frame_rate: f64, n_frames: usize) -> Result<DisplacementSeries> {
    spec.validate()?;
    if spec.kind == RbmKind::None || spec.amplitude == 0.0 || n_frames < 2 {
        return Ok(DisplacementSeries::new(vec![0.0; n_frames], frame_rate));
    }
    let (lo, hi) = spec.band();
    if hi > frame_rate / 2.0 {
        return Err(domain(format!(
            "rbm band upper edge {hi} Hz above Nyquist {} Hz",
            frame_rate / 2.0
        )));
    }
    let n = n_frames;
    let df = frame_rate / n as f64;
    let mut bins: Vec<usize> = (1..=n / 2)
        .filter(|&k| {
            let f = k as f64 * df;
            f >= lo && f <= hi
        })
        .collect();
    if bins.is_empty() {
        let centre = 0.5 * (lo + hi);
        let k = ((centre / df).round() as usize).clamp(1, n / 2);
        bins.push(k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for &k in &bins {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let z = if 2 * k == n {
            Complex64::new(re, 0.0)
        } else {
            Complex64::new(re, im)
        };
        spectrum[k] = z;
        if k != n - k {
            spectrum[n - k] = z.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
    let mut values: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let rms = crate::dsp::rms(&values);
    if rms > 0.0 {
        let s = spec.amplitude / rms;
        values.iter_mut().for_each(|v| *v *= s);
    }
    Ok(DisplacementSeries::new(values, frame_rate))
}
