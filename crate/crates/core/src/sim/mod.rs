//! Forward model: chest motion, micro body movement, and the raw IF data
//! cube of a multi-scattering-point chest.
//!
//! Each scatter point `i` sits at `R_i(t) = R0_i + g_i · x(t − d_i) + rbm(t)`
//! and contributes
//!
//! ```text
//! α_i · exp(j · (4π R_i(t_m) / λ_max + 4π S R_i(t_m) t_k / c))
//! ```
//!
//! to fast-time sample `k` of frame `m`. The quadratic residual phase term is
//! omitted and reflection amplitudes are constant.

mod cube_io;
mod geometry;
mod rbm;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use cube_io::{read_cube, write_cube, CUBE_HEADER_LEN, CUBE_MAGIC, CUBE_VERSION};
pub use geometry::ChestGeometry;
pub use rbm::{make_rbm, RbmKind, RbmSpec};

use crate::error::{domain, invalid, Result};
use crate::series::DisplacementSeries;
use crate::templates::{frame_times, ParamBounds, TemplateBank, TemplateParams};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FMCW chirp and frame parameters. Missing JSON fields take the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarConfig {
    /// Chirp start frequency, Hz.
    pub f_min: f64,
    /// Swept bandwidth, Hz.
    pub bandwidth: f64,
    /// Chirp duration `T_s`, s.
    pub chirp_duration: f64,
    /// Fast-time samples per chirp `K`.
    pub samples_per_chirp: usize,
    /// Slow-time sampling rate, Hz.
    pub frame_rate: f64,
    /// Number of frames `M`.
    pub n_frames: usize,
    /// Standard deviation of the complex noise per sample, relative to a
    /// unit reflection amplitude (`E|n|² = noise_std²`).
    pub noise_std: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig {
            f_min: 60e9,
            bandwidth: 4e9,
            chirp_duration: 60e-6,
            samples_per_chirp: 256,
            frame_rate: 20.0,
            n_frames: 300,
            noise_std: 0.0,
        }
    }
}

/// Shortest slow-time window the extraction pipeline is tuned for.
pub const PIPELINE_WINDOW_S: f64 = 15.0;

impl RadarConfig {
    pub fn slope(&self) -> f64 {
        self.bandwidth / self.chirp_duration
    }

    pub fn lambda_max(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_min
    }

    /// Wavelength that converts range-bin phase to displacement.
    ///
    /// The bin phase of a target at range `R` is `4πR/λ_max` plus the beat
    /// term averaged over the chirp samples, `4πS·R·t̄/c` with `t̄` the mean
    /// sample instant. Both are linear in `R`, so the bin phase is exactly
    /// `4πR/λ_eff` with `λ_eff = c / (f_min + S·t̄)`. Using `λ_max` instead
    /// overstates motion by `S·t̄/f_min`, about 3% for the defaults.
    pub fn effective_wavelength(&self) -> f64 {
        let k = self.samples_per_chirp as f64;
        let t_mean = self.chirp_duration * (k - 1.0) / (2.0 * k);
        SPEED_OF_LIGHT / (self.f_min + self.slope() * t_mean)
    }

    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth)
    }

    /// Largest range mapped without wrap-around by the complex range FFT.
    pub fn max_range(&self) -> f64 {
        self.samples_per_chirp as f64 * self.range_resolution()
    }

    pub fn window_seconds(&self) -> f64 {
        self.n_frames as f64 / self.frame_rate
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("f_min", self.f_min),
            ("bandwidth", self.bandwidth),
            ("chirp_duration", self.chirp_duration),
            ("frame_rate", self.frame_rate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(domain(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.samples_per_chirp < 2 {
            return Err(domain("samples_per_chirp must be at least 2"));
        }
        if self.n_frames == 0 {
            return Err(domain("n_frames must be at least 1"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(domain("noise_std must be finite and >= 0"));
        }
        Ok(())
    }

    /// Noise level giving `snr_db` per fast-time sample for a unit
    /// reflection.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_std = 10f64.powf(-snr_db / 20.0);
        self
    }
}

/// One chest patch (or static reflector when `motion_gain = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterPoint {
    /// Static distance to the radar, m.
    pub base_range: f64,
    /// Complex reflection coefficient `[re, im]`.
    pub amplitude: Complex64,
    /// Fraction of the chest displacement this patch follows.
    pub motion_gain: f64,
    /// Lag of this patch's motion behind the chest waveform, s.
    pub motion_delay: f64,
}

pub const MAX_MOTION_DELAY: f64 = 0.25;

impl ScatterPoint {
    pub fn validate(&self, cfg: &RadarConfig) -> Result<()> {
        if !(self.base_range > 0.0) {
            return Err(domain(format!("base_range must be > 0, got {}", self.base_range)));
        }
        if self.base_range >= cfg.max_range() {
            return Err(domain(format!(
                "base_range {} m beyond unambiguous range {} m",
                self.base_range,
                cfg.max_range()
            )));
        }
        if !(0.0..=1.0).contains(&self.motion_gain) {
            return Err(domain(format!("motion_gain must lie in [0, 1], got {}", self.motion_gain)));
        }
        if !(self.motion_delay.abs() <= MAX_MOTION_DELAY) {
            return Err(domain(format!(
                "|motion_delay| must be <= {MAX_MOTION_DELAY} s, got {}",
                self.motion_delay
            )));
        }
        if !(self.amplitude.re.is_finite() && self.amplitude.im.is_finite()) {
            return Err(domain("amplitude must be finite"));
        }
        Ok(())
    }
}

/// Everything needed to synthesize one observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub scatterers: Vec<ScatterPoint>,
    pub truth_params: TemplateParams,
    #[serde(default)]
    pub rbm: Option<RbmSpec>,
    /// Seed of the receiver noise.
    #[serde(default)]
    pub noise_seed: u64,
}

impl SceneSpec {
    /// A chest centred at `range` built from [`ChestGeometry`] defaults.
    pub fn chest(range: f64, truth_params: TemplateParams, cfg: &RadarConfig) -> Self {
        SceneSpec {
            scatterers: ChestGeometry::at(range).scatterers(cfg),
            truth_params,
            rbm: None,
            noise_seed: 0,
        }
    }

    pub fn validate(&self, cfg: &RadarConfig) -> Result<()> {
        if self.scatterers.is_empty() {
            return Err(domain("scene needs at least one scatterer"));
        }
        for s in &self.scatterers {
            s.validate(cfg)?;
        }
        ParamBounds::default().check(&self.truth_params)?;
        if let Some(rbm) = &self.rbm {
            rbm.validate()?;
        }
        Ok(())
    }
}

/// Raw complex IF samples, frames (slow time) × samples per chirp (fast
/// time), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IFDataCube {
    pub samples: Vec<Complex64>,
    pub config: RadarConfig,
}

impl IFDataCube {
    pub fn new(samples: Vec<Complex64>, config: RadarConfig) -> Result<Self> {
        if samples.len() != config.n_frames * config.samples_per_chirp {
            return Err(invalid(format!(
                "cube has {} samples, expected {} × {}",
                samples.len(),
                config.n_frames,
                config.samples_per_chirp
            )));
        }
        if samples.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(invalid("cube contains non-finite samples"));
        }
        Ok(IFDataCube { samples, config })
    }

    pub fn zeros(config: RadarConfig) -> Self {
        IFDataCube {
            samples: vec![Complex64::new(0.0, 0.0); config.n_frames * config.samples_per_chirp],
            config,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.config.n_frames
    }

    pub fn samples_per_chirp(&self) -> usize {
        self.config.samples_per_chirp
    }

    pub fn frame(&self, m: usize) -> &[Complex64] {
        let k = self.samples_per_chirp();
        &self.samples[m * k..(m + 1) * k]
    }
}

/// Chest displacement `y_res + y_h + c·y_res·y_h` at the frame instants.
pub fn synthesize_chest_motion(
    params: &TemplateParams,
    frame_rate: f64,
    n_frames: usize,
) -> Result<DisplacementSeries> {
    ParamBounds::default().check(params)?;
    if !(frame_rate >= 4.0 / params.t_h) {
        return Err(domain(format!(
            "frame_rate {frame_rate} Hz below 4 / T_h = {} Hz",
            4.0 / params.t_h
        )));
    }
    let times = frame_times(frame_rate, n_frames);
    let values = TemplateBank::shared().chest(params, &times);
    Ok(DisplacementSeries::new(values, frame_rate))
}

/// Noiseless contribution of one scatterer, added into `out`.
fn accumulate_scatterer(
    out: &mut [Complex64],
    sp: &ScatterPoint,
    motion: &[f64],
    rbm: Option<&[f64]>,
    cfg: &RadarConfig,
) {
    let k_len = cfg.samples_per_chirp;
    let lambda = cfg.lambda_max();
    let sample_dt = cfg.chirp_duration / k_len as f64;
    let beat_scale = 4.0 * std::f64::consts::PI * cfg.slope() * sample_dt / SPEED_OF_LIGHT;
    for m in 0..cfg.n_frames {
        let r = sp.base_range + sp.motion_gain * motion[m] + rbm.map_or(0.0, |b| b[m]);
        let carrier = 4.0 * std::f64::consts::PI * r / lambda;
        let step = beat_scale * r;
        let row = &mut out[m * k_len..(m + 1) * k_len];
        for (k, v) in row.iter_mut().enumerate() {
            *v += sp.amplitude * Complex64::cis(carrier + step * k as f64);
        }
    }
}

/// Synthesizes the IF cube for `scene` and returns it together with the
/// noiseless chest displacement `x(t_m)` (without body movement).
pub fn synthesize_if_cube(
    scene: &SceneSpec,
    config: &RadarConfig,
) -> Result<(IFDataCube, DisplacementSeries)> {
    synthesize_if_cube_with(scene, config, TemplateBank::shared())
}

/// As [`synthesize_if_cube`] with templates from `bank`.
pub fn synthesize_if_cube_with(
    scene: &SceneSpec,
    config: &RadarConfig,
    bank: &TemplateBank,
) -> Result<(IFDataCube, DisplacementSeries)> {
    config.validate()?;
    scene.validate(config)?;
    let p = &scene.truth_params;
    if !(config.frame_rate >= 4.0 / p.t_h) {
        return Err(domain(format!(
            "frame_rate {} Hz below 4 / T_h = {} Hz",
            config.frame_rate,
            4.0 / p.t_h
        )));
    }
    let times = frame_times(config.frame_rate, config.n_frames);
    let truth = DisplacementSeries::new(bank.chest(p, &times), config.frame_rate);
    let rbm = match &scene.rbm {
        Some(spec) if spec.kind != RbmKind::None => {
            Some(make_rbm(spec, config.frame_rate, config.n_frames)?.values)
        }
        _ => None,
    };
    let cube = synthesize_motion_cube(
        &scene.scatterers,
        |t: &[f64]| bank.chest(p, t),
        rbm.as_deref(),
        config,
        scene.noise_seed,
    )?;
    Ok((cube, truth))
}

/// IF cube for scatterers following an arbitrary displacement.
///
/// `motion` maps sample instants (s) to displacement (m); each scatterer
/// evaluates it at `t_m − motion_delay` and scales it by its gain. `rbm`, if
/// given, is added to every scatterer's range frame by frame.
pub fn synthesize_motion_cube<F: Fn(&[f64]) -> Vec<f64>>(
    scatterers: &[ScatterPoint],
    motion: F,
    rbm: Option<&[f64]>,
    config: &RadarConfig,
    noise_seed: u64,
) -> Result<IFDataCube> {
    config.validate()?;
    if scatterers.is_empty() {
        return Err(domain("scene needs at least one scatterer"));
    }
    for s in scatterers {
        s.validate(config)?;
    }
    if let Some(r) = rbm {
        if r.len() != config.n_frames {
            return Err(domain(format!(
                "rbm has {} frames, config has {}",
                r.len(),
                config.n_frames
            )));
        }
    }
    let times = frame_times(config.frame_rate, config.n_frames);
    let mut cube = IFDataCube::zeros(*config);
    for sp in scatterers {
        let shifted: Vec<f64> = times.iter().map(|t| t - sp.motion_delay).collect();
        let x = motion(&shifted);
        if x.len() != config.n_frames {
            return Err(domain("motion returned the wrong number of samples"));
        }
        accumulate_scatterer(&mut cube.samples, sp, &x, rbm, config);
    }

    if config.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, config.noise_std / std::f64::consts::SQRT_2)
            .map_err(|e| domain(e.to_string()))?;
        for v in cube.samples.iter_mut() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(cube)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still() -> TemplateParams {
        TemplateParams {
            a_h: 0.0,
            a_res: 0.0,
            ..TemplateParams::harmonic_overlap()
        }
    }

    fn point(range: f64) -> ScatterPoint {
        ScatterPoint {
            base_range: range,
            amplitude: Complex64::new(1.0, 0.0),
            motion_gain: 1.0,
            motion_delay: 0.0,
        }
    }

    #[test]
    fn derived_quantities_of_default_config() {
        let c = RadarConfig::default();
        assert!((c.lambda_max() - 0.004996541).abs() < 1e-8);
        assert!((c.range_resolution() - 0.0374740573).abs() < 1e-9);
        assert!((c.slope() - 4e9 / 60e-6).abs() < 1.0);
    }

    #[test]
    fn static_target_gives_identical_frames() {
        let cfg = RadarConfig::default();
        let scene = SceneSpec {
            scatterers: vec![point(2.0)],
            truth_params: still(),
            rbm: None,
            noise_seed: 0,
        };
        let (cube, truth) = synthesize_if_cube(&scene, &cfg).unwrap();
        assert!(truth.values.iter().all(|&v| v == 0.0));
        let f0 = cube.frame(0).to_vec();
        for m in 1..cfg.n_frames {
            assert_eq!(cube.frame(m), &f0[..]);
        }
    }

    #[test]
    fn zero_amplitudes_give_zero_motion() {
        let mut p = still();
        p.c = 1234.0;
        let x = synthesize_chest_motion(&p, 20.0, 300).unwrap();
        assert!(x.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chest_motion_rejects_box_violation_and_slow_frame_rate() {
        let mut p = TemplateParams::harmonic_overlap();
        p.a_h = 2e-3;
        let err = synthesize_chest_motion(&p, 20.0, 300).unwrap_err().to_string();
        assert!(err.contains("A_h"));
        let p = TemplateParams::harmonic_overlap();
        assert!(synthesize_chest_motion(&p, 5.0, 300).is_err());
    }

    #[test]
    fn scene_validation() {
        let cfg = RadarConfig::default();
        let mut scene = SceneSpec::chest(1.0, TemplateParams::harmonic_overlap(), &cfg);
        assert!(scene.validate(&cfg).is_ok());
        scene.scatterers[0].motion_delay = 0.3;
        assert!(scene.validate(&cfg).is_err());
        scene.scatterers.clear();
        assert!(scene.validate(&cfg).is_err());
        let far = SceneSpec {
            scatterers: vec![point(20.0)],
            truth_params: still(),
            rbm: None,
            noise_seed: 0,
        };
        assert!(far.validate(&cfg).is_err());
    }

    #[test]
    fn zero_frames_rejected() {
        let cfg = RadarConfig {
            n_frames: 0,
            ..RadarConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
