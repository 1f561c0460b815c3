//! Metrics, the single-bin band-pass/FFT baseline, and the ablation harness.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::binselect::strongest_bin;
use crate::binselect::SelectionConfig;
use crate::dsp::{self, Band, IirFilter};
use crate::error::{domain, Result};
use crate::pipeline::{run_with, Method, PipelineConfig};
use crate::preprocess::{extract_phase, RangeMap};
use crate::series::DisplacementSeries;
use crate::sim::{synthesize_if_cube_with, RadarConfig, RbmKind, RbmSpec, SceneSpec};
use crate::templates::{frame_times, TemplateBank, TemplateParams};

/// `100 · |estimate − truth| / truth`.
pub fn rate_error(estimate: f64, truth: f64) -> Result<f64> {
    if !(truth > 0.0 && truth.is_finite()) {
        return Err(domain(format!("true rate must be > 0, got {truth}")));
    }
    if !estimate.is_finite() {
        return Err(domain(format!("estimated rate must be finite, got {estimate}")));
    }
    Ok(100.0 * (estimate - truth).abs() / truth)
}

/// Pearson correlation coefficient; `None` for mismatched lengths, fewer
/// than two samples, or a constant input.
pub fn pcc(a: &[f64], b: &[f64]) -> Option<f64> {
    dsp::pearson(a, b)
}

/// Output of the band-pass and spectral-peak rate estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FftEstimate {
    pub resp_bpm: Option<f64>,
    pub heart_bpm: Option<f64>,
    pub resp_wave: DisplacementSeries,
    pub heart_wave: DisplacementSeries,
}

/// Order of the Butterworth band-pass sections of the FFT estimator.
pub const BASELINE_FILTER_ORDER: usize = 4;

fn band_rate(x: &[f64], fs: f64, band: Band, n_fft: usize) -> (Option<f64>, Vec<f64>) {
    let hi = band.hi.min(0.49 * fs);
    if !(band.lo < hi) {
        return (None, vec![0.0; x.len()]);
    }
    let y = IirFilter::butter_bandpass(BASELINE_FILTER_ORDER, band.lo, hi, fs).filtfilt(x);
    let mut padded = y.clone();
    padded.resize(n_fft.max(y.len()), 0.0);
    let power = dsp::power_spectrum(&padded);
    let rate = dsp::spectral_peak(&power, padded.len(), fs, band).map(|(_, f)| 60.0 * f);
    (rate, y)
}

/// Zero-phase band-pass into each vital band, then the strongest spectral
/// line inside that band, without interpolation (resolution `1 / duration`).
pub fn fft_rates(x: &DisplacementSeries, cfg: &SelectionConfig) -> FftEstimate {
    fft_rates_padded(x, cfg, x.len())
}

/// As [`fft_rates`], zero-padding to `n_fft` samples first. A series
/// trimmed by combining keeps the frequency grid of the full window this
/// way, so a line on a grid frequency cannot drift across a band edge.
pub fn fft_rates_padded(x: &DisplacementSeries, cfg: &SelectionConfig, n_fft: usize) -> FftEstimate {
    let centered = dsp::remove_mean(&x.values);
    let (resp_bpm, resp) = band_rate(&centered, x.frame_rate, cfg.resp(), n_fft);
    let (heart_bpm, heart) = band_rate(&centered, x.frame_rate, cfg.heart(), n_fft);
    let wave = |values| DisplacementSeries {
        values,
        frame_rate: x.frame_rate,
        start_time: x.start_time,
    };
    FftEstimate {
        resp_bpm,
        heart_bpm,
        resp_wave: wave(resp),
        heart_wave: wave(heart),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineEstimate {
    pub bin: usize,
    pub displacement: DisplacementSeries,
    pub rates: FftEstimate,
}

/// Single-bin baseline: the bin with the largest vibration energy, its
/// displacement, and band-pass/FFT rates.
pub fn baseline_singlebin_fft(map: &RangeMap, wavelength: f64, cfg: &SelectionConfig) -> Result<BaselineEstimate> {
    let bin = strongest_bin(&map.motion_energies());
    let phase = extract_phase(map, bin)?;
    let displacement = DisplacementSeries::new(phase.to_displacement(wavelength), map.frame_rate);
    let rates = fft_rates(&displacement, cfg);
    Ok(BaselineEstimate {
        bin,
        displacement,
        rates,
    })
}

/// Ranges for drawing the true template of each trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSampler {
    pub a_h: (f64, f64),
    pub a_res: (f64, f64),
    pub t_h: (f64, f64),
    pub t_res: (f64, f64),
    pub c: (f64, f64),
}

impl Default for TruthSampler {
    fn default() -> Self {
        TruthSampler {
            a_h: (1.5e-4, 3e-4),
            a_res: (2e-3, 5e-3),
            t_h: (0.6, 1.0),
            t_res: (2.5, 6.0),
            c: (0.0, 100.0),
        }
    }
}

impl TruthSampler {
    /// Uniform draws within each range; time offsets uniform over one period.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> TemplateParams {
        let mut u = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let t_h = u(self.t_h);
        let t_res = u(self.t_res);
        TemplateParams {
            a_h: u(self.a_h),
            a_res: u(self.a_res),
            t_h,
            t_res,
            t_off_h: u((0.0, t_h)),
            t_off_r: u((0.0, t_res)),
            y_off_h: 0.0,
            y_off_r: 0.0,
            c: u(self.c),
        }
    }
}

/// Cross product of chest ranges, body-movement kinds and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub ranges: Vec<f64>,
    pub rbm: Vec<RbmKind>,
    /// RMS movement per kind, m. Shake stays far below sway because its
    /// 2 to 5 Hz content would otherwise move the chest by more than a
    /// quarter wavelength between frames.
    pub sway_amplitude: f64,
    pub shake_amplitude: f64,
    pub seeds_per_cell: usize,
    /// Per-sample IF SNR for a unit reflection, dB.
    pub snr_db: f64,
    pub radar: RadarConfig,
    pub truth: TruthSampler,
    /// Use this template for every trial instead of sampling one.
    pub fixed_truth: Option<TemplateParams>,
    pub pipeline: PipelineConfig,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            ranges: vec![0.3, 1.0, 2.0, 5.0],
            rbm: vec![RbmKind::None, RbmKind::Sway, RbmKind::Shake],
            sway_amplitude: 1e-3,
            shake_amplitude: 1e-4,
            seeds_per_cell: 25,
            snr_db: 20.0,
            radar: RadarConfig::default(),
            truth: TruthSampler::default(),
            fixed_truth: None,
            pipeline: PipelineConfig::default(),
        }
    }
}

/// One method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub range_m: f64,
    pub rbm: RbmKind,
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub truth_resp_bpm: f64,
    pub truth_heart_bpm: f64,
    pub resp_bpm: Option<f64>,
    pub heart_bpm: Option<f64>,
    pub resp_error_pct: Option<f64>,
    pub heart_error_pct: Option<f64>,
    pub pcc_resp: Option<f64>,
    /// Heartbeat waveform correlation; a synthetic-data diagnostic only.
    pub pcc_heart: Option<f64>,
    pub n_bins: usize,
    pub error: Option<String>,
}

impl TrialReport {
    /// Respiration error with a missing estimate scored as 100%.
    pub fn resp_score(&self) -> f64 {
        self.resp_error_pct.unwrap_or(100.0)
    }

    pub fn heart_score(&self) -> f64 {
        self.heart_error_pct.unwrap_or(100.0)
    }
}

/// Derives an independent seed for one grid cell trial.
pub fn trial_seed(master: u64, range_idx: usize, rbm_idx: usize, trial: usize) -> u64 {
    let mut z = master;
    for v in [range_idx as u64, rbm_idx as u64, trial as u64] {
        z = splitmix(z ^ splitmix(v.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene of one trial: the chest at `range`, truth and seeds derived from
/// `seed`.
pub fn trial_scene(grid: &AblationGrid, range: f64, rbm: RbmKind, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = grid.fixed_truth.unwrap_or_else(|| grid.truth.sample(&mut rng));
    let mut scene = SceneSpec::chest(range, truth, &grid.radar);
    scene.noise_seed = rng.gen();
    let amplitude = match rbm {
        RbmKind::None => 0.0,
        RbmKind::Sway => grid.sway_amplitude,
        RbmKind::Shake => grid.shake_amplitude,
    };
    if rbm != RbmKind::None {
        scene.rbm = Some(RbmSpec::new(rbm, amplitude, rng.gen()));
    }
    scene
}

fn score(
    method: Method,
    run: Result<crate::pipeline::Extraction>,
    truth: &TemplateParams,
    truth_waves: &(DisplacementSeries, DisplacementSeries),
    meta: (f64, RbmKind, usize, u64),
) -> TrialReport {
    let (range_m, rbm, trial, seed) = meta;
    let mut report = TrialReport {
        range_m,
        rbm,
        trial,
        seed,
        method,
        truth_resp_bpm: truth.resp_rate_bpm(),
        truth_heart_bpm: truth.heart_rate_bpm(),
        resp_bpm: None,
        heart_bpm: None,
        resp_error_pct: None,
        heart_error_pct: None,
        pcc_resp: None,
        pcc_heart: None,
        n_bins: 0,
        error: None,
    };
    match run {
        Ok(ex) => {
            report.resp_bpm = ex.resp_rate_bpm;
            report.heart_bpm = ex.heart_rate_bpm;
            report.resp_error_pct = ex.resp_rate_bpm.and_then(|r| rate_error(r, report.truth_resp_bpm).ok());
            report.heart_error_pct = ex.heart_rate_bpm.and_then(|r| rate_error(r, report.truth_heart_bpm).ok());
            report.pcc_resp = ex.resp_wave.overlap(&truth_waves.0).and_then(|(a, b)| pcc(a, b));
            report.pcc_heart = ex.heart_wave.overlap(&truth_waves.1).and_then(|(a, b)| pcc(a, b));
            report.n_bins = ex.bins.len();
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

/// Runs every method on every trial of the grid. All methods of a trial see
/// the same IF cube. Trials run in parallel on the current rayon pool; the
/// report order (range, movement, trial, method) does not depend on
/// scheduling.
pub fn run_ablation(grid: &AblationGrid, methods: &[Method], master_seed: u64) -> Vec<TrialReport> {
    run_ablation_with(grid, methods, master_seed, TemplateBank::shared())
}

/// As [`run_ablation`] with templates from `bank` for both synthesis and
/// fitting.
pub fn run_ablation_with(
    grid: &AblationGrid,
    methods: &[Method],
    master_seed: u64,
    bank: &TemplateBank,
) -> Vec<TrialReport> {
    if methods.is_empty() {
        return Vec::new();
    }
    let radar = grid.radar.with_snr_db(grid.snr_db);
    let mut jobs = Vec::new();
    for (ri, &range) in grid.ranges.iter().enumerate() {
        for (ki, &kind) in grid.rbm.iter().enumerate() {
            for trial in 0..grid.seeds_per_cell {
                jobs.push((range, kind, trial, trial_seed(master_seed, ri, ki, trial)));
            }
        }
    }
    jobs.par_iter()
        .map(|&(range, kind, trial, seed)| {
            let scene = trial_scene(grid, range, kind, seed);
            let meta = (range, kind, trial, seed);
            let times = frame_times(radar.frame_rate, radar.n_frames);
            let n = times.len();
            let (mut res, mut heart, mut chest) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            bank.render_into(&scene.truth_params, &times, &mut res, &mut heart, &mut chest);
            let waves = (
                DisplacementSeries::new(res, radar.frame_rate),
                DisplacementSeries::new(heart, radar.frame_rate),
            );
            match synthesize_if_cube_with(&scene, &radar, bank) {
                Ok((cube, _)) => methods
                    .iter()
                    .map(|&m| score(m, run_with(&cube, m, &grid.pipeline, bank), &scene.truth_params, &waves, meta))
                    .collect::<Vec<_>>(),
                Err(e) => methods
                    .iter()
                    .map(|&m| score(m, Err(crate::Error::Domain(e.to_string())), &scene.truth_params, &waves, meta))
                    .collect(),
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Five-number summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Quantiles> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Quantiles {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    Quantiles::of(values).map(|q| q.median)
}

/// Aggregates over one group of trial reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub failures: usize,
    pub resp_error_median: Option<f64>,
    pub resp_error_mean: Option<f64>,
    pub heart_error_median: Option<f64>,
    pub heart_error_mean: Option<f64>,
    pub pcc_resp_median: Option<f64>,
    pub pcc_resp_mean: Option<f64>,
    pub resp_error_quantiles: Option<Quantiles>,
    pub heart_error_quantiles: Option<Quantiles>,
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| dsp::mean(v))
}

impl CellSummary {
    /// Missing rate estimates count as 100% error.
    pub fn of<'a>(reports: impl IntoIterator<Item = &'a TrialReport>) -> CellSummary {
        let reports: Vec<&TrialReport> = reports.into_iter().collect();
        let resp: Vec<f64> = reports.iter().map(|r| r.resp_score()).collect();
        let heart: Vec<f64> = reports.iter().map(|r| r.heart_score()).collect();
        let pccs: Vec<f64> = reports.iter().filter_map(|r| r.pcc_resp).collect();
        CellSummary {
            n: reports.len(),
            failures: reports.iter().filter(|r| r.error.is_some()).count(),
            resp_error_median: median(&resp),
            resp_error_mean: mean_of(&resp),
            heart_error_median: median(&heart),
            heart_error_mean: mean_of(&heart),
            pcc_resp_median: median(&pccs),
            pcc_resp_mean: mean_of(&pccs),
            resp_error_quantiles: Quantiles::of(&resp),
            heart_error_quantiles: Quantiles::of(&heart),
        }
    }
}

/// Summary entry keyed by its grouping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rbm: Option<RbmKind>,
    pub method: Method,
    #[serde(flatten)]
    pub stats: CellSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummary {
    pub trials: usize,
    /// Per (range, movement, method).
    pub cells: Vec<GroupSummary>,
    /// Per (movement, method), pooled over ranges.
    pub by_rbm: Vec<GroupSummary>,
    /// Per method, pooled over everything.
    pub by_method: Vec<GroupSummary>,
}

fn range_key(r: f64) -> i64 {
    (r * 1e6).round() as i64
}

pub fn summarize(reports: &[TrialReport]) -> AblationSummary {
    let mut cells: BTreeMap<(i64, RbmKind, Method), Vec<&TrialReport>> = BTreeMap::new();
    let mut by_rbm: BTreeMap<(RbmKind, Method), Vec<&TrialReport>> = BTreeMap::new();
    let mut by_method: BTreeMap<Method, Vec<&TrialReport>> = BTreeMap::new();
    for r in reports {
        cells.entry((range_key(r.range_m), r.rbm, r.method)).or_default().push(r);
        by_rbm.entry((r.rbm, r.method)).or_default().push(r);
        by_method.entry(r.method).or_default().push(r);
    }
    AblationSummary {
        trials: reports.len(),
        cells: cells
            .into_iter()
            .map(|((range, rbm, method), v)| GroupSummary {
                range_m: Some(range as f64 / 1e6),
                rbm: Some(rbm),
                method,
                stats: CellSummary::of(v),
            })
            .collect(),
        by_rbm: by_rbm
            .into_iter()
            .map(|((rbm, method), v)| GroupSummary {
                range_m: None,
                rbm: Some(rbm),
                method,
                stats: CellSummary::of(v),
            })
            .collect(),
        by_method: by_method
            .into_iter()
            .map(|(method, v)| GroupSummary {
                range_m: None,
                rbm: None,
                method,
                stats: CellSummary::of(v),
            })
            .collect(),
    }
}
