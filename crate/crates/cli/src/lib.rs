//! Command implementations behind the `vimo` binary.
//!
//! Each command reads an optional JSON config, derives all randomness from
//! the master seed, and writes its files into one output directory. The
//! functions return the list of written files so tests can drive them
//! without spawning a process.

pub mod output;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vimo::eval::{run_ablation_with, summarize, AblationGrid, AblationSummary, GroupSummary, TrialReport};
use vimo::pipeline::{run_with, Method, PipelineConfig};
use vimo::sim::{
    make_rbm, read_cube, synthesize_if_cube_with, write_cube, RadarConfig, RbmKind, RbmSpec, ScatterPoint, SceneSpec,
};
use vimo::templates::{frame_times, HeartModelCoeffs, PulseShape, RespirationModelCoeffs, TemplateBank, TemplateParams};

use output::{config_hash, hash_prefix, num, opt, series_rows, OutDir};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "VIMO_THREADS";

/// Template coefficient overrides shared by all commands.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateCoeffs {
    pub respiration: Option<RespirationModelCoeffs>,
    pub heart: Option<HeartModelCoeffs>,
}

impl TemplateCoeffs {
    fn is_default(&self) -> bool {
        self.respiration.is_none() && self.heart.is_none()
    }

    /// The shared bank unless something is overridden.
    fn bank(&self) -> Result<BankRef> {
        if self.is_default() {
            return Ok(BankRef::Shared);
        }
        let bank = TemplateBank::new(self.respiration.unwrap_or_default(), self.heart.unwrap_or_default())
            .context("building templates from the configured coefficients")?;
        Ok(BankRef::Owned(Box::new(bank)))
    }
}

enum BankRef {
    Shared,
    Owned(Box<TemplateBank>),
}

impl BankRef {
    fn get(&self) -> &TemplateBank {
        match self {
            BankRef::Shared => TemplateBank::shared(),
            BankRef::Owned(b) => b,
        }
    }
}

/// Body movement requested by a simulate config; seeded from the master
/// seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmInput {
    pub kind: RbmKind,
    /// RMS displacement, m.
    pub amplitude: f64,
    #[serde(default)]
    pub band: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub radar: RadarConfig,
    /// Per-sample IF SNR for a unit reflection, dB. Overrides
    /// `radar.noise_std`; absent means use `radar.noise_std` as given.
    pub snr_db: Option<f64>,
    /// Chest distance when `scatterers` is not given, m.
    pub range_m: f64,
    pub truth: TemplateParams,
    pub rbm: Option<RbmInput>,
    /// Explicit scatterers instead of the default chest geometry.
    pub scatterers: Option<Vec<ScatterPoint>>,
    pub templates: TemplateCoeffs,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            radar: RadarConfig::default(),
            snr_db: None,
            range_m: 0.3,
            truth: TemplateParams::harmonic_overlap_scene(),
            rbm: None,
            scatterers: None,
            templates: TemplateCoeffs::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub pipeline: PipelineConfig,
    pub templates: TemplateCoeffs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub grid: AblationGrid,
    pub methods: Vec<Method>,
    pub templates: TemplateCoeffs,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            grid: AblationGrid::default(),
            methods: Method::ALL.to_vec(),
            templates: TemplateCoeffs::default(),
        }
    }
}

/// Reads a JSON config, or the defaults when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Parses `VIMO_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV} must be a positive integer, got '{v}'"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be a positive integer, got 0");
            }
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e).context(format!("reading {THREADS_ENV}")),
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("starting worker pool")?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

#[derive(Serialize)]
struct HashInput<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    config: &'a T,
}

/// What `simulate` produced.
#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub files: Vec<PathBuf>,
    pub config_sha256: String,
    pub occupied_bins: usize,
    pub snr_db: Option<f64>,
    pub truth_resp_bpm: f64,
    pub truth_heart_bpm: f64,
}

#[derive(Serialize)]
struct SceneRecord<'a> {
    seed: u64,
    radar: &'a RadarConfig,
    scene: &'a SceneSpec,
    occupied_bins: Vec<usize>,
    snr_db: Option<f64>,
}

pub fn simulate(cfg: &SimulateConfig, seed: u64, out: &Path) -> Result<SimulateReport> {
    let hash = config_hash(&HashInput {
        command: "simulate",
        seed,
        config: cfg,
    })?;
    let radar = match cfg.snr_db {
        Some(db) => cfg.radar.with_snr_db(db),
        None => cfg.radar,
    };
    radar.validate().context("radar config")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_seed: u64 = rng.gen();
    let rbm_seed: u64 = rng.gen();
    let scene = SceneSpec {
        scatterers: match &cfg.scatterers {
            Some(s) => s.clone(),
            None => SceneSpec::chest(cfg.range_m, cfg.truth, &radar).scatterers,
        },
        truth_params: cfg.truth,
        rbm: cfg.rbm.filter(|r| r.kind != RbmKind::None).map(|r| RbmSpec {
            kind: r.kind,
            amplitude: r.amplitude,
            band: r.band,
            seed: rbm_seed,
        }),
        noise_seed,
    };
    let bank = cfg.templates.bank()?;
    let bank = bank.get();
    let (cube, truth) = synthesize_if_cube_with(&scene, &radar, bank).context("synthesizing IF cube")?;

    let res = radar.range_resolution();
    let occupied: BTreeSet<usize> = scene
        .scatterers
        .iter()
        .map(|s| (s.base_range / res).round() as usize)
        .collect();
    let snr_db = (radar.noise_std > 0.0).then(|| -20.0 * radar.noise_std.log10());

    let times = frame_times(radar.frame_rate, radar.n_frames);
    let n = times.len();
    let (mut yr, mut yh, mut yc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    bank.render_into(&cfg.truth, &times, &mut yr, &mut yh, &mut yc);
    let rbm = match &scene.rbm {
        Some(spec) => make_rbm(spec, radar.frame_rate, radar.n_frames)?.values,
        None => vec![0.0; n],
    };

    let mut dir = OutDir::create(out, hash)?;
    let reserved = hash_prefix(dir.hash());
    dir.bytes("cube.vimo", |w| Ok(write_cube(&cube, w, reserved)?))?;
    dir.csv(
        "truth.csv",
        &["time_s", "chest_m", "resp_m", "heart_m", "rbm_m"],
        (0..n).map(|m| vec![num(times[m]), num(truth.values[m]), num(yr[m]), num(yh[m]), num(rbm[m])]),
    )?;
    dir.csv(
        "truth_rates.csv",
        &["resp_bpm", "heart_bpm", "T_res_s", "T_h_s"],
        [vec![
            num(cfg.truth.resp_rate_bpm()),
            num(cfg.truth.heart_rate_bpm()),
            num(cfg.truth.t_res),
            num(cfg.truth.t_h),
        ]],
    )?;
    dir.json(
        "scene.json",
        &SceneRecord {
            seed,
            radar: &radar,
            scene: &scene,
            occupied_bins: occupied.iter().copied().collect(),
            snr_db,
        },
    )?;
    let points = 501;
    dir.csv(
        "unit_pulses.csv",
        &["phase", "respiration", "heartbeat"],
        (0..points).map(|i| {
            let ph = i as f64 / (points - 1) as f64;
            vec![num(ph), num(bank.respiration.value(ph)), num(bank.heart.value(ph))]
        }),
    )?;
    Ok(SimulateReport {
        config_sha256: dir.hash().to_string(),
        files: dir.written,
        occupied_bins: occupied.len(),
        snr_db,
        truth_resp_bpm: cfg.truth.resp_rate_bpm(),
        truth_heart_bpm: cfg.truth.heart_rate_bpm(),
    })
}

/// What `extract` produced.
#[derive(Debug, Clone, Serialize)]
pub struct ExtractReport {
    pub files: Vec<PathBuf>,
    pub config_sha256: String,
    pub method: Method,
    pub bins: Vec<usize>,
    pub resp_rate_bpm: Option<f64>,
    pub heart_rate_bpm: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct ExtractHash<'a> {
    cube_sha256: String,
    method: Method,
    config: &'a ExtractConfig,
}

#[derive(Serialize)]
struct ResultRecord<'a> {
    cube: String,
    method: Method,
    bins: &'a [usize],
    resp_rate_bpm: Option<f64>,
    heart_rate_bpm: Option<f64>,
    warnings: &'a [String],
    fit: Option<FitRecord<'a>>,
    channels: &'a Option<vimo::combine::ChannelEstimate>,
    fft_resolution_bpm: Option<f64>,
}

#[derive(Serialize)]
struct FitRecord<'a> {
    params: &'a TemplateParams,
    sse: f64,
    converged: bool,
    iterations: usize,
}

#[derive(Serialize)]
struct SelectionRecord<'a> {
    method: Method,
    bins: &'a [usize],
    #[serde(flatten)]
    selection: &'a Option<vimo::binselect::BinSelection>,
}

pub fn extract(cube_path: &Path, cfg: &ExtractConfig, method: Method, out: &Path) -> Result<ExtractReport> {
    let bytes = fs::read(cube_path).with_context(|| format!("reading cube {}", cube_path.display()))?;
    let cube = read_cube(bytes.as_slice()).with_context(|| format!("decoding cube {}", cube_path.display()))?;
    let hash = config_hash(&HashInput {
        command: "extract",
        seed: 0,
        config: &ExtractHash {
            cube_sha256: hex::encode(Sha256::digest(&bytes)),
            method,
            config: cfg,
        },
    })?;
    let bank = cfg.templates.bank()?;
    let ex = run_with(&cube, method, &cfg.pipeline, bank.get()).context("running extraction")?;

    let mut dir = OutDir::create(out, hash)?;
    let d = &ex.displacement;
    dir.csv("displacement.csv", &["time_s", "displacement_m"], series_rows(d.start_time, d.frame_rate, &d.values))?;
    let r = &ex.resp_wave;
    dir.csv("resp_wave.csv", &["time_s", "resp_m"], series_rows(r.start_time, r.frame_rate, &r.values))?;
    let h = &ex.heart_wave;
    dir.csv("heart_wave.csv", &["time_s", "heart_m"], series_rows(h.start_time, h.frame_rate, &h.values))?;
    dir.json(
        "selection.json",
        &SelectionRecord {
            method,
            bins: &ex.bins,
            selection: &ex.selection,
        },
    )?;
    dir.json(
        "result.json",
        &ResultRecord {
            cube: cube_path.display().to_string(),
            method,
            bins: &ex.bins,
            resp_rate_bpm: ex.resp_rate_bpm,
            heart_rate_bpm: ex.heart_rate_bpm,
            warnings: &ex.warnings,
            fit: ex.fit.as_ref().map(|f| FitRecord {
                params: &f.params,
                sse: f.sse,
                converged: f.converged,
                iterations: f.iterations,
            }),
            channels: &ex.channels,
            fft_resolution_bpm: (!method.uses_templates()).then(|| 60.0 / cube.config.window_seconds()),
        },
    )?;
    Ok(ExtractReport {
        config_sha256: dir.hash().to_string(),
        files: dir.written,
        method,
        bins: ex.bins,
        resp_rate_bpm: ex.resp_rate_bpm,
        heart_rate_bpm: ex.heart_rate_bpm,
        warnings: ex.warnings,
    })
}

/// What `ablate` produced.
#[derive(Debug, Clone, Serialize)]
pub struct AblateReport {
    pub files: Vec<PathBuf>,
    pub config_sha256: String,
    pub trials: usize,
    pub failures: usize,
    #[serde(skip)]
    pub reports: Vec<TrialReport>,
    #[serde(skip)]
    pub summary: AblationSummary,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    master_seed: u64,
    methods: &'a [Method],
    fft_resolution_bpm: f64,
    summary: &'a AblationSummary,
}

const TRIAL_HEADER: [&str; 15] = [
    "range_m",
    "rbm",
    "trial",
    "seed",
    "method",
    "truth_resp_bpm",
    "truth_heart_bpm",
    "resp_bpm",
    "heart_bpm",
    "resp_error_pct",
    "heart_error_pct",
    "pcc_resp",
    "pcc_heart",
    "n_bins",
    "error",
];

fn trial_row(r: &TrialReport) -> Vec<String> {
    vec![
        num(r.range_m),
        r.rbm.name().into(),
        r.trial.to_string(),
        r.seed.to_string(),
        r.method.name().into(),
        num(r.truth_resp_bpm),
        num(r.truth_heart_bpm),
        opt(r.resp_bpm),
        opt(r.heart_bpm),
        opt(r.resp_error_pct),
        opt(r.heart_error_pct),
        opt(r.pcc_resp),
        opt(r.pcc_heart),
        r.n_bins.to_string(),
        r.error.clone().unwrap_or_default(),
    ]
}

const BOX_HEADER: [&str; 9] = ["range_m", "rbm", "method", "n", "min", "q1", "median", "q3", "max"];

fn box_rows<'a>(
    groups: &'a [GroupSummary],
    pick: impl Fn(&GroupSummary) -> Option<vimo::eval::Quantiles> + 'a,
) -> impl Iterator<Item = Vec<String>> + 'a {
    groups.iter().map(move |g| {
        let q = pick(g);
        let f = |sel: fn(&vimo::eval::Quantiles) -> f64| q.as_ref().map(|q| num(sel(q))).unwrap_or_default();
        vec![
            g.range_m.map(num).unwrap_or_else(|| "all".into()),
            g.rbm.map(|k| k.name().to_string()).unwrap_or_else(|| "all".into()),
            g.method.name().into(),
            g.stats.n.to_string(),
            f(|q| q.min),
            f(|q| q.q1),
            f(|q| q.median),
            f(|q| q.q3),
            f(|q| q.max),
        ]
    })
}

pub fn ablate(cfg: &AblateConfig, seed: u64, out: &Path) -> Result<AblateReport> {
    let hash = config_hash(&HashInput {
        command: "ablate",
        seed,
        config: cfg,
    })?;
    let g = &cfg.grid;
    g.radar.validate().context("grid radar config")?;
    if g.ranges.is_empty() || g.rbm.is_empty() || g.seeds_per_cell == 0 {
        bail!("grid needs at least one range, one movement kind and one seed per cell");
    }
    let bank = cfg.templates.bank()?;
    let reports = run_ablation_with(g, &cfg.methods, seed, bank.get());
    let summary = summarize(&reports);
    let failures = reports.iter().filter(|r| r.error.is_some()).count();

    let mut dir = OutDir::create(out, hash)?;
    dir.csv("trials.csv", &TRIAL_HEADER, reports.iter().map(trial_row))?;
    dir.json(
        "summary.json",
        &SummaryRecord {
            master_seed: seed,
            methods: &cfg.methods,
            fft_resolution_bpm: 60.0 / g.radar.window_seconds(),
            summary: &summary,
        },
    )?;
    for (name, groups) in [("cells", &summary.cells), ("by_rbm", &summary.by_rbm)] {
        dir.csv(
            &format!("plot_data/resp_error_{name}.csv"),
            &BOX_HEADER,
            box_rows(groups, |g| g.stats.resp_error_quantiles),
        )?;
        dir.csv(
            &format!("plot_data/heart_error_{name}.csv"),
            &BOX_HEADER,
            box_rows(groups, |g| g.stats.heart_error_quantiles),
        )?;
    }
    let pcc_rows = summary.cells.iter().map(|g| {
        vec![
            g.range_m.map(num).unwrap_or_default(),
            g.rbm.map(|k| k.name().to_string()).unwrap_or_default(),
            g.method.name().into(),
            opt(g.stats.pcc_resp_median),
            opt(g.stats.pcc_resp_mean),
        ]
    });
    dir.csv(
        "plot_data/pcc_resp_cells.csv",
        &["range_m", "rbm", "method", "median", "mean"],
        pcc_rows,
    )?;
    Ok(AblateReport {
        config_sha256: dir.hash().to_string(),
        files: dir.written,
        trials: reports.len(),
        failures,
        reports,
        summary,
    })
}
