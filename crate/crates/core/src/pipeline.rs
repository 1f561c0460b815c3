//! End-to-end extraction: range map, bin choice, displacement, rates.
//!
//! ```text
//! cube ─ range FFT ─┬─ MSP selection ─ coherent combining ─┐
//!                   └─ strongest single bin ───────────────┴─ template fit | band-pass + FFT
//! ```

use serde::{Deserialize, Serialize};

use crate::binselect::{select_bins, BinSelection, SelectionConfig};
use crate::combine::{coherent_combine, estimate_channels, ChannelEstimate, DEFAULT_MAX_LAG};
use crate::error::{invalid, Result};
use crate::eval::{fft_rates_padded, strongest_bin};
use crate::fit::{fit_series_with, FitConfig, FitResult};
use crate::preprocess::{extract_phase, range_fft, RangeMap, Window};
use crate::series::DisplacementSeries;
use crate::sim::IFDataCube;
use crate::templates::TemplateBank;

/// The four combinations of bin handling and rate estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// MSP bins, coherent combining, template fit.
    Pivimo,
    /// MSP bins, coherent combining, band-pass and FFT.
    MspFft,
    /// Strongest bin, template fit.
    SinglebinTm,
    /// Strongest bin, band-pass and FFT.
    SinglebinFft,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pivimo, Method::MspFft, Method::SinglebinTm, Method::SinglebinFft];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pivimo => "pivimo",
            Method::MspFft => "msp_fft",
            Method::SinglebinTm => "singlebin_tm",
            Method::SinglebinFft => "singlebin_fft",
        }
    }

    pub fn uses_msp(self) -> bool {
        matches!(self, Method::Pivimo | Method::MspFft)
    }

    pub fn uses_templates(self) -> bool {
        matches!(self, Method::Pivimo | Method::SinglebinTm)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    /// Accepts the snake-case names and the short command-line aliases.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pivimo" => Ok(Method::Pivimo),
            "msp_fft" | "msp-fft" => Ok(Method::MspFft),
            "singlebin_tm" | "bin-tm" => Ok(Method::SinglebinTm),
            "singlebin_fft" | "bin-fft" => Ok(Method::SinglebinFft),
            other => Err(invalid(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window: Window,
    pub selection: SelectionConfig,
    pub fit: FitConfig,
    /// Largest inter-bin delay searched when combining, s.
    pub max_lag: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: Window::Rectangular,
            selection: SelectionConfig::default(),
            fit: FitConfig::default(),
            max_lag: DEFAULT_MAX_LAG,
        }
    }
}

/// Everything one extraction produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    pub method: Method,
    /// Bins whose signal formed the displacement.
    pub bins: Vec<usize>,
    pub displacement: DisplacementSeries,
    /// `None` when the rate could not be determined.
    pub resp_rate_bpm: Option<f64>,
    pub heart_rate_bpm: Option<f64>,
    pub resp_wave: DisplacementSeries,
    pub heart_wave: DisplacementSeries,
    pub selection: Option<BinSelection>,
    pub channels: Option<ChannelEstimate>,
    pub fit: Option<FitResult>,
    pub warnings: Vec<String>,
}

/// Runs `method` on a cube.
///
/// Phase is read from the range map of the raw cube. Subtracting the
/// slow-time mean first would also remove the static carrier of each moving
/// patch and leave a phase that no longer follows the displacement, whereas
/// the bin energies used for selection are computed after mean removal and
/// so equal those of a clutter-removed map.
pub fn run(cube: &IFDataCube, method: Method, cfg: &PipelineConfig) -> Result<Extraction> {
    run_with(cube, method, cfg, TemplateBank::shared())
}

pub fn run_with(cube: &IFDataCube, method: Method, cfg: &PipelineConfig, bank: &TemplateBank) -> Result<Extraction> {
    let map = range_fft(cube, cfg.window);
    run_on_map(&map, cube.config.effective_wavelength(), method, cfg, bank)
}

pub fn run_on_map(
    map: &RangeMap,
    wavelength: f64,
    method: Method,
    cfg: &PipelineConfig,
    bank: &TemplateBank,
) -> Result<Extraction> {
    if map.n_frames < 8 || map.n_bins == 0 {
        return Err(invalid("range map needs at least 8 frames and one bin"));
    }
    let mut warnings = Vec::new();
    let (bins, displacement, selection, channels) = if method.uses_msp() {
        let selection = select_bins(map, &cfg.selection)?;
        let channels = estimate_channels(map, &selection.msp_bins, cfg.max_lag)?;
        let disp = coherent_combine(map, &channels, wavelength)?;
        if selection.detection.contains(&crate::binselect::Detection::Fallback) {
            warnings.push("no bin passed the vital-sign tests; using the strongest bin".into());
        }
        (selection.msp_bins.clone(), disp, Some(selection), Some(channels))
    } else {
        let bin = strongest_bin(&map.motion_energies());
        let phase = extract_phase(map, bin)?;
        let disp = DisplacementSeries::new(phase.to_displacement(wavelength), map.frame_rate);
        (vec![bin], disp, None, None)
    };

    if method.uses_templates() {
        let fit = fit_series_with(&displacement, &cfg.fit, bank)?;
        warnings.extend(fit.warnings.iter().cloned());
        Ok(Extraction {
            method,
            bins,
            resp_rate_bpm: Some(fit.resp_rate_bpm),
            heart_rate_bpm: Some(fit.heart_rate_bpm),
            resp_wave: fit.resp_wave.clone(),
            heart_wave: fit.heart_wave.clone(),
            displacement,
            selection,
            channels,
            fit: Some(fit),
            warnings,
        })
    } else {
        let est = fft_rates_padded(&displacement, &cfg.selection, map.n_frames);
        if est.resp_bpm.is_none() || est.heart_bpm.is_none() {
            warnings.push("no spectral peak in a vital band".into());
        }
        Ok(Extraction {
            method,
            bins,
            resp_rate_bpm: est.resp_bpm,
            heart_rate_bpm: est.heart_bpm,
            resp_wave: est.resp_wave,
            heart_wave: est.heart_wave,
            displacement,
            selection,
            channels,
            fit: None,
            warnings,
        })
    }
}
