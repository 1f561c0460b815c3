//! Candidate detection (modified CFAR) and vital-sign bin selection.

use serde::{Deserialize, Serialize};

use crate::dsp::{self, Band, IirFilter};
use crate::error::{domain, invalid, Result};
use crate::preprocess::{extract_phase, RangeMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Weight of the maximum bin energy in the candidate threshold.
    pub alpha: f64,
    pub th_resp: f64,
    pub th_heart: f64,
    pub resp_band: (f64, f64),
    pub heart_band: (f64, f64),
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            alpha: 0.2,
            th_resp: 5.0,
            th_heart: 5.0,
            resp_band: (0.1, 0.8),
            heart_band: (0.8, 2.0),
        }
    }
}

/// Order of the Butterworth high-pass that strips respiration before the
/// heartbeat test. Applied forward and backward.
pub const HEART_HIGHPASS_ORDER: usize = 4;

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.th_resp > 0.0 && self.th_heart > 0.0) {
            return Err(domain("detection thresholds must be > 0"));
        }
        let (r0, r1) = self.resp_band;
        let (h0, h1) = self.heart_band;
        if !(0.0 < r0 && r0 < r1 && r1 <= h0 && h0 < h1) {
            return Err(domain(format!(
                "bands must be ordered and disjoint, got resp [{r0}, {r1}] heart [{h0}, {h1}]"
            )));
        }
        Ok(())
    }

    /// Respiration band, both edges included.
    pub fn resp(&self) -> Band {
        Band::closed(self.resp_band.0, self.resp_band.1)
    }

    /// Heartbeat band. Its lower edge is excluded when it coincides with the
    /// upper respiration edge, so a line on the shared edge belongs to
    /// respiration only.
    pub fn heart(&self) -> Band {
        if self.heart_band.0 <= self.resp_band.1 {
            Band::above(self.heart_band.0, self.heart_band.1)
        } else {
            Band::closed(self.heart_band.0, self.heart_band.1)
        }
    }

    /// Frequencies outside this interval count as out-of-band energy.
    pub fn vital_band(&self) -> Band {
        Band::closed(self.resp_band.0, self.heart_band.1)
    }
}

/// Why a bin entered the MSP set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detection {
    Respiration,
    Heartbeat,
    Fallback,
}

/// Result of the band-energy test on one phase series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandRatio {
    /// `E_in / E_out`; `+∞` when `E_out = 0` and `E_in > 0` (serialized as
    /// `null`), 0 for an all-zero series.
    pub ratio: f64,
    /// Strongest non-DC spectral line, `None` for an all-zero series.
    pub f_peak: Option<f64>,
}

/// Per-candidate test outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinDiagnostics {
    pub bin: usize,
    pub energy: f64,
    pub resp: BandRatio,
    /// Present when the respiration test failed and the heartbeat branch ran.
    pub heart: Option<BandRatio>,
    pub detection: Option<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSelection {
    pub candidates: Vec<usize>,
    pub msp_bins: Vec<usize>,
    /// Detection branch for each entry of `msp_bins`.
    pub detection: Vec<Detection>,
    pub threshold: f64,
    pub diagnostics: Vec<BinDiagnostics>,
}

/// `mean(E) + alpha · max(E)` over per-bin motion energies.
pub fn candidate_threshold(energies: &[f64], alpha: f64) -> f64 {
    let max = energies.iter().copied().fold(0.0, f64::max);
    dsp::mean(energies) + alpha * max
}

/// Bins whose motion energy exceeds the modified CFAR threshold.
///
/// Every maximal run of above-threshold bins contains a local maximum above
/// the threshold, so returning all of them keeps a wide chest as one
/// contiguous run.
pub fn candidate_bins(map: &RangeMap, cfg: &SelectionConfig) -> Result<Vec<usize>> {
    if map.n_bins == 0 || map.n_frames == 0 {
        return Err(invalid("range map is empty"));
    }
    let energies = map.motion_energies();
    let t = candidate_threshold(&energies, cfg.alpha);
    Ok(energies
        .iter()
        .enumerate()
        .filter(|&(_, &e)| e > t)
        .map(|(n, _)| n)
        .collect())
}

/// Energy in `in_band` over energy outside `keep` for the mean-removed
/// series. The peak is searched over the whole `(0, Nyquist]` range.
pub fn band_energy_ratio(
    phase: &[f64],
    frame_rate: f64,
    in_band: Band,
    keep: Band,
) -> Result<BandRatio> {
    if phase.len() < 2 {
        return Err(invalid("band energy ratio needs at least 2 samples"));
    }
    let x = dsp::remove_mean(phase);
    let n = x.len();
    let power = dsp::power_spectrum(&x);
    let (mut e_in, mut e_out) = (0.0, 0.0);
    for (k, &p) in power.iter().enumerate() {
        let f = dsp::bin_frequency(k, n, frame_rate);
        if in_band.contains(f) {
            e_in += p;
        }
        if !keep.contains(f) {
            e_out += p;
        }
    }
    let ratio = if e_out > 0.0 {
        e_in / e_out
    } else if e_in > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let f_peak = dsp::spectral_peak(&power, n, frame_rate, Band::closed(0.0, frame_rate / 2.0)).map(|(_, f)| f);
    Ok(BandRatio { ratio, f_peak })
}

fn passes(r: &BandRatio, band: Band, th: f64) -> bool {
    r.ratio >= th && r.f_peak.is_some_and(|f| band.contains(f))
}

/// Lowest-index bin of maximum motion energy.
pub fn strongest_bin(energies: &[f64]) -> usize {
    let mut best = 0;
    for (n, &e) in energies.iter().enumerate() {
        if e > energies[best] {
            best = n;
        }
    }
    best
}

/// Runs the respiration test on each candidate, then the heartbeat test on
/// the high-passed phase of those that failed. Falls back to the strongest
/// bin when nothing passes.
pub fn msp_select(map: &RangeMap, candidates: &[usize], cfg: &SelectionConfig) -> Result<BinSelection> {
    cfg.validate()?;
    if map.n_bins == 0 || map.n_frames == 0 {
        return Err(invalid("range map is empty"));
    }
    let energies = map.motion_energies();
    let threshold = candidate_threshold(&energies, cfg.alpha);
    let keep = cfg.vital_band();
    let highpass = IirFilter::butter_highpass(HEART_HIGHPASS_ORDER, cfg.heart_band.0, map.frame_rate);

    let mut diagnostics = Vec::with_capacity(candidates.len());
    for &bin in candidates {
        let phase = extract_phase(map, bin)?;
        let resp = band_energy_ratio(&phase.values, map.frame_rate, cfg.resp(), keep)?;
        let (heart, detection) = if passes(&resp, cfg.resp(), cfg.th_resp) {
            (None, Some(Detection::Respiration))
        } else {
            let filtered = highpass.filtfilt(&phase.values);
            let h = band_energy_ratio(&filtered, map.frame_rate, cfg.heart(), cfg.heart())?;
            let d = passes(&h, cfg.heart(), cfg.th_heart).then_some(Detection::Heartbeat);
            (Some(h), d)
        };
        diagnostics.push(BinDiagnostics {
            bin,
            energy: energies[bin],
            resp,
            heart,
            detection,
        });
    }

    let (mut msp_bins, mut detection): (Vec<usize>, Vec<Detection>) = diagnostics
        .iter()
        .filter_map(|d| d.detection.map(|det| (d.bin, det)))
        .unzip();
    if msp_bins.is_empty() {
        msp_bins.push(strongest_bin(&energies));
        detection.push(Detection::Fallback);
    }
    Ok(BinSelection {
        candidates: candidates.to_vec(),
        msp_bins,
        detection,
        threshold,
        diagnostics,
    })
}

/// `candidate_bins` followed by `msp_select`.
pub fn select_bins(map: &RangeMap, cfg: &SelectionConfig) -> Result<BinSelection> {
    let candidates = candidate_bins(map, cfg)?;
    msp_select(map, &candidates, cfg)
}
