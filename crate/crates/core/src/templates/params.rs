use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// The nine control parameters of the combined chest-wall template.
///
/// Amplitudes and value offsets are in meters, periods and time offsets in
/// seconds, and the coupling `c` in 1/m so that `c · y_res · y_h` is a
/// displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateParams {
    #[serde(rename = "A_h")]
    pub a_h: f64,
    #[serde(rename = "A_res")]
    pub a_res: f64,
    #[serde(rename = "T_h")]
    pub t_h: f64,
    #[serde(rename = "T_res")]
    pub t_res: f64,
    pub t_off_h: f64,
    pub t_off_r: f64,
    pub y_off_h: f64,
    pub y_off_r: f64,
    pub c: f64,
}

pub const N_PARAMS: usize = 9;

/// Parameter names in vector order.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "A_h", "A_res", "T_h", "T_res", "t_off_h", "t_off_r", "y_off_h", "y_off_r", "c",
];

impl TemplateParams {
    /// Reference set with a 48 bpm respiration and 101.7 bpm heartbeat whose
    /// fundamental sits next to the second respiration harmonic.
    pub fn harmonic_overlap() -> Self {
        TemplateParams {
            a_h: 0.00025,
            a_res: 0.003,
            t_h: 0.59,
            t_res: 1.25,
            t_off_h: 0.0,
            t_off_r: 0.0,
            y_off_h: 0.0,
            y_off_r: 0.0,
            c: 2500.0,
        }
    }

    /// The same rates and amplitudes with a weak coupling, for radar scenes.
    ///
    /// At `c = 2500` the modulated heartbeat outgrows the second respiration
    /// harmonic and moves the chest by more than a quarter wavelength between
    /// 20 Hz frames, so the phase can no longer be unwrapped. With `c = 50`
    /// the heartbeat line stays below the harmonic and the largest frame
    /// step is about 0.8 mm.
    pub fn harmonic_overlap_scene() -> Self {
        TemplateParams {
            c: 50.0,
            ..Self::harmonic_overlap()
        }
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.a_h, self.a_res, self.t_h, self.t_res, self.t_off_h, self.t_off_r, self.y_off_h,
            self.y_off_r, self.c,
        ]
    }

    pub fn from_array(p: &[f64; N_PARAMS]) -> Self {
        TemplateParams {
            a_h: p[0],
            a_res: p[1],
            t_h: p[2],
            t_res: p[3],
            t_off_h: p[4],
            t_off_r: p[5],
            y_off_h: p[6],
            y_off_r: p[7],
            c: p[8],
        }
    }

    pub fn resp_rate_bpm(&self) -> f64 {
        60.0 / self.t_res
    }

    pub fn heart_rate_bpm(&self) -> f64 {
        60.0 / self.t_h
    }
}

/// Box constraints on [`TemplateParams`], in vector order.
///
/// The period and amplitude limits are physiological; the offsets and the
/// coupling get wide symmetric boxes so the solver always works on a bounded
/// domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub lower: [f64; N_PARAMS],
    pub upper: [f64; N_PARAMS],
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            lower: [0.0, 0.0, 0.5, 1.0, -1.25, -10.0, -0.05, -0.05, -1.0e4],
            upper: [1.0e-3, 1.0e-2, 1.25, 10.0, 1.25, 10.0, 0.05, 0.05, 1.0e4],
        }
    }
}

impl ParamBounds {
    pub fn span(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, p: &TemplateParams) -> bool {
        self.check(p).is_ok()
    }

    /// Domain error naming the first violated bound.
    pub fn check(&self, p: &TemplateParams) -> Result<()> {
        for (i, v) in p.to_array().iter().enumerate() {
            if !v.is_finite() {
                return Err(domain(format!("{} is not finite", PARAM_NAMES[i])));
            }
            if *v < self.lower[i] {
                return Err(domain(format!(
                    "{} = {v} below lower bound {}",
                    PARAM_NAMES[i], self.lower[i]
                )));
            }
            if *v > self.upper[i] {
                return Err(domain(format!(
                    "{} = {v} above upper bound {}",
                    PARAM_NAMES[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, p: &mut [f64; N_PARAMS]) {
        for i in 0..N_PARAMS {
            p[i] = p[i].clamp(self.lower[i], self.upper[i]);
        }
    }
}
