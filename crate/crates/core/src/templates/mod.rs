//! Physiological waveform templates and the combined chest-wall model
//!
//! ```text
//! y_res(t)   = A_res · u_r(((t − t_off_r) / T_res) mod 1) + y_off_r
//! y_h(t)     = A_h   · u_h(((t − t_off_h) / T_h)   mod 1) + y_off_h
//! y_chest(t) = y_res + y_h + c · y_res · y_h
//! ```
//!
//! `u_r` is the closed-form respiration pulse, `u_h` the Van der Pol limit
//! cycle, both normalized to unit peak.

mod heartbeat;
mod params;
mod respiration;

use std::sync::OnceLock;

pub use heartbeat::{heartbeat_unit_pulse, van_der_pol_cycle, HeartModelCoeffs, LimitCycle};
pub use params::{ParamBounds, TemplateParams, N_PARAMS, PARAM_NAMES};
pub use respiration::{
    respiration_unit_pulse, RespirationConstants, RespirationModelCoeffs, RespirationShape,
};

use crate::error::{domain, invalid, Result};

/// A normalized periodic pulse evaluated at a phase; integer phase shifts
/// leave the value unchanged.
pub trait PulseShape {
    fn value(&self, phase: f64) -> f64;
}

/// Tabulated pulse over one period with both endpoints included, evaluated
/// by periodic Catmull-Rom interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPulse {
    samples: Vec<f64>,
}

impl UnitPulse {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 4 {
            return Err(invalid("unit pulse needs at least 4 samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(invalid("unit pulse samples must be finite"));
        }
        Ok(UnitPulse { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

impl PulseShape for UnitPulse {
    fn value(&self, phase: f64) -> f64 {
        // Distinct points: the last sample duplicates the first.
        let n = self.samples.len() - 1;
        let x = phase.rem_euclid(1.0) * n as f64;
        let i = (x.floor() as usize).min(n - 1);
        let u = x - i as f64;
        let at = |k: isize| self.samples[k.rem_euclid(n as isize) as usize];
        let i = i as isize;
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        let u2 = u * u;
        let u3 = u2 * u;
        0.5 * (2.0 * p1
            + (p2 - p0) * u
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2
            + (3.0 * (p1 - p2) + p3 - p0) * u3)
    }
}

/// Unit pulses computed once per coefficient set.
#[derive(Debug, Clone)]
pub struct TemplateBank {
    pub respiration: RespirationShape,
    pub heart: UnitPulse,
}

/// Table size for the default heartbeat pulse.
pub const HEART_TABLE_POINTS: usize = 2049;

impl TemplateBank {
    pub fn new(resp: RespirationModelCoeffs, heart: HeartModelCoeffs) -> Result<Self> {
        Ok(TemplateBank {
            respiration: RespirationShape::new(resp)?,
            heart: heartbeat_unit_pulse(&heart, HEART_TABLE_POINTS)?,
        })
    }

    /// Process-wide bank built from the default coefficients.
    pub fn shared() -> &'static TemplateBank {
        static BANK: OnceLock<TemplateBank> = OnceLock::new();
        BANK.get_or_init(|| {
            TemplateBank::new(RespirationModelCoeffs::default(), HeartModelCoeffs::default())
                .expect("default template coefficients are valid")
        })
    }

    /// Fills `res`, `heart` and `chest` with the three waveforms at `times`.
    pub fn render_into(
        &self,
        p: &TemplateParams,
        times: &[f64],
        res: &mut [f64],
        heart: &mut [f64],
        chest: &mut [f64],
    ) {
        render_parts(p, times, &self.respiration, &self.heart, res, heart, chest);
    }

    pub fn chest(&self, p: &TemplateParams, times: &[f64]) -> Vec<f64> {
        let n = times.len();
        let (mut r, mut h, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        self.render_into(p, times, &mut r, &mut h, &mut c);
        c
    }
}

fn render_parts<R: PulseShape + ?Sized, H: PulseShape + ?Sized>(
    p: &TemplateParams,
    times: &[f64],
    resp_unit: &R,
    heart_unit: &H,
    res: &mut [f64],
    heart: &mut [f64],
    chest: &mut [f64],
) {
    for (i, &t) in times.iter().enumerate() {
        let yr = p.a_res * resp_unit.value((t - p.t_off_r) / p.t_res) + p.y_off_r;
        let yh = p.a_h * heart_unit.value((t - p.t_off_h) / p.t_h) + p.y_off_h;
        res[i] = yr;
        heart[i] = yh;
        chest[i] = yr + yh + p.c * yr * yh;
    }
}

/// Frame instants `m / frame_rate` for `m = 0..n`.
pub fn frame_times(frame_rate: f64, n: usize) -> Vec<f64> {
    (0..n).map(|m| m as f64 / frame_rate).collect()
}

/// Separated and combined template waveforms, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTemplate {
    pub respiration: Vec<f64>,
    pub heart: Vec<f64>,
    pub chest: Vec<f64>,
}

/// Renders `round(duration · frame_rate)` samples of the chest template.
pub fn render_template<R: PulseShape + ?Sized, H: PulseShape + ?Sized>(
    params: &TemplateParams,
    frame_rate: f64,
    duration: f64,
    resp_unit: &R,
    heart_unit: &H,
) -> Result<RenderedTemplate> {
    ParamBounds::default().check(params)?;
    if !(frame_rate > 0.0) {
        return Err(domain("frame_rate must be > 0"));
    }
    if duration < params.t_res.max(params.t_h) {
        return Err(domain(format!(
            "duration {duration} s shorter than the longest period {} s",
            params.t_res.max(params.t_h)
        )));
    }
    let n = (duration * frame_rate).round() as usize;
    let times = frame_times(frame_rate, n);
    let mut out = RenderedTemplate {
        respiration: vec![0.0; n],
        heart: vec![0.0; n],
        chest: vec![0.0; n],
    };
    render_parts(
        params,
        &times,
        resp_unit,
        heart_unit,
        &mut out.respiration,
        &mut out.heart,
        &mut out.chest,
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catmull_rom_hits_table_nodes() {
        let samples: Vec<f64> = (0..=16).map(|i| (i as f64 / 16.0 * 6.283185307179586).sin()).collect();
        let u = UnitPulse::new(samples.clone()).unwrap();
        for (i, s) in samples.iter().enumerate().take(16) {
            assert!((u.value(i as f64 / 16.0) - s).abs() < 1e-12);
        }
        assert!((u.value(1.25) - u.value(0.25)).abs() < 1e-12);
    }

    #[test]
    fn render_rejects_out_of_box_and_short_duration() {
        let bank = TemplateBank::shared();
        let mut p = TemplateParams::harmonic_overlap();
        assert!(render_template(&p, 20.0, 1.0, &bank.respiration, &bank.heart).is_err());
        p.a_res = 0.02;
        assert!(render_template(&p, 20.0, 15.0, &bank.respiration, &bank.heart).is_err());
    }

    #[test]
    fn half_period_offset_is_exact_circular_shift() {
        let bank = TemplateBank::shared();
        let mut p = TemplateParams::harmonic_overlap();
        p.t_res = 2.0;
        p.a_h = 0.0;
        p.c = 0.0;
        let base = render_template(&p, 20.0, 15.0, &bank.respiration, &bank.heart).unwrap();
        p.t_off_r = 1.0;
        let shifted = render_template(&p, 20.0, 15.0, &bank.respiration, &bank.heart).unwrap();
        // Half a period is 20 frames; the template is 40-frame periodic.
        for m in 0..300 {
            let src = (m + 40 - 20) % 40;
            assert!((shifted.chest[m] - base.chest[src]).abs() < 1e-12);
        }
    }
}
