//! Respiration pulse from the two-stage RC lung model.
//!
//! Lung volume obeys `P(t) = R_rs·V'(t) + E_rs·V(t)`. Inspiratory pressure is
//! the quadratic `a0 + a1·t + a2·t²` on `[0, t1]`, expiratory pressure the
//! discharge `P(t1)·exp(−(t − t1)/τ)` on `[t1, t1 + t2]`. The volume has a
//! closed form on each stage; `V0` is chosen so the cycle is periodic.
//!
//! All times here are fractions of one breathing period, and `R_rs = 1`
//! (the template is amplitude-normalized, so the resistance only scales).

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::templates::PulseShape;

/// Coefficients of the respiration model in units of one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RespirationModelCoeffs {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    /// Expiratory discharge constant.
    pub tau: f64,
    /// `R_rs · C_rs`.
    pub tau_rs: f64,
    /// `t1 / (t1 + t2)`.
    pub insp_fraction: f64,
}

impl Default for RespirationModelCoeffs {
    /// `insp_fraction = 0.4`, `tau = 0.3·T_exp`, `tau_rs = 0.1·T`, with
    /// `a0..a2` solved so the volume has zero slope at the start of
    /// inspiration and at the inspiratory/expiratory junction.
    fn default() -> Self {
        let insp_fraction = 0.4;
        Self::with_flat_junctions(insp_fraction, 0.3 * (1.0 - insp_fraction), 0.1)
            .expect("default respiration coefficients are well posed")
    }
}

/// Closed-form constants of the two volume branches.
///
/// Inspiration: `V(t) = p2·t² + p1·t + a4 + a3·exp(−t/τ_rs)`.
/// Expiration, `s = t − t1`: `V = b1·exp(−s/τ) + b2·exp(−s/τ_rs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RespirationConstants {
    pub big_a1: f64,
    pub big_a2: f64,
    pub big_a3: f64,
    pub p2: f64,
    pub p1: f64,
    pub a3: f64,
    pub a4: f64,
    pub b1: f64,
    pub b2: f64,
    pub v0: f64,
    pub v_t1: f64,
}

impl RespirationModelCoeffs {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(domain(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.tau_rs > 0.0) {
            return Err(domain(format!("tau_rs must be > 0, got {}", self.tau_rs)));
        }
        if !(self.insp_fraction > 0.0 && self.insp_fraction < 1.0) {
            return Err(domain(format!(
                "insp_fraction must lie in (0, 1), got {}",
                self.insp_fraction
            )));
        }
        if ((self.tau - self.tau_rs) / self.tau_rs).abs() < 1e-9 {
            return Err(domain("tau and tau_rs must differ"));
        }
        if ![self.a0, self.a1, self.a2].iter().all(|v| v.is_finite()) {
            return Err(domain("pressure coefficients must be finite"));
        }
        Ok(())
    }

    /// Solves for the pressure polynomial (up to scale) that makes the
    /// volume stationary at `t = 0` and at `t = t1`, so the waveform rises
    /// monotonically through inspiration and decays through expiration.
    pub fn with_flat_junctions(insp_fraction: f64, tau: f64, tau_rs: f64) -> Result<Self> {
        let probe = |a0, a1, a2| RespirationModelCoeffs {
            a0,
            a1,
            a2,
            tau,
            tau_rs,
            insp_fraction,
        };
        probe(0.0, 1.0, 0.0).validate()?;
        // Both conditions are linear in (a0, a1, a2): evaluate them on the
        // unit basis and take the null vector of the 2×3 system.
        let e = 1.0 / tau_rs;
        let mut rows = [[0.0; 3]; 2];
        for (j, basis) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().enumerate() {
            let c = probe(basis[0], basis[1], basis[2]);
            let k = c.constants_unchecked();
            rows[0][j] = basis[0] - e * k.v0;
            rows[1][j] = c.pressure(insp_fraction) - e * k.v_t1;
        }
        let (r0, r1) = (rows[0], rows[1]);
        let n = [
            r0[1] * r1[2] - r0[2] * r1[1],
            r0[2] * r1[0] - r0[0] * r1[2],
            r0[0] * r1[1] - r0[1] * r1[0],
        ];
        if n[1].abs() < f64::MIN_POSITIVE {
            return Err(Error::Coefficients(
                "no pressure polynomial gives flat junctions".into(),
            ));
        }
        let s = 1.0 / n[1];
        let out = probe(n[0] * s, 1.0, n[2] * s);
        out.validate()?;
        Ok(out)
    }

    pub fn t1(&self) -> f64 {
        self.insp_fraction
    }

    pub fn t2(&self) -> f64 {
        1.0 - self.insp_fraction
    }

    /// Driving pressure at phase `t ∈ [0, 1]`.
    pub fn pressure(&self, t: f64) -> f64 {
        let t1 = self.t1();
        if t <= t1 {
            self.a0 + self.a1 * t + self.a2 * t * t
        } else {
            let p1 = self.a0 + self.a1 * t1 + self.a2 * t1 * t1;
            p1 * (-(t - t1) / self.tau).exp()
        }
    }

    fn constants_unchecked(&self) -> RespirationConstants {
        let trs = self.tau_rs;
        let (t1, t2) = (self.t1(), self.t2());
        let big_a1 = self.a2;
        let big_a2 = self.a1 - 2.0 * self.a2 * trs;
        let big_a3 = self.a0 - self.a1 * trs + 2.0 * self.a2 * trs * trs;
        let (p2, p1, a4) = (trs * big_a1, trs * big_a2, trs * big_a3);
        let p_t1 = self.pressure(t1);
        let b1 = p_t1 / (1.0 / trs - 1.0 / self.tau);
        let g1 = (-t1 / trs).exp();
        let g2 = (-t2 / trs).exp();
        // V(t1) with V0 = 0, then solve V(t1 + t2) = V0.
        let vi_t1 = p2 * t1 * t1 + p1 * t1 + a4 * (1.0 - g1);
        let v0 = (b1 * ((-t2 / self.tau).exp() - g2) + vi_t1 * g2) / (1.0 - g1 * g2);
        let v_t1 = vi_t1 + v0 * g1;
        RespirationConstants {
            big_a1,
            big_a2,
            big_a3,
            p2,
            p1,
            a3: v0 - a4,
            a4,
            b1,
            b2: v_t1 - b1,
            v0,
            v_t1,
        }
    }

    /// Derived constants after checking that both branches join: at `t1`
    /// and across the period boundary.
    pub fn constants(&self) -> Result<RespirationConstants> {
        self.validate()?;
        let k = self.constants_unchecked();
        let scale = k.v0.abs().max(k.v_t1.abs()).max(f64::MIN_POSITIVE);
        let insp_end = k.p2 * self.t1().powi(2) + k.p1 * self.t1() + k.a4 + k.a3 * (-self.t1() / self.tau_rs).exp();
        let exp_end = k.b1 * (-self.t2() / self.tau).exp() + k.b2 * (-self.t2() / self.tau_rs).exp();
        let gap_t1 = (insp_end - (k.b1 + k.b2)).abs() / scale;
        let gap_wrap = (exp_end - k.v0).abs() / scale;
        if gap_t1 > 1e-9 || gap_wrap > 1e-9 || !k.v0.is_finite() {
            return Err(Error::Coefficients(format!(
                "respiration branches do not join (gap at t1 {gap_t1:e}, at wrap {gap_wrap:e})"
            )));
        }
        Ok(k)
    }
}

/// Amplitude-normalized respiration pulse evaluated from the closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RespirationShape {
    coeffs: RespirationModelCoeffs,
    k: RespirationConstants,
    lo: f64,
    hi: f64,
}

impl RespirationShape {
    pub fn new(coeffs: RespirationModelCoeffs) -> Result<Self> {
        let k = coeffs.constants()?;
        let mut shape = RespirationShape {
            coeffs,
            k,
            lo: 0.0,
            hi: 1.0,
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let n = 8000;
        for j in 0..=n {
            let v = shape.volume(j as f64 / n as f64);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let v1 = shape.volume(coeffs.t1());
        lo = lo.min(v1);
        hi = hi.max(v1);
        if !(hi > lo) {
            return Err(Error::Coefficients("respiration volume is constant".into()));
        }
        shape.lo = lo;
        shape.hi = hi;
        Ok(shape)
    }

    pub fn coeffs(&self) -> &RespirationModelCoeffs {
        &self.coeffs
    }

    pub fn constants(&self) -> &RespirationConstants {
        &self.k
    }

    /// Un-normalized lung volume at phase `t ∈ [0, 1]`.
    pub fn volume(&self, t: f64) -> f64 {
        let k = &self.k;
        let t1 = self.coeffs.t1();
        if t <= t1 {
            k.p2 * t * t + k.p1 * t + k.a4 + k.a3 * (-t / self.coeffs.tau_rs).exp()
        } else {
            let s = t - t1;
            k.b1 * (-s / self.coeffs.tau).exp() + k.b2 * (-s / self.coeffs.tau_rs).exp()
        }
    }

    /// Single pulse on `[0, 1]`, zero outside.
    pub fn single(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        (self.volume(t) - self.lo) / (self.hi - self.lo)
    }
}

impl PulseShape for RespirationShape {
    fn value(&self, phase: f64) -> f64 {
        self.single(phase.rem_euclid(1.0))
    }
}

/// One normalized respiration period sampled at `n_points` phases spanning
/// `[0, 1]` inclusive.
pub fn respiration_unit_pulse(coeffs: &RespirationModelCoeffs, n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(domain("n_points must be at least 2"));
    }
    let shape = RespirationShape::new(*coeffs)?;
    Ok((0..n_points)
        .map(|j| shape.single(j as f64 / (n_points - 1) as f64))
        .collect())
}
