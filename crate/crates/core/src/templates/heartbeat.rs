//! Heartbeat pulse from the Van der Pol relaxation oscillator
//! `V'' − ε(1 − V²)V' + V = 0`.
//!
//! The equation is integrated with fixed-step RK4 until the transient has
//! decayed, then one limit-cycle period (maximum to maximum) is resampled by
//! cubic Hermite interpolation on the stored `(V, V')` trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::templates::UnitPulse;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeartModelCoeffs {
    /// Stiffness `ε = α/ω`.
    pub epsilon: f64,
    /// RK4 step in dimensionless oscillator time.
    pub solver_step: f64,
    /// Limit-cycle periods discarded before extraction.
    pub settle_cycles: usize,
}

impl Default for HeartModelCoeffs {
    fn default() -> Self {
        HeartModelCoeffs {
            epsilon: 5.0,
            solver_step: 1e-3,
            settle_cycles: 5,
        }
    }
}

impl HeartModelCoeffs {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 1.0) {
            return Err(domain(format!("epsilon must be >= 1, got {}", self.epsilon)));
        }
        if !(self.solver_step > 0.0 && self.solver_step <= 0.05) {
            return Err(domain(format!(
                "solver_step must lie in (0, 0.05], got {}",
                self.solver_step
            )));
        }
        if self.settle_cycles == 0 {
            return Err(domain("settle_cycles must be >= 1"));
        }
        Ok(())
    }
}

/// One extracted limit-cycle period.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCycle {
    /// Period in dimensionless oscillator time.
    pub period: f64,
    /// Peak `|V|` over the period before normalization.
    pub amplitude: f64,
    /// `V` sampled at `n_points` instants spanning the period inclusive,
    /// starting at a maximum.
    pub samples: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Node {
    t: f64,
    v: f64,
    w: f64,
}

fn accel(eps: f64, v: f64, w: f64) -> f64 {
    eps * (1.0 - v * v) * w - v
}

fn rk4(eps: f64, v: f64, w: f64, h: f64) -> (f64, f64) {
    let k1v = w;
    let k1w = accel(eps, v, w);
    let k2v = w + 0.5 * h * k1w;
    let k2w = accel(eps, v + 0.5 * h * k1v, w + 0.5 * h * k1w);
    let k3v = w + 0.5 * h * k2w;
    let k3w = accel(eps, v + 0.5 * h * k2v, w + 0.5 * h * k2w);
    let k4v = w + h * k3w;
    let k4w = accel(eps, v + h * k3v, w + h * k3w);
    (
        v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        w + h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
    )
}

/// Cubic Hermite value on `[0, h]` from endpoint values and slopes.
fn hermite(s: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let u = s / h;
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0) * y0
        + (u3 - 2.0 * u2 + u) * h * d0
        + (-2.0 * u3 + 3.0 * u2) * y1
        + (u3 - u2) * h * d1
}

/// Time inside `[a.t, b.t]` where `V'` crosses zero downward.
fn locate_maximum(eps: f64, a: &Node, b: &Node) -> f64 {
    let h = b.t - a.t;
    let (da, db) = (accel(eps, a.v, a.w), accel(eps, b.v, b.w));
    let f = |s: f64| hermite(s, h, a.w, da, b.w, db);
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    a.t + 0.5 * (lo + hi)
}

/// Integrates the oscillator from `(V, V') = (0.5, 0)` and returns one
/// settled period resampled to `n_points`.
pub fn van_der_pol_cycle(coeffs: &HeartModelCoeffs, n_points: usize) -> Result<LimitCycle> {
    coeffs.validate()?;
    if n_points < 3 {
        return Err(domain("n_points must be at least 3"));
    }
    let eps = coeffs.epsilon;
    let h = coeffs.solver_step;
    // Relaxation period grows like (3 − 2 ln 2)·ε; allow a generous margin.
    let period_bound = 2.0 * std::f64::consts::PI + 2.0 * eps;
    let horizon = (coeffs.settle_cycles + 4) as f64 * 2.0 * period_bound;
    let max_steps = (horizon / h).ceil() as usize;

    let mut prev = Node { t: 0.0, v: 0.5, w: 0.0 };
    let mut maxima: Vec<f64> = Vec::new();
    let mut recording: Vec<Node> = Vec::new();
    let needed = coeffs.settle_cycles + 2;
    for step in 1..=max_steps {
        let (v, w) = rk4(eps, prev.v, prev.w, h);
        let cur = Node { t: step as f64 * h, v, w };
        if !v.is_finite() || !w.is_finite() {
            return Err(Error::Solver("van der pol integration diverged".into()));
        }
        let is_max = prev.w > 0.0 && cur.w <= 0.0 && cur.v > 0.0;
        if !recording.is_empty() {
            recording.push(cur);
        }
        if is_max {
            maxima.push(locate_maximum(eps, &prev, &cur));
            if maxima.len() == needed - 1 {
                recording.push(prev);
                recording.push(cur);
            } else if maxima.len() == needed {
                break;
            }
        }
        prev = cur;
    }
    if maxima.len() < needed {
        return Err(Error::Solver(format!(
            "no stable period within horizon {horizon:.1} (found {} maxima)",
            maxima.len()
        )));
    }
    let t_start = maxima[needed - 2];
    let t_end = maxima[needed - 1];
    let period = t_end - t_start;

    let mut samples = Vec::with_capacity(n_points);
    let mut seg = 0;
    for j in 0..n_points {
        let t = t_start + period * j as f64 / (n_points - 1) as f64;
        while seg + 2 < recording.len() && recording[seg + 1].t < t {
            seg += 1;
        }
        let (a, b) = (&recording[seg], &recording[seg + 1]);
        samples.push(hermite(t - a.t, b.t - a.t, a.v, a.w, b.v, b.w));
    }
    let amplitude = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(LimitCycle {
        period,
        amplitude,
        samples,
    })
}

/// Limit-cycle period normalized to peak `|V| = 1`, `n_points` samples with
/// both endpoints on the same maximum.
pub fn heartbeat_unit_pulse(coeffs: &HeartModelCoeffs, n_points: usize) -> Result<UnitPulse> {
    let cycle = van_der_pol_cycle(coeffs, n_points)?;
    let samples = cycle.samples.iter().map(|v| v / cycle.amplitude).collect();
    UnitPulse::new(samples)
}
