//! Template fitting: initialization heuristics followed by a bound-constrained
//! trust-region least-squares refinement of all nine parameters.

mod init;
mod trust;

use serde::{Deserialize, Serialize};

pub use init::{grid_shape, init_heart, init_resp, HeartInit, RespInit, WEAK_HEART_FRACTION};
pub use trust::{BoxProblem, Iterate, TrustOptions, TrustOutcome};

use crate::error::{domain, invalid, Result};
use crate::series::DisplacementSeries;
use crate::templates::{ParamBounds, TemplateBank, TemplateParams, N_PARAMS};
use init::{heart_grid, HeartProbe};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Cells of the heartbeat `(T_h, t_off_h)` grid.
    pub coarse_points: usize,
    /// Relative SSE improvement below which the descent stops.
    pub sse_tol: f64,
    pub max_iters: usize,
    /// Number of best grid cells refined and descended from.
    pub starts: usize,
    pub bounds: ParamBounds,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            coarse_points: 500,
            sse_tol: 1e-8,
            max_iters: 200,
            starts: 3,
            bounds: ParamBounds::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_points == 0 {
            return Err(domain("coarse_points must be >= 1"));
        }
        if !(self.sse_tol > 0.0) {
            return Err(domain("sse_tol must be > 0"));
        }
        if self.starts == 0 {
            return Err(domain("starts must be >= 1"));
        }
        for i in 0..N_PARAMS {
            if !(self.bounds.lower[i] <= self.bounds.upper[i]) {
                return Err(domain("every lower bound must not exceed its upper bound"));
            }
        }
        Ok(())
    }

    fn trust_options(&self) -> TrustOptions {
        TrustOptions {
            max_iters: self.max_iters,
            sse_tol: self.sse_tol,
            ..TrustOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub params: TemplateParams,
    /// Sum of squared residuals, m².
    pub sse: f64,
    pub resp_wave: DisplacementSeries,
    pub heart_wave: DisplacementSeries,
    pub resp_rate_bpm: f64,
    pub heart_rate_bpm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
    /// Per-iteration log of the final descent.
    #[serde(skip)]
    pub trace: Vec<Iterate>,
}

/// Rates with flags for periods that ended on a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    pub resp_bpm: f64,
    pub heart_bpm: f64,
    pub resp_at_bound: bool,
    pub heart_at_bound: bool,
}

pub fn extract_rates(result: &FitResult, bounds: &ParamBounds) -> Rates {
    let p = &result.params;
    let at = |v: f64, i: usize| (v - bounds.lower[i]).abs() < 1e-9 || (v - bounds.upper[i]).abs() < 1e-9;
    Rates {
        resp_bpm: 60.0 / p.t_res,
        heart_bpm: 60.0 / p.t_h,
        resp_at_bound: at(p.t_res, 3),
        heart_at_bound: at(p.t_h, 2),
    }
}

/// Residuals `x − y_chest(t; p)` for a fixed series.
pub struct TemplateObjective<'a> {
    pub x: &'a [f64],
    pub times: Vec<f64>,
    pub bank: &'a TemplateBank,
}

impl<'a> TemplateObjective<'a> {
    pub fn new(x: &'a DisplacementSeries, bank: &'a TemplateBank) -> Self {
        TemplateObjective {
            x: &x.values,
            times: x.times(),
            bank,
        }
    }

    pub fn residual(&self, p: &[f64], out: &mut [f64]) {
        let params = TemplateParams::from_array(p.try_into().expect("nine parameters"));
        let model = self.bank.chest(&params, &self.times);
        for ((o, x), y) in out.iter_mut().zip(self.x).zip(&model) {
            *o = x - y;
        }
    }

    pub fn sse(&self, p: &TemplateParams) -> f64 {
        let mut r = vec![0.0; self.x.len()];
        self.residual(&p.to_array(), &mut r);
        r.iter().map(|v| v * v).sum()
    }

    /// Problem over the box `[lower, upper]`; pin a coordinate by giving it
    /// equal bounds.
    pub fn problem<'b>(
        &'b self,
        lower: &'b [f64],
        upper: &'b [f64],
    ) -> BoxProblem<'b, impl Fn(&[f64], &mut [f64]) + 'b> {
        BoxProblem {
            residual: move |p: &[f64], out: &mut [f64]| self.residual(p, out),
            n_residuals: self.x.len(),
            lower,
            upper,
        }
    }
}

fn check_series(x: &DisplacementSeries) -> Result<()> {
    if x.len() < 8 {
        return Err(invalid("fitting needs at least 8 samples"));
    }
    if !(x.frame_rate > 0.0) || x.values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("series must have a positive frame rate and finite values"));
    }
    Ok(())
}

fn descend(
    objective: &TemplateObjective<'_>,
    init: &TemplateParams,
    lower: &[f64],
    upper: &[f64],
    opts: &TrustOptions,
) -> TrustOutcome {
    let problem = objective.problem(lower, upper);
    trust::minimize(&problem, &init.to_array(), opts)
}

fn result_from(
    x: &DisplacementSeries,
    bank: &TemplateBank,
    outcome: TrustOutcome,
    bounds: &ParamBounds,
    mut warnings: Vec<String>,
) -> FitResult {
    let params = TemplateParams::from_array(outcome.x.as_slice().try_into().expect("nine parameters"));
    let times = x.times();
    let n = times.len();
    let (mut res, mut heart, mut chest) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    bank.render_into(&params, &times, &mut res, &mut heart, &mut chest);
    let wave = |values| DisplacementSeries {
        values,
        frame_rate: x.frame_rate,
        start_time: x.start_time,
    };
    if !outcome.converged {
        warnings.push(format!("fit stopped after {} iterations without converging", outcome.iterations));
    }
    let mut result = FitResult {
        params,
        sse: outcome.sse,
        resp_wave: wave(res),
        heart_wave: wave(heart),
        resp_rate_bpm: 60.0 / params.t_res,
        heart_rate_bpm: 60.0 / params.t_h,
        converged: outcome.converged,
        iterations: outcome.iterations,
        warnings,
        trace: outcome.trace,
    };
    let rates = extract_rates(&result, bounds);
    if rates.resp_at_bound {
        result.warnings.push("respiration period at its bound".into());
    }
    if rates.heart_at_bound {
        result.warnings.push("heartbeat period at its bound".into());
    }
    result
}

/// Refines all nine parameters from `init`. Never aborts on
/// non-convergence; the best point found is returned with
/// `converged = false`.
pub fn fit_templates(x: &DisplacementSeries, init: &TemplateParams, cfg: &FitConfig) -> Result<FitResult> {
    fit_templates_with(x, init, cfg, TemplateBank::shared())
}

pub fn fit_templates_with(
    x: &DisplacementSeries,
    init: &TemplateParams,
    cfg: &FitConfig,
    bank: &TemplateBank,
) -> Result<FitResult> {
    cfg.validate()?;
    check_series(x)?;
    cfg.bounds.check(init)?;
    let objective = TemplateObjective::new(x, bank);
    let outcome = descend(&objective, init, &cfg.bounds.lower, &cfg.bounds.upper, &cfg.trust_options());
    Ok(result_from(x, bank, outcome, &cfg.bounds, Vec::new()))
}

/// Full estimate from a displacement series: respiration initialization and
/// a respiration-only descent, the heartbeat grid, local refinement of the
/// best cells, and a nine-parameter descent from each, keeping the lowest
/// SSE.
pub fn fit_series(x: &DisplacementSeries, cfg: &FitConfig) -> Result<FitResult> {
    fit_series_with(x, cfg, TemplateBank::shared())
}

pub fn fit_series_with(x: &DisplacementSeries, cfg: &FitConfig, bank: &TemplateBank) -> Result<FitResult> {
    cfg.validate()?;
    check_series(x)?;
    let bounds = &cfg.bounds;
    let opts = cfg.trust_options();
    let objective = TemplateObjective::new(x, bank);
    let mut warnings = Vec::new();

    let r = init_resp(x, bank, bounds)?;
    if r.low_periodicity {
        warnings.push("low periodicity: respiration period taken from the spectrum".into());
    }
    let mut start = TemplateParams {
        a_h: 0.0,
        a_res: r.a_res,
        t_h: 0.5 * (bounds.lower[2] + bounds.upper[2]),
        t_res: r.t_res,
        t_off_h: 0.0,
        t_off_r: r.t_off_r,
        y_off_h: 0.0,
        y_off_r: r.y_off_r,
        c: 0.0,
    };
    for (i, v) in start.to_array().iter().enumerate() {
        if *v < bounds.lower[i] || *v > bounds.upper[i] {
            let mut a = start.to_array();
            a[i] = a[i].clamp(bounds.lower[i], bounds.upper[i]);
            start = TemplateParams::from_array(&a);
        }
    }

    // Respiration-only descent: heartbeat terms pinned at zero amplitude.
    let pinned = start.to_array();
    let mut lower = pinned;
    let mut upper = pinned;
    for i in [1, 3, 5, 7] {
        lower[i] = bounds.lower[i];
        upper[i] = bounds.upper[i];
    }
    let resp_fit = descend(&objective, &start, &lower, &upper, &opts);
    let resp = TemplateParams::from_array(resp_fit.x.as_slice().try_into().expect("nine parameters"));

    let times = x.times();
    let probe = HeartProbe::new(x, &times, &resp, bank, bounds);
    let cells = heart_grid(&probe, cfg.coarse_points, bounds);
    if cells[0].weak {
        warnings.push("weak heartbeat: no grid cell explains the residual".into());
    }
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| cells[a].sse.total_cmp(&cells[b].sse).then(a.cmp(&b)));

    let (n_t, n_off) = grid_shape(cfg.coarse_points);
    let dt = if n_t > 1 { (bounds.upper[2] - bounds.lower[2]) / (n_t - 1) as f64 } else { 0.0 };
    let mut best: Option<TrustOutcome> = None;
    for &idx in order.iter().take(cfg.starts) {
        let cell = cells[idx];
        let d_off = cell.t_h / n_off as f64;
        let mut local = cell;
        for a in -4..=4 {
            for b in -4..=4 {
                let t_h = (cell.t_h + dt * a as f64 / 4.0).clamp(bounds.lower[2], bounds.upper[2]);
                let t_off_h = cell.t_off_h + d_off * b as f64 / 4.0;
                if t_off_h < bounds.lower[4] || t_off_h > bounds.upper[4] {
                    continue;
                }
                let (sse, a_h, c) = probe.eval(t_h, t_off_h);
                if sse < local.sse {
                    local = HeartInit {
                        t_h,
                        t_off_h,
                        a_h,
                        c,
                        sse,
                        weak: cell.weak,
                    };
                }
            }
        }
        let init = TemplateParams {
            a_h: local.a_h,
            t_h: local.t_h,
            t_off_h: local.t_off_h,
            c: local.c,
            ..resp
        };
        let outcome = descend(&objective, &init, &bounds.lower, &bounds.upper, &opts);
        if best.as_ref().map_or(true, |b| outcome.sse < b.sse) {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one start");
    Ok(result_from(x, bank, best, bounds, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::frame_times;

    fn template_series(p: &TemplateParams, n: usize) -> DisplacementSeries {
        let v = TemplateBank::shared().chest(p, &frame_times(20.0, n));
        DisplacementSeries::new(v, 20.0)
    }

    #[test]
    fn grid_shape_matches_default_allocation() {
        assert_eq!(grid_shape(500), (25, 20));
        assert_eq!(grid_shape(1), (1, 1));
    }

    #[test]
    fn fixed_point() {
        let p = TemplateParams::harmonic_overlap();
        let x = template_series(&p, 300);
        let r = fit_templates(&x, &p, &FitConfig::default()).unwrap();
        assert!(r.sse < 1e-16);
        assert_eq!(r.params, p);
        assert!(r.converged);
    }

    #[test]
    fn init_outside_box_rejected() {
        let p = TemplateParams::harmonic_overlap();
        let x = template_series(&p, 300);
        let bad = TemplateParams { t_h: 2.0, ..p };
        assert!(fit_templates(&x, &bad, &FitConfig::default()).is_err());
    }

    #[test]
    fn rates_flag_bounds() {
        let p = TemplateParams {
            t_res: 10.0,
            ..TemplateParams::harmonic_overlap()
        };
        let x = template_series(&p, 300);
        let r = fit_templates(&x, &p, &FitConfig::default()).unwrap();
        let rates = extract_rates(&r, &FitConfig::default().bounds);
        assert!((rates.resp_bpm - 6.0).abs() < 1e-12);
        assert!(rates.resp_at_bound && !rates.heart_at_bound);
    }
}
