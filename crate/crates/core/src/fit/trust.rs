//! Bound-constrained trust-region least squares with a forward-difference
//! Jacobian.
//!
//! Variables are mapped to `[0, 1]` by their bound span. Each iteration
//! minimizes the Gauss-Newton model inside the intersection of an ∞-norm
//! trust box and the bounds, then accepts or rejects the step by the ratio of
//! actual to predicted SSE reduction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustOptions {
    pub max_iters: usize,
    /// Stop once an accepted step improves the SSE by less than this
    /// fraction of the current SSE.
    pub sse_tol: f64,
    /// Initial radius as a fraction of each bound span.
    pub initial_radius: f64,
    /// Forward-difference step as a fraction of each bound span.
    pub fd_step: f64,
}

impl Default for TrustOptions {
    fn default() -> Self {
        TrustOptions {
            max_iters: 200,
            sse_tol: 1e-8,
            initial_radius: 0.1,
            fd_step: 1e-7,
        }
    }
}

/// State after one trust-region iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Iterate {
    pub iteration: usize,
    /// Trial point of this iteration.
    pub trial: Vec<f64>,
    pub trial_sse: f64,
    pub accepted: bool,
    /// SSE at the current point after the accept/reject decision.
    pub sse: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustOutcome {
    pub x: Vec<f64>,
    pub sse: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<Iterate>,
}

/// Residual model over physical variables with box bounds. Coordinates whose
/// lower and upper bound coincide are held fixed.
pub struct BoxProblem<'a, F: Fn(&[f64], &mut [f64])> {
    pub residual: F,
    pub n_residuals: usize,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

impl<F: Fn(&[f64], &mut [f64])> BoxProblem<'_, F> {
    fn span(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    fn to_x(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &zi)| (self.lower[i] + zi.clamp(0.0, 1.0) * self.span(i)).clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    fn to_z(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let s = self.span(i);
                if s > 0.0 {
                    ((xi - self.lower[i]) / s).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn eval(&self, x: &[f64], r: &mut [f64]) -> f64 {
        (self.residual)(x, r);
        r.iter().map(|v| v * v).sum()
    }

    /// Forward-difference Jacobian `∂r/∂z` of the free coordinates, stepping
    /// backward where a forward step would leave the box.
    pub fn jacobian(&self, z: &[f64], r0: &[f64], free: &[usize], h: f64) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n_residuals, free.len());
        let mut r = vec![0.0; self.n_residuals];
        for (col, &i) in free.iter().enumerate() {
            let mut zp = z.to_vec();
            let step = if z[i] + h <= 1.0 { h } else { -h };
            zp[i] += step;
            self.eval(&self.to_x(&zp), &mut r);
            for m in 0..self.n_residuals {
                j[(m, col)] = (r[m] - r0[m]) / step;
            }
        }
        j
    }

    /// SSE gradient with respect to the physical variables, by forward
    /// differences (the same scheme the solver uses).
    pub fn forward_gradient(&self, x: &[f64], h: f64) -> Vec<f64> {
        self.gradient(x, h, false)
    }

    /// SSE gradient with respect to the physical variables, by central
    /// differences of the SSE itself.
    pub fn central_gradient(&self, x: &[f64], h: f64) -> Vec<f64> {
        self.gradient(x, h, true)
    }

    fn gradient(&self, x: &[f64], h: f64, central: bool) -> Vec<f64> {
        let z = self.to_z(x);
        let mut r0 = vec![0.0; self.n_residuals];
        self.eval(x, &mut r0);
        let mut r = vec![0.0; self.n_residuals];
        (0..x.len())
            .map(|i| {
                let s = self.span(i);
                if s <= 0.0 {
                    return 0.0;
                }
                if central {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[i] += h;
                    zm[i] -= h;
                    let fp = self.eval(&self.to_x(&zp), &mut r);
                    let fm = self.eval(&self.to_x(&zm), &mut r);
                    (fp - fm) / (2.0 * h * s)
                } else {
                    let free = [i];
                    let jac = self.jacobian(&z, &r0, &free, h);
                    let g: f64 = jac.column(0).iter().zip(&r0).map(|(a, b)| a * b).sum();
                    2.0 * g / s
                }
            })
            .collect()
    }
}

/// Minimizes `gᵀs + ½ sᵀHs` over `lo ≤ s ≤ hi` (with `lo ≤ 0 ≤ hi`) by
/// projected Newton steps on the free set.
pub(crate) fn box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let n = g.len();
    let q = |s: &DVector<f64>| g.dot(s) + 0.5 * s.dot(&(h * s));
    let project = |s: &mut DVector<f64>| {
        for i in 0..n {
            s[i] = s[i].clamp(lo[i], hi[i]);
        }
    };
    let diag_max = (0..n).map(|i| h[(i, i)]).fold(0.0, f64::max);
    let ridge = 1e-12 * diag_max.max(f64::MIN_POSITIVE);

    let mut s = DVector::zeros(n);
    let mut qs = 0.0;
    for _ in 0..100 {
        let grad = g + h * &s;
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let at_lo = s[i] <= lo[i] && grad[i] > 0.0;
                let at_hi = s[i] >= hi[i] && grad[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        if gf.amax() == 0.0 {
            break;
        }
        let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| {
            h[(free[a], free[b])] + if a == b { ridge } else { 0.0 }
        });
        let newton = hf.clone().cholesky().map(|c| -c.solve(&gf));
        let mut improved = false;
        let try_direction = |d: &DVector<f64>, s: &mut DVector<f64>, qs: &mut f64| -> bool {
            let mut alpha = 1.0;
            for _ in 0..40 {
                let mut cand = s.clone();
                for (k, &i) in free.iter().enumerate() {
                    cand[i] += alpha * d[k];
                }
                project(&mut cand);
                let qc = q(&cand);
                if qc < *qs - 1e-15 * qs.abs() && qc < *qs {
                    *s = cand;
                    *qs = qc;
                    return true;
                }
                alpha *= 0.5;
            }
            false
        };
        if let Some(d) = newton {
            improved = try_direction(&d, &mut s, &mut qs);
        }
        if !improved {
            let hg = &hf * &gf;
            let curv = gf.dot(&hg);
            let step = if curv > 0.0 { gf.dot(&gf) / curv } else { 1.0 };
            let d = -&gf * step;
            improved = try_direction(&d, &mut s, &mut qs);
        }
        if !improved {
            break;
        }
    }
    s
}

pub fn minimize<F: Fn(&[f64], &mut [f64])>(
    problem: &BoxProblem<'_, F>,
    x0: &[f64],
    opts: &TrustOptions,
) -> TrustOutcome {
    let n = x0.len();
    let free: Vec<usize> = (0..n).filter(|&i| problem.span(i) > 0.0).collect();
    let mut z = problem.to_z(x0);
    // Start from x0 itself so an optimal start is returned bit for bit.
    let mut x: Vec<f64> = (0..n).map(|i| x0[i].clamp(problem.lower[i], problem.upper[i])).collect();
    let mut r = vec![0.0; problem.n_residuals];
    let mut f = problem.eval(&x, &mut r);
    let mut radius = opts.initial_radius;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    if free.is_empty() || f == 0.0 {
        return TrustOutcome {
            x,
            sse: f,
            converged: true,
            iterations: 0,
            trace,
        };
    }

    let mut jac = problem.jacobian(&z, &r, &free, opts.fd_step);
    let mut r_trial = vec![0.0; problem.n_residuals];
    while iterations < opts.max_iters {
        iterations += 1;
        let rv = DVector::from_column_slice(&r);
        let g = jac.transpose() * &rv;
        let h = jac.transpose() * &jac;
        let lo: Vec<f64> = free.iter().map(|&i| (-radius).max(-z[i])).collect();
        let hi: Vec<f64> = free.iter().map(|&i| radius.min(1.0 - z[i])).collect();
        let s = box_qp(&h, &g, &lo, &hi);
        let predicted = -(2.0 * g.dot(&s) + s.dot(&(&h * &s)));
        if !(predicted > 1e-15 * f) {
            converged = true;
            break;
        }
        let mut zt = z.clone();
        for (k, &i) in free.iter().enumerate() {
            zt[i] = (z[i] + s[k]).clamp(0.0, 1.0);
        }
        let xt = problem.to_x(&zt);
        let ft = problem.eval(&xt, &mut r_trial);
        let rho = if ft.is_finite() { (f - ft) / predicted } else { f64::NEG_INFINITY };
        let accepted = rho > 1e-4;
        let step_norm = s.amax();
        if rho < 0.25 {
            radius *= 0.25;
        } else if rho > 0.75 && step_norm >= 0.99 * radius {
            radius = (2.0 * radius).min(1.0);
        }
        let mut done = false;
        trace.push(Iterate {
            iteration: iterations,
            trial: xt.clone(),
            trial_sse: ft,
            accepted,
            sse: if accepted { ft } else { f },
            radius,
        });
        if accepted {
            let improvement = f - ft;
            z = zt;
            x = xt;
            std::mem::swap(&mut r, &mut r_trial);
            let previous = f;
            f = ft;
            if improvement < opts.sse_tol * previous || f == 0.0 {
                done = true;
            } else {
                jac = problem.jacobian(&z, &r, &free, opts.fd_step);
            }
        } else if radius < 1e-12 {
            done = true;
        }
        if done {
            converged = true;
            break;
        }
    }
    TrustOutcome {
        x,
        sse: f,
        converged,
        iterations,
        trace,
    }
}
