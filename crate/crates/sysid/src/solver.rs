//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with box
//! bounds and a forward-difference numerical Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SysidError};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop when the relative cost decrease falls below this.
    pub cost_tol: f64,
    /// Stop when the step norm falls below this.
    pub step_tol: f64,
    pub lambda_init: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 200,
            cost_tol: 1e-12,
            step_tol: 1e-10,
            lambda_init: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub params: Vec<f64>,
    /// Final sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost_of(r: &DVector<f64>) -> f64 {
    r.dot(r)
}

/// Minimize `sum r_i(p)^2` over `p` within `[lo, hi]` per component.
///
/// The candidate step is clamped into the box before evaluation, so the
/// iterate always stays feasible.
pub fn least_squares<F>(
    residuals: F,
    init: &[f64],
    lo: &[f64],
    hi: &[f64],
    cfg: &SolverConfig,
) -> Result<Solution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = init.len();
    assert_eq!(lo.len(), n);
    assert_eq!(hi.len(), n);

    let clamp = |p: &mut [f64]| {
        for i in 0..n {
            p[i] = p[i].clamp(lo[i], hi[i]);
        }
    };

    let mut p = init.to_vec();
    clamp(&mut p);
    let mut r = DVector::from_vec(residuals(&p));
    if r.iter().any(|v| !v.is_finite()) {
        return Err(SysidError::Numerical(
            "residuals not finite at the initial point".into(),
        ));
    }
    let m = r.len();
    if m < n {
        return Err(SysidError::Numerical(format!(
            "{m} residuals cannot determine {n} parameters"
        )));
    }
    let mut cost = cost_of(&r);
    let mut lambda = cfg.lambda_init;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..cfg.max_iters {
        iterations = iter + 1;

        // Forward-difference Jacobian, stepping inward at the upper bound.
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..n {
            let h = (1e-6 * p[j].abs()).max(1e-8);
            let mut pj = p.clone();
            let step = if pj[j] + h <= hi[j] { h } else { -h };
            pj[j] += step;
            let rj = residuals(&pj);
            for i in 0..m {
                jac[(i, j)] = (rj[i] - r[i]) / step;
            }
        }

        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;

        let mut improved = false;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 4.0;
                continue;
            };
            let mut cand: Vec<f64> = (0..n).map(|i| p[i] + step[i]).collect();
            clamp(&mut cand);
            let rc = DVector::from_vec(residuals(&cand));
            let cc = cost_of(&rc);
            if cc.is_finite() && cc < cost {
                let step_norm = (0..n)
                    .map(|i| (cand[i] - p[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let rel_drop = (cost - cc) / cost.max(1e-300);
                p = cand;
                r = rc;
                cost = cc;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel_drop < cfg.cost_tol || step_norm < cfg.step_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }

        if !improved {
            // No downhill step at any damping: treat as converged.
            converged = true;
        }
        if converged {
            break;
        }
    }

    Ok(Solution { params: p, cost, iterations, converged })
}
