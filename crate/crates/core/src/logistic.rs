//! Weighted logistic regression for the incidence part of the model.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::CureDataset;
use crate::error::{CureError, Result};
use crate::linalg;

/// Newton solver settings shared by the two M-step maximizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverControl {
    /// Sup-norm tolerance on the score (gradient) vector.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficients beyond this magnitude are treated as diverging.
    pub divergence_bound: f64,
}

impl SolverControl {
    pub const fn logistic() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            divergence_bound: 1e3,
        }
    }

    pub const fn latency() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 50,
            divergence_bound: 1e3,
        }
    }
}

impl Default for SolverControl {
    fn default() -> Self {
        Self::logistic()
    }
}

/// Fitted incidence coefficients and the implied susceptibility probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticState {
    pub b: Array1<f64>,
    pub p: Array1<f64>,
    pub iterations: usize,
    /// Objective value after each accepted Newton step, starting from `init`.
    pub objective_trace: Vec<f64>,
}

/// Overflow-safe logistic function.
pub fn logistic(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability of being susceptible, `e^{b'w} / (1 + e^{b'w})`.
pub fn incidence_prob(b: &[f64], w: &[f64]) -> Result<f64> {
    if b.len() != w.len() {
        return Err(CureError::DimensionMismatch {
            expected: b.len(),
            found: w.len(),
        });
    }
    Ok(logistic(b.iter().zip(w).map(|(x, y)| x * y).sum()))
}

pub(crate) fn probabilities(b: ArrayView1<f64>, data: &CureDataset) -> Array1<f64> {
    data.w().dot(&b).mapv(logistic)
}

fn check_dims(b: ArrayView1<f64>, gamma: ArrayView1<f64>, data: &CureDataset) -> Result<()> {
    if b.len() != data.w_dim() {
        return Err(CureError::DimensionMismatch {
            expected: data.w_dim(),
            found: b.len(),
        });
    }
    if gamma.len() != data.n() {
        return Err(CureError::DimensionMismatch {
            expected: data.n(),
            found: gamma.len(),
        });
    }
    Ok(())
}

/// Per-subject score contributions `(gamma_i - p_i) W_i`, one row per record.
pub fn logistic_score_rows(
    b: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    data: &CureDataset,
) -> Result<Array2<f64>> {
    check_dims(b, gamma, data)?;
    let resid = &gamma - &probabilities(b, data);
    Ok(data.w() * &resid.insert_axis(Axis(1)))
}

/// Total logistic score `sum_i [gamma_i W_i - W_i p_i]`.
pub fn logistic_score(
    b: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    data: &CureDataset,
) -> Result<Array1<f64>> {
    check_dims(b, gamma, data)?;
    let resid = &gamma - &probabilities(b, data);
    Ok(data.w().t().dot(&resid))
}

/// Weighted log-likelihood `sum_i [gamma_i b'W_i - log(1 + e^{b'W_i})]`.
pub fn weighted_loglik(b: ArrayView1<f64>, gamma: ArrayView1<f64>, data: &CureDataset) -> f64 {
    let eta = data.w().dot(&b);
    eta.iter()
        .zip(gamma.iter())
        .map(|(&e, &g)| g * e - softplus(e))
        .sum()
}

/// Maximizes the gamma-weighted logistic log-likelihood by Newton-Raphson
/// with step-halving.
pub fn fit_weighted_logistic(
    gamma: ArrayView1<f64>,
    data: &CureDataset,
    init: ArrayView1<f64>,
    ctrl: &SolverControl,
) -> Result<LogisticState> {
    check_dims(init, gamma, data)?;
    if let Some(g) = gamma.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(CureError::Config(format!("weight {g} outside [0, 1]")));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(CureError::Config("non-finite initial coefficients".into()));
    }

    let w = data.w();
    let mut b = init.to_owned();
    let mut objective = weighted_loglik(b.view(), gamma, data);
    let mut trace = vec![objective];
    let mut grad_norm = f64::INFINITY;
    for iter in 0..ctrl.max_iter {
        let p = probabilities(b.view(), data);
        let grad = w.t().dot(&(&gamma - &p));
        grad_norm = sup_norm(&grad);
        if grad_norm <= ctrl.tol {
            return Ok(LogisticState {
                b,
                p,
                iterations: iter,
                objective_trace: trace,
            });
        }
        let curvature = p.mapv(|v| v * (1.0 - v)).insert_axis(Axis(1));
        let hessian = w.t().dot(&(w * &curvature));
        let step = linalg::solve_spd(&hessian, &grad)?;

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let candidate = &b + &(&step * scale);
            let value = weighted_loglik(candidate.view(), gamma, data);
            if value >= objective - 1e-12 * objective.abs().max(1.0) {
                b = candidate;
                objective = value;
                trace.push(value);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if let Some((index, &value)) = b
            .iter()
            .enumerate()
            .find(|(_, v)| v.abs() > ctrl.divergence_bound || !v.is_finite())
        {
            return Err(CureError::Separation { index, value });
        }
        if !accepted {
            break;
        }
    }
    let p = probabilities(b.view(), data);
    let grad = w.t().dot(&(&gamma - &p));
    let final_norm = sup_norm(&grad);
    if final_norm <= ctrl.tol {
        return Ok(LogisticState {
            b,
            p,
            iterations: ctrl.max_iter,
            objective_trace: trace,
        });
    }
    Err(CureError::NonConvergence {
        solver: "weighted logistic Newton",
        iterations: ctrl.max_iter,
        gradient_norm: final_norm.min(grad_norm),
    })
}

pub(crate) fn sup_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
