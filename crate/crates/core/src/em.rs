//! EM iterations for the mixture cure model.
//!
//! Each iteration runs the two M-steps at fixed cure weights (incidence by
//! weighted logistic Newton, latency by profile Newton with the baseline
//! hazard re-profiled at every trial `beta`), then refreshes the weights.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::CureDataset;
use crate::error::{CureError, Result};
use crate::latency::{fit_latency, BaselineHazard};
use crate::logistic::{fit_weighted_logistic, logistic, softplus, SolverControl};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmControl {
    /// Convergence threshold on the max absolute change in `(b, beta)`.
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub logistic: SolverControl,
    pub latency: SolverControl,
    /// Treat susceptible survival as zero beyond the last event time when
    /// updating the weights of censored subjects.
    pub zero_tail: bool,
    /// Starting weight for censored subjects.
    pub initial_censored_weight: f64,
}

impl Default for EmControl {
    fn default() -> Self {
        Self {
            em_tol: 1e-7,
            em_max_iter: 500,
            logistic: SolverControl::logistic(),
            latency: SolverControl::latency(),
            zero_tail: false,
            initial_censored_weight: 0.5,
        }
    }
}

impl EmControl {
    pub fn validate(&self) -> Result<()> {
        if self.em_tol.is_nan() || self.em_tol <= 0.0 {
            return Err(CureError::Config("em_tol must be positive".into()));
        }
        if self.em_max_iter == 0 {
            return Err(CureError::Config("em_max_iter must be at least 1".into()));
        }
        if !(self.initial_censored_weight > 0.0 && self.initial_censored_weight <= 1.0) {
            return Err(CureError::Config(
                "initial censored weight must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Result of an EM run. `gamma` holds the weights used in the final M-step,
/// so the stored `(b, beta, hazard)` solve the estimating equations at them.
#[derive(Debug, Clone, PartialEq)]
pub struct CureFit {
    pub b: Array1<f64>,
    pub beta: Array1<f64>,
    pub hazard: BaselineHazard,
    pub gamma: Array1<f64>,
    /// Observed-data log-likelihood after each M-step.
    pub loglik_trace: Vec<f64>,
    /// Max absolute change in `(b, beta)` at each iteration.
    pub change_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub zero_tail: bool,
}

fn susceptible_survival(cum_hazard: f64, eta: f64) -> f64 {
    (-cum_hazard * eta.exp()).exp()
}

/// Posterior probability of being susceptible: 1 for events, otherwise
/// `p S / (1 - p + p S)`.
pub fn e_step(
    b: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    hazard: &BaselineHazard,
    data: &CureDataset,
    zero_tail: bool,
) -> Array1<f64> {
    let eta_b = data.w().dot(&b);
    let eta_beta = data.z().dot(&beta);
    let tail = hazard.last_jump_time().unwrap_or(f64::INFINITY);
    Array1::from_iter((0..data.n()).map(|i| {
        if data.event(i) {
            return 1.0;
        }
        let t = data.time(i);
        let s = if zero_tail && t > tail {
            0.0
        } else {
            susceptible_survival(hazard.cumulative_at(t), eta_beta[i])
        };
        let p = logistic(eta_b[i]);
        let num = p * s;
        num / (1.0 - p + num)
    }))
}

/// Observed-data log-likelihood with the hazard density replaced by the
/// jump of the step-function estimate.
pub fn observed_loglik(
    b: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    hazard: &BaselineHazard,
    data: &CureDataset,
    zero_tail: bool,
) -> f64 {
    let eta_b = data.w().dot(&b);
    let eta_beta = data.z().dot(&beta);
    let tail = hazard.last_jump_time().unwrap_or(f64::INFINITY);
    (0..data.n())
        .map(|i| {
            let t = data.time(i);
            let cum = hazard.cumulative_at(t);
            // log p = eta - softplus(eta), log(1-p) = -softplus(eta)
            let log_p = eta_b[i] - softplus(eta_b[i]);
            if data.event(i) {
                let jump = hazard.jump_at(t).unwrap_or(0.0);
                log_p + jump.ln() + eta_beta[i] - cum * eta_beta[i].exp()
            } else {
                let s = if zero_tail && t > tail {
                    0.0
                } else {
                    susceptible_survival(cum, eta_beta[i])
                };
                let p = logistic(eta_b[i]);
                (1.0 - p + p * s).ln()
            }
        })
        .sum()
}

fn check_design(data: &CureDataset) -> Result<()> {
    if data.n() < 2 {
        return Ok(());
    }
    let constant = |col: ndarray::ArrayView1<f64>| col.iter().all(|&v| v == col[0]);
    for (j, name) in data.z_names().iter().enumerate() {
        if constant(data.z().column(j)) {
            return Err(CureError::ConstantCovariate(name.clone()));
        }
    }
    for (j, name) in data.w_names().iter().enumerate().skip(1) {
        if constant(data.w().column(j)) {
            return Err(CureError::ConstantCovariate(name.clone()));
        }
    }
    Ok(())
}

/// Fits the cure model by EM.
///
/// A run that exhausts `em_max_iter` is returned with `converged = false`.
pub fn fit(data: &CureDataset, ctrl: &EmControl) -> Result<CureFit> {
    ctrl.validate()?;
    if data.n_censored() == 0 {
        return Err(CureError::Unidentifiable);
    }
    check_design(data)?;

    let mut gamma = Array1::from_iter(
        data.records()
            .iter()
            .map(|r| r.delta().max(ctrl.initial_censored_weight)),
    );
    let mut b = Array1::zeros(data.w_dim());
    let event_rate = data.n_events() as f64 / data.n() as f64;
    b[0] = (event_rate / (1.0 - event_rate)).ln();
    let mut beta = Array1::zeros(data.z_dim());

    let mut loglik_trace = Vec::new();
    let mut change_trace = Vec::new();
    let mut converged = false;
    let mut hazard = None;
    let mut iterations = 0;
    for iteration in 1..=ctrl.em_max_iter {
        iterations = iteration;
        let wrap = |source| CureError::MStep {
            iteration,
            source: Box::new(source),
        };
        let incidence =
            fit_weighted_logistic(gamma.view(), data, b.view(), &ctrl.logistic).map_err(wrap)?;
        let latency = fit_latency(gamma.view(), data, beta.view(), &ctrl.latency).map_err(wrap)?;

        let change = incidence
            .b
            .iter()
            .zip(&b)
            .chain(latency.beta.iter().zip(&beta))
            .map(|(new, old)| (new - old).abs())
            .fold(0.0f64, f64::max);
        b = incidence.b;
        beta = latency.beta;
        let h = latency.hazard;
        loglik_trace.push(observed_loglik(
            b.view(),
            beta.view(),
            &h,
            data,
            ctrl.zero_tail,
        ));
        change_trace.push(change);
        if change <= ctrl.em_tol {
            converged = true;
            hazard = Some(h);
            break;
        }
        if iteration == ctrl.em_max_iter {
            hazard = Some(h);
            break;
        }
        gamma = e_step(b.view(), beta.view(), &h, data, ctrl.zero_tail);
    }

    Ok(CureFit {
        b,
        beta,
        hazard: hazard.expect("at least one iteration"),
        gamma,
        loglik_trace,
        change_trace,
        iterations,
        converged,
        zero_tail: ctrl.zero_tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;
    use crate::latency::breslow_hazard;
    use ndarray::array;

    fn small() -> CureDataset {
        let rows = [
            (0.5, true, 0.0, 0.3),
            (0.9, true, 1.0, -0.4),
            (1.3, false, 1.0, 1.1),
            (1.7, true, 0.0, -1.0),
            (2.0, false, 0.0, 0.2),
            (2.4, true, 1.0, 0.9),
            (3.1, false, 1.0, -0.3),
            (3.3, true, 0.0, 0.6),
            (4.0, false, 0.0, -0.8),
            (5.5, false, 1.0, 0.1),
            (6.0, false, 0.0, 1.4),
            (6.2, false, 1.0, -1.2),
        ];
        let records = rows
            .iter()
            .map(|&(t, e, a, c)| SubjectRecord {
                time: t,
                event: e,
                w: vec![1.0, a, c],
                z: vec![a, c],
            })
            .collect();
        CureDataset::new(
            records,
            vec!["Intercept".into(), "a".into(), "c".into()],
            vec!["a".into(), "c".into()],
        )
        .unwrap()
    }

    #[test]
    fn e_step_examples() {
        let d = small();
        let gamma = Array1::ones(d.n());
        let h = breslow_hazard(array![0.0, 0.0].view(), gamma.view(), &d).unwrap();
        let g = e_step(
            array![0.0, 0.0, 0.0].view(),
            array![0.0, 0.0].view(),
            &h,
            &d,
            false,
        );
        for i in 0..d.n() {
            if d.event(i) {
                assert_eq!(g[i], 1.0);
            } else {
                assert!(g[i] > 0.0 && g[i] < 1.0);
            }
        }
        // censored before the first event: S = 1 and p = 0.5 give 0.5
        let records = vec![
            SubjectRecord {
                time: 0.1,
                event: false,
                w: vec![1.0],
                z: vec![0.0],
            },
            SubjectRecord {
                time: 1.0,
                event: true,
                w: vec![1.0],
                z: vec![1.0],
            },
        ];
        let d = CureDataset::new(records, vec!["Intercept".into()], vec!["z".into()]).unwrap();
        let h = breslow_hazard(array![0.0].view(), array![1.0, 1.0].view(), &d).unwrap();
        let g = e_step(array![0.0].view(), array![0.0].view(), &h, &d, false);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[1], 1.0);
    }

    #[test]
    fn e_step_hand_arithmetic() {
        // p = 0.8 via b = logit(0.8); S = 0.25 via Lambda = ln 4 at z = 0
        let records = vec![
            SubjectRecord {
                time: 1.0,
                event: true,
                w: vec![1.0],
                z: vec![0.0],
            },
            SubjectRecord {
                time: 2.0,
                event: false,
                w: vec![1.0],
                z: vec![0.0],
            },
        ];
        let d = CureDataset::new(records, vec!["Intercept".into()], vec!["z".into()]).unwrap();
        let hazard = BaselineHazard {
            jump_times: vec![1.0],
            jumps: vec![4f64.ln()],
            cumulative: vec![4f64.ln()],
        };
        let g = e_step(
            array![4f64.ln()].view(),
            array![0.0].view(),
            &hazard,
            &d,
            false,
        );
        assert!((g[1] - 0.5).abs() < 1e-15, "{}", g[1]);
        let g = e_step(
            array![4f64.ln()].view(),
            array![0.0].view(),
            &hazard,
            &d,
            true,
        );
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn requires_censoring() {
        let records = (0..4)
            .map(|i| SubjectRecord {
                time: i as f64 + 1.0,
                event: true,
                w: vec![1.0, i as f64],
                z: vec![i as f64],
            })
            .collect();
        let d = CureDataset::new(
            records,
            vec!["Intercept".into(), "x".into()],
            vec!["x".into()],
        )
        .unwrap();
        assert!(matches!(
            fit(&d, &EmControl::default()),
            Err(CureError::Unidentifiable)
        ));
    }

    #[test]
    fn constant_latency_column_rejected() {
        let records = (0..4)
            .map(|i| SubjectRecord {
                time: i as f64 + 1.0,
                event: i % 2 == 0,
                w: vec![1.0, i as f64],
                z: vec![2.0],
            })
            .collect();
        let d = CureDataset::new(
            records,
            vec!["Intercept".into(), "x".into()],
            vec!["k".into()],
        )
        .unwrap();
        match fit(&d, &EmControl::default()) {
            Err(CureError::ConstantCovariate(name)) => assert_eq!(name, "k"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_fit_converges_with_valid_weights() {
        let d = small();
        let f = fit(&d, &EmControl::default()).unwrap();
        assert!(f.converged, "{:?}", f.change_trace.last());
        assert!(*f.change_trace.last().unwrap() <= 1e-7);
        for i in 0..d.n() {
            assert!(f.gamma[i] > 0.0 && f.gamma[i] <= 1.0);
            if d.event(i) {
                assert_eq!(f.gamma[i], 1.0);
            }
        }
        let again = e_step(f.b.view(), f.beta.view(), &f.hazard, &d, false);
        let drift = (&again - &f.gamma)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(drift <= 1e-6, "{drift}");
    }

    #[test]
    fn max_iter_one_reports_not_converged() {
        let d = small();
        let ctrl = EmControl {
            em_max_iter: 1,
            ..EmControl::default()
        };
        let f = fit(&d, &ctrl).unwrap();
        assert!(!f.converged);
        assert_eq!(f.iterations, 1);
        assert!(EmControl {
            em_tol: 0.0,
            ..ctrl
        }
        .validate()
        .is_err());
    }
}
