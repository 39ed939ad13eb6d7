use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;
use curefit_core::{
    stacked_scores, BaselineHazard, Component, CureDataset, CureError, CureFit, EmControl,
    InferenceReport,
};
use ndarray::Axis;
use serde::Serialize;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Everything `fit` reports. The text table is a rounded view of this.
#[derive(Debug, Serialize)]
pub struct FitOutput {
    pub input: String,
    pub n: usize,
    pub n_events: usize,
    pub n_censored: usize,
    pub dropped_rows: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_change: f64,
    pub loglik: f64,
    /// Sup-norm of the stacked score column sums at the estimates.
    pub score_residual: f64,
    pub control: EmControl,
    pub report: Option<InferenceReport>,
    pub se_error: Option<String>,
    pub loglik_trace: Vec<f64>,
    pub change_trace: Vec<f64>,
    pub hazard: BaselineHazard,
}

impl FitOutput {
    pub fn new(
        input: &Path,
        data: &CureDataset,
        ctrl: &EmControl,
        fit: &CureFit,
        report: Option<InferenceReport>,
        se_error: Option<String>,
    ) -> Result<Self, CureError> {
        let residual = stacked_scores(fit, data)?
            .sum_axis(Axis(0))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            input: input.display().to_string(),
            n: data.n(),
            n_events: data.n_events(),
            n_censored: data.n_censored(),
            dropped_rows: data.dropped_rows(),
            converged: fit.converged,
            iterations: fit.iterations,
            final_change: fit.change_trace.last().copied().unwrap_or(f64::NAN),
            loglik: fit.loglik_trace.last().copied().unwrap_or(f64::NAN),
            score_residual: residual,
            control: *ctrl,
            report,
            se_error,
            loglik_trace: fit.loglik_trace.clone(),
            change_trace: fit.change_trace.clone(),
            hazard: fit.hazard.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}: n = {} ({} events, {} censored, {} rows dropped)",
            self.input, self.n, self.n_events, self.n_censored, self.dropped_rows
        );
        let _ = writeln!(
            out,
            "EM {} after {} iterations; log-likelihood {:.4}",
            if self.converged {
                "converged"
            } else {
                "DID NOT CONVERGE"
            },
            self.iterations,
            self.loglik
        );
        let Some(r) = &self.report else {
            let _ = writeln!(
                out,
                "standard errors unavailable: {}",
                self.se_error.as_deref().unwrap_or("unknown")
            );
            return out;
        };
        let _ = writeln!(out, "standard errors: {:?}", r.method);
        for (component, title) in [
            (Component::Incidence, "Incidence (logistic)"),
            (Component::Latency, "Latency (Cox PH)"),
        ] {
            let _ = writeln!(out, "\n{title}");
            let _ = writeln!(
                out,
                "{:<14}{:>10}{:>10}{:>22}",
                "Covariate", "Estimate", "SE", "95% CI"
            );
            for i in (0..r.labels.len()).filter(|&i| r.labels[i].component == component) {
                let ci = format!("({:.4}, {:.4})", r.ci_low[i], r.ci_high[i]);
                let _ = writeln!(
                    out,
                    "{:<14}{:>10.4}{:>10.4}{:>22}",
                    r.labels[i].name, r.estimates[i], r.se[i], ci
                );
            }
        }
        out
    }
}
