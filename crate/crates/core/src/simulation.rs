//! Monte Carlo harness: Weibull PH latency, uniform censoring, logistic
//! incidence, and bias / SE / ESE / coverage summaries.

use std::fmt::Write as _;

use ndarray::{s, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CureDataset, SubjectRecord, INTERCEPT_NAME};
use crate::em::{fit, EmControl};
use crate::error::{CureError, Result};
use crate::inference::{
    analytic_se, bootstrap_se_for, stacked_scores, BlockMode, InferenceReport, SeMethod,
};
use crate::logistic::{incidence_prob, sup_norm};

/// The three incidence configurations, all with beta = (-1, 0.5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Cure25,
    Cure50,
    Cure75,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Cure25, Preset::Cure50, Preset::Cure75];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Cure25 => "cure25",
            Preset::Cure50 => "cure50",
            Preset::Cure75 => "cure75",
        }
    }

    pub fn b_true(self) -> [f64; 3] {
        match self {
            Preset::Cure25 => [2.1, -1.0, 0.3],
            Preset::Cure50 => [1.022, -1.0, 0.3],
            Preset::Cure75 => [-0.1, -1.0, 0.3],
        }
    }

    pub fn config(self) -> SimConfig {
        SimConfig {
            b_true: self.b_true().to_vec(),
            ..SimConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub reps: usize,
    /// Incidence coefficients `(intercept, W1, W2)`.
    pub b_true: Vec<f64>,
    /// Latency coefficients `(Z1, Z2)`.
    pub beta_true: Vec<f64>,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    pub censor_max: f64,
    pub seed: u64,
    pub se_method: SeMethod,
    pub boot_reps: usize,
    pub block_mode: BlockMode,
    pub em: EmControl,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            reps: 1000,
            b_true: Preset::Cure50.b_true().to_vec(),
            beta_true: vec![-1.0, 0.5],
            weibull_shape: 2.0,
            weibull_scale: 1.0,
            censor_max: 6.0,
            seed: 1,
            se_method: SeMethod::Analytic,
            boot_reps: 200,
            block_mode: BlockMode::Stacked,
            em: EmControl::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CureError::Config(m.into()));
        if self.n < 10 {
            return bad("n must be at least 10");
        }
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.b_true.len() != 3 {
            return bad("b_true needs 3 entries (intercept, W1, W2)");
        }
        if self.beta_true.len() != 2 {
            return bad("beta_true needs 2 entries (Z1, Z2)");
        }
        if self
            .b_true
            .iter()
            .chain(&self.beta_true)
            .any(|v| !v.is_finite())
        {
            return bad("true coefficients must be finite");
        }
        for (name, v) in [
            ("weibull_shape", self.weibull_shape),
            ("weibull_scale", self.weibull_scale),
            ("censor_max", self.censor_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CureError::Config(format!("{name} must be positive")));
            }
        }
        if self.se_method == SeMethod::Bootstrap && self.boot_reps < 2 {
            return bad("boot_reps must be at least 2");
        }
        self.em.validate()
    }

    fn truth(&self) -> Vec<f64> {
        self.b_true.iter().chain(&self.beta_true).copied().collect()
    }
}

pub const PARAMETER_NAMES: [&str; 5] = ["b0", "b1", "b2", "beta1", "beta2"];

fn rep_rng(seed: u64, rep_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep_index as u64);
    rng
}

// Decorrelates bootstrap streams from the data-generating streams.
fn bootstrap_seed(seed: u64, rep_index: usize) -> u64 {
    seed ^ (rep_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Draws replication `rep_index` of the study. Subjects come out in
/// generation order; W = (1, W1, W2) and Z = (W1, W2).
pub fn generate_dataset(cfg: &SimConfig, rep_index: usize) -> Result<CureDataset> {
    cfg.validate()?;
    let mut rng = rep_rng(cfg.seed, rep_index);
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let mut records = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let w1 = if coin.sample(&mut rng) { 1.0 } else { 0.0 };
        let w2: f64 = StandardNormal.sample(&mut rng);
        let w = vec![1.0, w1, w2];
        let p = incidence_prob(&cfg.b_true, &w)?;
        let susceptible = rng.random_bool(p);
        let c = cfg.censor_max * rng.random::<f64>();
        let (time, event) = if susceptible {
            let eta = cfg.beta_true[0] * w1 + cfg.beta_true[1] * w2;
            // 1 - u lies in (0, 1]
            let u = 1.0 - rng.random::<f64>();
            let failure = cfg.weibull_scale * (-u.ln() / eta.exp()).powf(1.0 / cfg.weibull_shape);
            (failure.min(c), failure <= c)
        } else {
            (c, false)
        };
        records.push(SubjectRecord {
            time,
            event,
            w,
            z: vec![w1, w2],
        });
    }
    CureDataset::new(
        records,
        vec![INTERCEPT_NAME.into(), "W1".into(), "W2".into()],
        vec!["Z1".into(), "Z2".into()],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub truth: f64,
    /// Mean estimate minus truth.
    pub bias: f64,
    /// Empirical SE of the estimates; `None` with fewer than two successes.
    pub se: Option<f64>,
    /// Mean estimated SE.
    pub ese: f64,
    /// Fraction of 95% intervals covering the truth.
    pub cp: f64,
    pub n_success: usize,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub config: SimConfig,
    pub parameters: Vec<ParameterSummary>,
    /// Largest sup-norm of the incidence score sums over successful fits.
    pub max_incidence_residual: f64,
    /// Same for the latency profile score sums.
    pub max_latency_residual: f64,
    /// Mean fraction of censored subjects per replication.
    pub mean_censoring_fraction: f64,
    /// First few failure messages, by replication index.
    pub failures: Vec<String>,
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub report: InferenceReport,
    /// Sup-norms of the incidence and latency score column sums.
    pub score_residual: (f64, f64),
    pub censoring_fraction: f64,
}

/// Generates, fits and computes standard errors for one replication.
pub fn run_replication(cfg: &SimConfig, rep_index: usize) -> Result<Replication> {
    let data = generate_dataset(cfg, rep_index)?;
    let censoring_fraction = data.n_censored() as f64 / data.n() as f64;
    let f = fit(&data, &cfg.em)?;
    if !f.converged {
        return Err(CureError::NonConvergence {
            solver: "em",
            iterations: f.iterations,
            gradient_norm: f.change_trace.last().copied().unwrap_or(f64::NAN),
        });
    }
    let sums = stacked_scores(&f, &data)?.sum_axis(Axis(0));
    let dim_b = data.w_dim();
    let score_residual = (
        sup_norm(&sums.slice(s![..dim_b]).to_owned()),
        sup_norm(&sums.slice(s![dim_b..]).to_owned()),
    );
    let report = match cfg.se_method {
        SeMethod::Analytic => analytic_se(&f, &data, cfg.block_mode)?,
        SeMethod::Bootstrap => bootstrap_se_for(
            &f,
            &data,
            &cfg.em,
            cfg.boot_reps,
            bootstrap_seed(cfg.seed, rep_index),
        )?,
    };
    if report.se.iter().any(|s| !s.is_finite()) {
        return Err(CureError::RankDeficient {
            eigenvalue: f64::NAN,
        });
    }
    Ok(Replication {
        report,
        score_residual,
        censoring_fraction,
    })
}

const MAX_REPORTED_FAILURES: usize = 10;

/// Runs the study on the current rayon pool. Replications are aggregated in
/// index order, so the summary does not depend on the number of threads.
pub fn run_study(cfg: &SimConfig) -> Result<SimulationSummary> {
    summarize(cfg, run_replications(cfg)?)
}

/// Every replication's outcome, in index order.
pub fn run_replications(cfg: &SimConfig) -> Result<Vec<Result<Replication>>> {
    cfg.validate()?;
    Ok((0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect())
}

/// [`run_study`] on a dedicated pool of `threads` workers.
pub fn run_study_with_threads(cfg: &SimConfig, threads: usize) -> Result<SimulationSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CureError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_study(cfg))
}

/// Aggregates replication outcomes; failed replications are excluded from
/// the metrics and counted.
pub fn summarize(cfg: &SimConfig, outcomes: Vec<Result<Replication>>) -> Result<SimulationSummary> {
    let total = outcomes.len();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    let mut failed = 0;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => ok.push(r),
            Err(e) => {
                failed += 1;
                if failures.len() < MAX_REPORTED_FAILURES {
                    failures.push(format!("replication {i}: {e}"));
                }
            }
        }
    }
    if failed * 10 > total || ok.is_empty() {
        return Err(CureError::StudyInstability {
            failed,
            total,
            detail: failures.join("; "),
        });
    }

    let truth = cfg.truth();
    let m = ok.len() as f64;
    let parameters = truth
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let est: Vec<f64> = ok.iter().map(|r| r.report.estimates[j]).collect();
            let mean = est.iter().sum::<f64>() / m;
            let se = (ok.len() > 1)
                .then(|| (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt());
            let ese = ok.iter().map(|r| r.report.se[j]).sum::<f64>() / m;
            let covered = ok
                .iter()
                .filter(|r| r.report.ci_low[j] <= t && t <= r.report.ci_high[j])
                .count();
            ParameterSummary {
                parameter: PARAMETER_NAMES[j].into(),
                truth: t,
                bias: mean - t,
                se,
                ese,
                cp: covered as f64 / m,
                n_success: ok.len(),
                n_fail: failed,
            }
        })
        .collect();
    Ok(SimulationSummary {
        config: cfg.clone(),
        parameters,
        max_incidence_residual: ok.iter().map(|r| r.score_residual.0).fold(0.0, f64::max),
        max_latency_residual: ok.iter().map(|r| r.score_residual.1).fold(0.0, f64::max),
        mean_censoring_fraction: ok.iter().map(|r| r.censoring_fraction).sum::<f64>() / m,
        failures,
    })
}

/// Aligned-column table with four decimals.
pub fn format_summary(summary: &SimulationSummary) -> String {
    let mut out = String::new();
    let cfg = &summary.config;
    let _ = writeln!(
        out,
        "n = {}, reps = {}, seed = {}, se = {:?}",
        cfg.n, cfg.reps, cfg.seed, cfg.se_method
    );
    let _ = writeln!(
        out,
        "{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>8}{:>6}",
        "parameter", "truth", "bias", "SE", "ESE", "CP", "ok", "fail"
    );
    for p in &summary.parameters {
        let se = p.se.map_or_else(|| "NA".to_string(), |s| format!("{s:.4}"));
        let _ = writeln!(
            out,
            "{:<10}{:>10.4}{:>10.4}{:>10}{:>10.4}{:>10.4}{:>8}{:>6}",
            p.parameter, p.truth, p.bias, se, p.ese, p.cp, p.n_success, p.n_fail
        );
    }
    out
}
