//! Standard errors from the empirical information of the profile scores,
//! with a nonparametric bootstrap for comparison.
//!
//! The analytic route stacks, per subject, the incidence score and the
//! latency profile score evaluated at the fit, forms `I = n^-1 sum phi phi'`
//! and reports `sqrt(diag(I^-1) / n)`.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CureDataset;
use crate::em::{fit, CureFit, EmControl};
use crate::error::{CureError, Result};
use crate::latency::profile_score;
use crate::linalg;
use crate::logistic::logistic_score_rows;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockMode {
    /// Invert the full stacked information, keeping cross-block terms.
    #[default]
    Stacked,
    /// Invert the incidence and latency blocks independently.
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    #[default]
    Analytic,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Incidence,
    Latency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLabel {
    pub component: Component,
    pub name: String,
}

/// Estimates, standard errors and 95% Wald intervals, incidence first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub labels: Vec<ParamLabel>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Empirical information matrix (analytic method only).
    pub info_matrix: Option<Vec<Vec<f64>>>,
    /// Estimated covariance of the estimates.
    pub covariance: Vec<Vec<f64>>,
    pub method: SeMethod,
    pub block_mode: Option<BlockMode>,
    pub bootstrap_success: Option<usize>,
    pub bootstrap_failed: Option<usize>,
}

impl InferenceReport {
    pub fn dim_incidence(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| l.component == Component::Incidence)
            .count()
    }
}

/// `estimate -/+ 1.959964 se`.
pub fn wald_ci(estimate: f64, se: f64) -> (f64, f64) {
    (estimate - Z_95 * se, estimate + Z_95 * se)
}

fn labels(data: &CureDataset) -> Vec<ParamLabel> {
    let inc = data.w_names().iter().map(|n| ParamLabel {
        component: Component::Incidence,
        name: n.clone(),
    });
    let lat = data.z_names().iter().map(|n| ParamLabel {
        component: Component::Latency,
        name: n.clone(),
    });
    inc.chain(lat).collect()
}

pub(crate) fn estimates(fit: &CureFit) -> Array1<f64> {
    concatenate![Axis(0), fit.b, fit.beta]
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// Per-subject stacked scores `[phi_l | phi_s]`, n x (dim b + dim beta),
/// at the fitted coefficients and final cure weights.
pub fn stacked_scores(fit: &CureFit, data: &CureDataset) -> Result<Array2<f64>> {
    let incidence = logistic_score_rows(fit.b.view(), fit.gamma.view(), data)?;
    let latency = profile_score(fit.beta.view(), fit.gamma.view(), data)?;
    Ok(concatenate![Axis(1), incidence, latency])
}

/// Information, covariance and standard errors from a score matrix whose
/// first `dim_b` columns belong to the incidence block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInformation {
    pub info: Array2<f64>,
    pub covariance: Array2<f64>,
    pub se: Array1<f64>,
}

pub fn information_from_scores(
    scores: &Array2<f64>,
    dim_b: usize,
    mode: BlockMode,
) -> Result<ScoreInformation> {
    let (n, k) = scores.dim();
    if n <= k {
        return Err(CureError::Config(format!(
            "need more subjects ({n}) than parameters ({k}) for the information matrix"
        )));
    }
    let nf = n as f64;
    let mut info = scores.t().dot(scores) / nf;
    // exact symmetry
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (info[[i, j]] + info[[j, i]]);
            info[[i, j]] = v;
            info[[j, i]] = v;
        }
    }
    let inverse = match mode {
        BlockMode::Stacked => linalg::spd_inverse(&info)?,
        BlockMode::Separate => {
            let mut inv = Array2::zeros((k, k));
            let top = linalg::spd_inverse(&info.slice(s![..dim_b, ..dim_b]).to_owned())?;
            let bottom = linalg::spd_inverse(&info.slice(s![dim_b.., dim_b..]).to_owned())?;
            inv.slice_mut(s![..dim_b, ..dim_b]).assign(&top);
            inv.slice_mut(s![dim_b.., dim_b..]).assign(&bottom);
            inv
        }
    };
    let covariance = inverse / nf;
    let se = covariance.diag().mapv(f64::sqrt);
    Ok(ScoreInformation {
        info,
        covariance,
        se,
    })
}

/// Analytic standard errors from the empirical efficient information.
pub fn analytic_se(fit: &CureFit, data: &CureDataset, mode: BlockMode) -> Result<InferenceReport> {
    let scores = stacked_scores(fit, data)?;
    let info = information_from_scores(&scores, data.w_dim(), mode)?;
    let est = estimates(fit);
    let (ci_low, ci_high) = est
        .iter()
        .zip(&info.se)
        .map(|(&e, &se)| wald_ci(e, se))
        .unzip();
    Ok(InferenceReport {
        labels: labels(data),
        estimates: est.to_vec(),
        se: info.se.to_vec(),
        ci_low,
        ci_high,
        info_matrix: Some(to_rows(&info.info)),
        covariance: to_rows(&info.covariance),
        method: SeMethod::Analytic,
        block_mode: Some(mode),
        bootstrap_success: None,
        bootstrap_failed: None,
    })
}

fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn bootstrap_replicate(
    data: &CureDataset,
    ctrl: &EmControl,
    seed: u64,
    stream: u64,
) -> Option<Array1<f64>> {
    let mut rng = replicate_rng(seed, stream);
    let n = data.n();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let sample = data.resample(&idx).ok()?;
    match fit(&sample, ctrl) {
        Ok(f) if f.converged => Some(estimates(&f)),
        _ => None,
    }
}

/// Bootstrap standard errors around an existing fit, one replicate per
/// entry of `streams`. Replicate `k` draws from the ChaCha8 stream
/// `streams[k]` under `seed`, so results do not depend on scheduling.
pub fn bootstrap_se_with_streams(
    point: &CureFit,
    data: &CureDataset,
    ctrl: &EmControl,
    seed: u64,
    streams: &[u64],
) -> Result<InferenceReport> {
    if streams.len() < 2 {
        return Err(CureError::Config(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    let draws: Vec<Option<Array1<f64>>> = streams
        .par_iter()
        .map(|&stream| bootstrap_replicate(data, ctrl, seed, stream))
        .collect();
    let total = draws.len();
    let ok: Vec<Array1<f64>> = draws.into_iter().flatten().collect();
    let failed = total - ok.len();
    if failed * 5 > total || ok.len() < 2 {
        return Err(CureError::BootstrapInstability { failed, total });
    }

    let k = ok[0].len();
    let m = ok.len() as f64;
    let mut mean = Array1::zeros(k);
    for est in &ok {
        mean += est;
    }
    mean /= m;
    let mut cov = Array2::<f64>::zeros((k, k));
    for est in &ok {
        let dev = est - &mean;
        for i in 0..k {
            for j in 0..k {
                cov[[i, j]] += dev[i] * dev[j];
            }
        }
    }
    cov /= m - 1.0;
    let se = cov.diag().mapv(f64::sqrt);
    let est = estimates(point);
    let (ci_low, ci_high) = est.iter().zip(&se).map(|(&e, &s)| wald_ci(e, s)).unzip();
    Ok(InferenceReport {
        labels: labels(data),
        estimates: est.to_vec(),
        se: se.to_vec(),
        ci_low,
        ci_high,
        info_matrix: None,
        covariance: to_rows(&cov),
        method: SeMethod::Bootstrap,
        block_mode: None,
        bootstrap_success: Some(ok.len()),
        bootstrap_failed: Some(failed),
    })
}

/// Bootstrap standard errors around a fit computed on `data`.
pub fn bootstrap_se_for(
    point: &CureFit,
    data: &CureDataset,
    ctrl: &EmControl,
    reps: usize,
    seed: u64,
) -> Result<InferenceReport> {
    let streams: Vec<u64> = (0..reps as u64).collect();
    bootstrap_se_with_streams(point, data, ctrl, seed, &streams)
}

/// Fits `data`, then resamples subjects `reps` times and refits each sample.
pub fn bootstrap_se(
    data: &CureDataset,
    ctrl: &EmControl,
    reps: usize,
    seed: u64,
) -> Result<InferenceReport> {
    let point = fit(data, ctrl)?;
    bootstrap_se_for(&point, data, ctrl, reps, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn wald_examples() {
        let (lo, hi) = wald_ci(1.3703, 0.2698);
        assert!(
            (lo - 0.8414).abs() < 2e-4 && (hi - 1.8991).abs() < 2e-4,
            "{lo} {hi}"
        );
        let (lo, hi) = wald_ci(-0.0999, 0.1540);
        assert!(
            (lo + 0.4017).abs() < 2e-4 && (hi - 0.2019).abs() < 2e-4,
            "{lo} {hi}"
        );
        assert_eq!(wald_ci(0.37, 0.0), (0.37, 0.37));
    }

    #[test]
    fn block_modes_agree_for_orthogonal_blocks() {
        // columns 0..2 and 2..3 have zero cross products by construction
        let scores = array![
            [1.0, 0.5, 1.0],
            [-1.0, 0.5, -1.0],
            [1.0, -0.5, -1.0],
            [-1.0, -0.5, 1.0],
            [2.0, 1.0, 0.5],
            [-2.0, 1.0, -0.5],
            [2.0, -1.0, -0.5],
            [-2.0, -1.0, 0.5],
        ];
        let cross = scores
            .slice(s![.., ..2])
            .t()
            .dot(&scores.slice(s![.., 2..]));
        assert!(cross.iter().all(|v: &f64| v.abs() < 1e-15));
        let a = information_from_scores(&scores, 2, BlockMode::Stacked).unwrap();
        let b = information_from_scores(&scores, 2, BlockMode::Separate).unwrap();
        for (x, y) in a.se.iter().zip(&b.se) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicating_rows_scales_se() {
        let scores = array![
            [1.0, 0.2],
            [-0.4, 1.0],
            [0.3, -0.7],
            [-0.9, -0.5],
            [0.1, 0.6]
        ];
        let doubled = concatenate![Axis(0), scores, scores];
        let a = information_from_scores(&scores, 1, BlockMode::Stacked).unwrap();
        let b = information_from_scores(&doubled, 1, BlockMode::Stacked).unwrap();
        assert!((&a.info - &b.info).iter().all(|v: &f64| v.abs() < 1e-12));
        for (x, y) in a.se.iter().zip(&b.se) {
            assert!((y - x / 2f64.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_information_is_reported() {
        let scores = array![[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]];
        assert!(matches!(
            information_from_scores(&scores, 1, BlockMode::Stacked),
            Err(CureError::RankDeficient { .. })
        ));
        let few = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(information_from_scores(&few, 1, BlockMode::Stacked).is_err());
    }

    fn cure_data() -> CureDataset {
        let cfg = crate::simulation::SimConfig {
            seed: 3,
            ..Default::default()
        };
        crate::simulation::generate_dataset(&cfg, 0).unwrap()
    }

    #[test]
    fn identical_streams_give_zero_se() {
        let d = cure_data();
        let ctrl = EmControl {
            zero_tail: true,
            ..EmControl::default()
        };
        let point = fit(&d, &ctrl).unwrap();
        let report = bootstrap_se_with_streams(&point, &d, &ctrl, 9, &[4, 4]).unwrap();
        assert!(report.se.iter().all(|&s| s == 0.0), "{:?}", report.se);
        assert_eq!(report.bootstrap_success, Some(2));
    }

    #[test]
    fn analytic_report_is_consistent() {
        let d = cure_data();
        let f = fit(&d, &EmControl::default()).unwrap();
        let r = analytic_se(&f, &d, BlockMode::Stacked).unwrap();
        assert_eq!(r.labels.len(), 5);
        assert_eq!(r.dim_incidence(), 3);
        let info = r.info_matrix.as_ref().unwrap();
        for (i, row) in info.iter().enumerate() {
            assert!(r.ci_low[i] < r.estimates[i] && r.estimates[i] < r.ci_high[i]);
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, info[j][i]);
            }
            assert!((r.se[i] - (r.covariance[i][i]).sqrt()).abs() < 1e-15);
        }
    }
}
