//! Cure-weighted Cox machinery for the latency part: the profiled
//! Breslow-type baseline hazard, conditional survival, the profile
//! log-likelihood and its score in the regression coefficients.
//!
//! Risk sets follow `Y(t) = 1{T >= t}`. Tied event times share one jump whose
//! size is the number of tied events over the weighted risk sum (Breslow).

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::CureDataset;
use crate::error::{CureError, Result};
use crate::linalg;
use crate::logistic::{sup_norm, SolverControl};

/// Weighted risk sums at or below this value are treated as empty.
pub const RISK_FLOOR: f64 = 1e-300;

/// Right-continuous step function for the baseline cumulative hazard of the
/// susceptible subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    /// Distinct event times, ascending.
    pub jump_times: Vec<f64>,
    /// Increment at each jump time.
    pub jumps: Vec<f64>,
    /// Running sum of `jumps`.
    pub cumulative: Vec<f64>,
}

impl BaselineHazard {
    fn from_jumps(jump_times: Vec<f64>, jumps: Vec<f64>) -> Self {
        let cumulative = jumps
            .iter()
            .scan(0.0, |acc, j| {
                *acc += j;
                Some(*acc)
            })
            .collect();
        Self {
            jump_times,
            jumps,
            cumulative,
        }
    }

    /// Number of jump times `<= t`.
    fn count_upto(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t)
    }

    /// `Lambda(t)`, including a jump located exactly at `t`.
    pub fn cumulative_at(&self, t: f64) -> f64 {
        match self.count_upto(t) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    /// Increment at `t` if `t` is a jump time.
    pub fn jump_at(&self, t: f64) -> Option<f64> {
        let k = self.count_upto(t);
        (k > 0 && self.jump_times[k - 1] == t).then(|| self.jumps[k - 1])
    }

    pub fn last_jump_time(&self) -> Option<f64> {
        self.jump_times.last().copied()
    }
}

/// Latency coefficients with the baseline hazard profiled at them.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyState {
    pub beta: Array1<f64>,
    pub hazard: BaselineHazard,
    /// `e^{beta'Z_i}` per record.
    pub risk_scores: Array1<f64>,
    pub iterations: usize,
}

/// Weighted risk-set sums at each distinct event time.
struct RiskSets {
    times: Vec<f64>,
    deaths: Vec<f64>,
    /// `sum_l gamma_l Y_l(t_k) e^{beta'Z_l}`
    s0: Vec<f64>,
    /// `sum_l gamma_l Y_l(t_k) Z_l e^{beta'Z_l}`, row per event time
    s1: Array2<f64>,
    /// `e^{beta'Z_i}`
    risk: Array1<f64>,
    /// `beta'Z_i`
    eta: Array1<f64>,
}

impl RiskSets {
    fn build(beta: ArrayView1<f64>, gamma: ArrayView1<f64>, data: &CureDataset) -> Result<Self> {
        check_dims(beta, gamma, data)?;
        let p = data.z_dim();
        let z = data.z();
        let eta = z.dot(&beta);
        let risk = eta.mapv(f64::exp);
        let order = data.sort_index();

        let mut times = Vec::new();
        let mut deaths = Vec::new();
        let mut s0 = Vec::new();
        let mut s1_rows: Vec<Vec<f64>> = Vec::new();
        let mut acc0 = 0.0;
        let mut acc1 = vec![0.0; p];
        // walk tie groups from the largest time down, accumulating the risk set
        let mut end = order.len();
        while end > 0 {
            let t = data.time(order[end - 1]);
            let mut start = end - 1;
            while start > 0 && data.time(order[start - 1]) == t {
                start -= 1;
            }
            let mut d = 0.0;
            for &i in &order[start..end] {
                let wr = gamma[i] * risk[i];
                acc0 += wr;
                for (a, zj) in acc1.iter_mut().zip(z.row(i)) {
                    *a += wr * zj;
                }
                if data.event(i) {
                    d += 1.0;
                }
            }
            if d > 0.0 {
                if acc0.is_nan() || acc0 <= RISK_FLOOR || acc0.is_infinite() {
                    return Err(CureError::DegenerateRiskSet {
                        time: t,
                        denominator: acc0,
                    });
                }
                times.push(t);
                deaths.push(d);
                s0.push(acc0);
                s1_rows.push(acc1.clone());
            }
            end = start;
        }
        times.reverse();
        deaths.reverse();
        s0.reverse();
        s1_rows.reverse();
        let k = times.len();
        let s1 = Array2::from_shape_fn((k, p), |(r, c)| s1_rows[r][c]);
        Ok(Self {
            times,
            deaths,
            s0,
            s1,
            risk,
            eta,
        })
    }

    fn hazard(&self) -> BaselineHazard {
        let jumps = self
            .deaths
            .iter()
            .zip(&self.s0)
            .map(|(d, s)| d / s)
            .collect();
        BaselineHazard::from_jumps(self.times.clone(), jumps)
    }
}

fn check_dims(beta: ArrayView1<f64>, gamma: ArrayView1<f64>, data: &CureDataset) -> Result<()> {
    if beta.len() != data.z_dim() {
        return Err(CureError::DimensionMismatch {
            expected: data.z_dim(),
            found: beta.len(),
        });
    }
    if gamma.len() != data.n() {
        return Err(CureError::DimensionMismatch {
            expected: data.n(),
            found: gamma.len(),
        });
    }
    if let Some(g) = gamma.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(CureError::Config(format!("weight {g} outside [0, 1]")));
    }
    Ok(())
}

/// Cure-weighted Breslow estimator of the baseline cumulative hazard.
pub fn breslow_hazard(
    beta: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    data: &CureDataset,
) -> Result<BaselineHazard> {
    Ok(RiskSets::build(beta, gamma, data)?.hazard())
}

/// Susceptible survival `exp(-Lambda(t) e^{beta'z})`.
pub fn conditional_survival(t: f64, z: ArrayView1<f64>, state: &LatencyState) -> f64 {
    let eta = z.dot(&state.beta);
    (-state.hazard.cumulative_at(t) * eta.exp()).exp()
}

/// Profile log-likelihood of the latency part with the baseline hazard
/// re-profiled at `beta`:
/// `sum_i gamma_i [delta_i (log dLambda(T_i) + beta'Z_i) - e^{beta'Z_i} Lambda(T_i)]`.
pub fn profile_loglik(
    beta: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    data: &CureDataset,
) -> Result<f64> {
    let rs = RiskSets::build(beta, gamma, data)?;
    let hazard = rs.hazard();
    let mut total = 0.0;
    for i in 0..data.n() {
        let t = data.time(i);
        let mut term = -rs.risk[i] * hazard.cumulative_at(t);
        if data.event(i) {
            let jump = hazard.jump_at(t).expect("event times carry a jump");
            term += jump.ln() + rs.eta[i];
        }
        total += gamma[i] * term;
    }
    Ok(total)
}

/// Per-subject profile score rows (n x dim beta):
/// `gamma_i { delta_i [Z_i - zbar(T_i)] - e^{beta'Z_i} sum_{t_k <= T_i} [Z_i - zbar(t_k)] dLambda(t_k) }`
/// with `zbar = S1 / S0` over the weighted risk set.
pub fn profile_score(
    beta: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    data: &CureDataset,
) -> Result<Array2<f64>> {
    let rs = RiskSets::build(beta, gamma, data)?;
    Ok(score_rows(&rs, gamma, data))
}

fn score_rows(rs: &RiskSets, gamma: ArrayView1<f64>, data: &CureDataset) -> Array2<f64> {
    let p = data.z_dim();
    let k = rs.times.len();
    // cumulative sums of dLambda and zbar * dLambda over jump times
    let mut cum_haz = vec![0.0; k];
    let mut cum_zbar = Array2::zeros((k, p));
    let mut acc = 0.0;
    let mut acc_z = vec![0.0; p];
    for m in 0..k {
        let jump = rs.deaths[m] / rs.s0[m];
        acc += jump;
        cum_haz[m] = acc;
        for j in 0..p {
            acc_z[j] += rs.s1[[m, j]] / rs.s0[m] * jump;
            cum_zbar[[m, j]] = acc_z[j];
        }
    }

    let z = data.z();
    let mut rows = Array2::zeros((data.n(), p));
    for i in 0..data.n() {
        let t = data.time(i);
        let upto = rs.times.partition_point(|&s| s <= t);
        let mut row = rows.row_mut(i);
        if upto > 0 {
            let m = upto - 1;
            for j in 0..p {
                row[j] = -rs.risk[i] * (z[[i, j]] * cum_haz[m] - cum_zbar[[m, j]]);
            }
            if data.event(i) {
                for j in 0..p {
                    row[j] += z[[i, j]] - rs.s1[[m, j]] / rs.s0[m];
                }
            }
        }
        row *= gamma[i];
    }
    rows
}

/// Column sums of [`profile_score`].
pub fn profile_score_sums(
    beta: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    data: &CureDataset,
) -> Result<Array1<f64>> {
    Ok(profile_score(beta, gamma, data)?.sum_axis(ndarray::Axis(0)))
}

/// Efficient score rows evaluated by direct plug-in of the empirical
/// `M0(u) = n^-1 sum_l gamma_l Y_l(u) e^{beta'Z_l}`, `M1(u)` (same with `Z_l`)
/// and `dLambda(u) = n^-1 sum_l dN_l(u) / M0(u)`.
///
/// Every quantity is recomputed by brute force over all subjects, O(n^2 p),
/// independently of the sorted risk-set sweep behind [`profile_score`].
pub fn efficient_score_plug_in(
    beta: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    data: &CureDataset,
) -> Result<Array2<f64>> {
    check_dims(beta, gamma, data)?;
    let n = data.n();
    let nf = n as f64;
    let p = data.z_dim();
    let z = data.z();
    let eb: Vec<f64> = (0..n).map(|i| z.row(i).dot(&beta).exp()).collect();

    let m0 = |u: f64| -> f64 {
        (0..n)
            .filter(|&l| data.time(l) >= u)
            .map(|l| gamma[l] * eb[l])
            .sum::<f64>()
            / nf
    };
    let m1 = |u: f64| -> Vec<f64> {
        let mut out = vec![0.0; p];
        for l in (0..n).filter(|&l| data.time(l) >= u) {
            for (j, o) in out.iter_mut().enumerate() {
                *o += gamma[l] * z[[l, j]] * eb[l];
            }
        }
        out.iter().map(|v| v / nf).collect()
    };

    let mut event_times: Vec<f64> = (0..n)
        .filter(|&i| data.event(i))
        .map(|i| data.time(i))
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut zbar = Vec::with_capacity(event_times.len());
    let mut dlambda = Vec::with_capacity(event_times.len());
    for &u in &event_times {
        let dn = (0..n)
            .filter(|&l| data.event(l) && data.time(l) == u)
            .count() as f64
            / nf;
        let mz = m0(u);
        if (mz * nf).is_nan() || mz * nf <= RISK_FLOOR {
            return Err(CureError::DegenerateRiskSet {
                time: u,
                denominator: mz * nf,
            });
        }
        zbar.push(m1(u).into_iter().map(|v| v / mz).collect::<Vec<_>>());
        dlambda.push(dn / mz);
    }

    let mut rows = Array2::zeros((n, p));
    for i in 0..n {
        let t = data.time(i);
        for j in 0..p {
            let mut integral = 0.0;
            for (k, &u) in event_times.iter().enumerate() {
                if u <= t {
                    integral += (z[[i, j]] - zbar[k][j]) * dlambda[k];
                }
            }
            let mut value = -eb[i] * integral;
            if data.event(i) {
                let k = event_times
                    .iter()
                    .position(|&u| u == t)
                    .expect("event time");
                value += z[[i, j]] - zbar[k][j];
            }
            rows[[i, j]] = gamma[i] * value;
        }
    }
    Ok(rows)
}

fn fd_jacobian(
    beta: &Array1<f64>,
    gamma: ArrayView1<f64>,
    data: &CureDataset,
) -> Result<Array2<f64>> {
    let p = beta.len();
    let mut jac = Array2::zeros((p, p));
    for j in 0..p {
        let h = 1e-5 * beta[j].abs().max(1.0);
        let mut up = beta.clone();
        up[j] += h;
        let mut down = beta.clone();
        down[j] -= h;
        let diff = (profile_score_sums(up.view(), gamma, data)?
            - profile_score_sums(down.view(), gamma, data)?)
            / (2.0 * h);
        jac.column_mut(j).assign(&diff);
    }
    Ok((&jac + &jac.t()) * 0.5)
}

/// Maximizes the profile log-likelihood in `beta` for fixed weights by Newton
/// steps on a finite-difference Hessian of the score, with step-halving.
pub fn fit_latency(
    gamma: ArrayView1<f64>,
    data: &CureDataset,
    init: ArrayView1<f64>,
    ctrl: &SolverControl,
) -> Result<LatencyState> {
    check_dims(init, gamma, data)?;
    if init.iter().any(|v| !v.is_finite()) {
        return Err(CureError::Config("non-finite initial coefficients".into()));
    }
    let mut beta = init.to_owned();
    let mut objective = profile_loglik(beta.view(), gamma, data)?;
    let mut grad_norm = f64::INFINITY;
    for iter in 0..=ctrl.max_iter {
        let grad = profile_score_sums(beta.view(), gamma, data)?;
        grad_norm = sup_norm(&grad);
        if grad_norm <= ctrl.tol {
            let rs = RiskSets::build(beta.view(), gamma, data)?;
            return Ok(LatencyState {
                hazard: rs.hazard(),
                risk_scores: rs.risk,
                beta,
                iterations: iter,
            });
        }
        if iter == ctrl.max_iter {
            break;
        }
        let neg_hessian = -fd_jacobian(&beta, gamma, data)?;
        let step = linalg::solve_spd(&neg_hessian, &grad)?;

        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..=30 {
            let candidate = &beta + &(&step * scale);
            let value = profile_loglik(candidate.view(), gamma, data)?;
            if value >= objective - 1e-12 * objective.abs().max(1.0) {
                beta = candidate;
                objective = value;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if let Some((index, &value)) = beta
            .iter()
            .enumerate()
            .find(|(_, v)| v.abs() > ctrl.divergence_bound || !v.is_finite())
        {
            return Err(CureError::Separation { index, value });
        }
        if !moved {
            break;
        }
    }
    Err(CureError::NonConvergence {
        solver: "latency profile Newton",
        iterations: ctrl.max_iter,
        gradient_norm: grad_norm,
    })
}
