//! Independent oracles and random fixtures for the acceptance suite.
//!
//! Nothing here calls into the risk-set code under test: the Cox oracle
//! recomputes every risk set by brute force.

#![allow(dead_code, clippy::needless_range_loop)]

use curefit_core::{CureDataset, SubjectRecord};
use ndarray::Array1;
use rand::Rng;

/// Random small dataset: tied times on a 0.1 grid, two continuous latency
/// covariates, at least one event and one censored subject.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize) -> CureDataset {
    loop {
        let records: Vec<SubjectRecord> = (0..n)
            .map(|_| {
                let x1 = rng.random_range(-1.0..1.0);
                let x2 = rng.random_range(0.0..2.0);
                let time = (rng.random_range(0.05..3.0f64) * 10.0).round() / 10.0;
                SubjectRecord {
                    time,
                    event: rng.random_bool(0.65),
                    w: vec![1.0, x1, x2],
                    z: vec![x1, x2],
                }
            })
            .collect();
        let events = records.iter().filter(|r| r.event).count();
        if events == 0 || events == n {
            continue;
        }
        return CureDataset::new(
            records,
            vec!["Intercept".into(), "x1".into(), "x2".into()],
            vec!["x1".into(), "x2".into()],
        )
        .unwrap();
    }
}

/// Events get weight 1, censored subjects a random weight in [0.1, 1].
pub fn random_gamma<R: Rng>(rng: &mut R, data: &CureDataset) -> Array1<f64> {
    (0..data.n())
        .map(|i| {
            if data.event(i) {
                1.0
            } else {
                rng.random_range(0.1..=1.0)
            }
        })
        .collect()
}

/// Gaussian elimination with partial pivoting; `a` is row-major k x k.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..k {
            let f = a[row][col] / a[col][col];
            for c in col..k {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let s: f64 = (row + 1..k).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub struct CoxOracle {
    pub beta: Vec<f64>,
    /// Distinct event times and the Breslow cumulative hazard at each.
    pub times: Vec<f64>,
    pub cumulative: Vec<f64>,
}

/// Classical Cox regression with Breslow ties: Newton on the partial
/// likelihood with its analytic Hessian, risk sets recomputed per event.
pub fn cox_oracle(data: &CureDataset) -> CoxOracle {
    let n = data.n();
    let p = data.z_dim();
    let z: Vec<Vec<f64>> = (0..n).map(|i| data.record(i).z.clone()).collect();
    let t: Vec<f64> = (0..n).map(|i| data.time(i)).collect();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let w: Vec<f64> = z
            .iter()
            .map(|zi| zi.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().exp())
            .collect();
        let mut grad = vec![0.0; p];
        let mut info = vec![vec![0.0; p]; p];
        for i in (0..n).filter(|&i| data.event(i)) {
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![vec![0.0; p]; p];
            for l in (0..n).filter(|&l| t[l] >= t[i]) {
                s0 += w[l];
                for a in 0..p {
                    s1[a] += w[l] * z[l][a];
                    for b in 0..p {
                        s2[a][b] += w[l] * z[l][a] * z[l][b];
                    }
                }
            }
            for a in 0..p {
                grad[a] += z[i][a] - s1[a] / s0;
                for b in 0..p {
                    info[a][b] += s2[a][b] / s0 - s1[a] * s1[b] / (s0 * s0);
                }
            }
        }
        let step = solve(info, grad.clone());
        for a in 0..p {
            beta[a] += step[a];
        }
        if grad.iter().all(|g| g.abs() < 1e-12) {
            break;
        }
    }

    let w: Vec<f64> = z
        .iter()
        .map(|zi| zi.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let mut times: Vec<f64> = (0..n).filter(|&i| data.event(i)).map(|i| t[i]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut acc = 0.0;
    let cumulative = times
        .iter()
        .map(|&s| {
            let d = (0..n).filter(|&i| data.event(i) && t[i] == s).count() as f64;
            let s0: f64 = (0..n).filter(|&l| t[l] >= s).map(|l| w[l]).sum();
            acc += d / s0;
            acc
        })
        .collect();
    CoxOracle {
        beta,
        times,
        cumulative,
    }
}
