//! Episodic natural actor-critic with experience replay.
//!
//! The natural gradient is estimated without forming the Fisher matrix:
//! regress each episode's off-policy return at t=0 on its summed score
//! features,
//!
//! ```text
//! R̄₀ⁿ ≈ [Σ_t ∇θ log π(a_tⁿ|b_tⁿ)]ᵀ · Δθ_NG + C
//! ```
//!
//! and ascend θ by the least-squares solution Δθ_NG. The intercept C
//! estimates the baseline, so no value network is needed.
//!
//! The regression is solved by ridge-regularized normal equations on
//! centered data (C itself is unregularized and recovered from the means).
//! With more parameters than episodes — the usual case — the dual n×n
//! system is solved instead; both routes give the identical ridge
//! solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::acer::{is_weight, normalize_episode, off_policy_returns};
use crate::nn::{AdamState, Gradient, NetworkParams};
use crate::replay::{Episode, ReplayPool};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnacConfig {
    pub gamma: f64,
    pub ridge: f64,
    pub is_clip: (f64, f64),
    pub batch_episodes: usize,
    pub update_period_dialogues: usize,
    pub warmup_samples: usize,
    pub rmax_abs: f64,
}

impl Default for EnacConfig {
    fn default() -> Self {
        EnacConfig {
            gamma: 0.99,
            ridge: 1e-6,
            is_clip: (0.8, 1.0),
            batch_episodes: 64,
            update_period_dialogues: 2,
            warmup_samples: 192,
            rmax_abs: 1.0,
        }
    }
}

/// One regression row: summed score features and the episode return.
#[derive(Debug, Clone)]
pub struct EnacRow {
    pub psi: Gradient,
    pub rbar0: f64,
}

/// A batch of episodes prepared for the least-squares solve.
#[derive(Debug, Clone)]
pub struct EnacBatch {
    pub rows: Vec<EnacRow>,
}

impl EnacBatch {
    pub fn new(rows: Vec<EnacRow>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::UnsupportedConfig(
                "natural-gradient batch needs at least 2 episodes".into(),
            ));
        }
        let dim = rows[0].psi.len();
        if rows.iter().any(|r| r.psi.len() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: 0,
            });
        }
        Ok(EnacBatch { rows })
    }

    pub fn n_episodes(&self) -> usize {
        self.rows.len()
    }

    pub fn param_dim(&self) -> usize {
        self.rows[0].psi.len()
    }
}

/// Σ_t ∇θ log π(a_t|b_t) over one episode, at the current parameters.
pub fn episode_features(ep: &Episode, policy: &NetworkParams) -> Result<Gradient> {
    if ep.is_empty() {
        return Err(Error::UnsupportedConfig(
            "cannot extract features from an empty episode".into(),
        ));
    }
    let mut psi = Gradient::zeros(policy.len());
    for step in &ep.steps {
        let g = policy.grad_log_prob(&step.belief, step.action)?;
        psi.add_scaled(&g, 1.0);
    }
    Ok(psi)
}

/// Diagnostics of one natural-gradient solve.
#[derive(Debug, Clone, Default)]
pub struct EnacerDiag {
    pub residual_norm: f64,
    pub delta_norm: f64,
    pub effective_rank: usize,
}

/// Least-squares estimate of (Δθ_NG, C) from a batch.
pub fn solve_natural_gradient(batch: &EnacBatch, ridge: f64) -> Result<(Gradient, f64)> {
    let (delta, c, _) = solve_natural_gradient_diag(batch, ridge)?;
    Ok((delta, c))
}

pub fn solve_natural_gradient_diag(
    batch: &EnacBatch,
    ridge: f64,
) -> Result<(Gradient, f64, EnacerDiag)> {
    if ridge < 0.0 {
        return Err(Error::UnsupportedConfig("ridge must be ≥ 0".into()));
    }
    let n = batch.n_episodes();
    let p = batch.param_dim();

    // center features and returns; the intercept absorbs the means
    let mut psi_mean = vec![0.0; p];
    for row in &batch.rows {
        for (m, v) in psi_mean.iter_mut().zip(&row.psi.values) {
            *m += v / n as f64;
        }
    }
    let r_mean: f64 = batch.rows.iter().map(|r| r.rbar0).sum::<f64>() / n as f64;
    let centered: Vec<Vec<f64>> = batch
        .rows
        .iter()
        .map(|row| {
            row.psi
                .values
                .iter()
                .zip(&psi_mean)
                .map(|(v, m)| v - m)
                .collect()
        })
        .collect();
    let r_centered: Vec<f64> = batch.rows.iter().map(|row| row.rbar0 - r_mean).collect();

    let (delta_vals, effective_rank) = if p <= n {
        // primal normal equations: (Ψ_cᵀΨ_c + λI) Δ = Ψ_cᵀ R_c
        let mut a = DMatrix::zeros(p, p);
        for row in &centered {
            for i in 0..p {
                for j in 0..p {
                    a[(i, j)] += row[i] * row[j];
                }
            }
        }
        let rank = effective_rank_of(&a);
        for i in 0..p {
            a[(i, i)] += ridge;
        }
        let mut b = DVector::zeros(p);
        for (row, &rc) in centered.iter().zip(&r_centered) {
            for i in 0..p {
                b[i] += row[i] * rc;
            }
        }
        let solution = solve_spd(a, b)?;
        (solution.iter().cloned().collect::<Vec<f64>>(), rank)
    } else {
        // dual: Δ = Ψ_cᵀ (Ψ_cΨ_cᵀ + λI)⁻¹ R_c. Centering makes the kernel
        // singular, so a strictly positive ridge is required.
        if ridge == 0.0 {
            return Err(Error::SingularSystem);
        }
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let dot: f64 = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, b)| a * b)
                    .sum();
                k[(i, j)] = dot;
                k[(j, i)] = dot;
            }
        }
        let rank = effective_rank_of(&k);
        for i in 0..n {
            k[(i, i)] += ridge;
        }
        let coeffs = solve_spd(k, DVector::from_vec(r_centered.clone()))?;
        let mut delta = vec![0.0; p];
        for (row, &a) in centered.iter().zip(coeffs.iter()) {
            for (d, v) in delta.iter_mut().zip(row) {
                *d += a * v;
            }
        }
        (delta, rank)
    };

    let c = r_mean
        - psi_mean
            .iter()
            .zip(&delta_vals)
            .map(|(m, d)| m * d)
            .sum::<f64>();
    let delta = Gradient { values: delta_vals };

    let residual_norm = batch
        .rows
        .iter()
        .map(|row| {
            let pred = row.psi.dot(&delta) + c;
            (row.rbar0 - pred) * (row.rbar0 - pred)
        })
        .sum::<f64>()
        .sqrt();
    let diag = EnacerDiag {
        residual_norm,
        delta_norm: delta.norm(),
        effective_rank,
    };
    Ok((delta, c, diag))
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&b));
    }
    a.lu().solve(&b).ok_or(Error::SingularSystem)
}

fn effective_rank_of(m: &DMatrix<f64>) -> usize {
    let eigen = m.clone().symmetric_eigen();
    let max = eigen
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    eigen
        .eigenvalues
        .iter()
        .filter(|v| v.abs() > 1e-10 * max)
        .count()
}

/// One eNACER update: sample episodes, build the regression with
/// clipped-ρ off-policy returns at t=0, solve and ascend.
pub fn enacer_update<R: rand::Rng>(
    pool: &ReplayPool<Episode>,
    rng: &mut R,
    policy: &mut NetworkParams,
    cfg: &EnacConfig,
    opt: &mut AdamState,
) -> Result<EnacerDiag> {
    let sampled = pool.sample(cfg.batch_episodes, rng)?;
    let mut rows = Vec::with_capacity(sampled.len());
    for ep in sampled {
        let ep = normalize_episode(ep, cfg.rmax_abs);
        let rhos: Vec<f64> = ep
            .steps
            .iter()
            .map(|s| {
                let eval = policy.policy_forward(&s.belief)?;
                is_weight(eval.probs[s.action], s.mu_prob, cfg.is_clip)
            })
            .collect::<Result<_>>()?;
        let rbar0 = off_policy_returns(&ep.rewards(), &rhos, cfg.gamma)[0];
        let psi = episode_features(&ep, policy)?;
        rows.push(EnacRow { psi, rbar0 });
    }
    let batch = EnacBatch::new(rows)?;
    let (delta, _c, diag) = solve_natural_gradient_diag(&batch, cfg.ridge)?;
    opt.step(policy, &delta, true)?;
    Ok(diag)
}
