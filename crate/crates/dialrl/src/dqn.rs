//! Value-based baseline: Q-learning with experience replay, a target
//! network, and optionally decoupled (double-DQN) target computation.
//!
//! The Q-network reuses the softmax-head architecture with its raw output
//! logits read as action values. Targets follow
//! `y = r + γ·max_a' Q(b', a'; w⁻)`, or with `double` the online argmax is
//! evaluated under the target network. The update minimizes the mean
//! squared error between `y` and `Q(b, a)`.

use serde::{Deserialize, Serialize};

use crate::acer::normalize_return;
use crate::nn::{AdamState, Gradient, NetworkParams};
use crate::replay::{ReplayPool, Transition};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    /// Hard-copy the online network into the target every this many updates.
    pub target_sync_period: usize,
    pub double: bool,
    pub batch_size: usize,
    pub update_period_dialogues: usize,
    pub warmup_samples: usize,
    pub rmax_abs: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            target_sync_period: 50,
            double: true,
            batch_size: 64,
            update_period_dialogues: 2,
            warmup_samples: 192,
            rmax_abs: 1.0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_sync_period == 0 {
            return Err(Error::UnsupportedConfig(
                "target sync period must be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// The less frequently updated parameter copy w⁻.
#[derive(Debug, Clone)]
pub struct TargetNetwork {
    params: NetworkParams,
}

impl TargetNetwork {
    pub fn new(online: &NetworkParams) -> Self {
        TargetNetwork {
            params: online.clone(),
        }
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }
}

/// Hard copy w⁻ := w.
pub fn sync_target(target: &mut TargetNetwork, online: &NetworkParams) -> Result<()> {
    if !target.params.spec().same_architecture(online.spec()) {
        return Err(Error::SpecMismatch);
    }
    target.params = online.clone();
    Ok(())
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Regression targets for a batch of transitions. Terminal transitions
/// bootstrap nothing; otherwise the target network evaluates either its
/// own argmax (vanilla) or the online network's argmax (double).
pub fn q_targets(
    batch: &[&Transition],
    online: &NetworkParams,
    target: &TargetNetwork,
    gamma: f64,
    double: bool,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyPool);
    }
    batch
        .iter()
        .map(|t| {
            if t.done {
                return Ok(t.reward);
            }
            let target_q = target.params.q_forward(&t.next_belief)?;
            let value = if double {
                let online_q = online.q_forward(&t.next_belief)?;
                target_q[argmax(&online_q)]
            } else {
                target_q[argmax(&target_q)]
            };
            Ok(t.reward + gamma * value)
        })
        .collect()
}

/// One Adam step on the mean squared Bellman error over a sampled batch.
/// Rewards pass through the same normalization as the policy-gradient
/// learners. Returns the batch loss.
pub fn dqn_update<R: rand::Rng>(
    pool: &ReplayPool<Transition>,
    rng: &mut R,
    online: &mut NetworkParams,
    target: &TargetNetwork,
    cfg: &DqnConfig,
    opt: &mut AdamState,
) -> Result<f64> {
    cfg.validate()?;
    let sampled = pool.sample(cfg.batch_size, rng)?;
    let normalized: Vec<Transition> = sampled
        .iter()
        .map(|t| {
            let mut t = (*t).clone();
            t.reward = normalize_return(t.reward, cfg.rmax_abs);
            t
        })
        .collect();
    let refs: Vec<&Transition> = normalized.iter().collect();
    let targets = q_targets(&refs, online, target, cfg.gamma, cfg.double)?;
    let (loss, grad) = q_loss_and_grad(&refs, &targets, online)?;
    opt.step(online, &grad, false)?;
    Ok(loss)
}

/// Mean squared error `E[(y − Q(b,a))²]` and its gradient w.r.t. the
/// online parameters, targets held fixed.
pub fn q_loss_and_grad(
    batch: &[&Transition],
    targets: &[f64],
    online: &NetworkParams,
) -> Result<(f64, Gradient)> {
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Gradient::zeros(online.len());
    for (t, &y) in batch.iter().zip(targets) {
        let (q, trace) = online.q_forward_traced(&t.belief)?;
        if t.action >= q.len() {
            return Err(Error::ActionOutOfRange {
                action: t.action,
                count: q.len(),
            });
        }
        let err = q[t.action] - y;
        loss += err * err / n;
        let g = online.grad_logit_traced(&trace, t.action)?;
        grad.add_scaled(&g, 2.0 * err / n);
    }
    Ok((loss, grad))
}
