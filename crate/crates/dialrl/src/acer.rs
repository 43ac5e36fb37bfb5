//! Advantage actor-critic updates: on-policy A2C and the off-policy
//! variant with experience replay, clipped importance-sampling
//! corrections, reward normalization and a trust-region projection of the
//! policy gradient against a running average policy (TRACER).
//!
//! Value update (off-policy):
//!   Δw = Σ_t (R̄_t − V̂(b_t)) ∇V̂(b_t) Π_{i=0}^{t} ρ_i
//! with the off-policy Monte-Carlo return
//!   R̄_t = Σ_k γ^k r_{t+k} Π_{i=1}^{k} ρ_{t+i}.
//! Policy update:
//!   Δθ = Σ_t ρ_t ∇log π(a_t|b_t) δ̂_t,   δ̂_t = r_t + γV̂(b_{t+1}) − V̂(b_t).
//! The projected gradient solves min ‖Δθ − g‖² s.t. kᵀg ≤ ξ where k is the
//! gradient of the mean KL from the average policy:
//!   g* = Δθ − max{(kᵀΔθ − ξ)/‖k‖², 0}·k.

use serde::{Deserialize, Serialize};

use crate::nn::{AdamState, Gradient, NetworkParams, PolicyEval};
use crate::replay::{Episode, ReplayPool};
use crate::{Error, Result};

/// TRACER hyperparameters. Defaults follow the training protocol:
/// γ=0.99, α=0.02, ξ=0.01, ρ clipped to [0.8,1.0], 64-episode batches,
/// one update per 2 dialogues after 192 warm-up samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracerConfig {
    pub gamma: f64,
    pub alpha_avg: f64,
    pub xi: f64,
    pub is_clip: (f64, f64),
    pub batch_episodes: usize,
    pub update_period_dialogues: usize,
    pub warmup_samples: usize,
    /// Normalization constant: rewards and returns are divided by this and
    /// clamped into [−1,1].
    pub rmax_abs: f64,
    /// Disable to recover plain A2C with experience replay.
    pub trust_region: bool,
    /// Entropy-bonus coefficient on the replayed policy gradient. Stale
    /// actions replayed with negative advantages keep inflating the
    /// favoured logits; the entropy term balances that drift at a bounded
    /// logit gap instead of letting the softmax saturate.
    pub entropy_beta: f64,
}

impl Default for TracerConfig {
    fn default() -> Self {
        TracerConfig {
            gamma: 0.99,
            alpha_avg: 0.02,
            xi: 0.01,
            is_clip: (0.8, 1.0),
            batch_episodes: 64,
            update_period_dialogues: 2,
            warmup_samples: 192,
            rmax_abs: 1.0,
            trust_region: true,
            entropy_beta: 0.01,
        }
    }
}

impl TracerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::UnsupportedConfig("gamma must be in (0,1]".into()));
        }
        if self.xi <= 0.0 {
            return Err(Error::UnsupportedConfig("xi must be positive".into()));
        }
        if !(self.is_clip.0 > 0.0 && self.is_clip.0 <= self.is_clip.1) {
            return Err(Error::UnsupportedConfig(
                "IS clip bounds must satisfy 0 < lo ≤ hi".into(),
            ));
        }
        Ok(())
    }
}

/// Running average of past policies, the trust-region anchor:
/// θ_a ← α·θ_a + (1−α)·θ after every update.
#[derive(Debug, Clone)]
pub struct AveragePolicy {
    params: NetworkParams,
}

impl AveragePolicy {
    pub fn new(policy: &NetworkParams) -> Self {
        AveragePolicy {
            params: policy.clone(),
        }
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn update(&mut self, theta: &NetworkParams, alpha: f64) {
        update_average_policy(&mut self.params, theta, alpha);
    }
}

/// One-step TD error δ = r + γ·V(b')·(1−done) − V(b).
pub fn td_error(r: f64, v: f64, v_next: f64, done: bool, gamma: f64) -> f64 {
    let bootstrap = if done { 0.0 } else { v_next };
    r + gamma * bootstrap - v
}

/// Clipped importance-sampling ratio ρ = clamp(π/μ, lo, hi).
pub fn is_weight(pi_prob: f64, mu_prob: f64, clip: (f64, f64)) -> Result<f64> {
    if mu_prob <= 0.0 {
        return Err(Error::NonPositiveBehaviourProb(mu_prob));
    }
    Ok((pi_prob / mu_prob).clamp(clip.0, clip.1))
}

/// Off-policy Monte-Carlo returns for every t in one backward pass:
/// R̄_t = r_t + γ·ρ_{t+1}·R̄_{t+1}. With ρ≡1 this is the ordinary
/// discounted return.
pub fn off_policy_returns(rewards: &[f64], rhos: &[f64], gamma: f64) -> Vec<f64> {
    debug_assert_eq!(rewards.len(), rhos.len());
    let t_max = rewards.len();
    let mut returns = vec![0.0; t_max];
    for t in (0..t_max).rev() {
        returns[t] = rewards[t]
            + if t + 1 < t_max {
                gamma * rhos[t + 1] * returns[t + 1]
            } else {
                0.0
            };
    }
    returns
}

/// Scale a reward or return into [−1,1] by `rmax_abs`, clamping (with a
/// warning) anything outside the declared bound.
pub fn normalize_return(x: f64, rmax_abs: f64) -> f64 {
    let scaled = x / rmax_abs;
    if scaled.abs() > 1.0 {
        log::warn!("return {x} exceeds declared bound {rmax_abs}; clamping");
        scaled.clamp(-1.0, 1.0)
    } else {
        scaled
    }
}

/// Episode with rewards normalized into [−1,1].
pub fn normalize_episode(ep: &Episode, rmax_abs: f64) -> Episode {
    let steps = ep
        .steps
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.reward = normalize_return(s.reward, rmax_abs);
            s
        })
        .collect();
    Episode::new(steps).expect("normalization preserves episode validity")
}

/// Off-policy value-function gradient (ascent direction on the negative
/// squared residual): Δw = Σ_t (R̄_t − V̂(b_t)) ∇V̂(b_t) Π_{i=0}^{t} ρ_i.
/// Note the weight product includes ρ_0.
pub fn value_gradient_off_policy(
    ep: &Episode,
    value: &NetworkParams,
    gamma: f64,
    rhos: &[f64],
) -> Result<Gradient> {
    let rewards = ep.rewards();
    let returns = off_policy_returns(&rewards, rhos, gamma);
    let mut grad = Gradient::zeros(value.len());
    let mut rho_prod = 1.0;
    for (t, step) in ep.steps.iter().enumerate() {
        rho_prod *= rhos[t];
        let (v, trace) = value.value_forward_traced(&step.belief)?;
        let residual = returns[t] - v;
        let g = value.grad_scalar_output_traced(&trace);
        grad.add_scaled(&g, residual * rho_prod);
    }
    Ok(grad)
}

/// Off-policy policy gradient: Δθ = Σ_t ρ_t ∇log π(a_t|b_t) δ̂_t with the
/// TD error from the current value estimate and a zero terminal bootstrap.
pub fn policy_gradient_off_policy(
    ep: &Episode,
    policy: &NetworkParams,
    value: &NetworkParams,
    gamma: f64,
    rhos: &[f64],
) -> Result<Gradient> {
    let evals: Vec<PolicyEval> = ep
        .steps
        .iter()
        .map(|s| policy.policy_forward(&s.belief))
        .collect::<Result<_>>()?;
    policy_gradient_with_evals(ep, policy, value, gamma, rhos, &evals)
}

fn policy_gradient_with_evals(
    ep: &Episode,
    policy: &NetworkParams,
    value: &NetworkParams,
    gamma: f64,
    rhos: &[f64],
    evals: &[PolicyEval],
) -> Result<Gradient> {
    let t_max = ep.len();
    let values: Vec<f64> = ep
        .steps
        .iter()
        .map(|s| value.value_forward(&s.belief))
        .collect::<Result<_>>()?;
    let mut grad = Gradient::zeros(policy.len());
    for t in 0..t_max {
        let v_next = if t + 1 < t_max { values[t + 1] } else { 0.0 };
        let delta = td_error(ep.steps[t].reward, values[t], v_next, t + 1 == t_max, gamma);
        let g = policy.grad_log_prob_traced(&evals[t], ep.steps[t].action)?;
        grad.add_scaled(&g, rhos[t] * delta);
    }
    Ok(grad)
}

/// Closed-form trust-region projection:
/// g* = Δθ − max{(kᵀΔθ − ξ)/‖k‖², 0}·k; a zero constraint gradient leaves
/// Δθ unchanged.
pub fn trust_region_project(delta_theta: &Gradient, k: &Gradient, xi: f64) -> Gradient {
    let k_sq = k.dot(k);
    if k_sq == 0.0 {
        return delta_theta.clone();
    }
    let coeff = ((k.dot(delta_theta) - xi) / k_sq).max(0.0);
    let mut g = delta_theta.clone();
    g.add_scaled(k, -coeff);
    g
}

/// θ_a ← α·θ_a + (1−α)·θ, element-wise.
pub fn update_average_policy(avg: &mut NetworkParams, theta: &NetworkParams, alpha: f64) {
    debug_assert_eq!(avg.len(), theta.len());
    for (a, t) in avg.values_mut().iter_mut().zip(theta.values()) {
        *a = alpha * *a + (1.0 - alpha) * t;
    }
}

/// Diagnostics from one off-policy update.
#[derive(Debug, Clone, Default)]
pub struct TracerDiag {
    pub kl: f64,
    pub constraint_active: bool,
    pub policy_grad_norm: f64,
    pub raw_policy_grad_norm: f64,
    pub value_grad_norm: f64,
    pub mean_rho: f64,
}

/// Batch gradients for the off-policy actor-critic: mean over episodes of
/// the per-episode sums, rewards normalized, ρ clipped. When an average
/// policy is supplied the policy gradient is projected onto the trust
/// region.
pub fn tracer_gradients(
    episodes: &[&Episode],
    policy: &NetworkParams,
    value: &NetworkParams,
    avg: Option<&NetworkParams>,
    cfg: &TracerConfig,
) -> Result<(Gradient, Gradient, TracerDiag)> {
    cfg.validate()?;
    let mut delta_theta = Gradient::zeros(policy.len());
    let mut delta_w = Gradient::zeros(value.len());
    let mut kl_sum = 0.0;
    let mut k_grad = Gradient::zeros(policy.len());
    let mut rho_sum = 0.0;
    let mut rho_count = 0usize;
    let n = episodes.len().max(1) as f64;
    let total_steps: usize = episodes.iter().map(|e| e.len()).sum();

    for ep in episodes {
        let ep = normalize_episode(ep, cfg.rmax_abs);
        let evals: Vec<PolicyEval> = ep
            .steps
            .iter()
            .map(|s| policy.policy_forward(&s.belief))
            .collect::<Result<_>>()?;
        let rhos: Vec<f64> = ep
            .steps
            .iter()
            .zip(&evals)
            .map(|(s, e)| is_weight(e.probs[s.action], s.mu_prob, cfg.is_clip))
            .collect::<Result<_>>()?;
        rho_sum += rhos.iter().sum::<f64>();
        rho_count += rhos.len();

        let vg = value_gradient_off_policy(&ep, value, cfg.gamma, &rhos)?;
        delta_w.add_scaled(&vg, 1.0 / n);
        let pg = policy_gradient_with_evals(&ep, policy, value, cfg.gamma, &rhos, &evals)?;
        delta_theta.add_scaled(&pg, 1.0 / n);

        if cfg.entropy_beta > 0.0 {
            for eval in &evals {
                let entropy: f64 = eval
                    .probs
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * p.ln())
                    .sum();
                // dH/dz_j = −π_j (ln π_j + H)
                let dz: Vec<f64> = eval
                    .probs
                    .iter()
                    .map(|&p| if p > 0.0 { -p * (p.ln() + entropy) } else { 0.0 })
                    .collect();
                let g = policy.backprop_logits(&eval.trace, &dz);
                delta_theta.add_scaled(&g, cfg.entropy_beta / n);
            }
        }

        if let Some(avg) = avg {
            // accumulate the KL constraint gradient, reusing the cached
            // current-policy traces
            for (s, eval) in ep.steps.iter().zip(&evals) {
                let pa = avg.policy_forward(&s.belief)?;
                for (p, q) in pa.probs.iter().zip(&eval.probs) {
                    if *p > 0.0 {
                        kl_sum += p * (p.ln() - q.ln());
                    }
                }
                let dz: Vec<f64> = eval
                    .probs
                    .iter()
                    .zip(&pa.probs)
                    .map(|(q, p)| (q - p) / total_steps as f64)
                    .collect();
                let g = policy.backprop_logits(&eval.trace, &dz);
                k_grad.add_scaled(&g, 1.0);
            }
        }
    }

    let mut diag = TracerDiag {
        mean_rho: if rho_count > 0 {
            rho_sum / rho_count as f64
        } else {
            1.0
        },
        value_grad_norm: delta_w.norm(),
        raw_policy_grad_norm: delta_theta.norm(),
        ..TracerDiag::default()
    };

    let projected = if avg.is_some() {
        diag.kl = kl_sum / total_steps.max(1) as f64;
        diag.constraint_active = k_grad.dot(&delta_theta) > cfg.xi;
        trust_region_project(&delta_theta, &k_grad, cfg.xi)
    } else {
        delta_theta
    };
    diag.policy_grad_norm = projected.norm();
    Ok((projected, delta_w, diag))
}

/// One TRACER update: sample a minibatch of episodes from the pool,
/// compute the off-policy gradients, project, take one Adam ascent step on
/// each network and refresh the average policy.
#[allow(clippy::too_many_arguments)]
pub fn tracer_update<R: rand::Rng>(
    pool: &ReplayPool<Episode>,
    rng: &mut R,
    policy: &mut NetworkParams,
    value: &mut NetworkParams,
    avg: &mut AveragePolicy,
    cfg: &TracerConfig,
    opt_policy: &mut AdamState,
    opt_value: &mut AdamState,
) -> Result<TracerDiag> {
    let batch = pool.sample(cfg.batch_episodes, rng)?;
    let anchor = if cfg.trust_region {
        Some(avg.params().clone())
    } else {
        None
    };
    let (g_star, delta_w, diag) = tracer_gradients(&batch, policy, value, anchor.as_ref(), cfg)?;
    opt_policy.step(policy, &g_star, true)?;
    opt_value.step(value, &delta_w, true)?;
    if cfg.trust_region {
        // α weighs the new parameters into the running average: a small α
        // keeps θ_a a slow-moving anchor, which is what makes the KL
        // constraint bite. (Mixing the other way round lets θ_a track θ
        // within a couple of updates and the constraint never activates.)
        avg.update(policy, 1.0 - cfg.alpha_avg);
    }
    Ok(diag)
}

/// On-policy A2C step on a batch of freshly generated episodes: the policy
/// ascends Σ_t ∇log π·δ and the value net regresses on the Monte-Carlo
/// return. Written independently of the off-policy path; with ρ≡1 and an
/// inactive trust region the two coincide.
pub fn a2c_update(
    episodes: &[Episode],
    policy: &mut NetworkParams,
    value: &mut NetworkParams,
    gamma: f64,
    rmax_abs: f64,
    opt_policy: &mut AdamState,
    opt_value: &mut AdamState,
) -> Result<()> {
    let mut delta_theta = Gradient::zeros(policy.len());
    let mut delta_w = Gradient::zeros(value.len());
    let n = episodes.len().max(1) as f64;
    for ep in episodes {
        let ep = normalize_episode(ep, rmax_abs);
        let t_max = ep.len();
        let rewards = ep.rewards();
        // plain discounted Monte-Carlo returns
        let mut returns = vec![0.0; t_max];
        for t in (0..t_max).rev() {
            returns[t] = rewards[t]
                + if t + 1 < t_max {
                    gamma * returns[t + 1]
                } else {
                    0.0
                };
        }
        let values: Vec<f64> = ep
            .steps
            .iter()
            .map(|s| value.value_forward(&s.belief))
            .collect::<Result<_>>()?;
        for t in 0..t_max {
            let (_, trace) = value.value_forward_traced(&ep.steps[t].belief)?;
            let g = value.grad_scalar_output_traced(&trace);
            delta_w.add_scaled(&g, (returns[t] - values[t]) / n);

            let v_next = if t + 1 < t_max { values[t + 1] } else { 0.0 };
            let delta = td_error(rewards[t], values[t], v_next, t + 1 == t_max, gamma);
            let pg = policy.grad_log_prob(&ep.steps[t].belief, ep.steps[t].action)?;
            delta_theta.add_scaled(&pg, delta / n);
        }
    }
    opt_policy.step(policy, &delta_theta, true)?;
    opt_value.step(value, &delta_w, true)?;
    Ok(())
}
