//! Demonstration data: corpus generation from the rule policy, supervised
//! pre-training, and the combined RL+SL replay objective
//!
//! ```text
//! L_all(θ) = −J(θ) + λ₁·L(θ; 𝒫'_sup) + λ₂·‖θ‖²
//! ```
//!
//! with L the cross-entropy between demonstrated action labels and the
//! policy, λ₁ = 10 and λ₂ = 0.01.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use crate::env::{rule_policy, DialogueEnv, EnvConfig, Ontology};
use crate::nn::{AdamState, Gradient, NetworkParams};
use crate::{Error, Result};

/// Corpus split tag, assigned per dialogue in a fixed 4:1:1 pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One demonstrated turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoExample {
    pub belief: Vec<f64>,
    pub label: usize,
    pub episode: usize,
    pub turn: usize,
    pub split: Split,
    /// Semantic error rate active when the corpus was generated. Not part
    /// of the on-disk schema.
    #[serde(skip)]
    pub error_rate: f64,
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinedLossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub demo_batch: usize,
}

impl Default for CombinedLossConfig {
    fn default() -> Self {
        CombinedLossConfig {
            lambda1: 10.0,
            lambda2: 0.01,
            demo_batch: 64,
        }
    }
}

fn split_for_episode(episode: usize) -> Split {
    // 4:1:1 by position within each block of six dialogues
    match episode % 6 {
        4 => Split::Valid,
        5 => Split::Test,
        _ => Split::Train,
    }
}

/// Run the rule policy against the environment for `n_dialogues` and
/// record one example per system turn. Deterministic given the seed.
pub fn generate_corpus(
    ontology: Arc<Ontology>,
    n_dialogues: usize,
    error_rate: f64,
    seed: u64,
) -> Result<Vec<DemoExample>> {
    if n_dialogues == 0 {
        return Err(Error::Corpus("corpus needs at least one dialogue".into()));
    }
    let cfg = EnvConfig {
        error_rate,
        ..EnvConfig::default()
    };
    let n_slots = ontology.n_constraint_slots();
    let mut env = DialogueEnv::new(ontology, cfg, seed);
    let mut examples = Vec::new();
    for episode in 0..n_dialogues {
        let mut belief = env.reset();
        let split = split_for_episode(episode);
        let mut turn = 0usize;
        loop {
            let act = rule_policy(&belief);
            examples.push(DemoExample {
                belief: belief.to_vector(),
                label: act.index(n_slots),
                episode,
                turn,
                split,
                error_rate,
            });
            let step = env.step(act)?;
            belief = step.belief;
            turn += 1;
            if step.done {
                break;
            }
        }
    }
    Ok(examples)
}

/// JSONL schema: `{"belief": [...], "label": n, "episode": n, "turn": n,
/// "split": "train|valid|test"}`, one example per line.
pub fn save_corpus<P: AsRef<Path>>(examples: &[DemoExample], path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_corpus<P: AsRef<Path>>(path: P) -> Result<Vec<DemoExample>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: DemoExample = serde_json::from_str(&line)
            .map_err(|e| Error::Corpus(format!("line {}: {e}", i + 1)))?;
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::Corpus("corpus file is empty".into()));
    }
    Ok(examples)
}

/// Mean cross-entropy −log π(label|belief) over a batch and its gradient.
pub fn cross_entropy_loss(
    policy: &NetworkParams,
    batch: &[(&[f64], usize)],
) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::EmptyPool);
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = Gradient::zeros(policy.len());
    for (belief, label) in batch {
        let eval = policy.policy_forward(belief)?;
        if *label >= eval.probs.len() {
            return Err(Error::ActionOutOfRange {
                action: *label,
                count: eval.probs.len(),
            });
        }
        loss -= eval.probs[*label].ln() / n;
        // d(−log π_y)/dz = (π − one_hot(y)) / n
        let mut dz: Vec<f64> = eval.probs.iter().map(|&p| p / n).collect();
        dz[*label] -= 1.0 / n;
        let g = policy.backprop_logits(&eval.trace, &dz);
        grad.add_scaled(&g, 1.0);
    }
    Ok((loss, grad))
}

/// Per-epoch pre-training progress.
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

/// Supervised pre-training on the train split with early stopping on the
/// validation loss. Returns the per-epoch trace.
pub fn sl_pretrain(
    policy: &mut NetworkParams,
    corpus: &[DemoExample],
    epochs: usize,
    opt: &mut AdamState,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    let train: Vec<&DemoExample> = corpus.iter().filter(|e| e.split == Split::Train).collect();
    let valid: Vec<&DemoExample> = corpus.iter().filter(|e| e.split == Split::Valid).collect();
    if train.is_empty() {
        return Err(Error::Corpus("train split is empty".into()));
    }
    // small corpora may have no validation dialogues; fall back to train
    let valid = if valid.is_empty() { train.clone() } else { valid };

    let mut rng = crate::rng::stream_rng(seed, 0x736c);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch_size = 64usize;
    let mut trace = Vec::new();
    let mut best_valid = f64::INFINITY;
    let mut best_params = policy.clone();
    let mut bad_epochs = 0usize;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (train[i].belief.as_slice(), train[i].label))
                .collect();
            let (loss, grad) = cross_entropy_loss(policy, &batch)?;
            opt.step(policy, &grad, false)?;
            train_loss += loss;
            batches += 1;
        }
        train_loss /= batches.max(1) as f64;

        let mut valid_loss = 0.0;
        let mut correct = 0usize;
        for ex in &valid {
            let eval = policy.policy_forward(&ex.belief)?;
            valid_loss -= eval.probs[ex.label].ln() / valid.len() as f64;
            let pred = eval
                .probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            if pred == ex.label {
                correct += 1;
            }
        }
        let valid_accuracy = correct as f64 / valid.len() as f64;
        trace.push(EpochStats {
            epoch,
            train_loss,
            valid_loss,
            valid_accuracy,
        });

        if valid_loss < best_valid - 1e-6 {
            best_valid = valid_loss;
            best_params = policy.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= 3 {
                *policy = best_params;
                break;
            }
        }
    }
    Ok(trace)
}

/// Gradient of the combined objective to be *minimized*:
/// ∇L_all = −∇J + λ₁·∇L_ce + 2λ₂·θ.
pub fn combined_loss_grad(
    policy_grad_j: &Gradient,
    policy: &NetworkParams,
    demo_batch: &[(&[f64], usize)],
    cfg: &CombinedLossConfig,
) -> Result<Gradient> {
    let mut grad = Gradient::zeros(policy.len());
    grad.add_scaled(policy_grad_j, -1.0);
    if cfg.lambda1 != 0.0 && !demo_batch.is_empty() {
        let (_, ce_grad) = cross_entropy_loss(policy, demo_batch)?;
        grad.add_scaled(&ce_grad, cfg.lambda1);
    }
    if cfg.lambda2 != 0.0 {
        for (g, &w) in grad.values.iter_mut().zip(policy.values()) {
            *g += 2.0 * cfg.lambda2 * w;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{finite_difference, max_rel_err, random_net};
    use crate::nn::{Activation, NetworkSpec, OutputHead};
    use approx::assert_relative_eq;

    fn policy_spec(dim: usize, actions: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim: dim,
            hidden_dims: vec![8],
            output: OutputHead::Softmax { actions },
            activation: Activation::Tanh,
            init_seed: 1,
        }
    }

    #[test]
    fn corpus_is_byte_reproducible() {
        let ont = Arc::new(Ontology::desk_default());
        let a = generate_corpus(Arc::clone(&ont), 12, 0.0, 7).unwrap();
        let b = generate_corpus(Arc::clone(&ont), 12, 0.0, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.jsonl");
        let pb = dir.path().join("b.jsonl");
        save_corpus(&a, &pa).unwrap();
        save_corpus(&b, &pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }

    #[test]
    fn corpus_splits_are_4_1_1() {
        let ont = Arc::new(Ontology::desk_default());
        let corpus = generate_corpus(ont, 720, 0.0, 9).unwrap();
        let episodes_in = |split: Split| {
            let mut eps: Vec<usize> = corpus
                .iter()
                .filter(|e| e.split == split)
                .map(|e| e.episode)
                .collect();
            eps.dedup();
            eps.len()
        };
        assert_eq!(episodes_in(Split::Train), 480);
        assert_eq!(episodes_in(Split::Valid), 120);
        assert_eq!(episodes_in(Split::Test), 120);
    }

    #[test]
    fn corpus_labels_are_in_action_range() {
        let ont = Arc::new(Ontology::desk_default());
        let corpus = generate_corpus(ont, 60, 0.15, 11).unwrap();
        assert!(corpus.iter().all(|e| e.label < 14));
        assert!(corpus.iter().all(|e| e.belief.len() == 37));
    }

    #[test]
    fn corpus_round_trips_through_jsonl() {
        let ont = Arc::new(Ontology::desk_default());
        let corpus = generate_corpus(ont, 18, 0.0, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(corpus.len(), loaded.len());
        for (a, b) in corpus.iter().zip(&loaded) {
            assert_eq!(a.belief, b.belief);
            assert_eq!(a.label, b.label);
            assert_eq!(a.episode, b.episode);
            assert_eq!(a.turn, b.turn);
            assert_eq!(a.split, b.split);
        }
    }

    #[test]
    fn uniform_policy_cross_entropy_is_log_actions() {
        let spec = policy_spec(5, 14);
        let policy =
            NetworkParams::from_values(spec.clone(), vec![0.0; spec.param_count()]).unwrap();
        let beliefs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.1; 5]).collect();
        let batch: Vec<(&[f64], usize)> = beliefs
            .iter()
            .enumerate()
            .map(|(i, b)| (b.as_slice(), i % 14))
            .collect();
        let (loss, _) = cross_entropy_loss(&policy, &batch).unwrap();
        assert_relative_eq!(loss, (14.0f64).ln(), epsilon = 1e-12);
        assert!((loss - 2.6391).abs() < 1e-4);
    }

    #[test]
    fn confident_policy_cross_entropy_tends_to_zero() {
        let spec = NetworkSpec {
            input_dim: 2,
            hidden_dims: vec![],
            output: OutputHead::Softmax { actions: 3 },
            activation: Activation::Relu,
            init_seed: 0,
        };
        // huge bias on action 1
        let values = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 30.0, 0.0];
        let policy = NetworkParams::from_values(spec, values).unwrap();
        let b = vec![0.5, 0.5];
        let (loss, _) = cross_entropy_loss(&policy, &[(b.as_slice(), 1)]).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let policy = random_net(policy_spec(4, 5), 0.7, seed);
            let beliefs: Vec<Vec<f64>> = (0..3)
                .map(|i| {
                    (0..4)
                        .map(|j| ((seed + i) as f64 * 0.3 + j as f64 * 0.17).sin())
                        .collect()
                })
                .collect();
            let batch: Vec<(&[f64], usize)> = beliefs
                .iter()
                .enumerate()
                .map(|(i, b)| (b.as_slice(), (i + seed as usize) % 5))
                .collect();
            let (_, analytic) = cross_entropy_loss(&policy, &batch).unwrap();
            let fd = finite_difference(
                &policy,
                |p| cross_entropy_loss(p, &batch).unwrap().0,
                1e-5,
            );
            assert!(max_rel_err(&analytic.values, &fd) < 1e-4);
        }
    }

    #[test]
    fn pretraining_memorizes_a_tiny_corpus() {
        let ont = Arc::new(Ontology::desk_default());
        let mut corpus = generate_corpus(ont, 2, 0.0, 21).unwrap();
        corpus.truncate(10);
        for ex in &mut corpus {
            ex.split = Split::Train;
        }
        let spec = policy_spec(37, 14);
        let mut policy = NetworkParams::init(spec).unwrap();
        let mut opt = AdamState::new(policy.len(), 0.01);
        sl_pretrain(&mut policy, &corpus, 200, &mut opt, 3).unwrap();
        let correct = corpus
            .iter()
            .filter(|ex| {
                let eval = policy.policy_forward(&ex.belief).unwrap();
                let pred = eval
                    .probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                pred == ex.label
            })
            .count();
        assert_eq!(correct, corpus.len(), "memorization failed");
    }

    #[test]
    fn pretraining_rejects_empty_corpus() {
        let spec = policy_spec(37, 14);
        let mut policy = NetworkParams::init(spec).unwrap();
        let mut opt = AdamState::new(policy.len(), 0.001);
        assert!(matches!(
            sl_pretrain(&mut policy, &[], 5, &mut opt, 0),
            Err(Error::Corpus(_))
        ));
    }

    #[test]
    fn combined_loss_reduces_to_rl_gradient_without_lambdas() {
        let policy = random_net(policy_spec(3, 4), 0.5, 31);
        let mut j = Gradient::zeros(policy.len());
        for (i, v) in j.values.iter_mut().enumerate() {
            *v = (i as f64 * 0.11).cos();
        }
        let cfg = CombinedLossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            demo_batch: 64,
        };
        let grad = combined_loss_grad(&j, &policy, &[], &cfg).unwrap();
        for (g, jj) in grad.values.iter().zip(&j.values) {
            assert_relative_eq!(*g, -jj, epsilon = 1e-15);
        }
    }

    #[test]
    fn combined_loss_is_lambda1_times_demo_gradient_at_zero_j_and_zero_theta() {
        let spec = policy_spec(3, 4);
        let policy =
            NetworkParams::from_values(spec.clone(), vec![0.0; spec.param_count()]).unwrap();
        let b = vec![0.2, 0.4, 0.6];
        let batch = vec![(b.as_slice(), 2usize)];
        let (_, ce) = cross_entropy_loss(&policy, &batch).unwrap();
        let cfg = CombinedLossConfig::default();
        let zero_j = Gradient::zeros(policy.len());
        let grad = combined_loss_grad(&zero_j, &policy, &batch, &cfg).unwrap();
        for (g, c) in grad.values.iter().zip(&ce.values) {
            assert_relative_eq!(*g, 10.0 * c, epsilon = 1e-12);
        }
    }

    #[test]
    fn l2_term_matches_finite_differences() {
        let policy = random_net(policy_spec(3, 3), 0.6, 41);
        let cfg = CombinedLossConfig {
            lambda1: 0.0,
            lambda2: 0.01,
            demo_batch: 64,
        };
        let zero_j = Gradient::zeros(policy.len());
        let analytic = combined_loss_grad(&zero_j, &policy, &[], &cfg).unwrap();
        let fd = finite_difference(
            &policy,
            |p| 0.01 * p.values().iter().map(|w| w * w).sum::<f64>(),
            1e-6,
        );
        assert!(max_rel_err(&analytic.values, &fd) < 1e-6);
    }

    #[test]
    fn combined_update_descends_demo_cross_entropy() {
        // with a large λ₁ a small step along −∇L_all must reduce the demo
        // batch's cross-entropy
        let policy = random_net(policy_spec(4, 5), 0.5, 51);
        let beliefs: Vec<Vec<f64>> = (0..6).map(|i| vec![0.1 * i as f64; 4]).collect();
        let batch: Vec<(&[f64], usize)> = beliefs
            .iter()
            .enumerate()
            .map(|(i, b)| (b.as_slice(), i % 5))
            .collect();
        let cfg = CombinedLossConfig {
            lambda1: 100.0,
            lambda2: 0.0,
            demo_batch: 64,
        };
        let zero_j = Gradient::zeros(policy.len());
        let grad = combined_loss_grad(&zero_j, &policy, &batch, &cfg).unwrap();
        let (before, _) = cross_entropy_loss(&policy, &batch).unwrap();
        let mut stepped = policy.clone();
        for (w, g) in stepped.values_mut().iter_mut().zip(&grad.values) {
            *w -= 1e-4 * g;
        }
        let (after, _) = cross_entropy_loss(&stepped, &batch).unwrap();
        assert!(after < before);
    }
}
