//! Experiment orchestration: training loops for every learner, ε-greedy
//! behaviour policy, periodic greedy evaluation, seeding, and CSV/JSONL
//! reporting.
//!
//! The protocol: one update per 2 dialogues once 192 samples have been
//! collected (whole dialogues for the policy-gradient learners, state
//! transitions for DQN), a 1000-sample replay pool, 64-sample minibatches,
//! ε annealed linearly from 0.3 to 0 over 3500 dialogues (2000 when
//! demonstration data is in play), and 600 greedy evaluation dialogues
//! after every 200 training dialogues, including dialogue 0.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::acer::{self, AveragePolicy, TracerConfig};
use crate::demo::{self, CombinedLossConfig, DemoExample, Split};
use crate::dqn::{self, DqnConfig, TargetNetwork};
use crate::enacer::{self, EnacConfig};
use crate::env::{
    rule_policy, BeliefState, DialogueEnv, EnvConfig, GoalConfig, Ontology, SystemAct, MAX_TURNS,
    SUCCESS_REWARD, TURN_PENALTY,
};
use crate::nn::{AdamState, NetworkParams, NetworkSpec};
use crate::replay::{Episode, EpisodeStep, ReplayPool, SupervisedPool, Transition};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// ε anneals to zero over this many dialogues when learning from scratch…
pub const EPSILON_HORIZON_SCRATCH: usize = 3500;
/// …and over this many when demonstration data is used.
pub const EPSILON_HORIZON_DEMO: usize = 2000;

/// All dialogues of the built-in demonstration corpus share one generation
/// seed, mirroring a fixed pre-collected corpus.
const CORPUS_SEED: u64 = 0xC0_4B05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    A2c,
    A2cEr,
    Tracer,
    Enacer,
    Dqn,
    Rule,
    Random,
    SlOnly,
}

impl Learner {
    pub fn name(&self) -> &'static str {
        match self {
            Learner::A2c => "a2c",
            Learner::A2cEr => "a2c_er",
            Learner::Tracer => "tracer",
            Learner::Enacer => "enacer",
            Learner::Dqn => "dqn",
            Learner::Rule => "rule",
            Learner::Random => "random",
            Learner::SlOnly => "sl_only",
        }
    }

    fn is_neural(&self) -> bool {
        !matches!(self, Learner::Rule | Learner::Random)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoMode {
    None,
    Pretrain,
    Replay,
    Both,
}

impl DemoMode {
    pub fn pretrains(&self) -> bool {
        matches!(self, DemoMode::Pretrain | DemoMode::Both)
    }

    pub fn replays(&self) -> bool {
        matches!(self, DemoMode::Replay | DemoMode::Both)
    }
}

/// Network shape shared by all neural learners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_dims: vec![130, 50],
            learning_rate: 0.001,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub learner: Learner,
    pub demo_mode: DemoMode,
    pub error_rate: f64,
    pub train_dialogues: usize,
    pub eval_every: usize,
    pub eval_dialogues: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Explicit annealing horizon; when absent the scratch/demo defaults
    /// apply.
    pub epsilon_horizon: Option<usize>,
    /// Sample the exploitation action from π instead of taking the argmax.
    pub sample_actions: bool,
    pub seeds: Vec<u64>,
    pub pool_capacity: usize,
    pub net: NetConfig,
    pub tracer: TracerConfig,
    pub enacer: EnacConfig,
    pub dqn: DqnConfig,
    pub demo_loss: CombinedLossConfig,
    pub pretrain_epochs: usize,
    /// Synthetic corpus size when no corpus file is supplied.
    pub demo_dialogues: usize,
    pub demo_error_rate: f64,
    pub corpus_path: Option<PathBuf>,
    pub ontology_path: Option<PathBuf>,
    pub goal: GoalConfig,
    /// Allow a supervised step after each eNACER update (off by default;
    /// per-update SL mixing was not found helpful for eNACER).
    pub enacer_post_sl_step: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            learner: Learner::Tracer,
            demo_mode: DemoMode::None,
            error_rate: 0.0,
            train_dialogues: 4000,
            eval_every: 200,
            eval_dialogues: 600,
            epsilon_start: 0.3,
            epsilon_end: 0.0,
            epsilon_horizon: None,
            sample_actions: false,
            seeds: vec![101, 102, 103, 104, 105],
            pool_capacity: 1000,
            net: NetConfig::default(),
            tracer: TracerConfig::default(),
            enacer: EnacConfig::default(),
            dqn: DqnConfig::default(),
            demo_loss: CombinedLossConfig::default(),
            pretrain_epochs: 30,
            demo_dialogues: 720,
            demo_error_rate: 0.0,
            corpus_path: None,
            ontology_path: None,
            goal: GoalConfig::default(),
            enacer_post_sl_step: false,
        }
    }
}

impl ExperimentConfig {
    pub fn effective_epsilon_horizon(&self) -> usize {
        self.epsilon_horizon.unwrap_or(if self.uses_demos() {
            EPSILON_HORIZON_DEMO
        } else {
            EPSILON_HORIZON_SCRATCH
        })
    }

    fn uses_demos(&self) -> bool {
        self.demo_mode != DemoMode::None || self.learner == Learner::SlOnly
    }

    pub fn validate(&self) -> Result<()> {
        let supported = "supported demo_mode per learner: \
             a2c: none|pretrain; a2c_er/tracer: none|pretrain|replay|both; \
             enacer: none|pretrain (replay/both only with enacer_post_sl_step); \
             dqn/rule/random: none; sl_only: none|pretrain";
        let bad = || {
            Err(Error::UnsupportedConfig(format!(
                "learner {} cannot be combined with demo_mode {:?}; {supported}",
                self.learner.name(),
                self.demo_mode
            )))
        };
        match self.learner {
            Learner::A2c => {
                if self.demo_mode.replays() {
                    return bad();
                }
            }
            Learner::A2cEr | Learner::Tracer => {}
            Learner::Enacer => {
                if self.demo_mode.replays() && !self.enacer_post_sl_step {
                    return bad();
                }
            }
            Learner::Dqn | Learner::Rule | Learner::Random => {
                if self.demo_mode != DemoMode::None {
                    return bad();
                }
            }
            Learner::SlOnly => {
                if self.demo_mode.replays() {
                    return bad();
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::UnsupportedConfig("need at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::UnsupportedConfig("seeds must be distinct".into()));
        }
        self.tracer.validate()?;
        self.dqn.validate()?;
        Ok(())
    }

    fn ontology(&self) -> Result<Arc<Ontology>> {
        Ok(Arc::new(match &self.ontology_path {
            Some(p) => Ontology::load(p)?,
            None => Ontology::desk_default(),
        }))
    }
}

/// Linearly annealed exploration rate, clamped beyond the horizon.
pub fn epsilon_schedule(t: usize, start: f64, end: f64, horizon: usize) -> f64 {
    if horizon == 0 || t >= horizon {
        return end;
    }
    start + (end - start) * t as f64 / horizon as f64
}

/// ε-greedy selection over an action distribution: with probability ε a
/// uniform action, otherwise the top-ranking action (or a sample from the
/// distribution with `sample_mode`). Returns the chosen action and its
/// behaviour probability μ(a|b).
pub fn behaviour_select<R: Rng>(
    dist: &[f64],
    epsilon: f64,
    rng: &mut R,
    sample_mode: bool,
) -> (usize, f64) {
    let n = dist.len();
    let exploit = if sample_mode {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        pick
    } else {
        let mut best = 0;
        for (i, &p) in dist.iter().enumerate().skip(1) {
            if p > dist[best] {
                best = i;
            }
        }
        best
    };
    let action = if epsilon > 0.0 && rng.gen_bool(epsilon.min(1.0)) {
        rng.gen_range(0..n)
    } else {
        exploit
    };
    let mu = if sample_mode {
        epsilon / n as f64 + (1.0 - epsilon) * dist[action]
    } else {
        epsilon / n as f64 + if action == exploit { 1.0 - epsilon } else { 0.0 }
    };
    (action, mu)
}

/// A greedy action selector used for evaluation.
pub enum EvalPolicy<'a> {
    Softmax(&'a NetworkParams),
    QValues(&'a NetworkParams),
    Rule,
    Random,
}

impl EvalPolicy<'_> {
    fn select(&self, belief: &BeliefState, n_actions: usize, rng: &mut ChaCha12Rng) -> usize {
        match self {
            EvalPolicy::Softmax(net) => {
                let eval = net
                    .policy_forward(&belief.to_vector())
                    .expect("belief matches network input");
                argmax(&eval.probs)
            }
            EvalPolicy::QValues(net) => {
                let q = net
                    .q_forward(&belief.to_vector())
                    .expect("belief matches network input");
                argmax(&q)
            }
            EvalPolicy::Rule => rule_policy(belief).index(belief.n_slots()),
            EvalPolicy::Random => rng.gen_range(0..n_actions),
        }
    }
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalStats {
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_turns: f64,
}

/// Greedy evaluation over `n` fresh dialogues. Per-episode RNG streams are
/// derived from `seed`, so results do not depend on thread scheduling.
pub fn evaluate(
    policy: &EvalPolicy<'_>,
    ontology: &Arc<Ontology>,
    env_cfg: &EnvConfig,
    n: usize,
    seed: u64,
) -> EvalStats
where
{
    let results: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut env = DialogueEnv::new(
                Arc::clone(ontology),
                EnvConfig {
                    record_transcript: false,
                    ..env_cfg.clone()
                },
                seed.wrapping_add(i as u64),
            );
            let n_actions = env.n_actions();
            let mut rng = stream_rng(seed, 0xe7a1 + i as u64);
            let mut belief = env.reset();
            let mut total = 0.0;
            loop {
                let action_idx = policy.select(&belief, n_actions, &mut rng);
                let act = SystemAct::from_index(action_idx, belief.n_slots())
                    .expect("selector stays in range");
                let step = env.step(act).expect("episode not done");
                total += step.reward;
                belief = step.belief;
                if step.done {
                    let success = if step.success_so_far { 1.0 } else { 0.0 };
                    return (success, total, step.turn as f64);
                }
            }
        })
        .collect();
    let n = results.len().max(1) as f64;
    EvalStats {
        success_rate: results.iter().map(|r| r.0).sum::<f64>() / n,
        mean_return: results.iter().map(|r| r.1).sum::<f64>() / n,
        mean_turns: results.iter().map(|r| r.2).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub dialogues: usize,
    pub success: f64,
    pub mean_return: f64,
    pub mean_turns: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn at(&self, dialogues: usize) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.dialogues == dialogues)
    }

    pub fn final_row(&self) -> Option<&CurveRow> {
        self.rows.last()
    }
}

/// Append curve rows as CSV, writing the header only for a fresh file.
pub fn emit_curve<P: AsRef<Path>>(curve: &LearningCurve, path: P) -> Result<()> {
    if curve.rows.is_empty() {
        return Err(Error::UnsupportedConfig("cannot emit an empty curve".into()));
    }
    let exists = path.as_ref().exists() && std::fs::metadata(&path)?.len() > 0;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = std::io::BufWriter::new(file);
    if !exists {
        writeln!(w, "dialogues,success,mean_return,mean_turns,seed")?;
    }
    for r in &curve.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.dialogues, r.success, r.mean_return, r.mean_turns, r.seed
        )?;
    }
    Ok(())
}

pub fn load_curve<P: AsRef<Path>>(path: P) -> Result<LearningCurve> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Corpus(format!("malformed curve row: {line}")));
        }
        rows.push(CurveRow {
            dialogues: parts[0].parse().map_err(|_| bad_row(line))?,
            success: parts[1].parse().map_err(|_| bad_row(line))?,
            mean_return: parts[2].parse().map_err(|_| bad_row(line))?,
            mean_turns: parts[3].parse().map_err(|_| bad_row(line))?,
            seed: parts[4].parse().map_err(|_| bad_row(line))?,
        });
    }
    Ok(LearningCurve { rows })
}

fn bad_row(line: &str) -> Error {
    Error::Corpus(format!("malformed curve row: {line}"))
}

/// Mean/min/max success per checkpoint across seed curves.
pub fn aggregate_curves(curves: &[LearningCurve]) -> Vec<(usize, f64, f64, f64)> {
    let mut out = Vec::new();
    if curves.is_empty() {
        return out;
    }
    let checkpoints: Vec<usize> = curves[0].rows.iter().map(|r| r.dialogues).collect();
    for d in checkpoints {
        let vals: Vec<f64> = curves
            .iter()
            .filter_map(|c| c.at(d).map(|r| r.success))
            .collect();
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        out.push((d, mean, min, max));
    }
    out
}

pub fn emit_aggregate<P: AsRef<Path>>(rows: &[(usize, f64, f64, f64)], path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "dialogues,success_mean,success_min,success_max")?;
    for (d, mean, min, max) in rows {
        writeln!(w, "{d},{mean},{min},{max}")?;
    }
    Ok(())
}

/// Per-update diagnostics (meaning of the two value columns depends on the
/// learner: TD-residual gradient norm / DQN loss / eNACER residual).
#[derive(Debug, Clone, Serialize)]
pub struct UpdateDiag {
    pub update: usize,
    pub dialogues: usize,
    pub kl: f64,
    pub constraint_active: bool,
    pub policy_grad_norm: f64,
    pub value_metric: f64,
    pub extra: f64,
}

pub fn emit_diagnostics<P: AsRef<Path>>(rows: &[UpdateDiag], path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(
        w,
        "update,dialogues,kl,constraint_active,policy_grad_norm,value_metric,extra"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.update,
            r.dialogues,
            r.kl,
            r.constraint_active as u8,
            r.policy_grad_norm,
            r.value_metric,
            r.extra
        )?;
    }
    Ok(())
}

/// Everything produced by one seeded run.
pub struct SeedRun {
    pub seed: u64,
    pub curve: LearningCurve,
    pub final_policy: Option<NetworkParams>,
    pub diagnostics: Vec<UpdateDiag>,
    pub first_update_dialogue: Option<usize>,
    pub pretrain_trace: Vec<demo::EpochStats>,
}

fn corpus_for(cfg: &ExperimentConfig, ontology: &Arc<Ontology>) -> Result<Vec<DemoExample>> {
    match &cfg.corpus_path {
        Some(p) => demo::load_corpus(p),
        None => demo::generate_corpus(
            Arc::clone(ontology),
            cfg.demo_dialogues,
            cfg.demo_error_rate,
            CORPUS_SEED,
        ),
    }
}

/// Run one seed of the configured experiment.
pub fn run_training(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let ontology = cfg.ontology()?;
    let input_dim = BeliefState::vector_len(&ontology);
    let n_actions = SystemAct::count(ontology.n_constraint_slots());
    let env_cfg = EnvConfig {
        error_rate: cfg.error_rate,
        max_turns: MAX_TURNS,
        goal: cfg.goal.clone(),
        record_transcript: false,
    };
    let mut env = DialogueEnv::new(Arc::clone(&ontology), env_cfg.clone(), stream_seed(seed, 1));
    let mut explore_rng = stream_rng(seed, 2);
    let mut pool_rng = stream_rng(seed, 3);

    // networks
    let policy_spec = NetworkSpec {
        input_dim,
        hidden_dims: cfg.net.hidden_dims.clone(),
        output: crate::nn::OutputHead::Softmax { actions: n_actions },
        activation: crate::nn::Activation::Relu,
        init_seed: stream_seed(seed, 4),
    };
    let value_spec = NetworkSpec {
        input_dim,
        hidden_dims: cfg.net.hidden_dims.clone(),
        output: crate::nn::OutputHead::Scalar,
        activation: crate::nn::Activation::Relu,
        init_seed: stream_seed(seed, 5),
    };
    let mut policy = NetworkParams::init(policy_spec)?;
    let mut value = NetworkParams::init(value_spec)?;

    // demonstration data
    let needs_corpus = cfg.uses_demos();
    let corpus = if needs_corpus {
        corpus_for(cfg, &ontology)?
    } else {
        Vec::new()
    };
    let mut pretrain_trace = Vec::new();
    if cfg.demo_mode.pretrains() || cfg.learner == Learner::SlOnly {
        let mut opt = AdamState::new(policy.len(), cfg.net.learning_rate);
        pretrain_trace = demo::sl_pretrain(
            &mut policy,
            &corpus,
            cfg.pretrain_epochs,
            &mut opt,
            stream_seed(seed, 6),
        )?;
    }
    let sup_pool = if cfg.demo_mode.replays() || cfg.enacer_post_sl_step {
        let pairs: Vec<(Vec<f64>, usize)> = corpus
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| (e.belief.clone(), e.label))
            .collect();
        Some(SupervisedPool::from_pairs(pairs))
    } else {
        None
    };

    // learner state
    let mut episode_pool: ReplayPool<Episode> = ReplayPool::new(cfg.pool_capacity);
    let mut transition_pool: ReplayPool<Transition> = ReplayPool::new(cfg.pool_capacity);
    let mut fresh_episodes: Vec<Episode> = Vec::new();
    let mut avg = AveragePolicy::new(&policy);
    let mut target = TargetNetwork::new(&policy);
    let mut opt_policy = AdamState::new(policy.len(), cfg.net.learning_rate);
    let mut opt_value = AdamState::new(value.len(), cfg.net.learning_rate);

    let mut curve = LearningCurve::default();
    let mut diagnostics = Vec::new();
    let mut episodes_generated = 0usize;
    let mut updates = 0usize;
    let mut first_update_dialogue = None;
    let horizon = cfg.effective_epsilon_horizon();

    let eval_at = |policy: &NetworkParams, checkpoint: usize| -> EvalStats {
        let eval_policy = match cfg.learner {
            Learner::Dqn => EvalPolicy::QValues(policy),
            Learner::Rule => EvalPolicy::Rule,
            Learner::Random => EvalPolicy::Random,
            _ => EvalPolicy::Softmax(policy),
        };
        evaluate(
            &eval_policy,
            &ontology,
            &env_cfg,
            cfg.eval_dialogues,
            stream_seed(seed, 1000 + checkpoint as u64),
        )
    };

    let record = |curve: &mut LearningCurve, dialogues: usize, stats: EvalStats| {
        curve.rows.push(CurveRow {
            dialogues,
            success: stats.success_rate,
            mean_return: stats.mean_return,
            mean_turns: stats.mean_turns,
            seed,
        });
    };

    // cold-start checkpoint
    record(&mut curve, 0, eval_at(&policy, 0));

    for d in 0..cfg.train_dialogues {
        let epsilon = epsilon_schedule(d, cfg.epsilon_start, cfg.epsilon_end, horizon);
        match cfg.learner {
            Learner::A2c | Learner::A2cEr | Learner::Tracer | Learner::Enacer => {
                let episode =
                    rollout_policy(&mut env, &policy, epsilon, &mut explore_rng, cfg.sample_actions)?;
                episodes_generated += 1;
                if cfg.learner == Learner::A2c {
                    fresh_episodes.push(episode);
                } else {
                    episode_pool.push(episode);
                }
            }
            Learner::Dqn => {
                let transitions =
                    rollout_q(&mut env, &policy, epsilon, &mut explore_rng)?;
                for t in transitions {
                    transition_pool.push(t);
                }
            }
            Learner::Rule | Learner::Random | Learner::SlOnly => {}
        }

        let period_done = (d + 1) % update_period(cfg) == 0;
        if period_done && warmup_met(cfg, episodes_generated, &transition_pool) {
            let did_update = apply_update(
                cfg,
                &mut policy,
                &mut value,
                &mut avg,
                &mut target,
                &mut opt_policy,
                &mut opt_value,
                &episode_pool,
                &transition_pool,
                &mut fresh_episodes,
                sup_pool.as_ref(),
                &mut pool_rng,
                &mut updates,
                &mut diagnostics,
                d + 1,
            )?;
            if did_update && first_update_dialogue.is_none() {
                first_update_dialogue = Some(d + 1);
            }
        }

        if (d + 1) % cfg.eval_every == 0 {
            let checkpoint = d + 1;
            record(&mut curve, checkpoint, eval_at(&policy, checkpoint));
        }
    }

    Ok(SeedRun {
        seed,
        curve,
        final_policy: cfg.learner.is_neural().then_some(policy),
        diagnostics,
        first_update_dialogue,
        pretrain_trace,
    })
}

fn stream_seed(seed: u64, tag: u64) -> u64 {
    // distinct env/init streams per (seed, purpose)
    seed.wrapping_mul(0x1000)
        .wrapping_add(tag.wrapping_mul(0x9e37))
}

fn update_period(cfg: &ExperimentConfig) -> usize {
    match cfg.learner {
        Learner::Dqn => cfg.dqn.update_period_dialogues,
        Learner::Enacer => cfg.enacer.update_period_dialogues,
        _ => cfg.tracer.update_period_dialogues,
    }
    .max(1)
}

fn warmup_met(
    cfg: &ExperimentConfig,
    episodes_generated: usize,
    transition_pool: &ReplayPool<Transition>,
) -> bool {
    match cfg.learner {
        Learner::A2c | Learner::A2cEr | Learner::Tracer => {
            episodes_generated >= cfg.tracer.warmup_samples
        }
        Learner::Enacer => episodes_generated >= cfg.enacer.warmup_samples,
        Learner::Dqn => transition_pool.len() >= cfg.dqn.warmup_samples,
        _ => false,
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_update(
    cfg: &ExperimentConfig,
    policy: &mut NetworkParams,
    value: &mut NetworkParams,
    avg: &mut AveragePolicy,
    target: &mut TargetNetwork,
    opt_policy: &mut AdamState,
    opt_value: &mut AdamState,
    episode_pool: &ReplayPool<Episode>,
    transition_pool: &ReplayPool<Transition>,
    fresh_episodes: &mut Vec<Episode>,
    sup_pool: Option<&SupervisedPool>,
    pool_rng: &mut ChaCha12Rng,
    updates: &mut usize,
    diagnostics: &mut Vec<UpdateDiag>,
    dialogues: usize,
) -> Result<bool> {
    match cfg.learner {
        Learner::A2c => {
            if fresh_episodes.is_empty() {
                return Ok(false);
            }
            acer::a2c_update(
                fresh_episodes,
                policy,
                value,
                cfg.tracer.gamma,
                cfg.tracer.rmax_abs,
                opt_policy,
                opt_value,
            )?;
            fresh_episodes.clear();
            *updates += 1;
            Ok(true)
        }
        Learner::A2cEr | Learner::Tracer => {
            if episode_pool.is_empty() {
                return Ok(false);
            }
            let mut tcfg = cfg.tracer.clone();
            tcfg.trust_region = cfg.learner == Learner::Tracer;
            let diag = if cfg.demo_mode.replays() {
                let sup = sup_pool.expect("validated: replay mode has a supervised pool");
                let batch = episode_pool.sample(tcfg.batch_episodes, pool_rng)?;
                let anchor = tcfg.trust_region.then(|| avg.params().clone());
                let (g_star, delta_w, diag) =
                    acer::tracer_gradients(&batch, policy, value, anchor.as_ref(), &tcfg)?;
                let demo_refs = sup.sample(cfg.demo_loss.demo_batch, pool_rng)?;
                let demo_batch: Vec<(&[f64], usize)> = demo_refs
                    .iter()
                    .map(|(b, l)| (b.as_slice(), *l))
                    .collect();
                let grad_all =
                    demo::combined_loss_grad(&g_star, policy, &demo_batch, &cfg.demo_loss)?;
                opt_policy.step(policy, &grad_all, false)?;
                opt_value.step(value, &delta_w, true)?;
                if tcfg.trust_region {
                    // new parameters weighted by α, as in tracer_update
                    avg.update(policy, 1.0 - tcfg.alpha_avg);
                }
                diag
            } else {
                acer::tracer_update(
                    episode_pool,
                    pool_rng,
                    policy,
                    value,
                    avg,
                    &tcfg,
                    opt_policy,
                    opt_value,
                )?
            };
            *updates += 1;
            diagnostics.push(UpdateDiag {
                update: *updates,
                dialogues,
                kl: diag.kl,
                constraint_active: diag.constraint_active,
                policy_grad_norm: diag.policy_grad_norm,
                value_metric: diag.value_grad_norm,
                extra: diag.mean_rho,
            });
            Ok(true)
        }
        Learner::Enacer => {
            if episode_pool.is_empty() {
                return Ok(false);
            }
            let diag = enacer::enacer_update(episode_pool, pool_rng, policy, &cfg.enacer, opt_policy)?;
            if cfg.enacer_post_sl_step && cfg.demo_mode.replays() {
                let sup = sup_pool.expect("validated: post-SL step has a supervised pool");
                let demo_refs = sup.sample(cfg.demo_loss.demo_batch, pool_rng)?;
                let demo_batch: Vec<(&[f64], usize)> = demo_refs
                    .iter()
                    .map(|(b, l)| (b.as_slice(), *l))
                    .collect();
                let (_, grad) = demo::cross_entropy_loss(policy, &demo_batch)?;
                opt_policy.step(policy, &grad, false)?;
            }
            *updates += 1;
            diagnostics.push(UpdateDiag {
                update: *updates,
                dialogues,
                kl: 0.0,
                constraint_active: false,
                policy_grad_norm: diag.delta_norm,
                value_metric: diag.residual_norm,
                extra: diag.effective_rank as f64,
            });
            Ok(true)
        }
        Learner::Dqn => {
            if transition_pool.is_empty() {
                return Ok(false);
            }
            let loss = dqn::dqn_update(
                transition_pool,
                pool_rng,
                policy,
                target,
                &cfg.dqn,
                opt_policy,
            )?;
            *updates += 1;
            if *updates % cfg.dqn.target_sync_period == 0 {
                dqn::sync_target(target, policy)?;
            }
            diagnostics.push(UpdateDiag {
                update: *updates,
                dialogues,
                kl: 0.0,
                constraint_active: false,
                policy_grad_norm: 0.0,
                value_metric: loss,
                extra: 0.0,
            });
            Ok(true)
        }
        Learner::Rule | Learner::Random | Learner::SlOnly => Ok(false),
    }
}

/// Generate one dialogue with the ε-greedy behaviour policy over π, storing
/// per-step behaviour probabilities.
fn rollout_policy(
    env: &mut DialogueEnv,
    policy: &NetworkParams,
    epsilon: f64,
    rng: &mut ChaCha12Rng,
    sample_actions: bool,
) -> Result<Episode> {
    let mut belief = env.reset();
    let mut steps = Vec::new();
    loop {
        let vector = belief.to_vector();
        let eval = policy.policy_forward(&vector)?;
        let (action, mu) = behaviour_select(&eval.probs, epsilon, rng, sample_actions);
        let act = SystemAct::from_index(action, belief.n_slots())?;
        let step = env.step(act)?;
        steps.push(EpisodeStep {
            belief: vector,
            action,
            mu_prob: mu,
            reward: step.reward,
        });
        belief = step.belief;
        if step.done {
            break;
        }
    }
    Episode::new(steps)
}

/// Generate one dialogue with ε-greedy over Q-values, emitting transitions.
fn rollout_q(
    env: &mut DialogueEnv,
    online: &NetworkParams,
    epsilon: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Transition>> {
    let mut belief = env.reset();
    let mut out = Vec::new();
    loop {
        let vector = belief.to_vector();
        let q = online.q_forward(&vector)?;
        let action = if epsilon > 0.0 && rng.gen_bool(epsilon.min(1.0)) {
            rng.gen_range(0..q.len())
        } else {
            argmax(&q)
        };
        let act = SystemAct::from_index(action, belief.n_slots())?;
        let step = env.step(act)?;
        out.push(Transition {
            belief: vector,
            action,
            reward: step.reward,
            next_belief: step.belief.to_vector(),
            done: step.done,
        });
        belief = step.belief;
        if step.done {
            break;
        }
    }
    Ok(out)
}

/// Run every configured seed (in parallel) and return the per-seed results
/// in seed order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| run_training(cfg, seed))
        .collect()
}

/// One bar of the error-rate sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub policy: String,
    pub error_rate: f64,
    pub success: f64,
    pub seed: u64,
}

pub fn emit_sweep<P: AsRef<Path>>(rows: &[SweepRow], path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "policy,error_rate,success,seed")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.policy, r.error_rate, r.success, r.seed)?;
    }
    Ok(())
}

/// Success of {random, SL-only, SL+RL} policies across semantic error
/// rates. The SL+RL policy is TRACER with pre-training and supervised
/// replay, trained for `train_dialogues` at each error rate and evaluated
/// at the same rate.
pub fn sweep_error(
    base: &ExperimentConfig,
    rates: &[f64],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let ontology = base.ontology()?;
    let mut rows = Vec::new();
    for &rate in rates {
        let env_cfg = EnvConfig {
            error_rate: rate,
            max_turns: MAX_TURNS,
            goal: base.goal.clone(),
            record_transcript: false,
        };
        // random baseline
        for &seed in &base.seeds {
            let stats = evaluate(
                &EvalPolicy::Random,
                &ontology,
                &env_cfg,
                base.eval_dialogues,
                stream_seed(seed, 31),
            );
            rows.push(SweepRow {
                policy: "random".into(),
                error_rate: rate,
                success: stats.success_rate,
                seed,
            });
        }
        // SL-only model evaluated under noise
        let sl_cfg = ExperimentConfig {
            learner: Learner::SlOnly,
            demo_mode: DemoMode::Pretrain,
            error_rate: rate,
            train_dialogues: 0,
            ..base.clone()
        };
        for &seed in &base.seeds {
            let run = run_training(&sl_cfg, seed)?;
            rows.push(SweepRow {
                policy: "nn_sl".into(),
                error_rate: rate,
                success: run.curve.rows[0].success,
                seed,
            });
        }
        // SL+RL: TRACER with both demonstration methods
        let rl_cfg = ExperimentConfig {
            learner: Learner::Tracer,
            demo_mode: DemoMode::Both,
            error_rate: rate,
            train_dialogues: 2000,
            ..base.clone()
        };
        let runs = run_all(&rl_cfg)?;
        for run in runs {
            let last = run
                .curve
                .final_row()
                .expect("training curve has checkpoints");
            rows.push(SweepRow {
                policy: "nn_sl_rl".into(),
                error_rate: rate,
                success: last.success,
                seed: run.seed,
            });
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        emit_sweep(&rows, dir.join("error_sweep.csv"))?;
    }
    Ok(rows)
}

/// One line of the configuration audit.
#[derive(Debug, Clone, Serialize)]
pub struct AuditItem {
    pub name: &'static str,
    pub expected: String,
    pub actual: String,
    pub ok: bool,
}

fn audit_item<T: PartialEq + std::fmt::Debug>(
    name: &'static str,
    expected: T,
    actual: T,
) -> AuditItem {
    AuditItem {
        name,
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
        ok: expected == actual,
    }
}

/// Check every protocol constant wired into the default configuration
/// against its published value.
pub fn audit_config() -> Vec<AuditItem> {
    let cfg = ExperimentConfig::default();
    vec![
        audit_item("warmup_samples (actor-critic)", 192, cfg.tracer.warmup_samples),
        audit_item("warmup_samples (enacer)", 192, cfg.enacer.warmup_samples),
        audit_item("warmup_samples (dqn)", 192, cfg.dqn.warmup_samples),
        audit_item(
            "update_period_dialogues (actor-critic)",
            2,
            cfg.tracer.update_period_dialogues,
        ),
        audit_item(
            "update_period_dialogues (enacer)",
            2,
            cfg.enacer.update_period_dialogues,
        ),
        audit_item(
            "update_period_dialogues (dqn)",
            2,
            cfg.dqn.update_period_dialogues,
        ),
        audit_item("replay_pool_capacity", 1000, cfg.pool_capacity),
        audit_item("batch_episodes (actor-critic)", 64, cfg.tracer.batch_episodes),
        audit_item("batch_episodes (enacer)", 64, cfg.enacer.batch_episodes),
        audit_item("batch_size (dqn)", 64, cfg.dqn.batch_size),
        audit_item("demo_batch", 64, cfg.demo_loss.demo_batch),
        audit_item("epsilon_start", 0.3, cfg.epsilon_start),
        audit_item("epsilon_end", 0.0, cfg.epsilon_end),
        audit_item(
            "epsilon_horizon (scratch)",
            3500,
            ExperimentConfig {
                demo_mode: DemoMode::None,
                ..ExperimentConfig::default()
            }
            .effective_epsilon_horizon(),
        ),
        audit_item(
            "epsilon_horizon (with demos)",
            2000,
            ExperimentConfig {
                demo_mode: DemoMode::Both,
                ..ExperimentConfig::default()
            }
            .effective_epsilon_horizon(),
        ),
        audit_item("eval_every", 200, cfg.eval_every),
        audit_item("eval_dialogues", 600, cfg.eval_dialogues),
        audit_item("lambda1", 10.0, cfg.demo_loss.lambda1),
        audit_item("lambda2", 0.01, cfg.demo_loss.lambda2),
        audit_item("is_clip", (0.8, 1.0), cfg.tracer.is_clip),
        audit_item("is_clip (enacer)", (0.8, 1.0), cfg.enacer.is_clip),
        audit_item("alpha_avg", 0.02, cfg.tracer.alpha_avg),
        audit_item("xi", 0.01, cfg.tracer.xi),
        audit_item("gamma (actor-critic)", 0.99, cfg.tracer.gamma),
        audit_item("gamma (enacer)", 0.99, cfg.enacer.gamma),
        audit_item("gamma (dqn)", 0.99, cfg.dqn.gamma),
        audit_item("learning_rate", 0.001, cfg.net.learning_rate),
        audit_item("hidden_dims", vec![130, 50], cfg.net.hidden_dims.clone()),
        audit_item("max_turns", 20, MAX_TURNS),
        audit_item("turn_penalty", 0.05, TURN_PENALTY),
        audit_item("success_reward", 1.0, SUCCESS_REWARD),
        audit_item("train_dialogues", 4000, cfg.train_dialogues),
        audit_item("demo_corpus_dialogues", 720, cfg.demo_dialogues),
    ]
}

pub fn audit_passes() -> bool {
    audit_config().iter().all(|i| i.ok)
}
