//! Desk-scale task-oriented dialogue MDP.
//!
//! One [`DialogueEnv::step`] is a full system turn: the system act is
//! resolved against the tracked belief and the database, the simulated
//! user reacts, the user's acts pass through the semantic-error channel,
//! and the belief is updated from the (possibly corrupted) observation.
//! The return is `1(success) − 0.05·T` with a hard cap of 20 turns.

pub mod ontology;
pub mod simulator;

mod rule;

pub use ontology::{Entity, Ontology, SlotDef};
pub use rule::rule_policy;
pub use simulator::{sample_goal, GoalConfig, ResolvedAct, UserAct, UserGoal, UserSim};

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::{Error, Result};

/// Hard dialogue length cap, in system turns.
pub const MAX_TURNS: usize = 20;
/// Per-turn penalty.
pub const TURN_PENALTY: f64 = 0.05;
/// Bonus added at termination iff the dialogue succeeded.
pub const SUCCESS_REWARD: f64 = 1.0;

/// Prior probability mass on the "none" category of each slot.
const PRIOR_NONE_MASS: f64 = 0.8;
/// Minimum top-value probability for a slot to constrain the database query.
const QUERY_CONF: f64 = 0.5;
/// A slot counts as settled on a value at this confidence…
pub(crate) const SETTLED_VALUE_CONF: f64 = 0.8;
/// …or as settled on "don't care" at this much mass on "none".
pub(crate) const SETTLED_NONE_CONF: f64 = 0.9;

/// The restricted master action set: request/confirm/select per constraint
/// slot plus five slot-independent acts. With three constraint slots this
/// is the 14-action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "intent", rename_all = "snake_case")]
pub enum SystemAct {
    Request { slot: usize },
    Confirm { slot: usize },
    Select { slot: usize },
    Inform,
    InformAlternatives,
    InformRequested,
    Repeat,
    Bye,
}

impl SystemAct {
    /// Size of the action set for an ontology with `n_slots` constraint
    /// slots.
    pub fn count(n_slots: usize) -> usize {
        3 * n_slots + 5
    }

    pub fn index(&self, n_slots: usize) -> usize {
        match *self {
            SystemAct::Request { slot } => slot,
            SystemAct::Confirm { slot } => n_slots + slot,
            SystemAct::Select { slot } => 2 * n_slots + slot,
            SystemAct::Inform => 3 * n_slots,
            SystemAct::InformAlternatives => 3 * n_slots + 1,
            SystemAct::InformRequested => 3 * n_slots + 2,
            SystemAct::Repeat => 3 * n_slots + 3,
            SystemAct::Bye => 3 * n_slots + 4,
        }
    }

    pub fn from_index(index: usize, n_slots: usize) -> Result<Self> {
        let count = Self::count(n_slots);
        if index >= count {
            return Err(Error::ActionOutOfRange {
                action: index,
                count,
            });
        }
        Ok(if index < n_slots {
            SystemAct::Request { slot: index }
        } else if index < 2 * n_slots {
            SystemAct::Confirm {
                slot: index - n_slots,
            }
        } else if index < 3 * n_slots {
            SystemAct::Select {
                slot: index - 2 * n_slots,
            }
        } else {
            match index - 3 * n_slots {
                0 => SystemAct::Inform,
                1 => SystemAct::InformAlternatives,
                2 => SystemAct::InformRequested,
                3 => SystemAct::Repeat,
                _ => SystemAct::Bye,
            }
        })
    }

    pub fn all(n_slots: usize) -> Vec<SystemAct> {
        (0..Self::count(n_slots))
            .map(|i| Self::from_index(i, n_slots).expect("index in range"))
            .collect()
    }
}

/// Tracked dialogue state: per-slot categorical beliefs (values plus a
/// trailing "none" category), requested flags, the last system act and a
/// bucketed database match count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub slot_dists: Vec<Vec<f64>>,
    pub requested: Vec<f64>,
    pub last_system_act: Option<usize>,
    pub match_bucket: f64,
    n_actions: usize,
}

impl BeliefState {
    /// Fresh belief: slot mass concentrated on "none", no requests, no
    /// system act yet.
    pub fn prior(ontology: &Ontology) -> Self {
        let slot_dists = (0..ontology.n_constraint_slots())
            .map(|s| {
                let n = ontology.n_values(s);
                let mut d = vec![(1.0 - PRIOR_NONE_MASS) / n as f64; n + 1];
                d[n] = PRIOR_NONE_MASS;
                d
            })
            .collect();
        BeliefState {
            slot_dists,
            requested: vec![0.0; ontology.n_requestables()],
            last_system_act: None,
            match_bucket: bucket(ontology.entities().len()),
            n_actions: SystemAct::count(ontology.n_constraint_slots()),
        }
    }

    /// Flattened input length for an ontology:
    /// Σ(values+1) + requestables + (actions+1) + 1.
    pub fn vector_len(ontology: &Ontology) -> usize {
        let slots: usize = (0..ontology.n_constraint_slots())
            .map(|s| ontology.n_values(s) + 1)
            .sum();
        slots
            + ontology.n_requestables()
            + SystemAct::count(ontology.n_constraint_slots())
            + 1
            + 1
    }

    /// Flatten to the network input vector. Layout: slot distributions,
    /// requested flags, last-act one-hot (trailing "none" position),
    /// match-count bucket.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(
            self.slot_dists.iter().map(|d| d.len()).sum::<usize>()
                + self.requested.len()
                + self.n_actions
                + 2,
        );
        for d in &self.slot_dists {
            v.extend_from_slice(d);
        }
        v.extend_from_slice(&self.requested);
        let mut one_hot = vec![0.0; self.n_actions + 1];
        one_hot[self.last_system_act.unwrap_or(self.n_actions)] = 1.0;
        v.extend_from_slice(&one_hot);
        v.push(self.match_bucket);
        v
    }

    pub fn n_slots(&self) -> usize {
        self.slot_dists.len()
    }

    pub fn none_prob(&self, slot: usize) -> f64 {
        *self.slot_dists[slot].last().expect("non-empty distribution")
    }

    /// Best real value of a slot (excluding "none"), lowest index on ties.
    pub fn top_real_value(&self, slot: usize) -> (usize, f64) {
        let d = &self.slot_dists[slot];
        let mut best = (0, d[0]);
        for (i, &p) in d[..d.len() - 1].iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    /// Top two real values of a slot.
    pub fn top_two_real(&self, slot: usize) -> ((usize, f64), (usize, f64)) {
        let d = &self.slot_dists[slot];
        let n = d.len() - 1;
        let first = self.top_real_value(slot);
        let mut second = (usize::MAX, f64::NEG_INFINITY);
        for (i, &p) in d[..n].iter().enumerate() {
            if i != first.0 && p > second.1 {
                second = (i, p);
            }
        }
        if second.0 == usize::MAX {
            second = first;
        }
        (first, second)
    }

    /// Highest category probability of a slot, "none" included.
    pub fn top_prob(&self, slot: usize) -> f64 {
        self.slot_dists[slot]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Database constraints implied by the belief: slots whose top real
    /// value dominates "none" and clears the query threshold.
    pub fn db_query(&self) -> Vec<(usize, usize)> {
        (0..self.n_slots())
            .filter_map(|s| {
                let (v, p) = self.top_real_value(s);
                if p >= QUERY_CONF && p > self.none_prob(s) {
                    Some((s, v))
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Bucketed match count in [0,1]: none, unique, a few, many.
fn bucket(count: usize) -> f64 {
    match count {
        0 => 0.0,
        1 => 1.0 / 3.0,
        2..=4 => 2.0 / 3.0,
        _ => 1.0,
    }
}

/// A user act after the understanding channel: possibly corrupted, with a
/// confidence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedAct {
    pub act: UserAct,
    pub confidence: f64,
}

/// Semantic-error channel. With probability `error_rate` an informed slot
/// value is replaced by a uniformly random different value; act types are
/// never confused. Confidence is `max(0.2, 1 − error_rate + 0.1·noise)`
/// clipped to [0,1], exactly 1 when the channel is clean.
pub fn corrupt<R: Rng>(
    act: &UserAct,
    ontology: &Ontology,
    error_rate: f64,
    rng: &mut R,
) -> ObservedAct {
    match act {
        UserAct::Inform { slot, value } => {
            if error_rate <= 0.0 {
                return ObservedAct {
                    act: act.clone(),
                    confidence: 1.0,
                };
            }
            let corrupted = rng.gen_bool(error_rate.min(1.0));
            let observed_value = if corrupted {
                let n = ontology.n_values(*slot);
                let candidates: Vec<usize> = (0..n).filter(|v| Some(*v) != *value).collect();
                if candidates.is_empty() {
                    *value
                } else {
                    Some(candidates[rng.gen_range(0..candidates.len())])
                }
            } else {
                *value
            };
            let noise: f64 = StandardNormal.sample(rng);
            let confidence = (1.0 - error_rate + 0.1 * noise).max(0.2).clamp(0.0, 1.0);
            ObservedAct {
                act: UserAct::Inform {
                    slot: *slot,
                    value: observed_value,
                },
                confidence,
            }
        }
        _ => ObservedAct {
            act: act.clone(),
            confidence: 1.0,
        },
    }
}

/// Fold observed user acts into the belief. Informed slots move mass to
/// the observed value in proportion to the confidence; requests set the
/// corresponding flag; everything else is untouched.
pub fn belief_update(belief: &BeliefState, observed: &[ObservedAct]) -> BeliefState {
    let mut next = belief.clone();
    for obs in observed {
        match &obs.act {
            UserAct::Inform { slot, value } => {
                let d = &mut next.slot_dists[*slot];
                let target = value.unwrap_or(d.len() - 1);
                let c = obs.confidence.clamp(0.0, 1.0);
                for (i, p) in d.iter_mut().enumerate() {
                    let point = if i == target { 1.0 } else { 0.0 };
                    *p = c * point + (1.0 - c) * *p;
                }
                let total: f64 = d.iter().sum();
                if total > 0.0 {
                    for p in d.iter_mut() {
                        *p /= total;
                    }
                }
            }
            UserAct::Request { slot } => {
                next.requested[*slot] = 1.0;
            }
            UserAct::Bye => {}
        }
    }
    next
}

/// Environment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    pub error_rate: f64,
    pub max_turns: usize,
    pub goal: GoalConfig,
    pub record_transcript: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            error_rate: 0.0,
            max_turns: MAX_TURNS,
            goal: GoalConfig::default(),
            record_transcript: false,
        }
    }
}

/// Result of one system turn.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub belief: BeliefState,
    pub reward: f64,
    pub done: bool,
    pub success_so_far: bool,
    pub turn: usize,
}

/// One line of an exported dialogue transcript.
#[derive(Debug, Clone, Serialize)]
pub struct TranscriptEntry {
    pub episode: usize,
    pub turn: usize,
    pub speaker: String,
    pub act: serde_json::Value,
}

pub fn write_transcript_jsonl<P: AsRef<Path>>(path: P, entries: &[TranscriptEntry]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        writeln!(w)?;
    }
    Ok(())
}

struct Dialogue {
    user: UserSim,
    belief: BeliefState,
    turn: usize,
    done: bool,
    offered: Option<usize>,
    answered: Vec<bool>,
    /// The system has stated that nothing matches.
    no_match_asserted: bool,
    /// …and at that moment the goal truly had no matching entity.
    no_match_correct: bool,
    goal_satisfiable: bool,
}

/// The dialogue MDP. One instance per training thread; instances share the
/// immutable ontology.
pub struct DialogueEnv {
    ontology: Arc<Ontology>,
    pub cfg: EnvConfig,
    rng: ChaCha12Rng,
    st: Option<Dialogue>,
    transcript: Vec<TranscriptEntry>,
    episode: usize,
}

impl DialogueEnv {
    pub fn new(ontology: Arc<Ontology>, cfg: EnvConfig, seed: u64) -> Self {
        DialogueEnv {
            ontology,
            cfg,
            rng: crate::rng::stream_rng(seed, 0x656e_76),
            st: None,
            transcript: Vec::new(),
            episode: 0,
        }
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn n_actions(&self) -> usize {
        SystemAct::count(self.ontology.n_constraint_slots())
    }

    pub fn belief_len(&self) -> usize {
        BeliefState::vector_len(&self.ontology)
    }

    /// Restart the RNG stream; the next reset replays deterministically.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = crate::rng::stream_rng(seed, 0x656e_76);
    }

    /// Begin a fresh dialogue and return the prior belief.
    pub fn reset(&mut self) -> BeliefState {
        let goal = sample_goal(&self.ontology, &self.cfg.goal, &mut self.rng);
        let constraints: Vec<(usize, usize)> = goal.constrained_slots().collect();
        let goal_satisfiable = !self.ontology.matching_entities(&constraints).is_empty();
        let belief = BeliefState::prior(&self.ontology);
        self.episode += 1;
        if self.cfg.record_transcript {
            self.transcript.push(TranscriptEntry {
                episode: self.episode,
                turn: 0,
                speaker: "goal".into(),
                act: serde_json::to_value(&goal).expect("goal serializes"),
            });
        }
        let n_req = self.ontology.n_requestables();
        self.st = Some(Dialogue {
            user: UserSim::new(goal),
            belief: belief.clone(),
            turn: 0,
            done: false,
            offered: None,
            answered: vec![false; n_req],
            no_match_asserted: false,
            no_match_correct: false,
            goal_satisfiable,
        });
        belief
    }

    pub fn current_belief(&self) -> Option<&BeliefState> {
        self.st.as_ref().map(|d| &d.belief)
    }

    pub fn turn(&self) -> usize {
        self.st.as_ref().map_or(0, |d| d.turn)
    }

    pub fn is_done(&self) -> bool {
        self.st.as_ref().map_or(true, |d| d.done)
    }

    pub fn goal(&self) -> Option<&UserGoal> {
        self.st.as_ref().map(|d| d.user.goal())
    }

    /// Success is defined only once the dialogue has terminated: the system
    /// offered an entity consistent with every goal constraint and answered
    /// all requested slots for it, or it correctly asserted that no entity
    /// matches the goal.
    pub fn success(&self) -> Result<bool> {
        let st = self.st.as_ref().ok_or(Error::EpisodeNotDone)?;
        if !st.done {
            return Err(Error::EpisodeNotDone);
        }
        Ok(self.success_now(st))
    }

    fn success_now(&self, st: &Dialogue) -> bool {
        if st.no_match_correct {
            return true;
        }
        let Some(e) = st.offered else { return false };
        let constraints: Vec<(usize, usize)> = st.user.goal().constrained_slots().collect();
        if !self.ontology.entity_matches(e, &constraints) {
            return false;
        }
        st.user
            .goal()
            .requests
            .iter()
            .enumerate()
            .all(|(r, &wanted)| !wanted || st.answered[r])
    }

    /// Fill in a system act's content from the belief and the database,
    /// applying its side effects on the dialogue state.
    fn resolve(&self, st: &mut Dialogue, action: SystemAct) -> ResolvedAct {
        match action {
            SystemAct::Request { slot } => ResolvedAct::Request { slot },
            SystemAct::Confirm { slot } => ResolvedAct::Confirm {
                slot,
                value: st.belief.top_real_value(slot).0,
            },
            SystemAct::Select { slot } => {
                let ((first, _), (second, _)) = st.belief.top_two_real(slot);
                ResolvedAct::Select {
                    slot,
                    first,
                    second,
                }
            }
            SystemAct::Inform => {
                let query = st.belief.db_query();
                let matches = self.ontology.matching_entities(&query);
                match matches.first() {
                    Some(&e) => {
                        Self::set_offer(st, e);
                        ResolvedAct::Offer {
                            entity: Some(e),
                            relaxed: None,
                        }
                    }
                    None => {
                        Self::note_no_match(st);
                        ResolvedAct::Offer {
                            entity: None,
                            relaxed: None,
                        }
                    }
                }
            }
            SystemAct::InformAlternatives => {
                Self::note_no_match(st);
                let query = st.belief.db_query();
                // relax the least-confident constraint in the query
                let relaxed = query
                    .iter()
                    .map(|&(s, v)| (s, st.belief.slot_dists[s][v]))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(s, _)| s);
                let remaining: Vec<(usize, usize)> = query
                    .into_iter()
                    .filter(|&(s, _)| Some(s) != relaxed)
                    .collect();
                let matches = self.ontology.matching_entities(&remaining);
                let pick = matches
                    .iter()
                    .find(|&&e| Some(e) != st.offered)
                    .or_else(|| matches.first())
                    .copied();
                match pick {
                    Some(e) => {
                        Self::set_offer(st, e);
                        ResolvedAct::Offer {
                            entity: Some(e),
                            relaxed,
                        }
                    }
                    None => ResolvedAct::Offer {
                        entity: None,
                        relaxed,
                    },
                }
            }
            SystemAct::InformRequested => {
                let pending: Vec<usize> = st
                    .belief
                    .requested
                    .iter()
                    .enumerate()
                    .filter(|&(_, &f)| f >= 0.5)
                    .map(|(r, _)| r)
                    .collect();
                if st.offered.is_some() {
                    for &r in &pending {
                        st.answered[r] = true;
                        st.belief.requested[r] = 0.0;
                    }
                    ResolvedAct::AnswerRequests {
                        entity: st.offered,
                        slots: pending,
                    }
                } else {
                    ResolvedAct::AnswerRequests {
                        entity: None,
                        slots: Vec::new(),
                    }
                }
            }
            SystemAct::Repeat => ResolvedAct::Repeat,
            SystemAct::Bye => {
                // a goodbye only closes the dialogue once something is on
                // the table; wrapping up before any offer or no-match
                // statement is heard as a repeat prompt
                if st.offered.is_some() || st.no_match_asserted {
                    ResolvedAct::Bye
                } else {
                    ResolvedAct::Repeat
                }
            }
        }
    }

    fn set_offer(st: &mut Dialogue, entity: usize) {
        if st.offered != Some(entity) {
            st.offered = Some(entity);
            for a in &mut st.answered {
                *a = false;
            }
        }
    }

    fn note_no_match(st: &mut Dialogue) {
        st.no_match_asserted = true;
        if !st.goal_satisfiable {
            st.no_match_correct = true;
        }
    }

    /// Execute one system turn.
    pub fn step(&mut self, action: SystemAct) -> Result<EnvStep> {
        let ontology = Arc::clone(&self.ontology);
        let mut st = self.st.take().ok_or(Error::EpisodeDone)?;
        if st.done {
            self.st = Some(st);
            return Err(Error::EpisodeDone);
        }
        let resolved = self.resolve(&mut st, action);
        if self.cfg.record_transcript {
            self.transcript.push(TranscriptEntry {
                episode: self.episode,
                turn: st.turn + 1,
                speaker: "system".into(),
                act: serde_json::to_value(&resolved).expect("act serializes"),
            });
        }
        let response = st.user.respond(&ontology, &resolved);
        let observed: Vec<ObservedAct> = response
            .acts
            .iter()
            .map(|a| corrupt(a, &ontology, self.cfg.error_rate, &mut self.rng))
            .collect();
        if self.cfg.record_transcript {
            for obs in &observed {
                self.transcript.push(TranscriptEntry {
                    episode: self.episode,
                    turn: st.turn + 1,
                    speaker: "user".into(),
                    act: serde_json::to_value(obs).expect("act serializes"),
                });
            }
        }
        let mut belief = belief_update(&st.belief, &observed);
        belief.last_system_act = Some(action.index(ontology.n_constraint_slots()));
        belief.match_bucket = bucket(ontology.matching_entities(&belief.db_query()).len());
        // keep flag clearing from resolve (belief_update starts from the
        // resolved belief already)
        st.belief = belief;
        st.turn += 1;
        let done = resolved == ResolvedAct::Bye
            || response.hangup
            || st.turn >= self.cfg.max_turns;
        st.done = done;
        let success = self.success_now(&st);
        let reward = -TURN_PENALTY + if done && success { SUCCESS_REWARD } else { 0.0 };
        let step = EnvStep {
            belief: st.belief.clone(),
            reward,
            done,
            success_so_far: success,
            turn: st.turn,
        };
        self.st = Some(st);
        Ok(step)
    }

    /// Drain the recorded transcript.
    pub fn take_transcript(&mut self) -> Vec<TranscriptEntry> {
        std::mem::take(&mut self.transcript)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;
    use approx::assert_relative_eq;

    fn env(seed: u64) -> DialogueEnv {
        DialogueEnv::new(
            Arc::new(Ontology::desk_default()),
            EnvConfig::default(),
            seed,
        )
    }

    #[test]
    fn action_index_mapping_is_bijective() {
        for n_slots in [1, 3, 5] {
            let count = SystemAct::count(n_slots);
            for i in 0..count {
                let act = SystemAct::from_index(i, n_slots).unwrap();
                assert_eq!(act.index(n_slots), i);
            }
            assert!(SystemAct::from_index(count, n_slots).is_err());
        }
        assert_eq!(SystemAct::count(3), 14);
    }

    #[test]
    fn belief_vector_length_is_37_for_desk_ontology() {
        let ont = Ontology::desk_default();
        assert_eq!(BeliefState::vector_len(&ont), 37);
        let b = BeliefState::prior(&ont);
        assert_eq!(b.to_vector().len(), 37);
    }

    #[test]
    fn reset_belief_is_prior() {
        let mut e = env(3);
        let b = e.reset();
        for s in 0..3 {
            let total: f64 = b.slot_dists[s].iter().sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
            assert_relative_eq!(b.none_prob(s), 0.8, epsilon = 1e-12);
        }
        // last-act one-hot sits on the trailing "none" position
        let v = b.to_vector();
        let one_hot = &v[21..36];
        assert_eq!(one_hot[14], 1.0);
        assert!(one_hot[..14].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let mut a = env(99);
        let mut b = env(99);
        assert_eq!(a.reset().to_vector(), b.reset().to_vector());
        assert_eq!(a.goal(), b.goal());
    }

    #[test]
    fn belief_components_stay_in_unit_interval() {
        let mut e = env(5);
        let mut rng = stream_rng(5, 77);
        for _ in 0..50 {
            e.reset();
            loop {
                let a = SystemAct::from_index(rng.gen_range(0..14), 3).unwrap();
                let step = e.step(a).unwrap();
                let v = step.belief.to_vector();
                assert_eq!(v.len(), 37);
                assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
                if step.done {
                    break;
                }
            }
        }
    }

    #[test]
    fn corrupt_clean_channel_is_identity() {
        let ont = Ontology::desk_default();
        let act = UserAct::Inform {
            slot: 1,
            value: Some(3),
        };
        let obs = corrupt(&act, &ont, 0.0, &mut stream_rng(0, 0));
        assert_eq!(obs.act, act);
        assert_eq!(obs.confidence, 1.0);
    }

    #[test]
    fn corrupt_rate_one_always_flips() {
        let ont = Ontology::desk_default();
        let mut rng = stream_rng(8, 8);
        for v in 0..5 {
            let act = UserAct::Inform {
                slot: 0,
                value: Some(v),
            };
            for _ in 0..20 {
                let obs = corrupt(&act, &ont, 1.0, &mut rng);
                if let UserAct::Inform { value, .. } = obs.act {
                    assert_ne!(value, Some(v));
                } else {
                    panic!("act type must be preserved");
                }
            }
        }
    }

    #[test]
    fn corrupt_empirical_rate_matches() {
        let ont = Ontology::desk_default();
        let mut rng = stream_rng(13, 13);
        let act = UserAct::Inform {
            slot: 2,
            value: Some(1),
        };
        let trials = 100_000;
        let mut flipped = 0;
        for _ in 0..trials {
            let obs = corrupt(&act, &ont, 0.15, &mut rng);
            if obs.act != act {
                flipped += 1;
            }
        }
        let rate = flipped as f64 / trials as f64;
        assert!((rate - 0.15).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn corrupt_confidence_bounds() {
        let ont = Ontology::desk_default();
        let mut rng = stream_rng(21, 4);
        let act = UserAct::Inform {
            slot: 0,
            value: Some(0),
        };
        for _ in 0..1000 {
            let obs = corrupt(&act, &ont, 0.45, &mut rng);
            assert!((0.2..=1.0).contains(&obs.confidence));
        }
    }

    #[test]
    fn belief_update_full_confidence_is_point_mass() {
        let ont = Ontology::desk_default();
        let prior = BeliefState::prior(&ont);
        let observed = [ObservedAct {
            act: UserAct::Inform {
                slot: 1,
                value: Some(3),
            },
            confidence: 1.0,
        }];
        let b = belief_update(&prior, &observed);
        assert_relative_eq!(b.slot_dists[1][3], 1.0, epsilon = 1e-12);
        // other slots untouched
        assert_eq!(b.slot_dists[0], prior.slot_dists[0]);
        assert_eq!(b.slot_dists[2], prior.slot_dists[2]);
    }

    #[test]
    fn belief_update_hand_computed_mixture() {
        // confidence 0.6 onto a uniform 6-category distribution:
        // observed value gets 0.6 + 0.4/6, the rest 0.4/6 each
        let ont = Ontology::desk_default();
        let mut b = BeliefState::prior(&ont);
        b.slot_dists[0] = vec![1.0 / 6.0; 6];
        let observed = [ObservedAct {
            act: UserAct::Inform {
                slot: 0,
                value: Some(2),
            },
            confidence: 0.6,
        }];
        let got = belief_update(&b, &observed);
        assert_relative_eq!(got.slot_dists[0][2], 0.6 + 0.4 / 6.0, epsilon = 1e-12);
        for i in [0usize, 1, 3, 4, 5] {
            assert_relative_eq!(got.slot_dists[0][i], 0.4 / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn belief_update_ignores_unobserved_slots() {
        let ont = Ontology::desk_default();
        let prior = BeliefState::prior(&ont);
        let b = belief_update(&prior, &[]);
        assert_eq!(b.slot_dists, prior.slot_dists);
    }

    #[test]
    fn step_reward_is_turn_penalty_until_termination() {
        let mut e = env(17);
        e.reset();
        let step = e.step(SystemAct::Request { slot: 0 }).unwrap();
        assert_eq!(step.reward, -0.05);
        assert!(!step.done);
    }

    #[test]
    fn twenty_fruitless_turns_return_minus_one() {
        let mut e = env(23);
        e.reset();
        let mut total = 0.0;
        let mut last_done = false;
        for _ in 0..20 {
            // repeat never serves the goal by itself here: the user informs
            // constraints but no offer is ever made
            let step = e.step(SystemAct::Request { slot: 0 }).unwrap();
            total += step.reward;
            last_done = step.done;
        }
        assert!(last_done);
        assert_relative_eq!(total, -1.0, epsilon = 1e-12);
        assert!(!e.success().unwrap());
        assert!(e.step(SystemAct::Bye).is_err());
    }

    #[test]
    fn scripted_dialogue_succeeds_with_expected_return() {
        // request all three slots, offer, answer the single request: the
        // user byes on turn 5 with everything served → return 1 − 0.05·5
        // = 0.75. Pick a seed whose goal wants exactly one requestable.
        let seed = (0..200u64)
            .find(|&s| {
                let mut probe = env(s);
                probe.reset();
                probe.goal().unwrap().n_requests() == 1
            })
            .expect("some goal has a single request");
        let mut e = env(seed);
        e.reset();
        let mut total = 0.0;
        for s in 0..3 {
            let step = e.step(SystemAct::Request { slot: s }).unwrap();
            total += step.reward;
            assert!(!step.done);
        }
        let step = e.step(SystemAct::Inform).unwrap();
        total += step.reward;
        assert!(!step.done, "user should ask for requestables");
        let step = e.step(SystemAct::InformRequested).unwrap();
        total += step.reward;
        assert!(step.done);
        assert!(e.success().unwrap());
        assert_relative_eq!(total, 0.75, epsilon = 1e-12);
        assert_eq!(step.turn, 5);
    }

    #[test]
    fn success_requires_termination() {
        let mut e = env(37);
        e.reset();
        assert!(matches!(e.success(), Err(Error::EpisodeNotDone)));
    }

    #[test]
    fn success_false_when_request_unanswered() {
        let mut e = env(41);
        e.reset();
        for s in 0..3 {
            e.step(SystemAct::Request { slot: s }).unwrap();
        }
        e.step(SystemAct::Inform).unwrap();
        // hang up without answering the user's requests
        let step = e.step(SystemAct::Bye).unwrap();
        assert!(step.done);
        assert!(!e.success().unwrap());
    }

    #[test]
    fn no_match_assertion_counts_as_success_on_tiny_db() {
        // database with a single entity: any other constraint combination
        // is unsatisfiable, and saying so is correct
        let ont = Ontology::new(
            vec![
                SlotDef {
                    name: "kind".into(),
                    values: vec!["a".into(), "b".into()],
                },
                SlotDef {
                    name: "zone".into(),
                    values: vec!["x".into(), "y".into()],
                },
            ],
            vec!["phone".into()],
            vec![Entity {
                name: "only".into(),
                constraint_values: vec![0, 0],
                requestable_values: vec!["555".into()],
            }],
        )
        .unwrap();
        let cfg = EnvConfig {
            goal: GoalConfig {
                p_slot: 1.0,
                p_request: 1.0,
                patience: 20,
            },
            ..EnvConfig::default()
        };
        // find a seed whose goal is unsatisfiable (needs kind=b or zone=y…
        // impossible: goals come from entities, so force one by hand)
        let mut e = DialogueEnv::new(Arc::new(ont), cfg, 1);
        e.reset();
        // overwrite the sampled goal with an unsatisfiable one
        let st = e.st.as_mut().unwrap();
        st.user = UserSim::new(UserGoal {
            constraints: vec![Some(1), Some(1)],
            requests: vec![true],
            patience: 20,
        });
        st.goal_satisfiable = false;
        for s in 0..2 {
            e.step(SystemAct::Request { slot: s }).unwrap();
        }
        // belief now pins (kind=b, zone=y): no match in the database
        let step = e.step(SystemAct::InformAlternatives).unwrap();
        let _ = step;
        let mut done = e.is_done();
        let mut guard = 0;
        while !done {
            let s = e.step(SystemAct::Bye).unwrap();
            done = s.done;
            guard += 1;
            assert!(guard < 3);
        }
        assert!(e.success().unwrap());
    }

    #[test]
    fn step_sequence_is_deterministic() {
        let script = [
            SystemAct::Request { slot: 0 },
            SystemAct::Request { slot: 1 },
            SystemAct::Request { slot: 2 },
            SystemAct::Inform,
            SystemAct::InformRequested,
            SystemAct::Bye,
        ];
        let run = |seed: u64| {
            let mut e = DialogueEnv::new(
                Arc::new(Ontology::desk_default()),
                EnvConfig {
                    error_rate: 0.3,
                    ..EnvConfig::default()
                },
                seed,
            );
            e.reset();
            let mut out = Vec::new();
            for a in script {
                let step = e.step(a).unwrap();
                out.push((step.belief.to_vector(), step.reward, step.done));
                if step.done {
                    break;
                }
            }
            out
        };
        assert_eq!(run(55), run(55));
    }

    #[test]
    fn episode_returns_lie_in_reward_bounds() {
        let mut e = env(61);
        let mut rng = stream_rng(61, 2);
        for _ in 0..200 {
            e.reset();
            let mut total = 0.0;
            loop {
                let a = SystemAct::from_index(rng.gen_range(0..14), 3).unwrap();
                let step = e.step(a).unwrap();
                total += step.reward;
                if step.done {
                    break;
                }
            }
            assert!(
                total >= -1.0 - 1e-9 && total <= 0.95 + 1e-9,
                "return {total}"
            );
        }
    }

    #[test]
    fn transcript_records_acts_one_per_line() {
        let mut e = DialogueEnv::new(
            Arc::new(Ontology::desk_default()),
            EnvConfig {
                record_transcript: true,
                ..EnvConfig::default()
            },
            7,
        );
        e.reset();
        e.step(SystemAct::Request { slot: 0 }).unwrap();
        e.step(SystemAct::Bye).unwrap();
        let t = e.take_transcript();
        assert!(t.len() >= 4); // goal + 2 system acts + ≥1 user act
        assert!(t.iter().any(|l| l.speaker == "system"));
        assert!(t.iter().any(|l| l.speaker == "user"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.jsonl");
        write_transcript_jsonl(&path, &t).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), t.len());
        for line in text.lines() {
            let _: serde_json::Value = serde_json::from_str(line).unwrap();
        }
    }
}
