//! Agenda-based user simulator.
//!
//! The user keeps a goal (hard constraints plus requested properties) and a
//! stack of pending dialogue acts. Direct system acts (request, confirm,
//! select, offers) are answered from the goal; null prompts pop the agenda.
//! The simulator is deterministic given its goal and the environment RNG.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ontology::Ontology;

/// Goal-sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalConfig {
    /// Probability that a constraint slot is part of the goal.
    pub p_slot: f64,
    /// Probability that a requestable slot is wanted.
    pub p_request: f64,
    /// Maximum user turns before the user gives up.
    pub patience: usize,
}

impl Default for GoalConfig {
    fn default() -> Self {
        GoalConfig {
            p_slot: 0.8,
            p_request: 0.6,
            patience: 20,
        }
    }
}

/// What the user wants. `constraints[s] = Some(v)` is a hard requirement;
/// `None` means the user does not care about that slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    pub constraints: Vec<Option<usize>>,
    pub requests: Vec<bool>,
    pub patience: usize,
}

impl UserGoal {
    pub fn constrained_slots(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.constraints
            .iter()
            .enumerate()
            .filter_map(|(s, v)| v.map(|v| (s, v)))
    }

    pub fn n_requests(&self) -> usize {
        self.requests.iter().filter(|&&r| r).count()
    }
}

/// Sample a goal. Constraints are drawn from a random database entity so
/// the goal itself is always satisfiable; each slot is kept with
/// probability `p_slot` (at least one is forced). At least one requestable
/// is always wanted.
pub fn sample_goal<R: Rng>(ontology: &Ontology, cfg: &GoalConfig, rng: &mut R) -> UserGoal {
    let seed_entity = &ontology.entities()[rng.gen_range(0..ontology.entities().len())];
    let n_slots = ontology.n_constraint_slots();
    let mut constraints: Vec<Option<usize>> = (0..n_slots)
        .map(|s| {
            if rng.gen_bool(cfg.p_slot) {
                Some(seed_entity.constraint_values[s])
            } else {
                None
            }
        })
        .collect();
    if constraints.iter().all(|c| c.is_none()) {
        let forced = rng.gen_range(0..n_slots);
        constraints[forced] = Some(seed_entity.constraint_values[forced]);
    }
    let n_req = ontology.n_requestables();
    let mut requests: Vec<bool> = (0..n_req).map(|_| rng.gen_bool(cfg.p_request)).collect();
    if requests.iter().all(|&r| !r) {
        let forced = rng.gen_range(0..n_req);
        requests[forced] = true;
    }
    UserGoal {
        constraints,
        requests,
        patience: cfg.patience,
    }
}

/// Semantic-level user act. `Inform { value: None }` is a "don't care"
/// statement for the slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "act", rename_all = "snake_case")]
pub enum UserAct {
    Inform { slot: usize, value: Option<usize> },
    Request { slot: usize },
    Bye,
}

/// System act with its content resolved against belief and database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "act", rename_all = "snake_case")]
pub enum ResolvedAct {
    Request {
        slot: usize,
    },
    Confirm {
        slot: usize,
        value: usize,
    },
    Select {
        slot: usize,
        first: usize,
        second: usize,
    },
    /// An entity offer, or an explicit no-match statement when `entity` is
    /// `None`. `relaxed` names the constraint dropped to find an
    /// alternative.
    Offer {
        entity: Option<usize>,
        relaxed: Option<usize>,
    },
    /// Values of the listed requestable slots for the offered entity.
    AnswerRequests {
        entity: Option<usize>,
        slots: Vec<usize>,
    },
    Repeat,
    Bye,
}

#[derive(Debug, Clone)]
enum AgendaItem {
    Inform(usize),
    Request(usize),
}

/// Per-dialogue user state.
#[derive(Debug, Clone)]
pub struct UserSim {
    goal: UserGoal,
    agenda: Vec<AgendaItem>,
    /// Constraint slots already stated at least once.
    informed: Vec<bool>,
    /// Requestables whose value the user has received.
    received: Vec<bool>,
    /// Offer corrections voiced so far; the user corrects one bad offer
    /// per dialogue and then stops insisting.
    corrections: u8,
    /// Constraint slots restated after a no-match claim.
    restated: Vec<bool>,
    accepted_offer: bool,
    /// What the user said last, re-uttered when asked to repeat.
    last_acts: Option<Vec<UserAct>>,
    turns: usize,
}

/// The user's reply for one turn: the acts uttered and whether the user
/// hung up.
#[derive(Debug, Clone)]
pub struct UserResponse {
    pub acts: Vec<UserAct>,
    pub hangup: bool,
}

impl UserSim {
    pub fn new(goal: UserGoal) -> Self {
        let n_slots = goal.constraints.len();
        let n_req = goal.requests.len();
        // stack: requests at the bottom, constraints on top
        let mut agenda = Vec::new();
        for (r, &wanted) in goal.requests.iter().enumerate().rev() {
            if wanted {
                agenda.push(AgendaItem::Request(r));
            }
        }
        for (s, c) in goal.constraints.iter().enumerate().rev() {
            if c.is_some() {
                agenda.push(AgendaItem::Inform(s));
            }
        }
        UserSim {
            goal,
            agenda,
            informed: vec![false; n_slots],
            received: vec![false; n_req],
            corrections: 0,
            restated: vec![false; n_slots],
            accepted_offer: false,
            last_acts: None,
            turns: 0,
        }
    }

    pub fn goal(&self) -> &UserGoal {
        &self.goal
    }

    pub fn accepted_offer(&self) -> bool {
        self.accepted_offer
    }

    fn inform_goal(&mut self, slot: usize) -> UserAct {
        self.informed[slot] = true;
        UserAct::Inform {
            slot,
            value: self.goal.constraints[slot],
        }
    }

    /// First goal constraint the entity violates, lowest index.
    fn first_violation(&self, ontology: &Ontology, entity: usize) -> Option<usize> {
        self.goal
            .constrained_slots()
            .find(|&(s, v)| ontology.entity(entity).constraint_values[s] != v)
            .map(|(s, _)| s)
    }

    fn missing_requests(&self) -> Vec<usize> {
        self.goal
            .requests
            .iter()
            .enumerate()
            .filter(|&(r, &wanted)| wanted && !self.received[r])
            .map(|(r, _)| r)
            .collect()
    }

    fn accept(&mut self) -> UserResponse {
        self.accepted_offer = true;
        // one request per turn
        match self.missing_requests().first() {
            None => UserResponse {
                acts: vec![UserAct::Bye],
                hangup: true,
            },
            Some(&slot) => UserResponse {
                acts: vec![UserAct::Request { slot }],
                hangup: false,
            },
        }
    }

    fn pop_agenda(&mut self) -> UserResponse {
        while let Some(item) = self.agenda.pop() {
            match item {
                AgendaItem::Inform(s) => {
                    if !self.informed[s] {
                        let act = self.inform_goal(s);
                        return UserResponse {
                            acts: vec![act],
                            hangup: false,
                        };
                    }
                }
                AgendaItem::Request(r) => {
                    if !self.received[r] {
                        return UserResponse {
                            acts: vec![UserAct::Request { slot: r }],
                            hangup: false,
                        };
                    }
                }
            }
        }
        // agenda exhausted but the goal is not served: keep pressing for
        // the missing pieces until patience runs out
        match self.missing_requests().first() {
            Some(&slot) => UserResponse {
                acts: vec![UserAct::Request { slot }],
                hangup: false,
            },
            None => UserResponse {
                acts: vec![UserAct::Bye],
                hangup: true,
            },
        }
    }

    /// React to the system's resolved act.
    pub fn respond(&mut self, ontology: &Ontology, system: &ResolvedAct) -> UserResponse {
        let response = self.respond_inner(ontology, system);
        if !response.hangup && !response.acts.is_empty() {
            self.last_acts = Some(response.acts.clone());
        }
        response
    }

    fn respond_inner(&mut self, ontology: &Ontology, system: &ResolvedAct) -> UserResponse {
        self.turns += 1;
        if self.turns > self.goal.patience {
            return UserResponse {
                acts: vec![UserAct::Bye],
                hangup: true,
            };
        }
        match system {
            ResolvedAct::Request { slot } => {
                let act = self.inform_goal(*slot);
                UserResponse {
                    acts: vec![act],
                    hangup: false,
                }
            }
            ResolvedAct::Confirm { slot, value } | ResolvedAct::Select { slot, first: value, .. } => {
                // either affirm the proposed value or correct it
                let _ = value;
                let act = self.inform_goal(*slot);
                UserResponse {
                    acts: vec![act],
                    hangup: false,
                }
            }
            ResolvedAct::Offer {
                entity: Some(e), ..
            } => match self.first_violation(ontology, *e) {
                Some(slot) if self.corrections < 1 => {
                    self.corrections += 1;
                    let act = self.inform_goal(slot);
                    UserResponse {
                        acts: vec![act],
                        hangup: false,
                    }
                }
                Some(_) => self.accept(), // grudging: stop insisting
                None => self.accept(),
            },
            ResolvedAct::Offer { entity: None, .. } => {
                // system claims no match; restate each constraint once in
                // case it was misheard, then give up
                let next = self
                    .goal
                    .constrained_slots()
                    .map(|(s, _)| s)
                    .find(|&s| !self.restated[s]);
                match next {
                    Some(s) => {
                        self.restated[s] = true;
                        let act = self.inform_goal(s);
                        UserResponse {
                            acts: vec![act],
                            hangup: false,
                        }
                    }
                    None => UserResponse {
                        acts: vec![UserAct::Bye],
                        hangup: true,
                    },
                }
            }
            ResolvedAct::AnswerRequests {
                entity: Some(_),
                slots,
            } => {
                for &r in slots {
                    self.received[r] = true;
                }
                match self.missing_requests().first() {
                    None => UserResponse {
                        acts: vec![UserAct::Bye],
                        hangup: true,
                    },
                    Some(&slot) => UserResponse {
                        acts: vec![UserAct::Request { slot }],
                        hangup: false,
                    },
                }
            }
            ResolvedAct::AnswerRequests { entity: None, .. } | ResolvedAct::Repeat => {
                // a null prompt: say the same thing again, or open with the
                // next agenda item the first time around
                match &self.last_acts {
                    Some(acts) => UserResponse {
                        acts: acts.clone(),
                        hangup: false,
                    },
                    None => self.pop_agenda(),
                }
            }
            ResolvedAct::Bye => UserResponse {
                acts: Vec::new(),
                hangup: true,
            },
        }
    }
}
