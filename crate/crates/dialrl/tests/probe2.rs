//! Instrumented TRACER loop for dynamics debugging.

use std::sync::Arc;

use dialrl::acer::{tracer_update, AveragePolicy, TracerConfig};
use dialrl::env::{BeliefState, DialogueEnv, EnvConfig, Ontology, SystemAct};
use dialrl::harness::{behaviour_select, epsilon_schedule, evaluate, EvalPolicy};
use dialrl::nn::{AdamState, NetworkParams, NetworkSpec};
use dialrl::replay::{Episode, EpisodeStep, ReplayPool};
use dialrl::stream_rng;
use rand::Rng;

#[test]
#[ignore]
fn probe_tracer_instrumented() {
    let ontology = Arc::new(Ontology::desk_default());
    let input_dim = BeliefState::vector_len(&ontology);
    let mut env = DialogueEnv::new(Arc::clone(&ontology), EnvConfig::default(), 11);
    let mut explore_rng = stream_rng(1, 2);
    let mut pool_rng = stream_rng(1, 3);
    let mut policy =
        NetworkParams::init(NetworkSpec::policy(input_dim, 14, 41)).unwrap();
    let mut value = NetworkParams::init(NetworkSpec::value(input_dim, 42)).unwrap();
    let mut avg = AveragePolicy::new(&policy);
    let cfg = TracerConfig::default();
    let mut opt_p = AdamState::new(policy.len(), 0.001);
    let mut opt_v = AdamState::new(value.len(), 0.001);
    let mut pool: ReplayPool<Episode> = ReplayPool::new(1000);
    let prior = BeliefState::prior(&ontology).to_vector();

    let mut behaviour_successes = 0usize;
    let mut behaviour_count = 0usize;
    let mut updates = 0usize;
    for d in 0..2000usize {
        let eps = epsilon_schedule(d, 0.3, 0.0, 3500);
        let mut belief = env.reset();
        let mut steps = Vec::new();
        let success;
        loop {
            let vector = belief.to_vector();
            let eval = policy.policy_forward(&vector).unwrap();
            let (action, mu) = behaviour_select(&eval.probs, eps, &mut explore_rng, false);
            let act = SystemAct::from_index(action, 3).unwrap();
            let step = env.step(act).unwrap();
            steps.push(EpisodeStep {
                belief: vector,
                action,
                mu_prob: mu,
                reward: step.reward,
            });
            belief = step.belief;
            if step.done {
                success = step.success_so_far;
                break;
            }
        }
        behaviour_count += 1;
        if success {
            behaviour_successes += 1;
        }
        pool.push(Episode::new(steps).unwrap());

        if (d + 1) % 2 == 0 && d + 1 >= 192 {
            updates += 1;
            opt_p.lr = 0.001 / (1.0 + updates as f64 / 300.0);
            let diag = tracer_update(
                &pool,
                &mut pool_rng,
                &mut policy,
                &mut value,
                &mut avg,
                &cfg,
                &mut opt_p,
                &mut opt_v,
            )
            .unwrap();
            let _ = diag;
        }

        if (d + 1) % 200 == 0 {
            let stats = evaluate(
                &EvalPolicy::Softmax(&policy),
                &ontology,
                &EnvConfig::default(),
                200,
                1000 + d as u64,
            );
            let probs = policy.policy_forward(&prior).unwrap().probs;
            let v0 = value.value_forward(&prior).unwrap();
            let max_logit = policy
                .policy_forward(&prior)
                .unwrap()
                .trace
                .logits()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut top: Vec<(usize, f64)> = probs.iter().cloned().enumerate().collect();
            top.sort_by(|a, b| b.1.total_cmp(&a.1));
            top.truncate(3);
            println!(
                "d {:5} eval_succ {:.3} turns {:5.2} | behav_succ {:.3} | V(prior) {:+.3} maxlogit {:+.1} top {:?}",
                d + 1,
                stats.success_rate,
                stats.mean_turns,
                behaviour_successes as f64 / behaviour_count.max(1) as f64,
                v0,
                max_logit,
                top.iter()
                    .map(|(i, p)| format!("{}:{:.2}", act_name(*i), p))
                    .collect::<Vec<_>>()
            );
            behaviour_successes = 0;
            behaviour_count = 0;
        }
    }
}

fn act_name(i: usize) -> &'static str {
    match i {
        0 => "req0",
        1 => "req1",
        2 => "req2",
        3 => "conf0",
        4 => "conf1",
        5 => "conf2",
        6 => "sel0",
        7 => "sel1",
        8 => "sel2",
        9 => "inform",
        10 => "alts",
        11 => "informreq",
        12 => "repeat",
        _ => "bye",
    }
}
