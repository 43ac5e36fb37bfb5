//! Temporary probes of learning behaviour (replaced by the acceptance
//! suite once dynamics are settled).

use dialrl::env::GoalConfig;
use dialrl::harness::{run_training, ExperimentConfig, Learner};

fn probe(tag: &str, cfg: &ExperimentConfig) {
    let start = std::time::Instant::now();
    let run = run_training(cfg, 1).unwrap();
    println!("=== {tag} (elapsed {:?})", start.elapsed());
    for row in &run.curve.rows {
        println!(
            "dialogues {:5}  success {:.3}  return {:+.3}  turns {:.2}",
            row.dialogues, row.success, row.mean_return, row.mean_turns
        );
    }
    let active = run.diagnostics.iter().filter(|d| d.constraint_active).count();
    println!(
        "updates {}  constraint_active {}  mean_kl {:.5}",
        run.diagnostics.len(),
        active,
        run.diagnostics.iter().map(|d| d.kl).sum::<f64>() / run.diagnostics.len().max(1) as f64
    );
}

#[test]
#[ignore]
fn probe_a2c_er_patience10() {
    probe(
        "a2c_er patience10",
        &ExperimentConfig {
            learner: Learner::A2cEr,
            train_dialogues: 1600,
            eval_dialogues: 300,
            seeds: vec![1],
            goal: GoalConfig {
                patience: 10,
                ..GoalConfig::default()
            },
            ..ExperimentConfig::default()
        },
    );
}

#[test]
#[ignore]
fn probe_a2c_er_patience10_sampled() {
    probe(
        "a2c_er patience10 sampled",
        &ExperimentConfig {
            learner: Learner::A2cEr,
            train_dialogues: 1600,
            eval_dialogues: 300,
            seeds: vec![1],
            sample_actions: true,
            goal: GoalConfig {
                patience: 10,
                ..GoalConfig::default()
            },
            ..ExperimentConfig::default()
        },
    );
}

#[test]
#[ignore]
fn probe_tracer_slow_average() {
    probe(
        "tracer slow average",
        &ExperimentConfig {
            learner: Learner::Tracer,
            train_dialogues: 1600,
            eval_dialogues: 300,
            seeds: vec![1],
            ..ExperimentConfig::default()
        },
    );
}

#[test]
#[ignore]
fn probe_enacer_long() {
    probe(
        "enacer 4000",
        &ExperimentConfig {
            learner: Learner::Enacer,
            train_dialogues: 4000,
            eval_dialogues: 300,
            seeds: vec![1],
            ..ExperimentConfig::default()
        },
    );
}
