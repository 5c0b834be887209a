//! Short training runs checking the loop's structural guarantees.

use toppo_core::buffer::EpsilonMode;
use toppo_core::config::{Algorithm, TrainConfig};
use toppo_core::envs::EnvId;
use toppo_core::metrics::{read_metrics, write_csv, write_metrics};
use toppo_core::policy::PolicyParams;
use toppo_core::trainer::{train, train_with_observer};

fn small(env: EnvId) -> TrainConfig {
    TrainConfig {
        env,
        total_timesteps: 8 * 256,
        batch_size: 256,
        minibatches: 4,
        epochs: 3,
        hidden: vec![16],
        eval_interval: 4,
        eval_episodes: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(EnvId::CartPole);
    let paths = [dir.path().join("a.csv"), dir.path().join("b.csv")];
    for p in &paths {
        let run = train(Algorithm::Toppo, &cfg).unwrap();
        write_csv(&run.metrics, p).unwrap();
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    let other = train(Algorithm::Toppo, &TrainConfig { seed: 1, ..cfg }).unwrap();
    let first = read_metrics(&paths[0]).unwrap();
    assert_ne!(first, other.metrics);
}

#[test]
fn metrics_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(Algorithm::Geppo, &small(EnvId::CartPole)).unwrap();
    let path = dir.path().join("m.csv");
    write_metrics(&run.metrics, &path).unwrap();
    assert_eq!(read_metrics(&path).unwrap(), run.metrics);
}

#[test]
fn step_budget_is_exact() {
    for algorithm in [Algorithm::Toppo, Algorithm::Ppo, Algorithm::Geppo] {
        let cfg = TrainConfig { total_timesteps: 8 * 256 + 100, ..small(EnvId::CartPole) };
        let run = train(algorithm, &cfg).unwrap();
        assert_eq!(run.metrics.len(), 8);
        for (k, m) in run.metrics.iter().enumerate() {
            assert_eq!(m.env_steps, (k + 1) * cfg.batch_size, "{algorithm} iteration {k}");
        }
    }
}

#[test]
fn zero_alpha_keeps_only_the_newest_batch() {
    let cfg = TrainConfig { alpha: 0.0, ..small(EnvId::CartPole) };
    let mut post_select = Vec::new();
    let run = train_with_observer(Algorithm::Toppo, &cfg, &mut |view| {
        post_select.push(view.buffer.len());
        Ok(())
    })
    .unwrap();
    assert!(post_select.iter().all(|&n| n == 1), "{post_select:?}");
    // Every iteration after the first drops the previous survivor.
    for m in &run.metrics[1..] {
        assert_eq!(m.deletions, 1);
        assert!(m.behavior_id.is_some());
    }
    assert!(run.selections.iter().filter(|s| s.action == "deleted").all(|s| s.divergence > 0.0));
}

#[test]
fn buffer_never_exceeds_capacity() {
    let cfg = TrainConfig { alpha: 10.0, buffer_size: 3, ..small(EnvId::CartPole) };
    let mut lens = Vec::new();
    let run = train_with_observer(Algorithm::Toppo, &cfg, &mut |view| {
        lens.push(view.buffer.len());
        Ok(())
    })
    .unwrap();
    assert_eq!(lens, vec![1, 2, 3, 3, 3, 3, 3, 3]);
    assert!(run.selections.iter().all(|s| s.action == "kept"));
}

#[test]
fn zero_learning_rate_leaves_the_random_policy_in_place() {
    let cfg = TrainConfig { learning_rate: 0.0, ..small(EnvId::CartPole) };
    let mut first: Option<PolicyParams> = None;
    let run = train_with_observer(Algorithm::Ppo, &cfg, &mut |view| {
        first.get_or_insert_with(|| view.policy.clone());
        Ok(())
    })
    .unwrap();
    let first = first.unwrap();
    assert_eq!(first.params(), run.policy.params());
    // A random cart-pole policy balances for roughly 20 steps.
    let returns: Vec<f64> = run.metrics.iter().filter_map(|m| m.mean_return).collect();
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    assert!(mean < 60.0, "mean training return {mean}");
    assert!(run.metrics.iter().all(|m| m.mean_kl == 0.0));
}

#[test]
fn disabled_selection_logs_nothing() {
    let cfg = TrainConfig { selection: false, ..small(EnvId::CartPole) };
    let run = train(Algorithm::Toppo, &cfg).unwrap();
    assert!(run.selections.is_empty());
    assert!(run.metrics.iter().all(|m| m.deletions == 0));
}

#[test]
fn adaptive_epsilon_follows_the_buffer_size() {
    let cfg = TrainConfig { epsilon_mode: EpsilonMode::Adaptive, alpha: 10.0, ..small(EnvId::CartPole) };
    let run = train(Algorithm::Toppo, &cfg).unwrap();
    for m in &run.metrics {
        let n = m.buffer_len as f64;
        let expected = if m.buffer_len == 1 { cfg.epsilon_ppo } else { 4.0 / (n + 4.0) * cfg.epsilon_ppo };
        assert!((m.epsilon - expected).abs() < 1e-15, "{m:?}");
    }
}

#[test]
fn ppo_never_samples_an_old_batch() {
    let run = train(Algorithm::Ppo, &small(EnvId::CartPole)).unwrap();
    assert!(run.metrics.iter().all(|m| m.behavior_id.is_none() && m.buffer_len == 1));
    assert!(run.selections.is_empty());
}

#[test]
fn continuous_control_runs_end_to_end() {
    let cfg = TrainConfig { total_timesteps: 4 * 256, ..small(EnvId::Pendulum) };
    for algorithm in [Algorithm::Toppo, Algorithm::Geppo] {
        let run = train(algorithm, &cfg).unwrap();
        assert_eq!(run.metrics.len(), 4);
        assert!(run.metrics.iter().all(|m| m.policy_loss.is_finite() && m.value_loss.is_finite()));
        assert!(run.metrics[1..].iter().all(|m| m.behavior_id.is_some()));
        assert!(run.eval_returns().iter().all(|r| *r < 0.0));
    }
}

#[test]
fn tabular_environments_train() {
    for env in ["chain", "grid", "random:3:4:2"] {
        let cfg = TrainConfig { total_timesteps: 2 * 256, ..small(env.parse().unwrap()) };
        let run = train(Algorithm::Toppo, &cfg).unwrap();
        assert_eq!(run.env_steps(), 512, "{env}");
    }
}

#[test]
fn snapshots_round_trip_after_training() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(Algorithm::Toppo, &small(EnvId::CartPole)).unwrap();
    let stem = dir.path().join("final");
    run.policy.save(&stem).unwrap();
    let loaded = PolicyParams::load(&stem).unwrap();
    assert_eq!(loaded, run.policy);
    let obs = [0.01, -0.02, 0.03, 0.0];
    assert_eq!(loaded.distribution(&obs).unwrap(), run.policy.distribution(&obs).unwrap());
}
