//! V-trace targets on sampled rollouts of the two-state fixture, iterated to
//! their fixed point and compared with the exact oracle.

use toppo_core::envs::{Environment, TabularEnv, TabularMdp};
use toppo_core::estimators::{vtrace, RolloutBatch, Transition};
use toppo_core::oracle::{evaluate, vtrace_fixed_point, TabularPolicy};
use toppo_core::policy::ActionDistribution;
use toppo_core::rng::indexed;

const HORIZON: usize = 400;

fn rollouts(mdp: &TabularMdp, mu: &TabularPolicy, episodes: u64, seed: u64) -> RolloutBatch {
    let mut env = TabularEnv::new(mdp.clone(), HORIZON);
    let mut rng = indexed(seed, 0);
    let dists: Vec<ActionDistribution> = (0..mdp.states()).map(|s| ActionDistribution::categorical(mu.row(s)).unwrap()).collect();
    let mut transitions = Vec::new();
    for episode in 0..episodes {
        let mut obs = env.reset(seed * 1_000_000 + episode);
        loop {
            let dist = &dists[env.state()];
            let action = dist.sample(&mut rng);
            let step = env.step(&action).unwrap();
            let done = step.done();
            transitions.push(Transition {
                state: std::mem::replace(&mut obs, step.observation.clone()),
                behavior_log_prob: dist.log_prob(&action).unwrap(),
                action,
                reward: step.reward,
                terminated: step.terminated,
                truncated: step.truncated,
                final_state: step.truncated.then_some(step.observation),
                behavior: dist.clone(),
            });
            if done {
                break;
            }
        }
    }
    RolloutBatch::new(0, transitions).unwrap()
}

fn state_of(one_hot: &[f64]) -> usize {
    one_hot.iter().position(|&x| x == 1.0).unwrap()
}

/// Repeatedly replaces `V(s)` by the mean V-trace target observed at `s`.
fn fitted_vtrace(mdp: &TabularMdp, pi: &TabularPolicy, batch: &mut RolloutBatch, rho_bar: f64, c_bar: f64, sweeps: usize) -> Vec<f64> {
    let n = mdp.states();
    let target_log_probs: Vec<f64> =
        batch.transitions.iter().map(|t| pi.prob(state_of(&t.state), t.action.as_discrete().unwrap()).ln()).collect();
    let mut v = vec![0.0; n];
    for _ in 0..sweeps {
        batch
            .attach_values(|states, rows| Ok((0..rows).map(|r| v[state_of(&states[r * n..(r + 1) * n])]).collect()))
            .unwrap();
        let est = vtrace(batch, &target_log_probs, mdp.gamma(), rho_bar, c_bar).unwrap();
        let (mut sum, mut count) = (vec![0.0; n], vec![0usize; n]);
        for (t, target) in batch.transitions.iter().zip(&est.targets) {
            let s = state_of(&t.state);
            sum[s] += target;
            count[s] += 1;
        }
        v = sum.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect();
    }
    v
}

#[test]
fn truncated_weights_converge_to_the_biased_value() {
    let phi = 0.01;
    let mdp = TabularMdp::vtrace_fixture();
    let mu = TabularPolicy::constant(2, &[phi, 1.0 - phi]).unwrap();
    let pi = TabularPolicy::constant(2, &[1.0 - phi, phi]).unwrap();
    let (_, v_biased) = vtrace_fixed_point(&mdp, &pi, &mu, 1.0, 1.0).unwrap();
    let v_pi = evaluate(&mdp, &pi).unwrap().v;

    // Truncated weights average about 0.02 under μ, so each sweep contracts
    // the error by only ~0.2%, and only ~1% of steps carry reward signal.
    let mut batch = rollouts(&mdp, &mu, 300, 1);
    let v = fitted_vtrace(&mdp, &pi, &mut batch, 1.0, 1.0, 6000);
    for s in 0..2 {
        assert!((v[s] - v_biased[s]).abs() < 0.6, "state {s}: fitted {} vs V^pi_rho {}", v[s], v_biased[s]);
        assert!((v[s] - v_pi[s]).abs() > 4.0, "state {s}: fitted {} too close to V^pi {}", v[s], v_pi[s]);
    }
}

#[test]
fn untruncated_weights_recover_the_target_value() {
    // A milder behavior policy and short discount keep the importance
    // products' variance finite.
    let mdp = TabularMdp::vtrace_fixture().with_gamma(0.5).unwrap();
    let mu = TabularPolicy::constant(2, &[0.3, 0.7]).unwrap();
    let pi = TabularPolicy::constant(2, &[0.7, 0.3]).unwrap();
    let v_pi = evaluate(&mdp, &pi).unwrap().v;
    let (_, v_biased) = vtrace_fixed_point(&mdp, &pi, &mu, 1.0, 1.0).unwrap();

    let mut batch = rollouts(&mdp, &mu, 100, 2);
    let v = fitted_vtrace(&mdp, &pi, &mut batch, 1e6, 1e6, 30);
    for s in 0..2 {
        assert!((v[s] - v_pi[s]).abs() < 0.05, "state {s}: fitted {} vs V^pi {}", v[s], v_pi[s]);
        assert!((v[s] - v_biased[s]).abs() > 0.2);
    }
}

#[test]
fn on_policy_targets_match_the_exact_value() {
    let mdp = TabularMdp::grid(2, 2, 0.8);
    let mut rng = indexed(5, 0);
    let mu = TabularPolicy::random(mdp.states(), mdp.actions(), &mut rng);
    let exact = evaluate(&mdp, &mu).unwrap().v;
    let mut batch = rollouts(&mdp, &mu, 50, 3);
    let n = mdp.states();
    batch
        .attach_values(|states, rows| Ok((0..rows).map(|r| exact[state_of(&states[r * n..(r + 1) * n])]).collect()))
        .unwrap();
    let log_probs = batch.behavior_log_probs();
    let est = vtrace(&batch, &log_probs, mdp.gamma(), 1.0, 1.0).unwrap();
    let (mut sum, mut count) = (vec![0.0; n], vec![0usize; n]);
    for (t, target) in batch.transitions.iter().zip(&est.targets) {
        let s = state_of(&t.state);
        sum[s] += target;
        count[s] += 1;
    }
    for s in 0..n {
        let mean = sum[s] / count[s] as f64;
        assert!((mean - exact[s]).abs() < 0.05 * exact[s].abs().max(1.0), "state {s}: {mean} vs {}", exact[s]);
    }
}
