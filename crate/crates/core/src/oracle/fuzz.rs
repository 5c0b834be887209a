use std::path::Path;

use rand::Rng;
use serde::Serialize;

use super::bounds::{advantage_bound_check, lemma21_bound, lemma31_bound, ppo_value_improvement_check, visitation_bound_check, BOUND_TOL};
use super::{evaluate, maximize_clipped_surrogate, performance_difference, TabularPolicy, MAX_STATE_ACTIONS};
use crate::envs::random_mdp;
use crate::error::{Error, Result};
use crate::rng::indexed;

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzConfig {
    pub count: usize,
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Draw `S ∈ [2, states]` and `A ∈ [2, actions]` per instance.
    pub vary_sizes: bool,
}

/// One fuzz instance; every bound's sides and intermediate terms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FuzzRow {
    pub instance: usize,
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub pd_lhs: f64,
    pub pd_rhs: f64,
    pub l21_lhs: f64,
    pub l21_surrogate: f64,
    pub l21_penalty: f64,
    pub l21_epsilon: f64,
    pub l21_delta: f64,
    pub l21_delta_max: f64,
    pub l21_rhs: f64,
    pub l21_satisfied: bool,
    pub l31_lhs: f64,
    pub l31_surrogate: f64,
    pub l31_penalty_anchor: f64,
    pub l31_penalty_trust: f64,
    pub l31_epsilon: f64,
    pub l31_delta: f64,
    pub l31_delta_max: f64,
    pub l31_delta_max_anchor: f64,
    pub l31_rhs: f64,
    pub l31_satisfied: bool,
    pub ppo_clip: f64,
    pub ppo_hypothesis: f64,
    pub ppo_improvement: f64,
    pub ppo_improved: bool,
    pub visitation_lhs: f64,
    pub visitation_rhs: f64,
    pub advantage_lhs: f64,
    pub advantage_rhs: f64,
}

impl FuzzRow {
    pub fn pd_agrees(&self) -> bool {
        (self.pd_lhs - self.pd_rhs).abs() <= BOUND_TOL
    }

    pub fn violations(&self) -> Vec<&'static str> {
        let checks = [
            (self.pd_agrees(), "performance_difference"),
            (self.l21_satisfied, "lemma21"),
            (self.l31_satisfied, "lemma31"),
            (self.ppo_hypothesis < -1e-12 || self.ppo_improved, "ppo_value_improvement"),
            (self.visitation_lhs <= self.visitation_rhs + BOUND_TOL, "visitation_bound"),
            (self.advantage_lhs <= self.advantage_rhs + BOUND_TOL, "advantage_bound"),
        ];
        checks.iter().filter(|(ok, _)| !ok).map(|(_, name)| *name).collect()
    }
}

/// A policy near `base`: mixes in a random policy with weight `u²`.
fn perturbed(base: &TabularPolicy, rng: &mut impl Rng) -> TabularPolicy {
    let t = rng.random::<f64>().powi(2);
    base.mix(&TabularPolicy::random(base.states(), base.actions(), rng), t)
}

fn run_instance(cfg: &FuzzConfig, instance: usize) -> Result<FuzzRow> {
    let mut rng = indexed(cfg.seed, instance as u64);
    let (s, a) = if cfg.vary_sizes {
        (rng.random_range(2..=cfg.states), rng.random_range(2..=cfg.actions))
    } else {
        (cfg.states, cfg.actions)
    };
    let mdp = random_mdp(rng.random(), s, a, cfg.gamma, 0.0)?;
    // Resample until the behavior policy covers the target (Dirichlet draws
    // underflow to zero only in pathological cases).
    for _ in 0..100 {
        let pi_k = TabularPolicy::random(s, a, &mut rng);
        let pi = perturbed(&pi_k, &mut rng);
        let mu = perturbed(&pi_k, &mut rng);
        let (l21, l31) = match (lemma21_bound(&mdp, &pi_k, &pi, &mu), lemma31_bound(&mdp, &pi_k, &pi, &mu)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(Error::ZeroBehaviorProbability { .. }), _) | (_, Err(Error::ZeroBehaviorProbability { .. })) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let pd = performance_difference(&mdp, &pi, &pi_k)?;

        let clip = rng.random_range(0.05..0.5);
        let adv = evaluate(&mdp, &pi_k)?.advantage;
        let next = maximize_clipped_surrogate(&pi_k, &adv, &vec![1.0 - clip; s * a], &vec![1.0 + clip; s * a], &pi_k)?;
        let ppo = ppo_value_improvement_check(&mdp, &pi_k, &next)?;
        let visitation = visitation_bound_check(&mdp, &pi_k, &pi)?;
        let advantage = advantage_bound_check(&mdp, &pi_k, &pi)?;

        return Ok(FuzzRow {
            instance,
            states: s,
            actions: a,
            gamma: cfg.gamma,
            pd_lhs: pd.lhs,
            pd_rhs: pd.rhs,
            l21_lhs: l21.lhs,
            l21_surrogate: l21.surrogate,
            l21_penalty: l21.penalty_trust,
            l21_epsilon: l21.epsilon,
            l21_delta: l21.delta,
            l21_delta_max: l21.delta_max,
            l21_rhs: l21.rhs,
            l21_satisfied: l21.satisfied,
            l31_lhs: l31.lhs,
            l31_surrogate: l31.surrogate,
            l31_penalty_anchor: l31.penalty_anchor,
            l31_penalty_trust: l31.penalty_trust,
            l31_epsilon: l31.epsilon,
            l31_delta: l31.delta,
            l31_delta_max: l31.delta_max,
            l31_delta_max_anchor: l31.delta_max_anchor,
            l31_rhs: l31.rhs,
            l31_satisfied: l31.satisfied,
            ppo_clip: clip,
            ppo_hypothesis: ppo.hypothesis,
            ppo_improvement: ppo.improvement,
            ppo_improved: ppo.improved,
            visitation_lhs: visitation.lhs,
            visitation_rhs: visitation.rhs,
            advantage_lhs: advantage.lhs,
            advantage_rhs: advantage.rhs,
        });
    }
    Err(Error::InvalidArgument(format!("instance {instance}: no absolutely continuous behavior policy after 100 draws")))
}

/// Runs every bound and identity on `count` random instances.
pub fn fuzz_bounds(cfg: &FuzzConfig) -> Result<Vec<FuzzRow>> {
    if cfg.states < 2 || cfg.actions < 2 {
        return Err(Error::InvalidArgument(format!("fuzzing needs S, A >= 2, got S={}, A={}", cfg.states, cfg.actions)));
    }
    if cfg.states * cfg.actions > MAX_STATE_ACTIONS {
        return Err(Error::OracleLimit(format!("S·A = {} exceeds {MAX_STATE_ACTIONS}", cfg.states * cfg.actions)));
    }
    (0..cfg.count).map(|i| run_instance(cfg, i)).collect()
}

pub fn write_fuzz_csv(rows: &[FuzzRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        // Header only.
        writer.write_record(FUZZ_HEADER)?;
    }
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

const FUZZ_HEADER: &[&str] = &[
    "instance", "states", "actions", "gamma", "pd_lhs", "pd_rhs", "l21_lhs", "l21_surrogate", "l21_penalty",
    "l21_epsilon", "l21_delta", "l21_delta_max", "l21_rhs", "l21_satisfied", "l31_lhs", "l31_surrogate",
    "l31_penalty_anchor", "l31_penalty_trust", "l31_epsilon", "l31_delta", "l31_delta_max", "l31_delta_max_anchor",
    "l31_rhs", "l31_satisfied", "ppo_clip", "ppo_hypothesis", "ppo_improvement", "ppo_improved", "visitation_lhs",
    "visitation_rhs", "advantage_lhs", "advantage_rhs",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(count: usize) -> FuzzConfig {
        FuzzConfig { count, states: 4, actions: 3, gamma: 0.9, seed: 1, vary_sizes: false }
    }

    #[test]
    fn small_fuzz_is_clean_and_deterministic() {
        let rows = fuzz_bounds(&cfg(50)).unwrap();
        assert_eq!(rows.len(), 50);
        assert!(rows.iter().all(|r| r.violations().is_empty()));
        assert_eq!(rows, fuzz_bounds(&cfg(50)).unwrap());
    }

    #[test]
    fn empty_report_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fuzz.csv");
        write_fuzz_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let rows = fuzz_bounds(&cfg(2)).unwrap();
        write_fuzz_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), FUZZ_HEADER.join(","));
    }

    #[test]
    fn size_limit() {
        let big = FuzzConfig { states: 20, actions: 4, ..cfg(1) };
        assert!(matches!(fuzz_bounds(&big), Err(Error::OracleLimit(_))));
    }
}
