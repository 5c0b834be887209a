//! Exact dynamic programming on small tabular MDPs: values, advantages,
//! discounted visitation, and numeric checks of the performance-difference
//! identity, the policy-improvement lower bounds, the monotonic-improvement
//! condition, the V-trace fixed point and the PPO value-improvement result.

mod bounds;
mod fuzz;
mod surrogate;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

pub use bounds::{
    lemma21_bound, lemma31_bound, monotonic_improvement_check, ppo_value_improvement_check,
    advantage_bound_check, surrogate_value, visitation_bound_check, BoundReport, MonotonicReport,
    MuStatus, PpoImprovement, SideCheck,
};
pub use fuzz::{fuzz_bounds, write_fuzz_csv, FuzzConfig, FuzzRow};
pub use surrogate::{clipped_objective_row, clipped_surrogate_argmax, maximize_clipped_surrogate};

use crate::envs::TabularMdp;
use crate::error::{Error, Result};

/// Largest `S·A` the oracle accepts.
pub const MAX_STATE_ACTIONS: usize = 64;

const ROW_TOL: f64 = 1e-12;

/// Action probabilities `π(a|s)` stored row-major `[S × A]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TabularPolicy {
    states: usize,
    actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(states: usize, actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != states * actions || actions == 0 {
            return Err(crate::error::shape_err(format!(
                "policy table has {} entries, expected {states}x{actions}",
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(actions).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidArgument(format!("policy row {s} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidArgument(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(Self { states, actions, probs })
    }

    /// Builds a policy from rows that sum to one up to round-off; each row is renormalized.
    pub fn from_rows_normalized(states: usize, actions: usize, mut probs: Vec<f64>) -> Result<Self> {
        for row in probs.chunks_mut(actions) {
            row.iter_mut().for_each(|p| *p = p.max(0.0));
            let total: f64 = row.iter().sum();
            if total <= 0.0 || !total.is_finite() {
                return Err(Error::InvalidArgument("policy row has no mass".into()));
            }
            row.iter_mut().for_each(|p| *p /= total);
        }
        Self::new(states, actions, probs)
    }

    pub fn uniform(states: usize, actions: usize) -> Self {
        Self { states, actions, probs: vec![1.0 / actions as f64; states * actions] }
    }

    /// Same `row` in every state.
    pub fn constant(states: usize, row: &[f64]) -> Result<Self> {
        Self::new(states, row.len(), row.repeat(states))
    }

    /// Dirichlet(1) rows.
    pub fn random(states: usize, actions: usize, rng: &mut impl Rng) -> Self {
        let mut probs: Vec<f64> = (0..states * actions).map(|_| Exp1.sample(rng)).collect();
        for row in probs.chunks_mut(actions) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        Self { states, actions, probs }
    }

    /// Puts all mass on the largest entry of `scores` in each state (first on ties).
    pub fn greedy(states: usize, actions: usize, scores: &[f64]) -> Self {
        let mut probs = vec![0.0; states * actions];
        for s in 0..states {
            let row = &scores[s * actions..(s + 1) * actions];
            let best = (0..actions).fold(0, |b, a| if row[a] > row[b] { a } else { b });
            probs[s * actions + best] = 1.0;
        }
        Self { states, actions, probs }
    }

    /// `(1 − t)·self + t·other`.
    pub fn mix(&self, other: &Self, t: f64) -> Self {
        let probs = self.probs.iter().zip(&other.probs).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        Self { states: self.states, actions: self.actions, probs }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.actions..(s + 1) * self.actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.actions + a]
    }

    /// Total variation `½ Σ_a |π₁ − π₂|` at state `s`.
    pub fn tv_at(&self, other: &Self, s: usize) -> f64 {
        0.5 * self.row(s).iter().zip(other.row(s)).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    pub fn tv_max(&self, other: &Self) -> f64 {
        (0..self.states).map(|s| self.tv_at(other, s)).fold(0.0, f64::max)
    }

    /// `E_{s∼weights} TV(self, other)(s)`.
    pub fn tv_expected(&self, other: &Self, weights: &[f64]) -> f64 {
        weights.iter().enumerate().map(|(s, w)| w * self.tv_at(other, s)).sum()
    }
}

/// Exact quantities for one policy. `q` and `advantage` are `[S × A]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactEvaluation {
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub advantage: Vec<f64>,
    /// Normalized discounted state visitation `(1 − γ) Σ_t γᵗ P(s_t = s)`.
    pub visitation: Vec<f64>,
    pub eta: f64,
}

impl ExactEvaluation {
    pub fn max_abs_advantage(&self) -> f64 {
        self.advantage.iter().fold(0.0, |m, a| m.max(a.abs()))
    }
}

fn check_shapes(mdp: &TabularMdp, policies: &[&TabularPolicy]) -> Result<()> {
    if mdp.states() * mdp.actions() > MAX_STATE_ACTIONS {
        return Err(Error::OracleLimit(format!(
            "S·A = {} exceeds {MAX_STATE_ACTIONS}",
            mdp.states() * mdp.actions()
        )));
    }
    for p in policies {
        if p.states() != mdp.states() || p.actions() != mdp.actions() {
            return Err(crate::error::shape_err(format!(
                "policy is {}x{}, MDP is {}x{}",
                p.states(),
                p.actions(),
                mdp.states(),
                mdp.actions()
            )));
        }
    }
    Ok(())
}

/// `P_π[s, s'] = Σ_a π(a|s) P(s'|s, a)`.
fn state_transition(mdp: &TabularMdp, pi: &TabularPolicy) -> DMatrix<f64> {
    let n = mdp.states();
    DMatrix::from_fn(n, n, |s, t| (0..mdp.actions()).map(|a| pi.prob(s, a) * mdp.next(s, a)[t]).sum())
}

pub fn evaluate(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<ExactEvaluation> {
    check_shapes(mdp, &[pi])?;
    let (n, m, gamma) = (mdp.states(), mdp.actions(), mdp.gamma());
    let system = DMatrix::identity(n, n) - state_transition(mdp, pi) * gamma;
    let r_pi = DVector::from_fn(n, |s, _| (0..m).map(|a| pi.prob(s, a) * mdp.reward(s, a)).sum());
    let lu = system.clone().lu();
    let v = lu.solve(&r_pi).ok_or(Error::Singular)?;
    let rho0 = DVector::from_column_slice(mdp.initial());
    let visitation = system.transpose().lu().solve(&(rho0.clone() * (1.0 - gamma))).ok_or(Error::Singular)?;

    let mut q = vec![0.0; n * m];
    for s in 0..n {
        for a in 0..m {
            let next: f64 = mdp.next(s, a).iter().zip(v.iter()).map(|(p, vv)| p * vv).sum();
            q[s * m + a] = mdp.reward(s, a) + gamma * next;
        }
    }
    let advantage = (0..n * m).map(|i| q[i] - v[i / m]).collect();
    Ok(ExactEvaluation {
        eta: rho0.dot(&v),
        v: v.iter().copied().collect(),
        q,
        advantage,
        visitation: visitation.iter().copied().collect(),
    })
}

/// Both sides of the performance-difference identity
/// `η(π̂) − η(π) = (1/(1−γ)) E_{s∼ρ^π̂, a∼π̂}[A^π(s, a)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PerformanceDifference {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn performance_difference(mdp: &TabularMdp, pi_hat: &TabularPolicy, pi: &TabularPolicy) -> Result<PerformanceDifference> {
    let hat = evaluate(mdp, pi_hat)?;
    let base = evaluate(mdp, pi)?;
    let expected = expected_advantage(pi_hat, &base.advantage, &hat.visitation);
    Ok(PerformanceDifference { lhs: hat.eta - base.eta, rhs: expected / (1.0 - mdp.gamma()) })
}

/// `E_{s∼weights, a∼π}[adv(s, a)]`.
pub fn expected_advantage(pi: &TabularPolicy, advantage: &[f64], weights: &[f64]) -> f64 {
    let m = pi.actions();
    weights
        .iter()
        .enumerate()
        .map(|(s, w)| w * pi.row(s).iter().zip(&advantage[s * m..(s + 1) * m]).map(|(p, a)| p * a).sum::<f64>())
        .sum()
}

/// Policy reweighted by truncated importance weights,
/// `π_ρ̄(a|s) ∝ min(ρ̄·μ(a|s), π(a|s))`, and its exact value.
pub fn vtrace_fixed_point(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    mu: &TabularPolicy,
    rho_bar: f64,
    c_bar: f64,
) -> Result<(TabularPolicy, Vec<f64>)> {
    check_shapes(mdp, &[pi, mu])?;
    if !(c_bar > 0.0 && rho_bar >= c_bar) {
        return Err(Error::InvalidArgument(format!("need rho_bar >= c_bar > 0, got {rho_bar}, {c_bar}")));
    }
    let m = mdp.actions();
    let mut probs = vec![0.0; pi.probs().len()];
    for s in 0..mdp.states() {
        let row: Vec<f64> = (0..m).map(|a| (rho_bar * mu.prob(s, a)).min(pi.prob(s, a))).collect();
        let z: f64 = row.iter().sum();
        if z <= 0.0 {
            return Err(Error::InvalidArgument(format!("truncated weights vanish at state {s}")));
        }
        for a in 0..m {
            probs[s * m + a] = row[a] / z;
        }
    }
    let biased = TabularPolicy::from_rows_normalized(mdp.states(), m, probs)?;
    let v = evaluate(mdp, &biased)?.v;
    Ok((biased, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random_mdp;
    use crate::rng::indexed;

    #[test]
    fn single_state_value_is_geometric() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![2.0], 0.9, vec![1.0]).unwrap();
        let ev = evaluate(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
        assert!((ev.v[0] - 20.0).abs() < 1e-12);
        assert!((ev.eta - 20.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_invariants_on_random_instances() {
        for i in 0..50 {
            let mut rng = indexed(3, i);
            let mdp = random_mdp(i, 4, 3, 0.95, 0.0).unwrap();
            let pi = TabularPolicy::random(4, 3, &mut rng);
            let ev = evaluate(&mdp, &pi).unwrap();
            assert!((ev.visitation.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for s in 0..4 {
                let mean_adv: f64 = (0..3).map(|a| pi.prob(s, a) * ev.advantage[s * 3 + a]).sum();
                assert!(mean_adv.abs() < 1e-10);
                // Bellman residual.
                let backup: f64 = (0..3).map(|a| pi.prob(s, a) * ev.q[s * 3 + a]).sum();
                assert!((backup - ev.v[s]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identity_is_zero_for_equal_policies() {
        let mdp = random_mdp(1, 3, 2, 0.9, 0.0).unwrap();
        let pi = TabularPolicy::random(3, 2, &mut indexed(1, 0));
        let pd = performance_difference(&mdp, &pi, &pi).unwrap();
        assert!(pd.lhs.abs() < 1e-12 && pd.rhs.abs() < 1e-12);
    }

    #[test]
    fn greedy_policy_does_not_lose() {
        for i in 0..20 {
            let mdp = random_mdp(i, 5, 3, 0.9, 0.0).unwrap();
            let pi = TabularPolicy::random(5, 3, &mut indexed(2, i));
            let adv = evaluate(&mdp, &pi).unwrap().advantage;
            let greedy = TabularPolicy::greedy(5, 3, &adv);
            let pd = performance_difference(&mdp, &greedy, &pi).unwrap();
            assert!(pd.lhs >= -1e-12);
            assert!((pd.lhs - pd.rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_size_limit() {
        let mdp = random_mdp(0, 33, 2, 0.9, 0.0).unwrap();
        let err = evaluate(&mdp, &TabularPolicy::uniform(33, 2)).unwrap_err();
        assert!(matches!(err, Error::OracleLimit(_)));
    }

    #[test]
    fn vtrace_fixed_point_limits() {
        let mdp = TabularMdp::vtrace_fixture();
        let pi = TabularPolicy::constant(2, &[0.99, 0.01]).unwrap();
        let mu = TabularPolicy::constant(2, &[0.01, 0.99]).unwrap();
        let (biased, _) = vtrace_fixed_point(&mdp, &pi, &mu, 1.0, 1.0).unwrap();
        assert!((biased.prob(0, 0) - 0.5).abs() < 1e-12);

        let (untruncated, v) = vtrace_fixed_point(&mdp, &pi, &mu, 1e6, 1.0).unwrap();
        assert_eq!(untruncated, pi);
        assert_eq!(v, evaluate(&mdp, &pi).unwrap().v);

        let (same, _) = vtrace_fixed_point(&mdp, &pi, &pi, 1.0, 1.0).unwrap();
        assert!(same.probs().iter().zip(pi.probs()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(vtrace_fixed_point(&mdp, &pi, &mu, 0.5, 1.0).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(TabularPolicy::new(1, 2, vec![0.6, 0.6]).is_err());
        assert!(TabularPolicy::new(1, 2, vec![1.0]).is_err());
        let p = TabularPolicy::new(1, 2, vec![0.7, 0.3]).unwrap();
        let q = TabularPolicy::new(1, 2, vec![0.4, 0.6]).unwrap();
        assert!((p.tv_at(&q, 0) - 0.3).abs() < 1e-15);
    }
}
