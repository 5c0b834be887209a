use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use super::{ActionSpace, EnvSpec, Environment, Step};
use crate::error::{Error, Result};
use crate::policy::Action;
use crate::rng;

const ROW_TOL: f64 = 1e-12;

/// Explicit finite MDP. `transitions` is `[S × A × S]`, `rewards` is `[S × A]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    states: usize,
    actions: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    gamma: f64,
    initial: Vec<f64>,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(Error::InvalidArgument(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        states: usize,
        actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if states == 0 || actions == 0 {
            return Err(Error::InvalidArgument("empty state or action set".into()));
        }
        if transitions.len() != states * actions * states || rewards.len() != states * actions {
            return Err(crate::error::shape_err(format!(
                "expected P of length {} and R of length {}",
                states * actions * states,
                states * actions
            )));
        }
        if initial.len() != states {
            return Err(crate::error::shape_err(format!("initial distribution must have {states} entries")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1)")));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("rewards".into()));
        }
        for (i, row) in transitions.chunks(states).enumerate() {
            check_distribution(row, &format!("P[{}, {}]", i / actions, i % actions))?;
        }
        check_distribution(&initial, "initial distribution")?;
        Ok(Self { states, actions, transitions, rewards, gamma, initial })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Next-state distribution `P[s, a, ·]`.
    pub fn next(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.actions + a) * self.states;
        &self.transitions[start..start + self.states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// Deterministic line of `n` states. Action 0 moves left, 1 moves right;
    /// taking "right" in the last state pays 1 and stays there. Starts at state 0.
    pub fn chain(n: usize, gamma: f64) -> Self {
        let mut p = vec![0.0; n * 2 * n];
        let mut r = vec![0.0; n * 2];
        for s in 0..n {
            p[(s * 2) * n + s.saturating_sub(1)] = 1.0;
            p[(s * 2 + 1) * n + (s + 1).min(n - 1)] = 1.0;
        }
        r[(n - 1) * 2 + 1] = 1.0;
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        Self::new(n, 2, p, r, gamma, initial).expect("chain construction is valid")
    }

    /// `width × height` grid, actions up/down/left/right, walls block movement.
    /// Every action taken in the bottom-right goal cell pays 1 and returns to
    /// the top-left start.
    pub fn grid(width: usize, height: usize, gamma: f64) -> Self {
        let n = width * height;
        let goal = n - 1;
        let mut p = vec![0.0; n * 4 * n];
        let mut r = vec![0.0; n * 4];
        for s in 0..n {
            let (x, y) = (s % width, s / width);
            for a in 0..4 {
                let next = if s == goal {
                    r[s * 4 + a] = 1.0;
                    0
                } else {
                    let (nx, ny) = match a {
                        0 => (x, y.saturating_sub(1)),
                        1 => (x, (y + 1).min(height - 1)),
                        2 => (x.saturating_sub(1), y),
                        _ => ((x + 1).min(width - 1), y),
                    };
                    ny * width + nx
                };
                p[(s * 4 + a) * n + next] = 1.0;
            }
        }
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        Self::new(n, 4, p, r, gamma, initial).expect("grid construction is valid")
    }

    /// Two states, actions left/right. "left" pays 1 and moves to state 0,
    /// "right" pays 0 and moves to state 1. Starts in state 0, γ = 0.9.
    pub fn vtrace_fixture() -> Self {
        let p = vec![
            1.0, 0.0, 0.0, 1.0, // state 0: left, right
            1.0, 0.0, 0.0, 1.0, // state 1: left, right
        ];
        let r = vec![1.0, 0.0, 1.0, 0.0];
        Self::new(2, 2, p, r, 0.9, vec![1.0, 0.0]).expect("fixture is valid")
    }

    /// Draws a next state from `P[s, a, ·]`.
    pub fn sample_next(&self, s: usize, a: usize, rng: &mut impl Rng) -> usize {
        sample_index(self.next(s, a), rng)
    }
}

/// Inverse-CDF draw; falls back to the last positive entry on round-off.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

fn dirichlet_row(n: usize, sparsity: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    if sparsity > 0.0 {
        let keep = rng.random_range(0..n);
        for (i, v) in row.iter_mut().enumerate() {
            if i != keep && rng.random::<f64>() < sparsity {
                *v = 0.0;
            }
        }
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= total);
    row
}

/// Random MDP: every transition row and the initial distribution are
/// Dirichlet(1) draws, rewards are uniform in `[-1, 1]`. `sparsity` is the
/// probability of zeroing each next-state entry (one entry per row survives).
pub fn random_mdp(seed: u64, states: usize, actions: usize, gamma: f64, sparsity: f64) -> Result<TabularMdp> {
    if states < 2 || actions < 2 {
        return Err(Error::InvalidArgument(format!("random MDP needs S, A >= 2, got S={states}, A={actions}")));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Vec::with_capacity(states * actions * states);
    for _ in 0..states * actions {
        p.extend(dirichlet_row(states, sparsity, &mut rng));
    }
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let r = (0..states * actions).map(|_| unit.sample(&mut rng)).collect();
    let initial = dirichlet_row(states, 0.0, &mut rng);
    TabularMdp::new(states, actions, p, r, gamma, initial)
}

/// A tabular MDP as an episodic environment with one-hot observations and a
/// fixed horizon. The discount is not applied here.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    mdp: TabularMdp,
    spec: EnvSpec,
    state: usize,
    steps: usize,
    rng: ChaCha8Rng,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, horizon: usize) -> Self {
        let spec = EnvSpec {
            obs_dim: mdp.states(),
            action_space: ActionSpace::Discrete(mdp.actions()),
            max_steps: horizon,
            reward: "R(s, a)",
        };
        Self { mdp, spec, state: 0, steps: 0, rng: rng::indexed(0, 0) }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.mdp.states()];
        obs[self.state] = 1.0;
        obs
    }
}

impl Environment for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = sample_index(self.mdp.initial(), &mut self.rng);
        self.steps = 0;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        self.spec.action_space.validate(action)?;
        let a = action.as_discrete().expect("validated");
        let reward = self.mdp.reward(self.state, a);
        self.state = self.mdp.sample_next(self.state, a, &mut self.rng);
        self.steps += 1;
        Ok(Step {
            observation: self.observation(),
            reward,
            terminated: false,
            truncated: self.steps >= self.spec.max_steps,
        })
    }
}
