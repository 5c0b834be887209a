//! Desk-scale environments selected by string id.
//!
//! Ids: `cartpole`, `pendulum`, `chain`, `grid`, `random:<seed>:<S>:<A>`.

mod cartpole;
mod pendulum;
mod tabular;

use std::fmt;
use std::str::FromStr;

pub use cartpole::CartPole;
pub use pendulum::Pendulum;
pub use tabular::{random_mdp, TabularEnv, TabularMdp};

use crate::error::{Error, Result};
use crate::policy::{Action, PolicyHead};

#[derive(Clone, Debug, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn policy_head(&self) -> PolicyHead {
        match self {
            ActionSpace::Discrete(n) => PolicyHead::Categorical { actions: *n },
            ActionSpace::Box { low, .. } => PolicyHead::Gaussian { dim: low.len() },
        }
    }

    /// Checks `action` lies in the space.
    pub fn validate(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if a < n => Ok(()),
            (ActionSpace::Box { low, high }, Action::Continuous(u))
                if u.len() == low.len()
                    && u.iter().zip(low.iter().zip(high)).all(|(x, (l, h))| x.is_finite() && x >= l && x <= h) =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidAction(format!("{action:?} is outside {self:?}"))),
        }
    }

    /// Clamps a continuous action into the box; discrete actions pass through.
    pub fn clip(&self, action: &Action) -> Action {
        match (self, action) {
            (ActionSpace::Box { low, high }, Action::Continuous(u)) => Action::Continuous(
                u.iter().zip(low.iter().zip(high)).map(|(x, (l, h))| x.clamp(*l, *h)).collect(),
            ),
            _ => action.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub max_steps: usize,
    pub reward: &'static str,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True termination (no bootstrapping).
    pub terminated: bool,
    /// Horizon reached.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode; deterministic given `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<Step>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EnvId {
    CartPole,
    Pendulum,
    Chain,
    Grid,
    Random { seed: u64, states: usize, actions: usize },
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => return Ok(EnvId::CartPole),
            "pendulum" => return Ok(EnvId::Pendulum),
            "chain" => return Ok(EnvId::Chain),
            "grid" => return Ok(EnvId::Grid),
            _ => {}
        }
        let parts: Vec<&str> = s.split(':').collect();
        if let ["random", seed, states, actions] = parts.as_slice() {
            let parse = |v: &str| v.parse::<u64>().map_err(|_| Error::UnknownEnv(s.to_string()));
            return Ok(EnvId::Random {
                seed: parse(seed)?,
                states: parse(states)? as usize,
                actions: parse(actions)? as usize,
            });
        }
        Err(Error::UnknownEnv(s.to_string()))
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvId::CartPole => f.write_str("cartpole"),
            EnvId::Pendulum => f.write_str("pendulum"),
            EnvId::Chain => f.write_str("chain"),
            EnvId::Grid => f.write_str("grid"),
            EnvId::Random { seed, states, actions } => write!(f, "random:{seed}:{states}:{actions}"),
        }
    }
}

/// Horizon used for the tabular environments.
pub const TABULAR_HORIZON: usize = 200;

pub fn make(id: &EnvId) -> Result<Box<dyn Environment>> {
    Ok(match id {
        EnvId::CartPole => Box::new(CartPole::new()),
        EnvId::Pendulum => Box::new(Pendulum::new()),
        EnvId::Chain => Box::new(TabularEnv::new(TabularMdp::chain(5, 0.95), TABULAR_HORIZON)),
        EnvId::Grid => Box::new(TabularEnv::new(TabularMdp::grid(4, 4, 0.95), TABULAR_HORIZON)),
        EnvId::Random { seed, states, actions } => Box::new(TabularEnv::new(
            random_mdp(*seed, *states, *actions, 0.95, 0.0)?,
            TABULAR_HORIZON,
        )),
    })
}
