//! The behavior-policy set: up to `N` rollout batches, KL-based selection,
//! uniform behavior sampling and the clip-parameter schedule.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::RolloutBatch;
use crate::policy::{kl, PolicyParams};

/// One stored batch. Only the trajectories and the behavior distributions at
/// visited states are kept, never the behavior network itself.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub snapshot_id: u64,
    pub batch: RolloutBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionRecord {
    pub snapshot_id: u64,
    pub divergence: f64,
    pub deleted: bool,
}

#[derive(Clone, Debug)]
pub struct PolicySet {
    entries: VecDeque<BufferEntry>,
    capacity: usize,
    alpha: f64,
}

/// Mean over `batch`'s states of `KL(μ(·|s) ‖ π(·|s))`.
pub fn mean_divergence(batch: &RolloutBatch, policy: &PolicyParams) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let live = policy.distributions(&batch.states(), batch.len())?;
    let mut total = 0.0;
    for (t, q) in batch.transitions.iter().zip(&live) {
        total += kl(&t.behavior, q)?;
    }
    Ok(total / batch.len() as f64)
}

impl PolicySet {
    pub fn new(capacity: usize, alpha: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be at least 1".into()));
        }
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("filter boundary {alpha} must be >= 0")));
        }
        Ok(Self { entries: VecDeque::with_capacity(capacity + 1), capacity, alpha })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.snapshot_id).collect()
    }

    /// The most recent entry: the current policy's own batch.
    pub fn newest(&self) -> Option<&BufferEntry> {
        self.entries.back()
    }

    /// Appends a batch, evicting the oldest entry when over capacity.
    /// Returns the evicted snapshot id.
    pub fn insert(&mut self, batch: RolloutBatch) -> Result<Option<u64>> {
        let id = batch.snapshot_id;
        if self.entries.back().is_some_and(|e| e.snapshot_id >= id) {
            return Err(Error::DuplicateSnapshot(id));
        }
        self.entries.push_back(BufferEntry { snapshot_id: id, batch });
        Ok(if self.entries.len() > self.capacity {
            self.entries.pop_front().map(|e| e.snapshot_id)
        } else {
            None
        })
    }

    /// Deletes every older entry whose mean divergence from `current` exceeds
    /// α; the newest entry is always kept.
    pub fn select(&mut self, current: &PolicyParams) -> Result<Vec<SelectionRecord>> {
        let keep_last = self.entries.len().saturating_sub(1);
        let mut log = Vec::with_capacity(keep_last);
        let mut kept = VecDeque::with_capacity(self.entries.len());
        for (i, entry) in self.entries.drain(..).enumerate() {
            if i == keep_last {
                kept.push_back(entry);
                continue;
            }
            let divergence = mean_divergence(&entry.batch, current)?;
            let deleted = divergence > self.alpha;
            log.push(SelectionRecord { snapshot_id: entry.snapshot_id, divergence, deleted });
            if !deleted {
                kept.push_back(entry);
            }
        }
        self.entries = kept;
        Ok(log)
    }

    /// Uniform draw over all entries but the newest; `None` (without
    /// consuming randomness) when there is none.
    pub fn sample_behavior(&self, rng: &mut impl Rng) -> Option<&BufferEntry> {
        let eligible = self.entries.len().checked_sub(1)?;
        if eligible == 0 {
            return None;
        }
        self.entries.get(rng.random_range(0..eligible))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonMode {
    #[default]
    Fixed,
    Adaptive,
}

impl FromStr for EpsilonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "adaptive" => Ok(Self::Adaptive),
            _ => Err(Error::InvalidArgument(format!("unknown epsilon mode {s:?}"))),
        }
    }
}

impl fmt::Display for EpsilonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Adaptive => "adaptive",
        })
    }
}

/// `ε^PPO` when `n = 1`, otherwise `4/(n + 4)·ε^PPO`.
pub fn adaptive_epsilon(n: usize, epsilon_ppo: f64) -> Result<f64> {
    match n {
        0 => Err(Error::InvalidArgument("effective buffer size must be >= 1".into())),
        1 => Ok(epsilon_ppo),
        _ => Ok(4.0 / (n as f64 + 4.0) * epsilon_ppo),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub mode: EpsilonMode,
    /// Clip parameter in fixed mode.
    pub fixed: f64,
    /// Base for the adaptive rule.
    pub epsilon_ppo: f64,
}

impl EpsilonSchedule {
    pub fn epsilon(&self, n_eff: usize) -> Result<f64> {
        match self.mode {
            EpsilonMode::Fixed if n_eff >= 1 => Ok(self.fixed),
            _ => adaptive_epsilon(n_eff, self.epsilon_ppo),
        }
    }
}
