//! Rollout storage and advantage estimators: GAE, V-trace, normalization.

use crate::error::{Error, Result};
use crate::policy::{Action, ActionDistribution};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    /// True termination: nothing is bootstrapped past this step.
    pub terminated: bool,
    /// Episode cut by the horizon or the end of the batch; bootstraps from `final_state`.
    pub truncated: bool,
    /// Observation after a truncated step.
    pub final_state: Option<Vec<f64>>,
    pub behavior_log_prob: f64,
    /// Behavior policy's distribution at `state`.
    pub behavior: ActionDistribution,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimates {
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Transitions collected by one behavior snapshot, in time order. Episodes
/// are delimited by `done` flags; the last transition must be done.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub snapshot_id: u64,
    pub transitions: Vec<Transition>,
    /// `V(s_t)`.
    pub values: Option<Vec<f64>>,
    /// `V(s_{t+1})` for within-episode and truncated steps, 0 after termination.
    pub next_values: Option<Vec<f64>>,
    pub estimates: Option<Estimates>,
}

impl RolloutBatch {
    pub fn new(snapshot_id: u64, transitions: Vec<Transition>) -> Result<Self> {
        if let Some(last) = transitions.last() {
            if !last.done() {
                return Err(Error::InvalidArgument("batch must end on a done transition".into()));
            }
        }
        if let Some(t) = transitions.iter().find(|t| !t.behavior_log_prob.is_finite()) {
            return Err(Error::NonFinite(format!("behavior log-density for action {:?}", t.action)));
        }
        if transitions.iter().any(|t| t.truncated && t.final_state.is_none()) {
            return Err(Error::Missing("final state of a truncated transition".into()));
        }
        Ok(Self { snapshot_id, transitions, values: None, next_values: None, estimates: None })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Row-major `[T × obs_dim]` states.
    pub fn states(&self) -> Vec<f64> {
        self.transitions.iter().flat_map(|t| t.state.iter().copied()).collect()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.transitions.iter().map(|t| t.action.clone()).collect()
    }

    pub fn behavior_log_probs(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.behavior_log_prob).collect()
    }

    /// Fills `values` and `next_values` with `predict(states, rows)`.
    pub fn attach_values(&mut self, mut predict: impl FnMut(&[f64], usize) -> Result<Vec<f64>>) -> Result<()> {
        let n = self.len();
        let mut inputs = self.states();
        let finals: Vec<usize> = (0..n).filter(|&t| self.transitions[t].truncated).collect();
        for &t in &finals {
            inputs.extend_from_slice(self.transitions[t].final_state.as_ref().expect("checked in new"));
        }
        let preds = predict(&inputs, n + finals.len())?;
        let values = preds[..n].to_vec();
        let mut next = vec![0.0; n];
        for t in 0..n.saturating_sub(1) {
            if !self.transitions[t].done() {
                next[t] = values[t + 1];
            }
        }
        for (i, &t) in finals.iter().enumerate() {
            next[t] = preds[n + i];
        }
        self.values = Some(values);
        self.next_values = Some(next);
        Ok(())
    }

    fn value_arrays(&self) -> Result<(&[f64], &[f64])> {
        match (&self.values, &self.next_values) {
            (Some(v), Some(nv)) => Ok((v, nv)),
            _ => Err(Error::Missing("value predictions".into())),
        }
    }

    pub fn estimates(&self) -> Result<&Estimates> {
        self.estimates.as_ref().ok_or_else(|| Error::Missing("advantage estimates".into()))
    }
}

/// Generalized advantage estimation. Returns advantages and value targets
/// `Â_t + V(s_t)`.
pub fn gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Result<Estimates> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    let (values, next_values) = batch.value_arrays()?;
    let n = batch.len();
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let tr = &batch.transitions[t];
        let delta = tr.reward + gamma * next_values[t] - values[t];
        if tr.done() {
            running = 0.0;
        }
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(Estimates { advantages, targets })
}

/// V-trace targets and advantages for target policy log-densities
/// `target_log_probs` (one per transition).
pub fn vtrace(batch: &RolloutBatch, target_log_probs: &[f64], gamma: f64, rho_bar: f64, c_bar: f64) -> Result<Estimates> {
    if !(c_bar > 0.0 && rho_bar >= c_bar) {
        return Err(Error::InvalidArgument(format!("need rho_bar >= c_bar > 0, got {rho_bar}, {c_bar}")));
    }
    if target_log_probs.len() != batch.len() {
        return Err(crate::error::shape_err(format!(
            "{} target log-densities for {} transitions",
            target_log_probs.len(),
            batch.len()
        )));
    }
    let (values, next_values) = batch.value_arrays()?;
    let n = batch.len();
    let mut targets = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    // v_{t+1} − V(s_{t+1}); zero across episode boundaries.
    let mut correction = 0.0;
    for t in (0..n).rev() {
        let tr = &batch.transitions[t];
        if tr.behavior_log_prob == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument(format!("zero behavior density at step {t}")));
        }
        let ratio = (target_log_probs[t] - tr.behavior_log_prob).exp();
        let (rho, c) = (ratio.min(rho_bar), ratio.min(c_bar));
        if tr.done() {
            correction = 0.0;
        }
        let delta = tr.reward + gamma * next_values[t] - values[t];
        let next_target = next_values[t] + correction;
        targets[t] = values[t] + rho * delta + gamma * c * correction;
        advantages[t] = rho * (tr.reward + gamma * next_target - values[t]);
        correction = targets[t] - values[t];
    }
    Ok(Estimates { advantages, targets })
}

/// Scales to zero mean and unit population std; leaves the slice unchanged
/// when the std is below `1e-8`.
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let std = (advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-8 {
        return;
    }
    advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn transition(reward: f64, terminated: bool, truncated: bool) -> Transition {
        Transition {
            state: vec![0.0],
            action: Action::Discrete(0),
            reward,
            terminated,
            truncated,
            final_state: truncated.then(|| vec![0.0]),
            behavior_log_prob: 0.5f64.ln(),
            behavior: ActionDistribution::categorical(&[0.5, 0.5]).unwrap(),
        }
    }

    fn batch_with(rewards: &[f64], dones: &[bool], values: Vec<f64>, next_values: Vec<f64>) -> RolloutBatch {
        let ts = rewards.iter().zip(dones).map(|(r, d)| transition(*r, *d, false)).collect();
        let mut b = RolloutBatch::new(0, ts).unwrap();
        b.values = Some(values);
        b.next_values = Some(next_values);
        b
    }

    #[test]
    fn hand_computed_discounted_sum() {
        let b = batch_with(&[1.0; 3], &[false, false, true], vec![0.0; 3], vec![0.0; 3]);
        let est = gae(&b, 0.5, 1.0).unwrap();
        assert_eq!(est.advantages, vec![1.75, 1.5, 1.0]);
    }

    #[test]
    fn lambda_zero_gives_td_errors() {
        let b = batch_with(&[1.0, 2.0, 3.0], &[false, false, true], vec![0.5, 0.2, 0.1], vec![0.2, 0.1, 0.0]);
        let est = gae(&b, 0.9, 0.0).unwrap();
        let expected = [1.0 + 0.9 * 0.2 - 0.5, 2.0 + 0.9 * 0.1 - 0.2, 3.0 - 0.1];
        for (a, e) in est.advantages.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(est.targets[2], 3.0);
    }

    #[test]
    fn missing_values_and_open_batches_are_errors() {
        let b = RolloutBatch::new(0, vec![transition(1.0, true, false)]).unwrap();
        assert!(matches!(gae(&b, 0.9, 0.9), Err(Error::Missing(_))));
        assert!(RolloutBatch::new(0, vec![transition(1.0, false, false)]).is_err());
    }

    #[test]
    fn truncation_bootstraps_from_final_state() {
        let mut b = RolloutBatch::new(0, vec![transition(1.0, false, true)]).unwrap();
        b.transitions[0].final_state = Some(vec![2.0]);
        b.attach_values(|s, rows| Ok(s[..rows].iter().map(|x| 10.0 * x).collect())).unwrap();
        assert_eq!(b.next_values.as_ref().unwrap(), &vec![20.0]);
        let est = gae(&b, 0.5, 0.95).unwrap();
        assert_eq!(est.advantages, vec![11.0]);
    }

    #[test]
    fn normalization_examples() {
        let mut c = vec![3.0; 4];
        normalize_advantages(&mut c);
        assert_eq!(c, vec![3.0; 4]);
        let mut pm = vec![1.0, -1.0];
        normalize_advantages(&mut pm);
        assert_eq!(pm, vec![1.0, -1.0]);
        let mut v = vec![2.0, 4.0, 6.0];
        normalize_advantages(&mut v);
        let z = 1.5f64.sqrt();
        assert!((v[0] + z).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - z).abs() < 1e-12);
    }

    #[test]
    fn vtrace_on_policy_equals_gae_lambda_one() {
        let b = batch_with(&[1.0, -2.0, 0.5, 3.0], &[false, true, false, true], vec![0.3, -0.1, 0.7, 0.2], vec![-0.1, 0.0, 0.2, 0.0]);
        let logp = b.behavior_log_probs();
        let v = vtrace(&b, &logp, 0.9, 1.0, 1.0).unwrap();
        let g = gae(&b, 0.9, 1.0).unwrap();
        for (x, y) in v.targets.iter().zip(&g.targets) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in v.advantages.iter().zip(&g.advantages) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn gae_is_linear_in_rewards(
            r1 in prop::collection::vec(-5.0f64..5.0, 6),
            r2 in prop::collection::vec(-5.0f64..5.0, 6),
            lambda in 0.0f64..=1.0,
        ) {
            let dones = [false, true, false, false, false, true];
            let values = vec![0.0; 6];
            let est = |r: &[f64]| gae(&batch_with(r, &dones, values.clone(), values.clone()), 0.9, lambda).unwrap().advantages;
            let sum: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| a + b).collect();
            for ((s, a), b) in est(&sum).iter().zip(est(&r1)).zip(est(&r2)) {
                prop_assert!((s - a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn episodes_do_not_leak(r in prop::collection::vec(-5.0f64..5.0, 5), lambda in 0.0f64..=1.0) {
            // Swapping the two episodes swaps their advantages blockwise.
            let a = batch_with(&r, &[false, true, false, false, true], vec![0.1; 5], vec![0.1, 0.0, 0.1, 0.1, 0.0]);
            let swapped: Vec<f64> = r[2..].iter().chain(&r[..2]).copied().collect();
            let b = batch_with(&swapped, &[false, false, true, false, true], vec![0.1; 5], vec![0.1, 0.1, 0.0, 0.1, 0.0]);
            let ea = gae(&a, 0.9, lambda).unwrap().advantages;
            let eb = gae(&b, 0.9, lambda).unwrap().advantages;
            prop_assert_eq!(&ea[..2], &eb[3..]);
            prop_assert_eq!(&ea[2..], &eb[..3]);
        }
    }
}
