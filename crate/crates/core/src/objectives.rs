//! Clipped policy surrogates (PPO, ToPPO, GePPO-style) and the value loss.
//!
//! All surrogates share one form: mean over samples of
//! `min(r·Â, clip(r, l, u)·Â)` with `r = π(a|s)/μ(a|s)`; they differ only in
//! the clip bounds. Losses are the negated objectives.

use crate::autodiff::{Tape, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::policy::{kl, Action, ActionDistribution, PolicyParams, ValueParams};

/// Log-ratios beyond this magnitude overflow `exp`; such samples are excluded.
const MAX_LOG_RATIO: f64 = 700.0;

/// Per-sample ratio bounds `[l, u]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub epsilon: f64,
}

fn anchor_ratios(anchor_log_probs: &[f64], behavior_log_probs: &[f64]) -> Result<Vec<f64>> {
    if anchor_log_probs.len() != behavior_log_probs.len() {
        return Err(shape_err(format!(
            "{} anchor log-densities for {} samples",
            anchor_log_probs.len(),
            behavior_log_probs.len()
        )));
    }
    Ok(anchor_log_probs.iter().zip(behavior_log_probs).map(|(a, b)| (a - b).exp()).collect())
}

impl ClipBounds {
    /// `[1 − ε, 1 + ε]` for every sample.
    pub fn ppo(len: usize, epsilon: f64) -> Self {
        Self { lower: vec![1.0 - epsilon; len], upper: vec![1.0 + epsilon; len], epsilon }
    }

    /// `l = max(π_k/μ − ε, 0)`, `u = π_k/μ + ε`.
    pub fn toppo(anchor_log_probs: &[f64], behavior_log_probs: &[f64], epsilon: f64) -> Result<Self> {
        let ratios = anchor_ratios(anchor_log_probs, behavior_log_probs)?;
        Ok(Self {
            lower: ratios.iter().map(|r| (r - epsilon).max(0.0)).collect(),
            upper: ratios.iter().map(|r| r + epsilon).collect(),
            epsilon,
        })
    }

    /// `l = π_k/μ − ε` (may be negative), `u = π_k/μ + ε`.
    pub fn geppo(anchor_log_probs: &[f64], behavior_log_probs: &[f64], epsilon: f64) -> Result<Self> {
        let ratios = anchor_ratios(anchor_log_probs, behavior_log_probs)?;
        Ok(Self {
            lower: ratios.iter().map(|r| r - epsilon).collect(),
            upper: ratios.iter().map(|r| r + epsilon).collect(),
            epsilon,
        })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// `0 ≤ l ≤ u` and `u − l ≤ 2ε` for every sample.
    pub fn check_nonnegative(&self) -> Result<()> {
        let tol = 1e-12 * (1.0 + self.epsilon);
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(*l >= 0.0 && l <= u && u - l <= 2.0 * self.epsilon + tol) {
                return Err(Error::InvalidArgument(format!("clip bounds [{l}, {u}] at sample {i} violate 0 <= l <= u <= l + 2eps")));
            }
        }
        Ok(())
    }
}

/// Samples for one policy update, row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    /// `[rows, obs_dim]`.
    pub states: Tensor,
    pub actions: Vec<Action>,
    pub behavior_log_probs: Vec<f64>,
    /// `log π_k(a|s)` from the frozen anchor snapshot.
    pub anchor_log_probs: Vec<f64>,
    /// `π_k(·|s)`, for the update KL.
    pub anchor: Vec<ActionDistribution>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let rows = self.states.shape().first().copied().unwrap_or(0);
        if rows != n
            || self.behavior_log_probs.len() != n
            || self.anchor_log_probs.len() != n
            || self.anchor.len() != n
            || self.advantages.len() != n
            || self.targets.len() != n
        {
            return Err(shape_err(format!("sample columns disagree on length {n}")));
        }
        Ok(())
    }

    /// Rows `idx` in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let d = self.states.shape()[1];
        let mut states = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            states.extend_from_slice(self.states.row(i));
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            states: Tensor::from_parts(vec![idx.len(), d], states),
            actions: idx.iter().map(|&i| self.actions[i].clone()).collect(),
            behavior_log_probs: pick(&self.behavior_log_probs),
            anchor_log_probs: pick(&self.anchor_log_probs),
            anchor: idx.iter().map(|&i| self.anchor[i].clone()).collect(),
            advantages: pick(&self.advantages),
            targets: pick(&self.targets),
        }
    }

    /// Row-wise concatenation.
    pub fn concat(parts: &[&Samples]) -> Result<Self> {
        let d = parts.first().map(|p| p.states.shape()[1]).unwrap_or(0);
        if parts.iter().any(|p| p.states.shape()[1] != d) {
            return Err(shape_err("state widths differ".to_string()));
        }
        let rows: usize = parts.iter().map(|p| p.len()).sum();
        let mut out = Self {
            states: Tensor::zeros(&[0, d]),
            actions: Vec::with_capacity(rows),
            behavior_log_probs: Vec::with_capacity(rows),
            anchor_log_probs: Vec::with_capacity(rows),
            anchor: Vec::with_capacity(rows),
            advantages: Vec::with_capacity(rows),
            targets: Vec::with_capacity(rows),
        };
        let mut states = Vec::with_capacity(rows * d);
        for p in parts {
            states.extend_from_slice(p.states.data());
            out.actions.extend(p.actions.iter().cloned());
            out.behavior_log_probs.extend_from_slice(&p.behavior_log_probs);
            out.anchor_log_probs.extend_from_slice(&p.anchor_log_probs);
            out.anchor.extend(p.anchor.iter().cloned());
            out.advantages.extend_from_slice(&p.advantages);
            out.targets.extend_from_slice(&p.targets);
        }
        out.states = Tensor::from_parts(vec![rows, d], states);
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Negated clipped objective (without the entropy bonus).
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean `KL(π_k ‖ π_live)` over the samples, at the pre-step parameters.
    pub mean_kl: f64,
    /// Fraction of included samples whose ratio lies outside `[l, u]`.
    pub clip_fraction: f64,
    /// Samples dropped because the ratio overflowed.
    pub excluded: usize,
}

/// Loss value, breakdown and gradients in [`PolicyParams::params_mut`] order.
#[derive(Clone, Debug)]
pub struct PolicyGradient {
    pub loss: f64,
    pub breakdown: LossBreakdown,
    pub grads: Vec<Tensor>,
}

/// `−mean(min(r·Â, clip(r, l, u)·Â)) − c_H·entropy` and its gradient.
pub fn clipped_loss(policy: &PolicyParams, samples: &Samples, bounds: &ClipBounds, entropy_coef: f64) -> Result<PolicyGradient> {
    samples.validate()?;
    let n = samples.len();
    if bounds.len() != n {
        return Err(shape_err(format!("{} clip bounds for {n} samples", bounds.len())));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let mut tape = Tape::new();
    let rec = policy.record(&mut tape, &samples.states, &samples.actions)?;

    let live_log_probs = tape.value(rec.log_probs).data().to_vec();
    let mask: Vec<f64> = live_log_probs
        .iter()
        .zip(&samples.behavior_log_probs)
        .map(|(l, b)| f64::from((l - b).abs() <= MAX_LOG_RATIO))
        .collect();
    let included = mask.iter().sum::<f64>();
    let excluded = n - included as usize;
    if included == 0.0 {
        return Err(Error::NonFinite("every importance ratio in the minibatch overflowed".into()));
    }

    let behavior = tape.leaf(Tensor::from_parts(vec![n], samples.behavior_log_probs.clone()));
    let mask_v = tape.leaf(Tensor::from_parts(vec![n], mask.clone()));
    let adv = tape.leaf(Tensor::from_parts(
        vec![n],
        samples.advantages.iter().zip(&mask).map(|(a, m)| a * m).collect(),
    ));
    let diff = tape.sub(rec.log_probs, behavior)?;
    let diff = tape.mul(diff, mask_v)?;
    let ratio = tape.exp(diff)?;
    let unclipped = tape.mul(ratio, adv)?;
    let clipped = tape.clip(ratio, &bounds.lower, &bounds.upper)?;
    let clipped = tape.mul(clipped, adv)?;
    let surrogate = tape.min(unclipped, clipped)?;
    let total = tape.sum(surrogate)?;
    let objective = tape.scale(total, 1.0 / included)?;
    let bonus = tape.scale(rec.entropy, entropy_coef)?;
    let gain = tape.add(objective, bonus)?;
    let loss = tape.neg(gain)?;

    let ratios = tape.value(ratio).data();
    let clipped_count = (0..n)
        .filter(|&i| mask[i] > 0.0 && (ratios[i] < bounds.lower[i] || ratios[i] > bounds.upper[i]))
        .count();
    let live = policy.decode(tape.value(rec.output).data(), n)?;
    let mut kl_sum = 0.0;
    for (p, q) in samples.anchor.iter().zip(&live) {
        kl_sum += kl(p, q)?;
    }
    let breakdown = LossBreakdown {
        policy_loss: -tape.value(objective).item(),
        value_loss: 0.0,
        entropy: tape.value(rec.entropy).item(),
        mean_kl: kl_sum / n as f64,
        clip_fraction: clipped_count as f64 / included,
        excluded,
    };
    let loss_value = tape.value(loss).item();
    let grads = tape.backward(loss, &Tensor::scalar(1.0)?)?;
    Ok(PolicyGradient {
        loss: loss_value,
        breakdown,
        grads: rec.params.iter().map(|p| grads.wrt(*p)).collect(),
    })
}

/// ToPPO: ratio bounds centred on the anchor ratio `π_k/π_{k−i}`, floored at 0.
pub fn toppo_loss(policy: &PolicyParams, samples: &Samples, epsilon: f64, entropy_coef: f64) -> Result<PolicyGradient> {
    let bounds = ClipBounds::toppo(&samples.anchor_log_probs, &samples.behavior_log_probs, epsilon)?;
    bounds.check_nonnegative()?;
    clipped_loss(policy, samples, &bounds, entropy_coef)
}

/// PPO: fixed `[1 − ε, 1 + ε]` around the behavior policy.
pub fn ppo_loss(policy: &PolicyParams, samples: &Samples, epsilon: f64, entropy_coef: f64) -> Result<PolicyGradient> {
    clipped_loss(policy, samples, &ClipBounds::ppo(samples.len(), epsilon), entropy_coef)
}

/// GePPO-style: anchor-centred bounds without the floor; `samples.advantages`
/// should be V-trace estimates of `A^{π_k}`.
pub fn geppo_loss(policy: &PolicyParams, samples: &Samples, epsilon: f64, entropy_coef: f64) -> Result<PolicyGradient> {
    let bounds = ClipBounds::geppo(&samples.anchor_log_probs, &samples.behavior_log_probs, epsilon)?;
    clipped_loss(policy, samples, &bounds, entropy_coef)
}

/// Mean squared error against `targets`, with gradients in
/// [`ValueParams::params_mut`] order.
pub fn value_loss(value: &ValueParams, states: &Tensor, targets: &[f64]) -> Result<(f64, Vec<Tensor>)> {
    let rows = states.shape()[0];
    if targets.len() != rows {
        return Err(shape_err(format!("{} targets for {rows} states", targets.len())));
    }
    let mut tape = Tape::new();
    let (pred, params) = value.record(&mut tape, states)?;
    let t = tape.leaf(Tensor::from_parts(vec![rows, 1], targets.to_vec()));
    let err = tape.sub(pred, t)?;
    let sq = tape.square(err)?;
    let loss = tape.mean(sq)?;
    let value_out = tape.value(loss).item();
    let grads = tape.backward(loss, &Tensor::scalar(1.0)?)?;
    Ok((value_out, params.iter().map(|p| grads.wrt(*p)).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EarlyStop {
    Continue,
    Stop,
}

/// Stops once the mean update KL exceeds `threshold`.
pub fn early_stop(mean_kl: f64, threshold: f64) -> EarlyStop {
    if mean_kl > threshold {
        EarlyStop::Stop
    } else {
        EarlyStop::Continue
    }
}
