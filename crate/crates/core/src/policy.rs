//! Parametric stochastic policies and the state-value network.
//!
//! A policy is a 2-hidden-layer tanh MLP followed by either a softmax head
//! (discrete actions) or a diagonal Gaussian head whose log-std vector is a
//! separate, state-independent parameter.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Mlp, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

/// Per-state action distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    /// Log-probabilities of each action; `exp` sums to one.
    Categorical { log_probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

impl ActionDistribution {
    /// Validated categorical distribution from probabilities.
    pub fn categorical(probs: &[f64]) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidArgument("categorical needs at least 2 actions".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid probabilities {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self::Categorical { log_probs: probs.iter().map(|p| p.ln()).collect() })
    }

    pub fn categorical_from_logits(logits: &[f64]) -> Result<Self> {
        let log_probs = kernels::log_softmax(logits, 1, logits.len());
        if log_probs.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("categorical logits".into()));
        }
        Ok(Self::Categorical { log_probs })
    }

    pub fn gaussian(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() || mean.is_empty() {
            return Err(shape_err(format!("gaussian mean {} vs log-std {}", mean.len(), log_std.len())));
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        Ok(Self::Gaussian { mean, log_std })
    }

    pub fn probs(&self) -> Option<Vec<f64>> {
        match self {
            Self::Categorical { log_probs } => Some(log_probs.iter().map(|l| l.exp()).collect()),
            Self::Gaussian { .. } => None,
        }
    }

    pub fn std(&self) -> Option<Vec<f64>> {
        match self {
            Self::Gaussian { log_std, .. } => Some(log_std.iter().map(|l| l.exp()).collect()),
            Self::Categorical { .. } => None,
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (Self::Categorical { log_probs }, Action::Discrete(a)) => log_probs
                .get(*a)
                .copied()
                .ok_or_else(|| Error::InvalidAction(format!("action {a} with {} categories", log_probs.len()))),
            (Self::Gaussian { mean, log_std }, Action::Continuous(x)) => {
                if x.len() != mean.len() {
                    return Err(Error::InvalidAction(format!(
                        "action dimension {} for a {}-dimensional Gaussian",
                        x.len(),
                        mean.len()
                    )));
                }
                Ok(kernels::gaussian_log_density(mean, log_std, x))
            }
            _ => Err(Error::InvalidAction("action kind does not match the distribution family".into())),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Action {
        match self {
            Self::Categorical { log_probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, lp) in log_probs.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        return Action::Discrete(a);
                    }
                }
                Action::Discrete(log_probs.len() - 1)
            }
            Self::Gaussian { mean, log_std } => Action::Continuous(
                mean.iter()
                    .zip(log_std)
                    .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ),
        }
    }

    /// Most likely action: argmax for categorical, the mean for Gaussian.
    pub fn mode(&self) -> Action {
        match self {
            Self::Categorical { log_probs } => {
                let mut best = 0;
                for (a, lp) in log_probs.iter().enumerate() {
                    if *lp > log_probs[best] {
                        best = a;
                    }
                }
                Action::Discrete(best)
            }
            Self::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            Self::Categorical { log_probs } => -log_probs
                .iter()
                .map(|lp| if lp.is_finite() { lp.exp() * lp } else { 0.0 })
                .sum::<f64>(),
            Self::Gaussian { log_std, .. } => {
                log_std.iter().map(|ls| ls + 0.5 + kernels::HALF_LN_2PI).sum()
            }
        }
    }
}

/// `KL(p ‖ q)` in closed form.
pub fn kl(p: &ActionDistribution, q: &ActionDistribution) -> Result<f64> {
    match (p, q) {
        (ActionDistribution::Categorical { log_probs: lp }, ActionDistribution::Categorical { log_probs: lq }) => {
            if lp.len() != lq.len() {
                return Err(Error::FamilyMismatch(format!("{} vs {} categories", lp.len(), lq.len())));
            }
            let mut total = 0.0;
            for (a, b) in lp.iter().zip(lq) {
                let pa = a.exp();
                if pa > 0.0 {
                    total += pa * (a - b);
                }
            }
            Ok(total.max(0.0))
        }
        (
            ActionDistribution::Gaussian { mean: mp, log_std: sp },
            ActionDistribution::Gaussian { mean: mq, log_std: sq },
        ) => {
            if mp.len() != mq.len() {
                return Err(Error::FamilyMismatch(format!("dimensions {} vs {}", mp.len(), mq.len())));
            }
            let mut total = 0.0;
            for i in 0..mp.len() {
                let vp = (2.0 * sp[i]).exp();
                let vq = (2.0 * sq[i]).exp();
                let d = mp[i] - mq[i];
                total += sq[i] - sp[i] + (vp + d * d) / (2.0 * vq) - 0.5;
            }
            Ok(total.max(0.0))
        }
        _ => Err(Error::FamilyMismatch("categorical vs Gaussian".into())),
    }
}

/// Total variation distance `½ Σ_a |p(a) − q(a)|`. Categorical only.
pub fn tv(p: &ActionDistribution, q: &ActionDistribution) -> Result<f64> {
    match (p.probs(), q.probs()) {
        (Some(a), Some(b)) if a.len() == b.len() => {
            Ok(0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        }
        (Some(a), Some(b)) => Err(Error::FamilyMismatch(format!("{} vs {} categories", a.len(), b.len()))),
        _ => Err(Error::FamilyMismatch("total variation is only available for categorical policies".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PolicyHead {
    Categorical { actions: usize },
    Gaussian { dim: usize },
}

impl PolicyHead {
    fn output_dim(self) -> usize {
        match self {
            PolicyHead::Categorical { actions } => actions,
            PolicyHead::Gaussian { dim } => dim,
        }
    }
}

/// `<stem>.<ext>`, keeping any dots already in `stem`.
fn sibling(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    name.into()
}

/// Parameters of a policy network plus the snapshot identity assigned by the
/// trainer when the parameters are published.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub snapshot_id: u64,
    head: PolicyHead,
    trunk: Mlp,
    log_std: Option<Tensor>,
}

/// Tape handles for a recorded policy evaluation.
pub struct PolicyTape {
    /// `[rows]` log-density of the given actions.
    pub log_probs: Var,
    /// Scalar mean entropy over the rows.
    pub entropy: Var,
    /// `[rows, out]` head output: logits or Gaussian means.
    pub output: Var,
    /// Parameter leaves in [`PolicyParams::params_mut`] order.
    pub params: Vec<Var>,
}

impl PolicyParams {
    pub fn new(obs_dim: usize, hidden: &[usize], head: PolicyHead, rng: &mut impl Rng) -> Self {
        let sizes = Self::layout(obs_dim, hidden, head);
        let log_std = match head {
            PolicyHead::Gaussian { dim } => Some(Tensor::zeros(&[dim])),
            PolicyHead::Categorical { .. } => None,
        };
        Self { snapshot_id: 0, head, trunk: Mlp::new(&sizes, 0.01, rng), log_std }
    }

    /// All-zero weights; log-std zero for Gaussian heads.
    pub fn zeros(obs_dim: usize, hidden: &[usize], head: PolicyHead) -> Self {
        let sizes = Self::layout(obs_dim, hidden, head);
        let log_std = match head {
            PolicyHead::Gaussian { dim } => Some(Tensor::zeros(&[dim])),
            PolicyHead::Categorical { .. } => None,
        };
        Self { snapshot_id: 0, head, trunk: Mlp::zeros(&sizes), log_std }
    }

    fn layout(obs_dim: usize, hidden: &[usize], head: PolicyHead) -> Vec<usize> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(head.output_dim());
        sizes
    }

    pub fn head(&self) -> PolicyHead {
        self.head
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.trunk.params_mut().iter_mut().collect();
        if let Some(ls) = self.log_std.as_mut() {
            out.push(ls);
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.trunk.params().iter().collect();
        if let Some(ls) = self.log_std.as_ref() {
            out.push(ls);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn distribution(&self, state: &[f64]) -> Result<ActionDistribution> {
        Ok(self.distributions(state, 1)?.pop().unwrap())
    }

    /// Distributions at `rows` states packed row-major.
    pub fn distributions(&self, states: &[f64], rows: usize) -> Result<Vec<ActionDistribution>> {
        let out = self.trunk.forward(states, rows)?;
        self.decode(&out, rows)
    }

    /// Distributions from a `[rows, out]` head output.
    pub fn decode(&self, out: &[f64], rows: usize) -> Result<Vec<ActionDistribution>> {
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy network output".into()));
        }
        let d = self.head.output_dim();
        (0..rows)
            .map(|r| {
                let row = &out[r * d..(r + 1) * d];
                match self.head {
                    PolicyHead::Categorical { .. } => ActionDistribution::categorical_from_logits(row),
                    PolicyHead::Gaussian { .. } => ActionDistribution::gaussian(
                        row.to_vec(),
                        self.log_std.as_ref().unwrap().data().to_vec(),
                    ),
                }
            })
            .collect()
    }

    /// Records log-densities of `actions` at `states` (`[rows, obs_dim]`) and
    /// the mean entropy.
    pub fn record(&self, tape: &mut Tape, states: &Tensor, actions: &[Action]) -> Result<PolicyTape> {
        let rows = states.shape()[0];
        if actions.len() != rows {
            return Err(shape_err(format!("{} actions for {rows} states", actions.len())));
        }
        let x = tape.leaf_ref(states);
        let (out, mut params) = self.trunk.forward_tape(tape, x)?;
        match self.head {
            PolicyHead::Categorical { .. } => {
                let idx = actions
                    .iter()
                    .map(|a| a.as_discrete().ok_or_else(|| Error::InvalidAction("continuous action for a categorical policy".into())))
                    .collect::<Result<Vec<_>>>()?;
                let log_probs = tape.categorical_log_prob(out, &idx)?;
                let ent = tape.categorical_entropy(out)?;
                let entropy = tape.mean(ent)?;
                Ok(PolicyTape { log_probs, entropy, output: out, params })
            }
            PolicyHead::Gaussian { dim } => {
                let mut flat = Vec::with_capacity(rows * dim);
                for a in actions {
                    match a {
                        Action::Continuous(v) if v.len() == dim => flat.extend_from_slice(v),
                        _ => return Err(Error::InvalidAction(format!("expected {dim}-dimensional continuous action"))),
                    }
                }
                let ls = tape.leaf_ref(self.log_std.as_ref().unwrap());
                params.push(ls);
                let log_probs = tape.gaussian_log_prob(out, ls, &flat)?;
                let s = tape.sum(ls)?;
                let c = tape.leaf(Tensor::scalar(dim as f64 * (0.5 + kernels::HALF_LN_2PI))?);
                let entropy = tape.add(s, c)?;
                Ok(PolicyTape { log_probs, entropy, output: out, params })
            }
        }
    }

    /// Writes `<stem>.json` (header) and `<stem>.bin` (little-endian f64 parameters).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let header = SnapshotHeader {
            snapshot_id: self.snapshot_id,
            head: self.head,
            layout: self.trunk.sizes().to_vec(),
            shapes: self.params().iter().map(|p| p.shape().to_vec()).collect(),
        };
        fs::write(sibling(stem, "json"), serde_json::to_string_pretty(&header)?)?;
        let mut bytes = Vec::with_capacity(8 * self.param_count());
        for p in self.params() {
            for v in p.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(sibling(stem, "bin"), bytes)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let header: SnapshotHeader = serde_json::from_str(&fs::read_to_string(sibling(stem, "json"))?)?;
        let bytes = fs::read(sibling(stem, "bin"))?;
        let total: usize = header.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if bytes.len() != 8 * total {
            return Err(shape_err(format!("snapshot has {} bytes, header needs {}", bytes.len(), 8 * total)));
        }
        let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut tensors = Vec::with_capacity(header.shapes.len());
        for shape in &header.shapes {
            let n = shape.iter().product();
            tensors.push(Tensor::new(shape.clone(), values.by_ref().take(n).collect())?);
        }
        let log_std = match header.head {
            PolicyHead::Gaussian { .. } => Some(tensors.pop().ok_or_else(|| shape_err("missing log-std"))?),
            PolicyHead::Categorical { .. } => None,
        };
        Ok(Self {
            snapshot_id: header.snapshot_id,
            head: header.head,
            trunk: Mlp::from_params(&header.layout, tensors)?,
            log_std,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    snapshot_id: u64,
    head: PolicyHead,
    layout: Vec<usize>,
    shapes: Vec<Vec<usize>>,
}

/// Scalar state-value network.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueParams {
    net: Mlp,
}

impl ValueParams {
    pub fn new(obs_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self { net: Mlp::new(&sizes, 1.0, rng) }
    }

    pub fn zeros(obs_dim: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self { net: Mlp::zeros(&sizes) }
    }

    pub fn predict(&self, states: &[f64], rows: usize) -> Result<Vec<f64>> {
        let v = self.net.forward(states, rows)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("value network output".into()));
        }
        Ok(v)
    }

    /// Records predictions for `states: [rows, obs_dim]`; output shape `[rows, 1]`.
    pub fn record(&self, tape: &mut Tape, states: &Tensor) -> Result<(Var, Vec<Var>)> {
        let x = tape.leaf_ref(states);
        self.net.forward_tape(tape, x)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut().iter_mut().collect()
    }

    pub fn params(&self) -> &[Tensor] {
        self.net.params()
    }
}
