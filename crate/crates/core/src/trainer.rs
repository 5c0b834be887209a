//! Training loops. One loop serves all three algorithms:
//!
//! 1. collect `n` steps with the current policy `π_k` and insert the batch;
//! 2. for ToPPO and GePPO, sample an older batch `μ` and join it to the
//!    on-policy batch; run shuffled minibatch epochs with early stopping;
//! 3. for ToPPO, drop stored batches whose behavior drifted more than α
//!    from the updated policy.
//!
//! PPO is the same loop with a single-entry buffer and fixed `[1 ± ε]` bounds.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tensor};
use crate::buffer::{EpsilonSchedule, PolicySet};
use crate::config::{Algorithm, TrainConfig};
use crate::envs::{make, EnvId, Environment};
use crate::error::{Error, Result};
use crate::estimators::{gae, normalize_advantages, vtrace, RolloutBatch, Transition};
use crate::metrics::{IterationMetrics, SelectionRow};
use crate::objectives::{early_stop, geppo_loss, ppo_loss, toppo_loss, EarlyStop, Samples};
use crate::policy::{kl, PolicyHead, PolicyParams, ValueParams};
use crate::rng::{stream, Stream};

/// Number of trailing evaluations averaged into [`RunResult::final_return`].
pub const FINAL_EVALS: usize = 10;

#[derive(Clone, Debug)]
pub struct RunResult {
    pub metrics: Vec<IterationMetrics>,
    pub selections: Vec<SelectionRow>,
    pub policy: PolicyParams,
    pub value: ValueParams,
}

impl RunResult {
    pub fn eval_returns(&self) -> Vec<f64> {
        self.metrics.iter().filter_map(|m| m.eval_return).collect()
    }

    pub fn best_eval(&self) -> Option<f64> {
        self.eval_returns().into_iter().reduce(f64::max)
    }

    /// Mean of the last [`FINAL_EVALS`] evaluations.
    pub fn final_return(&self) -> Option<f64> {
        let evals = self.eval_returns();
        let tail = &evals[evals.len().saturating_sub(FINAL_EVALS)..];
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn env_steps(&self) -> usize {
        self.metrics.last().map_or(0, |m| m.env_steps)
    }
}

/// State visible to an observer after each iteration's selection step.
pub struct IterationView<'a> {
    pub iteration: usize,
    pub policy: &'a PolicyParams,
    pub buffer: &'a PolicySet,
    pub metrics: &'a IterationMetrics,
}

struct Collector {
    env: Box<dyn Environment>,
    obs: Vec<f64>,
    episode_return: f64,
    /// Environment steps taken so far.
    steps: usize,
    env_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
}

impl Collector {
    fn new(id: &EnvId, seed: u64) -> Result<Self> {
        let mut env = make(id)?;
        let mut env_rng = stream(seed, Stream::Env);
        let obs = env.reset(env_rng.random());
        Ok(Self { env, obs, episode_return: 0.0, steps: 0, env_rng, action_rng: stream(seed, Stream::Action) })
    }

    /// Exactly `n` steps; the environment carries over between calls and the
    /// last step is marked truncated when its episode is still running.
    fn collect(&mut self, policy: &PolicyParams, n: usize) -> Result<(RolloutBatch, Vec<f64>)> {
        let space = self.env.spec().action_space.clone();
        let mut transitions = Vec::with_capacity(n);
        let mut finished = Vec::new();
        for t in 0..n {
            let dist = policy.distribution(&self.obs)?;
            let action = dist.sample(&mut self.action_rng);
            let behavior_log_prob = dist.log_prob(&action)?;
            let step = self.env.step(&space.clip(&action))?;
            self.steps += 1;
            self.episode_return += step.reward;
            let cut = step.truncated || (t + 1 == n && !step.terminated);
            let next = if step.done() {
                finished.push(self.episode_return);
                self.episode_return = 0.0;
                self.env.reset(self.env_rng.random())
            } else {
                step.observation.clone()
            };
            transitions.push(Transition {
                state: std::mem::replace(&mut self.obs, next),
                action,
                reward: step.reward,
                terminated: step.terminated,
                truncated: cut,
                final_state: cut.then_some(step.observation),
                behavior_log_prob,
                behavior: dist,
            });
        }
        Ok((RolloutBatch::new(policy.snapshot_id, transitions)?, finished))
    }
}

/// Mean undiscounted return of `episodes` runs of the mean action.
pub fn evaluate_policy(policy: &PolicyParams, id: &EnvId, episodes: usize, rng: &mut impl Rng) -> Result<f64> {
    let mut env = make(id)?;
    let space = env.spec().action_space.clone();
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset(rng.random());
        loop {
            let action = space.clip(&policy.distribution(&obs)?.mode());
            let step = env.step(&action)?;
            total += step.reward;
            if step.done() {
                break;
            }
            obs = step.observation;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Update samples from a batch. Without `anchor` the behavior policy is the
/// anchor itself.
fn batch_samples(batch: &RolloutBatch, anchor: Option<&PolicyParams>, advantages: &[f64], targets: &[f64]) -> Result<Samples> {
    let rows = batch.len();
    let d = batch.transitions.first().map_or(0, |t| t.state.len());
    let states = batch.states();
    let behavior_log_probs = batch.behavior_log_probs();
    let (anchor_log_probs, anchor_dists) = match anchor {
        None => (behavior_log_probs.clone(), batch.transitions.iter().map(|t| t.behavior.clone()).collect()),
        Some(p) => {
            let dists = p.distributions(&states, rows)?;
            let lps = dists.iter().zip(&batch.transitions).map(|(q, t)| q.log_prob(&t.action)).collect::<Result<Vec<_>>>()?;
            (lps, dists)
        }
    };
    Ok(Samples {
        states: Tensor::new(vec![rows, d], states)?,
        actions: batch.actions(),
        behavior_log_probs,
        anchor_log_probs,
        anchor: anchor_dists,
        advantages: advantages.to_vec(),
        targets: targets.to_vec(),
    })
}

fn mean_update_kl(dataset: &Samples, policy: &PolicyParams) -> Result<f64> {
    let live = policy.distributions(dataset.states.data(), dataset.len())?;
    let mut total = 0.0;
    for (p, q) in dataset.anchor.iter().zip(&live) {
        total += kl(p, q)?;
    }
    Ok(total / dataset.len() as f64)
}

pub fn run_toppo(cfg: &TrainConfig) -> Result<RunResult> {
    train(Algorithm::Toppo, cfg)
}

pub fn run_ppo(cfg: &TrainConfig) -> Result<RunResult> {
    train(Algorithm::Ppo, cfg)
}

pub fn run_geppo(cfg: &TrainConfig) -> Result<RunResult> {
    train(Algorithm::Geppo, cfg)
}

pub fn train(algorithm: Algorithm, cfg: &TrainConfig) -> Result<RunResult> {
    train_with_observer(algorithm, cfg, &mut |_| Ok(()))
}

pub fn train_with_observer(
    algorithm: Algorithm,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&IterationView) -> Result<()>,
) -> Result<RunResult> {
    cfg.validate()?;
    let mut collector = Collector::new(&cfg.env, cfg.seed)?;
    let spec = collector.env.spec().clone();
    let head = spec.action_space.policy_head();
    let entropy_coef = cfg.entropy_coef.unwrap_or(match head {
        PolicyHead::Categorical { .. } => 0.01,
        PolicyHead::Gaussian { .. } => 0.0,
    });

    let mut init_rng = stream(cfg.seed, Stream::Init);
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut buffer_rng = stream(cfg.seed, Stream::Buffer);
    let mut eval_rng = stream(cfg.seed, Stream::Eval);
    let mut policy = PolicyParams::new(spec.obs_dim, &cfg.hidden, head, &mut init_rng);
    let mut value = ValueParams::new(spec.obs_dim, &cfg.hidden, &mut init_rng);
    let adam = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };
    let mut policy_opt = AdamState::new(adam, policy.params());
    let mut value_opt = AdamState::new(adam, value.params());

    let off_policy = algorithm != Algorithm::Ppo;
    let mut buffer = PolicySet::new(if off_policy { cfg.buffer_size } else { 1 }, cfg.alpha)?;
    let schedule = EpsilonSchedule { mode: cfg.epsilon_mode, fixed: cfg.epsilon_toppo, epsilon_ppo: cfg.epsilon_ppo };

    let mut metrics = Vec::with_capacity(cfg.iterations());
    let mut selections = Vec::new();
    for k in 0..cfg.iterations() {
        // Collect with π_k.
        policy.snapshot_id = k as u64 + 1;
        let anchor = policy.clone();
        let (mut batch, finished) = collector.collect(&policy, cfg.batch_size)?;
        batch.attach_values(|s, rows| value.predict(s, rows))?;
        let mut est = gae(&batch, cfg.gamma, cfg.lambda)?;
        normalize_advantages(&mut est.advantages);
        batch.estimates = Some(est);
        buffer.insert(batch)?;

        // Build the update dataset.
        let epsilon = if off_policy { schedule.epsilon(buffer.len())? } else { cfg.epsilon_ppo };
        let newest = buffer.newest().expect("just inserted");
        let est = newest.batch.estimates()?;
        let on = batch_samples(&newest.batch, None, &est.advantages, &est.targets)?;
        let behavior = if off_policy { buffer.sample_behavior(&mut buffer_rng) } else { None };
        let behavior_id = behavior.map(|e| e.snapshot_id);
        let dataset = match behavior {
            None => on,
            Some(entry) => {
                let off = match algorithm {
                    Algorithm::Geppo => {
                        let mut old = entry.batch.clone();
                        old.attach_values(|s, rows| value.predict(s, rows))?;
                        let mut off = batch_samples(&old, Some(&anchor), &[], &[])?;
                        let mut v = vtrace(&old, &off.anchor_log_probs, cfg.gamma, cfg.rho_bar, cfg.c_bar)?;
                        normalize_advantages(&mut v.advantages);
                        off.advantages = v.advantages;
                        off.targets = v.targets;
                        off
                    }
                    _ => {
                        let frozen = entry.batch.estimates()?;
                        batch_samples(&entry.batch, Some(&anchor), &frozen.advantages, &frozen.targets)?
                    }
                };
                Samples::concat(&[&on, &off])?
            }
        };

        // Minibatch epochs.
        let rows = dataset.len();
        let mb_size = (rows / cfg.minibatches).max(1);
        let mut order: Vec<usize> = (0..rows).collect();
        let (mut policy_loss, mut value_loss, mut clip_fraction, mut steps, mut excluded) = (0.0, 0.0, 0.0, 0usize, 0usize);
        let mut epochs_run = 0;
        let mut mean_kl = 0.0;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(mb_size) {
                let mb = dataset.select(chunk);
                let pg = match algorithm {
                    Algorithm::Ppo => ppo_loss(&policy, &mb, epsilon, entropy_coef)?,
                    Algorithm::Toppo => toppo_loss(&policy, &mb, epsilon, entropy_coef)?,
                    Algorithm::Geppo => geppo_loss(&policy, &mb, epsilon, entropy_coef)?,
                };
                adam_step(&mut policy.params_mut(), &pg.grads, &mut policy_opt)?;
                let (vl, vg) = crate::objectives::value_loss(&value, &mb.states, &mb.targets)?;
                adam_step(&mut value.params_mut(), &vg, &mut value_opt)?;
                policy_loss += pg.breakdown.policy_loss;
                clip_fraction += pg.breakdown.clip_fraction;
                excluded += pg.breakdown.excluded;
                value_loss += vl;
                steps += 1;
            }
            epochs_run += 1;
            mean_kl = mean_update_kl(&dataset, &policy)?;
            if early_stop(mean_kl, cfg.early_stop_kl) == EarlyStop::Stop {
                break;
            }
        }
        if !(policy_loss.is_finite() && value_loss.is_finite()) {
            return Err(Error::NonFinite(format!("loss at iteration {k}")));
        }

        // Select against π_{k+1}.
        let mut deletions = 0;
        if algorithm == Algorithm::Toppo && cfg.selection {
            for rec in buffer.select(&policy)? {
                deletions += usize::from(rec.deleted);
                selections.push(SelectionRow {
                    iteration: k,
                    snapshot_id: rec.snapshot_id,
                    divergence: rec.divergence,
                    action: if rec.deleted { "deleted" } else { "kept" }.to_string(),
                });
            }
        }

        let eval_return = if (k + 1) % cfg.eval_interval == 0 {
            Some(evaluate_policy(&policy, &cfg.env, cfg.eval_episodes, &mut eval_rng)?)
        } else {
            None
        };
        let row = IterationMetrics {
            iteration: k,
            env_steps: collector.steps,
            mean_return: (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64),
            eval_return,
            policy_loss: policy_loss / steps as f64,
            value_loss: value_loss / steps as f64,
            mean_kl,
            clip_fraction: clip_fraction / steps as f64,
            buffer_len: buffer.len(),
            epsilon,
            behavior_id,
            deletions,
            epochs_run,
            excluded,
        };
        observer(&IterationView { iteration: k, policy: &policy, buffer: &buffer, metrics: &row })?;
        metrics.push(row);
    }
    Ok(RunResult { metrics, selections, policy, value })
}
