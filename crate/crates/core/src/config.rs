//! Experiment configuration in a line-oriented `[section]` / `key = value`
//! format. `#` starts a comment.
//!
//! ```text
//! [experiment]
//! algorithm = toppo
//! seeds = 0, 1, 2
//! out = runs/cartpole
//!
//! [train]
//! env = cartpole
//! total_timesteps = 150000
//! ```

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::buffer::EpsilonMode;
use crate::envs::EnvId;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Toppo,
    Ppo,
    Geppo,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toppo" => Ok(Self::Toppo),
            "ppo" => Ok(Self::Ppo),
            "geppo" => Ok(Self::Geppo),
            _ => Err(Error::InvalidArgument(format!("unknown algorithm {s:?} (expected toppo, ppo or geppo)"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Toppo => "toppo",
            Self::Ppo => "ppo",
            Self::Geppo => "geppo",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: EnvId,
    pub total_timesteps: usize,
    /// Samples collected per iteration.
    pub batch_size: usize,
    pub minibatches: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon_ppo: f64,
    pub epsilon_toppo: f64,
    pub epsilon_mode: EpsilonMode,
    /// Maximum number of stored batches `N`.
    pub buffer_size: usize,
    /// Filter boundary for selection.
    pub alpha: f64,
    pub selection: bool,
    pub learning_rate: f64,
    /// `None` picks 0.01 for discrete and 0 for continuous actions.
    pub entropy_coef: Option<f64>,
    pub early_stop_kl: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Iterations between evaluations.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// V-trace truncation levels for the GePPO baseline.
    pub rho_bar: f64,
    pub c_bar: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvId::CartPole,
            total_timesteps: 150_000,
            batch_size: 1024,
            minibatches: 32,
            epochs: 10,
            gamma: 0.995,
            lambda: 0.97,
            epsilon_ppo: 0.2,
            epsilon_toppo: 0.1,
            epsilon_mode: EpsilonMode::Fixed,
            buffer_size: 5,
            alpha: 0.03,
            selection: true,
            learning_rate: 3e-4,
            entropy_coef: None,
            early_stop_kl: 0.03,
            hidden: vec![64, 64],
            seed: 0,
            eval_interval: 10,
            eval_episodes: 10,
            rho_bar: 1.0,
            c_bar: 1.0,
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), message: message.into() }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("minibatches", self.minibatches),
            ("epochs", self.epochs),
            ("buffer_size", self.buffer_size),
            ("eval_interval", self.eval_interval),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(config_err(field, "must be at least 1"));
            }
        }
        if self.batch_size % self.minibatches != 0 {
            return Err(config_err("minibatches", format!("must divide batch_size {}", self.batch_size)));
        }
        if self.total_timesteps < self.batch_size {
            return Err(config_err("total_timesteps", "must be at least one batch"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(config_err("gamma", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(config_err("lambda", "must lie in [0, 1]"));
        }
        for (field, v) in [("epsilon_ppo", self.epsilon_ppo), ("epsilon_toppo", self.epsilon_toppo)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(field, "must be positive and finite"));
            }
        }
        // Zero freezes the networks, which serves as a random-policy baseline.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("learning_rate", "must be finite and >= 0"));
        }
        if !(self.alpha >= 0.0) {
            return Err(config_err("alpha", "must be >= 0"));
        }
        if !(self.early_stop_kl > 0.0) {
            return Err(config_err("early_stop_kl", "must be positive (inf disables it)"));
        }
        if self.entropy_coef.is_some_and(|c| !(c >= 0.0 && c.is_finite())) {
            return Err(config_err("entropy_coef", "must be finite and >= 0"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(config_err("hidden", "needs at least one non-zero layer width"));
        }
        if !(self.c_bar > 0.0 && self.rho_bar >= self.c_bar) {
            return Err(config_err("rho_bar", "need rho_bar >= c_bar > 0"));
        }
        Ok(())
    }

    /// Iterations that fit in the step budget.
    pub fn iterations(&self) -> usize {
        self.total_timesteps / self.batch_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { algorithm: Algorithm::Toppo, seeds: vec![0], out_dir: PathBuf::from("runs"), train: TrainConfig::default() }
    }
}

fn parse_value<T: FromStr>(field: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| config_err(field, format!("cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(field: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(field, v.trim())).collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if section != "experiment" && section != "train" {
                    return Err(config_err(&section, format!("unknown section on line {}", lineno + 1)));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err("", format!("line {} is not `key = value`", lineno + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            let field = format!("{section}.{key}");
            if !seen.insert(field.clone()) {
                return Err(config_err(&field, "set twice"));
            }
            cfg.set(&section, key, value).map_err(|e| match e {
                Error::Config { .. } => e,
                other => config_err(&field, other.to_string()),
            })?;
        }
        if cfg.seeds.is_empty() {
            return Err(config_err("experiment.seeds", "must list at least one seed"));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let field = format!("{section}.{key}");
        let f = field.as_str();
        let t = &mut self.train;
        match (section, key) {
            ("experiment", "algorithm") => self.algorithm = value.parse()?,
            ("experiment", "seeds") => self.seeds = parse_list(f, value)?,
            ("experiment", "out") => self.out_dir = PathBuf::from(value),
            ("train", "env") => t.env = value.parse()?,
            ("train", "total_timesteps") => t.total_timesteps = parse_value(f, value)?,
            ("train", "batch_size") => t.batch_size = parse_value(f, value)?,
            ("train", "minibatches") => t.minibatches = parse_value(f, value)?,
            ("train", "epochs") => t.epochs = parse_value(f, value)?,
            ("train", "gamma") => t.gamma = parse_value(f, value)?,
            ("train", "lambda") => t.lambda = parse_value(f, value)?,
            ("train", "epsilon_ppo") => t.epsilon_ppo = parse_value(f, value)?,
            ("train", "epsilon_toppo") => t.epsilon_toppo = parse_value(f, value)?,
            ("train", "epsilon_mode") => t.epsilon_mode = value.parse()?,
            ("train", "buffer_size") => t.buffer_size = parse_value(f, value)?,
            ("train", "alpha") => t.alpha = parse_value(f, value)?,
            ("train", "selection") => t.selection = parse_value(f, value)?,
            ("train", "learning_rate") => t.learning_rate = parse_value(f, value)?,
            ("train", "entropy_coef") => {
                t.entropy_coef = if value == "auto" { None } else { Some(parse_value(f, value)?) }
            }
            ("train", "early_stop_kl") => t.early_stop_kl = parse_value(f, value)?,
            ("train", "hidden") => t.hidden = parse_list(f, value)?,
            ("train", "seed") => t.seed = parse_value(f, value)?,
            ("train", "eval_interval") => t.eval_interval = parse_value(f, value)?,
            ("train", "eval_episodes") => t.eval_episodes = parse_value(f, value)?,
            ("train", "rho_bar") => t.rho_bar = parse_value(f, value)?,
            ("train", "c_bar") => t.c_bar = parse_value(f, value)?,
            ("", _) => return Err(config_err(key, "key outside a section")),
            _ => return Err(config_err(f, "unknown key")),
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.train;
        let mut s = String::new();
        writeln!(s, "[experiment]")?;
        writeln!(s, "algorithm = {}", self.algorithm)?;
        writeln!(s, "seeds = {}", join(&self.seeds))?;
        writeln!(s, "out = {}", self.out_dir.display())?;
        writeln!(s)?;
        writeln!(s, "[train]")?;
        writeln!(s, "env = {}", t.env)?;
        writeln!(s, "total_timesteps = {}", t.total_timesteps)?;
        writeln!(s, "batch_size = {}", t.batch_size)?;
        writeln!(s, "minibatches = {}", t.minibatches)?;
        writeln!(s, "epochs = {}", t.epochs)?;
        writeln!(s, "gamma = {}", t.gamma)?;
        writeln!(s, "lambda = {}", t.lambda)?;
        writeln!(s, "epsilon_ppo = {}", t.epsilon_ppo)?;
        writeln!(s, "epsilon_toppo = {}", t.epsilon_toppo)?;
        writeln!(s, "epsilon_mode = {}", t.epsilon_mode)?;
        writeln!(s, "buffer_size = {}", t.buffer_size)?;
        writeln!(s, "alpha = {}", t.alpha)?;
        writeln!(s, "selection = {}", t.selection)?;
        writeln!(s, "learning_rate = {}", t.learning_rate)?;
        match t.entropy_coef {
            Some(c) => writeln!(s, "entropy_coef = {c}")?,
            None => writeln!(s, "entropy_coef = auto")?,
        }
        writeln!(s, "early_stop_kl = {}", t.early_stop_kl)?;
        writeln!(s, "hidden = {}", join(&t.hidden))?;
        writeln!(s, "seed = {}", t.seed)?;
        writeln!(s, "eval_interval = {}", t.eval_interval)?;
        writeln!(s, "eval_episodes = {}", t.eval_episodes)?;
        writeln!(s, "rho_bar = {}", t.rho_bar)?;
        writeln!(s, "c_bar = {}", t.c_bar)?;
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_match_the_hyperparameter_table() {
        let t = TrainConfig::default();
        assert_eq!((t.gamma, t.lambda, t.minibatches, t.epochs), (0.995, 0.97, 32, 10));
        assert_eq!((t.learning_rate, t.batch_size, t.buffer_size, t.epsilon_toppo, t.alpha), (3e-4, 1024, 5, 0.1, 0.03));
        t.validate().unwrap();
    }

    #[test]
    fn parse_minimal_file() {
        let cfg = ExperimentConfig::parse("[experiment]\nalgorithm = ppo # baseline\nseeds = 1,2\n[train]\nenv = pendulum\n").unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Ppo);
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.train.env, EnvId::Pendulum);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("[train]\nenv = atari-pong\n", "train.env"),
            ("[train]\ngamma = 1.5\n", "gamma"),
            ("[train]\nbatch_size = 1000\nminibatches = 32\n", "minibatches"),
            ("[train]\nwidth = 3\n", "train.width"),
            ("[experiment]\nseeds = a\n", "experiment.seeds"),
            ("[train]\nepochs = 1\nepochs = 2\n", "train.epochs"),
        ];
        for (text, field) in cases {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert!(matches!(&err, Error::Config { field: f, .. } if f == field), "{text:?} gave {err}");
        }
        let err = ExperimentConfig::parse("[train]\nenv = atari-pong\n").unwrap_err();
        assert!(err.to_string().contains("atari-pong"));
    }

    proptest! {
        #[test]
        fn round_trip(
            seeds in prop::collection::vec(0u64..1000, 1..4),
            gamma in 0.0f64..0.999,
            lr in 1e-6f64..1e-1,
            entropy in prop::option::of(0.0f64..0.1),
            adaptive in proptest::bool::ANY,
            selection in proptest::bool::ANY,
        ) {
            let mut cfg = ExperimentConfig { seeds, ..Default::default() };
            cfg.train.gamma = gamma;
            cfg.train.learning_rate = lr;
            cfg.train.entropy_coef = entropy;
            cfg.train.selection = selection;
            cfg.train.env = EnvId::Random { seed: 3, states: 4, actions: 2 };
            if adaptive {
                cfg.train.epsilon_mode = EpsilonMode::Adaptive;
            }
            let text = cfg.to_string();
            let parsed = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(&parsed, &cfg);
            prop_assert_eq!(parsed.to_string(), text);
        }
    }
}
