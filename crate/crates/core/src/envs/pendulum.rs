use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, EnvSpec, Environment, Step};
use crate::error::Result;
use crate::policy::Action;

const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
const DT: f64 = 0.05;
const G: f64 = 10.0;
const M: f64 = 1.0;
const L: f64 = 1.0;

/// Pendulum swing-up. Angle 0 is upright. Observation `[cos θ, sin θ, θ̇]`,
/// reward `−(θ² + 0.1·θ̇² + 0.001·u²)`, torque in `[−2, 2]`, horizon 200.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    /// Initial angle is drawn from `[-init_angle, init_angle]`.
    pub init_angle: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                obs_dim: 3,
                action_space: ActionSpace::Box { low: vec![-MAX_TORQUE], high: vec![MAX_TORQUE] },
                max_steps: 200,
                reward: "-(theta^2 + 0.1 theta_dot^2 + 0.001 u^2)",
            },
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
            init_angle: PI,
        }
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = rng.random_range(-self.init_angle..=self.init_angle);
        self.theta_dot = rng.random_range(-1.0..=1.0);
        self.steps = 0;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        self.spec.action_space.validate(action)?;
        let u = match action {
            Action::Continuous(v) => v[0],
            Action::Discrete(_) => unreachable!("validated"),
        };
        let th = angle_normalize(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let new_dot = (self.theta_dot + (3.0 * G / (2.0 * L) * self.theta.sin() + 3.0 / (M * L * L) * u) * DT)
            .clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += new_dot * DT;
        self.theta_dot = new_dot;
        self.steps += 1;
        Ok(Step {
            observation: self.observation(),
            reward,
            terminated: false,
            truncated: self.steps >= self.spec.max_steps,
        })
    }
}
