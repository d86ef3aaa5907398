use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{motor_reward, EnvObservation, Environment, MotorRewardWeights, Step};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocomotorConfig {
    /// Number of actuated joints, at least 2.
    pub joints: usize,
    pub horizon: usize,
    /// `|tilt|` above this is a fall.
    pub fall_tilt: f32,
    /// Half-width of the uniform perturbation applied at reset.
    pub init_noise: f32,
    /// Fraction of the gap to the commanded joint position closed per step.
    pub joint_lag: f32,
    /// Velocity relaxation rate toward the gait thrust (linear drag).
    pub drag: f32,
    /// Tilt relaxation rate toward the gait torque.
    pub tilt_rate: f32,
    pub weights: MotorRewardWeights,
}

impl Default for LocomotorConfig {
    fn default() -> Self {
        Self {
            joints: 3,
            horizon: 100,
            fall_tilt: 0.6,
            init_noise: 0.01,
            joint_lag: 0.5,
            drag: 0.2,
            tilt_rate: 0.1,
            weights: MotorRewardWeights::WALKER,
        }
    }
}

/// Planar body with position, velocity, tilt and `J` joints.
///
/// Per step: joints move toward the clamped command, the first `J-1` joints
/// produce thrust (their mean), tilt is driven by `0.8 * thrust - 0.6 *
/// q[J-1]`, velocity relaxes toward thrust, and position integrates velocity.
/// The proprioceptive vector is `[v, tilt, q...]`.
#[derive(Debug, Clone)]
pub struct Locomotor {
    cfg: LocomotorConfig,
    x: f32,
    v: f32,
    tilt: f32,
    q: Vec<f32>,
    t: usize,
    last_u_sq: f32,
    fallen: bool,
    clamp_warnings: u64,
}

impl Locomotor {
    pub fn new(cfg: LocomotorConfig) -> Self {
        assert!(cfg.joints >= 2, "the locomotor needs at least two joints");
        let q = vec![0.0; cfg.joints];
        Self { cfg, x: 0.0, v: 0.0, tilt: 0.0, q, t: 0, last_u_sq: 0.0, fallen: false, clamp_warnings: 0 }
    }

    pub fn config(&self) -> &LocomotorConfig {
        &self.cfg
    }

    pub fn position(&self) -> f32 {
        self.x
    }

    pub fn velocity(&self) -> f32 {
        self.v
    }

    pub fn tilt(&self) -> f32 {
        self.tilt
    }

    pub fn joints(&self) -> &[f32] {
        &self.q
    }

    /// Body height, raised by spreading the first two joints.
    pub fn height(&self) -> f32 {
        1.0 + 0.3 * (self.q[0] - self.q[1])
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    /// Number of action components clamped so far.
    pub fn clamp_warnings(&self) -> u64 {
        self.clamp_warnings
    }

    pub(crate) fn set_horizon(&mut self, horizon: usize) {
        self.cfg.horizon = horizon;
    }

    pub(crate) fn mark_fallen(&mut self) {
        self.fallen = true;
    }

    pub fn observation(&self) -> EnvObservation {
        let mut proprio = Vec::with_capacity(self.cfg.joints + 2);
        proprio.push(self.v);
        proprio.push(self.tilt);
        proprio.extend_from_slice(&self.q);
        EnvObservation { proprio, external: Vec::new(), forward_velocity: self.v, control_sq: self.last_u_sq, fallen: self.fallen }
    }

    /// Advances the body without computing a reward.
    pub(crate) fn advance(&mut self, action: &[f32]) -> EnvObservation {
        assert_eq!(action.len(), self.cfg.joints, "action width");
        let j = self.cfg.joints;
        let mut u_sq = 0.0;
        for (q, &a) in self.q.iter_mut().zip(action) {
            let a = if a.is_nan() { 0.0 } else { a };
            let c = a.clamp(-1.0, 1.0);
            if c != a {
                self.clamp_warnings += 1;
            }
            u_sq += c * c;
            *q += self.cfg.joint_lag * (c - *q);
        }
        let thrust = self.q[..j - 1].iter().sum::<f32>() / (j - 1) as f32;
        let torque = 0.8 * thrust - 0.6 * self.q[j - 1];
        self.v += self.cfg.drag * (thrust - self.v);
        self.tilt += self.cfg.tilt_rate * (torque - self.tilt);
        self.x += self.v;
        self.t += 1;
        self.last_u_sq = u_sq;
        self.fallen = self.tilt.abs() > self.cfg.fall_tilt;
        self.observation()
    }
}

impl Environment for Locomotor {
    fn proprio_dim(&self) -> usize {
        self.cfg.joints + 2
    }

    fn external_dim(&self) -> usize {
        0
    }

    fn action_dim(&self) -> usize {
        self.cfg.joints
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64) -> EnvObservation {
        let mut rng = crate::Rng::seed_from_u64(seed);
        let n = self.cfg.init_noise;
        let mut jitter = || if n > 0.0 { rng.random_range(-n..=n) } else { 0.0 };
        self.x = 0.0;
        self.v = 0.0;
        self.tilt = jitter();
        for q in self.q.iter_mut() {
            *q = jitter();
        }
        self.t = 0;
        self.last_u_sq = 0.0;
        self.fallen = false;
        self.observation()
    }

    fn step(&mut self, action: &[f32]) -> Step {
        let obs = self.advance(action);
        let reward = motor_reward(&obs, &self.cfg.weights);
        let terminal = obs.fallen;
        let done = terminal || self.t >= self.cfg.horizon;
        Step { obs, reward, done, terminal }
    }
}
