//! Deterministic toy locomotion environments.
//!
//! [`Locomotor`] is the basic environment: proprioception only, with the
//! ingredients of the motor reward. [`TaskEnv`] wraps it with obstacles,
//! goals or speed targets, an external observation and sparse rewards in
//! `{-1, 0, +1}`.

mod locomotor;
mod task;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use locomotor::{Locomotor, LocomotorConfig};
pub use task::{TaskEnv, TaskKind, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvObservation {
    /// Proprioceptive state `s`.
    pub proprio: Vec<f32>,
    /// External state `s^e`; empty in the basic environment.
    pub external: Vec<f32>,
    /// Forward velocity in length units per step.
    pub forward_velocity: f32,
    /// Sum of squared components of the last (clamped) control.
    pub control_sq: f32,
    pub fallen: bool,
}

impl EnvObservation {
    /// `s+ = (s, s^e)`.
    pub fn combined(&self) -> Vec<f32> {
        let mut v = self.proprio.clone();
        v.extend_from_slice(&self.external);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: EnvObservation,
    /// Motor reward in the basic environment, task reward in task
    /// environments.
    pub reward: f64,
    /// Episode over, for any reason.
    pub done: bool,
    /// Episode over because of a fall or task failure (not the time limit).
    pub terminal: bool,
}

impl Step {
    pub fn truncated(&self) -> bool {
        self.done && !self.terminal
    }
}

pub trait Environment {
    fn proprio_dim(&self) -> usize;
    fn external_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&mut self, seed: u64) -> EnvObservation;
    /// Out-of-range actions are clamped and counted, never rejected.
    fn step(&mut self, action: &[f32]) -> Step;

    fn obs_dim(&self) -> usize {
        self.proprio_dim() + self.external_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorRewardWeights {
    pub w_v: f64,
    pub w_c: f64,
    pub w_f: f64,
}

impl MotorRewardWeights {
    pub const CHEETAH: Self = Self { w_v: 0.5, w_c: 0.1, w_f: 0.0 };
    pub const WALKER: Self = Self { w_v: 1.0, w_c: 0.1, w_f: 0.0 };
    pub const QUADRUPED: Self = Self { w_v: 2.0, w_c: 0.1, w_f: 0.1 };
    pub const HUMANOID: Self = Self { w_v: 2.0, w_c: 0.1, w_f: 0.1 };
}

impl Default for MotorRewardWeights {
    fn default() -> Self {
        Self::WALKER
    }
}

/// `R_e = w_v * v_x - w_c * |u|^2 + w_f * [not fallen]`.
pub fn motor_reward(obs: &EnvObservation, w: &MotorRewardWeights) -> f64 {
    let upright = if obs.fallen { 0.0 } else { 1.0 };
    w.w_v * obs.forward_velocity as f64 - w.w_c * obs.control_sq as f64 + w.w_f * upright
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn obs(v: f32, u: f32, fallen: bool) -> EnvObservation {
        EnvObservation { proprio: vec![], external: vec![], forward_velocity: v, control_sq: u, fallen }
    }

    #[test]
    fn motor_reward_hand_values() {
        assert_abs_diff_eq!(motor_reward(&obs(1.0, 0.5, false), &MotorRewardWeights::WALKER), 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(motor_reward(&obs(0.0, 0.0, false), &MotorRewardWeights::QUADRUPED), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(motor_reward(&obs(0.5, 0.25, true), &MotorRewardWeights::QUADRUPED), 1.0 - 0.025, epsilon = 1e-12);
    }
}
