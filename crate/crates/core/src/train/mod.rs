//! Run configuration and the two training phases: skill pre-training of the
//! low level and task training of the high level over the frozen low level.

mod analysis;
mod models;
mod pretrain;
mod tasktrain;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::activity::{ActivityConfig, Preset};
use crate::env::{LocomotorConfig, TaskSpec};
use crate::hrl::HrlConfig;
use crate::replay::{HighRecord, LowTransition};
use crate::sac::{SacConfig, SacLosses};
use crate::skill::SkillError;
use crate::tensor::TensorError;

pub use analysis::{collect_motor_samples, export_skills, gradcheck_suite, SkillRow, SkillSource};
pub use models::{HighLevel, LowLevel};
pub use pretrain::{pretrain, PretrainOutcome};
pub use tasktrain::{baseline, evaluate_hierarchy, tasktrain, BaselineOutcome, TasktrainOutcome};

/// Evaluation episodes reset with `EVAL_SEED + j`, independent of the run
/// seed, so that runs are scored on the same episodes.
pub const EVAL_SEED: u64 = 0x0e7a_1000_0000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("checkpoint does not match the configuration: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Skill(#[from] SkillError),
}

fn bad(key: &str, message: impl Into<String>) -> TrainError {
    TrainError::Config { key: key.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Hidden widths of every policy, critic and discriminator.
    pub hidden: Vec<usize>,
    /// Twin critics with a min target; `false` keeps a single critic.
    pub twin: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 256], twin: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkillConfig {
    /// Number of discrete skills `C`.
    pub count: usize,
    /// Latent skill dimension `d`.
    pub dim: usize,
    pub sigma_z: f64,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self { count: 10, dim: 7, sigma_z: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivitySection {
    pub preset: Preset,
    /// Required with the `custom` preset, ignored otherwise.
    pub b_glu: Option<f64>,
}

impl Default for ActivitySection {
    fn default() -> Self {
        Self { preset: Preset::Normal, b_glu: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub total_samples: u64,
    pub warmup_samples: u64,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub parallel_envs: usize,
    pub samples_per_update: u64,
    pub updates_per_cycle: usize,
    /// Weight of the skill reward in the fusion reward.
    pub beta: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_discriminator: f64,
    pub lr_alpha: f64,
    pub lr_encoder: f64,
    pub alpha_init: f64,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    pub gamma: f64,
    pub tau: f64,
    /// Zero disables periodic evaluation.
    pub eval_interval: u64,
    pub eval_episodes: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            total_samples: 20_000_000,
            warmup_samples: 10_000,
            batch_size: 256,
            buffer_size: 3_000_000,
            parallel_envs: 10,
            samples_per_update: 500,
            updates_per_cycle: 50,
            beta: 0.5,
            lr_policy: 3e-4,
            lr_critic: 3e-4,
            lr_discriminator: 3e-4,
            lr_alpha: 1e-4,
            lr_encoder: 1e-5,
            alpha_init: 0.1,
            target_entropy: None,
            gamma: 0.99,
            tau: 0.01,
            eval_interval: 50_000,
            eval_episodes: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TasktrainConfig {
    pub total_samples: u64,
    pub warmup_samples: u64,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub parallel_envs: usize,
    pub samples_per_update: u64,
    pub updates_per_cycle: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub alpha_init: f64,
    /// Defaults to minus the skill dimension.
    pub target_entropy: Option<f64>,
    pub tau: f64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Act with the low-level mean instead of sampling during collection.
    pub low_deterministic: bool,
}

impl Default for TasktrainConfig {
    fn default() -> Self {
        Self {
            total_samples: 10_000_000,
            warmup_samples: 1_000,
            batch_size: 256,
            buffer_size: 1_000_000,
            parallel_envs: 10,
            samples_per_update: 500,
            updates_per_cycle: 50,
            lr_policy: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 1e-4,
            alpha_init: 0.1,
            target_entropy: None,
            tau: 0.005,
            eval_interval: 50_000,
            eval_episodes: 50,
            low_deterministic: false,
        }
    }
}

/// Every tunable of a run. Defaults are the full-scale hyper-parameters; the
/// basic environment's horizon is `body.horizon`, the task's is
/// `task.horizon`, and the high-level discount is `hrl.gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub skill: SkillConfig,
    pub activity: ActivitySection,
    pub body: LocomotorConfig,
    pub pretrain: PretrainConfig,
    pub tasktrain: TasktrainConfig,
    pub hrl: HrlConfig,
    pub task: TaskSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            network: NetworkConfig::default(),
            skill: SkillConfig::default(),
            activity: ActivitySection::default(),
            body: LocomotorConfig::default(),
            pretrain: PretrainConfig::default(),
            tasktrain: TasktrainConfig::default(),
            hrl: HrlConfig::default(),
            task: TaskSpec::default(),
        }
    }
}

fn positive(key: &str, x: f64) -> Result<(), TrainError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(bad(key, alloc::format!("must be positive, got {x}")))
    }
}

fn unit(key: &str, x: f64) -> Result<(), TrainError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(bad(key, alloc::format!("must lie in [0, 1], got {x}")))
    }
}

fn at_least(key: &str, x: u64, min: u64) -> Result<(), TrainError> {
    if x >= min {
        Ok(())
    } else {
        Err(bad(key, alloc::format!("must be at least {min}, got {x}")))
    }
}

impl RunConfig {
    /// Checks every key; the error names the first offending one.
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(bad("network.hidden", "needs at least one layer, all widths positive"));
        }
        at_least("skill.count", self.skill.count as u64, 1)?;
        at_least("skill.dim", self.skill.dim as u64, 1)?;
        if !(self.skill.sigma_z >= 0.0 && self.skill.sigma_z.is_finite()) {
            return Err(bad("skill.sigma_z", "must be a non-negative number"));
        }
        match (self.activity.preset, self.activity.b_glu) {
            (Preset::Custom, None) => return Err(bad("activity.b_glu", "required by the custom preset")),
            (_, Some(b)) if !(b >= 0.0 && b.is_finite()) => return Err(bad("activity.b_glu", "must be a non-negative number")),
            _ => {}
        }
        at_least("body.joints", self.body.joints as u64, 2)?;
        at_least("body.horizon", self.body.horizon as u64, 1)?;
        positive("body.fall_tilt", self.body.fall_tilt as f64)?;
        unit("body.joint_lag", self.body.joint_lag as f64)?;
        unit("body.drag", self.body.drag as f64)?;
        unit("body.tilt_rate", self.body.tilt_rate as f64)?;

        let p = &self.pretrain;
        at_least("pretrain.batch_size", p.batch_size as u64, 2)?;
        at_least("pretrain.buffer_size", p.buffer_size as u64, 1)?;
        at_least("pretrain.parallel_envs", p.parallel_envs as u64, 1)?;
        at_least("pretrain.samples_per_update", p.samples_per_update, 1)?;
        unit("pretrain.beta", p.beta)?;
        positive("pretrain.lr_policy", p.lr_policy)?;
        positive("pretrain.lr_critic", p.lr_critic)?;
        positive("pretrain.lr_discriminator", p.lr_discriminator)?;
        positive("pretrain.lr_alpha", p.lr_alpha)?;
        positive("pretrain.lr_encoder", p.lr_encoder)?;
        positive("pretrain.alpha_init", p.alpha_init)?;
        unit("pretrain.gamma", p.gamma)?;
        unit("pretrain.tau", p.tau)?;
        if p.eval_interval > 0 {
            at_least("pretrain.eval_episodes", p.eval_episodes as u64, 1)?;
        }

        let t = &self.tasktrain;
        at_least("tasktrain.batch_size", t.batch_size as u64, 2)?;
        at_least("tasktrain.buffer_size", t.buffer_size as u64, 1)?;
        at_least("tasktrain.parallel_envs", t.parallel_envs as u64, 1)?;
        at_least("tasktrain.samples_per_update", t.samples_per_update, 1)?;
        positive("tasktrain.lr_policy", t.lr_policy)?;
        positive("tasktrain.lr_critic", t.lr_critic)?;
        positive("tasktrain.lr_alpha", t.lr_alpha)?;
        positive("tasktrain.alpha_init", t.alpha_init)?;
        unit("tasktrain.tau", t.tau)?;
        if t.eval_interval > 0 {
            at_least("tasktrain.eval_episodes", t.eval_episodes as u64, 1)?;
        }

        at_least("hrl.k", self.hrl.k as u64, 1)?;
        unit("hrl.gamma", self.hrl.gamma)?;
        at_least("task.horizon", self.task.horizon as u64, 1)?;
        if !(self.task.spacing_min > 0.0 && self.task.spacing_min <= self.task.spacing_max) {
            return Err(bad("task.spacing_min", "must be positive and not above task.spacing_max"));
        }
        if !(self.task.goal_min > 0.0 && self.task.goal_min <= self.task.goal_max) {
            return Err(bad("task.goal_min", "must be positive and not above task.goal_max"));
        }
        Ok(())
    }

    pub fn activity_config(&self) -> ActivityConfig {
        match self.activity.preset {
            Preset::Custom => ActivityConfig::custom(self.activity.b_glu.unwrap_or(0.0), self.skill.count),
            p => ActivityConfig::preset(p, self.skill.count),
        }
    }

    pub fn proprio_dim(&self) -> usize {
        self.body.joints + 2
    }

    pub fn low_sac(&self) -> SacConfig {
        let p = &self.pretrain;
        SacConfig {
            hidden: self.network.hidden.clone(),
            lr_actor: p.lr_policy,
            lr_critic: p.lr_critic,
            lr_alpha: p.lr_alpha,
            alpha_init: p.alpha_init,
            target_entropy: p.target_entropy,
            tau: p.tau,
            twin: self.network.twin,
        }
    }

    pub fn high_sac(&self) -> SacConfig {
        let t = &self.tasktrain;
        SacConfig {
            hidden: self.network.hidden.clone(),
            lr_actor: t.lr_policy,
            lr_critic: t.lr_critic,
            lr_alpha: t.lr_alpha,
            alpha_init: t.alpha_init,
            target_entropy: t.target_entropy,
            tau: t.tau,
            twin: self.network.twin,
        }
    }
}

/// `R_a = beta * r_f + (1 - beta) * h * r_e`, with `r_f` the skill reward.
pub fn fusion_reward(r_f: f64, r_e: f64, h: f64, beta: f64) -> f64 {
    beta * r_f + (1.0 - beta) * h * r_e
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: String,
    pub sample_count: u64,
    pub episode_count: u64,
    pub update_count: u64,
    /// Mean episode return of the episodes finished since the last record:
    /// fusion return in pre-training, task score otherwise.
    pub mean_return: Option<f64>,
    /// Mean return of deterministic evaluation episodes.
    pub eval_score: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub temperature_loss: Option<f64>,
    pub discriminator_loss: Option<f64>,
    pub sd_loss: Option<f64>,
    pub alpha: f64,
    pub wall_clock: f64,
}

/// End-of-episode summary from a training rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    /// Samples collected when the episode ended.
    pub sample_count: u64,
    /// Discrete skill, pre-training only.
    pub skill: Option<usize>,
    /// `h(z)` used for the episode, pre-training only.
    pub h: Option<f64>,
    pub length: usize,
    /// Sum of the training reward (fusion reward or task reward).
    pub reward: f64,
    /// Sum of the motor reward, pre-training only.
    pub motor_return: Option<f64>,
    pub terminal: bool,
}

/// Observes a run as it progresses.
pub trait Monitor {
    /// Seconds since the run started; deterministic runs keep the default.
    fn elapsed(&self) -> f64 {
        0.0
    }
    fn metrics(&mut self, _record: &MetricsRecord) {}
    fn episode(&mut self, _summary: &EpisodeSummary) {}
    fn low_transition(&mut self, _t: &LowTransition) {}
    fn high_record(&mut self, _r: &HighRecord) {}
}

pub struct NoMonitor;

impl Monitor for NoMonitor {}

#[derive(Debug, Default, Clone, Copy)]
struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let m = if self.n > 0 { Some(self.sum / self.n as f64) } else { None };
        *self = Mean::default();
        m
    }
}

/// Running means of everything logged between two records.
#[derive(Debug, Default, Clone)]
struct Accum {
    returns: Mean,
    critic: Mean,
    actor: Mean,
    temperature: Mean,
    discriminator: Mean,
    sd: Mean,
}

impl Accum {
    fn sac(&mut self, l: &SacLosses) {
        self.critic.add(l.critic);
        self.actor.add(l.actor);
        self.temperature.add(l.temperature);
    }

    #[allow(clippy::too_many_arguments)]
    fn record(&mut self, phase: &str, samples: u64, episodes: u64, updates: u64, eval: Option<f64>, alpha: f64, wall: f64) -> MetricsRecord {
        MetricsRecord {
            phase: phase.to_string(),
            sample_count: samples,
            episode_count: episodes,
            update_count: updates,
            mean_return: self.returns.take(),
            eval_score: eval,
            critic_loss: self.critic.take(),
            actor_loss: self.actor.take(),
            temperature_loss: self.temperature.take(),
            discriminator_loss: self.discriminator.take(),
            sd_loss: self.sd.take(),
            alpha,
            wall_clock: wall,
        }
    }
}

/// Sample counts at which update cycles and evaluations fall due.
#[derive(Debug, Clone, Copy)]
struct Schedule {
    next_cycle: u64,
    every: u64,
    next_eval: u64,
    eval_every: u64,
}

impl Schedule {
    fn new(warmup: u64, every: u64, eval_every: u64) -> Self {
        // First cycle at the first multiple of `every` not below the warmup.
        let next_cycle = warmup.div_ceil(every).max(1) * every;
        Self { next_cycle, every, next_eval: eval_every, eval_every }
    }

    /// Number of cycles due after `samples` samples.
    fn cycles(&mut self, samples: u64) -> u64 {
        let mut n = 0;
        while samples >= self.next_cycle {
            n += 1;
            self.next_cycle += self.every;
        }
        n
    }

    fn eval_due(&mut self, samples: u64) -> bool {
        if self.eval_every == 0 || samples < self.next_eval {
            return false;
        }
        while self.next_eval <= samples {
            self.next_eval += self.eval_every;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn defaults_match_the_tables() {
        let c = RunConfig::default();
        assert_eq!((c.pretrain.total_samples, c.pretrain.warmup_samples, c.pretrain.batch_size), (20_000_000, 10_000, 256));
        assert_eq!((c.pretrain.buffer_size, c.body.horizon, c.pretrain.parallel_envs), (3_000_000, 100, 10));
        assert_eq!((c.pretrain.samples_per_update, c.pretrain.updates_per_cycle), (500, 50));
        assert_eq!((c.skill.count, c.skill.dim, c.skill.sigma_z), (10, 7, 0.3));
        assert_eq!((c.pretrain.beta, c.activity_config().b_glu), (0.5, 1.0));
        assert_eq!((c.pretrain.lr_policy, c.pretrain.lr_critic, c.pretrain.lr_discriminator), (3e-4, 3e-4, 3e-4));
        assert_eq!((c.pretrain.lr_alpha, c.pretrain.lr_encoder, c.pretrain.alpha_init), (1e-4, 1e-5, 0.1));
        assert_eq!((c.pretrain.gamma, c.pretrain.tau), (0.99, 0.01));
        assert_eq!((c.body.weights.w_v, c.body.weights.w_f, c.body.weights.w_c), (1.0, 0.0, 0.1));

        assert_eq!((c.tasktrain.total_samples, c.tasktrain.warmup_samples, c.tasktrain.batch_size), (10_000_000, 1_000, 256));
        assert_eq!((c.tasktrain.buffer_size, c.task.horizon, c.tasktrain.parallel_envs), (1_000_000, 1000, 10));
        assert_eq!((c.tasktrain.samples_per_update, c.tasktrain.updates_per_cycle), (500, 50));
        assert_eq!((c.tasktrain.lr_policy, c.tasktrain.lr_critic, c.tasktrain.lr_alpha), (3e-4, 3e-4, 1e-4));
        assert_eq!((c.tasktrain.alpha_init, c.tasktrain.tau, c.hrl.gamma, c.hrl.k), (0.1, 0.005, 0.99, 3));
        assert_eq!(c.high_sac().target_entropy.unwrap_or(-(c.skill.dim as f64)), -7.0);
        assert_eq!((c.pretrain.eval_interval, c.pretrain.eval_episodes), (50_000, 50));
        c.validate().unwrap();
    }

    #[test]
    fn validation_names_the_key() {
        let mut c = RunConfig::default();
        c.pretrain.beta = 1.5;
        match c.validate() {
            Err(TrainError::Config { key, .. }) => assert_eq!(key, "pretrain.beta"),
            other => panic!("{other:?}"),
        }
        let mut c = RunConfig::default();
        c.activity.preset = Preset::Custom;
        assert!(matches!(c.validate(), Err(TrainError::Config { key, .. }) if key == "activity.b_glu"));
    }

    #[test]
    fn fusion_hand_values() {
        assert_eq!(fusion_reward(1.7, -3.0, 0.4, 1.0), 1.7);
        assert_eq!(fusion_reward(1.7, -3.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(fusion_reward(2.3026, 0.95, 1.0, 0.5), 1.6263, epsilon = 1e-12);
    }

    #[test]
    fn schedule_counts_cycles_after_warmup() {
        let mut s = Schedule::new(10_000, 500, 50_000);
        assert_eq!(s.cycles(9_990), 0);
        assert_eq!(s.cycles(10_000), 1);
        assert_eq!(s.cycles(10_490), 0);
        assert_eq!(s.cycles(11_500), 3);
        assert!(!s.eval_due(49_999));
        assert!(s.eval_due(50_005));
        assert!(!s.eval_due(50_010));
        let mut s = Schedule::new(0, 500, 0);
        assert_eq!(s.cycles(499), 0);
        assert_eq!(s.cycles(500), 1);
        assert!(!s.eval_due(1_000_000));
    }
}
