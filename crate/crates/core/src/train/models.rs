use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{RunConfig, TrainError};
use crate::discriminator::{Discriminator, FeatureMap};
use crate::sac::SacAgent;
use crate::skill::SkillEncoder;
use crate::tensor::{Persist, Tensor};

type Group<'a> = (&'static str, Vec<(String, &'a Tensor<f32>)>);
type GroupMut<'a> = (&'static str, Vec<(String, &'a mut Tensor<f32>)>);

/// The pre-trained level: skill-conditioned SAC agent on `(s, z^c)`, the
/// skill encoder and the discriminator.
#[derive(Debug, Clone)]
pub struct LowLevel {
    pub agent: SacAgent<f32>,
    pub encoder: SkillEncoder<f32>,
    pub discriminator: Discriminator<f32>,
}

impl LowLevel {
    pub fn new<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Result<Self, TrainError> {
        let (p, a, s) = (cfg.proprio_dim(), cfg.body.joints, &cfg.skill);
        let agent = SacAgent::new(p + s.dim, a, 0, &cfg.low_sac(), rng)?;
        let encoder = SkillEncoder::new(s.count, s.dim, s.sigma_z as f32, rng);
        let discriminator = Discriminator::new(p, FeatureMap::Identity, &cfg.network.hidden, s.count, rng);
        Ok(Self { agent, encoder, discriminator })
    }

    /// Checkpoint groups by name.
    pub fn groups(&self) -> Vec<Group<'_>> {
        alloc::vec![
            ("low_policy", self.agent.policy.tensors()),
            ("low_critic", self.agent.critic.tensors()),
            ("temperature", self.agent.temperature.tensors()),
            ("z_encoder", self.encoder.tensors()),
            ("discriminator", self.discriminator.tensors()),
        ]
    }

    pub fn groups_mut(&mut self) -> Vec<GroupMut<'_>> {
        alloc::vec![
            ("low_policy", self.agent.policy.tensors_mut()),
            ("low_critic", self.agent.critic.tensors_mut()),
            ("temperature", self.agent.temperature.tensors_mut()),
            ("z_encoder", self.encoder.tensors_mut()),
            ("discriminator", self.discriminator.tensors_mut()),
        ]
    }
}

/// The task-trained level: SAC agent on `s+` emitting continuous skills,
/// with a step-conditioned critic.
#[derive(Debug, Clone)]
pub struct HighLevel {
    pub agent: SacAgent<f32>,
}

impl HighLevel {
    pub fn new<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Result<Self, TrainError> {
        let obs = cfg.proprio_dim() + cfg.task.kind.external_dim();
        let mut sac = cfg.high_sac();
        sac.target_entropy = Some(sac.target_entropy.unwrap_or(-(cfg.skill.dim as f64)));
        Ok(Self { agent: SacAgent::new(obs, cfg.skill.dim, cfg.hrl.k, &sac, rng)? })
    }

    pub fn groups(&self) -> Vec<Group<'_>> {
        alloc::vec![
            ("high_policy", self.agent.policy.tensors()),
            ("high_critic", self.agent.critic.tensors()),
            ("temperature", self.agent.temperature.tensors()),
        ]
    }

    pub fn groups_mut(&mut self) -> Vec<GroupMut<'_>> {
        alloc::vec![
            ("high_policy", self.agent.policy.tensors_mut()),
            ("high_critic", self.agent.critic.tensors_mut()),
            ("temperature", self.agent.temperature.tensors_mut()),
        ]
    }
}
