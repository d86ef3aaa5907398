use alloc::vec::Vec;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{LowLevel, RunConfig, TrainError};
use crate::activity::MotorSample;
use crate::discriminator::{Discriminator, FeatureMap};
use crate::env::{Environment, Locomotor};
use crate::sac::{GaussianPolicy, TwinCritic};
use crate::sampling::normals;
use crate::skill::{sample_random_skill, DiscreteSkill, SkillEncoder};
use crate::tensor::{finite_diff_check, TensorError};

/// One deterministic episode of the low-level policy under a fixed skill;
/// calls `each(step, state, r_e)` for every step.
fn rollout(low: &LowLevel, env: &mut Locomotor, skill: &[f32], seed: u64, mut each: impl FnMut(usize, &[f32], f64)) -> Result<(), TrainError> {
    let mut noop = crate::Rng::seed_from_u64(0);
    let mut s = env.reset(seed).proprio;
    let mut t = 0;
    loop {
        let mut x = s.clone();
        x.extend_from_slice(skill);
        let (a, _) = low.agent.policy.sample_action(&x, &mut noop, true)?;
        let step = env.step(&a);
        each(t, &s, step.reward);
        t += 1;
        if step.done {
            return Ok(());
        }
        s = step.obs.proprio;
    }
}

/// Motor rewards of one policy under `skills` sampled continuous skills:
/// skill `j` uses discrete index `j mod C` and a draw around its embedding.
/// Re-weighting the result per preset compares activity functions on one
/// shared reward stream.
pub fn collect_motor_samples(low: &LowLevel, cfg: &RunConfig, skills: usize, seed: u64) -> Result<Vec<MotorSample>, TrainError> {
    let mut rng = crate::Rng::seed_from_u64(seed);
    let mut env = Locomotor::new(cfg.body.clone());
    let c = low.encoder.count();
    let mut out = Vec::new();
    for j in 0..skills {
        let z = DiscreteSkill::new(j % c, c)?;
        let zc = low.encoder.sample_skill(z, &mut rng)?.squashed;
        rollout(low, &mut env, &zc, seed.wrapping_add(j as u64), |step, _, r_e| out.push(MotorSample { skill_index: z.index(), step, r_e }))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillSource {
    /// `tanh(E(z))` of a discrete skill.
    Encoder,
    /// Uniform on `(-1, 1)^d`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRow {
    pub source: SkillSource,
    pub episode: usize,
    pub skill_index: Option<usize>,
    pub step: usize,
    pub skill: Vec<f32>,
    pub state: Vec<f32>,
    pub r_e: f64,
}

/// Rollouts under encoder skills (`episodes` of them, cycling through the
/// discrete skills) and under as many uniformly random skills.
pub fn export_skills(low: &LowLevel, cfg: &RunConfig, episodes: usize, seed: u64) -> Result<Vec<SkillRow>, TrainError> {
    let mut rng = crate::Rng::seed_from_u64(seed);
    let mut env = Locomotor::new(cfg.body.clone());
    let c = low.encoder.count();
    let mut rows = Vec::new();
    for source in [SkillSource::Encoder, SkillSource::Random] {
        for ep in 0..episodes {
            let (index, skill) = match source {
                SkillSource::Encoder => {
                    let z = DiscreteSkill::new(ep % c, c)?;
                    (Some(z.index()), low.encoder.mean_skill(z)?.squashed)
                }
                SkillSource::Random => (None, sample_random_skill(low.encoder.dim(), &mut rng).squashed),
            };
            rollout(low, &mut env, &skill, seed.wrapping_add(ep as u64), |step, s, r_e| {
                rows.push(SkillRow { source, episode: ep, skill_index: index, step, skill: skill.clone(), state: s.to_vec(), r_e })
            })?;
        }
    }
    Ok(rows)
}

/// Largest relative gradient error of every network family, in `f64`, at
/// finite-difference step `epsilon`.
pub fn gradcheck_suite(seed: u64, epsilon: f64) -> Result<Vec<(&'static str, f64)>, TrainError> {
    let mut rng = crate::Rng::seed_from_u64(seed);
    let (rows, obs, act, hidden) = (4, 5, 3, [8, 8]);
    let x: Vec<f64> = normals(&mut rng, rows * obs);
    let mut out = Vec::new();

    let mut policy = GaussianPolicy::<f64>::new(obs, act, &hidden, &mut rng);
    let eps: Vec<f64> = normals(&mut rng, rows * act);
    let err = finite_diff_check(
        &mut policy,
        |p, tape| {
            let o = tape.constant(rows, obs, x.clone());
            let (a, lp) = p.rsample_var(tape, o, &eps, true)?;
            let sa = tape.sum(a);
            let slp = tape.mean(lp);
            Ok(tape.add(sa, slp))
        },
        epsilon,
    )?;
    out.push(("policy", err));

    let mut critic = TwinCritic::<f64>::new(obs + act, &hidden, true, &mut rng);
    let xa: Vec<f64> = normals(&mut rng, rows * (obs + act));
    let err = finite_diff_check(
        &mut critic,
        |c, tape| {
            let i = tape.constant(rows, obs + act, xa.clone());
            let (q1, q2) = c.forward(tape, i, true)?;
            let q2 = q2.ok_or(TensorError::Contract("twin critic without a second head".into()))?;
            let sq = tape.square(q1);
            let a = tape.mean(sq);
            let b = tape.mean(q2);
            Ok(tape.add(a, b))
        },
        epsilon,
    )?;
    out.push(("twin_critic", err));

    let mut disc = Discriminator::<f64>::new(obs, FeatureMap::Identity, &hidden, 4, &mut rng);
    let labels = [0usize, 3, 1, 2];
    let err = finite_diff_check(&mut disc, |d, tape| d.ce_loss_var(tape, &x, &labels, true), epsilon)?;
    out.push(("discriminator", err));

    let mut enc = SkillEncoder::<f64>::new(5, 4, 0.3, &mut rng);
    let err = finite_diff_check(
        &mut enc,
        |e, tape| e.sd_loss_var(tape, true).map_err(|e| TensorError::Contract(alloc::format!("{e}"))),
        epsilon,
    )?;
    out.push(("encoder", err));
    Ok(out)
}
