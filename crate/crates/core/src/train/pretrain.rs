use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};

use super::{Accum, EpisodeSummary, LowLevel, MetricsRecord, Monitor, RunConfig, Schedule, TrainError, EVAL_SEED};
use crate::activity::{activity, ActivityConfig};
use crate::env::{Environment, Locomotor};
use crate::replay::{LowBuffer, LowTransition};
use crate::sac::{ActorInput, SacBatch};
use crate::sampling::open_unit;
use crate::skill::{DiscreteSkill, SkillEncoder, SQUASH_LIMIT};
use crate::tensor::{Adam, AdamConfig, Gradients, Module, Tape, TensorError, Var};

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub low: LowLevel,
    pub metrics: Vec<MetricsRecord>,
    pub episodes: Vec<EpisodeSummary>,
    pub samples: u64,
    pub discriminator_updates: u64,
    pub encoder_updates: u64,
    pub sac_updates: u64,
}

struct Slot {
    env: Locomotor,
    obs: Vec<f32>,
    z: DiscreteSkill,
    h: f64,
    t: usize,
    episode: u64,
    reward: f64,
    motor: f64,
}

/// Actor-step input `[s, tanh(E(z) + c)]`, where `c` is the collection noise
/// `atanh(z^c) - E(z)`: the value equals the stored skill while the policy
/// loss reaches the encoder.
struct EncoderInput<'a> {
    encoder: &'a mut SkillEncoder<f32>,
    adam: &'a mut Adam<f32>,
    states: Vec<f32>,
    labels: Vec<usize>,
    offsets: Vec<f32>,
}

impl ActorInput<f32> for EncoderInput<'_> {
    fn actor_obs(&mut self, tape: &mut Tape<f32>, batch: &SacBatch<f32>, obs_dim: usize) -> Result<Var, TensorError> {
        let d = self.encoder.dim();
        let n = batch.rows;
        let s = tape.constant(n, obs_dim - d, self.states.clone());
        let mu = self.encoder.encode_rows(tape, &self.labels, true).map_err(|e| TensorError::Contract(alloc::format!("{e}")))?;
        let c = tape.constant(n, d, self.offsets.clone());
        let raw = tape.add(mu, c);
        let zc = tape.tanh(raw);
        Ok(tape.concat_cols(&[s, zc]))
    }

    fn apply(&mut self, grads: &Gradients<f32>) -> Result<(), TensorError> {
        self.encoder.load_grads(grads);
        self.adam.step(&mut self.encoder.params_mut())
    }
}

struct Learner {
    opt_disc: Adam<f32>,
    opt_sd: Adam<f32>,
    opt_enc: Adam<f32>,
    disc_updates: u64,
    enc_updates: u64,
    sac_updates: u64,
}

impl Learner {
    /// `n` discriminator steps, then `n` encoder diversity steps, then `n`
    /// SAC steps, each on its own batch.
    fn cycle(&mut self, low: &mut LowLevel, buf: &LowBuffer, cfg: &RunConfig, rng: &mut crate::Rng, acc: &mut Accum) -> Result<(), TrainError> {
        let p = &cfg.pretrain;
        let (sp, d) = (cfg.proprio_dim(), cfg.skill.dim);
        for _ in 0..p.updates_per_cycle {
            let batch = buf.sample(p.batch_size, rng)?;
            let states: Vec<f32> = batch.iter().flat_map(|t| t.s_next.iter().copied()).collect();
            let labels: Vec<usize> = batch.iter().map(|t| t.z).collect();
            acc.discriminator.add(low.discriminator.update(&mut self.opt_disc, &states, &labels)? as f64);
            self.disc_updates += 1;
        }
        for _ in 0..p.updates_per_cycle {
            acc.sd.add(low.encoder.sd_step(&mut self.opt_sd)? as f64);
            self.enc_updates += 1;
        }
        let gamma = p.gamma as f32;
        for _ in 0..p.updates_per_cycle {
            let batch = buf.sample(p.batch_size, rng)?;
            let n = batch.len();
            let mut b = SacBatch { rows: n, ..Default::default() };
            let mut input = EncoderInput {
                encoder: &mut low.encoder,
                adam: &mut self.opt_enc,
                states: Vec::with_capacity(n * sp),
                labels: Vec::with_capacity(n),
                offsets: Vec::with_capacity(n * d),
            };
            for t in &batch {
                b.obs.extend_from_slice(&t.s);
                b.obs.extend_from_slice(&t.z_c);
                b.actions.extend_from_slice(&t.a);
                b.reward.push(t.r_a);
                b.discount.push(if t.done { 0.0 } else { gamma });
                b.next_obs.extend_from_slice(&t.s_next);
                b.next_obs.extend_from_slice(&t.z_c);
                input.states.extend_from_slice(&t.s);
                input.labels.push(t.z);
                let mu = input.encoder.table().data();
                for (k, &zc) in t.z_c.iter().enumerate() {
                    let raw = libm::atanhf(zc.clamp(-SQUASH_LIMIT as f32, SQUASH_LIMIT as f32));
                    input.offsets.push(raw - mu[t.z * d + k]);
                }
            }
            let l = low.agent.update_with(&b, rng, &mut input)?;
            acc.sac(&l);
            self.sac_updates += 1;
        }
        Ok(())
    }
}

fn start_episode(slot: &mut Slot, seed: u64, episode: u64, act: &ActivityConfig, count: usize, rng: &mut crate::Rng) {
    slot.obs = slot.env.reset(seed).proprio;
    slot.z = DiscreteSkill::sample(count, rng);
    slot.h = activity(act, slot.z);
    slot.t = 0;
    slot.episode = episode;
    slot.reward = 0.0;
    slot.motor = 0.0;
}

/// Deterministic rollouts cycling through the skills with their mean
/// continuous skill; returns the mean fusion return.
fn evaluate(low: &LowLevel, cfg: &RunConfig, act: &ActivityConfig) -> Result<f64, TrainError> {
    let mut env = Locomotor::new(cfg.body.clone());
    let mut noop = crate::Rng::seed_from_u64(0);
    let c = cfg.skill.count;
    let mut total = 0.0;
    for j in 0..cfg.pretrain.eval_episodes {
        let z = DiscreteSkill::new(j % c, c)?;
        let zc = low.encoder.mean_skill(z)?.squashed;
        let h = activity(act, z);
        let mut s = env.reset(EVAL_SEED + j as u64).proprio;
        loop {
            s.extend_from_slice(&zc);
            let (a, _) = low.agent.policy.sample_action(&s, &mut noop, true)?;
            let step = env.step(&a);
            let r_f = low.discriminator.intrinsic_reward(&step.obs.proprio, z)?;
            total += super::fusion_reward(r_f, step.reward, h, cfg.pretrain.beta);
            if step.done {
                break;
            }
            s = step.obs.proprio;
        }
    }
    Ok(total / cfg.pretrain.eval_episodes.max(1) as f64)
}

/// Skill pre-training of the low level.
///
/// Environments run in lock step; every episode draws a discrete skill and
/// its activity `h(z)`, and every step draws a fresh continuous skill around
/// the skill's embedding. The fusion reward is computed once, at collection,
/// and stored. Once the warmup samples (uniform random actions) are
/// collected, every `samples_per_update` samples trigger `n` discriminator,
/// `n` encoder and `n` SAC updates.
pub fn pretrain<M: Monitor + ?Sized>(cfg: &RunConfig, monitor: &mut M) -> Result<PretrainOutcome, TrainError> {
    cfg.validate()?;
    let p = &cfg.pretrain;
    let mut rng = crate::Rng::seed_from_u64(cfg.seed);
    let mut env_seeds = crate::Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_e0f5);
    let mut low = LowLevel::new(cfg, &mut rng)?;
    let act = cfg.activity_config();
    let (count, dim, a_dim, sp) = (cfg.skill.count, cfg.skill.dim, cfg.body.joints, cfg.proprio_dim());

    let mut learner = Learner {
        opt_disc: Adam::new(AdamConfig::with_lr(p.lr_discriminator)),
        opt_sd: Adam::new(AdamConfig::with_lr(p.lr_encoder)),
        opt_enc: Adam::new(AdamConfig::with_lr(p.lr_encoder)),
        disc_updates: 0,
        enc_updates: 0,
        sac_updates: 0,
    };
    let mut buf = LowBuffer::new(p.buffer_size);
    let mut schedule = Schedule::new(p.warmup_samples, p.samples_per_update, p.eval_interval);
    let mut acc = Accum::default();
    let mut metrics = Vec::new();
    let mut episodes = Vec::new();
    let mut samples = 0u64;
    let mut episode_count = 0u64;

    let mut slots: Vec<Slot> = (0..p.parallel_envs)
        .map(|_| Slot {
            env: Locomotor::new(cfg.body.clone()),
            obs: Vec::new(),
            z: DiscreteSkill::new(0, count).expect("count >= 1"),
            h: 0.0,
            t: 0,
            episode: 0,
            reward: 0.0,
            motor: 0.0,
        })
        .collect();
    if p.total_samples > 0 {
        for (i, slot) in slots.iter_mut().enumerate() {
            start_episode(slot, env_seeds.next_u64(), i as u64, &act, count, &mut rng);
        }
    }
    let mut next_episode = slots.len() as u64;

    while samples < p.total_samples {
        let m = ((p.total_samples - samples) as usize).min(slots.len());

        let mut inputs = Vec::with_capacity(m * (sp + dim));
        let mut skills = Vec::with_capacity(m);
        for slot in &slots[..m] {
            let zc = low.encoder.sample_skill(slot.z, &mut rng)?;
            inputs.extend_from_slice(&slot.obs);
            inputs.extend_from_slice(&zc.squashed);
            skills.push(zc.squashed);
        }
        let warm = samples < p.warmup_samples;
        let actions: Vec<f32> = if warm {
            (0..m * a_dim).map(|_| open_unit(&mut rng) as f32).collect()
        } else {
            low.agent.policy.sample(&inputs, m, &mut rng, false)?.actions
        };

        let mut steps = Vec::with_capacity(m);
        let mut next_states = Vec::with_capacity(m * sp);
        let mut labels = Vec::with_capacity(m);
        for (j, slot) in slots[..m].iter_mut().enumerate() {
            let step = slot.env.step(&actions[j * a_dim..(j + 1) * a_dim]);
            next_states.extend_from_slice(&step.obs.proprio);
            labels.push(slot.z.index());
            steps.push(step);
        }
        let r_f = low.discriminator.intrinsic_rewards(&next_states, &labels)?;

        for (j, (slot, step)) in slots[..m].iter_mut().zip(steps).enumerate() {
            // Round the ingredients first so the stored reward is exactly
            // reproducible from the stored ingredients.
            let (rf, re, h) = (r_f[j] as f32, step.reward as f32, slot.h as f32);
            let r_a = super::fusion_reward(rf as f64, re as f64, h as f64, p.beta) as f32;
            let t = LowTransition {
                s: core::mem::take(&mut slot.obs),
                s_next: step.obs.proprio.clone(),
                a: actions[j * a_dim..(j + 1) * a_dim].to_vec(),
                z: slot.z.index(),
                z_c: core::mem::take(&mut skills[j]),
                r_a,
                r_f: rf,
                r_e: re,
                h,
                done: step.terminal,
            };
            monitor.low_transition(&t);
            buf.push(t);
            samples += 1;
            slot.t += 1;
            slot.reward += r_a as f64;
            slot.motor += step.reward;
            slot.obs = step.obs.proprio;
            if step.done {
                episode_count += 1;
                let summary = EpisodeSummary {
                    episode: slot.episode,
                    sample_count: samples,
                    skill: Some(slot.z.index()),
                    h: Some(slot.h),
                    length: slot.t,
                    reward: slot.reward,
                    motor_return: Some(slot.motor),
                    terminal: step.terminal,
                };
                acc.returns.add(slot.reward);
                monitor.episode(&summary);
                episodes.push(summary);
                start_episode(slot, env_seeds.next_u64(), next_episode, &act, count, &mut rng);
                next_episode += 1;
            }
        }

        for _ in 0..schedule.cycles(samples) {
            learner.cycle(&mut low, &buf, cfg, &mut rng, &mut acc)?;
        }
        let eval_due = schedule.eval_due(samples);
        if eval_due || samples == p.total_samples {
            let eval = if p.eval_interval > 0 { Some(evaluate(&low, cfg, &act)?) } else { None };
            let rec = acc.record(
                "pretrain",
                samples,
                episode_count,
                learner.sac_updates,
                eval,
                low.agent.temperature.alpha() as f64,
                monitor.elapsed(),
            );
            monitor.metrics(&rec);
            metrics.push(rec);
        }
    }
    Ok(PretrainOutcome {
        low,
        metrics,
        episodes,
        samples,
        discriminator_updates: learner.disc_updates,
        encoder_updates: learner.enc_updates,
        sac_updates: learner.sac_updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::NoMonitor;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.network.hidden = alloc::vec![16];
        c.pretrain.total_samples = 3_000;
        c.pretrain.warmup_samples = 1_000;
        c.pretrain.batch_size = 32;
        c.pretrain.updates_per_cycle = 5;
        c.pretrain.eval_interval = 1_000;
        c.pretrain.eval_episodes = 2;
        c
    }

    #[test]
    fn zero_budget_is_a_clean_no_op() {
        let mut c = tiny();
        c.pretrain.total_samples = 0;
        let out = pretrain(&c, &mut NoMonitor).unwrap();
        assert!(out.metrics.is_empty() && out.episodes.is_empty());
        assert_eq!((out.samples, out.sac_updates), (0, 0));
    }

    #[test]
    fn cadence_and_logged_activity() {
        struct Audit(Vec<LowTransition>);
        impl Monitor for Audit {
            fn low_transition(&mut self, t: &LowTransition) {
                self.0.push(t.clone());
            }
        }
        let c = tiny();
        let mut audit = Audit(Vec::new());
        let out = pretrain(&c, &mut audit).unwrap();
        assert_eq!(out.samples, 3_000);
        assert_eq!(audit.0.len(), 3_000);
        // Cycles at 1000, 1500, ..., 3000.
        assert_eq!(out.sac_updates, 5 * 5);
        assert_eq!(out.discriminator_updates, out.sac_updates);
        assert_eq!(out.encoder_updates, out.sac_updates);
        let act = c.activity_config();
        for e in &out.episodes {
            let z = DiscreteSkill::new(e.skill.unwrap(), 10).unwrap();
            assert_eq!(e.h.unwrap(), activity(&act, z));
        }
        for t in &audit.0 {
            let want = super::super::fusion_reward(t.r_f as f64, t.r_e as f64, t.h as f64, 0.5);
            assert!((t.r_a as f64 - want).abs() < 1e-6);
        }
        assert_eq!(out.metrics.iter().map(|m| m.sample_count).collect::<Vec<_>>(), alloc::vec![1_000, 2_000, 3_000]);
    }

    #[test]
    fn runs_repeat_exactly() {
        let mut c = tiny();
        c.pretrain.total_samples = 1_500;
        let a = pretrain(&c, &mut NoMonitor).unwrap();
        let b = pretrain(&c, &mut NoMonitor).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.low.agent.policy.net().layers()[0].weight.data(), b.low.agent.policy.net().layers()[0].weight.data());
    }
}
