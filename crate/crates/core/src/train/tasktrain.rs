use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};

use super::{Accum, EpisodeSummary, HighLevel, MetricsRecord, Monitor, RunConfig, Schedule, TrainError, EVAL_SEED};
use crate::env::{EnvObservation, Environment, TaskEnv};
use crate::hrl::sac_update_high;
use crate::replay::{HighBuffer, HighRecord, Ring};
use crate::sac::{evaluate_policy, GaussianPolicy, SacAgent, SacBatch};
use crate::sampling::open_unit;
use crate::skill::sample_random_skill;

#[derive(Debug, Clone)]
pub struct TasktrainOutcome {
    pub high: HighLevel,
    pub metrics: Vec<MetricsRecord>,
    pub episodes: Vec<EpisodeSummary>,
    pub samples: u64,
    pub updates: u64,
    /// Score of the last evaluation, if any ran.
    pub final_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub agent: SacAgent<f32>,
    pub metrics: Vec<MetricsRecord>,
    pub episodes: Vec<EpisodeSummary>,
    pub samples: u64,
    pub updates: u64,
    pub final_score: Option<f64>,
}

struct Slot {
    env: TaskEnv,
    obs: EnvObservation,
    skill: Vec<f32>,
    t: usize,
    episode: u64,
    score: f64,
}

impl Slot {
    fn new(cfg: &RunConfig) -> Self {
        let env = TaskEnv::new(cfg.task.clone(), cfg.body.clone());
        let obs = EnvObservation { proprio: Vec::new(), external: Vec::new(), forward_velocity: 0.0, control_sq: 0.0, fallen: false };
        Self { env, obs, skill: Vec::new(), t: 0, episode: 0, score: 0.0 }
    }

    fn start(&mut self, seed: u64, episode: u64) {
        self.obs = self.env.reset(seed);
        self.t = 0;
        self.episode = episode;
        self.score = 0.0;
    }

    fn finish(&self, samples: u64, terminal: bool) -> EpisodeSummary {
        EpisodeSummary {
            episode: self.episode,
            sample_count: samples,
            skill: None,
            h: None,
            length: self.t,
            reward: self.score,
            motor_return: None,
            terminal,
        }
    }
}

/// Mean score of deterministic two-level rollouts: the high level picks a
/// skill every `k` steps from `s+`, the low level acts on `(s, z^c)`.
pub fn evaluate_hierarchy<E: Environment + ?Sized>(
    high: &GaussianPolicy<f32>,
    low: &GaussianPolicy<f32>,
    env: &mut E,
    k: usize,
    episodes: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    if episodes == 0 || k == 0 {
        return Err(TrainError::Config { key: "eval_episodes".into(), message: "needs at least one episode and k >= 1".into() });
    }
    let mut noop = crate::Rng::seed_from_u64(0);
    let mut total = 0.0;
    for j in 0..episodes {
        let mut obs = env.reset(seed.wrapping_add(j as u64));
        let mut skill = Vec::new();
        let mut t = 0;
        loop {
            if t % k == 0 {
                skill = high.sample_action(&obs.combined(), &mut noop, true)?.0;
            }
            let mut x = obs.proprio.clone();
            x.extend_from_slice(&skill);
            let (a, _) = low.sample_action(&x, &mut noop, true)?;
            let step = env.step(&a);
            total += step.reward;
            t += 1;
            if step.done {
                break;
            }
            obs = step.obs;
        }
    }
    Ok(total / episodes as f64)
}

fn check_low(cfg: &RunConfig, low: &GaussianPolicy<f32>) -> Result<(), TrainError> {
    let want = (cfg.proprio_dim() + cfg.skill.dim, cfg.body.joints);
    let got = (low.obs_dim(), low.action_dim());
    if want != got {
        return Err(TrainError::Mismatch(alloc::format!(
            "low-level policy maps {} inputs to {} actions, configuration needs {} to {}",
            got.0,
            got.1,
            want.0,
            want.1
        )));
    }
    Ok(())
}

/// Task training of the high level over a frozen low-level policy.
///
/// A new skill is drawn whenever `t mod k == 0` (uniformly from `(-1, 1)^d`
/// during warmup) and held for the next steps. Every step is stored as a
/// single record; updates rebuild step-conditioned windows from them.
pub fn tasktrain<M: Monitor + ?Sized>(cfg: &RunConfig, low: &GaussianPolicy<f32>, monitor: &mut M) -> Result<TasktrainOutcome, TrainError> {
    cfg.validate()?;
    check_low(cfg, low)?;
    let p = &cfg.tasktrain;
    let k = cfg.hrl.k;
    let mut rng = crate::Rng::seed_from_u64(cfg.seed ^ 0x7a5c_0000);
    let mut env_seeds = crate::Rng::seed_from_u64(cfg.seed ^ 0x7a5c_5eed);
    let mut high = HighLevel::new(cfg, &mut rng)?;
    let (sp, so, d, a_dim) = (cfg.proprio_dim(), high.agent.obs_dim(), cfg.skill.dim, cfg.body.joints);

    let mut buf = HighBuffer::new(p.buffer_size);
    let mut schedule = Schedule::new(p.warmup_samples, p.samples_per_update, p.eval_interval);
    let mut eval_env = TaskEnv::new(cfg.task.clone(), cfg.body.clone());
    let mut acc = Accum::default();
    let (mut metrics, mut episodes) = (Vec::new(), Vec::new());
    let (mut samples, mut episode_count, mut updates) = (0u64, 0u64, 0u64);
    let mut final_score = None;

    let mut slots: Vec<Slot> = (0..p.parallel_envs).map(|_| Slot::new(cfg)).collect();
    for (i, slot) in slots.iter_mut().enumerate() {
        slot.start(env_seeds.next_u64(), i as u64);
    }
    let mut next_episode = slots.len() as u64;

    while samples < p.total_samples {
        let m = ((p.total_samples - samples) as usize).min(slots.len());

        let choosing: Vec<usize> = (0..m).filter(|&j| slots[j].t % k == 0).collect();
        if !choosing.is_empty() {
            if samples < p.warmup_samples {
                for &j in &choosing {
                    slots[j].skill = sample_random_skill(d, &mut rng).squashed;
                }
            } else {
                let mut x = Vec::with_capacity(choosing.len() * so);
                for &j in &choosing {
                    x.extend(slots[j].obs.combined());
                }
                let s = high.agent.policy.sample(&x, choosing.len(), &mut rng, false)?;
                for (r, &j) in choosing.iter().enumerate() {
                    slots[j].skill = s.actions[r * d..(r + 1) * d].to_vec();
                }
            }
        }

        let mut x = Vec::with_capacity(m * (sp + d));
        for slot in &slots[..m] {
            x.extend_from_slice(&slot.obs.proprio);
            x.extend_from_slice(&slot.skill);
        }
        let actions = low.sample(&x, m, &mut rng, p.low_deterministic)?.actions;

        for (j, slot) in slots[..m].iter_mut().enumerate() {
            let step = slot.env.step(&actions[j * a_dim..(j + 1) * a_dim]);
            let rec = HighRecord {
                s_plus: slot.obs.combined(),
                s_plus_next: step.obs.combined(),
                z_c: slot.skill.clone(),
                r_h: step.reward as f32,
                i: slot.t % k,
                done: step.terminal,
                truncated: step.truncated(),
                episode_id: slot.episode,
                step_id: slot.t,
            };
            monitor.high_record(&rec);
            buf.push(rec);
            samples += 1;
            slot.t += 1;
            slot.score += step.reward;
            let done = step.done;
            slot.obs = step.obs;
            if done {
                episode_count += 1;
                let summary = slot.finish(samples, step.terminal);
                acc.returns.add(slot.score);
                monitor.episode(&summary);
                episodes.push(summary);
                slot.start(env_seeds.next_u64(), next_episode);
                next_episode += 1;
            }
        }

        for _ in 0..schedule.cycles(samples) {
            for _ in 0..p.updates_per_cycle {
                let windows = buf.sample_windows(p.batch_size, k, &mut rng)?;
                let l = sac_update_high(&mut high.agent, &windows, cfg.hrl.gamma, &mut rng)?;
                acc.sac(&l);
                updates += 1;
            }
        }
        let eval_due = schedule.eval_due(samples);
        if eval_due || samples == p.total_samples {
            let eval = if p.eval_interval > 0 {
                Some(evaluate_hierarchy(&high.agent.policy, low, &mut eval_env, k, p.eval_episodes, EVAL_SEED)?)
            } else {
                None
            };
            final_score = eval.or(final_score);
            let rec = acc.record("tasktrain", samples, episode_count, updates, eval, high.agent.temperature.alpha() as f64, monitor.elapsed());
            monitor.metrics(&rec);
            metrics.push(rec);
        }
    }

    Ok(TasktrainOutcome { high, metrics, episodes, samples, updates, final_score })
}

#[derive(Debug, Clone)]
struct FlatTransition {
    s: Vec<f32>,
    a: Vec<f32>,
    r: f32,
    s_next: Vec<f32>,
    terminal: bool,
}

/// Flat SAC on the task with the task-training budget, cadence and
/// learning rates; the policy acts on `s+` directly.
pub fn baseline<M: Monitor + ?Sized>(cfg: &RunConfig, monitor: &mut M) -> Result<BaselineOutcome, TrainError> {
    cfg.validate()?;
    let p = &cfg.tasktrain;
    let mut rng = crate::Rng::seed_from_u64(cfg.seed ^ 0xba5e_0000);
    let mut env_seeds = crate::Rng::seed_from_u64(cfg.seed ^ 0x7a5c_5eed);
    let so = cfg.proprio_dim() + cfg.task.kind.external_dim();
    let a_dim = cfg.body.joints;
    let mut sac = cfg.high_sac();
    sac.target_entropy = None;
    let mut agent = SacAgent::<f32>::new(so, a_dim, 0, &sac, &mut rng)?;

    let mut buf: Ring<FlatTransition> = Ring::new(p.buffer_size);
    let mut schedule = Schedule::new(p.warmup_samples, p.samples_per_update, p.eval_interval);
    let mut eval_env = TaskEnv::new(cfg.task.clone(), cfg.body.clone());
    let mut acc = Accum::default();
    let (mut metrics, mut episodes) = (Vec::new(), Vec::new());
    let (mut samples, mut episode_count, mut updates) = (0u64, 0u64, 0u64);
    let mut final_score = None;
    let gamma = cfg.hrl.gamma as f32;

    let mut slots: Vec<Slot> = (0..p.parallel_envs).map(|_| Slot::new(cfg)).collect();
    for (i, slot) in slots.iter_mut().enumerate() {
        slot.start(env_seeds.next_u64(), i as u64);
    }
    let mut next_episode = slots.len() as u64;

    while samples < p.total_samples {
        let m = ((p.total_samples - samples) as usize).min(slots.len());
        let actions: Vec<f32> = if samples < p.warmup_samples {
            (0..m * a_dim).map(|_| open_unit(&mut rng) as f32).collect()
        } else {
            let x: Vec<f32> = slots[..m].iter().flat_map(|s| s.obs.combined()).collect();
            agent.policy.sample(&x, m, &mut rng, false)?.actions
        };
        for (j, slot) in slots[..m].iter_mut().enumerate() {
            let a = &actions[j * a_dim..(j + 1) * a_dim];
            let step = slot.env.step(a);
            buf.push(FlatTransition {
                s: slot.obs.combined(),
                a: a.to_vec(),
                r: step.reward as f32,
                s_next: step.obs.combined(),
                terminal: step.terminal,
            });
            samples += 1;
            slot.t += 1;
            slot.score += step.reward;
            let done = step.done;
            slot.obs = step.obs;
            if done {
                episode_count += 1;
                let summary = slot.finish(samples, step.terminal);
                acc.returns.add(slot.score);
                monitor.episode(&summary);
                episodes.push(summary);
                slot.start(env_seeds.next_u64(), next_episode);
                next_episode += 1;
            }
        }

        for _ in 0..schedule.cycles(samples) {
            for _ in 0..p.updates_per_cycle {
                let batch = buf.sample(p.batch_size, &mut rng)?;
                let mut b = SacBatch { rows: batch.len(), ..Default::default() };
                for t in batch {
                    b.obs.extend_from_slice(&t.s);
                    b.actions.extend_from_slice(&t.a);
                    b.reward.push(t.r);
                    b.discount.push(if t.terminal { 0.0 } else { gamma });
                    b.next_obs.extend_from_slice(&t.s_next);
                }
                let l = agent.update(&b, &mut rng)?;
                acc.sac(&l);
                updates += 1;
            }
        }
        let eval_due = schedule.eval_due(samples);
        if eval_due || samples == p.total_samples {
            let eval = if p.eval_interval > 0 { Some(evaluate_policy(&agent.policy, &mut eval_env, p.eval_episodes, EVAL_SEED)?) } else { None };
            final_score = eval.or(final_score);
            let rec = acc.record("baseline", samples, episode_count, updates, eval, agent.temperature.alpha() as f64, monitor.elapsed());
            monitor.metrics(&rec);
            metrics.push(rec);
        }
    }

    Ok(BaselineOutcome { agent, metrics, episodes, samples, updates, final_score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{TaskKind, TaskSpec};
    use crate::train::{LowLevel, NoMonitor};
    use crate::Module;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.network.hidden = alloc::vec![16];
        c.task.horizon = 60;
        c.tasktrain.total_samples = 2_000;
        c.tasktrain.batch_size = 16;
        c.tasktrain.updates_per_cycle = 3;
        c.tasktrain.eval_interval = 1_000;
        c.tasktrain.eval_episodes = 2;
        c
    }

    fn low(c: &RunConfig) -> LowLevel {
        LowLevel::new(c, &mut crate::Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn low_level_stays_frozen() {
        let c = tiny();
        let low = low(&c);
        let before: Vec<Vec<f32>> = low.agent.policy.params().iter().map(|p| p.data().to_vec()).collect();
        let out = tasktrain(&c, &low.agent.policy, &mut NoMonitor).unwrap();
        let after: Vec<Vec<f32>> = low.agent.policy.params().iter().map(|p| p.data().to_vec()).collect();
        assert_eq!(before, after);
        // Cycles at 1000, 1500, 2000.
        assert_eq!(out.updates, 3 * 3);
        assert_eq!(out.metrics.len(), 2);
    }

    #[test]
    fn skills_are_drawn_every_k_steps() {
        struct Log(Vec<HighRecord>);
        impl Monitor for Log {
            fn high_record(&mut self, r: &HighRecord) {
                self.0.push(r.clone());
            }
        }
        for k in [1, 3] {
            let mut c = tiny();
            c.hrl.k = k;
            c.tasktrain.total_samples = 1_200;
            let mut log = Log(Vec::new());
            tasktrain(&c, &low(&c).agent.policy, &mut log).unwrap();
            let mut by_ep: alloc::collections::BTreeMap<u64, Vec<HighRecord>> = Default::default();
            for r in log.0 {
                by_ep.entry(r.episode_id).or_default().push(r);
            }
            for recs in by_ep.values() {
                for (t, r) in recs.iter().enumerate() {
                    assert_eq!((r.step_id, r.i), (t, t % k));
                    if t % k != 0 {
                        assert_eq!(r.z_c, recs[t - 1].z_c);
                    }
                }
                let ended = recs.last().unwrap();
                if ended.done || ended.truncated {
                    let n = recs.len();
                    let want = if ended.done { n } else { n.saturating_sub(k - 1) };
                    assert_eq!(crate::hrl::expand_windows(recs, k).len(), want);
                }
            }
        }
    }

    #[test]
    fn mismatched_low_level_is_rejected() {
        let c = tiny();
        let mut other = tiny();
        other.skill.dim = 3;
        assert!(matches!(tasktrain(&c, &low(&other).agent.policy, &mut NoMonitor), Err(TrainError::Mismatch(_))));
    }

    #[test]
    fn random_hierarchy_on_hurdles_scores_at_least_minus_one() {
        let mut c = tiny();
        c.task = TaskSpec::of(TaskKind::Hurdles);
        let low = low(&c);
        let high = HighLevel::new(&c, &mut crate::Rng::seed_from_u64(4)).unwrap();
        let mut env = TaskEnv::new(c.task.clone(), c.body.clone());
        let a = evaluate_hierarchy(&high.agent.policy, &low.agent.policy, &mut env, 3, 5, EVAL_SEED).unwrap();
        let b = evaluate_hierarchy(&high.agent.policy, &low.agent.policy, &mut env, 3, 5, EVAL_SEED).unwrap();
        assert!(a >= -1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn baseline_runs_on_the_same_cadence() {
        let out = baseline(&tiny(), &mut NoMonitor).unwrap();
        assert_eq!(out.updates, 9);
        assert!(out.final_score.is_some());
    }
}
