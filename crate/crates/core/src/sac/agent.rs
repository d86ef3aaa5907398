use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GaussianPolicy, TwinCritic, Temperature};
use crate::real::Real;
use crate::sampling::normals;
use crate::tensor::{Adam, AdamConfig, Gradients, Module, Tape, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub alpha_init: f64,
    /// Defaults to `-action_dim` when absent.
    pub target_entropy: Option<f64>,
    pub tau: f64,
    pub twin: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: alloc::vec![256, 256],
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 1e-4,
            alpha_init: 0.1,
            target_entropy: None,
            tau: 0.01,
            twin: true,
        }
    }
}

/// One minibatch in the form shared by both levels.
///
/// The critic sees `[obs, action, extra]`; the policy sees `obs`. The target
/// is `reward + discount * V(next_obs)`, where `reward` is already the
/// discounted sum over the transition's steps and `discount` is `gamma^n`, or
/// zero when the transition ended in a terminal state. `bootstrap_extra` is
/// the critic's extra input for both the bootstrap value and the actor loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SacBatch<F> {
    pub rows: usize,
    pub obs: Vec<F>,
    pub actions: Vec<F>,
    pub extra: Vec<F>,
    pub reward: Vec<F>,
    pub discount: Vec<F>,
    pub next_obs: Vec<F>,
    pub bootstrap_extra: Vec<F>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
    pub temperature: f64,
    pub alpha: f64,
    /// `-mean log pi` of the actor-step samples.
    pub entropy: f64,
    pub q_mean: f64,
}

/// Supplies the policy input for the actor step, so that gradient can reach
/// modules upstream of the observation (the skill encoder at the low level).
pub trait ActorInput<F: Real> {
    fn actor_obs(&mut self, tape: &mut Tape<F>, batch: &SacBatch<F>, obs_dim: usize) -> Result<Var, TensorError>;
    fn apply(&mut self, grads: &Gradients<F>) -> Result<(), TensorError>;
}

/// Observations enter the actor step as constants.
pub struct PlainInput;

impl<F: Real> ActorInput<F> for PlainInput {
    fn actor_obs(&mut self, tape: &mut Tape<F>, batch: &SacBatch<F>, obs_dim: usize) -> Result<Var, TensorError> {
        Ok(tape.constant(batch.rows, obs_dim, batch.obs.clone()))
    }

    fn apply(&mut self, _: &Gradients<F>) -> Result<(), TensorError> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SacAgent<F = f32> {
    pub policy: GaussianPolicy<F>,
    pub critic: TwinCritic<F>,
    pub temperature: Temperature<F>,
    opt_policy: Adam<F>,
    opt_critic: Adam<F>,
    opt_alpha: Adam<F>,
    tau: F,
    extra_dim: usize,
    updates: u64,
}

impl<F: Real> SacAgent<F> {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, extra_dim: usize, cfg: &SacConfig, rng: &mut R) -> Result<Self, TensorError> {
        let policy = GaussianPolicy::new(obs_dim, action_dim, &cfg.hidden, rng);
        let critic = TwinCritic::new(obs_dim + action_dim + extra_dim, &cfg.hidden, cfg.twin, rng);
        let h = cfg.target_entropy.unwrap_or(-(action_dim as f64));
        let temperature = Temperature::new(F::lit(cfg.alpha_init), F::lit(h))?;
        Self::from_parts(policy, critic, temperature, extra_dim, cfg)
    }

    pub fn from_parts(
        policy: GaussianPolicy<F>,
        critic: TwinCritic<F>,
        temperature: Temperature<F>,
        extra_dim: usize,
        cfg: &SacConfig,
    ) -> Result<Self, TensorError> {
        let want = policy.obs_dim() + policy.action_dim() + extra_dim;
        if critic.input_dim() != want {
            return Err(TensorError::Dimension { op: "critic input", expected: want, found: critic.input_dim() });
        }
        Ok(Self {
            policy,
            critic,
            temperature,
            opt_policy: Adam::new(AdamConfig::with_lr(cfg.lr_actor)),
            opt_critic: Adam::new(AdamConfig::with_lr(cfg.lr_critic)),
            opt_alpha: Adam::new(AdamConfig::with_lr(cfg.lr_alpha)),
            tau: F::lit(cfg.tau),
            extra_dim,
            updates: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    pub fn extra_dim(&self) -> usize {
        self.extra_dim
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn check(&self, b: &SacBatch<F>) -> Result<(), TensorError> {
        if b.rows < 2 {
            return Err(TensorError::Contract(alloc::format!("SAC batch of {} rows; at least 2 needed", b.rows)));
        }
        let (o, a, e, n) = (self.obs_dim(), self.action_dim(), self.extra_dim, b.rows);
        for (name, got, want) in [
            ("obs", b.obs.len(), n * o),
            ("actions", b.actions.len(), n * a),
            ("extra", b.extra.len(), n * e),
            ("reward", b.reward.len(), n),
            ("discount", b.discount.len(), n),
            ("next_obs", b.next_obs.len(), n * o),
            ("bootstrap_extra", b.bootstrap_extra.len(), n * e),
        ] {
            if got != want {
                return Err(TensorError::Dimension { op: name_static(name), expected: want, found: got });
            }
        }
        Ok(())
    }

    /// Single-sample soft value `min Q_target(s, a', extra) - alpha log pi(a'|s)`.
    pub fn soft_value<R: Rng + ?Sized>(&self, obs: &[F], extra: &[F], rows: usize, rng: &mut R) -> Result<Vec<F>, TensorError> {
        let s = self.policy.sample(obs, rows, rng, false)?;
        let x = critic_input(obs, self.obs_dim(), &s.actions, self.action_dim(), extra, self.extra_dim, rows);
        let q = self.critic.target_min(&x, rows)?;
        let alpha = self.temperature.alpha();
        Ok(q.into_iter().zip(s.log_probs).map(|(q, lp)| q - alpha * lp).collect())
    }

    /// Critic targets `reward + discount * V(next_obs)`.
    pub fn targets<R: Rng + ?Sized>(&self, b: &SacBatch<F>, rng: &mut R) -> Result<Vec<F>, TensorError> {
        let v = self.soft_value(&b.next_obs, &b.bootstrap_extra, b.rows, rng)?;
        Ok((0..b.rows).map(|i| if b.discount[i] == F::zero() { b.reward[i] } else { b.reward[i] + b.discount[i] * v[i] }).collect())
    }

    pub fn update<R: Rng + ?Sized>(&mut self, b: &SacBatch<F>, rng: &mut R) -> Result<SacLosses, TensorError> {
        self.update_with(b, rng, &mut PlainInput)
    }

    /// Critic step, actor step, temperature step, then target averaging.
    pub fn update_with<R: Rng + ?Sized, H: ActorInput<F>>(&mut self, b: &SacBatch<F>, rng: &mut R, input: &mut H) -> Result<SacLosses, TensorError> {
        self.check(b)?;
        let (o, a, e, n) = (self.obs_dim(), self.action_dim(), self.extra_dim, b.rows);

        let y = self.targets(b, rng)?;
        let critic_loss = {
            let mut tape = Tape::new();
            let x = critic_input(&b.obs, o, &b.actions, a, &b.extra, e, n);
            let x = tape.constant(n, o + a + e, x);
            let yv = tape.constant(n, 1, y);
            let (q1, q2) = self.critic.forward(&mut tape, x, true)?;
            let mut loss = half_mse(&mut tape, q1, yv);
            if let Some(q2) = q2 {
                let l2 = half_mse(&mut tape, q2, yv);
                loss = tape.add(loss, l2);
            }
            let value = tape.scalar(loss);
            let grads = tape.backward(loss)?;
            self.critic.load_grads(&grads);
            self.opt_critic.step(&mut self.critic.params_mut())?;
            value
        };

        let alpha = self.temperature.alpha();
        let (actor_loss, mean_lp, q_mean) = {
            let mut tape = Tape::new();
            let obs = input.actor_obs(&mut tape, b, o)?;
            let eps: Vec<F> = normals(rng, n * a);
            let (act, lp) = self.policy.rsample_var(&mut tape, obs, &eps, true)?;
            let extra = tape.constant(n, e, b.bootstrap_extra.clone());
            let x = if e > 0 { tape.concat_cols(&[obs, act, extra]) } else { tape.concat_cols(&[obs, act]) };
            let q = self.critic.min_var(&mut tape, x, false)?;
            let alv = tape.scalar_const(alpha);
            let weighted = tape.mul_scalar_var(lp, alv);
            let diff = tape.sub(weighted, q);
            let loss = tape.mean(diff);
            let value = tape.scalar(loss);
            let mean_lp = mean(tape.value(lp));
            let q_mean = mean(tape.value(q));
            let grads = tape.backward(loss)?;
            self.policy.load_grads(&grads);
            self.opt_policy.step(&mut self.policy.params_mut())?;
            input.apply(&grads)?;
            (value, mean_lp, q_mean)
        };

        let temp_loss = self.temperature.update(&mut self.opt_alpha, mean_lp)?;
        self.critic.polyak(self.tau)?;
        self.updates += 1;

        let f = |x: F| x.to_f64().unwrap();
        Ok(SacLosses {
            critic: f(critic_loss),
            actor: f(actor_loss),
            temperature: f(temp_loss),
            alpha: f(self.temperature.alpha()),
            entropy: -f(mean_lp),
            q_mean: f(q_mean),
        })
    }
}

fn name_static(name: &str) -> &'static str {
    match name {
        "obs" => "batch obs",
        "actions" => "batch actions",
        "extra" => "batch extra",
        "reward" => "batch reward",
        "discount" => "batch discount",
        "next_obs" => "batch next_obs",
        _ => "batch bootstrap_extra",
    }
}

fn mean<F: Real>(v: &[F]) -> F {
    v.iter().copied().sum::<F>() / F::from_usize(v.len().max(1)).unwrap()
}

fn half_mse<F: Real>(tape: &mut Tape<F>, q: Var, y: Var) -> Var {
    let d = tape.sub(q, y);
    let sq = tape.square(d);
    let m = tape.mean(sq);
    tape.scale(m, F::lit(0.5))
}

/// Row-wise `[obs, action, extra]`.
pub fn critic_input<F: Copy>(obs: &[F], o: usize, act: &[F], a: usize, extra: &[F], e: usize, rows: usize) -> Vec<F> {
    let mut x = Vec::with_capacity(rows * (o + a + e));
    for r in 0..rows {
        x.extend_from_slice(&obs[r * o..(r + 1) * o]);
        x.extend_from_slice(&act[r * a..(r + 1) * a]);
        x.extend_from_slice(&extra[r * e..(r + 1) * e]);
    }
    x
}
