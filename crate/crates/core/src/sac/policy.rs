use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::real::Real;
use crate::sampling::normal;
use crate::skill::squash;
use crate::tensor::{Activation, Module, Mlp, Tape, Tensor, TensorError, Var};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7;
const LN_2: f64 = core::f64::consts::LN_2;

/// Tanh-squashed diagonal Gaussian over `(-1, 1)^A`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy<F = f32> {
    net: Mlp<F>,
    action_dim: usize,
}

/// Batched policy output.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled<F> {
    pub actions: Vec<F>,
    pub log_probs: Vec<F>,
}

impl<F: Real> GaussianPolicy<F> {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        Self { net: Mlp::new(obs_dim, hidden, 2 * action_dim, Activation::Relu, rng), action_dim }
    }

    pub fn from_net(net: Mlp<F>) -> Result<Self, TensorError> {
        let out = net.output_dim();
        if out == 0 || out % 2 != 0 {
            return Err(TensorError::Contract(alloc::format!("policy head width {out} is not 2 * action_dim")));
        }
        Ok(Self { net, action_dim: out / 2 })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn net(&self) -> &Mlp<F> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<F> {
        &mut self.net
    }

    /// Means and clamped log standard deviations, each `rows x A`.
    pub fn distribution(&self, obs: &[F], rows: usize) -> Result<(Vec<F>, Vec<F>), TensorError> {
        let out = self.net.infer(obs, rows)?;
        let a = self.action_dim;
        let (lo, hi) = (F::lit(LOG_STD_MIN), F::lit(LOG_STD_MAX));
        let mut mean = Vec::with_capacity(rows * a);
        let mut log_std = Vec::with_capacity(rows * a);
        for row in out.chunks(2 * a) {
            mean.extend_from_slice(&row[..a]);
            log_std.extend(row[a..].iter().map(|&x| x.max(lo).min(hi)));
        }
        Ok((mean, log_std))
    }

    /// Stochastic `tanh(mu + sigma * eps)` or deterministic `tanh(mu)`, with
    /// the change-of-variables log-density of the returned action.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[F], rows: usize, rng: &mut R, deterministic: bool) -> Result<Sampled<F>, TensorError> {
        let (mean, log_std) = self.distribution(obs, rows)?;
        let a = self.action_dim;
        let mut actions = Vec::with_capacity(rows * a);
        let mut log_probs = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut lp = 0.0f64;
            for c in 0..a {
                let i = r * a + c;
                let eps = if deterministic { 0.0 } else { normal(rng) };
                let ls = log_std[i].to_f64().unwrap();
                let u = mean[i].to_f64().unwrap() + libm::exp(ls) * eps;
                lp += -0.5 * eps * eps - ls - HALF_LN_TAU - log1m_tanh_sq(u);
                actions.push(squash(F::lit(u)));
            }
            log_probs.push(F::lit(lp));
        }
        Ok(Sampled { actions, log_probs })
    }

    /// Single-observation convenience wrapper over [`Self::sample`].
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[F], rng: &mut R, deterministic: bool) -> Result<(Vec<F>, F), TensorError> {
        let s = self.sample(obs, 1, rng, deterministic)?;
        Ok((s.actions, s.log_probs[0]))
    }

    /// Log-density of a given squashed action.
    pub fn log_prob(&self, obs: &[F], action: &[F]) -> Result<F, TensorError> {
        if action.len() != self.action_dim {
            return Err(TensorError::Dimension { op: "policy log_prob", expected: self.action_dim, found: action.len() });
        }
        let (mean, log_std) = self.distribution(obs, 1)?;
        let mut lp = 0.0f64;
        for c in 0..self.action_dim {
            let u = libm::atanh(action[c].to_f64().unwrap());
            let ls = log_std[c].to_f64().unwrap();
            let z = (u - mean[c].to_f64().unwrap()) / libm::exp(ls);
            lp += -0.5 * z * z - ls - HALF_LN_TAU - log1m_tanh_sq(u);
        }
        Ok(F::lit(lp))
    }

    /// Reparameterized sample on the tape: returns `(action, log_prob)` with
    /// shapes `rows x A` and `rows x 1`. `eps` holds the standard-normal noise.
    pub fn rsample_var(&self, tape: &mut Tape<F>, obs: Var, eps: &[F], track: bool) -> Result<(Var, Var), TensorError> {
        let (rows, _) = tape.shape(obs);
        let a = self.action_dim;
        if eps.len() != rows * a {
            return Err(TensorError::Dimension { op: "policy noise", expected: rows * a, found: eps.len() });
        }
        let out = if track { self.net.forward(tape, obs)? } else { self.net.forward_frozen(tape, obs)? };
        let mean = tape.slice_cols(out, 0, a);
        let log_std = tape.slice_cols(out, a, 2 * a);
        let log_std = tape.clamp(log_std, F::lit(LOG_STD_MIN), F::lit(LOG_STD_MAX));
        let std = tape.exp(log_std);
        let e = tape.constant(rows, a, eps.to_vec());
        let noise = tape.mul(std, e);
        let u = tape.add(mean, noise);
        let action = tape.tanh(u);

        let base: Vec<F> = eps
            .chunks(a)
            .map(|row| row.iter().map(|&x| F::lit(-0.5) * x * x - F::lit(HALF_LN_TAU)).sum::<F>())
            .collect();
        let base = tape.constant(rows, 1, base);
        let ls_sum = tape.sum_cols(log_std);
        // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
        let m2u = tape.scale(u, F::lit(-2.0));
        let sp = tape.softplus(m2u);
        let inner = tape.add(u, sp);
        let inner = tape.neg(inner);
        let inner = tape.add_scalar(inner, F::lit(LN_2));
        let corr = tape.scale(inner, F::lit(2.0));
        let corr = tape.sum_cols(corr);
        let lp = tape.sub(base, ls_sum);
        let lp = tape.sub(lp, corr);
        Ok((action, lp))
    }

    pub fn cast<G: Real>(&self) -> GaussianPolicy<G> {
        GaussianPolicy { net: self.net.cast(), action_dim: self.action_dim }
    }
}

/// `log(1 - tanh(u)^2)` without cancellation.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = if x > 0.0 { x + libm::log1p(libm::exp(-x)) } else { libm::log1p(libm::exp(x)) };
    2.0 * (LN_2 - u - softplus)
}

crate::persist_via_module!(GaussianPolicy);

impl<F: Real> Module<F> for GaussianPolicy<F> {
    fn params(&self) -> Vec<&Tensor<F>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.net.params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.net.param_names()
    }
}
