//! Soft actor-critic pieces shared by both levels: tanh-Gaussian policy,
//! twin critics with Polyak targets, and entropy-temperature tuning.

mod agent;
mod critic;
mod policy;
mod temperature;

pub use agent::{critic_input, ActorInput, PlainInput, SacAgent, SacBatch, SacConfig, SacLosses};
pub use critic::TwinCritic;
pub use policy::{log1m_tanh_sq, GaussianPolicy, Sampled, LOG_STD_MAX, LOG_STD_MIN};
pub use temperature::Temperature;

use crate::env::Environment;
use crate::tensor::TensorError;

/// Mean undiscounted return of deterministic rollouts. Episode `j` resets the
/// environment with `seed + j`, so the result does not depend on any RNG
/// state.
pub fn evaluate_policy<E: Environment + ?Sized>(policy: &GaussianPolicy<f32>, env: &mut E, episodes: usize, seed: u64) -> Result<f64, TensorError> {
    if episodes == 0 {
        return Err(TensorError::Contract("evaluation needs at least one episode".into()));
    }
    // Deterministic actions draw no noise; the generator is never advanced.
    let mut noop = <crate::Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut total = 0.0;
    for j in 0..episodes {
        let mut obs = env.reset(seed.wrapping_add(j as u64)).combined();
        loop {
            let (a, _) = policy.sample_action(&obs, &mut noop, true)?;
            let s = env.step(&a);
            total += s.reward;
            if s.done {
                break;
            }
            obs = s.obs.combined();
        }
    }
    Ok(total / episodes as f64)
}
