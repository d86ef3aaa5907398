//! Step-conditioned critic for the high level.
//!
//! A skill chosen at a step with `t mod k == 0` is held for `k` steps. Every
//! step `t` with index `i = t mod k` yields a training tuple whose target sums
//! the `k - i` rewards left under the current skill and bootstraps from the
//! state where the next skill is chosen:
//!
//! `G' = sum_{j < k-i} gamma^j R_{t+j} + gamma^{k-i} V(s+_{t+k-i})`
//!
//! with `V(s+) = Q(s+, z', 0) - alpha log psi(z'|s+)`, `z' ~ psi`. The critic
//! receives `i` as a one-hot of length `k`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::replay::HighRecord;
use crate::sac::{SacAgent, SacBatch, SacLosses};
use crate::tensor::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HrlConfig {
    /// Action interval.
    pub k: usize,
    pub gamma: f64,
}

impl Default for HrlConfig {
    fn default() -> Self {
        Self { k: 3, gamma: 0.99 }
    }
}

impl HrlConfig {
    /// Discount between consecutive high-level decisions.
    pub fn gamma_h(&self) -> f64 {
        libm::pow(self.gamma, self.k as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighWindow {
    pub k: usize,
    /// `s+_t, s+_{t+1}, ...`: up to `k` observations, fewer only when the
    /// episode ends inside the window.
    pub states_plus: Vec<Vec<f32>>,
    pub skill: Vec<f32>,
    pub step_index: usize,
    /// The `k - i` rewards under this skill, cut short by a terminal.
    pub rewards: Vec<f64>,
    /// A terminal state ends the reward run; the bootstrap is then masked.
    pub terminal: bool,
    /// `s+_{t + len(rewards)}`.
    pub bootstrap_state: Vec<f32>,
}

impl HighWindow {
    fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: &str| Err(TensorError::Contract(alloc::format!("malformed window: {m}")));
        if self.k == 0 || self.step_index >= self.k {
            return bad("step index outside [0, k)");
        }
        let need = self.k - self.step_index;
        let n = self.rewards.len();
        if n == 0 || n > need {
            return bad("reward count outside [1, k - i]");
        }
        if !self.terminal && n != need {
            return bad("non-terminal window without k - i rewards");
        }
        Ok(())
    }
}

/// Rebuilds the window starting at `first`. `next(m)` returns the record `m`
/// steps later in the same episode (for `m >= 1`), or `None` if unavailable.
///
/// A window exists when all `k` observations are available or the episode
/// terminates before that; windows are never built across a time-limit end,
/// so a truncated episode of length `T >= k` yields `T - (k - 1)` windows and
/// a terminated one yields `T`.
pub fn assemble_window<'a>(first: &'a HighRecord, k: usize, mut next: impl FnMut(usize) -> Option<&'a HighRecord>) -> Option<HighWindow> {
    if k == 0 || first.i >= k {
        return None;
    }
    let need = k - first.i;
    let mut states = Vec::with_capacity(k);
    let mut rewards = Vec::with_capacity(need);
    let mut bootstrap = None;
    let mut cur = first;
    for m in 0..k {
        if m > 0 {
            cur = next(m)?;
            if cur.episode_id != first.episode_id || cur.step_id != first.step_id + m {
                return None;
            }
        }
        states.push(cur.s_plus.clone());
        if m < need {
            debug_assert_eq!(cur.z_c, first.z_c, "skill changed inside a window");
            if cur.z_c != first.z_c {
                return None;
            }
            rewards.push(cur.r_h as f64);
            if m + 1 == need {
                bootstrap = Some(cur.s_plus_next.clone());
            }
        }
        if cur.done {
            let terminal = m < need;
            if terminal {
                bootstrap = Some(cur.s_plus_next.clone());
            }
            return Some(HighWindow {
                k,
                states_plus: states,
                skill: first.z_c.clone(),
                step_index: first.i,
                rewards,
                terminal,
                bootstrap_state: bootstrap.expect("set on or before the terminal"),
            });
        }
        if cur.truncated && m + 1 < k {
            return None;
        }
    }
    Some(HighWindow {
        k,
        states_plus: states,
        skill: first.z_c.clone(),
        step_index: first.i,
        rewards,
        terminal: false,
        bootstrap_state: bootstrap.expect("k - i <= k"),
    })
}

/// All windows of one logged episode (records in step order).
pub fn expand_windows(episode: &[HighRecord], k: usize) -> Vec<HighWindow> {
    (0..episode.len()).filter_map(|t| assemble_window(&episode[t], k, |m| episode.get(t + m))).collect()
}

/// Discounted reward sum and bootstrap discount `(sum, gamma^len or 0)`.
pub fn window_return(w: &HighWindow, gamma: f64) -> Result<(f64, f64), TensorError> {
    w.validate()?;
    let mut sum = 0.0;
    let mut g = 1.0;
    for &r in &w.rewards {
        sum += g * r;
        g *= gamma;
    }
    Ok((sum, if w.terminal { 0.0 } else { g }))
}

/// `G'` for a window given the bootstrap value `v = V(bootstrap_state)`.
pub fn q_target(w: &HighWindow, gamma: f64, v: f64) -> Result<f64, TensorError> {
    let (sum, disc) = window_return(w, gamma)?;
    Ok(if disc == 0.0 { sum } else { sum + disc * v })
}

pub fn one_hot(i: usize, k: usize) -> Vec<f32> {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    v
}

/// Packs windows into the shared SAC batch form.
pub fn windows_to_batch(windows: &[HighWindow], gamma: f64) -> Result<SacBatch<f32>, TensorError> {
    let mut b = SacBatch { rows: windows.len(), ..Default::default() };
    for w in windows {
        let (sum, disc) = window_return(w, gamma)?;
        b.obs.extend_from_slice(&w.states_plus[0]);
        b.actions.extend_from_slice(&w.skill);
        b.extra.extend(one_hot(w.step_index, w.k));
        b.reward.push(sum as f32);
        b.discount.push(disc as f32);
        b.next_obs.extend_from_slice(&w.bootstrap_state);
        b.bootstrap_extra.extend(one_hot(0, w.k));
    }
    Ok(b)
}

/// Single-sample estimate of the entropy-regularized value at `i = 0`.
pub fn value<R: Rng + ?Sized>(agent: &SacAgent<f32>, states_plus: &[f32], rows: usize, k: usize, rng: &mut R) -> Result<Vec<f32>, TensorError> {
    let extra: Vec<f32> = (0..rows).flat_map(|_| one_hot(0, k)).collect();
    agent.soft_value(states_plus, &extra, rows, rng)
}

/// Critic, actor and temperature steps on a batch of windows.
pub fn sac_update_high<R: Rng + ?Sized>(agent: &mut SacAgent<f32>, windows: &[HighWindow], gamma: f64, rng: &mut R) -> Result<SacLosses, TensorError> {
    if windows.is_empty() {
        return Err(TensorError::Contract("high-level update with no windows".into()));
    }
    let b = windows_to_batch(windows, gamma)?;
    agent.update(&b, rng)
}
