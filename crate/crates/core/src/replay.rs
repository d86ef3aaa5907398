//! Bounded replay buffers with seeded uniform sampling.
//!
//! The high-level buffer stores single-step records and rebuilds k-step
//! windows when sampled; each record links to the next record of its episode
//! so windows can be rebuilt even when several environments interleave their
//! pushes.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hrl::{assemble_window, HighWindow};
use crate::tensor::TensorError;

/// Fixed-capacity ring; item number `seq` lives in slot `seq % capacity`.
#[derive(Debug, Clone)]
pub struct Ring<T> {
    slots: Vec<T>,
    capacity: usize,
    pushed: u64,
}

impl<T> Ring<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { slots: Vec::new(), capacity, pushed: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of pushes so far.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Pushes and returns the sequence number of the new item.
    pub fn push(&mut self, item: T) -> u64 {
        let seq = self.pushed;
        if self.slots.len() < self.capacity {
            self.slots.push(item);
        } else {
            self.slots[(seq % self.capacity as u64) as usize] = item;
        }
        self.pushed += 1;
        seq
    }

    fn oldest(&self) -> u64 {
        self.pushed - self.slots.len() as u64
    }

    pub fn contains(&self, seq: u64) -> bool {
        seq < self.pushed && seq >= self.oldest()
    }

    pub fn get(&self, seq: u64) -> Option<&T> {
        if self.contains(seq) {
            Some(&self.slots[(seq % self.capacity as u64) as usize])
        } else {
            None
        }
    }

    fn get_mut(&mut self, seq: u64) -> Option<&mut T> {
        if self.contains(seq) {
            let cap = self.capacity as u64;
            Some(&mut self.slots[(seq % cap) as usize])
        } else {
            None
        }
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (self.oldest()..self.pushed).map(move |s| &self.slots[(s % self.capacity as u64) as usize])
    }

    /// A uniformly drawn live sequence number.
    pub fn sample_seq<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64, TensorError> {
        if self.is_empty() {
            return Err(TensorError::Contract("sampling from an empty replay buffer".into()));
        }
        Ok(self.oldest() + rng.random_range(0..self.slots.len() as u64))
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&T>, TensorError> {
        (0..batch).map(|_| self.sample_seq(rng).map(|s| self.get(s).expect("live"))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowTransition {
    pub s: Vec<f32>,
    pub s_next: Vec<f32>,
    pub a: Vec<f32>,
    pub z: usize,
    /// Squashed continuous skill the policy acted on.
    pub z_c: Vec<f32>,
    /// Fusion reward, frozen at collection time.
    pub r_a: f32,
    /// Ingredients of `r_a`, kept for offline audits.
    pub r_f: f32,
    pub r_e: f32,
    pub h: f32,
    /// Terminal (fall); time-limit ends are not terminal.
    pub done: bool,
}

pub type LowBuffer = Ring<LowTransition>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighRecord {
    pub s_plus: Vec<f32>,
    pub s_plus_next: Vec<f32>,
    pub z_c: Vec<f32>,
    pub r_h: f32,
    /// Step index within the current skill, `t mod k`.
    pub i: usize,
    pub done: bool,
    pub truncated: bool,
    pub episode_id: u64,
    pub step_id: usize,
}

#[derive(Debug, Clone)]
struct Linked {
    rec: HighRecord,
    next: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct HighBuffer {
    ring: Ring<Linked>,
    open: BTreeMap<u64, u64>,
}

impl HighBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { ring: Ring::new(capacity), open: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn push(&mut self, rec: HighRecord) {
        let (ep, step, ends) = (rec.episode_id, rec.step_id, rec.done || rec.truncated);
        let seq = self.ring.push(Linked { rec, next: None });
        if let Some(prev) = self.open.remove(&ep) {
            if let Some(p) = self.ring.get_mut(prev) {
                if p.rec.step_id + 1 == step {
                    p.next = Some(seq);
                }
            }
        }
        if !ends {
            self.open.insert(ep, seq);
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &HighRecord> + '_ {
        self.ring.iter().map(|l| &l.rec)
    }

    /// The window starting at record `seq`, if every step it needs is live.
    fn window(&self, seq: u64, k: usize) -> Option<HighWindow> {
        let first = &self.ring.get(seq)?.rec;
        let mut cursor = seq;
        assemble_window(first, k, |_| {
            let next = self.ring.get(cursor)?.next?;
            cursor = next;
            self.ring.get(next).map(|l| &l.rec)
        })
    }

    /// Uniform over valid window starts, by rejection.
    pub fn sample_windows<R: Rng + ?Sized>(&self, batch: usize, k: usize, rng: &mut R) -> Result<Vec<HighWindow>, TensorError> {
        let mut out = Vec::with_capacity(batch);
        let mut misses = 0usize;
        while out.len() < batch {
            let seq = self.ring.sample_seq(rng)?;
            match self.window(seq, k) {
                Some(w) => out.push(w),
                None => {
                    misses += 1;
                    if misses > 1000 + 100 * batch {
                        return Err(TensorError::Contract("no complete high-level window in the replay buffer".into()));
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng as ChaCha;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn ring_overwrites_oldest() {
        let mut r = Ring::new(4);
        for i in 1..=6 {
            r.push(i);
        }
        assert_eq!(r.iter().copied().collect::<Vec<_>>(), vec![3, 4, 5, 6]);
        assert_eq!(r.len(), 4);
        assert!(r.get(1).is_none());
        assert_eq!(r.get(5), Some(&6));
    }

    #[test]
    fn empty_sampling_is_an_error() {
        let r: Ring<u8> = Ring::new(3);
        assert!(r.sample(1, &mut ChaCha::seed_from_u64(0)).is_err());
    }

    #[test]
    fn seeded_sampling_repeats() {
        let mut r = Ring::new(50);
        for i in 0..50 {
            r.push(i);
        }
        let a: Vec<i32> = r.sample(256, &mut ChaCha::seed_from_u64(3)).unwrap().into_iter().copied().collect();
        let b: Vec<i32> = r.sample(256, &mut ChaCha::seed_from_u64(3)).unwrap().into_iter().copied().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut r = Ring::new(100);
        for i in 0..100usize {
            r.push(i);
        }
        let mut counts = [0u32; 100];
        let mut rng = ChaCha::seed_from_u64(8);
        let n = 100_000;
        for x in r.sample(n, &mut rng).unwrap() {
            counts[*x] += 1;
        }
        let p = 0.01;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 5.0 * sigma, "{c}");
        }
    }

    fn rec(ep: u64, step: usize, k: usize, done: bool, truncated: bool) -> HighRecord {
        HighRecord {
            s_plus: vec![ep as f32, step as f32],
            s_plus_next: vec![ep as f32, step as f32 + 1.0],
            z_c: vec![ep as f32 * 0.01 + (step / k) as f32 * 0.001],
            r_h: 0.0,
            i: step % k,
            done,
            truncated,
            episode_id: ep,
            step_id: step,
        }
    }

    proptest! {
        #[test]
        fn buffer_length_is_min_of_pushes_and_capacity(n in 0usize..300, cap in 1usize..100) {
            let mut r = Ring::new(cap);
            for i in 0..n {
                r.push(i);
            }
            prop_assert_eq!(r.len(), n.min(cap));
        }

        #[test]
        fn windows_never_cross_episodes(
            lens in proptest::collection::vec((1usize..12, any::<bool>()), 1..8),
            k in 1usize..5,
            cap in 5usize..80,
            seed in 0u64..1000,
        ) {
            // Interleave episodes round-robin, as parallel environments do.
            let mut buf = HighBuffer::new(cap);
            let mut cursors = vec![0usize; lens.len()];
            let mut any_left = true;
            while any_left {
                any_left = false;
                for (ep, &(len, terminal)) in lens.iter().enumerate() {
                    let t = cursors[ep];
                    if t < len {
                        let last = t + 1 == len;
                        buf.push(rec(ep as u64, t, k, last && terminal, last && !terminal));
                        cursors[ep] += 1;
                        any_left = true;
                    }
                }
            }
            let mut rng = ChaCha::seed_from_u64(seed);
            if let Ok(ws) = buf.sample_windows(32, k, &mut rng) {
                for w in ws {
                    let ep = w.states_plus[0][0];
                    let t0 = w.states_plus[0][1] as usize;
                    prop_assert_eq!(w.step_index, t0 % k);
                    for (m, s) in w.states_plus.iter().enumerate() {
                        prop_assert_eq!(s[0], ep);
                        prop_assert_eq!(s[1] as usize, t0 + m);
                    }
                    prop_assert_eq!(w.bootstrap_state[0], ep);
                    prop_assert_eq!(w.bootstrap_state[1] as usize, t0 + w.rewards.len());
                }
            }
        }
    }
}
