//! Core of a two-level, neuro-inspired hierarchical reinforcement learner.
//!
//! A skill-conditioned low-level policy (the "cerebellar" network) is
//! pre-trained on a fusion of a mutual-information skill reward and an
//! activity-weighted motor reward. A high-level policy (the "cortical"
//! network) then picks continuous skills every `k` steps on sparse task
//! rewards, trained with a step-conditioned critic.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, configuration
//! files and the command line live in the `nihrl` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod activity;
pub mod discriminator;
pub mod env;
pub mod hrl;
pub mod real;
pub mod replay;
pub mod sampling;
pub mod sac;
pub mod skill;
pub mod tensor;
pub mod train;

pub use real::Real;
pub use tensor::{Module, Persist, Tensor, TensorError};

/// Deterministic generator used throughout.
pub type Rng = rand_chacha::ChaCha8Rng;
