//! Skill-aware contrastive context encoders for meta-reinforcement learning.
//!
//! The crate is layered bottom-up: [`numerics`] (autodiff, Adam, LSTM),
//! [`encoder`] (trajectory → context embedding), [`estimators`] (K-sample
//! mutual-information estimators and exact discrete oracles), [`replay`]
//! (return-ranked trajectory storage and skill-aware sampling), [`rl`]
//! (context-conditioned soft actor-critic) and [`envs`] (the block-relocation
//! task family).

pub mod encoder;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod numerics;
pub mod replay;
pub mod rl;

pub use error::{Error, Result};
