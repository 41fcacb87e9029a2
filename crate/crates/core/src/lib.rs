//! Interactive instruction-following navigation on synthetic graph worlds.
//!
//! Agents read a procedurally generated instruction, walk a viewpoint graph
//! and may ask an oracle (optionally noisy) for the next move. The crate
//! holds the world generator, a small reverse-mode tensor engine, the
//! attention policy, imitation + actor-critic training with distance and
//! deviation shaping, the confusion-threshold and learned-ask runners,
//! evaluation sweeps, and the interaction-driven data augmentation loop.

pub mod augment;
pub mod config;
pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod interact;
pub mod lang;
pub mod oracle;
pub mod policy;
pub mod report;
pub mod seed;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
