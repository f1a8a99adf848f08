//! Iterated 2x2 matrix games with intrinsic moral rewards.
//!
//! The crate trains tabular softmax agents with clipped-surrogate PPO against
//! fixed strategies or against each other, evaluates frozen agents under a
//! fixed protocol (moral regret, conditional action frequencies, reciprocity,
//! token-permutation probes), and handles the experiment plumbing: flat
//! config files, seeded sweeps, and CSV/SVG reports.

pub mod config;
pub mod error;
pub mod eval;
pub mod game;
pub mod opponents;
pub mod policy;
pub mod report;
pub mod rewards;
pub mod sweep;
pub mod trainer;

pub use error::{CoreError, Result};
