//! Optimal harvesting of uneven-aged forest stands.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod evolutionary;
pub mod experiments;
pub mod fitness;
pub mod mip;
pub(crate) mod rollout;
pub mod schedule;
pub mod solver;
