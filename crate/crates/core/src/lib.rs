//! Two-timescale Volt/VAR control with bi-level off-policy reinforcement learning.
//!
//! The crate bundles a radial distribution-feeder simulator exposed as a
//! bi-level MDP ([`env`]), a small reverse-mode neural-network substrate
//! ([`nn`]), a continuous soft actor-critic for fast reactive-power devices
//! ([`fast_agent`]), a multi-discrete soft actor-critic for tap-changing
//! devices ([`slow_agent`]), the nested replay buffer with multi-timescale
//! off-policy correction ([`replay`]) and the training loop ([`trainer`]).

pub mod exec;
pub mod feeder;
pub mod grid;
pub mod profiles;
pub mod env;
pub mod nn;
pub mod fast_agent;
pub mod slow_agent;
pub mod replay;
pub mod trainer;

pub use exec::Exec;
