//! Simulation and verification toolkit for occupation time fluctuations of
//! critical branching particle systems with symmetric α-stable motion.
//!
//! The crate covers exact stable sampling and Fourier evaluation of the
//! stable semigroup ([`stable_motion`]), critical offspring laws
//! ([`offspring`]), the particle simulator ([`particle_system`]), occupation
//! functionals ([`occupation`]), closed-form limit oracles ([`limit_oracle`]),
//! replicated experiments with error bars ([`mc_stats`]) and the command-line
//! front end ([`cli`], [`config`]).

pub mod cli;
pub mod config;
pub mod error;
pub mod limit_oracle;
pub mod mc_stats;
pub mod occupation;
pub mod offspring;
pub mod particle_system;
pub mod quadrature;
pub mod special;
pub mod stable_motion;

pub use error::{Error, Result};
