//! Large deviations of constant-step stochastic approximation with
//! state-dependent Markov noise, with regret matching on graph games as the
//! driving example.
//!
//! The crate covers finite Markov kernels ([`markov`]), the regret-matching
//! recursion ([`game`]) and its embedding as a general recursion ([`sa`],
//! [`embed`]), the mean ODE ([`fluid`]), local rates and path actions
//! ([`rate`]), and controlled simulation for escape events ([`rare`]).

// `!(v > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embed;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod fluid;
pub mod game;
pub mod markov;
pub mod numeric;
pub mod rare;
pub mod rate;
pub mod sa;

pub use error::{Error, Result};
