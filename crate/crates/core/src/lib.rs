//! Round-robin quantum secret sharing between two players and a dealer.
//!
//! Alice and Bob each send a train of `L` phase-encoded weak pulses to the
//! dealer Charlie, who interferes Alice's pulse `j_A` with Bob's pulse `i_B`
//! after a random shift `j_A - i_B = (-1)^b r` and keeps trains with exactly one
//! detector click. This crate provides:
//!
//! * [`model`]: fiber and detector constants, per-arm transmittance and the PLOB bound.
//! * [`keyrate`]: gain, error rates and asymptotic or finite-size key rates
//!   against an outside eavesdropper or a dishonest player.
//! * [`optimizer`]: grid plus golden-section search over `(mu, nu_th, L)`.
//! * [`sim`]: a seeded Monte-Carlo simulator of the protocol rounds.
//! * [`security`]: a numerical check that the interference and location
//!   measurements produce the same announcement statistics.
//!
//! The guide under `book/` walks through each of these; its Rust snippets run
//! as doc-tests of this crate.

pub mod error;
pub mod keyrate;
pub mod model;
pub mod optimizer;
pub mod security;
pub mod sim;

pub use error::{Error, Result};
pub use keyrate::{FiniteSizeParams, ProtocolParams, RateBreakdown};
pub use model::{Geometry, SystemParams};
pub use optimizer::{optimize, Objective, OptimizationResult, SearchSpace};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/keyrate.md")]
    mod keyrate {}
    #[doc = include_str!("../../../book/src/finite_size.md")]
    mod finite_size {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/equivalence.md")]
    mod equivalence {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
