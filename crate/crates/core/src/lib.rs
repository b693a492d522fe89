//! Selective state-space (S6) layers and the token dynamics they induce.
//!
//! Reading the layer index of a deep S6 stack as time turns the stack into an
//! ODE on the token sequence. This crate provides the discrete layer in both
//! its recurrent and hidden-attention forms ([`s6`]), the continuous-time
//! dynamics with blow-up-aware integrators ([`dynamics`], [`ode`]), regime
//! classification ([`scenario`]), rate estimation ([`rates`]), SoftSort token
//! reordering ([`reorder`]) and an eigenvalue-sign-constrained
//! parameterization of the input/output matrices ([`parameterization`]).
//!
//! ```
//! use s6_dynamics::{fixtures, scenario::{classify, ScenarioLabel}};
//!
//! let f = fixtures::convergence();
//! let report = classify(&f.params, &f.x0).unwrap();
//! assert_eq!(report.label, ScenarioLabel::Convergence);
//! ```
//!
//! The guide under `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

pub mod dynamics;
pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod ode;
pub mod parameterization;
pub mod rates;
pub mod reorder;
pub mod s6;
pub mod scenario;

pub use error::{Error, Result};
pub use linalg::{Matrix, SymmetricSpectrum};
pub use s6::{HiddenAttention, S6Params, TokenSequence};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/s6-layer.md")]
    mod s6_layer {}
    #[doc = include_str!("../../../book/src/token-dynamics.md")]
    mod token_dynamics {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/rates.md")]
    mod rates {}
    #[doc = include_str!("../../../book/src/reordering.md")]
    mod reordering {}
    #[doc = include_str!("../../../book/src/parameterization.md")]
    mod parameterization {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
