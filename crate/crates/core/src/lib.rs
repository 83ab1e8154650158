//! Relative Morse index, gradient-like flows and mod-2 Morse homology for the
//! strongly indefinite quasilinear functional
//!
//! ```text
//! f(u,v) = 1/(2p) ∫ (1+|∇u|²)^p − 1/(2q) ∫ (1+|∇v|²)^q − ∫ G(u,v)
//! ```
//!
//! discretized with piecewise-linear Dirichlet elements on an interval or a
//! rectangle. The crate is `no_std` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]
// float methods resolve through `num_traits::Float` on older toolchains and inherently on newer ones
#![allow(unused_imports)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod banded;
pub mod complex;
pub mod critical;
pub mod duality;
pub mod error;
pub mod flow;
pub mod fredholm;
pub mod functional;
pub mod gf2;
pub mod mesh;
pub mod nonlinearity;
pub mod spectral;

pub use error::{Error, Result};
