//! Anytime lower/upper bounds on feedforward network outputs via Lagrangian
//! decomposition of the Planet relaxation, plus the machinery around them:
//!
//! - [`net`]: dense/convolutional networks with forward and adjoint passes.
//! - [`prebounds`]: interval propagation, the backward-pass dual bound and
//!   per-layer intermediate bounds.
//! - [`hulls`]: convex hulls of ReLU and sigmoid activations and the scalar
//!   minimization primitives every dual solver reduces to.
//! - [`decomp`]: the decomposition dual, its supergradient solver and the
//!   proximal solver with Frank-Wolfe inner steps.
//! - [`djdual`]: the baseline Lagrangian-relaxation dual and the bridge that
//!   maps its solutions into the decomposition dual.
//! - [`oracle`]: ground truth at small scale (explicit LP + dense simplex,
//!   exact minimization by activation-pattern enumeration).
//! - [`bab`]: a best-first branch-and-bound complete verifier that can use
//!   any of the bounding methods as its lower-bound subroutine.
//!
//! Per-neuron and per-subproblem work is data-parallel via rayon when the
//! `parallel` feature (default) is enabled; results are deterministic and
//! independent of worker count because reductions always run in input order.

// index-based loops are kept where they read better than iterator chains
// over several parallel arrays
#![allow(clippy::needless_range_loop)]

pub mod bab;
pub mod decomp;
pub mod djdual;
pub mod domain;
mod error;
pub mod hulls;
pub mod net;
pub mod oracle;
mod par;
pub mod prebounds;
pub mod tensor;

#[cfg(any(test, feature = "test-utils"))]
pub mod testgen;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub(crate) mod opt;
