//! Nonsmooth Newton-like flows `0 ∈ ∂φ₁(x) + ∂φ₂(x) + DF(x)(ẋ)` for composite
//! objectives `φ = φ₁ + φ₂`.
//!
//! The crate is organised bottom-up:
//!
//! * [`problem`]: objective oracles, subgradient selection, stationarity
//!   residuals and hypomonotonicity (plr) certificates.
//! * [`smoothing`]: proximal maps, Moreau envelopes and mollifier smoothing.
//! * [`operator`]: the preconditioning map `F`, its directional derivative,
//!   lower-definiteness probing and the contraction-based local inverse.
//! * [`flow`]: the semi-implicit integrator built on the integral form
//!   `F(x(t)) = F(x₀) − ∫ v ds`, with discrete energy enforcement.
//! * [`analysis`]: ω-limit clustering, subregularity and KL certificates,
//!   rate classification.
//! * [`zoo`] and [`experiment`]: benchmark problems with analytic references,
//!   run orchestration and persisted reports.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod flow;
mod hull;
pub mod operator;
pub mod problem;
pub mod quadrature;
pub mod smoothing;
pub mod zoo;

pub use error::{Error, Result};

/// Dense column vector used for points, subgradients and directions.
pub type Vector = nalgebra::DVector<f64>;
