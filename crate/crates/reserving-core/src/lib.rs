//! IBNR claim reserving through the lens of population sampling.
//!
//! Reported claims at a valuation time `τ` are treated as a Poisson sample
//! from the population of all incurred claims, with per-claim inclusion
//! probabilities `π_i(τ)` driven by the reporting-delay distribution. On top
//! of this the crate provides:
//!
//! - a reporting-delay model (right-truncated piecewise-exponential hazard)
//!   producing `π̂_i(τ)` and policy-level averages `p_j(τ)` ([`delay`]);
//! - ZINB claim counts with thinning offsets and the closed-form conditional
//!   IBNR count law ([`frequency`]);
//! - lognormal severity in plain, odds-weighted, and balance-calibrated
//!   modes ([`severity`]);
//! - the reserve estimator suite: chain ladder, IPW, AIPW, AIPW-CL,
//!   micro-level totals and linear credibility ([`estimators`]);
//! - pseudo-populations of unreported claims and bootstrap intervals
//!   ([`synthetic`]);
//! - a claims simulator with exact ground truth ([`simulator`]) and the
//!   backtest / Monte-Carlo validation harness ([`harness`]).

pub mod claims;
pub mod delay;
pub mod error;
pub mod estimators;
pub mod frequency;
pub mod harness;
pub mod io;
pub mod optim;
pub mod piecewise;
pub mod quadrature;
pub mod sampling;
pub mod severity;
pub mod simulator;
pub mod streams;
pub mod synthetic;

pub use claims::{
    odds_ratio, partition, Claim, ClaimId, InclusionProbabilities, PiSource, PolicyId,
    PolicyRecord, Portfolio, ValuationContext, DEFAULT_CLAMP_FLOOR,
};
pub use error::{Error, Result};
