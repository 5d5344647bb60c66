//! Core claim/portfolio types, the reported/unreported partition at a
//! valuation time, and the odds-ratio weight primitive.
//!
//! A claim with accident time `T` and reporting delay `U` is known to the
//! insurer at valuation time `τ` iff `T + U <= τ`. All types are immutable
//! after construction and all operations are pure, so everything here is safe
//! to share across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clamp floor for inclusion probabilities. Odds-ratio weights
/// `(1-π)/π` explode as `π → 0`; clamping at construction is the standard
/// IPW stabilization and is recorded on the container for auditability.
pub const DEFAULT_CLAMP_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClaimId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PolicyId(pub u64);

/// One claim record. `severity` is the incurred loss; `covariates` is the
/// pre-encoded numeric design row matching the portfolio covariate schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: ClaimId,
    pub policy_id: PolicyId,
    pub accident_time: f64,
    pub report_delay: f64,
    pub severity: f64,
    pub covariates: Vec<f64>,
}

impl Claim {
    /// Reporting time `R = T + U`.
    pub fn report_time(&self) -> f64 {
        self.accident_time + self.report_delay
    }
}

/// One policy (contract) with exposure and covariate design row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub policy_id: PolicyId,
    pub exposure: f64,
    pub contract_start: f64,
    pub contract_end: f64,
    pub covariates: Vec<f64>,
}

/// Policies with their claims. Construction validates the cross-references;
/// afterwards the portfolio is immutable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Portfolio {
    policies: Vec<PolicyRecord>,
    claims: Vec<Claim>,
    covariate_schema: Vec<String>,
}

impl Portfolio {
    pub fn new(
        policies: Vec<PolicyRecord>,
        claims: Vec<Claim>,
        covariate_schema: Vec<String>,
    ) -> Result<Self> {
        let d = covariate_schema.len();
        let mut index = std::collections::HashMap::with_capacity(policies.len());
        for (i, p) in policies.iter().enumerate() {
            if !(p.exposure > 0.0) {
                return Err(Error::invalid(format!(
                    "policy {} has non-positive exposure",
                    p.policy_id.0
                )));
            }
            if !(p.contract_start < p.contract_end) {
                return Err(Error::invalid(format!(
                    "policy {} has empty contract window",
                    p.policy_id.0
                )));
            }
            if p.covariates.len() != d {
                return Err(Error::SchemaMismatch(format!(
                    "policy {} has {} covariates, schema has {}",
                    p.policy_id.0,
                    p.covariates.len(),
                    d
                )));
            }
            if index.insert(p.policy_id, i).is_some() {
                return Err(Error::invalid(format!("duplicate policy id {}", p.policy_id.0)));
            }
        }
        for c in &claims {
            if !(c.report_delay >= 0.0 && c.severity > 0.0 && c.accident_time >= 0.0) {
                return Err(Error::invalid(format!(
                    "claim {} violates U >= 0, Y > 0, T >= 0",
                    c.claim_id.0
                )));
            }
            if c.covariates.len() != d {
                return Err(Error::SchemaMismatch(format!(
                    "claim {} has {} covariates, schema has {}",
                    c.claim_id.0,
                    c.covariates.len(),
                    d
                )));
            }
            let Some(&pi) = index.get(&c.policy_id) else {
                return Err(Error::invalid(format!(
                    "claim {} references unknown policy {}",
                    c.claim_id.0, c.policy_id.0
                )));
            };
            let p = &policies[pi];
            if c.accident_time < p.contract_start || c.accident_time > p.contract_end {
                return Err(Error::invalid(format!(
                    "claim {} accident time {} outside contract window [{}, {}]",
                    c.claim_id.0, c.accident_time, p.contract_start, p.contract_end
                )));
            }
        }
        Ok(Self { policies, claims, covariate_schema })
    }

    pub fn policies(&self) -> &[PolicyRecord] {
        &self.policies
    }

    pub fn claims(&self) -> &[Claim] {
        &self.claims
    }

    pub fn covariate_schema(&self) -> &[String] {
        &self.covariate_schema
    }

    pub fn policy(&self, id: PolicyId) -> Option<&PolicyRecord> {
        // Portfolios are usually built with ids in order; fall back to scan.
        self.policies.iter().find(|p| p.policy_id == id)
    }
}

/// The reported/unreported split of a portfolio's claim index set at `tau`.
///
/// `unreported_idx` is only meaningful when the portfolio carries ground
/// truth (simulation or backtest); on production data it is simply empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationContext {
    pub tau: f64,
    pub reported_idx: Vec<usize>,
    pub unreported_idx: Vec<usize>,
}

/// Splits claims by the rule `T + U <= tau`. Deterministic and invariant to
/// claim ordering (indices come out in portfolio order).
pub fn partition(portfolio: &Portfolio, tau: f64) -> Result<ValuationContext> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
    }
    let mut reported_idx = Vec::new();
    let mut unreported_idx = Vec::new();
    for (i, c) in portfolio.claims().iter().enumerate() {
        if c.report_time() <= tau {
            reported_idx.push(i);
        } else {
            unreported_idx.push(i);
        }
    }
    Ok(ValuationContext { tau, reported_idx, unreported_idx })
}

/// The odds-ratio weight `(1 - π)/π`: the frequency ratio of unreported to
/// reported claims with like characteristics. Callers must clamp first;
/// `π` outside `(0, 1]` is rejected.
pub fn odds_ratio(pi: f64) -> Result<f64> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::invalid(format!("pi must lie in (0, 1], got {pi}")));
    }
    Ok((1.0 - pi) / pi)
}

/// Where a set of inclusion probabilities came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiSource {
    /// Fitted reporting-delay model.
    Model,
    /// Reciprocal chain-ladder development-to-ultimate factors.
    ChainLadderImplied,
    /// Generative (simulation) truth.
    Oracle,
}

/// Per-claim inclusion probabilities `π̂_i(τ)`, clamped into
/// `[clamp_floor, 1]` at construction. Aligned with the `reported_idx` of the
/// paired [`ValuationContext`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionProbabilities {
    values: Vec<f64>,
    source: PiSource,
    clamp_floor: f64,
    n_clamped: usize,
}

impl InclusionProbabilities {
    /// Clamps every raw value into `[clamp_floor, 1]` and records how many
    /// needed it.
    pub fn new(raw: Vec<f64>, source: PiSource, clamp_floor: f64) -> Result<Self> {
        if !(clamp_floor > 0.0 && clamp_floor < 1.0) {
            return Err(Error::invalid("clamp_floor must lie in (0, 1)"));
        }
        let mut n_clamped = 0;
        let values = raw
            .into_iter()
            .map(|p| {
                if !p.is_finite() {
                    n_clamped += 1;
                    return clamp_floor;
                }
                if p < clamp_floor || p > 1.0 {
                    n_clamped += 1;
                }
                p.clamp(clamp_floor, 1.0)
            })
            .collect();
        Ok(Self { values, source, clamp_floor, n_clamped })
    }

    pub fn with_default_floor(raw: Vec<f64>, source: PiSource) -> Result<Self> {
        Self::new(raw, source, DEFAULT_CLAMP_FLOOR)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn source(&self) -> PiSource {
        self.source
    }

    pub fn clamp_floor(&self) -> f64 {
        self.clamp_floor
    }

    pub fn n_clamped(&self) -> usize {
        self.n_clamped
    }

    /// Odds-ratio weights for every stored probability. Safe by construction:
    /// stored values lie in `[clamp_floor, 1]`.
    pub fn odds_ratios(&self) -> Vec<f64> {
        self.values.iter().map(|&p| (1.0 - p) / p).collect()
    }
}
