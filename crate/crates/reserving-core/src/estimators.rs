//! Reserve estimators: chain ladder, IPW, AIPW (model + odds-weighted error
//! correction), the AIPW-CL hybrid, micro-level totals, and the linear
//! credibility estimator with its AIPW rearrangement.

use serde::{Deserialize, Serialize};

use crate::claims::{InclusionProbabilities, Portfolio, ValuationContext};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriangleKind {
    Amounts,
    Counts,
}

/// Cumulative run-off triangle: `rows[a][d]` is the cumulative reported
/// amount (or count) of accident period `a` at development period `d`.
/// Row lengths are nonincreasing (upper-left run-off shape).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub origin: f64,
    pub width: f64,
    pub kind: TriangleKind,
    rows: Vec<Vec<f64>>,
}

/// Period index of time `t` on the grid `[origin + k·width)`. Ties at bucket
/// edges go to the earlier bucket.
fn bucket(origin: f64, width: f64, t: f64) -> usize {
    let v = (t - origin) / width;
    let f = v.floor();
    if v > 0.0 && v == f {
        f as usize - 1
    } else {
        f as usize
    }
}

impl Triangle {
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        origin: f64,
        width: f64,
        kind: TriangleKind,
    ) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::invalid("triangle needs at least one cell"));
        }
        for pair in rows.windows(2) {
            if pair[1].len() > pair[0].len() {
                return Err(Error::invalid("triangle rows must have nonincreasing lengths"));
            }
        }
        for (a, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::invalid(format!("triangle row {a} is empty")));
            }
            if row.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid(format!(
                    "cumulative amounts must be nondecreasing along development (row {a})"
                )));
            }
        }
        if !(width > 0.0) {
            return Err(Error::invalid("period width must be positive"));
        }
        Ok(Self { origin, width, kind, rows })
    }

    /// Builds the reported triangle at `ctx.tau`. Accident period
    /// `a = bucket(T)`, development period `d = bucket(T + U) - a`.
    pub fn from_reported(
        portfolio: &Portfolio,
        ctx: &ValuationContext,
        origin: f64,
        width: f64,
        kind: TriangleKind,
    ) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::invalid("period width must be positive"));
        }
        if ctx.tau <= origin {
            return Err(Error::invalid("tau must exceed the triangle origin"));
        }
        let calendar = bucket(origin, width, ctx.tau);
        let n_rows = calendar + 1;
        let mut increments = vec![vec![0.0; n_rows]; n_rows];
        for &i in &ctx.reported_idx {
            let c = &portfolio.claims()[i];
            if c.accident_time < origin {
                return Err(Error::invalid(format!(
                    "claim {} precedes the triangle origin",
                    c.claim_id.0
                )));
            }
            let a = bucket(origin, width, c.accident_time.max(origin + f64::EPSILON));
            let d = bucket(origin, width, c.report_time()) - a;
            let value = match kind {
                TriangleKind::Amounts => c.severity,
                TriangleKind::Counts => 1.0,
            };
            increments[a][d.min(n_rows - 1 - a)] += value;
        }
        let rows = increments
            .into_iter()
            .enumerate()
            .map(|(a, incs)| {
                let mut cum = Vec::with_capacity(n_rows - a);
                let mut acc = 0.0;
                for d in 0..n_rows - a {
                    acc += incs[d];
                    cum.push(acc);
                }
                cum
            })
            .collect();
        Ok(Self { origin, width, kind, rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_cohorts(&self) -> usize {
        self.rows.len()
    }

    /// Maximum development index (assumed fully developed there).
    pub fn max_dev(&self) -> usize {
        self.rows[0].len() - 1
    }

    pub fn accident_bucket(&self, t: f64) -> usize {
        bucket(self.origin, self.width, t)
    }

    /// Latest observed cumulative value of row `a`.
    pub fn latest(&self, a: usize) -> f64 {
        *self.rows[a].last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    ChainLadder,
    Ipw,
    Aipw,
    AipwCl,
    Ml,
    MlWbp,
    MlWl,
    Credibility,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::ChainLadder => "CL",
            EstimatorKind::Ipw => "IPW",
            EstimatorKind::Aipw => "AIPW",
            EstimatorKind::AipwCl => "AIPW-CL",
            EstimatorKind::Ml => "ML",
            EstimatorKind::MlWbp => "ML-wBP",
            EstimatorKind::MlWl => "ML-WL",
            EstimatorKind::Credibility => "CRED",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Some(match label {
            "CL" => EstimatorKind::ChainLadder,
            "IPW" => EstimatorKind::Ipw,
            "AIPW" => EstimatorKind::Aipw,
            "AIPW-CL" => EstimatorKind::AipwCl,
            "ML" => EstimatorKind::Ml,
            "ML-wBP" => EstimatorKind::MlWbp,
            "ML-WL" => EstimatorKind::MlWl,
            "CRED" => EstimatorKind::Credibility,
            _ => return None,
        })
    }

    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::ChainLadder,
        EstimatorKind::Ipw,
        EstimatorKind::Aipw,
        EstimatorKind::AipwCl,
        EstimatorKind::Ml,
        EstimatorKind::MlWbp,
        EstimatorKind::MlWl,
        EstimatorKind::Credibility,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub min_pi: f64,
    pub max_pi: f64,
    pub n_clamped: usize,
}

impl WeightDiagnostics {
    fn from_pis(pis: &InclusionProbabilities) -> Option<Self> {
        if pis.is_empty() {
            return None;
        }
        let min_pi = pis.values().iter().copied().fold(f64::INFINITY, f64::min);
        let max_pi = pis.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { min_pi, max_pi, n_clamped: pis.n_clamped() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub method: String,
}

/// A reserve point estimate with its decomposition and weight diagnostics.
/// For AIPW estimators `point = model_term + augmentation_term` exactly; for
/// IPW `point = ipw_term` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveEstimate {
    pub estimator: EstimatorKind,
    pub point: f64,
    pub model_term: Option<f64>,
    pub augmentation_term: Option<f64>,
    pub ipw_term: Option<f64>,
    pub weight_diag: Option<WeightDiagnostics>,
    pub interval: Option<Interval>,
}

impl ReserveEstimate {
    fn bare(estimator: EstimatorKind, point: f64) -> Self {
        Self {
            estimator,
            point,
            model_term: None,
            augmentation_term: None,
            ipw_term: None,
            weight_diag: None,
            interval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLadderResult {
    pub estimate: ReserveEstimate,
    /// Development factors `f_d` (dev `d` to `d+1`), volume-weighted.
    pub factors: Vec<f64>,
    /// Development-to-ultimate factor per accident cohort.
    pub ultimate_factors: Vec<f64>,
    /// Implied inclusion probability per cohort: `π = 1/f^{ult}`.
    pub implied_pi: Vec<f64>,
    pub ultimates: Vec<f64>,
}

/// Volume-weighted chain ladder. Reserve
/// `Σ_k latest_k · (f_k^{ult} - 1)`; implied cohort probabilities `1/f^{ult}`.
pub fn chain_ladder(triangle: &Triangle) -> Result<ChainLadderResult> {
    let k = triangle.n_cohorts();
    let max_dev = triangle.max_dev();
    let mut factors = Vec::with_capacity(max_dev);
    for d in 0..max_dev {
        let mut num = 0.0;
        let mut den = 0.0;
        for row in triangle.rows() {
            if row.len() > d + 1 {
                num += row[d + 1];
                den += row[d];
            }
        }
        if den == 0.0 {
            return Err(Error::EstimatorUndefined(format!(
                "chain ladder: zero denominator at development column {d}"
            )));
        }
        factors.push(num / den);
    }
    let mut ultimate_factors = Vec::with_capacity(k);
    let mut implied_pi = Vec::with_capacity(k);
    let mut ultimates = Vec::with_capacity(k);
    let mut reserve = 0.0;
    for a in 0..k {
        let last_dev = triangle.rows()[a].len() - 1;
        let f_ult: f64 = factors[last_dev..max_dev].iter().product();
        let latest = triangle.latest(a);
        ultimate_factors.push(f_ult);
        implied_pi.push(1.0 / f_ult);
        ultimates.push(latest * f_ult);
        reserve += latest * (f_ult - 1.0);
    }
    let estimate = ReserveEstimate::bare(EstimatorKind::ChainLadder, reserve);
    Ok(ChainLadderResult { estimate, factors, ultimate_factors, implied_pi, ultimates })
}

/// IPW reserve `Σ (1-π̂_i)/π̂_i · Y_i` over the reported claims. Count mode is
/// the same call with `Y ≡ 1`.
pub fn ipw_reserve(ys: &[f64], pis: &InclusionProbabilities) -> Result<ReserveEstimate> {
    if ys.len() != pis.len() {
        return Err(Error::invalid("severities and probabilities must be aligned"));
    }
    let point: f64 = ys.iter().zip(pis.odds_ratios()).map(|(y, w)| w * y).sum();
    Ok(ReserveEstimate {
        ipw_term: Some(point),
        weight_diag: WeightDiagnostics::from_pis(pis),
        ..ReserveEstimate::bare(EstimatorKind::Ipw, point)
    })
}

fn augmented(
    kind: EstimatorKind,
    ys: &[f64],
    yhats: &[f64],
    model_ibnr_total: f64,
    pis: &InclusionProbabilities,
) -> Result<ReserveEstimate> {
    if ys.len() != yhats.len() || ys.len() != pis.len() {
        return Err(Error::invalid("severities, predictions and probabilities must be aligned"));
    }
    let augmentation: f64 =
        ys.iter().zip(yhats).zip(pis.odds_ratios()).map(|((y, yh), w)| w * (y - yh)).sum();
    Ok(ReserveEstimate {
        point: model_ibnr_total + augmentation,
        model_term: Some(model_ibnr_total),
        augmentation_term: Some(augmentation),
        weight_diag: WeightDiagnostics::from_pis(pis),
        ..ReserveEstimate::bare(kind, 0.0)
    })
}

/// AIPW reserve: the model's IBNR total plus the odds-weighted prediction
/// errors on reported claims,
/// `Σ_{IBNR} Ŷ + Σ_{reported} (1-π̂)/π̂ (Y - Ŷ)`.
/// The augmentation term estimates minus the model bias and is reported
/// separately.
pub fn aipw_reserve(
    ys: &[f64],
    yhats: &[f64],
    model_ibnr_total: f64,
    pis: &InclusionProbabilities,
) -> Result<ReserveEstimate> {
    augmented(EstimatorKind::Aipw, ys, yhats, model_ibnr_total, pis)
}

/// AIPW with chain-ladder-implied cohort probabilities.
pub fn aipw_cl_reserve(
    ys: &[f64],
    yhats: &[f64],
    model_ibnr_total: f64,
    cl_pis: &InclusionProbabilities,
) -> Result<ReserveEstimate> {
    augmented(EstimatorKind::AipwCl, ys, yhats, model_ibnr_total, cl_pis)
}

/// Micro-level reserve `Σ_j λ_j^{IBNR} Ŷ_j`. The ML-wBP and ML-WL variants
/// are the same sum with the calibrated / weighted-likelihood severity model
/// injected upstream.
pub fn ml_reserve(lambdas: &[f64], yhats: &[f64], kind: EstimatorKind) -> Result<ReserveEstimate> {
    if lambdas.len() != yhats.len() {
        return Err(Error::invalid("lambdas and predictions must be aligned"));
    }
    if !matches!(kind, EstimatorKind::Ml | EstimatorKind::MlWbp | EstimatorKind::MlWl) {
        return Err(Error::invalid("ml_reserve expects an ML-family estimator kind"));
    }
    let point: f64 = lambdas.iter().zip(yhats).map(|(l, y)| l * y).sum();
    Ok(ReserveEstimate {
        model_term: Some(point),
        ..ReserveEstimate::bare(kind, point)
    })
}

/// Linear credibility ultimate `Z·L̂_CL + (1-Z)·L̂_E`, with its AIPW
/// rearrangement `L̂_E + Z (L^R - L̂_E π^{CL}) / π^{CL}` stored as
/// `model_term + augmentation_term`; the two forms agree up to rounding.
pub fn credibility_reserve(
    cl_ultimate: f64,
    expert_ultimate: f64,
    z: f64,
    cl_pi: f64,
) -> Result<ReserveEstimate> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::invalid(format!("credibility factor must lie in [0,1], got {z}")));
    }
    if !(cl_pi > 0.0 && cl_pi <= 1.0) {
        return Err(Error::invalid(format!("implied pi must lie in (0,1], got {cl_pi}")));
    }
    let convex = z * cl_ultimate + (1.0 - z) * expert_ultimate;
    // L^R is recovered from the CL identity: ultimate = L^R / π.
    let reported = cl_ultimate * cl_pi;
    let augmentation = z * (reported - expert_ultimate * cl_pi) / cl_pi;
    Ok(ReserveEstimate {
        point: convex,
        model_term: Some(expert_ultimate),
        augmentation_term: Some(augmentation),
        ..ReserveEstimate::bare(EstimatorKind::Credibility, 0.0)
    })
}
