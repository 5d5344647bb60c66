//! Pseudo-populations of unreported claims and bootstrap intervals.
//!
//! Each reported claim stands in for `(1-π̂_i)/π̂_i` unreported like-claims
//! (fixed mode), or for a random `Z_i ~ Geom(π̂_i)` of them (stochastic mode,
//! counting failures before the first success, so `E[Z_i]` equals the fixed
//! weight). Totals over stochastic replicates bootstrap the IPW reserve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::InclusionProbabilities;
use crate::error::{Error, Result};
use crate::sampling;
use crate::streams::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoMode {
    Fixed,
    Stochastic { seed: u64, replicate: u64 },
}

/// Replication weights over the reported claims (aligned with the
/// probability vector they were built from).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoPopulation {
    /// `(reported-claim index, replication weight)`.
    pub rows: Vec<(usize, f64)>,
    pub mode: PseudoMode,
}

impl PseudoPopulation {
    pub fn weights(&self) -> Vec<f64> {
        self.rows.iter().map(|&(_, w)| w).collect()
    }

    /// Weighted severity total `Σ w_i Y_i`.
    pub fn weighted_total(&self, ys: &[f64]) -> f64 {
        self.rows.iter().map(|&(i, w)| w * ys[i]).sum()
    }
}

/// Fixed-weight pseudo-population: weight `(1-π̂_i)/π̂_i` per reported claim.
/// Its weighted severity total equals the IPW reserve exactly.
pub fn fixed_pseudo_population(pis: &InclusionProbabilities) -> PseudoPopulation {
    let rows = pis.odds_ratios().into_iter().enumerate().collect();
    PseudoPopulation { rows, mode: PseudoMode::Fixed }
}

/// Stochastic pseudo-population: `Z_i ~ Geom(π̂_i)` failures before success,
/// drawn on the `(seed, replicate, claim)` substream.
pub fn geometric_pseudo_population(
    pis: &InclusionProbabilities,
    seed: u64,
    replicate: u64,
) -> PseudoPopulation {
    let rows = pis
        .values()
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let mut rng = substream(seed, &[0x47, replicate, i as u64]);
            (i, sampling::geometric_failures(&mut rng, pi) as f64)
        })
        .collect();
    PseudoPopulation { rows, mode: PseudoMode::Stochastic { seed, replicate } }
}

/// Right-continuous weighted empirical CDF
/// `F̂(y) = Σ w_i 1{Y_i <= y} / Σ w_i`.
#[derive(Debug, Clone)]
pub struct WeightedEcdf {
    /// Jump points `(y, F(y))`, strictly increasing in `y`.
    points: Vec<(f64, f64)>,
}

pub fn weighted_ecdf(pseudo: &PseudoPopulation, severities: &[f64]) -> Result<WeightedEcdf> {
    let mut pairs: Vec<(f64, f64)> =
        pseudo.rows.iter().map(|&(i, w)| (severities[i], w)).filter(|&(_, w)| w > 0.0).collect();
    let total: f64 = pairs.iter().map(|&(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedDistribution("weighted ECDF with zero total weight".into()));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    let mut acc = 0.0;
    for (y, w) in pairs {
        acc += w;
        match points.last_mut() {
            Some(last) if last.0 == y => last.1 = acc / total,
            _ => points.push((y, acc / total)),
        }
    }
    if let Some(last) = points.last_mut() {
        last.1 = 1.0;
    }
    Ok(WeightedEcdf { points })
}

/// Plain ECDF of a sample (unit weights).
pub fn ecdf(values: &[f64]) -> Result<WeightedEcdf> {
    let pseudo = PseudoPopulation {
        rows: (0..values.len()).map(|i| (i, 1.0)).collect(),
        mode: PseudoMode::Fixed,
    };
    weighted_ecdf(&pseudo, values)
}

impl WeightedEcdf {
    pub fn eval(&self, y: f64) -> f64 {
        match self.points.binary_search_by(|p| p.0.partial_cmp(&y).unwrap()) {
            Ok(i) => self.points[i].1,
            Err(0) => 0.0,
            Err(i) => self.points[i - 1].1,
        }
    }

    /// Left limit `F(y-)`.
    fn eval_before(&self, y: f64) -> f64 {
        match self.points.binary_search_by(|p| p.0.partial_cmp(&y).unwrap()) {
            Ok(0) | Err(0) => 0.0,
            Ok(i) => self.points[i - 1].1,
            Err(i) => self.points[i - 1].1,
        }
    }

    pub fn jump_points(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|&(y, _)| y)
    }

    /// Kolmogorov–Smirnov distance between two step CDFs, exact over the
    /// union of jump points.
    pub fn ks_distance(&self, other: &WeightedEcdf) -> f64 {
        let mut worst: f64 = 0.0;
        for y in self.jump_points().chain(other.jump_points()) {
            worst = worst
                .max((self.eval(y) - other.eval(y)).abs())
                .max((self.eval_before(y) - other.eval_before(y)).abs());
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub replicate_mean: f64,
    pub n_replicates: usize,
}

/// Empirical quantile with linear interpolation on the sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One statistic per geometric replicate, parallel and reproducible:
/// replicate `b` sees the weights drawn on substreams `(seed, b, claim)`.
pub fn bootstrap_statistic<F>(
    pis: &InclusionProbabilities,
    n_replicates: usize,
    seed: u64,
    stat: F,
) -> Vec<f64>
where
    F: Fn(&PseudoPopulation) -> f64 + Sync,
{
    (0..n_replicates)
        .into_par_iter()
        .map(|b| stat(&geometric_pseudo_population(pis, seed, b as u64)))
        .collect()
}

/// Bootstrap interval for the IPW reserve from geometric-replicate totals
/// `Σ Z_i Y_i`, at the requested two-sided level.
pub fn bootstrap_reserve(
    ys: &[f64],
    pis: &InclusionProbabilities,
    n_replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapInterval> {
    if ys.len() != pis.len() {
        return Err(Error::invalid("severities and probabilities must be aligned"));
    }
    if n_replicates < 100 {
        return Err(Error::invalid("bootstrap needs at least 100 replicates"));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::invalid("interval level must lie in (0,1)"));
    }
    let mut totals = bootstrap_statistic(pis, n_replicates, seed, |pseudo| {
        pseudo.weighted_total(ys)
    });
    let replicate_mean = totals.iter().sum::<f64>() / totals.len() as f64;
    totals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    Ok(BootstrapInterval {
        lo: quantile(&totals, alpha),
        hi: quantile(&totals, 1.0 - alpha),
        level,
        replicate_mean,
        n_replicates,
    })
}
