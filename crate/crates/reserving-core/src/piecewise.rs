//! Piecewise-constant functions on a bin grid over `[0, ∞)`.
//!
//! Both the simulator's generative reporting-delay hazard and the fitted
//! delay model use step hazards on such a grid, which keeps every cumulative
//! hazard (and its inverse, needed for sampling) exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A grid of half-open bins `[e_0, e_1), [e_1, e_2), ..., [e_{B-1}, ∞)`
/// with `e_0 = 0` and strictly increasing edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    edges: Vec<f64>,
}

impl BinGrid {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::invalid("bin grid must have at least one edge"));
        }
        if edges[0] != 0.0 {
            return Err(Error::invalid("bin grid must start at 0"));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("bin edges must be finite and strictly increasing"));
        }
        Ok(Self { edges })
    }

    /// Quantile-based grid: edges at the `k/n_bins` quantiles of `values`,
    /// deduplicated; the last bin is open. Falls back to fewer bins when the
    /// data has heavy ties.
    pub fn from_quantiles(values: &[f64], n_bins: usize) -> Result<Self> {
        if values.is_empty() || n_bins == 0 {
            return Err(Error::invalid("need observations and n_bins >= 1"));
        }
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut edges = vec![0.0];
        for k in 1..n_bins {
            let q = k as f64 / n_bins as f64;
            let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
            let e = sorted[idx];
            if e > *edges.last().unwrap() {
                edges.push(e);
            }
        }
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len()
    }

    /// Index of the bin containing `u >= 0`.
    pub fn locate(&self, u: f64) -> usize {
        match self.edges.binary_search_by(|e| e.partial_cmp(&u).unwrap()) {
            Ok(b) => b,
            Err(ins) => ins - 1,
        }
    }

    /// Overlap length of `[0, u]` with each bin.
    pub fn overlaps(&self, u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bins()];
        self.overlaps_into(u, &mut out);
        out
    }

    pub fn overlaps_into(&self, u: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_bins());
        for (b, slot) in out.iter_mut().enumerate() {
            let lo = self.edges[b];
            let hi = self.edges.get(b + 1).copied().unwrap_or(f64::INFINITY);
            *slot = (u.min(hi) - lo).max(0.0);
        }
    }

    /// Exact integral of the step function with per-bin `rates` over `[0, u]`.
    pub fn integrate(&self, rates: &[f64], u: f64) -> f64 {
        debug_assert_eq!(rates.len(), self.n_bins());
        let mut total = 0.0;
        for (b, &rate) in rates.iter().enumerate() {
            let lo = self.edges[b];
            if u <= lo {
                break;
            }
            let hi = self.edges.get(b + 1).copied().unwrap_or(f64::INFINITY);
            total += rate * (u.min(hi) - lo);
        }
        total
    }

    /// Inverse of `integrate`: the `u` with `integrate(rates, u) == target`.
    /// All rates must be positive (the last bin is open, so a solution always
    /// exists).
    pub fn invert_integral(&self, rates: &[f64], target: f64) -> f64 {
        debug_assert!(rates.iter().all(|&r| r > 0.0));
        let mut remaining = target;
        for (b, &rate) in rates.iter().enumerate() {
            let lo = self.edges[b];
            let hi = self.edges.get(b + 1).copied().unwrap_or(f64::INFINITY);
            let capacity = rate * (hi - lo);
            if remaining <= capacity || b == rates.len() - 1 {
                return lo + remaining / rate;
            }
            remaining -= capacity;
        }
        unreachable!("last bin is open");
    }
}
