//! Reporting-delay model: right-truncated piecewise-exponential hazard fit,
//! inclusion probabilities `π̂_i(τ)` and policy-level average inclusion
//! probabilities `p_j(τ)`.
//!
//! The hazard is `λ(u) = λ₀(bin(u)) · exp(xᵀβ)` with a piecewise-constant
//! baseline on a quantile grid of the observed delays. Each reported claim
//! contributes the right-truncated density `f(u_i) / F(τ - T_i)`, which keeps
//! naive delay fits from being biased by the fact that long delays cannot
//! have been observed yet.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::claims::{
    Claim, InclusionProbabilities, PiSource, Portfolio, ValuationContext, DEFAULT_CLAMP_FLOOR,
};
use crate::error::{Error, Result};
use crate::estimators::{self, TriangleKind};
use crate::optim::{self, NewtonOptions, Objective};
use crate::piecewise::BinGrid;
use crate::quadrature;

/// How claim severity enters the hazard design. Severity is observed for all
/// reported claims, so using it as a delay covariate is legitimate; for
/// policy-level probabilities it is plugged in at the portfolio median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeverityFeature {
    None,
    /// One column equal to `log Y`.
    LogLinear,
    /// Step effect: indicator columns for log-severity quantile bins
    /// (first bin is the reference level).
    Binned(usize),
}

/// Encodes claims and policies into hazard design rows. Frozen at fit time so
/// that probabilities for new claims/policies use the training encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    severity: SeverityFeature,
    /// Cut points of the log-severity bins (Binned mode).
    severity_cuts: Vec<f64>,
    /// Plug-in value for policy-level rows where severity is unknown.
    median_log_severity: f64,
    n_covariates: usize,
    /// Training means subtracted from every encoded row. Centering is
    /// absorbed by the baseline, so probabilities are unchanged, but it
    /// keeps the Newton system well conditioned (log severities sit far
    /// from zero).
    feature_means: Vec<f64>,
}

impl FeatureEncoder {
    /// Covariates-only encoder with no centering, for designs built outside
    /// a portfolio (tests, external data).
    pub fn linear(n_covariates: usize) -> Self {
        Self {
            severity: SeverityFeature::None,
            severity_cuts: vec![],
            median_log_severity: 0.0,
            n_covariates,
            feature_means: vec![0.0; n_covariates],
        }
    }

    fn from_reported(claims: &[&Claim], severity: SeverityFeature) -> Result<Self> {
        let n_covariates = claims.first().map_or(0, |c| c.covariates.len());
        let mut logs: Vec<f64> = claims.iter().map(|c| c.severity.ln()).collect();
        logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_log_severity =
            if logs.is_empty() { 0.0 } else { logs[logs.len() / 2] };
        let severity_cuts = match severity {
            SeverityFeature::Binned(k) => {
                if k < 2 {
                    return Err(Error::invalid("binned severity needs at least 2 bins"));
                }
                let mut cuts = Vec::with_capacity(k - 1);
                for j in 1..k {
                    let idx = ((logs.len() - 1) as f64 * j as f64 / k as f64).round() as usize;
                    let c = logs[idx];
                    if cuts.last().is_none_or(|&last| c > last) {
                        cuts.push(c);
                    }
                }
                cuts
            }
            _ => Vec::new(),
        };
        let mut encoder = Self {
            severity,
            severity_cuts,
            median_log_severity,
            n_covariates,
            feature_means: vec![],
        };
        let p = encoder.n_features();
        let mut means = vec![0.0; p];
        for c in claims {
            let row = encoder.encode_claim(c);
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= claims.len().max(1) as f64;
        }
        encoder.feature_means = means;
        Ok(encoder)
    }

    pub fn n_features(&self) -> usize {
        self.n_covariates
            + match self.severity {
                SeverityFeature::None => 0,
                SeverityFeature::LogLinear => 1,
                SeverityFeature::Binned(_) => self.severity_cuts.len(),
            }
    }

    /// Design row for a claim with known severity, centered at the
    /// training feature means.
    pub fn encode(&self, covariates: &[f64], log_severity: f64) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.n_features());
        row.extend_from_slice(covariates);
        match self.severity {
            SeverityFeature::None => {}
            SeverityFeature::LogLinear => row.push(log_severity),
            SeverityFeature::Binned(_) => {
                for &cut in &self.severity_cuts {
                    row.push(if log_severity >= cut { 1.0 } else { 0.0 });
                }
            }
        }
        for (v, m) in row.iter_mut().zip(&self.feature_means) {
            *v -= m;
        }
        row
    }

    pub fn encode_claim(&self, claim: &Claim) -> Vec<f64> {
        self.encode(&claim.covariates, claim.severity.ln())
    }

    /// Design row for a policy: severity term at the training median.
    pub fn encode_policy(&self, covariates: &[f64]) -> Vec<f64> {
        self.encode(covariates, self.median_log_severity)
    }
}

/// One reported claim as seen by the truncated likelihood.
#[derive(Debug, Clone)]
struct DelayObs {
    features: Vec<f64>,
    delay: f64,
    /// Right-truncation bound `τ - T_i >= delay`.
    truncation: f64,
}

/// Design matrix of the truncated fit, carrying the frozen feature encoder.
#[derive(Debug, Clone)]
pub struct DelayDesign {
    rows: Vec<DelayObs>,
    encoder: FeatureEncoder,
}

impl DelayDesign {
    /// Builds the design from the claims reported at `ctx.tau`.
    pub fn from_reported(
        portfolio: &Portfolio,
        ctx: &ValuationContext,
        severity: SeverityFeature,
    ) -> Result<Self> {
        let reported: Vec<&Claim> =
            ctx.reported_idx.iter().map(|&i| &portfolio.claims()[i]).collect();
        if reported.is_empty() {
            return Err(Error::invalid("no reported claims to fit the delay model on"));
        }
        let encoder = FeatureEncoder::from_reported(&reported, severity)?;
        let rows = reported
            .iter()
            .map(|c| DelayObs {
                features: encoder.encode_claim(c),
                delay: c.report_delay,
                truncation: ctx.tau - c.accident_time,
            })
            .collect();
        let design = Self { rows, encoder };
        design.validate()?;
        Ok(design)
    }

    /// Direct construction for tests and non-portfolio data.
    pub fn from_parts(
        features: Vec<Vec<f64>>,
        delays: Vec<f64>,
        truncations: Vec<f64>,
        encoder: FeatureEncoder,
    ) -> Result<Self> {
        if features.len() != delays.len() || delays.len() != truncations.len() {
            return Err(Error::invalid("delay design parts must have equal lengths"));
        }
        let rows = features
            .into_iter()
            .zip(delays)
            .zip(truncations)
            .map(|((features, delay), truncation)| DelayObs { features, delay, truncation })
            .collect();
        let design = Self { rows, encoder };
        design.validate()?;
        Ok(design)
    }

    /// Encoder for raw delay-only designs (no covariates, no severity term).
    pub fn plain_encoder() -> FeatureEncoder {
        FeatureEncoder {
            severity: SeverityFeature::None,
            severity_cuts: vec![],
            median_log_severity: 0.0,
            n_covariates: 0,
            feature_means: vec![],
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.encoder.n_features();
        for (i, r) in self.rows.iter().enumerate() {
            if r.features.len() != p {
                return Err(Error::SchemaMismatch(format!(
                    "delay design row {i} has {} features, expected {p}",
                    r.features.len()
                )));
            }
            if !(r.delay >= 0.0) || !(r.truncation >= r.delay) || !(r.truncation > 0.0) {
                return Err(Error::invalid(format!(
                    "delay design row {i}: need 0 <= delay <= truncation, truncation > 0 \
                     (delay {}, truncation {})",
                    r.delay, r.truncation
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn encoder(&self) -> &FeatureEncoder {
        &self.encoder
    }

    pub fn delays(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.delay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub log_likelihood: f64,
    pub ridge_escalated: bool,
    /// Asymptotic standard errors in parameter order (fit-specific layout).
    pub std_errors: Vec<f64>,
}

/// Fitted right-truncated piecewise-exponential reporting-delay model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    bins: BinGrid,
    /// `log λ₀` per bin.
    pub log_baseline: Vec<f64>,
    /// Coefficients over the encoded features.
    pub beta: Vec<f64>,
    pub encoder: FeatureEncoder,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Copy)]
pub struct DelayFitOptions {
    /// Baseline bins: quantile grid of observed delays, last bin open.
    pub n_bins: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Ridge on the Newton step and L2 penalty keeping the likelihood bounded.
    pub ridge: f64,
}

impl Default for DelayFitOptions {
    fn default() -> Self {
        Self { n_bins: 8, max_iter: 200, grad_tol: 1e-8, ridge: 1e-8 }
    }
}

/// Precomputed per-row quantities for the truncated likelihood.
struct TruncatedLikelihood<'a> {
    design: &'a DelayDesign,
    /// Overlap of `[0, u_i]` with each bin (row-major, n × B).
    event_overlap: Vec<f64>,
    /// Overlap of `[0, c_i]` with each bin.
    trunc_overlap: Vec<f64>,
    /// Bin containing the observed delay.
    event_bin: Vec<usize>,
    n_bins: usize,
    n_features: usize,
    penalty: f64,
}

impl<'a> TruncatedLikelihood<'a> {
    fn new(design: &'a DelayDesign, bins: BinGrid, penalty: f64) -> Self {
        let n = design.rows.len();
        let nb = bins.n_bins();
        let mut event_overlap = vec![0.0; n * nb];
        let mut trunc_overlap = vec![0.0; n * nb];
        let mut event_bin = Vec::with_capacity(n);
        for (i, row) in design.rows.iter().enumerate() {
            bins.overlaps_into(row.delay, &mut event_overlap[i * nb..(i + 1) * nb]);
            bins.overlaps_into(row.truncation, &mut trunc_overlap[i * nb..(i + 1) * nb]);
            event_bin.push(bins.locate(row.delay));
        }
        let n_features = design.encoder.n_features();
        Self {
            design,
            event_overlap,
            trunc_overlap,
            event_bin,
            n_bins: nb,
            n_features,
            penalty,
        }
    }

    fn split<'x>(&self, x: &'x DVector<f64>) -> (&'x [f64], &'x [f64]) {
        let s = x.as_slice();
        s.split_at(self.n_bins)
    }

    /// Unpenalized log-likelihood (stored on the fitted model).
    fn log_likelihood(&self, x: &DVector<f64>) -> f64 {
        let (alpha, beta) = self.split(x);
        let rates: Vec<f64> = alpha.iter().map(|a| a.exp()).collect();
        let mut ll = 0.0;
        for (i, row) in self.design.rows.iter().enumerate() {
            let eta: f64 = row.features.iter().zip(beta).map(|(a, b)| a * b).sum();
            let eh = eta.exp();
            let base = i * self.n_bins;
            let mut h = 0.0;
            let mut c = 0.0;
            for b in 0..self.n_bins {
                h += rates[b] * self.event_overlap[base + b];
                c += rates[b] * self.trunc_overlap[base + b];
            }
            let g = eh * c;
            // log f(u) - log F(c) with F = 1 - e^{-G}
            ll += alpha[self.event_bin[i]] + eta - eh * h - (-(-g).exp_m1()).ln();
        }
        ll
    }
}

impl Objective for TruncatedLikelihood<'_> {
    fn dim(&self) -> usize {
        self.n_bins + self.n_features
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.log_likelihood(x) - 0.5 * self.penalty * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (alpha, beta) = self.split(x);
        let rates: Vec<f64> = alpha.iter().map(|a| a.exp()).collect();
        let mut grad = DVector::zeros(self.dim());
        for (i, row) in self.design.rows.iter().enumerate() {
            let eta: f64 = row.features.iter().zip(beta).map(|(a, b)| a * b).sum();
            let eh = eta.exp();
            let base = i * self.n_bins;
            let mut a_tot = 0.0;
            let mut g_tot = 0.0;
            for b in 0..self.n_bins {
                a_tot += rates[b] * self.event_overlap[base + b];
                g_tot += rates[b] * self.trunc_overlap[base + b];
            }
            let a_tot = eh * a_tot;
            let g_tot = eh * g_tot;
            let phi1 = 1.0 / g_tot.exp_m1();
            grad[self.event_bin[i]] += 1.0;
            for b in 0..self.n_bins {
                let a_ib = eh * rates[b] * self.event_overlap[base + b];
                let g_ib = eh * rates[b] * self.trunc_overlap[base + b];
                grad[b] -= a_ib + phi1 * g_ib;
            }
            let beta_factor = 1.0 - a_tot - phi1 * g_tot;
            for (k, &xk) in row.features.iter().enumerate() {
                grad[self.n_bins + k] += xk * beta_factor;
            }
        }
        grad - self.penalty * x
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (alpha, beta) = self.split(x);
        let rates: Vec<f64> = alpha.iter().map(|a| a.exp()).collect();
        let dim = self.dim();
        let nb = self.n_bins;
        let mut hess = DMatrix::zeros(dim, dim);
        let mut dg = vec![0.0; dim];
        for (i, row) in self.design.rows.iter().enumerate() {
            let eta: f64 = row.features.iter().zip(beta).map(|(a, b)| a * b).sum();
            let eh = eta.exp();
            let base = i * nb;
            let mut a_tot = 0.0;
            let mut g_tot = 0.0;
            for b in 0..nb {
                a_tot += rates[b] * self.event_overlap[base + b];
                g_tot += rates[b] * self.trunc_overlap[base + b];
            }
            let a_tot = eh * a_tot;
            let g_tot = eh * g_tot;
            let e1 = g_tot.exp_m1();
            let phi1 = 1.0 / e1;
            let phi2 = -(e1 + 1.0) / (e1 * e1);

            // dG/dψ for the rank-one curvature term of -log F.
            for b in 0..nb {
                dg[b] = eh * rates[b] * self.trunc_overlap[base + b];
            }
            for (k, &xk) in row.features.iter().enumerate() {
                dg[nb + k] = xk * g_tot;
            }

            for b in 0..nb {
                let a_ib = eh * rates[b] * self.event_overlap[base + b];
                let g_ib = dg[b];
                // d²A and d²G are diagonal in the α block: same first-order terms.
                hess[(b, b)] -= a_ib + phi1 * g_ib;
                for (k, &xk) in row.features.iter().enumerate() {
                    let v = xk * (a_ib + phi1 * g_ib);
                    hess[(b, nb + k)] -= v;
                    hess[(nb + k, b)] -= v;
                }
            }
            for (k, &xk) in row.features.iter().enumerate() {
                for (l, &xl) in row.features.iter().enumerate() {
                    hess[(nb + k, nb + l)] -= xk * xl * (a_tot + phi1 * g_tot);
                }
            }
            // -φ'' · (dG)(dG)ᵀ
            for r in 0..dim {
                if dg[r] == 0.0 {
                    continue;
                }
                for c in 0..dim {
                    hess[(r, c)] -= phi2 * dg[r] * dg[c];
                }
            }
        }
        for i in 0..dim {
            hess[(i, i)] -= self.penalty;
        }
        hess
    }
}

/// Objective view of the truncated likelihood (used to verify the analytic
/// gradient against finite differences). Parameter layout:
/// `[log λ₀ per bin..., beta...]`.
pub fn truncated_objective(
    design: &DelayDesign,
    bins: BinGrid,
    penalty: f64,
) -> impl Objective + '_ {
    TruncatedLikelihood::new(design, bins, penalty)
}

/// Maximizes the right-truncated log-likelihood `Σ log f(u_i) - log F(c_i)`.
pub fn fit_hazard(design: &DelayDesign, opts: &DelayFitOptions) -> Result<HazardModel> {
    if design.is_empty() {
        return Err(Error::invalid("empty delay design"));
    }
    let delays: Vec<f64> = design.delays().collect();
    let bins = BinGrid::from_quantiles(&delays, opts.n_bins)?;
    fit_hazard_with_bins(design, bins, opts)
}

/// Same fit on a caller-provided bin grid.
pub fn fit_hazard_with_bins(
    design: &DelayDesign,
    bins: BinGrid,
    opts: &DelayFitOptions,
) -> Result<HazardModel> {
    let lik = TruncatedLikelihood::new(design, bins.clone(), opts.ridge);
    let nb = lik.n_bins;
    let p = lik.n_features;

    // Occurrence/exposure rates per bin ignoring truncation make a good start.
    let mut events = vec![0.0_f64; nb];
    let mut exposure = vec![0.0_f64; nb];
    for (i, _) in design.rows.iter().enumerate() {
        events[lik.event_bin[i]] += 1.0;
        for b in 0..nb {
            exposure[b] += lik.event_overlap[i * nb + b];
        }
    }
    let mut x0 = DVector::zeros(nb + p);
    for b in 0..nb {
        x0[b] = (events[b].max(0.5) / exposure[b].max(1e-12)).ln();
    }

    let newton = NewtonOptions { max_iter: opts.max_iter, grad_tol: opts.grad_tol, ridge: opts.ridge };
    let out = optim::maximize(&lik, x0, &newton);
    let ll = lik.log_likelihood(&out.x);
    let std_errors = standard_errors(&lik, &out.x);
    let diagnostics = FitDiagnostics {
        converged: out.converged,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        log_likelihood: ll,
        ridge_escalated: out.ridge_escalated,
        std_errors,
    };
    if !out.converged {
        return Err(Error::ConvergenceFailure {
            context: "truncated hazard fit".into(),
            iterations: out.iterations,
            grad_norm: out.grad_norm,
        });
    }
    let (alpha, beta) = lik.split(&out.x);
    Ok(HazardModel {
        bins,
        log_baseline: alpha.to_vec(),
        beta: beta.to_vec(),
        encoder: design.encoder.clone(),
        diagnostics,
    })
}

fn standard_errors(obj: &dyn Objective, x: &DVector<f64>) -> Vec<f64> {
    let info = -obj.hessian(x);
    match info.try_inverse() {
        Some(cov) => (0..x.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; x.len()],
    }
}

impl HazardModel {
    pub fn bins(&self) -> &BinGrid {
        &self.bins
    }

    /// Baseline rates `λ₀` per bin.
    pub fn baseline_rates(&self) -> Vec<f64> {
        self.log_baseline.iter().map(|a| a.exp()).collect()
    }

    /// Cumulative baseline hazard `Λ₀(u)`, exact over the step bins.
    pub fn cumulative_baseline(&self, u: f64) -> f64 {
        self.bins.integrate(&self.baseline_rates(), u)
    }

    /// Hazard at delay `u` for a design row.
    pub fn hazard(&self, features: &[f64], u: f64) -> f64 {
        let eta: f64 = features.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        self.log_baseline[self.bins.locate(u)].exp() * eta.exp()
    }

    /// `π̂ = 1 - exp(-e^{xᵀβ} Λ₀(elapsed))`, in `[0, 1)`.
    pub fn inclusion_probability(&self, features: &[f64], elapsed: f64) -> Result<f64> {
        if !(elapsed >= 0.0) {
            return Err(Error::invalid(format!("elapsed must be >= 0, got {elapsed}")));
        }
        let eta: f64 = features.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        let cum = eta.exp() * self.cumulative_baseline(elapsed);
        Ok(-((-cum).exp_m1()))
    }

    /// Average inclusion probability over accident times uniform on the
    /// contract window intersected with `[0, tau]` (64-node Gauss–Legendre).
    pub fn average_inclusion_probability(
        &self,
        features: &[f64],
        tau: f64,
        window: (f64, f64),
    ) -> Result<f64> {
        let lo = window.0.max(0.0);
        let hi = window.1.min(tau);
        if !(hi > lo) {
            return Err(Error::invalid(format!(
                "empty integration range: window ({}, {}) vs tau {tau}",
                window.0, window.1
            )));
        }
        let rates = self.baseline_rates();
        let eta: f64 = features.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        let multiplier = eta.exp();
        let value = quadrature::integrate(
            |t| -((-multiplier * self.bins.integrate(&rates, tau - t)).exp_m1()),
            lo,
            hi,
        ) / (hi - lo);
        Ok(value.clamp(0.0, 1.0))
    }

    /// Average inclusion probability over the contract window with the
    /// severity feature integrated out against a lognormal reported-severity
    /// law `log Y ~ N(log_mean, log_sd²)` at the policy's covariates.
    ///
    /// Severity is unobserved for unreported claims, so the policy-level
    /// probability needs `E_marginal[π(y)]`. Only the reported law is
    /// estimable directly, and `f_reported = π f_marginal / p` gives the
    /// harmonic identity `p = 1 / E_reported[1/π]`, evaluated here by
    /// quadrature at every accident-time node. With no severity feature (or
    /// a degenerate law) this reduces to `average_inclusion_probability`.
    pub fn average_inclusion_probability_marginal(
        &self,
        covariates: &[f64],
        log_severity: (f64, f64),
        tau: f64,
        window: (f64, f64),
    ) -> Result<f64> {
        let (log_mean, log_sd) = log_severity;
        if self.encoder.severity == SeverityFeature::None || log_sd == 0.0 {
            let row = self.encoder.encode(covariates, log_mean);
            return self.average_inclusion_probability(&row, tau, window);
        }
        let lo = window.0.max(0.0);
        let hi = window.1.min(tau);
        if !(hi > lo) {
            return Err(Error::invalid(format!(
                "empty integration range: window ({}, {}) vs tau {tau}",
                window.0, window.1
            )));
        }
        let rates = self.baseline_rates();
        // Hazard multipliers across the log-severity law (Gauss–Legendre on
        // z in [-6, 6] against the normal density).
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        let sev_nodes: Vec<(f64, f64)> = quadrature::nodes_32(-6.0, 6.0)
            .into_iter()
            .map(|(z, w)| {
                let row = self.encoder.encode(covariates, log_mean + log_sd * z);
                let eta: f64 = row.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
                (eta.exp(), w * (-0.5 * z * z).exp() / norm)
            })
            .collect();
        let w_total: f64 = sev_nodes.iter().map(|&(_, w)| w).sum();
        let value = quadrature::integrate(
            |t| {
                let base = self.bins.integrate(&rates, tau - t);
                let mut inv_pi = 0.0;
                for &(m, w) in &sev_nodes {
                    let pi = (-((-m * base).exp_m1())).max(1e-12);
                    inv_pi += w / pi;
                }
                w_total / inv_pi
            },
            lo,
            hi,
        ) / (hi - lo);
        Ok(value.clamp(0.0, 1.0))
    }

    /// Inclusion probabilities for the reported claims of a valuation
    /// context, clamped and packed for the estimators.
    pub fn reported_probabilities(
        &self,
        portfolio: &Portfolio,
        ctx: &ValuationContext,
    ) -> Result<InclusionProbabilities> {
        let rates = self.baseline_rates();
        let raw: Vec<f64> = ctx
            .reported_idx
            .iter()
            .map(|&i| {
                let c = &portfolio.claims()[i];
                let row = self.encoder.encode_claim(c);
                if c.accident_time > ctx.tau {
                    return Err(Error::invalid("reported claim after tau"));
                }
                let eta: f64 = row.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
                let cum = eta.exp() * self.bins.integrate(&rates, ctx.tau - c.accident_time);
                Ok(-((-cum).exp_m1()))
            })
            .collect::<Result<_>>()?;
        InclusionProbabilities::new(raw, PiSource::Model, DEFAULT_CLAMP_FLOOR)
    }
}

/// Chain-ladder-implied inclusion probabilities: each accident cohort gets
/// `π = 1 / f_k^{ult}` from the development triangle, constant within the
/// cohort. `width` is the accident-period width.
pub fn empirical_cohort_probabilities(
    portfolio: &Portfolio,
    ctx: &ValuationContext,
    width: f64,
    kind: TriangleKind,
) -> Result<InclusionProbabilities> {
    let triangle = estimators::Triangle::from_reported(portfolio, ctx, 0.0, width, kind)?;
    let cohort_of: Vec<usize> = ctx
        .reported_idx
        .iter()
        .map(|&i| triangle.accident_bucket(portfolio.claims()[i].accident_time))
        .collect();
    let mut empty: Vec<usize> = (0..triangle.n_cohorts())
        .filter(|&k| !cohort_of.contains(&k))
        .collect();
    if !empty.is_empty() {
        empty.sort_unstable();
        return Err(Error::UndefinedCohorts(empty));
    }
    let cl = estimators::chain_ladder(&triangle)?;
    let raw = cohort_of.iter().map(|&k| cl.implied_pi[k]).collect();
    InclusionProbabilities::new(raw, PiSource::ChainLadderImplied, DEFAULT_CLAMP_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::fd_gradient;
    use crate::streams::substream;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn exp_design(n: usize, rate: f64, trunc: f64, seed: u64) -> DelayDesign {
        let mut rng = substream(seed, &[1]);
        let mut delays = Vec::new();
        while delays.len() < n {
            let u: f64 = -rng.gen::<f64>().max(1e-12).ln() / rate;
            if u <= trunc {
                delays.push(u);
            }
        }
        let m = delays.len();
        DelayDesign::from_parts(
            vec![vec![]; m],
            delays,
            vec![trunc; m],
            DelayDesign::plain_encoder(),
        )
        .unwrap()
    }

    #[test]
    fn one_bin_untruncated_recovers_exponential_mle() {
        // Truncation bound far beyond the delays: the fit reduces to the
        // plain exponential MLE 1 / mean(U).
        let design = exp_design(20_000, 0.8, 1e6, 3);
        let opts = DelayFitOptions { n_bins: 1, ..Default::default() };
        let model = fit_hazard(&design, &opts).unwrap();
        let mean_u = design.delays().sum::<f64>() / design.len() as f64;
        assert_relative_eq!(model.log_baseline[0].exp(), 1.0 / mean_u, max_relative = 1e-6);
        assert!(model.diagnostics.converged);
        assert!(model.diagnostics.grad_norm < 1e-6);
    }

    #[test]
    fn truncated_fit_recovers_generative_coefficients() {
        // Simulate delays from a known two-bin hazard with one covariate and
        // keep only observations reported within the truncation bound.
        let bins = BinGrid::new(vec![0.0, 1.0]).unwrap();
        let rates = [0.5, 0.25];
        let beta_true = 0.4;
        let mut rng = substream(17, &[2]);
        let mut features = Vec::new();
        let mut delays = Vec::new();
        let mut truncs = Vec::new();
        while delays.len() < 50_000 {
            let x: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            let c: f64 = 0.5 + 7.5 * rng.gen::<f64>();
            let m = (beta_true * x).exp();
            let target = crate::sampling::exp1(&mut rng) / m;
            let u = bins.invert_integral(&rates, target);
            if u <= c {
                features.push(vec![x]);
                delays.push(u);
                truncs.push(c);
            }
        }
        let encoder = FeatureEncoder {
            severity: SeverityFeature::None,
            severity_cuts: vec![],
            median_log_severity: 0.0,
            n_covariates: 1,
            feature_means: vec![0.0],
        };
        let design = DelayDesign::from_parts(features, delays, truncs, encoder).unwrap();
        let model =
            fit_hazard_with_bins(&design, bins, &DelayFitOptions::default()).unwrap();
        // std_errors layout: [alpha_0, alpha_1, beta_0]
        let se = &model.diagnostics.std_errors;
        assert!(
            (model.log_baseline[0] - rates[0].ln()).abs() < 3.0 * se[0],
            "alpha0 {} vs {} (se {})",
            model.log_baseline[0],
            rates[0].ln(),
            se[0]
        );
        assert!(
            (model.log_baseline[1] - rates[1].ln()).abs() < 3.0 * se[1],
            "alpha1 {} vs {} (se {})",
            model.log_baseline[1],
            rates[1].ln(),
            se[1]
        );
        assert!(
            (model.beta[0] - beta_true).abs() < 3.0 * se[2],
            "beta {} vs {} (se {})",
            model.beta[0],
            beta_true,
            se[2]
        );
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let design = {
            let mut rng = substream(5, &[9]);
            let n = 60;
            let features: Vec<Vec<f64>> =
                (0..n).map(|_| vec![rng.gen::<f64>() - 0.5, rng.gen::<f64>()]).collect();
            let delays: Vec<f64> = (0..n).map(|_| 3.0 * rng.gen::<f64>()).collect();
            let truncs: Vec<f64> = delays.iter().map(|d| d + 0.2 + 4.0 * d.fract()).collect();
            let encoder = FeatureEncoder {
                severity: SeverityFeature::None,
                severity_cuts: vec![],
                median_log_severity: 0.0,
                n_covariates: 2,
                feature_means: vec![0.0, 0.0],
            };
            DelayDesign::from_parts(features, delays, truncs, encoder).unwrap()
        };
        let bins = BinGrid::new(vec![0.0, 0.7, 1.8]).unwrap();
        let lik = TruncatedLikelihood::new(&design, bins, 1e-8);
        let mut rng = substream(5, &[10]);
        for _ in 0..20 {
            let x = DVector::from_fn(lik.dim(), |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let analytic = lik.gradient(&x);
            let numeric = fd_gradient(|p| lik.value(p), &x);
            for j in 0..lik.dim() {
                let denom = analytic[j].abs().max(1.0);
                assert!(
                    (analytic[j] - numeric[j]).abs() / denom < 1e-5,
                    "gradient mismatch at {j}: {} vs {}",
                    analytic[j],
                    numeric[j]
                );
            }
            // Hessian spot-check against FD of the analytic gradient.
            let h = lik.hessian(&x);
            let h_fd = optim::fd_hessian(|p| lik.gradient(p), &x);
            for r in 0..lik.dim() {
                for c in 0..lik.dim() {
                    let denom = h[(r, c)].abs().max(1.0);
                    assert!(
                        (h[(r, c)] - h_fd[(r, c)]).abs() / denom < 1e-4,
                        "hessian mismatch at ({r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn fitted_likelihood_dominates_null_model() {
        let (portfolio, _) =
            crate::simulator::simulate(&crate::simulator::tests::base_config(0.5, 21)).unwrap();
        let ctx = crate::claims::partition(&portfolio, 12.0).unwrap();
        let full =
            DelayDesign::from_reported(&portfolio, &ctx, SeverityFeature::LogLinear).unwrap();
        let null = DelayDesign::from_parts(
            vec![vec![]; full.len()],
            full.rows.iter().map(|r| r.delay).collect(),
            full.rows.iter().map(|r| r.truncation).collect(),
            DelayDesign::plain_encoder(),
        )
        .unwrap();
        let opts = DelayFitOptions::default();
        let fitted = fit_hazard(&full, &opts).unwrap();
        let null_fit = fit_hazard(&null, &opts).unwrap();
        assert!(
            fitted.diagnostics.log_likelihood >= null_fit.diagnostics.log_likelihood,
            "full fit {} must dominate null {}",
            fitted.diagnostics.log_likelihood,
            null_fit.diagnostics.log_likelihood
        );
    }

    #[test]
    fn inclusion_probability_basics_and_quadrature_oracle() {
        let model = HazardModel {
            bins: BinGrid::new(vec![0.0, 1.0, 2.0]).unwrap(),
            log_baseline: vec![0.3_f64.ln(), 0.5_f64.ln(), 0.2_f64.ln()],
            beta: vec![0.25, -0.4],
            encoder: FeatureEncoder {
                severity: SeverityFeature::None,
                severity_cuts: vec![],
                median_log_severity: 0.0,
                n_covariates: 2,
                feature_means: vec![0.0, 0.0],
            },
            diagnostics: FitDiagnostics {
                converged: true,
                iterations: 0,
                grad_norm: 0.0,
                log_likelihood: 0.0,
                ridge_escalated: false,
                std_errors: vec![],
            },
        };
        let x = [0.7, 0.2];
        assert_relative_eq!(model.inclusion_probability(&x, 0.0).unwrap(), 0.0);
        assert!(model.inclusion_probability(&x, -0.1).is_err());

        // Adaptive-free oracle: the cumulative hazard as a plain quadrature
        // of the step hazard (two panels per bin boundary keep it exact).
        for &elapsed in &[0.4, 1.0, 1.7, 3.6] {
            let mut cum = 0.0;
            let mut edges: Vec<f64> =
                model.bins.edges().iter().copied().filter(|&e| e < elapsed).collect();
            edges.push(elapsed);
            for w in edges.windows(2) {
                cum += quadrature::integrate(|u| model.hazard(&x, u), w[0], w[1]);
            }
            let direct = model.inclusion_probability(&x, elapsed).unwrap();
            assert_relative_eq!(direct, -((-cum).exp_m1()), epsilon = 1e-8);
        }

        // single bin, rate ln 2, elapsed 1, x = 0 -> 1/2
        let single = HazardModel {
            bins: BinGrid::new(vec![0.0]).unwrap(),
            log_baseline: vec![std::f64::consts::LN_2.ln()],
            beta: vec![],
            encoder: DelayDesign::plain_encoder(),
            diagnostics: model.diagnostics.clone(),
        };
        assert_relative_eq!(single.inclusion_probability(&[], 1.0).unwrap(), 0.5, epsilon = 1e-14);

        // monotone and continuous in elapsed
        let mut prev = 0.0;
        for i in 0..200 {
            let e = i as f64 * 0.03;
            let v = model.inclusion_probability(&x, e).unwrap();
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn cohort_probabilities_match_hand_chain_ladder() {
        // Triangle rows [[100, 150], [120]]: f = 1.5, implied π = (1, 2/3).
        let policies = vec![crate::claims::PolicyRecord {
            policy_id: crate::claims::PolicyId(1),
            exposure: 2.0,
            contract_start: 0.0,
            contract_end: 2.0,
            covariates: vec![],
        }];
        let mk = |id: u64, t: f64, u: f64, y: f64| crate::claims::Claim {
            claim_id: crate::claims::ClaimId(id),
            policy_id: crate::claims::PolicyId(1),
            accident_time: t,
            report_delay: u,
            severity: y,
            covariates: vec![],
        };
        let claims = vec![
            mk(0, 0.5, 0.1, 100.0), // cohort 0, dev 0
            mk(1, 0.5, 1.2, 50.0),  // cohort 0, dev 1
            mk(2, 1.5, 0.1, 120.0), // cohort 1, dev 0
        ];
        let portfolio = Portfolio::new(policies.clone(), claims, vec![]).unwrap();
        let ctx = crate::claims::partition(&portfolio, 2.0).unwrap();
        let pis =
            empirical_cohort_probabilities(&portfolio, &ctx, 1.0, TriangleKind::Amounts).unwrap();
        assert_relative_eq!(pis.values()[0], 1.0);
        assert_relative_eq!(pis.values()[1], 1.0);
        assert_relative_eq!(pis.values()[2], 2.0 / 3.0, epsilon = 1e-12);

        // A cohort with no reported claims is rejected with its index.
        let late_only = vec![mk(0, 1.5, 0.1, 120.0)];
        let portfolio = Portfolio::new(policies, late_only, vec![]).unwrap();
        let ctx = crate::claims::partition(&portfolio, 2.0).unwrap();
        let err =
            empirical_cohort_probabilities(&portfolio, &ctx, 1.0, TriangleKind::Amounts)
                .unwrap_err();
        match err {
            crate::error::Error::UndefinedCohorts(v) => assert_eq!(v, vec![0]),
            other => panic!("expected UndefinedCohorts, got {other}"),
        }
    }

    #[test]
    fn no_spurious_severity_effect_under_independence() {
        // γ = 0: the fitted log-severity coefficient should be a null effect
        // (|z| < 3) in nearly all replicates.
        let mut within = 0;
        let reps = 30;
        for rep in 0..reps {
            let mut cfg = crate::simulator::tests::base_config(0.0, 6000 + rep);
            cfg.n_policies = 2500;
            let (portfolio, _) = crate::simulator::simulate(&cfg).unwrap();
            let ctx = crate::claims::partition(&portfolio, 12.0).unwrap();
            let design =
                DelayDesign::from_reported(&portfolio, &ctx, SeverityFeature::LogLinear).unwrap();
            let model = fit_hazard(&design, &DelayFitOptions::default()).unwrap();
            let sev_idx = model.log_baseline.len() + model.beta.len() - 1;
            let z = model.beta.last().unwrap() / model.diagnostics.std_errors[sev_idx];
            if z.abs() < 3.0 {
                within += 1;
            }
        }
        assert!(
            within as f64 >= 0.9 * reps as f64,
            "spurious severity effects: only {within}/{reps} replicates with |z| < 3"
        );
    }

    #[test]
    fn average_inclusion_probability_closed_form() {
        // Constant hazard λ: p(τ) = 1 - (1 - e^{-λτ})/(λτ).
        let lambda = 0.33_f64;
        let model = HazardModel {
            bins: BinGrid::new(vec![0.0]).unwrap(),
            log_baseline: vec![lambda.ln()],
            beta: vec![],
            encoder: DelayDesign::plain_encoder(),
            diagnostics: FitDiagnostics {
                converged: true,
                iterations: 0,
                grad_norm: 0.0,
                log_likelihood: 0.0,
                ridge_escalated: false,
                std_errors: vec![],
            },
        };
        let tau = 7.0;
        let p = model.average_inclusion_probability(&[], tau, (0.0, tau)).unwrap();
        let closed = 1.0 - (1.0 - (-lambda * tau).exp()) / (lambda * tau);
        assert_relative_eq!(p, closed, epsilon = 1e-8);

        // π ≡ c: with a degenerate window the average equals the point value.
        let c = model.inclusion_probability(&[], tau - 3.0).unwrap();
        let avg = model
            .average_inclusion_probability(&[], tau, (3.0 - 1e-9, 3.0 + 1e-9))
            .unwrap();
        assert_relative_eq!(avg, c, epsilon = 1e-6);

        // τ → ∞ with a proper hazard: p → 1.
        let p_inf = model.average_inclusion_probability(&[], 1e5, (0.0, 10.0)).unwrap();
        assert!(p_inf > 1.0 - 1e-6);

        // empty range is rejected
        assert!(model.average_inclusion_probability(&[], 2.0, (3.0, 5.0)).is_err());
    }
}
