//! Backtesting over a valuation grid, error metrics, and Monte-Carlo
//! experiment runners for the estimator guarantees (IPW unbiasedness
//! identity, double robustness).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::{
    partition, InclusionProbabilities, PiSource, PolicyId, Portfolio, ValuationContext,
    DEFAULT_CLAMP_FLOOR,
};
use crate::delay::{
    empirical_cohort_probabilities, fit_hazard, DelayDesign, DelayFitOptions, HazardModel,
    SeverityFeature,
};
use crate::error::{Error, Result};
use crate::estimators::{
    aipw_cl_reserve, aipw_reserve, chain_ladder, credibility_reserve, ipw_reserve, ml_reserve,
    EstimatorKind, ReserveEstimate, Triangle, TriangleKind,
};
use crate::frequency::{expected_ibnr_count, fit_zinb, ibnr_conditional, ZinbFitOptions, ZinbModel};
use crate::sampling;
use crate::severity::{calibrate_wbp, fit_lognormal, odds_weights, SeverityModel};
use crate::simulator::{simulate, GroundTruth, SimConfig};
use crate::streams::substream;
use crate::synthetic::bootstrap_reserve;

/// Error metrics with the sign convention `ME = mean(truth - estimate)`:
/// an overestimating method shows a negative mean error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub me: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Mean absolute percentage error over entries with nonzero truth;
    /// `None` when no entry qualifies.
    pub mape: Option<f64>,
    pub n_mape_skipped: usize,
}

pub fn metrics(truth: &[f64], estimates: &[f64]) -> Result<Metrics> {
    if truth.is_empty() || truth.len() != estimates.len() {
        return Err(Error::invalid("metrics need equal-length non-empty inputs"));
    }
    let n = truth.len() as f64;
    let mut me = 0.0;
    let mut mae = 0.0;
    let mut mse = 0.0;
    let mut mape_acc = 0.0;
    let mut mape_n = 0usize;
    for (&t, &e) in truth.iter().zip(estimates) {
        let diff = t - e;
        me += diff;
        mae += diff.abs();
        mse += diff * diff;
        if t != 0.0 {
            mape_acc += (diff / t).abs();
            mape_n += 1;
        }
    }
    Ok(Metrics {
        me: me / n,
        mae: mae / n,
        rmse: (mse / n).sqrt(),
        mape: if mape_n > 0 { Some(mape_acc / mape_n as f64) } else { None },
        n_mape_skipped: truth.len() - mape_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitPolicy {
    /// Refit every model at every valuation date (the default).
    EveryDate,
    /// Fit once at the first grid date, reuse the models afterwards
    /// (probabilities are still re-evaluated at each date's τ).
    Once,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub n_replicates: usize,
    pub level: f64,
    pub seed: u64,
}

/// How the unobserved severity enters policy-level inclusion probabilities
/// `p_j(τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PBarPlugin {
    /// Evaluate the severity feature at the portfolio median log severity.
    Median,
    /// Integrate the severity feature out against the plain lognormal fit
    /// via the harmonic identity `p = 1/E_reported[1/π]`. Corrects the
    /// first-order bias of the median plug-in under severity-delay
    /// dependence.
    MarginalLognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestOptions {
    pub estimators: Vec<EstimatorKind>,
    pub refit: RefitPolicy,
    pub delay_bins: usize,
    pub severity_feature: SeverityFeature,
    pub p_bar_plugin: PBarPlugin,
    /// Max-weight cap quantile for the weighted severity fit.
    pub weight_cap_quantile: f64,
    /// Accident/development period width for triangles and cohort π.
    pub triangle_width: f64,
    /// Credibility factor for the CRED estimator.
    pub credibility_z: f64,
    /// Expert ultimate for CRED, expressed relative to the CL ultimate.
    pub expert_ultimate_factor: f64,
    /// Attach bootstrap intervals to the IPW estimate.
    pub bootstrap: Option<BootstrapSpec>,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self {
            estimators: EstimatorKind::ALL.to_vec(),
            refit: RefitPolicy::EveryDate,
            delay_bins: 8,
            severity_feature: SeverityFeature::LogLinear,
            p_bar_plugin: PBarPlugin::MarginalLognormal,
            weight_cap_quantile: 0.995,
            triangle_width: 1.0,
            credibility_z: 0.5,
            expert_ultimate_factor: 1.0,
            bootstrap: None,
        }
    }
}

/// All models fitted on the data reported by one valuation date.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModels {
    pub hazard: HazardModel,
    pub severity_plain: SeverityModel,
    pub severity_weighted: SeverityModel,
    pub severity_wbp: SeverityModel,
    pub zinb: ZinbModel,
}

/// Fits the delay, severity (all three modes) and frequency models on the
/// claims reported by `ctx.tau`.
pub fn fit_models(
    portfolio: &Portfolio,
    ctx: &ValuationContext,
    opts: &BacktestOptions,
) -> Result<FittedModels> {
    let design = DelayDesign::from_reported(portfolio, ctx, opts.severity_feature)?;
    let hazard =
        fit_hazard(&design, &DelayFitOptions { n_bins: opts.delay_bins, ..Default::default() })?;
    let pis = hazard.reported_probabilities(portfolio, ctx)?;

    let rep_covs: Vec<Vec<f64>> =
        ctx.reported_idx.iter().map(|&i| portfolio.claims()[i].covariates.clone()).collect();
    let rep_ys: Vec<f64> =
        ctx.reported_idx.iter().map(|&i| portfolio.claims()[i].severity).collect();

    let severity_plain = fit_lognormal(&rep_covs, &rep_ys, None)?;
    let (weights, n_capped) = odds_weights(&pis, opts.weight_cap_quantile)?;
    let mut severity_weighted = fit_lognormal(&rep_covs, &rep_ys, Some(&weights))?;
    severity_weighted.diagnostics.n_weights_capped = n_capped;
    let severity_wbp = calibrate_wbp(&severity_plain, &rep_covs, &rep_ys, &pis)?;

    let (counts, offsets, covs, exposures) =
        frequency_inputs(portfolio, ctx, &hazard, &severity_plain, opts.p_bar_plugin)?;
    let zinb = fit_zinb(&counts, &offsets, &covs, &exposures, &ZinbFitOptions::default())?;

    Ok(FittedModels { hazard, severity_plain, severity_weighted, severity_wbp, zinb })
}

/// `p̄_j(τ)` for one policy under the configured severity plug-in.
fn policy_p_bar(
    hazard: &HazardModel,
    severity_plain: &SeverityModel,
    plugin: PBarPlugin,
    policy: &crate::claims::PolicyRecord,
    tau: f64,
) -> Result<f64> {
    let window = (policy.contract_start, policy.contract_end);
    match plugin {
        PBarPlugin::Median => {
            let row = hazard.encoder.encode_policy(&policy.covariates);
            hazard.average_inclusion_probability(&row, tau, window)
        }
        PBarPlugin::MarginalLognormal => {
            let mut nu = severity_plain.beta[0];
            for (k, &x) in policy.covariates.iter().enumerate() {
                nu += severity_plain.beta[k + 1] * x;
            }
            hazard.average_inclusion_probability_marginal(
                &policy.covariates,
                (nu, severity_plain.sigma),
                tau,
                window,
            )
        }
    }
}

/// Reported count, thinning offset `ξ_eff · p̄_j(τ)`, covariates and contract
/// exposure per policy with exposure earned by `τ`.
fn frequency_inputs(
    portfolio: &Portfolio,
    ctx: &ValuationContext,
    hazard: &HazardModel,
    severity_plain: &SeverityModel,
    plugin: PBarPlugin,
) -> Result<(Vec<u64>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let mut counts_by_policy = std::collections::HashMap::new();
    for &i in &ctx.reported_idx {
        *counts_by_policy.entry(portfolio.claims()[i].policy_id).or_insert(0u64) += 1;
    }
    let mut counts = Vec::new();
    let mut offsets = Vec::new();
    let mut covs = Vec::new();
    let mut exposures = Vec::new();
    for policy in portfolio.policies() {
        let window_end = policy.contract_end.min(ctx.tau);
        if window_end <= policy.contract_start {
            continue;
        }
        let p_bar = policy_p_bar(hazard, severity_plain, plugin, policy, ctx.tau)?;
        let earned_frac =
            (window_end - policy.contract_start) / (policy.contract_end - policy.contract_start);
        let exposure_eff = policy.exposure * earned_frac;
        let offset = (exposure_eff * p_bar).max(1e-12);
        counts.push(counts_by_policy.get(&policy.policy_id).copied().unwrap_or(0));
        offsets.push(offset);
        covs.push(policy.covariates.clone());
        exposures.push(policy.exposure);
    }
    Ok((counts, offsets, covs, exposures))
}

/// Per-policy IBNR expectations and severity predictions at one date.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyIbnr {
    pub policy_id: PolicyId,
    pub q_tilde: f64,
    pub theta_tilde: f64,
    pub r_tilde: f64,
    pub lambda: f64,
    pub yhat_plain: f64,
    pub yhat_wbp: f64,
    pub yhat_weighted: f64,
}

/// Evaluates the conditional IBNR law of every policy with exposure earned
/// by `τ`.
pub fn policy_ibnr(
    portfolio: &Portfolio,
    ctx: &ValuationContext,
    models: &FittedModels,
    plugin: PBarPlugin,
) -> Result<Vec<PolicyIbnr>> {
    let mut counts_by_policy = std::collections::HashMap::new();
    for &i in &ctx.reported_idx {
        *counts_by_policy.entry(portfolio.claims()[i].policy_id).or_insert(0u64) += 1;
    }
    let mut out = Vec::new();
    for policy in portfolio.policies() {
        let window_end = policy.contract_end.min(ctx.tau);
        if window_end <= policy.contract_start {
            continue;
        }
        let p_bar =
            policy_p_bar(&models.hazard, &models.severity_plain, plugin, policy, ctx.tau)?;
        let earned_frac =
            (window_end - policy.contract_start) / (policy.contract_end - policy.contract_start);
        let exposure_eff = policy.exposure * earned_frac;
        let n_reported = counts_by_policy.get(&policy.policy_id).copied().unwrap_or(0);
        let law = ibnr_conditional(
            &models.zinb,
            &policy.covariates,
            policy.exposure,
            exposure_eff,
            p_bar,
            n_reported,
        )?;
        out.push(PolicyIbnr {
            policy_id: policy.policy_id,
            q_tilde: law.q_tilde,
            theta_tilde: law.theta_tilde,
            r_tilde: law.r_tilde,
            lambda: expected_ibnr_count(&law),
            yhat_plain: models.severity_plain.predict_mean(&policy.covariates)?,
            yhat_wbp: models.severity_wbp.predict_mean(&policy.covariates)?,
            yhat_weighted: models.severity_weighted.predict_mean(&policy.covariates)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DateRow {
    pub tau: f64,
    pub truth: Option<f64>,
    pub truth_count: Option<usize>,
    pub estimates: Vec<ReserveEstimate>,
    /// `(estimator label, reason)` for estimators that failed at this date.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestReport {
    pub rows: Vec<DateRow>,
    /// Per-estimator summary over the dates where truth was available and
    /// the estimator succeeded.
    pub metrics: Vec<(String, Metrics)>,
}

impl BacktestReport {
    /// Recomputes the per-estimator metrics from the stored rows (the
    /// summary carries no state of its own).
    pub fn recompute_metrics(rows: &[DateRow]) -> Vec<(String, Metrics)> {
        let mut out = Vec::new();
        for kind in EstimatorKind::ALL {
            let mut truths = Vec::new();
            let mut points = Vec::new();
            for row in rows {
                let (Some(t), Some(est)) =
                    (row.truth, row.estimates.iter().find(|e| e.estimator == kind))
                else {
                    continue;
                };
                truths.push(t);
                points.push(est.point);
            }
            if !truths.is_empty() {
                out.push((kind.label().to_string(), metrics(&truths, &points).unwrap()));
            }
        }
        out
    }
}

/// Runs the full reserving pipeline over a valuation grid.
pub fn backtest(
    portfolio: &Portfolio,
    truth: Option<&GroundTruth>,
    grid: &[f64],
    opts: &BacktestOptions,
) -> Result<BacktestReport> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("valuation grid must be non-empty and strictly increasing"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    let mut reused: Option<FittedModels> = None;
    for (date_idx, &tau) in grid.iter().enumerate() {
        let ctx = partition(portfolio, tau)?;
        let models = match (&opts.refit, &reused) {
            (RefitPolicy::Once, Some(m)) => m.clone(),
            _ => {
                let m = fit_models(portfolio, &ctx, opts)?;
                if opts.refit == RefitPolicy::Once {
                    reused = Some(m.clone());
                }
                m
            }
        };
        let row = evaluate_date(portfolio, &ctx, &models, truth, opts, date_idx as u64);
        rows.push(row);
    }
    let summary = BacktestReport::recompute_metrics(&rows);
    Ok(BacktestReport { rows, metrics: summary })
}

/// Evaluates every requested estimator at one valuation date; failures are
/// recorded with their reason and the run continues.
pub fn evaluate_date(
    portfolio: &Portfolio,
    ctx: &ValuationContext,
    models: &FittedModels,
    truth: Option<&GroundTruth>,
    opts: &BacktestOptions,
    date_idx: u64,
) -> DateRow {
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    let mut record = |kind: EstimatorKind, result: Result<ReserveEstimate>| match result {
        Ok(est) => estimates.push(est),
        Err(e) => failures.push((kind.label().to_string(), e.to_string())),
    };

    let rep_ys: Vec<f64> =
        ctx.reported_idx.iter().map(|&i| portfolio.claims()[i].severity).collect();
    let pis = models.hazard.reported_probabilities(portfolio, ctx);
    let ibnr = policy_ibnr(portfolio, ctx, models, opts.p_bar_plugin);
    let cl = Triangle::from_reported(portfolio, ctx, 0.0, opts.triangle_width, TriangleKind::Amounts)
        .and_then(|t| chain_ladder(&t));

    let reported_pred = |model: &SeverityModel| -> Result<Vec<f64>> {
        ctx.reported_idx
            .iter()
            .map(|&i| model.predict_mean(&portfolio.claims()[i].covariates))
            .collect()
    };
    let ml_total = |yhat: fn(&PolicyIbnr) -> f64| -> Result<f64> {
        let rows = ibnr.as_ref().map_err(clone_err)?;
        Ok(rows.iter().map(|r| r.lambda * yhat(r)).sum())
    };

    for kind in &opts.estimators {
        match kind {
            EstimatorKind::ChainLadder => {
                record(*kind, cl.as_ref().map(|c| c.estimate.clone()).map_err(clone_err));
            }
            EstimatorKind::Ipw => {
                let result = pis.as_ref().map_err(clone_err).and_then(|p| {
                    let mut est = ipw_reserve(&rep_ys, p)?;
                    if let Some(spec) = &opts.bootstrap {
                        let seed = crate::streams::substream_key(spec.seed, &[date_idx]);
                        let interval = bootstrap_reserve(
                            &rep_ys,
                            p,
                            spec.n_replicates,
                            spec.level,
                            seed,
                        )?;
                        est.interval = Some(crate::estimators::Interval {
                            lo: interval.lo,
                            hi: interval.hi,
                            level: interval.level,
                            method: "geometric-bootstrap".into(),
                        });
                    }
                    Ok(est)
                });
                record(*kind, result);
            }
            EstimatorKind::Aipw => {
                let result = (|| {
                    let p = pis.as_ref().map_err(clone_err)?;
                    let yhats = reported_pred(&models.severity_plain)?;
                    aipw_reserve(&rep_ys, &yhats, ml_total(|r| r.yhat_plain)?, p)
                })();
                record(*kind, result);
            }
            EstimatorKind::AipwCl => {
                let result = (|| {
                    let cl_pis = empirical_cohort_probabilities(
                        portfolio,
                        ctx,
                        opts.triangle_width,
                        TriangleKind::Amounts,
                    )?;
                    let yhats = reported_pred(&models.severity_plain)?;
                    aipw_cl_reserve(&rep_ys, &yhats, ml_total(|r| r.yhat_plain)?, &cl_pis)
                })();
                record(*kind, result);
            }
            EstimatorKind::Ml => {
                let result = (|| {
                    let rows = ibnr.as_ref().map_err(clone_err)?;
                    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
                    let yhats: Vec<f64> = rows.iter().map(|r| r.yhat_plain).collect();
                    ml_reserve(&lambdas, &yhats, EstimatorKind::Ml)
                })();
                record(*kind, result);
            }
            EstimatorKind::MlWbp => {
                let result = (|| {
                    let rows = ibnr.as_ref().map_err(clone_err)?;
                    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
                    let yhats: Vec<f64> = rows.iter().map(|r| r.yhat_wbp).collect();
                    ml_reserve(&lambdas, &yhats, EstimatorKind::MlWbp)
                })();
                record(*kind, result);
            }
            EstimatorKind::MlWl => {
                let result = (|| {
                    let rows = ibnr.as_ref().map_err(clone_err)?;
                    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
                    let yhats: Vec<f64> = rows.iter().map(|r| r.yhat_weighted).collect();
                    ml_reserve(&lambdas, &yhats, EstimatorKind::MlWl)
                })();
                record(*kind, result);
            }
            EstimatorKind::Credibility => {
                let result = (|| {
                    let c = cl.as_ref().map_err(clone_err)?;
                    let cl_ultimate: f64 = c.ultimates.iter().sum();
                    let reported: f64 = rep_ys.iter().sum();
                    let pi_total = if cl_ultimate > 0.0 { reported / cl_ultimate } else { 1.0 };
                    let expert = opts.expert_ultimate_factor * cl_ultimate;
                    let mut est = credibility_reserve(
                        cl_ultimate,
                        expert,
                        opts.credibility_z,
                        pi_total.clamp(DEFAULT_CLAMP_FLOOR, 1.0),
                    )?;
                    // Report on the IBNR scale like the other estimators.
                    est.point -= reported;
                    Ok(est)
                })();
                record(*kind, result);
            }
        }
    }

    DateRow {
        tau: ctx.tau,
        truth: truth.map(|t| t.ibnr_liability(ctx.tau)),
        truth_count: truth.map(|t| t.ibnr_count(ctx.tau)),
        estimates,
        failures,
    }
}

fn clone_err(e: &Error) -> Error {
    Error::InvalidArgument(e.to_string())
}

/// Inclusion-probability profile as a function of elapsed time `τ - s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiProfile {
    Constant(f64),
    /// Piecewise-constant in elapsed time: `values[i]` on
    /// `[edges[i], edges[i+1])`, last value beyond the last edge.
    Step { edges: Vec<f64>, values: Vec<f64> },
}

impl PiProfile {
    pub fn eval(&self, elapsed: f64) -> f64 {
        match self {
            PiProfile::Constant(c) => *c,
            PiProfile::Step { edges, values } => {
                let mut v = values[0];
                for (i, &e) in edges.iter().enumerate() {
                    if elapsed >= e {
                        v = values[(i + 1).min(values.len() - 1)];
                    }
                }
                v
            }
        }
    }
}

/// Monte-Carlo check of the change-of-measure identity
/// `E[L^IBNR(t;τ)] = ∫₀ᵗ (1-π(τ-s))/π(τ-s) dE[L^R(s;τ)]`
/// under homogeneous marks (π and severity depend on time only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwIdentityConfig {
    /// Poisson arrival rate of claims on `[0, t]`.
    pub rate: f64,
    pub t: f64,
    pub tau: f64,
    pub severity_log_mean: f64,
    pub severity_log_sd: f64,
    pub profile: PiProfile,
    pub n_replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwIdentityReport {
    /// Mean of `L^IBNR(t; τ)` over replicates.
    pub lhs_mean: f64,
    /// Mean of the odds-weighted reported sum (the empirical right side).
    pub rhs_mean: f64,
    pub gap: f64,
    pub mc_se: f64,
    pub n_replicates: usize,
    pub within_3_se: bool,
}

pub fn validate_ipw_identity(cfg: &IpwIdentityConfig) -> IpwIdentityReport {
    let diffs: Vec<(f64, f64)> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(cfg.seed, &[0xEE, rep as u64]);
            let n = sampling::poisson(&mut rng, cfg.rate * cfg.t);
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for _ in 0..n {
                let t = cfg.t * rand::Rng::gen::<f64>(&mut rng);
                let y = (cfg.severity_log_mean
                    + cfg.severity_log_sd * sampling::standard_normal(&mut rng))
                .exp();
                let pi = cfg.profile.eval(cfg.tau - t).clamp(0.0, 1.0);
                let reported = rand::Rng::gen::<f64>(&mut rng) < pi;
                if reported {
                    rhs += (1.0 - pi) / pi * y;
                } else {
                    lhs += y;
                }
            }
            (lhs, rhs)
        })
        .collect();
    let n = diffs.len() as f64;
    let lhs_mean = diffs.iter().map(|d| d.0).sum::<f64>() / n;
    let rhs_mean = diffs.iter().map(|d| d.1).sum::<f64>() / n;
    let gaps: Vec<f64> = diffs.iter().map(|d| d.0 - d.1).collect();
    let gap = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - gap) * (g - gap)).sum::<f64>() / (n - 1.0);
    let mc_se = (var / n).sqrt();
    IpwIdentityReport {
        lhs_mean,
        rhs_mean,
        gap,
        mc_se,
        n_replicates: diffs.len(),
        within_3_se: gap.abs() <= 3.0 * mc_se.max(f64::MIN_POSITIVE),
    }
}

/// 2×2 misspecification grid for the double-robustness property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrGridConfig {
    pub sim: SimConfig,
    pub tau: f64,
    pub n_replicates: usize,
    /// Multiplicative distortion of the severity predictions in the
    /// "severity wrong" cells.
    pub severity_bias: f64,
    /// Multiplicative distortion applied to cohort-mean π in the "π wrong"
    /// cells (clamped into (floor, 1]).
    pub pi_distortion: f64,
    /// Accident-cohort width used by the distorted-π generator.
    pub cohort_width: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrCell {
    pub pi_oracle: bool,
    pub severity_unbiased: bool,
    pub rel_bias_aipw: f64,
    pub rel_bias_ipw: f64,
    pub rel_bias_ml: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrReport {
    pub cells: Vec<DrCell>,
    pub mean_truth: f64,
    pub n_replicates: usize,
}

pub fn double_robustness_grid(cfg: &DrGridConfig) -> Result<DrReport> {
    cfg.sim.validate()?;
    struct RepTotals {
        truth: f64,
        // [pi_oracle][sev_unbiased] -> (aipw, ipw, ml)
        cells: [[(f64, f64, f64); 2]; 2],
    }

    let reps: Vec<RepTotals> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let mut sim = cfg.sim.clone();
            sim.rng_seed = crate::streams::substream_key(cfg.seed, &[0xD0, rep as u64]);
            let (portfolio, truth) = simulate(&sim).expect("validated config");
            let ctx = partition(&portfolio, cfg.tau).expect("tau > 0");

            let rep_ys: Vec<f64> =
                ctx.reported_idx.iter().map(|&i| portfolio.claims()[i].severity).collect();
            let oracle_raw: Vec<f64> = ctx
                .reported_idx
                .iter()
                .map(|&i| truth.true_pi(&portfolio.claims()[i], cfg.tau).unwrap())
                .collect();
            let oracle_pis =
                InclusionProbabilities::with_default_floor(oracle_raw.clone(), PiSource::Oracle)
                    .unwrap();
            let distorted_pis = distort_cohort_pis(
                &portfolio,
                &ctx,
                &oracle_raw,
                cfg.cohort_width,
                cfg.pi_distortion,
            );

            // Severity predictions per reported claim and per policy.
            let pred_rep: Vec<f64> = ctx
                .reported_idx
                .iter()
                .map(|&i| sim.severity.mean(&portfolio.claims()[i].covariates))
                .collect();
            let lambda_yhat: f64 = portfolio
                .policies()
                .iter()
                .map(|p| {
                    truth.oracle_expected_ibnr_count(p, cfg.tau) * sim.severity.mean(&p.covariates)
                })
                .sum();

            let mut cells = [[(0.0, 0.0, 0.0); 2]; 2];
            for (pi_idx, pis) in [&distorted_pis, &oracle_pis].iter().enumerate() {
                for (sev_idx, bias) in [cfg.severity_bias, 1.0].iter().enumerate() {
                    let yhats: Vec<f64> = pred_rep.iter().map(|y| bias * y).collect();
                    let model_total = bias * lambda_yhat;
                    let aipw = aipw_reserve(&rep_ys, &yhats, model_total, pis).unwrap().point;
                    let ipw = ipw_reserve(&rep_ys, pis).unwrap().point;
                    cells[pi_idx][sev_idx] = (aipw, ipw, model_total);
                }
            }
            RepTotals { truth: truth.ibnr_liability(cfg.tau), cells }
        })
        .collect();

    let n = reps.len() as f64;
    let mean_truth = reps.iter().map(|r| r.truth).sum::<f64>() / n;
    let mut cells = Vec::with_capacity(4);
    for pi_idx in 0..2 {
        for sev_idx in 0..2 {
            let (mut aipw, mut ipw, mut ml) = (0.0, 0.0, 0.0);
            for r in &reps {
                let (a, i, m) = r.cells[pi_idx][sev_idx];
                aipw += a;
                ipw += i;
                ml += m;
            }
            cells.push(DrCell {
                pi_oracle: pi_idx == 1,
                severity_unbiased: sev_idx == 1,
                rel_bias_aipw: (aipw / n - mean_truth) / mean_truth,
                rel_bias_ipw: (ipw / n - mean_truth) / mean_truth,
                rel_bias_ml: (ml / n - mean_truth) / mean_truth,
            });
        }
    }
    Ok(DrReport { cells, mean_truth, n_replicates: reps.len() })
}

/// The documented distortion: replace each claim's π by its accident-cohort
/// mean times `distortion`, clamped into `(floor, 1]`.
fn distort_cohort_pis(
    portfolio: &Portfolio,
    ctx: &ValuationContext,
    oracle: &[f64],
    cohort_width: f64,
    distortion: f64,
) -> InclusionProbabilities {
    let cohort = |i: usize| -> usize {
        (portfolio.claims()[i].accident_time / cohort_width).floor() as usize
    };
    let mut sums: std::collections::HashMap<usize, (f64, usize)> = std::collections::HashMap::new();
    for (j, &i) in ctx.reported_idx.iter().enumerate() {
        let e = sums.entry(cohort(i)).or_insert((0.0, 0));
        e.0 += oracle[j];
        e.1 += 1;
    }
    let raw: Vec<f64> = ctx
        .reported_idx
        .iter()
        .map(|&i| {
            let (s, c) = sums[&cohort(i)];
            (s / c as f64 * distortion).min(1.0)
        })
        .collect();
    InclusionProbabilities::with_default_floor(raw, PiSource::Model).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{CovariateSpec, DelaySpec, FrequencyMode, FrequencySpec, SeveritySpec};
    use approx::assert_relative_eq;

    #[test]
    fn metrics_hand_values() {
        let m = metrics(&[100.0, 100.0], &[90.0, 110.0]).unwrap();
        assert_relative_eq!(m.me, 0.0);
        assert_relative_eq!(m.mae, 10.0);
        assert_relative_eq!(m.rmse, 10.0);
        assert_relative_eq!(m.mape.unwrap(), 0.1);

        let exact = metrics(&[5.0, 7.0], &[5.0, 7.0]).unwrap();
        assert_relative_eq!(exact.me, 0.0);
        assert_relative_eq!(exact.mape.unwrap(), 0.0);

        // Zero truth entries are excluded from MAPE and counted.
        let part = metrics(&[0.0, 10.0], &[1.0, 12.0]).unwrap();
        assert_eq!(part.n_mape_skipped, 1);
        assert_relative_eq!(part.mape.unwrap(), 0.2);
        let none = metrics(&[0.0], &[1.0]).unwrap();
        assert!(none.mape.is_none());
    }

    #[test]
    fn me_sign_convention_overestimate_is_negative() {
        // An overestimating method must show negative ME.
        let m = metrics(&[100.0], &[150.0]).unwrap();
        assert!(m.me < 0.0);
    }

    fn small_sim(gamma: f64, seed: u64) -> SimConfig {
        SimConfig {
            n_policies: 2500,
            horizon: 24.0,
            covariates: CovariateSpec { ranges: vec![(-1.0, 1.0), (0.0, 1.0)] },
            frequency: FrequencySpec {
                mode: FrequencyMode::Zinb,
                zero_inflation: 0.25,
                theta_intercept: -4.0,
                theta_coefficients: vec![0.3, -0.2],
                dispersion: 1.8,
            },
            severity: SeveritySpec { intercept: 7.0, coefficients: vec![0.4, 0.3], sigma: 1.0 },
            delay: DelaySpec {
                bin_edges: vec![0.0, 1.0, 3.0, 6.0],
                baseline_rates: vec![0.4, 0.22, 0.14, 0.08],
                coefficients: vec![0.15, -0.1],
                severity_coefficient: gamma,
                severity_center: 7.0,
            },
            min_exposure_frac: 1.0,
            rng_seed: seed,
        }
    }

    #[test]
    fn backtest_smoke_all_estimators() {
        let (portfolio, truth) = simulate(&small_sim(0.5, 41)).unwrap();
        let opts = BacktestOptions { delay_bins: 5, ..Default::default() };
        let grid = [10.0, 12.0, 14.0];
        let report = backtest(&portfolio, Some(&truth), &grid, &opts).unwrap();
        assert_eq!(report.rows.len(), 3);
        for row in &report.rows {
            assert!(
                row.failures.is_empty(),
                "estimator failures at tau {}: {:?}",
                row.tau,
                row.failures
            );
            assert_eq!(row.estimates.len(), opts.estimators.len());
            assert!(row.truth.is_some());
        }
        assert!(!report.metrics.is_empty());
        // The summary equals a recomputation from the stored rows.
        let recomputed = BacktestReport::recompute_metrics(&report.rows);
        for ((l1, m1), (l2, m2)) in report.metrics.iter().zip(&recomputed) {
            assert_eq!(l1, l2);
            assert_relative_eq!(m1.me, m2.me);
            assert_relative_eq!(m1.rmse, m2.rmse);
        }
    }

    #[test]
    fn backtest_single_date_me_matches_row() {
        let (portfolio, truth) = simulate(&small_sim(0.4, 43)).unwrap();
        let opts = BacktestOptions {
            estimators: vec![EstimatorKind::Ml],
            delay_bins: 5,
            ..Default::default()
        };
        let report = backtest(&portfolio, Some(&truth), &[12.0], &opts).unwrap();
        let row = &report.rows[0];
        let est = &row.estimates[0];
        let (_, m) = &report.metrics[0];
        assert_relative_eq!(m.me, row.truth.unwrap() - est.point, max_relative = 1e-12);
    }

    #[test]
    fn backtest_empty_estimator_set_is_valid() {
        let (portfolio, truth) = simulate(&small_sim(0.4, 44)).unwrap();
        let opts = BacktestOptions { estimators: vec![], delay_bins: 5, ..Default::default() };
        let report = backtest(&portfolio, Some(&truth), &[12.0], &opts).unwrap();
        assert!(report.metrics.is_empty());
        assert!(report.rows[0].estimates.is_empty());
    }

    #[test]
    fn backtest_is_deterministic() {
        let (portfolio, truth) = simulate(&small_sim(0.5, 45)).unwrap();
        let opts = BacktestOptions {
            estimators: vec![EstimatorKind::Ipw, EstimatorKind::Aipw],
            delay_bins: 5,
            bootstrap: Some(BootstrapSpec { n_replicates: 200, level: 0.9, seed: 3 }),
            ..Default::default()
        };
        let grid = [11.0, 13.0];
        let a = backtest(&portfolio, Some(&truth), &grid, &opts).unwrap();
        let b = backtest(&portfolio, Some(&truth), &grid, &opts).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            for (ea, eb) in ra.estimates.iter().zip(&rb.estimates) {
                assert_eq!(ea, eb);
            }
        }
    }

    #[test]
    fn ipw_identity_constant_and_step_profiles() {
        let base = IpwIdentityConfig {
            rate: 3.0,
            t: 10.0,
            tau: 10.0,
            severity_log_mean: 1.0,
            severity_log_sd: 0.8,
            profile: PiProfile::Constant(0.5),
            n_replicates: 10_000,
            seed: 71,
        };
        let report = validate_ipw_identity(&base);
        assert!(
            report.within_3_se,
            "constant profile: gap {} vs se {}",
            report.gap, report.mc_se
        );

        let step = IpwIdentityConfig {
            profile: PiProfile::Step {
                edges: vec![2.0, 5.0],
                values: vec![0.2, 0.5, 0.85],
            },
            seed: 72,
            ..base
        };
        let report = validate_ipw_identity(&step);
        assert!(report.within_3_se, "step profile: gap {} vs se {}", report.gap, report.mc_se);

        // π ≡ 1: both sides vanish.
        let sure = IpwIdentityConfig { profile: PiProfile::Constant(1.0), seed: 73, ..base };
        let report = validate_ipw_identity(&sure);
        assert_relative_eq!(report.lhs_mean, 0.0);
        assert_relative_eq!(report.rhs_mean, 0.0);
    }

    #[test]
    fn ipw_identity_holds_on_the_simulator() {
        // Homogeneous-marks portfolio (no covariates, no severity-delay
        // dependence, Poisson counts): π depends on elapsed time only, so
        // the change-of-measure identity applies to simulated portfolios
        // scored with their own true probabilities.
        let cfg = SimConfig {
            n_policies: 400,
            horizon: 12.0,
            covariates: CovariateSpec { ranges: vec![] },
            frequency: FrequencySpec {
                mode: FrequencyMode::Poisson,
                zero_inflation: 0.0,
                theta_intercept: -3.0,
                theta_coefficients: vec![],
                dispersion: 1.0,
            },
            severity: SeveritySpec { intercept: 5.0, coefficients: vec![], sigma: 0.9 },
            delay: DelaySpec {
                bin_edges: vec![0.0, 2.0],
                baseline_rates: vec![0.3, 0.1],
                coefficients: vec![],
                severity_coefficient: 0.0,
                severity_center: 0.0,
            },
            min_exposure_frac: 1.0,
            rng_seed: 0,
        };
        let tau = 12.0;
        let reps = 3000u64;
        let diffs: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut c = cfg.clone();
                c.rng_seed = crate::streams::substream_key(0x1DE, &[rep]);
                let (portfolio, truth) = simulate(&c).unwrap();
                let ctx = partition(&portfolio, tau).unwrap();
                let rhs: f64 = ctx
                    .reported_idx
                    .iter()
                    .map(|&i| {
                        let claim = &portfolio.claims()[i];
                        let pi = truth.true_pi(claim, tau).unwrap();
                        (1.0 - pi) / pi * claim.severity
                    })
                    .sum();
                truth.ibnr_liability(tau) - rhs
            })
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        assert!(mean.abs() <= 3.0 * se, "identity gap {mean} exceeds 3 se ({se})");
    }

    #[test]
    fn double_robustness_directions() {
        // Independence (γ = 0) keeps the marginal severity mean conditionally
        // unbiased, which is what the AIPW guarantee requires.
        let mut sim = small_sim(0.0, 0);
        sim.n_policies = 1500;
        let cfg = DrGridConfig {
            sim,
            tau: 12.0,
            n_replicates: 120,
            severity_bias: 1.5,
            pi_distortion: 1.3,
            cohort_width: 1.0,
            seed: 99,
        };
        let report = double_robustness_grid(&cfg).unwrap();
        for cell in &report.cells {
            if cell.pi_oracle || cell.severity_unbiased {
                assert!(
                    cell.rel_bias_aipw.abs() < 0.05,
                    "AIPW should stay unbiased in cell {:?}",
                    cell
                );
            }
            if !cell.severity_unbiased {
                assert!(cell.rel_bias_ml.abs() > 0.05, "ML must break in cell {:?}", cell);
            }
            if !cell.pi_oracle {
                assert!(cell.rel_bias_ipw.abs() > 0.05, "IPW must break in cell {:?}", cell);
            }
        }
    }
}
