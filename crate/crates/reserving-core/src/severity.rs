//! Lognormal severity regression in three estimation modes: plain MLE,
//! odds-ratio-weighted likelihood (fits the unreported-claim population), and
//! weighted-balance-property calibration (post-hoc scaling of a plain fit).
//!
//! `log Y ~ N(xᵀβ, σ²)`; the point prediction is
//! `Ŷ = wbp_b · exp(xᵀβ + σ²/2)`. Weighted fitting solves weighted least
//! squares on the log scale, which is exactly the weighted-likelihood
//! estimating equation for this model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::claims::InclusionProbabilities;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeverityMode {
    Plain,
    Weighted,
    /// Plain fit rescaled to satisfy the odds-weighted balance property.
    PlainWbp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityDiagnostics {
    pub n_obs: usize,
    /// A rank-deficient design was stabilized with a ridge.
    pub ridged: bool,
    /// Calibration was requested with no unreported mass (all π = 1);
    /// `wbp_b` was left at 1.
    pub calibration_undefined: bool,
    /// Number of weights capped at the cap quantile (weighted fits).
    pub n_weights_capped: usize,
}

/// Fitted lognormal severity model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityModel {
    /// `[intercept, coefficients...]` on the covariate row.
    pub beta: Vec<f64>,
    /// Log-scale standard deviation (MLE convention: total-weight denominator).
    pub sigma: f64,
    pub mode: SeverityMode,
    /// Balance-property calibration scalar; 1 unless calibrated.
    pub wbp_b: f64,
    pub diagnostics: SeverityDiagnostics,
}

/// Weighted least squares on `log Y`. `weights = None` is the plain MLE;
/// equal weights give the identical fit.
pub fn fit_lognormal(
    covariates: &[Vec<f64>],
    severities: &[f64],
    weights: Option<&[f64]>,
) -> Result<SeverityModel> {
    let n = severities.len();
    if covariates.len() != n {
        return Err(Error::invalid("covariates and severities must be aligned"));
    }
    if severities.iter().any(|&y| !(y > 0.0)) {
        return Err(Error::invalid("severities must be positive"));
    }
    let d = covariates.first().map_or(0, |x| x.len());
    let p = d + 1;
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::invalid("weights must be aligned with observations"));
        }
        if w.iter().any(|&wi| !(wi >= 0.0) || !wi.is_finite()) {
            return Err(Error::invalid("weights must be finite and >= 0"));
        }
    }
    let total_weight: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => n as f64,
    };
    if !(total_weight > 0.0) {
        return Err(Error::invalid("total weight must be positive"));
    }
    let n_effective = match weights {
        Some(w) => w.iter().filter(|&&wi| wi > 0.0).count(),
        None => n,
    };
    if n_effective < p + 2 {
        return Err(Error::invalid(format!(
            "need at least {} observations with positive weight, have {n_effective}",
            p + 2
        )));
    }

    let mut xtwx: DMatrix<f64> = DMatrix::zeros(p, p);
    let mut xtwy: DVector<f64> = DVector::zeros(p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        row[0] = 1.0;
        row[1..].copy_from_slice(&covariates[i]);
        let ly = severities[i].ln();
        for a in 0..p {
            xtwy[a] += w * row[a] * ly;
            for b in a..p {
                xtwx[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }

    let mut ridged = false;
    let beta = match xtwx.clone().cholesky() {
        Some(ch) => ch.solve(&xtwy),
        None => {
            ridged = true;
            let mut m = xtwx;
            let bump = 1e-8 * (m.trace() / p as f64).max(1.0f64);
            for a in 0..p {
                m[(a, a)] += bump;
            }
            m.cholesky()
                .ok_or_else(|| Error::SingularDesign("severity design is rank deficient".into()))?
                .solve(&xtwy)
        }
    };

    let mut wrss = 0.0;
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        let mut nu = beta[0];
        for (k, &x) in covariates[i].iter().enumerate() {
            nu += beta[k + 1] * x;
        }
        let resid = severities[i].ln() - nu;
        wrss += w * resid * resid;
    }
    let sigma = (wrss / total_weight).sqrt();

    Ok(SeverityModel {
        beta: beta.as_slice().to_vec(),
        sigma,
        mode: if weights.is_some() { SeverityMode::Weighted } else { SeverityMode::Plain },
        wbp_b: 1.0,
        diagnostics: SeverityDiagnostics {
            n_obs: n_effective,
            ridged,
            calibration_undefined: false,
            n_weights_capped: 0,
        },
    })
}

impl SeverityModel {
    /// `Ŷ = wbp_b · exp(xᵀβ + σ²/2)`.
    pub fn predict_mean(&self, covariates: &[f64]) -> Result<f64> {
        if covariates.len() + 1 != self.beta.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} covariates, got {}",
                self.beta.len() - 1,
                covariates.len()
            )));
        }
        let mut nu = self.beta[0];
        for (k, &x) in covariates.iter().enumerate() {
            nu += self.beta[k + 1] * x;
        }
        Ok(self.wbp_b * (nu + 0.5 * self.sigma * self.sigma).exp())
    }
}

/// Weighted lognormal log-likelihood as an optimizer objective, parameter
/// layout `[beta..., log σ]`. The closed-form WLS fit is its maximizer; it
/// exists so the estimating-equation gradient can be verified against finite
/// differences.
pub struct LognormalObjective<'a> {
    covariates: &'a [Vec<f64>],
    severities: &'a [f64],
    weights: Option<&'a [f64]>,
}

pub fn lognormal_objective<'a>(
    covariates: &'a [Vec<f64>],
    severities: &'a [f64],
    weights: Option<&'a [f64]>,
) -> LognormalObjective<'a> {
    LognormalObjective { covariates, severities, weights }
}

impl crate::optim::Objective for LognormalObjective<'_> {
    fn dim(&self) -> usize {
        self.covariates.first().map_or(0, |x| x.len()) + 2
    }

    fn value(&self, params: &nalgebra::DVector<f64>) -> f64 {
        let p = params.len() - 1;
        let sigma = params[p].exp();
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut ll = 0.0;
        for i in 0..self.severities.len() {
            let w = self.weights.map_or(1.0, |w| w[i]);
            let mut nu = params[0];
            for (k, &x) in self.covariates[i].iter().enumerate() {
                nu += params[k + 1] * x;
            }
            let r = self.severities[i].ln() - nu;
            ll += w * (-params[p] - 0.5 * r * r / (sigma * sigma) - half_log_2pi);
        }
        ll
    }

    fn gradient(&self, params: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        let p = params.len() - 1;
        let sigma = params[p].exp();
        let inv_s2 = 1.0 / (sigma * sigma);
        let mut g = nalgebra::DVector::zeros(params.len());
        for i in 0..self.severities.len() {
            let w = self.weights.map_or(1.0, |w| w[i]);
            let mut nu = params[0];
            for (k, &x) in self.covariates[i].iter().enumerate() {
                nu += params[k + 1] * x;
            }
            let r = self.severities[i].ln() - nu;
            g[0] += w * r * inv_s2;
            for (k, &x) in self.covariates[i].iter().enumerate() {
                g[k + 1] += w * r * inv_s2 * x;
            }
            g[p] += w * (r * r * inv_s2 - 1.0);
        }
        g
    }
}

/// Rescales a plain fit so the odds-weighted balance property holds exactly:
/// `Σ w_i (Y_i - b·Ŷ_i) = 0` with `w_i = (1-π̂_i)/π̂_i`, i.e.
/// `b = Σ w_i Y_i / Σ w_i Ŷ_i`. With all π = 1 there is no unreported mass
/// to balance against; `b` stays 1 and the model is flagged.
pub fn calibrate_wbp(
    model: &SeverityModel,
    covariates: &[Vec<f64>],
    severities: &[f64],
    pis: &InclusionProbabilities,
) -> Result<SeverityModel> {
    if model.mode == SeverityMode::Weighted {
        return Err(Error::invalid(
            "balance-property calibration applies to the plain fit, not the weighted one",
        ));
    }
    let n = severities.len();
    if covariates.len() != n || pis.len() != n {
        return Err(Error::invalid("calibration inputs must be aligned"));
    }
    let odds = pis.odds_ratios();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let base = model.predict_mean(&covariates[i])? / model.wbp_b;
        num += odds[i] * severities[i];
        den += odds[i] * base;
    }
    let mut out = model.clone();
    out.mode = SeverityMode::PlainWbp;
    if den == 0.0 {
        out.wbp_b = 1.0;
        out.diagnostics.calibration_undefined = true;
        return Ok(out);
    }
    out.wbp_b = num / den;
    out.diagnostics.calibration_undefined = false;
    Ok(out)
}

/// Odds-ratio weights for the in-processing (weighted-likelihood) fit, with
/// the upper tail capped at the given weight quantile (default 0.995).
/// Returns the weights and the number capped.
pub fn odds_weights(pis: &InclusionProbabilities, cap_quantile: f64) -> Result<(Vec<f64>, usize)> {
    if !(0.0 < cap_quantile && cap_quantile <= 1.0) {
        return Err(Error::invalid("cap quantile must lie in (0, 1]"));
    }
    let mut weights = pis.odds_ratios();
    if cap_quantile >= 1.0 || weights.len() < 2 {
        return Ok((weights, 0));
    }
    let mut sorted = weights.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((sorted.len() - 1) as f64 * cap_quantile).floor() as usize;
    let cap = sorted[idx];
    let mut n_capped = 0;
    for w in &mut weights {
        if *w > cap {
            *w = cap;
            n_capped += 1;
        }
    }
    Ok((weights, n_capped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::{partition, PiSource};
    use crate::streams::substream;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn lognormal_data(n: usize, beta: &[f64], sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = substream(seed, &[12]);
        let mut covs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (1..beta.len()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let mut nu = beta[0];
            for (k, &xi) in x.iter().enumerate() {
                nu += beta[k + 1] * xi;
            }
            ys.push((nu + sigma * crate::sampling::standard_normal(&mut rng)).exp());
            covs.push(x);
        }
        (covs, ys)
    }

    #[test]
    fn plain_fit_recovers_parameters() {
        let beta = [3.0, 0.5, -0.8];
        let sigma = 0.7;
        let (covs, ys) = lognormal_data(50_000, &beta, sigma, 2);
        let model = fit_lognormal(&covs, &ys, None).unwrap();
        // OLS standard errors ~ sigma/sqrt(n·var(x)); 3 SE bounds.
        let se = sigma / (50_000f64).sqrt() * 2.0;
        for k in 0..3 {
            assert!(
                (model.beta[k] - beta[k]).abs() < 3.0 * se,
                "beta[{k}] {} vs {}",
                model.beta[k],
                beta[k]
            );
        }
        assert!((model.sigma - sigma).abs() < 0.01);
        assert_eq!(model.mode, SeverityMode::Plain);
    }

    #[test]
    fn integer_weights_equal_duplicated_rows() {
        let (covs, ys) = lognormal_data(60, &[1.0, 0.4], 0.5, 9);
        let reps = [1usize, 3, 2, 1, 4];
        let weights: Vec<f64> = (0..60).map(|i| reps[i % reps.len()] as f64).collect();
        let weighted = fit_lognormal(&covs, &ys, Some(&weights)).unwrap();

        let mut dup_covs = Vec::new();
        let mut dup_ys = Vec::new();
        for i in 0..60 {
            for _ in 0..reps[i % reps.len()] {
                dup_covs.push(covs[i].clone());
                dup_ys.push(ys[i]);
            }
        }
        let duplicated = fit_lognormal(&dup_covs, &dup_ys, None).unwrap();
        for k in 0..2 {
            assert_relative_eq!(weighted.beta[k], duplicated.beta[k], epsilon = 1e-10);
        }
        assert_relative_eq!(weighted.sigma, duplicated.sigma, epsilon = 1e-10);
    }

    #[test]
    fn weight_rescaling_is_invariant() {
        let (covs, ys) = lognormal_data(80, &[1.0, 0.4], 0.5, 10);
        let mut rng = substream(10, &[13]);
        let w: Vec<f64> = (0..80).map(|_| rng.gen::<f64>() + 0.1).collect();
        let w_scaled: Vec<f64> = w.iter().map(|&wi| 7.3 * wi).collect();
        let a = fit_lognormal(&covs, &ys, Some(&w)).unwrap();
        let b = fit_lognormal(&covs, &ys, Some(&w_scaled)).unwrap();
        for k in 0..2 {
            assert_relative_eq!(a.beta[k], b.beta[k], epsilon = 1e-12);
        }
        assert_relative_eq!(a.sigma, b.sigma, epsilon = 1e-12);
    }

    #[test]
    fn predict_mean_formula() {
        let mut model = SeverityModel {
            beta: vec![0.0],
            sigma: 0.0,
            mode: SeverityMode::Plain,
            wbp_b: 1.0,
            diagnostics: SeverityDiagnostics {
                n_obs: 0,
                ridged: false,
                calibration_undefined: false,
                n_weights_capped: 0,
            },
        };
        assert_relative_eq!(model.predict_mean(&[]).unwrap(), 1.0);
        model.sigma = (2.0 * 2f64.ln()).sqrt();
        assert_relative_eq!(model.predict_mean(&[]).unwrap(), 2.0, epsilon = 1e-12);
        // Calibrated model scales predictions by its b (e.g. 0.70).
        model.wbp_b = 0.70;
        assert_relative_eq!(model.predict_mean(&[]).unwrap(), 1.4, epsilon = 1e-12);
        // Schema mismatch is rejected.
        assert!(model.predict_mean(&[1.0]).is_err());
    }

    #[test]
    fn predict_mean_monotone_in_coefficients() {
        let (covs, ys) = lognormal_data(100, &[1.0, 0.4], 0.5, 3);
        let model = fit_lognormal(&covs, &ys, None).unwrap();
        let mut bumped = model.clone();
        let delta = 0.3;
        bumped.beta[1] += delta;
        let x = [0.8];
        let ratio = bumped.predict_mean(&x).unwrap() / model.predict_mean(&x).unwrap();
        assert_relative_eq!(ratio, (delta * x[0]).exp(), epsilon = 1e-12);
    }

    #[test]
    fn calibration_hand_example() {
        // Two claims: (Y, Ŷ, w) = (100, 200, 1), (300, 100, 3)
        // -> b = (100 + 900)/(200 + 300) = 2.
        let model = SeverityModel {
            beta: vec![0.0, 1.0],
            sigma: 0.0,
            mode: SeverityMode::Plain,
            wbp_b: 1.0,
            diagnostics: SeverityDiagnostics {
                n_obs: 2,
                ridged: false,
                calibration_undefined: false,
                n_weights_capped: 0,
            },
        };
        // Ŷ = exp(x), so x = ln 200, ln 100. w = (1-π)/π = 1, 3 -> π = 0.5, 0.25.
        let covs = vec![vec![200f64.ln()], vec![100f64.ln()]];
        let ys = vec![100.0, 300.0];
        let pis =
            InclusionProbabilities::new(vec![0.5, 0.25], PiSource::Oracle, 1e-6).unwrap();
        let calibrated = calibrate_wbp(&model, &covs, &ys, &pis).unwrap();
        assert_relative_eq!(calibrated.wbp_b, 2.0, epsilon = 1e-12);
        assert_eq!(calibrated.mode, SeverityMode::PlainWbp);

        // Ŷ_i = Y_i gives b = 1.
        let covs_eq = vec![vec![100f64.ln()], vec![300f64.ln()]];
        let calibrated = calibrate_wbp(&model, &covs_eq, &ys, &pis).unwrap();
        assert_relative_eq!(calibrated.wbp_b, 1.0, epsilon = 1e-12);

        // All π = 1: no unreported mass, b stays 1 with the flag set.
        let pis_one =
            InclusionProbabilities::new(vec![1.0, 1.0], PiSource::Oracle, 1e-6).unwrap();
        let flagged = calibrate_wbp(&model, &covs, &ys, &pis_one).unwrap();
        assert_relative_eq!(flagged.wbp_b, 1.0);
        assert!(flagged.diagnostics.calibration_undefined);
    }

    #[test]
    fn calibration_enforces_exact_balance() {
        let (covs, ys) = lognormal_data(500, &[2.0, 0.6], 0.8, 21);
        let model = fit_lognormal(&covs, &ys, None).unwrap();
        let mut rng = substream(21, &[14]);
        let pis = InclusionProbabilities::new(
            (0..500).map(|_| 0.2 + 0.8 * rng.gen::<f64>()).collect(),
            PiSource::Oracle,
            1e-6,
        )
        .unwrap();
        let calibrated = calibrate_wbp(&model, &covs, &ys, &pis).unwrap();
        let odds = pis.odds_ratios();
        let mut imbalance = 0.0;
        let mut scale = 0.0;
        for i in 0..500 {
            let pred = calibrated.predict_mean(&covs[i]).unwrap();
            imbalance += odds[i] * (ys[i] - pred);
            scale += odds[i] * ys[i];
        }
        assert!(
            imbalance.abs() <= 1e-12 * scale.abs(),
            "weighted balance violated: {imbalance} vs scale {scale}"
        );
    }

    #[test]
    fn wls_fit_zeroes_the_weighted_likelihood_gradient() {
        // The closed-form fit is the maximizer of the weighted lognormal
        // log-likelihood: its analytic gradient vanishes at (β̂, log σ̂).
        let (covs, ys) = lognormal_data(300, &[1.5, -0.4], 0.6, 8);
        let mut rng = substream(8, &[15]);
        let w: Vec<f64> = (0..300).map(|_| 0.1 + 2.0 * rng.gen::<f64>()).collect();
        let model = fit_lognormal(&covs, &ys, Some(&w)).unwrap();
        let obj = lognormal_objective(&covs, &ys, Some(&w));
        let mut params = nalgebra::DVector::zeros(3);
        params[0] = model.beta[0];
        params[1] = model.beta[1];
        params[2] = model.sigma.ln();
        let grad = crate::optim::Objective::gradient(&obj, &params);
        assert!(grad.norm() < 1e-6, "gradient at the WLS fit: {grad}");
    }

    #[test]
    fn zero_total_weight_rejected() {
        let (covs, ys) = lognormal_data(20, &[1.0, 0.2], 0.3, 5);
        let w = vec![0.0; 20];
        assert!(fit_lognormal(&covs, &ys, Some(&w)).is_err());
    }

    #[test]
    fn rank_deficient_design_falls_back_to_ridge() {
        // Duplicate column: x2 = x1.
        let (covs1, ys) = lognormal_data(50, &[1.0, 0.4], 0.3, 6);
        let covs: Vec<Vec<f64>> = covs1.iter().map(|x| vec![x[0], x[0]]).collect();
        let model = fit_lognormal(&covs, &ys, None).unwrap();
        assert!(model.diagnostics.ridged);
        assert!(model.beta.iter().all(|b| b.is_finite()));
    }

    #[test]
    fn weighted_fit_targets_unreported_population() {
        // γ > 0: reported claims over-represent large severities. The
        // odds-weighted fit must describe the unreported severity law better
        // than the plain fit (smaller KS distance of the model-implied
        // mixture CDF against the actual unreported severities).
        let cfg = crate::simulator::tests::base_config(0.8, 33);
        let (portfolio, truth) = crate::simulator::simulate(&cfg).unwrap();
        let tau = 12.0;
        let ctx = partition(&portfolio, tau).unwrap();

        let rep_covs: Vec<Vec<f64>> = ctx
            .reported_idx
            .iter()
            .map(|&i| portfolio.claims()[i].covariates.clone())
            .collect();
        let rep_ys: Vec<f64> =
            ctx.reported_idx.iter().map(|&i| portfolio.claims()[i].severity).collect();
        let raw_pis: Vec<f64> = ctx
            .reported_idx
            .iter()
            .map(|&i| truth.true_pi(&portfolio.claims()[i], tau).unwrap())
            .collect();
        let pis = InclusionProbabilities::with_default_floor(raw_pis, PiSource::Oracle).unwrap();

        let plain = fit_lognormal(&rep_covs, &rep_ys, None).unwrap();
        let (weights, _) = odds_weights(&pis, 0.995).unwrap();
        let weighted = fit_lognormal(&rep_covs, &rep_ys, Some(&weights)).unwrap();

        // Compare against claims incurred but unreported at tau; future
        // claims follow the marginal law and would dilute the contrast.
        let unrep: Vec<&crate::claims::Claim> = ctx
            .unreported_idx
            .iter()
            .map(|&i| &portfolio.claims()[i])
            .filter(|c| c.accident_time <= tau)
            .collect();
        let mut unrep_ys: Vec<f64> = unrep.iter().map(|c| c.severity).collect();
        unrep_ys.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let ks = |model: &SeverityModel| -> f64 {
            // Model-implied severity CDF at the unreported covariates.
            let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
            let mut worst: f64 = 0.0;
            for (rank, y) in unrep_ys.iter().enumerate() {
                let mut f = 0.0;
                for c in &unrep {
                    let mut nu = model.beta[0];
                    for (k, &x) in c.covariates.iter().enumerate() {
                        nu += model.beta[k + 1] * x;
                    }
                    // Calibration rescales the prediction, i.e. shifts ν.
                    nu += model.wbp_b.ln();
                    f += statrs::distribution::ContinuousCDF::cdf(
                        &normal,
                        (y.ln() - nu) / model.sigma,
                    );
                }
                f /= unrep.len() as f64;
                let emp_hi = (rank + 1) as f64 / unrep_ys.len() as f64;
                let emp_lo = rank as f64 / unrep_ys.len() as f64;
                worst = worst.max((f - emp_hi).abs()).max((f - emp_lo).abs());
            }
            worst
        };

        let ks_plain = ks(&plain);
        let ks_weighted = ks(&weighted);
        assert!(
            ks_weighted < ks_plain,
            "weighted fit KS {ks_weighted} should beat plain {ks_plain} under dependence"
        );
    }
}
