//! Claim-count model: ZINB regression for reported counts with a thinning
//! offset, and the closed-form conditional IBNR count law per policy.
//!
//! Parameterization. The public pmf primitive [`zinb_pmf`] takes the negative
//! binomial MEAN as its second argument. The regression model stores `θ_j` in
//! the gamma-scale parameterization of the Poisson mixture
//! (`Λ ~ Gamma(r, scale θ_j)`, count `| Λ ~ Poisson(Λ · offset)`), so the NB
//! branch of the reported-count law has mean `r · θ_j · offset`. The scale
//! form is what makes the conditional update exact:
//!
//! `q̃ = q·1{N^R=0} / (q + (1-q)(1+θξp)^{-r})`, `θ̃ = θ/(1+θξp)`,
//! `r̃ = r + N^R`, and `λ^IBNR = (1-q̃)·r̃·(1-p)·ξ·θ̃`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::delay::FitDiagnostics;
use crate::error::{Error, Result};
use crate::optim::{self, NewtonOptions, Objective};

/// Zero-inflated negative binomial pmf with a mean-parameterized NB branch:
/// `q·1{k=0} + (1-q) · NB(k; mean, dispersion r)`.
pub fn zinb_pmf(k: u64, q: f64, mean: f64, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("q must lie in [0,1], got {q}")));
    }
    if !(mean > 0.0) || !(r > 0.0) {
        return Err(Error::invalid(format!("need mean > 0 and r > 0, got {mean}, {r}")));
    }
    let nb = nb_log_pmf_mean(k, mean, r).exp();
    Ok(if k == 0 { q + (1.0 - q) * nb } else { (1.0 - q) * nb })
}

/// Log pmf of the NB distribution with given mean and dispersion `r`.
fn nb_log_pmf_mean(k: u64, mean: f64, r: f64) -> f64 {
    let kf = k as f64;
    ln_gamma(kf + r) - ln_gamma(r) - ln_gamma(kf + 1.0) + kf * (mean / (mean + r)).ln()
        + r * (r / (mean + r)).ln()
}

/// Fitted ZINB regression for reported claim counts.
///
/// `logit(q_j) = z_jᵀ beta_zero` with `z_j = [1, x_j, ξ_j]` (the exposure
/// enters the zero component as an ordinary covariate column);
/// `log(θ_j) = m_jᵀ beta_mean` with `m_j = [1, x_j]`; shared dispersion `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZinbModel {
    pub beta_zero: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub dispersion: f64,
    pub diagnostics: FitDiagnostics,
    /// Set when the fitted zero-inflation collapsed to the boundary `q ≈ 0`.
    pub q_boundary: bool,
}

impl ZinbModel {
    /// `(q_j, θ_j)` for a policy design row and exposure.
    pub fn params_for(&self, covariates: &[f64], exposure: f64) -> (f64, f64) {
        let mut a = self.beta_zero[0];
        for (i, &x) in covariates.iter().enumerate() {
            a += self.beta_zero[1 + i] * x;
        }
        a += self.beta_zero[self.beta_zero.len() - 1] * exposure;
        let mut b = self.beta_mean[0];
        for (i, &x) in covariates.iter().enumerate() {
            b += self.beta_mean[1 + i] * x;
        }
        (sigmoid(a), b.exp())
    }
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

#[derive(Debug, Clone, Copy)]
pub struct ZinbFitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub ridge: f64,
}

impl Default for ZinbFitOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-8, ridge: 1e-8 }
    }
}

/// ZINB log-likelihood over policies; parameter vector `[β_q, β_m, log r]`
/// (or `[β_q, β_m]` when `fixed_r` pins the dispersion).
struct ZinbLikelihood<'a> {
    counts: &'a [u64],
    offsets: &'a [f64],
    zero_design: Vec<f64>,
    mean_design: Vec<f64>,
    dz: usize,
    dm: usize,
    penalty: f64,
    /// Ridge on `log r`. The NB likelihood can grow along the
    /// extreme-overdispersion ridge (`r -> 0`, `θ -> ∞` at fixed mean) and
    /// flatten towards the Poisson limit (`r -> ∞`); this keeps both
    /// boundaries finite without materially moving identified fits.
    penalty_rho: f64,
    fixed_r: Option<f64>,
}

impl<'a> ZinbLikelihood<'a> {
    fn new(
        counts: &'a [u64],
        offsets: &'a [f64],
        covariates: &'a [Vec<f64>],
        exposures: &'a [f64],
        penalty: f64,
    ) -> Self {
        let n = counts.len();
        let d = covariates.first().map_or(0, |x| x.len());
        let dz = d + 2;
        let dm = d + 1;
        let mut zero_design = Vec::with_capacity(n * dz);
        let mut mean_design = Vec::with_capacity(n * dm);
        for j in 0..n {
            zero_design.push(1.0);
            zero_design.extend_from_slice(&covariates[j]);
            zero_design.push(exposures[j]);
            mean_design.push(1.0);
            mean_design.extend_from_slice(&covariates[j]);
        }
        Self {
            counts,
            offsets,
            zero_design,
            mean_design,
            dz,
            dm,
            penalty,
            penalty_rho: 1e-4,
            fixed_r: None,
        }
    }

    fn unpack(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
        let bq = DVector::from_column_slice(&x.as_slice()[..self.dz]);
        let bm = DVector::from_column_slice(&x.as_slice()[self.dz..self.dz + self.dm]);
        let r = match self.fixed_r {
            Some(r) => r,
            None => x[self.dz + self.dm].exp(),
        };
        (bq, bm, r)
    }

    /// Log-likelihood and (optionally) its gradient.
    fn eval(&self, x: &DVector<f64>, mut grad: Option<&mut DVector<f64>>) -> f64 {
        let (bq, bm, r) = self.unpack(x);
        let lgr = ln_gamma(r);
        let dgr = digamma(r);
        let mut ll = 0.0;
        for j in 0..self.counts.len() {
            let zrow = &self.zero_design[j * self.dz..(j + 1) * self.dz];
            let mrow = &self.mean_design[j * self.dm..(j + 1) * self.dm];
            let a: f64 = zrow.iter().zip(bq.iter()).map(|(z, b)| z * b).sum();
            let b: f64 = mrow.iter().zip(bm.iter()).map(|(m, c)| m * c).sum();
            let q = sigmoid(a);
            let s = b.exp() * self.offsets[j]; // θ_j · offset_j (gamma scale)
            let log1ps = s.ln_1p();
            // s/(1+s), stable up to and including overflow.
            let ratio = if s.is_infinite() { 1.0 } else { s / (1.0 + s) };
            let k = self.counts[j];
            let kf = k as f64;
            if k == 0 {
                let p0 = (-r * log1ps).exp();
                let l = q + (1.0 - q) * p0;
                ll += l.ln();
                if let Some(g) = grad.as_deref_mut() {
                    let da = q * (1.0 - q) * (1.0 - p0) / l;
                    let db = -(1.0 - q) * p0 * r * ratio / l;
                    for (i, z) in zrow.iter().enumerate() {
                        g[i] += da * z;
                    }
                    for (i, m) in mrow.iter().enumerate() {
                        g[self.dz + i] += db * m;
                    }
                    if self.fixed_r.is_none() {
                        g[self.dz + self.dm] += -r * (1.0 - q) * p0 * log1ps / l;
                    }
                }
            } else {
                // k (ln s - ln(1+s)) = -k ln(1 + 1/s), finite for huge s.
                ll += (1.0 - q).ln() + ln_gamma(kf + r) - lgr - ln_gamma(kf + 1.0)
                    - kf * (1.0 / s).ln_1p()
                    - r * log1ps;
                if let Some(g) = grad.as_deref_mut() {
                    let db = kf * (1.0 - ratio) - r * ratio;
                    for (i, z) in zrow.iter().enumerate() {
                        g[i] += -q * z;
                    }
                    for (i, m) in mrow.iter().enumerate() {
                        g[self.dz + i] += db * m;
                    }
                    if self.fixed_r.is_none() {
                        g[self.dz + self.dm] += r * (digamma(kf + r) - dgr - log1ps);
                    }
                }
            }
        }
        let mut penalty_term = 0.5 * self.penalty * x.norm_squared();
        if let Some(g) = grad.as_deref_mut() {
            *g -= self.penalty * x;
        }
        if self.fixed_r.is_none() {
            let rho_idx = self.dz + self.dm;
            let rho = x[rho_idx];
            penalty_term += 0.5 * (self.penalty_rho - self.penalty) * rho * rho;
            if let Some(g) = grad.as_deref_mut() {
                g[rho_idx] -= (self.penalty_rho - self.penalty) * rho;
            }
        }
        ll - penalty_term
    }

    fn log_likelihood(&self, x: &DVector<f64>) -> f64 {
        self.eval(x, None) + 0.5 * self.penalty * x.norm_squared()
    }
}

impl Objective for ZinbLikelihood<'_> {
    fn dim(&self) -> usize {
        self.dz + self.dm + usize::from(self.fixed_r.is_none())
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.eval(x, None)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.eval(x, Some(&mut g));
        g
    }
}

/// Objective view of the ZINB likelihood (used to verify the analytic
/// gradient against finite differences). Parameter layout:
/// `[beta_zero..., beta_mean..., log r]`.
pub fn zinb_objective<'a>(
    counts: &'a [u64],
    offsets: &'a [f64],
    covariates: &'a [Vec<f64>],
    exposures: &'a [f64],
    penalty: f64,
) -> impl Objective + 'a {
    ZinbLikelihood::new(counts, offsets, covariates, exposures, penalty)
}

/// Maximum likelihood ZINB fit on reported counts.
///
/// `offsets[j] = ξ_j^{eff} · p_j(τ)` is the thinning offset inside the NB
/// branch; `exposures[j]` is the contract exposure used as the extra column
/// of the zero-inflation design.
pub fn fit_zinb(
    counts: &[u64],
    offsets: &[f64],
    covariates: &[Vec<f64>],
    exposures: &[f64],
    opts: &ZinbFitOptions,
) -> Result<ZinbModel> {
    let n = counts.len();
    if n == 0 || offsets.len() != n || covariates.len() != n || exposures.len() != n {
        return Err(Error::invalid("fit_zinb inputs must be non-empty and aligned"));
    }
    if offsets.iter().any(|&o| !(o > 0.0)) {
        return Err(Error::invalid("offsets must be positive"));
    }
    if counts.iter().all(|&k| k == 0) {
        return Err(Error::DegenerateFit("all counts are zero".into()));
    }

    let lik = ZinbLikelihood::new(counts, offsets, covariates, exposures, opts.ridge);

    // Moment-flavored start: r = 1, θ intercept from the count/offset ratio,
    // zero-inflation from the excess of observed zeros over the r=1 NB.
    let total_k: f64 = counts.iter().map(|&k| k as f64).sum();
    let total_o: f64 = offsets.iter().sum();
    let s_bar = (total_k / total_o).max(1e-6);
    let zero_share = counts.iter().filter(|&&k| k == 0).count() as f64 / n as f64;
    let p0_nb = 1.0 / (1.0 + s_bar);
    let excess = ((zero_share - p0_nb) / (1.0 - p0_nb).max(1e-6)).clamp(0.02, 0.9);
    let mut x0 = DVector::zeros(lik.dim());
    x0[0] = (excess / (1.0 - excess)).ln();
    x0[lik.dz] = s_bar.ln();

    let newton = NewtonOptions { max_iter: opts.max_iter, grad_tol: opts.grad_tol, ridge: opts.ridge };
    let mut out = optim::maximize(&lik, x0.clone(), &newton);

    if !out.converged {
        // Joint Hessian trouble: profile the dispersion by golden section on
        // log r with an inner Newton fit of the regression coefficients.
        let profiled = golden_section_profile(&lik, &x0, &newton);
        let polished = optim::maximize(&lik, profiled, &newton);
        if polished.value >= out.value {
            out = polished;
        }
    }

    let ll = lik.log_likelihood(&out.x);
    let std_errors = {
        let info = -lik.hessian(&out.x);
        match info.try_inverse() {
            Some(cov) => (0..lik.dim()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
            None => vec![f64::NAN; lik.dim()],
        }
    };
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
            context: "zinb fit".into(),
            iterations: out.iterations,
            grad_norm: out.grad_norm,
        });
    }
    let dz = lik.dz;
    let dm = lik.dm;
    let beta_zero = out.x.as_slice()[..dz].to_vec();
    let beta_mean = out.x.as_slice()[dz..dz + dm].to_vec();
    let dispersion = out.x[dz + dm].exp();
    let model = ZinbModel {
        beta_zero,
        beta_mean,
        dispersion,
        diagnostics,
        q_boundary: false,
    };
    // Boundary flag: the fitted zero-inflation collapsed to ~0 on average.
    let mean_q = covariates
        .iter()
        .zip(exposures)
        .map(|(x, &xi)| model.params_for(x, xi).0)
        .sum::<f64>()
        / n as f64;
    Ok(ZinbModel { q_boundary: mean_q < 0.01, ..model })
}

fn golden_section_profile(
    lik: &ZinbLikelihood,
    x0: &DVector<f64>,
    newton: &NewtonOptions,
) -> DVector<f64> {
    let inner = |rho: f64| -> (f64, DVector<f64>) {
        let fixed = ZinbLikelihood { fixed_r: Some(rho.exp()), ..clone_lik(lik) };
        let start = DVector::from_column_slice(&x0.as_slice()[..fixed.dim()]);
        let out = optim::maximize(&fixed, start, newton);
        (out.value, out.x)
    };
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (-3.0, 8.0);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, _) = inner(c);
    let (mut fd, _) = inner(d);
    for _ in 0..40 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = inner(c).0;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = inner(d).0;
        }
    }
    let rho = 0.5 * (lo + hi);
    let (_, coeffs) = inner(rho);
    let mut full = DVector::zeros(lik.dim());
    full.as_mut_slice()[..coeffs.len()].copy_from_slice(coeffs.as_slice());
    full[lik.dz + lik.dm] = rho;
    full
}

fn clone_lik<'a>(lik: &ZinbLikelihood<'a>) -> ZinbLikelihood<'a> {
    ZinbLikelihood {
        counts: lik.counts,
        offsets: lik.offsets,
        zero_design: lik.zero_design.clone(),
        mean_design: lik.mean_design.clone(),
        dz: lik.dz,
        dm: lik.dm,
        penalty: lik.penalty,
        penalty_rho: lik.penalty_rho,
        fixed_r: lik.fixed_r,
    }
}

/// Conditional IBNR count law of one policy given its reported count.
/// `theta_tilde` is in the gamma-scale parameterization; the law's pmf has
/// NB mean `r̃ · (1-p) · ξ · θ̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbnrCountLaw {
    pub q_tilde: f64,
    pub theta_tilde: f64,
    pub r_tilde: f64,
    pub one_minus_p: f64,
    pub exposure: f64,
}

impl IbnrCountLaw {
    /// Expected IBNR count `λ^IBNR = (1-q̃) r̃ (1-p) ξ θ̃`.
    pub fn mean(&self) -> f64 {
        expected_ibnr_count(self)
    }

    /// Pmf of the conditional IBNR count.
    pub fn pmf(&self, k: u64) -> f64 {
        let nb_mean = self.r_tilde * self.one_minus_p * self.exposure * self.theta_tilde;
        if nb_mean == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        zinb_pmf(k, self.q_tilde, nb_mean, self.r_tilde).expect("valid by construction")
    }
}

/// Applies the conditional update to one policy.
///
/// `exposure_full` feeds the zero-inflation design (the contract exposure);
/// `exposure_eff` is the exposure earned by `τ`, so `exposure_eff · p` is the
/// same offset the reported-count fit used.
pub fn ibnr_conditional(
    model: &ZinbModel,
    covariates: &[f64],
    exposure_full: f64,
    exposure_eff: f64,
    p: f64,
    n_reported: u64,
) -> Result<IbnrCountLaw> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p must lie in [0,1], got {p}")));
    }
    if !(exposure_eff >= 0.0) {
        return Err(Error::invalid("effective exposure must be >= 0"));
    }
    let (q, theta) = model.params_for(covariates, exposure_full);
    let r = model.dispersion;
    Ok(conditional_from_params(q, theta, r, exposure_eff, p, n_reported))
}

/// The displayed conditional update, usable with raw `(q, θ, r)` parameters.
pub fn conditional_from_params(
    q: f64,
    theta: f64,
    r: f64,
    exposure: f64,
    p: f64,
    n_reported: u64,
) -> IbnrCountLaw {
    let s_rep = theta * exposure * p;
    let q_tilde = if n_reported > 0 {
        0.0
    } else {
        q / (q + (1.0 - q) * (1.0 + s_rep).powf(-r))
    };
    IbnrCountLaw {
        q_tilde,
        theta_tilde: theta / (1.0 + s_rep),
        r_tilde: r + n_reported as f64,
        one_minus_p: 1.0 - p,
        exposure,
    }
}

/// `λ^IBNR = (1-q̃) · r̃ · (1-p) · ξ · θ̃`.
pub fn expected_ibnr_count(law: &IbnrCountLaw) -> f64 {
    (1.0 - law.q_tilde) * law.r_tilde * law.one_minus_p * law.exposure * law.theta_tilde
}

/// Poisson-mode counterpart: thinning a Poisson(ξθ) count leaves
/// `N^IBNR ~ Poisson((1-p) ξ θ)` independent of the reported count.
pub fn poisson_expected_ibnr(theta: f64, exposure: f64, p: f64) -> f64 {
    (1.0 - p) * exposure * theta
}
