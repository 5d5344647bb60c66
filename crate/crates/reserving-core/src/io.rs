//! File formats: claims/policies CSV, ground-truth JSON, model JSON,
//! estimate/backtest exports.
//!
//! All floating-point output goes through [`fmt_f64`] (17 significant
//! digits), so identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::claims::{Claim, ClaimId, PolicyId, PolicyRecord, Portfolio};
use crate::error::{Error, Result};
use crate::estimators::ReserveEstimate;
use crate::harness::{BacktestReport, PolicyIbnr};
use crate::simulator::{GroundTruth, SimConfig};
use crate::synthetic::PseudoPopulation;

/// Fixed 17-significant-digit scientific formatting (round-trip exact).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

const CLAIMS_FIXED: [&str; 5] =
    ["claim_id", "policy_id", "accident_time", "report_delay", "severity"];
const POLICIES_FIXED: [&str; 4] = ["policy_id", "exposure", "contract_start", "contract_end"];

pub fn write_claims_csv(portfolio: &Portfolio, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = CLAIMS_FIXED.join(",");
    for name in portfolio.covariate_schema() {
        header.push(',');
        header.push_str(name);
    }
    writeln!(w, "{header}")?;
    for c in portfolio.claims() {
        write!(
            w,
            "{},{},{},{},{}",
            c.claim_id.0,
            c.policy_id.0,
            fmt_f64(c.accident_time),
            fmt_f64(c.report_delay),
            fmt_f64(c.severity)
        )?;
        for &x in &c.covariates {
            write!(w, ",{}", fmt_f64(x))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_policies_csv(portfolio: &Portfolio, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = POLICIES_FIXED.join(",");
    for name in portfolio.covariate_schema() {
        header.push(',');
        header.push_str(name);
    }
    writeln!(w, "{header}")?;
    for p in portfolio.policies() {
        write!(
            w,
            "{},{},{},{}",
            p.policy_id.0,
            fmt_f64(p.exposure),
            fmt_f64(p.contract_start),
            fmt_f64(p.contract_end)
        )?;
        for &x in &p.covariates {
            write!(w, ",{}", fmt_f64(x))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn check_header(actual: &csv::StringRecord, fixed: &[&str], what: &str) -> Result<Vec<String>> {
    if actual.len() < fixed.len() {
        return Err(Error::SchemaMismatch(format!(
            "{what} header has {} columns, expected at least {}",
            actual.len(),
            fixed.len()
        )));
    }
    for (i, name) in fixed.iter().enumerate() {
        if actual.get(i) != Some(name) {
            return Err(Error::SchemaMismatch(format!(
                "{what} column {i} must be `{name}`, found `{}`",
                actual.get(i).unwrap_or("")
            )));
        }
    }
    Ok(actual.iter().skip(fixed.len()).map(str::to_string).collect())
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field.parse().map_err(|_| {
        Error::SchemaMismatch(format!("{what}: line {line}: `{field}` is not a number"))
    })
}

fn parse_u64(field: &str, what: &str, line: usize) -> Result<u64> {
    field.parse().map_err(|_| {
        Error::SchemaMismatch(format!("{what}: line {line}: `{field}` is not an integer id"))
    })
}

/// Reads the claims/policies CSV pair into a validated portfolio. The two
/// files must carry identical covariate columns.
pub fn read_portfolio(claims_path: &Path, policies_path: &Path) -> Result<Portfolio> {
    let mut rdr = csv::Reader::from_path(policies_path)?;
    let schema = check_header(rdr.headers()?, &POLICIES_FIXED, "policies")?;
    let mut policies = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != POLICIES_FIXED.len() + schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "policies: line {line}: {} fields, expected {}",
                rec.len(),
                POLICIES_FIXED.len() + schema.len()
            )));
        }
        let covariates = rec
            .iter()
            .skip(POLICIES_FIXED.len())
            .map(|f| parse_f64(f, "policies", line))
            .collect::<Result<_>>()?;
        policies.push(PolicyRecord {
            policy_id: PolicyId(parse_u64(&rec[0], "policies", line)?),
            exposure: parse_f64(&rec[1], "policies", line)?,
            contract_start: parse_f64(&rec[2], "policies", line)?,
            contract_end: parse_f64(&rec[3], "policies", line)?,
            covariates,
        });
    }

    let mut rdr = csv::Reader::from_path(claims_path)?;
    let claims_schema = check_header(rdr.headers()?, &CLAIMS_FIXED, "claims")?;
    if claims_schema != schema {
        return Err(Error::SchemaMismatch(format!(
            "covariate columns differ between claims ({claims_schema:?}) and policies ({schema:?})"
        )));
    }
    let mut claims = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != CLAIMS_FIXED.len() + schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "claims: line {line}: {} fields, expected {}",
                rec.len(),
                CLAIMS_FIXED.len() + schema.len()
            )));
        }
        let covariates = rec
            .iter()
            .skip(CLAIMS_FIXED.len())
            .map(|f| parse_f64(f, "claims", line))
            .collect::<Result<_>>()?;
        claims.push(Claim {
            claim_id: ClaimId(parse_u64(&rec[0], "claims", line)?),
            policy_id: PolicyId(parse_u64(&rec[1], "claims", line)?),
            accident_time: parse_f64(&rec[2], "claims", line)?,
            report_delay: parse_f64(&rec[3], "claims", line)?,
            severity: parse_f64(&rec[4], "claims", line)?,
            covariates,
        });
    }
    Portfolio::new(policies, claims, schema)
}

/// Ground-truth sidecar: generative parameters plus exact reserves on a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub config: SimConfig,
    pub reserves: Vec<TrueReserveRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueReserveRow {
    pub tau: f64,
    pub ibnr_liability: f64,
    pub ibnr_count: usize,
    pub reported_liability: f64,
    pub total_liability: f64,
}

pub fn ground_truth_file(truth: &GroundTruth, grid: &[f64]) -> GroundTruthFile {
    GroundTruthFile {
        config: truth.config().clone(),
        reserves: grid
            .iter()
            .map(|&tau| TrueReserveRow {
                tau,
                ibnr_liability: truth.ibnr_liability(tau),
                ibnr_count: truth.ibnr_count(tau),
                reported_liability: truth.reported_liability(tau),
                total_liability: truth.total_liability(tau),
            })
            .collect(),
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

/// `valuation_date,estimator,point,model_term,augmentation_term,interval_lo,interval_hi`
pub fn write_estimates_csv(rows: &[(f64, &ReserveEstimate)], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "valuation_date,estimator,point,model_term,augmentation_term,interval_lo,interval_hi"
    )?;
    for (tau, est) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt_f64(*tau),
            est.estimator.label(),
            fmt_f64(est.point),
            fmt_opt(est.model_term),
            fmt_opt(est.augmentation_term),
            fmt_opt(est.interval.as_ref().map(|i| i.lo)),
            fmt_opt(est.interval.as_ref().map(|i| i.hi)),
        )?;
    }
    Ok(())
}

/// `policy_id,q_tilde,theta_tilde,r_tilde,lambda_ibnr`
pub fn write_ibnr_laws_csv(rows: &[PolicyIbnr], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "policy_id,q_tilde,theta_tilde,r_tilde,lambda_ibnr")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.policy_id.0,
            fmt_f64(r.q_tilde),
            fmt_f64(r.theta_tilde),
            fmt_f64(r.r_tilde),
            fmt_f64(r.lambda)
        )?;
    }
    Ok(())
}

/// `source_claim_id,weight` (claim ids resolved through the reported index).
pub fn write_pseudo_population_csv(
    pseudo: &PseudoPopulation,
    reported_claim_ids: &[ClaimId],
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "source_claim_id,weight")?;
    for &(idx, weight) in &pseudo.rows {
        writeln!(w, "{},{}", reported_claim_ids[idx].0, fmt_f64(weight))?;
    }
    Ok(())
}

/// Flat per-date CSV of a backtest report.
pub fn write_backtest_csv(report: &BacktestReport, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "valuation_date,estimator,point,model_term,augmentation_term,interval_lo,interval_hi,truth"
    )?;
    for row in &report.rows {
        for est in &row.estimates {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(row.tau),
                est.estimator.label(),
                fmt_f64(est.point),
                fmt_opt(est.model_term),
                fmt_opt(est.augmentation_term),
                fmt_opt(est.interval.as_ref().map(|i| i.lo)),
                fmt_opt(est.interval.as_ref().map(|i| i.hi)),
                fmt_opt(row.truth),
            )?;
        }
    }
    Ok(())
}

/// Plot-ready long format: one `(date, series, value)` row per observation.
pub fn write_backtest_long_csv(report: &BacktestReport, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "valuation_date,series,value")?;
    for row in &report.rows {
        if let Some(t) = row.truth {
            writeln!(w, "{},truth,{}", fmt_f64(row.tau), fmt_f64(t))?;
        }
        for est in &row.estimates {
            writeln!(w, "{},{},{}", fmt_f64(row.tau), est.estimator.label(), fmt_f64(est.point))?;
        }
    }
    Ok(())
}
