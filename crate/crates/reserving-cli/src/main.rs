//! Config-driven batch front end for the reserving engine.

mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use config::{PiSourceChoice, RunConfig};
use reserving_core::claims::{
    partition, ClaimId, InclusionProbabilities, PiSource, Portfolio, ValuationContext,
    DEFAULT_CLAMP_FLOOR,
};
use reserving_core::delay::empirical_cohort_probabilities;
use reserving_core::error::Error as CoreError;
use reserving_core::estimators::{
    aipw_cl_reserve, aipw_reserve, chain_ladder, credibility_reserve, ipw_reserve, ml_reserve,
    EstimatorKind, Interval, ReserveEstimate, Triangle, TriangleKind,
};
use reserving_core::harness::{
    backtest, double_robustness_grid, fit_models, policy_ibnr, validate_ipw_identity,
    BacktestOptions, BootstrapSpec, DrGridConfig, FittedModels, IpwIdentityConfig, PBarPlugin,
    PiProfile,
};
use reserving_core::io;
use reserving_core::simulator::{simulate, true_inclusion_probability, GroundTruth};
use reserving_core::synthetic::bootstrap_reserve;

const EXIT_CONFIG: i32 = 2;
const EXIT_SCHEMA: i32 = 3;
const EXIT_UNKNOWN_ESTIMATOR: i32 = 4;
const EXIT_CONVERGENCE: i32 = 5;
const EXIT_IO: i32 = 6;
const EXIT_INVALID: i32 = 7;

const EXIT_CODE_HELP: &str = "\
EXIT CODES:
  0  success
  2  config file missing, unparseable, or inconsistent
  3  input file schema mismatch
  4  unknown estimator name (valid: CL, IPW, AIPW, AIPW-CL, ML, ML-wBP, ML-WL, CRED)
  5  model fit failed to converge
  6  I/O error
  7  invalid argument / other failure

On any failure a machine-readable JSON object
{\"code\":N,\"kind\":\"...\",\"message\":\"...\"} is printed to stderr.";

#[derive(Parser)]
#[command(
    name = "reserving",
    about = "IBNR reserving via population sampling: simulate, fit, reserve, backtest, validate",
    after_help = EXIT_CODE_HELP,
    version
)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true, default_value = "reserving.toml")]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master RNG seed (overrides `simulate.rng_seed` / `validate.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Valuation date (overrides `reserve.tau`).
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Comma-separated estimator list (overrides `reserve.estimators`).
    #[arg(long, global = true, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Validate the configuration and print the execution plan; write nothing.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic portfolio; write claims/policies CSV and ground truth.
    Simulate,
    /// Fit delay, severity and frequency models at one valuation date.
    Fit,
    /// Evaluate reserve estimators at one valuation date.
    Reserve,
    /// Run the full pipeline over a valuation grid.
    Backtest,
    /// Monte-Carlo validation: change-of-measure identity and the
    /// double-robustness grid (run with the dependence coefficient zeroed).
    Validate,
}

struct Failure {
    code: i32,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, kind: "config", message: message.into() }
    }

    fn unknown_estimator(name: &str) -> Self {
        Self {
            code: EXIT_UNKNOWN_ESTIMATOR,
            kind: "unknown-estimator",
            message: format!(
                "unknown estimator `{name}`; valid names: CL, IPW, AIPW, AIPW-CL, ML, ML-wBP, ML-WL, CRED"
            ),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let (code, kind) = match &e {
            CoreError::SchemaMismatch(_) => (EXIT_SCHEMA, "schema-mismatch"),
            CoreError::ConvergenceFailure { .. } => (EXIT_CONVERGENCE, "convergence-failure"),
            CoreError::Io(_) | CoreError::Csv(_) | CoreError::Json(_) => (EXIT_IO, "io"),
            _ => (EXIT_INVALID, "invalid"),
        };
        Self { code, kind, message: e.to_string() }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => {}
        Err(f) => {
            eprintln!(
                "{}",
                serde_json::json!({ "code": f.code, "kind": f.kind, "message": f.message })
            );
            std::process::exit(f.code);
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::from_path(&cli.config).map_err(Failure::config)?;

    // Flag overrides.
    if let Some(out) = &cli.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Some(seed) = cli.seed {
        if let Some(sim) = &mut cfg.simulate {
            sim.config.rng_seed = seed;
        }
        cfg.validate.seed = seed;
    }
    if let Some(tau) = cli.tau {
        cfg.reserve.tau = Some(tau);
    }
    if let Some(est) = &cli.estimators {
        cfg.reserve.estimators = est.clone();
    }

    let estimators = parse_estimators(&cfg.reserve.estimators)?;
    let out_dir = PathBuf::from(&cfg.output.dir);

    if cli.dry_run {
        print_plan(cli, &cfg);
        return Ok(());
    }

    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::from(CoreError::Io(e)))?;

    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &out_dir),
        Command::Fit => cmd_fit(&cfg, &out_dir),
        Command::Reserve => cmd_reserve(&cfg, &estimators, &out_dir),
        Command::Backtest => cmd_backtest(&cfg, &estimators, &out_dir),
        Command::Validate => cmd_validate(&cfg, &out_dir),
    }
}

fn parse_estimators(names: &[String]) -> Result<Vec<EstimatorKind>, Failure> {
    names
        .iter()
        .map(|n| EstimatorKind::from_label(n).ok_or_else(|| Failure::unknown_estimator(n)))
        .collect()
}

fn print_plan(cli: &Cli, cfg: &RunConfig) {
    let verb = match cli.command {
        Command::Simulate => "simulate",
        Command::Fit => "fit",
        Command::Reserve => "reserve",
        Command::Backtest => "backtest",
        Command::Validate => "validate",
    };
    println!("plan: {verb}");
    println!("  config: {}", cli.config.display());
    println!("  output dir: {} (not touched: dry run)", cfg.output.dir);
    match cli.command {
        Command::Simulate => {
            if let Some(sim) = &cfg.simulate {
                println!(
                    "  portfolio: {} policies, horizon {}, seed {}",
                    sim.config.n_policies, sim.config.horizon, sim.config.rng_seed
                );
                println!("  artifacts: claims.csv policies.csv ground_truth.json");
            } else {
                println!("  MISSING [simulate] section");
            }
        }
        Command::Fit => {
            println!("  tau: {:?}", cfg.reserve.tau);
            println!("  artifacts: delay_model.json severity_models.json frequency_model.json ibnr_laws.csv");
        }
        Command::Reserve => {
            println!("  tau: {:?}", cfg.reserve.tau);
            println!("  estimators: {:?}", cfg.reserve.estimators);
            println!("  pi source: {:?}", cfg.reserve.pi_source);
            println!("  artifacts: estimates.csv");
        }
        Command::Backtest => {
            println!("  grid: {:?}", cfg.backtest.grid);
            println!("  estimators: {:?}", cfg.reserve.estimators);
            println!("  artifacts: backtest.json backtest.csv backtest_long.csv");
        }
        Command::Validate => {
            println!(
                "  identity replicates: {}, grid replicates: {}",
                cfg.validate.identity_replicates, cfg.validate.grid_replicates
            );
            println!("  artifacts: validate_identity.json validate_dr.json");
        }
    }
}

fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Failure::config("simulate requires a [simulate] section"))?;
    let (portfolio, truth) = simulate(&sim.config)?;
    io::write_claims_csv(&portfolio, &out_dir.join("claims.csv"))?;
    io::write_policies_csv(&portfolio, &out_dir.join("policies.csv"))?;
    let gt = io::ground_truth_file(&truth, &sim.truth_grid);
    io::write_json(&gt, &out_dir.join("ground_truth.json"))?;
    println!(
        "simulated {} policies, {} claims -> {}",
        portfolio.policies().len(),
        portfolio.claims().len(),
        out_dir.display()
    );
    Ok(())
}

fn load_portfolio(cfg: &RunConfig) -> Result<Portfolio, Failure> {
    let claims = cfg
        .inputs
        .claims
        .as_ref()
        .ok_or_else(|| Failure::config("inputs.claims is required"))?;
    let policies = cfg
        .inputs
        .policies
        .as_ref()
        .ok_or_else(|| Failure::config("inputs.policies is required"))?;
    Ok(io::read_portfolio(Path::new(claims), Path::new(policies))?)
}

fn backtest_options(cfg: &RunConfig, estimators: &[EstimatorKind]) -> BacktestOptions {
    BacktestOptions {
        estimators: estimators.to_vec(),
        refit: cfg.backtest.refit.into(),
        delay_bins: cfg.model.delay_bins,
        severity_feature: cfg.model.severity_feature(),
        weight_cap_quantile: cfg.model.weight_cap_quantile,
        triangle_width: cfg.reserve.triangle_width,
        credibility_z: cfg.reserve.credibility_z,
        expert_ultimate_factor: cfg.reserve.expert_ultimate_factor,
        p_bar_plugin: match cfg.model.p_bar_plugin {
            config::PBarChoice::Median => PBarPlugin::Median,
            config::PBarChoice::MarginalLognormal => PBarPlugin::MarginalLognormal,
        },
        bootstrap: cfg.bootstrap.as_ref().map(|b| BootstrapSpec {
            n_replicates: b.n_replicates,
            level: b.level,
            seed: b.seed,
        }),
    }
}

fn require_tau(cfg: &RunConfig) -> Result<f64, Failure> {
    cfg.reserve
        .tau
        .ok_or_else(|| Failure::config("a valuation date is required (reserve.tau or --tau)"))
}

fn cmd_fit(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let tau = require_tau(cfg)?;
    let portfolio = load_portfolio(cfg)?;
    let ctx = partition(&portfolio, tau)?;
    let opts = backtest_options(cfg, &[]);
    let models = fit_models(&portfolio, &ctx, &opts)?;
    io::write_json(&models.hazard, &out_dir.join("delay_model.json"))?;
    io::write_json(
        &serde_json::json!({
            "plain": models.severity_plain,
            "weighted": models.severity_weighted,
            "wbp": models.severity_wbp,
        }),
        &out_dir.join("severity_models.json"),
    )?;
    io::write_json(&models.zinb, &out_dir.join("frequency_model.json"))?;
    let laws = policy_ibnr(&portfolio, &ctx, &models, opts.p_bar_plugin)?;
    io::write_ibnr_laws_csv(&laws, &out_dir.join("ibnr_laws.csv"))?;
    println!(
        "fitted models at tau {tau} on {} reported claims -> {}",
        ctx.reported_idx.len(),
        out_dir.display()
    );
    Ok(())
}

/// π̂ for the reported claims from the configured source.
fn resolve_pis(
    cfg: &RunConfig,
    portfolio: &Portfolio,
    ctx: &ValuationContext,
    models: Option<&FittedModels>,
) -> Result<InclusionProbabilities, Failure> {
    match cfg.reserve.pi_source {
        PiSourceChoice::Model => {
            let models = models.expect("models fitted for model pi source");
            Ok(models.hazard.reported_probabilities(portfolio, ctx)?)
        }
        PiSourceChoice::ChainLadder => Ok(empirical_cohort_probabilities(
            portfolio,
            ctx,
            cfg.reserve.triangle_width,
            TriangleKind::Amounts,
        )?),
        PiSourceChoice::Oracle => {
            let path = cfg.inputs.ground_truth.as_ref().ok_or_else(|| {
                Failure::config("pi_source = \"oracle\" requires inputs.ground_truth")
            })?;
            let gt: io::GroundTruthFile = io::read_json(Path::new(path))?;
            let raw: Vec<f64> = ctx
                .reported_idx
                .iter()
                .map(|&i| {
                    true_inclusion_probability(&gt.config, &portfolio.claims()[i], ctx.tau)
                })
                .collect::<Result<_, _>>()?;
            Ok(InclusionProbabilities::new(raw, PiSource::Oracle, DEFAULT_CLAMP_FLOOR)?)
        }
        PiSourceChoice::File => {
            let path = cfg
                .inputs
                .pi_file
                .as_ref()
                .ok_or_else(|| Failure::config("pi_source = \"file\" requires inputs.pi_file"))?;
            let table = read_pi_file(Path::new(path))?;
            let raw: Vec<f64> = ctx
                .reported_idx
                .iter()
                .map(|&i| {
                    let id = portfolio.claims()[i].claim_id;
                    table.iter().find(|(c, _)| *c == id).map(|(_, p)| *p).ok_or_else(|| {
                        CoreError::SchemaMismatch(format!("pi file has no entry for claim {}", id.0))
                    })
                })
                .collect::<Result<_, _>>()?;
            Ok(InclusionProbabilities::new(raw, PiSource::Oracle, DEFAULT_CLAMP_FLOOR)?)
        }
    }
}

fn read_pi_file(path: &Path) -> Result<Vec<(ClaimId, f64)>, Failure> {
    let mut rdr = csv::Reader::from_path(path).map_err(CoreError::from)?;
    let headers = rdr.headers().map_err(CoreError::from)?;
    if headers.len() != 2 || &headers[0] != "claim_id" || &headers[1] != "pi" {
        return Err(Failure::from(CoreError::SchemaMismatch(
            "pi file header must be `claim_id,pi`".into(),
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(CoreError::from)?;
        let id: u64 = rec[0].parse().map_err(|_| {
            CoreError::SchemaMismatch(format!("pi file line {}: bad claim id", i + 2))
        })?;
        let pi: f64 = rec[1].parse().map_err(|_| {
            CoreError::SchemaMismatch(format!("pi file line {}: bad probability", i + 2))
        })?;
        out.push((ClaimId(id), pi));
    }
    Ok(out)
}

fn cmd_reserve(
    cfg: &RunConfig,
    estimators: &[EstimatorKind],
    out_dir: &Path,
) -> Result<(), Failure> {
    let tau = require_tau(cfg)?;
    let portfolio = load_portfolio(cfg)?;
    let ctx = partition(&portfolio, tau)?;

    let needs_models = cfg.reserve.pi_source == PiSourceChoice::Model
        || estimators.iter().any(|e| {
            matches!(
                e,
                EstimatorKind::Aipw
                    | EstimatorKind::AipwCl
                    | EstimatorKind::Ml
                    | EstimatorKind::MlWbp
                    | EstimatorKind::MlWl
            )
        });
    let opts = backtest_options(cfg, estimators);
    let models =
        if needs_models { Some(fit_models(&portfolio, &ctx, &opts)?) } else { None };
    let pis = resolve_pis(cfg, &portfolio, &ctx, models.as_ref())?;

    let rep_ys: Vec<f64> =
        ctx.reported_idx.iter().map(|&i| portfolio.claims()[i].severity).collect();
    let ibnr = match &models {
        Some(m) => Some(policy_ibnr(&portfolio, &ctx, m, opts.p_bar_plugin)?),
        None => None,
    };
    let reported_pred = |pick: &dyn Fn(&FittedModels) -> &reserving_core::severity::SeverityModel|
     -> Result<Vec<f64>, Failure> {
        let m = models.as_ref().expect("models required");
        Ok(ctx
            .reported_idx
            .iter()
            .map(|&i| pick(m).predict_mean(&portfolio.claims()[i].covariates))
            .collect::<Result<_, _>>()?)
    };
    let ml_point = |yhat: &dyn Fn(&reserving_core::harness::PolicyIbnr) -> f64| -> f64 {
        ibnr.as_ref().expect("laws required").iter().map(|r| r.lambda * yhat(r)).sum()
    };

    let mut estimates: Vec<ReserveEstimate> = Vec::new();
    for kind in estimators {
        let est = match kind {
            EstimatorKind::ChainLadder => {
                let t = Triangle::from_reported(
                    &portfolio,
                    &ctx,
                    0.0,
                    cfg.reserve.triangle_width,
                    TriangleKind::Amounts,
                )?;
                chain_ladder(&t)?.estimate
            }
            EstimatorKind::Ipw => {
                let mut est = ipw_reserve(&rep_ys, &pis)?;
                if let Some(b) = &cfg.bootstrap {
                    let interval =
                        bootstrap_reserve(&rep_ys, &pis, b.n_replicates, b.level, b.seed)?;
                    est.interval = Some(Interval {
                        lo: interval.lo,
                        hi: interval.hi,
                        level: interval.level,
                        method: "geometric-bootstrap".into(),
                    });
                }
                est
            }
            EstimatorKind::Aipw => {
                let yhats = reported_pred(&|m| &m.severity_plain)?;
                aipw_reserve(&rep_ys, &yhats, ml_point(&|r| r.yhat_plain), &pis)?
            }
            EstimatorKind::AipwCl => {
                let cl_pis = empirical_cohort_probabilities(
                    &portfolio,
                    &ctx,
                    cfg.reserve.triangle_width,
                    TriangleKind::Amounts,
                )?;
                let yhats = reported_pred(&|m| &m.severity_plain)?;
                aipw_cl_reserve(&rep_ys, &yhats, ml_point(&|r| r.yhat_plain), &cl_pis)?
            }
            EstimatorKind::Ml => {
                let lambdas: Vec<f64> =
                    ibnr.as_ref().unwrap().iter().map(|r| r.lambda).collect();
                let yhats: Vec<f64> =
                    ibnr.as_ref().unwrap().iter().map(|r| r.yhat_plain).collect();
                ml_reserve(&lambdas, &yhats, EstimatorKind::Ml)?
            }
            EstimatorKind::MlWbp => {
                let lambdas: Vec<f64> =
                    ibnr.as_ref().unwrap().iter().map(|r| r.lambda).collect();
                let yhats: Vec<f64> =
                    ibnr.as_ref().unwrap().iter().map(|r| r.yhat_wbp).collect();
                ml_reserve(&lambdas, &yhats, EstimatorKind::MlWbp)?
            }
            EstimatorKind::MlWl => {
                let lambdas: Vec<f64> =
                    ibnr.as_ref().unwrap().iter().map(|r| r.lambda).collect();
                let yhats: Vec<f64> =
                    ibnr.as_ref().unwrap().iter().map(|r| r.yhat_weighted).collect();
                ml_reserve(&lambdas, &yhats, EstimatorKind::MlWl)?
            }
            EstimatorKind::Credibility => {
                let t = Triangle::from_reported(
                    &portfolio,
                    &ctx,
                    0.0,
                    cfg.reserve.triangle_width,
                    TriangleKind::Amounts,
                )?;
                let cl = chain_ladder(&t)?;
                let cl_ultimate: f64 = cl.ultimates.iter().sum();
                let reported: f64 = rep_ys.iter().sum();
                let pi_total = if cl_ultimate > 0.0 { reported / cl_ultimate } else { 1.0 };
                let expert = cfg.reserve.expert_ultimate_factor * cl_ultimate;
                let mut est = credibility_reserve(
                    cl_ultimate,
                    expert,
                    cfg.reserve.credibility_z,
                    pi_total.clamp(DEFAULT_CLAMP_FLOOR, 1.0),
                )?;
                est.point -= reported;
                est
            }
        };
        estimates.push(est);
    }

    let rows: Vec<(f64, &ReserveEstimate)> = estimates.iter().map(|e| (tau, e)).collect();
    io::write_estimates_csv(&rows, &out_dir.join("estimates.csv"))?;
    let reported_ids: Vec<ClaimId> =
        ctx.reported_idx.iter().map(|&i| portfolio.claims()[i].claim_id).collect();
    io::write_pseudo_population_csv(
        &reserving_core::synthetic::fixed_pseudo_population(&pis),
        &reported_ids,
        &out_dir.join("pseudo_population.csv"),
    )?;
    for est in &estimates {
        println!("{:>8}  {:.2}", est.estimator.label(), est.point);
    }
    Ok(())
}

fn cmd_backtest(
    cfg: &RunConfig,
    estimators: &[EstimatorKind],
    out_dir: &Path,
) -> Result<(), Failure> {
    if cfg.backtest.grid.is_empty() {
        return Err(Failure::config("backtest requires a non-empty backtest.grid"));
    }
    let portfolio = load_portfolio(cfg)?;
    let truth = match &cfg.inputs.ground_truth {
        Some(path) => {
            let gt: io::GroundTruthFile = io::read_json(Path::new(path))?;
            Some(GroundTruth::reconstruct(gt.config, portfolio.claims().to_vec()))
        }
        None => None,
    };
    let opts = backtest_options(cfg, estimators);
    let report = backtest(&portfolio, truth.as_ref(), &cfg.backtest.grid, &opts)?;
    io::write_json(&report, &out_dir.join("backtest.json"))?;
    io::write_backtest_csv(&report, &out_dir.join("backtest.csv"))?;
    io::write_backtest_long_csv(&report, &out_dir.join("backtest_long.csv"))?;
    println!("backtest over {} dates -> {}", report.rows.len(), out_dir.display());
    for (label, m) in &report.metrics {
        println!(
            "{label:>8}  ME {:>12.1}  MAE {:>12.1}  RMSE {:>12.1}  MAPE {}",
            m.me,
            m.mae,
            m.rmse,
            m.mape.map_or("n/a".into(), |v| format!("{:.1}%", 100.0 * v)),
        );
    }
    Ok(())
}

fn cmd_validate(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Failure::config("validate requires a [simulate] section"))?;

    let base = IpwIdentityConfig {
        rate: 3.0,
        t: cfg.validate.tau,
        tau: cfg.validate.tau,
        severity_log_mean: 1.0,
        severity_log_sd: 0.8,
        profile: PiProfile::Constant(0.5),
        n_replicates: cfg.validate.identity_replicates,
        seed: cfg.validate.seed,
    };
    let constant = validate_ipw_identity(&base);
    let step = validate_ipw_identity(&IpwIdentityConfig {
        profile: PiProfile::Step { edges: vec![2.0, 5.0], values: vec![0.25, 0.5, 0.85] },
        seed: cfg.validate.seed + 1,
        ..base
    });
    println!("identity (constant pi): gap {:.2} se {:.2} ok {}", constant.gap, constant.mc_se, constant.within_3_se);
    println!("identity (step pi):     gap {:.2} se {:.2} ok {}", step.gap, step.mc_se, step.within_3_se);
    io::write_json(
        &serde_json::json!({ "constant": constant, "step": step }),
        &out_dir.join("validate_identity.json"),
    )?;

    // The severity-side robustness guarantee assumes a conditionally
    // unbiased severity oracle, so the grid runs with the dependence zeroed.
    let mut grid_sim = sim.config.clone();
    grid_sim.delay.severity_coefficient = 0.0;
    let dr = double_robustness_grid(&DrGridConfig {
        sim: grid_sim,
        tau: cfg.validate.tau,
        n_replicates: cfg.validate.grid_replicates,
        severity_bias: 1.5,
        pi_distortion: 1.3,
        cohort_width: cfg.reserve.triangle_width,
        seed: cfg.validate.seed,
    })?;
    println!("double-robustness grid (relative bias):");
    println!("  pi        severity   AIPW      IPW       ML");
    for cell in &dr.cells {
        println!(
            "  {:9} {:9} {:>8.4} {:>8.4} {:>8.4}",
            if cell.pi_oracle { "oracle" } else { "distorted" },
            if cell.severity_unbiased { "unbiased" } else { "biased" },
            cell.rel_bias_aipw,
            cell.rel_bias_ipw,
            cell.rel_bias_ml
        );
    }
    io::write_json(&dr, &out_dir.join("validate_dr.json"))?;
    Ok(())
}
