//! Declarative run configuration: one TOML file with nested sections;
//! command-line flags override individual keys. Every key has a default, so
//! partial files stay valid.

use serde::{Deserialize, Serialize};

use reserving_core::delay::SeverityFeature;
use reserving_core::harness::RefitPolicy;
use reserving_core::simulator::SimConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Portfolio inputs for `fit`/`reserve`/`backtest`.
    #[serde(default)]
    pub inputs: Inputs,
    /// Generative model for `simulate` (and the oracle for `validate`).
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub reserve: ReserveSection,
    #[serde(default)]
    pub backtest: BacktestSection,
    #[serde(default)]
    pub bootstrap: Option<BootstrapSection>,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub claims: Option<String>,
    pub policies: Option<String>,
    /// Ground-truth JSON written by `simulate`; enables oracle probabilities
    /// and truth columns in backtests.
    pub ground_truth: Option<String>,
    /// CSV `claim_id,pi` with fixed inclusion probabilities.
    pub pi_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(flatten)]
    pub config: SimConfig,
    /// Valuation dates for the `ground_truth.json` reserve table.
    #[serde(default)]
    pub truth_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub delay_bins: usize,
    pub severity_feature: SeverityFeatureChoice,
    pub severity_bins: usize,
    pub weight_cap_quantile: f64,
    pub p_bar_plugin: PBarChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeverityFeatureChoice {
    None,
    LogLinear,
    Binned,
}

/// Severity plug-in for policy-level inclusion probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PBarChoice {
    Median,
    MarginalLognormal,
}

impl ModelSection {
    pub fn severity_feature(&self) -> SeverityFeature {
        match self.severity_feature {
            SeverityFeatureChoice::None => SeverityFeature::None,
            SeverityFeatureChoice::LogLinear => SeverityFeature::LogLinear,
            SeverityFeatureChoice::Binned => SeverityFeature::Binned(self.severity_bins),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            delay_bins: 8,
            severity_feature: SeverityFeatureChoice::LogLinear,
            severity_bins: 4,
            weight_cap_quantile: 0.995,
            p_bar_plugin: PBarChoice::MarginalLognormal,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReserveSection {
    pub tau: Option<f64>,
    pub estimators: Vec<String>,
    /// π source for IPW/AIPW: "model", "chain-ladder", "oracle", or "file".
    pub pi_source: PiSourceChoice,
    pub triangle_width: f64,
    pub credibility_z: f64,
    pub expert_ultimate_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiSourceChoice {
    Model,
    ChainLadder,
    Oracle,
    File,
}

impl Default for ReserveSection {
    fn default() -> Self {
        Self {
            tau: None,
            estimators: vec!["IPW".into(), "AIPW".into(), "CL".into(), "ML".into()],
            pi_source: PiSourceChoice::Model,
            triangle_width: 1.0,
            credibility_z: 0.5,
            expert_ultimate_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    pub grid: Vec<f64>,
    pub refit: RefitChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitChoice {
    EveryDate,
    Once,
}

impl From<RefitChoice> for RefitPolicy {
    fn from(c: RefitChoice) -> Self {
        match c {
            RefitChoice::EveryDate => RefitPolicy::EveryDate,
            RefitChoice::Once => RefitPolicy::Once,
        }
    }
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self { grid: vec![], refit: RefitChoice::EveryDate }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    pub n_replicates: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    /// Replicates for the identity check and the robustness grid.
    pub identity_replicates: usize,
    pub grid_replicates: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self { identity_replicates: 10_000, grid_replicates: 200, tau: 12.0, seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl RunConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config parse error: {e}"))
    }
}
