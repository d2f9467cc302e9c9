//! Run configuration: defaults, optional TOML config file, command-line
//! overrides. Precedence is flags > config file > defaults, and the effective
//! configuration is echoed into the output directory as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparsemvp::backtest::{BacktestOptions, CovarianceUnits, Strategy};
use sparsemvp::covariance::Divisor;
use sparsemvp::model::{PenaltyConfig, SolverOptions};

use crate::data::{self, Units, DEFAULT_MISSING_MARKERS};
use crate::CliError;

/// Raw optional fields as they appear in the TOML file or on the command
/// line. `None` means "not specified here".
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub strategy: Option<String>,
    pub family: Option<String>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub mv_tau: Option<f64>,
    pub mu_file: Option<PathBuf>,
    pub eta_file: Option<PathBuf>,
    pub groups_file: Option<PathBuf>,
    pub tau: Option<usize>,
    pub cov_units: Option<String>,
    pub divisor: Option<String>,
    pub warm_start: Option<bool>,
    pub units: Option<String>,
    pub missing_markers: Option<Vec<f64>>,
    pub no_impute: Option<bool>,
    pub max_sweeps: Option<usize>,
    pub coord_tol: Option<f64>,
    pub budget_tol: Option<f64>,
    pub kkt_tol: Option<f64>,
}

impl RawConfig {
    pub fn from_toml(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {}", path.display(), e)))?;
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))
    }

    /// `self` wins over `base` field by field.
    pub fn over(self, base: RawConfig) -> RawConfig {
        RawConfig {
            strategy: self.strategy.or(base.strategy),
            family: self.family.or(base.family),
            lambda: self.lambda.or(base.lambda),
            alpha: self.alpha.or(base.alpha),
            delta: self.delta.or(base.delta),
            mv_tau: self.mv_tau.or(base.mv_tau),
            mu_file: self.mu_file.or(base.mu_file),
            eta_file: self.eta_file.or(base.eta_file),
            groups_file: self.groups_file.or(base.groups_file),
            tau: self.tau.or(base.tau),
            cov_units: self.cov_units.or(base.cov_units),
            divisor: self.divisor.or(base.divisor),
            warm_start: self.warm_start.or(base.warm_start),
            units: self.units.or(base.units),
            missing_markers: self.missing_markers.or(base.missing_markers),
            no_impute: self.no_impute.or(base.no_impute),
            max_sweeps: self.max_sweeps.or(base.max_sweeps),
            coord_tol: self.coord_tol.or(base.coord_tol),
            budget_tol: self.budget_tol.or(base.budget_tol),
            kkt_tol: self.kkt_tol.or(base.kkt_tol),
        }
    }
}

/// Fully resolved configuration, echoed as JSON for reproducibility.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub strategy: String,
    pub family: Option<String>,
    pub lambda: f64,
    pub alpha: f64,
    pub delta: f64,
    pub mv_tau: f64,
    pub mu_file: Option<PathBuf>,
    pub eta_file: Option<PathBuf>,
    pub groups_file: Option<PathBuf>,
    pub tau: usize,
    pub cov_units: CovarianceUnits,
    pub divisor: String,
    pub warm_start: bool,
    /// `None` = auto: a `# units:` directive in the panel file applies,
    /// otherwise percent (the Fama-French convention).
    pub units: Option<Units>,
    pub missing_markers: Vec<f64>,
    pub impute: bool,
    pub max_sweeps: usize,
    pub coord_tol: f64,
    pub budget_tol: f64,
    pub kkt_tol: f64,
}

impl EffectiveConfig {
    pub fn resolve(raw: RawConfig) -> Result<Self, CliError> {
        let strategy = raw.strategy.unwrap_or_else(|| "penalized".to_string());
        match strategy.as_str() {
            "penalized" | "equal-weight" | "no-shortsale" => {}
            other => {
                return Err(CliError::Usage(format!(
                    "unknown strategy '{}' (expected penalized|equal-weight|no-shortsale)",
                    other
                )))
            }
        }
        let family = raw.family;
        if let Some(f) = &family {
            match f.as_str() {
                "elastic-net" | "mean-variance" | "weighted-l1" | "berhu" | "group" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown family '{}' (expected elastic-net|mean-variance|weighted-l1|berhu|group)",
                        other
                    )))
                }
            }
        }
        let cov_units = match raw.cov_units.as_deref() {
            None | Some("percent") => CovarianceUnits::Percent,
            Some("fraction") => CovarianceUnits::Fraction,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "unknown cov-units '{}' (expected percent|fraction)",
                    other
                )))
            }
        };
        let divisor = match raw.divisor.as_deref() {
            None | Some("unbiased") => "unbiased".to_string(),
            Some("ml") => "ml".to_string(),
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "unknown divisor '{}' (expected unbiased|ml)",
                    other
                )))
            }
        };
        let units = raw.units.as_deref().map(Units::parse).transpose()?;
        let defaults = SolverOptions::default();
        Ok(Self {
            strategy,
            family,
            lambda: raw.lambda.unwrap_or(0.0),
            alpha: raw.alpha.unwrap_or(1.0),
            delta: raw.delta.unwrap_or(1.0),
            mv_tau: raw.mv_tau.unwrap_or(0.0),
            mu_file: raw.mu_file,
            eta_file: raw.eta_file,
            groups_file: raw.groups_file,
            tau: raw.tau.unwrap_or(120),
            cov_units,
            divisor,
            warm_start: raw.warm_start.unwrap_or(false),
            units,
            missing_markers: raw
                .missing_markers
                .unwrap_or_else(|| DEFAULT_MISSING_MARKERS.to_vec()),
            impute: !raw.no_impute.unwrap_or(false),
            max_sweeps: raw.max_sweeps.unwrap_or(defaults.max_sweeps),
            coord_tol: raw.coord_tol.unwrap_or(defaults.coord_tol),
            budget_tol: raw.budget_tol.unwrap_or(defaults.budget_tol),
            kkt_tol: raw.kkt_tol.unwrap_or(defaults.kkt_tol),
        })
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_sweeps: self.max_sweeps,
            coord_tol: self.coord_tol,
            budget_tol: self.budget_tol,
            kkt_tol: self.kkt_tol,
        }
    }

    pub fn divisor_enum(&self) -> Divisor {
        match self.divisor.as_str() {
            "ml" => Divisor::MaximumLikelihood,
            _ => Divisor::Unbiased,
        }
    }

    pub fn backtest_options(&self) -> BacktestOptions {
        BacktestOptions {
            solver: self.solver_options(),
            divisor: self.divisor_enum(),
            units: self.cov_units,
            warm_start: self.warm_start,
        }
    }

    pub fn ingest_config(&self) -> data::IngestConfig {
        data::IngestConfig {
            units: self.units,
            missing_markers: self.missing_markers.clone(),
            impute: self.impute,
        }
    }

    /// Builds the penalty from the resolved fields; `asset_ids` anchor the
    /// per-asset files.
    pub fn penalty(&self, asset_ids: &[String]) -> Result<PenaltyConfig, CliError> {
        let family = self
            .family
            .as_deref()
            .ok_or_else(|| CliError::Usage("penalized strategy needs --family".to_string()))?;
        match family {
            "elastic-net" => Ok(PenaltyConfig::ElasticNet {
                lambda: self.lambda,
                alpha: self.alpha,
            }),
            "mean-variance" => {
                let mu_file = self.mu_file.as_ref().ok_or_else(|| {
                    CliError::Usage("mean-variance family needs --mu-file".to_string())
                })?;
                let mu = data::read_asset_values(mu_file, asset_ids)?;
                Ok(PenaltyConfig::MeanVariance {
                    lambda: self.lambda,
                    alpha: self.alpha,
                    tau: self.mv_tau,
                    mu,
                })
            }
            "weighted-l1" => {
                let eta_file = self.eta_file.as_ref().ok_or_else(|| {
                    CliError::Usage("weighted-l1 family needs --eta-file".to_string())
                })?;
                let eta = data::read_asset_values(eta_file, asset_ids)?;
                Ok(PenaltyConfig::WeightedL1 {
                    lambda: self.lambda,
                    eta,
                })
            }
            "berhu" => Ok(PenaltyConfig::Berhu {
                lambda: self.lambda,
                delta: self.delta,
            }),
            "group" => {
                let groups_file = self.groups_file.as_ref().ok_or_else(|| {
                    CliError::Usage("group family needs --groups-file".to_string())
                })?;
                let grouping = data::read_grouping(groups_file, asset_ids)?;
                Ok(PenaltyConfig::AdaptiveGroup {
                    lambda1: self.lambda,
                    grouping,
                })
            }
            other => Err(CliError::Usage(format!("unknown family '{}'", other))),
        }
    }

    pub fn strategy(&self, asset_ids: &[String]) -> Result<Strategy, CliError> {
        match self.strategy.as_str() {
            "equal-weight" => Ok(Strategy::EqualWeight),
            "no-shortsale" => Ok(Strategy::NoShortsale),
            _ => Ok(Strategy::Penalized(self.penalty(asset_ids)?)),
        }
    }

    /// Writes the effective configuration next to the outputs.
    pub fn echo_json(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {}", dir.display(), e)))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(dir.join("effective_config.json"), json + "\n")
            .map_err(|e| CliError::Data(format!("cannot write effective_config.json: {}", e)))
    }
}
