use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparsemvp_cli::commands::{self, IngestArgs, SweepArgs};
use sparsemvp_cli::config::{EffectiveConfig, RawConfig};
use sparsemvp_cli::data::{Units, DEFAULT_MISSING_MARKERS};
use sparsemvp_cli::CliError;

#[derive(Parser)]
#[command(
    name = "sparsemvp",
    version,
    about = "Sparse minimum-variance portfolios by coordinate-wise descent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct StrategyFlags {
    /// TOML config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// equal-weight | no-shortsale | penalized
    #[arg(long)]
    strategy: Option<String>,
    /// elastic-net | mean-variance | weighted-l1 | berhu | group
    #[arg(long)]
    family: Option<String>,
    /// penalty strength λ (λ₁ for the group family)
    #[arg(long)]
    lambda: Option<f64>,
    /// elastic-net mixing α in [0, 1]
    #[arg(long)]
    alpha: Option<f64>,
    /// berhu threshold δ > 0
    #[arg(long)]
    delta: Option<f64>,
    /// risk preference τ of the mean-variance family
    #[arg(long)]
    mv_tau: Option<f64>,
    /// expected-returns file (asset,value) for mean-variance
    #[arg(long)]
    mu_file: Option<PathBuf>,
    /// per-asset penalty weights file (asset,value) for weighted-l1
    #[arg(long)]
    eta_file: Option<PathBuf>,
    /// grouping file (one line per group, comma-separated asset names)
    #[arg(long)]
    groups_file: Option<PathBuf>,
    /// rolling window length
    #[arg(long)]
    tau: Option<usize>,
    /// covariance units handed to the solver: percent | fraction
    #[arg(long)]
    cov_units: Option<String>,
    /// sample covariance divisor: unbiased | ml
    #[arg(long)]
    divisor: Option<String>,
    /// warm-start each date from the previous weights
    #[arg(long)]
    warm_start: bool,
    /// input panel units: percent | fraction
    #[arg(long)]
    units: Option<String>,
    /// comma-separated missing markers (default "-99.99,-999")
    #[arg(long)]
    missing_markers: Option<String>,
    /// keep missing cells unimputed at ingestion
    #[arg(long)]
    no_impute: bool,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    coord_tol: Option<f64>,
    #[arg(long)]
    budget_tol: Option<f64>,
    #[arg(long)]
    kkt_tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a returns panel, apply the missing-data rule, optionally re-emit
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// input units: percent | fraction (a "# units:" directive in the
        /// file applies when this flag is absent)
        #[arg(long)]
        units: Option<String>,
        #[arg(long)]
        missing_markers: Option<String>,
        #[arg(long)]
        no_impute: bool,
        /// write the normalized panel here
        #[arg(long)]
        output: Option<PathBuf>,
        /// units of the emitted panel (default fraction, which round-trips
        /// bit-exactly)
        #[arg(long)]
        emit_units: Option<String>,
    },
    /// One-shot solve on a covariance file
    Solve {
        #[arg(long)]
        covariance: PathBuf,
        #[command(flatten)]
        strategy: StrategyFlags,
        /// write weights CSV here
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve across a (λ, α) or (λ, δ) grid and emit profile tables
    Sweep {
        #[arg(long)]
        covariance: Option<PathBuf>,
        /// use the first τ-window of this panel instead of a covariance file
        #[arg(long)]
        panel: Option<PathBuf>,
        /// comma-separated λ grid
        #[arg(long)]
        lambdas: String,
        /// comma-separated α grid (elastic-net family)
        #[arg(long)]
        alphas: Option<String>,
        /// comma-separated δ grid (berhu family)
        #[arg(long)]
        deltas: Option<String>,
        #[command(flatten)]
        strategy: StrategyFlags,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Rolling-window backtest of a strategy over a returns panel
    Backtest {
        #[arg(long)]
        panel: PathBuf,
        #[command(flatten)]
        strategy: StrategyFlags,
        #[arg(long)]
        output_dir: PathBuf,
    },
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| CliError::Usage(format!("bad number '{}': {}", t, e)))
        })
        .collect()
}

impl StrategyFlags {
    fn into_raw(self) -> Result<RawConfig, CliError> {
        let missing_markers = match &self.missing_markers {
            Some(s) => Some(parse_f64_list(s)?),
            None => None,
        };
        Ok(RawConfig {
            strategy: self.strategy,
            family: self.family,
            lambda: self.lambda,
            alpha: self.alpha,
            delta: self.delta,
            mv_tau: self.mv_tau,
            mu_file: self.mu_file,
            eta_file: self.eta_file,
            groups_file: self.groups_file,
            tau: self.tau,
            cov_units: self.cov_units,
            divisor: self.divisor,
            warm_start: if self.warm_start { Some(true) } else { None },
            units: self.units,
            missing_markers,
            no_impute: if self.no_impute { Some(true) } else { None },
            max_sweeps: self.max_sweeps,
            coord_tol: self.coord_tol,
            budget_tol: self.budget_tol,
            kkt_tol: self.kkt_tol,
        })
    }
}

fn resolve(flags: StrategyFlags) -> Result<EffectiveConfig, CliError> {
    let file_cfg = match &flags.config {
        Some(path) => RawConfig::from_toml(path)?,
        None => RawConfig::default(),
    };
    let raw = flags.into_raw()?.over(file_cfg);
    EffectiveConfig::resolve(raw)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest {
            input,
            units,
            missing_markers,
            no_impute,
            output,
            emit_units,
        } => {
            let units = units.as_deref().map(Units::parse).transpose()?;
            let markers = match missing_markers.as_deref() {
                Some(s) => parse_f64_list(s)?,
                None => DEFAULT_MISSING_MARKERS.to_vec(),
            };
            let emit_units = emit_units
                .as_deref()
                .map(Units::parse)
                .transpose()?
                .unwrap_or(Units::Fraction);
            commands::run_ingest(&IngestArgs {
                input,
                units,
                markers,
                impute: !no_impute,
                output,
                emit_units,
            })
        }
        Command::Solve {
            covariance,
            strategy,
            output,
        } => {
            let eff = resolve(strategy)?;
            commands::run_solve(&covariance, &eff, output.as_deref())
        }
        Command::Sweep {
            covariance,
            panel,
            lambdas,
            alphas,
            deltas,
            strategy,
            output_dir,
        } => {
            let eff = resolve(strategy)?;
            let lambdas = parse_f64_list(&lambdas)?;
            let family = eff.family.as_deref().unwrap_or("elastic-net");
            let params = match (family, &alphas, &deltas) {
                ("berhu", _, Some(d)) => parse_f64_list(d)?,
                ("berhu", _, None) => {
                    return Err(CliError::Usage("berhu sweep needs --deltas".to_string()))
                }
                (_, Some(a), _) => parse_f64_list(a)?,
                (_, None, _) => {
                    return Err(CliError::Usage(
                        "elastic-net sweep needs --alphas".to_string(),
                    ))
                }
            };
            commands::run_sweep(
                &SweepArgs {
                    covariance,
                    panel,
                    lambdas,
                    params,
                    output_dir,
                },
                &eff,
            )
        }
        Command::Backtest {
            panel,
            strategy,
            output_dir,
        } => {
            let eff = resolve(strategy)?;
            commands::run_backtest(&panel, &eff, &output_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{}", e);
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{}", e);
                    ExitCode::from(1)
                }
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
