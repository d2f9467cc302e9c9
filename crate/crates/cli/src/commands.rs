//! Command implementations behind the thin clap front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sparsemvp::backtest::{self, fmt_f64, ACTIVE_TOL};
use sparsemvp::covariance::sample_covariance_with;
use sparsemvp::model::{CovarianceMatrix, PenaltyConfig, Solution};
use sparsemvp::{berhu_solver, cd_solver, group_solver, oracle};

use crate::config::EffectiveConfig;
use crate::data::{self, Units};
use crate::CliError;

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

pub struct IngestArgs {
    pub input: PathBuf,
    pub units: Option<Units>,
    pub markers: Vec<f64>,
    pub impute: bool,
    pub output: Option<PathBuf>,
    pub emit_units: Units,
}

pub fn run_ingest(args: &IngestArgs) -> Result<(), CliError> {
    let cfg = data::IngestConfig {
        units: args.units,
        missing_markers: args.markers.clone(),
        impute: false,
    };
    let raw = data::ingest_panel(&args.input, &cfg)?;
    let missing = raw.missing_mask().iter().filter(|&&m| m).count();
    let panel = if args.impute {
        sparsemvp::covariance::impute_missing(&raw).map_err(|e| CliError::Data(e.to_string()))?
    } else {
        raw
    };
    println!(
        "panel: {} periods x {} assets, {} missing cells{}",
        panel.periods(),
        panel.assets(),
        missing,
        if args.impute && missing > 0 {
            " (imputed)"
        } else {
            ""
        }
    );
    if let Some(out) = &args.output {
        data::emit_panel(&panel, args.emit_units, &args.markers, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

pub fn run_solve(
    covariance: &Path,
    eff: &EffectiveConfig,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let (names, cov) = data::read_covariance(covariance)?;
    let sol = match eff.strategy.as_str() {
        "equal-weight" => {
            let p = cov.p();
            let w = nalgebra::DVector::from_element(p, 1.0 / p as f64);
            let objective = w.dot(&cov.mul_vec(&w));
            Solution {
                weights: w,
                gamma: f64::NAN,
                iterations: 0,
                converged: true,
                objective,
                kkt_residual: f64::NAN,
            }
        }
        "no-shortsale" => oracle::solve_no_shortsale(&cov, &eff.solver_options())
            .map_err(|e| CliError::Solver(e.to_string()))?,
        _ => {
            let penalty = eff.penalty(&names)?;
            solve_penalty(&cov, &penalty, eff).map_err(CliError::Solver)?
        }
    };
    println!("{:<16} {:>22}", "asset", "weight");
    for (i, name) in names.iter().enumerate() {
        println!("{:<16} {:>22.16e}", name, sol.weights[i]);
    }
    println!(
        "gamma = {:.6e}  iterations = {}  kkt = {:.3e}  objective = {:.10e}  converged = {}",
        sol.gamma, sol.iterations, sol.kkt_residual, sol.objective, sol.converged
    );
    if let Some(out) = output {
        let mut text = String::from("asset,weight\n");
        for (i, name) in names.iter().enumerate() {
            let _ = writeln!(text, "{},{}", name, fmt_f64(sol.weights[i]));
        }
        fs::write(out, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {}", out.display(), e)))?;
        println!("wrote {}", out.display());
    }
    if !sol.converged {
        return Err(CliError::Solver("solver did not converge".to_string()));
    }
    Ok(())
}

/// One-shot no-shortsale solve on a covariance file.
pub fn solve_no_shortsale_file(path: &Path, eff: &EffectiveConfig) -> Result<Solution, CliError> {
    let (_, cov) = data::read_covariance(path)?;
    oracle::solve_no_shortsale(&cov, &eff.solver_options())
        .map_err(|e| CliError::Solver(e.to_string()))
}

fn solve_penalty(
    cov: &CovarianceMatrix,
    penalty: &PenaltyConfig,
    eff: &EffectiveConfig,
) -> Result<Solution, String> {
    let opts = eff.solver_options();
    let res = match penalty {
        PenaltyConfig::Berhu { lambda, delta } => {
            berhu_solver::solve_berhu(cov, *lambda, *delta, &opts)
        }
        PenaltyConfig::AdaptiveGroup { lambda1, grouping } => {
            group_solver::solve_adaptive_group(cov, grouping, *lambda1, &opts)
        }
        _ => cd_solver::solve(cov, penalty, &opts),
    };
    res.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub struct SweepArgs {
    pub covariance: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub lambdas: Vec<f64>,
    pub params: Vec<f64>,
    pub output_dir: PathBuf,
}

pub fn run_sweep(args: &SweepArgs, eff: &EffectiveConfig) -> Result<(), CliError> {
    let family = eff.family.as_deref().unwrap_or("elastic-net");
    if !matches!(family, "elastic-net" | "berhu") {
        return Err(CliError::Usage(format!(
            "sweep supports elastic-net and berhu families, not '{}'",
            family
        )));
    }
    if args.lambdas.is_empty() || args.params.is_empty() {
        return Err(CliError::Usage("sweep grids must be nonempty".to_string()));
    }
    let (names, cov) = match (&args.covariance, &args.panel) {
        (Some(path), None) => data::read_covariance(path)?,
        (None, Some(path)) => {
            let mut ingest = eff.ingest_config();
            ingest.impute = true;
            let panel = data::ingest_panel(path, &ingest)?;
            if panel.periods() < eff.tau {
                return Err(CliError::Data(format!(
                    "panel has {} periods, first window needs τ = {}",
                    panel.periods(),
                    eff.tau
                )));
            }
            let cov = sample_covariance_with(&panel, 0, eff.tau, eff.divisor_enum())
                .and_then(|c| {
                    c.scaled(match eff.cov_units {
                        sparsemvp::backtest::CovarianceUnits::Percent => 1e4,
                        sparsemvp::backtest::CovarianceUnits::Fraction => 1.0,
                    })
                })
                .map_err(|e| CliError::Data(e.to_string()))?;
            (panel.asset_ids().to_vec(), cov)
        }
        _ => {
            return Err(CliError::Usage(
                "sweep needs exactly one of --covariance or --panel".to_string(),
            ))
        }
    };

    eff.echo_json(&args.output_dir)?;
    let grid: Vec<(f64, f64)> = args
        .lambdas
        .iter()
        .flat_map(|&l| args.params.iter().map(move |&a| (l, a)))
        .collect();
    let results: Vec<Result<Solution, String>> = grid
        .par_iter()
        .map(|&(lambda, param)| {
            let opts = eff.solver_options();
            let res = match family {
                "berhu" => berhu_solver::solve_berhu(&cov, lambda, param, &opts),
                _ => cd_solver::solve(
                    &cov,
                    &PenaltyConfig::ElasticNet {
                        lambda,
                        alpha: param,
                    },
                    &opts,
                ),
            };
            res.map_err(|e| e.to_string())
        })
        .collect();

    let param_name = if family == "berhu" { "delta" } else { "alpha" };
    let mut weights_csv = format!("lambda,{},asset,weight\n", param_name);
    let mut profile_csv = format!(
        "lambda,{},pac,pos_share,neg_share,gamma,objective,converged\n",
        param_name
    );
    let mut failures = 0usize;
    let p = cov.p();
    for (&(lambda, param), res) in grid.iter().zip(results.iter()) {
        match res {
            Ok(sol) => {
                for (i, name) in names.iter().enumerate() {
                    let _ = writeln!(
                        weights_csv,
                        "{},{},{},{}",
                        fmt_f64(lambda),
                        fmt_f64(param),
                        name,
                        fmt_f64(sol.weights[i])
                    );
                }
                let pos = sol.weights.iter().filter(|&&w| w > ACTIVE_TOL).count() as f64 / p as f64;
                let neg =
                    sol.weights.iter().filter(|&&w| w < -ACTIVE_TOL).count() as f64 / p as f64;
                let _ = writeln!(
                    profile_csv,
                    "{},{},{},{},{},{},{},{}",
                    fmt_f64(lambda),
                    fmt_f64(param),
                    fmt_f64(backtest::pac(&sol.weights)),
                    fmt_f64(pos),
                    fmt_f64(neg),
                    fmt_f64(sol.gamma),
                    fmt_f64(sol.objective),
                    sol.converged
                );
                if !sol.converged {
                    failures += 1;
                }
            }
            Err(msg) => {
                failures += 1;
                let _ = writeln!(
                    profile_csv,
                    "{},{},,,,,,error: {}",
                    fmt_f64(lambda),
                    fmt_f64(param),
                    msg
                );
            }
        }
    }
    fs::create_dir_all(&args.output_dir).map_err(|e| {
        CliError::Data(format!(
            "cannot create {}: {}",
            args.output_dir.display(),
            e
        ))
    })?;
    fs::write(args.output_dir.join("sweep_weights.csv"), weights_csv)
        .map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(args.output_dir.join("sweep_profile.csv"), profile_csv)
        .map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "swept {} grid points ({} failures); wrote {}",
        grid.len(),
        failures,
        args.output_dir.display()
    );
    if failures > 0 {
        return Err(CliError::Solver(format!("{} grid points failed", failures)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// backtest
// ---------------------------------------------------------------------------

pub fn run_backtest(
    panel_path: &Path,
    eff: &EffectiveConfig,
    output_dir: &Path,
) -> Result<(), CliError> {
    let mut ingest = eff.ingest_config();
    // the engine applies the missing-data rule itself, on the full panel
    ingest.impute = false;
    let panel = data::ingest_panel(panel_path, &ingest)?;
    let strategy = eff.strategy(panel.asset_ids())?;
    let report = backtest::run(&panel, &strategy, eff.tau, &eff.backtest_options())
        .map_err(|e| CliError::Data(e.to_string()))?;
    eff.echo_json(output_dir)?;
    backtest::write_report(&report, output_dir).map_err(|e| CliError::Data(e.to_string()))?;

    let fmt_opt = |v: Option<f64>| {
        v.map(|x| format!("{:.6e}", x))
            .unwrap_or_else(|| "n/a".into())
    };
    println!("rebalance dates : {}", report.rebalance_dates.len());
    println!("oos variance    : {}", fmt_opt(report.oos_variance));
    println!("sharpe ratio    : {}", fmt_opt(report.sharpe));
    println!("median turnover : {}", fmt_opt(report.median_turnover()));
    println!("median pac      : {}", fmt_opt(report.median_pac()));
    println!("median aps      : {}", fmt_opt(report.median_aps()));
    println!("unconverged     : {}", report.n_unconverged());
    println!("wrote {}", output_dir.display());

    if report.n_unconverged() > 0 {
        return Err(CliError::Solver(format!(
            "{} rebalance dates did not converge (report written)",
            report.n_unconverged()
        )));
    }
    Ok(())
}
