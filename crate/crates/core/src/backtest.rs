//! Rolling-window rebalancing engine.
//!
//! At the end of each period `t-1` the covariance is re-estimated from the
//! previous τ periods and the configured strategy is re-solved; the resulting
//! weights are held for period `t`. Per-date metrics:
//!
//! - portfolio return `r̂_por,t = Σ ŵ_{i,t} r_{i,t}`
//! - turnover `to_por,t+1 = Σ_i |ŵ_{i,t+1} - ŵ_{i,t}(1+r_{i,t})/(1+r̂_por,t)|`
//! - PAC (proportion of active assets) and APS (summed magnitude of shorts)
//!
//! plus the whole-sample out-of-sample variance and Sharpe ratio of the
//! realized portfolio returns.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::covariance::{impute_missing, sample_covariance_with, Divisor};
use crate::linalg::median;
use crate::model::{
    CovarianceMatrix, Error, PenaltyConfig, Result, ReturnsPanel, Solution, SolverOptions,
};
use crate::{berhu_solver, cd_solver, group_solver, oracle};

/// Weights with |w_i| above this count as active for PAC/APS. Coordinate
/// descent produces exact zeros; the tolerance guards the direct-solve path.
pub const ACTIVE_TOL: f64 = 1e-8;

/// Illustrative proportional fee per unit of turnover.
pub const FEE_RATE: f64 = 0.0015;

/// Rebalancing strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Penalized(PenaltyConfig),
    EqualWeight,
    NoShortsale,
}

/// Unit convention for the covariance handed to the solver. λ grids from the
/// literature assume percent-scale covariances; panels store fractions, so
/// `Percent` rescales the estimate by 100² before solving. The solution is
/// otherwise scale-equivariant jointly in (Σ, λ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CovarianceUnits {
    #[default]
    Fraction,
    Percent,
}

impl CovarianceUnits {
    fn factor(self) -> f64 {
        match self {
            CovarianceUnits::Fraction => 1.0,
            CovarianceUnits::Percent => 1e4,
        }
    }
}

/// Engine configuration.
#[derive(Debug, Clone, Default)]
pub struct BacktestOptions {
    pub solver: SolverOptions,
    pub divisor: Divisor,
    pub units: CovarianceUnits,
    /// Start each date's solve from the previous date's weights instead of
    /// the 1/p point. Off by default, matching the per-date initialization of
    /// the algorithms.
    pub warm_start: bool,
}

/// Per-rebalance-date metric series plus whole-sample aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub rebalance_dates: Vec<String>,
    pub asset_ids: Vec<String>,
    /// ŵ_t per rebalance date.
    pub weights: Vec<DVector<f64>>,
    pub portfolio_returns: Vec<f64>,
    /// Undefined for the first date (and for wiped-out dates).
    pub turnover: Vec<Option<f64>>,
    pub pac: Vec<f64>,
    pub aps: Vec<f64>,
    /// Budget multiplier per date; absent for the equal-weight strategy and
    /// for failed solves.
    pub gamma: Vec<Option<f64>>,
    /// Per-date converged flag.
    pub solver_diagnostics: Vec<bool>,
    /// Sample variance of the realized portfolio returns (None when fewer
    /// than two dates).
    pub oos_variance: Option<f64>,
    /// Mean / standard deviation of the realized portfolio returns.
    pub sharpe: Option<f64>,
}

impl BacktestReport {
    pub fn median_turnover(&self) -> Option<f64> {
        let vals: Vec<f64> = self.turnover.iter().flatten().copied().collect();
        if vals.is_empty() {
            None
        } else {
            Some(median(&vals))
        }
    }

    pub fn median_pac(&self) -> Option<f64> {
        if self.pac.is_empty() {
            None
        } else {
            Some(median(&self.pac))
        }
    }

    pub fn median_aps(&self) -> Option<f64> {
        if self.aps.is_empty() {
            None
        } else {
            Some(median(&self.aps))
        }
    }

    pub fn n_unconverged(&self) -> usize {
        self.solver_diagnostics.iter().filter(|&&c| !c).count()
    }
}

// ---------------------------------------------------------------------------
// Metric primitives
// ---------------------------------------------------------------------------

/// `Σ w_i r_i`.
pub fn portfolio_return(w: &DVector<f64>, r: &DVector<f64>) -> f64 {
    debug_assert_eq!(w.len(), r.len());
    w.dot(r)
}

/// Turnover needed to move from drifted previous holdings to `w_next`:
/// `Σ_i |w_next,i - w_prev,i (1 + r_prev,i)/(1 + r̂_por)|`.
pub fn turnover(
    w_next: &DVector<f64>,
    w_prev: &DVector<f64>,
    r_prev: &DVector<f64>,
) -> Result<f64> {
    debug_assert_eq!(w_next.len(), w_prev.len());
    debug_assert_eq!(w_next.len(), r_prev.len());
    let gross = 1.0 + portfolio_return(w_prev, r_prev);
    if gross <= 0.0 {
        return Err(Error::PortfolioWipeout(gross));
    }
    let mut sum = 0.0;
    for i in 0..w_next.len() {
        sum += (w_next[i] - w_prev[i] * (1.0 + r_prev[i]) / gross).abs();
    }
    Ok(sum)
}

/// Proportion of active assets `|{i : |w_i| > tol}| / p`.
pub fn pac(w: &DVector<f64>) -> f64 {
    let active = w.iter().filter(|v| v.abs() > ACTIVE_TOL).count();
    active as f64 / w.len() as f64
}

/// Absolute position of short sales `Σ_{w_i < 0} |w_i|`.
pub fn aps(w: &DVector<f64>) -> f64 {
    w.iter().filter(|&&v| v < -ACTIVE_TOL).map(|v| -v).sum()
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Runs the rolling-window backtest: for every date `t` in `τ..T`, estimate
/// the covariance from `[t-τ, t)`, solve the strategy, and record the metric
/// series. Solver failures are recorded in the diagnostics and the previous
/// weights are carried forward.
pub fn run(
    panel: &ReturnsPanel,
    strategy: &Strategy,
    tau: usize,
    opts: &BacktestOptions,
) -> Result<BacktestReport> {
    opts.solver.validate()?;
    if tau < 2 {
        return Err(Error::InvalidInput(format!(
            "window τ = {} must be >= 2",
            tau
        )));
    }
    let panel = impute_missing(panel)?;
    let (t_total, p) = (panel.periods(), panel.assets());
    if t_total <= tau {
        return Err(Error::InvalidInput(format!(
            "panel has {} periods; need more than τ = {}",
            t_total, tau
        )));
    }
    if let Strategy::Penalized(pen) = strategy {
        pen.validate(p)?;
    }

    let n = t_total - tau;
    let mut report = BacktestReport {
        rebalance_dates: Vec::with_capacity(n),
        asset_ids: panel.asset_ids().to_vec(),
        weights: Vec::with_capacity(n),
        portfolio_returns: Vec::with_capacity(n),
        turnover: Vec::with_capacity(n),
        pac: Vec::with_capacity(n),
        aps: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        solver_diagnostics: Vec::with_capacity(n),
        oos_variance: None,
        sharpe: None,
    };

    let uniform = DVector::from_element(p, 1.0 / p as f64);
    for (k, date_row) in (tau..t_total).enumerate() {
        let cov = sample_covariance_with(&panel, date_row - tau, tau, opts.divisor)?
            .scaled(opts.units.factor())?;
        let warm = if opts.warm_start && k > 0 {
            Some(&report.weights[k - 1])
        } else {
            None
        };
        let (w, gamma, converged) = match solve_strategy(&cov, strategy, &opts.solver, warm) {
            Ok((w, gamma, converged)) => (w, gamma, converged),
            Err(_) => {
                // carry the previous date's weights forward, flagged
                let prev = if k > 0 {
                    report.weights[k - 1].clone()
                } else {
                    uniform.clone()
                };
                (prev, None, false)
            }
        };

        let realized = panel.row(date_row);
        report
            .portfolio_returns
            .push(portfolio_return(&w, &realized));
        let to = if k == 0 {
            None
        } else {
            let r_prev = panel.row(date_row - 1);
            turnover(&w, &report.weights[k - 1], &r_prev).ok()
        };
        report.turnover.push(to);
        report.pac.push(pac(&w));
        report.aps.push(aps(&w));
        report.gamma.push(gamma);
        report.solver_diagnostics.push(converged);
        report.rebalance_dates.push(panel.dates()[date_row].clone());
        report.weights.push(w);
    }

    let (var, sharpe) = return_moments(&report.portfolio_returns, opts.divisor);
    report.oos_variance = var;
    report.sharpe = sharpe;
    Ok(report)
}

fn solve_strategy(
    cov: &CovarianceMatrix,
    strategy: &Strategy,
    solver: &SolverOptions,
    warm: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, Option<f64>, bool)> {
    match strategy {
        Strategy::EqualWeight => {
            let p = cov.p();
            Ok((DVector::from_element(p, 1.0 / p as f64), None, true))
        }
        Strategy::NoShortsale => {
            let sol = oracle::solve_no_shortsale(cov, solver)?;
            Ok(unpack(sol))
        }
        Strategy::Penalized(pen) => {
            let sol = match pen {
                PenaltyConfig::ElasticNet { .. }
                | PenaltyConfig::MeanVariance { .. }
                | PenaltyConfig::WeightedL1 { .. } => {
                    cd_solver::solve_from(cov, pen, solver, warm)?
                }
                PenaltyConfig::Berhu { lambda, delta } => {
                    berhu_solver::solve_berhu_from(cov, *lambda, *delta, solver, warm)?
                }
                PenaltyConfig::AdaptiveGroup { lambda1, grouping } => {
                    group_solver::solve_adaptive_group_from(cov, grouping, *lambda1, solver, warm)?
                }
            };
            Ok(unpack(sol))
        }
    }
}

fn unpack(sol: Solution) -> (DVector<f64>, Option<f64>, bool) {
    let converged = sol.converged;
    (sol.weights, Some(sol.gamma), converged)
}

fn return_moments(returns: &[f64], divisor: Divisor) -> (Option<f64>, Option<f64>) {
    let n = returns.len();
    if n < 2 {
        return (None, None);
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let ss: f64 = returns.iter().map(|r| (r - mean) * (r - mean)).sum();
    let var = ss / divisor.value(n);
    let sd = var.sqrt();
    let sharpe = if sd > 0.0 { Some(mean / sd) } else { None };
    (Some(var), sharpe)
}

// ---------------------------------------------------------------------------
// Report serialization: one CSV per metric series plus a JSON summary
// ---------------------------------------------------------------------------

/// 17 significant digits: enough for a bit-exact f64 round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryJson {
    n_dates: usize,
    n_unconverged: usize,
    oos_variance: Option<f64>,
    sharpe: Option<f64>,
    median_turnover: Option<f64>,
    median_pac: Option<f64>,
    median_aps: Option<f64>,
}

/// Writes the full report into `dir` (created if needed).
pub fn write_report(report: &BacktestReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let series = |name: &str, values: &dyn Fn(usize) -> String, header: &str| -> Result<()> {
        let mut out = String::from(header);
        out.push('\n');
        for (k, date) in report.rebalance_dates.iter().enumerate() {
            out.push_str(date);
            out.push(',');
            out.push_str(&values(k));
            out.push('\n');
        }
        fs::write(dir.join(name), out)?;
        Ok(())
    };
    series(
        "portfolio_returns.csv",
        &|k| fmt_f64(report.portfolio_returns[k]),
        "date,portfolio_return",
    )?;
    series(
        "turnover.csv",
        &|k| {
            let to = report.turnover[k];
            format!("{},{}", fmt_opt(to), fmt_opt(to.map(|t| FEE_RATE * t)))
        },
        "date,turnover,expected_fee_rate",
    )?;
    series("pac.csv", &|k| fmt_f64(report.pac[k]), "date,pac")?;
    series("aps.csv", &|k| fmt_f64(report.aps[k]), "date,aps")?;
    series("gamma.csv", &|k| fmt_opt(report.gamma[k]), "date,gamma")?;
    series(
        "diagnostics.csv",
        &|k| report.solver_diagnostics[k].to_string(),
        "date,converged",
    )?;

    let mut weights = String::from("date,asset,weight\n");
    for (k, date) in report.rebalance_dates.iter().enumerate() {
        for (i, asset) in report.asset_ids.iter().enumerate() {
            weights.push_str(&format!(
                "{},{},{}\n",
                date,
                asset,
                fmt_f64(report.weights[k][i])
            ));
        }
    }
    fs::write(dir.join("weights.csv"), weights)?;

    let summary = SummaryJson {
        n_dates: report.rebalance_dates.len(),
        n_unconverged: report.n_unconverged(),
        oos_variance: report.oos_variance,
        sharpe: report.sharpe,
        median_turnover: report.median_turnover(),
        median_pac: report.median_pac(),
        median_aps: report.median_aps(),
    };
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::ReportFormat(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// Reads a report written by [`write_report`]; the reconstruction is
/// bit-exact.
pub fn read_report(dir: &Path) -> Result<BacktestReport> {
    let parse_series = |name: &str| -> Result<Vec<(String, Vec<String>)>> {
        let text = fs::read_to_string(dir.join(name))?;
        let mut rows = Vec::new();
        for line in text.lines().skip(1) {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let date = parts
                .next()
                .ok_or_else(|| Error::ReportFormat(format!("{}: empty line", name)))?;
            rows.push((date.to_string(), parts.map(|s| s.to_string()).collect()));
        }
        Ok(rows)
    };
    let parse_f64 = |s: &str, name: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::ReportFormat(format!("{}: bad float '{}': {}", name, s, e)))
    };

    let returns_rows = parse_series("portfolio_returns.csv")?;
    let rebalance_dates: Vec<String> = returns_rows.iter().map(|(d, _)| d.clone()).collect();
    let mut portfolio_returns = Vec::new();
    for (_, vals) in &returns_rows {
        portfolio_returns.push(parse_f64(&vals[0], "portfolio_returns.csv")?);
    }

    let mut turnover = Vec::new();
    for (_, vals) in parse_series("turnover.csv")? {
        turnover.push(if vals[0].is_empty() {
            None
        } else {
            Some(parse_f64(&vals[0], "turnover.csv")?)
        });
    }
    let mut pac = Vec::new();
    for (_, vals) in parse_series("pac.csv")? {
        pac.push(parse_f64(&vals[0], "pac.csv")?);
    }
    let mut aps = Vec::new();
    for (_, vals) in parse_series("aps.csv")? {
        aps.push(parse_f64(&vals[0], "aps.csv")?);
    }
    let mut gamma = Vec::new();
    for (_, vals) in parse_series("gamma.csv")? {
        gamma.push(if vals[0].is_empty() {
            None
        } else {
            Some(parse_f64(&vals[0], "gamma.csv")?)
        });
    }
    let mut solver_diagnostics = Vec::new();
    for (_, vals) in parse_series("diagnostics.csv")? {
        solver_diagnostics.push(vals[0] == "true");
    }

    // weights.csv carries the asset order
    let mut asset_ids: Vec<String> = Vec::new();
    let mut weight_rows: Vec<Vec<f64>> = vec![Vec::new(); rebalance_dates.len()];
    {
        let text = fs::read_to_string(dir.join("weights.csv"))?;
        let mut date_index = std::collections::HashMap::new();
        for (k, d) in rebalance_dates.iter().enumerate() {
            date_index.insert(d.clone(), k);
        }
        for line in text.lines().skip(1) {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::ReportFormat(format!(
                    "weights.csv: bad row '{}'",
                    line
                )));
            }
            let k = *date_index.get(parts[0]).ok_or_else(|| {
                Error::ReportFormat(format!("weights.csv: unknown date {}", parts[0]))
            })?;
            if k == 0 && !asset_ids.contains(&parts[1].to_string()) {
                asset_ids.push(parts[1].to_string());
            }
            weight_rows[k].push(parse_f64(parts[2], "weights.csv")?);
        }
    }
    let weights: Vec<DVector<f64>> = weight_rows.into_iter().map(DVector::from_vec).collect();

    let text = fs::read_to_string(dir.join("summary.json"))?;
    let summary: SummaryJson =
        serde_json::from_str(&text).map_err(|e| Error::ReportFormat(e.to_string()))?;

    Ok(BacktestReport {
        rebalance_dates,
        asset_ids,
        weights,
        portfolio_returns,
        turnover,
        pac,
        aps,
        gamma,
        solver_diagnostics,
        oos_variance: summary.oos_variance,
        sharpe: summary.sharpe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DMatrix};
    use rand::prelude::*;

    #[test]
    fn portfolio_return_examples() {
        assert_eq!(
            portfolio_return(&dvector![0.5, 0.5], &dvector![0.02, 0.04]),
            0.03
        );
        let w = dvector![0.3, 0.7];
        assert!((portfolio_return(&w, &dvector![0.05, 0.05]) - 0.05).abs() < 1e-16);
        let long_short = dvector![1.2, -0.2];
        assert!((portfolio_return(&long_short, &dvector![0.01, 0.05]) - 0.002).abs() < 1e-16);
    }

    #[test]
    fn turnover_examples() {
        let w = dvector![0.5, 0.5];
        assert_eq!(turnover(&w, &w, &dvector![0.0, 0.0]).unwrap(), 0.0);
        let t = turnover(&dvector![0.6, 0.4], &w, &dvector![0.0, 0.0]).unwrap();
        assert!((t - 0.2).abs() < 1e-15);
        // drift-only case, hand value 1/21
        let t = turnover(&w, &w, &dvector![0.1, 0.0]).unwrap();
        assert!((t - 0.047_619_047_619_047_62).abs() < 1e-12);
    }

    #[test]
    fn turnover_wipeout_detected() {
        // leveraged book with a -200% move on the long leg: gross return <= 0
        let w = dvector![1.5, -0.5];
        let err = turnover(&w, &w, &dvector![-2.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::PortfolioWipeout(_)));
    }

    #[test]
    fn pac_aps_examples() {
        let w = dvector![0.5, 0.5, 0.0, 0.0];
        assert_eq!(pac(&w), 0.5);
        assert_eq!(aps(&w), 0.0);
        let w = dvector![1.2, -0.2];
        assert_eq!(pac(&w), 1.0);
        assert!((aps(&w) - 0.2).abs() < 1e-16);
        let w = DVector::from_element(5, 0.2);
        assert_eq!(pac(&w), 1.0);
        assert_eq!(aps(&w), 0.0);
    }

    fn synthetic_panel(seed: u64, t: usize, p: usize) -> ReturnsPanel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..t * p).map(|_| rng.random_range(-0.08..0.1)).collect();
        ReturnsPanel::fully_observed(
            (0..t).map(|i| format!("{:06}", 200001 + i)).collect(),
            (0..p).map(|i| format!("a{}", i)).collect(),
            DMatrix::from_row_slice(t, p, &data),
        )
        .unwrap()
    }

    #[test]
    fn equal_weight_turnover_matches_formula() {
        let panel = synthetic_panel(61, 8, 3);
        let opts = BacktestOptions::default();
        let report = run(&panel, &Strategy::EqualWeight, 3, &opts).unwrap();
        assert_eq!(report.rebalance_dates.len(), 5);
        assert!(report.turnover[0].is_none());
        for k in 1..5 {
            let row = 3 + k - 1;
            let r = panel.row(row);
            let rbar = r.sum() / 3.0;
            let expect: f64 = (0..3)
                .map(|i| ((1.0 + r[i]) / (1.0 + rbar) / 3.0 - 1.0 / 3.0).abs())
                .sum();
            assert!((report.turnover[k].unwrap() - expect).abs() < 1e-14);
        }
        assert!(report.pac.iter().all(|&v| v == 1.0));
        assert!(report.aps.iter().all(|&v| v == 0.0));
        assert!(report.gamma.iter().all(|g| g.is_none()));
    }

    #[test]
    fn penalized_lambda_zero_matches_per_date_closed_form() {
        let panel = synthetic_panel(62, 12, 3);
        let opts = BacktestOptions::default();
        let strategy = Strategy::Penalized(PenaltyConfig::ElasticNet {
            lambda: 0.0,
            alpha: 1.0,
        });
        let report = run(&panel, &strategy, 6, &opts).unwrap();
        for (k, date_row) in (6..12).enumerate() {
            let cov = crate::covariance::sample_covariance(&panel, date_row - 6, 6).unwrap();
            let mut kkt = nalgebra::DMatrix::zeros(4, 4);
            for i in 0..3 {
                for j in 0..3 {
                    kkt[(i, j)] = 2.0 * cov.matrix()[(i, j)];
                }
                kkt[(i, 3)] = -1.0;
                kkt[(3, i)] = 1.0;
            }
            let mut rhs = nalgebra::DVector::zeros(4);
            rhs[3] = 1.0;
            let sol = kkt.lu().solve(&rhs).unwrap();
            for i in 0..3 {
                assert!((report.weights[k][i] - sol[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn every_recorded_weight_vector_is_on_budget() {
        let panel = synthetic_panel(63, 14, 4);
        let opts = BacktestOptions {
            units: CovarianceUnits::Percent,
            ..Default::default()
        };
        for strategy in [
            Strategy::EqualWeight,
            Strategy::NoShortsale,
            Strategy::Penalized(PenaltyConfig::ElasticNet {
                lambda: 2.0,
                alpha: 1.0,
            }),
        ] {
            let report = run(&panel, &strategy, 8, &opts).unwrap();
            for w in &report.weights {
                assert!((w.sum() - 1.0).abs() <= 1e-8, "{:?}", strategy);
            }
        }
    }

    #[test]
    fn no_shortsale_has_no_shorts() {
        let panel = synthetic_panel(64, 16, 4);
        let report = run(
            &panel,
            &Strategy::NoShortsale,
            8,
            &BacktestOptions::default(),
        )
        .unwrap();
        for (w, a) in report.weights.iter().zip(report.aps.iter()) {
            assert!(w.min() >= -1e-9);
            assert!(*a <= 1e-9);
        }
        assert!(report.solver_diagnostics.iter().all(|&c| c));
    }

    #[test]
    fn deterministic_repeat_runs() {
        let panel = synthetic_panel(65, 14, 4);
        let opts = BacktestOptions {
            units: CovarianceUnits::Percent,
            ..Default::default()
        };
        let strategy = Strategy::Penalized(PenaltyConfig::ElasticNet {
            lambda: 1.0,
            alpha: 0.5,
        });
        let a = run(&panel, &strategy, 8, &opts).unwrap();
        let b = run(&panel, &strategy, 8, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warm_start_reaches_same_weights() {
        let panel = synthetic_panel(66, 16, 4);
        let strategy = Strategy::Penalized(PenaltyConfig::ElasticNet {
            lambda: 1.5,
            alpha: 1.0,
        });
        let cold = run(
            &panel,
            &strategy,
            8,
            &BacktestOptions {
                units: CovarianceUnits::Percent,
                ..Default::default()
            },
        )
        .unwrap();
        let warm = run(
            &panel,
            &strategy,
            8,
            &BacktestOptions {
                units: CovarianceUnits::Percent,
                warm_start: true,
                ..Default::default()
            },
        )
        .unwrap();
        for (wc, ww) in cold.weights.iter().zip(warm.weights.iter()) {
            for i in 0..4 {
                assert!((wc[i] - ww[i]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn aggregates_match_series() {
        let panel = synthetic_panel(67, 12, 3);
        let report = run(
            &panel,
            &Strategy::EqualWeight,
            6,
            &BacktestOptions::default(),
        )
        .unwrap();
        let rs = &report.portfolio_returns;
        let mean = rs.iter().sum::<f64>() / rs.len() as f64;
        let var = rs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (rs.len() - 1) as f64;
        assert!((report.oos_variance.unwrap() - var).abs() < 1e-18);
        assert!((report.sharpe.unwrap() - mean / var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn report_round_trip_is_bit_exact() {
        let panel = synthetic_panel(68, 14, 3);
        let strategy = Strategy::Penalized(PenaltyConfig::ElasticNet {
            lambda: 1.0,
            alpha: 1.0,
        });
        let opts = BacktestOptions {
            units: CovarianceUnits::Percent,
            ..Default::default()
        };
        let report = run(&panel, &strategy, 8, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(&report, dir.path()).unwrap();
        let back = read_report(dir.path()).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn solver_failure_carries_weights_forward_flagged() {
        // a constant asset has zero variance, which the berhu update cannot
        // handle: every date errors, the run continues on carried weights
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(70);
        let t = 10;
        let mut data = Vec::new();
        for _ in 0..t {
            data.push(0.01); // constant column
            data.push(rng.random_range(-0.05..0.05));
            data.push(rng.random_range(-0.05..0.05));
        }
        let panel = ReturnsPanel::fully_observed(
            (0..t).map(|i| format!("{:06}", 200001 + i)).collect(),
            vec!["const".into(), "a".into(), "b".into()],
            DMatrix::from_row_slice(t, 3, &data),
        )
        .unwrap();
        let strategy = Strategy::Penalized(PenaltyConfig::Berhu {
            lambda: 1.0,
            delta: 0.5,
        });
        let report = run(&panel, &strategy, 5, &BacktestOptions::default()).unwrap();
        assert_eq!(report.rebalance_dates.len(), 5);
        assert!(report.solver_diagnostics.iter().all(|&c| !c));
        assert!(report.gamma.iter().all(|g| g.is_none()));
        for w in &report.weights {
            for i in 0..3 {
                assert_eq!(w[i], 1.0 / 3.0); // carried from the 1/p fallback
            }
        }
    }

    #[test]
    fn rejects_short_panel() {
        let panel = synthetic_panel(69, 5, 3);
        assert!(run(
            &panel,
            &Strategy::EqualWeight,
            5,
            &BacktestOptions::default()
        )
        .is_err());
        assert!(run(
            &panel,
            &Strategy::EqualWeight,
            1,
            &BacktestOptions::default()
        )
        .is_err());
    }
}
