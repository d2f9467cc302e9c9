//! File formats: Fama-French-style return panels, covariance CSVs, per-asset
//! value files, and grouping files.
//!
//! Panel CSV layout: optional `# units: percent|fraction` directive lines,
//! then a header row (date column label + asset names), then one row per
//! period starting with the date label. Values in percent by default
//! (Fama-French convention); configurable missing markers (-99.99, -999).
//! Emission in fraction units round-trips bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sparsemvp::backtest::fmt_f64;
use sparsemvp::model::{CovarianceMatrix, GroupStructure, ReturnsPanel};

use crate::CliError;

/// Unit convention of the values in a panel file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    /// 1.23 means 1.23% (Fama-French files).
    #[default]
    Percent,
    /// 0.0123 means 1.23%.
    Fraction,
}

impl Units {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "percent" => Ok(Units::Percent),
            "fraction" => Ok(Units::Fraction),
            other => Err(CliError::Usage(format!(
                "unknown units '{}' (expected percent|fraction)",
                other
            ))),
        }
    }
}

/// Default Fama-French missing-data markers, in file units.
pub const DEFAULT_MISSING_MARKERS: [f64; 2] = [-99.99, -999.0];

#[derive(Debug, Clone)]
pub struct IngestConfig {
    /// Unit convention; a `# units:` directive in the file is used unless the
    /// caller set the units explicitly.
    pub units: Option<Units>,
    pub missing_markers: Vec<f64>,
    pub impute: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            units: None,
            missing_markers: DEFAULT_MISSING_MARKERS.to_vec(),
            impute: true,
        }
    }
}

/// Parses a panel file; applies the missing-data rule unless disabled.
pub fn ingest_panel(path: &Path, cfg: &IngestConfig) -> Result<ReturnsPanel, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {}", path.display(), e)))?;
    let panel = parse_panel(&text, cfg)
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
    if cfg.impute {
        sparsemvp::covariance::impute_missing(&panel)
            .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))
    } else {
        Ok(panel)
    }
}

fn parse_panel(text: &str, cfg: &IngestConfig) -> Result<ReturnsPanel, String> {
    let mut units_directive = None;
    let mut header: Option<(usize, Vec<String>)> = None;
    let mut dates = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut missing: Vec<bool> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if header.is_some() {
                return Err(format!("line {}: directive after header", line_no));
            }
            let body = line.trim_start_matches('#').trim();
            if let Some(rest) = body.strip_prefix("units:") {
                units_directive = Some(match rest.trim() {
                    "percent" => Units::Percent,
                    "fraction" => Units::Fraction,
                    other => return Err(format!("line {}: unknown units '{}'", line_no, other)),
                });
            }
            continue;
        }
        match &header {
            None => {
                let cells: Vec<&str> = line.split(',').map(str::trim).collect();
                if cells.len() < 3 {
                    return Err(format!(
                        "line {}: header needs a date column and at least two assets",
                        line_no
                    ));
                }
                header = Some((
                    cells.len() - 1,
                    cells[1..].iter().map(|s| s.to_string()).collect(),
                ));
            }
            Some((p, _)) => {
                let cells: Vec<&str> = line.split(',').map(str::trim).collect();
                if cells.len() != p + 1 {
                    return Err(format!(
                        "line {}: expected {} cells, found {}",
                        line_no,
                        p + 1,
                        cells.len()
                    ));
                }
                if cells[0].is_empty() {
                    return Err(format!("line {}: empty date label", line_no));
                }
                dates.push(cells[0].to_string());
                for cell in &cells[1..] {
                    let v: f64 = cell
                        .parse()
                        .map_err(|e| format!("line {}: bad value '{}': {}", line_no, cell, e))?;
                    if cfg.missing_markers.contains(&v) {
                        missing.push(true);
                        values.push(0.0);
                    } else {
                        missing.push(false);
                        values.push(v);
                    }
                }
            }
        }
    }

    let (p, asset_ids) = header.ok_or_else(|| "no header row found".to_string())?;
    if dates.is_empty() {
        return Err("no data rows found".to_string());
    }
    let units = cfg.units.or(units_directive).unwrap_or_default();
    if units == Units::Percent {
        for v in &mut values {
            *v /= 100.0;
        }
    }
    let t = dates.len();
    let matrix = DMatrix::from_row_slice(t, p, &values);
    ReturnsPanel::new(dates, asset_ids, matrix, missing).map_err(|e| e.to_string())
}

/// Writes a panel in the given units, with a `# units:` directive so the file
/// self-describes. Missing cells are written as the first missing marker.
pub fn emit_panel(
    panel: &ReturnsPanel,
    units: Units,
    markers: &[f64],
    path: &Path,
) -> Result<(), CliError> {
    let marker = markers
        .first()
        .copied()
        .unwrap_or(DEFAULT_MISSING_MARKERS[0]);
    let mut out = String::new();
    let unit_name = match units {
        Units::Percent => "percent",
        Units::Fraction => "fraction",
    };
    let _ = writeln!(out, "# units: {}", unit_name);
    let _ = writeln!(out, "date,{}", panel.asset_ids().join(","));
    for row in 0..panel.periods() {
        out.push_str(&panel.dates()[row]);
        for col in 0..panel.assets() {
            out.push(',');
            if panel.is_missing(row, col) {
                let _ = write!(out, "{}", marker);
            } else {
                let v = panel.returns()[(row, col)];
                let v = match units {
                    Units::Percent => v * 100.0,
                    Units::Fraction => v,
                };
                out.push_str(&fmt_f64(v));
            }
        }
        out.push('\n');
    }
    fs::write(path, out)
        .map_err(|e| CliError::Data(format!("cannot write {}: {}", path.display(), e)))
}

/// Covariance CSV: header of p asset names, then p rows of p values.
pub fn read_covariance(path: &Path) -> Result<(Vec<String>, CovarianceMatrix), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {}", path.display(), e)))?;
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty covariance file", path.display())))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let p = names.len();
    let mut values = Vec::with_capacity(p * p);
    for (row_idx, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != p {
            return Err(CliError::Data(format!(
                "{}: row {} has {} cells, expected {}",
                path.display(),
                row_idx + 2,
                cells.len(),
                p
            )));
        }
        for cell in cells {
            values.push(cell.parse::<f64>().map_err(|e| {
                CliError::Data(format!("{}: bad value '{}': {}", path.display(), cell, e))
            })?);
        }
    }
    if values.len() != p * p {
        return Err(CliError::Data(format!(
            "{}: expected {} rows of data",
            path.display(),
            p
        )));
    }
    let cov = CovarianceMatrix::from_matrix(DMatrix::from_row_slice(p, p, &values))
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
    Ok((names, cov))
}

pub fn write_covariance(
    names: &[String],
    cov: &CovarianceMatrix,
    path: &Path,
) -> Result<(), CliError> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", names.join(","));
    for i in 0..cov.p() {
        let row: Vec<String> = (0..cov.p())
            .map(|j| fmt_f64(cov.matrix()[(i, j)]))
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    fs::write(path, out)
        .map_err(|e| CliError::Data(format!("cannot write {}: {}", path.display(), e)))
}

/// Per-asset value file (`asset,value` rows), aligned to `asset_ids` order.
pub fn read_asset_values(path: &Path, asset_ids: &[String]) -> Result<DVector<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {}", path.display(), e)))?;
    let mut map = std::collections::HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty()
            || line.starts_with('#')
            || (idx == 0 && line.to_lowercase().starts_with("asset"))
        {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let asset = parts.next().unwrap_or_default();
        let value = parts.next().ok_or_else(|| {
            CliError::Data(format!(
                "{}: line {}: missing value",
                path.display(),
                idx + 1
            ))
        })?;
        let v: f64 = value.parse().map_err(|e| {
            CliError::Data(format!(
                "{}: line {}: bad value '{}': {}",
                path.display(),
                idx + 1,
                value,
                e
            ))
        })?;
        if map.insert(asset.to_string(), v).is_some() {
            return Err(CliError::Data(format!(
                "{}: duplicate asset '{}'",
                path.display(),
                asset
            )));
        }
    }
    let mut out = DVector::zeros(asset_ids.len());
    for (i, id) in asset_ids.iter().enumerate() {
        out[i] = *map.get(id).ok_or_else(|| {
            CliError::Data(format!("{}: no value for asset '{}'", path.display(), id))
        })?;
    }
    Ok(out)
}

/// Grouping file: one line per group, comma-separated asset identifiers.
/// Groups must partition the asset set.
pub fn read_grouping(path: &Path, asset_ids: &[String]) -> Result<GroupStructure, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {}", path.display(), e)))?;
    let index: std::collections::HashMap<&str, usize> = asset_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut groups = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut group = Vec::new();
        for name in line.split(',').map(str::trim) {
            let i = index.get(name).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: line {}: unknown asset '{}'",
                    path.display(),
                    idx + 1,
                    name
                ))
            })?;
            group.push(*i);
        }
        groups.push(group);
    }
    GroupStructure::new(groups, asset_ids.len())
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))
}
