use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use super::{ProbeSpec, SweepConfig, SweepOutput, VERSION};
use crate::error::{Error, Result};
use crate::qfi::QfiTrace;
use crate::scaling::ExponentMap;

pub const RESULTS_FILE: &str = "results.csv";
pub const FITS_FILE: &str = "fits.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const MAP_FILE: &str = "map.csv";

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_metadata(dir: &Path, cfg: &SweepConfig, kind: &str, extra: serde_json::Value) -> Result<()> {
    let meta = json!({
        "kind": kind,
        "version": VERSION,
        "config_hash": cfg.hash(),
        "units": {
            "time": "1/g",
            "rates": "g",
            "qfi": cfg.target.unit(),
        },
        "summary": extra,
        "config": cfg.canonical(),
    });
    let text = serde_json::to_string_pretty(&meta)? + "\n";
    fs::write(dir.join(METADATA_FILE), text)?;
    Ok(())
}

/// Results, fits, errors and the metadata sidecar.
pub fn write_sweep(dir: &Path, cfg: &SweepConfig, out: &SweepOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(
        &dir.join(RESULTS_FILE),
        &out.rows,
        &[
            "probe",
            "N",
            "kappa_over_g",
            "gamma_over_g",
            "target",
            "max_F",
            "t_at_max",
            "fit_id",
            "steps",
            "rejected_steps",
            "version",
            "config_hash",
        ],
    )?;
    write_csv(
        &dir.join(FITS_FILE),
        &out.fits,
        &[
            "fit_id",
            "probe",
            "kappa_over_g",
            "gamma_over_g",
            "target",
            "n_points",
            "converged",
            "a",
            "b",
            "c",
            "std_a",
            "std_b",
            "std_c",
            "residual_norm",
            "version",
            "config_hash",
        ],
    )?;
    write_csv(
        &dir.join(ERRORS_FILE),
        &out.errors,
        &[
            "probe",
            "N",
            "kappa_over_g",
            "gamma_over_g",
            "target",
            "config_error",
            "message",
            "version",
            "config_hash",
        ],
    )?;
    write_metadata(
        dir,
        cfg,
        "sweep",
        json!({
            "rows": out.rows.len(),
            "fits": out.fits.len(),
            "failed_points": out.errors.len(),
        }),
    )
}

#[derive(Serialize)]
struct TraceRow {
    t: f64,
    #[serde(rename = "F")]
    f: f64,
    jz: f64,
    photons: f64,
    purity: f64,
    trace: f64,
    min_eigenvalue: f64,
}

/// `(t, F)` samples with observables.
pub fn write_trace(path: &Path, trace: &QfiTrace) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let rows: Vec<TraceRow> = (0..trace.n_samples())
        .map(|i| {
            let o = trace.observables[i];
            TraceRow {
                t: trace.times[i],
                f: trace.values[i],
                jz: o.jz,
                photons: o.photons,
                purity: o.purity,
                trace: o.trace,
                min_eigenvalue: trace.min_eigenvalues[i],
            }
        })
        .collect();
    write_csv(
        path,
        &rows,
        &["t", "F", "jz", "photons", "purity", "trace", "min_eigenvalue"],
    )
}

#[derive(Serialize)]
struct MapRow {
    probe: String,
    kappa_over_g: f64,
    gamma_over_g: f64,
    converged: bool,
    b: Option<f64>,
    std_b: Option<f64>,
    error: Option<String>,
    version: &'static str,
    config_hash: String,
}

pub fn write_map(dir: &Path, cfg: &SweepConfig, maps: &[(ProbeSpec, ExponentMap)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for (probe, map) in maps {
        for p in &map.points {
            rows.push(MapRow {
                probe: probe.label(),
                kappa_over_g: p.kappa,
                gamma_over_g: p.gamma,
                converged: p.exponent().is_some(),
                b: p.exponent(),
                std_b: p.fit.filter(|f| f.converged).map(|f| f.std_errors[1]),
                error: p.error.clone(),
                version: VERSION,
                config_hash: hash.clone(),
            });
        }
    }
    write_csv(
        &dir.join(MAP_FILE),
        &rows,
        &[
            "probe",
            "kappa_over_g",
            "gamma_over_g",
            "converged",
            "b",
            "std_b",
            "error",
            "version",
            "config_hash",
        ],
    )?;
    let failed = rows.iter().filter(|r| !r.converged).count();
    write_metadata(
        dir,
        cfg,
        "map",
        json!({ "points": rows.len(), "unconverged_points": failed }),
    )
}

/// One series to fit, read from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct FitInput {
    /// Series label; empty for plain two-column files.
    pub label: String,
    pub ns: Vec<f64>,
    pub values: Vec<f64>,
}

/// Reads either a results table (grouped by probe, rates and target) or a
/// plain file whose first two columns are N and the value.
pub fn read_fit_input(path: &Path) -> Result<Vec<FitInput>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (n_col, v_col) = match (col("N"), col("max_F")) {
        (Some(n), Some(v)) => (n, v),
        _ if headers.len() >= 2 => (0, 1),
        _ => {
            return Err(Error::FitInput(format!(
                "{} needs at least two columns",
                path.display()
            )))
        }
    };
    let group_cols: Vec<usize> = ["probe", "kappa_over_g", "gamma_over_g", "target"]
        .iter()
        .filter_map(|c| col(c))
        .collect();

    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::FitInput(format!("row {}: column {} is not a number", line + 2, i + 1)))
        };
        let label = group_cols
            .iter()
            .map(|&i| rec.get(i).unwrap_or(""))
            .collect::<Vec<_>>()
            .join(" ");
        let entry = groups.entry(label).or_default();
        entry.0.push(parse(n_col)?);
        entry.1.push(parse(v_col)?);
    }
    if groups.is_empty() {
        return Err(Error::FitInput(format!("{} has no data rows", path.display())));
    }
    Ok(groups
        .into_iter()
        .map(|(label, (ns, values))| FitInput { label, ns, values })
        .collect())
}
