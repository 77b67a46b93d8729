//! Sweep orchestration: configuration, parallel execution of independent
//! parameter points, and deterministic result emission.

mod config;
mod output;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{NRange, ProbeSpec, RateGrid, Regime, SweepConfig, DEFAULT_DETUNING};
pub use output::{
    read_fit_input, write_map, write_sweep, write_trace, FitInput, ERRORS_FILE, FITS_FILE,
    MAP_FILE, METADATA_FILE, RESULTS_FILE, TRACE_FILE,
};

use crate::error::{Error, Result};
use crate::model::{ProbeState, SystemParams};
use crate::qfi::{qfi_trace, EstimationTarget, QfiTrace, SymmetricModel};
use crate::scaling::{exponent_map, fit_power_law, ExponentMap, ScalingFit};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One unit of work in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub probe: ProbeSpec,
    pub n_qubits: usize,
    pub regime: Regime,
    pub target: EstimationTarget,
    /// Δ/g
    pub detuning: f64,
}

impl SweepPoint {
    pub fn probe_state(&self) -> ProbeState {
        self.probe.resolve(self.n_qubits)
    }

    /// Physical parameters in units of g.
    pub fn params(&self, fock_margin: usize) -> SystemParams {
        let mut p = SystemParams::resonant(self.n_qubits, 1.0, self.regime.kappa, self.regime.gamma)
            .with_detuning(self.detuning);
        p.n_cav_max = self.n_qubits + fock_margin;
        p
    }

    pub fn validate(&self, fock_margin: usize) -> Result<()> {
        self.params(fock_margin).validate()?;
        self.probe_state().amplitudes(self.n_qubits)?;
        Ok(())
    }

    fn sort_key(&self) -> (String, usize, f64, f64) {
        (self.probe.label(), self.n_qubits, self.regime.kappa, self.regime.gamma)
    }
}

fn cmp_keys(a: &(String, usize, f64, f64), b: &(String, usize, f64, f64)) -> Ordering {
    a.0.cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.total_cmp(&b.2))
        .then(a.3.total_cmp(&b.3))
}

/// One line of the results table. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub probe: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub kappa_over_g: f64,
    pub gamma_over_g: f64,
    pub target: EstimationTarget,
    #[serde(rename = "max_F")]
    pub max_f: f64,
    pub t_at_max: f64,
    pub fit_id: Option<String>,
    pub steps: u64,
    pub rejected_steps: u64,
    pub version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub fit_id: String,
    pub probe: String,
    pub kappa_over_g: f64,
    pub gamma_over_g: f64,
    pub target: EstimationTarget,
    pub n_points: usize,
    pub converged: bool,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub std_c: f64,
    pub residual_norm: f64,
    pub version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub probe: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub kappa_over_g: f64,
    pub gamma_over_g: f64,
    pub target: EstimationTarget,
    pub config_error: bool,
    pub message: String,
    pub version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
    pub fits: Vec<FitRow>,
    pub errors: Vec<ErrorRow>,
}

impl SweepOutput {
    pub fn fit(&self, probe: &str, regime: Regime) -> Option<&FitRow> {
        self.fits.iter().find(|f| {
            f.probe == probe && f.kappa_over_g == regime.kappa && f.gamma_over_g == regime.gamma
        })
    }

    pub fn row(&self, probe: &str, n: usize, regime: Regime) -> Option<&ResultRow> {
        self.rows.iter().find(|r| {
            r.probe == probe
                && r.n == n
                && r.kappa_over_g == regime.kappa
                && r.gamma_over_g == regime.gamma
        })
    }
}

/// Every point of the sweep, in canonical order.
pub fn expand(cfg: &SweepConfig) -> Vec<SweepPoint> {
    let detuning = cfg.detuning_value();
    let mut pts = Vec::new();
    for &probe in &cfg.probes {
        for n in cfg.n_range.values() {
            for regime in cfg.points() {
                pts.push(SweepPoint {
                    probe,
                    n_qubits: n,
                    regime,
                    target: cfg.target,
                    detuning,
                });
            }
        }
    }
    pts.sort_by(|a, b| cmp_keys(&a.sort_key(), &b.sort_key()));
    pts.dedup_by(|a, b| cmp_keys(&a.sort_key(), &b.sort_key()) == Ordering::Equal);
    pts
}

/// QFI trace for one point.
pub fn simulate(point: &SweepPoint, cfg: &SweepConfig) -> Result<QfiTrace> {
    point.validate(cfg.fock_margin)?;
    let params = point.params(cfg.fock_margin);
    let model = SymmetricModel::for_params(&params)?;
    qfi_trace(
        &model,
        &params,
        point.probe_state(),
        point.target,
        &cfg.time_grid,
        &cfg.qfi_options(),
    )
}

/// Full pipeline for one point, reduced to a result row (without fit id).
pub fn run_single(point: &SweepPoint, cfg: &SweepConfig) -> Result<ResultRow> {
    let trace = simulate(point, cfg)?;
    Ok(ResultRow {
        probe: point.probe.label(),
        n: point.n_qubits,
        kappa_over_g: point.regime.kappa,
        gamma_over_g: point.regime.gamma,
        target: point.target,
        max_f: trace.max_qfi,
        t_at_max: trace.t_at_max,
        fit_id: None,
        steps: trace.stats.steps,
        rejected_steps: trace.stats.rejected,
        version: VERSION.into(),
        config_hash: cfg.hash(),
    })
}

/// Run `f` on a pool with `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn fit_id(probe: &str, regime: Regime, target: EstimationTarget) -> String {
    format!("{probe}@{}/{}/{}", regime.kappa, regime.gamma, target.label())
}

/// Run every point of the sweep in parallel, then fit each probe/regime
/// series. The output is sorted and independent of execution order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let points = expand(cfg);
    for p in &points {
        p.validate(cfg.fock_margin)?;
    }
    let hash = cfg.hash();
    info!("sweep {hash}: {} points", points.len());
    let results: Vec<(SweepPoint, Result<ResultRow>)> = with_threads(cfg.threads, || {
        points
            .par_iter()
            .map(|p| (*p, run_single(p, cfg)))
            .collect()
    })?;

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (p, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => errors.push(ErrorRow {
                probe: p.probe.label(),
                n: p.n_qubits,
                kappa_over_g: p.regime.kappa,
                gamma_over_g: p.regime.gamma,
                target: p.target,
                config_error: e.is_config(),
                message: e.to_string(),
                version: VERSION.into(),
                config_hash: hash.clone(),
            }),
        }
    }
    let fits = fit_rows(&mut rows, cfg.target, &hash);
    Ok(SweepOutput {
        config_hash: hash,
        rows,
        fits,
        errors,
    })
}

/// Fit every (probe, regime) series with at least four distinct N and tag
/// the rows that contributed.
fn fit_rows(rows: &mut [ResultRow], target: EstimationTarget, hash: &str) -> Vec<FitRow> {
    let mut groups: BTreeMap<(String, u64, u64), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let key = (r.probe.clone(), r.kappa_over_g.to_bits(), r.gamma_over_g.to_bits());
        groups.entry(key).or_default().push(i);
    }
    let mut fits = Vec::new();
    for ((probe, k_bits, g_bits), idx) in groups {
        let regime = Regime {
            kappa: f64::from_bits(k_bits),
            gamma: f64::from_bits(g_bits),
        };
        let ns: Vec<f64> = idx.iter().map(|&i| rows[i].n as f64).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| rows[i].max_f).collect();
        let Ok(fit) = fit_power_law(&ns, &ys) else {
            continue;
        };
        let id = fit_id(&probe, regime, target);
        for &i in &idx {
            rows[i].fit_id = Some(id.clone());
        }
        fits.push(fit_row(id, &probe, regime, target, &fit, hash));
    }
    fits.sort_by(|a, b| {
        a.probe
            .cmp(&b.probe)
            .then(a.kappa_over_g.total_cmp(&b.kappa_over_g))
            .then(a.gamma_over_g.total_cmp(&b.gamma_over_g))
    });
    fits
}

fn fit_row(
    fit_id: String,
    probe: &str,
    regime: Regime,
    target: EstimationTarget,
    fit: &ScalingFit,
    hash: &str,
) -> FitRow {
    FitRow {
        fit_id,
        probe: probe.into(),
        kappa_over_g: regime.kappa,
        gamma_over_g: regime.gamma,
        target,
        n_points: fit.n_points,
        converged: fit.converged,
        a: fit.a,
        b: fit.b,
        c: fit.c,
        std_a: fit.std_errors[0],
        std_b: fit.std_errors[1],
        std_c: fit.std_errors[2],
        residual_norm: fit.residual_norm,
        version: VERSION.into(),
        config_hash: hash.into(),
    }
}

/// Exponent maps over the configured grid, one per probe family. The map's
/// own probe field holds the family member at the smallest N.
pub fn run_map(cfg: &SweepConfig) -> Result<Vec<(ProbeSpec, ExponentMap)>> {
    cfg.validate()?;
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("map needs a rate grid".into()))?;
    let n_values = cfg.n_range.values();
    let detuning = cfg.detuning_value();
    with_threads(cfg.threads, || {
        cfg.probes
            .iter()
            .map(|&probe| {
                for &n in &n_values {
                    probe.resolve(n).amplitudes(n)?;
                }
                let map = exponent_map(
                    probe.resolve(n_values[0]),
                    &grid.kappa,
                    &grid.gamma,
                    &n_values,
                    cfg.rate_bounds,
                    |kappa, gamma, n| {
                        let point = SweepPoint {
                            probe,
                            n_qubits: n,
                            regime: Regime { kappa, gamma },
                            target: cfg.target,
                            detuning,
                        };
                        simulate(&point, cfg).map(|t| t.max_qfi)
                    },
                )?;
                Ok((probe, map))
            })
            .collect()
    })?
}
