use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use rayon::prelude::*;

use cavqfi::evolve::TimeGrid;
use cavqfi::harness::{
    self, read_fit_input, write_map, write_sweep, write_trace, NRange, ProbeSpec, Regime,
    SweepConfig, SweepPoint, RESULTS_FILE, TRACE_FILE,
};
use cavqfi::oracle::{compare_traces, Deviation, FullModel, MAX_ORACLE_QUBITS};
use cavqfi::qfi::{qfi_trace, EstimationTarget, QfiOptions, SymmetricModel};
use cavqfi::scaling::fit_power_law;
use cavqfi::{Error, ProbeState};

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Parser)]
#[command(name = "cavqfi", version, about = "QFI of N qubits in a lossy cavity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON sweep configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute F(t) for one parameter point and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short = 'n')]
        n_qubits: Option<usize>,
        /// ghz, x, dicke-<k>, dicke-half, excited or ground.
        #[arg(long)]
        probe: Option<ProbeSpec>,
        /// κ/g
        #[arg(long)]
        kappa: Option<f64>,
        /// γ/g
        #[arg(long)]
        gamma: Option<f64>,
        /// coupling or detuning.
        #[arg(long)]
        target: Option<String>,
        /// Δ/g
        #[arg(long)]
        detuning: Option<f64>,
        /// Horizon in units of 1/g.
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run a sweep and write results, fits, errors and metadata.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Exponent map over the configured rate grid.
    Map {
        #[command(flatten)]
        common: Common,
    },
    /// Fit y = a N^b + c to a CSV file.
    Fit {
        /// Results table, or a file whose first two columns are N and y.
        input: PathBuf,
    },
    /// Compare the symmetric model with the full-space reference.
    OracleCheck {
        #[arg(long, default_value_t = MAX_ORACLE_QUBITS)]
        n_max: usize,
        /// Permit N = 6 for the reference.
        #[arg(long)]
        allow_six: bool,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 101)]
        samples: usize,
        /// Pass threshold on the relative QFI and absolute observable deviation.
        #[arg(long, default_value_t = 1e-5)]
        threshold: f64,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Failure classified into the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config() { EXIT_CONFIG } else { EXIT_NUMERICAL },
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate {
            common,
            n_qubits,
            probe,
            kappa,
            gamma,
            target,
            detuning,
            t_end,
            samples,
        } => simulate(
            &common,
            SimulateOverrides {
                n_qubits,
                probe,
                kappa,
                gamma,
                target,
                detuning,
                t_end,
                samples,
            },
        ),
        Command::Sweep { common } => sweep(&common),
        Command::Map { common } => map(&common),
        Command::Fit { input } => fit(&input),
        Command::OracleCheck {
            n_max,
            allow_six,
            t_end,
            samples,
            threshold,
            threads,
        } => oracle_check(n_max, allow_six, t_end, samples, threshold, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &Common, required: bool) -> Result<SweepConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => SweepConfig::load(path)?,
        None if required => return Err(config_failure("--config <path> is required")),
        None => SweepConfig::default(),
    };
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &SweepConfig) -> PathBuf {
    PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| "out".into()))
}

struct SimulateOverrides {
    n_qubits: Option<usize>,
    probe: Option<ProbeSpec>,
    kappa: Option<f64>,
    gamma: Option<f64>,
    target: Option<String>,
    detuning: Option<f64>,
    t_end: Option<f64>,
    samples: Option<usize>,
}

fn parse_target(s: &str) -> Result<EstimationTarget, Failure> {
    match s.to_ascii_lowercase().as_str() {
        "coupling" | "g" => Ok(EstimationTarget::Coupling),
        "detuning" | "delta" => Ok(EstimationTarget::Detuning),
        other => Err(config_failure(format!("unknown target '{other}'"))),
    }
}

fn simulate(common: &Common, o: SimulateOverrides) -> Result<(), Failure> {
    let mut cfg = load_config(common, false)?;
    if let Some(t) = &o.target {
        cfg.target = parse_target(t)?;
    }
    if let Some(d) = o.detuning {
        cfg.detuning = Some(d);
    }
    if let Some(t) = o.t_end {
        cfg.time_grid.t_end = t;
    }
    if let Some(s) = o.samples {
        cfg.time_grid.n_samples = s;
    }
    if let Some(p) = o.probe {
        cfg.probes = vec![p];
    }
    if let Some(n) = o.n_qubits {
        cfg.n_range = NRange { min: n, max: n };
    }
    if o.kappa.is_some() || o.gamma.is_some() {
        let base = cfg.points().first().copied().unwrap_or(Regime::STRONG);
        cfg.regimes = vec![Regime {
            kappa: o.kappa.unwrap_or(base.kappa),
            gamma: o.gamma.unwrap_or(base.gamma),
        }];
        cfg.grid = None;
    }
    cfg.validate()?;
    let points = harness::expand(&cfg);
    let [point] = points.as_slice() else {
        return Err(config_failure(format!(
            "simulate needs exactly one point, the configuration gives {}",
            points.len()
        )));
    };
    let trace = harness::with_threads(cfg.threads, || harness::simulate(point, &cfg))??;
    let dir = out_dir(&cfg);
    write_trace(&dir.join(TRACE_FILE), &trace)?;
    if trace.at_horizon {
        warn!("maximum sits at the horizon t = {}", cfg.time_grid.t_end);
    }
    println!(
        "probe={} N={} kappa/g={} gamma/g={} target={} max_F={:.6} t_at_max={:.6} ({})",
        point.probe,
        point.n_qubits,
        point.regime.kappa,
        point.regime.gamma,
        point.target,
        trace.max_qfi,
        trace.t_at_max,
        cfg.target.unit()
    );
    println!("wrote {}", dir.join(TRACE_FILE).display());
    Ok(())
}

fn sweep(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common, true)?;
    let out = harness::run_sweep(&cfg)?;
    let dir = out_dir(&cfg);
    write_sweep(&dir, &cfg, &out)?;
    println!(
        "{} rows, {} fits, {} failed points -> {}",
        out.rows.len(),
        out.fits.len(),
        out.errors.len(),
        dir.join(RESULTS_FILE).display()
    );
    for f in &out.fits {
        match f.converged {
            true => println!("{}: b = {:.3} ± {:.3}", f.fit_id, f.b, f.std_b),
            false => println!("{}: fit diverged", f.fit_id),
        }
    }
    if let Some(e) = out.errors.first() {
        return Err(Failure {
            code: if out.errors.iter().all(|e| e.config_error) {
                EXIT_CONFIG
            } else {
                EXIT_NUMERICAL
            },
            message: format!(
                "{} point(s) failed; first: {} N={} ({}, {}): {}",
                out.errors.len(),
                e.probe,
                e.n,
                e.kappa_over_g,
                e.gamma_over_g,
                e.message
            ),
        });
    }
    Ok(())
}

fn map(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common, true)?;
    let maps = harness::run_map(&cfg)?;
    let dir = out_dir(&cfg);
    write_map(&dir, &cfg, &maps)?;
    let mut failed = 0;
    for (probe, m) in &maps {
        for p in &m.points {
            match p.exponent() {
                Some(b) => println!("{probe} kappa/g={} gamma/g={}: b = {b:.3}", p.kappa, p.gamma),
                None => {
                    failed += 1;
                    println!(
                        "{probe} kappa/g={} gamma/g={}: {}",
                        p.kappa,
                        p.gamma,
                        p.error.as_deref().unwrap_or("fit diverged")
                    );
                }
            }
        }
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{failed} map point(s) did not produce an exponent"),
        });
    }
    Ok(())
}

fn fit(input: &Path) -> Result<(), Failure> {
    let series = read_fit_input(input)?;
    let mut diverged = 0;
    for s in &series {
        let f = fit_power_law(&s.ns, &s.values)?;
        let label = if s.label.is_empty() {
            String::new()
        } else {
            format!("{}: ", s.label)
        };
        match f.exponent() {
            Some(b) => println!(
                "{label}b = {b:.3} (a = {:.6}, c = {:.6}, std b = {:.3e}, residual = {:.3e})",
                f.a, f.c, f.std_errors[1], f.residual_norm
            ),
            None => {
                diverged += 1;
                println!("{label}fit diverged");
            }
        }
    }
    if diverged > 0 {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{diverged} fit(s) diverged"),
        });
    }
    Ok(())
}

fn oracle_check(
    n_max: usize,
    allow_six: bool,
    t_end: f64,
    samples: usize,
    threshold: f64,
    threads: Option<usize>,
) -> Result<(), Failure> {
    let cap = if allow_six { 6 } else { MAX_ORACLE_QUBITS };
    if n_max == 0 || n_max > cap {
        return Err(config_failure(format!("--n-max must lie in 1..={cap}")));
    }
    let grid = TimeGrid::new(t_end, samples).map_err(Failure::from)?;
    let opts = QfiOptions {
        fd_check: false,
        refine_peak: false,
        ..QfiOptions::default()
    };
    let mut cases = Vec::new();
    for n in 1..=n_max {
        for probe in [
            ProbeSpec::Fixed(ProbeState::Ghz),
            ProbeSpec::Fixed(ProbeState::XPolarized),
            ProbeSpec::DickeHalf,
            ProbeSpec::Fixed(ProbeState::Excited),
            ProbeSpec::Fixed(ProbeState::Ground),
        ] {
            for regime in Regime::CORNERS {
                cases.push(SweepPoint {
                    probe,
                    n_qubits: n,
                    regime,
                    target: EstimationTarget::Coupling,
                    detuning: 0.0,
                });
            }
        }
    }
    let results: Vec<Result<Deviation, Error>> = harness::with_threads(threads, || {
        cases
            .par_iter()
            .map(|c| {
                let params = c.params(2);
                let probe = c.probe_state();
                let sym = qfi_trace(
                    &SymmetricModel::for_params(&params)?,
                    &params,
                    probe,
                    c.target,
                    &grid,
                    &opts,
                )?;
                let full_model = FullModel::with_cap(c.n_qubits, params.n_cav_max, cap)?;
                let full = qfi_trace(&full_model, &params, probe, c.target, &grid, &opts)?;
                compare_traces(&sym, &full)
            })
            .collect()
    })?;
    let mut worst = Deviation::default();
    for (c, r) in cases.iter().zip(results) {
        let d = r?;
        println!(
            "N={} {:<10} kappa/g={:<4} gamma/g={:<4} dF/maxF={:.3e} dObs={:.3e}",
            c.n_qubits,
            c.probe_state().label(),
            c.regime.kappa,
            c.regime.gamma,
            d.qfi_rel,
            d.observables
        );
        worst = worst.worst(d);
    }
    println!(
        "max relative QFI deviation {:.3e}, max observable deviation {:.3e} over {} cases",
        worst.qfi_rel,
        worst.observables,
        cases.len()
    );
    if worst.qfi_rel < threshold && worst.observables < threshold {
        println!("PASS (threshold {threshold:e})");
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("deviation exceeds threshold {threshold:e}"),
        })
    }
}
