use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dicke_space::DEFAULT_MAX_QUBITS;
use crate::error::{Error, Result};
use crate::evolve::{TimeGrid, Tolerances};
use crate::model::ProbeState;
use crate::qfi::{EstimationTarget, QfiOptions};
use crate::scaling::RateBounds;

/// Detuning Δ/g used by detuning runs unless overridden.
pub const DEFAULT_DETUNING: f64 = 0.1;

/// A probe family as written in configs. `dicke-half` resolves to
/// Dicke-⌊N/2⌋ at each N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProbeSpec {
    Fixed(ProbeState),
    DickeHalf,
}

impl ProbeSpec {
    pub fn resolve(&self, n_qubits: usize) -> ProbeState {
        match *self {
            ProbeSpec::Fixed(p) => p,
            ProbeSpec::DickeHalf => ProbeState::Dicke(n_qubits / 2),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ProbeSpec::Fixed(p) => p.label(),
            ProbeSpec::DickeHalf => "dicke-half".into(),
        }
    }
}

impl fmt::Display for ProbeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ProbeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("dicke-half") {
            return Ok(ProbeSpec::DickeHalf);
        }
        s.parse().map(ProbeSpec::Fixed)
    }
}

impl TryFrom<String> for ProbeSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ProbeSpec> for String {
    fn from(p: ProbeSpec) -> String {
        p.label()
    }
}

impl From<ProbeState> for ProbeSpec {
    fn from(p: ProbeState) -> Self {
        ProbeSpec::Fixed(p)
    }
}

/// Decay rates in units of g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub kappa: f64,
    pub gamma: f64,
}

impl Regime {
    pub const STRONG: Regime = Regime { kappa: 0.8, gamma: 0.8 };
    pub const CAVITY_LOSSY: Regime = Regime { kappa: 3.0, gamma: 0.2 };
    pub const QUBIT_LOSSY: Regime = Regime { kappa: 0.2, gamma: 3.0 };
    pub const WEAK: Regime = Regime { kappa: 3.0, gamma: 3.0 };
    pub const MODERATE: Regime = Regime { kappa: 1.0, gamma: 1.0 };

    pub const CORNERS: [Regime; 4] = [
        Regime::STRONG,
        Regime::CAVITY_LOSSY,
        Regime::QUBIT_LOSSY,
        Regime::WEAK,
    ];
}

/// Cartesian product of κ/g and γ/g values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateGrid {
    pub kappa: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl RateGrid {
    pub fn points(&self) -> Vec<Regime> {
        self.kappa
            .iter()
            .flat_map(|&kappa| self.gamma.iter().map(move |&gamma| Regime { kappa, gamma }))
            .collect()
    }
}

/// Inclusive range of qubit counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NRange {
    pub min: usize,
    pub max: usize,
}

impl NRange {
    pub fn values(&self) -> Vec<usize> {
        (self.min..=self.max).collect()
    }
}

impl Default for NRange {
    fn default() -> Self {
        Self { min: 1, max: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub probes: Vec<ProbeSpec>,
    pub n_range: NRange,
    /// Explicit (κ/g, γ/g) points.
    pub regimes: Vec<Regime>,
    /// Optional grid, appended to `regimes`.
    pub grid: Option<RateGrid>,
    /// Allowed range for grid entries.
    pub rate_bounds: RateBounds,
    pub target: EstimationTarget,
    /// Δ/g. Defaults to 0 for coupling runs and 0.1 for detuning runs.
    pub detuning: Option<f64>,
    /// Fock cutoff is N plus this margin.
    pub fock_margin: usize,
    /// Horizon in units of 1/g.
    pub time_grid: TimeGrid,
    pub tolerances: Tolerances,
    pub fd_step: f64,
    pub eps_eig: f64,
    pub refine_peak: bool,
    pub fd_check: bool,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
    pub out_dir: Option<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let q = QfiOptions::default();
        Self {
            probes: vec![
                ProbeSpec::Fixed(ProbeState::Ghz),
                ProbeSpec::Fixed(ProbeState::XPolarized),
                ProbeSpec::DickeHalf,
                ProbeSpec::Fixed(ProbeState::Excited),
                ProbeSpec::Fixed(ProbeState::Ground),
            ],
            n_range: NRange::default(),
            regimes: Regime::CORNERS.to_vec(),
            grid: None,
            rate_bounds: RateBounds::default(),
            target: EstimationTarget::Coupling,
            detuning: None,
            fock_margin: 2,
            time_grid: TimeGrid::default(),
            tolerances: q.tolerances,
            fd_step: q.fd_step,
            eps_eig: q.eps_eig,
            refine_peak: q.refine_peak,
            fd_check: q.fd_check,
            threads: None,
            out_dir: None,
        }
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn detuning_value(&self) -> f64 {
        self.detuning.unwrap_or(match self.target {
            EstimationTarget::Coupling => 0.0,
            EstimationTarget::Detuning => DEFAULT_DETUNING,
        })
    }

    pub fn qfi_options(&self) -> QfiOptions {
        QfiOptions {
            fd_step: self.fd_step,
            eps_eig: self.eps_eig,
            tolerances: self.tolerances,
            fd_check: self.fd_check,
            refine_peak: self.refine_peak,
        }
    }

    /// Explicit regimes followed by the grid points.
    pub fn points(&self) -> Vec<Regime> {
        let mut pts = self.regimes.clone();
        if let Some(g) = &self.grid {
            pts.extend(g.points());
        }
        pts
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.probes.is_empty() {
            return bad("probe list is empty".into());
        }
        if self.n_range.min == 0 || self.n_range.min > self.n_range.max {
            return bad(format!(
                "N range {}..={} is empty or starts at 0",
                self.n_range.min, self.n_range.max
            ));
        }
        if self.n_range.max > DEFAULT_MAX_QUBITS {
            return bad(format!(
                "N = {} exceeds the maximum of {DEFAULT_MAX_QUBITS}",
                self.n_range.max
            ));
        }
        for p in &self.probes {
            if let ProbeSpec::Fixed(ProbeState::Dicke(k)) = p {
                if *k > self.n_range.min {
                    return bad(format!(
                        "probe dicke-{k} needs at least {k} qubits but the N range starts at {}",
                        self.n_range.min
                    ));
                }
            }
        }
        if let Some(g) = &self.grid {
            if g.kappa.is_empty() || g.gamma.is_empty() {
                return bad("rate grid has an empty axis".into());
            }
            let b = self.rate_bounds;
            if let Some(x) = g.kappa.iter().chain(&g.gamma).find(|&&x| !(x >= b.min && x <= b.max)) {
                return bad(format!("grid value {x} outside [{}, {}]", b.min, b.max));
            }
        }
        let points = self.points();
        if points.is_empty() {
            return bad("no (κ/g, γ/g) points configured".into());
        }
        for r in &points {
            if !(r.kappa >= 0.0 && r.gamma >= 0.0 && r.kappa.is_finite() && r.gamma.is_finite()) {
                return bad(format!("decay rates must be finite and ≥ 0, got ({}, {})", r.kappa, r.gamma));
            }
        }
        let delta = self.detuning_value();
        if !delta.is_finite() {
            return bad("detuning must be finite".into());
        }
        if self.fock_margin < 1 {
            return bad("Fock margin must be at least 1".into());
        }
        self.time_grid
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.time_grid.n_samples < 3 {
            return bad("time grid needs at least 3 samples".into());
        }
        self.tolerances
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.fd_step > 0.0 && self.fd_step < 0.5) {
            return bad(format!("fd_step must lie in (0, 0.5), got {}", self.fd_step));
        }
        if !(self.eps_eig > 0.0 && self.eps_eig < 1.0) {
            return bad(format!("eps_eig must lie in (0, 1), got {}", self.eps_eig));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Copy without the settings that cannot change results.
    pub fn canonical(&self) -> SweepConfig {
        SweepConfig {
            threads: None,
            out_dir: None,
            ..self.clone()
        }
    }

    /// SHA-256 over the canonical JSON of every field that affects results.
    /// Thread count and output location are excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.canonical()).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
