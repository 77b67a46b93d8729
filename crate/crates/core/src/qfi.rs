//! Quantum Fisher information of the evolving probe.
//!
//! `F = Σ_{λa+λb>0} 2 |⟨λa|∂θρ|λb⟩|² / (λa + λb)`, with `∂θρ` obtained by a
//! central difference of two trajectories integrated in lock-step with the
//! unperturbed one.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dicke_space::DickeSpace;
use crate::error::{Error, Result};
use crate::evolve::{integrate_system, Ensemble, IntegratorStats, OdeSystem, TimeGrid, Tolerances};
use crate::linalg::{hermitian_eigen, hermitian_part, hermiticity_deviation, nonzero_components, submatrix};
use crate::model::{
    build_liouvillian, prepare_probe, BlockLayout, HybridState, Liouvillian, ProbeState,
    SystemParams, C64,
};

pub const DEFAULT_EPS_EIG: f64 = 1e-10;
pub const PAIR_CUTOFF: f64 = 1e-12;
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Width (in units of 1/g) below which the peak-time bracket stops shrinking.
pub const PEAK_BRACKET: f64 = 1e-3;
/// Relative agreement demanded of the δ vs δ/2 derivative check.
pub const FD_CHECK_RTOL: f64 = 1e-3;
const HERMITICITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationTarget {
    /// θ = g
    Coupling,
    /// θ = Δ = ω_q − ω_c
    Detuning,
}

impl EstimationTarget {
    pub fn label(&self) -> &'static str {
        match self {
            EstimationTarget::Coupling => "coupling",
            EstimationTarget::Detuning => "detuning",
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            EstimationTarget::Coupling => "1/g^2",
            EstimationTarget::Detuning => "1/Delta-units^2",
        }
    }

    /// Parameters shifted by `step` along θ.
    pub fn shifted(&self, params: &SystemParams, step: f64) -> SystemParams {
        let mut p = *params;
        match self {
            EstimationTarget::Coupling => p.coupling += step,
            EstimationTarget::Detuning => p.omega_q += step,
        }
        p
    }
}

impl std::fmt::Display for EstimationTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QfiOptions {
    /// Finite-difference step relative to g.
    pub fd_step: f64,
    /// Eigenvalue floor relative to the trace of the whole state.
    pub eps_eig: f64,
    pub tolerances: Tolerances,
    /// Re-evaluate the peak with δ/2 and warn on disagreement.
    pub fd_check: bool,
    /// Refine the peak time by golden-section search on re-integrated F.
    pub refine_peak: bool,
}

impl Default for QfiOptions {
    fn default() -> Self {
        Self {
            fd_step: DEFAULT_FD_STEP,
            eps_eig: DEFAULT_EPS_EIG,
            tolerances: Tolerances::default(),
            fd_check: true,
            refine_peak: true,
        }
    }
}

/// Collective observables of a state, in full-space normalization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub trace: f64,
    pub jz: f64,
    pub photons: f64,
    pub purity: f64,
}

impl Observables {
    pub fn excitations(&self, n_qubits: usize) -> f64 {
        self.jz + n_qubits as f64 / 2.0 * self.trace + self.photons
    }
}

/// A state space with a θ-dependent generator; implemented by the symmetric
/// model and by the full-space reference.
pub trait Model: Sync {
    type Generator: OdeSystem;

    fn n_qubits(&self) -> usize;

    fn generator(&self, params: &SystemParams) -> Result<Self::Generator>;

    fn initial_state(&self, probe: ProbeState, params: &SystemParams) -> Result<Vec<C64>>;

    /// `(offset, dim)` of each column-major diagonal block of the state.
    fn blocks(&self) -> Vec<(usize, usize)>;

    fn observables(&self, y: &[C64]) -> Observables;
}

/// The permutationally symmetric model.
#[derive(Debug, Clone)]
pub struct SymmetricModel {
    space: DickeSpace,
    layout: BlockLayout,
}

impl SymmetricModel {
    pub fn new(space: DickeSpace, n_cav_max: usize) -> Self {
        let layout = BlockLayout::new(&space, n_cav_max + 1);
        Self { space, layout }
    }

    pub fn for_params(params: &SystemParams) -> Result<Self> {
        let space = crate::dicke_space::enumerate_sectors(params.n_qubits)?;
        Ok(Self::new(space, params.n_cav_max))
    }

    pub fn space(&self) -> &DickeSpace {
        &self.space
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn state(&self, y: &[C64]) -> Result<HybridState> {
        HybridState::from_data(self.layout.clone(), y.to_vec())
    }
}

impl Model for SymmetricModel {
    type Generator = Liouvillian;

    fn n_qubits(&self) -> usize {
        self.space.n_qubits()
    }

    fn generator(&self, params: &SystemParams) -> Result<Liouvillian> {
        if params.fock_levels() != self.layout.levels {
            return Err(Error::Shape("Fock cutoff differs from the model layout".into()));
        }
        build_liouvillian(params, &self.space)
    }

    fn initial_state(&self, probe: ProbeState, params: &SystemParams) -> Result<Vec<C64>> {
        Ok(prepare_probe(probe, params, &self.space)?.data)
    }

    fn blocks(&self) -> Vec<(usize, usize)> {
        self.layout
            .offsets
            .iter()
            .copied()
            .zip(self.layout.dims.iter().copied())
            .collect()
    }

    fn observables(&self, y: &[C64]) -> Observables {
        let st = HybridState {
            layout: self.layout.clone(),
            data: y.to_vec(),
        };
        Observables {
            trace: st.trace(),
            jz: st.jz_expectation(),
            photons: st.photon_number(),
            purity: st.purity(),
        }
    }
}

/// QFI together with the smallest eigenvalue seen while computing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QfiValue {
    pub qfi: f64,
    pub min_eigenvalue: f64,
}

fn block_matrix(y: &[C64], offset: usize, dim: usize) -> DMatrix<C64> {
    DMatrix::from_column_slice(dim, dim, &y[offset..offset + dim * dim])
}

/// QFI of one Hermitian block pair. `floor` is the absolute eigenvalue
/// floor. With `split`, exactly decoupled index sets are diagonalized
/// separately.
pub fn qfi_dense(
    rho: &DMatrix<C64>,
    drho: &DMatrix<C64>,
    floor: f64,
    split: bool,
) -> Result<QfiValue> {
    if rho.shape() != drho.shape() || rho.nrows() != rho.ncols() {
        return Err(Error::Shape("rho and drho must be equal square matrices".into()));
    }
    for m in [rho, drho] {
        let dev = hermiticity_deviation(m);
        if dev > HERMITICITY_TOL {
            return Err(Error::NotHermitian { deviation: dev });
        }
    }
    let groups = if split {
        nonzero_components(&[rho, drho])
    } else {
        vec![(0..rho.nrows()).collect()]
    };
    let mut qfi = 0.0;
    let mut min_eig = f64::INFINITY;
    for idx in groups {
        let (r, d) = if idx.len() == rho.nrows() {
            (hermitian_part(rho), hermitian_part(drho))
        } else {
            (
                hermitian_part(&submatrix(rho, &idx)),
                hermitian_part(&submatrix(drho, &idx)),
            )
        };
        if d.iter().all(|z| *z == C64::new(0.0, 0.0)) {
            // Nothing to add; only the spectrum is of interest.
            if idx.len() == 1 {
                min_eig = min_eig.min(r[(0, 0)].re);
            } else {
                min_eig = min_eig.min(r.symmetric_eigenvalues().min());
            }
            continue;
        }
        let (vals, vecs) = hermitian_eigen(r);
        min_eig = min_eig.min(vals.min());
        let lambda: Vec<f64> = vals
            .iter()
            .map(|&l| if l < floor { 0.0 } else { l })
            .collect();
        let rotated = vecs.adjoint() * d * &vecs;
        for b in 0..lambda.len() {
            for a in 0..lambda.len() {
                let s = lambda[a] + lambda[b];
                if s > PAIR_CUTOFF {
                    qfi += 2.0 * rotated[(a, b)].norm_sqr() / s;
                }
            }
        }
    }
    Ok(QfiValue {
        qfi,
        min_eigenvalue: min_eig,
    })
}

/// QFI of a block-diagonal state: the sum of blockwise contributions.
pub fn qfi_blocks(
    blocks: &[(usize, usize)],
    rho: &[C64],
    drho: &[C64],
    eps_eig: f64,
) -> Result<QfiValue> {
    if rho.len() != drho.len() {
        return Err(Error::Shape("rho and drho buffers differ in length".into()));
    }
    let trace: f64 = blocks
        .iter()
        .map(|&(off, d)| (0..d).map(|i| rho[off + i * d + i].re).sum::<f64>())
        .sum();
    let floor = eps_eig * trace.abs();
    let mut total = QfiValue {
        qfi: 0.0,
        min_eigenvalue: f64::INFINITY,
    };
    for &(off, d) in blocks {
        let v = qfi_dense(&block_matrix(rho, off, d), &block_matrix(drho, off, d), floor, true)?;
        total.qfi += v.qfi;
        total.min_eigenvalue = total.min_eigenvalue.min(v.min_eigenvalue);
    }
    Ok(total)
}

/// QFI of a symmetric-basis state and its θ-derivative.
pub fn qfi_at_time(rho: &HybridState, drho: &HybridState, eps_eig: f64) -> Result<f64> {
    if rho.layout != drho.layout {
        return Err(Error::Shape("rho and drho have different block structure".into()));
    }
    let blocks: Vec<(usize, usize)> = rho
        .layout
        .offsets
        .iter()
        .copied()
        .zip(rho.layout.dims.iter().copied())
        .collect();
    Ok(qfi_blocks(&blocks, &rho.data, &drho.data, eps_eig)?.qfi)
}

/// Cramér–Rao lower bound `1 / (M F)` on the variance of an unbiased estimator.
pub fn crb_variance(qfi: f64, experiments: u64) -> Result<f64> {
    if !(qfi > 0.0) || !qfi.is_finite() {
        return Err(Error::InvalidParams(format!("QFI must be positive, got {qfi}")));
    }
    if experiments == 0 {
        return Err(Error::InvalidParams("experiment count must be at least 1".into()));
    }
    Ok(1.0 / (experiments as f64 * qfi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxQfi {
    pub max_qfi: f64,
    pub t_at_max: f64,
    /// Index of the coarse-grid maximum.
    pub grid_index: usize,
    /// The coarse maximum sat on the final grid point.
    pub at_horizon: bool,
}

/// Coarse arg-max over samples (ties go to the earliest), optionally refined
/// by golden-section search of `refine` inside the bracketing grid interval
/// until the bracket is narrower than `bracket`.
pub fn max_qfi(
    times: &[f64],
    values: &[f64],
    refine: Option<&mut dyn FnMut(f64) -> Result<f64>>,
    bracket: f64,
) -> Result<MaxQfi> {
    if times.len() != values.len() {
        return Err(Error::Shape("times and values differ in length".into()));
    }
    if times.len() < 3 {
        return Err(Error::InvalidParams(format!(
            "need at least 3 samples to locate a maximum, got {}",
            times.len()
        )));
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let last = times.len() - 1;
    let at_horizon = best == last;
    if at_horizon {
        warn!(
            "QFI maximum at the final grid time t = {}; the horizon may be too short",
            times[last]
        );
    }
    let mut result = MaxQfi {
        max_qfi: values[best],
        t_at_max: times[best],
        grid_index: best,
        at_horizon,
    };
    let Some(f) = refine else {
        return Ok(result);
    };
    let mut lo = times[best.saturating_sub(1)];
    let mut hi = times[(best + 1).min(last)];
    if hi - lo <= bracket {
        return Ok(result);
    }
    let consider = |t: f64, v: f64, result: &mut MaxQfi| {
        if v > result.max_qfi || (v == result.max_qfi && t < result.t_at_max) {
            result.max_qfi = v;
            result.t_at_max = t;
        }
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    consider(x1, f1, &mut result);
    consider(x2, f2, &mut result);
    while hi - lo > bracket {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
            consider(x1, f1, &mut result);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
            consider(x2, f2, &mut result);
        }
    }
    Ok(result)
}

/// Time-resolved QFI with the located maximum and run diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfiTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub observables: Vec<Observables>,
    pub min_eigenvalues: Vec<f64>,
    pub max_qfi: f64,
    pub t_at_max: f64,
    pub at_horizon: bool,
    /// `(F with δ, F with δ/2)` at the peak, when the check ran.
    pub fd_check: Option<(f64, f64)>,
    pub stats: IntegratorStats,
}

impl QfiTrace {
    pub fn n_samples(&self) -> usize {
        self.times.len()
    }
}

fn fd_members<M: Model>(
    model: &M,
    params: &SystemParams,
    target: EstimationTarget,
    step: f64,
) -> Result<(M::Generator, M::Generator)> {
    let plus = target.shifted(params, step);
    let minus = target.shifted(params, -step);
    if target == EstimationTarget::Coupling && minus.coupling <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "finite-difference step {step} would make the coupling non-positive"
        )));
    }
    Ok((model.generator(&plus)?, model.generator(&minus)?))
}

fn absolute_step(params: &SystemParams, opts: &QfiOptions) -> Result<f64> {
    let step = opts.fd_step * params.coupling;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParams(format!(
            "finite-difference step must be positive (fd_step = {}, g = {})",
            opts.fd_step, params.coupling
        )));
    }
    Ok(step)
}

/// `ρ(t)` and `∂θρ(t)` at the requested times.
pub fn drho_dtheta<M: Model>(
    model: &M,
    params: &SystemParams,
    probe: ProbeState,
    target: EstimationTarget,
    times: &[f64],
    opts: &QfiOptions,
) -> Result<Vec<(f64, Vec<C64>, Vec<C64>)>> {
    let step = absolute_step(params, opts)?;
    let base = model.generator(params)?;
    let (plus, minus) = fd_members(model, params, target, step)?;
    let ens = Ensemble::new(vec![&base, &plus, &minus])?;
    let rho0 = model.initial_state(probe, params)?;
    let y0: Vec<C64> = rho0.iter().chain(&rho0).chain(&rho0).copied().collect();
    let mut out = Vec::with_capacity(times.len());
    integrate_system(&ens, 0.0, &y0, times, &opts.tolerances, |_, t, y| {
        let (rho, drho) = split_fd(&ens, y, step);
        out.push((t, rho, drho));
        Ok(())
    })?;
    Ok(out)
}

fn split_fd<S: OdeSystem>(ens: &Ensemble<'_, S>, y: &[C64], step: f64) -> (Vec<C64>, Vec<C64>) {
    let rho = y[ens.member_range(0)].to_vec();
    let plus = &y[ens.member_range(1)];
    let minus = &y[ens.member_range(2)];
    let scale = 1.0 / (2.0 * step);
    let drho = plus.iter().zip(minus).map(|(a, b)| (a - b) * scale).collect();
    (rho, drho)
}

/// Full pipeline for one parameter point: QFI on the grid, peak refinement
/// and the finite-difference step check.
pub fn qfi_trace<M: Model>(
    model: &M,
    params: &SystemParams,
    probe: ProbeState,
    target: EstimationTarget,
    grid: &TimeGrid,
    opts: &QfiOptions,
) -> Result<QfiTrace> {
    grid.validate()?;
    let step = absolute_step(params, opts)?;
    let base = model.generator(params)?;
    let (plus, minus) = fd_members(model, params, target, step)?;
    let ens = Ensemble::new(vec![&base, &plus, &minus])?;
    let blocks = model.blocks();
    let rho0 = model.initial_state(probe, params)?;
    let y0: Vec<C64> = rho0.iter().chain(&rho0).chain(&rho0).copied().collect();

    let times = grid.times();
    let mut values = Vec::with_capacity(times.len());
    let mut observables = Vec::with_capacity(times.len());
    let mut min_eigenvalues = Vec::with_capacity(times.len());
    // Ensemble state at the grid point preceding the running maximum.
    let mut prev: Option<Vec<C64>> = None;
    let mut bracket_start: (f64, Vec<C64>) = (0.0, y0.clone());
    let mut best = f64::NEG_INFINITY;

    let (_, mut stats) = integrate_system(&ens, 0.0, &y0, &times, &opts.tolerances, |i, t, y| {
        let (rho, drho) = split_fd(&ens, y, step);
        let v = qfi_blocks(&blocks, &rho, &drho, opts.eps_eig)?;
        if v.qfi > best {
            best = v.qfi;
            bracket_start = match (&prev, i) {
                (Some(p), i) if i > 0 => (times[i - 1], p.clone()),
                _ => (t, y.to_vec()),
            };
        }
        values.push(v.qfi);
        min_eigenvalues.push(v.min_eigenvalue);
        observables.push(model.observables(&rho));
        match prev.as_mut() {
            Some(p) => p.copy_from_slice(y),
            None => prev = Some(y.to_vec()),
        }
        Ok(())
    })?;
    drop(prev);

    let bracket = PEAK_BRACKET / params.coupling;
    let (t_start, y_start) = bracket_start;
    let mut refine_stats = IntegratorStats::default();
    let mut evaluate = |t: f64| -> Result<f64> {
        let mut qfi = 0.0;
        let (_, s) = integrate_system(&ens, t_start, &y_start, &[t], &opts.tolerances, |_, _, y| {
            let (rho, drho) = split_fd(&ens, y, step);
            qfi = qfi_blocks(&blocks, &rho, &drho, opts.eps_eig)?.qfi;
            Ok(())
        })?;
        refine_stats.merge(&s);
        Ok(qfi)
    };
    let peak = if opts.refine_peak {
        max_qfi(&times, &values, Some(&mut evaluate), bracket)?
    } else {
        max_qfi(&times, &values, None, bracket)?
    };
    stats.merge(&refine_stats);

    let fd_check = if opts.fd_check && peak.max_qfi > 0.0 && peak.t_at_max > 0.0 {
        let half = step / 2.0;
        let (plus_h, minus_h) = fd_members(model, params, target, half)?;
        let ens_h = Ensemble::new(vec![&base, &plus_h, &minus_h])?;
        let mut qfi_half = 0.0;
        let (_, s) = integrate_system(&ens_h, 0.0, &y0, &[peak.t_at_max], &opts.tolerances, |_, _, y| {
            let (rho, drho) = split_fd(&ens_h, y, half);
            qfi_half = qfi_blocks(&blocks, &rho, &drho, opts.eps_eig)?.qfi;
            Ok(())
        })?;
        stats.merge(&s);
        let rel = (qfi_half - peak.max_qfi).abs() / peak.max_qfi;
        if rel > FD_CHECK_RTOL {
            warn!(
                "finite-difference check at t = {}: F(δ) = {} vs F(δ/2) = {} (relative {:.2e})",
                peak.t_at_max, peak.max_qfi, qfi_half, rel
            );
        }
        Some((peak.max_qfi, qfi_half))
    } else {
        None
    };

    Ok(QfiTrace {
        times,
        values,
        observables,
        min_eigenvalues,
        max_qfi: peak.max_qfi,
        t_at_max: peak.t_at_max,
        at_horizon: peak.at_horizon,
        fd_check,
        stats,
    })
}
