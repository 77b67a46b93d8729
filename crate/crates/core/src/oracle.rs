//! Brute-force reference on the full `2^N ⊗ Fock` space.
//!
//! Nothing here uses permutational symmetry: the Hamiltonian and the N
//! single-qubit emission channels are assembled from tensor-product
//! operators exactly as they appear in the master equation. It exists to
//! validate the symmetric-basis machinery and is only practical for N ≤ 5.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{OdeSystem, TimeGrid, TRUNCATION_LIMIT};
use crate::model::{ProbeState, SystemParams, C64};
use crate::qfi::{qfi_trace, EstimationTarget, Model, Observables, QfiOptions, QfiTrace, SymmetricModel};

pub const MAX_ORACLE_QUBITS: usize = 5;

type Sparse = Vec<(usize, usize, C64)>;

fn basis_index(bits: usize, photons: usize, levels: usize) -> usize {
    bits * levels + photons
}

fn adjoint(op: &Sparse) -> Sparse {
    op.iter().map(|&(r, c, v)| (c, r, v.conj())).collect()
}

fn product(a: &Sparse, b: &Sparse) -> Sparse {
    let mut by_row: BTreeMap<usize, Vec<(usize, C64)>> = BTreeMap::new();
    for &(r, c, v) in b {
        by_row.entry(r).or_default().push((c, v));
    }
    let mut acc: BTreeMap<(usize, usize), C64> = BTreeMap::new();
    for &(r, k, va) in a {
        if let Some(row) = by_row.get(&k) {
            for &(c, vb) in row {
                *acc.entry((r, c)).or_default() += va * vb;
            }
        }
    }
    acc.into_iter()
        .filter(|(_, v)| *v != C64::new(0.0, 0.0))
        .map(|((r, c), v)| (r, c, v))
        .collect()
}

/// Dense-state, sparse-operator GKSL generator on the full space.
#[derive(Debug, Clone)]
pub struct FullLiouvillian {
    dim: usize,
    levels: usize,
    /// `H − (i/2) Σ_k L_k† L_k`
    effective: Sparse,
    jumps: Vec<Sparse>,
}

pub fn full_liouvillian(params: &SystemParams) -> Result<FullLiouvillian> {
    full_liouvillian_with_cap(params, MAX_ORACLE_QUBITS)
}

/// As [`full_liouvillian`] with a caller-chosen qubit cap (e.g. 6).
pub fn full_liouvillian_with_cap(params: &SystemParams, cap: usize) -> Result<FullLiouvillian> {
    params.validate()?;
    let n = params.n_qubits;
    if n > cap {
        return Err(Error::QubitCount { n, max: cap });
    }
    let levels = params.fock_levels();
    let dim = (1usize << n) * levels;

    let mut sigma_minus: Vec<Sparse> = Vec::with_capacity(n);
    for q in 0..n {
        let mut op = Sparse::new();
        for bits in 0..(1usize << n) {
            if bits & (1 << q) != 0 {
                for ph in 0..levels {
                    op.push((
                        basis_index(bits & !(1 << q), ph, levels),
                        basis_index(bits, ph, levels),
                        C64::new(1.0, 0.0),
                    ));
                }
            }
        }
        sigma_minus.push(op);
    }
    let mut annihilate = Sparse::new();
    for bits in 0..(1usize << n) {
        for ph in 1..levels {
            annihilate.push((
                basis_index(bits, ph - 1, levels),
                basis_index(bits, ph, levels),
                C64::new((ph as f64).sqrt(), 0.0),
            ));
        }
    }
    let create = adjoint(&annihilate);

    let mut hamiltonian: BTreeMap<(usize, usize), C64> = BTreeMap::new();
    let mut add = |op: &Sparse, scale: f64| {
        for &(r, c, v) in op {
            *hamiltonian.entry((r, c)).or_default() += v * scale;
        }
    };
    // (ω_q/2) Σ σ_z
    let mut sz = Sparse::new();
    for bits in 0..(1usize << n) {
        let z: f64 = (0..n).map(|q| if bits & (1 << q) != 0 { 1.0 } else { -1.0 }).sum();
        for ph in 0..levels {
            let i = basis_index(bits, ph, levels);
            sz.push((i, i, C64::new(z, 0.0)));
        }
    }
    add(&sz, params.omega_q / 2.0);
    add(&product(&create, &annihilate), params.omega_c);
    for sm in &sigma_minus {
        add(&product(&create, sm), params.coupling);
        add(&product(&annihilate, &adjoint(sm)), params.coupling);
    }

    let mut jumps: Vec<Sparse> = Vec::new();
    if params.kappa > 0.0 {
        jumps.push(
            annihilate
                .iter()
                .map(|&(r, c, v)| (r, c, v * params.kappa.sqrt()))
                .collect(),
        );
    }
    if params.gamma > 0.0 {
        for sm in &sigma_minus {
            jumps.push(sm.iter().map(|&(r, c, v)| (r, c, v * params.gamma.sqrt())).collect());
        }
    }
    for l in &jumps {
        for (r, c, v) in product(&adjoint(l), l) {
            *hamiltonian.entry((r, c)).or_default() += v * C64::new(0.0, -0.5);
        }
    }
    let effective = hamiltonian
        .into_iter()
        .filter(|(_, v)| *v != C64::new(0.0, 0.0))
        .map(|((r, c), v)| (r, c, v))
        .collect();

    Ok(FullLiouvillian {
        dim,
        levels,
        effective,
        jumps,
    })
}

impl FullLiouvillian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    pub fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        out.fill(C64::new(0.0, 0.0));
        let minus_i = C64::new(0.0, -1.0);
        let plus_i = C64::new(0.0, 1.0);
        for &(r, c, h) in &self.effective {
            // −i H_eff ρ
            let f = minus_i * h;
            for col in 0..d {
                out[col * d + r] += f * rho[col * d + c];
            }
            // +i ρ H_eff†: (ρ H_eff†)[:, r] += ρ[:, c] conj(h)
            let g = plus_i * h.conj();
            for row in 0..d {
                out[r * d + row] += g * rho[c * d + row];
            }
        }
        for l in &self.jumps {
            for &(r2, c2, v2) in l {
                for &(r1, c1, v1) in l {
                    out[r2 * d + r1] += v1 * rho[c2 * d + c1] * v2.conj();
                }
            }
        }
    }
}

impl OdeSystem for FullLiouvillian {
    fn len(&self) -> usize {
        self.dim * self.dim
    }

    fn rhs(&self, y: &[C64], dy: &mut [C64]) {
        self.apply(y, dy)
    }

    fn check_step(&self, t: f64, y: &[C64]) -> Result<()> {
        let lowest = self.levels.saturating_sub(2);
        let population: f64 = (0..self.dim)
            .filter(|i| i % self.levels >= lowest)
            .map(|i| y[i * self.dim + i].re)
            .sum();
        if population > TRUNCATION_LIMIT {
            return Err(Error::TruncationGuard {
                time: t,
                population,
            });
        }
        Ok(())
    }
}

/// The unreduced model: one dense block of size `2^N (n_cav_max + 1)`.
#[derive(Debug, Clone, Copy)]
pub struct FullModel {
    n_qubits: usize,
    levels: usize,
    cap: usize,
}

impl FullModel {
    pub fn new(n_qubits: usize, n_cav_max: usize) -> Result<Self> {
        Self::with_cap(n_qubits, n_cav_max, MAX_ORACLE_QUBITS)
    }

    pub fn with_cap(n_qubits: usize, n_cav_max: usize, cap: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > cap {
            return Err(Error::QubitCount { n: n_qubits, max: cap });
        }
        Ok(Self {
            n_qubits,
            levels: n_cav_max + 1,
            cap,
        })
    }

    pub fn dim(&self) -> usize {
        (1usize << self.n_qubits) * self.levels
    }

    /// `|ψ⟩⟨ψ|` for qubit amplitudes indexed by bitstring (bit q set ⇔
    /// qubit q excited), cavity in vacuum.
    pub fn pure_state(&self, qubit_amplitudes: &[C64]) -> Result<Vec<C64>> {
        if qubit_amplitudes.len() != 1 << self.n_qubits {
            return Err(Error::Shape(format!(
                "expected {} qubit amplitudes, got {}",
                1usize << self.n_qubits,
                qubit_amplitudes.len()
            )));
        }
        let d = self.dim();
        let mut psi = vec![C64::new(0.0, 0.0); d];
        for (bits, &a) in qubit_amplitudes.iter().enumerate() {
            psi[basis_index(bits, 0, self.levels)] = a;
        }
        let mut rho = vec![C64::new(0.0, 0.0); d * d];
        for c in 0..d {
            if psi[c] == C64::new(0.0, 0.0) {
                continue;
            }
            for r in 0..d {
                rho[c * d + r] = psi[r] * psi[c].conj();
            }
        }
        Ok(rho)
    }

    /// Probe amplitudes written out over all bitstrings.
    pub fn probe_amplitudes(&self, probe: ProbeState) -> Result<Vec<C64>> {
        let n = self.n_qubits;
        let size = 1usize << n;
        let all_ones = size - 1;
        let mut amps = vec![C64::new(0.0, 0.0); size];
        match probe {
            ProbeState::Ghz => {
                amps[0] += std::f64::consts::FRAC_1_SQRT_2;
                amps[all_ones] += std::f64::consts::FRAC_1_SQRT_2;
            }
            ProbeState::XPolarized => {
                let a = (size as f64).sqrt().recip();
                amps.iter_mut().for_each(|z| *z = C64::new(a, 0.0));
            }
            ProbeState::Dicke(k) => {
                if k > n {
                    return Err(Error::ExcitationOutOfRange { n: k, n_qubits: n });
                }
                let members: Vec<usize> = (0..size).filter(|b| b.count_ones() as usize == k).collect();
                let a = (members.len() as f64).sqrt().recip();
                for b in members {
                    amps[b] = C64::new(a, 0.0);
                }
            }
            ProbeState::Excited => amps[all_ones] = C64::new(1.0, 0.0),
            ProbeState::Ground => amps[0] = C64::new(1.0, 0.0),
        }
        Ok(amps)
    }
}

impl Model for FullModel {
    type Generator = FullLiouvillian;

    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn generator(&self, params: &SystemParams) -> Result<FullLiouvillian> {
        if params.n_qubits != self.n_qubits || params.fock_levels() != self.levels {
            return Err(Error::Shape("params do not match the full model".into()));
        }
        full_liouvillian_with_cap(params, self.cap)
    }

    fn initial_state(&self, probe: ProbeState, _params: &SystemParams) -> Result<Vec<C64>> {
        self.pure_state(&self.probe_amplitudes(probe)?)
    }

    fn blocks(&self) -> Vec<(usize, usize)> {
        vec![(0, self.dim())]
    }

    fn observables(&self, y: &[C64]) -> Observables {
        let d = self.dim();
        let half_n = self.n_qubits as f64 / 2.0;
        let mut obs = Observables::default();
        for i in 0..d {
            let p = y[i * d + i].re;
            let bits = i / self.levels;
            obs.trace += p;
            obs.jz += p * (bits.count_ones() as f64 - half_n);
            obs.photons += p * (i % self.levels) as f64;
        }
        obs.purity = y.iter().map(|z| z.norm_sqr()).sum();
        obs
    }
}

/// Reference QFI trace from the full space.
pub fn full_evolve_and_qfi(
    params: &SystemParams,
    probe: ProbeState,
    target: EstimationTarget,
    grid: &TimeGrid,
    opts: &QfiOptions,
) -> Result<QfiTrace> {
    let model = FullModel::new(params.n_qubits, params.n_cav_max)?;
    qfi_trace(&model, params, probe, target, grid, opts)
}

/// Largest disagreement between a symmetric-basis trace and its reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// `max_t |F_sym − F_full|`
    pub qfi_abs: f64,
    /// `qfi_abs / max_t F_full` (0 when the reference QFI vanishes identically).
    pub qfi_rel: f64,
    /// Largest deviation over ⟨J_z⟩, ⟨a†a⟩ and purity.
    pub observables: f64,
}

impl Deviation {
    pub fn worst(self, other: Deviation) -> Deviation {
        Deviation {
            qfi_abs: self.qfi_abs.max(other.qfi_abs),
            qfi_rel: self.qfi_rel.max(other.qfi_rel),
            observables: self.observables.max(other.observables),
        }
    }
}

pub fn compare_traces(symmetric: &QfiTrace, full: &QfiTrace) -> Result<Deviation> {
    if symmetric.times != full.times {
        return Err(Error::Shape("traces were sampled on different grids".into()));
    }
    let qfi_abs = symmetric
        .values
        .iter()
        .zip(&full.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = full.values.iter().copied().fold(0.0, f64::max);
    let qfi_rel = if scale > 0.0 { qfi_abs / scale } else { qfi_abs };
    let observables = symmetric
        .observables
        .iter()
        .zip(&full.observables)
        .map(|(a, b)| {
            (a.jz - b.jz)
                .abs()
                .max((a.photons - b.photons).abs())
                .max((a.purity - b.purity).abs())
        })
        .fold(0.0, f64::max);
    Ok(Deviation {
        qfi_abs,
        qfi_rel,
        observables,
    })
}

/// Run the symmetric pipeline and the reference on the same point.
pub fn oracle_deviation(
    params: &SystemParams,
    probe: ProbeState,
    target: EstimationTarget,
    grid: &TimeGrid,
    opts: &QfiOptions,
) -> Result<(Deviation, QfiTrace, QfiTrace)> {
    let sym_model = SymmetricModel::for_params(params)?;
    let sym = qfi_trace(&sym_model, params, probe, target, grid, opts)?;
    let full = full_evolve_and_qfi(params, probe, target, grid, opts)?;
    Ok((compare_traces(&sym, &full)?, sym, full))
}
