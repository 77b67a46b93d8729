//! Tavis–Cummings generator on the hybrid (Dicke sector ⊗ Fock) space.
//!
//! Every sector block is stored column-major: element `(r, c)` of block `k`
//! sits at `offset[k] + c * dim + r`, with hybrid row `r = m_idx * levels + n`
//! (`m_idx` ascending in m, `n` the photon number). This lets a block be
//! viewed directly as an `nalgebra` matrix.

use nalgebra::{DMatrix, DMatrixView};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dicke_space::{local_emission_coefficients, lowering_element, DickeSpace, SectorInfo};
use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n_qubits: usize,
    /// Qubit–cavity coupling g; sets the time and frequency scale.
    pub coupling: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub omega_q: f64,
    pub omega_c: f64,
    /// Highest retained photon number.
    pub n_cav_max: usize,
}

impl SystemParams {
    /// Resonant parameters (`ω_q = ω_c = 0`) with the default Fock cutoff `N + 2`.
    pub fn resonant(n_qubits: usize, coupling: f64, kappa: f64, gamma: f64) -> Self {
        Self {
            n_qubits,
            coupling,
            kappa,
            gamma,
            omega_q: 0.0,
            omega_c: 0.0,
            n_cav_max: n_qubits + 2,
        }
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.omega_q = self.omega_c + detuning;
        self
    }

    pub fn detuning(&self) -> f64 {
        self.omega_q - self.omega_c
    }

    pub fn fock_levels(&self) -> usize {
        self.n_cav_max + 1
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.coupling,
            self.kappa,
            self.gamma,
            self.omega_q,
            self.omega_c,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite rate or frequency".into()));
        }
        if self.n_qubits == 0 {
            return Err(Error::InvalidParams("n_qubits must be positive".into()));
        }
        if self.coupling < 0.0 {
            return Err(Error::InvalidParams(format!(
                "coupling must be non-negative, got {}",
                self.coupling
            )));
        }
        if self.kappa < 0.0 || self.gamma < 0.0 {
            return Err(Error::InvalidParams(format!(
                "decay rates must be non-negative (kappa = {}, gamma = {})",
                self.kappa, self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum ProbeState {
    Ghz,
    XPolarized,
    Dicke(usize),
    Excited,
    Ground,
}

impl ProbeState {
    /// Amplitudes on `|N/2, m = k − N/2⟩`, indexed by excitation count `k`.
    pub fn amplitudes(&self, n_qubits: usize) -> Result<Vec<f64>> {
        let mut amp = vec![0.0; n_qubits + 1];
        match *self {
            ProbeState::Ghz => {
                amp[0] += std::f64::consts::FRAC_1_SQRT_2;
                amp[n_qubits] += std::f64::consts::FRAC_1_SQRT_2;
            }
            ProbeState::XPolarized => {
                // √C(N,k) / 2^{N/2}, accumulated in logs to stay finite for large N.
                let mut log_binom = 0.0f64;
                let log_norm = 0.5 * n_qubits as f64 * std::f64::consts::LN_2;
                for (k, a) in amp.iter_mut().enumerate() {
                    if k > 0 {
                        log_binom += ((n_qubits + 1 - k) as f64).ln() - (k as f64).ln();
                    }
                    *a = (0.5 * log_binom - log_norm).exp();
                }
            }
            ProbeState::Dicke(n) => {
                if n > n_qubits {
                    return Err(Error::ExcitationOutOfRange { n, n_qubits });
                }
                amp[n] = 1.0;
            }
            ProbeState::Excited => amp[n_qubits] = 1.0,
            ProbeState::Ground => amp[0] = 1.0,
        }
        Ok(amp)
    }

    pub fn label(&self) -> String {
        match self {
            ProbeState::Ghz => "ghz".into(),
            ProbeState::XPolarized => "x".into(),
            ProbeState::Dicke(n) => format!("dicke-{n}"),
            ProbeState::Excited => "excited".into(),
            ProbeState::Ground => "ground".into(),
        }
    }
}

impl std::fmt::Display for ProbeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for ProbeState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "ghz" => Ok(ProbeState::Ghz),
            "x" | "x-polarized" | "xpolarized" => Ok(ProbeState::XPolarized),
            "excited" => Ok(ProbeState::Excited),
            "ground" => Ok(ProbeState::Ground),
            other => other
                .strip_prefix("dicke-")
                .and_then(|n| n.parse().ok())
                .map(ProbeState::Dicke)
                .ok_or_else(|| Error::Config(format!("unknown probe '{s}'"))),
        }
    }
}

/// Placement of the sector blocks inside one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub sectors: Vec<SectorInfo>,
    pub levels: usize,
    pub dims: Vec<usize>,
    pub offsets: Vec<usize>,
    pub len: usize,
}

impl BlockLayout {
    pub fn new(space: &DickeSpace, levels: usize) -> Self {
        let sectors = space.sectors().to_vec();
        let dims: Vec<usize> = sectors.iter().map(|s| s.dim * levels).collect();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut len = 0;
        for d in &dims {
            offsets.push(len);
            len += d * d;
        }
        Self {
            sectors,
            levels,
            dims,
            offsets,
            len,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn block_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k] + self.dims[k] * self.dims[k]
    }

    fn split_mut<'a>(&self, data: &'a mut [C64]) -> Vec<&'a mut [C64]> {
        let mut out = Vec::with_capacity(self.dims.len());
        let mut rest = data;
        for d in &self.dims {
            let (head, tail) = rest.split_at_mut(d * d);
            out.push(head);
            rest = tail;
        }
        out
    }
}

/// Block-diagonal density matrix; block `k` is the *total* weight of sector
/// `k` (its trace is the probability of that total spin), so the global trace
/// is the plain sum of block traces.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub layout: BlockLayout,
    pub data: Vec<C64>,
}

impl HybridState {
    pub fn zeros(layout: BlockLayout) -> Self {
        let data = vec![ZERO; layout.len];
        Self { layout, data }
    }

    pub fn from_data(layout: BlockLayout, data: Vec<C64>) -> Result<Self> {
        if data.len() != layout.len {
            return Err(Error::Shape(format!(
                "buffer length {} does not match layout {}",
                data.len(),
                layout.len
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn n_qubits(&self) -> usize {
        self.layout.sectors[0].two_j as usize
    }

    pub fn block(&self, k: usize) -> DMatrixView<'_, C64> {
        let d = self.layout.dims[k];
        DMatrixView::from_slice(&self.data[self.layout.block_range(k)], d, d)
    }

    pub fn block_matrix(&self, k: usize) -> DMatrix<C64> {
        self.block(k).into_owned()
    }

    pub fn trace(&self) -> f64 {
        (0..self.layout.n_blocks())
            .map(|k| self.block(k).trace().re)
            .sum()
    }

    fn diagonal_sum(&self, weight: impl Fn(usize, usize, usize) -> f64) -> f64 {
        let levels = self.layout.levels;
        let mut total = 0.0;
        for k in 0..self.layout.n_blocks() {
            let block = self.block(k);
            for r in 0..self.layout.dims[k] {
                total += weight(k, r / levels, r % levels) * block[(r, r)].re;
            }
        }
        total
    }

    /// `⟨J_z⟩`.
    pub fn jz_expectation(&self) -> f64 {
        let sectors = &self.layout.sectors;
        self.diagonal_sum(|k, m_idx, _| sectors[k].two_m(m_idx) as f64 / 2.0)
    }

    /// `⟨a†a⟩`.
    pub fn photon_number(&self) -> f64 {
        self.diagonal_sum(|_, _, n| n as f64)
    }

    /// Qubit excitations plus photons, `⟨J_z⟩ + N/2 + ⟨a†a⟩`.
    pub fn excitation_number(&self) -> f64 {
        self.jz_expectation() + self.n_qubits() as f64 / 2.0 * self.trace() + self.photon_number()
    }

    /// Purity of the full 2^N-qubit state, `Σ_j tr(ρ_j²) / d_j`.
    pub fn purity(&self) -> f64 {
        (0..self.layout.n_blocks())
            .map(|k| {
                let b = self.block(k);
                let sq: f64 = b.iter().map(|z| z.norm_sqr()).sum();
                sq / self.layout.sectors[k].degeneracy as f64
            })
            .sum()
    }

    /// Largest `|ρ − ρ†|` entry relative to the largest entry.
    pub fn hermiticity_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.layout.n_blocks() {
            let b = self.block(k);
            let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let d = b.nrows();
            for c in 0..d {
                for r in 0..=c {
                    let dev = (b[(r, c)] - b[(c, r)].conj()).norm() / scale;
                    worst = worst.max(dev);
                }
            }
        }
        worst
    }

    /// Smallest eigenvalue over all blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.layout.n_blocks())
            .map(|k| {
                let b = self.block_matrix(k);
                let herm = (&b + b.adjoint()) * C64::new(0.5, 0.0);
                herm.symmetric_eigenvalues().min()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Nonzero entries of the sector Hamiltonian blocks, `(row, col, value)`.
fn hamiltonian_entries(params: &SystemParams, sector: &SectorInfo) -> Vec<(usize, usize, f64)> {
    let levels = params.fock_levels();
    let g = params.coupling;
    let mut entries = Vec::new();
    for m_idx in 0..sector.dim {
        let two_m = sector.two_m(m_idx);
        for n in 0..levels {
            let r = m_idx * levels + n;
            let diag = params.omega_q * two_m as f64 / 2.0 + params.omega_c * n as f64;
            if diag != 0.0 {
                entries.push((r, r, diag));
            }
            // g a† J₋ : |m, n⟩ → |m−1, n+1⟩ and its adjoint.
            if m_idx > 0 && n + 1 < levels && g != 0.0 {
                let amp = g * ((n + 1) as f64).sqrt() * lowering_element(sector.two_j, two_m);
                let target = (m_idx - 1) * levels + n + 1;
                entries.push((target, r, amp));
                entries.push((r, target, amp));
            }
        }
    }
    entries
}

/// Dense Hamiltonian blocks `H = ω_q J_z + ω_c a†a + g(a†J₋ + aJ₊)`, one per sector.
pub fn build_hamiltonian(params: &SystemParams, space: &DickeSpace) -> Vec<DMatrix<C64>> {
    let levels = params.fock_levels();
    space
        .sectors()
        .iter()
        .map(|s| {
            let d = s.dim * levels;
            let mut h = DMatrix::zeros(d, d);
            for (r, c, v) in hamiltonian_entries(params, s) {
                h[(r, c)] += C64::new(v, 0.0);
            }
            h
        })
        .collect()
}

/// The resonant coupling operator `V = a†J₋ + aJ₊` per sector.
pub fn coupling_operator(space: &DickeSpace, n_cav_max: usize) -> Vec<DMatrix<C64>> {
    let mut p = SystemParams::resonant(space.n_qubits(), 1.0, 0.0, 0.0);
    p.n_cav_max = n_cav_max;
    build_hamiltonian(&p, space)
}

#[derive(Debug, Clone)]
struct EmissionFeed {
    source: usize,
    /// `(target m_idx, source m_idx, √(γ w))`
    links: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
struct BlockGenerator {
    /// Real symmetric Hamiltonian block in CSR form.
    hamiltonian: CsrRows,
    /// Diagonal of `Σ_k L_k† L_k` = `κ n + γ (N/2 + m)`.
    decay: Vec<f64>,
    feeds: Vec<EmissionFeed>,
}

#[derive(Debug, Clone)]
struct CsrRows {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl CsrRows {
    fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut ptr = vec![0; n + 1];
        for &(r, _, _) in &t {
            ptr[r + 1] += 1;
        }
        for i in 0..n {
            ptr[i + 1] += ptr[i];
        }
        Self {
            ptr,
            idx: t.iter().map(|e| e.1).collect(),
            val: t.iter().map(|e| e.2).collect(),
        }
    }
}

/// GKSL generator `−i[H, ρ] + κ D[a] ρ + γ Σ_i D[σ₋^(i)] ρ` on the block layout.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    params: SystemParams,
    /// `√n` for the Fock ladder.
    sqrt_n: Vec<f64>,
    layout: BlockLayout,
    blocks: Vec<BlockGenerator>,
}

pub fn build_liouvillian(params: &SystemParams, space: &DickeSpace) -> Result<Liouvillian> {
    if params.n_cav_max < params.n_qubits {
        return Err(Error::InvalidParams(format!(
            "Fock cutoff {} is below the qubit count {}; the truncation guard cannot hold",
            params.n_cav_max, params.n_qubits
        )));
    }
    Liouvillian::build_unguarded(params, space)
}

impl Liouvillian {
    /// Builds without requiring `n_cav_max ≥ N`. Only useful for exercising
    /// the runtime truncation guard.
    pub fn build_unguarded(params: &SystemParams, space: &DickeSpace) -> Result<Self> {
        params.validate()?;
        if params.n_qubits != space.n_qubits() {
            return Err(Error::Shape(format!(
                "params describe {} qubits, space has {}",
                params.n_qubits,
                space.n_qubits()
            )));
        }
        let levels = params.fock_levels();
        let layout = BlockLayout::new(space, levels);
        let n = params.n_qubits;
        let half_n = n as f64 / 2.0;
        let sectors = space.sectors();

        let mut blocks: Vec<BlockGenerator> = sectors
            .iter()
            .map(|s| {
                let mut decay = Vec::with_capacity(s.dim * levels);
                for m_idx in 0..s.dim {
                    let m = s.two_m(m_idx) as f64 / 2.0;
                    for photons in 0..levels {
                        decay.push(params.kappa * photons as f64 + params.gamma * (half_n + m));
                    }
                }
                BlockGenerator {
                    hamiltonian: CsrRows::from_triplets(s.dim * levels, hamiltonian_entries(params, s)),
                    decay,
                    feeds: Vec::new(),
                }
            })
            .collect();

        if params.gamma > 0.0 {
            for (src_pos, s) in sectors.iter().enumerate() {
                for m_idx in 0..s.dim {
                    let b = local_emission_coefficients(n, s.two_j, s.two_m(m_idx))?;
                    let branches = [
                        (s.two_j.checked_sub(2), b.to_lower_j),
                        (Some(s.two_j), b.to_same_j),
                        (Some(s.two_j + 2), b.to_higher_j),
                    ];
                    for (target_two_j, w) in branches {
                        let Some(tj) = target_two_j else { continue };
                        if w <= 0.0 {
                            continue;
                        }
                        let Some(t_pos) = space.sector_position(tj) else {
                            continue;
                        };
                        let Some(t_idx) = sectors[t_pos].index_of(s.two_m(m_idx) - 2) else {
                            continue;
                        };
                        let coef = (params.gamma * w).sqrt();
                        push_link(&mut blocks[t_pos].feeds, src_pos, (t_idx, m_idx, coef));
                    }
                }
            }
        }

        Ok(Self {
            params: *params,
            sqrt_n: (0..=levels).map(|n| (n as f64).sqrt()).collect(),
            layout,
            blocks,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.layout.len
    }

    pub fn is_empty(&self) -> bool {
        self.layout.len == 0
    }

    /// `out = L(rho)` on flat buffers in block layout.
    pub fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let mut targets = self.layout.split_mut(out);
        let work = |(k, out_k): (usize, &mut &mut [C64])| self.apply_block(k, rho, out_k);
        if self.layout.len > 1 << 14 {
            targets.par_iter_mut().enumerate().for_each(work);
        } else {
            targets.iter_mut().enumerate().for_each(work);
        }
    }

    fn apply_block(&self, k: usize, rho: &[C64], out: &mut [C64]) {
        let gen = &self.blocks[k];
        let d = self.layout.dims[k];
        let levels = self.layout.levels;
        let rho_k = &rho[self.layout.block_range(k)];

        // −i[H, ρ] − ½{Γ, ρ}, one contiguous column at a time. H is real
        // symmetric, so row `col` of H also gives column `col`.
        let h = &gen.hamiltonian;
        for col in 0..d {
            let rho_col = &rho_k[col * d..(col + 1) * d];
            let out_col = &mut out[col * d..(col + 1) * d];
            let decay_c = gen.decay[col];
            for r in 0..d {
                let mut hr = C64::new(0.0, 0.0);
                for k in h.ptr[r]..h.ptr[r + 1] {
                    hr += rho_col[h.idx[k]] * h.val[k];
                }
                out_col[r] = rho_col[r] * (-0.5 * (gen.decay[r] + decay_c)) + C64::new(hr.im, -hr.re);
            }
            for k in h.ptr[col]..h.ptr[col + 1] {
                let src = &rho_k[h.idx[k] * d..(h.idx[k] + 1) * d];
                let v = h.val[k];
                for (o, x) in out_col.iter_mut().zip(src) {
                    // + i h ρ[:, r]
                    *o += C64::new(-x.im * v, x.re * v);
                }
            }
        }

        // κ a ρ a†
        let kappa = self.params.kappa;
        if kappa > 0.0 {
            let sq = &self.sqrt_n;
            for c in 0..d {
                let nc = c % levels;
                if nc + 1 >= levels {
                    continue;
                }
                let src_col = &rho_k[(c + 1) * d..(c + 2) * d];
                let out_col = &mut out[c * d..(c + 1) * d];
                let fc = kappa * sq[nc + 1];
                for m_r in 0..d / levels {
                    let base = m_r * levels;
                    for nr in 0..levels - 1 {
                        out_col[base + nr] += src_col[base + nr + 1] * (fc * sq[nr + 1]);
                    }
                }
            }
        }

        // γ Σ_i σ₋^(i) ρ σ₊^(i), fed from sectors j, j ± 1.
        for feed in &gen.feeds {
            let ds = self.layout.dims[feed.source];
            let src = &rho[self.layout.block_range(feed.source)];
            for &(tc, sc, wc) in &feed.links {
                for &(tr, sr, wr) in &feed.links {
                    let w = wr * wc;
                    for n_c in 0..levels {
                        let c = tc * levels + n_c;
                        let s_c = sc * levels + n_c;
                        for n_r in 0..levels {
                            let r = tr * levels + n_r;
                            let s_r = sr * levels + n_r;
                            out[c * d + r] += src[s_c * ds + s_r] * w;
                        }
                    }
                }
            }
        }
    }

    pub fn apply_state(&self, rho: &HybridState) -> HybridState {
        let mut out = HybridState::zeros(self.layout.clone());
        self.apply(&rho.data, &mut out.data);
        out
    }
}

fn push_link(feeds: &mut Vec<EmissionFeed>, source: usize, link: (usize, usize, f64)) {
    match feeds.iter_mut().find(|f| f.source == source) {
        Some(f) => f.links.push(link),
        None => feeds.push(EmissionFeed {
            source,
            links: vec![link],
        }),
    }
}

/// Pure probe state in the `j = N/2` sector with the cavity in vacuum.
pub fn prepare_probe(
    probe: ProbeState,
    params: &SystemParams,
    space: &DickeSpace,
) -> Result<HybridState> {
    let n = space.n_qubits();
    let amps = probe.amplitudes(n)?;
    let layout = BlockLayout::new(space, params.fock_levels());
    let mut state = HybridState::zeros(layout);
    let levels = state.layout.levels;
    let d = state.layout.dims[0];
    // Top sector: m_idx = k (ascending m ⇔ ascending excitation count).
    for (kc, &ac) in amps.iter().enumerate() {
        for (kr, &ar) in amps.iter().enumerate() {
            let v = ar * ac;
            if v != 0.0 {
                state.data[(kc * levels) * d + kr * levels] = C64::new(v, 0.0);
            }
        }
    }
    Ok(state)
}

/// Summed population of the two highest Fock levels.
pub fn truncation_guard(state: &HybridState) -> f64 {
    truncation_population(&state.layout, &state.data)
}

/// Guard check on a raw buffer; avoids cloning into a `HybridState`.
pub fn truncation_population(layout: &BlockLayout, data: &[C64]) -> f64 {
    let levels = layout.levels;
    let lowest_guarded = levels.saturating_sub(2);
    let mut total = 0.0;
    for k in 0..layout.n_blocks() {
        let d = layout.dims[k];
        let block = &data[layout.block_range(k)];
        for r in 0..d {
            if r % levels >= lowest_guarded {
                total += block[r * d + r].re;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dicke_space::enumerate_sectors;
    use crate::linalg::max_abs;

    fn random_hermitian_state(layout: &BlockLayout, seed: u64) -> HybridState {
        // Deterministic pseudo-random fill; positivity is not needed here.
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut st = HybridState::zeros(layout.clone());
        for k in 0..layout.n_blocks() {
            let d = layout.dims[k];
            let off = layout.offsets[k];
            for c in 0..d {
                for r in 0..=c {
                    let v = if r == c {
                        C64::new(next(), 0.0)
                    } else {
                        C64::new(next(), next())
                    };
                    st.data[off + c * d + r] = v;
                    st.data[off + r * d + c] = v.conj();
                }
            }
        }
        st
    }

    #[test]
    fn hamiltonian_matrix_elements() {
        let space = enumerate_sectors(3).unwrap();
        let p = SystemParams::resonant(3, 0.7, 0.0, 0.0);
        let h = build_hamiltonian(&p, &space);
        let levels = p.fock_levels();
        for (k, s) in space.sectors().iter().enumerate() {
            let hk = &h[k];
            assert!(max_abs(&(hk - hk.adjoint())) < 1e-15);
            for m_idx in 1..s.dim {
                let j = s.j();
                let m = s.two_m(m_idx) as f64 / 2.0;
                for n in 0..levels - 1 {
                    let expect = 0.7 * ((n + 1) as f64).sqrt() * (j * (j + 1.0) - m * (m - 1.0)).sqrt();
                    let got = hk[((m_idx - 1) * levels + n + 1, m_idx * levels + n)];
                    assert!((got.re - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn single_qubit_is_jaynes_cummings() {
        let space = enumerate_sectors(1).unwrap();
        let p = SystemParams::resonant(1, 1.3, 0.0, 0.0);
        let h = &build_hamiltonian(&p, &space)[0];
        let levels = p.fock_levels();
        // |e, 0⟩ ↔ |g, 1⟩ with amplitude g.
        let e0 = levels;
        let g1 = 1;
        assert!((h[(g1, e0)].re - 1.3).abs() < 1e-15);
        assert!((h[(e0, g1)].re - 1.3).abs() < 1e-15);
        assert!(h.diagonal().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn detuning_adds_diagonal() {
        let space = enumerate_sectors(2).unwrap();
        let p = SystemParams::resonant(2, 1.0, 0.0, 0.0).with_detuning(0.1);
        assert!((p.detuning() - 0.1).abs() < 1e-15);
        let h = build_hamiltonian(&p, &space);
        let levels = p.fock_levels();
        let s = space.sectors()[0];
        for m_idx in 0..s.dim {
            let m = s.two_m(m_idx) as f64 / 2.0;
            let z = h[0][(m_idx * levels, m_idx * levels)];
            assert!((z.re - 0.1 * m).abs() < 1e-15);
        }
    }

    #[test]
    fn probe_amplitudes() {
        let x = ProbeState::XPolarized.amplitudes(2).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert!((x[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((x[2] - 0.5).abs() < 1e-15);
        let ghz = ProbeState::Ghz.amplitudes(3).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(ghz, vec![r, 0.0, 0.0, r]);
        assert_eq!(
            ProbeState::Dicke(0).amplitudes(5).unwrap(),
            ProbeState::Ground.amplitudes(5).unwrap()
        );
        assert_eq!(
            ProbeState::Dicke(5).amplitudes(5).unwrap(),
            ProbeState::Excited.amplitudes(5).unwrap()
        );
        assert!(matches!(
            ProbeState::Dicke(6).amplitudes(5),
            Err(Error::ExcitationOutOfRange { .. })
        ));
    }

    #[test]
    fn prepared_probes_are_pure_and_normalized() {
        for n in 1..=8 {
            let space = enumerate_sectors(n).unwrap();
            let p = SystemParams::resonant(n, 1.0, 0.0, 0.0);
            let mut probes = vec![ProbeState::Ghz, ProbeState::XPolarized, ProbeState::Excited, ProbeState::Ground];
            probes.extend((0..=n).map(ProbeState::Dicke));
            for probe in probes {
                let st = prepare_probe(probe, &p, &space).unwrap();
                assert!((st.trace() - 1.0).abs() < 1e-12, "{probe} N={n}");
                assert!((st.purity() - 1.0).abs() < 1e-12, "{probe} N={n}");
                assert_eq!(truncation_guard(&st), 0.0);
                assert_eq!(st.photon_number(), 0.0);
            }
        }
    }

    #[test]
    fn ground_probe_is_lowest_m() {
        let space = enumerate_sectors(4).unwrap();
        let p = SystemParams::resonant(4, 1.0, 0.0, 0.0);
        let st = prepare_probe(ProbeState::Dicke(0), &p, &space).unwrap();
        assert!((st.jz_expectation() + 2.0).abs() < 1e-15);
    }

    #[test]
    fn generator_is_trace_and_hermiticity_preserving() {
        for n in 1..=6 {
            let space = enumerate_sectors(n).unwrap();
            let p = SystemParams {
                omega_q: 0.3,
                omega_c: -0.2,
                ..SystemParams::resonant(n, 1.1, 0.7, 1.9)
            };
            let l = build_liouvillian(&p, &space).unwrap();
            let rho = random_hermitian_state(l.layout(), n as u64);
            let drho = l.apply_state(&rho);
            assert!(drho.trace().abs() < 1e-10, "N={n} trace derivative {}", drho.trace());
            assert!(drho.hermiticity_deviation() < 1e-12);

            // L(ρ†) = L(ρ)† for a non-Hermitian input.
            let mut a = rho.clone();
            for (i, z) in a.data.iter_mut().enumerate() {
                *z += C64::new(0.0, 0.01 * (i % 7) as f64);
            }
            let mut a_dag = a.clone();
            for k in 0..l.layout().n_blocks() {
                let adj = a.block(k).adjoint();
                let r = l.layout().block_range(k);
                a_dag.data[r].copy_from_slice(adj.as_slice());
            }
            let la = l.apply_state(&a);
            let la_dag = l.apply_state(&a_dag);
            for k in 0..l.layout().n_blocks() {
                let diff = la.block(k).adjoint() - la_dag.block(k);
                assert!(max_abs(&diff) < 1e-12);
            }
        }
    }

    #[test]
    fn truncation_cutoff_is_enforced() {
        let space = enumerate_sectors(4).unwrap();
        let mut p = SystemParams::resonant(4, 1.0, 0.0, 0.0);
        p.n_cav_max = 3;
        assert!(build_liouvillian(&p, &space).is_err());
        assert!(Liouvillian::build_unguarded(&p, &space).is_ok());
    }

    #[test]
    fn probe_labels_round_trip() {
        for probe in [
            ProbeState::Ghz,
            ProbeState::XPolarized,
            ProbeState::Dicke(3),
            ProbeState::Excited,
            ProbeState::Ground,
        ] {
            let parsed: ProbeState = probe.label().parse().unwrap();
            assert_eq!(parsed, probe);
        }
        assert!("dicke-x".parse::<ProbeState>().is_err());
    }
}
