//! Permutationally symmetric state space of N qubits.
//!
//! A permutation-invariant operator on N qubits decomposes as
//! `⊕_j M_j ⊗ 1_{d_j}`, so only one `(2j+1)`-dimensional block per total spin
//! `j` has to be stored. Spin labels are carried as twice their value
//! (`two_j`, `two_m`) so that sector lookups never compare floats.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest qubit count accepted by [`enumerate_sectors`].
pub const DEFAULT_MAX_QUBITS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectorInfo {
    pub two_j: u32,
    pub dim: usize,
    pub degeneracy: u64,
}

impl SectorInfo {
    pub fn j(&self) -> f64 {
        self.two_j as f64 / 2.0
    }

    /// Twice the magnetic number of the `idx`-th basis state (ascending m).
    pub fn two_m(&self, idx: usize) -> i32 {
        2 * idx as i32 - self.two_j as i32
    }

    pub fn index_of(&self, two_m: i32) -> Option<usize> {
        let tj = self.two_j as i32;
        if two_m < -tj || two_m > tj || (two_m + tj) % 2 != 0 {
            return None;
        }
        Some(((two_m + tj) / 2) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DickeSpace {
    n_qubits: usize,
    sectors: Vec<SectorInfo>,
}

impl DickeSpace {
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Sectors ordered from `j = N/2` downward.
    pub fn sectors(&self) -> &[SectorInfo] {
        &self.sectors
    }

    /// Position of the sector with total spin `two_j / 2`.
    pub fn sector_position(&self, two_j: u32) -> Option<usize> {
        let top = self.n_qubits as u32;
        if two_j > top || (top - two_j) % 2 != 0 {
            return None;
        }
        Some(((top - two_j) / 2) as usize)
    }

    pub fn sector(&self, two_j: u32) -> Option<&SectorInfo> {
        self.sector_position(two_j).map(|p| &self.sectors[p])
    }

    /// `Σ_j d_j (2j+1)`, which must equal `2^N`.
    pub fn total_dimension(&self) -> u128 {
        self.sectors
            .iter()
            .map(|s| s.degeneracy as u128 * s.dim as u128)
            .sum()
    }
}

/// Enumerate the total-spin sectors of `n_qubits` spin-1/2 particles.
pub fn enumerate_sectors(n_qubits: usize) -> Result<DickeSpace> {
    enumerate_sectors_with_max(n_qubits, DEFAULT_MAX_QUBITS)
}

pub fn enumerate_sectors_with_max(n_qubits: usize, max_qubits: usize) -> Result<DickeSpace> {
    if n_qubits == 0 || n_qubits > max_qubits {
        return Err(Error::QubitCount {
            n: n_qubits,
            max: max_qubits,
        });
    }
    let table = degeneracy_row(n_qubits);
    let top = n_qubits as u32;
    let sectors = (0..=top)
        .rev()
        .step_by(2)
        .map(|two_j| SectorInfo {
            two_j,
            dim: two_j as usize + 1,
            degeneracy: table[two_j as usize],
        })
        .collect();
    Ok(DickeSpace { n_qubits, sectors })
}

/// Multiplicity of the spin-`two_j/2` representation in `(1/2)^{⊗N}`.
pub fn degeneracy(n_qubits: usize, two_j: u32) -> Result<u64> {
    let valid = n_qubits > 0
        && two_j as usize <= n_qubits
        && (n_qubits - two_j as usize) % 2 == 0;
    if !valid {
        return Err(Error::InvalidSpin {
            n: n_qubits,
            two_j,
        });
    }
    Ok(degeneracy_row(n_qubits)[two_j as usize])
}

// Counts coupling paths: adding one spin-1/2 to spin j reaches j ± 1/2.
fn degeneracy_row(n_qubits: usize) -> Vec<u64> {
    let mut row = vec![0u64; n_qubits + 2];
    row[0] = 1;
    for n in 1..=n_qubits {
        let mut next = vec![0u64; n_qubits + 2];
        for two_j in 0..=n {
            let from_below = if two_j >= 1 { row[two_j - 1] } else { 0 };
            let from_above = row[two_j + 1];
            next[two_j] = from_below + from_above;
        }
        row = next;
    }
    row.truncate(n_qubits + 1);
    row
}

/// `⟨j, m−1| J₋ |j, m⟩ = √(j(j+1) − m(m−1))`.
pub fn lowering_element(two_j: u32, two_m: i32) -> f64 {
    let tj = two_j as f64;
    let tm = two_m as f64;
    // 4 (j(j+1) - m(m-1)) = tj(tj+2) - tm(tm-2)
    let four_x = tj * (tj + 2.0) - tm * (tm - 2.0);
    (four_x.max(0.0) / 4.0).sqrt()
}

/// Collective spin matrices of one sector in the ascending-m basis.
#[derive(Debug, Clone)]
pub struct OperatorBlocks {
    pub two_j: u32,
    pub j_plus: DMatrix<f64>,
    pub j_minus: DMatrix<f64>,
    pub j_z: DMatrix<f64>,
}

impl OperatorBlocks {
    pub fn new(sector: &SectorInfo) -> Self {
        let d = sector.dim;
        let mut j_minus = DMatrix::zeros(d, d);
        let mut j_z = DMatrix::zeros(d, d);
        for idx in 0..d {
            let two_m = sector.two_m(idx);
            j_z[(idx, idx)] = two_m as f64 / 2.0;
            if idx > 0 {
                j_minus[(idx - 1, idx)] = lowering_element(sector.two_j, two_m);
            }
        }
        let j_plus = j_minus.transpose();
        Self {
            two_j: sector.two_j,
            j_plus,
            j_minus,
            j_z,
        }
    }
}

pub fn operator_blocks(space: &DickeSpace) -> Vec<OperatorBlocks> {
    space.sectors().iter().map(OperatorBlocks::new).collect()
}

/// Rates (in units of γ) at which population in `|j, m⟩` is carried by
/// independent single-qubit emission into `|j−1, m−1⟩`, `|j, m−1⟩` and
/// `|j+1, m−1⟩`. The three weights sum to the number of excited qubits,
/// `N/2 + m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionBranches {
    pub to_lower_j: f64,
    pub to_same_j: f64,
    pub to_higher_j: f64,
}

impl EmissionBranches {
    pub fn total(&self) -> f64 {
        self.to_lower_j + self.to_same_j + self.to_higher_j
    }
}

pub fn local_emission_coefficients(
    n_qubits: usize,
    two_j: u32,
    two_m: i32,
) -> Result<EmissionBranches> {
    if n_qubits == 0 || two_j as usize > n_qubits || (n_qubits - two_j as usize) % 2 != 0 {
        return Err(Error::InvalidSpin {
            n: n_qubits,
            two_j,
        });
    }
    let tj = two_j as i32;
    if two_m < -tj || two_m > tj || (two_m + tj) % 2 != 0 {
        return Err(Error::InvalidProjection { two_j, two_m });
    }

    let n = n_qubits as f64;
    let j = two_j as f64 / 2.0;
    let m = two_m as f64 / 2.0;
    let half_n = n / 2.0;

    let (to_lower_j, to_same_j) = if two_j == 0 {
        (0.0, 0.0)
    } else {
        let lower = (j + m) * (j + m - 1.0) * (half_n + j + 1.0) / (2.0 * j * (2.0 * j + 1.0));
        let same = (j + m) * (j - m + 1.0) * (half_n + 1.0) / (2.0 * j * (j + 1.0));
        (lower.max(0.0), same.max(0.0))
    };
    let to_higher_j =
        ((j - m + 1.0) * (j - m + 2.0) * (half_n - j) / (2.0 * (j + 1.0) * (2.0 * j + 1.0)))
            .max(0.0);

    Ok(EmissionBranches {
        to_lower_j,
        to_same_j,
        to_higher_j,
    })
}
