//! Small dense helpers shared by the QFI evaluation and the reference solver.

use nalgebra::{DMatrix, DVector};

use crate::model::C64;

/// Largest entry of `m − m†`, relative to the largest entry of `m` (or 1 if
/// `m` is smaller than that).
pub fn hermiticity_deviation(m: &DMatrix<C64>) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for c in 0..d {
        for r in 0..=c {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst / scale
}

/// Largest entry modulus.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigenvalues (unsorted) and eigenvectors (columns) of a Hermitian matrix.
pub fn hermitian_eigen(m: DMatrix<C64>) -> (DVector<f64>, DMatrix<C64>) {
    let eig = m.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Connected components of the union of the nonzero patterns of the given
/// square matrices. Entries are tested for exact zero: the generators never
/// fill structurally empty entries, so these components are exact
/// invariant subspaces.
pub fn nonzero_components(mats: &[&DMatrix<C64>]) -> Vec<Vec<usize>> {
    let d = mats.first().map_or(0, |m| m.nrows());
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for m in mats {
        for c in 0..d {
            for r in 0..c {
                if m[(r, c)] != C64::new(0.0, 0.0) || m[(c, r)] != C64::new(0.0, 0.0) {
                    let (a, b) = (find(&mut parent, r), find(&mut parent, c));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; d];
    for i in 0..d {
        let root = find(&mut parent, i);
        if root_slot[root] == usize::MAX {
            root_slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[root]].push(i);
    }
    groups
}

pub fn submatrix(m: &DMatrix<C64>, idx: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}
