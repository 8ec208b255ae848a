//! Dense complex linear algebra with fixed ordering and phase conventions.
//!
//! Everything above this module relies on the outputs being deterministic:
//! eigenvalues ascend, degenerate eigenspaces are given a canonical basis that
//! depends only on the subspace, and each eigen/singular vector has its
//! largest-magnitude component made real and positive.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Central tolerance record shared by the kernel and its property tests.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Allowed |M_ij - conj(M_ji)|, relative to max(1, max|M|).
    pub hermitian: f64,
    /// Eigen-reconstruction residual relative to the spectral norm.
    pub residual: f64,
    /// Singular values below this fraction of the largest are zero.
    pub zero_singular: f64,
    /// Allowed max-entry deviation of U†U from the identity.
    pub unitary: f64,
    /// Eigenvalues closer than this (relative to the spectral radius) share a subspace.
    pub degenerate: f64,
}

pub const TOL: Tolerances = Tolerances {
    hermitian: 1e-12,
    residual: 1e-10,
    zero_singular: 1e-12,
    unitary: 1e-12,
    degenerate: 1e-11,
};

/// Relative tie window when picking the dominant component of a vector.
const PHASE_TIE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column i is the eigenvector for `values[i]`.
    pub vectors: CMatrix,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, i: usize) -> CVector {
        self.vectors.column(i).into_owned()
    }
}

/// Singular value decomposition in the row convention `left · V · right† = Σ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// g×g unitary; row k is the left singular row-vector paired with `sigma[k]`.
    pub left: CMatrix,
    /// e×e unitary; row k is the right singular row-vector paired with `sigma[k]`.
    pub right: CMatrix,
    /// min(g, e) values, descending; entries below the zero cutoff are exactly 0.
    pub sigma: Vec<f64>,
    pub rank: usize,
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn real(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Build a complex matrix from real row-major entries.
pub fn from_real(rows: usize, cols: usize, entries: &[f64]) -> CMatrix {
    assert_eq!(entries.len(), rows * cols, "entry count must equal rows*cols");
    CMatrix::from_row_iterator(rows, cols, entries.iter().map(|&x| real(x)))
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    let n = values.len();
    let mut m = CMatrix::zeros(n, n);
    for (i, &v) in values.iter().enumerate() {
        m[(i, i)] = real(v);
    }
    m
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Largest entry of |U†U - I|.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let n = u.ncols();
    max_abs_diff(&(u.adjoint() * u), &CMatrix::identity(n, n))
}

pub fn is_unitary(u: &CMatrix, tol: f64) -> bool {
    u.is_square() && unitarity_defect(u) <= tol
}

pub fn check_hermitian(m: &CMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let scale = max_abs(m).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in i..n {
            let deviation = (m[(i, j)] - m[(j, i)].conj()).norm();
            if deviation > TOL.hermitian * scale {
                return Err(Error::NotHermitian {
                    row: i,
                    col: j,
                    deviation,
                });
            }
        }
    }
    Ok(())
}

pub fn is_hermitian(m: &CMatrix) -> bool {
    check_hermitian(m).is_ok()
}

/// Index of the largest-magnitude component; near-ties go to the lowest index.
pub fn dominant_index<'a>(v: impl IntoIterator<Item = &'a C64>) -> Option<usize> {
    let mags: Vec<f64> = v.into_iter().map(|z| z.norm()).collect();
    let max = mags.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return None;
    }
    mags.iter().position(|&m| m >= max * (1.0 - PHASE_TIE))
}

/// Phase factor that makes the dominant component real-positive.
pub fn canonical_phase<'a>(v: impl IntoIterator<Item = &'a C64> + Clone) -> C64 {
    match dominant_index(v.clone()) {
        Some(k) => {
            let z = *v.into_iter().nth(k).unwrap();
            z.conj() / z.norm()
        }
        None => real(1.0),
    }
}

pub fn fix_phase(v: &mut CVector) {
    let phase = canonical_phase(v.iter());
    *v *= phase;
}

/// Deterministic orthonormal basis of the range of a projector.
///
/// Repeatedly takes the unit vector e_j whose projection (minus the part
/// already spanned) has the largest norm, lowest j on ties. The result
/// depends only on the subspace, not on whichever basis produced `projector`.
pub fn canonical_basis(projector: &CMatrix, dim: usize) -> Vec<CVector> {
    let n = projector.nrows();
    let mut basis: Vec<CVector> = Vec::with_capacity(dim);
    let mut used = vec![false; n];
    for _ in 0..dim {
        let mut best: Option<(usize, CVector, f64)> = None;
        for (j, _) in used.iter().enumerate().filter(|(_, u)| !**u) {
            let mut r = projector.column(j).into_owned();
            for w in &basis {
                let overlap = w.dotc(&r);
                r -= w * overlap;
            }
            let norm = r.norm();
            let better = match &best {
                None => true,
                Some((_, _, bn)) => norm > bn * (1.0 + PHASE_TIE),
            };
            if better {
                best = Some((j, r, norm));
            }
        }
        let (j, mut r, norm) = best.expect("projector rank is smaller than requested dimension");
        used[j] = true;
        r /= real(norm);
        // second pass against drift
        for w in &basis {
            let overlap = w.dotc(&r);
            r -= w * overlap;
        }
        let norm = r.norm();
        r /= real(norm);
        fix_phase(&mut r);
        basis.push(r);
    }
    basis
}

/// Projector onto the span of orthonormal kets.
pub fn projector<'a>(n: usize, kets: impl IntoIterator<Item = &'a CVector>) -> CMatrix {
    let mut p = CMatrix::zeros(n, n);
    for k in kets {
        p += k * k.adjoint();
    }
    p
}

/// Group consecutive indices of an ascending sequence whose neighbours are within `tol`.
pub fn clusters(sorted: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i] - sorted[i - 1] > tol {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

pub fn eig_hermitian(m: &CMatrix) -> Result<EigenSystem> {
    check_hermitian(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(EigenSystem {
            values: Vec::new(),
            vectors: CMatrix::zeros(0, 0),
        });
    }
    // Symmetrize so the solver sees an exactly hermitian input.
    let sym = (m + m.adjoint()) * real(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let raw: Vec<CVector> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let radius = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tol = TOL.degenerate * radius;
    let mut vectors = CMatrix::zeros(n, n);
    for range in clusters(&values, tol) {
        if range.len() == 1 {
            let mut v = raw[range.start].clone();
            fix_phase(&mut v);
            vectors.set_column(range.start, &v);
        } else {
            let p = projector(n, &raw[range.clone()]);
            for (k, v) in canonical_basis(&p, range.len()).into_iter().enumerate() {
                vectors.set_column(range.start + k, &v);
            }
        }
    }
    Ok(EigenSystem { values, vectors })
}

pub fn svd(v: &CMatrix) -> SvdResult {
    let (g, e) = v.shape();
    let m = g.min(e);
    let mut sigma = vec![0.0; m];
    let mut lower_kets: Vec<CVector> = Vec::new();
    let mut rank = 0;

    if m > 0 {
        let dec = v.clone().svd(true, false);
        let u = dec.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..dec.singular_values.len()).collect();
        order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
        let vals: Vec<f64> = order.iter().map(|&i| dec.singular_values[i]).collect();
        let smax = vals.first().copied().unwrap_or(0.0);
        let cutoff = TOL.zero_singular * smax;
        rank = vals.iter().filter(|&&s| smax > 0.0 && s > cutoff).count();

        let coupled: Vec<f64> = vals[..rank].to_vec();
        let kets: Vec<CVector> = order[..rank].iter().map(|&i| u.column(i).into_owned()).collect();
        // `clusters` expects ascending input
        let asc: Vec<f64> = coupled.iter().rev().copied().collect();
        let mut groups: Vec<std::ops::Range<usize>> = clusters(&asc, 1e-10 * smax)
            .into_iter()
            .map(|r| (rank - r.end)..(rank - r.start))
            .collect();
        groups.sort_by_key(|r| r.start);
        for range in groups {
            if range.len() == 1 {
                let mut k = kets[range.start].clone();
                fix_phase(&mut k);
                lower_kets.push(k);
            } else {
                let p = projector(g, &kets[range.clone()]);
                lower_kets.extend(canonical_basis(&p, range.len()));
            }
        }
        sigma[..rank].copy_from_slice(&coupled);
    }

    // Upper partner of each coupled lower ket: b = a V / sigma.
    let mut upper_kets: Vec<CVector> = Vec::with_capacity(rank);
    for a in &lower_kets {
        let row = a.adjoint() * v;
        let mut b: CVector = row.adjoint();
        let norm = b.norm();
        b /= real(norm);
        upper_kets.push(b);
    }

    let lower_null = null_complement(g, &lower_kets);
    let upper_null = null_complement(e, &upper_kets);

    let mut left = CMatrix::zeros(g, g);
    for (k, a) in lower_kets.iter().chain(lower_null.iter()).enumerate() {
        left.set_row(k, &a.adjoint());
    }
    let mut right = CMatrix::zeros(e, e);
    for (k, b) in upper_kets.iter().chain(upper_null.iter()).enumerate() {
        right.set_row(k, &b.adjoint());
    }
    SvdResult {
        left,
        right,
        sigma,
        rank,
    }
}

fn null_complement(n: usize, kets: &[CVector]) -> Vec<CVector> {
    let dim = n - kets.len();
    if dim == 0 {
        return Vec::new();
    }
    let comp = CMatrix::identity(n, n) - projector(n, kets);
    canonical_basis(&comp, dim)
}

/// exp(-i H dt) through the eigendecomposition of H.
pub fn propagator_step(h: &CMatrix, dt: f64) -> Result<CMatrix> {
    let eig = eig_hermitian(h)?;
    let phases: Vec<C64> = eig
        .values
        .iter()
        .map(|&w| C64::from_polar(1.0, -w * dt))
        .collect();
    let r = &eig.vectors;
    let mut scaled = r.clone();
    for (j, ph) in phases.iter().enumerate() {
        let mut col = scaled.column_mut(j);
        col *= *ph;
    }
    Ok(scaled * r.adjoint())
}

/// Rectangular matrix with `sigma[k]` at (k, k).
pub fn rect_diag(rows: usize, cols: usize, sigma: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(rows, cols);
    for (k, &s) in sigma.iter().enumerate().take(rows.min(cols)) {
        m[(k, k)] = real(s);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_input_sorts_and_keeps_unit_vectors() {
        let m = diag_real(&[3.0, 1.0, 2.0]);
        let eig = eig_hermitian(&m).unwrap();
        assert_eq!(eig.values, vec![1.0, 2.0, 3.0]);
        let expected = from_real(3, 3, &[0., 0., 1., 1., 0., 0., 0., 1., 0.]);
        assert!(max_abs_diff(&eig.vectors, &expected) < 1e-15);
    }

    #[test]
    fn symmetric_two_by_two() {
        let m = from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let eig = eig_hermitian(&m).unwrap();
        assert!((eig.values[0] + 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // dominant-component ties go to index 0, made positive
        assert!((eig.vectors[(0, 0)] - real(s)).norm() < 1e-14);
        assert!((eig.vectors[(1, 0)] + real(s)).norm() < 1e-14);
        assert!((eig.vectors[(0, 1)] - real(s)).norm() < 1e-14);
        assert!((eig.vectors[(1, 1)] - real(s)).norm() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian_and_non_square() {
        let m = from_real(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        match eig_hermitian(&m) {
            Err(Error::NotHermitian { row: 0, col: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let m = CMatrix::zeros(2, 3);
        assert!(matches!(eig_hermitian(&m), Err(Error::NotSquare { rows: 2, cols: 3 })));
    }

    #[test]
    fn degenerate_basis_is_independent_of_input_rotation() {
        // Same 2D eigenspace presented in two different bases.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m1 = diag_real(&[1.0, 1.0, 5.0]);
        let rot = from_real(3, 3, &[s, -s, 0., s, s, 0., 0., 0., 1.]);
        let m2 = &rot * &m1 * rot.adjoint();
        let a = eig_hermitian(&m1).unwrap();
        let b = eig_hermitian(&m2).unwrap();
        assert!(max_abs_diff(&a.vectors, &b.vectors) < 1e-12);
    }

    #[test]
    fn identity_svd() {
        let r = svd(&CMatrix::identity(2, 2));
        assert_eq!(r.rank, 2);
        assert!((r.sigma[0] - 1.0).abs() < 1e-15 && (r.sigma[1] - 1.0).abs() < 1e-15);
        assert!(max_abs_diff(&r.left, &CMatrix::identity(2, 2)) < 1e-15);
        assert!(max_abs_diff(&r.right, &CMatrix::identity(2, 2)) < 1e-15);
    }

    #[test]
    fn column_svd_gives_rms_rabi_frequency() {
        let (os, op) = (1.25, 1.37);
        let v = from_real(2, 1, &[os, op]);
        let r = svd(&v);
        assert_eq!(r.rank, 1);
        assert!((r.sigma[0] - (os * os + op * op).sqrt()).abs() < 1e-14);
        let omega = &r.left * &v * r.right.adjoint();
        assert!(max_abs_diff(&omega, &rect_diag(2, 1, &r.sigma)) < 1e-14);
    }

    #[test]
    fn zero_matrix_svd_is_all_null() {
        let r = svd(&CMatrix::zeros(3, 2));
        assert_eq!(r.rank, 0);
        assert_eq!(r.sigma, vec![0.0, 0.0]);
        assert!(is_unitary(&r.left, 1e-14));
        assert!(is_unitary(&r.right, 1e-14));
    }

    #[test]
    fn zero_hamiltonian_propagates_to_identity() {
        let p = propagator_step(&CMatrix::zeros(3, 3), 0.7).unwrap();
        assert!(max_abs_diff(&p, &CMatrix::identity(3, 3)) < 1e-15);
    }

    #[test]
    fn diagonal_phase_evolution() {
        let (d, dt) = (0.8, 1.3);
        let h = diag_real(&[-d / 2.0, d / 2.0]);
        let p = propagator_step(&h, dt).unwrap();
        assert!((p[(0, 0)] - C64::from_polar(1.0, d * dt / 2.0)).norm() < 1e-14);
        assert!((p[(1, 1)] - C64::from_polar(1.0, -d * dt / 2.0)).norm() < 1e-14);
        assert!(p[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn clusters_group_close_values() {
        let c = clusters(&[0.0, 1e-13, 1.0, 2.0, 2.0], 1e-12);
        assert_eq!(c, vec![0..2, 2..3, 3..5]);
        assert!(clusters(&[], 1.0).is_empty());
    }
}
