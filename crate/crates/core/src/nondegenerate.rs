//! Morris-Shore reduction for level sets whose degeneracy is lifted by small
//! shifts.
//!
//! The degenerate Hamiltonian H₀ is diagonalized in two steps, `S H₀ S† = Ξ`
//! and `P Ξ P† = U H₀ U†`, so that `U = P S`. Replacing Ξ with a diagonal
//! matrix of linearized non-degenerate eigenvalues, `QΞ`, gives an effective
//! Hamiltonian `S† (QΞ) S` that has the same MS transformation as H₀ and,
//! to first order in the shifts, the same spectrum as H₀ + ½D.
//!
//! Eigenvalue ordering follows the MS layout: a dark MS state keeps its
//! position, and each bright pair (l, u) puts its lower eigenvalue at l and
//! its upper eigenvalue at u.

use crate::error::{Error, Result};
use crate::linalg::{self, real, CMatrix, CVector};
use crate::ms_core::{self, BipartiteSystem, MsDecomposition};

#[derive(Debug, Clone)]
pub struct TwoStepTransform {
    /// Rows are the eigenvectors of H₀ (as bras), in MS-layout order.
    pub s: CMatrix,
    /// Maps the diagonal frame to the MS frame.
    pub p: CMatrix,
    /// Degenerate eigenvalues χ_i.
    pub xi: Vec<f64>,
    /// U of the decomposition used, so `p * s == u`.
    pub u: CMatrix,
}

impl TwoStepTransform {
    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    /// Eigenvector i of H₀ as a ket.
    pub fn eigenvector(&self, i: usize) -> CVector {
        self.s.row(i).adjoint()
    }
}

/// Build S and P for a decomposition of `sys`.
///
/// Each bright pair (l, u) with coupling σ is the block ½[[-Δ, σ], [σ, Δ]],
/// diagonalized in closed form by a rotation through θ = ½·atan2(σ, Δ):
/// P[l,l] = P[u,u] = cos θ, P[l,u] = sin θ, P[u,l] = -sin θ.
pub fn two_step(sys: &BipartiteSystem, dec: &MsDecomposition) -> TwoStepTransform {
    let n = dec.dim();
    let delta = sys.detuning();
    let g = dec.n_lower();
    let mut xi = vec![-0.5 * delta; n];
    for x in xi.iter_mut().skip(g) {
        *x = 0.5 * delta;
    }
    let mut p = CMatrix::identity(n, n);
    for (k, &sigma) in dec.sigma.iter().enumerate() {
        let (l, u) = dec.pair(k);
        let theta = 0.5 * sigma.atan2(delta);
        let (sn, cs) = theta.sin_cos();
        p[(l, l)] = real(cs);
        p[(u, u)] = real(cs);
        p[(l, u)] = real(sn);
        p[(u, l)] = real(-sn);
        let half = 0.5 * delta.hypot(sigma);
        xi[l] = -half;
        xi[u] = half;
    }
    let s = p.adjoint() * &dec.transform;
    TwoStepTransform {
        s,
        p,
        xi,
        u: dec.transform.clone(),
    }
}

/// Exact eigenpairs of H₀ + ½D, matched to the degenerate eigenvectors.
#[derive(Debug, Clone)]
pub struct ExactSpectrum {
    /// ε_i, in the order of Ξ.
    pub values: Vec<f64>,
    /// Rows are eigenvectors (bras), so R H R† = diag(values).
    pub r: CMatrix,
    /// |⟨s_i|r_i⟩| for each matched pair.
    pub overlaps: Vec<f64>,
}

const MATCH_THRESHOLD: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Diagonalize the full Hamiltonian (couplings at envelope factor 1) and pair
/// each exact eigenvector with the degenerate eigenvector it overlaps most.
pub fn exact_spectrum(sys: &BipartiteSystem, tst: &TwoStepTransform) -> Result<ExactSpectrum> {
    let h = sys.full_hamiltonian(1.0);
    let n = h.nrows();
    let eig = linalg::eig_hermitian(&h)?;
    let refs: Vec<CVector> = (0..n).map(|i| tst.eigenvector(i)).collect();

    // Inside an exactly degenerate cluster any basis is valid; pick the one
    // closest to the reference vectors so the matching below is meaningful.
    let radius = eig.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut vecs: Vec<CVector> = (0..n).map(|j| eig.vector(j)).collect();
    for range in linalg::clusters(&eig.values, 1e-9 * radius.max(f64::MIN_POSITIVE)) {
        if range.len() < 2 {
            continue;
        }
        let proj = linalg::projector(n, &vecs[range.clone()]);
        let mut weights: Vec<(usize, f64)> = refs
            .iter()
            .enumerate()
            .map(|(i, r)| (i, (&proj * r).norm_squared()))
            .collect();
        weights.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut chosen: Vec<usize> = weights[..range.len()].iter().map(|w| w.0).collect();
        chosen.sort_unstable();
        let mut basis: Vec<CVector> = Vec::new();
        for i in chosen {
            let mut v = &proj * &refs[i];
            for b in &basis {
                let o = b.dotc(&v);
                v -= b * o;
            }
            let norm = v.norm();
            if norm < 1e-12 {
                basis.clear();
                break;
            }
            basis.push(v / real(norm));
        }
        if basis.len() == range.len() {
            for (slot, v) in range.zip(basis) {
                vecs[slot] = v;
            }
        }
    }

    let mut overlap = vec![vec![0.0; n]; n];
    for (i, r) in refs.iter().enumerate() {
        for (j, v) in vecs.iter().enumerate() {
            overlap[i][j] = r.dotc(v).norm();
        }
    }
    let mut candidates: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    candidates.sort_by(|a, b| {
        overlap[b.0][b.1]
            .total_cmp(&overlap[a.0][a.1])
            .then(a.cmp(b))
    });
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut taken = vec![false; n];
    for (i, j) in candidates {
        if assigned[i].is_none() && !taken[j] {
            assigned[i] = Some(j);
            taken[j] = true;
        }
    }

    let mut values = vec![0.0; n];
    let mut r = CMatrix::zeros(n, n);
    let mut overlaps = vec![0.0; n];
    for i in 0..n {
        let j = assigned[i].expect("greedy matching covers every index");
        let o = overlap[i][j];
        if o < MATCH_THRESHOLD {
            let best = overlap[i].iter().copied().fold(0.0, f64::max);
            return Err(Error::AmbiguousMatching {
                index: i,
                best_overlap: best,
            });
        }
        let mut v = vecs[j].clone();
        // align the phase with the reference for readability of R
        let ph = refs[i].dotc(&v);
        v *= ph.conj() / ph.norm();
        values[i] = (v.adjoint() * &h * &v)[(0, 0)].re;
        r.set_row(i, &v.adjoint());
        overlaps[i] = o;
    }
    Ok(ExactSpectrum { values, r, overlaps })
}

#[derive(Debug, Clone, PartialEq)]
pub enum KappaWarning {
    /// The per-parameter projections do not commute inside a degenerate
    /// subspace; κ for this parameter only holds along the requested composite
    /// shift direction.
    NonCommuting { states: Vec<usize>, parameter: String },
    /// The eigenbasis of `tst` does not diagonalize the composite shift in a
    /// degenerate subspace; κ was evaluated in a rotated basis.
    BasisNotAdapted { states: Vec<usize> },
}

impl std::fmt::Display for KappaWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KappaWarning::NonCommuting { states, parameter } => write!(
                f,
                "shift '{parameter}' does not commute with the composite shift inside degenerate states {states:?}; \
                 its kappa column is only meaningful along the composite direction"
            ),
            KappaWarning::BasisNotAdapted { states } => write!(
                f,
                "eigenbasis not adapted to the shifts inside degenerate states {states:?}; kappa uses a rotated basis"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Kappa {
    /// n × K: κ_ik = ∂ε_i/∂δ_k at zero shift.
    pub values: nalgebra::DMatrix<f64>,
    pub warnings: Vec<KappaWarning>,
}

impl Kappa {
    /// Σ_k δ_k κ_ik.
    pub fn first_order(&self, shifts: &[f64]) -> Vec<f64> {
        (0..self.values.nrows())
            .map(|i| shifts.iter().enumerate().map(|(k, d)| d * self.values[(i, k)]).sum())
            .collect()
    }
}

/// Relative tolerance for treating two degenerate eigenvalues as equal.
const CLUSTER_TOL: f64 = 1e-9;

/// First-order response of each eigenvalue of H₀ to each shift parameter.
///
/// Non-degenerate eigenvalues use ⟨s_i|∂H/∂δ_k|s_i⟩. Inside a degenerate
/// eigenspace the basis is the one that diagonalizes the projection of the
/// composite shift Σ_k δ_k ∂H/∂δ_k (or Σ_k ∂H/∂δ_k when all δ vanish).
pub fn kappa_matrix(sys: &BipartiteSystem, tst: &TwoStepTransform) -> Kappa {
    let n = tst.dim();
    let nk = sys.shifts().len();
    let mut values = nalgebra::DMatrix::<f64>::zeros(n, nk);
    let mut warnings = Vec::new();
    if nk == 0 {
        return Kappa { values, warnings };
    }
    let generators: Vec<CMatrix> = (0..nk)
        .map(|k| &tst.s * sys.generator(k) * tst.s.adjoint())
        .collect();
    let direction = ms_core::shift_direction(sys);
    let composite = &tst.s * linalg::diag_real(&direction.iter().map(|d| 0.5 * d).collect::<Vec<_>>()) * tst.s.adjoint();

    for group in degenerate_groups(&tst.xi) {
        if group.len() == 1 {
            let i = group[0];
            for (k, m) in generators.iter().enumerate() {
                values[(i, k)] = m[(i, i)].re;
            }
            continue;
        }
        let sub = |m: &CMatrix| CMatrix::from_fn(group.len(), group.len(), |a, b| m[(group[a], group[b])]);
        let proj = sub(&composite);
        let scale = linalg::max_abs(&proj).max(f64::MIN_POSITIVE);
        let off_diag = off_diagonal(&proj);
        // columns of `basis` are the adapted vectors in the coordinates of `group`
        let basis = if off_diag <= 1e-8 * scale {
            CMatrix::identity(group.len(), group.len())
        } else {
            warnings.push(KappaWarning::BasisNotAdapted { states: group.clone() });
            linalg::eig_hermitian(&proj).expect("projection is hermitian").vectors
        };
        for (k, m) in generators.iter().enumerate() {
            let local = basis.adjoint() * sub(m) * &basis;
            let gscale = linalg::max_abs(&local);
            if off_diagonal(&local) > 1e-8 * gscale.max(scale) {
                warnings.push(KappaWarning::NonCommuting {
                    states: group.clone(),
                    parameter: sys.shifts()[k].name.clone(),
                });
            }
            for (a, &i) in group.iter().enumerate() {
                values[(i, k)] = local[(a, a)].re;
            }
        }
    }
    Kappa { values, warnings }
}

fn off_diagonal(m: &CMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                worst = worst.max(m[(i, j)].norm());
            }
        }
    }
    worst
}

/// Index groups of (numerically) equal eigenvalues; Ξ need not be sorted.
pub fn degenerate_groups(xi: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..xi.len()).collect();
    order.sort_by(|&a, &b| xi[a].total_cmp(&xi[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| xi[i]).collect();
    let radius = xi.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mut groups: Vec<Vec<usize>> = linalg::clusters(&sorted, CLUSTER_TOL * radius)
        .into_iter()
        .map(|r| {
            let mut g: Vec<usize> = order[r].to_vec();
            g.sort_unstable();
            g
        })
        .collect();
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Diagonal element of Q.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QFactor {
    /// Q_i = 1 + (Σ_k δ_k κ_ik) / χ_i.
    Scale(f64),
    /// χ_i is zero; Q_i is the formal limit whose product with χ_i is Σ_k δ_k κ_ik.
    ZeroLimit,
}

impl QFactor {
    pub fn is_identity(&self) -> bool {
        matches!(self, QFactor::Scale(q) if *q == 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct QMatrix {
    pub q: Vec<QFactor>,
    /// Approximate non-degenerate eigenvalues Q_i χ_i.
    pub qxi: Vec<f64>,
}

/// Eigenvalues at or below this fraction of max|χ| take the zero-limit branch.
pub const ZERO_EIGENVALUE_CUTOFF: f64 = 1e-9;

pub fn build_q(xi: &[f64], kappa: &Kappa, shifts: &[f64]) -> Result<QMatrix> {
    if kappa.values.nrows() != xi.len() || kappa.values.ncols() != shifts.len() {
        return Err(Error::DimensionMismatch {
            context: "build_q",
            expected: format!("kappa {}x{}", xi.len(), shifts.len()),
            found: format!("kappa {}x{}", kappa.values.nrows(), kappa.values.ncols()),
        });
    }
    let cutoff = ZERO_EIGENVALUE_CUTOFF * xi.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let linear = kappa.first_order(shifts);
    let mut q = Vec::with_capacity(xi.len());
    let mut qxi = Vec::with_capacity(xi.len());
    for (&chi, &lin) in xi.iter().zip(&linear) {
        if chi.abs() <= cutoff {
            q.push(QFactor::ZeroLimit);
            qxi.push(lin);
        } else {
            q.push(QFactor::Scale(1.0 + lin / chi));
            qxi.push(chi + lin);
        }
    }
    Ok(QMatrix { q, qxi })
}

#[derive(Debug, Clone)]
pub struct EffectiveModel {
    pub q: Vec<QFactor>,
    pub qxi: Vec<f64>,
    /// S† (QΞ) S.
    pub h_eff: CMatrix,
    /// P (QΞ) P†, the non-degenerate MS Hamiltonian.
    pub h_ms: CMatrix,
}

pub fn effective_hamiltonian(tst: &TwoStepTransform, qm: &QMatrix) -> Result<EffectiveModel> {
    if qm.qxi.len() != tst.dim() {
        return Err(Error::DimensionMismatch {
            context: "effective_hamiltonian",
            expected: tst.dim().to_string(),
            found: qm.qxi.len().to_string(),
        });
    }
    let d = linalg::diag_real(&qm.qxi);
    let h_eff = hermitize(tst.s.adjoint() * &d * &tst.s);
    let h_ms = hermitize(&tst.p * &d * tst.p.adjoint());
    Ok(EffectiveModel {
        q: qm.q.clone(),
        qxi: qm.qxi.clone(),
        h_eff,
        h_ms,
    })
}

fn hermitize(m: CMatrix) -> CMatrix {
    (&m + m.adjoint()) * real(0.5)
}

/// Every stage of the non-degenerate reduction for one system.
#[derive(Debug, Clone)]
pub struct Analysis {
    /// Degenerate MS decomposition with degenerate subspaces adapted to the shifts.
    pub decomposition: MsDecomposition,
    pub transform: TwoStepTransform,
    pub kappa: Kappa,
    pub effective: EffectiveModel,
}

impl Analysis {
    /// Non-degenerate MS Hamiltonian reordered into 2×2 blocks plus a diagonal tail.
    pub fn paired_ms_hamiltonian(&self) -> CMatrix {
        self.decomposition.pairing.apply(&self.effective.h_ms)
    }
}

pub fn analyze(sys: &BipartiteSystem) -> Result<Analysis> {
    let dec = ms_core::adapt_to_shifts(sys, &ms_core::ms_decompose(sys));
    let transform = two_step(sys, &dec);
    let kappa = kappa_matrix(sys, &transform);
    let qm = build_q(&transform.xi, &kappa, &sys.shift_values())?;
    let effective = effective_hamiltonian(&transform, &qm)?;
    Ok(Analysis {
        decomposition: dec,
        transform,
        kappa,
        effective,
    })
}

/// H_eff for the couplings scaled by `factor` (one envelope sample).
pub fn effective_hamiltonian_at(sys: &BipartiteSystem, factor: f64) -> Result<CMatrix> {
    Ok(analyze(&sys.snapshot(factor))?.effective.h_eff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_real, max_abs_diff};

    fn lambda(os: f64, op: f64, delta: f64) -> BipartiteSystem {
        BipartiteSystem::new(from_real(2, 1, &[os, op]), 0.0)
            .unwrap()
            .with_shift("delta", delta, vec![0.0, 2.0, 0.0])
            .unwrap()
    }

    #[test]
    fn lambda_two_step_matches_closed_form() {
        let (os, op): (f64, f64) = (1.25, 1.37);
        let rms = (os * os + op * op).sqrt();
        let sys = lambda(os, op, 0.0);
        let dec = ms_core::ms_decompose(&sys);
        let tst = two_step(&sys, &dec);
        assert!((tst.xi[0]).abs() < 1e-15);
        assert!((tst.xi[1] + rms / 2.0).abs() < 1e-14);
        assert!((tst.xi[2] - rms / 2.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // same as the printed P up to the sign of the second column
        let expected = from_real(3, 3, &[1., 0., 0., 0., s, s, 0., -s, s]);
        assert!(max_abs_diff(&tst.p, &expected) < 1e-15);
        assert!(max_abs_diff(&(&tst.p * &tst.s), &dec.transform) < 1e-14);
    }

    #[test]
    fn zero_shift_keeps_q_at_identity() {
        let sys = lambda(1.25, 1.37, 0.0);
        let a = analyze(&sys).unwrap();
        for q in &a.effective.q {
            assert!(matches!(q, QFactor::ZeroLimit) || q.is_identity());
        }
        assert!(max_abs_diff(&a.effective.h_eff, &sys.degenerate_hamiltonian(1.0)) < 1e-12);
    }

    #[test]
    fn lambda_kappa_values() {
        let (os, op): (f64, f64) = (0.9, 1.6);
        let rms2 = os * os + op * op;
        let a = analyze(&lambda(os, op, 0.01)).unwrap();
        let k = &a.kappa.values;
        assert!((k[(0, 0)] - os * os / rms2).abs() < 1e-14);
        assert!((k[(1, 0)] - op * op / (2.0 * rms2)).abs() < 1e-14);
        assert!((k[(2, 0)] - op * op / (2.0 * rms2)).abs() < 1e-14);
        assert!(a.kappa.warnings.is_empty());
    }

    #[test]
    fn no_shift_parameters_give_empty_kappa() {
        let sys = BipartiteSystem::new(from_real(2, 1, &[1.0, 1.0]), 0.0).unwrap();
        let a = analyze(&sys).unwrap();
        assert_eq!(a.kappa.values.ncols(), 0);
    }

    #[test]
    fn zero_eigenvalue_branch() {
        let kappa = Kappa {
            values: nalgebra::DMatrix::from_row_slice(2, 1, &[0.5, 0.25]),
            warnings: vec![],
        };
        let q = build_q(&[0.0, 2.0], &kappa, &[0.1]).unwrap();
        assert_eq!(q.q[0], QFactor::ZeroLimit);
        assert!((q.qxi[0] - 0.05).abs() < 1e-16);
        assert_eq!(q.q[1], QFactor::Scale(1.0 + 0.025 / 2.0));
        assert!((q.qxi[1] - 2.025).abs() < 1e-15);
        assert!(build_q(&[0.0], &kappa, &[0.1]).is_err());
    }

    #[test]
    fn large_shift_is_reported_as_ambiguous() {
        // δ comparable to Ω: the bright states reorder
        let sys = lambda(0.03, 0.05, 40.0);
        let dec = ms_core::adapt_to_shifts(&sys, &ms_core::ms_decompose(&sys));
        let tst = two_step(&sys, &dec);
        match exact_spectrum(&sys, &tst) {
            Err(Error::AmbiguousMatching { .. }) => {}
            other => panic!("expected ambiguity, got {other:?}"),
        }
    }

    #[test]
    fn detuned_pair_rotation() {
        let sys = BipartiteSystem::new(from_real(1, 1, &[1.2]), 0.7).unwrap();
        let dec = ms_core::ms_decompose(&sys);
        let tst = two_step(&sys, &dec);
        let h_ms = ms_core::ms_hamiltonian(&sys, &dec, 0.0).unwrap();
        let back = tst.p.adjoint() * h_ms * &tst.p;
        assert!(max_abs_diff(&back, &linalg::diag_real(&tst.xi)) < 1e-14);
        let half = 0.5 * (0.7_f64.powi(2) + 1.2_f64.powi(2)).sqrt();
        assert!((tst.xi[0] + half).abs() < 1e-15 && (tst.xi[1] - half).abs() < 1e-15);
    }
}
