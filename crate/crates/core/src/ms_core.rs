//! Degenerate Morris-Shore machinery.
//!
//! A [`BipartiteSystem`] holds `g` lower and `e` upper states; the lower set is
//! coupled to the upper set through a g×e matrix `V` and nothing couples states
//! inside a set. In units where ħ = 1 the Hamiltonian is
//!
//! ```text
//! H = ½ [ -Δ·1 + D_g      f(t)·V    ]
//!       [ f(t)·V†     Δ·1 + D_e ]
//! ```
//!
//! with `D = diag(D_g, D_e)` the degeneracy-lifting shifts and `f(t)` the
//! envelope shared by every coupling. The MS basis change `U = diag(A, B)`
//! turns `V` into a rectangular-diagonal matrix of singular values, which
//! splits the dynamics into independent two-state blocks plus dark states.
//!
//! Layout of the MS basis: lower states first (dark rows, then coupled rows by
//! descending singular value), then upper states in the same order. The k-th
//! coupled lower row pairs with the k-th coupled upper row.

use crate::dynamics::EnvelopeSpec;
use crate::error::{Error, Result};
use crate::linalg::{self, real, CMatrix, CVector};

/// One scalar shift parameter δ_k and the diagonal pattern it adds to `D`.
///
/// `weights` has one entry per state (lower then upper) and is expressed inside
/// the overall ½ of the Hamiltonian, so ∂H/∂δ_k = ½ diag(weights).
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftParameter {
    pub name: String,
    pub value: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BipartiteSystem {
    lower: usize,
    upper: usize,
    detuning: f64,
    coupling: CMatrix,
    shifts: Vec<ShiftParameter>,
    envelope: EnvelopeSpec,
}

impl BipartiteSystem {
    /// Degenerate system with couplings `coupling` (g×e) and common detuning Δ.
    pub fn new(coupling: CMatrix, detuning: f64) -> Result<Self> {
        let (g, e) = coupling.shape();
        if g == 0 || e == 0 {
            return Err(Error::InvalidSystem(format!(
                "both level sets need at least one state, got {g} lower and {e} upper"
            )));
        }
        if !detuning.is_finite() || coupling.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidSystem("non-finite detuning or coupling".into()));
        }
        Ok(Self {
            lower: g,
            upper: e,
            detuning,
            coupling,
            shifts: Vec::new(),
            envelope: EnvelopeSpec::constant(1.0),
        })
    }

    pub fn with_shift(mut self, name: impl Into<String>, value: f64, weights: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if weights.len() != self.dim() {
            return Err(Error::InvalidSystem(format!(
                "shift '{name}' has {} weights for {} states",
                weights.len(),
                self.dim()
            )));
        }
        if !value.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidSystem(format!("shift '{name}' is not finite")));
        }
        self.shifts.push(ShiftParameter { name, value, weights });
        Ok(self)
    }

    /// One independent shift parameter per state, with the given values.
    pub fn with_state_shifts(mut self, lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != self.lower || upper.len() != self.upper {
            return Err(Error::InvalidSystem(format!(
                "expected {} lower and {} upper shifts, got {} and {}",
                self.lower,
                self.upper,
                lower.len(),
                upper.len()
            )));
        }
        let n = self.dim();
        for (i, &v) in lower.iter().chain(upper).enumerate() {
            let mut w = vec![0.0; n];
            w[i] = 1.0;
            let name = if i < self.lower {
                format!("g{i}")
            } else {
                format!("e{}", i - self.lower)
            };
            self = self.with_shift(name, v, w)?;
        }
        Ok(self)
    }

    pub fn with_envelope(mut self, envelope: EnvelopeSpec) -> Self {
        self.envelope = envelope;
        self
    }

    pub fn lower(&self) -> usize {
        self.lower
    }

    pub fn upper(&self) -> usize {
        self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower + self.upper
    }

    pub fn detuning(&self) -> f64 {
        self.detuning
    }

    pub fn coupling(&self) -> &CMatrix {
        &self.coupling
    }

    pub fn shifts(&self) -> &[ShiftParameter] {
        &self.shifts
    }

    pub fn envelope(&self) -> &EnvelopeSpec {
        &self.envelope
    }

    pub fn shift_values(&self) -> Vec<f64> {
        self.shifts.iter().map(|s| s.value).collect()
    }

    /// Copy with the shift parameter values replaced.
    pub fn with_shift_values(&self, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.shifts.len());
        let mut out = self.clone();
        for (s, &v) in out.shifts.iter_mut().zip(values) {
            s.value = v;
        }
        out
    }

    /// Copy with the coupling scaled by `factor` and a constant unit envelope.
    pub fn snapshot(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.coupling = &self.coupling * real(factor);
        out.envelope = EnvelopeSpec::constant(1.0);
        out
    }

    /// Diagonal of D (inside the ½), lower then upper.
    pub fn shift_diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for s in &self.shifts {
            for (di, w) in d.iter_mut().zip(&s.weights) {
                *di += s.value * w;
            }
        }
        d
    }

    pub fn shifts_lower(&self) -> Vec<f64> {
        self.shift_diagonal()[..self.lower].to_vec()
    }

    pub fn shifts_upper(&self) -> Vec<f64> {
        self.shift_diagonal()[self.lower..].to_vec()
    }

    /// ∂H/∂δ_k.
    pub fn generator(&self, k: usize) -> CMatrix {
        let w: Vec<f64> = self.shifts[k].weights.iter().map(|x| 0.5 * x).collect();
        linalg::diag_real(&w)
    }

    /// ½ D.
    pub fn shift_matrix(&self) -> CMatrix {
        let d: Vec<f64> = self.shift_diagonal().iter().map(|x| 0.5 * x).collect();
        linalg::diag_real(&d)
    }

    /// Degenerate Hamiltonian H₀ with the couplings scaled by `factor`.
    pub fn degenerate_hamiltonian(&self, factor: f64) -> CMatrix {
        let (g, n) = (self.lower, self.dim());
        let mut h = CMatrix::zeros(n, n);
        for i in 0..g {
            h[(i, i)] = real(-0.5 * self.detuning);
        }
        for i in g..n {
            h[(i, i)] = real(0.5 * self.detuning);
        }
        let half = real(0.5 * factor);
        for i in 0..g {
            for j in 0..self.upper {
                let v = self.coupling[(i, j)] * half;
                h[(i, g + j)] = v;
                h[(g + j, i)] = v.conj();
            }
        }
        h
    }

    /// H₀ + ½D with the couplings scaled by `factor`.
    pub fn full_hamiltonian(&self, factor: f64) -> CMatrix {
        self.degenerate_hamiltonian(factor) + self.shift_matrix()
    }

    pub fn hamiltonian_at(&self, t: f64) -> CMatrix {
        self.full_hamiltonian(self.envelope.value(t))
    }

    pub fn degenerate_hamiltonian_at(&self, t: f64) -> CMatrix {
        self.degenerate_hamiltonian(self.envelope.value(t))
    }
}

/// Which level set an MS state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelSet {
    Lower,
    Upper,
}

/// Reordering of basis indices; `order[new] = old`.
///
/// As a matrix, π has π[new, order[new]] = 1 so (π M πᵀ)[a, b] = M[order[a], order[b]].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || seen[i] {
                return Err(Error::Contract {
                    invariant: "permutation is a bijection",
                    detail: format!("{order:?}"),
                });
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self { order: (0..n).collect() }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn matrix(&self) -> CMatrix {
        let n = self.order.len();
        let mut m = CMatrix::zeros(n, n);
        for (new, &old) in self.order.iter().enumerate() {
            m[(new, old)] = real(1.0);
        }
        m
    }

    /// π M πᵀ.
    pub fn apply(&self, m: &CMatrix) -> CMatrix {
        let n = self.order.len();
        CMatrix::from_fn(n, n, |a, b| m[(self.order[a], self.order[b])])
    }
}

#[derive(Debug, Clone)]
pub struct MsDecomposition {
    /// Unitary g×g; rows are the lower MS states as bras in the original basis.
    pub lower: CMatrix,
    /// Unitary e×e; rows are the upper MS states.
    pub upper: CMatrix,
    /// diag(A, B).
    pub transform: CMatrix,
    /// Rectangular-diagonal g×e MS couplings, real and nonnegative.
    pub omega: CMatrix,
    /// Coupled singular values, descending; pair k couples lower row
    /// `lower_dark + k` with upper row `upper_dark + k`.
    pub sigma: Vec<f64>,
    pub dark_lower: Vec<usize>,
    pub dark_upper: Vec<usize>,
    pub pairing: Permutation,
}

impl MsDecomposition {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_lower(&self) -> usize {
        self.lower.nrows()
    }

    pub fn n_upper(&self) -> usize {
        self.upper.nrows()
    }

    pub fn dim(&self) -> usize {
        self.n_lower() + self.n_upper()
    }

    /// Global MS indices (lower, upper) of bright pair k.
    pub fn pair(&self, k: usize) -> (usize, usize) {
        let g = self.n_lower();
        (self.dark_lower.len() + k, g + self.dark_upper.len() + k)
    }

    /// Global MS indices of all dark states: lower ones then upper ones.
    pub fn dark_indices(&self) -> Vec<usize> {
        let g = self.n_lower();
        self.dark_lower
            .iter()
            .copied()
            .chain(self.dark_upper.iter().map(|j| g + j))
            .collect()
    }

    fn assemble(lower: CMatrix, upper: CMatrix, sigma: Vec<f64>) -> Self {
        let (g, e) = (lower.nrows(), upper.nrows());
        let r = sigma.len();
        let mut transform = CMatrix::zeros(g + e, g + e);
        transform.view_mut((0, 0), (g, g)).copy_from(&lower);
        transform.view_mut((g, g), (e, e)).copy_from(&upper);
        let mut omega = CMatrix::zeros(g, e);
        for (k, &s) in sigma.iter().enumerate() {
            omega[(g - r + k, e - r + k)] = real(s);
        }
        let dark_lower: Vec<usize> = (0..g - r).collect();
        let dark_upper: Vec<usize> = (0..e - r).collect();
        let mut dec = Self {
            lower,
            upper,
            transform,
            omega,
            sigma,
            dark_lower,
            dark_upper,
            pairing: Permutation::identity(g + e),
        };
        dec.pairing = pairing_permutation(&dec);
        dec
    }
}

/// MS decomposition of the couplings as stored (envelope factor 1).
pub fn ms_decompose(sys: &BipartiteSystem) -> MsDecomposition {
    let (g, e) = (sys.lower(), sys.upper());
    let s = linalg::svd(sys.coupling());
    let r = s.rank;
    // svd rows: coupled (descending) then null; MS layout wants null first
    let reorder = |m: &CMatrix, n: usize| -> CMatrix {
        let rows: Vec<usize> = (r..n).chain(0..r).collect();
        CMatrix::from_fn(n, n, |i, j| m[(rows[i], j)])
    };
    let lower = reorder(&s.left, g);
    let upper = reorder(&s.right, e);
    MsDecomposition::assemble(lower, upper, s.sigma[..r].to_vec())
}

/// Rotate the bases of the degenerate subspaces so that they diagonalize the
/// projected shift matrix.
///
/// Dark lower (upper) rows are re-chosen as eigenvectors of A_d D_g A_d†
/// (B_d D_e B_d†), ordered by ascending projected shift. Bright pairs with
/// equal singular values are rotated jointly (same rotation for their lower
/// and upper rows, which keeps Ω unchanged). When all shift values are zero,
/// the direction used is the sum of the shift patterns.
pub fn adapt_to_shifts(sys: &BipartiteSystem, dec: &MsDecomposition) -> MsDecomposition {
    let (g, e) = (dec.n_lower(), dec.n_upper());
    let r = dec.rank();
    let direction = shift_direction(sys);
    let dg = linalg::diag_real(&direction[..g]);
    let de = linalg::diag_real(&direction[g..]);

    let mut lower = dec.lower.clone();
    let mut upper = dec.upper.clone();

    rotate_rows(&mut lower, 0..g - r, &dg);
    rotate_rows(&mut upper, 0..e - r, &de);

    // equal-sigma bright clusters
    let asc: Vec<f64> = dec.sigma.iter().rev().copied().collect();
    let smax = dec.sigma.first().copied().unwrap_or(0.0);
    for range in linalg::clusters(&asc, 1e-10 * smax) {
        if range.len() < 2 {
            continue;
        }
        let ks: Vec<usize> = ((r - range.end)..(r - range.start)).collect();
        let lrows: Vec<usize> = ks.iter().map(|k| g - r + k).collect();
        let urows: Vec<usize> = ks.iter().map(|k| e - r + k).collect();
        let a = select_rows(&lower, &lrows);
        let b = select_rows(&upper, &urows);
        let z = &a * &dg * a.adjoint() + &b * &de * b.adjoint();
        let eig = linalg::eig_hermitian(&z).expect("projected shift is hermitian");
        let rot = eig.vectors.adjoint();
        let a_new = &rot * &a;
        for (i, k) in ks.iter().enumerate() {
            let mut row: CVector = a_new.row(i).adjoint();
            linalg::fix_phase(&mut row);
            lower.set_row(g - r + k, &row.adjoint());
            // partner from b = a V / sigma keeps the coupling real-positive
            let mut b_ket: CVector = sys.coupling().adjoint() * &row;
            let norm = b_ket.norm();
            b_ket /= real(norm);
            upper.set_row(e - r + k, &b_ket.adjoint());
        }
    }
    MsDecomposition::assemble(lower, upper, dec.sigma.clone())
}

pub(crate) fn shift_direction(sys: &BipartiteSystem) -> Vec<f64> {
    let d = sys.shift_diagonal();
    if d.iter().any(|&x| x != 0.0) {
        return d;
    }
    let mut dir = vec![0.0; sys.dim()];
    for s in sys.shifts() {
        for (di, w) in dir.iter_mut().zip(&s.weights) {
            *di += w;
        }
    }
    dir
}

fn select_rows(m: &CMatrix, rows: &[usize]) -> CMatrix {
    CMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

fn rotate_rows(m: &mut CMatrix, rows: std::ops::Range<usize>, shift: &CMatrix) {
    if rows.len() < 2 {
        return;
    }
    let idx: Vec<usize> = rows.clone().collect();
    let block = select_rows(m, &idx);
    let projected = &block * shift * block.adjoint();
    let eig = linalg::eig_hermitian(&projected).expect("projected shift is hermitian");
    let rotated = eig.vectors.adjoint() * block;
    for (i, &row) in idx.iter().enumerate() {
        let mut ket: CVector = rotated.row(i).adjoint();
        linalg::fix_phase(&mut ket);
        m.set_row(row, &ket.adjoint());
    }
}

/// U H₀(t) U†, the degenerate Hamiltonian in the MS basis.
pub fn ms_hamiltonian(sys: &BipartiteSystem, dec: &MsDecomposition, t: f64) -> Result<CMatrix> {
    if dec.n_lower() != sys.lower() || dec.n_upper() != sys.upper() {
        return Err(Error::DimensionMismatch {
            context: "ms_hamiltonian",
            expected: format!("{}+{}", sys.lower(), sys.upper()),
            found: format!("{}+{}", dec.n_lower(), dec.n_upper()),
        });
    }
    let h = sys.degenerate_hamiltonian_at(t);
    Ok(&dec.transform * h * dec.transform.adjoint())
}

/// Permutation that lists each bright pair as (lower, upper), then the dark
/// lower states, then the dark upper states.
pub fn pairing_permutation(dec: &MsDecomposition) -> Permutation {
    let mut order = Vec::with_capacity(dec.dim());
    for k in 0..dec.rank() {
        let (l, u) = dec.pair(k);
        order.push(l);
        order.push(u);
    }
    order.extend(dec.dark_indices());
    Permutation { order }
}

#[derive(Debug, Clone)]
pub struct DarkState {
    pub set: LevelSet,
    /// Index within the MS layout of its level set.
    pub ms_index: usize,
    /// Unit ket over all g+e original states.
    pub vector: CVector,
}

pub fn dark_states(dec: &MsDecomposition) -> Vec<DarkState> {
    let g = dec.n_lower();
    let n = dec.dim();
    let mut out = Vec::new();
    for &i in &dec.dark_lower {
        out.push(DarkState {
            set: LevelSet::Lower,
            ms_index: i,
            vector: dec.transform.row(i).adjoint().into_owned(),
        });
    }
    for &j in &dec.dark_upper {
        out.push(DarkState {
            set: LevelSet::Upper,
            ms_index: j,
            vector: dec.transform.row(g + j).adjoint().into_owned(),
        });
    }
    debug_assert!(out.iter().all(|d| d.vector.len() == n));
    out
}

/// Number of singular values above the zero cutoff.
pub fn coupling_rank(v: &CMatrix) -> usize {
    linalg::svd(v).rank
}

/// Largest |U†U - I| entry and the largest entry in the off-diagonal blocks of U.
pub fn transform_defects(dec: &MsDecomposition) -> (f64, f64) {
    let g = dec.n_lower();
    let n = dec.dim();
    let mut leak = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if (i < g) != (j < g) {
                leak = leak.max(dec.transform[(i, j)].norm());
            }
        }
    }
    (linalg::unitarity_defect(&dec.transform), leak)
}
