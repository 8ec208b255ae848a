//! Built-in Λ, tripod, double-Λ and diamond systems, with their closed-form
//! MS Hamiltonians.
//!
//! All four are resonant (Δ = 0 unless set explicitly) with real Rabi
//! frequencies. Shift conventions, exactly as the Hamiltonians are usually
//! written with an overall ½:
//!
//! | model        | lower states | upper states | shift pattern (inside ½) |
//! |--------------|--------------|--------------|--------------------------|
//! | lambda       | 2            | 1            | δ: (0, 2, 0)             |
//! | tripod       | 3            | 1            | δ: (-1, 0, 1, 0)         |
//! | double-lambda| 2            | 2            | δ_g: (0, -1, 0, 0), δ_e: (0, 0, 0, 1) |
//! | diamond      | 2            | 2            | same as double-lambda    |
//!
//! The diamond is the double-Λ matrix under a relabeling: its natural levels
//! (bottom, middle 1, middle 2, top) split into the sets {bottom, top} and
//! {middle 1, middle 2}. [`diamond_relabeling`] gives the map.
//!
//! # Comparing against the closed forms
//!
//! The closed forms fix an ordering and sign choice that the numerical
//! pipeline does not share. [`paper_order`] lists our MS indices in the closed
//! form's order and [`gauge_align`] applies the diagonal phase change that
//! matches the closed form's coupling signs. Neither touches magnitudes or
//! diagonal entries. Per model:
//!
//! * lambda: same order; the dark row of A is `(Ωp, -Ωs)/Ωrms`, the negative
//!   of the usual `(-Ωp, Ωs)/Ωrms`.
//! * tripod: same order for δ ≥ 0 (dark states ascend in their shift), dark
//!   pair swapped for δ < 0. The dark pair is the basis adapted to the shifts.
//! * double-lambda/diamond: the Ω₋ = Ωc - Ωd pair is listed first; our layout
//!   sorts pairs by descending |Ω±|.
//!
//! The tripod closed forms below use the sign of δ that reproduces the exact
//! first-order shifts for the pattern (-δ, 0, +δ); with the opposite sign they
//! describe the pattern (+δ, 0, -δ).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, real, CMatrix, C64};
use crate::ms_core::{BipartiteSystem, MsDecomposition, Permutation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Lambda,
    Tripod,
    #[serde(alias = "double_lambda")]
    DoubleLambda,
    Diamond,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(ModelKind::Lambda),
            "tripod" => Ok(ModelKind::Tripod),
            "double-lambda" | "double_lambda" => Ok(ModelKind::DoubleLambda),
            "diamond" => Ok(ModelKind::Diamond),
            other => Err(Error::InvalidModel(format!(
                "unknown model '{other}' (expected lambda, tripod, double-lambda or diamond)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lambda => "lambda",
            ModelKind::Tripod => "tripod",
            ModelKind::DoubleLambda => "double-lambda",
            ModelKind::Diamond => "diamond",
        })
    }
}

/// Parameters of a built-in model. Frequencies are in units of 1/T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_e: Option<f64>,
    #[serde(default)]
    pub detuning: f64,
}

impl ModelSpec {
    fn empty(kind: ModelKind) -> Self {
        Self {
            kind,
            omega_p: None,
            omega_s: None,
            omega_c: None,
            omega_d: None,
            delta: None,
            delta_g: None,
            delta_e: None,
            detuning: 0.0,
        }
    }

    pub fn lambda(omega_s: f64, omega_p: f64, delta: f64) -> Self {
        Self {
            omega_s: Some(omega_s),
            omega_p: Some(omega_p),
            delta: Some(delta),
            ..Self::empty(ModelKind::Lambda)
        }
    }

    pub fn tripod(omega_p: f64, omega_s: f64, omega_c: f64, delta: f64) -> Self {
        Self {
            omega_p: Some(omega_p),
            omega_s: Some(omega_s),
            omega_c: Some(omega_c),
            delta: Some(delta),
            ..Self::empty(ModelKind::Tripod)
        }
    }

    pub fn double_lambda(omega_d: f64, omega_c: f64, delta_g: f64, delta_e: f64) -> Self {
        Self {
            omega_d: Some(omega_d),
            omega_c: Some(omega_c),
            delta_g: Some(delta_g),
            delta_e: Some(delta_e),
            ..Self::empty(ModelKind::DoubleLambda)
        }
    }

    pub fn diamond(omega_d: f64, omega_c: f64, delta_g: f64, delta_e: f64) -> Self {
        Self {
            kind: ModelKind::Diamond,
            ..Self::double_lambda(omega_d, omega_c, delta_g, delta_e)
        }
    }

    /// Defaults for any missing parameter: unit Rabi frequencies, zero shifts.
    pub fn with_defaults(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Lambda => Self::lambda(1.0, 1.0, 0.0),
            ModelKind::Tripod => Self::tripod(1.0, 1.0, 1.0, 0.0),
            ModelKind::DoubleLambda => Self::double_lambda(1.0, 1.0, 0.0, 0.0),
            ModelKind::Diamond => Self::diamond(1.0, 1.0, 0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        type Params<'a> = &'a [(&'a str, Option<f64>)];
        let (required, forbidden): (Params, Params) = match self.kind {
            ModelKind::Lambda => (
                &[("omega_s", self.omega_s), ("omega_p", self.omega_p), ("delta", self.delta)],
                &[
                    ("omega_c", self.omega_c),
                    ("omega_d", self.omega_d),
                    ("delta_g", self.delta_g),
                    ("delta_e", self.delta_e),
                ],
            ),
            ModelKind::Tripod => (
                &[
                    ("omega_p", self.omega_p),
                    ("omega_s", self.omega_s),
                    ("omega_c", self.omega_c),
                    ("delta", self.delta),
                ],
                &[("omega_d", self.omega_d), ("delta_g", self.delta_g), ("delta_e", self.delta_e)],
            ),
            ModelKind::DoubleLambda | ModelKind::Diamond => (
                &[
                    ("omega_d", self.omega_d),
                    ("omega_c", self.omega_c),
                    ("delta_g", self.delta_g),
                    ("delta_e", self.delta_e),
                ],
                &[("omega_p", self.omega_p), ("omega_s", self.omega_s), ("delta", self.delta)],
            ),
        };
        for (name, value) in required {
            match value {
                None => return Err(Error::InvalidModel(format!("{} needs {name}", self.kind))),
                Some(v) if !v.is_finite() => {
                    return Err(Error::InvalidModel(format!("{name} must be finite, got {v}")))
                }
                _ => {}
            }
        }
        for (name, value) in forbidden {
            if value.is_some() {
                return Err(Error::InvalidModel(format!("{name} is not a parameter of {}", self.kind)));
            }
        }
        if !self.detuning.is_finite() {
            return Err(Error::InvalidModel("detuning must be finite".into()));
        }
        Ok(())
    }

    fn get(v: Option<f64>) -> f64 {
        v.unwrap_or(0.0)
    }

    pub fn omega_p(&self) -> f64 {
        Self::get(self.omega_p)
    }
    pub fn omega_s(&self) -> f64 {
        Self::get(self.omega_s)
    }
    pub fn omega_c(&self) -> f64 {
        Self::get(self.omega_c)
    }
    pub fn omega_d(&self) -> f64 {
        Self::get(self.omega_d)
    }
    pub fn delta(&self) -> f64 {
        Self::get(self.delta)
    }
    pub fn delta_g(&self) -> f64 {
        Self::get(self.delta_g)
    }
    pub fn delta_e(&self) -> f64 {
        Self::get(self.delta_e)
    }

    /// Root-mean-square Rabi frequency of the bright coupling; for the
    /// four-state double-Λ/diamond this is the largest MS coupling |Ω₊| ∨ |Ω₋|.
    pub fn omega_rms(&self) -> f64 {
        match self.kind {
            ModelKind::Lambda => self.omega_p().hypot(self.omega_s()),
            ModelKind::Tripod => {
                (self.omega_p().powi(2) + self.omega_s().powi(2) + self.omega_c().powi(2)).sqrt()
            }
            ModelKind::DoubleLambda | ModelKind::Diamond => {
                self.omega_plus().abs().max(self.omega_minus().abs())
            }
        }
    }

    /// Ω₊ = Ωc + Ωd.
    pub fn omega_plus(&self) -> f64 {
        self.omega_c() + self.omega_d()
    }

    /// Ω₋ = Ωc - Ωd.
    pub fn omega_minus(&self) -> f64 {
        self.omega_c() - self.omega_d()
    }

    /// Ωp² + Ωc².
    pub fn tilde_plus(&self) -> f64 {
        self.omega_p().powi(2) + self.omega_c().powi(2)
    }

    /// Ωp² - Ωc².
    pub fn tilde_minus(&self) -> f64 {
        self.omega_p().powi(2) - self.omega_c().powi(2)
    }

    /// (δe - δg)/4.
    pub fn delta_minus(&self) -> f64 {
        (self.delta_e() - self.delta_g()) / 4.0
    }

    fn tripod_root(&self) -> f64 {
        let s2 = self.omega_s().powi(2);
        (4.0 * s2 * s2 + 4.0 * self.tilde_plus() * s2 + self.tilde_minus().powi(2)).sqrt()
    }

    /// First-order shift of the tripod dark state with the lower shift rate.
    pub fn tilde_delta_1(&self) -> f64 {
        self.delta() * (self.tilde_minus() - self.tripod_root()) / (4.0 * self.omega_rms().powi(2))
    }

    /// First-order shift of the tripod dark state with the higher shift rate.
    pub fn tilde_delta_2(&self) -> f64 {
        self.delta() * (self.tilde_minus() + self.tripod_root()) / (4.0 * self.omega_rms().powi(2))
    }

    /// Same spec with every shift parameter replaced.
    pub fn with_shift_scale(&self, values: &[f64]) -> Self {
        let mut out = self.clone();
        match self.kind {
            ModelKind::Lambda | ModelKind::Tripod => out.delta = Some(values[0]),
            ModelKind::DoubleLambda | ModelKind::Diamond => {
                out.delta_g = Some(values[0]);
                out.delta_e = Some(values[1]);
            }
        }
        out
    }
}

pub fn build(spec: &ModelSpec) -> Result<BipartiteSystem> {
    spec.validate()?;
    let sys = match spec.kind {
        ModelKind::Lambda => {
            BipartiteSystem::new(linalg::from_real(2, 1, &[spec.omega_s(), spec.omega_p()]), spec.detuning)?
                .with_shift("delta", spec.delta(), vec![0.0, 2.0, 0.0])?
        }
        ModelKind::Tripod => BipartiteSystem::new(
            linalg::from_real(3, 1, &[spec.omega_p(), spec.omega_s(), spec.omega_c()]),
            spec.detuning,
        )?
        .with_shift("delta", spec.delta(), vec![-1.0, 0.0, 1.0, 0.0])?,
        ModelKind::DoubleLambda | ModelKind::Diamond => {
            let (d, c) = (spec.omega_d(), spec.omega_c());
            BipartiteSystem::new(linalg::from_real(2, 2, &[d, c, c, d]), spec.detuning)?
                .with_shift("delta_g", spec.delta_g(), vec![0.0, -1.0, 0.0, 0.0])?
                .with_shift("delta_e", spec.delta_e(), vec![0.0, 0.0, 0.0, 1.0])?
        }
    };
    Ok(sys)
}

/// Diamond natural labels (bottom, middle 1, middle 2, top) to bipartite
/// order (bottom, top | middle 1, middle 2).
pub fn diamond_relabeling() -> Permutation {
    Permutation::new(vec![0, 3, 1, 2]).expect("valid permutation")
}

/// Diamond Hamiltonian in its natural level order.
pub fn diamond_natural_hamiltonian(sys: &BipartiteSystem) -> CMatrix {
    let pi = diamond_relabeling().matrix();
    pi.transpose() * sys.full_hamiltonian(1.0) * pi
}

fn require_resonant(spec: &ModelSpec) -> Result<()> {
    spec.validate()?;
    if spec.detuning != 0.0 {
        return Err(Error::InvalidModel(
            "closed-form MS Hamiltonians are only available for resonant excitation (detuning 0)".into(),
        ));
    }
    Ok(())
}

/// Degenerate MS Hamiltonian in closed form. Λ and tripod use the MS layout;
/// double-Λ/diamond use the layout (l₋, l₊, u₋, u₊).
pub fn expected_degenerate_ms(spec: &ModelSpec) -> Result<CMatrix> {
    require_resonant(spec)?;
    let h = match spec.kind {
        ModelKind::Lambda => {
            let w = spec.omega_rms() / 2.0;
            linalg::from_real(3, 3, &[0., 0., 0., 0., 0., w, 0., w, 0.])
        }
        ModelKind::Tripod => {
            let w = spec.omega_rms() / 2.0;
            let mut m = CMatrix::zeros(4, 4);
            m[(2, 3)] = real(w);
            m[(3, 2)] = real(w);
            m
        }
        ModelKind::DoubleLambda | ModelKind::Diamond => {
            let (m, p) = (spec.omega_minus() / 2.0, -spec.omega_plus() / 2.0);
            linalg::from_real(4, 4, &[0., 0., m, 0., 0., 0., 0., p, m, 0., 0., 0., 0., p, 0., 0.])
        }
    };
    Ok(h)
}

/// Non-degenerate MS Hamiltonian in closed form. Λ and tripod use the MS
/// layout; double-Λ/diamond are given after pairing, (l₋, u₋, l₊, u₊).
pub fn expected_ms(spec: &ModelSpec) -> Result<CMatrix> {
    require_resonant(spec)?;
    let h = match spec.kind {
        ModelKind::Lambda => {
            let rms2 = spec.omega_rms().powi(2);
            let dark = spec.delta() * spec.omega_s().powi(2) / rms2;
            let bright = spec.delta() * spec.omega_p().powi(2) / (2.0 * rms2);
            let w = spec.omega_rms() / 2.0;
            linalg::from_real(3, 3, &[dark, 0., 0., 0., bright, w, 0., w, bright])
        }
        ModelKind::Tripod => {
            let rms2 = spec.omega_rms().powi(2);
            let bright = -spec.delta() * spec.tilde_minus() / (4.0 * rms2);
            let w = spec.omega_rms() / 2.0;
            let mut m = linalg::diag_real(&[spec.tilde_delta_1(), spec.tilde_delta_2(), bright, bright]);
            m[(2, 3)] = real(w);
            m[(3, 2)] = real(w);
            m
        }
        ModelKind::DoubleLambda | ModelKind::Diamond => {
            let d = spec.delta_minus() / 2.0;
            let (m, p) = (spec.omega_minus() / 2.0, -spec.omega_plus() / 2.0);
            linalg::from_real(4, 4, &[d, m, 0., 0., m, d, 0., 0., 0., 0., d, p, 0., 0., p, d])
        }
    };
    Ok(h)
}

/// Which closed-form layout to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaperLayout {
    /// Unpaired MS layout, as in [`expected_degenerate_ms`].
    Ms,
    /// Layout of [`expected_ms`].
    Effective,
}

/// Our MS indices listed in the closed form's order.
pub fn paper_order(spec: &ModelSpec, dec: &MsDecomposition, layout: PaperLayout) -> Permutation {
    let n = dec.dim();
    match spec.kind {
        ModelKind::Lambda => Permutation::identity(n),
        ModelKind::Tripod => {
            if layout == PaperLayout::Effective && spec.delta() < 0.0 {
                Permutation::new(vec![1, 0, 2, 3]).expect("valid permutation")
            } else {
                Permutation::identity(n)
            }
        }
        ModelKind::DoubleLambda | ModelKind::Diamond => {
            let g = dec.n_lower();
            // (lower, upper) MS indices for each coupling, including zero ones
            let mut pairs: Vec<((usize, usize), f64)> = (0..dec.rank()).map(|k| (dec.pair(k), dec.sigma[k])).collect();
            for (&l, &u) in dec.dark_lower.iter().zip(&dec.dark_upper) {
                pairs.push(((l, g + u), 0.0));
            }
            let target = spec.omega_minus().abs();
            // Ω₋ pair: closest singular value, the later pair on exact ties
            let minus = (0..pairs.len())
                .min_by(|&a, &b| {
                    (pairs[a].1 - target)
                        .abs()
                        .total_cmp(&(pairs[b].1 - target).abs())
                        .then(b.cmp(&a))
                })
                .expect("two pairs");
            let plus = 1 - minus;
            let ((lm, um), (lp, up)) = (pairs[minus].0, pairs[plus].0);
            let order = match layout {
                PaperLayout::Ms => vec![lm, lp, um, up],
                PaperLayout::Effective => vec![lm, um, lp, up],
            };
            Permutation::new(order).expect("valid permutation")
        }
    }
}

/// G m G† for the diagonal unitary G that gives every off-diagonal entry of
/// `m` the phase of the corresponding entry of `reference`, where the
/// reference coupling graph is a forest (true for all block forms here).
pub fn gauge_align(m: &CMatrix, reference: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let scale = linalg::max_abs(reference).max(linalg::max_abs(m)).max(f64::MIN_POSITIVE);
    let mut phase: Vec<Option<C64>> = vec![None; n];
    for root in 0..n {
        if phase[root].is_some() {
            continue;
        }
        phase[root] = Some(real(1.0));
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            let pi = phase[i].unwrap();
            for j in 0..n {
                if j == i || phase[j].is_some() {
                    continue;
                }
                let (r, x) = (reference[(i, j)], m[(i, j)]);
                if r.norm() <= 1e-14 * scale || x.norm() <= 1e-14 * scale {
                    continue;
                }
                let want = r / r.norm();
                let have = pi * x / x.norm();
                phase[j] = Some((want / have).conj());
                stack.push(j);
            }
        }
    }
    CMatrix::from_fn(n, n, |i, j| phase[i].unwrap() * m[(i, j)] * phase[j].unwrap().conj())
}

/// `m` (in our MS layout) rearranged and gauge-aligned to compare with `reference`.
pub fn normalize_to_paper(
    spec: &ModelSpec,
    dec: &MsDecomposition,
    m: &CMatrix,
    layout: PaperLayout,
    reference: &CMatrix,
) -> CMatrix {
    let reordered = paper_order(spec, dec, layout).apply(m);
    gauge_align(&reordered, reference)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFlag {
    /// A paired block of the MS Hamiltonian has zero coupling.
    UncoupledBlock { block: &'static str, coupling: &'static str },
    /// Tripod dark state whose phase rate depends on Ωs.
    DarkPhaseControl { rate: f64 },
}

impl fmt::Display for ModelFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFlag::UncoupledBlock { block, coupling } => {
                write!(f, "{block} block uncoupled ({coupling}=0)")
            }
            ModelFlag::DarkPhaseControl { rate } => write!(
                f,
                "dark state 2 decoupled, phase rate {rate:.6e} set by Omega_s without changing its superposition"
            ),
        }
    }
}

pub fn special_case_flags(spec: &ModelSpec) -> Vec<ModelFlag> {
    let mut flags = Vec::new();
    match spec.kind {
        ModelKind::Lambda => {}
        ModelKind::Tripod => flags.push(ModelFlag::DarkPhaseControl {
            rate: spec.tilde_delta_2(),
        }),
        ModelKind::DoubleLambda | ModelKind::Diamond => {
            let scale = spec.omega_c().abs().max(spec.omega_d().abs()).max(f64::MIN_POSITIVE);
            if spec.omega_minus().abs() <= 1e-12 * scale {
                flags.push(ModelFlag::UncoupledBlock {
                    block: "upper",
                    coupling: "Omega_-",
                });
            }
            if spec.omega_plus().abs() <= 1e-12 * scale {
                flags.push(ModelFlag::UncoupledBlock {
                    block: "lower",
                    coupling: "Omega_+",
                });
            }
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    #[test]
    fn lambda_entries() {
        let sys = build(&ModelSpec::lambda(1.25, 1.37, 0.02)).unwrap();
        let h = sys.full_hamiltonian(1.0);
        let expected = linalg::from_real(3, 3, &[0., 0., 0.625, 0., 0.02, 0.685, 0.625, 0.685, 0.]);
        assert!(max_abs_diff(&h, &expected) < 1e-15);
    }

    #[test]
    fn tripod_entries() {
        let sys = build(&ModelSpec::tripod(1.0, 2.0, 3.0, 0.1)).unwrap();
        let h = sys.full_hamiltonian(1.0);
        let expected = linalg::from_real(
            4,
            4,
            &[-0.05, 0., 0., 0.5, 0., 0., 0., 1.0, 0., 0., 0.05, 1.5, 0.5, 1.0, 1.5, 0.],
        );
        assert!(max_abs_diff(&h, &expected) < 1e-15);
    }

    #[test]
    fn double_lambda_entries() {
        let sys = build(&ModelSpec::double_lambda(0.8, 1.1, 0.02, 0.04)).unwrap();
        let h = sys.full_hamiltonian(1.0);
        let expected = linalg::from_real(
            4,
            4,
            &[0., 0., 0.4, 0.55, 0., -0.01, 0.55, 0.4, 0.4, 0.55, 0., 0., 0.55, 0.4, 0., 0.02],
        );
        assert!(max_abs_diff(&h, &expected) < 1e-15);
    }

    #[test]
    fn invalid_parameter_sets() {
        let mut spec = ModelSpec::lambda(1.0, 1.0, 0.0);
        spec.omega_c = Some(1.0);
        assert!(matches!(build(&spec), Err(Error::InvalidModel(_))));
        let mut spec = ModelSpec::tripod(1.0, 1.0, 1.0, 0.0);
        spec.omega_c = None;
        assert!(build(&spec).is_err());
        let spec = ModelSpec::lambda(f64::NAN, 1.0, 0.0);
        assert!(build(&spec).is_err());
        assert!("quadrupod".parse::<ModelKind>().is_err());
        assert_eq!("double-lambda".parse::<ModelKind>().unwrap(), ModelKind::DoubleLambda);
    }

    #[test]
    fn zero_shift_closed_forms_reduce_to_degenerate_ones() {
        for spec in [
            ModelSpec::lambda(1.25, 1.37, 0.0),
            ModelSpec::tripod(1.0, 0.7, 1.3, 0.0),
        ] {
            let a = expected_ms(&spec).unwrap();
            let b = expected_degenerate_ms(&spec).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-15);
        }
        let spec = ModelSpec::double_lambda(0.6, 1.2, 0.0, 0.0);
        let paired = expected_ms(&spec).unwrap();
        let pi = Permutation::new(vec![0, 2, 1, 3]).unwrap();
        let unpaired = expected_degenerate_ms(&spec).unwrap();
        assert!(max_abs_diff(&pi.apply(&unpaired), &paired) < 1e-15);
    }

    #[test]
    fn flags() {
        assert!(special_case_flags(&ModelSpec::lambda(1.0, 2.0, 0.1)).is_empty());
        let f = special_case_flags(&ModelSpec::double_lambda(1.0, 1.0, 0.0, 0.1));
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].to_string(), "upper block uncoupled (Omega_-=0)");
        let spec = ModelSpec::tripod(1.0, 0.5, 2.0, 0.01);
        match special_case_flags(&spec).as_slice() {
            [ModelFlag::DarkPhaseControl { rate }] => assert_eq!(*rate, spec.tilde_delta_2()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gauge_alignment_flips_coupling_signs_only() {
        let m = linalg::from_real(2, 2, &[0.1, -0.5, -0.5, 0.2]);
        let r = linalg::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let aligned = gauge_align(&m, &r);
        assert!(max_abs_diff(&aligned, &linalg::from_real(2, 2, &[0.1, 0.5, 0.5, 0.2])) < 1e-15);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::double_lambda(0.8, 1.1, 0.02, 0.04);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"double-lambda\""));
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
