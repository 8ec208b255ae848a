//! Time propagation of `i dC/dt = H(t) C` for the full, effective and
//! degenerate Hamiltonians.
//!
//! Times are in units of the pulse duration T. Each grid interval is split
//! into equal substeps and advanced with the midpoint exponential
//! `C(t + dt) = exp(-i H(t + dt/2) dt) C(t)`. The substep count starts at
//! one substep per 0.005 T and doubles until the final state moves by less
//! than [`CONVERGENCE_TOL`].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::ms_core::{self, BipartiteSystem};
use crate::nondegenerate;

/// Largest substep before any doubling (2000 steps per 10 T).
pub const BASE_STEP: f64 = 0.005;
/// Final-state change between substep counts m and 2m that counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-8;
pub const MAX_DOUBLINGS: usize = 10;
/// Allowed deviation of the initial state norm from 1.
pub const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeShape {
    Constant,
    Gaussian,
    Sin2,
}

/// Shared time dependence f(t) of every coupling: V(t) = f(t) V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub shape: EnvelopeShape,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "one")]
    pub width: f64,
}

fn one() -> f64 {
    1.0
}

impl EnvelopeSpec {
    pub fn constant(amplitude: f64) -> Self {
        Self {
            shape: EnvelopeShape::Constant,
            amplitude,
            center: 0.0,
            width: 1.0,
        }
    }

    /// amplitude · exp(-((t - center)/width)²)
    pub fn gaussian(amplitude: f64, center: f64, width: f64) -> Result<Self> {
        Self {
            shape: EnvelopeShape::Gaussian,
            amplitude,
            center,
            width,
        }
        .validated()
    }

    /// amplitude · sin²(π (t - center + width/2) / width) on the window of
    /// length `width` centred at `center`, zero outside.
    pub fn sin2(amplitude: f64, center: f64, width: f64) -> Result<Self> {
        Self {
            shape: EnvelopeShape::Sin2,
            amplitude,
            center,
            width,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.amplitude.is_finite() && self.center.is_finite() && self.width.is_finite()) {
            return Err(Error::Config("envelope parameters must be finite".into()));
        }
        if self.shape != EnvelopeShape::Constant && self.width <= 0.0 {
            return Err(Error::Config(format!("envelope width must be positive, got {}", self.width)));
        }
        Ok(self)
    }

    pub fn is_constant(&self) -> bool {
        self.shape == EnvelopeShape::Constant
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.shape {
            EnvelopeShape::Constant => self.amplitude,
            EnvelopeShape::Gaussian => {
                let x = (t - self.center) / self.width;
                self.amplitude * (-x * x).exp()
            }
            EnvelopeShape::Sin2 => {
                let x = (t - self.center) / self.width + 0.5;
                if (0.0..=1.0).contains(&x) {
                    self.amplitude * (PI * x).sin().powi(2)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Strictly increasing output times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Config("time grid is empty".into()));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonMonotoneGrid { index: i });
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotoneGrid { index: i + 1 });
        }
        Ok(Self { times })
    }

    /// `intervals + 1` equally spaced points from `start` to `stop`.
    pub fn uniform(start: f64, stop: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::Config("time grid needs at least one interval".into()));
        }
        let h = (stop - start) / intervals as f64;
        let mut times: Vec<f64> = (0..=intervals).map(|k| start + h * k as f64).collect();
        times[intervals] = stop;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HamiltonianKind {
    Full,
    Effective,
    Degenerate,
}

impl FromStr for HamiltonianKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(HamiltonianKind::Full),
            "effective" => Ok(HamiltonianKind::Effective),
            "degenerate" => Ok(HamiltonianKind::Degenerate),
            other => Err(Error::Config(format!(
                "unknown Hamiltonian '{other}' (expected full, effective or degenerate)"
            ))),
        }
    }
}

impl fmt::Display for HamiltonianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HamiltonianKind::Full => "full",
            HamiltonianKind::Effective => "effective",
            HamiltonianKind::Degenerate => "degenerate",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CVector>,
    /// Substeps per grid interval that met the convergence test.
    pub substeps: usize,
}

impl Trajectory {
    /// |C_i(t)|², one row per time.
    pub fn populations(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.iter().map(|z| z.norm_sqr()).collect()).collect()
    }

    pub fn final_state(&self) -> &CVector {
        self.states.last().expect("non-empty trajectory")
    }
}

fn hamiltonian(sys: &BipartiteSystem, which: HamiltonianKind, t: f64) -> Result<CMatrix> {
    match which {
        HamiltonianKind::Full => Ok(sys.hamiltonian_at(t)),
        HamiltonianKind::Degenerate => Ok(sys.degenerate_hamiltonian_at(t)),
        HamiltonianKind::Effective => nondegenerate::effective_hamiltonian_at(sys, sys.envelope().value(t)),
    }
}

fn run(
    sys: &BipartiteSystem,
    which: HamiltonianKind,
    c0: &CVector,
    times: &[f64],
    substeps: &[usize],
    fixed: Option<&CMatrix>,
) -> Result<Vec<CVector>> {
    // keyed by the step length bits; only used when H does not depend on time
    let mut cache: HashMap<u64, CMatrix> = HashMap::new();
    let mut state = c0.clone();
    let mut states = Vec::with_capacity(times.len());
    states.push(state.clone());
    for (k, w) in times.windows(2).enumerate() {
        let m = substeps[k];
        let dt = (w[1] - w[0]) / m as f64;
        for j in 0..m {
            let step = match fixed {
                Some(h) => {
                    if let Some(u) = cache.get(&dt.to_bits()) {
                        u.clone()
                    } else {
                        let u = linalg::propagator_step(h, dt)?;
                        cache.insert(dt.to_bits(), u.clone());
                        u
                    }
                }
                None => {
                    let t = w[0] + (j as f64 + 0.5) * dt;
                    linalg::propagator_step(&hamiltonian(sys, which, t)?, dt)?
                }
            };
            state = step * state;
        }
        // remove the rounding drift of long runs
        let norm = state.norm();
        state /= linalg::real(norm);
        states.push(state.clone());
    }
    Ok(states)
}

fn check_initial(sys: &BipartiteSystem, c0: &CVector) -> Result<()> {
    if c0.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: sys.dim().to_string(),
            found: c0.len().to_string(),
        });
    }
    let norm = c0.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NonUnitState { norm });
    }
    Ok(())
}

fn fixed_hamiltonian(sys: &BipartiteSystem, which: HamiltonianKind, t0: f64) -> Result<Option<CMatrix>> {
    if sys.envelope().is_constant() {
        hamiltonian(sys, which, t0).map(Some)
    } else {
        Ok(None)
    }
}

/// Propagates with exactly `substeps` midpoint steps per grid interval and no
/// convergence control.
pub fn propagate_fixed(
    sys: &BipartiteSystem,
    which: HamiltonianKind,
    c0: &CVector,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<Trajectory> {
    check_initial(sys, c0)?;
    if substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    let times = grid.times();
    let counts = vec![substeps; times.len().saturating_sub(1)];
    let fixed = fixed_hamiltonian(sys, which, times[0])?;
    Ok(Trajectory {
        times: times.to_vec(),
        states: run(sys, which, c0, times, &counts, fixed.as_ref())?,
        substeps,
    })
}

/// Propagates `c0` over `grid` with the chosen Hamiltonian.
pub fn propagate(sys: &BipartiteSystem, which: HamiltonianKind, c0: &CVector, grid: &TimeGrid) -> Result<Trajectory> {
    check_initial(sys, c0)?;
    let times = grid.times();
    let fixed = fixed_hamiltonian(sys, which, times[0])?;
    let base: Vec<usize> = times
        .windows(2)
        .map(|w| ((w[1] - w[0]) / BASE_STEP).ceil().max(1.0) as usize)
        .collect();
    let mut coarse = run(sys, which, c0, times, &base, fixed.as_ref())?;
    let mut change = f64::INFINITY;
    for doubling in 1..=MAX_DOUBLINGS {
        let counts: Vec<usize> = base.iter().map(|m| m << doubling).collect();
        let fine = run(sys, which, c0, times, &counts, fixed.as_ref())?;
        change = (fine.last().unwrap() - coarse.last().unwrap()).norm();
        if change < CONVERGENCE_TOL {
            return Ok(Trajectory {
                times: times.to_vec(),
                states: fine,
                substeps: counts.iter().copied().max().unwrap_or(0),
            });
        }
        coarse = fine;
    }
    Err(Error::NotConverged {
        change,
        substeps: base.iter().copied().max().unwrap_or(0) << MAX_DOUBLINGS,
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    /// max over t and i of |P_a,i(t) - P_b,i(t)|
    pub max_population_gap: f64,
    /// 1 - |⟨a(T)|b(T)⟩|²
    pub final_infidelity: f64,
    /// |P_a,i(t) - P_b,i(t)|, one row per time.
    pub gap_series: Vec<Vec<f64>>,
}

pub fn compare(a: &Trajectory, b: &Trajectory) -> Result<Comparison> {
    if a.times != b.times {
        return Err(Error::GridMismatch);
    }
    if a.final_state().len() != b.final_state().len() {
        return Err(Error::DimensionMismatch {
            context: "trajectory comparison",
            expected: a.final_state().len().to_string(),
            found: b.final_state().len().to_string(),
        });
    }
    let (pa, pb) = (a.populations(), b.populations());
    let gap_series: Vec<Vec<f64>> = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).collect())
        .collect();
    let max_population_gap = gap_series.iter().flatten().fold(0.0_f64, |m, &x| m.max(x));
    let overlap = a.final_state().dotc(b.final_state()).norm_sqr();
    Ok(Comparison {
        max_population_gap,
        final_infidelity: (1.0 - overlap).max(0.0),
        gap_series,
    })
}

/// Result of [`dark_phase_probe`].
#[derive(Debug, Clone)]
pub struct DarkPhase {
    /// Accumulated phase of ⟨d|ψ(t)⟩ at t_final, divided by t_final. Positive
    /// for a state with positive energy.
    pub rate: f64,
    /// max over t of | |⟨d|ψ(t)⟩| - 1 |
    pub max_amplitude_deviation: f64,
    /// min over t of |⟨d|ψ(t)⟩|²
    pub min_overlap: f64,
    /// The dark state d in the original basis.
    pub dark_state: CVector,
}

/// Output points per unit time used by [`dark_phase_probe`] for phase unwrapping.
const PROBE_POINTS_PER_T: f64 = 20.0;

/// Starts a tripod in its second dark state and follows the phase of the
/// dark amplitude under full propagation.
///
/// The dark pair is the one adapted to the shifts; the second dark state is
/// the one whose energy rises fastest along the shift pattern.
pub fn dark_phase_probe(sys: &BipartiteSystem, t_final: f64) -> Result<DarkPhase> {
    if sys.lower() != 3 || sys.upper() != 1 {
        return Err(Error::NotTripod {
            lower: sys.lower(),
            upper: sys.upper(),
        });
    }
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(Error::Config(format!("t_final must be positive, got {t_final}")));
    }
    let dec = ms_core::adapt_to_shifts(sys, &ms_core::ms_decompose(sys));
    if dec.dark_lower.len() != 2 {
        return Err(Error::Contract {
            invariant: "tripod has two dark states",
            detail: format!("found {}", dec.dark_lower.len()),
        });
    }
    let pattern: Vec<f64> = (0..sys.dim())
        .map(|i| sys.shifts().iter().map(|s| s.weights[i]).sum())
        .collect();
    let dark: Vec<CVector> = ms_core::dark_states(&dec)
        .into_iter()
        .filter(|d| d.set == ms_core::LevelSet::Lower)
        .map(|d| d.vector)
        .collect();
    let rise = |v: &CVector| -> f64 { v.iter().zip(&pattern).map(|(z, w)| z.norm_sqr() * w).sum() };
    let d = if rise(&dark[0]) > rise(&dark[1]) {
        dark[0].clone()
    } else {
        dark[1].clone()
    };

    let intervals = (t_final * PROBE_POINTS_PER_T).ceil().max(1.0) as usize;
    let grid = TimeGrid::uniform(0.0, t_final, intervals)?;
    let traj = propagate(sys, HamiltonianKind::Full, &d, &grid)?;
    let mut phase = 0.0;
    let mut prev = 0.0;
    let mut max_amplitude_deviation = 0.0_f64;
    let mut min_overlap = f64::INFINITY;
    for s in &traj.states {
        let a = d.dotc(s);
        let arg = a.arg();
        let mut step = arg - prev;
        step -= 2.0 * PI * (step / (2.0 * PI)).round();
        phase += step;
        prev = arg;
        max_amplitude_deviation = max_amplitude_deviation.max((a.norm() - 1.0).abs());
        min_overlap = min_overlap.min(a.norm_sqr());
    }
    Ok(DarkPhase {
        rate: -phase / t_final,
        max_amplitude_deviation,
        min_overlap,
        dark_state: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, from_real, real};

    fn lambda(delta: f64) -> BipartiteSystem {
        BipartiteSystem::new(from_real(2, 1, &[1.25, 1.37]), 0.0)
            .unwrap()
            .with_shift("delta", delta, vec![0.0, 2.0, 0.0])
            .unwrap()
    }

    fn basis(n: usize, i: usize) -> CVector {
        let mut v = CVector::zeros(n);
        v[i] = real(1.0);
        v
    }

    #[test]
    fn envelopes() {
        let g = EnvelopeSpec::gaussian(2.0, 1.0, 0.5).unwrap();
        assert_eq!(g.value(1.0), 2.0);
        assert!((g.value(1.5) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        let s = EnvelopeSpec::sin2(1.0, 0.5, 1.0).unwrap();
        assert!((s.value(0.5) - 1.0).abs() < 1e-15);
        assert_eq!(s.value(-0.1), 0.0);
        assert_eq!(s.value(1.1), 0.0);
        assert!(EnvelopeSpec::gaussian(1.0, 0.0, 0.0).is_err());
        assert_eq!(EnvelopeSpec::constant(0.3).value(7.0), 0.3);
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(
            TimeGrid::new(vec![0.0, 1.0, 1.0]),
            Err(Error::NonMonotoneGrid { index: 2 })
        ));
        assert!(TimeGrid::new(vec![]).is_err());
        let g = TimeGrid::uniform(0.0, 10.0, 4).unwrap();
        assert_eq!(g.times(), &[0.0, 2.5, 5.0, 7.5, 10.0]);
    }

    #[test]
    fn zero_hamiltonian_keeps_state() {
        let sys = BipartiteSystem::new(CMatrix::zeros(2, 1), 0.0).unwrap();
        let c0 = CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8), real(0.0)]);
        let traj = propagate(&sys, HamiltonianKind::Full, &c0, &TimeGrid::uniform(0.0, 1.0, 5).unwrap()).unwrap();
        for s in &traj.states {
            assert!((s - &c0).norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_unit_state() {
        let sys = lambda(0.0);
        let c0 = CVector::from_element(3, real(1.0));
        let grid = TimeGrid::uniform(0.0, 1.0, 1).unwrap();
        assert!(matches!(
            propagate(&sys, HamiltonianKind::Full, &c0, &grid),
            Err(Error::NonUnitState { .. })
        ));
    }

    #[test]
    fn resonant_rabi_flop() {
        // ½Ω σx for Ω = π: a full transfer at t = 1
        let sys = BipartiteSystem::new(from_real(1, 1, &[PI]), 0.0).unwrap();
        let traj = propagate(
            &sys,
            HamiltonianKind::Full,
            &basis(2, 0),
            &TimeGrid::uniform(0.0, 1.0, 4).unwrap(),
        )
        .unwrap();
        let p = traj.populations();
        assert!((p[4][1] - 1.0).abs() < 1e-12);
        assert!((p[2][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shaped_pulse_area() {
        // sin² pulse of area π on a resonant pair gives complete transfer
        let width = 1.0;
        let amp = 2.0 * PI / width;
        let sys = BipartiteSystem::new(from_real(1, 1, &[1.0]), 0.0)
            .unwrap()
            .with_envelope(EnvelopeSpec::sin2(amp, 0.5, width).unwrap());
        let traj = propagate(
            &sys,
            HamiltonianKind::Full,
            &basis(2, 0),
            &TimeGrid::uniform(0.0, 1.0, 10).unwrap(),
        )
        .unwrap();
        assert!((traj.populations()[10][1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn effective_equals_full_without_shifts() {
        let sys = lambda(0.0);
        let grid = TimeGrid::uniform(0.0, 10.0, 50).unwrap();
        let a = propagate(&sys, HamiltonianKind::Full, &basis(3, 0), &grid).unwrap();
        let b = propagate(&sys, HamiltonianKind::Effective, &basis(3, 0), &grid).unwrap();
        let cmp = compare(&a, &b).unwrap();
        assert!(cmp.max_population_gap < 1e-9);
        assert!(cmp.final_infidelity < 1e-9);
    }

    #[test]
    fn comparison_ignores_global_phase() {
        let sys = lambda(0.01);
        let grid = TimeGrid::uniform(0.0, 2.0, 4).unwrap();
        let a = propagate(&sys, HamiltonianKind::Full, &basis(3, 1), &grid).unwrap();
        let mut b = a.clone();
        for s in &mut b.states {
            *s *= c(0.0, 1.0);
        }
        let cmp = compare(&a, &b).unwrap();
        assert!(cmp.max_population_gap < 1e-15 && cmp.final_infidelity < 1e-15);
        let other = propagate(&sys, HamiltonianKind::Full, &basis(3, 1), &TimeGrid::uniform(0.0, 2.0, 5).unwrap()).unwrap();
        assert!(matches!(compare(&a, &other), Err(Error::GridMismatch)));
    }

    #[test]
    fn probe_rejects_lambda() {
        assert!(matches!(dark_phase_probe(&lambda(0.01), 1.0), Err(Error::NotTripod { .. })));
    }

    #[test]
    fn probe_without_shifts_has_no_phase() {
        let sys = BipartiteSystem::new(from_real(3, 1, &[1.0, 0.6, 1.4]), 0.0)
            .unwrap()
            .with_shift("delta", 0.0, vec![-1.0, 0.0, 1.0, 0.0])
            .unwrap();
        let probe = dark_phase_probe(&sys, 5.0).unwrap();
        assert!(probe.rate.abs() < 1e-12);
        assert!(probe.max_amplitude_deviation < 1e-12);
    }
}
