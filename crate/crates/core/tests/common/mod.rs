//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's linear algebra.
#![allow(dead_code)]

use morris_shore::linalg::{c, CMatrix, CVector};
use morris_shore::ms_core::BipartiteSystem;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_symmetric(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = cs * akp - sn * akq;
                    row[q] = sn * akp + cs * akq;
                }
                let (rp, rq) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = cs * rp[k] - sn * rq[k];
                    a[q][k] = sn * rp[k] + cs * rq[k];
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a complex Hermitian matrix through its real 2n×2n embedding
/// [[Re, -Im], [Im, Re]], whose spectrum is every eigenvalue twice.
pub fn hermitian_eigenvalues(h: &CMatrix) -> Vec<f64> {
    let n = h.nrows();
    let mut a = vec![vec![0.0; 2 * n]; 2 * n];
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            a[i][j] = z.re;
            a[i + n][j + n] = z.re;
            a[i][j + n] = -z.im;
            a[i + n][j] = z.im;
        }
    }
    jacobi_symmetric(a).into_iter().step_by(2).collect()
}

/// exp(-i H t) by scaling and squaring of a Taylor series.
pub fn expm_i(h: &CMatrix, t: f64) -> CMatrix {
    let n = h.nrows();
    let norm: f64 = h.iter().map(|z| z.norm()).sum::<f64>() * t.abs();
    let mut squarings = 0;
    while norm / f64::powi(2.0, squarings) > 0.25 {
        squarings += 1;
    }
    let a = h * c(0.0, -t / f64::powi(2.0, squarings));
    let mut term = CMatrix::identity(n, n);
    let mut sum = CMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &a / c(k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Number of singular values of `v` above `tol`·max, from the eigenvalues of V†V.
pub fn rank(v: &CMatrix, tol: f64) -> usize {
    let gram = v.adjoint() * v;
    let ev = hermitian_eigenvalues(&gram);
    let top = ev.iter().copied().fold(0.0, f64::max);
    ev.iter().filter(|&&x| x > (tol * top.sqrt()).powi(2) && x > 0.0).count()
}

pub fn basis(n: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[i] = c(1.0, 0.0);
    v
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random complex g×e coupling, optionally with reduced rank.
pub fn random_coupling(rng: &mut ChaCha8Rng, g: usize, e: usize) -> CMatrix {
    let full = |rng: &mut ChaCha8Rng, r: usize, cols: usize| {
        CMatrix::from_fn(r, cols, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    };
    if g.min(e) >= 2 && rng.gen_bool(0.3) {
        let r = rng.gen_range(1..g.min(e));
        full(rng, g, r) * full(rng, r, e)
    } else {
        full(rng, g, e)
    }
}

/// Random system with g ≤ max_g, e ≤ max_e, 1 to 3 shift parameters and an
/// optional detuning.
pub fn random_system(rng: &mut ChaCha8Rng, max_g: usize, max_e: usize, detuned: bool) -> BipartiteSystem {
    let g = rng.gen_range(1..=max_g);
    let e = rng.gen_range(1..=max_e);
    let v = random_coupling(rng, g, e);
    let detuning = if detuned { rng.gen_range(-1.0..1.0) } else { 0.0 };
    let mut sys = BipartiteSystem::new(v, detuning).unwrap();
    let k = rng.gen_range(1..=3);
    for idx in 0..k {
        let weights: Vec<f64> = (0..g + e)
            .map(|_| if rng.gen_bool(0.6) { rng.gen_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let value = rng.gen_range(-0.01..0.01);
        sys = sys.with_shift(format!("d{idx}"), value, weights).unwrap();
    }
    sys
}
