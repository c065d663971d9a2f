use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use super::{cdot, LinearOperator, SparseOperator, StateVector, Structure};
use crate::error::{Error, Result};

/// Krylov subspace dimension for unstructured evolution.
pub const KRYLOV_DIM: usize = 30;
/// Accumulated error target for one unstructured evolution.
pub const KRYLOV_TOL: f64 = 1e-9;

/// `e^{−iθ·op} |vec⟩`.
pub fn evolve(op: &SparseOperator, theta: f64, vec: &StateVector) -> Result<StateVector> {
    let mut out = vec.clone();
    evolve_in_place(op, theta, out.amplitudes_mut())?;
    Ok(out)
}

pub fn evolve_in_place(op: &SparseOperator, theta: f64, amps: &mut [Complex64]) -> Result<()> {
    if op.dim() != amps.len() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: amps.len(),
        });
    }
    if theta == 0.0 {
        return Ok(());
    }
    match op.structure() {
        Structure::Diagonal => {
            evolve_diagonal(op, theta, amps);
            Ok(())
        }
        Structure::SiteFlipSum { sites, coefficient } => {
            evolve_flip_sum(sites, coefficient * theta, amps);
            Ok(())
        }
        Structure::General => evolve_krylov(op, theta, amps),
    }
}

fn evolve_diagonal(op: &SparseOperator, theta: f64, amps: &mut [Complex64]) {
    match op.levels() {
        Some(levels) => {
            let phases: Vec<Complex64> = levels
                .values
                .iter()
                .map(|&d| Complex64::from_polar(1.0, -theta * d))
                .collect();
            for (a, &l) in amps.iter_mut().zip(&levels.level) {
                *a *= phases[l as usize];
            }
        }
        None => {
            for (a, d) in amps.iter_mut().zip(op.diagonal()) {
                *a *= Complex64::from_polar(1.0, -theta * d);
            }
        }
    }
}

/// `Π_j (cos φ − i sin φ X_j)` with `φ = θ·coefficient`.
pub(crate) fn evolve_flip_sum(sites: usize, phi: f64, amps: &mut [Complex64]) {
    let (s, c) = phi.sin_cos();
    for j in 0..sites {
        let bit = 1usize << j;
        for block in amps.chunks_exact_mut(bit << 1) {
            let (lo, hi) = block.split_at_mut(bit);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = Complex64::new(c * x.re + s * y.im, c * x.im - s * y.re);
                *b = Complex64::new(c * y.re + s * x.im, c * y.im - s * x.re);
            }
        }
    }
}

/// Lanczos-based Krylov propagation with adaptive sub-stepping.
fn evolve_krylov(op: &SparseOperator, theta: f64, amps: &mut [Complex64]) -> Result<()> {
    let dim = amps.len();
    let m = KRYLOV_DIM.min(dim);
    let total = theta.abs();
    let direction = theta.signum();
    let mut done = 0.0;
    let mut dt = total;
    let mut w = vec![Complex64::new(0.0, 0.0); dim];
    let mut substeps = 0usize;
    while done < total {
        substeps += 1;
        if substeps > 100_000 {
            return Err(Error::Numerical("Krylov evolution did not converge".into()));
        }
        let nrm = cdot(amps, amps).re.sqrt();
        if nrm == 0.0 {
            return Ok(());
        }
        let mut basis: Vec<Vec<Complex64>> = vec![amps.iter().map(|a| a / nrm).collect()];
        let mut alphas = Vec::with_capacity(m);
        let mut betas: Vec<f64> = Vec::with_capacity(m);
        let mut tail_beta = 0.0;
        for j in 0..m {
            op.apply_complex(&basis[j], &mut w);
            let alpha = cdot(&basis[j], &w).re;
            alphas.push(alpha);
            for _ in 0..2 {
                for v in &basis {
                    let c = cdot(v, &w);
                    w.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
                }
            }
            let beta = cdot(&w, &w).re.sqrt();
            tail_beta = beta;
            if beta < 1e-12 {
                tail_beta = 0.0;
                break;
            }
            if j + 1 < m {
                betas.push(beta);
                basis.push(w.iter().map(|a| a / beta).collect());
            }
        }
        let k = alphas.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let remaining = total - done;
        dt = dt.min(remaining);
        // e^{-i dt T} e_1 = Q e^{-i dt Λ} Q^T e_1
        let coeffs = loop {
            let tau = direction * dt;
            let coeffs: Vec<Complex64> = (0..k)
                .map(|r| {
                    (0..k)
                        .map(|l| {
                            let q0 = eig.eigenvectors[(0, l)];
                            let qr = eig.eigenvectors[(r, l)];
                            Complex64::from_polar(qr * q0, -tau * eig.eigenvalues[l])
                        })
                        .sum()
                })
                .collect();
            let err = tail_beta * coeffs[k - 1].norm();
            if err <= KRYLOV_TOL * dt / total || tail_beta == 0.0 {
                break coeffs;
            }
            dt *= 0.5;
            if dt < total * 1e-12 {
                return Err(Error::Numerical("Krylov step underflow".into()));
            }
        };
        amps.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        for (c, v) in coeffs.iter().zip(&basis) {
            let c = c * nrm;
            amps.iter_mut().zip(v).for_each(|(a, b)| *a += c * b);
        }
        done += dt;
        if total - done < total * 1e-14 {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::models::{
        build_hamiltonian, build_term, HamiltonianSpec, HamiltonianTerm, SectorBasis,
        SectorConstraint,
    };
    use proptest::prelude::*;

    fn dense_expm_apply(h: &DMatrix<f64>, theta: f64, v: &[Complex64]) -> Vec<Complex64> {
        let eig = SymmetricEigen::new(h.clone());
        let n = v.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for l in 0..n {
            let q = eig.eigenvectors.column(l);
            let proj: Complex64 = (0..n).map(|i| v[i] * q[i]).sum();
            let phase = Complex64::from_polar(1.0, -theta * eig.eigenvalues[l]);
            for i in 0..n {
                out[i] += phase * proj * q[i];
            }
        }
        out
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_theta_is_identity() {
        let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
        let basis = Arc::new(SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap());
        let h = build_hamiltonian(&spec, &basis).unwrap();
        let v = StateVector::uniform(basis);
        let out = evolve(&h, 0.0, &v).unwrap();
        assert_eq!(out.amplitudes(), v.amplitudes());
    }

    #[test]
    fn diagonal_phase_on_basis_state() {
        let op = SparseOperator::from_diagonal(vec![0.3, -1.2, 2.0]);
        let mut amps = vec![Complex64::new(0.0, 0.0); 3];
        amps[1] = Complex64::new(1.0, 0.0);
        evolve_in_place(&op, 0.7, &mut amps).unwrap();
        let expected = Complex64::from_polar(1.0, 0.7 * 1.2);
        assert!((amps[1] - expected).norm() < 1e-15);
        assert_eq!(amps[0].norm(), 0.0);
    }

    #[test]
    fn single_spin_flip_rotation() {
        // -h X with h = -1 is X itself
        let spec = HamiltonianSpec::tfi(2, 1.0, -1.0).unwrap();
        let basis = Arc::new(SectorBasis::enumerate(&spec, SectorConstraint::AllSpins).unwrap());
        let field = build_term(&spec, &basis, HamiltonianTerm::Field).unwrap();
        let zero = StateVector::basis_state(basis.clone(), &basis.state(0)).unwrap();
        let out = evolve(&field, std::f64::consts::FRAC_PI_2, &zero).unwrap();
        // both spins rotate fully: |00⟩ → -|11⟩
        assert!((out.amplitudes()[3].norm() - 1.0).abs() < 1e-14);
        let dense = dense_expm_apply(
            &field.to_dense(),
            std::f64::consts::FRAC_PI_2,
            zero.amplitudes(),
        );
        assert!(max_diff(out.amplitudes(), &dense) < 1e-12);
    }

    #[test]
    fn structured_paths_match_dense_exponential() {
        let spec = HamiltonianSpec::tfi(4, 0.8, 1.3).unwrap();
        let basis = Arc::new(SectorBasis::enumerate(&spec, SectorConstraint::AllSpins).unwrap());
        let v: Vec<Complex64> = (0..16)
            .map(|k| Complex64::new((k as f64).sin(), (k as f64 * 0.3).cos()))
            .collect();
        let mut sv = StateVector::new(basis.clone(), v).unwrap();
        sv.normalize();
        for term in [
            HamiltonianTerm::Field,
            HamiltonianTerm::Ising(None),
            HamiltonianTerm::Full,
        ] {
            let op = build_term(&spec, &basis, term).unwrap();
            let out = evolve(&op, 0.77, &sv).unwrap();
            let dense = dense_expm_apply(&op.to_dense(), 0.77, sv.amplitudes());
            assert!(max_diff(out.amplitudes(), &dense) < 1e-9, "{term:?}");
        }
    }

    #[test]
    fn krylov_hubbard_hopping_matches_dense() {
        let spec = HamiltonianSpec::hubbard(2, 3, 4.0).unwrap();
        let basis = Arc::new(SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap());
        let op = build_term(&spec, &basis, HamiltonianTerm::Hopping(None)).unwrap();
        let mut sv = StateVector::basis_state(basis.clone(), &basis.state(17)).unwrap();
        sv = evolve(&op, 2.5, &sv).unwrap();
        let start = StateVector::basis_state(basis.clone(), &basis.state(17)).unwrap();
        let dense = dense_expm_apply(&op.to_dense(), 2.5, start.amplitudes());
        assert!(max_diff(sv.amplitudes(), &dense) < 1e-9);
        assert!((sv.norm() - 1.0).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn norm_and_group_property(a in -3.0f64..3.0, b in -3.0f64..3.0, u in 0.0f64..8.0, idx in 0usize..36) {
            let spec = HamiltonianSpec::hubbard(1, 4, u).unwrap();
            let basis = Arc::new(SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap());
            let h = build_hamiltonian(&spec, &basis).unwrap();
            let v = StateVector::basis_state(basis.clone(), &basis.state(idx)).unwrap();
            let ab = evolve(&h, a + b, &v).unwrap();
            let a_b = evolve(&h, a, &evolve(&h, b, &v).unwrap()).unwrap();
            prop_assert!((ab.norm() - 1.0).abs() < 1e-9);
            prop_assert!(max_diff(ab.amplitudes(), a_b.amplitudes()) < 1e-8);
        }
    }
}
