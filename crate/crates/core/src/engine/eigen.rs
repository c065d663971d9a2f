use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dot, LinearOperator};
use crate::error::{Error, Result};

/// Dimension up to which eigenproblems are solved densely.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    /// Krylov dimension per restart.
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Target residual `‖Av − θv‖`.
    pub tol: f64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            krylov_dim: 60,
            max_restarts: 400,
            tol: 1e-9,
        }
    }
}

fn start_vector(dim: usize, deflate: &[&[f64]]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a4c);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
    project_out(&mut v, deflate);
    normalize(&mut v);
    v
}

fn project_out(v: &mut [f64], deflate: &[&[f64]]) {
    for d in deflate {
        let c = dot(v, d);
        v.iter_mut().zip(d.iter()).for_each(|(a, b)| *a -= c * b);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
    n
}

fn fix_sign(v: &mut [f64]) {
    let pivot = v.iter().copied().fold(
        0.0f64,
        |best, a| if a.abs() > best.abs() { a } else { best },
    );
    if pivot < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
}

fn residual<A: LinearOperator + ?Sized>(op: &A, v: &[f64], theta: f64, deflate: &[&[f64]]) -> f64 {
    let mut w = vec![0.0; v.len()];
    op.apply(v, &mut w);
    project_out(&mut w, deflate);
    w.iter()
        .zip(v)
        .map(|(a, b)| (a - theta * b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Lowest eigenpair of a symmetric operator restricted to the orthogonal
/// complement of the (orthonormal) vectors in `deflate`. Explicitly restarted
/// Lanczos with full reorthogonalization.
pub fn lanczos_lowest<A: LinearOperator + ?Sized>(
    op: &A,
    deflate: &[&[f64]],
    opts: &LanczosOptions,
) -> Result<(f64, Vec<f64>)> {
    let dim = op.dim();
    let m = opts.krylov_dim.min(dim).max(1);
    let mut x = start_vector(dim, deflate);
    let mut last_res = f64::INFINITY;
    let mut w = vec![0.0; dim];
    for _ in 0..opts.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut alphas = Vec::with_capacity(m);
        let mut betas: Vec<f64> = Vec::with_capacity(m);
        let mut tail_beta = 0.0;
        for j in 0..m {
            op.apply(&basis[j], &mut w);
            project_out(&mut w, deflate);
            let alpha = dot(&w, &basis[j]);
            alphas.push(alpha);
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(&w, v);
                    w.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
                }
            }
            let beta = dot(&w, &w).sqrt();
            tail_beta = beta;
            if beta < 1e-13 * alpha.abs().max(1.0) {
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
        let (imin, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("nonempty tridiagonal");
        let y = eig.eigenvectors.column(imin);
        let mut ritz = vec![0.0; dim];
        for (coef, v) in y.iter().zip(&basis) {
            ritz.iter_mut().zip(v).for_each(|(r, b)| *r += coef * b);
        }
        normalize(&mut ritz);
        let estimate = tail_beta * y[k - 1].abs();
        if estimate <= opts.tol {
            let res = residual(op, &ritz, theta, deflate);
            last_res = res;
            if res <= opts.tol * 10.0 {
                fix_sign(&mut ritz);
                return Ok((theta, ritz));
            }
        }
        x = ritz;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_restarts,
        residual: last_res,
    })
}

fn dense_of<A: LinearOperator + ?Sized>(op: &A) -> DMatrix<f64> {
    let dim = op.dim();
    let mut m = DMatrix::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    let mut col = vec![0.0; dim];
    for c in 0..dim {
        e[c] = 1.0;
        op.apply(&e, &mut col);
        e[c] = 0.0;
        for r in 0..dim {
            m[(r, c)] = col[r];
        }
    }
    m
}

/// Lowest eigenpair `(E, v)` of a symmetric operator, with `‖Hv − Ev‖ ≤ 1e-8`.
/// The eigenvector is normalized with its largest-magnitude entry positive.
pub fn ground_state<A: LinearOperator + ?Sized>(op: &A) -> Result<(f64, Vec<f64>)> {
    let dim = op.dim();
    if dim <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(dense_of(op));
        let (imin, e) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .ok_or(Error::NoConvergence {
                iterations: 0,
                residual: f64::NAN,
            })?;
        let mut v: Vec<f64> = eig.eigenvectors.column(imin).iter().copied().collect();
        normalize(&mut v);
        fix_sign(&mut v);
        let res = residual(op, &v, e, &[]);
        if res > 1e-8 {
            return Err(Error::NoConvergence {
                iterations: 1,
                residual: res,
            });
        }
        return Ok((e, v));
    }
    lanczos_lowest(op, &[], &LanczosOptions::default())
}

/// Lowest eigenvalue only, using three-vector Lanczos without
/// reorthogonalization; memory stays at a few vectors for `2^24`-sized spaces.
pub fn ground_energy<A: LinearOperator + ?Sized>(op: &A) -> Result<f64> {
    let dim = op.dim();
    if dim <= DENSE_LIMIT {
        return ground_state(op).map(|(e, _)| e);
    }
    let max_iter = 600;
    let mut v = start_vector(dim, &[]);
    let mut v_prev = vec![0.0; dim];
    let mut w = vec![0.0; dim];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last = f64::INFINITY;
    let mut stable = 0;
    for it in 0..max_iter {
        op.apply(&v, &mut w);
        let alpha = dot(&w, &v);
        let beta_prev = betas.last().copied().unwrap_or(0.0);
        for i in 0..dim {
            w[i] -= alpha * v[i] + beta_prev * v_prev[i];
        }
        alphas.push(alpha);
        let beta = dot(&w, &w).sqrt();
        if (it + 1) % 5 == 0 || beta < 1e-12 {
            let k = alphas.len();
            let mut t = DMatrix::zeros(k, k);
            for i in 0..k {
                t[(i, i)] = alphas[i];
                if i + 1 < k {
                    t[(i, i + 1)] = betas[i];
                    t[(i + 1, i)] = betas[i];
                }
            }
            let e = SymmetricEigen::new(t).eigenvalues.min();
            if (e - last).abs() <= 1e-13 * e.abs().max(1.0) {
                stable += 1;
                if stable >= 2 {
                    return Ok(e);
                }
            } else {
                stable = 0;
            }
            last = e;
            if beta < 1e-12 {
                return Ok(e);
            }
        }
        betas.push(beta);
        std::mem::swap(&mut v_prev, &mut v);
        for i in 0..dim {
            v[i] = w[i] / beta;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SparseOperator;
    use crate::models::{
        build_hamiltonian, HamiltonianSpec, SectorBasis, SectorConstraint, TfiOperator,
    };

    /// Open-chain TFI ground energy from the free-fermion mapping: minus the sum
    /// of singular values of the bidiagonal coupling matrix.
    fn free_fermion_energy(n: usize, j: f64, h: f64) -> f64 {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = h;
            if i + 1 < n {
                m[(i, i + 1)] = -j;
            }
        }
        -m.singular_values().sum()
    }

    #[test]
    fn small_oracles() {
        let spec = HamiltonianSpec::tfi(2, 1.0, 1.0).unwrap();
        let basis = SectorBasis::enumerate(&spec, SectorConstraint::AllSpins).unwrap();
        let h = build_hamiltonian(&spec, &basis).unwrap();
        let (e, _) = ground_state(&h).unwrap();
        assert!((e + 5f64.sqrt()).abs() < 1e-12);

        let hub = HamiltonianSpec::hubbard(1, 2, 4.0).unwrap();
        let b = SectorBasis::enumerate(&hub, SectorConstraint::FixedFill { n_up: 1, n_down: 0 })
            .unwrap();
        let (e, v) = ground_state(&build_hamiltonian(&hub, &b).unwrap()).unwrap();
        assert!((e + 1.0).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - s).abs() < 1e-12 && (v[1] - s).abs() < 1e-12);

        let (e, v) = ground_state(&SparseOperator::identity(7)).unwrap();
        assert!((e - 1.0).abs() < 1e-14);
        assert!((dot(&v, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_fermion_oracle_small() {
        let spec = HamiltonianSpec::tfi(8, 1.0, 0.6).unwrap();
        let basis = SectorBasis::enumerate(&spec, SectorConstraint::AllSpins).unwrap();
        let (e, _) = ground_state(&build_hamiltonian(&spec, &basis).unwrap()).unwrap();
        assert!((e - free_fermion_energy(8, 1.0, 0.6)).abs() < 1e-10);
    }

    #[test]
    fn lanczos_matches_free_fermions() {
        let spec = HamiltonianSpec::tfi(13, 1.0, 1.0).unwrap();
        let op = TfiOperator::new(&spec).unwrap();
        let (e, v) = ground_state(&op).unwrap();
        let exact = free_fermion_energy(13, 1.0, 1.0);
        assert!((e - exact).abs() < 1e-9, "{e} vs {exact}");
        assert!(residual(&op, &v, e, &[]) < 1e-8);
        let e2 = ground_energy(&op).unwrap();
        assert!((e2 - exact).abs() < 1e-9, "{e2} vs {exact}");
    }

    #[test]
    fn lanczos_with_deflation_finds_next_level() {
        let diag: Vec<f64> = (0..5000)
            .map(|k| match k {
                0 => 0.0,
                1 => 0.5,
                _ => 1.0 + k as f64 / 5000.0,
            })
            .collect();
        let op = SparseOperator::from_diagonal(diag);
        let mut e0 = vec![0.0; 5000];
        e0[0] = 1.0;
        let (theta, _) = lanczos_lowest(&op, &[&e0], &LanczosOptions::default()).unwrap();
        assert!((theta - 0.5).abs() < 1e-9);
    }
}
