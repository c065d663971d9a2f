use std::sync::Arc;

use proptest::prelude::*;

use qevmc::engine::{evolve, expectation, ground_state, SparseOperator, StateVector};
use qevmc::models::{
    build_hamiltonian, double_occupancy, BasisState, HamiltonianSpec, SectorBasis, SectorConstraint,
};
use qevmc::rng::stream_rng;
use rand::Rng;

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn sector_sizes_are_binomial_products() {
    for (rows, cols) in [(1, 4), (1, 6), (1, 8), (2, 4), (2, 3)] {
        let spec = HamiltonianSpec::hubbard(rows, cols, 4.0).unwrap();
        let l = (rows * cols) as u64;
        let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
        assert_eq!(basis.len() as u64, binomial(l, l / 2).pow(2));
    }
}

#[test]
fn ground_energies_against_dense_diagonalization() {
    for spec in [
        HamiltonianSpec::hubbard(1, 4, 4.0).unwrap(),
        HamiltonianSpec::hubbard(2, 2, 2.5).unwrap(),
        HamiltonianSpec::tfi(6, 1.0, 0.6).unwrap(),
    ] {
        let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
        let h = build_hamiltonian(&spec, &basis).unwrap();
        let dense = h.to_dense();
        let eig = nalgebra::SymmetricEigen::new(dense);
        let oracle = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let (e, _) = ground_state(&h).unwrap();
        assert!((e - oracle).abs() < 1e-9, "{e} vs {oracle}");
    }
}

#[test]
fn double_occupancy_examples() {
    let x = BasisState::from_positions(8, [0, 1, 4, 6]);
    assert_eq!(double_occupancy(&x, 4), 1);
    assert_eq!(double_occupancy(&BasisState::zeros(8), 4), 0);
    assert_eq!(double_occupancy(&BasisState::new(0xff, 8), 4), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn off_diagonal_moves_have_fixed_hamming_distance(u in -2.0f64..8.0, h in 0.1f64..3.0, cols in 2usize..5) {
        let hub = HamiltonianSpec::hubbard(2, cols, u).unwrap();
        let tfi = HamiltonianSpec::tfi(2 * cols, 1.0, h).unwrap();
        for (spec, distance) in [(hub, 2), (tfi, 1)] {
            let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
            let m = build_hamiltonian(&spec, &basis).unwrap();
            for r in 0..basis.len() {
                for (c, v) in m.row(r) {
                    prop_assert!((m.get(c, r) - v).abs() < 1e-14);
                    if c != r {
                        prop_assert_eq!(basis.state(r).hamming(&basis.state(c)), distance);
                    }
                }
            }
        }
    }

    #[test]
    fn evolution_preserves_norm(seed in any::<u64>(), theta in -5.0f64..5.0) {
        let mut rng = stream_rng(seed, 0);
        let n = 16;
        let mut triplets = Vec::new();
        for _ in 0..30 {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let v: f64 = rng.gen_range(-1.0..1.0);
            triplets.push((i, j, v));
            triplets.push((j, i, v));
        }
        let op = SparseOperator::from_triplets(n, triplets);
        let basis = Arc::new(SectorBasis::enumerate(&HamiltonianSpec::tfi(4, 1.0, 1.0).unwrap(), SectorConstraint::AllSpins).unwrap());
        let amps: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut v = StateVector::from_real(basis, &amps).unwrap();
        v.normalize();
        let w = evolve(&op, theta, &v).unwrap();
        prop_assert!((w.norm() - 1.0).abs() < 1e-9);
        let e0 = expectation(&op, &v).unwrap();
        prop_assert!((expectation(&op, &w).unwrap() - e0).abs() < 1e-8);
    }
}
