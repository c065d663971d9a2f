use std::collections::HashMap;

use proptest::prelude::*;

use qevmc::models::{
    BasisState, HamiltonianSpec, LatticeSpec, ModelKind, SectorBasis, SectorConstraint,
};
use qevmc::samples::{
    concatenate, mix_exact, mix_with_uniform, postselect, uniform_store, MixtureBase,
    NoisyMixtureSpec, SampleMetadata, SampleStore, SourceTag,
};

fn tfi_store(n: usize, samples: &[u128]) -> SampleStore {
    let spec = HamiltonianSpec::tfi(n, 1.0, 1.0).unwrap();
    let meta = SampleMetadata::for_spec(&spec, SourceTag::External);
    SampleStore::new(
        meta,
        samples.iter().map(|&b| BasisState::new(b, n)).collect(),
    )
    .unwrap()
}

fn histogram(states: impl Iterator<Item = u128>) -> HashMap<u128, f64> {
    let mut h = HashMap::new();
    let mut n = 0.0;
    for s in states {
        *h.entry(s).or_insert(0.0) += 1.0;
        n += 1.0;
    }
    h.values_mut().for_each(|v| *v /= n);
    h
}

#[test]
fn uniform_strings_postselect_at_combinatorial_rate() {
    let lattice = LatticeSpec::chain(8, ModelKind::Hubbard).unwrap();
    let raw = uniform_store(lattice, SectorConstraint::AllSpins, 200_000, 4).unwrap();
    let (kept, r) = postselect(&raw, SectorConstraint::half_filling(8)).unwrap();
    let expected: f64 = 4900.0 / 65536.0;
    let sigma = (expected * (1.0 - expected) / 200_000.0).sqrt();
    assert!((r - expected).abs() < 5.0 * sigma, "{r}");
    assert_eq!(kept.len(), (r * 200_000.0).round() as usize);
}

#[test]
fn twenty_spin_concatenation_marginals() {
    let source = uniform_store(
        LatticeSpec::chain(20, ModelKind::Tfi).unwrap(),
        SectorConstraint::AllSpins,
        50,
        1,
    )
    .unwrap();
    let joined = concatenate(&source, 2, 200_000, 7).unwrap();
    assert_eq!(joined.width(), 40);
    let src = histogram(source.samples().iter().map(|x| x.bits()));
    let mask = (1u128 << 20) - 1;
    for block in 0..2 {
        let marg = histogram(
            joined
                .samples()
                .iter()
                .map(|x| (x.bits() >> (20 * block)) & mask),
        );
        assert!(marg.keys().all(|k| src.contains_key(k)));
        let tv: f64 = src
            .iter()
            .map(|(k, p)| (p - marg.get(k).unwrap_or(&0.0)).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "{tv}");
    }
}

#[test]
fn file_round_trip_of_many_samples() {
    let lattice = LatticeSpec::chain(8, ModelKind::Hubbard).unwrap();
    let store = uniform_store(lattice, SectorConstraint::half_filling(8), 10_000, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.txt");
    store.save(&path).unwrap();
    let back = SampleStore::load(&path).unwrap();
    assert_eq!(back.samples(), store.samples());
    assert_eq!(back.metadata(), store.metadata());
}

#[test]
fn extreme_noise_levels() {
    let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
    let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
    let point = SampleStore::new(
        SampleMetadata::for_spec(&spec, SourceTag::External),
        vec![basis.state(5); 10],
    )
    .unwrap();
    let none = mix_with_uniform(
        &NoisyMixtureSpec::new(0.0, MixtureBase::Store(point.clone())).unwrap(),
        1000,
        1,
    )
    .unwrap();
    assert!(none.samples().iter().all(|x| *x == basis.state(5)));
    let full = mix_with_uniform(
        &NoisyMixtureSpec::new(1.0, MixtureBase::Store(point)).unwrap(),
        72_000,
        1,
    )
    .unwrap();
    let emp = full.empirical_distribution(&basis).unwrap();
    assert!(emp.iter().all(|p| (p - 1.0 / 36.0).abs() < 0.005));
    assert!(NoisyMixtureSpec::new(1.5, MixtureBase::Exact(vec![1.0])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn concatenation_blocks_come_from_the_source(samples in proptest::collection::vec(0u128..64, 1..12), factor in 2usize..5, seed in any::<u64>()) {
        let store = tfi_store(6, &samples);
        let joined = concatenate(&store, factor, 300, seed).unwrap();
        let src: std::collections::HashSet<u128> = samples.iter().copied().collect();
        for x in joined.samples() {
            for b in 0..factor {
                prop_assert!(src.contains(&((x.bits() >> (6 * b)) & 63)));
            }
        }
    }

    #[test]
    fn hubbard_concatenation_keeps_fill(factor in 2usize..4, seed in any::<u64>()) {
        let lattice = LatticeSpec::chain(4, ModelKind::Hubbard).unwrap();
        let store = uniform_store(lattice, SectorConstraint::half_filling(4), 20, seed).unwrap();
        let joined = concatenate(&store, factor, 100, seed).unwrap();
        let l = 4 * factor;
        for x in joined.samples() {
            prop_assert_eq!(x.up(l).count_ones() as usize, 2 * factor);
            prop_assert_eq!(x.down(l).count_ones() as usize, 2 * factor);
        }
    }

    #[test]
    fn postselection_is_idempotent(seed in any::<u64>()) {
        let lattice = LatticeSpec::chain(4, ModelKind::Hubbard).unwrap();
        let raw = uniform_store(lattice, SectorConstraint::AllSpins, 500, seed).unwrap();
        let c = SectorConstraint::half_filling(4);
        if let Ok((once, _)) = postselect(&raw, c) {
            let (twice, r) = postselect(&once, c).unwrap();
            prop_assert_eq!(r, 1.0);
            prop_assert_eq!(twice.samples(), once.samples());
        }
    }

    #[test]
    fn exact_mixture_is_normalized_and_dominates_noise(p in proptest::collection::vec(0.0f64..1.0, 2..40), eps in 0.0f64..=1.0) {
        let total: f64 = p.iter().sum();
        prop_assume!(total > 0.0);
        let p: Vec<f64> = p.iter().map(|x| x / total).collect();
        let m = mix_exact(&p, eps);
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let floor = eps / p.len() as f64;
        prop_assert!(m.iter().all(|&x| x >= floor - 1e-15));
    }
}
