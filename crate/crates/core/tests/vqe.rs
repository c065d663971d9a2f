use proptest::prelude::*;

use qevmc::analysis::tvd;
use qevmc::models::{HamiltonianSpec, ModelKind, SectorBasis};
use qevmc::vqe::{optimize, sample_state, HvaSimulator, OptimizeOptions, VqeAnsatz};
use qevmc::wavefunction::{slater_distribution, SlaterDeterminant};

fn opts(restarts: usize, seed: u64) -> OptimizeOptions {
    OptimizeOptions {
        restarts,
        seed,
        ..OptimizeOptions::default()
    }
}

#[test]
fn all_plus_two_spin_frequencies() {
    let spec = HamiltonianSpec::tfi(2, 1.0, 1.0).unwrap();
    let sim = HvaSimulator::new(&spec).unwrap();
    let state = sim.prepare(&[]).unwrap();
    let store = sample_state(&state, 100_000, 11, &spec, Some(0)).unwrap();
    let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
    for f in store.empirical_distribution(&basis).unwrap() {
        assert!((f - 0.25).abs() <= 0.01, "{f}");
    }
}

#[test]
fn hubbard_vqe_samples_match_exact_distribution() {
    let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
    let r = optimize(&spec, 2, &opts(3, 5)).unwrap();
    let sim = HvaSimulator::new(&spec).unwrap();
    let state = sim.prepare(&r.ansatz.theta).unwrap();
    let store = sample_state(&state, 100_000, 3, &spec, Some(2)).unwrap();
    let emp = store.empirical_distribution(sim.basis()).unwrap();
    assert!(tvd(&emp, &state.probabilities()) <= 0.02);
}

#[test]
fn zero_layer_hubbard_is_the_slater_state() {
    let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
    let sim = HvaSimulator::new(&spec).unwrap();
    let p = sim.prepare(&[]).unwrap().probabilities();
    let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
    let q = slater_distribution(&SlaterDeterminant::half_filled(&spec).unwrap(), &basis).unwrap();
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn sampling_is_byte_reproducible() {
    let spec = HamiltonianSpec::tfi(6, 1.0, 1.0).unwrap();
    let sim = HvaSimulator::new(&spec).unwrap();
    let state = sim.prepare(&[0.3, -0.2, 0.4]).unwrap();
    let a = sample_state(&state, 5000, 99, &spec, Some(1))
        .unwrap()
        .to_text();
    let b = sample_state(&state, 5000, 99, &spec, Some(1))
        .unwrap()
        .to_text();
    let c = sample_state(&state, 5000, 100, &spec, Some(1))
        .unwrap()
        .to_text();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn deeper_circuit_is_lower_in_energy() {
    let spec = HamiltonianSpec::tfi(8, 1.0, 1.0).unwrap();
    let one = optimize(&spec, 1, &opts(4, 1)).unwrap();
    let four = optimize(&spec, 4, &opts(4, 1)).unwrap();
    assert!(
        four.energy < one.energy - 1e-6,
        "{} vs {}",
        four.energy,
        one.energy
    );
}

#[test]
fn ansatz_parameter_count_is_checked() {
    assert!(VqeAnsatz::new(ModelKind::Tfi, 2, vec![0.0; 5]).is_err());
    assert!(VqeAnsatz::new(ModelKind::Hubbard, 2, vec![0.0; 6]).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn optimum_never_exceeds_zero_angles(h in 0.2f64..2.5, n in 3usize..7, layers in 1usize..3, seed in 0u64..1000) {
        let spec = HamiltonianSpec::tfi(n, 1.0, h).unwrap();
        let r = optimize(&spec, layers, &opts(1, seed)).unwrap();
        prop_assert!(r.energy <= r.zero_energy + 1e-12);
    }

    #[test]
    fn zero_layer_tfi_is_uniform(n in 2usize..9) {
        let spec = HamiltonianSpec::tfi(n, 1.0, 0.7).unwrap();
        let p = HvaSimulator::new(&spec).unwrap().prepare(&[]).unwrap().probabilities();
        let u = 1.0 / p.len() as f64;
        prop_assert!(p.iter().all(|q| (q - u).abs() < 1e-14));
    }

    #[test]
    fn prepared_states_are_normalized(theta in proptest::collection::vec(-3.0f64..3.0, 6)) {
        let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
        let sim = HvaSimulator::new(&spec).unwrap();
        let s = sim.prepare(&theta).unwrap();
        prop_assert!((s.norm() - 1.0).abs() < 1e-9);
    }
}
