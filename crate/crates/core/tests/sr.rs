use std::sync::Arc;

use proptest::prelude::*;

use qevmc::mcmc::mean_sem;
use qevmc::models::HamiltonianSpec;
use qevmc::sr::{compare_sources, sample_batch, train, train_from, SrConfig, SrSource, SrTrace};
use qevmc::vqe::{sample_state, HvaSimulator};
use qevmc::wavefunction::NqsWF;

fn small(iterations: usize, seed: u64) -> SrConfig {
    SrConfig {
        iterations,
        samples: 1000,
        chain_length: 10,
        seed,
        ..SrConfig::default()
    }
}

fn trace(energy: Vec<f64>, reference: f64) -> SrTrace {
    let relative_error = energy
        .iter()
        .map(|e| (e - reference).abs() / reference.abs())
        .collect();
    SrTrace {
        sem: vec![0.0; energy.len()],
        parameter_norm: vec![0.0; energy.len()],
        relative_error,
        energy,
        reference,
        final_energy: None,
        final_relative_error: None,
        aborted: false,
    }
}

#[test]
fn first_batch_at_zero_weights_averages_uniform_local_energy() {
    let spec = HamiltonianSpec::tfi(10, 1.0, 1.3).unwrap();
    let wf = NqsWF::zeros(10, 10);
    let batch = sample_batch(&wf, &spec, &small(1, 5), &SrSource::Uniform, 0).unwrap();
    let e = batch.energy();
    let (_, sem) = mean_sem(batch.e_loc.iter().copied());
    assert!((e + 13.0).abs() <= 4.0 * sem, "{e} ± {sem}");
}

#[test]
fn training_from_vqe_samples_lowers_the_energy() {
    let spec = HamiltonianSpec::tfi(8, 1.0, 1.0).unwrap();
    let sim = HvaSimulator::new(&spec).unwrap();
    let state = sim.prepare(&[0.2, 0.2, 0.3]).unwrap();
    let store = Arc::new(sample_state(&state, 2000, 1, &spec, Some(1)).unwrap());
    let (t, wf) = train(&small(40, 2), &spec, &SrSource::Store(store)).unwrap();
    assert!(!t.aborted);
    assert!(t.final_relative_error.unwrap() < t.relative_error[0]);
    assert!(t.final_relative_error.unwrap() < 0.02);
    assert_eq!(wf.visible(), 8);
}

#[test]
fn identical_seeds_reproduce_training() {
    let spec = HamiltonianSpec::tfi(6, 1.0, 0.8).unwrap();
    let (a, wa) = train(&small(5, 3), &spec, &SrSource::Uniform).unwrap();
    let (b, wb) = train(&small(5, 3), &spec, &SrSource::Uniform).unwrap();
    assert_eq!(a.energy, b.energy);
    assert_eq!(wa.parameters(), wb.parameters());
    let (_, wc) = train_from(wa.clone(), &small(0, 3), &spec, &SrSource::Uniform, None).unwrap();
    assert_eq!(wc.parameters(), wa.parameters());
}

#[test]
fn unattained_thresholds_are_absent() {
    let a = trace(vec![-5.0, -9.0, -9.9], -10.0);
    let b = trace(vec![-9.0, -9.5, -9.99], -10.0);
    let table = compare_sources(&a, &b, &[0.2, 0.05, 0.005, 1e-6]);
    let targets: Vec<f64> = table.iter().map(|p| p.target).collect();
    assert_eq!(targets, vec![0.2, 0.05]);
    assert_eq!(table[0].factor, 2.0);
    assert_eq!(table[1].factor, 3.0 / 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn self_comparison_has_unit_factors(e in proptest::collection::vec(-20.0f64..-1.0, 1..30)) {
        let t = trace(e, -20.0);
        for p in compare_sources(&t, &t, &[1.0, 0.5, 0.1, 0.01]) {
            prop_assert_eq!(p.factor, 1.0);
        }
    }
}
