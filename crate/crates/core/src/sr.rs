//! Stochastic reconfiguration training of the NQS with a configurable
//! initial distribution for the per-iteration Markov chains.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{speedup_curve, SpeedupPoint};
use crate::engine::reference_energy;
use crate::error::{Error, Result};
use crate::mcmc::{mean_sem, run, ChainConfig, ExactSource, InitialSource, Mixer};
use crate::models::{HamiltonianSpec, ModelKind, SectorBasis};
use crate::rng::{component, derive_seed, stream_rng};
use crate::samples::{SampleMetadata, SampleStore};
use crate::wavefunction::{exact_distribution, local_energy, NqsWF};

/// Parameter count up to which `S` is formed densely and factorized.
pub const DENSE_SOLVE_LIMIT: usize = 1000;
/// Parameter count up to which a failed CG solve falls back to Cholesky.
pub const CHOLESKY_FALLBACK_LIMIT: usize = 2000;

/// How each iteration's batch is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SrSampling {
    /// Short Metropolis chains from the initial source.
    Mcmc,
    /// Exact `|ψ|²` weights over the enumerated basis.
    Exact,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrConfig {
    pub iterations: usize,
    pub samples: usize,
    pub chain_length: usize,
    pub learning_rate: f64,
    /// `λ(p) = max(lambda0 · lambda_decay^p, lambda_min)` scales `diag(S)`.
    pub lambda0: f64,
    pub lambda_decay: f64,
    pub lambda_min: f64,
    /// Constant diagonal shift.
    pub lambda_floor: f64,
    pub cg_tol: f64,
    /// Hidden units per visible unit.
    pub alpha: f64,
    /// Standard deviation of the initial weights.
    pub init_std: f64,
    pub sampling: SrSampling,
    /// Set from the experiment's master seed, never read from a file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            samples: 5000,
            chain_length: 15,
            learning_rate: 0.05,
            lambda0: 100.0,
            lambda_decay: 0.9,
            lambda_min: 1e-4,
            lambda_floor: 1e-4,
            cg_tol: 1e-8,
            alpha: 1.0,
            init_std: 0.01,
            sampling: SrSampling::Mcmc,
            seed: 0,
        }
    }
}

impl SrConfig {
    /// Defaults with the chain length used for `n` spins.
    pub fn for_sites(n: usize) -> Self {
        Self {
            chain_length: if n >= 24 { 20 } else { 15 },
            ..Default::default()
        }
    }

    pub fn lambda(&self, iteration: usize) -> f64 {
        (self.lambda0 * self.lambda_decay.powi(iteration as i32)).max(self.lambda_min)
    }

    pub fn hidden_units(&self, n: usize) -> usize {
        (self.alpha * n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-iteration initial distribution.
#[derive(Clone, Debug)]
pub enum SrSource {
    Uniform,
    /// Fresh draws from an explicit distribution each iteration.
    Exact(Arc<ExactSource>),
    /// Draws with replacement from a fixed sample store.
    Store(Arc<SampleStore>),
}

impl SrSource {
    fn initial(&self, spec: &HamiltonianSpec, n: usize, seed: u64) -> Result<InitialSource> {
        Ok(match self {
            SrSource::Uniform => InitialSource::uniform(spec),
            SrSource::Exact(e) => InitialSource::Exact(e.clone()),
            SrSource::Store(store) => {
                if store.is_empty() {
                    return Err(Error::SourceExhausted("empty sample store".into()));
                }
                let mut rng = stream_rng(seed, u64::MAX);
                let picks = (0..n)
                    .map(|_| store.samples()[rng.gen_range(0..store.len())])
                    .collect();
                let meta: SampleMetadata = store.metadata().clone();
                InitialSource::Store(Arc::new(SampleStore::new(meta, picks)?))
            }
        })
    }
}

/// Log-derivatives, local energies and weights of one batch.
#[derive(Clone, Debug)]
pub struct SrBatch {
    /// One row per sample.
    pub o: DMatrix<f64>,
    pub e_loc: Vec<f64>,
    /// Normalized sample weights.
    pub weights: Vec<f64>,
}

impl SrBatch {
    pub fn new(o: DMatrix<f64>, e_loc: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = e_loc.len();
        if o.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: o.nrows(),
            });
        }
        let weights = match weights {
            Some(w) => {
                let total: f64 = w.iter().sum();
                w.into_iter().map(|v| v / total).collect()
            }
            None => vec![1.0 / n as f64; n],
        };
        Ok(Self { o, e_loc, weights })
    }

    pub fn energy(&self) -> f64 {
        self.e_loc
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| e * w)
            .sum()
    }

    /// `√w`-scaled, mean-subtracted log-derivatives and local energies.
    fn centered(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (n, p) = self.o.shape();
        let mut mean = vec![0.0; p];
        for (r, &w) in self.weights.iter().enumerate() {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += w * self.o[(r, c)];
            }
        }
        let e_mean = self.energy();
        let mut oc = self.o.clone();
        let mut ec = DVector::zeros(n);
        for r in 0..n {
            let s = self.weights[r].sqrt();
            for c in 0..p {
                oc[(r, c)] = s * (oc[(r, c)] - mean[c]);
            }
            ec[r] = s * (self.e_loc[r] - e_mean);
        }
        (oc, ec)
    }

    /// Covariance `S` and force `F`.
    pub fn moments(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (oc, ec) = self.centered();
        (oc.tr_mul(&oc), oc.tr_mul(&ec))
    }
}

/// Step direction `δ` solving `(S + λ·diag(S) + λ_floor·I) δ = F`, together
/// with the `λ` finally used.
pub fn sr_direction(
    batch: &SrBatch,
    lambda: f64,
    floor: f64,
    cg_tol: f64,
) -> Result<(DVector<f64>, f64)> {
    let p = batch.o.ncols();
    let (oc, ec) = batch.centered();
    let f = oc.tr_mul(&ec);
    if f.iter().all(|&v| v == 0.0) {
        return Ok((DVector::zeros(p), lambda));
    }
    let mut lambda = lambda;
    let dense = p <= DENSE_SOLVE_LIMIT;
    let mut s: Option<DMatrix<f64>> = dense.then(|| oc.tr_mul(&oc));
    for _ in 0..=3 {
        if !dense {
            let diag: Vec<f64> = (0..p).map(|c| oc.column(c).norm_squared()).collect();
            if let Some(x) = conjugate_gradient(&oc, &diag, lambda, floor, &f, cg_tol, 10 * p) {
                return Ok((x, lambda));
            }
            if s.is_none() && p <= CHOLESKY_FALLBACK_LIMIT {
                s = Some(oc.tr_mul(&oc));
            }
        }
        if let Some(s) = &s {
            let mut a = s.clone();
            for k in 0..p {
                a[(k, k)] += lambda * s[(k, k)] + floor;
            }
            if let Some(ch) = Cholesky::new(a) {
                let x = ch.solve(&f);
                if x.iter().all(|v| v.is_finite()) {
                    return Ok((x, lambda));
                }
            }
        }
        lambda *= 10.0;
    }
    Err(Error::SingularSystem)
}

/// Jacobi-preconditioned CG on `(OᵀO + λ·diag + floor)` without forming `OᵀO`.
fn conjugate_gradient(
    oc: &DMatrix<f64>,
    diag: &[f64],
    lambda: f64,
    floor: f64,
    f: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let p = f.len();
    let d: DVector<f64> =
        DVector::from_iterator(p, diag.iter().map(|s| s * (1.0 + lambda) + floor));
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let t = oc * v;
        let mut y = oc.tr_mul(&t);
        for k in 0..p {
            y[k] += (lambda * diag[k] + floor) * v[k];
        }
        y
    };
    let mut x = DVector::zeros(p);
    let mut r = f.clone();
    let mut z = r.component_div(&d);
    let mut q = z.clone();
    let mut rz = r.dot(&z);
    let target = tol * f.norm();
    for _ in 0..max_iter {
        if r.norm() <= target {
            return Some(x);
        }
        let aq = apply(&q);
        let qaq = q.dot(&aq);
        if !(qaq > 0.0) {
            return None;
        }
        let step = rz / qaq;
        x.axpy(step, &q, 1.0);
        r.axpy(-step, &aq, 1.0);
        z = r.component_div(&d);
        let rz_new = r.dot(&z);
        q = &z + &q * (rz_new / rz);
        rz = rz_new;
    }
    (r.norm() <= target).then_some(x)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SrTrace {
    pub energy: Vec<f64>,
    pub sem: Vec<f64>,
    pub relative_error: Vec<f64>,
    pub parameter_norm: Vec<f64>,
    pub reference: f64,
    /// Mean energy of the last five iterations.
    pub final_energy: Option<f64>,
    pub final_relative_error: Option<f64>,
    /// Stopped early because the energy ran away.
    pub aborted: bool,
}

impl SrTrace {
    pub fn csv(&self) -> String {
        let mut out = String::from("iteration,energy,sem,relative_error,parameter_norm\n");
        for k in 0..self.energy.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                k + 1,
                self.energy[k],
                self.sem[k],
                self.relative_error[k],
                self.parameter_norm[k]
            ));
        }
        out
    }
}

/// Output of one SR iteration.
#[derive(Clone, Copy, Debug)]
pub struct IterationStats {
    pub energy: f64,
    pub sem: f64,
    pub lambda: f64,
}

fn log_derivative_matrix(wf: &NqsWF, states: &[crate::models::BasisState]) -> DMatrix<f64> {
    let p = wf.n_params();
    let rows: Vec<Vec<f64>> = states.par_iter().map(|x| wf.log_derivatives(x)).collect();
    DMatrix::from_fn(states.len(), p, |r, c| rows[r][c])
}

/// Batch for iteration `iteration`.
pub fn sample_batch(
    wf: &NqsWF,
    spec: &HamiltonianSpec,
    config: &SrConfig,
    source: &SrSource,
    iteration: usize,
) -> Result<SrBatch> {
    match config.sampling {
        SrSampling::Mcmc => {
            let seed = derive_seed(derive_seed(config.seed, component::SR), iteration as u64);
            let chains = ChainConfig {
                n_chains: config.samples,
                chain_length: config.chain_length,
                burn_in: config.chain_length,
                thinning: 1,
                seed,
            };
            let init = source.initial(spec, config.samples, seed)?;
            let out = run(&chains, wf, &Mixer::for_spec(spec), spec, &init)?;
            SrBatch::new(
                log_derivative_matrix(wf, &out.final_states),
                out.final_energies,
                None,
            )
        }
        SrSampling::Exact => {
            let basis = SectorBasis::enumerate(spec, spec.default_constraint())?;
            let p = exact_distribution(wf, &basis)?;
            let states: Vec<_> = basis.iter().collect();
            let e: Vec<f64> = states
                .par_iter()
                .map(|x| local_energy(wf, spec, x))
                .collect::<Result<_>>()?;
            SrBatch::new(log_derivative_matrix(wf, &states), e, Some(p))
        }
    }
}

/// One SR update of `wf` in place.
pub fn sr_iteration(
    wf: &mut NqsWF,
    spec: &HamiltonianSpec,
    config: &SrConfig,
    source: &SrSource,
    iteration: usize,
) -> Result<IterationStats> {
    let batch = sample_batch(wf, spec, config, source, iteration)?;
    let energy = batch.energy();
    let sem = match config.sampling {
        SrSampling::Mcmc => mean_sem(batch.e_loc.iter().copied()).1,
        SrSampling::Exact => 0.0,
    };
    let (delta, lambda) = sr_direction(
        &batch,
        config.lambda(iteration),
        config.lambda_floor,
        config.cg_tol,
    )?;
    wf.shift_parameters(delta.as_slice(), -config.learning_rate);
    Ok(IterationStats {
        energy,
        sem,
        lambda,
    })
}

/// Fresh NQS for `spec` under `config`.
pub fn initial_wavefunction(spec: &HamiltonianSpec, config: &SrConfig) -> NqsWF {
    let n = spec.sites();
    let m = config.hidden_units(n);
    let mut rng = stream_rng(derive_seed(config.seed, component::NQS_INIT), 0);
    NqsWF::random(n, m, config.init_std, &mut rng)
}

/// Trains a fresh NQS.
pub fn train(
    config: &SrConfig,
    spec: &HamiltonianSpec,
    source: &SrSource,
) -> Result<(SrTrace, NqsWF)> {
    let wf = initial_wavefunction(spec, config);
    train_from(wf, config, spec, source, None)
}

/// Continues training `wf`; `reference` defaults to the exact ground energy.
pub fn train_from(
    mut wf: NqsWF,
    config: &SrConfig,
    spec: &HamiltonianSpec,
    source: &SrSource,
    reference: Option<f64>,
) -> Result<(SrTrace, NqsWF)> {
    config.validate()?;
    if spec.model() != ModelKind::Tfi || wf.visible() != spec.sites() {
        return Err(Error::Incompatible(
            "SR trains an NQS on a TFI chain of matching size".into(),
        ));
    }
    let reference = match reference {
        Some(r) => r,
        None => reference_energy(spec)?,
    };
    let mut trace = SrTrace {
        reference,
        ..Default::default()
    };
    let mut first: Option<f64> = None;
    for p in 0..config.iterations {
        let stats = sr_iteration(&mut wf, spec, config, source, p)?;
        let e0 = *first.get_or_insert(stats.energy);
        trace.energy.push(stats.energy);
        trace.sem.push(stats.sem);
        trace
            .relative_error
            .push(((stats.energy - reference) / reference).abs());
        trace.parameter_norm.push(wf.parameter_norm());
        log::debug!(
            "sr iteration {p}: energy {:.8} lambda {:e}",
            stats.energy,
            stats.lambda
        );
        if !stats.energy.is_finite() || stats.energy > e0 + 10.0 * e0.abs().max(1.0) {
            trace.aborted = true;
            break;
        }
    }
    if !trace.energy.is_empty() {
        let tail = &trace.energy[trace.energy.len().saturating_sub(5)..];
        let e = tail.iter().sum::<f64>() / tail.len() as f64;
        trace.final_energy = Some(e);
        trace.final_relative_error = Some(((e - reference) / reference).abs());
    }
    Ok((trace, wf))
}

/// Iterations-to-threshold ratio of `baseline` over `candidate` per
/// relative-error threshold; thresholds either run misses are absent.
pub fn compare_sources(
    baseline: &SrTrace,
    candidate: &SrTrace,
    thresholds: &[f64],
) -> Vec<SpeedupPoint> {
    // a leading sentinel makes positions equal 1-based iteration counts
    let pad = |t: &SrTrace| -> Vec<f64> {
        std::iter::once(f64::INFINITY)
            .chain(t.relative_error.iter().copied())
            .collect()
    };
    speedup_curve(&pad(baseline), &pad(candidate), thresholds)
}
