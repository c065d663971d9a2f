//! Metropolis-Hastings sampling of `|ψ|²`: mixers, initial distributions,
//! chains and the parallel run driver with energy and acceptance statistics.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedAliasIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BasisState, HamiltonianSpec, ModelKind, SectorBasis, SectorConstraint};
use crate::rng::stream_rng;
use crate::samples::{uniform_state, SampleMetadata, SampleStore, SourceTag};
use crate::wavefunction::{Move, SlaterDeterminant, Wavefunction};

/// Walker caches are compared against a fresh evaluation this often.
pub const CACHE_CHECK_EVERY: usize = 1000;
/// Tolerance on `log|ψ|` for the cache check.
pub const CACHE_TOL: f64 = 1e-8;
/// Draws per chain before a source is declared exhausted of nonzero states.
pub const MAX_RESAMPLE: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixerKind {
    ElectronHop,
    SingleSpinFlip,
}

/// Symmetric proposal kernel. Electron-hop picks one of the `(spin sector,
/// bond)` slots uniformly and proposes a self-loop when the bond is not a
/// `01`/`10` pair.
#[derive(Clone, Debug)]
pub struct Mixer {
    kind: MixerKind,
    width: usize,
    slots: Vec<(usize, usize)>,
}

impl Mixer {
    pub fn electron_hop(spec: &HamiltonianSpec) -> Self {
        let l = spec.sites();
        let slots = [0, l]
            .iter()
            .flat_map(|&off| spec.bonds().iter().map(move |&(i, j)| (i + off, j + off)))
            .collect();
        Self {
            kind: MixerKind::ElectronHop,
            width: spec.width(),
            slots,
        }
    }

    pub fn spin_flip(width: usize) -> Self {
        Self {
            kind: MixerKind::SingleSpinFlip,
            width,
            slots: Vec::new(),
        }
    }

    /// The natural mixer for the model.
    pub fn for_spec(spec: &HamiltonianSpec) -> Self {
        match spec.model() {
            ModelKind::Hubbard => Self::electron_hop(spec),
            ModelKind::Tfi => Self::spin_flip(spec.width()),
        }
    }

    pub fn kind(&self) -> MixerKind {
        self.kind
    }

    /// Number of equally likely proposal slots.
    pub fn n_slots(&self) -> usize {
        match self.kind {
            MixerKind::ElectronHop => self.slots.len(),
            MixerKind::SingleSpinFlip => self.width,
        }
    }

    /// Move proposed by slot `k` at `x`.
    #[inline]
    pub fn slot_move(&self, x: &BasisState, k: usize) -> Move {
        match self.kind {
            MixerKind::SingleSpinFlip => Move::Flip(k),
            MixerKind::ElectronHop => {
                let (a, b) = self.slots[k];
                match (x.get(a), x.get(b)) {
                    (true, false) => Move::Hop { from: a, to: b },
                    (false, true) => Move::Hop { from: b, to: a },
                    _ => Move::Stay,
                }
            }
        }
    }

    pub fn propose_move<R: Rng + ?Sized>(&self, x: &BasisState, rng: &mut R) -> Move {
        self.slot_move(x, rng.gen_range(0..self.n_slots()))
    }

    pub fn propose<R: Rng + ?Sized>(&self, x: &BasisState, rng: &mut R) -> BasisState {
        self.propose_move(x, rng).apply(x)
    }
}

/// What happened in one Metropolis step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    SelfLoop,
    Accepted,
    Rejected,
}

/// One Markov chain: walker caches plus its own random stream.
#[derive(Clone, Debug)]
pub struct Chain<W: Wavefunction> {
    walker: W::Walker,
    rng: ChaCha8Rng,
    steps: usize,
    accepted: usize,
    proposed: usize,
}

impl<W: Wavefunction> Chain<W> {
    pub fn new(wf: &W, x: BasisState, rng: ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            walker: wf.walker(x)?,
            rng,
            steps: 0,
            accepted: 0,
            proposed: 0,
        })
    }

    pub fn state(&self, wf: &W) -> BasisState {
        wf.state(&self.walker)
    }

    pub fn walker(&self) -> &W::Walker {
        &self.walker
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Accepted over proposed, self-loops excluded.
    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.proposed as f64
    }

    pub fn step(&mut self, wf: &W, mixer: &Mixer) -> StepOutcome {
        self.steps += 1;
        let x = wf.state(&self.walker);
        let mv = mixer.propose_move(&x, &mut self.rng);
        if mv == Move::Stay {
            return StepOutcome::SelfLoop;
        }
        self.proposed += 1;
        let r = wf.move_ratio(&self.walker, mv);
        let p = r * r;
        if !(p.is_finite() && p > 0.0) {
            return StepOutcome::Rejected;
        }
        if p >= 1.0 || self.rng.gen::<f64>() < p {
            wf.accept(&mut self.walker, mv, r);
            self.accepted += 1;
            StepOutcome::Accepted
        } else {
            StepOutcome::Rejected
        }
    }

    /// `|log|ψ|_cached − log|ψ|_fresh|`, with sign disagreement reported as
    /// infinity.
    pub fn cache_error(&self, wf: &W) -> f64 {
        let cached = wf.cached(&self.walker);
        let fresh = wf.log_amplitude(&wf.state(&self.walker));
        if cached.sign != fresh.sign {
            return f64::INFINITY;
        }
        (cached.log_abs - fresh.log_abs).abs()
    }

    pub fn local_energy(&self, wf: &W, spec: &HamiltonianSpec) -> f64 {
        wf.local_energy(&self.walker, spec)
    }
}

/// Where chains start.
#[derive(Clone, Debug)]
pub enum InitialSource {
    /// Uniform over the sector.
    Uniform {
        spec: HamiltonianSpec,
        constraint: SectorConstraint,
    },
    /// Exact `|Slater|²`.
    Slater(SlaterDeterminant),
    /// Samples consumed in order, one per chain; zero-amplitude samples are
    /// skipped in favour of the next unused one.
    Store(Arc<SampleStore>),
    /// Independent draws from an explicit distribution over a basis.
    Exact(Arc<ExactSource>),
}

#[derive(Debug)]
pub struct ExactSource {
    basis: Arc<SectorBasis>,
    alias: WeightedAliasIndex<f64>,
    probabilities: Vec<f64>,
}

impl ExactSource {
    pub fn new(basis: Arc<SectorBasis>, probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                found: probabilities.len(),
            });
        }
        let alias = WeightedAliasIndex::new(probabilities.clone())
            .map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(Self {
            basis,
            alias,
            probabilities,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> BasisState {
        self.basis.state(self.alias.sample(rng))
    }
}

impl InitialSource {
    pub fn uniform(spec: &HamiltonianSpec) -> Self {
        InitialSource::Uniform {
            spec: spec.clone(),
            constraint: spec.default_constraint(),
        }
    }

    pub fn exact(basis: Arc<SectorBasis>, probabilities: Vec<f64>) -> Result<Self> {
        Ok(InitialSource::Exact(Arc::new(ExactSource::new(
            basis,
            probabilities,
        )?)))
    }

    pub fn label(&self) -> String {
        match self {
            InitialSource::Uniform { .. } => "uniform".into(),
            InitialSource::Slater(_) => "slater".into(),
            InitialSource::Store(s) => s.metadata().source.label().into(),
            InitialSource::Exact(_) => "exact".into(),
        }
    }

    fn width(&self) -> usize {
        match self {
            InitialSource::Uniform { spec, .. } => spec.width(),
            InitialSource::Slater(sd) => 2 * sd.sites(),
            InitialSource::Store(s) => s.width(),
            InitialSource::Exact(e) => e.basis.width(),
        }
    }

    /// `attempt`-th draw for chain `chain`.
    fn draw(
        &self,
        chain: usize,
        attempt: usize,
        n_chains: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<BasisState> {
        match self {
            InitialSource::Uniform { spec, constraint } => {
                Ok(uniform_state(&spec.lattice, *constraint, rng))
            }
            InitialSource::Slater(sd) => sd.sample(rng),
            InitialSource::Store(store) => {
                let k = chain + attempt * n_chains;
                store.samples().get(k).copied().ok_or_else(|| {
                    Error::SourceExhausted(format!(
                        "sample store holds {} samples but chain {chain} needs index {k}",
                        store.len()
                    ))
                })
            }
            InitialSource::Exact(e) => Ok(e.draw(rng)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub chain_length: usize,
    /// First step at which an energy checkpoint is recorded.
    pub burn_in: usize,
    /// Steps between energy checkpoints.
    pub thinning: usize,
    /// Set from the experiment's master seed, never read from a file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_chains: 1000,
            chain_length: 100,
            burn_in: 0,
            thinning: 1,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        Ok(())
    }

    /// Steps with an energy checkpoint; the final step is always included.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = (self.burn_in..=self.chain_length)
            .step_by(self.thinning)
            .collect();
        if steps.last() != Some(&self.chain_length) {
            steps.push(self.chain_length);
        }
        steps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub mean_energy: f64,
    pub sem: f64,
    /// Mean per-step acceptance over steps `1..=step`; `None` at step 0.
    pub acceptance: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Vec<Checkpoint>,
    /// Per-step acceptance (index `s` is step `s + 1`) over chains that made
    /// a non-self proposal; `NaN` if every chain self-looped.
    pub acceptance: Vec<f64>,
    /// Per-step fraction of chains that drew a self-loop.
    pub self_loops: Vec<f64>,
    /// Initial draws replaced because their amplitude vanished.
    pub resampled: usize,
    pub final_states: Vec<BasisState>,
    pub final_energies: Vec<f64>,
    pub samples: SampleStore,
}

impl RunOutput {
    pub fn final_energy(&self) -> Option<&Checkpoint> {
        self.trace.last()
    }
}

struct ChainLog {
    energies: Vec<f64>,
    outcomes: Vec<StepOutcome>,
    resampled: usize,
    state: BasisState,
}

fn start_chain<W: Wavefunction>(
    wf: &W,
    source: &InitialSource,
    index: usize,
    n_chains: usize,
    mut rng: ChaCha8Rng,
) -> Result<(Chain<W>, usize)> {
    for attempt in 0..MAX_RESAMPLE {
        let x = source.draw(index, attempt, n_chains, &mut rng)?;
        if wf.log_amplitude(&x).is_zero() {
            continue;
        }
        return Ok((Chain::new(wf, x, rng)?, attempt));
    }
    Err(Error::SourceExhausted(format!(
        "{MAX_RESAMPLE} consecutive zero-amplitude draws for chain {index}"
    )))
}

/// Runs `config.n_chains` independent chains, chain `i` on stream `i` of
/// `config.seed`.
pub fn run<W: Wavefunction>(
    config: &ChainConfig,
    wf: &W,
    mixer: &Mixer,
    spec: &HamiltonianSpec,
    source: &InitialSource,
) -> Result<RunOutput> {
    config.validate()?;
    if source.width() != wf.width() || spec.width() != wf.width() {
        return Err(Error::Incompatible(format!(
            "source width {}, model width {}, wavefunction width {}",
            source.width(),
            spec.width(),
            wf.width()
        )));
    }
    let checkpoints = config.checkpoints();
    let logs: Vec<ChainLog> = (0..config.n_chains)
        .into_par_iter()
        .map(|i| {
            let rng = stream_rng(config.seed, i as u64);
            let (mut chain, resampled) = start_chain(wf, source, i, config.n_chains, rng)?;
            let mut energies = Vec::with_capacity(checkpoints.len());
            let mut outcomes = Vec::with_capacity(config.chain_length);
            let mut next = 0;
            for s in 0..=config.chain_length {
                if s > 0 {
                    outcomes.push(chain.step(wf, mixer));
                    if s % CACHE_CHECK_EVERY == 0 || s == config.chain_length {
                        let err = chain.cache_error(wf);
                        if !(err <= CACHE_TOL) {
                            return Err(Error::Numerical(format!(
                                "chain {i} cache drifted by {err:e} at step {s}"
                            )));
                        }
                    }
                }
                if checkpoints.get(next) == Some(&s) {
                    energies.push(chain.local_energy(wf, spec));
                    next += 1;
                }
            }
            Ok(ChainLog {
                energies,
                outcomes,
                resampled,
                state: chain.state(wf),
            })
        })
        .collect::<Result<_>>()?;

    let n = logs.len() as f64;
    let mut acceptance = Vec::with_capacity(config.chain_length);
    let mut self_loops = Vec::with_capacity(config.chain_length);
    for s in 0..config.chain_length {
        let (mut acc, mut prop, mut loops) = (0usize, 0usize, 0usize);
        for log in &logs {
            match log.outcomes[s] {
                StepOutcome::SelfLoop => loops += 1,
                StepOutcome::Accepted => {
                    acc += 1;
                    prop += 1
                }
                StepOutcome::Rejected => prop += 1,
            }
        }
        acceptance.push(if prop == 0 {
            f64::NAN
        } else {
            acc as f64 / prop as f64
        });
        self_loops.push(loops as f64 / n);
    }

    let trace = checkpoints
        .iter()
        .enumerate()
        .map(|(k, &step)| {
            let (mean, sem) = mean_sem(logs.iter().map(|l| l.energies[k]));
            let acc: Vec<f64> = acceptance[..step]
                .iter()
                .copied()
                .filter(|a| !a.is_nan())
                .collect();
            Checkpoint {
                step,
                mean_energy: mean,
                sem,
                acceptance: (step > 0 && !acc.is_empty())
                    .then(|| acc.iter().sum::<f64>() / acc.len() as f64),
            }
        })
        .collect();

    let final_states: Vec<BasisState> = logs.iter().map(|l| l.state).collect();
    let mut meta = SampleMetadata::for_spec(spec, SourceTag::External);
    meta.seed = Some(config.seed);
    meta.extras
        .insert("x-initial-source".into(), source.label());
    meta.extras
        .insert("x-chain-length".into(), config.chain_length.to_string());
    Ok(RunOutput {
        trace,
        acceptance,
        self_loops,
        resampled: logs.iter().map(|l| l.resampled).sum(),
        final_energies: logs.iter().map(|l| *l.energies.last().unwrap()).collect(),
        samples: SampleStore::new(meta, final_states.clone())?,
        final_states,
    })
}

/// Per-step acceptance of a run, in `[0, 1]`, with all-self-loop steps
/// reported as 0.
pub fn acceptance_curve(out: &RunOutput) -> Vec<f64> {
    out.acceptance
        .iter()
        .map(|a| if a.is_nan() { 0.0 } else { *a })
        .collect()
}

/// Mean and standard error of the mean.
pub fn mean_sem(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// CSV with columns `step,mean_energy,sem,acceptance[,exact_energy_error]`.
pub fn trace_csv(trace: &[Checkpoint], exact: Option<f64>) -> String {
    let mut out = String::from("step,mean_energy,sem,acceptance");
    if exact.is_some() {
        out.push_str(",exact_energy_error");
    }
    out.push('\n');
    for c in trace {
        out.push_str(&format!("{},{},{},", c.step, c.mean_energy, c.sem));
        if let Some(a) = c.acceptance {
            out.push_str(&a.to_string());
        }
        if let Some(e) = exact {
            out.push_str(&format!(",{}", c.mean_energy - e));
        }
        out.push('\n');
    }
    out
}
