//! End-to-end studies (VQE → samples → VMC or exact analysis) and the named
//! presets that write CSV tables and a JSON manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{
    chi_squared, log_grid, mixing_report, speedup_at_steps, transition_matrix, tvd,
    vqe_energy_reference, MixingReport, SpeedupPoint, TransitionMatrix,
};
use crate::config::{ExperimentConfig, ModelConfig};
use crate::engine::{reference_energy, StateVector};
use crate::error::{Error, Result};
use crate::mcmc::{run, ChainConfig, InitialSource, Mixer, RunOutput};
use crate::models::{build_hamiltonian, double_occupancy, HamiltonianSpec, ModelKind, SectorBasis};
use crate::rng::derive_seed;
use crate::samples::{concatenate, mix_exact, postselect, SampleStore};
use crate::sr::{compare_sources, train, train_from, SrConfig, SrSource, SrTrace};
use crate::vqe::{optimize_with, sample_state, HvaSimulator, OptimizeOptions};
use crate::wavefunction::{
    slater_distribution, GutzwillerWF, NqsWF, SlaterDeterminant, Wavefunction,
};

pub const PRESETS: [&str; 9] = [
    "hubbard-1x4",
    "hubbard-1x8",
    "hubbard-2x4",
    "hubbard-large-L",
    "tfi-16-exact",
    "tfi-24-sampled",
    "tfi-concat-40-80",
    "sr-compare-24",
    "acceptance-study",
];

/// Energy of the Gutzwiller state on a grid of `c`.
#[derive(Clone, Debug, Serialize)]
pub struct GutzwillerScan {
    pub c: f64,
    pub energy: f64,
    pub grid: Vec<(f64, f64)>,
}

/// Exact Gutzwiller energies for `c = 0, step, 2·step, …, c_max`.
pub fn scan_gutzwiller(spec: &HamiltonianSpec, step: f64, c_max: f64) -> Result<GutzwillerScan> {
    let basis = SectorBasis::enumerate(spec, spec.default_constraint())?;
    let sd = SlaterDeterminant::half_filled(spec)?;
    let h = build_hamiltonian(spec, &basis)?;
    let a: Vec<f64> = basis.iter().map(|x| sd.amplitude(&x)).collect();
    let d: Vec<f64> = basis
        .iter()
        .map(|x| double_occupancy(&x, spec.sites()) as f64)
        .collect();
    let n = (c_max / step).round() as usize;
    let mut psi = vec![0.0; a.len()];
    let mut hpsi = vec![0.0; a.len()];
    let mut grid = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let c = k as f64 * step;
        for i in 0..a.len() {
            psi[i] = a[i] * (-c * d[i]).exp();
        }
        crate::engine::LinearOperator::apply(&h, &psi, &mut hpsi);
        let num: f64 = psi.iter().zip(&hpsi).map(|(x, y)| x * y).sum();
        let den: f64 = psi.iter().map(|x| x * x).sum();
        grid.push((c, num / den));
    }
    let &(c, energy) = grid
        .iter()
        .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
        .expect("grid is nonempty");
    Ok(GutzwillerScan { c, energy, grid })
}

/// Optimized HVA state for one depth.
#[derive(Clone, Debug, Serialize)]
pub struct VqeSummary {
    pub layers: usize,
    pub theta: Vec<f64>,
    pub energy: f64,
    pub energy_error: f64,
    #[serde(skip)]
    pub state: Option<StateVector>,
}

impl VqeSummary {
    pub fn label(&self) -> String {
        format!("vqe-{}", self.layers)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.state
            .as_ref()
            .map(|s| s.probabilities())
            .unwrap_or_default()
    }
}

fn resized(spec: &HamiltonianSpec, cols: usize) -> Result<HamiltonianSpec> {
    let mut m = ModelConfig {
        kind: spec.model(),
        rows: spec.lattice.rows,
        cols,
        boundary: spec.lattice.boundary,
        u: spec.u,
        j: spec.j,
        h: spec.h,
    };
    if spec.lattice.rows != 1 {
        m.rows = 1;
    }
    m.spec()
}

/// Optimized states for each depth in `layers`. With `transfer_from`, angles
/// are optimized on a shorter chain and then refined for at most
/// `max_iters` BFGS iterations at full size.
pub fn vqe_states(
    spec: &HamiltonianSpec,
    layers: &[usize],
    opts: &OptimizeOptions,
    transfer_from: Option<usize>,
    reference: f64,
) -> Result<Vec<VqeSummary>> {
    let sim = HvaSimulator::new(spec)?;
    let small = match transfer_from {
        Some(n) if n != spec.lattice.cols || spec.lattice.rows != 1 => {
            Some(HvaSimulator::new(&resized(spec, n)?)?)
        }
        _ => None,
    };
    let mut out = Vec::new();
    for &l in layers {
        let theta = match &small {
            Some(s) => {
                let r = optimize_with(s, l, opts)?;
                if opts.max_iters == 0 {
                    r.ansatz.theta
                } else {
                    let refine = OptimizeOptions {
                        restarts: 0,
                        warm_start: Some(r.ansatz.theta),
                        ..opts.clone()
                    };
                    optimize_with(&sim, l, &refine)?.ansatz.theta
                }
            }
            None => optimize_with(&sim, l, opts)?.ansatz.theta,
        };
        let state = sim.prepare(&theta)?;
        let energy = vqe_energy_reference(spec, &state)?;
        log::info!("vqe {l} layers: energy {energy:.8}");
        out.push(VqeSummary {
            layers: l,
            theta,
            energy,
            energy_error: energy - reference,
            state: Some(state),
        });
    }
    Ok(out)
}

/// Exact mixing study of one target on an enumerable sector.
#[derive(Clone, Debug, Serialize)]
pub struct ExactStudy {
    pub ground_energy: f64,
    /// `⟨ψ|H|ψ⟩` of the chain's target.
    pub variational_energy: f64,
    pub report: MixingReport,
    pub targets: Vec<f64>,
    #[serde(skip)]
    pub matrix: Option<TransitionMatrix>,
}

impl ExactStudy {
    pub fn source(&self, label: &str) -> Option<&crate::analysis::SourceTrajectory> {
        self.report.sources.iter().find(|s| s.label == label)
    }

    pub fn speedup(&self, label: &str) -> Option<&[SpeedupPoint]> {
        self.report
            .speedup
            .iter()
            .find(|s| s.0 == label)
            .map(|s| s.1.as_slice())
    }
}

/// Transition matrix, trajectories, bound ledgers and speedup curves; the
/// first source is the baseline.
pub fn exact_study<W: Wavefunction>(
    wf: &W,
    spec: &HamiltonianSpec,
    basis: Arc<SectorBasis>,
    sources: &[(String, Vec<f64>)],
    steps: usize,
    n_targets: usize,
    target_min: f64,
) -> Result<ExactStudy> {
    let m = transition_matrix(wf, &Mixer::for_spec(spec), basis)?;
    if m.excluded() > 0 {
        log::info!(
            "{} zero-amplitude states excluded from the chain",
            m.excluded()
        );
    }
    let top = sources
        .iter()
        .map(|(_, nu)| m.restrict(nu).map(|r| tvd(&r.0, m.stationary())))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let targets = log_grid(top.max(2.0 * target_min), target_min, n_targets);
    let report = mixing_report(wf, spec, &m, sources, steps, &targets)?;
    let el = crate::analysis::support_local_energies(wf, spec, &m)?;
    let variational_energy = m.stationary().iter().zip(&el).map(|(p, e)| p * e).sum();
    Ok(ExactStudy {
        ground_energy: reference_energy(spec)?,
        variational_energy,
        report,
        targets,
        matrix: Some(m),
    })
}

/// Gutzwiller `c` from the configuration, or the grid minimizer.
pub fn gutzwiller_c(
    cfg: &ExperimentConfig,
    spec: &HamiltonianSpec,
) -> Result<(f64, Option<GutzwillerScan>)> {
    match cfg.wavefunction.gutzwiller_c {
        Some(c) => Ok((c, None)),
        None => {
            let scan = scan_gutzwiller(spec, cfg.wavefunction.c_grid_step, cfg.wavefunction.c_max)?;
            Ok((scan.c, Some(scan)))
        }
    }
}

/// Hubbard study: Gutzwiller target, Slater baseline, simulated VQE sources,
/// uniform, an optional external sample file and noisy mixtures.
pub struct HubbardStudy {
    pub c: f64,
    pub scan: Option<GutzwillerScan>,
    pub vqe: Vec<VqeSummary>,
    pub sources: Vec<(String, Vec<f64>)>,
    pub retention: Option<f64>,
    pub exact: ExactStudy,
}

pub fn hubbard_study(cfg: &ExperimentConfig) -> Result<HubbardStudy> {
    let spec = cfg.model.spec()?;
    if spec.model() != ModelKind::Hubbard {
        return Err(Error::Config(
            "model.kind: this study needs a Hubbard model".into(),
        ));
    }
    let basis = Arc::new(SectorBasis::enumerate(&spec, spec.default_constraint())?);
    let sd = SlaterDeterminant::half_filled(&spec)?;
    let (c, scan) = gutzwiller_c(cfg, &spec)?;
    let wf = GutzwillerWF::new(c, sd.clone());
    let e0 = reference_energy(&spec)?;
    let vqe = vqe_states(
        &spec,
        &cfg.vqe.layers,
        &cfg.vqe.options(),
        cfg.vqe.transfer_from,
        e0,
    )?;
    let mut sources = vec![("slater".to_string(), slater_distribution(&sd, &basis)?)];
    for v in &vqe {
        sources.push((v.label(), v.probabilities()));
    }
    sources.push((
        "uniform".to_string(),
        vec![1.0 / basis.len() as f64; basis.len()],
    ));
    let retention = push_external(cfg, &spec, &basis, &mut sources)?;
    if let Some(first) = vqe.first() {
        let p = first.probabilities();
        for &eps in &cfg.analysis.noise {
            sources.push((format!("{}-eps{eps}", first.label()), mix_exact(&p, eps)));
        }
    }
    let exact = exact_study(
        &wf,
        &spec,
        basis,
        &sources,
        cfg.analysis.steps,
        cfg.analysis.targets,
        cfg.analysis.target_min,
    )?;
    Ok(HubbardStudy {
        c,
        scan,
        vqe,
        sources,
        retention,
        exact,
    })
}

fn push_external(
    cfg: &ExperimentConfig,
    spec: &HamiltonianSpec,
    basis: &SectorBasis,
    sources: &mut Vec<(String, Vec<f64>)>,
) -> Result<Option<f64>> {
    let Some(path) = &cfg.analysis.external else {
        return Ok(None);
    };
    let store = SampleStore::load(path)?;
    if store.width() != basis.width() {
        return Err(Error::Incompatible(format!(
            "{} holds {}-bit samples; the model needs {}",
            path.display(),
            store.width(),
            basis.width()
        )));
    }
    let (kept, r) = postselect(&store, spec.default_constraint())?;
    if kept.is_empty() {
        return Err(Error::EmptySelection);
    }
    sources.push(("external".to_string(), kept.empirical_distribution(basis)?));
    Ok(Some(r))
}

/// NQS target for a TFI study: the configured weight file, or a fresh SR run.
pub fn nqs_target(
    cfg: &ExperimentConfig,
    spec: &HamiltonianSpec,
) -> Result<(NqsWF, Option<SrTrace>)> {
    match &cfg.wavefunction.nqs {
        Some(path) => {
            let wf = NqsWF::load(path)?;
            if wf.visible() != spec.sites() {
                return Err(Error::Incompatible(format!(
                    "{} has {} visible units for a {}-spin chain",
                    path.display(),
                    wf.visible(),
                    spec.sites()
                )));
            }
            Ok((wf, None))
        }
        None => {
            let (trace, wf) = train(&cfg.sr, spec, &SrSource::Uniform)?;
            Ok((wf, Some(trace)))
        }
    }
}

pub struct TfiExactStudy {
    pub nqs: NqsWF,
    pub training: Option<SrTrace>,
    pub vqe: Vec<VqeSummary>,
    pub retention: Option<f64>,
    pub exact: ExactStudy,
}

/// Trained NQS target on an enumerable chain; uniform baseline and VQE
/// sources.
pub fn tfi_exact_study(cfg: &ExperimentConfig) -> Result<TfiExactStudy> {
    let spec = cfg.model.spec()?;
    if spec.model() != ModelKind::Tfi {
        return Err(Error::Config(
            "model.kind: this study needs a TFI model".into(),
        ));
    }
    let (nqs, training) = nqs_target(cfg, &spec)?;
    let e0 = reference_energy(&spec)?;
    let vqe = vqe_states(
        &spec,
        &cfg.vqe.layers,
        &cfg.vqe.options(),
        cfg.vqe.transfer_from,
        e0,
    )?;
    let basis = Arc::new(SectorBasis::enumerate(&spec, spec.default_constraint())?);
    let mut sources = vec![(
        "uniform".to_string(),
        vec![1.0 / basis.len() as f64; basis.len()],
    )];
    for v in &vqe {
        sources.push((v.label(), v.probabilities()));
    }
    let retention = push_external(cfg, &spec, &basis, &mut sources)?;
    let exact = exact_study(
        &nqs,
        &spec,
        basis,
        &sources,
        cfg.analysis.steps,
        cfg.analysis.targets,
        cfg.analysis.target_min,
    )?;
    Ok(TfiExactStudy {
        nqs,
        training,
        vqe,
        retention,
        exact,
    })
}

/// VMC runs of one target from several initial sources.
pub struct VmcComparison {
    pub reference: f64,
    pub runs: Vec<(String, RunOutput)>,
    pub targets: Vec<f64>,
    /// Energy-error speedup of every source over the first.
    pub speedup: Vec<(String, Vec<SpeedupPoint>)>,
}

impl VmcComparison {
    /// `(step, |mean energy − reference|)` per checkpoint.
    pub fn error_curve(&self, k: usize) -> Vec<(usize, f64)> {
        self.runs[k]
            .1
            .trace
            .iter()
            .map(|c| (c.step, (c.mean_energy - self.reference).abs()))
            .collect()
    }
}

pub fn vmc_comparison<W: Wavefunction>(
    wf: &W,
    spec: &HamiltonianSpec,
    chain: &ChainConfig,
    sources: &[(String, InitialSource)],
    reference: f64,
    n_targets: usize,
    target_min: f64,
) -> Result<VmcComparison> {
    let mixer = Mixer::for_spec(spec);
    let mut runs = Vec::new();
    for (label, src) in sources {
        log::info!("vmc from {label}");
        runs.push((label.clone(), run(chain, wf, &mixer, spec, src)?));
    }
    let mut cmp = VmcComparison {
        reference,
        runs,
        targets: Vec::new(),
        speedup: Vec::new(),
    };
    let top = (0..cmp.runs.len())
        .flat_map(|k| cmp.error_curve(k))
        .map(|p| p.1)
        .fold(0.0, f64::max);
    cmp.targets = log_grid(top.max(2.0 * target_min), target_min, n_targets);
    let base = cmp.error_curve(0);
    cmp.speedup = (1..cmp.runs.len())
        .map(|k| {
            (
                cmp.runs[k].0.clone(),
                speedup_at_steps(&base, &cmp.error_curve(k), &cmp.targets),
            )
        })
        .collect();
    Ok(cmp)
}

/// Fraction of targets reached by both curves at which `b` needs no more
/// steps than `a`, with the number of such targets.
pub fn no_slower_fraction(a: &[(usize, f64)], b: &[(usize, f64)], targets: &[f64]) -> (f64, usize) {
    let hit = |c: &[(usize, f64)], t: f64| c.iter().find(|p| p.1 <= t).map(|p| p.0);
    let both: Vec<(usize, usize)> = targets
        .iter()
        .filter_map(|&t| Some((hit(a, t)?, hit(b, t)?)))
        .collect();
    if both.is_empty() {
        return (0.0, 0);
    }
    let ok = both.iter().filter(|(x, y)| y <= x).count();
    (ok as f64 / both.len() as f64, both.len())
}

/// Concatenated-VQE study on a long TFI chain.
pub struct ConcatStudy {
    pub vqe: VqeSummary,
    pub factor: usize,
    pub training: SrTrace,
    pub nqs: NqsWF,
    pub comparison: VmcComparison,
}

/// VQE on `cfg.model`, samples concatenated `factor` times, NQS trained at the
/// long size with `sr`, then VMC from uniform and from the concatenated
/// samples.
pub fn concat_study(
    cfg: &ExperimentConfig,
    factor: usize,
    sr: &SrConfig,
    layers: usize,
) -> Result<ConcatStudy> {
    let spec = cfg.model.spec()?;
    let long = resized(&spec, spec.sites() * factor)?;
    let seeds = cfg.seeds();
    let e_small = reference_energy(&spec)?;
    let vqe = vqe_states(
        &spec,
        &[layers],
        &cfg.vqe.options(),
        cfg.vqe.transfer_from,
        e_small,
    )?
    .pop()
    .expect("one depth requested");
    let n = cfg.chain.n_chains;
    let store = sample_state(
        vqe.state.as_ref().unwrap(),
        n,
        seeds.sampling,
        &spec,
        Some(layers),
    )?;
    let joined = concatenate(&store, factor, n, derive_seed(seeds.concat, factor as u64))?;
    let e_long = reference_energy(&long)?;
    let wf0 = crate::sr::initial_wavefunction(&long, sr);
    let (training, nqs) = train_from(wf0, sr, &long, &SrSource::Uniform, Some(e_long))?;
    let sources = vec![
        ("uniform".to_string(), InitialSource::uniform(&long)),
        (
            format!("vqe-{layers}-concat{factor}"),
            InitialSource::Store(Arc::new(joined)),
        ),
    ];
    let comparison = vmc_comparison(
        &nqs,
        &long,
        &cfg.chain,
        &sources,
        e_long,
        cfg.analysis.targets,
        cfg.analysis.target_min,
    )?;
    Ok(ConcatStudy {
        vqe,
        factor,
        training,
        nqs,
        comparison,
    })
}

/// Collects output files and derived values for the manifest.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    derived: BTreeMap<String, Value>,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            derived: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, content)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) {
        self.derived.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(Value::Null),
        );
    }

    pub fn register(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Writes `manifest.json` and returns its contents.
    pub fn finish(mut self, name: &str, cfg: &ExperimentConfig) -> Result<Value> {
        let config: Value = toml::from_str::<toml::Value>(&cfg.to_toml())
            .ok()
            .and_then(|v| serde_json::to_value(v).ok())
            .unwrap_or(Value::Null);
        self.files.push("manifest.json".into());
        let manifest = json!({
            "experiment": name,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "seeds": cfg.seeds(),
            "derived": self.derived,
            "outputs": self.files,
        });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

fn wide_csv(header: &str, columns: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from(header);
    for (label, _) in columns {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    let len = columns.iter().map(|c| c.1.len()).max().unwrap_or(0);
    for n in 0..len {
        out.push_str(&n.to_string());
        for (_, v) in columns {
            out.push(',');
            if let Some(x) = v.get(n) {
                out.push_str(&x.to_string());
            }
        }
        out.push('\n');
    }
    out
}

fn speedup_csv(curves: &[(String, Vec<SpeedupPoint>)]) -> String {
    let mut out = String::from("source,target,steps_baseline,steps_source,factor\n");
    for (label, pts) in curves {
        for p in pts {
            out.push_str(&format!(
                "{label},{},{},{},{}\n",
                p.target, p.steps_a, p.steps_b, p.factor
            ));
        }
    }
    out
}

/// `tvd.csv`, `energy.csv`, `speedup.csv`, per-source tables and `report.json`.
pub fn write_exact_study(out: &mut Output, study: &ExactStudy) -> Result<()> {
    let r = &study.report;
    let tvd_cols: Vec<(String, Vec<f64>)> = r
        .sources
        .iter()
        .map(|s| (s.label.clone(), s.tvd.clone()))
        .collect();
    out.write("tvd.csv", &wide_csv("step", &tvd_cols))?;
    let e_cols: Vec<(String, Vec<f64>)> = r
        .sources
        .iter()
        .map(|s| {
            (
                s.label.clone(),
                s.energy.iter().map(|e| e - study.ground_energy).collect(),
            )
        })
        .collect();
    out.write("energy.csv", &wide_csv("step", &e_cols))?;
    out.write("speedup.csv", &speedup_csv(&r.speedup))?;
    for s in &r.sources {
        out.write(
            &format!("sources/{}.csv", s.label),
            &s.csv(study.ground_energy),
        )?;
    }
    out.write(
        "report.json",
        &(serde_json::to_string_pretty(study).expect("report serializes") + "\n"),
    )?;
    out.record("lambda2", r.lambda2);
    out.record("lambda_star", r.lambda_star);
    out.record("relaxation_time", r.relaxation_time);
    out.record("ground_energy", study.ground_energy);
    out.record("variational_energy", study.variational_energy);
    out.record("excluded_states", r.excluded);
    out.record("detailed_balance_violation", r.detailed_balance_violation);
    let chi: BTreeMap<String, f64> = r
        .sources
        .iter()
        .map(|s| (s.label.clone(), s.chi_squared))
        .collect();
    out.record("chi_squared", chi);
    let slack: BTreeMap<String, f64> = r
        .sources
        .iter()
        .zip(&r.bounds)
        .map(|(s, b)| (s.label.clone(), b.min_slack()))
        .collect();
    out.record("mixing_bound_min_slack", slack);
    Ok(())
}

fn write_vmc(out: &mut Output, cmp: &VmcComparison, prefix: &str) -> Result<()> {
    let mut energy = String::from("source,step,mean_energy,sem,acceptance,energy_error\n");
    for (label, run) in &cmp.runs {
        for c in &run.trace {
            energy.push_str(&format!(
                "{label},{},{},{},{},{}\n",
                c.step,
                c.mean_energy,
                c.sem,
                c.acceptance.map(|a| a.to_string()).unwrap_or_default(),
                (c.mean_energy - cmp.reference).abs()
            ));
        }
    }
    out.write(&format!("{prefix}energy.csv"), &energy)?;
    out.write(&format!("{prefix}speedup.csv"), &speedup_csv(&cmp.speedup))?;
    let acc: Vec<(String, Vec<f64>)> = cmp
        .runs
        .iter()
        .map(|(l, r)| (l.clone(), crate::mcmc::acceptance_curve(r)))
        .collect();
    out.write(&format!("{prefix}acceptance.csv"), &wide_csv("step", &acc))?;
    out.record(&format!("{prefix}reference_energy"), cmp.reference);
    let finals: BTreeMap<String, f64> = cmp
        .runs
        .iter()
        .filter_map(|(l, r)| Some((l.clone(), r.final_energy()?.mean_energy)))
        .collect();
    out.record(&format!("{prefix}final_energy"), finals);
    Ok(())
}

fn vqe_record(vqe: &[VqeSummary]) -> Value {
    serde_json::to_value(vqe).unwrap_or(Value::Null)
}

/// Default configuration of a preset.
pub fn preset_config(name: &str) -> Result<ExperimentConfig> {
    let hubbard = |rows, cols| ModelConfig {
        kind: ModelKind::Hubbard,
        rows,
        cols,
        boundary: crate::models::Boundary::Open,
        u: 4.0,
        j: 1.0,
        h: 1.0,
    };
    let tfi = |n| ModelConfig {
        kind: ModelKind::Tfi,
        rows: 1,
        cols: n,
        boundary: crate::models::Boundary::Open,
        u: 0.0,
        j: 1.0,
        h: 1.0,
    };
    let mut cfg = match name {
        "hubbard-1x4" => ExperimentConfig::new(hubbard(1, 4)),
        "hubbard-1x8" | "hubbard-2x4" => {
            let mut c = ExperimentConfig::new(if name == "hubbard-1x8" {
                hubbard(1, 8)
            } else {
                hubbard(2, 4)
            });
            c.analysis.steps = 1000;
            c
        }
        "hubbard-large-L" => {
            let mut c = ExperimentConfig::new(hubbard(1, 8));
            c.chain = ChainConfig {
                n_chains: 1000,
                chain_length: 400,
                thinning: 10,
                ..Default::default()
            };
            c
        }
        "acceptance-study" => {
            let mut c = ExperimentConfig::new(hubbard(1, 8));
            c.chain = ChainConfig {
                n_chains: 2000,
                chain_length: 200,
                thinning: 10,
                ..Default::default()
            };
            c
        }
        "tfi-16-exact" => {
            let mut c = ExperimentConfig::new(tfi(16));
            c.vqe.layers = vec![1, 2, 3, 4];
            c.analysis.steps = 1000;
            c
        }
        "tfi-24-sampled" => {
            let mut c = ExperimentConfig::new(tfi(24));
            c.vqe.layers = vec![1, 2, 3, 4];
            c.vqe.transfer_from = Some(12);
            c.vqe.max_iters = 0;
            c.wavefunction.nqs = Some(PathBuf::from("out/sr-compare-24/nqs-uniform.nqs"));
            c.chain = ChainConfig {
                n_chains: 2000,
                chain_length: 300,
                thinning: 5,
                ..Default::default()
            };
            c
        }
        "tfi-concat-40-80" => {
            let mut c = ExperimentConfig::new(tfi(20));
            c.vqe.layers = vec![2];
            c.vqe.transfer_from = Some(12);
            c.vqe.max_iters = 20;
            c.sr = SrConfig {
                iterations: 100,
                chain_length: 20,
                ..Default::default()
            };
            c.chain = ChainConfig {
                n_chains: 4000,
                chain_length: 300,
                thinning: 5,
                ..Default::default()
            };
            c
        }
        "sr-compare-24" => {
            let mut c = ExperimentConfig::new(tfi(24));
            c.vqe.layers = vec![2, 4];
            c.vqe.transfer_from = Some(12);
            c.vqe.max_iters = 0;
            c.sr = SrConfig {
                iterations: 300,
                ..SrConfig::for_sites(24)
            };
            c
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}`; valid presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    cfg.output_dir = PathBuf::from("out").join(name);
    cfg.resolve_seeds();
    Ok(cfg)
}

/// Exact mixing analysis of the configured model: Gutzwiller target for
/// Hubbard, NQS target for TFI.
pub fn run_analysis(cfg: &ExperimentConfig) -> Result<Value> {
    let name = match cfg.model.kind {
        ModelKind::Hubbard => "hubbard-1x4",
        ModelKind::Tfi => "tfi-16-exact",
    };
    run_study(name, "analyze", cfg)
}

/// Runs experiment `name` with `cfg` and writes its outputs under
/// `cfg.output_dir`.
pub fn run_experiment(name: &str, cfg: &ExperimentConfig) -> Result<Value> {
    run_study(name, name, cfg)
}

fn run_study(name: &str, label: &str, cfg: &ExperimentConfig) -> Result<Value> {
    cfg.validate()?;
    let mut out = Output::new(&cfg.output_dir)?;
    match name {
        "hubbard-1x4" | "hubbard-1x8" | "hubbard-2x4" => {
            let s = hubbard_study(cfg)?;
            write_exact_study(&mut out, &s.exact)?;
            if let Some(scan) = &s.scan {
                let mut csv = String::from("c,energy\n");
                for (c, e) in &scan.grid {
                    csv.push_str(&format!("{c},{e}\n"));
                }
                out.write("gutzwiller.csv", &csv)?;
            }
            out.record("gutzwiller_c", s.c);
            out.record("vqe", vqe_record(&s.vqe));
            if let Some(r) = s.retention {
                out.record("external_retention", r);
            }
        }
        "tfi-16-exact" => {
            let s = tfi_exact_study(cfg)?;
            write_exact_study(&mut out, &s.exact)?;
            s.nqs.save(&out.path("nqs.nqs"))?;
            out.register("nqs.nqs");
            if let Some(t) = &s.training {
                out.write("sr.csv", &t.csv())?;
                out.record("sr_final_relative_error", t.final_relative_error);
            }
            out.record("vqe", vqe_record(&s.vqe));
            if let Some(r) = s.retention {
                out.record("external_retention", r);
            }
        }
        "hubbard-large-L" => large_l(cfg, &mut out)?,
        "acceptance-study" => {
            let spec = cfg.model.spec()?;
            let sd = SlaterDeterminant::half_filled(&spec)?;
            let (c, _) = gutzwiller_c(cfg, &spec)?;
            let wf = GutzwillerWF::new(c, sd.clone());
            let e0 = reference_energy(&spec)?;
            let vqe = vqe_states(
                &spec,
                &cfg.vqe.layers,
                &cfg.vqe.options(),
                cfg.vqe.transfer_from,
                e0,
            )?;
            let basis = Arc::new(SectorBasis::enumerate(&spec, spec.default_constraint())?);
            let mut sources = vec![("slater".to_string(), InitialSource::Slater(sd))];
            for v in &vqe {
                sources.push((
                    v.label(),
                    InitialSource::exact(basis.clone(), v.probabilities())?,
                ));
            }
            let cmp = vmc_comparison(
                &wf,
                &spec,
                &cfg.chain,
                &sources,
                e0,
                cfg.analysis.targets,
                cfg.analysis.target_min,
            )?;
            write_vmc(&mut out, &cmp, "")?;
            out.record("gutzwiller_c", c);
            out.record("vqe", vqe_record(&vqe));
        }
        "tfi-24-sampled" => {
            let spec = cfg.model.spec()?;
            let nqs = match &cfg.wavefunction.nqs {
                Some(p) if p.exists() => NqsWF::load(p)?,
                Some(p) => {
                    return Err(Error::MissingPrerequisite(format!(
                    "{} not found; run `qevmc preset sr-compare-24` first or set wavefunction.nqs",
                    p.display()
                )))
                }
                None => nqs_target(cfg, &spec)?.0,
            };
            let e0 = reference_energy(&spec)?;
            let vqe = vqe_states(
                &spec,
                &cfg.vqe.layers,
                &cfg.vqe.options(),
                cfg.vqe.transfer_from,
                e0,
            )?;
            let seeds = cfg.seeds();
            let mut sources = vec![("uniform".to_string(), InitialSource::uniform(&spec))];
            for v in &vqe {
                let store = sample_state(
                    v.state.as_ref().unwrap(),
                    cfg.chain.n_chains,
                    derive_seed(seeds.sampling, v.layers as u64),
                    &spec,
                    Some(v.layers),
                )?;
                let name = format!("samples/{}.txt", v.label());
                store.save(&out.path(&name))?;
                out.register(&name);
                sources.push((v.label(), InitialSource::Store(Arc::new(store))));
            }
            let cmp = vmc_comparison(
                &nqs,
                &spec,
                &cfg.chain,
                &sources,
                e0,
                cfg.analysis.targets,
                cfg.analysis.target_min,
            )?;
            write_vmc(&mut out, &cmp, "")?;
            out.record("vqe", vqe_record(&vqe));
        }
        "tfi-concat-40-80" => {
            let factors = [(2usize, 1.0f64), (4, 0.25)];
            let layers = *cfg.vqe.layers.first().unwrap_or(&2);
            for (factor, alpha) in factors {
                let sr = SrConfig {
                    alpha,
                    ..cfg.sr.clone()
                };
                let s = concat_study(cfg, factor, &sr, layers)?;
                let prefix = format!("n{}-", cfg.model.cols * factor);
                write_vmc(&mut out, &s.comparison, &prefix)?;
                out.write(&format!("{prefix}sr.csv"), &s.training.csv())?;
                s.nqs.save(&out.path(&format!("{prefix}nqs.nqs")))?;
                out.register(&format!("{prefix}nqs.nqs"));
                out.record(
                    &format!("{prefix}vqe"),
                    vqe_record(std::slice::from_ref(&s.vqe)),
                );
            }
        }
        "sr-compare-24" => {
            let spec = cfg.model.spec()?;
            let e0 = reference_energy(&spec)?;
            let vqe = vqe_states(
                &spec,
                &cfg.vqe.layers,
                &cfg.vqe.options(),
                cfg.vqe.transfer_from,
                e0,
            )?;
            let seeds = cfg.seeds();
            let mut sources = vec![("uniform".to_string(), SrSource::Uniform)];
            for v in &vqe {
                let store = sample_state(
                    v.state.as_ref().unwrap(),
                    cfg.vqe.samples,
                    derive_seed(seeds.sampling, v.layers as u64),
                    &spec,
                    Some(v.layers),
                )?;
                sources.push((v.label(), SrSource::Store(Arc::new(store))));
            }
            let mut traces = Vec::new();
            for (label, src) in &sources {
                log::info!("sr from {label}");
                let (trace, wf) = train(&cfg.sr, &spec, src)?;
                out.write(&format!("sr-{label}.csv"), &trace.csv())?;
                wf.save(&out.path(&format!("nqs-{label}.nqs")))?;
                out.register(&format!("nqs-{label}.nqs"));
                traces.push((label.clone(), trace));
            }
            let thresholds = log_grid(0.1, cfg.analysis.target_min, cfg.analysis.targets);
            let curves: Vec<(String, Vec<SpeedupPoint>)> = traces
                .iter()
                .skip(1)
                .map(|(l, t)| (l.clone(), compare_sources(&traces[0].1, t, &thresholds)))
                .collect();
            out.write("speedup.csv", &speedup_csv(&curves))?;
            let finals: BTreeMap<String, Option<f64>> = traces
                .iter()
                .map(|(l, t)| (l.clone(), t.final_relative_error))
                .collect();
            out.record("final_relative_error", finals);
            out.record("reference_energy", e0);
            out.record("vqe", vqe_record(&vqe));
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}`; valid presets: {}",
                PRESETS.join(", ")
            )))
        }
    }
    out.finish(label, cfg)
}

fn large_l(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let spec = cfg.model.spec()?;
    let (c, _) = gutzwiller_c(cfg, &spec)?;
    let e0 = reference_energy(&spec)?;
    let layers = *cfg.vqe.layers.first().unwrap_or(&2);
    let vqe = vqe_states(
        &spec,
        &[layers],
        &cfg.vqe.options(),
        cfg.vqe.transfer_from,
        e0,
    )?
    .pop()
    .expect("one depth requested");
    let seeds = cfg.seeds();
    let n = cfg.chain.n_chains;
    let store = sample_state(
        vqe.state.as_ref().unwrap(),
        n,
        seeds.sampling,
        &spec,
        Some(layers),
    )?;
    out.record("gutzwiller_c", c);
    out.record("vqe", vqe_record(std::slice::from_ref(&vqe)));
    for factor in [2usize, 3, 6] {
        let long = resized(&spec, spec.sites() * factor)?;
        let sd = SlaterDeterminant::half_filled(&long)?;
        let wf = GutzwillerWF::new(c, sd.clone());
        let joined = concatenate(&store, factor, n, derive_seed(seeds.concat, factor as u64))?;
        let sources = vec![
            ("slater".to_string(), InitialSource::Slater(sd)),
            (
                format!("vqe-{layers}-concat{factor}"),
                InitialSource::Store(Arc::new(joined)),
            ),
        ];
        let mut cmp = vmc_comparison(
            &wf,
            &long,
            &cfg.chain,
            &sources,
            0.0,
            cfg.analysis.targets,
            cfg.analysis.target_min,
        )?;
        // no exact energy at these sizes: errors are measured against the
        // late-time average over both runs
        let tail: Vec<f64> = cmp
            .runs
            .iter()
            .flat_map(|(_, r)| {
                let t = &r.trace;
                t[t.len() - t.len() / 4 - 1..]
                    .iter()
                    .map(|c| c.mean_energy)
                    .collect::<Vec<_>>()
            })
            .collect();
        cmp.reference = tail.iter().sum::<f64>() / tail.len() as f64;
        let top = (0..cmp.runs.len())
            .flat_map(|k| cmp.error_curve(k))
            .map(|p| p.1)
            .fold(0.0, f64::max);
        cmp.targets = log_grid(
            top.max(2.0 * cfg.analysis.target_min),
            cfg.analysis.target_min,
            cfg.analysis.targets,
        );
        let base = cmp.error_curve(0);
        cmp.speedup = vec![(
            cmp.runs[1].0.clone(),
            speedup_at_steps(&base, &cmp.error_curve(1), &cmp.targets),
        )];
        write_vmc(out, &cmp, &format!("1x{}-", long.sites()))?;
    }
    Ok(())
}

/// Exact TVD of a noisy mixture against `pi` over a basis, for a grid of
/// noise levels.
pub fn noise_curves(
    m: &TransitionMatrix,
    base: &[f64],
    levels: &[f64],
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    levels
        .iter()
        .map(|&eps| {
            let (nu0, _) = m.restrict(&mix_exact(base, eps))?;
            Ok(crate::analysis::evolve_distribution(m, &nu0, steps)?
                .iter()
                .map(|nu| tvd(nu, m.stationary()))
                .collect())
        })
        .collect()
}

/// `χ²` of a full-basis distribution against the chain's stationary law.
pub fn source_chi_squared(m: &TransitionMatrix, nu: &[f64]) -> Result<f64> {
    Ok(chi_squared(&m.restrict(nu)?.0, m.stationary()))
}
