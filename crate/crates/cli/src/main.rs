use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use qevmc::config::ExperimentConfig;
use qevmc::engine::reference_energy;
use qevmc::error::{Error, Result};
use qevmc::experiments::{self, gutzwiller_c, preset_config, vqe_states, Output};
use qevmc::mcmc::{run, trace_csv, InitialSource, Mixer};
use qevmc::models::ModelKind;
use qevmc::rng::derive_seed;
use qevmc::samples::{
    concatenate, mix_with_uniform, postselect, MixtureBase, NoisyMixtureSpec, SampleStore,
};
use qevmc::sr::{train, SrSource};
use qevmc::vqe::sample_state;
use qevmc::wavefunction::{GutzwillerWF, NqsWF, SlaterDeterminant};

/// Quantum-enhanced variational Monte Carlo laboratory.
#[derive(Parser)]
#[command(name = "qevmc", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set chain.n_chains=500`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Args, Default)]
struct ModelArgs {
    /// `hubbard` or `tfi`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    u: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the HVA circuit and write measurement samples.
    Vqe {
        #[command(flatten)]
        model: ModelArgs,
        /// Circuit depths.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Samples drawn per depth.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Sample-file utilities.
    Samples {
        #[command(subcommand)]
        op: SamplesOp,
    },
    /// Metropolis chains.
    Vmc {
        #[command(subcommand)]
        op: VmcOp,
    },
    /// Neural-network state training.
    Sr {
        #[command(subcommand)]
        op: SrOp,
    },
    /// Exact transition-matrix analysis of the configured model.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        target: TargetArgs,
        /// Extra initial distribution from a sample file.
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Run a named experiment.
    Preset {
        /// One of the preset names (`qevmc preset list` prints them).
        name: String,
    },
}

#[derive(Subcommand)]
enum SamplesOp {
    /// Keep samples in the file's declared sector.
    Filter {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Join independent samples into a longer system.
    Concat {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        factor: usize,
        #[arg(short = 'n', long)]
        count: usize,
    },
    /// Mix with uniform noise.
    Mix {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(short = 'n', long)]
        count: usize,
    },
}

#[derive(Args, Default)]
struct TargetArgs {
    /// Gutzwiller parameter (Hubbard targets).
    #[arg(long)]
    c: Option<f64>,
    /// NQS weight file (TFI targets).
    #[arg(long)]
    nqs: Option<PathBuf>,
}

#[derive(Subcommand)]
enum VmcOp {
    Run {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        target: TargetArgs,
        /// `uniform`, `slater`, or a sample file.
        #[arg(long, default_value = "uniform")]
        source: String,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

#[derive(Subcommand)]
enum SrOp {
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// `uniform` or a sample file.
        #[arg(long, default_value = "uniform")]
        source: String,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::InvalidLattice(_)
        | Error::InconsistentConstraint(_)
        | Error::SectorTooLarge { .. }
        | Error::SizeLimit { .. }
        | Error::BasisMismatch(_)
        | Error::Incompatible(_)
        | Error::MissingPrerequisite(_)
        | Error::EmptySelection
        | Error::SourceExhausted(_) => 2,
        Error::Numerical(_)
        | Error::NoConvergence { .. }
        | Error::SingularSystem
        | Error::ProbabilityDrift(_)
        | Error::NotHermitian(_)
        | Error::NotReversible(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_key(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("bad key `{key}`")))?;
    let mut table = doc;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// Base document (preset defaults), then the config file, then flag
/// overrides, then `--set` pairs.
fn build_config(
    g: &Global,
    base: Option<ExperimentConfig>,
    flags: Vec<(&str, toml::Value)>,
) -> Result<ExperimentConfig> {
    let mut doc = match base {
        Some(cfg) => toml::from_str(&cfg.to_toml()).expect("resolved configuration reparses"),
        None => toml::Table::new(),
    };
    let origin = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let file: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut doc, file);
            path.clone()
        }
        None => PathBuf::from("<command line>"),
    };
    for (k, v) in flags {
        set_key(&mut doc, k, v)?;
    }
    if let Some(s) = g.seed {
        set_key(&mut doc, "seed", toml::Value::Integer(s as i64))?;
    }
    if let Some(o) = &g.out {
        set_key(
            &mut doc,
            "output_dir",
            toml::Value::String(o.display().to_string()),
        )?;
    }
    for pair in &g.sets {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects SECTION.KEY=VALUE, got `{pair}`"))
        })?;
        set_key(&mut doc, k.trim(), parse_value(v.trim()))?;
    }
    if !doc.contains_key("model") {
        return Err(Error::Config(
            "model: no model given; pass --config or --model/--cols".into(),
        ));
    }
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    ExperimentConfig::parse(&text, &origin)
}

fn model_flags(m: &ModelArgs) -> Vec<(&'static str, toml::Value)> {
    let mut f = Vec::new();
    if let Some(k) = &m.model {
        f.push(("model.kind", toml::Value::String(k.clone())));
    }
    if let Some(r) = m.rows {
        f.push(("model.rows", toml::Value::Integer(r as i64)));
    }
    if let Some(c) = m.cols {
        f.push(("model.cols", toml::Value::Integer(c as i64)));
    }
    if let Some(u) = m.u {
        f.push(("model.u", toml::Value::Float(u)));
    }
    if let Some(h) = m.h {
        f.push(("model.h", toml::Value::Float(h)));
    }
    f
}

fn target_flags(t: &TargetArgs, f: &mut Vec<(&'static str, toml::Value)>) {
    if let Some(c) = t.c {
        f.push(("wavefunction.gutzwiller_c", toml::Value::Float(c)));
    }
    if let Some(p) = &t.nqs {
        f.push((
            "wavefunction.nqs",
            toml::Value::String(p.display().to_string()),
        ));
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Preset { name } => {
            if name == "list" {
                for p in experiments::PRESETS {
                    println!("{p}");
                }
                return Ok(());
            }
            let cfg = build_config(g, Some(preset_config(&name)?), Vec::new())?;
            let manifest = experiments::run_experiment(&name, &cfg)?;
            println!(
                "{} files written to {}",
                manifest["outputs"].as_array().map_or(0, |a| a.len()),
                cfg.output_dir.display()
            );
            Ok(())
        }
        Command::Analyze {
            model,
            target,
            source,
        } => {
            let mut f = model_flags(&model);
            target_flags(&target, &mut f);
            if let Some(p) = source {
                f.push((
                    "analysis.external",
                    toml::Value::String(p.display().to_string()),
                ));
            }
            let cfg = build_config(g, None, f)?;
            let manifest = experiments::run_analysis(&cfg)?;
            println!("lambda2 = {}", manifest["derived"]["lambda2"]);
            println!("outputs in {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Vqe {
            model,
            layers,
            restarts,
            samples,
        } => {
            let mut f = model_flags(&model);
            if let Some(l) = layers {
                f.push((
                    "vqe.layers",
                    toml::Value::Array(
                        l.into_iter()
                            .map(|x| toml::Value::Integer(x as i64))
                            .collect(),
                    ),
                ));
            }
            if let Some(r) = restarts {
                f.push(("vqe.restarts", toml::Value::Integer(r as i64)));
            }
            if let Some(n) = samples {
                f.push(("vqe.samples", toml::Value::Integer(n as i64)));
            }
            vqe(&build_config(g, None, f)?)
        }
        Command::Samples { op } => samples(g, op),
        Command::Vmc {
            op:
                VmcOp::Run {
                    model,
                    target,
                    source,
                    chains,
                    steps,
                },
        } => {
            let mut f = model_flags(&model);
            target_flags(&target, &mut f);
            if let Some(n) = chains {
                f.push(("chain.n_chains", toml::Value::Integer(n as i64)));
            }
            if let Some(n) = steps {
                f.push(("chain.chain_length", toml::Value::Integer(n as i64)));
            }
            vmc(&build_config(g, None, f)?, &source)
        }
        Command::Sr {
            op:
                SrOp::Train {
                    model,
                    source,
                    iterations,
                    alpha,
                },
        } => {
            let mut f = model_flags(&model);
            if let Some(n) = iterations {
                f.push(("sr.iterations", toml::Value::Integer(n as i64)));
            }
            if let Some(a) = alpha {
                f.push(("sr.alpha", toml::Value::Float(a)));
            }
            sr(&build_config(g, None, f)?, &source)
        }
    }
}

fn vqe(cfg: &ExperimentConfig) -> Result<()> {
    let spec = cfg.model.spec()?;
    let e0 = reference_energy(&spec)?;
    let states = vqe_states(
        &spec,
        &cfg.vqe.layers,
        &cfg.vqe.options(),
        cfg.vqe.transfer_from,
        e0,
    )?;
    let mut out = Output::new(&cfg.output_dir)?;
    let seeds = cfg.seeds();
    for v in &states {
        let store = sample_state(
            v.state.as_ref().expect("state kept"),
            cfg.vqe.samples,
            derive_seed(seeds.sampling, v.layers as u64),
            &spec,
            Some(v.layers),
        )?;
        let name = format!("{}.txt", v.label());
        store.save(&out.path(&name))?;
        out.register(&name);
        println!(
            "{} layers: energy {:.10} (error {:.3e})",
            v.layers, v.energy, v.energy_error
        );
    }
    out.record("reference_energy", e0);
    out.record("vqe", &states);
    out.finish("vqe", cfg)?;
    Ok(())
}

fn samples(g: &Global, op: SamplesOp) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    match op {
        SamplesOp::Filter { input, output } => {
            let store = SampleStore::load(&input)?;
            let (kept, r) = postselect(&store, store.metadata().constraint)?;
            kept.save(&output)?;
            println!("kept {} of {} samples ({:.4})", kept.len(), store.len(), r);
        }
        SamplesOp::Concat {
            input,
            output,
            factor,
            count,
        } => {
            let store = SampleStore::load(&input)?;
            let seed = derive_seed(
                derive_seed(seed, qevmc::rng::component::CONCAT),
                factor as u64,
            );
            concatenate(&store, factor, count, seed)?.save(&output)?;
        }
        SamplesOp::Mix {
            input,
            output,
            epsilon,
            count,
        } => {
            let store = SampleStore::load(&input)?;
            let spec = NoisyMixtureSpec::new(epsilon, MixtureBase::Store(store))?;
            mix_with_uniform(
                &spec,
                count,
                derive_seed(seed, qevmc::rng::component::NOISE),
            )?
            .save(&output)?;
        }
    }
    Ok(())
}

fn initial_source(cfg: &ExperimentConfig, name: &str) -> Result<InitialSource> {
    let spec = cfg.model.spec()?;
    match name {
        "uniform" => Ok(InitialSource::uniform(&spec)),
        "slater" => Ok(InitialSource::Slater(SlaterDeterminant::half_filled(
            &spec,
        )?)),
        path => Ok(InitialSource::Store(Arc::new(SampleStore::load(
            Path::new(path),
        )?))),
    }
}

fn vmc(cfg: &ExperimentConfig, source: &str) -> Result<()> {
    let spec = cfg.model.spec()?;
    let src = initial_source(cfg, source)?;
    let mixer = Mixer::for_spec(&spec);
    let exact = reference_energy(&spec).ok();
    let mut out = Output::new(&cfg.output_dir)?;
    let result = match spec.model() {
        ModelKind::Hubbard => {
            let (c, _) = gutzwiller_c(cfg, &spec)?;
            out.record("gutzwiller_c", c);
            let wf = GutzwillerWF::new(c, SlaterDeterminant::half_filled(&spec)?);
            run(&cfg.chain, &wf, &mixer, &spec, &src)?
        }
        ModelKind::Tfi => {
            let path = cfg.wavefunction.nqs.as_ref().ok_or_else(|| {
                Error::Config(
                    "wavefunction.nqs: TFI chains need a weight file (see `qevmc sr train`)".into(),
                )
            })?;
            run(&cfg.chain, &NqsWF::load(path)?, &mixer, &spec, &src)?
        }
    };
    out.write("vmc.csv", &trace_csv(&result.trace, exact))?;
    if let Some(last) = result.final_energy() {
        println!("energy {:.10} ± {:.3e}", last.mean_energy, last.sem);
        out.record("final_energy", last.mean_energy);
        out.record("final_sem", last.sem);
    }
    if let Some(e) = exact {
        out.record("exact_energy", e);
    }
    out.record("source", source);
    out.record("self_loops", result.self_loops);
    out.finish("vmc", cfg)?;
    Ok(())
}

fn sr(cfg: &ExperimentConfig, source: &str) -> Result<()> {
    let spec = cfg.model.spec()?;
    let src = match source {
        "uniform" => SrSource::Uniform,
        path => SrSource::Store(Arc::new(SampleStore::load(Path::new(path))?)),
    };
    let (trace, wf) = train(&cfg.sr, &spec, &src)?;
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("sr.csv", &trace.csv())?;
    wf.save(&out.path("nqs.nqs"))?;
    out.register("nqs.nqs");
    out.record("final_energy", trace.final_energy);
    out.record("final_relative_error", trace.final_relative_error);
    out.record("aborted", trace.aborted);
    if trace.aborted {
        log::warn!("training diverged and was stopped");
    }
    match (trace.final_energy, trace.final_relative_error) {
        (Some(e), Some(r)) => println!("final energy {e:.10} (relative error {r:.3e})"),
        (Some(e), None) => println!("final energy {e:.10}"),
        _ => println!("no iterations run"),
    }
    out.finish("sr", cfg)?;
    Ok(())
}
