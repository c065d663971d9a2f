//! Experiment configuration: a TOML file of `key = value` lines under
//! `[section]` headers. Unknown keys are rejected. Every component seed is
//! derived from the single top-level `seed`.
//!
//! ```toml
//! seed = 7
//! output_dir = "out/hubbard-1x4"
//!
//! [model]
//! kind = "hubbard"
//! rows = 1
//! cols = 4
//! u = 4.0
//!
//! [vqe]
//! layers = [2]
//!
//! [analysis]
//! steps = 200
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::ChainConfig;
use crate::models::{Boundary, HamiltonianSpec, LatticeSpec, ModelKind};
use crate::rng::{component, derive_seed};
use crate::sr::SrConfig;
use crate::vqe::{GradientMethod, OptimizeOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "one")]
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "open")]
    pub boundary: Boundary,
    #[serde(default = "default_u")]
    pub u: f64,
    #[serde(default = "unit")]
    pub j: f64,
    #[serde(default = "unit")]
    pub h: f64,
}

fn one() -> usize {
    1
}
fn open() -> Boundary {
    Boundary::Open
}
fn default_u() -> f64 {
    4.0
}
fn unit() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn spec(&self) -> Result<HamiltonianSpec> {
        let lattice = LatticeSpec::new(self.rows, self.cols, self.boundary, self.kind)?;
        Ok(HamiltonianSpec::new(lattice, self.u, self.j, self.h))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WavefunctionConfig {
    /// Gutzwiller parameter; absent means the energy minimizer on the grid.
    pub gutzwiller_c: Option<f64>,
    pub c_grid_step: f64,
    pub c_max: f64,
    /// Trained NQS weight file used as the chain target.
    pub nqs: Option<PathBuf>,
}

impl Default for WavefunctionConfig {
    fn default() -> Self {
        Self {
            gutzwiller_c: None,
            c_grid_step: 0.001,
            c_max: 3.0,
            nqs: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqeConfig {
    pub layers: Vec<usize>,
    pub samples: usize,
    pub restarts: usize,
    pub max_iters: u64,
    pub gradient: Option<GradientMethod>,
    /// Optimize on a chain of this many sites and reuse the angles.
    pub transfer_from: Option<usize>,
    #[serde(skip)]
    pub seed: u64,
}

impl VqeConfig {
    pub fn options(&self) -> OptimizeOptions {
        OptimizeOptions {
            restarts: self.restarts,
            seed: self.seed,
            gradient: self.gradient,
            max_iters: self.max_iters,
            warm_start: None,
        }
    }
}

impl Default for VqeConfig {
    fn default() -> Self {
        let opt = OptimizeOptions::default();
        Self {
            layers: vec![2],
            samples: 100_000,
            restarts: opt.restarts,
            max_iters: opt.max_iters,
            gradient: opt.gradient,
            transfer_from: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub steps: usize,
    /// Number of log-spaced TVD (or energy-error) targets.
    pub targets: usize,
    pub target_min: f64,
    /// Optional external sample file used as an extra initial distribution.
    pub external: Option<PathBuf>,
    /// Noise levels mixed into the first candidate source.
    pub noise: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            targets: 40,
            target_min: 1e-3,
            external: None,
            noise: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub wavefunction: WavefunctionConfig,
    #[serde(default)]
    pub vqe: VqeConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub sr: SrConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Component seeds derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub vqe: u64,
    pub sampling: u64,
    pub chains: u64,
    pub nqs_init: u64,
    pub sr: u64,
    pub noise: u64,
    pub concat: u64,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            vqe: derive_seed(master, component::VQE),
            sampling: derive_seed(master, component::SAMPLING),
            chains: derive_seed(master, component::CHAINS),
            nqs_init: derive_seed(master, component::NQS_INIT),
            sr: derive_seed(master, component::SR),
            noise: derive_seed(master, component::NOISE),
            concat: derive_seed(master, component::CONCAT),
        }
    }
}

impl ExperimentConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            seed: 0,
            output_dir: default_output(),
            model,
            wavefunction: WavefunctionConfig::default(),
            vqe: VqeConfig::default(),
            chain: ChainConfig::default(),
            sr: SrConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        cfg.resolve_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::new(self.seed)
    }

    /// Pushes the derived seeds into the component configurations.
    pub fn resolve_seeds(&mut self) {
        let s = self.seeds();
        self.vqe.seed = s.vqe;
        self.chain.seed = s.chains;
        self.sr.seed = s.sr;
    }

    /// Field-level checks; warnings go to the log.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::Config(format!("{name}: {msg}")));
        self.model.spec()?;
        if self.model.u < 0.0 {
            log::warn!("model.u = {} is attractive; accepted", self.model.u);
        }
        if self.chain.n_chains == 0 {
            return field("chain.n_chains", "must be at least 1");
        }
        if self.chain.thinning == 0 {
            return field("chain.thinning", "must be at least 1");
        }
        if self.vqe.layers.iter().any(|&l| l > 4) {
            return field("vqe.layers", "at most 4 layers are supported");
        }
        if self.vqe.samples == 0 {
            return field("vqe.samples", "must be at least 1");
        }
        if !(self.wavefunction.c_grid_step > 0.0) {
            return field("wavefunction.c_grid_step", "must be positive");
        }
        if self.analysis.noise.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return field("analysis.noise", "levels must lie in [0, 1]");
        }
        if !(self.analysis.target_min > 0.0) {
            return field("analysis.target_min", "must be positive");
        }
        if self.analysis.targets == 0 {
            return field("analysis.targets", "must be at least 1");
        }
        self.sr.validate()
    }

    /// Resolved configuration, every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
