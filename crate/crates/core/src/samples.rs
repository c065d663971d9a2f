//! Sample stores: persistence, postselection, noise mixtures and
//! concatenation of small-system samples into larger systems.
//!
//! File layout (UTF-8):
//!
//! ```text
//! QEVMC-SAMPLES v1
//! model=hubbard
//! rows=1
//! cols=8
//! boundary=open
//! constraint=fixed-fill:4,4
//! source=vqe-sim
//! samples=2
//! seed=7
//! layers=1
//!
//! 01100110|00011010
//! 10100110|01011000
//! ```
//!
//! Hubbard samples are written as up-sector bits, `|`, down-sector bits, site
//! 0 leftmost. Spin samples are one bit per site. Keys starting with `x-` are
//! free-form annotations; any other unknown key is rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    BasisState, Boundary, HamiltonianSpec, LatticeSpec, ModelKind, SectorBasis, SectorConstraint,
};
use crate::rng::stream_rng;

const MAGIC: &str = "QEVMC-SAMPLES v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    VqeSim,
    External,
    Uniform,
    Slater,
}

impl SourceTag {
    pub fn label(&self) -> &'static str {
        match self {
            SourceTag::VqeSim => "vqe-sim",
            SourceTag::External => "external",
            SourceTag::Uniform => "uniform",
            SourceTag::Slater => "slater",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vqe-sim" => Some(SourceTag::VqeSim),
            "external" => Some(SourceTag::External),
            "uniform" => Some(SourceTag::Uniform),
            "slater" => Some(SourceTag::Slater),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetadata {
    pub lattice: LatticeSpec,
    pub constraint: SectorConstraint,
    pub source: SourceTag,
    pub seed: Option<u64>,
    pub layers: Option<usize>,
    pub extras: BTreeMap<String, String>,
}

impl SampleMetadata {
    pub fn new(lattice: LatticeSpec, constraint: SectorConstraint, source: SourceTag) -> Self {
        Self {
            lattice,
            constraint,
            source,
            seed: None,
            layers: None,
            extras: BTreeMap::new(),
        }
    }

    pub fn for_spec(spec: &HamiltonianSpec, source: SourceTag) -> Self {
        Self::new(spec.lattice, spec.default_constraint(), source)
    }

    pub fn width(&self) -> usize {
        self.lattice.width()
    }
}

/// Measurement bitstrings plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStore {
    meta: SampleMetadata,
    samples: Vec<BasisState>,
}

impl SampleStore {
    pub fn new(meta: SampleMetadata, samples: Vec<BasisState>) -> Result<Self> {
        let w = meta.width();
        if let Some(bad) = samples.iter().find(|s| s.width() != w) {
            return Err(Error::BasisMismatch(format!(
                "sample {bad} has width {}, store needs {w}",
                bad.width()
            )));
        }
        Ok(Self { meta, samples })
    }

    pub fn metadata(&self) -> &SampleMetadata {
        &self.meta
    }

    pub fn metadata_mut(&mut self) -> &mut SampleMetadata {
        &mut self.meta
    }

    pub fn samples(&self) -> &[BasisState] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn width(&self) -> usize {
        self.meta.width()
    }

    /// Fraction of samples that satisfy the store's own constraint.
    pub fn valid_fraction(&self) -> f64 {
        let sites = self.meta.lattice.sites();
        let ok = self
            .samples
            .iter()
            .filter(|x| self.meta.constraint.admits(x, sites))
            .count();
        ok as f64 / self.samples.len().max(1) as f64
    }

    /// Empirical distribution over `basis`. Samples outside the basis are a
    /// support violation.
    pub fn empirical_distribution(&self, basis: &SectorBasis) -> Result<Vec<f64>> {
        let mut p = vec![0.0; basis.len()];
        let w = 1.0 / self.samples.len().max(1) as f64;
        for x in &self.samples {
            let k = basis.index(x).ok_or_else(|| {
                Error::SupportViolation(format!("sample {x} is outside the sector"))
            })?;
            p[k] += w;
        }
        Ok(p)
    }

    pub fn render_sample(&self, x: &BasisState) -> String {
        render(x, &self.meta)
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "model={}", m.lattice.model.label());
        let _ = writeln!(out, "rows={}", m.lattice.rows);
        let _ = writeln!(out, "cols={}", m.lattice.cols);
        let boundary = match m.lattice.boundary {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
        };
        let _ = writeln!(out, "boundary={boundary}");
        let _ = writeln!(out, "constraint={}", m.constraint.label());
        let _ = writeln!(out, "source={}", m.source.label());
        let _ = writeln!(out, "samples={}", self.samples.len());
        if let Some(seed) = m.seed {
            let _ = writeln!(out, "seed={seed}");
        }
        if let Some(layers) = m.layers {
            let _ = writeln!(out, "layers={layers}");
        }
        for (k, v) in &m.extras {
            let _ = writeln!(out, "{k}={v}");
        }
        out.push('\n');
        for x in &self.samples {
            out.push_str(&render(x, m));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, other)) if other.starts_with("QEVMC-SAMPLES") => {
                return Err(err(n, format!("unsupported version `{other}`")))
            }
            Some((n, _)) => return Err(err(n, "missing QEVMC-SAMPLES header".into())),
            None => return Err(err(1, "empty file".into())),
        }
        let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut extras = BTreeMap::new();
        let mut header_end = 1;
        for (n, line) in lines.by_ref() {
            header_end = n;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(n, format!("expected key=value, found `{line}`")))?;
            match k {
                "model" | "rows" | "cols" | "boundary" | "constraint" | "source" | "samples"
                | "seed" | "layers" => {
                    if fields.insert(k, (n, v)).is_some() {
                        return Err(err(n, format!("duplicate key `{k}`")));
                    }
                }
                _ if k.starts_with("x-") => {
                    extras.insert(k.to_string(), v.to_string());
                }
                _ => return Err(err(n, format!("unknown key `{k}`"))),
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| err(header_end, format!("missing key `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            let (n, v) = get(k)?;
            v.parse()
                .map_err(|_| err(n, format!("`{k}` must be a non-negative integer")))
        };
        let (n, model) = get("model")?;
        let model =
            ModelKind::parse(model).ok_or_else(|| err(n, format!("unknown model `{model}`")))?;
        let boundary = match fields.get("boundary") {
            None | Some((_, "open")) => Boundary::Open,
            Some((_, "periodic")) => Boundary::Periodic,
            Some((n, b)) => return Err(err(*n, format!("unknown boundary `{b}`"))),
        };
        let lattice = LatticeSpec::new(num("rows")?, num("cols")?, boundary, model)
            .map_err(|e| err(header_end, e.to_string()))?;
        let (n, c) = get("constraint")?;
        let constraint =
            SectorConstraint::parse(c).ok_or_else(|| err(n, format!("bad constraint `{c}`")))?;
        match (model, constraint) {
            (ModelKind::Hubbard, SectorConstraint::FixedFill { .. })
            | (ModelKind::Tfi, SectorConstraint::AllSpins) => {}
            _ => {
                return Err(err(
                    n,
                    format!("constraint `{c}` does not fit model {}", model.label()),
                ))
            }
        }
        let (n, s) = get("source")?;
        let source = SourceTag::parse(s).ok_or_else(|| err(n, format!("unknown source `{s}`")))?;
        let count = num("samples")?;
        let seed = match fields.get("seed") {
            Some((n, v)) => Some(v.parse().map_err(|_| err(*n, "bad seed".into()))?),
            None => None,
        };
        let layers = if fields.contains_key("layers") {
            Some(num("layers")?)
        } else {
            None
        };
        let meta = SampleMetadata {
            lattice,
            constraint,
            source,
            seed,
            layers,
            extras,
        };
        let mut samples = Vec::with_capacity(count);
        let mut last = header_end;
        for (n, line) in lines {
            last = n;
            if line.is_empty() {
                continue;
            }
            if samples.len() == count {
                return Err(err(n, format!("more samples than the declared {count}")));
            }
            samples.push(parse_sample(line, &meta).map_err(|m| err(n, m))?);
        }
        if samples.len() != count {
            return Err(err(
                last + 1,
                format!(
                    "truncated: declared {count} samples, found {}",
                    samples.len()
                ),
            ));
        }
        Self::new(meta, samples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }
}

fn render(x: &BasisState, meta: &SampleMetadata) -> String {
    let s = x.to_bitstring();
    match meta.lattice.model {
        ModelKind::Hubbard => {
            let l = meta.lattice.sites();
            format!("{}|{}", &s[..l], &s[l..])
        }
        ModelKind::Tfi => s,
    }
}

fn parse_bits(s: &str, offset: usize, bits: &mut u128) -> std::result::Result<(), String> {
    for (i, ch) in s.chars().enumerate() {
        match ch {
            '0' => {}
            '1' => *bits |= 1u128 << (offset + i),
            _ => return Err(format!("invalid character `{ch}` in sample")),
        }
    }
    Ok(())
}

fn parse_sample(line: &str, meta: &SampleMetadata) -> std::result::Result<BasisState, String> {
    let l = meta.lattice.sites();
    let mut bits = 0u128;
    match meta.lattice.model {
        ModelKind::Hubbard => {
            let (up, down) = line
                .split_once('|')
                .ok_or_else(|| "Hubbard samples are written up|down".to_string())?;
            if up.len() != l || down.len() != l {
                return Err(format!(
                    "expected {l}|{l} bits, found {}|{}",
                    up.len(),
                    down.len()
                ));
            }
            parse_bits(up, 0, &mut bits)?;
            parse_bits(down, l, &mut bits)?;
        }
        ModelKind::Tfi => {
            if line.len() != l {
                return Err(format!("expected {l} bits, found {}", line.len()));
            }
            parse_bits(line, 0, &mut bits)?;
        }
    }
    Ok(BasisState::new(bits, meta.width()))
}

/// Keeps the samples with the requested per-spin particle numbers. Returns
/// the filtered store and the retained fraction.
pub fn postselect(store: &SampleStore, constraint: SectorConstraint) -> Result<(SampleStore, f64)> {
    let meta = store.metadata();
    if meta.lattice.model != ModelKind::Hubbard
        || !matches!(constraint, SectorConstraint::FixedFill { .. })
    {
        return Err(Error::Incompatible(
            "postselection needs a fixed-fill Hubbard store".into(),
        ));
    }
    let sites = meta.lattice.sites();
    let kept: Vec<BasisState> = store
        .samples()
        .iter()
        .copied()
        .filter(|x| constraint.admits(x, sites))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySelection);
    }
    let retention = kept.len() as f64 / store.len() as f64;
    let mut meta = meta.clone();
    meta.constraint = constraint;
    Ok((SampleStore::new(meta, kept)?, retention))
}

/// Uniform draw from a sector.
pub fn uniform_state<R: Rng + ?Sized>(
    lattice: &LatticeSpec,
    constraint: SectorConstraint,
    rng: &mut R,
) -> BasisState {
    let l = lattice.sites();
    match constraint {
        SectorConstraint::AllSpins => {
            let w = lattice.width();
            let mask = if w >= 128 {
                u128::MAX
            } else {
                (1u128 << w) - 1
            };
            BasisState::new(rng.gen::<u128>() & mask, w)
        }
        SectorConstraint::FixedFill { n_up, n_down } => {
            let up = sample_indices(rng, l, n_up).into_iter();
            let down = sample_indices(rng, l, n_down).into_iter().map(|i| i + l);
            BasisState::from_positions(2 * l, up.chain(down))
        }
    }
}

/// `n` uniform samples over the store's sector.
pub fn uniform_store(
    lattice: LatticeSpec,
    constraint: SectorConstraint,
    n: usize,
    seed: u64,
) -> Result<SampleStore> {
    let mut rng = stream_rng(seed, 0);
    let samples = (0..n)
        .map(|_| uniform_state(&lattice, constraint, &mut rng))
        .collect();
    let mut meta = SampleMetadata::new(lattice, constraint, SourceTag::Uniform);
    meta.seed = Some(seed);
    SampleStore::new(meta, samples)
}

/// Base law of a noisy mixture.
#[derive(Clone, Debug)]
pub enum MixtureBase {
    Store(SampleStore),
    Exact(Vec<f64>),
}

/// `(1−ε)·base + ε·uniform` over the base's sector.
#[derive(Clone, Debug)]
pub struct NoisyMixtureSpec {
    pub epsilon: f64,
    pub base: MixtureBase,
}

impl NoisyMixtureSpec {
    pub fn new(epsilon: f64, base: MixtureBase) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!(
                "noise fraction {epsilon} is outside [0, 1]"
            )));
        }
        Ok(Self { epsilon, base })
    }
}

/// Exact mixed probability vector `(1−ε)p + ε/dim`.
pub fn mix_exact(p: &[f64], epsilon: f64) -> Vec<f64> {
    let u = 1.0 / p.len() as f64;
    p.iter()
        .map(|&q| (1.0 - epsilon) * q + epsilon * u)
        .collect()
}

/// Sampled noisy mixture: each output comes from the base store with
/// probability `1−ε`, otherwise uniformly from the sector.
pub fn mix_with_uniform(spec: &NoisyMixtureSpec, n: usize, seed: u64) -> Result<SampleStore> {
    let store = match &spec.base {
        MixtureBase::Store(s) => s,
        MixtureBase::Exact(_) => {
            return Err(Error::Incompatible(
                "sampled mixtures need a sample-store base; use mix_exact for vectors".into(),
            ))
        }
    };
    if store.is_empty() && spec.epsilon < 1.0 {
        return Err(Error::SourceExhausted("base store is empty".into()));
    }
    let meta = store.metadata();
    let mut rng = stream_rng(seed, 0);
    let samples = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < spec.epsilon {
                uniform_state(&meta.lattice, meta.constraint, &mut rng)
            } else {
                store.samples()[rng.gen_range(0..store.len())]
            }
        })
        .collect();
    let mut out_meta = meta.clone();
    out_meta.seed = Some(seed);
    out_meta
        .extras
        .insert("x-noise-epsilon".into(), spec.epsilon.to_string());
    SampleStore::new(out_meta, samples)
}

/// Builds samples on a chain `factor` times longer by joining independent
/// draws (with replacement) from `store`. Spin samples are joined in site
/// order; Hubbard samples join the up sectors, then the down sectors.
pub fn concatenate(store: &SampleStore, factor: usize, n: usize, seed: u64) -> Result<SampleStore> {
    if factor < 2 {
        return Err(Error::Config(
            "concatenation factor must be at least 2".into(),
        ));
    }
    if store.is_empty() {
        return Err(Error::SourceExhausted(
            "cannot concatenate an empty store".into(),
        ));
    }
    let meta = store.metadata();
    if meta.lattice.rows != 1 || meta.lattice.boundary != Boundary::Open {
        return Err(Error::Incompatible(
            "concatenation needs an open 1D chain".into(),
        ));
    }
    let l = meta.lattice.sites();
    let big = LatticeSpec::new(1, l * factor, Boundary::Open, meta.lattice.model)?;
    let big_l = big.sites();
    let constraint = match meta.constraint {
        SectorConstraint::FixedFill { n_up, n_down } => SectorConstraint::FixedFill {
            n_up: n_up * factor,
            n_down: n_down * factor,
        },
        SectorConstraint::AllSpins => SectorConstraint::AllSpins,
    };
    let mut rng = stream_rng(seed, 0);
    let mask = (1u128 << l) - 1;
    let samples = (0..n)
        .map(|_| {
            let mut bits = 0u128;
            for block in 0..factor {
                let x = store.samples()[rng.gen_range(0..store.len())];
                match meta.lattice.model {
                    ModelKind::Tfi => bits |= x.bits() << (block * l),
                    ModelKind::Hubbard => {
                        bits |= (x.bits() & mask) << (block * l);
                        bits |= ((x.bits() >> l) & mask) << (big_l + block * l);
                    }
                }
            }
            BasisState::new(bits, big.width())
        })
        .collect();
    let mut out_meta = SampleMetadata::new(big, constraint, meta.source);
    out_meta.seed = Some(seed);
    out_meta.layers = meta.layers;
    out_meta.extras = meta.extras.clone();
    out_meta
        .extras
        .insert("x-concat-factor".into(), factor.to_string());
    out_meta
        .extras
        .insert("x-concat-source-sites".into(), l.to_string());
    SampleStore::new(out_meta, samples)
}

/// Path helper used by tools that write several stores side by side.
pub fn store_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.samples"))
}
