//! Classically evaluable trial states: the Gutzwiller-projected Slater
//! determinant and the real-weight restricted Boltzmann machine.

mod gutzwiller;
mod nqs;
mod slater;

pub use gutzwiller::{GutzwillerWF, GutzwillerWalker, SCRATCH_LIMIT};
pub use nqs::{NqsWF, NqsWalker};
pub use slater::{slater_distribution, SlaterDeterminant};

use crate::engine::LinearOperator;
use crate::error::{Error, Result};
use crate::models::{
    build_hamiltonian, hop_sign, BasisState, HamiltonianSpec, ModelKind, SectorBasis,
};

/// `log|ψ|` together with the sign of `ψ`. A zero amplitude has
/// `log_abs = -∞` and `sign = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogAmplitude {
    pub log_abs: f64,
    pub sign: f64,
}

impl LogAmplitude {
    pub const ZERO: Self = Self {
        log_abs: f64::NEG_INFINITY,
        sign: 0.0,
    };

    pub fn positive(log_abs: f64) -> Self {
        Self { log_abs, sign: 1.0 }
    }

    pub fn from_value(v: f64) -> Self {
        if v == 0.0 || !v.is_finite() {
            Self::ZERO
        } else {
            Self {
                log_abs: v.abs().ln(),
                sign: v.signum(),
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0.0
    }

    pub fn value(&self) -> f64 {
        self.sign * self.log_abs.exp()
    }

    /// `ψ(self) / ψ(other)`.
    pub fn ratio_to(&self, other: &Self) -> f64 {
        self.sign * other.sign * (self.log_abs - other.log_abs).exp()
    }
}

/// One mixer move applied to a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Stay,
    Flip(usize),
    /// Moves a particle from bit `from` (occupied) to bit `to` (empty).
    Hop {
        from: usize,
        to: usize,
    },
}

impl Move {
    pub fn apply(self, x: &BasisState) -> BasisState {
        match self {
            Move::Stay => *x,
            Move::Flip(j) => x.flip(j),
            Move::Hop { from, to } => x.flip(from).flip(to),
        }
    }

    /// The single move taking `x` to `y`, if there is one.
    pub fn between(x: &BasisState, y: &BasisState) -> Option<Move> {
        let diff = x.bits() ^ y.bits();
        match diff.count_ones() {
            0 => Some(Move::Stay),
            1 => Some(Move::Flip(diff.trailing_zeros() as usize)),
            2 => {
                let a = diff.trailing_zeros() as usize;
                let b = 127 - diff.leading_zeros() as usize;
                match (x.get(a), x.get(b)) {
                    (true, false) => Some(Move::Hop { from: a, to: b }),
                    (false, true) => Some(Move::Hop { from: b, to: a }),
                    _ => None,
                }
            }
            _ => None,
        }
    }
}

/// A trial state with per-chain incremental caches.
pub trait Wavefunction: Send + Sync {
    type Walker: Clone + Send;

    fn model(&self) -> ModelKind;
    fn width(&self) -> usize;

    /// Unnormalized `log|ψ(x)|` and sign.
    fn log_amplitude(&self, x: &BasisState) -> LogAmplitude;

    /// Cache for a chain standing on `x`; fails if `ψ(x) = 0`.
    fn walker(&self, x: BasisState) -> Result<Self::Walker>;

    fn state(&self, w: &Self::Walker) -> BasisState;

    /// Cached log-amplitude of the walker's configuration.
    fn cached(&self, w: &Self::Walker) -> LogAmplitude;

    /// `ψ(mv(x)) / ψ(x)`.
    fn move_ratio(&self, w: &Self::Walker, mv: Move) -> f64;

    /// Moves the walker, reusing the ratio already computed for `mv`.
    fn accept(&self, w: &mut Self::Walker, mv: Move, ratio: f64);

    /// `E_loc(x) = Σ_y H_xy ψ(y)/ψ(x)`.
    fn local_energy(&self, w: &Self::Walker, spec: &HamiltonianSpec) -> f64 {
        let x = self.state(w);
        let mut e = spec.diagonal(&x);
        match spec.model() {
            ModelKind::Hubbard => {
                let l = spec.sites();
                for offset in [0, l] {
                    for &(i, j) in spec.bonds() {
                        let (a, b) = (i + offset, j + offset);
                        let (from, to) = match (x.get(a), x.get(b)) {
                            (true, false) => (a, b),
                            (false, true) => (b, a),
                            _ => continue,
                        };
                        let r = self.move_ratio(w, Move::Hop { from, to });
                        e -= hop_sign(x.bits(), a, b) * r;
                    }
                }
            }
            ModelKind::Tfi => {
                for j in 0..spec.sites() {
                    e -= spec.h * self.move_ratio(w, Move::Flip(j));
                }
            }
        }
        e
    }
}

/// `ψ(y)/ψ(x)`; `ψ(x)` must be nonzero.
pub fn ratio<W: Wavefunction>(wf: &W, x: &BasisState, y: &BasisState) -> Result<f64> {
    match Move::between(x, y) {
        Some(mv) => {
            let w = wf.walker(*x)?;
            Ok(wf.move_ratio(&w, mv))
        }
        None => {
            let lx = wf.log_amplitude(x);
            if lx.is_zero() {
                return Err(Error::ZeroAmplitude(x.to_string()));
            }
            Ok(wf.log_amplitude(y).ratio_to(&lx))
        }
    }
}

/// Local energy at a single configuration.
pub fn local_energy<W: Wavefunction>(
    wf: &W,
    spec: &HamiltonianSpec,
    x: &BasisState,
) -> Result<f64> {
    let w = wf.walker(*x)?;
    Ok(wf.local_energy(&w, spec))
}

/// Normalized real amplitudes over an enumerable basis.
pub fn exact_amplitudes<W: Wavefunction>(wf: &W, basis: &SectorBasis) -> Result<Vec<f64>> {
    if basis.width() != wf.width() {
        return Err(Error::BasisMismatch(format!(
            "basis width {} for a width-{} wavefunction",
            basis.width(),
            wf.width()
        )));
    }
    let logs: Vec<LogAmplitude> = basis.iter().map(|x| wf.log_amplitude(&x)).collect();
    let top = logs
        .iter()
        .map(|l| l.log_abs)
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::ZeroAmplitude("every state in the sector".into()));
    }
    let mut amps: Vec<f64> = logs
        .iter()
        .map(|l| l.sign * (l.log_abs - top).exp())
        .collect();
    let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    Ok(amps)
}

/// `|ψ(x)|²/⟨ψ|ψ⟩` over an enumerable basis.
pub fn exact_distribution<W: Wavefunction>(wf: &W, basis: &SectorBasis) -> Result<Vec<f64>> {
    Ok(exact_amplitudes(wf, basis)?
        .into_iter()
        .map(|a| a * a)
        .collect())
}

/// `⟨ψ|H|ψ⟩/⟨ψ|ψ⟩` by full enumeration.
pub fn exact_energy<W: Wavefunction>(
    wf: &W,
    spec: &HamiltonianSpec,
    basis: &SectorBasis,
) -> Result<f64> {
    let amps = exact_amplitudes(wf, basis)?;
    let h = build_hamiltonian(spec, basis)?;
    let mut hv = vec![0.0; amps.len()];
    h.apply(&amps, &mut hv);
    Ok(amps.iter().zip(&hv).map(|(a, b)| a * b).sum())
}

/// `ln(2 cosh t)` without overflow.
#[inline]
pub fn log_2cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p()
}
