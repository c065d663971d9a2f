//! Sparse linear-algebra kernel: operator action, ground states, real-time
//! evolution under Hamiltonian pieces, and exact expectation values.

mod eigen;
mod evolve;
mod sparse;

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::{hamiltonian_operator, BasisState, HamiltonianSpec, SectorBasis};

pub use eigen::{ground_energy, ground_state, lanczos_lowest, LanczosOptions};
pub(crate) use evolve::evolve_flip_sum;
pub use evolve::{evolve, evolve_in_place, KRYLOV_DIM, KRYLOV_TOL};
pub use sparse::{SparseOperator, Structure};

/// Anything that can act on a vector.
pub trait LinearOperator: Sync + Send {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn apply_complex(&self, x: &[Complex64], y: &mut [Complex64]);
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
    fn apply_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        (**self).apply_complex(x, y)
    }
}

/// Exact ground energy of a model in its natural sector: closed form for open
/// TFI chains, Lanczos otherwise.
pub fn reference_energy(spec: &HamiltonianSpec) -> Result<f64> {
    if let Some(e) = spec.free_fermion_energy() {
        return Ok(e);
    }
    let basis = SectorBasis::enumerate(spec, spec.default_constraint())?;
    ground_energy(hamiltonian_operator(spec, &basis)?.as_ref())
}

/// Complex amplitudes over a sector basis.
#[derive(Clone, Debug)]
pub struct StateVector {
    amps: Vec<Complex64>,
    basis: Arc<SectorBasis>,
}

impl StateVector {
    pub fn new(basis: Arc<SectorBasis>, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                found: amps.len(),
            });
        }
        Ok(Self { amps, basis })
    }

    pub fn from_real(basis: Arc<SectorBasis>, amps: &[f64]) -> Result<Self> {
        Self::new(
            basis,
            amps.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
        )
    }

    pub fn basis_state(basis: Arc<SectorBasis>, x: &BasisState) -> Result<Self> {
        let k = basis
            .index(x)
            .ok_or_else(|| Error::BasisMismatch(format!("{x} is not in the sector")))?;
        let mut amps = vec![Complex64::new(0.0, 0.0); basis.len()];
        amps[k] = Complex64::new(1.0, 0.0);
        Self::new(basis, amps)
    }

    pub fn uniform(basis: Arc<SectorBasis>) -> Self {
        let a = Complex64::new(1.0 / (basis.len() as f64).sqrt(), 0.0);
        Self {
            amps: vec![a; basis.len()],
            basis,
        }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        self.amps.iter_mut().for_each(|a| *a /= n);
    }

    /// Measurement distribution `|⟨x|ψ⟩|²`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn scale(&mut self, factor: Complex64) {
        self.amps.iter_mut().for_each(|a| *a *= factor);
    }
}

/// `⟨v|A|v⟩` for a normalized `v`.
pub fn expectation<A: LinearOperator + ?Sized>(op: &A, vec: &StateVector) -> Result<f64> {
    expectation_raw(op, vec.amplitudes())
}

pub(crate) fn expectation_raw<A: LinearOperator + ?Sized>(
    op: &A,
    amps: &[Complex64],
) -> Result<f64> {
    if op.dim() != amps.len() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: amps.len(),
        });
    }
    let mut hv = vec![Complex64::new(0.0, 0.0); amps.len()];
    op.apply_complex(amps, &mut hv);
    let e: Complex64 = amps.iter().zip(&hv).map(|(a, b)| a.conj() * b).sum();
    if e.im.abs() > 1e-10 * e.re.abs().max(1.0) {
        return Err(Error::NotHermitian(e.im));
    }
    Ok(e.re)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
