//! Lattices, Hamiltonians and symmetry-sector bases for the Fermi-Hubbard and
//! transverse-field Ising models.

mod basis;
mod hamiltonian;
pub(crate) use hamiltonian::selected_bonds;

pub use basis::{double_occupancy, BasisState, SectorBasis, SectorConstraint, MAX_SECTOR_SIZE};
pub use hamiltonian::{
    build_hamiltonian, build_term, hamiltonian_operator, hop_sign, BondParity, HamiltonianTerm,
    TfiOperator,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Open,
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Hubbard,
    Tfi,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Hubbard => "hubbard",
            ModelKind::Tfi => "tfi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hubbard" => Some(ModelKind::Hubbard),
            "tfi" => Some(ModelKind::Tfi),
            _ => None,
        }
    }
}

/// Rectangular lattice; site `(r, c)` has index `r * cols + c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub rows: usize,
    pub cols: usize,
    pub boundary: Boundary,
    pub model: ModelKind,
}

impl LatticeSpec {
    pub fn new(rows: usize, cols: usize, boundary: Boundary, model: ModelKind) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols < 2 {
            return Err(Error::InvalidLattice(format!(
                "{rows}x{cols} needs at least two sites"
            )));
        }
        if boundary == Boundary::Periodic && (rows != 1 || cols < 3) {
            return Err(Error::InvalidLattice(
                "periodic boundaries are supported on 1D chains of at least 3 sites".into(),
            ));
        }
        let width = match model {
            ModelKind::Hubbard => 2 * rows * cols,
            ModelKind::Tfi => rows * cols,
        };
        if width > BasisState::MAX_WIDTH {
            return Err(Error::InvalidLattice(format!(
                "{width} bits exceed the {}-bit basis word",
                BasisState::MAX_WIDTH
            )));
        }
        Ok(Self {
            rows,
            cols,
            boundary,
            model,
        })
    }

    pub fn chain(n: usize, model: ModelKind) -> Result<Self> {
        Self::new(1, n, Boundary::Open, model)
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.rows * self.cols
    }

    /// Nearest-neighbour bonds `(i, j)` with `i < j`, horizontal bonds first.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut bonds = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols - 1 {
                bonds.push((r * self.cols + c, r * self.cols + c + 1));
            }
            if self.boundary == Boundary::Periodic {
                bonds.push((r * self.cols, r * self.cols + self.cols - 1));
            }
        }
        for r in 0..self.rows.saturating_sub(1) {
            for c in 0..self.cols {
                bonds.push((r * self.cols + c, (r + 1) * self.cols + c));
            }
        }
        bonds
    }

    /// Number of bits in a basis word for this lattice.
    pub fn width(&self) -> usize {
        match self.model {
            ModelKind::Hubbard => 2 * self.sites(),
            ModelKind::Tfi => self.sites(),
        }
    }
}

/// Model parameters. Hopping amplitude is fixed at 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub lattice: LatticeSpec,
    /// Hubbard onsite repulsion.
    pub u: f64,
    /// Ising coupling.
    pub j: f64,
    /// Transverse field.
    pub h: f64,
    #[serde(skip)]
    bonds: Vec<(usize, usize)>,
}

impl HamiltonianSpec {
    pub fn new(lattice: LatticeSpec, u: f64, j: f64, h: f64) -> Self {
        Self {
            bonds: lattice.bonds(),
            lattice,
            u,
            j,
            h,
        }
    }

    pub fn hubbard(rows: usize, cols: usize, u: f64) -> Result<Self> {
        let lattice = LatticeSpec::new(rows, cols, Boundary::Open, ModelKind::Hubbard)?;
        Ok(Self::new(lattice, u, 0.0, 0.0))
    }

    pub fn tfi(n: usize, j: f64, h: f64) -> Result<Self> {
        let lattice = LatticeSpec::chain(n, ModelKind::Tfi)?;
        Ok(Self::new(lattice, 0.0, j, h))
    }

    #[inline]
    pub fn model(&self) -> ModelKind {
        self.lattice.model
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.lattice.sites()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.lattice.width()
    }

    #[inline]
    pub fn bonds(&self) -> &[(usize, usize)] {
        &self.bonds
    }

    /// Natural sector: half filling for Hubbard, all spins for TFI.
    pub fn default_constraint(&self) -> SectorConstraint {
        match self.model() {
            ModelKind::Hubbard => SectorConstraint::half_filling(self.sites()),
            ModelKind::Tfi => SectorConstraint::AllSpins,
        }
    }

    /// Exact ground energy of an open TFI chain from the free-fermion
    /// mapping, `−Σ σ_k` over the singular values of the bidiagonal matrix
    /// with `h` on the diagonal and `J` above it. `None` for other models.
    pub fn free_fermion_energy(&self) -> Option<f64> {
        if self.model() != ModelKind::Tfi
            || self.lattice.rows != 1
            || self.lattice.boundary != Boundary::Open
        {
            return None;
        }
        let n = self.sites();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.h;
            if i + 1 < n {
                m[(i, i + 1)] = self.j;
            }
        }
        Some(-m.singular_values().sum())
    }

    /// Diagonal matrix element `⟨x|H|x⟩`.
    pub fn diagonal(&self, x: &BasisState) -> f64 {
        match self.model() {
            ModelKind::Hubbard => self.u * double_occupancy(x, self.sites()) as f64,
            ModelKind::Tfi => {
                let zz: f64 = self.bonds.iter().map(|&(a, b)| x.spin(a) * x.spin(b)).sum();
                -self.j * zz
            }
        }
    }
}
