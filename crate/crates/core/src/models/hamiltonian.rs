use num_complex::Complex64;
use rayon::prelude::*;

use super::basis::low_mask;
use super::{double_occupancy, HamiltonianSpec, ModelKind, SectorBasis, SectorConstraint};
use crate::engine::{LinearOperator, SparseOperator, Structure};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BondParity {
    Even,
    Odd,
}

impl BondParity {
    fn matches(self, site: usize) -> bool {
        match self {
            BondParity::Even => site % 2 == 0,
            BondParity::Odd => site % 2 == 1,
        }
    }
}

/// A piece of the Hamiltonian, as used by the layered ansatz.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HamiltonianTerm {
    Full,
    /// Hubbard hopping, optionally restricted to one bond parity class.
    Hopping(Option<BondParity>),
    /// Hubbard `U Σ n↑ n↓`.
    Onsite,
    /// Ising `-J Σ Z Z`, optionally restricted to one bond parity class.
    Ising(Option<BondParity>),
    /// Ising `-h Σ X`.
    Field,
}

/// Fermionic sign for moving an electron between bits `a` and `b` of the same
/// spin sector: parity of the occupied bits strictly between them.
#[inline]
pub fn hop_sign(bits: u128, a: usize, b: usize) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if hi - lo < 2 {
        return 1.0;
    }
    let between = (bits >> (lo + 1)) & low_mask(hi - lo - 1);
    if between.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// The site that names a bond for even/odd grouping: the left (or top) end,
/// which for a periodic wrap bond is the last site of the row.
fn bond_anchor(spec: &HamiltonianSpec, (i, j): (usize, usize)) -> usize {
    let cols = spec.lattice.cols;
    if i / cols == j / cols && j - i > 1 {
        j
    } else {
        i
    }
}

pub(crate) fn selected_bonds(
    spec: &HamiltonianSpec,
    parity: Option<BondParity>,
) -> Vec<(usize, usize)> {
    spec.bonds()
        .iter()
        .copied()
        .filter(|&b| parity.map_or(true, |p| p.matches(bond_anchor(spec, b))))
        .collect()
}

fn check_basis(spec: &HamiltonianSpec, basis: &SectorBasis) -> Result<()> {
    if basis.width() != spec.width() {
        return Err(Error::BasisMismatch(format!(
            "basis width {} but model needs {}",
            basis.width(),
            spec.width()
        )));
    }
    match (spec.model(), basis.constraint()) {
        (ModelKind::Hubbard, SectorConstraint::FixedFill { .. })
        | (ModelKind::Tfi, SectorConstraint::AllSpins) => Ok(()),
        (m, c) => Err(Error::BasisMismatch(format!("{c:?} basis for {m:?}"))),
    }
}

/// Full Hamiltonian restricted to `basis`.
pub fn build_hamiltonian(spec: &HamiltonianSpec, basis: &SectorBasis) -> Result<SparseOperator> {
    build_term(spec, basis, HamiltonianTerm::Full)
}

pub fn build_term(
    spec: &HamiltonianSpec,
    basis: &SectorBasis,
    term: HamiltonianTerm,
) -> Result<SparseOperator> {
    check_basis(spec, basis)?;
    let sites = spec.sites();
    let model = spec.model();
    match (model, term) {
        (ModelKind::Hubbard, HamiltonianTerm::Onsite) => Ok(SparseOperator::from_diagonal(
            basis
                .iter()
                .map(|x| spec.u * double_occupancy(&x, sites) as f64)
                .collect(),
        )),
        (ModelKind::Tfi, HamiltonianTerm::Ising(parity)) => {
            let bonds = selected_bonds(spec, parity);
            Ok(SparseOperator::from_diagonal(
                basis
                    .iter()
                    .map(|x| {
                        -spec.j
                            * bonds
                                .iter()
                                .map(|&(a, b)| x.spin(a) * x.spin(b))
                                .sum::<f64>()
                    })
                    .collect(),
            ))
        }
        (ModelKind::Tfi, HamiltonianTerm::Field) => {
            let rows = field_rows(basis, sites, -spec.h);
            let mut op = SparseOperator::from_rows(basis.len(), rows);
            op.set_structure(Structure::SiteFlipSum {
                sites,
                coefficient: -spec.h,
            });
            Ok(op)
        }
        (ModelKind::Hubbard, HamiltonianTerm::Hopping(parity)) => {
            let bonds = selected_bonds(spec, parity);
            let rows = hubbard_rows(basis, sites, &bonds, None);
            Ok(SparseOperator::from_rows(basis.len(), rows))
        }
        (ModelKind::Hubbard, HamiltonianTerm::Full) => {
            let rows = hubbard_rows(basis, sites, spec.bonds(), Some(spec.u));
            Ok(SparseOperator::from_rows(basis.len(), rows))
        }
        (ModelKind::Tfi, HamiltonianTerm::Full) => {
            let mut rows = field_rows(basis, sites, -spec.h);
            for (k, row) in rows.iter_mut().enumerate() {
                row.push((k, spec.diagonal(&basis.state(k))));
            }
            Ok(SparseOperator::from_rows(basis.len(), rows))
        }
        (m, t) => Err(Error::BasisMismatch(format!(
            "{t:?} is not a term of {m:?}"
        ))),
    }
}

fn field_rows(basis: &SectorBasis, sites: usize, coefficient: f64) -> Vec<Vec<(usize, f64)>> {
    (0..basis.len())
        .into_par_iter()
        .map(|k| {
            (0..sites)
                .map(|j| (k ^ (1usize << j), coefficient))
                .collect()
        })
        .collect()
}

fn hubbard_rows(
    basis: &SectorBasis,
    sites: usize,
    bonds: &[(usize, usize)],
    onsite: Option<f64>,
) -> Vec<Vec<(usize, f64)>> {
    (0..basis.len())
        .into_par_iter()
        .map(|k| {
            let x = basis.state(k);
            let mut row = Vec::with_capacity(4 * bonds.len() + 1);
            if let Some(u) = onsite {
                row.push((k, u * double_occupancy(&x, sites) as f64));
            }
            for offset in [0, sites] {
                for &(i, j) in bonds {
                    let (a, b) = (offset + i, offset + j);
                    if x.get(a) != x.get(b) {
                        let y = x.flip(a).flip(b);
                        let col = basis.index(&y).expect("hopping preserves the sector");
                        row.push((col, -hop_sign(x.bits(), a, b)));
                    }
                }
            }
            row
        })
        .collect()
}

/// Matrix-free TFI Hamiltonian over the full `2^N` space (index = bit word).
#[derive(Clone, Debug)]
pub struct TfiOperator {
    sites: usize,
    j: f64,
    h: f64,
    bonds: Vec<(usize, usize)>,
}

impl TfiOperator {
    pub fn new(spec: &HamiltonianSpec) -> Result<Self> {
        if spec.model() != ModelKind::Tfi {
            return Err(Error::BasisMismatch("TfiOperator needs a TFI model".into()));
        }
        if spec.sites() > 30 {
            return Err(Error::SizeLimit {
                size: spec.sites(),
                limit: 30,
            });
        }
        Ok(Self {
            sites: spec.sites(),
            j: spec.j,
            h: spec.h,
            bonds: spec.bonds().to_vec(),
        })
    }

    #[inline]
    fn diag(&self, x: usize) -> f64 {
        let mut zz = 0i32;
        for &(a, b) in &self.bonds {
            zz += if ((x >> a) ^ (x >> b)) & 1 == 0 {
                1
            } else {
                -1
            };
        }
        -self.j * zz as f64
    }
}

impl LinearOperator for TfiOperator {
    fn dim(&self) -> usize {
        1usize << self.sites
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(k, out)| {
            let mut acc = self.diag(k) * x[k];
            for s in 0..self.sites {
                acc -= self.h * x[k ^ (1 << s)];
            }
            *out = acc;
        });
    }

    fn apply_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        y.par_iter_mut().enumerate().for_each(|(k, out)| {
            let mut acc = x[k] * self.diag(k);
            for s in 0..self.sites {
                acc -= x[k ^ (1 << s)] * self.h;
            }
            *out = acc;
        });
    }
}

/// Full Hamiltonian as an operator: matrix-free for large TFI chains,
/// sparse otherwise.
pub fn hamiltonian_operator(
    spec: &HamiltonianSpec,
    basis: &SectorBasis,
) -> Result<Box<dyn LinearOperator>> {
    check_basis(spec, basis)?;
    if spec.model() == ModelKind::Tfi && spec.sites() > 16 {
        Ok(Box::new(TfiOperator::new(spec)?))
    } else {
        Ok(Box::new(build_hamiltonian(spec, basis)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ground_state;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn dense_ground(op: &SparseOperator) -> f64 {
        let m: DMatrix<f64> = op.to_dense();
        SymmetricEigen::new(m).eigenvalues.min()
    }

    #[test]
    fn two_spin_tfi_matrix() {
        let spec = HamiltonianSpec::tfi(2, 1.0, 1.0).unwrap();
        let basis = SectorBasis::enumerate(&spec, SectorConstraint::AllSpins).unwrap();
        let h = build_hamiltonian(&spec, &basis).unwrap();
        assert_eq!(h.diagonal(), vec![-1.0, 1.0, 1.0, -1.0]);
        let dense = h.to_dense();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                -1.0, -1.0, -1.0, 0.0, //
                -1.0, 1.0, 0.0, -1.0, //
                -1.0, 0.0, 1.0, -1.0, //
                0.0, -1.0, -1.0, -1.0,
            ],
        );
        assert_eq!(dense, expected);
        assert!((dense_ground(&h) + 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn two_site_hubbard_single_electron() {
        let spec = HamiltonianSpec::hubbard(1, 2, 3.7).unwrap();
        let basis =
            SectorBasis::enumerate(&spec, SectorConstraint::FixedFill { n_up: 1, n_down: 0 })
                .unwrap();
        let h = build_hamiltonian(&spec, &basis).unwrap();
        assert_eq!(
            h.to_dense(),
            DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])
        );
    }

    #[test]
    fn hermitian_and_sector_preserving() {
        for spec in [
            HamiltonianSpec::hubbard(1, 4, 4.0).unwrap(),
            HamiltonianSpec::hubbard(2, 3, 4.0).unwrap(),
            HamiltonianSpec::tfi(5, 1.0, 0.7).unwrap(),
        ] {
            let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
            let h = build_hamiltonian(&spec, &basis).unwrap();
            assert!(h.is_symmetric(0.0));
            let sites = spec.sites();
            for k in 0..h.dim() {
                let x = basis.state(k);
                for (c, _) in h.row(k) {
                    if c == k {
                        continue;
                    }
                    let y = basis.state(c);
                    match spec.model() {
                        ModelKind::Hubbard => {
                            assert_eq!(x.hamming(&y), 2);
                            assert_eq!(x.up(sites).count_ones(), y.up(sites).count_ones());
                            assert_eq!(x.down(sites).count_ones(), y.down(sites).count_ones());
                        }
                        ModelKind::Tfi => assert_eq!(x.hamming(&y), 1),
                    }
                }
            }
        }
    }

    #[test]
    fn jordan_wigner_sign_matches_operator_algebra() {
        // two occupied modes between 0 and 3
        let bits = 0b0111u128;
        assert_eq!(hop_sign(bits, 0, 3), 1.0);
        assert_eq!(hop_sign(0b0011, 0, 2), -1.0);
        assert_eq!(hop_sign(0b0001, 0, 1), 1.0);
    }

    #[test]
    fn hubbard_1x4_sparse_matches_dense() {
        let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
        let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
        let h = build_hamiltonian(&spec, &basis).unwrap();
        let dense = dense_ground(&h);
        let (e, _) = ground_state(&h).unwrap();
        assert!((e - dense).abs() < 1e-10);
    }

    #[test]
    fn terms_sum_to_full() {
        let spec = HamiltonianSpec::hubbard(2, 3, 2.5).unwrap();
        let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
        let full = build_hamiltonian(&spec, &basis).unwrap().to_dense();
        let parts = [
            HamiltonianTerm::Onsite,
            HamiltonianTerm::Hopping(Some(BondParity::Even)),
            HamiltonianTerm::Hopping(Some(BondParity::Odd)),
        ];
        let sum = parts
            .iter()
            .map(|&t| build_term(&spec, &basis, t).unwrap().to_dense())
            .fold(DMatrix::zeros(basis.len(), basis.len()), |a, b| a + b);
        assert!((sum - full).abs().max() < 1e-14);

        let spec = HamiltonianSpec::tfi(5, 0.8, 1.3).unwrap();
        let basis = SectorBasis::enumerate(&spec, SectorConstraint::AllSpins).unwrap();
        let full = build_hamiltonian(&spec, &basis).unwrap().to_dense();
        let parts = [
            HamiltonianTerm::Ising(Some(BondParity::Even)),
            HamiltonianTerm::Ising(Some(BondParity::Odd)),
            HamiltonianTerm::Field,
        ];
        let sum = parts
            .iter()
            .map(|&t| build_term(&spec, &basis, t).unwrap().to_dense())
            .fold(DMatrix::zeros(basis.len(), basis.len()), |a, b| a + b);
        assert!((sum - full).abs().max() < 1e-14);
    }

    #[test]
    fn matrix_free_tfi_agrees_with_sparse() {
        let spec = HamiltonianSpec::tfi(6, 0.9, 1.4).unwrap();
        let basis = SectorBasis::enumerate(&spec, SectorConstraint::AllSpins).unwrap();
        let sparse = build_hamiltonian(&spec, &basis).unwrap();
        let free = TfiOperator::new(&spec).unwrap();
        let v: Vec<f64> = (0..64)
            .map(|k| ((k * 37 % 11) as f64 - 5.0) / 7.0)
            .collect();
        let mut a = vec![0.0; 64];
        let mut b = vec![0.0; 64];
        sparse.apply(&v, &mut a);
        free.apply(&v, &mut b);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn term_mismatch_rejected() {
        let spec = HamiltonianSpec::tfi(3, 1.0, 1.0).unwrap();
        let basis = SectorBasis::enumerate(&spec, SectorConstraint::AllSpins).unwrap();
        assert!(build_term(&spec, &basis, HamiltonianTerm::Onsite).is_err());
        let hub = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
        assert!(build_hamiltonian(&hub, &basis).is_err());
    }
}
