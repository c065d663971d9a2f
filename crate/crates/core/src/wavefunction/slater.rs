use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use super::LogAmplitude;
use crate::error::{Error, Result};
use crate::models::{BasisState, HamiltonianSpec, ModelKind, SectorBasis, SectorConstraint};

/// Product of one Slater determinant per spin sector. Columns are orbitals,
/// rows are sites.
#[derive(Clone, Debug)]
pub struct SlaterDeterminant {
    sites: usize,
    up: DMatrix<f64>,
    down: DMatrix<f64>,
    orbital_energies: Vec<f64>,
}

impl SlaterDeterminant {
    /// Ground state of the hopping part with `n_up`/`n_down` electrons.
    ///
    /// Orbitals are taken in ascending single-particle energy. Within a
    /// degenerate shell they are ordered by the index of their
    /// largest-magnitude component, and each is signed so that component is
    /// positive.
    pub fn hopping_ground_state(
        spec: &HamiltonianSpec,
        n_up: usize,
        n_down: usize,
    ) -> Result<Self> {
        if spec.model() != ModelKind::Hubbard {
            return Err(Error::Incompatible(
                "Slater determinants need a Hubbard model".into(),
            ));
        }
        let l = spec.sites();
        if n_up > l || n_down > l {
            return Err(Error::InconsistentConstraint(format!(
                "{n_up}/{n_down} electrons on {l} sites"
            )));
        }
        let mut t = DMatrix::zeros(l, l);
        for &(i, j) in spec.bonds() {
            t[(i, j)] -= 1.0;
            t[(j, i)] -= 1.0;
        }
        let eig = SymmetricEigen::new(t);
        let mut orbitals: Vec<(f64, usize, Vec<f64>)> = (0..l)
            .map(|k| {
                let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
                let (peak, _) = v.iter().enumerate().fold((0, 0.0), |(bi, bv), (i, &x)| {
                    if x.abs() > bv + 1e-12 {
                        (i, x.abs())
                    } else {
                        (bi, bv)
                    }
                });
                if v[peak] < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                (eig.eigenvalues[k], peak, v)
            })
            .collect();
        orbitals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // group near-equal energies, then order each shell by peak site
        let mut start = 0;
        while start < l {
            let mut end = start + 1;
            while end < l && (orbitals[end].0 - orbitals[start].0).abs() < 1e-9 {
                end += 1;
            }
            orbitals[start..end].sort_by_key(|o| o.1);
            start = end;
        }
        let take = |n: usize| DMatrix::from_fn(l, n, |i, k| orbitals[k].2[i]);
        Ok(Self {
            sites: l,
            up: take(n_up),
            down: take(n_down),
            orbital_energies: orbitals.iter().map(|o| o.0).collect(),
        })
    }

    /// Half-filled hopping ground state.
    pub fn half_filled(spec: &HamiltonianSpec) -> Result<Self> {
        match spec.default_constraint() {
            SectorConstraint::FixedFill { n_up, n_down } => {
                Self::hopping_ground_state(spec, n_up, n_down)
            }
            SectorConstraint::AllSpins => {
                Err(Error::Incompatible("spin model has no filling".into()))
            }
        }
    }

    pub fn from_orbitals(up: DMatrix<f64>, down: DMatrix<f64>) -> Result<Self> {
        if up.nrows() != down.nrows() {
            return Err(Error::DimensionMismatch {
                expected: up.nrows(),
                found: down.nrows(),
            });
        }
        Ok(Self {
            sites: up.nrows(),
            up,
            down,
            orbital_energies: Vec::new(),
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn n_up(&self) -> usize {
        self.up.ncols()
    }

    pub fn n_down(&self) -> usize {
        self.down.ncols()
    }

    pub fn orbitals_up(&self) -> &DMatrix<f64> {
        &self.up
    }

    pub fn orbitals_down(&self) -> &DMatrix<f64> {
        &self.down
    }

    pub(crate) fn sector(&self, down: bool) -> &DMatrix<f64> {
        if down {
            &self.down
        } else {
            &self.up
        }
    }

    pub fn constraint(&self) -> SectorConstraint {
        SectorConstraint::FixedFill {
            n_up: self.n_up(),
            n_down: self.n_down(),
        }
    }

    /// Sum of occupied single-particle energies, i.e. the hopping energy.
    pub fn hopping_energy(&self) -> f64 {
        let e = &self.orbital_energies;
        e.iter().take(self.n_up()).sum::<f64>() + e.iter().take(self.n_down()).sum::<f64>()
    }

    /// `det_up(x) · det_down(x)` over the rows of occupied sites.
    pub fn amplitude(&self, x: &BasisState) -> f64 {
        let l = self.sites;
        let up = x.up(l);
        let down = x.down(l);
        if up.count_ones() as usize != self.n_up() || down.count_ones() as usize != self.n_down() {
            return 0.0;
        }
        sector_det(&self.up, up) * sector_det(&self.down, down)
    }

    pub fn log_amplitude(&self, x: &BasisState) -> LogAmplitude {
        LogAmplitude::from_value(self.amplitude(x))
    }

    /// Mean occupation of each bit: diagonal of the orbital projectors.
    pub fn occupations(&self) -> Vec<f64> {
        (0..2 * self.sites)
            .map(|b| {
                let m = if b < self.sites { &self.up } else { &self.down };
                m.row(b % self.sites).norm_squared()
            })
            .collect()
    }

    /// Direct draw from `|det_up|²·|det_down|²`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BasisState> {
        let up = sample_projection_dpp(&self.up, rng)?;
        let down = sample_projection_dpp(&self.down, rng)?;
        let l = self.sites;
        Ok(BasisState::from_positions(
            2 * l,
            up.into_iter().chain(down.into_iter().map(|i| i + l)),
        ))
    }
}

/// Determinant of the rows of `phi` selected by `occ`, in ascending order.
pub(crate) fn sector_det(phi: &DMatrix<f64>, occ: u128) -> f64 {
    let k = phi.ncols();
    if k == 0 {
        return 1.0;
    }
    let rows = occupied(occ);
    let a = DMatrix::from_fn(k, k, |r, c| phi[(rows[r], c)]);
    a.determinant()
}

pub(crate) fn occupied(bits: u128) -> Vec<usize> {
    let mut out = Vec::with_capacity(bits.count_ones() as usize);
    let mut b = bits;
    while b != 0 {
        out.push(b.trailing_zeros() as usize);
        b &= b - 1;
    }
    out
}

/// Sequential sampling from the projection DPP with kernel `Φ Φᵀ`. Each step
/// picks a site with probability proportional to the squared distance of its
/// row from the span of the rows already chosen.
fn sample_projection_dpp<R: Rng + ?Sized>(phi: &DMatrix<f64>, rng: &mut R) -> Result<Vec<usize>> {
    let (l, k) = phi.shape();
    'attempt: for _ in 0..100 {
        let mut weights: Vec<f64> = (0..l).map(|i| phi.row(i).norm_squared()).collect();
        let mut span: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut chosen = Vec::with_capacity(k);
        for _ in 0..k {
            let total: f64 = weights.iter().sum();
            if total <= 1e-12 {
                continue 'attempt;
            }
            let mut u = rng.gen::<f64>() * total;
            let mut pick = l - 1;
            for (i, &w) in weights.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            if weights[pick] <= 1e-14 {
                continue 'attempt;
            }
            let mut v: Vec<f64> = phi.row(pick).iter().copied().collect();
            for e in &span {
                let c: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= n);
            for (i, w) in weights.iter_mut().enumerate() {
                let c: f64 = phi.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
                *w = (*w - c * c).max(0.0);
            }
            weights[pick] = 0.0;
            span.push(v);
            chosen.push(pick);
        }
        chosen.sort_unstable();
        return Ok(chosen);
    }
    Err(Error::Numerical(
        "determinantal sampler kept hitting empty branches".into(),
    ))
}

/// Exact `|ψ_SD(x)|²` over `basis`, normalized.
pub fn slater_distribution(sd: &SlaterDeterminant, basis: &SectorBasis) -> Result<Vec<f64>> {
    if basis.width() != 2 * sd.sites() {
        return Err(Error::BasisMismatch(format!(
            "basis width {} for {} sites",
            basis.width(),
            sd.sites()
        )));
    }
    let mut p: Vec<f64> = basis.iter().map(|x| sd.amplitude(&x).powi(2)).collect();
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroAmplitude("every state in the sector".into()));
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ground_state;
    use crate::models::build_term;
    use crate::models::HamiltonianTerm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orbitals_are_orthonormal() {
        let spec = HamiltonianSpec::hubbard(2, 4, 4.0).unwrap();
        let sd = SlaterDeterminant::half_filled(&spec).unwrap();
        let g = sd.orbitals_up().transpose() * sd.orbitals_up();
        assert!((g - DMatrix::identity(4, 4)).abs().max() < 1e-10);
    }

    #[test]
    fn two_site_single_electron_is_uniform() {
        let spec = HamiltonianSpec::hubbard(1, 2, 4.0).unwrap();
        let sd = SlaterDeterminant::hopping_ground_state(&spec, 1, 0).unwrap();
        let basis =
            SectorBasis::enumerate(&spec, SectorConstraint::FixedFill { n_up: 1, n_down: 0 })
                .unwrap();
        let p = slater_distribution(&sd, &basis).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-14 && (p[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn matches_exact_hopping_ground_state() {
        let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
        let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
        let hop = build_term(&spec, &basis, HamiltonianTerm::Hopping(None)).unwrap();
        let (e, v) = ground_state(&hop).unwrap();
        let sd = SlaterDeterminant::half_filled(&spec).unwrap();
        assert!((sd.hopping_energy() - e).abs() < 1e-10);
        let p = slater_distribution(&sd, &basis).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (pk, vk) in p.iter().zip(&v) {
            assert!((pk - vk * vk).abs() < 1e-10);
        }
        // amplitudes agree up to one global sign
        let amps: Vec<f64> = basis.iter().map(|x| sd.amplitude(&x)).collect();
        let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        let overlap: f64 = amps.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / norm;
        assert!((overlap.abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sampler_matches_exact_law_on_small_sector() {
        let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
        let basis = SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap();
        let sd = SlaterDeterminant::half_filled(&spec).unwrap();
        let p = slater_distribution(&sd, &basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut counts = vec![0usize; basis.len()];
        for _ in 0..n {
            counts[basis.index(&sd.sample(&mut rng).unwrap()).unwrap()] += 1;
        }
        let tvd: f64 = 0.5
            * counts
                .iter()
                .zip(&p)
                .map(|(&c, q)| (c as f64 / n as f64 - q).abs())
                .sum::<f64>();
        assert!(tvd < 0.015, "tvd {tvd}");
    }

    #[test]
    fn sampler_occupations_match_projector_diagonal() {
        let spec = HamiltonianSpec::hubbard(1, 16, 4.0).unwrap();
        let sd = SlaterDeterminant::half_filled(&spec).unwrap();
        let expected = sd.occupations();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut mean = vec![0.0; 32];
        for _ in 0..n {
            let x = sd.sample(&mut rng).unwrap();
            assert_eq!(x.up(16).count_ones(), 8);
            assert_eq!(x.down(16).count_ones(), 8);
            for (i, m) in mean.iter_mut().enumerate() {
                if x.get(i) {
                    *m += 1.0 / n as f64;
                }
            }
        }
        for (m, e) in mean.iter().zip(&expected) {
            assert!((m - e).abs() < 0.01, "{m} vs {e}");
        }
    }

    #[test]
    fn degenerate_shells_are_deterministic() {
        let spec = HamiltonianSpec::hubbard(2, 4, 4.0).unwrap();
        let a = SlaterDeterminant::half_filled(&spec).unwrap();
        let b = SlaterDeterminant::half_filled(&spec).unwrap();
        assert_eq!(a.orbitals_up(), b.orbitals_up());
        assert_eq!(a.orbitals_down(), b.orbitals_down());
    }
}
