//! Bit-packed basis configurations and enumerated symmetry sectors.
//!
//! Hubbard layout: bits `0..L` hold spin-up occupations (site `i` is bit
//! `i`), bits `L..2L` hold spin-down occupations. TFI layout: bit `j` is spin
//! `j`, with bit value 1 meaning `σ^z = -1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{HamiltonianSpec, ModelKind};
use crate::error::{Error, Result};

/// Largest sector the enumerator will materialize.
pub const MAX_SECTOR_SIZE: u128 = 1 << 27;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisState {
    bits: u128,
    width: u8,
}

impl BasisState {
    pub const MAX_WIDTH: usize = 128;

    pub fn new(bits: u128, width: usize) -> Self {
        assert!(
            (1..=Self::MAX_WIDTH).contains(&width),
            "basis width {width} out of range"
        );
        debug_assert!(
            width == 128 || bits >> width == 0,
            "bits set beyond width {width}"
        );
        Self {
            bits,
            width: (width - 1) as u8,
        }
    }

    pub fn zeros(width: usize) -> Self {
        Self::new(0, width)
    }

    pub fn from_positions(width: usize, positions: impl IntoIterator<Item = usize>) -> Self {
        let bits = positions.into_iter().fold(0u128, |acc, p| {
            assert!(p < width, "position {p} outside width {width}");
            acc | (1u128 << p)
        });
        Self::new(bits, width)
    }

    /// Spins `±1` in TFI convention (bit 0 ↦ +1).
    pub fn from_spins(spins: &[i8]) -> Self {
        let bits = spins.iter().enumerate().fold(0u128, |acc, (j, &s)| {
            assert!(s == 1 || s == -1, "spin must be ±1");
            if s == -1 {
                acc | (1u128 << j)
            } else {
                acc
            }
        });
        Self::new(bits, spins.len())
    }

    #[inline]
    pub fn bits(&self) -> u128 {
        self.bits
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width as usize + 1
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.bits >> i) & 1 == 1
    }

    #[inline]
    pub fn flip(&self, i: usize) -> Self {
        Self {
            bits: self.bits ^ (1u128 << i),
            width: self.width,
        }
    }

    #[inline]
    pub fn with_bits(&self, bits: u128) -> Self {
        Self {
            bits,
            width: self.width,
        }
    }

    #[inline]
    pub fn count_ones(&self) -> u32 {
        self.bits.count_ones()
    }

    /// `σ^z` eigenvalue of spin `j`.
    #[inline]
    pub fn spin(&self, j: usize) -> f64 {
        if self.get(j) {
            -1.0
        } else {
            1.0
        }
    }

    pub fn to_spins(&self) -> Vec<i8> {
        (0..self.width())
            .map(|j| if self.get(j) { -1 } else { 1 })
            .collect()
    }

    /// Up-sector occupation word of a Hubbard state on `sites` sites.
    #[inline]
    pub fn up(&self, sites: usize) -> u128 {
        self.bits & low_mask(sites)
    }

    #[inline]
    pub fn down(&self, sites: usize) -> u128 {
        (self.bits >> sites) & low_mask(sites)
    }

    pub fn hamming(&self, other: &Self) -> u32 {
        (self.bits ^ other.bits).count_ones()
    }

    /// ASCII rendering with bit 0 leftmost.
    pub fn to_bitstring(&self) -> String {
        (0..self.width())
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Debug for BasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BasisState({})", self.to_bitstring())
    }
}

impl fmt::Display for BasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bitstring())
    }
}

#[inline]
pub(crate) fn low_mask(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

/// Number of doubly occupied sites `Σ_k n_{k↑} n_{k↓}`.
#[inline]
pub fn double_occupancy(x: &BasisState, sites: usize) -> u32 {
    (x.up(sites) & x.down(sites)).count_ones()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SectorConstraint {
    FixedFill { n_up: usize, n_down: usize },
    AllSpins,
}

impl SectorConstraint {
    pub fn half_filling(sites: usize) -> Self {
        SectorConstraint::FixedFill {
            n_up: sites / 2,
            n_down: sites / 2,
        }
    }

    /// Whether `x` satisfies the constraint for a model on `sites` sites.
    pub fn admits(&self, x: &BasisState, sites: usize) -> bool {
        match *self {
            SectorConstraint::FixedFill { n_up, n_down } => {
                x.up(sites).count_ones() as usize == n_up
                    && x.down(sites).count_ones() as usize == n_down
            }
            SectorConstraint::AllSpins => true,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            SectorConstraint::FixedFill { n_up, n_down } => format!("fixed-fill:{n_up},{n_down}"),
            SectorConstraint::AllSpins => "all-spins".to_string(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "all-spins" {
            return Some(SectorConstraint::AllSpins);
        }
        let rest = s.strip_prefix("fixed-fill:")?;
        let (u, d) = rest.split_once(',')?;
        Some(SectorConstraint::FixedFill {
            n_up: u.trim().parse().ok()?,
            n_down: d.trim().parse().ok()?,
        })
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Gosper's hack: next larger word with the same popcount.
#[inline]
fn next_combination(v: u128) -> u128 {
    let t = v | (v - 1);
    let tz = v.trailing_zeros() + 1;
    let low = (!t & t.wrapping_add(1)).wrapping_sub(1);
    t.wrapping_add(1) | if tz >= 128 { 0 } else { low >> tz }
}

fn combinations(n: usize, k: usize) -> Vec<u128> {
    let count = binomial(n, k) as usize;
    let mut out = Vec::with_capacity(count);
    let mut v = low_mask(k);
    for i in 0..count {
        out.push(v);
        if i + 1 < count {
            v = next_combination(v);
        }
    }
    out
}

/// Enumerated, index-addressable list of basis states in one sector. The
/// all-spins sector is implicit: state `k` is the bit word `k`.
#[derive(Clone, Debug)]
pub struct SectorBasis {
    states: Vec<u128>,
    size: usize,
    width: usize,
    sites: usize,
    constraint: SectorConstraint,
}

impl SectorBasis {
    pub fn enumerate(spec: &HamiltonianSpec, constraint: SectorConstraint) -> Result<Self> {
        let sites = spec.lattice.sites();
        match (spec.lattice.model, constraint) {
            (ModelKind::Hubbard, SectorConstraint::FixedFill { n_up, n_down }) => {
                if n_up > sites || n_down > sites {
                    return Err(Error::InconsistentConstraint(format!(
                        "n_up={n_up}, n_down={n_down} on {sites} sites"
                    )));
                }
                let size = binomial(sites, n_up) * binomial(sites, n_down);
                if size > MAX_SECTOR_SIZE {
                    return Err(Error::SectorTooLarge {
                        size,
                        limit: MAX_SECTOR_SIZE,
                    });
                }
                let ups = combinations(sites, n_up);
                let downs = combinations(sites, n_down);
                let mut states = Vec::with_capacity(size as usize);
                for &d in &downs {
                    for &u in &ups {
                        states.push((d << sites) | u);
                    }
                }
                Ok(Self {
                    size: states.len(),
                    states,
                    width: 2 * sites,
                    sites,
                    constraint,
                })
            }
            (ModelKind::Tfi, SectorConstraint::AllSpins) => {
                let size = if sites >= 127 {
                    u128::MAX
                } else {
                    1u128 << sites
                };
                if size > MAX_SECTOR_SIZE {
                    return Err(Error::SectorTooLarge {
                        size,
                        limit: MAX_SECTOR_SIZE,
                    });
                }
                Ok(Self {
                    states: Vec::new(),
                    size: size as usize,
                    width: sites,
                    sites,
                    constraint,
                })
            }
            (model, c) => Err(Error::InconsistentConstraint(format!(
                "{c:?} is not a valid sector for {model:?}"
            ))),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn constraint(&self) -> SectorConstraint {
        self.constraint
    }

    #[inline]
    pub fn state(&self, k: usize) -> BasisState {
        match self.constraint {
            SectorConstraint::AllSpins => {
                assert!(k < self.size, "index {k} out of range");
                BasisState::new(k as u128, self.width)
            }
            SectorConstraint::FixedFill { .. } => BasisState::new(self.states[k], self.width),
        }
    }

    /// Packed bit words in basis order.
    pub fn raw_states(&self) -> Vec<u128> {
        (0..self.size).map(|k| self.state(k).bits()).collect()
    }

    /// Ordinal of `x`, if it belongs to the sector.
    #[inline]
    pub fn index(&self, x: &BasisState) -> Option<usize> {
        if x.width() != self.width {
            return None;
        }
        match self.constraint {
            SectorConstraint::AllSpins => {
                let k = x.bits() as usize;
                (k < self.size).then_some(k)
            }
            SectorConstraint::FixedFill { .. } => self.states.binary_search(&x.bits()).ok(),
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = BasisState> + '_ {
        (0..self.size).map(move |k| self.state(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::HamiltonianSpec;

    #[test]
    fn hubbard_half_filling_sizes() {
        let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
        let b = SectorBasis::enumerate(&spec, SectorConstraint::half_filling(4)).unwrap();
        assert_eq!(b.len(), 36);
        let spec = HamiltonianSpec::hubbard(1, 8, 4.0).unwrap();
        let b = SectorBasis::enumerate(&spec, SectorConstraint::half_filling(8)).unwrap();
        assert_eq!(b.len(), 4900);
    }

    #[test]
    fn sector_matches_brute_force_filter() {
        let spec = HamiltonianSpec::hubbard(1, 5, 4.0).unwrap();
        let c = SectorConstraint::FixedFill { n_up: 2, n_down: 3 };
        let b = SectorBasis::enumerate(&spec, c).unwrap();
        let brute: Vec<u128> = (0u128..1 << 10)
            .filter(|&v| c.admits(&BasisState::new(v, 10), 5))
            .collect();
        assert_eq!(b.raw_states(), brute);
        for (k, x) in b.iter().enumerate() {
            assert_eq!(b.index(&x), Some(k));
        }
    }

    #[test]
    fn tfi_all_spins() {
        let spec = HamiltonianSpec::tfi(2, 1.0, 1.0).unwrap();
        let b = SectorBasis::enumerate(&spec, SectorConstraint::AllSpins).unwrap();
        let strings: Vec<_> = b.iter().map(|x| x.to_bitstring()).collect();
        assert_eq!(strings, ["00", "10", "01", "11"]);
    }

    #[test]
    fn sector_errors() {
        let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
        let err = SectorBasis::enumerate(&spec, SectorConstraint::FixedFill { n_up: 5, n_down: 0 });
        assert!(matches!(err, Err(Error::InconsistentConstraint(_))));
        let spec = HamiltonianSpec::tfi(30, 1.0, 1.0).unwrap();
        assert!(matches!(
            SectorBasis::enumerate(&spec, SectorConstraint::AllSpins),
            Err(Error::SectorTooLarge { .. })
        ));
    }

    #[test]
    fn empty_and_full_combinations() {
        assert_eq!(combinations(4, 0), vec![0]);
        assert_eq!(combinations(4, 4), vec![0b1111]);
        assert_eq!(combinations(64, 1).len(), 64);
        assert_eq!(combinations(6, 3).len(), 20);
    }

    #[test]
    fn double_occupancy_counts() {
        let x = BasisState::from_positions(8, [0, 1, 4, 6]);
        assert_eq!(double_occupancy(&x, 4), 1);
        assert_eq!(double_occupancy(&BasisState::zeros(8), 4), 0);
        assert_eq!(double_occupancy(&BasisState::new(0xff, 8), 4), 4);
    }

    #[test]
    fn spin_round_trip() {
        let s = [1i8, -1, -1, 1, -1];
        let x = BasisState::from_spins(&s);
        assert_eq!(x.to_spins(), s);
        assert_eq!(x.to_bitstring(), "01101");
    }
}
