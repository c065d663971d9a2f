//! Exact mixing analysis on enumerable sectors: the Metropolis transition
//! matrix, distribution trajectories, divergences, spectral gap, bound checks
//! and speedup factors.

use std::sync::Arc;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    expectation, lanczos_lowest, LanczosOptions, LinearOperator, SparseOperator, StateVector,
};
use crate::error::{Error, Result};
use crate::mcmc::Mixer;
use crate::models::{hamiltonian_operator, HamiltonianSpec, SectorBasis};
use crate::wavefunction::{exact_distribution, Move, Wavefunction};

/// Largest sector for which a transition matrix is built.
pub const TRANSITION_LIMIT: usize = 1 << 20;
/// Largest support on which λ₂ is found by dense diagonalization.
pub const DENSE_SPECTRUM_LIMIT: usize = 2048;
/// Tolerated drift of a distribution's total mass.
pub const MASS_TOL: f64 = 1e-12;

/// Metropolis kernel for `|ψ|²` restricted to the support of `ψ`.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    matrix: SparseOperator,
    basis: Arc<SectorBasis>,
    /// Basis indices of the support, ascending.
    support: Vec<usize>,
    pi: Vec<f64>,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `M(x,y) = P(x→y)·min{1, π(y)/π(x)}` for `y ≠ x`, remainder on the
/// diagonal.
pub fn transition_matrix<W: Wavefunction>(
    wf: &W,
    mixer: &Mixer,
    basis: Arc<SectorBasis>,
) -> Result<TransitionMatrix> {
    if basis.len() > TRANSITION_LIMIT {
        return Err(Error::SizeLimit {
            size: basis.len(),
            limit: TRANSITION_LIMIT,
        });
    }
    let p = exact_distribution(wf, &basis)?;
    let support: Vec<usize> = (0..p.len()).filter(|&k| p[k] > 0.0).collect();
    let mut position = vec![usize::MAX; p.len()];
    for (i, &k) in support.iter().enumerate() {
        position[k] = i;
    }
    let slots = mixer.n_slots();
    let weight = 1.0 / slots as f64;
    let rows: Vec<Vec<(usize, f64)>> = support
        .par_iter()
        .enumerate()
        .map(|(i, &k)| {
            let x = basis.state(k);
            let px = p[k];
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(slots + 1);
            for s in 0..slots {
                let mv = mixer.slot_move(&x, s);
                if mv == Move::Stay {
                    continue;
                }
                let y = mv.apply(&x);
                let Some(ky) = basis.index(&y) else { continue };
                let py = p[ky];
                if py == 0.0 {
                    continue;
                }
                let acc = if py >= px { 1.0 } else { py / px };
                row.push((position[ky], weight * acc));
            }
            row.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len() + 1);
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            let diag = 1.0 - compensated_sum(merged.iter().map(|e| e.1));
            merged.push((i, diag));
            merged
        })
        .collect();
    let pi = support.iter().map(|&k| p[k]).collect();
    Ok(TransitionMatrix {
        matrix: SparseOperator::from_rows(support.len(), rows),
        basis,
        support,
        pi,
    })
}

impl TransitionMatrix {
    pub fn matrix(&self) -> &SparseOperator {
        &self.matrix
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    /// Basis indices the chain lives on.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Sector states excluded because `ψ` vanishes there.
    pub fn excluded(&self) -> usize {
        self.basis.len() - self.support.len()
    }

    /// Stationary distribution on the support.
    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    pub fn dim(&self) -> usize {
        self.support.len()
    }

    /// Restricts a distribution over the full basis to the support,
    /// conditioning on it. Returns the restricted vector and the mass that
    /// fell outside.
    pub fn restrict(&self, nu: &[f64]) -> Result<(Vec<f64>, f64)> {
        if nu.len() != self.basis.len() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.len(),
                found: nu.len(),
            });
        }
        let inside: Vec<f64> = self.support.iter().map(|&k| nu[k]).collect();
        let mass: f64 = inside.iter().sum();
        if mass <= 0.0 {
            return Err(Error::SupportViolation(
                "distribution has no mass on the chain's support".into(),
            ));
        }
        Ok((inside.iter().map(|v| v / mass).collect(), 1.0 - mass))
    }

    /// Inverse of [`restrict`](Self::restrict) for a support vector.
    pub fn extend(&self, nu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.basis.len()];
        for (&k, &v) in self.support.iter().zip(nu) {
            out[k] = v;
        }
        out
    }

    /// Largest `|π(x)M(x,y) − π(y)M(y,x)|`.
    pub fn detailed_balance_violation(&self) -> f64 {
        let m = &self.matrix;
        (0..m.dim())
            .into_par_iter()
            .map(|x| {
                m.row(x)
                    .map(|(y, v)| (self.pi[x] * v - self.pi[y] * m.get(y, x)).abs())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Largest `|Σ_y M(x,y) − 1|`.
    pub fn stochasticity_violation(&self) -> f64 {
        self.matrix
            .row_sums()
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `‖πM − π‖₁`.
    pub fn stationarity_violation(&self) -> f64 {
        let mut out = vec![0.0; self.dim()];
        self.matrix.apply_left(&self.pi, &mut out);
        out.iter().zip(&self.pi).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Second largest eigenvalue, from `D^{1/2} M D^{−1/2}` with `D = diag(π)`.
    pub fn lambda2(&self) -> Result<f64> {
        Ok(self.spectrum_ends()?.0)
    }

    /// Smallest eigenvalue.
    pub fn lambda_min(&self) -> Result<f64> {
        Ok(self.spectrum_ends()?.1)
    }

    /// Largest eigenvalue modulus apart from the stationary one,
    /// `max(|λ₂|, |λ_min|)`: the per-step contraction of `‖ν_n − π‖`.
    pub fn lambda_star(&self) -> Result<f64> {
        let (l2, lmin) = self.spectrum_ends()?;
        Ok(l2.abs().max(lmin.abs()))
    }

    fn spectrum_ends(&self) -> Result<(f64, f64)> {
        let n = self.dim();
        if n < 2 {
            return Err(Error::Numerical(
                "a one-state chain has no second eigenvalue".into(),
            ));
        }
        let sq: Vec<f64> = self.pi.iter().map(|p| p.sqrt()).collect();
        if n <= DENSE_SPECTRUM_LIMIT {
            let mut s = self.matrix.to_dense();
            for r in 0..n {
                for c in 0..n {
                    s[(r, c)] *= sq[r] / sq[c];
                }
            }
            let s = (&s + s.transpose()) * 0.5;
            let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
            return Ok((ev[1], ev[n - 1]));
        }
        let opts = LanczosOptions {
            tol: 1e-10,
            ..Default::default()
        };
        let top = Symmetrized {
            m: &self.matrix,
            sq: &sq,
            sign: -1.0,
        };
        let (low, _) = lanczos_lowest(&top, &[&sq], &opts)?;
        let bottom = Symmetrized {
            m: &self.matrix,
            sq: &sq,
            sign: 1.0,
        };
        let (lmin, _) = lanczos_lowest(&bottom, &[], &opts)?;
        Ok((-low, lmin))
    }
}

/// `sign · D^{1/2} M D^{−1/2}` acting on vectors.
struct Symmetrized<'a> {
    m: &'a SparseOperator,
    sq: &'a [f64],
    sign: f64,
}

impl LinearOperator for Symmetrized<'_> {
    fn dim(&self) -> usize {
        self.sq.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        // S = S^T for reversible M, so apply S^T x = D^{-1/2} M^T D^{1/2} x
        let scaled: Vec<f64> = x.iter().zip(self.sq).map(|(a, s)| a * s).collect();
        self.m.apply_left(&scaled, y);
        y.iter_mut()
            .zip(self.sq)
            .for_each(|(v, s)| *v *= self.sign / s);
    }

    fn apply_complex(&self, x: &[num_complex::Complex64], y: &mut [num_complex::Complex64]) {
        let re: Vec<f64> = x.iter().map(|c| c.re).collect();
        let im: Vec<f64> = x.iter().map(|c| c.im).collect();
        let (mut yr, mut yi) = (vec![0.0; re.len()], vec![0.0; im.len()]);
        self.apply(&re, &mut yr);
        self.apply(&im, &mut yi);
        for (k, out) in y.iter_mut().enumerate() {
            *out = num_complex::Complex64::new(yr[k], yi[k]);
        }
    }
}

/// `τ = 1/(1 − λ₂)`.
pub fn relaxation_time(lambda2: f64) -> f64 {
    1.0 / (1.0 - lambda2)
}

/// Checks that `nu` is a probability vector.
pub fn check_distribution(nu: &[f64]) -> Result<()> {
    if nu.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Numerical(
            "distribution has a negative or NaN entry".into(),
        ));
    }
    let mass: f64 = nu.iter().sum();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::ProbabilityDrift((mass - 1.0).abs()));
    }
    Ok(())
}

/// `ν₀, ν₀M, …, ν₀Mⁿ`.
pub fn evolve_distribution(
    m: &TransitionMatrix,
    nu0: &[f64],
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if nu0.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: nu0.len(),
        });
    }
    check_distribution(nu0)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(nu0.to_vec());
    for _ in 0..steps {
        let mut next = vec![0.0; nu0.len()];
        m.matrix.apply_left(out.last().unwrap(), &mut next);
        let mass: f64 = next.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::ProbabilityDrift((mass - 1.0).abs()));
        }
        out.push(next);
    }
    Ok(out)
}

/// `½ Σ |ν − π|`.
pub fn tvd(nu: &[f64], pi: &[f64]) -> f64 {
    0.5 * nu.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `Σ ν²/π − 1`, or `+∞` when `ν` puts mass where `π` has none.
pub fn chi_squared(nu: &[f64], pi: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&a, &b) in nu.iter().zip(pi) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return f64::INFINITY;
        }
        s += a * a / b;
    }
    s - 1.0
}

/// `Σ √(ν π)`.
pub fn bhattacharyya(nu: &[f64], pi: &[f64]) -> f64 {
    nu.iter().zip(pi).map(|(a, b)| (a * b).sqrt()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub step: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// Evaluations of `4·TVD(ν_n, π)² ≤ λ*ⁿ χ²(ν₀, π)` with
/// `λ* = max(|λ₂|, |λ_min|)`, which is `λ₂` whenever `λ₂ ≥ |λ_min|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingBoundLedger {
    pub lambda_star: f64,
    pub chi_squared: f64,
    pub points: Vec<BoundPoint>,
}

impl MixingBoundLedger {
    pub fn min_slack(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.slack)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn violations(&self, tol: f64) -> usize {
        self.points.iter().filter(|p| p.slack < -tol).count()
    }
}

/// Detailed-balance tolerance required before the mixing bound is checked.
pub const REVERSIBILITY_TOL: f64 = 1e-12;

pub fn check_mixing_bound(
    m: &TransitionMatrix,
    nu0: &[f64],
    steps: usize,
) -> Result<MixingBoundLedger> {
    let db = m.detailed_balance_violation();
    if db > REVERSIBILITY_TOL {
        return Err(Error::NotReversible(db));
    }
    let lambda_star = m.lambda_star()?;
    mixing_bound_with(m, nu0, steps, lambda_star)
}

/// As [`check_mixing_bound`] with a precomputed `λ*`.
pub fn mixing_bound_with(
    m: &TransitionMatrix,
    nu0: &[f64],
    steps: usize,
    lambda_star: f64,
) -> Result<MixingBoundLedger> {
    let traj = evolve_distribution(m, nu0, steps)?;
    let chi = chi_squared(nu0, m.stationary());
    let points = traj
        .iter()
        .enumerate()
        .map(|(n, nu)| {
            let t = tvd(nu, m.stationary());
            let lhs = 4.0 * t * t;
            let rhs = lambda_star.powi(n as i32) * chi;
            BoundPoint {
                step: n,
                lhs,
                rhs,
                slack: rhs - lhs,
            }
        })
        .collect();
    Ok(MixingBoundLedger {
        lambda_star,
        chi_squared: chi,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityCheck {
    pub chi_squared: f64,
    pub fidelity: f64,
    /// `1/F² − 1`.
    pub rhs: f64,
    pub slack: f64,
}

/// `χ²(ν, π) ≥ 1/⟨√ν|√π⟩² − 1`.
pub fn check_fidelity_bound(nu: &[f64], pi: &[f64]) -> FidelityCheck {
    let chi = chi_squared(nu, pi);
    let f = bhattacharyya(nu, pi);
    let rhs = 1.0 / (f * f) - 1.0;
    FidelityCheck {
        chi_squared: chi,
        fidelity: f,
        rhs,
        slack: chi - rhs,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupPoint {
    pub target: f64,
    pub steps_a: usize,
    pub steps_b: usize,
    pub factor: f64,
}

/// First index at which `curve` is at or below `target`.
pub fn first_hit(curve: &[f64], target: f64) -> Option<usize> {
    curve.iter().position(|&v| v <= target)
}

/// `n_a(t)/n_b(t)` per target. Targets either curve never reaches are
/// omitted, as are targets the candidate `b` meets at step 0 while `a` does
/// not; both meeting a target at step 0 counts as factor 1.
pub fn speedup_curve(curve_a: &[f64], curve_b: &[f64], targets: &[f64]) -> Vec<SpeedupPoint> {
    let index = |c: &[f64]| -> Vec<(usize, f64)> { c.iter().copied().enumerate().collect() };
    speedup_at_steps(&index(curve_a), &index(curve_b), targets)
}

/// As [`speedup_curve`] for curves sampled at the given steps.
pub fn speedup_at_steps(
    curve_a: &[(usize, f64)],
    curve_b: &[(usize, f64)],
    targets: &[f64],
) -> Vec<SpeedupPoint> {
    let hit = |c: &[(usize, f64)], t: f64| c.iter().find(|p| p.1 <= t).map(|p| p.0);
    targets
        .iter()
        .filter_map(|&t| {
            let a = hit(curve_a, t)?;
            let b = hit(curve_b, t)?;
            let factor = match (a, b) {
                (0, 0) => 1.0,
                (_, 0) => return None,
                _ => a as f64 / b as f64,
            };
            Some(SpeedupPoint {
                target: t,
                steps_a: a,
                steps_b: b,
                factor,
            })
        })
        .collect()
}

/// Speedup of source `b` over baseline `a`, evolving both to `horizon`.
pub fn speedup_factor(
    m: &TransitionMatrix,
    source_a: &[f64],
    source_b: &[f64],
    targets: &[f64],
    horizon: usize,
) -> Result<Vec<SpeedupPoint>> {
    let curve = |nu0: &[f64]| -> Result<Vec<f64>> {
        Ok(evolve_distribution(m, nu0, horizon)?
            .iter()
            .map(|nu| tvd(nu, m.stationary()))
            .collect())
    };
    Ok(speedup_curve(&curve(source_a)?, &curve(source_b)?, targets))
}

/// `count` targets spaced logarithmically from `hi` down to `lo`.
pub fn log_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Exact `⟨ψ|H|ψ⟩` of a simulated state. This is the state's energy, not the
/// local-energy average at step 0 of a chain started from its samples, which
/// depends on the trial wavefunction.
pub fn vqe_energy_reference(spec: &HamiltonianSpec, vec: &StateVector) -> Result<f64> {
    let op = hamiltonian_operator(spec, vec.basis())?;
    expectation(op.as_ref(), vec)
}

/// Per-source trajectory summary for reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceTrajectory {
    pub label: String,
    pub chi_squared: f64,
    /// Initial mass that fell outside the chain's support.
    pub dropped_mass: f64,
    pub tvd: Vec<f64>,
    /// Mean local energy under `ν_n`.
    pub energy: Vec<f64>,
}

impl SourceTrajectory {
    pub fn csv(&self, reference: f64) -> String {
        let mut out = String::from("step,tvd,l1,energy,energy_error\n");
        for (n, (t, e)) in self.tvd.iter().zip(&self.energy).enumerate() {
            out.push_str(&format!("{n},{t},{},{e},{}\n", 2.0 * t, e - reference));
        }
        out
    }
}

/// Evolves a full-basis source under `m` and records TVD and energy.
pub fn trajectory(
    m: &TransitionMatrix,
    label: &str,
    nu_full: &[f64],
    local_energies: &[f64],
    steps: usize,
) -> Result<SourceTrajectory> {
    let (nu0, dropped) = m.restrict(nu_full)?;
    let traj = evolve_distribution(m, &nu0, steps)?;
    Ok(SourceTrajectory {
        label: label.to_string(),
        chi_squared: chi_squared(&nu0, m.stationary()),
        dropped_mass: dropped,
        tvd: traj.iter().map(|nu| tvd(nu, m.stationary())).collect(),
        energy: traj
            .iter()
            .map(|nu| nu.iter().zip(local_energies).map(|(a, b)| a * b).sum())
            .collect(),
    })
}

/// Local energies on the chain's support, aligned with [`TransitionMatrix::stationary`].
pub fn support_local_energies<W: Wavefunction>(
    wf: &W,
    spec: &HamiltonianSpec,
    m: &TransitionMatrix,
) -> Result<Vec<f64>> {
    m.support
        .par_iter()
        .map(|&k| crate::wavefunction::local_energy(wf, spec, &m.basis.state(k)))
        .collect()
}

/// λ₂, relaxation time and per-source trajectories with bound ledgers and
/// speedup curves against the first source.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingReport {
    pub lambda2: f64,
    pub lambda_min: f64,
    pub lambda_star: f64,
    pub relaxation_time: f64,
    pub support: usize,
    pub excluded: usize,
    pub detailed_balance_violation: f64,
    pub sources: Vec<SourceTrajectory>,
    pub bounds: Vec<MixingBoundLedger>,
    pub speedup: Vec<(String, Vec<SpeedupPoint>)>,
}

pub fn mixing_report<W: Wavefunction>(
    wf: &W,
    spec: &HamiltonianSpec,
    m: &TransitionMatrix,
    sources: &[(String, Vec<f64>)],
    steps: usize,
    targets: &[f64],
) -> Result<MixingReport> {
    let (lambda2, lambda_min) = m.spectrum_ends()?;
    let lambda_star = lambda2.abs().max(lambda_min.abs());
    let el = support_local_energies(wf, spec, m)?;
    let trajectories: Vec<SourceTrajectory> = sources
        .par_iter()
        .map(|(label, nu)| trajectory(m, label, nu, &el, steps))
        .collect::<Result<_>>()?;
    let bounds = sources
        .par_iter()
        .map(|(_, nu)| mixing_bound_with(m, &m.restrict(nu)?.0, steps, lambda_star))
        .collect::<Result<_>>()?;
    let speedup = trajectories
        .iter()
        .skip(1)
        .map(|t| {
            (
                t.label.clone(),
                speedup_curve(&trajectories[0].tvd, &t.tvd, targets),
            )
        })
        .collect();
    Ok(MixingReport {
        lambda2,
        lambda_min,
        lambda_star,
        relaxation_time: relaxation_time(lambda2),
        support: m.dim(),
        excluded: m.excluded(),
        detailed_balance_violation: m.detailed_balance_violation(),
        sources: trajectories,
        bounds,
        speedup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use crate::wavefunction::{GutzwillerWF, NqsWF, SlaterDeterminant};

    fn hubbard_chain() -> (HamiltonianSpec, GutzwillerWF, TransitionMatrix) {
        let spec = HamiltonianSpec::hubbard(1, 4, 4.0).unwrap();
        let basis = Arc::new(SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap());
        let wf = GutzwillerWF::new(0.865, SlaterDeterminant::half_filled(&spec).unwrap());
        let m = transition_matrix(&wf, &Mixer::for_spec(&spec), basis).unwrap();
        (spec, wf, m)
    }

    #[test]
    fn divergences_of_small_pairs() {
        assert_eq!(tvd(&[1.0, 0.0], &[0.5, 0.5]), 0.5);
        assert!((chi_squared(&[1.0, 0.0], &[0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert!((chi_squared(&[0.5, 0.5], &[0.75, 0.25]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(chi_squared(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
        assert_eq!(tvd(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
    }

    #[test]
    fn gutzwiller_chain_is_stochastic_and_reversible() {
        let (_, _, m) = hubbard_chain();
        assert!(m.stochasticity_violation() <= 1e-14);
        assert!(m.detailed_balance_violation() <= 1e-12);
        assert!(m.stationarity_violation() <= 1e-12);
        let l2 = m.lambda2().unwrap();
        assert!(l2 > -1.0 && l2 < 1.0);
    }

    #[test]
    fn uniform_target_gives_proposal_kernel() {
        let spec = HamiltonianSpec::tfi(4, 1.0, 1.0).unwrap();
        let basis = Arc::new(SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap());
        let m = transition_matrix(&NqsWF::zeros(4, 4), &Mixer::for_spec(&spec), basis).unwrap();
        for x in 0..16 {
            for y in 0..16 {
                let expect = if (x ^ y as usize).count_ones() == 1 {
                    0.25
                } else {
                    0.0
                };
                assert_eq!(m.matrix().get(x, y), expect);
            }
        }
    }

    #[test]
    fn point_mass_steps_to_row() {
        let (_, _, m) = hubbard_chain();
        let mut nu = vec![0.0; m.dim()];
        nu[7] = 1.0;
        let traj = evolve_distribution(&m, &nu, 1).unwrap();
        for y in 0..m.dim() {
            assert_eq!(traj[1][y], m.matrix().get(7, y));
        }
        let still = evolve_distribution(&m, m.stationary(), 10).unwrap();
        assert!(tvd(&still[10], m.stationary()) < 1e-13);
    }

    #[test]
    fn lanczos_and_dense_gaps_agree() {
        let (_, _, m) = hubbard_chain();
        let dense = m.lambda2().unwrap();
        let sq: Vec<f64> = m.stationary().iter().map(|p| p.sqrt()).collect();
        let op = Symmetrized {
            m: &m.matrix,
            sq: &sq,
            sign: -1.0,
        };
        let (low, _) = lanczos_lowest(&op, &[&sq], &LanczosOptions::default()).unwrap();
        assert!((dense + low).abs() < 1e-8, "{dense} vs {}", -low);
        let op = Symmetrized {
            m: &m.matrix,
            sq: &sq,
            sign: 1.0,
        };
        let (lmin, _) = lanczos_lowest(&op, &[], &LanczosOptions::default()).unwrap();
        assert!((m.lambda_min().unwrap() - lmin).abs() < 1e-8);
        assert_eq!(
            m.lambda_star().unwrap(),
            dense.abs().max(m.lambda_min().unwrap().abs())
        );
    }

    #[test]
    fn bound_uses_the_largest_nontrivial_modulus() {
        // two states, flip with probability 0.9: eigenvalues 1 and -0.8
        let spec = HamiltonianSpec::tfi(2, 1.0, 1.0).unwrap();
        let m = TransitionMatrix {
            matrix: SparseOperator::from_rows(
                2,
                vec![vec![(0, 0.1), (1, 0.9)], vec![(0, 0.9), (1, 0.1)]],
            ),
            basis: Arc::new(SectorBasis::enumerate(&spec, spec.default_constraint()).unwrap()),
            support: vec![0, 1],
            pi: vec![0.5, 0.5],
        };
        assert!((m.lambda2().unwrap() + 0.8).abs() < 1e-12);
        assert!((m.lambda_star().unwrap() - 0.8).abs() < 1e-12);
        let ledger = check_mixing_bound(&m, &[1.0, 0.0], 30).unwrap();
        assert_eq!(ledger.violations(1e-12), 0);
        // ν_n = π + (−0.8)ⁿ(½, −½), χ² = 1
        for p in &ledger.points {
            assert!((p.lhs - 0.64f64.powi(p.step as i32)).abs() < 1e-12);
            assert!((p.rhs - 0.8f64.powi(p.step as i32)).abs() < 1e-12);
        }
        let signed = mixing_bound_with(&m, &[1.0, 0.0], 3, m.lambda2().unwrap()).unwrap();
        assert!(signed.points[1].slack < 0.0);
    }

    #[test]
    fn speedup_conventions() {
        let a = [0.5, 0.4, 0.3, 0.2, 0.1];
        let same = speedup_curve(&a, &a, &[0.45, 0.25, 0.15]);
        assert!(same.iter().all(|p| p.factor == 1.0));
        let b = [0.3, 0.15, 0.05];
        let c = speedup_curve(&a, &b, &[0.2, 0.1, 0.01]);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].factor, 3.0);
        assert_eq!(c[1].factor, 2.0);
    }

    #[test]
    fn zero_layer_tfi_reference() {
        let spec = HamiltonianSpec::tfi(6, 1.0, 0.8).unwrap();
        let v = crate::vqe::prepare_state(&crate::vqe::VqeAnsatz::zeros(ModelKind::Tfi, 0), &spec)
            .unwrap();
        assert!((vqe_energy_reference(&spec, &v).unwrap() + 0.8 * 6.0).abs() < 1e-12);
    }
}
