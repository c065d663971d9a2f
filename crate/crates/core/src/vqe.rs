//! Classical simulation of the Hamiltonian variational ansatz: state
//! preparation, BFGS parameter optimization and computational-basis sampling.

use std::cell::RefCell;
use std::sync::Arc;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::BFGS;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::WeightedAliasIndex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    cdot, evolve_flip_sum, evolve_in_place, expectation_raw, LinearOperator, SparseOperator,
    StateVector,
};
use crate::error::{Error, Result};
use crate::models::selected_bonds;
use crate::models::{
    build_term, hamiltonian_operator, hop_sign, BondParity, HamiltonianSpec, HamiltonianTerm,
    ModelKind, SectorBasis, SectorConstraint,
};
use crate::rng::stream_rng;
use crate::samples::{SampleMetadata, SampleStore, SourceTag};
use crate::wavefunction::SlaterDeterminant;

/// Largest spin chain the simulator accepts.
pub const TFI_SITE_LIMIT: usize = 24;
/// Largest Hubbard sector the simulator accepts.
pub const HUBBARD_SECTOR_LIMIT: usize = 1 << 24;
/// Central-difference step for finite-difference gradients.
pub const FD_STEP: f64 = 1e-5;

/// Layered ansatz: three parameters per layer. TFI layers apply even-bond
/// ZZ, odd-bond ZZ, then the field; Hubbard layers apply onsite, even-bond
/// hopping, then odd-bond hopping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqeAnsatz {
    pub model: ModelKind,
    pub layers: usize,
    pub theta: Vec<f64>,
}

impl VqeAnsatz {
    pub fn new(model: ModelKind, layers: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != 3 * layers {
            return Err(Error::DimensionMismatch {
                expected: 3 * layers,
                found: theta.len(),
            });
        }
        Ok(Self {
            model,
            layers,
            theta,
        })
    }

    pub fn zeros(model: ModelKind, layers: usize) -> Self {
        Self {
            model,
            layers,
            theta: vec![0.0; 3 * layers],
        }
    }
}

/// One commuting piece of the Hamiltonian, in the form cheapest to
/// exponentiate.
enum Generator {
    /// `-J Σ Z_a Z_b` over a set of bonds, on the full spin space.
    Ising {
        /// bit `a` set for each bond `(a, a+1)`
        adjacent: u64,
        other: Vec<(usize, usize)>,
        bonds: usize,
        j: f64,
    },
    /// `-h Σ X_j`.
    Field {
        sites: usize,
        h: f64,
    },
    Sparse(SparseOperator),
    /// Hopping on one bond class, `h↑ ⊗ 1 + 1 ⊗ h↓`, over a sector that is
    /// the product of its up and down configurations.
    Factored(Box<FactoredHopping>),
}

/// Single-species hopping matrix with its eigendecomposition.
struct Species {
    h: DMatrix<f64>,
    eig: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl Species {
    fn new(sites: usize, filling: usize, bonds: &[(usize, usize)]) -> (Self, Vec<u128>) {
        let configs: Vec<u128> = (0u128..1 << sites)
            .filter(|c| c.count_ones() as usize == filling)
            .collect();
        let n = configs.len();
        let mut h = DMatrix::zeros(n, n);
        for (k, &c) in configs.iter().enumerate() {
            for &(i, j) in bonds {
                if (c >> i) & 1 != (c >> j) & 1 {
                    let d = c ^ (1 << i) ^ (1 << j);
                    let col = configs
                        .binary_search(&d)
                        .expect("hopping keeps the filling");
                    h[(k, col)] -= hop_sign(c, i, j);
                }
            }
        }
        let eig = SymmetricEigen::new(h.clone());
        (Self { h, eig }, configs)
    }

    fn propagator(&self, theta: f64) -> DMatrix<Complex64> {
        let v = self.eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
        let mut scaled = v.clone();
        for (mut col, &l) in scaled.column_iter_mut().zip(self.eig.eigenvalues.iter()) {
            col *= Complex64::from_polar(1.0, -theta * l);
        }
        scaled * v.transpose()
    }
}

struct FactoredHopping {
    up: Species,
    down: Species,
    /// basis index of up configuration `u` and down configuration `d`,
    /// stored at `u + d·n_up`
    slots: Vec<usize>,
}

impl FactoredHopping {
    fn new(spec: &HamiltonianSpec, basis: &SectorBasis, parity: BondParity) -> Option<Self> {
        let (n_up, n_down) = match basis.constraint() {
            SectorConstraint::FixedFill { n_up, n_down } => (n_up, n_down),
            SectorConstraint::AllSpins => return None,
        };
        let sites = spec.sites();
        let bonds = selected_bonds(spec, Some(parity));
        let (up, ups) = Species::new(sites, n_up, &bonds);
        let (down, downs) = Species::new(sites, n_down, &bonds);
        if ups.len() * downs.len() != basis.len() {
            return None;
        }
        let mut slots = vec![0; basis.len()];
        for (k, x) in basis.iter().enumerate() {
            let u = ups.binary_search(&x.up(sites)).ok()?;
            let d = downs.binary_search(&x.down(sites)).ok()?;
            slots[u + d * ups.len()] = k;
        }
        Some(Self { up, down, slots })
    }

    fn gather(&self, x: &[Complex64]) -> DMatrix<Complex64> {
        let n = self.up.h.nrows();
        DMatrix::from_fn(n, self.down.h.nrows(), |u, d| x[self.slots[u + d * n]])
    }

    fn scatter(&self, m: &DMatrix<Complex64>, y: &mut [Complex64]) {
        for (i, &k) in self.slots.iter().enumerate() {
            y[k] = m[i];
        }
    }

    fn evolve(&self, theta: f64, amps: &mut [Complex64]) {
        let a = self.gather(amps);
        let b = self.up.propagator(theta) * a * self.down.propagator(theta).transpose();
        self.scatter(&b, amps);
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let a = self.gather(x);
        let hu = self.up.h.map(|v| Complex64::new(v, 0.0));
        let hd = self.down.h.map(|v| Complex64::new(v, 0.0));
        let b = &hu * &a + &a * hd.transpose();
        self.scatter(&b, y);
    }
}

impl Generator {
    fn ising(spec: &HamiltonianSpec, parity: BondParity) -> Self {
        let bonds = selected_bonds(spec, Some(parity));
        let mut adjacent = 0u64;
        let mut other = Vec::new();
        for &(a, b) in &bonds {
            if b == a + 1 {
                adjacent |= 1 << a;
            } else {
                other.push((a, b));
            }
        }
        Generator::Ising {
            adjacent,
            other,
            bonds: bonds.len(),
            j: spec.j,
        }
    }

    fn hopping(spec: &HamiltonianSpec, basis: &SectorBasis, parity: BondParity) -> Result<Self> {
        match FactoredHopping::new(spec, basis, parity) {
            Some(f) => Ok(Generator::Factored(Box::new(f))),
            None => Ok(Generator::Sparse(build_term(
                spec,
                basis,
                HamiltonianTerm::Hopping(Some(parity)),
            )?)),
        }
    }

    /// Number of anti-aligned selected bonds in configuration `k`.
    #[inline]
    fn anti(adjacent: u64, other: &[(usize, usize)], k: usize) -> u32 {
        let k = k as u64;
        let mut n = ((k ^ (k >> 1)) & adjacent).count_ones();
        for &(a, b) in other {
            n += (((k >> a) ^ (k >> b)) & 1) as u32;
        }
        n
    }

    fn evolve(&self, theta: f64, amps: &mut [Complex64]) -> Result<()> {
        match self {
            Generator::Ising {
                adjacent,
                other,
                bonds,
                j,
            } => {
                let phases: Vec<Complex64> = (0..=*bonds)
                    .map(|a| {
                        let value = -j * (*bonds as f64 - 2.0 * a as f64);
                        Complex64::from_polar(1.0, -theta * value)
                    })
                    .collect();
                amps.par_iter_mut().enumerate().for_each(|(k, a)| {
                    *a *= phases[Self::anti(*adjacent, other, k) as usize];
                });
                Ok(())
            }
            Generator::Field { sites, h } => {
                evolve_flip_sum(*sites, -h * theta, amps);
                Ok(())
            }
            Generator::Sparse(op) => evolve_in_place(op, theta, amps),
            Generator::Factored(f) => {
                f.evolve(theta, amps);
                Ok(())
            }
        }
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        match self {
            Generator::Ising {
                adjacent,
                other,
                bonds,
                j,
            } => {
                y.par_iter_mut().enumerate().for_each(|(k, out)| {
                    let a = Self::anti(*adjacent, other, k);
                    *out = x[k] * (-j * (*bonds as f64 - 2.0 * a as f64));
                });
            }
            Generator::Field { sites, h } => {
                y.fill(Complex64::new(0.0, 0.0));
                for j in 0..*sites {
                    let bit = 1usize << j;
                    for (yb, xb) in y.chunks_exact_mut(bit << 1).zip(x.chunks_exact(bit << 1)) {
                        let (ylo, yhi) = yb.split_at_mut(bit);
                        let (xlo, xhi) = xb.split_at(bit);
                        ylo.iter_mut().zip(xhi).for_each(|(a, b)| *a += b);
                        yhi.iter_mut().zip(xlo).for_each(|(a, b)| *a += b);
                    }
                }
                y.iter_mut().for_each(|a| *a *= -h);
            }
            Generator::Sparse(op) => op.apply_complex(x, y),
            Generator::Factored(f) => f.apply(x, y),
        }
    }
}

/// Exact state-vector simulator for one model instance.
pub struct HvaSimulator {
    spec: HamiltonianSpec,
    basis: Arc<SectorBasis>,
    generators: [Generator; 3],
    hamiltonian: Box<dyn LinearOperator>,
    initial: Vec<Complex64>,
}

impl HvaSimulator {
    pub fn new(spec: &HamiltonianSpec) -> Result<Self> {
        let basis = match spec.model() {
            ModelKind::Tfi => {
                if spec.sites() > TFI_SITE_LIMIT {
                    return Err(Error::SizeLimit {
                        size: spec.sites(),
                        limit: TFI_SITE_LIMIT,
                    });
                }
                SectorBasis::enumerate(spec, spec.default_constraint())?
            }
            ModelKind::Hubbard => {
                let basis = SectorBasis::enumerate(spec, spec.default_constraint())?;
                if basis.len() > HUBBARD_SECTOR_LIMIT {
                    return Err(Error::SizeLimit {
                        size: basis.len(),
                        limit: HUBBARD_SECTOR_LIMIT,
                    });
                }
                basis
            }
        };
        let basis = Arc::new(basis);
        let (generators, initial) = match spec.model() {
            ModelKind::Tfi => {
                let a = Complex64::new(1.0 / (basis.len() as f64).sqrt(), 0.0);
                (
                    [
                        Generator::ising(spec, BondParity::Even),
                        Generator::ising(spec, BondParity::Odd),
                        Generator::Field {
                            sites: spec.sites(),
                            h: spec.h,
                        },
                    ],
                    vec![a; basis.len()],
                )
            }
            ModelKind::Hubbard => {
                let sd = SlaterDeterminant::half_filled(spec)?;
                let mut amps: Vec<f64> = basis.iter().map(|x| sd.amplitude(&x)).collect();
                let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
                amps.iter_mut().for_each(|a| *a /= norm);
                (
                    [
                        Generator::Sparse(build_term(spec, &basis, HamiltonianTerm::Onsite)?),
                        Generator::hopping(spec, &basis, BondParity::Even)?,
                        Generator::hopping(spec, &basis, BondParity::Odd)?,
                    ],
                    amps.into_iter().map(|a| Complex64::new(a, 0.0)).collect(),
                )
            }
        };
        Ok(Self {
            spec: spec.clone(),
            hamiltonian: hamiltonian_operator(spec, &basis)?,
            basis,
            generators,
            initial,
        })
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn hamiltonian(&self) -> &dyn LinearOperator {
        self.hamiltonian.as_ref()
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() % 3 != 0 {
            return Err(Error::DimensionMismatch {
                expected: 3 * theta.len().div_ceil(3),
                found: theta.len(),
            });
        }
        Ok(())
    }

    fn prepare_amps(&self, theta: &[f64]) -> Result<Vec<Complex64>> {
        self.check(theta)?;
        let mut amps = self.initial.clone();
        for (k, &t) in theta.iter().enumerate() {
            self.generators[k % 3].evolve(t, &mut amps)?;
        }
        Ok(amps)
    }

    pub fn prepare(&self, theta: &[f64]) -> Result<StateVector> {
        StateVector::new(self.basis.clone(), self.prepare_amps(theta)?)
    }

    pub fn energy(&self, theta: &[f64]) -> Result<f64> {
        expectation_raw(self.hamiltonian.as_ref(), &self.prepare_amps(theta)?)
    }

    /// Energy and gradient by central differences with step [`FD_STEP`].
    pub fn gradient_fd(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.energy(theta)?;
        let mut g = vec![0.0; theta.len()];
        let mut p = theta.to_vec();
        for k in 0..theta.len() {
            p[k] = theta[k] + FD_STEP;
            let ep = self.energy(&p)?;
            p[k] = theta[k] - FD_STEP;
            let em = self.energy(&p)?;
            p[k] = theta[k];
            g[k] = (ep - em) / (2.0 * FD_STEP);
        }
        Ok((e, g))
    }

    /// Energy and exact gradient by reverse-mode propagation through the
    /// layers.
    pub fn gradient_adjoint(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut psi = self.prepare_amps(theta)?;
        let mut lambda = vec![Complex64::new(0.0, 0.0); psi.len()];
        self.hamiltonian.apply_complex(&psi, &mut lambda);
        let energy = cdot(&psi, &lambda).re;
        let mut tmp = vec![Complex64::new(0.0, 0.0); psi.len()];
        let mut grad = vec![0.0; theta.len()];
        for k in (0..theta.len()).rev() {
            let g = &self.generators[k % 3];
            g.apply(&psi, &mut tmp);
            grad[k] = 2.0 * cdot(&lambda, &tmp).im;
            g.evolve(-theta[k], &mut psi)?;
            g.evolve(-theta[k], &mut lambda)?;
        }
        Ok((energy, grad))
    }
}

/// `prepare_state` for a one-off ansatz evaluation.
pub fn prepare_state(ansatz: &VqeAnsatz, spec: &HamiltonianSpec) -> Result<StateVector> {
    if ansatz.model != spec.model() {
        return Err(Error::Incompatible(
            "ansatz and Hamiltonian describe different models".into(),
        ));
    }
    HvaSimulator::new(spec)?.prepare(&ansatz.theta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMethod {
    FiniteDifference,
    Adjoint,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeOptions {
    pub restarts: usize,
    #[serde(skip)]
    pub seed: u64,
    /// `None` picks finite differences for sectors up to 4096 states and the
    /// adjoint method beyond.
    pub gradient: Option<GradientMethod>,
    pub max_iters: u64,
    /// Extra starting point tried before the random restarts.
    #[serde(skip)]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            gradient: None,
            max_iters: 200,
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VqeResult {
    pub ansatz: VqeAnsatz,
    pub energy: f64,
    /// Energy of the unrotated initial state.
    pub zero_energy: f64,
    /// Final energy of each start; `None` for a discarded start.
    pub start_energies: Vec<Option<f64>>,
    pub gradient: GradientMethod,
}

struct Problem<'a> {
    sim: &'a HvaSimulator,
    method: GradientMethod,
    cache: RefCell<Option<(Vec<f64>, f64, Vec<f64>)>>,
}

impl Problem<'_> {
    fn eval(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        if let Some((q, e, g)) = self.cache.borrow().as_ref() {
            if q.as_slice() == p {
                return Ok((*e, g.clone()));
            }
        }
        let (e, g) = match self.method {
            GradientMethod::FiniteDifference => self.sim.gradient_fd(p)?,
            GradientMethod::Adjoint => self.sim.gradient_adjoint(p)?,
        };
        if !e.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite energy or gradient".into()));
        }
        *self.cache.borrow_mut() = Some((p.to_vec(), e, g.clone()));
        Ok((e, g))
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        if self.method == GradientMethod::FiniteDifference {
            return Ok(self.sim.energy(p)?);
        }
        Ok(self.eval(p)?.0)
    }
}

impl Gradient for Problem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(p)?.1)
    }
}

fn bfgs(
    sim: &HvaSimulator,
    method: GradientMethod,
    start: Vec<f64>,
    max_iters: u64,
) -> Option<(Vec<f64>, f64)> {
    let n = start.len();
    let problem = Problem {
        sim,
        method,
        cache: RefCell::new(None),
    };
    let identity: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let solver = BFGS::new(MoreThuenteLineSearch::new())
        .with_tolerance_grad(1e-7)
        .ok()?
        .with_tolerance_cost(1e-12)
        .ok()?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.param(start).inv_hessian(identity).max_iters(max_iters))
        .run()
        .ok()?;
    let state = res.state();
    let best = state.get_best_param()?.clone();
    let cost = state.get_best_cost();
    cost.is_finite().then_some((best, cost))
}

/// BFGS over random restarts (θ uniform in `[−0.5, 0.5]`), keeping the best.
/// The result never has higher energy than θ = 0.
pub fn optimize(
    spec: &HamiltonianSpec,
    layers: usize,
    opts: &OptimizeOptions,
) -> Result<VqeResult> {
    let sim = HvaSimulator::new(spec)?;
    optimize_with(&sim, layers, opts)
}

pub fn optimize_with(
    sim: &HvaSimulator,
    layers: usize,
    opts: &OptimizeOptions,
) -> Result<VqeResult> {
    let n = 3 * layers;
    let method = opts.gradient.unwrap_or(if sim.basis().len() <= 4096 {
        GradientMethod::FiniteDifference
    } else {
        GradientMethod::Adjoint
    });
    let zero = vec![0.0; n];
    let zero_energy = sim.energy(&zero)?;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = &opts.warm_start {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: w.len(),
            });
        }
        starts.push(w.clone());
    }
    for r in 0..opts.restarts {
        let mut rng = stream_rng(opts.seed, r as u64);
        starts.push((0..n).map(|_| rng.gen_range(-0.5..=0.5)).collect());
    }
    let results: Vec<Option<(Vec<f64>, f64)>> = if n == 0 {
        vec![Some((zero.clone(), zero_energy))]
    } else {
        starts
            .into_par_iter()
            .map(|s| bfgs(sim, method, s, opts.max_iters))
            .collect()
    };
    let mut best = (zero, zero_energy);
    for (theta, e) in results.iter().flatten() {
        if *e < best.1 {
            best = (theta.clone(), *e);
        }
    }
    // re-evaluate to report the energy of exactly the returned state
    let energy = sim.energy(&best.0)?;
    Ok(VqeResult {
        ansatz: VqeAnsatz::new(sim.spec().model(), layers, best.0)?,
        energy,
        zero_energy,
        start_energies: results.iter().map(|r| r.as_ref().map(|x| x.1)).collect(),
        gradient: method,
    })
}

/// `n` independent computational-basis measurements of `vec`.
pub fn sample_state(
    vec: &StateVector,
    n: usize,
    seed: u64,
    spec: &HamiltonianSpec,
    layers: Option<usize>,
) -> Result<SampleStore> {
    let p = vec.probabilities();
    let basis = vec.basis();
    let mut rng = stream_rng(seed, 0);
    let picks: Vec<usize> = if n <= p.len() {
        let dist = WeightedIndex::new(&p).map_err(|e| Error::Numerical(e.to_string()))?;
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    } else {
        let dist = WeightedAliasIndex::new(p).map_err(|e| Error::Numerical(e.to_string()))?;
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    };
    let mut meta = SampleMetadata::for_spec(spec, SourceTag::VqeSim);
    meta.seed = Some(seed);
    meta.layers = layers;
    SampleStore::new(meta, picks.into_iter().map(|k| basis.state(k)).collect())
}
