use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{log_2cosh, LogAmplitude, Move, Wavefunction};
use crate::error::{Error, Result};
use crate::models::{BasisState, ModelKind};

const MAGIC: &str = "QEVMC-NQS v1";
const REFRESH_EVERY: usize = 1000;

/// Restricted Boltzmann machine with the hidden layer traced out:
/// `ln ψ(σ) = Σ_j a_j σ_j + Σ_i ln 2cosh(b_i + Σ_j W_ij σ_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NqsWF {
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    /// `M × N`, row-major.
    w: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct NqsWalker {
    x: BasisState,
    spins: Vec<f64>,
    theta: Vec<f64>,
    log_amp: f64,
    accepted: usize,
}

impl NqsWalker {
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn spins(&self) -> &[f64] {
        &self.spins
    }
}

impl NqsWF {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            a: vec![0.0; n],
            b: vec![0.0; m],
            w: vec![0.0; n * m],
        }
    }

    /// Independent Gaussian parameters with standard deviation `std`.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite standard deviation");
        let mut wf = Self::zeros(n, m);
        let params: Vec<f64> = (0..wf.n_params()).map(|_| normal.sample(rng)).collect();
        wf.set_parameters(&params);
        wf
    }

    pub fn from_parameters(n: usize, m: usize, params: &[f64]) -> Result<Self> {
        let mut wf = Self::zeros(n, m);
        if params.len() != wf.n_params() {
            return Err(Error::DimensionMismatch {
                expected: wf.n_params(),
                found: params.len(),
            });
        }
        wf.set_parameters(params);
        Ok(wf)
    }

    pub fn visible(&self) -> usize {
        self.n
    }

    pub fn hidden(&self) -> usize {
        self.m
    }

    pub fn alpha(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn n_params(&self) -> usize {
        self.n + self.m + self.n * self.m
    }

    /// Flat parameter vector: `a`, then `b`, then `W` row-major.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.a);
        p.extend_from_slice(&self.b);
        p.extend_from_slice(&self.w);
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let (a, rest) = p.split_at(self.n);
        let (b, w) = rest.split_at(self.m);
        self.a.copy_from_slice(a);
        self.b.copy_from_slice(b);
        self.w.copy_from_slice(w);
    }

    /// `params += scale · delta`.
    pub fn shift_parameters(&mut self, delta: &[f64], scale: f64) {
        assert_eq!(delta.len(), self.n_params());
        let (da, rest) = delta.split_at(self.n);
        let (db, dw) = rest.split_at(self.m);
        for (p, d) in self
            .a
            .iter_mut()
            .zip(da)
            .chain(self.b.iter_mut().zip(db))
            .chain(self.w.iter_mut().zip(dw))
        {
            *p += scale * d;
        }
    }

    pub fn parameter_norm(&self) -> f64 {
        self.a
            .iter()
            .chain(&self.b)
            .chain(&self.w)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn spins_of(&self, x: &BasisState) -> Vec<f64> {
        (0..self.n).map(|j| x.spin(j)).collect()
    }

    fn theta_of(&self, spins: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| {
                let row = &self.w[i * self.n..(i + 1) * self.n];
                self.b[i] + row.iter().zip(spins).map(|(w, s)| w * s).sum::<f64>()
            })
            .collect()
    }

    fn log_from(&self, spins: &[f64], theta: &[f64]) -> f64 {
        self.a.iter().zip(spins).map(|(a, s)| a * s).sum::<f64>()
            + theta.iter().map(|&t| log_2cosh(t)).sum::<f64>()
    }

    /// `∂ ln ψ / ∂ p_k` in the parameter ordering of [`Self::parameters`].
    pub fn log_derivatives(&self, x: &BasisState) -> Vec<f64> {
        let spins = self.spins_of(x);
        let theta = self.theta_of(&spins);
        let mut out = vec![0.0; self.n_params()];
        self.fill_derivatives(&spins, &theta, &mut out);
        out
    }

    /// Derivatives at the walker's configuration, using its cached angles.
    pub fn walker_derivatives(&self, w: &NqsWalker, out: &mut [f64]) {
        self.fill_derivatives(&w.spins, &w.theta, out);
    }

    fn fill_derivatives(&self, spins: &[f64], theta: &[f64], out: &mut [f64]) {
        let (oa, rest) = out.split_at_mut(self.n);
        let (ob, ow) = rest.split_at_mut(self.m);
        oa.copy_from_slice(spins);
        for i in 0..self.m {
            let t = theta[i].tanh();
            ob[i] = t;
            for (o, s) in ow[i * self.n..(i + 1) * self.n].iter_mut().zip(spins) {
                *o = t * s;
            }
        }
    }

    fn flip_delta(&self, w: &NqsWalker, flips: &[usize]) -> f64 {
        let mut d = 0.0;
        for &j in flips {
            d -= 2.0 * self.a[j] * w.spins[j];
        }
        for i in 0..self.m {
            let row = &self.w[i * self.n..(i + 1) * self.n];
            let mut t = w.theta[i];
            for &j in flips {
                t -= 2.0 * row[j] * w.spins[j];
            }
            d += log_2cosh(t) - log_2cosh(w.theta[i]);
        }
        d
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!(
            "{MAGIC}\nN={}\nM={}\nordering=a|b|W row-major\nformat=f64-le\n\n",
            self.n, self.m
        );
        let mut out = header.into_bytes();
        for p in self.parameters() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |line: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| err(1, "missing header terminator"))?;
        let header =
            std::str::from_utf8(&bytes[..split]).map_err(|_| err(1, "header is not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(err(1, "unknown weight file version"));
        }
        let (mut n, mut m) = (None, None);
        for (k, line) in lines.enumerate() {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(k + 2, "expected key=value"))?;
            match key {
                "N" => n = Some(value.parse::<usize>().map_err(|_| err(k + 2, "bad N"))?),
                "M" => m = Some(value.parse::<usize>().map_err(|_| err(k + 2, "bad M"))?),
                "ordering" if value == "a|b|W row-major" => {}
                "format" if value == "f64-le" => {}
                _ => return Err(err(k + 2, &format!("unsupported header entry `{line}`"))),
            }
        }
        let n = n.ok_or_else(|| err(1, "missing N"))?;
        let m = m.ok_or_else(|| err(1, "missing M"))?;
        let body = &bytes[split + 2..];
        let count = n + m + n * m;
        if body.len() != 8 * count {
            return Err(err(
                header.lines().count() + 2,
                &format!("expected {count} reals, found {} bytes", body.len()),
            ));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_parameters(n, m, &params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }
}

impl Wavefunction for NqsWF {
    type Walker = NqsWalker;

    fn model(&self) -> ModelKind {
        ModelKind::Tfi
    }

    fn width(&self) -> usize {
        self.n
    }

    fn log_amplitude(&self, x: &BasisState) -> LogAmplitude {
        let spins = self.spins_of(x);
        let theta = self.theta_of(&spins);
        LogAmplitude::positive(self.log_from(&spins, &theta))
    }

    fn walker(&self, x: BasisState) -> Result<NqsWalker> {
        if x.width() != self.n {
            return Err(Error::BasisMismatch(format!("{x} has the wrong width")));
        }
        let spins = self.spins_of(&x);
        let theta = self.theta_of(&spins);
        let log_amp = self.log_from(&spins, &theta);
        Ok(NqsWalker {
            x,
            spins,
            theta,
            log_amp,
            accepted: 0,
        })
    }

    fn state(&self, w: &NqsWalker) -> BasisState {
        w.x
    }

    fn cached(&self, w: &NqsWalker) -> LogAmplitude {
        LogAmplitude::positive(w.log_amp)
    }

    fn move_ratio(&self, w: &NqsWalker, mv: Move) -> f64 {
        match mv {
            Move::Stay => 1.0,
            Move::Flip(j) => self.flip_delta(w, &[j]).exp(),
            Move::Hop { from, to } => self.flip_delta(w, &[from, to]).exp(),
        }
    }

    fn accept(&self, w: &mut NqsWalker, mv: Move, _ratio: f64) {
        let flips: &[usize] = match mv {
            Move::Stay => return,
            Move::Flip(j) => &[j],
            Move::Hop { from, to } => &[from, to],
        };
        for &j in flips {
            let s = w.spins[j];
            for i in 0..self.m {
                w.theta[i] -= 2.0 * self.w[i * self.n + j] * s;
            }
            w.spins[j] = -s;
        }
        w.x = mv.apply(&w.x);
        w.accepted += 1;
        if w.accepted % REFRESH_EVERY == 0 {
            w.theta = self.theta_of(&w.spins);
        }
        w.log_amp = self.log_from(&w.spins, &w.theta);
    }
}
