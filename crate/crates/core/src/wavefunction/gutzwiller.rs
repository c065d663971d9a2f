use nalgebra::DMatrix;

use super::slater::{occupied, SlaterDeterminant};
use super::{LogAmplitude, Move, Wavefunction};
use crate::error::{Error, Result};
use crate::models::{double_occupancy, hop_sign, BasisState, ModelKind};

/// Above this many sites walkers keep inverse matrices and use rank-one
/// updates instead of recomputing determinants.
pub const SCRATCH_LIMIT: usize = 12;
const REFRESH_EVERY: usize = 200;

/// `e^{−c·D(x)} det_up(x) det_down(x)`.
#[derive(Clone, Debug)]
pub struct GutzwillerWF {
    pub c: f64,
    slater: SlaterDeterminant,
    scratch_limit: usize,
}

#[derive(Clone, Debug)]
struct SectorCache {
    /// Site held by each row of the cached matrix.
    slots: Vec<usize>,
    slot_of: Vec<Option<usize>>,
    inv: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct GutzwillerWalker {
    x: BasisState,
    amp: LogAmplitude,
    caches: Option<[SectorCache; 2]>,
    accepted: usize,
}

impl GutzwillerWF {
    pub fn new(c: f64, slater: SlaterDeterminant) -> Self {
        Self {
            c,
            slater,
            scratch_limit: SCRATCH_LIMIT,
        }
    }

    /// Forces incremental updates for lattices larger than `sites`.
    pub fn with_scratch_limit(mut self, sites: usize) -> Self {
        self.scratch_limit = sites;
        self
    }

    pub fn slater(&self) -> &SlaterDeterminant {
        &self.slater
    }

    fn sites(&self) -> usize {
        self.slater.sites()
    }

    fn build_caches(&self, x: &BasisState) -> Result<[SectorCache; 2]> {
        let l = self.sites();
        let build = |down: bool| -> Result<SectorCache> {
            let phi = self.slater.sector(down);
            let bits = if down { x.down(l) } else { x.up(l) };
            let slots = occupied(bits);
            let k = phi.ncols();
            let a = DMatrix::from_fn(k, k, |r, c| phi[(slots[r], c)]);
            let inv = a
                .try_inverse()
                .ok_or_else(|| Error::ZeroAmplitude(x.to_string()))?;
            let mut slot_of = vec![None; l];
            for (s, &site) in slots.iter().enumerate() {
                slot_of[site] = Some(s);
            }
            Ok(SectorCache {
                slots,
                slot_of,
                inv,
            })
        };
        Ok([build(false)?, build(true)?])
    }

    fn refresh(&self, w: &mut GutzwillerWalker) {
        w.amp = self.log_amplitude(&w.x);
        if let Ok(c) = self.build_caches(&w.x) {
            w.caches = Some(c);
        }
    }
}

impl Wavefunction for GutzwillerWF {
    type Walker = GutzwillerWalker;

    fn model(&self) -> ModelKind {
        ModelKind::Hubbard
    }

    fn width(&self) -> usize {
        2 * self.sites()
    }

    fn log_amplitude(&self, x: &BasisState) -> LogAmplitude {
        let mut a = self.slater.log_amplitude(x);
        if !a.is_zero() {
            a.log_abs -= self.c * double_occupancy(x, self.sites()) as f64;
        }
        a
    }

    fn walker(&self, x: BasisState) -> Result<GutzwillerWalker> {
        if x.width() != self.width() {
            return Err(Error::BasisMismatch(format!("{x} has the wrong width")));
        }
        let amp = self.log_amplitude(&x);
        if amp.is_zero() {
            return Err(Error::ZeroAmplitude(x.to_string()));
        }
        let caches = if self.sites() > self.scratch_limit {
            Some(self.build_caches(&x)?)
        } else {
            None
        };
        Ok(GutzwillerWalker {
            x,
            amp,
            caches,
            accepted: 0,
        })
    }

    fn state(&self, w: &GutzwillerWalker) -> BasisState {
        w.x
    }

    fn cached(&self, w: &GutzwillerWalker) -> LogAmplitude {
        w.amp
    }

    fn move_ratio(&self, w: &GutzwillerWalker, mv: Move) -> f64 {
        let l = self.sites();
        match mv {
            Move::Stay => 1.0,
            Move::Flip(_) => 0.0,
            Move::Hop { from, to } => {
                if from / l != to / l {
                    return 0.0;
                }
                let y = mv.apply(&w.x);
                match &w.caches {
                    None => self.log_amplitude(&y).ratio_to(&w.amp),
                    Some(caches) => {
                        let cache = &caches[from / l];
                        let phi = self.slater.sector(from >= l);
                        let s = cache.slot_of[from % l].expect("hop from an empty site");
                        let site = to % l;
                        let r: f64 = (0..phi.ncols())
                            .map(|k| phi[(site, k)] * cache.inv[(k, s)])
                            .sum();
                        let dd = double_occupancy(&y, l) as f64 - double_occupancy(&w.x, l) as f64;
                        r * hop_sign(w.x.bits(), from, to) * (-self.c * dd).exp()
                    }
                }
            }
        }
    }

    fn accept(&self, w: &mut GutzwillerWalker, mv: Move, ratio: f64) {
        if mv == Move::Stay {
            return;
        }
        let l = self.sites();
        let y = mv.apply(&w.x);
        match (&mut w.caches, mv) {
            (Some(caches), Move::Hop { from, to }) => {
                let cache = &mut caches[from / l];
                let phi = self.slater.sector(from >= l);
                let k = phi.ncols();
                let s = cache.slot_of[from % l].expect("hop from an empty site");
                let site = to % l;
                let g: Vec<f64> = (0..k)
                    .map(|j| (0..k).map(|m| phi[(site, m)] * cache.inv[(m, j)]).sum())
                    .collect();
                let r = g[s];
                let col: Vec<f64> = (0..k).map(|i| cache.inv[(i, s)]).collect();
                for j in 0..k {
                    let f = (g[j] - if j == s { 1.0 } else { 0.0 }) / r;
                    if f != 0.0 {
                        for i in 0..k {
                            cache.inv[(i, j)] -= col[i] * f;
                        }
                    }
                }
                cache.slot_of[from % l] = None;
                cache.slot_of[site] = Some(s);
                cache.slots[s] = site;
                w.x = y;
                w.amp.log_abs += ratio.abs().ln();
                w.amp.sign *= ratio.signum();
                w.accepted += 1;
                if w.accepted % REFRESH_EVERY == 0 {
                    self.refresh(w);
                }
            }
            _ => {
                w.x = y;
                w.amp = self.log_amplitude(&y);
            }
        }
    }
}
