//! Gibbs sampling for [`IsingModel`] and moment estimation from samples.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{logistic, IsingModel, Samples, SecondMomentMatrix, StateVector};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScanOrder {
    #[default]
    Sequential,
    RandomSite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub n_samples: usize,
    /// Sweeps discarded at the start of every chain.
    pub burn_in: usize,
    /// Full sweeps between retained samples.
    pub thinning: usize,
    pub scan: ScanOrder,
    pub seed: u64,
    /// Independent chains; each burns in separately and contributes an
    /// equal share of `n_samples`.
    pub chains: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_samples: 100_000,
            burn_in: 20_000,
            thinning: 1,
            scan: ScanOrder::Sequential,
            seed: 0,
            chains: 1,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidConfig("thinning must be at least 1".into()));
        }
        if self.chains == 0 || self.chains > self.n_samples {
            return Err(Error::InvalidConfig("chains must be in 1..=n_samples".into()));
        }
        Ok(())
    }

    fn chain_share(&self, c: usize) -> usize {
        let base = self.n_samples / self.chains;
        base + usize::from(c < self.n_samples % self.chains)
    }
}

/// One Gibbs chain over `exp(beta * xᵀJx)`, tracking the local fields
/// `sum_{j != i} J_ij x_j` so that a site update costs O(1) unless it flips.
pub struct GibbsChain<'a> {
    coupling: &'a [f64],
    dim: usize,
    beta: f64,
    state: Vec<u8>,
    field: Vec<f64>,
}

impl<'a> GibbsChain<'a> {
    pub fn new(model: &'a IsingModel, beta: f64, state: Vec<u8>) -> Self {
        let dim = model.dim();
        assert_eq!(state.len(), dim);
        let coupling = model.coupling().as_slice();
        let mut field = vec![0.0; dim];
        for (j, &xj) in state.iter().enumerate() {
            if xj == 1 {
                let col = &coupling[j * dim..(j + 1) * dim];
                for (i, f) in field.iter_mut().enumerate() {
                    if i != j {
                        *f += col[i];
                    }
                }
            }
        }
        GibbsChain {
            coupling,
            dim,
            beta,
            state,
            field,
        }
    }

    pub fn random_start(model: &'a IsingModel, beta: f64, rng: &mut Rng) -> Self {
        let state = (0..model.dim()).map(|_| rng.random::<bool>() as u8).collect();
        Self::new(model, beta, state)
    }

    pub fn state(&self) -> &[u8] {
        &self.state
    }

    pub fn into_state(self) -> Vec<u8> {
        self.state
    }

    /// `xᵀJx` of the current state, read off the tracked fields.
    pub fn energy(&self) -> f64 {
        self.state
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| self.coupling[i * self.dim + i] + self.field[i])
            .sum()
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    #[inline]
    fn conditional(&self, i: usize) -> f64 {
        let jii = self.coupling[i * self.dim + i];
        logistic(self.beta * (jii + 2.0 * self.field[i]))
    }

    #[inline]
    fn update_site(&mut self, i: usize, rng: &mut Rng) {
        let p = self.conditional(i);
        let new = (rng.random::<f64>() < p) as u8;
        if new != self.state[i] {
            self.state[i] = new;
            let sign = if new == 1 { 1.0 } else { -1.0 };
            let col = &self.coupling[i * self.dim..(i + 1) * self.dim];
            for (f, &c) in self.field.iter_mut().zip(col) {
                *f += sign * c;
            }
            self.field[i] -= sign * col[i];
        }
    }

    /// One full sweep: `d` site updates.
    pub fn sweep(&mut self, scan: ScanOrder, rng: &mut Rng) {
        match scan {
            ScanOrder::Sequential => {
                for i in 0..self.dim {
                    self.update_site(i, rng);
                }
            }
            ScanOrder::RandomSite => {
                for _ in 0..self.dim {
                    let i = rng.random_range(0..self.dim);
                    self.update_site(i, rng);
                }
            }
        }
    }
}

/// `p(X_i = 1 | x_{-i}) = logistic(J_ii + 2 sum_{j != i} J_ij x_j)`.
pub fn gibbs_conditional(i: usize, x: &StateVector, model: &IsingModel) -> Result<f64> {
    let d = model.dim();
    if i >= d {
        return Err(Error::IndexOutOfRange { index: i, dim: d });
    }
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x.len(),
        });
    }
    let j = model.coupling();
    let field: f64 = x
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(k, &xk)| k != i && xk == 1)
        .map(|(k, _)| j[(i, k)])
        .sum();
    Ok(logistic(j[(i, i)] + 2.0 * field))
}

/// Integer co-occurrence counts over the lower triangle.
#[derive(Clone, Debug)]
pub struct MomentAccumulator {
    dim: usize,
    counts: Vec<u64>,
    n: u64,
    active: Vec<usize>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator {
            dim,
            counts: vec![0; dim * dim],
            n: 0,
            active: Vec::with_capacity(dim),
        }
    }

    #[inline]
    pub fn add(&mut self, x: &[u8]) {
        self.active.clear();
        self.active
            .extend(x.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i));
        for (a, &i) in self.active.iter().enumerate() {
            let row = &mut self.counts[i * self.dim..];
            for &j in &self.active[..=a] {
                row[j] += 1;
            }
        }
        self.n += 1;
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn finish(&self) -> SecondMomentMatrix {
        let d = self.dim;
        let n = self.n.max(1) as f64;
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let v = self.counts[i * d + j] as f64 / n;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SecondMomentMatrix::from_raw(m)
    }
}

fn run_chain<F: FnMut(&[u8])>(model: &IsingModel, cfg: &GibbsConfig, chain: usize, mut visit: F) {
    let mut rng = rng::stream(cfg.seed, "gibbs", chain as u64);
    let mut g = GibbsChain::random_start(model, 1.0, &mut rng);
    for _ in 0..cfg.burn_in {
        g.sweep(cfg.scan, &mut rng);
    }
    for _ in 0..cfg.chain_share(chain) {
        for _ in 0..cfg.thinning {
            g.sweep(cfg.scan, &mut rng);
        }
        visit(g.state());
    }
}

/// Draws `n_samples` states. Deterministic in `cfg.seed` regardless of thread count.
pub fn gibbs_sample(model: &IsingModel, cfg: &GibbsConfig) -> Result<Samples> {
    cfg.validate()?;
    let d = model.dim();
    let parts: Vec<Samples> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut s = Samples::with_capacity(d, cfg.chain_share(c));
            run_chain(model, cfg, c, |x| s.push_unchecked(x));
            s
        })
        .collect();
    let mut out = Samples::with_capacity(d, cfg.n_samples);
    for p in parts {
        out.extend(p);
    }
    Ok(out)
}

/// Gibbs estimate of `<x xᵀ>` without storing the samples.
pub fn gibbs_moments(model: &IsingModel, cfg: &GibbsConfig) -> Result<SecondMomentMatrix> {
    cfg.validate()?;
    let d = model.dim();
    let parts: Vec<MomentAccumulator> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut acc = MomentAccumulator::new(d);
            run_chain(model, cfg, c, |x| acc.add(x));
            acc
        })
        .collect();
    let mut total = MomentAccumulator::new(d);
    for p in &parts {
        total.merge(p);
    }
    Ok(total.finish())
}

/// `(1/N) sum x xᵀ` over the sample set.
pub fn estimate_moments(samples: &Samples) -> Result<SecondMomentMatrix> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("sample set"));
    }
    let mut acc = MomentAccumulator::new(samples.dim());
    for x in samples.iter() {
        acc.add(x);
    }
    Ok(acc.finish())
}
