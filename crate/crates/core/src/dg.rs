//! Dichotomized Gaussian surrogate: `X = 1[Z >= 0]`, `Z ~ N(γ, Λ)` with a
//! unit-diagonal latent correlation `Λ`.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvn::{bvn_covariance, norm_cdf, norm_inv};
use crate::error::{Error, Result};
use crate::model::{clip_probability, ensure_feasible, MomentConstraints, Samples, StateVector};
use crate::rng;

/// Eigenvalues at or above this are treated as non-negative.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Target accuracy of each latent-correlation root.
pub const ROOT_TOLERANCE: f64 = 1e-10;
const SAMPLE_BLOCK: usize = 4096;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairLog {
    pub applied: bool,
    pub min_eigenvalue_before: f64,
    pub clipped_eigenvalues: usize,
    pub max_entry_change: f64,
}

/// Eigenvalue clipping followed by a symmetric rescale back to unit diagonal.
/// Input within [`PSD_TOLERANCE`] of PSD is returned unchanged.
pub fn repair_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, RepairLog) {
    let d = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig >= -PSD_TOLERANCE {
        return (
            m.clone(),
            RepairLog {
                applied: false,
                min_eigenvalue_before: min_eig,
                clipped_eigenvalues: 0,
                max_entry_change: 0.0,
            },
        );
    }
    let clipped = eig.eigenvalues.iter().filter(|&&v| v < 0.0).count();
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let mut r = v * DMatrix::from_diagonal(&vals) * v.transpose();
    let scale: Vec<f64> = (0..d)
        .map(|i| {
            let s = r[(i, i)];
            if s > 0.0 {
                1.0 / s.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..d {
        for j in 0..d {
            r[(i, j)] *= scale[i] * scale[j];
        }
    }
    for i in 0..d {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let s = (0.5 * (r[(i, j)] + r[(j, i)])).clamp(-1.0, 1.0);
            r[(i, j)] = s;
            r[(j, i)] = s;
        }
    }
    let max_change = r
        .iter()
        .zip(m.iter())
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    (
        r,
        RepairLog {
            applied: true,
            min_eigenvalue_before: min_eig,
            clipped_eigenvalues: clipped,
            max_entry_change: max_change,
        },
    )
}

/// Cholesky that tolerates zero pivots, as produced by eigenvalue clipping.
/// Returns the packed lower triangle (row-major).
fn semidefinite_cholesky(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = a.nrows();
    let mut l = vec![0.0; d * (d + 1) / 2];
    let row = |i: usize| i * (i + 1) / 2;
    for j in 0..d {
        let rj = row(j);
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[rj + k] * l[rj + k];
        }
        if s < -1e-8 {
            return Err(Error::Factorization(format!(
                "latent correlation is indefinite at pivot {j} ({s:.3e})"
            )));
        }
        if s <= 1e-12 {
            continue;
        }
        let pivot = s.sqrt();
        l[rj + j] = pivot;
        for i in (j + 1)..d {
            let ri = row(i);
            let mut t = a[(i, j)];
            for k in 0..j {
                t -= l[ri + k] * l[rj + k];
            }
            l[ri + j] = t / pivot;
        }
    }
    Ok(l)
}

#[derive(Clone, Debug)]
pub struct DgModel {
    gamma: Vec<f64>,
    latent_corr: DMatrix<f64>,
    factor: Vec<f64>,
    repair_log: RepairLog,
}

impl DgModel {
    /// Builds a model from thresholds and a unit-diagonal latent correlation,
    /// repairing it to PSD if needed.
    pub fn from_parts(gamma: Vec<f64>, latent_corr: DMatrix<f64>) -> Result<Self> {
        let d = gamma.len();
        if d == 0 {
            return Err(Error::EmptyInput("gamma"));
        }
        if latent_corr.nrows() != d || latent_corr.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: latent_corr.nrows(),
            });
        }
        for i in 0..d {
            if latent_corr[(i, i)] != 1.0 {
                return Err(Error::InvalidInput(format!("latent correlation diagonal {i} is not 1")));
            }
            for j in 0..i {
                let v = latent_corr[(i, j)];
                if !(-1.0..=1.0).contains(&v) || (v - latent_corr[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "latent correlation ({i}, {j}) must be symmetric and in [-1, 1]"
                    )));
                }
            }
        }
        if gamma.iter().any(|g| g.is_nan()) {
            return Err(Error::InvalidInput("gamma contains NaN".into()));
        }
        let (repaired, repair_log) = repair_psd(&latent_corr);
        if repair_log.applied {
            log::warn!(
                "latent correlation repaired: min eigenvalue {:.3e}, {} clipped, max entry change {:.3e}",
                repair_log.min_eigenvalue_before,
                repair_log.clipped_eigenvalues,
                repair_log.max_entry_change
            );
        }
        let factor = semidefinite_cholesky(&repaired)?;
        Ok(DgModel {
            gamma,
            latent_corr: repaired,
            factor,
            repair_log,
        })
    }

    /// `Λ = I` with the given marginal failure probabilities.
    pub fn independent(means: &[f64]) -> Result<Self> {
        let gamma = means.iter().map(|&m| norm_inv(clip_probability(m))).collect();
        let d = means.len();
        Self::from_parts(gamma, DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// The repaired latent correlation used for sampling.
    pub fn latent_corr(&self) -> &DMatrix<f64> {
        &self.latent_corr
    }

    /// Replaces the recorded repair log, used when reloading a model whose
    /// stored correlation was already repaired at fit time.
    pub fn with_repair_log(mut self, log: RepairLog) -> Self {
        self.repair_log = log;
        self
    }

    pub fn repair_log(&self) -> &RepairLog {
        &self.repair_log
    }

    pub fn factor(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| {
            if j <= i {
                self.factor[i * (i + 1) / 2 + j]
            } else {
                0.0
            }
        })
    }

    pub fn means(&self) -> Vec<f64> {
        self.gamma.iter().map(|&g| norm_cdf(g)).collect()
    }

    /// Model covariance of `X` implied by `(γ, Λ)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                let p = norm_cdf(self.gamma[i]);
                p * (1.0 - p)
            } else {
                bvn_covariance(self.gamma[i], self.gamma[j], self.latent_corr[(i, j)])
            }
        })
    }

    fn draw_block(&self, n: usize, seed: u64, block: usize, out: &mut Samples) {
        let d = self.dim();
        let mut rng = rng::stream(seed, "dg-sample", block as u64);
        let mut eps = vec![0.0f64; d];
        let mut x = vec![0u8; d];
        for _ in 0..n {
            for e in eps.iter_mut() {
                *e = StandardNormal.sample(&mut rng);
            }
            for i in 0..d {
                let row = &self.factor[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1];
                let z = self.gamma[i] + row.iter().zip(&eps).map(|(a, b)| a * b).sum::<f64>();
                x[i] = (z >= 0.0) as u8;
            }
            out.push_unchecked(&x);
        }
    }
}

/// Solves `Ψ(γ_i, γ_j; λ) = target` by bisection; `Ψ` is increasing in `λ`.
pub fn solve_latent_correlation(gi: f64, gj: f64, target: f64) -> std::result::Result<f64, (f64, f64)> {
    let f = |l: f64| bvn_covariance(gi, gj, l) - target;
    let (f_lo, f_hi) = (f(-1.0), f(1.0));
    if f_lo > ROOT_TOLERANCE || f_hi < -ROOT_TOLERANCE {
        return Err((f_lo + target, f_hi + target));
    }
    if f_hi <= 0.0 {
        return Ok(1.0);
    }
    if f_lo >= 0.0 {
        return Ok(-1.0);
    }
    let f0 = f(0.0);
    if f0 == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = if f0 < 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    let mut best = (0.0f64, f0.abs());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.abs() < best.1 {
            best = (mid, v.abs());
        }
        if v.abs() <= 0.01 * ROOT_TOLERANCE || hi - lo < 1e-16 {
            break;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.0)
}

/// Fits `γ_i = Φ⁻¹(μ_i)` and pairwise latent correlations, then repairs `Λ`
/// to positive semidefinite.
pub fn fit_dg(c: &MomentConstraints) -> Result<DgModel> {
    ensure_feasible(c)?;
    let d = c.dimension();
    let gamma: Vec<f64> = c.means().iter().map(|&m| norm_inv(clip_probability(m))).collect();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
    let solved: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let target = c.covariance(i, j);
            if target == 0.0 {
                return Ok(0.0);
            }
            solve_latent_correlation(gamma[i], gamma[j], target).map_err(|(lower, upper)| {
                Error::LatentCorrelationInfeasible {
                    i,
                    j,
                    target,
                    lower,
                    upper,
                }
            })
        })
        .collect();
    let mut lambda = DMatrix::identity(d, d);
    for (&(i, j), r) in pairs.iter().zip(solved) {
        let v = r?;
        lambda[(i, j)] = v;
        lambda[(j, i)] = v;
    }
    DgModel::from_parts(gamma, lambda)
}

/// `n` independent draws. Deterministic in `seed` regardless of thread count.
pub fn sample_dg(model: &DgModel, n: usize, seed: u64) -> Samples {
    let d = model.dim();
    let blocks = n.div_ceil(SAMPLE_BLOCK);
    let parts: Vec<Samples> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = SAMPLE_BLOCK.min(n - b * SAMPLE_BLOCK);
            let mut s = Samples::with_capacity(d, len);
            model.draw_block(len, seed, b, &mut s);
            s
        })
        .collect();
    let mut out = Samples::with_capacity(d, n);
    for p in parts {
        out.extend(p);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmfEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub n: usize,
    /// Fewer than 10 hits: the estimate is at the Monte Carlo resolution floor.
    pub below_resolution_floor: bool,
}

impl PmfEstimate {
    fn from_hits(hits: u64, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        PmfEstimate {
            probability: p,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
            n,
            below_resolution_floor: hits < 10,
        }
    }
}

/// Direct Monte Carlo estimate of `q(x) = P(Z ∈ Ω_x)`.
pub fn dg_pmf_mc(model: &DgModel, x: &StateVector, n: usize, seed: u64) -> Result<PmfEstimate> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: x.len(),
        });
    }
    let s = sample_dg(model, n, rng::derive_seed(seed, "dg-pmf", 0));
    let hits = s.iter().filter(|row| *row == x.as_slice()).count() as u64;
    if hits < 10 {
        log::warn!("pmf estimate has {hits} hits out of {n}: below the Monte Carlo resolution floor");
    }
    Ok(PmfEstimate::from_hits(hits, n))
}

pub(crate) fn pack_state(x: &[u8]) -> Vec<u64> {
    let mut out = vec![0u64; x.len().div_ceil(64)];
    for (i, &v) in x.iter().enumerate() {
        if v == 1 {
            out[i / 64] |= 1 << (i % 64);
        }
    }
    out
}

/// Histogram of states over `n` draws, keyed by packed state.
pub struct StateHistogram {
    pub n: usize,
    pub counts: HashMap<Vec<u64>, u64>,
}

impl StateHistogram {
    pub fn estimate(&self, x: &[u8]) -> PmfEstimate {
        let hits = self.counts.get(&pack_state(x)).copied().unwrap_or(0);
        PmfEstimate::from_hits(hits, self.n)
    }
}

pub fn state_histogram(model: &DgModel, n: usize, seed: u64) -> StateHistogram {
    let s = sample_dg(model, n, seed);
    let mut counts: HashMap<Vec<u64>, u64> = HashMap::new();
    for row in s.iter() {
        *counts.entry(pack_state(row)).or_insert(0) += 1;
    }
    StateHistogram { n, counts }
}
