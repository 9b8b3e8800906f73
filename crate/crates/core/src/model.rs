//! Shared domain types and the exact enumeration oracle.
//!
//! States use the `{0,1}` convention throughout the crate, with `1` meaning
//! the component failed.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the dimension accepted by [`enumerate`]; the pmf alone costs
/// `8 * 2^d` bytes, so 20 means 8 MiB.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Means are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before any probit or logit.
pub const PROB_CLIP: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;
const BAND_SLACK: f64 = 1e-12;

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

pub fn logit(p: f64) -> f64 {
    let p = clip_probability(p);
    (p / (1.0 - p)).ln()
}

pub fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateVector(Vec<u8>);

impl StateVector {
    pub fn new(states: Vec<u8>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyInput("state vector"));
        }
        if let Some(pos) = states.iter().position(|&s| s > 1) {
            return Err(Error::InvalidInput(format!(
                "state entry {pos} is {}, expected 0 or 1",
                states[pos]
            )));
        }
        Ok(StateVector(states))
    }

    pub fn zeros(dim: usize) -> Self {
        StateVector(vec![0; dim])
    }

    pub fn ones(dim: usize) -> Self {
        StateVector(vec![1; dim])
    }

    /// Bit `i` of `index` becomes entry `i`.
    pub fn from_index(index: u64, dim: usize) -> Self {
        StateVector((0..dim).map(|i| ((index >> i) & 1) as u8).collect())
    }

    pub fn to_index(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &s)| acc | ((s as u64) << i))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

/// A set of binary states stored row-major in one buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Samples {
    dim: usize,
    data: Vec<u8>,
}

impl Samples {
    pub fn new(dim: usize) -> Self {
        Samples {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Samples {
            dim,
            data: Vec::with_capacity(dim * n),
        }
    }

    pub fn from_flat(dim: usize, data: Vec<u8>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("sample dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "{} entries do not form rows of length {dim}",
                data.len()
            )));
        }
        if data.iter().any(|&s| s > 1) {
            return Err(Error::InvalidInput("sample entries must be 0 or 1".into()));
        }
        Ok(Samples { dim, data })
    }

    pub fn from_states(states: &[StateVector]) -> Result<Self> {
        let first = states.first().ok_or(Error::EmptyInput("sample set"))?;
        let mut out = Samples::with_capacity(first.len(), states.len());
        for s in states {
            out.push(s.as_slice())?;
        }
        Ok(out)
    }

    pub fn push(&mut self, state: &[u8]) -> Result<()> {
        if state.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: state.len(),
            });
        }
        self.data.extend_from_slice(state);
        Ok(())
    }

    pub(crate) fn push_unchecked(&mut self, state: &[u8]) {
        debug_assert_eq!(state.len(), self.dim);
        self.data.extend_from_slice(state);
    }

    pub(crate) fn extend(&mut self, other: Samples) {
        debug_assert_eq!(self.dim, other.dim);
        self.data.extend(other.data);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, k: usize) -> &[u8] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[u8] {
        &self.data
    }

    pub fn means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.iter() {
            for (acc, &s) in m.iter_mut().zip(row) {
                *acc += s as f64;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// Per-component failure probabilities and pairwise Pearson correlations.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentConstraints {
    means: Vec<f64>,
    correlations: DMatrix<f64>,
}

impl MomentConstraints {
    pub fn new(means: Vec<f64>, correlations: DMatrix<f64>) -> Result<Self> {
        let d = means.len();
        if d == 0 {
            return Err(Error::EmptyInput("means"));
        }
        if correlations.nrows() != d || correlations.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: correlations.nrows().max(correlations.ncols()),
            });
        }
        for (i, &m) in means.iter().enumerate() {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::InvalidInput(format!("mean {i} = {m} is outside [0, 1]")));
            }
        }
        let mut corr = correlations;
        for i in 0..d {
            if corr[(i, i)] != 1.0 {
                return Err(Error::InvalidInput(format!(
                    "correlation diagonal entry {i} is {}, expected exactly 1",
                    corr[(i, i)]
                )));
            }
            for j in (i + 1)..d {
                let (a, b) = (corr[(i, j)], corr[(j, i)]);
                if !a.is_finite() || !(-1.0..=1.0).contains(&a) || !(-1.0..=1.0).contains(&b) {
                    return Err(Error::InvalidInput(format!(
                        "correlation ({i}, {j}) = {a} is outside [-1, 1]"
                    )));
                }
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidInput(format!(
                        "correlation matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                if a != b {
                    let s = 0.5 * (a + b);
                    corr[(i, j)] = s;
                    corr[(j, i)] = s;
                }
            }
        }
        let c = MomentConstraints {
            means,
            correlations: corr,
        };
        let degenerate = c.degenerate_means();
        if !degenerate.is_empty() {
            log::warn!(
                "components {degenerate:?} have degenerate failure probability 0 or 1; they are clipped to [{PROB_CLIP}, {}] for transforms",
                1.0 - PROB_CLIP
            );
        }
        Ok(c)
    }

    /// Independent components with the given means.
    pub fn independent(means: Vec<f64>) -> Result<Self> {
        let d = means.len();
        Self::new(means, DMatrix::identity(d, d))
    }

    pub fn dimension(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn correlations(&self) -> &DMatrix<f64> {
        &self.correlations
    }

    pub fn std_dev(&self, i: usize) -> f64 {
        let m = self.means[i];
        (m * (1.0 - m)).sqrt()
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            let m = self.means[i];
            m * (1.0 - m)
        } else {
            self.correlations[(i, j)] * self.std_dev(i) * self.std_dev(j)
        }
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.dimension();
        DMatrix::from_fn(d, d, |i, j| self.covariance(i, j))
    }

    /// Constraints restricted to components `0..k`.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.dimension() {
            return Err(Error::IndexOutOfRange {
                index: k,
                dim: self.dimension(),
            });
        }
        Ok(MomentConstraints {
            means: self.means[..k].to_vec(),
            correlations: self.correlations.view((0, 0), (k, k)).into_owned(),
        })
    }

    pub fn degenerate_means(&self) -> Vec<usize> {
        self.means
            .iter()
            .enumerate()
            .filter(|(_, &m)| m <= 0.0 || m >= 1.0)
            .map(|(i, _)| i)
            .collect()
    }

    fn implied_second_moment(&self, i: usize, j: usize) -> f64 {
        self.covariance(i, j) + self.means[i] * self.means[j]
    }
}

/// A pair whose implied cross-moment leaves the Fréchet–Hoeffding band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityViolation {
    pub i: usize,
    pub j: usize,
    pub implied: f64,
    pub lower: f64,
    pub upper: f64,
}

impl fmt::Display for FeasibilityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pair ({}, {}) implies E[XiXj] = {:.6} outside [{:.6}, {:.6}]",
            self.i, self.j, self.implied, self.lower, self.upper
        )
    }
}

pub fn frechet_band(mi: f64, mj: f64) -> (f64, f64) {
    ((mi + mj - 1.0).max(0.0), mi.min(mj))
}

pub fn feasibility_check(c: &MomentConstraints) -> Vec<FeasibilityViolation> {
    let d = c.dimension();
    let mut out = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            let implied = c.implied_second_moment(i, j);
            let (lower, upper) = frechet_band(c.means[i], c.means[j]);
            if implied < lower - BAND_SLACK || implied > upper + BAND_SLACK {
                out.push(FeasibilityViolation {
                    i,
                    j,
                    implied,
                    lower,
                    upper,
                });
            }
        }
    }
    out
}

pub fn ensure_feasible(c: &MomentConstraints) -> Result<()> {
    let v = feasibility_check(c);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Infeasible(v))
    }
}

/// Matrix of `E[X_i X_j]`; the diagonal carries the means.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondMomentMatrix(DMatrix<f64>);

impl SecondMomentMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let d = m.nrows();
        if d == 0 || m.ncols() != d {
            return Err(Error::InvalidInput("second-moment matrix must be square and non-empty".into()));
        }
        for i in 0..d {
            let mi = m[(i, i)];
            if !(0.0..=1.0).contains(&mi) {
                return Err(Error::InvalidInput(format!("diagonal entry {i} = {mi} outside [0, 1]")));
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidInput(format!("second moments not symmetric at ({i}, {j})")));
                }
                let (lo, hi) = frechet_band(m[(i, i)], m[(j, j)]);
                if m[(i, j)] < lo - BAND_SLACK || m[(i, j)] > hi + BAND_SLACK {
                    return Err(Error::Infeasible(vec![FeasibilityViolation {
                        i,
                        j,
                        implied: m[(i, j)],
                        lower: lo,
                        upper: hi,
                    }]));
                }
            }
        }
        Ok(SecondMomentMatrix(m))
    }

    pub(crate) fn from_raw(m: DMatrix<f64>) -> Self {
        SecondMomentMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.0[(i, j)] - self.0[(i, i)] * self.0[(j, j)])
    }

    pub fn max_abs_diff(&self, other: &SecondMomentMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// Inverse of [`constraints_to_second_moments`]. Components with zero
    /// variance get zero correlation with every other component.
    pub fn to_constraints(&self) -> Result<MomentConstraints> {
        let d = self.dim();
        let means = self.means();
        let sd: Vec<f64> = means.iter().map(|m| (m * (1.0 - m)).sqrt()).collect();
        let corr = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0
            } else if sd[i] == 0.0 || sd[j] == 0.0 {
                0.0
            } else {
                ((self.0[(i, j)] - means[i] * means[j]) / (sd[i] * sd[j])).clamp(-1.0, 1.0)
            }
        });
        MomentConstraints::new(means, corr)
    }
}

pub fn constraints_to_second_moments(c: &MomentConstraints) -> Result<SecondMomentMatrix> {
    ensure_feasible(c)?;
    let d = c.dimension();
    let m = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            c.means[i]
        } else {
            c.implied_second_moment(i, j)
        }
    });
    Ok(SecondMomentMatrix(m))
}

/// Pairwise maximum-entropy model `p(x) ∝ exp(xᵀJx)`. The diagonal of `J`
/// carries the first-order terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct IsingModel {
    coupling: DMatrix<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for IsingModel {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        IsingModel::new(matrix_from_rows(&rows)?)
    }
}

impl From<IsingModel> for Vec<Vec<f64>> {
    fn from(m: IsingModel) -> Self {
        matrix_to_rows(&m.coupling)
    }
}

/// Row-major nested vectors to a matrix; ragged input is rejected.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidInput("matrix rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl IsingModel {
    /// Asymmetric input is replaced by `(A + Aᵀ)/2`, which leaves `xᵀAx` unchanged.
    pub fn new(coupling: DMatrix<f64>) -> Result<Self> {
        let d = coupling.nrows();
        if d == 0 || coupling.ncols() != d {
            return Err(Error::InvalidInput("coupling matrix must be square and non-empty".into()));
        }
        if coupling.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("coupling matrix has non-finite entries".into()));
        }
        let symmetric = (0..d).all(|i| (0..i).all(|j| coupling[(i, j)] == coupling[(j, i)]));
        let coupling = if symmetric {
            coupling
        } else {
            log::warn!("asymmetric coupling matrix symmetrized as (A + A^T)/2");
            (&coupling + coupling.transpose()) * 0.5
        };
        Ok(IsingModel { coupling })
    }

    pub fn zeros(dim: usize) -> Self {
        IsingModel {
            coupling: DMatrix::zeros(dim, dim),
        }
    }

    /// The exact solution when all correlations vanish: `J_ii = logit(μ_i)`.
    pub fn independent(means: &[f64]) -> Self {
        let d = means.len();
        let mut coupling = DMatrix::zeros(d, d);
        for (i, &m) in means.iter().enumerate() {
            coupling[(i, i)] = logit(m);
        }
        IsingModel { coupling }
    }

    pub(crate) fn from_symmetric(coupling: DMatrix<f64>) -> Self {
        IsingModel { coupling }
    }

    pub fn dim(&self) -> usize {
        self.coupling.nrows()
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn free_parameters(&self) -> usize {
        let d = self.dim();
        (d * d + d) / 2
    }

    /// `xᵀJx` for a raw state slice; no dimension check.
    pub fn energy(&self, x: &[u8]) -> f64 {
        let mut e = 0.0;
        for i in 0..x.len() {
            if x[i] == 0 {
                continue;
            }
            let col = self.coupling.column(i);
            e += col[i];
            for j in 0..i {
                if x[j] == 1 {
                    e += 2.0 * col[j];
                }
            }
        }
        e
    }

    /// `H(x) = -xᵀJx`; the Boltzmann weight is `exp(-H)`.
    pub fn hamiltonian(&self, x: &StateVector) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(-self.energy(x.as_slice()))
    }
}

pub fn hamiltonian(x: &StateVector, model: &IsingModel) -> Result<f64> {
    model.hamiltonian(x)
}

/// Exact pmf over all `2^d` states. State index `k` has entry `i` equal to
/// bit `i` of `k`.
#[derive(Clone, Debug)]
pub struct Enumeration {
    dim: usize,
    pmf: Vec<f64>,
    log_partition: f64,
    mean_energy: f64,
}

impl Enumeration {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    pub fn partition(&self) -> f64 {
        self.log_partition.exp()
    }

    pub fn probability(&self, x: &StateVector) -> f64 {
        self.pmf[x.to_index() as usize]
    }

    /// `E[xᵀJx]` under the model.
    pub fn mean_energy(&self) -> f64 {
        self.mean_energy
    }

    /// Shannon entropy in nats, `ln Z - E[xᵀJx]`.
    pub fn entropy(&self) -> f64 {
        let direct: f64 = self
            .pmf
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        direct.max(0.0)
    }

    pub fn moments(&self) -> SecondMomentMatrix {
        moments_from_indexed_pmf(&self.pmf, self.dim)
    }

    pub fn total_variation(&self, other: &Enumeration) -> f64 {
        0.5 * self
            .pmf
            .iter()
            .zip(&other.pmf)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

pub fn enumerate(model: &IsingModel) -> Result<Enumeration> {
    enumerate_with_cap(model, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_with_cap(model: &IsingModel, cap: usize) -> Result<Enumeration> {
    let d = model.dim();
    if d > cap || d >= 63 {
        return Err(Error::EnumerationCap { dim: d, cap });
    }
    let n = 1usize << d;
    let j = model.coupling();
    // Gray-code walk: one bit flips per step, energy and local fields update in O(d).
    let mut log_w = vec![0.0f64; n];
    let mut x = vec![0u8; d];
    let mut field = vec![0.0f64; d];
    let mut energy = 0.0f64;
    for k in 1..n {
        let b = k.trailing_zeros() as usize;
        let delta = j[(b, b)] + 2.0 * field[b];
        let sign = if x[b] == 0 { 1.0 } else { -1.0 };
        energy += sign * delta;
        x[b] ^= 1;
        let col = j.column(b);
        for (t, f) in field.iter_mut().enumerate() {
            if t != b {
                *f += sign * col[t];
            }
        }
        let g = k ^ (k >> 1);
        log_w[g] = energy;
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_w.iter().map(|&e| (e - max).exp()).sum();
    let log_partition = max + sum.ln();
    let mut mean_energy = 0.0;
    let pmf: Vec<f64> = log_w
        .iter()
        .map(|&e| {
            let p = (e - log_partition).exp();
            mean_energy += p * e;
            p
        })
        .collect();
    Ok(Enumeration {
        dim: d,
        pmf,
        log_partition,
        mean_energy,
    })
}

pub(crate) fn moments_from_indexed_pmf(pmf: &[f64], d: usize) -> SecondMomentMatrix {
    let mut m = DMatrix::zeros(d, d);
    let mut active = Vec::with_capacity(d);
    for (k, &p) in pmf.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        active.clear();
        active.extend((0..d).filter(|&i| (k >> i) & 1 == 1));
        for (a, &i) in active.iter().enumerate() {
            for &jj in &active[..=a] {
                m[(i, jj)] += p;
            }
        }
    }
    symmetrize_lower(&mut m);
    SecondMomentMatrix(m)
}

pub(crate) fn symmetrize_lower(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// Second moments of an arbitrary pmf over the listed states.
pub fn moments_from_pmf(pmf: &[f64], states: &[StateVector]) -> Result<SecondMomentMatrix> {
    if pmf.len() != states.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            actual: pmf.len(),
        });
    }
    let d = states.first().ok_or(Error::EmptyInput("states"))?.len();
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("pmf sums to {total}, expected 1")));
    }
    let mut m = DMatrix::zeros(d, d);
    for (s, &p) in states.iter().zip(pmf) {
        if s.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: s.len(),
            });
        }
        let x = s.as_slice();
        for i in 0..d {
            if x[i] == 0 {
                continue;
            }
            for jj in 0..=i {
                if x[jj] == 1 {
                    m[(i, jj)] += p;
                }
            }
        }
    }
    symmetrize_lower(&mut m);
    Ok(SecondMomentMatrix(m))
}
