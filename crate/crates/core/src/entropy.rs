//! Entropy of the two surrogates: exact enumeration, annealed partition
//! function estimation for the Ising model, and direct Monte Carlo for the
//! dichotomized Gaussian. All values are in nats.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dg::{fit_dg, pack_state, sample_dg, state_histogram, DgModel};
use crate::error::{Error, Result};
use crate::fit::{fit_ml, Expectation, TrainConfig};
use crate::gibbs::{GibbsChain, GibbsConfig};
use crate::model::{
    clip_probability, constraints_to_second_moments, enumerate_with_cap, IsingModel, MomentConstraints,
    DEFAULT_ENUMERATION_CAP,
};
use crate::rng;

/// Effective sample sizes below this fraction of the step size are reported.
const ESS_FRACTION_FLOOR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMethod {
    Exact,
    Annealed,
    Mc,
}

/// Decreasing temperature ladder ending at exactly 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealSchedule {
    pub temperatures: Vec<f64>,
    pub samples_per_step: usize,
    pub burn_in: usize,
    /// Gibbs samples used for the energy average at `T = 1`.
    pub energy_samples: usize,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule::geometric(100)
    }
}

impl AnnealSchedule {
    /// `T_n = 1.6^((20/N)(N - n))` for `n = 1..N`.
    pub fn geometric(n_steps: usize) -> Self {
        let n = n_steps as f64;
        let temperatures = (1..=n_steps)
            .map(|k| {
                if k == n_steps {
                    1.0
                } else {
                    1.6f64.powf((20.0 / n) * (n - k as f64))
                }
            })
            .collect();
        AnnealSchedule {
            temperatures,
            samples_per_step: 2000,
            burn_in: 1000,
            energy_samples: 100_000,
            seed: 0,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.temperatures.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.temperatures;
        if t.is_empty() {
            return Err(Error::InvalidConfig("schedule needs at least one temperature".into()));
        }
        if *t.last().unwrap() != 1.0 {
            return Err(Error::InvalidConfig("final temperature must be exactly 1".into()));
        }
        if t.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("temperatures must be positive and finite".into()));
        }
        if t.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig("temperatures must be strictly decreasing".into()));
        }
        if self.samples_per_step == 0 || self.energy_samples == 0 {
            return Err(Error::InvalidConfig("sample counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub temperature: f64,
    pub log_ratio: f64,
    /// Variance of the importance weights divided by their squared mean.
    pub ratio_variance: f64,
    pub ess: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPartitionEstimate {
    pub value: f64,
    pub std_error: f64,
    pub steps: Vec<StepDiagnostics>,
    /// Sum over steps of `ratio_variance / samples_per_step`.
    pub total_ratio_variance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub total_ratio_variance: Option<f64>,
    pub degenerate_steps: Vec<usize>,
    /// Sampled states whose probability estimate was zero.
    pub zero_pmf_states: usize,
    /// Sampled states whose probability estimate had fewer than 10 hits.
    pub resolution_floor_states: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: EntropyMethod,
    pub reliable: bool,
    pub diagnostics: Diagnostics,
}

impl EntropyEstimate {
    pub fn to_bits(&self) -> Self {
        let k = std::f64::consts::LN_2;
        EntropyEstimate {
            value: self.value / k,
            std_error: self.std_error / k,
            ..self.clone()
        }
    }
}

pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
    }
}

pub fn ising_entropy_exact(model: &IsingModel) -> Result<EntropyEstimate> {
    ising_entropy_exact_with_cap(model, DEFAULT_ENUMERATION_CAP)
}

pub fn ising_entropy_exact_with_cap(model: &IsingModel, cap: usize) -> Result<EntropyEstimate> {
    let e = enumerate_with_cap(model, cap)?;
    Ok(EntropyEstimate {
        value: e.entropy(),
        std_error: 0.0,
        method: EntropyMethod::Exact,
        reliable: true,
        diagnostics: Diagnostics::default(),
    })
}

/// Weighted log-mean-exp of `log_w` with the relative variance and ESS of the
/// weights.
fn log_mean_exp(log_w: &[f64]) -> (f64, f64, f64) {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return (m, f64::NAN, 0.0);
    }
    let n = log_w.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for &l in log_w {
        let w = (l - m).exp();
        s1 += w;
        s2 += w * w;
    }
    let mean = s1 / n;
    let rel_var = (s2 / n - mean * mean).max(0.0) / (mean * mean);
    (m + mean.ln(), rel_var, s1 * s1 / s2)
}

fn anneal_once(model: &IsingModel, sched: &AnnealSchedule, replica: u64) -> LogPartitionEstimate {
    let d = model.dim();
    let mut rng = rng::stream(sched.seed, "anneal", replica);
    // beta = 0 is uniform, so Z_0 = 2^d
    let mut chain = GibbsChain::random_start(model, 0.0, &mut rng);
    let mut value = d as f64 * std::f64::consts::LN_2;
    let mut var = 0.0;
    let mut total_ratio_variance = 0.0;
    let mut steps = Vec::with_capacity(sched.n_steps());
    let mut prev_beta = 0.0;
    let mut log_w = vec![0.0; sched.samples_per_step];
    for &t in &sched.temperatures {
        let beta = 1.0 / t;
        chain.set_beta(prev_beta);
        for _ in 0..sched.burn_in {
            chain.sweep(Default::default(), &mut rng);
        }
        for lw in log_w.iter_mut() {
            chain.sweep(Default::default(), &mut rng);
            *lw = (beta - prev_beta) * chain.energy();
        }
        let (log_ratio, rel_var, ess) = log_mean_exp(&log_w);
        let m = sched.samples_per_step as f64;
        value += log_ratio;
        var += rel_var / m;
        total_ratio_variance += rel_var / m;
        steps.push(StepDiagnostics {
            temperature: t,
            log_ratio,
            ratio_variance: rel_var,
            ess,
            degenerate: ess < ESS_FRACTION_FLOOR * m,
        });
        prev_beta = beta;
    }
    LogPartitionEstimate {
        value,
        std_error: var.sqrt(),
        steps,
        total_ratio_variance,
    }
}

/// `ln Z` by telescoping ratios `Z(β_n)/Z(β_{n-1})` from `β_0 = 0`.
///
/// Each ratio is the mean of `exp((β_n − β_{n−1}) xᵀJx)` over a chain at
/// `β_{n−1}` that is warm-started from the previous step. The standard error
/// treats draws within a step as independent.
pub fn ising_log_partition_annealed(model: &IsingModel, sched: &AnnealSchedule) -> Result<LogPartitionEstimate> {
    sched.validate()?;
    let est = anneal_once(model, sched, 0);
    for (n, s) in est.steps.iter().enumerate() {
        if s.degenerate {
            log::warn!("anneal step {n} (T = {}): effective sample size {:.1}", s.temperature, s.ess);
        }
    }
    Ok(est)
}

/// `H = ln Z − ⟨xᵀJx⟩`. With `n_outer > 1` the anneal is replicated on
/// derived seeds and the spread across replicas gives the error of `ln Z`.
pub fn ising_entropy_annealed(model: &IsingModel, sched: &AnnealSchedule, n_outer: usize) -> Result<EntropyEstimate> {
    sched.validate()?;
    if n_outer == 0 {
        return Err(Error::InvalidConfig("n_outer must be at least 1".into()));
    }
    let runs: Vec<LogPartitionEstimate> = (0..n_outer as u64)
        .into_par_iter()
        .map(|r| anneal_once(model, sched, r))
        .collect();
    let k = runs.len() as f64;
    let ln_z = runs.iter().map(|r| r.value).sum::<f64>() / k;
    let ln_z_se = if runs.len() > 1 {
        let v = runs.iter().map(|r| (r.value - ln_z).powi(2)).sum::<f64>() / (k - 1.0);
        (v / k).sqrt()
    } else {
        runs[0].std_error
    };

    let g = GibbsConfig {
        n_samples: sched.energy_samples,
        burn_in: sched.burn_in,
        seed: rng::derive_seed(sched.seed, "anneal-energy", 0),
        ..Default::default()
    };
    let mut rng = rng::stream(g.seed, "gibbs", 0);
    let mut chain = GibbsChain::random_start(model, 1.0, &mut rng);
    for _ in 0..g.burn_in {
        chain.sweep(g.scan, &mut rng);
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..g.n_samples {
        chain.sweep(g.scan, &mut rng);
        let e = chain.energy();
        s1 += e;
        s2 += e * e;
    }
    let n = g.n_samples as f64;
    let mean_e = s1 / n;
    let e_se = ((s2 / n - mean_e * mean_e).max(0.0) / n).sqrt();

    let mut diagnostics = Diagnostics {
        total_ratio_variance: Some(runs.iter().map(|r| r.total_ratio_variance).sum::<f64>() / k),
        ..Default::default()
    };
    for r in &runs {
        for (i, s) in r.steps.iter().enumerate() {
            if s.degenerate && !diagnostics.degenerate_steps.contains(&i) {
                diagnostics.degenerate_steps.push(i);
            }
        }
    }
    diagnostics.degenerate_steps.sort_unstable();
    if !diagnostics.degenerate_steps.is_empty() {
        diagnostics.warnings.push(format!(
            "{} annealing steps had a low effective sample size",
            diagnostics.degenerate_steps.len()
        ));
    }
    Ok(EntropyEstimate {
        value: ln_z - mean_e,
        std_error: (ln_z_se * ln_z_se + e_se * e_se).sqrt(),
        method: EntropyMethod::Annealed,
        reliable: diagnostics.degenerate_steps.is_empty(),
        diagnostics,
    })
}

/// `H ≈ mean of −ln q̂(x)` over `n_outer` draws `x`, where `q̂` is read from a
/// histogram of `n_pmf` independent draws. The log of a Monte Carlo estimate
/// biases the result upward; states never seen in the histogram are left
/// out of the average and make the estimate unreliable.
pub fn dg_entropy_mc(model: &DgModel, n_outer: usize, n_pmf: usize, seed: u64) -> Result<EntropyEstimate> {
    if n_outer == 0 || n_pmf == 0 {
        return Err(Error::InvalidConfig("n_outer and n_pmf must be at least 1".into()));
    }
    let hist = state_histogram(model, n_pmf, rng::derive_seed(seed, "dg-entropy-pmf", 0));
    let outer = sample_dg(model, n_outer, rng::derive_seed(seed, "dg-entropy-outer", 0));
    let mut diagnostics = Diagnostics::default();
    let (mut s1, mut s2, mut used) = (0.0, 0.0, 0usize);
    for x in outer.iter() {
        let hits = hist.counts.get(&pack_state(x)).copied().unwrap_or(0);
        if hits == 0 {
            diagnostics.zero_pmf_states += 1;
            continue;
        }
        if hits < 10 {
            diagnostics.resolution_floor_states += 1;
        }
        let v = -(hits as f64 / n_pmf as f64).ln();
        s1 += v;
        s2 += v * v;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Numerical {
            iteration: 0,
            message: "no sampled state was seen in the pmf histogram; increase n_pmf".into(),
        });
    }
    let n = used as f64;
    let mean = s1 / n;
    let se = ((s2 / n - mean * mean).max(0.0) / n).sqrt();
    if diagnostics.zero_pmf_states > 0 {
        diagnostics.warnings.push(format!(
            "{} sampled states had zero estimated probability; n_pmf is too small",
            diagnostics.zero_pmf_states
        ));
    }
    if diagnostics.resolution_floor_states > 0 {
        diagnostics.warnings.push(format!(
            "{} sampled states had fewer than 10 histogram hits",
            diagnostics.resolution_floor_states
        ));
    }
    for w in &diagnostics.warnings {
        log::warn!("{w}");
    }
    Ok(EntropyEstimate {
        value: mean,
        std_error: se,
        method: EntropyMethod::Mc,
        reliable: diagnostics.zero_pmf_states == 0,
        diagnostics,
    })
}

/// Plug-in entropy `−Σ q̂ ln q̂` over the full histogram of `n` draws. Only
/// sensible when `n` is large against `2^d`.
pub fn dg_entropy_plugin(model: &DgModel, n: usize, seed: u64) -> Result<EntropyEstimate> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let hist = state_histogram(model, n, rng::derive_seed(seed, "dg-entropy-plugin", 0));
    let nf = n as f64;
    let (mut h, mut m2) = (0.0, 0.0);
    for &c in hist.counts.values() {
        let q = c as f64 / nf;
        h -= q * q.ln();
        m2 += q * q.ln() * q.ln();
    }
    Ok(EntropyEstimate {
        value: h,
        std_error: ((m2 - h * h).max(0.0) / nf).sqrt(),
        method: EntropyMethod::Mc,
        reliable: true,
        diagnostics: Diagnostics::default(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub train: TrainConfig,
    pub anneal: AnnealSchedule,
    pub anneal_replicas: usize,
    pub dg_outer: usize,
    pub dg_pmf: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            train: TrainConfig {
                learning_rate: 1.0,
                max_iters: 20_000,
                moment_tolerance: 1e-7,
                ..Default::default()
            },
            anneal: AnnealSchedule::default(),
            anneal_replicas: 4,
            dg_outer: 100_000,
            dg_pmf: 2_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub h_ising: f64,
    pub h_ising_se: f64,
    pub h_dg: f64,
    pub h_dg_se: f64,
    pub ising_converged: bool,
}

/// Entropy of nested prefixes `{1..j}` under both surrogates.
pub fn entropy_size_sweep(c: &MomentConstraints, sizes: &[usize], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    for &s in sizes {
        if s == 0 || s > c.dimension() {
            return Err(Error::IndexOutOfRange {
                index: s,
                dim: c.dimension(),
            });
        }
    }
    sizes
        .iter()
        .map(|&size| {
            let sub = c.prefix(size)?;
            let target = constraints_to_second_moments(&sub)?;
            let mut train = cfg.train.clone();
            train.samples.seed = rng::derive_seed(cfg.seed, "sweep-fit", size as u64);
            if train.expectation == Expectation::Auto && size <= train.enumeration_cap {
                train.expectation = Expectation::Exact;
            }
            let fit = fit_ml(&target, &train)?;
            if !fit.converged {
                log::warn!("size {size}: Ising fit stopped before reaching the moment tolerance");
            }
            let h_ising = if size <= train.enumeration_cap {
                ising_entropy_exact_with_cap(&fit.final_model, train.enumeration_cap)?
            } else {
                let sched = AnnealSchedule {
                    seed: rng::derive_seed(cfg.seed, "sweep-anneal", size as u64),
                    ..cfg.anneal.clone()
                };
                ising_entropy_annealed(&fit.final_model, &sched, cfg.anneal_replicas.max(1))?
            };
            let dg = fit_dg(&sub)?;
            let h_dg = dg_entropy_mc(&dg, cfg.dg_outer, cfg.dg_pmf, rng::derive_seed(cfg.seed, "sweep-dg", size as u64))?;
            Ok(SweepRow {
                size,
                h_ising: h_ising.value,
                h_ising_se: h_ising.std_error,
                h_dg: h_dg.value,
                h_dg_se: h_dg.std_error,
                ising_converged: fit.converged,
            })
        })
        .collect()
}

/// Sum of binary entropies of the (clipped) means.
pub fn independent_entropy(means: &[f64]) -> f64 {
    means.iter().map(|&m| binary_entropy(clip_probability(m))).sum()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path, bits: bool) -> Result<()> {
    let k = if bits { std::f64::consts::LN_2 } else { 1.0 };
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("size,H_ising,H_ising_se,H_dg,H_dg_se\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.10e},{:.10e},{:.10e},{:.10e}\n",
            r.size,
            r.h_ising / k,
            r.h_ising_se / k,
            r.h_dg / k,
            r.h_dg_se / k
        ));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
