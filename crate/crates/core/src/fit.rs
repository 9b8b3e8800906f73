//! Parameter identification for [`IsingModel`]: maximum-likelihood gradient
//! ascent on moment residuals and contrastive divergence.
//!
//! Both fitters apply `J ← J + η (⟨xxᵀ⟩_data − ⟨xxᵀ⟩_model)` entry-wise. With
//! `p(x) ∝ exp(xᵀJx)` this is the direction that shrinks the residual; the
//! `fit_update_sign_reduces_residual` test pins it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dg::{fit_dg, sample_dg};
use crate::error::{Error, Result};
use crate::gibbs::{estimate_moments, gibbs_moments, GibbsChain, GibbsConfig, MomentAccumulator};
use crate::model::{
    enumerate_with_cap, IsingModel, MomentConstraints, Samples, SecondMomentMatrix,
    DEFAULT_ENUMERATION_CAP, PROB_CLIP,
};
use crate::rng;

/// How `⟨xxᵀ⟩_model` is computed during maximum-likelihood fitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    /// Enumeration when the dimension is within the cap, Gibbs otherwise.
    #[default]
    Auto,
    Exact,
    Gibbs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// `J_ii = logit(μ_i)`, zero couplings.
    #[default]
    Independent,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the max-abs second-moment residual is at or below this.
    pub moment_tolerance: f64,
    pub cd_steps: usize,
    pub samples: GibbsConfig,
    /// Scale the learning rate by `1/sqrt(t+1)`.
    pub lr_decay: bool,
    pub expectation: Expectation,
    pub enumeration_cap: usize,
    pub init: InitStrategy,
    /// Any coupling beyond this magnitude stops the fit as degenerate.
    pub coupling_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.2,
            max_iters: 2000,
            moment_tolerance: 5e-3,
            cd_steps: 1,
            samples: GibbsConfig::default(),
            lr_decay: false,
            expectation: Expectation::Auto,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            init: InitStrategy::Independent,
            coupling_limit: 30.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.moment_tolerance > 0.0) {
            return Err(Error::InvalidConfig("moment_tolerance must be positive".into()));
        }
        if self.cd_steps == 0 {
            return Err(Error::InvalidConfig("cd_steps must be at least 1".into()));
        }
        self.samples.validate()
    }

    fn step_size(&self, t: usize) -> f64 {
        if self.lr_decay {
            self.learning_rate / ((t + 1) as f64).sqrt()
        } else {
            self.learning_rate
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    MaximumLikelihood,
    ContrastiveDivergence,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub method: FitMethod,
    pub final_model: IsingModel,
    pub residual_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// `true` when the model expectation came from enumeration.
    pub exact_expectation: bool,
    pub flags: Vec<String>,
    pub config: TrainConfig,
}

fn init_model(means: &[f64], cfg: &TrainConfig) -> IsingModel {
    match cfg.init {
        InitStrategy::Independent => IsingModel::independent(means),
        InitStrategy::Zero => IsingModel::zeros(means.len()),
    }
}

fn degenerate_sites(means: &[f64]) -> Vec<usize> {
    means
        .iter()
        .enumerate()
        .filter(|(_, &m)| m <= PROB_CLIP || m >= 1.0 - PROB_CLIP)
        .map(|(i, _)| i)
        .collect()
}

fn residual(target: &SecondMomentMatrix, model: &SecondMomentMatrix) -> (DMatrix<f64>, f64) {
    let r = target.matrix() - model.matrix();
    let max = r.iter().fold(0.0f64, |acc, v| {
        if v.is_nan() || acc.is_nan() {
            f64::NAN
        } else {
            acc.max(v.abs())
        }
    });
    (r, max)
}

/// Applies one update in place; returns the index of any coupling that
/// crossed the limit.
fn apply_update(
    coupling: &mut DMatrix<f64>,
    r: &DMatrix<f64>,
    step: f64,
    limit: f64,
    iteration: usize,
) -> Result<Option<(usize, usize)>> {
    coupling.zip_apply(r, |j, g| *j += step * g);
    let d = coupling.nrows();
    for i in 0..d {
        for k in 0..=i {
            // moment estimates can differ from their transpose in the last bit
            coupling[(k, i)] = coupling[(i, k)];
            let v = coupling[(i, k)];
            if !v.is_finite() {
                return Err(Error::Numerical {
                    iteration,
                    message: format!("coupling ({i}, {k}) became {v}"),
                });
            }
            if v.abs() > limit {
                return Ok(Some((i, k)));
            }
        }
    }
    Ok(None)
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    method: FitMethod,
    exact: bool,
}

impl Loop<'_> {
    fn run<F>(&self, target: &SecondMomentMatrix, mut model_moments: F) -> Result<FitReport>
    where
        F: FnMut(&IsingModel, usize) -> Result<SecondMomentMatrix>,
    {
        let cfg = self.cfg;
        let means = target.means();
        let mut flags = Vec::new();
        let mut model = init_model(&means, cfg);
        let degenerate = degenerate_sites(&means);
        if !degenerate.is_empty() {
            flags.push(format!(
                "degenerate marginal at sites {degenerate:?}: target mean is 0 or 1, the diagonal coupling would diverge"
            ));
            return Ok(self.report(model, Vec::new(), false, flags));
        }
        let mut trace = Vec::with_capacity(cfg.max_iters);
        let mut converged = false;
        let mut coupling = model.coupling().clone();
        for t in 0..cfg.max_iters {
            let current = model_moments(&model, t)?;
            let (r, max) = residual(target, &current);
            if !max.is_finite() {
                return Err(Error::Numerical {
                    iteration: t,
                    message: "moment residual is not finite".into(),
                });
            }
            trace.push(max);
            if max <= cfg.moment_tolerance {
                converged = true;
                break;
            }
            if let Some((i, k)) = apply_update(&mut coupling, &r, cfg.step_size(t), cfg.coupling_limit, t)? {
                flags.push(format!(
                    "degenerate marginal guard: coupling ({i}, {k}) exceeded {} at iteration {t}",
                    cfg.coupling_limit
                ));
                model = IsingModel::from_symmetric(coupling);
                return Ok(self.report(model, trace, false, flags));
            }
            model = IsingModel::from_symmetric(coupling.clone());
        }
        if self.method == FitMethod::ContrastiveDivergence {
            flags.push(
                "contrastive divergence is biased: it matches moments after a finite number of sweeps, not at equilibrium"
                    .into(),
            );
        }
        Ok(self.report(model, trace, converged, flags))
    }

    fn report(&self, model: IsingModel, trace: Vec<f64>, converged: bool, flags: Vec<String>) -> FitReport {
        FitReport {
            method: self.method,
            final_model: model,
            iterations_used: trace.len(),
            residual_trace: trace,
            converged,
            exact_expectation: self.exact,
            flags,
            config: self.cfg.clone(),
        }
    }
}

fn use_exact(d: usize, cfg: &TrainConfig) -> Result<bool> {
    match cfg.expectation {
        Expectation::Exact if d > cfg.enumeration_cap => Err(Error::EnumerationCap {
            dim: d,
            cap: cfg.enumeration_cap,
        }),
        Expectation::Exact => Ok(true),
        Expectation::Gibbs => Ok(false),
        Expectation::Auto => Ok(d <= cfg.enumeration_cap),
    }
}

/// Model moments for one training iteration.
pub fn model_moments(model: &IsingModel, cfg: &TrainConfig, exact: bool, iteration: usize) -> Result<SecondMomentMatrix> {
    if exact {
        Ok(enumerate_with_cap(model, cfg.enumeration_cap)?.moments())
    } else {
        let g = GibbsConfig {
            seed: rng::derive_seed(cfg.samples.seed, "fit-ml", iteration as u64),
            ..cfg.samples.clone()
        };
        gibbs_moments(model, &g)
    }
}

/// Maximum-likelihood fit of `J` to target second moments.
pub fn fit_ml(target: &SecondMomentMatrix, cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    let target = SecondMomentMatrix::new(target.matrix().clone())?;
    let exact = use_exact(target.dim(), cfg)?;
    Loop {
        cfg,
        method: FitMethod::MaximumLikelihood,
        exact,
    }
    .run(&target, |m, t| model_moments(m, cfg, exact, t))
}

/// Contrastive divergence: every iteration restarts one chain at each data
/// sample and advances it `cd_steps` full sweeps.
pub fn fit_cd(data: &Samples, cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    let target = estimate_moments(data)?;
    let d = data.dim();
    Loop {
        cfg,
        method: FitMethod::ContrastiveDivergence,
        exact: false,
    }
    .run(&target, |model, t| {
        let mut rng = rng::stream(cfg.samples.seed, "fit-cd", t as u64);
        let mut acc = MomentAccumulator::new(d);
        for x in data.iter() {
            let mut chain = GibbsChain::new(model, 1.0, x.to_vec());
            for _ in 0..cfg.cd_steps {
                chain.sweep(cfg.samples.scan, &mut rng);
            }
            acc.add(chain.state());
        }
        Ok(acc.finish())
    })
}

/// Samples whose moments approach `c`, drawn from a fitted DG surrogate.
pub fn synthesize_data(c: &MomentConstraints, n: usize, seed: u64) -> Result<Samples> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let model = fit_dg(c)?;
    Ok(sample_dg(&model, n, rng::derive_seed(seed, "synthesize", 0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{constraints_to_second_moments, enumerate, logit};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn model_from(vals: &[f64], d: usize) -> IsingModel {
        IsingModel::new(DMatrix::from_row_slice(d, d, vals)).unwrap()
    }

    #[test]
    fn fit_update_sign_reduces_residual() {
        let truth = model_from(&[-0.5, 0.4, 0.4, 0.2], 2);
        let target = enumerate(&truth).unwrap().moments();
        let cfg = TrainConfig {
            max_iters: 2,
            moment_tolerance: 1e-15,
            expectation: Expectation::Exact,
            init: InitStrategy::Zero,
            ..Default::default()
        };
        let report = fit_ml(&target, &cfg).unwrap();
        assert_eq!(report.residual_trace.len(), 2);
        assert!(report.residual_trace[1] < report.residual_trace[0]);
    }

    #[test]
    fn stationary_point_is_fixed() {
        let truth = model_from(&[-0.3, 0.2, 0.1, 0.2, 0.5, -0.4, 0.1, -0.4, 0.0], 3);
        let target = enumerate(&truth).unwrap().moments();
        let cfg = TrainConfig {
            max_iters: 1,
            moment_tolerance: 1e-300,
            expectation: Expectation::Exact,
            ..Default::default()
        };
        let current = model_moments(&truth, &cfg, true, 0).unwrap();
        let (r, max) = residual(&target, &current);
        assert_eq!(max, 0.0);
        let mut j = truth.coupling().clone();
        apply_update(&mut j, &r, 0.2, 30.0, 0).unwrap();
        assert_eq!(&j, truth.coupling());
    }

    #[test]
    fn exact_mode_recovers_known_model() {
        let truth = model_from(&[-0.8, 0.3, -0.2, 0.3, 0.1, 0.25, -0.2, 0.25, -1.1], 3);
        let e_truth = enumerate(&truth).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1.0,
            max_iters: 20_000,
            moment_tolerance: 1e-10,
            expectation: Expectation::Exact,
            ..Default::default()
        };
        let report = fit_ml(&e_truth.moments(), &cfg).unwrap();
        assert!(report.converged);
        let e_fit = enumerate(&report.final_model).unwrap();
        assert!(e_fit.moments().max_abs_diff(&e_truth.moments()) < 1e-6);
        assert!(e_fit.total_variation(&e_truth) < 1e-6);
        assert_eq!(report.residual_trace.len(), report.iterations_used);
    }

    #[test]
    fn independent_target_gives_logit_diagonal() {
        let means = vec![0.2, 0.45, 0.7];
        let c = MomentConstraints::independent(means.clone()).unwrap();
        let target = constraints_to_second_moments(&c).unwrap();
        let cfg = TrainConfig {
            max_iters: 50,
            moment_tolerance: 1e-12,
            expectation: Expectation::Exact,
            init: InitStrategy::Zero,
            learning_rate: 1.0,
            ..Default::default()
        };
        let mut cfg_long = cfg.clone();
        cfg_long.max_iters = 20_000;
        let report = fit_ml(&target, &cfg_long).unwrap();
        let j = report.final_model.coupling();
        for i in 0..3 {
            assert_abs_diff_eq!(j[(i, i)], logit(means[i]), epsilon = 1e-6);
            for k in 0..i {
                assert_abs_diff_eq!(j[(i, k)], 0.0, epsilon = 1e-6);
            }
        }
        // starting at the independent solution converges immediately
        let report = fit_ml(&target, &TrainConfig { init: InitStrategy::Independent, ..cfg }).unwrap();
        assert_eq!(report.iterations_used, 1);
        assert!(report.converged);
    }

    #[test]
    fn independent_target_with_gibbs_expectation() {
        let means = vec![0.3, 0.6];
        let c = MomentConstraints::independent(means.clone()).unwrap();
        let target = constraints_to_second_moments(&c).unwrap();
        let cfg = TrainConfig {
            max_iters: 200,
            moment_tolerance: 1e-9,
            expectation: Expectation::Gibbs,
            init: InitStrategy::Zero,
            samples: GibbsConfig {
                n_samples: 20_000,
                burn_in: 100,
                seed: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = fit_ml(&target, &cfg).unwrap();
        let j = report.final_model.coupling();
        assert!(j[(0, 1)].abs() < 0.1, "{}", j[(0, 1)]);
        assert!((j[(0, 0)] - logit(0.3)).abs() < 0.1);
        assert!((j[(1, 1)] - logit(0.6)).abs() < 0.1);
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let c = MomentConstraints::new(
            vec![0.3, 0.4],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        let target = constraints_to_second_moments(&c).unwrap();
        let cfg = TrainConfig {
            max_iters: 5,
            expectation: Expectation::Gibbs,
            moment_tolerance: 1e-9,
            samples: GibbsConfig {
                n_samples: 2_000,
                burn_in: 10,
                seed: 17,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = fit_ml(&target, &cfg).unwrap();
        let b = fit_ml(&target, &cfg).unwrap();
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.residual_trace, b.residual_trace);
    }

    #[test]
    fn exact_mode_above_cap_refused() {
        let target = constraints_to_second_moments(&MomentConstraints::independent(vec![0.3; 4]).unwrap()).unwrap();
        let cfg = TrainConfig {
            expectation: Expectation::Exact,
            enumeration_cap: 3,
            ..Default::default()
        };
        assert!(matches!(fit_ml(&target, &cfg), Err(Error::EnumerationCap { .. })));
    }

    fn exact_samples(model: &IsingModel, n: usize, seed: u64) -> Samples {
        let e = enumerate(model).unwrap();
        let d = model.dim();
        let mut cdf = Vec::with_capacity(e.pmf().len());
        let mut acc = 0.0;
        for &p in e.pmf() {
            acc += p;
            cdf.push(acc);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = Samples::with_capacity(d, n);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
            let x: Vec<u8> = (0..d).map(|i| ((k >> i) & 1) as u8).collect();
            s.push(&x).unwrap();
        }
        s
    }

    #[test]
    fn cd1_recovers_covariance() {
        let truth = model_from(&[-0.6, 0.35, -0.15, 0.35, -0.2, 0.3, -0.15, 0.3, -0.9], 3);
        let data = exact_samples(&truth, 100_000, 4);
        let cfg = TrainConfig {
            learning_rate: 1.0,
            max_iters: 1000,
            moment_tolerance: 1e-12,
            samples: GibbsConfig {
                seed: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = fit_cd(&data, &cfg).unwrap();
        assert!(report.flags.iter().any(|f| f.contains("biased")));
        let truth_cov = enumerate(&truth).unwrap().moments().covariance_matrix();
        let fit_cov = enumerate(&report.final_model).unwrap().moments().covariance_matrix();
        for i in 0..3 {
            for k in 0..3 {
                let rel = (fit_cov[(i, k)] - truth_cov[(i, k)]).abs() / truth_cov[(i, k)].abs();
                assert!(rel < 0.05, "({i},{k}) rel {rel}");
            }
        }
    }

    #[test]
    fn cd_with_many_steps_approaches_ml() {
        let truth = model_from(&[-0.4, 0.3, 0.0, 0.3, -0.7, 0.2, 0.0, 0.2, 0.1], 3);
        let data = exact_samples(&truth, 20_000, 8);
        let target = estimate_moments(&data).unwrap();
        let ml = fit_ml(
            &target,
            &TrainConfig {
                learning_rate: 1.0,
                max_iters: 20_000,
                moment_tolerance: 1e-10,
                expectation: Expectation::Exact,
                ..Default::default()
            },
        )
        .unwrap();
        let cd = fit_cd(
            &data,
            &TrainConfig {
                learning_rate: 1.0,
                max_iters: 400,
                moment_tolerance: 1e-12,
                cd_steps: 10,
                samples: GibbsConfig {
                    seed: 3,
                    ..Default::default()
                },
                ..Default::default()
            },
        )
        .unwrap();
        let ml_cov = enumerate(&ml.final_model).unwrap().moments().covariance_matrix();
        let cd_cov = enumerate(&cd.final_model).unwrap().moments().covariance_matrix();
        for i in 0..3 {
            for k in 0..=i {
                let diff = (ml_cov[(i, k)] - cd_cov[(i, k)]).abs();
                assert!(diff < 3e-3, "({i},{k}) diff {diff}");
            }
        }
    }

    #[test]
    fn all_zero_data_hits_degenerate_guard() {
        let data = Samples::from_flat(3, vec![0; 30]).unwrap();
        let report = fit_cd(&data, &TrainConfig::default()).unwrap();
        assert!(!report.converged);
        assert!(report.flags.iter().any(|f| f.contains("degenerate marginal")));
        assert!(fit_cd(&Samples::new(3), &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            cd_steps: 0,
            ..Default::default()
        };
        assert!(matches!(fit_cd(&data, &bad), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn coupling_limit_guard_stops_fit() {
        let target = constraints_to_second_moments(&MomentConstraints::independent(vec![1e-6, 0.5]).unwrap()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e5,
            max_iters: 100,
            expectation: Expectation::Exact,
            init: InitStrategy::Zero,
            coupling_limit: 30.0,
            ..Default::default()
        };
        let report = fit_ml(&target, &cfg).unwrap();
        assert!(!report.converged);
        assert!(report.flags.iter().any(|f| f.contains("guard")));
    }

    #[test]
    fn synthesized_data_moments() {
        let c = MomentConstraints::independent(vec![0.2, 0.5, 0.7]).unwrap();
        let n = 100_000;
        let s = synthesize_data(&c, n, 1).unwrap();
        for (mu, target) in s.means().iter().zip(c.means()) {
            let se = (target * (1.0 - target) / n as f64).sqrt();
            assert!((mu - target).abs() < 3.0 * se);
        }
        assert_eq!(synthesize_data(&c, 100, 5).unwrap(), synthesize_data(&c, 100, 5).unwrap());

        let c = MomentConstraints::new(
            vec![0.5, 0.5],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let s = synthesize_data(&c, 1_000_000, 2).unwrap();
        let r = estimate_moments(&s).unwrap().to_constraints().unwrap().correlations()[(0, 1)];
        assert!((r - 0.5).abs() < 0.003, "{r}");
    }
}
