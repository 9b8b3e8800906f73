mod common;

use isingnet::fit::{fit_ml, Expectation, TrainConfig};
use isingnet::gibbs::{gibbs_moments, GibbsConfig};
use isingnet::model::constraints_to_second_moments;

#[test]
fn ten_site_hazard_fit_reconstructs_covariance() {
    let c = common::layout_constraints().prefix(10).unwrap();
    let target = constraints_to_second_moments(&c).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.2,
        max_iters: 2000,
        moment_tolerance: 1e-12,
        expectation: Expectation::Gibbs,
        samples: GibbsConfig {
            n_samples: 100_000,
            burn_in: 20_000,
            seed: 11,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = fit_ml(&target, &cfg).unwrap();
    let check = gibbs_moments(
        &report.final_model,
        &GibbsConfig {
            n_samples: 1_000_000,
            burn_in: 20_000,
            seed: 12,
            ..Default::default()
        },
    )
    .unwrap();
    let (share, median) = common::share_within_relative(&c.covariance_matrix(), &check.covariance_matrix(), 0.04);
    println!("share within 4%: {share:.3}, median relative error {median:.4}");
    assert!(share >= 0.9, "only {share:.3} of entries within 4% (median {median:.4})");
}
