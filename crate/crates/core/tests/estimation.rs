mod common;

use common::{mean_and_se, small_design};
use hpgee2::scores::score_pair;
use hpgee2::selection::fit_hpgee2_from_alr;
use hpgee2::tuning::penalties_for_mode;
use hpgee2::{
    fit_alr, fit_hpgee2, grid_search, sandwich_covariance, simulate_dataset, AnalysisMode, GridSpec, ModeKind, Params,
    PenaltyConfig, PenaltyKind, SolverOptions, StudyConfig,
};

#[test]
fn scores_are_unbiased_at_the_truth() {
    let cfg = StudyConfig {
        n_clusters: 2000,
        ..StudyConfig::default()
    };
    let ds = simulate_dataset(&cfg, 0).unwrap().dataset;
    let truth = Params::new(cfg.beta_true.clone(), cfg.alpha_true.clone());
    let scores = score_pair(&ds, &truth).unwrap();
    for (label, per_cluster) in [("beta", &scores.per_cluster_beta), ("alpha", &scores.per_cluster_alpha)] {
        for l in 0..per_cluster[0].len() {
            let values: Vec<f64> = per_cluster.iter().map(|u| u[l]).collect();
            let (mean, se) = mean_and_se(&values);
            assert!(mean.abs() <= 4.0 * se, "{label}[{l}]: mean {mean:.4} with SE {se:.4}");
        }
    }
    let total: f64 = scores.per_cluster_beta.iter().map(|u| u[1]).sum();
    assert!((total - scores.u_beta[1]).abs() <= 1e-10 * total.abs().max(1.0));
}

#[test]
fn alr_is_invariant_to_cluster_order() {
    let ds = simulate_dataset(&small_design(150), 2).unwrap().dataset;
    let mut reversed = ds.clusters().to_vec();
    reversed.reverse();
    let rev = ds.with_clusters(reversed).unwrap();
    let init = Params::zeros(ds.p(), ds.q());
    let a = fit_alr(&ds, &init, 1e-9, 200).unwrap();
    let b = fit_alr(&rev, &init, 1e-9, 200).unwrap();
    assert!(a.diagnostics.converged && b.diagnostics.converged);
    assert!(a.params.max_abs_diff(&b.params) <= 1e-8);
}

#[test]
fn converged_alr_solves_both_score_equations() {
    let ds = simulate_dataset(&small_design(300), 7).unwrap().dataset;
    let fit = fit_alr(&ds, &Params::zeros(ds.p(), ds.q()), 1e-8, 200).unwrap();
    assert!(fit.diagnostics.converged);
    let s = score_pair(&ds, &fit.params).unwrap();
    let bound = 1e-4 * ds.n_clusters() as f64;
    assert!(s.u_beta.amax() <= bound && s.u_alpha.amax() <= bound);
}

#[test]
fn unpenalized_estimates_cover_the_truth() {
    let cfg = small_design(1000);
    let ds = simulate_dataset(&cfg, 1).unwrap().dataset;
    let none = PenaltyConfig::none().excluding([0]);
    let fit = fit_hpgee2(&ds, &AnalysisMode::joint(), &none, &none, &SolverOptions::default()).unwrap();
    assert!(fit.converged());
    let se = sandwich_covariance(&ds, &fit).unwrap();
    for (l, s) in se.se_beta().iter().enumerate() {
        let s = s.expect("every coefficient is active");
        assert!(
            (fit.params.beta[l] - cfg.beta_true[l]).abs() <= 4.0 * s,
            "beta[{l}]: {} vs {} se {s}",
            fit.params.beta[l],
            cfg.beta_true[l]
        );
    }
    for (l, s) in se.se_alpha().iter().enumerate() {
        let s = s.expect("every coefficient is active");
        assert!(
            (fit.params.alpha[l] - cfg.alpha_true[l]).abs() <= 4.0 * s,
            "alpha[{l}]: {} vs {} se {s}",
            fit.params.alpha[l],
            cfg.alpha_true[l]
        );
    }
}

#[test]
fn sandwich_is_symmetric_and_skips_zeros() {
    let cfg = small_design(400);
    let ds = simulate_dataset(&cfg, 3).unwrap().dataset;
    let (cm, ca) = penalties_for_mode(ModeKind::Joint, PenaltyKind::Scad, 0.15, 3.7, true).unwrap();
    let fit = fit_hpgee2(&ds, &AnalysisMode::joint(), &cm, &ca, &SolverOptions::default()).unwrap();
    let est = sandwich_covariance(&ds, &fit).unwrap();
    let k = est.mean_index.len() + est.assoc_index.len();
    assert_eq!(est.covariance.shape(), (k, k));
    assert!((&est.covariance - est.covariance.transpose()).amax() <= 1e-12 * est.covariance.amax());
    assert!(est.covariance.diagonal().iter().all(|&v| v > 0.0));
    assert_eq!(est.mean_index, fit.mean_active());
    for (l, s) in est.se_beta().iter().enumerate() {
        assert_eq!(s.is_some(), fit.params.beta[l] != 0.0);
    }
}

#[test]
fn single_point_grid_equals_a_direct_fit() {
    let ds = simulate_dataset(&small_design(200), 9).unwrap().dataset;
    let opts = SolverOptions::default();
    let mode = AnalysisMode::mean_only();
    let (cm, ca) = penalties_for_mode(ModeKind::MeanOnly, PenaltyKind::Scad, 0.08, 3.7, true).unwrap();
    let report = grid_search(&ds, &mode, &cm, &ca, &GridSpec::from_values(vec![0.08]).unwrap(), &opts).unwrap();
    let direct = fit_hpgee2(&ds, &mode, &cm, &ca, &opts).unwrap();
    assert_eq!(report.chosen_lambda, 0.08);
    assert_eq!(report.chosen_fit.params, direct.params);
}

#[test]
fn huge_lambda_zeroes_every_penalized_coefficient() {
    let ds = simulate_dataset(&small_design(200), 9).unwrap().dataset;
    let opts = SolverOptions::default();
    let alr = fit_alr(&ds, &Params::zeros(ds.p(), ds.q()), opts.tol, opts.max_outer).unwrap();
    let (cm, ca) = penalties_for_mode(ModeKind::Joint, PenaltyKind::Lasso, 1e6, 3.7, true).unwrap();
    let fit = fit_hpgee2_from_alr(&ds, &alr, &AnalysisMode::joint(), &cm, &ca, &opts).unwrap();
    assert_eq!(fit.mean_active(), vec![0]);
    assert_eq!(fit.assoc_active(), vec![0]);

    // On a {0, huge} grid the criterion must pick one of the two ends.
    let report = grid_search(
        &ds,
        &AnalysisMode::joint(),
        &cm,
        &ca,
        &GridSpec::from_values(vec![0.0, 1e6]).unwrap(),
        &opts,
    )
    .unwrap();
    let bic = report.bic_values();
    let expected = if bic[1] <= bic[0] { 1 } else { 0 };
    assert_eq!(report.chosen_index, expected);
}
