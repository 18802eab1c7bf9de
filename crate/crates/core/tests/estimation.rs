use semicoint::dgp::{generate_panel, EcmConfig, InnovationSpec};
use semicoint::error::Error;
use semicoint::harness::{run_study_with, StudyConfig};
use semicoint::kde::BandwidthRule;
use semicoint::linalg::Mat;
use semicoint::pipeline::{kernel_plugins, ScoreScaling, TestOptions};
use semicoint::process::sigma_hat;
use semicoint::stats::TestKind;

fn j_hat(innov: &InnovationSpec, t: usize, options: &TestOptions) -> Mat {
    let panel = generate_panel(&EcmConfig::null(2, t, 5), innov).unwrap();
    let sigma = sigma_hat(&panel).unwrap();
    kernel_plugins(&panel, &sigma, options).unwrap().0.j_hat
}

#[test]
fn information_estimate_approaches_the_truth() {
    let sigma = Mat::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
    for innov in [InnovationSpec::student_t(5.0, sigma.clone()), InnovationSpec::gaussian(sigma.clone())] {
        let truth = innov.fisher_information().unwrap();
        let small = TestOptions { bandwidth: BandwidthRule::Fixed { bandwidths: vec![0.2, 0.28] }, ..Default::default() };
        for (t, options, tol) in [(2000, TestOptions::default(), 0.10), (20_000, small, 0.06)] {
            let est = j_hat(&innov, t, &options);
            let rel = (&est - &truth).norm() / truth.norm();
            assert!(rel < tol, "{:?} T = {t}: relative error {rel:.3}\n{est}{truth}", innov.family);
        }
    }
}

#[test]
fn raw_scores_are_attenuated_and_standardization_undoes_it() {
    let innov = InnovationSpec::student_t(5.0, Mat::identity(2, 2));
    let raw = TestOptions { scaling: ScoreScaling::Raw, ..Default::default() };
    let panel = generate_panel(&EcmConfig::null(2, 1000, 8), &innov).unwrap();
    let sigma = sigma_hat(&panel).unwrap();
    let (_, none) = kernel_plugins(&panel, &sigma, &raw).unwrap();
    assert!(none.is_none());
    let (plugins, k) = kernel_plugins(&panel, &sigma, &TestOptions::default()).unwrap();
    let k = k.unwrap();
    // smoothing shrinks the score towards zero: E[l Δy'] = I only in the limit
    assert!(k[(0, 0)] < 0.95 && k[(1, 1)] < 0.95, "{k}");
    let (raw_plugins, _) = kernel_plugins(&panel, &sigma, &raw).unwrap();
    assert!(plugins.j_hat.trace() > raw_plugins.j_hat.trace());
}

#[test]
fn study_aborts_when_the_failure_budget_is_exceeded() {
    let mut cfg = StudyConfig::desk(
        InnovationSpec::gaussian(Mat::identity(2, 2)),
        40,
        vec![0.0],
        vec![TestKind::JohansenSemipar],
    );
    cfg.reps = 100;
    cfg.critvals.grid_n = 100;
    cfg.critvals.reps = 1000;
    // each kernel sees only its own datum, so every score vanishes
    cfg.options.bandwidth = BandwidthRule::Fixed { bandwidths: vec![1e-9, 1e-9] };
    let err = run_study_with(&cfg, &cfg.critvals.open().unwrap()).unwrap_err();
    assert!(matches!(err, Error::FailureBudget { failed: 100, total: 100 }), "{err}");

    cfg.failure_budget = 0.0;
    cfg.options = TestOptions::default();
    let out = run_study_with(&cfg, &cfg.critvals.open().unwrap()).unwrap();
    assert!(out.excluded.is_empty());
    assert_eq!(out.curve.rows[0].reps, 100);
}
