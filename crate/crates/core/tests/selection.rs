use gazegpt_core::evalstats::{
    report, run_classification_experiment, run_selection_experiment, ClassificationExperimentConfig, CoverageOracle,
    SelectionExperimentConfig, TrialSet,
};
use gazegpt_core::selection::default_mode;
use gazegpt_core::{
    default_modes, pixel_angle, select, CameraModel, ErrorModel, PixelPoint, SelectionKind, SelectionMode, TimeModel,
};
use proptest::prelude::*;
use rayon::prelude::*;

fn mean_angular_error(mode: &SelectionMode, trials: u64) -> f64 {
    let m = CameraModel::imx179();
    let target = m.principal_point();
    let total: f64 =
        (0..trials).into_par_iter().map(|s| pixel_angle(&m, &target, &select(mode, &target, &m, s).selected_px)).sum();
    total / trials as f64
}

#[test]
fn monte_carlo_error_means_match_accuracy() {
    let time = TimeModel { mean_s: 1.0, sd_s: 0.1 };
    let tracker = SelectionMode::new(SelectionKind::Gaze, ErrorModel::eye_tracker_rating(), time).unwrap();
    let gaze = mean_angular_error(&tracker, 100_000);
    assert!((gaze - 1.0).abs() <= 0.05, "gaze mean error {gaze}");
    let head = mean_angular_error(&default_mode(SelectionKind::Head), 100_000);
    assert!((head - 7.0).abs() <= 0.3, "head mean error {head}");
}

#[test]
fn gaze_errors_stochastically_smaller_than_head() {
    let m = CameraModel::imx179();
    let target = m.principal_point();
    let errors = |kind| {
        let mode = default_mode(kind);
        let mut e: Vec<f64> =
            (0..20_000u64).map(|s| pixel_angle(&m, &target, &select(&mode, &target, &m, s).selected_px)).collect();
        e.sort_by(f64::total_cmp);
        e
    };
    let (g, h) = (errors(SelectionKind::Gaze), errors(SelectionKind::Head));
    for q in [0.1, 0.25, 0.5, 0.75, 0.9, 0.99] {
        let i = (q * g.len() as f64) as usize;
        assert!(g[i] < h[i], "quantile {q}: gaze {} head {}", g[i], h[i]);
    }
}

fn accuracy(set: &TrialSet) -> f64 {
    report(set).unwrap().measure("accuracy").unwrap().summaries[0].mean
}

#[test]
fn classification_accuracy_falls_as_gaze_error_grows() {
    let cfg = ClassificationExperimentConfig { users: 24, ..Default::default() };
    let oracle = CoverageOracle::new(0.64);
    let time = TimeModel { mean_s: 1.0, sd_s: 0.1 };
    let accs: Vec<f64> = [0.0, 1.0, 3.0, 6.0, 12.0]
        .iter()
        .map(|&a| {
            let mode = SelectionMode::new(
                SelectionKind::Gaze,
                ErrorModel { accuracy: a, precision: 0.0, per_trial_bias: 0.0 },
                time,
            )
            .unwrap();
            accuracy(&run_classification_experiment(&cfg, &[mode], &oracle, 11).unwrap())
        })
        .collect();
    assert!((accs[0] - 0.64).abs() < 0.06, "{accs:?}");
    for w in accs.windows(2) {
        assert!(w[1] <= w[0] + 0.02, "{accs:?}");
    }
    assert!(accs[4] < accs[0] - 0.3, "{accs:?}");
}

#[test]
fn ordering_holds_across_seeds() {
    let cfg = SelectionExperimentConfig::default();
    for seed in [1, 2, 3] {
        let r = report(&run_selection_experiment(&cfg, &default_modes(), seed).unwrap()).unwrap();
        let e = r.measure("error_deg").unwrap();
        let m = |k| e.summary(k).unwrap().mean;
        use SelectionKind::*;
        assert!(m(Gaze).max(m(Phone)) < m(Head).min(m(Body)), "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_noise_selects_target(u in 0.0..3263.0f64, v in 0.0..2447.0f64, seed in any::<u64>()) {
        let m = CameraModel::imx179();
        let mode = default_mode(SelectionKind::Head).with_error_model(ErrorModel::ZERO).unwrap();
        let t = PixelPoint::new(u, v);
        let out = select(&mode, &t, &m, seed);
        prop_assert_eq!(out.selected_px, t);
        prop_assert!(!out.clamped);
    }

    #[test]
    fn selection_is_deterministic_per_seed(u in 0.0..3263.0f64, v in 0.0..2447.0f64, seed in any::<u64>()) {
        let m = CameraModel::imx179();
        let t = PixelPoint::new(u, v);
        for mode in default_modes() {
            let a = select(&mode, &t, &m, seed);
            let b = select(&mode, &t, &m, seed);
            prop_assert_eq!(a, b);
            prop_assert!(m.contains(&a.selected_px));
            prop_assert!(a.elapsed > 0.0);
        }
    }
}
