use std::fs;

use gazegpt_core::geometry::DisplayView;
use gazegpt_core::scene::{DogGridScene, Scene};
use gazegpt_core::{synth_session, CameraModel, CaptureError, GazeScript, Session};
use proptest::prelude::*;

fn session(frame_times: Vec<f64>) -> Session {
    let view = DisplayView::new(CameraModel::from_diagonal_fov(96, 72, 78.0).unwrap(), 1.0).unwrap();
    let labels: Vec<String> = (0..9).map(|i| format!("dog {i}")).collect();
    let scene = Scene::DogGrid(DogGridScene::new(labels, 3).unwrap());
    let mut script = GazeScript::steady(view.plane_at_angles(2.0, 1.0), 2.0);
    script.frame_times = frame_times;
    synth_session(&scene, &view, &script).unwrap()
}

#[test]
fn save_then_load_replays_identically() {
    let s = session(vec![0.0, 0.4, 1.1]);
    let dir = tempfile::tempdir().unwrap();
    s.save(dir.path()).unwrap();
    let loaded = Session::load(dir.path()).unwrap();
    assert_eq!(loaded.camera, s.camera);
    assert_eq!(loaded.gaze(), s.gaze());
    for t in [0.0, 0.39, 0.4, 1.5, 2.0] {
        let (a, b) = (s.sample_at(t).unwrap(), loaded.sample_at(t).unwrap());
        assert_eq!(a.frame_index, b.frame_index);
        assert_eq!(a.gaze, b.gaze);
        assert_eq!(a.frame.pixels.as_raw(), b.frame.pixels.as_raw());
    }
}

#[test]
fn load_reports_broken_sessions() {
    let s = session(vec![0.0, 0.5]);
    let fresh = || {
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        dir
    };

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(Session::load(empty.path()), Err(CaptureError::MissingAsset { .. })));

    let d = fresh();
    fs::remove_file(d.path().join("frames/00001.png")).unwrap();
    assert!(matches!(Session::load(d.path()), Err(CaptureError::MissingAsset { .. })));

    let d = fresh();
    fs::write(d.path().join("manifest.json"), "{ not json").unwrap();
    assert!(matches!(Session::load(d.path()), Err(CaptureError::Schema { .. })));

    let d = fresh();
    let gaze = fs::read_to_string(d.path().join("gaze.csv")).unwrap();
    fs::write(d.path().join("gaze.csv"), gaze.replacen("t,", "time,", 1)).unwrap();
    assert!(matches!(Session::load(d.path()), Err(CaptureError::Schema { .. })));

    let d = fresh();
    let manifest = fs::read_to_string(d.path().join("manifest.json")).unwrap();
    fs::write(d.path().join("manifest.json"), manifest.replace("\"t\": 0.5", "\"t\": -1.0")).unwrap();
    assert!(matches!(Session::load(d.path()), Err(CaptureError::TimestampOrder { .. })));

    let d = fresh();
    image::RgbImage::new(10, 10).save(d.path().join("frames/00000.png")).unwrap();
    assert!(matches!(Session::load(d.path()), Err(CaptureError::FrameSize { index: 0, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sample_at_is_monotonic(mut times in prop::collection::vec(0.0..2.0f64, 1..6), probes in prop::collection::vec(0.0..2.0f64, 2..20)) {
        times.sort_by(f64::total_cmp);
        times.dedup();
        times[0] = 0.0;
        let s = session(times.clone());
        let mut probes = probes;
        probes.sort_by(f64::total_cmp);
        let mut last = (0usize, f64::NEG_INFINITY);
        for t in probes {
            let c = s.sample_at(t).unwrap();
            prop_assert!(c.frame_index >= last.0);
            prop_assert!(c.gaze.t >= last.1);
            prop_assert!(times[c.frame_index] <= t);
            last = (c.frame_index, c.gaze.t);
        }
    }
}
