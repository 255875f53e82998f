use gazegpt_core::foveation::{crop_budget, Window};
use gazegpt_core::{data_budget, multiscale_crop, plan_crop, CameraModel, CropSpec, PixelPoint};
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tries every window start and keeps the one nearest the centered start,
/// among those that fit the frame and contain the point.
fn brute_force_start(c: f64, side: u32, extent: u32) -> u32 {
    let ideal = (c + 0.5 - f64::from(side) / 2.0).floor();
    (0..=extent - side)
        .filter(|&s| {
            let lo = f64::from(s) - 0.5;
            c >= lo && c < lo + f64::from(side)
        })
        .min_by(|a, b| (f64::from(*a) - ideal).abs().total_cmp(&(f64::from(*b) - ideal).abs()))
        .unwrap()
}

fn noise_frame(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

#[test]
fn windows_match_brute_force_search() {
    let m = CameraModel::imx179();
    let spec = CropSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let c = PixelPoint::new(rng.random_range(-0.5..3263.49), rng.random_range(-0.5..2447.49));
        let plan = plan_crop(&m, &c, &spec).unwrap();
        for lvl in &plan.levels {
            let side = lvl.window.width;
            let expected_side = if lvl.clamped {
                2448
            } else {
                (2.0 * m.mean_focal() * (lvl.requested_fov_deg.to_radians() / 2.0).tan()).round() as u32
            };
            assert_eq!(side, expected_side);
            assert_eq!(lvl.window.x, brute_force_start(c.u, side, 3264), "{c:?}");
            assert_eq!(lvl.window.y, brute_force_start(c.v, side, 2448), "{c:?}");
        }
    }
}

#[test]
fn default_ladder_sizes() {
    let plan = plan_crop(&CameraModel::imx179(), &PixelPoint::new(1631.5, 1223.5), &CropSpec::default()).unwrap();
    let fovs: Vec<f64> = plan.levels.iter().map(|l| l.fov_deg).collect();
    assert_eq!(fovs[0], 9.0);
    assert_eq!(fovs[1], 27.0);
    assert!(plan.levels[2].clamped && plan.levels[2].window.width == 2448);
    assert!(plan.levels.iter().all(|l| l.center_offset == [0, 0]));
}

#[test]
fn crop_budget_matches_spec_budget() {
    let m = CameraModel::from_diagonal_fov(400, 300, 78.0).unwrap();
    let spec = CropSpec { out_px: 96, ..CropSpec::default() };
    let crop = multiscale_crop(&noise_frame(400, 300, 1), &PixelPoint::new(20.0, 280.0), &m, &spec).unwrap();
    assert_eq!(crop_budget(&crop, 400, 300), data_budget(&spec, 400, 300).unwrap());
}

fn window_mean(img: &RgbImage, w: &Window) -> [f64; 3] {
    let mut s = [0.0; 3];
    for y in w.y..w.y + w.height {
        for x in w.x..w.x + w.width {
            let p = img.get_pixel(x, y);
            for k in 0..3 {
                s[k] += f64::from(p[k]);
            }
        }
    }
    s.map(|v| v / f64::from(w.width * w.height))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn levels_nest_and_contain_center(u in -0.5..319.49f64, v in -0.5..239.49f64, fov in 3.0..20.0f64) {
        let m = CameraModel::from_diagonal_fov(320, 240, 78.0).unwrap();
        let spec = CropSpec { finest_fov_deg: fov, scale_factor: 2.5, ..CropSpec::default() };
        let c = PixelPoint::new(u, v);
        let plan = plan_crop(&m, &c, &spec).unwrap();
        for pair in plan.levels.windows(2) {
            prop_assert!(pair[1].window.contains_window(&pair[0].window));
            prop_assert!(pair[1].fov_deg > pair[0].fov_deg);
        }
        for l in &plan.levels {
            prop_assert!(l.window.contains(&c));
            prop_assert!(l.window.x + l.window.width <= 320 && l.window.y + l.window.height <= 240);
        }
    }

    #[test]
    fn resampling_preserves_mean_intensity(seed in any::<u64>(), u in 0.0..159.0f64, v in 0.0..119.0f64, out in 17u32..80) {
        let m = CameraModel::from_diagonal_fov(160, 120, 78.0).unwrap();
        let frame = noise_frame(160, 120, seed);
        let spec = CropSpec { out_px: out, finest_fov_deg: 20.0, scale_factor: 2.0, levels: 2 };
        let crop = multiscale_crop(&frame, &PixelPoint::new(u, v), &m, &spec).unwrap();
        for lvl in &crop.levels {
            let want = window_mean(&frame, &lvl.meta.window);
            let got = window_mean(&lvl.image, &Window { x: 0, y: 0, width: out, height: out });
            for k in 0..3 {
                // Each output pixel is rounded to u8, so means agree to half a level.
                prop_assert!((want[k] - got[k]).abs() <= 0.5 + 1e-9, "{:?} vs {:?}", want, got);
            }
        }
    }

    #[test]
    fn crops_are_deterministic(seed in any::<u64>(), u in 0.0..159.0f64, v in 0.0..119.0f64) {
        let m = CameraModel::from_diagonal_fov(160, 120, 78.0).unwrap();
        let frame = noise_frame(160, 120, seed);
        let spec = CropSpec { out_px: 32, ..CropSpec::default() };
        let a = multiscale_crop(&frame, &PixelPoint::new(u, v), &m, &spec).unwrap();
        let b = multiscale_crop(&frame, &PixelPoint::new(u, v), &m, &spec).unwrap();
        prop_assert_eq!(a.plan, b.plan);
        for (x, y) in a.levels.iter().zip(&b.levels) {
            prop_assert_eq!(x.png_bytes(), y.png_bytes());
        }
    }
}
