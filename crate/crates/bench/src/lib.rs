//! Shared inputs for the benchmarks.

use gazegpt_core::{CameraModel, PixelPoint, PlanePoint};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full-resolution noise frame for the default camera.
pub fn noise_frame(model: &CameraModel, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(model.width_px(), model.height_px(), |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

/// Four marker correspondences under a mild perspective distortion.
pub fn marker_pairs() -> ([PixelPoint; 4], [PlanePoint; 4]) {
    (
        [
            PixelPoint::new(812.0, 640.0),
            PixelPoint::new(2410.0, 598.0),
            PixelPoint::new(2455.0, 1830.0),
            PixelPoint::new(790.0, 1802.0),
        ],
        [
            PlanePoint::new(-0.3, -0.2),
            PlanePoint::new(0.3, -0.2),
            PlanePoint::new(0.3, 0.2),
            PlanePoint::new(-0.3, 0.2),
        ],
    )
}

/// `n × k` matrix of standard-normal-ish values.
pub fn random_matrix(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0)).collect()).collect()
}
