//! Classifiers that answer "which label is this crop about?" during the
//! simulated classification experiment.

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use thiserror::Error;

use crate::foveation::{CropPlan, Window};
use crate::geometry::{DisplayView, PixelPoint};
use crate::pipeline::{classify_query, ClassifyOutcome, VisionModel};
use crate::scene::{DogGridScene, Scene};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("the crop does not cover any labeled region")]
    EmptyCoverage,
    #[error("classifier failed: {0}")]
    Backend(String),
}

/// A labeled region as it appears in the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRegion {
    pub label: String,
    pub quad: [PixelPoint; 4],
}

/// Labeled image regions of a dog-grid scene seen through `view`.
pub fn scene_layout(scene: &DogGridScene, view: &DisplayView) -> Vec<ImageRegion> {
    scene.regions(view).into_iter().map(|r| ImageRegion { quad: r.image_quad(view), label: r.label }).collect()
}

/// Area of a simple polygon (shoelace), absolute value.
pub fn polygon_area(poly: &[PixelPoint]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.u * b.v - b.u * a.v
        })
        .sum();
    twice.abs() / 2.0
}

/// Clips a convex polygon against an axis-aligned rectangle
/// (Sutherland–Hodgman).
pub fn clip_to_rect(poly: &[PixelPoint], min: PixelPoint, max: PixelPoint) -> Vec<PixelPoint> {
    type Edge = (fn(&PixelPoint, f64) -> bool, fn(&PixelPoint, &PixelPoint, f64) -> PixelPoint, f64);
    fn lerp_u(a: &PixelPoint, b: &PixelPoint, u: f64) -> PixelPoint {
        let t = (u - a.u) / (b.u - a.u);
        PixelPoint::new(u, a.v + t * (b.v - a.v))
    }
    fn lerp_v(a: &PixelPoint, b: &PixelPoint, v: f64) -> PixelPoint {
        let t = (v - a.v) / (b.v - a.v);
        PixelPoint::new(a.u + t * (b.u - a.u), v)
    }
    let edges: [Edge; 4] = [
        (|p, c| p.u >= c, lerp_u, min.u),
        (|p, c| p.u <= c, lerp_u, max.u),
        (|p, c| p.v >= c, lerp_v, min.v),
        (|p, c| p.v <= c, lerp_v, max.v),
    ];
    let mut out = poly.to_vec();
    for (inside, cut, c) in edges {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            match (inside(&cur, c), inside(&prev, c)) {
                (true, true) => out.push(cur),
                (true, false) => {
                    out.push(cut(&prev, &cur, c));
                    out.push(cur);
                }
                (false, true) => out.push(cut(&prev, &cur, c)),
                (false, false) => {}
            }
        }
    }
    out
}

/// Area of each region inside the window, in pixels².
pub fn coverage_areas(layout: &[ImageRegion], window: &Window) -> Vec<f64> {
    let (min, max) = window.extent();
    layout.iter().map(|r| polygon_area(&clip_to_rect(&r.quad, min, max))).collect()
}

/// Label with the largest area inside the window. Exact ties go to the
/// lexicographically smaller label.
pub fn dominant_label<'a>(layout: &'a [ImageRegion], window: &Window) -> Result<&'a str, OracleError> {
    let areas = coverage_areas(layout, window);
    let mut best: Option<(f64, &str)> = None;
    for (r, &a) in layout.iter().zip(&areas) {
        if a <= 0.0 {
            continue;
        }
        best = match best {
            Some((ba, bl)) if ba > a || (ba == a && bl <= r.label.as_str()) => Some((ba, bl)),
            _ => Some((a, r.label.as_str())),
        };
    }
    best.map(|(_, l)| l).ok_or(OracleError::EmptyCoverage)
}

/// Deterministic stand-in for a vision model: names the label that dominates
/// the finest crop with probability `base_accuracy`, otherwise a uniformly
/// drawn different label from the layout.
pub fn coverage_oracle<R: Rng + ?Sized>(
    layout: &[ImageRegion],
    crop: &CropPlan,
    base_accuracy: f64,
    rng: &mut R,
) -> Result<String, OracleError> {
    let covered = dominant_label(layout, &crop.finest().window)?;
    let roll: f64 = rng.random();
    if roll < base_accuracy {
        return Ok(covered.to_string());
    }
    let mut others: Vec<&str> = layout.iter().map(|r| r.label.as_str()).filter(|l| *l != covered).collect();
    others.sort_unstable();
    others.dedup();
    Ok(others.choose(rng).copied().unwrap_or(covered).to_string())
}

/// What the experiment harness hands a classifier for one trial.
pub struct TrialView<'a> {
    pub scene: &'a DogGridScene,
    pub view: &'a DisplayView,
    pub plan: &'a CropPlan,
    pub candidates: &'a [String],
}

/// Something that names the label a crop is about.
pub trait Classifier: Sync {
    fn classify(&self, trial: &TrialView<'_>, rng: &mut dyn RngCore) -> Result<String, OracleError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageOracle {
    pub base_accuracy: f64,
}

impl CoverageOracle {
    pub fn new(base_accuracy: f64) -> Self {
        Self { base_accuracy }
    }
}

impl Classifier for CoverageOracle {
    fn classify(&self, trial: &TrialView<'_>, rng: &mut dyn RngCore) -> Result<String, OracleError> {
        let layout = scene_layout(trial.scene, trial.view);
        coverage_oracle(&layout, trial.plan, self.base_accuracy, rng)
    }
}

/// Renders the scene, crops it at the planned center and asks a vision model
/// to choose among the candidates.
pub struct ModelClassifier {
    pub model: std::sync::Arc<dyn VisionModel>,
    pub crop: crate::foveation::CropSpec,
}

impl Classifier for ModelClassifier {
    fn classify(&self, trial: &TrialView<'_>, _rng: &mut dyn RngCore) -> Result<String, OracleError> {
        let frame =
            Scene::DogGrid(trial.scene.clone()).render(trial.view).map_err(|e| OracleError::Backend(e.to_string()))?;
        let crops = crate::foveation::multiscale_crop(&frame, &trial.plan.center, &trial.view.camera, &self.crop)
            .map_err(|e| OracleError::Backend(e.to_string()))?;
        match classify_query(&crops, trial.candidates, self.model.as_ref()) {
            Ok(ClassifyOutcome::Label { label }) => Ok(label),
            Ok(ClassifyOutcome::NoMatch { response }) => Ok(format!("<no match: {response}>")),
            Err(e) => Err(OracleError::Backend(e.to_string())),
        }
    }
}
