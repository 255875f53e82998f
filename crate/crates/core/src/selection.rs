//! Selection modes and simulated-user noise.
//!
//! A simulated selection perturbs the target direction by a two-level angular
//! error: a per-trial offset (uniform direction, half-normal magnitude, plus
//! an optional isotropic Gaussian part of spread `per_trial_bias`) and
//! isotropic per-sample jitter with standard deviation `precision`. The
//! half-normal scale is solved numerically so the mean radial error of the
//! whole composition equals `accuracy`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, PixelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionKind {
    Gaze,
    Head,
    Body,
    Phone,
}

impl SelectionKind {
    pub const ALL: [SelectionKind; 4] =
        [SelectionKind::Gaze, SelectionKind::Head, SelectionKind::Body, SelectionKind::Phone];

    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionKind::Gaze => "gaze",
            SelectionKind::Head => "head",
            SelectionKind::Body => "body",
            SelectionKind::Phone => "phone",
        }
    }

    /// Gaze selects the projected gaze point; the camera-pointing modes
    /// select the center pixel of their own camera.
    pub fn uses_gaze(&self) -> bool {
        matches!(self, SelectionKind::Gaze)
    }
}

impl fmt::Display for SelectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaze" => Ok(SelectionKind::Gaze),
            "head" => Ok(SelectionKind::Head),
            "body" => Ok(SelectionKind::Body),
            "phone" => Ok(SelectionKind::Phone),
            other => Err(format!("unknown selection mode `{other}`")),
        }
    }
}

/// Angular pointing error, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    /// Mean radial error.
    pub accuracy: f64,
    /// Per-axis standard deviation of the per-sample jitter.
    pub precision: f64,
    /// Per-axis standard deviation of the Gaussian part of the trial offset.
    pub per_trial_bias: f64,
}

impl ErrorModel {
    pub const ZERO: ErrorModel = ErrorModel { accuracy: 0.0, precision: 0.0, per_trial_bias: 0.0 };

    /// Manufacturer rating of the eye tracker: 1° accuracy, 0.4° precision.
    pub fn eye_tracker_rating() -> Self {
        Self { accuracy: 1.0, precision: 0.4, per_trial_bias: 0.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        let vals = [self.accuracy, self.precision, self.per_trial_bias];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(format!("error model values must be non-negative: {self:?}"));
        }
        Ok(())
    }

    fn gaussian_sd(&self) -> f64 {
        self.precision.hypot(self.per_trial_bias)
    }

    /// Half-normal scale that makes the mean radial error equal `accuracy`.
    /// Zero when the Gaussian parts alone already exceed it.
    pub fn bias_scale(&self) -> f64 {
        let s = self.gaussian_sd();
        if self.accuracy == 0.0 {
            return 0.0;
        }
        if s == 0.0 {
            return self.accuracy * (PI / 2.0).sqrt();
        }
        if mean_radial_error(0.0, s) >= self.accuracy {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, self.accuracy * (PI / 2.0).sqrt());
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mean_radial_error(mid, s) < self.accuracy {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Mean radial error this model actually produces (equals `accuracy`
    /// unless the jitter alone exceeds it).
    pub fn effective_accuracy(&self) -> f64 {
        mean_radial_error(self.bias_scale(), self.gaussian_sd())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub mean_s: f64,
    pub sd_s: f64,
}

impl TimeModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mean_s.is_finite() && self.mean_s > 0.0) {
            return Err(format!("time mean must be positive, got {}", self.mean_s));
        }
        if !(self.sd_s.is_finite() && self.sd_s >= 0.0) {
            return Err(format!("time sd must be non-negative, got {}", self.sd_s));
        }
        Ok(())
    }
}

/// On-disk mode parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeParams {
    pub kind: SelectionKind,
    pub accuracy_deg: f64,
    pub precision_deg: f64,
    pub bias_deg: f64,
    pub time_mean_s: f64,
    pub time_sd_s: f64,
}

/// A selection mode with its calibrated noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModeParams", into = "ModeParams")]
pub struct SelectionMode {
    pub kind: SelectionKind,
    error_model: ErrorModel,
    time_model: TimeModel,
    bias_scale: f64,
}

impl TryFrom<ModeParams> for SelectionMode {
    type Error = String;

    fn try_from(p: ModeParams) -> Result<Self, Self::Error> {
        SelectionMode::new(
            p.kind,
            ErrorModel { accuracy: p.accuracy_deg, precision: p.precision_deg, per_trial_bias: p.bias_deg },
            TimeModel { mean_s: p.time_mean_s, sd_s: p.time_sd_s },
        )
    }
}

impl From<SelectionMode> for ModeParams {
    fn from(m: SelectionMode) -> Self {
        ModeParams {
            kind: m.kind,
            accuracy_deg: m.error_model.accuracy,
            precision_deg: m.error_model.precision,
            bias_deg: m.error_model.per_trial_bias,
            time_mean_s: m.time_model.mean_s,
            time_sd_s: m.time_model.sd_s,
        }
    }
}

impl SelectionMode {
    pub fn new(kind: SelectionKind, error_model: ErrorModel, time_model: TimeModel) -> Result<Self, String> {
        error_model.validate()?;
        time_model.validate()?;
        Ok(Self { kind, error_model, time_model, bias_scale: error_model.bias_scale() })
    }

    pub fn error_model(&self) -> &ErrorModel {
        &self.error_model
    }

    pub fn time_model(&self) -> &TimeModel {
        &self.time_model
    }

    pub fn with_error_model(self, error_model: ErrorModel) -> Result<Self, String> {
        Self::new(self.kind, error_model, self.time_model)
    }

    /// Reads a JSON array of mode parameter objects.
    pub fn load_all(path: impl AsRef<std::path::Path>) -> Result<Vec<Self>, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Draws the angular offset `(dx, dy)` in degrees for one trial.
    pub fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let phi = rng.random::<f64>() * 2.0 * PI;
        let n: f64 = StandardNormal.sample(rng);
        let m = self.bias_scale * n.abs();
        let g = self.error_model.gaussian_sd();
        let gx: f64 = StandardNormal.sample(rng);
        let gy: f64 = StandardNormal.sample(rng);
        (m * phi.cos() + g * gx, m * phi.sin() + g * gy)
    }

    pub fn sample_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let tm = &self.time_model;
        if tm.sd_s == 0.0 {
            return tm.mean_s;
        }
        Normal::new(tm.mean_s, tm.sd_s).expect("validated").sample(rng).max(0.0)
    }
}

/// The four study modes with approximate error and time means read from the
/// selection results (errors just under 2° for gaze and phone, above 7° for
/// head and body; times ≈0.8, 1.1, 1.5 and 2.5 s).
pub fn default_modes() -> Vec<SelectionMode> {
    let mk = |kind, accuracy, precision, mean_s, sd_s| {
        SelectionMode::new(kind, ErrorModel { accuracy, precision, per_trial_bias: 0.0 }, TimeModel { mean_s, sd_s })
            .expect("constant parameters are valid")
    };
    vec![
        mk(SelectionKind::Gaze, 1.9, 0.4, 0.8, 0.25),
        mk(SelectionKind::Head, 7.0, 0.5, 1.1, 0.3),
        mk(SelectionKind::Body, 7.5, 0.5, 1.5, 0.4),
        mk(SelectionKind::Phone, 1.9, 0.3, 2.5, 0.6),
    ]
}

pub fn default_mode(kind: SelectionKind) -> SelectionMode {
    default_modes().into_iter().find(|m| m.kind == kind).expect("all kinds present")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub selected_px: PixelPoint,
    pub elapsed: f64,
    pub mode: SelectionKind,
    /// The perturbed point left the frame and was clamped back in.
    pub clamped: bool,
}

/// Simulates one selection of `target_px`. Deterministic in `seed`.
pub fn select(mode: &SelectionMode, target_px: &PixelPoint, model: &CameraModel, seed: u64) -> SelectionOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dx, dy) = mode.sample_offset(&mut rng);
    let elapsed = mode.sample_time(&mut rng);
    let (selected_px, clamped) = offset_pixel(model, target_px, dx, dy);
    SelectionOutcome { selected_px, elapsed, mode: mode.kind, clamped }
}

/// Rotates the ray through `target` by the angular offset `(dx, dy)` degrees
/// (`dx` towards +u, `dy` towards +v) and projects it back. The result is
/// clamped into the frame; the flag reports whether that happened.
pub fn offset_pixel(model: &CameraModel, target: &PixelPoint, dx: f64, dy: f64) -> (PixelPoint, bool) {
    let mag = dx.hypot(dy);
    if mag == 0.0 {
        return (*target, false);
    }
    let r = model.back_project(target);
    let ex = (Vector3::x() - r * r.x).normalize();
    let ey = r.cross(&ex);
    let a = mag.to_radians();
    let dir = (ex * (dx / mag) + ey * (dy / mag)).normalize();
    let moved = r * a.cos() + dir * a.sin();
    let projected = model.project_point(&moved).ok().filter(|p| p.is_finite());
    match projected {
        Some(p)
            if model.contains(&p)
                && p.u <= f64::from(model.width_px()) - 1.0
                && p.v <= f64::from(model.height_px()) - 1.0 =>
        {
            (p, false)
        }
        Some(p) => (model.clamp(&p), true),
        None => {
            // Past 90° from the axis: push to the border along the offset.
            let far = PixelPoint::new(target.u + dir.x * 1e9, target.v + dir.y * 1e9);
            (model.clamp(&far), true)
        }
    }
}

/// Mean of `|b + g|` where `b` has uniform direction and half-normal
/// magnitude with scale `sigma`, and `g` is isotropic normal with per-axis
/// standard deviation `s`.
pub fn mean_radial_error(sigma: f64, s: f64) -> f64 {
    if sigma == 0.0 {
        return s * (PI / 2.0).sqrt();
    }
    if s == 0.0 {
        return sigma * (2.0 / PI).sqrt();
    }
    // Simpson's rule over the half-normal density on [0, 10 sigma].
    let n = 800;
    let hi = 10.0 * sigma;
    let h = hi / n as f64;
    let density = |m: f64| SQRT_2 / (sigma * PI.sqrt()) * (-(m * m) / (2.0 * sigma * sigma)).exp();
    let f = |m: f64| rice_mean(m, s) * density(m);
    let mut acc = f(0.0) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

/// Mean of a Rice distribution: `|m e + g|` with `g ~ N(0, s² I₂)`.
pub fn rice_mean(m: f64, s: f64) -> f64 {
    let nu = m * m / (2.0 * s * s);
    let x = nu / 2.0;
    s * (PI / 2.0).sqrt() * ((1.0 + nu) * bessel_i0e(x) + nu * bessel_i1e(x))
}

/// `exp(-x) I0(x)` for `x >= 0` (rational approximations, |rel err| < 2e-7).
fn bessel_i0e(x: f64) -> f64 {
    if x <= 3.75 {
        let t = (x / 3.75).powi(2);
        let i0 = 1.0
            + t * (3.5156229 + t * (3.0899424 + t * (1.2067492 + t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
        i0 * (-x).exp()
    } else {
        let t = 3.75 / x;
        let p = 0.39894228
            + t * (0.01328592
                + t * (0.00225319
                    + t * (-0.00157565
                        + t * (0.00916281
                            + t * (-0.02057706 + t * (0.02635537 + t * (-0.01647633 + t * 0.00392377)))))));
        p / x.sqrt()
    }
}

/// `exp(-x) I1(x)` for `x >= 0`.
fn bessel_i1e(x: f64) -> f64 {
    if x <= 3.75 {
        let t = (x / 3.75).powi(2);
        let i1 = x
            * (0.5
                + t * (0.87890594
                    + t * (0.51498869 + t * (0.15084934 + t * (0.02658733 + t * (0.00301532 + t * 0.00032411))))));
        i1 * (-x).exp()
    } else {
        let t = 3.75 / x;
        let p = 0.39894228
            + t * (-0.03988024
                + t * (-0.00362018
                    + t * (0.00163801
                        + t * (-0.01031555
                            + t * (0.02282967 + t * (-0.02895312 + t * (0.01787654 - t * 0.00420059)))))));
        p / x.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pixel_angle;

    #[test]
    fn zero_noise_is_identity() {
        let cam = CameraModel::imx179();
        let mode =
            SelectionMode::new(SelectionKind::Gaze, ErrorModel::ZERO, TimeModel { mean_s: 0.8, sd_s: 0.0 }).unwrap();
        let t = PixelPoint::new(123.25, 2000.5);
        let out = select(&mode, &t, &cam, 42);
        assert_eq!(out.selected_px, t);
        assert_eq!(out.elapsed, 0.8);
        assert!(!out.clamped);
    }

    #[test]
    fn seeded_determinism() {
        let cam = CameraModel::imx179();
        let mode = default_mode(SelectionKind::Head);
        let t = cam.center_pixel();
        assert_eq!(select(&mode, &t, &cam, 7), select(&mode, &t, &cam, 7));
        assert_ne!(select(&mode, &t, &cam, 7), select(&mode, &t, &cam, 8));
    }

    #[test]
    fn offset_pixel_moves_by_exact_angle() {
        let cam = CameraModel::imx179().with_distortion(-0.05, 0.01).unwrap();
        let t = PixelPoint::new(900.0, 700.0);
        let (p, clamped) = offset_pixel(&cam, &t, 2.0, -1.5);
        assert!(!clamped);
        assert!((pixel_angle(&cam, &t, &p) - 2.5).abs() < 1e-9);
        // +dx moves right, -dy moves up.
        assert!(p.u > t.u && p.v < t.v);
    }

    #[test]
    fn huge_offsets_clamp_into_frame() {
        let cam = CameraModel::imx179();
        let (p, clamped) = offset_pixel(&cam, &PixelPoint::new(10.0, 10.0), -60.0, -60.0);
        assert!(clamped);
        assert!(cam.contains(&p));
        let (q, clamped) = offset_pixel(&cam, &cam.center_pixel(), 170.0, 0.0);
        assert!(clamped && cam.contains(&q));
    }

    #[test]
    fn rice_mean_limits() {
        // m = 0: Rayleigh mean s sqrt(pi/2).
        assert!((rice_mean(0.0, 1.0) - (PI / 2.0).sqrt()).abs() < 1e-6);
        // Large m: ~ m + s^2 / (2m).
        let m = 50.0;
        assert!((rice_mean(m, 1.0) - (m + 1.0 / (2.0 * m))).abs() < 1e-3);
    }

    #[test]
    fn bias_scale_hits_accuracy() {
        for em in [
            ErrorModel::eye_tracker_rating(),
            ErrorModel { accuracy: 7.0, precision: 0.5, per_trial_bias: 1.0 },
            ErrorModel { accuracy: 2.0, precision: 0.0, per_trial_bias: 0.0 },
        ] {
            assert!((em.effective_accuracy() - em.accuracy).abs() < 1e-6, "{em:?}");
        }
        // Jitter alone exceeds the requested accuracy.
        let noisy = ErrorModel { accuracy: 0.1, precision: 1.0, per_trial_bias: 0.0 };
        assert_eq!(noisy.bias_scale(), 0.0);
        assert!(noisy.effective_accuracy() > noisy.accuracy);
    }

    #[test]
    fn mode_file_roundtrip() {
        let modes = default_modes();
        let text = serde_json::to_string(&modes).unwrap();
        assert!(text.contains("\"accuracy_deg\":1.9"));
        let back: Vec<SelectionMode> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, modes);
        let bad = r#"[{"kind":"gaze","accuracy_deg":-1,"precision_deg":0,"bias_deg":0,"time_mean_s":1,"time_sd_s":0}]"#;
        assert!(serde_json::from_str::<Vec<SelectionMode>>(bad).is_err());
    }

    #[test]
    fn default_mode_values() {
        assert_eq!(default_mode(SelectionKind::Gaze).time_model().mean_s, 0.8);
        assert_eq!(default_mode(SelectionKind::Phone).time_model().mean_s, 2.5);
        assert!(default_mode(SelectionKind::Body).error_model().accuracy > 7.0);
        assert!(default_mode(SelectionKind::Head).error_model().accuracy >= 7.0);
    }
}
