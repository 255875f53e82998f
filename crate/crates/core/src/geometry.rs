//! World-camera model, gaze-ray projection and display-plane registration.
//!
//! Pixel coordinates follow the usual image convention: origin at the center
//! of the top-left pixel, `u` to the right, `v` down. Camera coordinates are
//! right-handed with `z` along the optical axis and `y` down, so a point
//! `(x, y, z)` with `z > 0` projects to `(cx + fx * x / z, cy + fy * y / z)`
//! before distortion.

use std::path::Path;

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Viewing distance used when nothing else is known: the study geometry put
/// the display 1 m in front of the user.
pub const DEFAULT_FIXATION_DEPTH_M: f64 = 1.0;

const UNDISTORT_MAX_ITERS: usize = 50;
const UNDISTORT_TOL: f64 = 1e-15;

/// A continuous image location in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// A point on the display plane, in meters. The origin is the display point
/// straight ahead of the viewer; `y` grows downwards like image rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Pinhole intrinsics with two-coefficient radial distortion.
///
/// Serializes to the calibration file format
/// `{width, height, fx, fy, cx, cy, k1, k2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationFile", into = "CalibrationFile")]
pub struct CameraModel {
    width_px: u32,
    height_px: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    k1: f64,
    k2: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(default)]
    k1: f64,
    #[serde(default)]
    k2: f64,
}

impl TryFrom<CalibrationFile> for CameraModel {
    type Error = GeometryError;

    fn try_from(c: CalibrationFile) -> Result<Self, Self::Error> {
        CameraModel::new(c.width, c.height, c.fx, c.fy, c.cx, c.cy, c.k1, c.k2)
    }
}

impl From<CameraModel> for CalibrationFile {
    fn from(m: CameraModel) -> Self {
        CalibrationFile {
            width: m.width_px,
            height: m.height_px,
            fx: m.fx,
            fy: m.fy,
            cx: m.cx,
            cy: m.cy,
            k1: m.k1,
            k2: m.k2,
        }
    }
}

impl CameraModel {
    /// Validating constructor.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width_px: u32,
        height_px: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        k1: f64,
        k2: f64,
    ) -> Result<Self, GeometryError> {
        if width_px == 0 || height_px == 0 {
            return Err(GeometryError::Domain("image dimensions must be positive".into()));
        }
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(GeometryError::Domain(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if !(cx.is_finite() && (0.0..f64::from(width_px)).contains(&cx)) {
            return Err(GeometryError::Domain(format!("cx={cx} outside [0, {width_px})")));
        }
        if !(cy.is_finite() && (0.0..f64::from(height_px)).contains(&cy)) {
            return Err(GeometryError::Domain(format!("cy={cy} outside [0, {height_px})")));
        }
        if !(k1.is_finite() && k2.is_finite()) {
            return Err(GeometryError::Domain("distortion coefficients must be finite".into()));
        }
        Ok(Self { width_px, height_px, fx, fy, cx, cy, k1, k2 })
    }

    /// Builds an undistorted, centered model from resolution and diagonal
    /// field of view: `f = (diag_px / 2) / tan(diag_fov / 2)`.
    pub fn from_diagonal_fov(width_px: u32, height_px: u32, diag_fov_deg: f64) -> Result<Self, GeometryError> {
        if width_px == 0 || height_px == 0 {
            return Err(GeometryError::Domain("image dimensions must be positive".into()));
        }
        if !(diag_fov_deg > 0.0 && diag_fov_deg < 180.0) {
            return Err(GeometryError::Domain(format!(
                "diagonal FOV must lie in (0, 180) degrees, got {diag_fov_deg}"
            )));
        }
        let (w, h) = (f64::from(width_px), f64::from(height_px));
        let half_diag = w.hypot(h) / 2.0;
        let f = half_diag / (diag_fov_deg.to_radians() / 2.0).tan();
        Self::new(width_px, height_px, f, f, (w - 1.0) / 2.0, (h - 1.0) / 2.0, 0.0, 0.0)
    }

    /// The Sony IMX179 world camera behind a 78° diagonal lens, 3264×2448.
    pub fn imx179() -> Self {
        Self::from_diagonal_fov(3264, 2448, 78.0).expect("constant parameters are valid")
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64) -> Result<Self, GeometryError> {
        if !(k1.is_finite() && k2.is_finite()) {
            return Err(GeometryError::Domain("distortion coefficients must be finite".into()));
        }
        self.k1 = k1;
        self.k2 = k2;
        Ok(self)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::Calibration(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GeometryError::Calibration(format!("{}: {e}", path.display())))
    }

    pub fn width_px(&self) -> u32 {
        self.width_px
    }
    pub fn height_px(&self) -> u32 {
        self.height_px
    }
    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn k1(&self) -> f64 {
        self.k1
    }
    pub fn k2(&self) -> f64 {
        self.k2
    }

    pub fn principal_point(&self) -> PixelPoint {
        PixelPoint::new(self.cx, self.cy)
    }

    /// Pixel nearest to the image center.
    pub fn center_pixel(&self) -> PixelPoint {
        PixelPoint::new((f64::from(self.width_px) - 1.0) / 2.0, (f64::from(self.height_px) - 1.0) / 2.0)
    }

    /// Outer corners of the sensor area (pixel edges, not pixel centers),
    /// clockwise from top-left.
    pub fn sensor_corners(&self) -> [PixelPoint; 4] {
        let (w, h) = (f64::from(self.width_px), f64::from(self.height_px));
        [
            PixelPoint::new(-0.5, -0.5),
            PixelPoint::new(w - 0.5, -0.5),
            PixelPoint::new(w - 0.5, h - 0.5),
            PixelPoint::new(-0.5, h - 0.5),
        ]
    }

    /// True when the point lies on the pixel grid `[0, w) × [0, h)`.
    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < f64::from(self.width_px) && p.v < f64::from(self.height_px)
    }

    /// Clamps to the pixel-center range `[0, w-1] × [0, h-1]`.
    pub fn clamp(&self, p: &PixelPoint) -> PixelPoint {
        PixelPoint::new(p.u.clamp(0.0, f64::from(self.width_px) - 1.0), p.v.clamp(0.0, f64::from(self.height_px) - 1.0))
    }

    fn radial_factor(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Normalized undistorted image coordinates to pixels.
    pub fn distort(&self, x: f64, y: f64) -> PixelPoint {
        let s = self.radial_factor(x * x + y * y);
        PixelPoint::new(self.cx + self.fx * x * s, self.cy + self.fy * y * s)
    }

    /// Pixels to normalized undistorted image coordinates.
    ///
    /// Inverts the radial polynomial with Newton iterations on the radius.
    pub fn undistort(&self, p: &PixelPoint) -> (f64, f64) {
        let xd = (p.u - self.cx) / self.fx;
        let yd = (p.v - self.cy) / self.fy;
        if self.k1 == 0.0 && self.k2 == 0.0 {
            return (xd, yd);
        }
        let rd = xd.hypot(yd);
        if rd == 0.0 {
            return (0.0, 0.0);
        }
        // Solve r * (1 + k1 r^2 + k2 r^4) = rd.
        let mut r = rd;
        for _ in 0..UNDISTORT_MAX_ITERS {
            let r2 = r * r;
            let g = r * self.radial_factor(r2) - rd;
            let dg = 1.0 + 3.0 * self.k1 * r2 + 5.0 * self.k2 * r2 * r2;
            if dg.abs() < f64::EPSILON {
                break;
            }
            let step = g / dg;
            r -= step;
            if step.abs() <= UNDISTORT_TOL * rd.max(1.0) {
                break;
            }
        }
        let scale = r / rd;
        (xd * scale, yd * scale)
    }

    /// Unit ray through a pixel, in camera coordinates.
    pub fn back_project(&self, p: &PixelPoint) -> Vector3<f64> {
        let (x, y) = self.undistort(p);
        Vector3::new(x, y, 1.0).normalize()
    }

    /// Projects a camera-frame point. Fails for points at or behind the camera.
    pub fn project_point(&self, p: &Vector3<f64>) -> Result<PixelPoint, GeometryError> {
        if !(p.z > 0.0) {
            return Err(GeometryError::BehindCamera);
        }
        Ok(self.distort(p.x / p.z, p.y / p.z))
    }

    /// Focal length used for angular window sizes (square windows).
    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

/// Builds the camera model from resolution and diagonal field of view.
pub fn intrinsics_from_fov(width_px: u32, height_px: u32, diag_fov_deg: f64) -> Result<CameraModel, GeometryError> {
    CameraModel::from_diagonal_fov(width_px, height_px, diag_fov_deg)
}

/// One eye-tracker estimate: pupil center and unit gaze direction, both in
/// world-camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

impl GazeSample {
    /// Normalizes `direction`; fails on a zero or non-finite vector.
    pub fn new(t: f64, origin: [f64; 3], direction: [f64; 3]) -> Result<Self, GeometryError> {
        let d = Vector3::from(direction);
        let n = d.norm();
        if !(n.is_finite() && n > 0.0) || !t.is_finite() || origin.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::Domain("gaze sample must be finite with a nonzero direction".into()));
        }
        // Already-unit vectors are kept bit-for-bit so saved sessions replay exactly.
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self { t, origin, direction });
        }
        let d = d / n;
        Ok(Self { t, origin, direction: [d.x, d.y, d.z] })
    }

    /// Gaze from `origin` towards a camera-frame point.
    pub fn looking_at(t: f64, origin: [f64; 3], target: [f64; 3]) -> Result<Self, GeometryError> {
        let dir = Vector3::from(target) - Vector3::from(origin);
        Self::new(t, origin, [dir.x, dir.y, dir.z])
    }

    pub fn origin_vec(&self) -> Vector3<f64> {
        Vector3::from(self.origin)
    }

    pub fn direction_vec(&self) -> Vector3<f64> {
        Vector3::from(self.direction)
    }
}

/// Where along the gaze ray the fixated point is assumed to lie.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixationDepth {
    /// Depth (camera `z`) of the fixated point, meters.
    Finite(f64),
    /// Project the direction alone; the pupil offset is ignored.
    Infinity,
}

impl Default for FixationDepth {
    fn default() -> Self {
        FixationDepth::Finite(DEFAULT_FIXATION_DEPTH_M)
    }
}

/// Projects a gaze ray into the world image.
///
/// With a finite depth the fixated point is `origin + s * direction` with
/// camera `z` equal to the depth; at infinity only the direction matters.
pub fn project_gaze(model: &CameraModel, gaze: &GazeSample, depth: FixationDepth) -> Result<PixelPoint, GeometryError> {
    let dir = gaze.direction_vec();
    match depth {
        FixationDepth::Infinity => {
            if !(dir.z > 0.0) {
                return Err(GeometryError::BehindCamera);
            }
            model.project_point(&dir)
        }
        FixationDepth::Finite(d) => {
            if !(d.is_finite() && d > 0.0) {
                return Err(GeometryError::Domain(format!("fixation depth must be positive, got {d}")));
            }
            if dir.z == 0.0 {
                return Err(GeometryError::BehindCamera);
            }
            let origin = gaze.origin_vec();
            let s = (d - origin.z) / dir.z;
            if !(s > 0.0) {
                return Err(GeometryError::BehindCamera);
            }
            model.project_point(&(origin + dir * s))
        }
    }
}

/// Angle in degrees between the rays through two pixels.
pub fn pixel_angle(model: &CameraModel, p: &PixelPoint, q: &PixelPoint) -> f64 {
    if p == q {
        return 0.0;
    }
    ray_angle_deg(&model.back_project(p), &model.back_project(q))
}

/// Angle between two directions, degrees. Uses `atan2(|a×b|, a·b)`, which
/// stays accurate for nearly parallel rays.
pub fn ray_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// Homography from image pixels to display-plane meters, plus the viewer's
/// distance to that plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneRegistration {
    homography: Matrix3<f64>,
    viewing_distance: f64,
}

impl PlaneRegistration {
    pub fn from_homography(homography: Matrix3<f64>, viewing_distance: f64) -> Result<Self, GeometryError> {
        if !(viewing_distance.is_finite() && viewing_distance > 0.0) {
            return Err(GeometryError::Domain(format!("viewing distance must be positive, got {viewing_distance}")));
        }
        let norm = homography.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(GeometryError::Degenerate("homography is zero or non-finite".into()));
        }
        let h = homography / norm;
        if h.determinant().abs() <= 1e-12 {
            return Err(GeometryError::Degenerate("homography is singular".into()));
        }
        Ok(Self { homography: h, viewing_distance })
    }

    /// Frobenius-normalized homography.
    pub fn homography(&self) -> &Matrix3<f64> {
        &self.homography
    }

    pub fn viewing_distance(&self) -> f64 {
        self.viewing_distance
    }

    /// Image pixel to display-plane point.
    pub fn to_plane(&self, p: &PixelPoint) -> Result<PlanePoint, GeometryError> {
        let (x, y) = apply_homography(&self.homography, p.u, p.v)?;
        Ok(PlanePoint::new(x, y))
    }

    /// Display-plane point to image pixel.
    pub fn to_image(&self, p: &PlanePoint) -> Result<PixelPoint, GeometryError> {
        let inv =
            self.homography.try_inverse().ok_or_else(|| GeometryError::Degenerate("homography is singular".into()))?;
        let (u, v) = apply_homography(&inv, p.x, p.y)?;
        Ok(PixelPoint::new(u, v))
    }
}

fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> Result<(f64, f64), GeometryError> {
    let p = h * Vector3::new(x, y, 1.0);
    if p.z.abs() < f64::MIN_POSITIVE || !p.z.is_finite() {
        return Err(GeometryError::Degenerate("point maps to infinity".into()));
    }
    Ok((p.x / p.z, p.y / p.z))
}

/// Similarity transform that moves the centroid to the origin and scales the
/// mean distance to sqrt(2). Returns the matrix and the transformed points.
fn normalize_points(pts: &[(f64, f64); 4]) -> (Matrix3<f64>, [(f64, f64); 4]) {
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / 4.0, b + p.1 / 4.0));
    let mean_dist = pts.iter().map(|p| (p.0 - mx).hypot(p.1 - my)).sum::<f64>() / 4.0;
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0);
    let out = pts.map(|p| (s * (p.0 - mx), s * (p.1 - my)));
    (t, out)
}

fn has_degenerate_triple(pts: &[(f64, f64); 4]) -> bool {
    let scale = pts.iter().flat_map(|a| pts.iter().map(move |b| (a.0 - b.0).hypot(a.1 - b.1))).fold(0.0_f64, f64::max);
    if !(scale.is_finite() && scale > 0.0) {
        return true;
    }
    const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    TRIPLES.iter().any(|&(i, j, k)| {
        let (a, b, c) = (pts[i], pts[j], pts[k]);
        let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        // Twice the triangle area relative to the squared extent.
        cross.abs() <= 1e-9 * scale * scale
    })
}

/// Estimates the pixel → plane homography from four marker correspondences
/// with a normalized direct linear transform.
pub fn register_plane(
    marker_pixels: &[PixelPoint; 4],
    marker_plane: &[PlanePoint; 4],
    viewing_distance: f64,
) -> Result<PlaneRegistration, GeometryError> {
    let src = marker_pixels.map(|p| (p.u, p.v));
    let dst = marker_plane.map(|p| (p.x, p.y));
    if src.iter().chain(dst.iter()).any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(GeometryError::Domain("marker coordinates must be finite".into()));
    }
    if has_degenerate_triple(&src) || has_degenerate_triple(&dst) {
        return Err(GeometryError::Degenerate("three of the four markers are collinear or coincident".into()));
    }

    let (t_src, src_n) = normalize_points(&src);
    let (t_dst, dst_n) = normalize_points(&dst);

    // Two rows per correspondence; a ninth zero row gives a square system so
    // the SVD exposes the full right-singular basis.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for (i, ((x, y), (xp, yp))) in src_n.iter().zip(dst_n.iter()).enumerate() {
        let r = 2 * i;
        a.set_row(
            r,
            &nalgebra::RowSVector::<f64, 9>::from_row_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, xp * x, xp * y, *xp]),
        );
        a.set_row(
            r + 1,
            &nalgebra::RowSVector::<f64, 9>::from_row_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, *yp]),
        );
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| GeometryError::Degenerate("SVD failed".into()))?;
    let (min_idx, _) =
        svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("nine singular values");
    let h = v_t.row(min_idx);
    let h_n = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);

    let t_dst_inv = t_dst.try_inverse().ok_or_else(|| GeometryError::Degenerate("normalization failed".into()))?;
    let h = t_dst_inv * h_n * t_src;
    PlaneRegistration::from_homography(h, viewing_distance)
}

/// Visual angle in degrees between a selected pixel and a target on the
/// display: the pixel is mapped onto the plane and the planar offset is
/// converted with `atan(offset / viewing_distance)`.
pub fn selection_error(
    reg: &PlaneRegistration,
    selection_px: &PixelPoint,
    target_plane: &PlanePoint,
) -> Result<f64, GeometryError> {
    let p = reg.to_plane(selection_px)?;
    let offset = (p.x - target_plane.x).hypot(p.y - target_plane.y);
    Ok((offset / reg.viewing_distance()).atan().to_degrees())
}

/// Camera looking straight at a display plane from `viewing_distance`, with
/// the display origin on the optical axis. Used to render synthetic scenes
/// and to place experiment targets in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayView {
    pub camera: CameraModel,
    pub viewing_distance: f64,
}

impl DisplayView {
    pub fn new(camera: CameraModel, viewing_distance: f64) -> Result<Self, GeometryError> {
        if !(viewing_distance.is_finite() && viewing_distance > 0.0) {
            return Err(GeometryError::Domain(format!("viewing distance must be positive, got {viewing_distance}")));
        }
        Ok(Self { camera, viewing_distance })
    }

    pub fn plane_to_pixel(&self, p: &PlanePoint) -> PixelPoint {
        self.camera.distort(p.x / self.viewing_distance, p.y / self.viewing_distance)
    }

    pub fn pixel_to_plane(&self, p: &PixelPoint) -> PlanePoint {
        let (x, y) = self.camera.undistort(p);
        PlanePoint::new(x * self.viewing_distance, y * self.viewing_distance)
    }

    /// Plane point seen at the given horizontal and vertical visual angles.
    pub fn plane_at_angles(&self, yaw_deg: f64, pitch_deg: f64) -> PlanePoint {
        PlanePoint::new(
            self.viewing_distance * yaw_deg.to_radians().tan(),
            self.viewing_distance * pitch_deg.to_radians().tan(),
        )
    }

    /// Camera-frame 3D point of a plane location.
    pub fn plane_to_camera(&self, p: &PlanePoint) -> [f64; 3] {
        [p.x, p.y, self.viewing_distance]
    }
}
