//! Gaze-centered multiscale cropping and sensing-bandwidth arithmetic.
//!
//! Each crop level is a square window whose angular width is the level FOV,
//! sized with `side = 2 f tan(fov / 2)` around the principal ray. Windows that
//! would leave the frame are shifted back inside (the shift is recorded),
//! windows larger than the frame clamp to the largest square that fits, and
//! every window is area-averaged to `out_px × out_px`.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use base64::Engine;
use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::FoveationError;
use crate::geometry::{CameraModel, PixelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropSpec {
    pub levels: usize,
    /// Full angular width of the narrowest crop, degrees.
    pub finest_fov_deg: f64,
    /// Ratio between successive level FOVs.
    pub scale_factor: f64,
    /// Output side length in pixels.
    pub out_px: u32,
}

impl Default for CropSpec {
    /// 9°, 27° and a full-frame clamp on the 78° camera, each at 512².
    fn default() -> Self {
        Self { levels: 3, finest_fov_deg: 9.0, scale_factor: 3.0, out_px: 512 }
    }
}

impl CropSpec {
    pub fn validate(&self) -> Result<(), FoveationError> {
        if self.levels == 0 {
            return Err(FoveationError::InvalidSpec("at least one level required".into()));
        }
        if !(self.finest_fov_deg > 0.0 && self.finest_fov_deg < 180.0) {
            return Err(FoveationError::InvalidSpec(format!(
                "finest FOV {} must lie in (0, 180)",
                self.finest_fov_deg
            )));
        }
        if self.levels > 1 && !(self.scale_factor > 1.0 && self.scale_factor.is_finite()) {
            return Err(FoveationError::InvalidSpec(format!("scale factor {} must exceed 1", self.scale_factor)));
        }
        if self.out_px == 0 {
            return Err(FoveationError::InvalidSpec("out_px must be positive".into()));
        }
        Ok(())
    }

    /// Requested FOV of each level, narrow to wide.
    pub fn level_fovs(&self) -> Vec<f64> {
        (0..self.levels).map(|i| self.finest_fov_deg * self.scale_factor.powi(i as i32)).collect()
    }
}

/// Integer source rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Window {
    /// Continuous extent `[x - 0.5, x + width - 0.5)` contains the point.
    pub fn contains(&self, p: &PixelPoint) -> bool {
        let (x0, y0) = (f64::from(self.x) - 0.5, f64::from(self.y) - 0.5);
        p.u >= x0 && p.v >= y0 && p.u < x0 + f64::from(self.width) && p.v < y0 + f64::from(self.height)
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.width <= self.x + self.width
            && other.y + other.height <= self.y + self.height
    }

    /// Extent in continuous pixel coordinates: `(min, max)` corners.
    pub fn extent(&self) -> (PixelPoint, PixelPoint) {
        let x0 = f64::from(self.x) - 0.5;
        let y0 = f64::from(self.y) - 0.5;
        (PixelPoint::new(x0, y0), PixelPoint::new(x0 + f64::from(self.width), y0 + f64::from(self.height)))
    }
}

/// Geometry of one crop level. Serializes as the crop sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropLevelMeta {
    pub level: usize,
    /// Angular width actually covered by the window.
    pub fov_deg: f64,
    pub requested_fov_deg: f64,
    pub window: Window,
    /// Shift applied to keep the window in frame, pixels (`actual - ideal`).
    pub center_offset: [i64; 2],
    pub clamped: bool,
}

/// Window layout for a gaze point, without any pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropPlan {
    pub center: PixelPoint,
    pub out_px: u32,
    pub levels: Vec<CropLevelMeta>,
}

impl CropPlan {
    /// Narrowest window.
    pub fn finest(&self) -> &CropLevelMeta {
        &self.levels[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropLevel {
    pub meta: CropLevelMeta,
    pub image: RgbImage,
}

impl CropLevel {
    pub fn png_bytes(&self) -> Vec<u8> {
        encode_png(&self.image)
    }

    pub fn base64_png(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.png_bytes())
    }
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding");
    buf.into_inner()
}

/// Narrow-to-wide pyramid of gaze-centered crops.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleCrop {
    pub plan: CropPlan,
    pub levels: Vec<CropLevel>,
}

impl MultiscaleCrop {
    pub fn crop_pixels(&self) -> u64 {
        self.levels.iter().map(|l| u64::from(l.image.width()) * u64::from(l.image.height())).sum()
    }

    /// Writes `<prefix>-<level>.png` and `<prefix>-<level>.json` per level and
    /// returns the PNG paths.
    pub fn write_to(&self, dir: impl AsRef<Path>, prefix: &str) -> std::io::Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::with_capacity(self.levels.len());
        for l in &self.levels {
            let png = dir.join(format!("{prefix}-{}.png", l.meta.level));
            std::fs::write(&png, l.png_bytes())?;
            let sidecar = dir.join(format!("{prefix}-{}.json", l.meta.level));
            std::fs::write(&sidecar, serde_json::to_vec_pretty(&l.meta).expect("meta serializes"))?;
            out.push(png);
        }
        Ok(out)
    }
}

/// Lays out the crop windows for `center` without touching pixels.
pub fn plan_crop(model: &CameraModel, center: &PixelPoint, spec: &CropSpec) -> Result<CropPlan, FoveationError> {
    spec.validate()?;
    let (w, h) = (model.width_px(), model.height_px());
    let inside = center.is_finite()
        && center.u >= -0.5
        && center.v >= -0.5
        && center.u < f64::from(w) - 0.5
        && center.v < f64::from(h) - 0.5;
    if !inside {
        return Err(FoveationError::CenterOutsideFrame { u: center.u, v: center.v, width: w, height: h });
    }
    let max_side = w.min(h);
    if max_side < 2 {
        return Err(FoveationError::InvalidSpec("frame too small to crop".into()));
    }
    let f = model.mean_focal();

    let mut levels = Vec::with_capacity(spec.levels);
    for (i, req) in spec.level_fovs().into_iter().enumerate() {
        let ideal = if req < 180.0 { 2.0 * f * (req.to_radians() / 2.0).tan() } else { f64::INFINITY };
        let clamped = !(ideal.round() < f64::from(max_side));
        let side = if clamped { max_side } else { (ideal.round() as u32).max(2) };
        let fov_deg = if clamped { 2.0 * (f64::from(side) / (2.0 * f)).atan().to_degrees() } else { req };

        let place = |c: f64, extent: u32| -> (u32, i64) {
            let ideal_start = (c + 0.5 - f64::from(side) / 2.0).floor() as i64;
            let start = ideal_start.clamp(0, i64::from(extent - side));
            (start as u32, start - ideal_start)
        };
        let (x, dx) = place(center.u, w);
        let (y, dy) = place(center.v, h);
        let window = Window { x, y, width: side, height: side };
        debug_assert!(window.contains(center));
        levels.push(CropLevelMeta {
            level: i,
            fov_deg,
            requested_fov_deg: req,
            window,
            center_offset: [dx, dy],
            clamped,
        });
    }

    if let Some(i) = (1..levels.len()).find(|&i| levels[i].fov_deg <= levels[i - 1].fov_deg) {
        return Err(FoveationError::InvalidSpec(format!("levels {} and {i} collapse to the same window size", i - 1)));
    }
    Ok(CropPlan { center: *center, out_px: spec.out_px, levels })
}

/// Crops and resamples every level of the pyramid.
pub fn multiscale_crop(
    frame: &RgbImage,
    center: &PixelPoint,
    model: &CameraModel,
    spec: &CropSpec,
) -> Result<MultiscaleCrop, FoveationError> {
    if (frame.width(), frame.height()) != (model.width_px(), model.height_px()) {
        return Err(FoveationError::FrameSize {
            expected_w: model.width_px(),
            expected_h: model.height_px(),
            actual_w: frame.width(),
            actual_h: frame.height(),
        });
    }
    let plan = plan_crop(model, center, spec)?;
    let levels = plan
        .levels
        .iter()
        .map(|meta| CropLevel { meta: *meta, image: area_resample(frame, &meta.window, spec.out_px) })
        .collect();
    Ok(MultiscaleCrop { plan, levels })
}

/// Overlap weights of each output cell with the source pixels along one axis.
fn box_taps(src: u32, dst: u32) -> Vec<Vec<(usize, f64)>> {
    let scale = f64::from(src) / f64::from(dst);
    (0..dst)
        .map(|o| {
            let lo = f64::from(o) * scale;
            let hi = f64::from(o + 1) * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src as usize);
            (first..last)
                .filter_map(|j| {
                    let overlap = hi.min(j as f64 + 1.0) - lo.max(j as f64);
                    (overlap > 0.0).then_some((j, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resample of `window` to `out × out`.
pub fn area_resample(frame: &RgbImage, window: &Window, out: u32) -> RgbImage {
    let taps_x = box_taps(window.width, out);
    let taps_y = box_taps(window.height, out);
    let (ox, oy) = (window.x as usize, window.y as usize);
    let stride = frame.width() as usize * 3;
    let src = frame.as_raw();
    let out_us = out as usize;

    // Horizontal pass: window rows -> out columns.
    let mut tmp = vec![0.0_f64; window.height as usize * out_us * 3];
    tmp.par_chunks_mut(out_us * 3).enumerate().for_each(|(r, row)| {
        let base = (oy + r) * stride;
        for (c, taps) in taps_x.iter().enumerate() {
            let mut acc = [0.0; 3];
            for &(j, wgt) in taps {
                let p = base + (ox + j) * 3;
                for k in 0..3 {
                    acc[k] += wgt * f64::from(src[p + k]);
                }
            }
            row[c * 3..c * 3 + 3].copy_from_slice(&acc);
        }
    });

    // Vertical pass.
    let mut img = RgbImage::new(out, out);
    img.as_mut().par_chunks_mut(out_us * 3).enumerate().for_each(|(r, row)| {
        for c in 0..out_us {
            let mut acc = [0.0; 3];
            for &(j, wgt) in &taps_y[r] {
                let p = j * out_us * 3 + c * 3;
                for k in 0..3 {
                    acc[k] += wgt * tmp[p + k];
                }
            }
            for k in 0..3 {
                row[c * 3 + k] = acc[k].round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    img
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub full_pixels: u64,
    pub crop_pixels: u64,
    pub reduction: f64,
}

impl BudgetReport {
    fn new(full_pixels: u64, crop_pixels: u64) -> Self {
        Self { full_pixels, crop_pixels, reduction: full_pixels as f64 / crop_pixels as f64 }
    }
}

/// Pixel payload of a crop plan against the full frame.
pub fn data_budget(spec: &CropSpec, full_width: u64, full_height: u64) -> Result<BudgetReport, FoveationError> {
    if full_width == 0 || full_height == 0 {
        return Err(FoveationError::Domain("frame dimensions must be positive".into()));
    }
    spec.validate()?;
    let crop = spec.levels as u64 * u64::from(spec.out_px) * u64::from(spec.out_px);
    Ok(BudgetReport::new(full_width * full_height, crop))
}

/// Payload of an actual crop against its source frame.
pub fn crop_budget(crop: &MultiscaleCrop, full_width: u64, full_height: u64) -> BudgetReport {
    BudgetReport::new(full_width * full_height, crop.crop_pixels())
}

/// Sensor size needed to cover a gaze range at a given angular resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcuityBudget {
    pub width_px: f64,
    pub height_px: f64,
    pub megapixels: f64,
}

/// `(range + 2 * margin) * px_per_deg` on each axis.
pub fn acuity_budget(
    gaze_range_h_deg: f64,
    gaze_range_v_deg: f64,
    fovea_margin_deg: f64,
    px_per_deg: f64,
) -> Result<AcuityBudget, FoveationError> {
    let all = [gaze_range_h_deg, gaze_range_v_deg, fovea_margin_deg, px_per_deg];
    if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || px_per_deg == 0.0 {
        return Err(FoveationError::Domain(format!("inputs must be non-negative and finite: {all:?}")));
    }
    let width_px = (gaze_range_h_deg + 2.0 * fovea_margin_deg) * px_per_deg;
    let height_px = (gaze_range_v_deg + 2.0 * fovea_margin_deg) * px_per_deg;
    Ok(AcuityBudget { width_px, height_px, megapixels: width_px * height_px / 1e6 })
}

/// Side length of a square covering `±fovea_radius` at full resolution.
pub fn foveal_window(px_per_deg: f64, fovea_radius_deg: f64) -> f64 {
    2.0 * fovea_radius_deg * px_per_deg
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn default_ladder_on_imx179() {
        let cam = CameraModel::imx179();
        let plan = plan_crop(&cam, &cam.center_pixel(), &CropSpec::default()).unwrap();
        let sides: Vec<u32> = plan.levels.iter().map(|l| l.window.width).collect();
        assert_eq!(sides[2], 2448);
        assert!(plan.levels[2].clamped);
        assert!(!plan.levels[0].clamped && !plan.levels[1].clamped);
        assert!(sides[0] < sides[1] && sides[1] < sides[2]);
        // 2 f tan(4.5°) with f = 2519.16 -> ~396 px.
        assert!((i64::from(sides[0]) - 396).abs() <= 1, "{sides:?}");
        assert_eq!(plan.levels[2].window, Window { x: 408, y: 0, width: 2448, height: 2448 });
    }

    #[test]
    fn corner_center_shifts_windows() {
        let cam = CameraModel::imx179();
        let c = PixelPoint::new(10.0, 10.0);
        let plan = plan_crop(&cam, &c, &CropSpec::default()).unwrap();
        for l in &plan.levels {
            assert!(l.window.contains(&c));
            assert_ne!(l.center_offset, [0, 0]);
            assert_eq!((l.window.x, l.window.y), (0, 0));
        }
    }

    #[test]
    fn center_outside_frame() {
        let cam = CameraModel::imx179();
        let err = plan_crop(&cam, &PixelPoint::new(-5.0, 10.0), &CropSpec::default());
        assert!(matches!(err, Err(FoveationError::CenterOutsideFrame { .. })));
        assert!(plan_crop(&cam, &PixelPoint::new(10.0, 2448.0), &CropSpec::default()).is_err());
    }

    #[test]
    fn collapsing_levels_rejected() {
        let cam = CameraModel::imx179();
        let spec = CropSpec { levels: 4, ..CropSpec::default() };
        assert!(matches!(plan_crop(&cam, &cam.center_pixel(), &spec), Err(FoveationError::InvalidSpec(_))));
    }

    #[test]
    fn flat_image_keeps_its_color() {
        let cam = CameraModel::from_diagonal_fov(640, 480, 78.0).unwrap();
        let img = RgbImage::from_pixel(640, 480, Rgb([37, 200, 91]));
        let spec = CropSpec { out_px: 64, ..CropSpec::default() };
        let crop = multiscale_crop(&img, &PixelPoint::new(100.0, 300.0), &cam, &spec).unwrap();
        for l in &crop.levels {
            assert!(l.image.pixels().all(|p| *p == Rgb([37, 200, 91])));
        }
    }

    #[test]
    fn box_taps_sum_to_one() {
        for (src, dst) in [(2448, 512), (396, 512), (7, 3), (512, 512)] {
            for taps in box_taps(src, dst) {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12, "{src}->{dst}: {s}");
            }
        }
    }

    #[test]
    fn integer_downscale_is_block_mean() {
        let mut img = RgbImage::new(4, 4);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgb([(x * 10 + y) as u8, 0, 255]);
        }
        let out = area_resample(&img, &Window { x: 0, y: 0, width: 4, height: 4 }, 2);
        // Block (0..2, 0..2): values 0, 1, 10, 11 -> 5.5 -> rounds to 6.
        assert_eq!(out.get_pixel(0, 0)[0], 6);
        assert_eq!(out.get_pixel(1, 1)[0], 28);
        assert_eq!(out.get_pixel(1, 1)[2], 255);
    }

    #[test]
    fn budgets() {
        let r = data_budget(&CropSpec::default(), 3264, 2448).unwrap();
        assert_eq!((r.full_pixels, r.crop_pixels), (7_990_272, 786_432));
        assert_eq!(r.reduction, 10.16015625);

        let one = CropSpec { levels: 1, out_px: 1000, ..CropSpec::default() };
        assert_eq!(data_budget(&one, 1000, 1000).unwrap().reduction, 1.0);

        let four = CropSpec { levels: 4, out_px: 480, ..CropSpec::default() };
        assert_eq!(data_budget(&four, 5760, 4320).unwrap().reduction, 27.0);
        assert!(data_budget(&four, 0, 10).is_err());
    }

    #[test]
    fn acuity_and_fovea() {
        let a = acuity_budget(44.0, 33.0, 2.0, 120.0).unwrap();
        assert_eq!(a.width_px, 5760.0);
        assert_eq!(a.height_px, 4440.0);
        let z = acuity_budget(0.0, 0.0, 2.0, 120.0).unwrap();
        assert_eq!((z.width_px, z.height_px), (480.0, 480.0));
        assert!(acuity_budget(-1.0, 0.0, 2.0, 120.0).is_err());
        assert_eq!(foveal_window(120.0, 2.0), 480.0);
        assert_eq!(foveal_window(120.0, 0.0), 0.0);
        assert_eq!(foveal_window(60.0, 2.0), 240.0);
    }
}
