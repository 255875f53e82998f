//! Synthetic display scenes: the 5×5 selection-target grid and the 9×9
//! dog-image grid, laid out in visual angle on a display plane and rendered
//! through a [`DisplayView`].

use std::sync::Arc;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CaptureError;
use crate::geometry::{DisplayView, PixelPoint, PlanePoint};

const BACKGROUND: Rgb<u8> = Rgb([128, 128, 128]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

/// Renders above this many pixels are refused.
const MAX_RENDER_PIXELS: u64 = 100_000_000;

/// The selection-experiment stimulus: a grid of candidate cross positions,
/// one active cross, and four fiducial markers surrounding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossGridScene {
    pub rows: usize,
    pub cols: usize,
    pub spacing_deg: f64,
    pub cross_size_deg: f64,
    /// Index (row-major) of the rendered cross, if any.
    pub active: Option<usize>,
    /// Diagonal offset of the fiducial centers from the active target.
    pub marker_offset_deg: f64,
    pub marker_size_deg: f64,
}

impl Default for CrossGridScene {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            spacing_deg: 11.0,
            cross_size_deg: 1.06,
            active: Some(12),
            marker_offset_deg: 2.5,
            marker_size_deg: 1.0,
        }
    }
}

impl CrossGridScene {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Horizontal and vertical visual angle of candidate `index`.
    pub fn target_angles(&self, index: usize) -> (f64, f64) {
        let (r, c) = (index / self.cols, index % self.cols);
        let yaw = (c as f64 - (self.cols as f64 - 1.0) / 2.0) * self.spacing_deg;
        let pitch = (r as f64 - (self.rows as f64 - 1.0) / 2.0) * self.spacing_deg;
        (yaw, pitch)
    }

    pub fn target_plane(&self, view: &DisplayView, index: usize) -> PlanePoint {
        let (yaw, pitch) = self.target_angles(index);
        view.plane_at_angles(yaw, pitch)
    }

    pub fn candidate_positions(&self, view: &DisplayView) -> Vec<PlanePoint> {
        (0..self.len()).map(|i| self.target_plane(view, i)).collect()
    }

    /// Fiducial centers around target `index`, clockwise from top-left.
    pub fn marker_plane(&self, view: &DisplayView, index: usize) -> [PlanePoint; 4] {
        let (yaw, pitch) = self.target_angles(index);
        let o = self.marker_offset_deg;
        [(-o, -o), (o, -o), (o, o), (-o, o)].map(|(dy, dp)| view.plane_at_angles(yaw + dy, pitch + dp))
    }

    fn paint(&self, view: &DisplayView, p: &PlanePoint) -> Rgb<u8> {
        let Some(active) = self.active else {
            return BACKGROUND;
        };
        let d = view.viewing_distance;
        let ang = |q: &PlanePoint| ((q.x / d).atan().to_degrees(), (q.y / d).atan().to_degrees());
        let (yaw, pitch) = ang(p);
        let (ty, tp) = self.target_angles(active);
        let (dx, dy) = (yaw - ty, pitch - tp);

        for m in self.marker_plane(view, active) {
            let (my, mp) = ang(&m);
            let half = self.marker_size_deg / 2.0;
            let (ex, ey) = ((yaw - my).abs(), (pitch - mp).abs());
            if ex <= half && ey <= half {
                // Black border with a white core, ArUco-like.
                return if ex <= half / 2.0 && ey <= half / 2.0 { WHITE } else { BLACK };
            }
        }

        let half = self.cross_size_deg / 2.0;
        let thickness = self.cross_size_deg * 0.12;
        if dx.abs() <= half && dy.abs() <= half {
            let on_diag = (dx - dy).abs() / std::f64::consts::SQRT_2 <= thickness / 2.0;
            let on_anti = (dx + dy).abs() / std::f64::consts::SQRT_2 <= thickness / 2.0;
            if on_diag || on_anti {
                return BLACK;
            }
        }
        BACKGROUND
    }
}

/// A rectangular labeled region on the display plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRegion {
    pub label: String,
    pub min: PlanePoint,
    pub max: PlanePoint,
}

impl LabeledRegion {
    pub fn contains(&self, p: &PlanePoint) -> bool {
        p.x >= self.min.x && p.x < self.max.x && p.y >= self.min.y && p.y < self.max.y
    }

    pub fn center(&self) -> PlanePoint {
        PlanePoint::new((self.min.x + self.max.x) / 2.0, (self.min.y + self.max.y) / 2.0)
    }

    /// Corners in image pixels, clockwise from top-left.
    pub fn image_quad(&self, view: &DisplayView) -> [PixelPoint; 4] {
        [
            PlanePoint::new(self.min.x, self.min.y),
            PlanePoint::new(self.max.x, self.min.y),
            PlanePoint::new(self.max.x, self.max.y),
            PlanePoint::new(self.min.x, self.max.y),
        ]
        .map(|p| view.plane_to_pixel(&p))
    }
}

/// The classification stimulus: a square grid of labeled images, with the
/// test image at the grid center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DogGridScene {
    /// Row-major labels; `side * side` entries.
    pub labels: Vec<String>,
    pub side: usize,
    pub image_deg: f64,
    /// Extra vertical gap between rows. Horizontal neighbors abut.
    pub vertical_gap_deg: f64,
    /// Visual angle of the grid center (the test image).
    pub center_yaw_deg: f64,
    pub center_pitch_deg: f64,
    /// Seed for the per-label textures.
    pub texture_seed: u64,
}

impl DogGridScene {
    pub fn new(labels: Vec<String>, side: usize) -> Result<Self, CaptureError> {
        if side == 0 || labels.len() != side * side {
            return Err(CaptureError::Unrenderable(format!(
                "a {side}x{side} grid needs {} labels, got {}",
                side * side,
                labels.len()
            )));
        }
        Ok(Self {
            labels,
            side,
            image_deg: 8.0,
            vertical_gap_deg: 2.0,
            center_yaw_deg: 0.0,
            center_pitch_deg: 0.0,
            texture_seed: 0,
        })
    }

    pub fn centered_at(mut self, yaw_deg: f64, pitch_deg: f64) -> Self {
        self.center_yaw_deg = yaw_deg;
        self.center_pitch_deg = pitch_deg;
        self
    }

    pub fn center_index(&self) -> usize {
        (self.side / 2) * self.side + self.side / 2
    }

    pub fn center_label(&self) -> &str {
        &self.labels[self.center_index()]
    }

    fn cell_angles(&self, index: usize) -> (f64, f64) {
        let half = (self.side as f64 - 1.0) / 2.0;
        let (r, c) = ((index / self.side) as f64, (index % self.side) as f64);
        (
            self.center_yaw_deg + (c - half) * self.image_deg,
            self.center_pitch_deg + (r - half) * (self.image_deg + self.vertical_gap_deg),
        )
    }

    /// Display-plane rectangles of every image, row-major.
    pub fn regions(&self, view: &DisplayView) -> Vec<LabeledRegion> {
        let h = self.image_deg / 2.0;
        (0..self.labels.len())
            .map(|i| {
                let (yaw, pitch) = self.cell_angles(i);
                LabeledRegion {
                    label: self.labels[i].clone(),
                    min: view.plane_at_angles(yaw - h, pitch - h),
                    max: view.plane_at_angles(yaw + h, pitch + h),
                }
            })
            .collect()
    }

    /// Index of the image covering a plane point.
    pub fn region_at(&self, view: &DisplayView, p: &PlanePoint) -> Option<usize> {
        let d = view.viewing_distance;
        let yaw = (p.x / d).atan().to_degrees();
        let pitch = (p.y / d).atan().to_degrees();
        let half = (self.side as f64 - 1.0) / 2.0;
        let h = self.image_deg / 2.0;
        let c = ((yaw - self.center_yaw_deg) / self.image_deg + half).round();
        let r = ((pitch - self.center_pitch_deg) / (self.image_deg + self.vertical_gap_deg) + half).round();
        if c < 0.0 || r < 0.0 || c >= self.side as f64 || r >= self.side as f64 {
            return None;
        }
        let idx = r as usize * self.side + c as usize;
        let (cy, cp) = self.cell_angles(idx);
        ((yaw - cy).abs() <= h && (pitch - cp).abs() <= h).then_some(idx)
    }

    fn paint(&self, view: &DisplayView, p: &PlanePoint) -> Rgb<u8> {
        let Some(idx) = self.region_at(view, p) else {
            return WHITE;
        };
        let d = view.viewing_distance;
        let (cy, cp) = self.cell_angles(idx);
        // Position inside the cell in [-1, 1].
        let x = ((p.x / d).atan().to_degrees() - cy) / (self.image_deg / 2.0);
        let y = ((p.y / d).atan().to_degrees() - cp) / (self.image_deg / 2.0);
        let tex = label_texture(&self.labels[idx], self.texture_seed);

        let body = (x / 0.75).powi(2) + ((y - 0.2) / 0.5).powi(2) <= 1.0;
        let head = (x - tex.head_x).powi(2) + (y + 0.45).powi(2) <= 0.32 * 0.32;
        if head {
            let eye = ((x - tex.head_x).abs() - 0.12).powi(2) + (y + 0.5).powi(2) <= 0.04 * 0.04;
            return if eye { BLACK } else { tex.secondary };
        }
        if body {
            let stripe = ((x * tex.stripe_freq).sin() * (y * tex.stripe_freq).cos()) > 0.6;
            return if stripe { tex.secondary } else { tex.primary };
        }
        WHITE
    }
}

struct LabelTexture {
    primary: Rgb<u8>,
    secondary: Rgb<u8>,
    head_x: f64,
    stripe_freq: f64,
}

fn label_texture(label: &str, seed: u64) -> LabelTexture {
    // FNV-1a over the label, mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let byte = |k: u32| ((h >> (8 * k)) & 0xff) as u8;
    LabelTexture {
        primary: Rgb([byte(0) / 2 + 60, byte(1) / 2 + 40, byte(2) / 3 + 20]),
        secondary: Rgb([byte(3) / 3, byte(4) / 3, byte(5) / 3]),
        head_x: (f64::from(byte(6)) / 255.0 - 0.5) * 0.6,
        stripe_freq: 4.0 + f64::from(byte(7) % 12),
    }
}

/// Anything that can be drawn on the display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scene {
    Empty,
    CrossGrid(CrossGridScene),
    DogGrid(DogGridScene),
}

impl Scene {
    pub fn color_at(&self, view: &DisplayView, p: &PlanePoint) -> Rgb<u8> {
        match self {
            Scene::Empty => BACKGROUND,
            Scene::CrossGrid(s) => s.paint(view, p),
            Scene::DogGrid(s) => s.paint(view, p),
        }
    }

    /// Renders the scene as seen by the view's camera. Each pixel samples the
    /// plane point its ray hits.
    pub fn render(&self, view: &DisplayView) -> Result<Arc<RgbImage>, CaptureError> {
        let (w, h) = (view.camera.width_px(), view.camera.height_px());
        if u64::from(w) * u64::from(h) > MAX_RENDER_PIXELS {
            return Err(CaptureError::Unrenderable(format!("{w}x{h} exceeds the render limit")));
        }
        if let Scene::CrossGrid(s) = self {
            if s.active.is_some_and(|a| a >= s.len()) {
                return Err(CaptureError::Unrenderable("active target index out of range".into()));
            }
        }
        let mut img = RgbImage::new(w, h);
        img.as_mut().par_chunks_mut(w as usize * 3).enumerate().for_each(|(v, row)| {
            for (u, px) in row.chunks_exact_mut(3).enumerate() {
                let plane = view.pixel_to_plane(&PixelPoint::new(u as f64, v as f64));
                px.copy_from_slice(&self.color_at(view, &plane).0);
            }
        });
        Ok(Arc::new(img))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraModel;

    fn small_view() -> DisplayView {
        DisplayView::new(CameraModel::from_diagonal_fov(320, 240, 78.0).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn cross_grid_candidates_are_eleven_degrees_apart() {
        let s = CrossGridScene::default();
        assert_eq!(s.len(), 25);
        assert_eq!(s.target_angles(0), (-22.0, -22.0));
        assert_eq!(s.target_angles(12), (0.0, 0.0));
        assert_eq!(s.target_angles(13), (11.0, 0.0));
        assert_eq!(s.target_angles(24), (22.0, 22.0));
    }

    #[test]
    fn empty_scene_is_uniform() {
        let img = Scene::Empty.render(&small_view()).unwrap();
        assert!(img.pixels().all(|p| *p == BACKGROUND));
    }

    #[test]
    fn dog_grid_regions_tile_horizontally() {
        let labels: Vec<String> = (0..81).map(|i| format!("breed {i:02}")).collect();
        let s = DogGridScene::new(labels, 9).unwrap();
        let view = small_view();
        let regions = s.regions(&view);
        assert_eq!(regions.len(), 81);
        // Abutting horizontally, 2° gap vertically.
        assert!((regions[0].max.x - regions[1].min.x).abs() < 1e-12);
        assert!(regions[9].min.y > regions[0].max.y);
        assert_eq!(s.center_label(), "breed 40");
        assert_eq!(s.region_at(&view, &PlanePoint::new(0.0, 0.0)), Some(40));
    }

    #[test]
    fn wrong_label_count_is_unrenderable() {
        assert!(DogGridScene::new(vec!["a".into()], 9).is_err());
    }

    #[test]
    fn render_is_deterministic() {
        let labels: Vec<String> = (0..81).map(|i| format!("breed {i:02}")).collect();
        let s = Scene::DogGrid(DogGridScene::new(labels, 9).unwrap());
        let view = small_view();
        assert_eq!(*s.render(&view).unwrap(), *s.render(&view).unwrap());
    }
}
