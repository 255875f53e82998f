//! Recorded or synthetic capture sessions: world-camera frames plus a gaze
//! stream on a shared clock.
//!
//! On disk a session is a directory holding `manifest.json`, the PNG frames
//! it references and a gaze CSV with columns `t,ox,oy,oz,dx,dy,dz`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CaptureError;
use crate::geometry::{CameraModel, DisplayView, GazeSample, PlanePoint};
use crate::scene::Scene;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GAZE_COLUMNS: [&str; 7] = ["t", "ox", "oy", "oz", "dx", "dy", "dz"];

/// Nominal eye-tracker rate of the glasses.
pub const GAZE_RATE_HZ: f64 = 120.0;
/// Nominal full-resolution world-camera frame rate.
pub const FRAME_RATE_HZ: f64 = 15.0;

/// A decoded world-camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub pixels: Arc<RgbImage>,
}

#[derive(Debug, Clone, PartialEq)]
enum FrameSource {
    File(PathBuf),
    Memory(Arc<RgbImage>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub t: f64,
    source: FrameSource,
}

impl FrameEntry {
    pub fn in_memory(t: f64, pixels: Arc<RgbImage>) -> Self {
        Self { t, source: FrameSource::Memory(pixels) }
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.source {
            FrameSource::File(p) => Some(p),
            FrameSource::Memory(_) => None,
        }
    }
}

/// An indexed capture session. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub camera: CameraModel,
    frames: Vec<FrameEntry>,
    gaze: Vec<GazeSample>,
    pub metadata: BTreeMap<String, Value>,
}

/// What the system sees at a trigger instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub frame_index: usize,
    pub frame: Frame,
    pub gaze: GazeSample,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFrame {
    t: f64,
    file: String,
}

impl Session {
    /// Validates ordering and sizes of in-memory data.
    pub fn new(
        camera: CameraModel,
        frames: Vec<FrameEntry>,
        gaze: Vec<GazeSample>,
        metadata: BTreeMap<String, Value>,
    ) -> Result<Self, CaptureError> {
        if frames.is_empty() {
            return Err(CaptureError::Schema { field: "frames".into(), message: "at least one frame required".into() });
        }
        if gaze.is_empty() {
            return Err(CaptureError::Schema {
                field: "gaze_file".into(),
                message: "at least one gaze sample required".into(),
            });
        }
        if let Some(i) = frames.iter().position(|f| !f.t.is_finite()) {
            return Err(CaptureError::Schema { field: format!("frames[{i}].t"), message: "not finite".into() });
        }
        if let Some(i) = (1..frames.len()).find(|&i| frames[i].t <= frames[i - 1].t) {
            return Err(CaptureError::TimestampOrder { stream: "frames", index: i });
        }
        if let Some(i) = (1..gaze.len()).find(|&i| gaze[i].t < gaze[i - 1].t) {
            return Err(CaptureError::TimestampOrder { stream: "gaze", index: i });
        }
        for (i, f) in frames.iter().enumerate() {
            if let FrameSource::Memory(img) = &f.source {
                check_size(&camera, i, img.width(), img.height())?;
            }
        }
        Ok(Self { camera, frames, gaze, metadata })
    }

    pub fn frames(&self) -> &[FrameEntry] {
        &self.frames
    }

    pub fn gaze(&self) -> &[GazeSample] {
        &self.gaze
    }

    /// `[first frame time, last timestamp of either stream]`.
    pub fn span(&self) -> (f64, f64) {
        let last_frame = self.frames.last().map_or(f64::NEG_INFINITY, |f| f.t);
        let last_gaze = self.gaze.last().map_or(f64::NEG_INFINITY, |g| g.t);
        (self.frames[0].t, last_frame.max(last_gaze))
    }

    /// Decodes frame `index`.
    pub fn frame(&self, index: usize) -> Result<Frame, CaptureError> {
        let entry = self.frames.get(index).ok_or(CaptureError::UnknownFrame(index))?;
        let pixels = match &entry.source {
            FrameSource::Memory(img) => Arc::clone(img),
            FrameSource::File(path) => {
                let img = image::open(path)
                    .map_err(|e| CaptureError::Image { path: path.clone(), message: e.to_string() })?
                    .to_rgb8();
                check_size(&self.camera, index, img.width(), img.height())?;
                Arc::new(img)
            }
        };
        Ok(Frame { t: entry.t, pixels })
    }

    /// Latest frame at or before `t`, paired with the gaze sample nearest to
    /// `t` (ties go to the earlier sample).
    pub fn sample_at(&self, t: f64) -> Result<Capture, CaptureError> {
        let (start, end) = self.span();
        if !(t >= start && t <= end) {
            return Err(CaptureError::OutOfRange { t, start, end });
        }
        let frame_index = self.frames.partition_point(|f| f.t <= t) - 1;
        let frame = self.frame(frame_index)?;
        Ok(Capture { frame_index, frame, gaze: self.nearest_gaze(t) })
    }

    pub fn nearest_gaze(&self, t: f64) -> GazeSample {
        let after = self.gaze.partition_point(|g| g.t <= t);
        if after == 0 {
            return self.gaze[0];
        }
        let before = &self.gaze[after - 1];
        match self.gaze.get(after) {
            Some(next) if next.t - t < t - before.t => *next,
            _ => *before,
        }
    }

    /// Reads a session directory (or a manifest path directly).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CaptureError> {
        load_session(path)
    }

    /// Writes `manifest.json`, `frames/NNNNN.png` and `gaze.csv` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf, CaptureError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CaptureError::Io { path, source }
        };
        fs::create_dir_all(dir.join("frames")).map_err(io(dir))?;

        let mut frames = Vec::with_capacity(self.frames.len());
        for i in 0..self.frames.len() {
            let frame = self.frame(i)?;
            let rel = format!("frames/{i:05}.png");
            let path = dir.join(&rel);
            frame.pixels.save(&path).map_err(|e| CaptureError::Image { path: path.clone(), message: e.to_string() })?;
            frames.push(ManifestFrame { t: frame.t, file: rel });
        }

        let gaze_path = dir.join("gaze.csv");
        let mut w = csv::Writer::from_path(&gaze_path)
            .map_err(|e| CaptureError::Image { path: gaze_path.clone(), message: e.to_string() })?;
        let csv_err = |e: csv::Error| CaptureError::Image { path: gaze_path.clone(), message: e.to_string() };
        w.write_record(GAZE_COLUMNS).map_err(csv_err)?;
        for g in &self.gaze {
            let row = [g.t, g.origin[0], g.origin[1], g.origin[2], g.direction[0], g.direction[1], g.direction[2]];
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        w.flush().map_err(io(&gaze_path))?;

        let manifest = serde_json::json!({
            "camera": self.camera,
            "frames": frames,
            "gaze_file": "gaze.csv",
            "metadata": self.metadata,
        });
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&manifest_path, text).map_err(io(&manifest_path))?;
        Ok(manifest_path)
    }
}

fn check_size(camera: &CameraModel, index: usize, w: u32, h: u32) -> Result<(), CaptureError> {
    if (w, h) != (camera.width_px(), camera.height_px()) {
        return Err(CaptureError::FrameSize {
            index,
            expected_w: camera.width_px(),
            expected_h: camera.height_px(),
            actual_w: w,
            actual_h: h,
        });
    }
    Ok(())
}

fn schema(field: impl Into<String>, message: impl ToString) -> CaptureError {
    CaptureError::Schema { field: field.into(), message: message.to_string() }
}

/// Loads and validates a session manifest. Frame images are decoded lazily,
/// but their existence and dimensions are checked here.
pub fn load_session(path: impl AsRef<Path>) -> Result<Session, CaptureError> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CaptureError::MissingAsset { path: manifest_path.clone() },
        _ => CaptureError::Io { path: manifest_path.clone(), source: e },
    })?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| schema("<root>", e))?;
    let obj = doc.as_object().ok_or_else(|| schema("<root>", "expected an object"))?;

    let camera: CameraModel =
        serde_json::from_value(obj.get("camera").cloned().ok_or_else(|| schema("camera", "missing"))?)
            .map_err(|e| schema("camera", e))?;

    let frames_val = obj.get("frames").ok_or_else(|| schema("frames", "missing"))?;
    let raw_frames = frames_val.as_array().ok_or_else(|| schema("frames", "expected an array"))?;
    let mut frames = Vec::with_capacity(raw_frames.len());
    for (i, f) in raw_frames.iter().enumerate() {
        let mf: ManifestFrame = serde_json::from_value(f.clone()).map_err(|e| schema(format!("frames[{i}]"), e))?;
        let file = root.join(&mf.file);
        if !file.is_file() {
            return Err(CaptureError::MissingAsset { path: file });
        }
        let (w, h) = image::image_dimensions(&file)
            .map_err(|e| CaptureError::Image { path: file.clone(), message: e.to_string() })?;
        check_size(&camera, i, w, h)?;
        frames.push(FrameEntry { t: mf.t, source: FrameSource::File(file) });
    }

    let gaze_rel = obj
        .get("gaze_file")
        .ok_or_else(|| schema("gaze_file", "missing"))?
        .as_str()
        .ok_or_else(|| schema("gaze_file", "expected a string"))?;
    let gaze = read_gaze_csv(&root.join(gaze_rel))?;

    let metadata = match obj.get("metadata") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        Some(_) => return Err(schema("metadata", "expected an object")),
    };

    Session::new(camera, frames, gaze, metadata)
}

fn read_gaze_csv(path: &Path) -> Result<Vec<GazeSample>, CaptureError> {
    if !path.is_file() {
        return Err(CaptureError::MissingAsset { path: path.to_path_buf() });
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| schema("gaze_file", e))?;
    let headers = rdr.headers().map_err(|e| schema("gaze_file", e))?.clone();
    let header: Vec<&str> = headers.iter().map(str::trim).collect();
    if header != GAZE_COLUMNS {
        return Err(schema("gaze_file", format!("header must be {}", GAZE_COLUMNS.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| schema(format!("gaze_file row {}", i + 1), e))?;
        let mut vals = [0.0; 7];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = rec
                .get(k)
                .ok_or_else(|| schema(format!("gaze_file row {} column {}", i + 1, GAZE_COLUMNS[k]), "missing"))?
                .trim()
                .parse()
                .map_err(|e| schema(format!("gaze_file row {} column {}", i + 1, GAZE_COLUMNS[k]), e))?;
        }
        let g = GazeSample::new(vals[0], [vals[1], vals[2], vals[3]], [vals[4], vals[5], vals[6]])
            .map_err(|e| schema(format!("gaze_file row {}", i + 1), e))?;
        out.push(g);
    }
    Ok(out)
}

/// A period of steady fixation on a display location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub start: f64,
    pub end: f64,
    pub target: PlanePoint,
}

/// Drives synthetic gaze: the pupil sits at `origin` and fixates each target
/// in turn, sampled at `rate_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeScript {
    pub origin: [f64; 3],
    pub rate_hz: f64,
    pub fixations: Vec<Fixation>,
    pub frame_times: Vec<f64>,
}

impl GazeScript {
    /// One frame at `t = 0` and a steady fixation for `duration` seconds.
    pub fn steady(target: PlanePoint, duration: f64) -> Self {
        Self {
            origin: [0.0; 3],
            rate_hz: GAZE_RATE_HZ,
            fixations: vec![Fixation { start: 0.0, end: duration, target }],
            frame_times: vec![0.0],
        }
    }
}

/// Renders a scene through `view` and scripts the gaze stream. Every frame
/// shows the same static scene.
pub fn synth_session(scene: &Scene, view: &DisplayView, script: &GazeScript) -> Result<Session, CaptureError> {
    if !(script.rate_hz.is_finite() && script.rate_hz > 0.0) {
        return Err(CaptureError::Unrenderable(format!("gaze rate {} must be positive", script.rate_hz)));
    }
    let pixels = scene.render(view)?;
    let frames = script.frame_times.iter().map(|&t| FrameEntry::in_memory(t, Arc::clone(&pixels))).collect();

    let mut gaze = Vec::new();
    for fx in &script.fixations {
        let n = ((fx.end - fx.start) * script.rate_hz).floor().max(0.0) as usize;
        let target = view.plane_to_camera(&fx.target);
        for k in 0..=n {
            let t = fx.start + k as f64 / script.rate_hz;
            gaze.push(GazeSample::looking_at(t, script.origin, target)?);
        }
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("source".into(), Value::from("synthetic"));
    metadata.insert("scene".into(), serde_json::to_value(scene).expect("scene serializes"));
    metadata.insert("viewing_distance_m".into(), Value::from(view.viewing_distance));
    Session::new(view.camera, frames, gaze, metadata)
}
