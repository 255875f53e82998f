//! Simulated-user replications of the selection and classification studies.
//!
//! Randomness is split into independent streams keyed by (user, mode, trial)
//! so trials can run in parallel and adding a mode leaves the other modes'
//! draws untouched.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::oracle::{Classifier, OracleError, TrialView};
use crate::foveation::{plan_crop, CropSpec};
use crate::geometry::{
    pixel_angle, register_plane, selection_error, CameraModel, DisplayView, PixelPoint, PlaneRegistration,
};
use crate::rng::{derive_seed, stream};
use crate::scene::{CrossGridScene, DogGridScene};
use crate::selection::{select, SelectionKind, SelectionMode};

const BREEDS: &str = include_str!("../../data/breeds.txt");

// Stream tags, kept apart from mode indices (0..4).
const TAG_MODE_ORDER: u64 = 100;
const TAG_TARGET_ORDER: u64 = 101;
const TAG_TEST_SET: u64 = 102;
const TAG_LAYOUT: u64 = 103;
const TAG_DELAY: u64 = 104;
const TAG_SELECT: u64 = 105;
const TAG_ORACLE: u64 = 106;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("no usable selection modes")]
    NoModes,
    #[error(transparent)]
    Geometry(#[from] crate::error::GeometryError),
    #[error(transparent)]
    Foveation(#[from] crate::error::FoveationError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("trial CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The 81 breed labels shipped with the crate.
pub fn default_breeds() -> Vec<String> {
    parse_breeds(BREEDS)
}

/// One label per line; blank lines and `#` comments ignored.
pub fn parse_breeds(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_owned).collect()
}

pub fn load_breeds(path: impl AsRef<Path>) -> std::io::Result<Vec<String>> {
    Ok(parse_breeds(&std::fs::read_to_string(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionExperimentConfig {
    pub users: usize,
    pub rows: usize,
    pub cols: usize,
    pub spacing_deg: f64,
    pub cross_size_deg: f64,
    pub viewing_distance_m: f64,
    pub trials_per_mode: usize,
    pub delays_s: Vec<f64>,
    pub camera: CameraModel,
}

impl Default for SelectionExperimentConfig {
    fn default() -> Self {
        Self {
            users: 12,
            rows: 5,
            cols: 5,
            spacing_deg: 11.0,
            cross_size_deg: 1.06,
            viewing_distance_m: 1.0,
            trials_per_mode: 25,
            delays_s: vec![2.0, 3.0, 4.0],
            camera: CameraModel::imx179(),
        }
    }
}

impl SelectionExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.users == 0 {
            return bad("at least one user required".into());
        }
        if self.rows * self.cols == 0 || self.trials_per_mode != self.rows * self.cols {
            return bad(format!(
                "trials_per_mode ({}) must equal the number of grid locations ({})",
                self.trials_per_mode,
                self.rows * self.cols
            ));
        }
        if self.delays_s.is_empty() || self.delays_s.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("delays must be a non-empty list of non-negative seconds".into());
        }
        if !(self.viewing_distance_m > 0.0) || !(self.spacing_deg > 0.0) {
            return bad("viewing distance and spacing must be positive".into());
        }
        Ok(())
    }

    pub fn scene(&self) -> CrossGridScene {
        CrossGridScene {
            rows: self.rows,
            cols: self.cols,
            spacing_deg: self.spacing_deg,
            cross_size_deg: self.cross_size_deg,
            ..CrossGridScene::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationExperimentConfig {
    pub users: usize,
    pub breeds: Vec<String>,
    pub test_set_size: usize,
    pub grid_side: usize,
    pub image_deg: f64,
    pub vertical_gap_deg: f64,
    pub center_rows: usize,
    pub center_cols: usize,
    pub center_spacing_deg: f64,
    pub viewing_distance_m: f64,
    pub crop: CropSpec,
    pub camera: CameraModel,
}

impl Default for ClassificationExperimentConfig {
    fn default() -> Self {
        Self {
            users: 12,
            breeds: default_breeds(),
            test_set_size: 25,
            grid_side: 9,
            image_deg: 8.0,
            vertical_gap_deg: 2.0,
            center_rows: 5,
            center_cols: 5,
            center_spacing_deg: 8.0,
            viewing_distance_m: 1.0,
            crop: CropSpec::default(),
            camera: CameraModel::imx179(),
        }
    }
}

impl ClassificationExperimentConfig {
    pub fn locations(&self) -> usize {
        self.center_rows * self.center_cols
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.users == 0 {
            return bad("at least one user required".into());
        }
        let cells = self.grid_side * self.grid_side;
        if self.grid_side == 0 || self.breeds.len() != cells {
            return bad(format!("a {0}x{0} grid needs {cells} breeds, got {1}", self.grid_side, self.breeds.len()));
        }
        let mut sorted = self.breeds.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate breed {:?}", w[0]));
        }
        if self.test_set_size == 0 || self.test_set_size > self.breeds.len() {
            return bad(format!("test set of {} out of {} breeds", self.test_set_size, self.breeds.len()));
        }
        if self.test_set_size != self.locations() {
            return bad(format!(
                "test_set_size ({}) must equal the number of center locations ({})",
                self.test_set_size,
                self.locations()
            ));
        }
        if !(self.viewing_distance_m > 0.0 && self.image_deg > 0.0 && self.vertical_gap_deg >= 0.0) {
            return bad("distances and sizes must be positive".into());
        }
        self.crop.validate().map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Yaw/pitch of center location `i` (row-major).
    pub fn location_angles(&self, i: usize) -> (f64, f64) {
        let (r, c) = (i / self.center_cols, i % self.center_cols);
        (
            (c as f64 - (self.center_cols as f64 - 1.0) / 2.0) * self.center_spacing_deg,
            (r as f64 - (self.center_rows as f64 - 1.0) / 2.0) * self.center_spacing_deg,
        )
    }

    /// The seeded test set, in draw order.
    pub fn test_set(&self, seed: u64) -> Vec<String> {
        let mut rng = stream(seed, &[TAG_TEST_SET]);
        let mut all = self.breeds.clone();
        all.shuffle(&mut rng);
        all.truncate(self.test_set_size);
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Selection,
    Classification,
}

/// One simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub user: usize,
    pub mode: SelectionKind,
    /// Where this mode fell in the user's (shuffled) mode order.
    pub mode_position: usize,
    pub trial: usize,
    /// Grid location index (selection) or center location (classification).
    pub target_id: usize,
    pub target_u: f64,
    pub target_v: f64,
    /// Wait before the target appears.
    pub delay_s: f64,
    pub selected_u: f64,
    pub selected_v: f64,
    pub clamped: bool,
    pub error_deg: f64,
    pub time_s: f64,
    pub label: Option<String>,
    pub predicted: Option<String>,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn modes(&self) -> Vec<SelectionKind> {
        let mut m: Vec<SelectionKind> = Vec::new();
        for t in &self.trials {
            if !m.contains(&t.mode) {
                m.push(t.mode);
            }
        }
        m.sort_by_key(|k| SelectionKind::ALL.iter().position(|a| a == k));
        m
    }

    pub fn users(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self.trials.iter().map(|t| t.user).collect();
        u.sort_unstable();
        u.dedup();
        u
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ExperimentError> {
        let mut wr = csv::Writer::from_writer(w);
        for t in &self.trials {
            wr.serialize(t)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), ExperimentError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads per-trial rows. The kind is inferred from the label column.
    pub fn read_csv<R: Read>(r: R, seed: u64) -> Result<Self, ExperimentError> {
        let mut rd = csv::Reader::from_reader(r);
        let trials = rd.deserialize().collect::<Result<Vec<Trial>, _>>()?;
        let kind = if trials.iter().any(|t| t.label.is_some()) {
            ExperimentKind::Classification
        } else {
            ExperimentKind::Selection
        };
        Ok(Self { kind, seed, trials })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        Self::read_csv(std::fs::File::open(path)?, 0)
    }
}

fn kind_index(k: SelectionKind) -> u64 {
    SelectionKind::ALL.iter().position(|a| *a == k).expect("known kind") as u64
}

fn check_modes(modes: &[SelectionMode]) -> Result<(), ExperimentError> {
    if modes.is_empty() {
        return Err(ExperimentError::NoModes);
    }
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].iter().any(|o| o.kind == m.kind) {
            return Err(ExperimentError::Config(format!("mode {} listed twice", m.kind)));
        }
    }
    Ok(())
}

/// Per user: a shuffled mode order, and per mode a shuffled location order.
fn schedule(seed: u64, user: usize, modes: &[SelectionMode], locations: usize) -> Vec<(usize, usize, Vec<usize>)> {
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.shuffle(&mut stream(seed, &[user as u64, TAG_MODE_ORDER]));
    order
        .into_iter()
        .enumerate()
        .map(|(pos, mi)| {
            let mut locs: Vec<usize> = (0..locations).collect();
            locs.shuffle(&mut stream(seed, &[user as u64, kind_index(modes[mi].kind), TAG_TARGET_ORDER]));
            (mi, pos, locs)
        })
        .collect()
}

/// Selection study: every user selects every grid location once per mode;
/// error is measured on the display plane through the marker registration.
pub fn run_selection_experiment(
    config: &SelectionExperimentConfig,
    modes: &[SelectionMode],
    seed: u64,
) -> Result<TrialSet, ExperimentError> {
    config.validate()?;
    check_modes(modes)?;
    let view = DisplayView::new(config.camera, config.viewing_distance_m)?;
    let scene = config.scene();
    let n = scene.len();

    let mut regs: Vec<(PlaneRegistration, PixelPoint)> = Vec::with_capacity(n);
    for i in 0..n {
        let plane = scene.marker_plane(&view, i);
        let pixels = plane.map(|p| view.plane_to_pixel(&p));
        regs.push((
            register_plane(&pixels, &plane, config.viewing_distance_m)?,
            view.plane_to_pixel(&scene.target_plane(&view, i)),
        ));
    }

    let jobs: Vec<(usize, usize, usize, usize, usize)> = (0..config.users)
        .flat_map(|u| {
            schedule(seed, u, modes, n).into_iter().flat_map(move |(mi, pos, locs)| {
                locs.into_iter().enumerate().map(move |(trial, loc)| (u, mi, pos, trial, loc))
            })
        })
        .collect();

    let trials = jobs
        .par_iter()
        .map(|&(user, mi, mode_position, trial, loc)| {
            let mode = &modes[mi];
            let path = [user as u64, kind_index(mode.kind), trial as u64];
            let delay_s = *config
                .delays_s
                .get(stream(seed, &[path[0], path[1], path[2], TAG_DELAY]).random_range(0..config.delays_s.len()))
                .expect("non-empty delays");
            let (reg, target_px) = &regs[loc];
            let out =
                select(mode, target_px, &config.camera, derive_seed(seed, &[path[0], path[1], path[2], TAG_SELECT]));
            let target_plane = scene.target_plane(&view, loc);
            let error_deg = selection_error(reg, &out.selected_px, &target_plane)?;
            Ok(Trial {
                user,
                mode: mode.kind,
                mode_position,
                trial,
                target_id: loc,
                target_u: target_px.u,
                target_v: target_px.v,
                delay_s,
                selected_u: out.selected_px.u,
                selected_v: out.selected_px.v,
                clamped: out.clamped,
                error_deg,
                time_s: out.elapsed,
                label: None,
                predicted: None,
                correct: None,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(TrialSet { kind: ExperimentKind::Selection, seed, trials })
}

/// Classification study: the test breed sits at the center of a grid of
/// the other breeds; the simulated user selects it, the crop is planned at
/// the selected pixel and the classifier names a breed.
///
/// Modes that do not point a camera at the object (phone) are skipped.
pub fn run_classification_experiment(
    config: &ClassificationExperimentConfig,
    modes: &[SelectionMode],
    classifier: &dyn Classifier,
    seed: u64,
) -> Result<TrialSet, ExperimentError> {
    config.validate()?;
    let modes: Vec<SelectionMode> = modes.iter().filter(|m| m.kind != SelectionKind::Phone).cloned().collect();
    check_modes(&modes)?;
    let view = DisplayView::new(config.camera, config.viewing_distance_m)?;
    let test_set = config.test_set(seed);
    let locations = config.locations();

    // Breed i of the test set is shown at location perm[i]; trials walk the
    // shuffled location list.
    let jobs: Vec<(usize, usize, usize, usize, usize)> = (0..config.users)
        .flat_map(|u| {
            schedule(seed, u, &modes, locations).into_iter().flat_map(move |(mi, pos, locs)| {
                locs.into_iter().enumerate().map(move |(trial, loc)| (u, mi, pos, trial, loc))
            })
        })
        .collect();

    let center = config.grid_side * config.grid_side / 2;
    let trials = jobs
        .par_iter()
        .map(|&(user, mi, mode_position, trial, loc)| {
            let mode = &modes[mi];
            let path = [user as u64, kind_index(mode.kind), trial as u64];
            let label = test_set[loc].clone();

            let mut others: Vec<String> = config.breeds.iter().filter(|b| **b != label).cloned().collect();
            others.shuffle(&mut stream(seed, &[path[0], path[1], path[2], TAG_LAYOUT]));
            others.insert(center, label.clone());
            let (yaw, pitch) = config.location_angles(loc);
            let mut scene = DogGridScene::new(others, config.grid_side)
                .map_err(|e| ExperimentError::Config(e.to_string()))?
                .centered_at(yaw, pitch);
            scene.image_deg = config.image_deg;
            scene.vertical_gap_deg = config.vertical_gap_deg;
            scene.texture_seed = derive_seed(seed, &path);

            let target_px = view.plane_to_pixel(&view.plane_at_angles(yaw, pitch));
            let out =
                select(mode, &target_px, &config.camera, derive_seed(seed, &[path[0], path[1], path[2], TAG_SELECT]));
            let plan = plan_crop(&config.camera, &out.selected_px, &config.crop)?;
            let trial_view = TrialView { scene: &scene, view: &view, plan: &plan, candidates: &config.breeds };
            let mut rng = stream(seed, &[path[0], path[1], path[2], TAG_ORACLE]);
            let predicted = match classifier.classify(&trial_view, &mut rng) {
                Ok(p) => Some(p),
                Err(OracleError::EmptyCoverage) => None,
                Err(e) => return Err(e.into()),
            };
            let correct = predicted.as_deref() == Some(label.as_str());
            Ok(Trial {
                user,
                mode: mode.kind,
                mode_position,
                trial,
                target_id: loc,
                target_u: target_px.u,
                target_v: target_px.v,
                delay_s: 0.0,
                selected_u: out.selected_px.u,
                selected_v: out.selected_px.v,
                clamped: out.clamped,
                error_deg: pixel_angle(&config.camera, &target_px, &out.selected_px),
                time_s: out.elapsed,
                label: Some(label),
                predicted,
                correct: Some(correct),
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(TrialSet { kind: ExperimentKind::Classification, seed, trials })
}

/// Per-user, per-mode mean of `f` as a users × modes matrix (rows follow
/// `users`, columns follow `modes`). Cells with no trials are NaN.
pub fn user_mode_means(
    set: &TrialSet,
    users: &[usize],
    modes: &[SelectionKind],
    f: impl Fn(&Trial) -> Option<f64>,
) -> Vec<Vec<f64>> {
    let mut acc: HashMap<(usize, SelectionKind), (f64, usize)> = HashMap::new();
    for t in &set.trials {
        if let Some(x) = f(t) {
            let e = acc.entry((t.user, t.mode)).or_default();
            e.0 += x;
            e.1 += 1;
        }
    }
    users
        .iter()
        .map(|u| modes.iter().map(|m| acc.get(&(*u, *m)).map_or(f64::NAN, |(s, n)| s / *n as f64)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::{default_mode, ErrorModel};

    #[test]
    fn shipped_breed_list() {
        let b = default_breeds();
        assert_eq!(b.len(), 81);
        assert!(b.iter().any(|x| x == "Boston Terrier"));
    }

    #[test]
    fn every_location_once_per_mode() {
        let cfg = SelectionExperimentConfig { users: 2, ..Default::default() };
        let modes = crate::selection::default_modes();
        let set = run_selection_experiment(&cfg, &modes, 7).unwrap();
        assert_eq!(set.trials.len(), 2 * 4 * 25);
        for u in 0..2 {
            for m in SelectionKind::ALL {
                let mut locs: Vec<usize> =
                    set.trials.iter().filter(|t| t.user == u && t.mode == m).map(|t| t.target_id).collect();
                locs.sort_unstable();
                assert_eq!(locs, (0..25).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn zero_noise_gives_zero_error() {
        let cfg = SelectionExperimentConfig { users: 1, ..Default::default() };
        let gaze = default_mode(SelectionKind::Gaze).with_error_model(ErrorModel::ZERO).unwrap();
        let set = run_selection_experiment(&cfg, &[gaze], 3).unwrap();
        assert_eq!(set.trials.len(), 25);
        assert!(
            set.trials.iter().all(|t| t.error_deg < 1e-6),
            "{:?}",
            set.trials.iter().map(|t| t.error_deg).fold(0.0, f64::max)
        );
    }

    #[test]
    fn csv_round_trip() {
        let cfg = SelectionExperimentConfig { users: 1, ..Default::default() };
        let set = run_selection_experiment(&cfg, &crate::selection::default_modes(), 11).unwrap();
        let text = set.to_csv();
        let back = TrialSet::read_csv(text.as_bytes(), 11).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn rejects_mismatched_trial_count() {
        let cfg = SelectionExperimentConfig { trials_per_mode: 20, ..Default::default() };
        assert!(matches!(
            run_selection_experiment(&cfg, &crate::selection::default_modes(), 0),
            Err(ExperimentError::Config(_))
        ));
    }
}
