//! Gaze-contingent contextual AI: project gaze into a head-worn world camera,
//! cut a multiscale crop around it, and ask a multimodal model about what the
//! wearer is looking at. Also contains the simulated selection and
//! classification experiments and the statistics used to analyse them.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capture;
pub mod error;
pub mod evalstats;
pub mod foveation;
pub mod geometry;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod selection;

pub use capture::{load_session, synth_session, Capture, Frame, GazeScript, Session};
pub use error::{CaptureError, FoveationError, GeometryError, StatsError};
pub use foveation::{
    acuity_budget, data_budget, foveal_window, multiscale_crop, plan_crop, BudgetReport, CropPlan, CropSpec,
    MultiscaleCrop,
};
pub use geometry::{
    intrinsics_from_fov, pixel_angle, project_gaze, register_plane, selection_error, CameraModel, DisplayView,
    FixationDepth, GazeSample, PixelPoint, PlanePoint, PlaneRegistration,
};
pub use pipeline::{classify_query, run_query, QueryTranscript};
pub use selection::{default_modes, select, ErrorModel, SelectionKind, SelectionMode, SelectionOutcome, TimeModel};
