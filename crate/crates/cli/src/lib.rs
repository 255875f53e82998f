//! Command-line front end: budgets, camera geometry, synthetic sessions,
//! crops, single queries, the simulated experiments and their statistics,
//! and the local service.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gazegpt_core::evalstats::{
    default_breeds, report, run_classification_experiment, run_selection_experiment, ClassificationExperimentConfig,
    Classifier, CoverageOracle, ModelClassifier, SelectionExperimentConfig, TrialSet,
};
use gazegpt_core::geometry::DisplayView;
use gazegpt_core::pipeline::{CallLog, GazeSource, PipelineConfig, QueryRequest, Question, StageEvent};
use gazegpt_core::scene::{CrossGridScene, DogGridScene, Scene};
use gazegpt_core::{
    acuity_budget, data_budget, default_modes, intrinsics_from_fov, multiscale_crop, project_gaze, synth_session,
    CameraModel, CropSpec, FixationDepth, GazeSample, GazeScript, PixelPoint, SelectionMode, Session,
};
use gazegpt_server::AppState;

#[derive(Debug, Parser)]
#[command(name = "gazegpt", version, about = "Gaze-contingent multimodal queries and their evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pixel budget of a crop pyramid against the full frame.
    Budget(BudgetArgs),
    /// Pinhole intrinsics from resolution and diagonal field of view.
    Intrinsics(IntrinsicsArgs),
    /// Project a gaze ray into the world image.
    Project(ProjectArgs),
    /// Render a synthetic session (frames, gaze, manifest) to a directory.
    Synth(SynthArgs),
    /// Cut the multiscale crop for one moment of a session.
    Crop(CropArgs),
    /// Run one query through the pipeline and print the transcript.
    Query(QueryArgs),
    /// Run a simulated user study and write the per-trial CSV.
    Experiment(ExperimentArgs),
    /// Summaries, omnibus tests and pairwise comparisons for a trial CSV.
    Report(ReportArgs),
    /// Serve the HTTP/WebSocket API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CropOpts {
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Full angular width of the narrowest level, degrees.
    #[arg(long, default_value_t = 9.0)]
    pub finest_fov: f64,
    #[arg(long, default_value_t = 3.0)]
    pub scale: f64,
    /// Side of every output image, pixels.
    #[arg(long, default_value_t = 512)]
    pub out_px: u32,
}

impl CropOpts {
    fn spec(&self) -> CropSpec {
        CropSpec { levels: self.levels, finest_fov_deg: self.finest_fov, scale_factor: self.scale, out_px: self.out_px }
    }
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = 3264)]
    pub width: u64,
    #[arg(long, default_value_t = 2448)]
    pub height: u64,
    #[command(flatten)]
    pub crop: CropOpts,
    /// Also print the resolution needed to match foveal acuity over the FOV.
    #[arg(long)]
    pub acuity: bool,
    #[arg(long, default_value_t = 44.0)]
    pub fov_h: f64,
    #[arg(long, default_value_t = 33.0)]
    pub fov_v: f64,
    /// Eye-tracker error margin added on each side, degrees.
    #[arg(long, default_value_t = 2.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 120.0)]
    pub px_per_deg: f64,
}

#[derive(Debug, Args)]
pub struct IntrinsicsArgs {
    #[arg(long, default_value_t = 3264)]
    pub width: u32,
    #[arg(long, default_value_t = 2448)]
    pub height: u32,
    /// Diagonal field of view, degrees.
    #[arg(long, default_value_t = 78.0)]
    pub fov: f64,
    /// Write the calibration JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Calibration JSON; the default 78° 8 MP camera otherwise.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Pupil position in camera coordinates, meters: x,y,z.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    pub origin: [f64; 3],
    /// Gaze direction in camera coordinates: x,y,z.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub direction: [f64; 3],
    /// Fixation depth in meters, or `inf`.
    #[arg(long, value_parser = parse_depth, default_value = "1")]
    pub depth: FixationDepth,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SceneKind {
    /// 9×9 grid of labeled dog images.
    Dogs,
    /// Selection-target grid with one active cross and its markers.
    Crosses,
    Empty,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "dogs")]
    pub scene: SceneKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub viewing_distance: f64,
    /// Fixated point, degrees right of the optical axis.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gaze_yaw: f64,
    /// Fixated point, degrees below the optical axis.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gaze_pitch: f64,
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    /// Frame timestamps, seconds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub frames: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GazeOpts {
    /// Use this pixel instead of the recorded gaze.
    #[arg(long, requires = "v")]
    pub u: Option<f64>,
    #[arg(long, requires = "u")]
    pub v: Option<f64>,
    /// Fixation depth for projected gaze, meters or `inf`.
    #[arg(long, value_parser = parse_depth)]
    pub depth: Option<FixationDepth>,
}

impl GazeOpts {
    fn source(&self, default_depth: FixationDepth) -> GazeSource {
        match (self.u, self.v) {
            (Some(u), Some(v)) => GazeSource::Pixel(PixelPoint::new(u, v)),
            _ => GazeSource::Projected(self.depth.unwrap_or(default_depth)),
        }
    }
}

#[derive(Debug, Args)]
pub struct CropArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Trigger time, seconds.
    #[arg(long)]
    pub t: f64,
    #[command(flatten)]
    pub gaze: GazeOpts,
    #[command(flatten)]
    pub crop: CropOpts,
    /// Directory for `level-N.png`, `level-N.json` and `crops.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Service configuration (TOML); mock backends with defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub t: f64,
    #[arg(long, conflicts_with = "audio", required_unless_present = "audio")]
    pub question: Option<String>,
    /// Spoken question as a WAV file.
    #[arg(long)]
    pub audio: Option<PathBuf>,
    #[command(flatten)]
    pub gaze: GazeOpts,
    /// Also write the crops the model saw.
    #[arg(long)]
    pub crops_out: Option<PathBuf>,
    /// Print stage events to stderr as they happen.
    #[arg(long)]
    pub events: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKindArg {
    Selection,
    Classification,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKindArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the number of simulated users.
    #[arg(long)]
    pub users: Option<usize>,
    /// Experiment configuration (TOML) for the chosen kind.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mode parameters (JSON array); the four study modes otherwise.
    #[arg(long)]
    pub modes: Option<PathBuf>,
    /// Classification: accuracy of the coverage oracle when the crop is
    /// entirely on the test image.
    #[arg(long, default_value_t = 0.64)]
    pub base_accuracy: f64,
    /// Classification: ask the model configured in this service config
    /// instead of the coverage oracle.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the statistics tables next to the CSV.
    #[arg(long)]
    pub report: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub trials: PathBuf,
    /// Write summary.csv, omnibus.csv and pairwise.csv here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Print JSON instead of tables.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, required_unless_present = "demo")]
    pub config: Option<PathBuf>,
    /// Serve a synthesized dog-grid session with mock backends.
    #[arg(long)]
    pub demo: bool,
    #[arg(long)]
    pub bind: Option<String>,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> =
        s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}"))).collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

fn parse_depth(s: &str) -> Result<FixationDepth, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(FixationDepth::Infinity),
        v => {
            let d: f64 = v.parse().map_err(|e| format!("`{s}`: {e}"))?;
            if !(d.is_finite() && d > 0.0) {
                return Err(format!("depth must be positive, got {d}"));
            }
            Ok(FixationDepth::Finite(d))
        }
    }
}

fn load_camera(path: Option<&Path>) -> Result<CameraModel> {
    match path {
        Some(p) => CameraModel::load_json(p).with_context(|| format!("loading camera {}", p.display())),
        None => Ok(CameraModel::imx179()),
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_pipeline_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Budget(a) => budget(a, out),
        Command::Intrinsics(a) => intrinsics(a, out),
        Command::Project(a) => project(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Crop(a) => crop(a, out),
        Command::Query(a) => query(a, out),
        Command::Experiment(a) => experiment(a, out),
        Command::Report(a) => report_cmd(a, out),
        Command::Serve(a) => serve(a),
    }
}

fn budget(a: BudgetArgs, out: &mut dyn Write) -> Result<()> {
    let r = data_budget(&a.crop.spec(), a.width, a.height)?;
    let mut doc = serde_json::json!({ "budget": r });
    if a.acuity {
        let ac = acuity_budget(a.fov_h, a.fov_v, a.margin, a.px_per_deg)?;
        let vs = data_budget(&a.crop.spec(), ac.width_px as u64, ac.height_px as u64)?;
        doc["acuity"] = serde_json::json!({ "required": ac, "crop_vs_required": vs });
    }
    writeln!(out, "{}", to_json(&doc))?;
    Ok(())
}

fn intrinsics(a: IntrinsicsArgs, out: &mut dyn Write) -> Result<()> {
    let m = intrinsics_from_fov(a.width, a.height, a.fov)?;
    let text = to_json(&m);
    match a.out {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => writeln!(out, "{text}")?,
    }
    Ok(())
}

fn project(a: ProjectArgs, out: &mut dyn Write) -> Result<()> {
    let m = load_camera(a.camera.as_deref())?;
    let g = GazeSample::new(0.0, a.origin, a.direction)?;
    let p = project_gaze(&m, &g, a.depth)?;
    writeln!(out, "{}", to_json(&serde_json::json!({ "pixel": p, "in_frame": m.contains(&p) })))?;
    Ok(())
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let view = DisplayView::new(load_camera(a.camera.as_deref())?, a.viewing_distance)?;
    let scene = match a.scene {
        SceneKind::Dogs => Scene::DogGrid(DogGridScene::new(default_breeds().into_iter().take(81).collect(), 9)?),
        SceneKind::Crosses => Scene::CrossGrid(CrossGridScene { active: Some(12), ..CrossGridScene::default() }),
        SceneKind::Empty => Scene::Empty,
    };
    let mut script = GazeScript::steady(view.plane_at_angles(a.gaze_yaw, a.gaze_pitch), a.duration);
    script.frame_times = a.frames;
    let session = synth_session(&scene, &view, &script)?;
    let manifest = session.save(&a.out)?;
    writeln!(out, "{}", manifest.display())?;
    Ok(())
}

fn write_crops(crop: &gazegpt_core::MultiscaleCrop, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    crop.write_to(dir, "level").with_context(|| format!("writing crops to {}", dir.display()))?;
    fs::write(dir.join("crops.json"), to_json(&crop.plan))?;
    Ok(())
}

fn crop(a: CropArgs, out: &mut dyn Write) -> Result<()> {
    let session = Session::load(&a.session)?;
    let cap = session.sample_at(a.t)?;
    let center = match a.gaze.source(FixationDepth::default()) {
        GazeSource::Pixel(p) => p,
        GazeSource::Projected(d) => project_gaze(&session.camera, &cap.gaze, d)?,
    };
    let crop = multiscale_crop(&cap.frame.pixels, &center, &session.camera, &a.crop.spec())?;
    write_crops(&crop, &a.out)?;
    writeln!(out, "{}", to_json(&crop.plan))?;
    Ok(())
}

fn query(a: QueryArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_pipeline_config(a.config.as_deref())?;
    let pipeline = cfg.pipeline(cfg.clients(CallLog::new())?);
    let session = Session::load(&a.session)?;
    let question = match (a.question, a.audio) {
        (Some(q), None) => Question::Text(q),
        (None, Some(p)) => Question::Audio(fs::read(&p).with_context(|| format!("reading {}", p.display()))?),
        _ => bail!("give exactly one of --question and --audio"),
    };
    let req = QueryRequest {
        session_id: a.session.display().to_string(),
        seq: 0,
        trigger_t: a.t,
        question,
        gaze: a.gaze.source(cfg.fixation_depth()),
    };
    let verbose = a.events;
    let sink = move |e: StageEvent| {
        if verbose {
            eprintln!("{}", serde_json::to_string(&e).expect("serializable"));
        }
    };
    let (transcript, crops) = pipeline.run(&session, &req, &sink, None)?;
    if let Some(dir) = &a.crops_out {
        write_crops(&crops, dir)?;
    }
    writeln!(out, "{}", to_json(&transcript))?;
    if let Some(stage) = transcript.failed_at {
        bail!("query failed at {stage}: {}", transcript.error.as_deref().unwrap_or("unknown error"));
    }
    Ok(())
}

fn load_modes(path: Option<&Path>) -> Result<Vec<SelectionMode>> {
    match path {
        Some(p) => SelectionMode::load_all(p).map_err(anyhow::Error::msg),
        None => Ok(default_modes()),
    }
}

fn write_report_tables(set: &TrialSet, dir: &Path) -> Result<()> {
    let r = report(set)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.csv"), r.summary_csv())?;
    fs::write(dir.join("omnibus.csv"), r.omnibus_csv())?;
    fs::write(dir.join("pairwise.csv"), r.pairwise_csv())?;
    Ok(())
}

fn experiment(a: ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    let modes = load_modes(a.modes.as_deref())?;
    let set = match a.kind {
        ExperimentKindArg::Selection => {
            let mut cfg: SelectionExperimentConfig = match &a.config {
                Some(p) => load_toml(p)?,
                None => SelectionExperimentConfig::default(),
            };
            if let Some(u) = a.users {
                cfg.users = u;
            }
            run_selection_experiment(&cfg, &modes, a.seed)?
        }
        ExperimentKindArg::Classification => {
            let mut cfg: ClassificationExperimentConfig = match &a.config {
                Some(p) => load_toml(p)?,
                None => ClassificationExperimentConfig::default(),
            };
            if let Some(u) = a.users {
                cfg.users = u;
            }
            let classifier: Box<dyn Classifier> = match &a.model_config {
                Some(p) => {
                    let pc = load_pipeline_config(Some(p))?;
                    Box::new(ModelClassifier { model: pc.clients(CallLog::new())?.vision, crop: cfg.crop })
                }
                None => Box::new(CoverageOracle::new(a.base_accuracy)),
            };
            run_classification_experiment(&cfg, &modes, classifier.as_ref(), a.seed)?
        }
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    set.save_csv(&a.out)?;
    if a.report {
        let dir = a.out.parent().unwrap_or(Path::new(".")).to_path_buf();
        write_report_tables(&set, &dir)?;
    }
    writeln!(out, "{} trials written to {}", set.trials.len(), a.out.display())?;
    Ok(())
}

fn report_cmd(a: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let set = TrialSet::load_csv(&a.trials)?;
    let r = report(&set)?;
    if let Some(dir) = &a.out_dir {
        write_report_tables(&set, dir)?;
    }
    if a.json {
        writeln!(out, "{}", to_json(&r))?;
        return Ok(());
    }
    writeln!(out, "{} users", r.n_users)?;
    for m in &r.measures {
        writeln!(out, "\n{}", m.measure)?;
        for s in &m.summaries {
            writeln!(out, "  {:<6} mean {:>9.4}  se {:>8.4}", s.mode.to_string(), s.mean, s.se)?;
        }
        if let Some(o) = &m.omnibus {
            let eps = o.epsilon.map(|e| format!(", eps={e:.3}")).unwrap_or_default();
            writeln!(out, "  {}: F({:.2}, {:.2}) = {:.3}, p = {:.3e}{eps}", o.test, o.df1, o.df2, o.statistic, o.p)?;
        }
        for p in &m.pairwise {
            let fmt = |x: Option<f64>| x.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "n/a".into());
            writeln!(
                out,
                "  {} vs {}: diff {:+.4}, t({}) = {:.3}, p = {}, p_bonf = {}",
                p.a,
                p.b,
                p.mean_diff,
                p.df,
                p.t,
                fmt(p.raw_p),
                fmt(p.corrected_p)
            )?;
        }
    }
    Ok(())
}

/// Dog grid filling the default camera, gaze on the center image.
fn demo_session() -> Result<Session> {
    let view = DisplayView::new(CameraModel::imx179(), 1.0)?;
    let scene = Scene::DogGrid(DogGridScene::new(default_breeds().into_iter().take(81).collect(), 9)?);
    let mut script = GazeScript::steady(view.plane_at_angles(0.0, 0.0), 10.0);
    script.frame_times = vec![0.0, 5.0];
    Ok(synth_session(&scene, &view, &script)?)
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = load_pipeline_config(a.config.as_deref())?;
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    let rt = tokio::runtime::Runtime::new()?;
    if !a.demo {
        return Ok(rt.block_on(gazegpt_server::serve(&cfg))?);
    }
    let state = AppState::new(
        cfg.pipeline(cfg.clients(CallLog::new())?),
        cfg.fixation_depth(),
        vec![("demo".into(), demo_session()?)],
        None,
    )?;
    rt.block_on(async {
        let addr = gazegpt_server::spawn(state, &cfg.bind).await?;
        eprintln!("listening on http://{addr}");
        tokio::signal::ctrl_c().await?;
        Ok(())
    })
}
