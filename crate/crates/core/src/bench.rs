//! Benchmark harness: trial execution, trajectory metrics, aggregation and
//! report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{rotation_candidates, 
    compensate_rotation, pbvs_reference, servo_step, ControlError, ControllerConfig, Frame, IbvsController,
    RotationEstimate,
};
use crate::descriptors::{DescriptorError, DescriptorGrid, Extractor, ProviderConfig, ProviderRegistry};
use crate::geometry::{integrate_twist, pose_error, so3_exp, so3_log, CameraIntrinsics, Pose, Twist, Vec3};
use crate::matching::MatcherConfig;
use crate::perturb::{perturb, PerturbationConfig};
use crate::simenv::{
    desired_pose, procedural_texture, render, sample_initial_configurations, PlanarTarget, PoseSample,
    PoseSampleConfig, SimError, DEFAULT_BACKGROUND,
};

/// Resampling density for the trajectory error metric.
pub const APE_SAMPLES: usize = 100;
pub const APE_LABEL: &str = "APE (resampled, M=100)";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("trajectory needs at least 2 poses")]
    TooShort,
    #[error("executed trajectory has zero length but the reference does not")]
    DegenerateTrajectory,
    #[error("initial and desired positions coincide")]
    DegenerateBaseline,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("{context}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> BenchError {
    let context = context.into();
    move |source| BenchError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Texture image; a procedural poster is generated when unset.
    pub texture: Option<PathBuf>,
    pub procedural_seed: u64,
    pub procedural_size: [u32; 2],
    pub width_m: f64,
    pub height_m: f64,
    pub background: [u8; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            texture: None,
            procedural_seed: 7,
            procedural_size: [600, 800],
            width_m: 0.6,
            height_m: 0.8,
            background: DEFAULT_BACKGROUND,
        }
    }
}

impl SceneConfig {
    pub fn build(&self, base_dir: Option<&Path>) -> Result<PlanarTarget, SimError> {
        let target = match &self.texture {
            Some(path) => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                PlanarTarget::from_file(&path.to_string_lossy(), self.width_m, self.height_m)?
            }
            None => {
                let [w, h] = self.procedural_size;
                PlanarTarget::new(procedural_texture(self.procedural_seed, w, h), self.width_m, self.height_m)?
            }
        };
        Ok(target.with_background(self.background))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Per-trial trajectory CSV files.
    pub trajectories: bool,
    /// Per-trial SVG plots of error and speed.
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trajectories: true,
            svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Root seed for per-trial random streams.
    pub seed: u64,
    pub trials: usize,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub scene: SceneConfig,
    pub camera: CameraIntrinsics,
    pub provider: ProviderConfig,
    pub matcher: MatcherConfig,
    pub controller: ControllerConfig,
    pub perturbation: PerturbationConfig,
    pub sampler: PoseSampleConfig,
    pub output: OutputConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 500,
            threads: 0,
            scene: SceneConfig::default(),
            camera: CameraIntrinsics::default(),
            provider: ProviderConfig::default(),
            matcher: MatcherConfig::default(),
            controller: ControllerConfig::default(),
            perturbation: PerturbationConfig::default(),
            sampler: PoseSampleConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|message| BenchError::Config {
            path: origin.to_string(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.camera.validate().map_err(|e| e.to_string())?;
        self.provider.validate().map_err(|e| e.to_string())?;
        self.controller.validate().map_err(|e| e.to_string())?;
        self.perturbation.validate().map_err(|e| e.to_string())?;
        self.sampler.validate()?;
        if self.matcher.k < crate::matching::MIN_CORRESPONDENCES {
            return Err(format!("matcher.k must be at least {}", crate::matching::MIN_CORRESPONDENCES));
        }
        if !(self.scene.width_m > 0.0 && self.scene.height_m > 0.0) {
            return Err("scene extents must be positive".into());
        }
        Ok(())
    }
}

/// Compact pose for reports: position and rotation vector (axis·angle, rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub rotation_vector: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let r = so3_log(&p.rotation);
        Self {
            translation: [p.translation.x, p.translation.y, p.translation.z],
            rotation_vector: [r.x, r.y, r.z],
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(p: &PoseRecord) -> Self {
        Pose::new(
            so3_exp(&Vec3::from(p.rotation_vector)),
            Vec3::from(p.translation),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Pose after applying this iteration's command.
    pub pose: Pose,
    pub raw: Twist,
    pub smoothed: Twist,
    pub error_norm: f64,
    pub mean_cosine: f64,
    /// Correspondences used; 0 when the frame had too few.
    pub k: usize,
    pub trans_error_m: f64,
    pub rot_error_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFlags {
    /// Speed stayed below both thresholds for the required run of iterations.
    pub velocity_settled: bool,
    /// Final errors are at most `(1 − required_reduction)` of the initial ones.
    pub reduction_reached: bool,
}

impl ConvergenceFlags {
    pub fn converged(&self) -> bool {
        self.velocity_settled && self.reduction_reached
    }
}

/// Length of the current run of settled iterations at the end of `log`.
fn settled_run(log: &[IterationLog], cfg: &ControllerConfig) -> usize {
    log.iter()
        .rev()
        .take_while(|e| e.k > 0 && cfg.is_settled(&e.smoothed))
        .count()
}

/// Convergence decided from the log alone.
pub fn evaluate_convergence(log: &[IterationLog], initial_error: (f64, f64), cfg: &ControllerConfig) -> ConvergenceFlags {
    let velocity_settled = cfg.sustain_iterations > 0 && settled_run(log, cfg) >= cfg.sustain_iterations;
    let keep = 1.0 - cfg.required_reduction;
    let reduction_reached = match log.last() {
        Some(last) => {
            last.trans_error_m <= keep * initial_error.0 + 1e-12
                && last.rot_error_deg <= keep * initial_error.1 + 1e-12
        }
        None => initial_error.0 <= 1e-12 && initial_error.1 <= 1e-12,
    };
    ConvergenceFlags {
        velocity_settled,
        reduction_reached,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: usize,
    pub initial: Pose,
    /// Start pose after the one-off rotation compensation.
    pub compensated: Pose,
    pub desired: Pose,
    pub final_pose: Pose,
    pub rotation: Option<RotationEstimate>,
    pub log: Vec<IterationLog>,
    pub flags: ConvergenceFlags,
    pub converged: bool,
    pub iterations: usize,
    /// (m, deg) from the sampled initial pose.
    pub initial_error: (f64, f64),
    pub end_error: (f64, f64),
    /// (cm, deg).
    pub ape: Option<(f64, f64)>,
    pub length_ratio: Option<f64>,
    pub failure: Option<String>,
}

impl TrialRecord {
    /// Executed path: sampled start, compensated start, then every iterate.
    pub fn trajectory(&self) -> Vec<Pose> {
        let mut out = Vec::with_capacity(self.log.len() + 2);
        out.push(self.initial);
        out.push(self.compensated);
        out.extend(self.log.iter().map(|e| e.pose));
        out
    }
}

/// Shared read-only state for a batch of trials.
#[derive(Debug, Clone)]
pub struct BenchContext {
    pub config: BenchConfig,
    pub target: Arc<PlanarTarget>,
    pub extractor: Extractor,
    pub desired: Pose,
    pub desired_image: Arc<RgbImage>,
    pub desired_grid: Arc<DescriptorGrid>,
    pub samples: Vec<PoseSample>,
}

impl BenchContext {
    pub fn new(config: BenchConfig, registry: &ProviderRegistry, base_dir: Option<&Path>) -> Result<Self, BenchError> {
        config.validate().map_err(|message| BenchError::Config {
            path: "<memory>".into(),
            message,
        })?;
        let target = config.scene.build(base_dir)?;
        let mut provider = config.provider.clone();
        if let (Some(dir), Some(mask)) = (base_dir, &provider.mask) {
            if mask.is_relative() {
                provider.mask = Some(dir.join(mask));
            }
        }
        let extractor = Extractor::from_config(&provider, registry)?;
        Self::with_parts(config, target, extractor)
    }

    pub fn with_parts(config: BenchConfig, target: PlanarTarget, extractor: Extractor) -> Result<Self, BenchError> {
        let desired = desired_pose(&config.sampler);
        let view = render(&target, &config.camera, &desired)?;
        let desired_grid = extractor.extract_desired(&view.rgb)?;
        let samples = sample_initial_configurations(&config.sampler, config.trials);
        Ok(Self {
            config,
            target: Arc::new(target),
            extractor,
            desired,
            desired_image: Arc::new(view.rgb),
            desired_grid: Arc::new(desired_grid),
            samples,
        })
    }

    /// Random stream `lane` of trial `id`, independent of scheduling.
    pub fn trial_rng(&self, id: usize, lane: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(id as u64 * 4 + lane);
        rng
    }

    pub fn run_trial(&self, id: usize) -> Result<TrialRecord, BenchError> {
        let start = self.samples.get(id).map(|s| s.pose).ok_or_else(|| BenchError::Config {
            path: "<memory>".into(),
            message: format!("trial {id} out of range (trials = {})", self.samples.len()),
        })?;
        self.run_trial_from(id, start)
    }

    /// One closed-loop trial from `initial`. Trial-level failures end up in
    /// `failure`; only infrastructure errors (e.g. the bridge) are returned.
    pub fn run_trial_from(&self, id: usize, initial: Pose) -> Result<TrialRecord, BenchError> {
        let cfg = &self.config;
        let ctl = &cfg.controller;
        let mut match_rng = self.trial_rng(id, 0);
        let perturb_rng_base = self.trial_rng(id, 1);
        let mut perturb_rng = perturb_rng_base.clone();
        let initial_error = pose_error(&initial, &self.desired);

        let observe = |pose: &Pose, rng: &mut ChaCha8Rng| -> Result<(crate::simenv::RenderedView, RgbImage), SimError> {
            let view = render(&self.target, &cfg.camera, pose)?;
            let image = if cfg.perturbation.enabled {
                if cfg.perturbation.per_iteration {
                    perturb(&view.rgb, &cfg.perturbation, rng)
                } else {
                    perturb(&view.rgb, &cfg.perturbation, &mut perturb_rng_base.clone())
                }
            } else {
                view.rgb.clone()
            };
            Ok((view, image))
        };

        let mut pose = initial;
        let mut rotation = None;
        let mut failure = None;
        if ctl.rotation_compensation {
            match observe(&pose, &mut perturb_rng) {
                Ok((_, image)) => {
                    match compensate_rotation(
                        &self.desired_grid,
                        &image,
                        &self.extractor,
                        &cfg.matcher,
                        &rotation_candidates(ctl.rotation_step_deg),
                        &mut match_rng,
                    ) {
                        Ok(est) => {
                            pose = est.apply(&pose);
                            rotation = Some(est);
                        }
                        Err(e) if e.is_feature_starvation() => {}
                        Err(e) => return Err(e.into()),
                    }
                }
                Err(e) => failure = Some(e.to_string()),
            }
        }
        let compensated = pose;

        let mut controller = IbvsController::new(ctl.clone());
        let mut log: Vec<IterationLog> = Vec::new();
        let mut streak = 0usize;
        if failure.is_none() {
            for iteration in 0..ctl.max_iterations {
                let (view, image) = match observe(&pose, &mut perturb_rng) {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                };
                let frame = Frame {
                    image: &image,
                    view: &view,
                    intrinsics: &cfg.camera,
                };
                let step = servo_step(&self.desired_grid, frame, &self.extractor, &cfg.matcher, &mut match_rng, &mut controller);
                let (smoothed, raw, error_norm, mean_cosine, k) = match step {
                    Ok((twist, d)) => {
                        streak = 0;
                        (twist, d.raw, d.error_norm, d.mean_cosine, d.k_used)
                    }
                    Err(e) if e.is_feature_starvation() => {
                        streak += 1;
                        (Twist::zero(), Twist::zero(), f64::NAN, f64::NAN, 0)
                    }
                    Err(e) => return Err(e.into()),
                };
                if !smoothed.is_finite() {
                    failure = Some("non-finite velocity command".into());
                    break;
                }
                pose = integrate_twist(&pose, &smoothed, ctl.dt);
                let (te, re) = pose_error(&pose, &self.desired);
                log.push(IterationLog {
                    iteration,
                    pose,
                    raw,
                    smoothed,
                    error_norm,
                    mean_cosine,
                    k,
                    trans_error_m: te,
                    rot_error_deg: re,
                });
                if streak > ctl.failure_streak {
                    failure = Some(format!("no usable correspondences for {streak} iterations"));
                    break;
                }
                if settled_run(&log, ctl) >= ctl.sustain_iterations {
                    break;
                }
            }
        }

        let flags = evaluate_convergence(&log, initial_error, ctl);
        let converged = failure.is_none() && flags.converged();
        let end_error = pose_error(&pose, &self.desired);
        let mut record = TrialRecord {
            id,
            initial,
            compensated,
            desired: self.desired,
            final_pose: pose,
            rotation,
            iterations: log.len(),
            log,
            flags,
            converged,
            initial_error,
            end_error,
            ape: None,
            length_ratio: None,
            failure,
        };
        let traj = record.trajectory();
        if let Ok(reference) = pbvs_reference(&initial, &self.desired, APE_SAMPLES) {
            record.ape = compute_ape(&traj, &reference, APE_SAMPLES).ok();
        }
        record.length_ratio = compute_length_ratio(&traj, &initial, &self.desired).ok();
        Ok(record)
    }

    /// All trials, in id order, on `threads` workers (0 = all cores).
    pub fn run_all(&self, threads: usize) -> Result<Vec<TrialRecord>, BenchError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| BenchError::Pool(e.to_string()))?;
        let results: Vec<Result<TrialRecord, BenchError>> = pool.install(|| {
            (0..self.samples.len())
                .into_par_iter()
                .map(|id| {
                    let r = self.run_trial(id);
                    if let Ok(rec) = &r {
                        tracing::debug!(id, converged = rec.converged, iterations = rec.iterations, "trial done");
                    }
                    r
                })
                .collect()
        });
        results.into_iter().collect()
    }
}

fn path_length(poses: &[Pose]) -> f64 {
    poses
        .windows(2)
        .map(|w| (w[1].translation - w[0].translation).norm())
        .sum()
}

fn interpolate(a: &Pose, b: &Pose, s: f64) -> Pose {
    let delta = so3_log(&(a.rotation.transpose() * b.rotation));
    Pose::new(
        a.rotation * so3_exp(&(delta * s)),
        a.translation + (b.translation - a.translation) * s,
    )
}

/// `m` poses evenly spaced in translational arc length; falls back to even
/// spacing in index when the path has no length.
pub fn resample_by_arc_length(poses: &[Pose], m: usize) -> Vec<Pose> {
    let total = path_length(poses);
    let n = poses.len();
    if m == 1 {
        return vec![poses[0]];
    }
    if total <= 0.0 {
        return (0..m)
            .map(|j| {
                let x = j as f64 / (m - 1) as f64 * (n - 1) as f64;
                let i = (x.floor() as usize).min(n - 2);
                interpolate(&poses[i], &poses[i + 1], x - i as f64)
            })
            .collect();
    }
    let mut cum = Vec::with_capacity(n);
    cum.push(0.0);
    for w in poses.windows(2) {
        cum.push(cum.last().unwrap() + (w[1].translation - w[0].translation).norm());
    }
    let mut seg = 0;
    (0..m)
        .map(|j| {
            let s = total * j as f64 / (m - 1) as f64;
            while seg + 2 < n && cum[seg + 1] < s {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let f = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 1.0 };
            interpolate(&poses[seg], &poses[seg + 1], f)
        })
        .collect()
}

/// Mean translation (cm) and geodesic rotation (°) distance between the two
/// trajectories after resampling both to `m` poses by arc length.
pub fn compute_ape(executed: &[Pose], reference: &[Pose], m: usize) -> Result<(f64, f64), BenchError> {
    if executed.len() < 2 || reference.len() < 2 || m < 2 {
        return Err(BenchError::TooShort);
    }
    if path_length(executed) <= 0.0 && path_length(reference) > 0.0 {
        return Err(BenchError::DegenerateTrajectory);
    }
    let a = resample_by_arc_length(executed, m);
    let b = resample_by_arc_length(reference, m);
    let (mut t, mut r) = (0.0, 0.0);
    for (p, q) in a.iter().zip(&b) {
        let (dt, dr) = pose_error(p, q);
        t += dt;
        r += dr;
    }
    Ok((100.0 * t / m as f64, r / m as f64))
}

/// Executed path length over the straight-line distance.
pub fn compute_length_ratio(executed: &[Pose], initial: &Pose, desired: &Pose) -> Result<f64, BenchError> {
    let baseline = (initial.translation - desired.translation).norm();
    if baseline <= 1e-6 {
        return Err(BenchError::DegenerateBaseline);
    }
    Ok(path_length(executed) / baseline)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub trials: usize,
    pub converged: usize,
    pub convergence_rate_pct: f64,
    pub velocity_settled: usize,
    pub reduction_reached: usize,
    pub failures: usize,
    /// Over converged trials.
    pub end_error_trans_mm: Option<Stat>,
    pub end_error_rot_deg: Option<Stat>,
    pub ape_label: String,
    pub ape_trans_cm: Option<Stat>,
    pub ape_rot_deg: Option<Stat>,
    pub length_ratio: Option<Stat>,
    /// Over all trials, from the sampled pose.
    pub initial_error_trans_cm: Option<Stat>,
    pub initial_error_rot_deg: Option<Stat>,
    pub seed: u64,
    pub config: BenchConfig,
}

/// One `trials.csv` row, SI units (m, rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub converged: bool,
    pub velocity_settled: bool,
    pub reduction_reached: bool,
    pub iterations: usize,
    pub rotation_compensation_deg: Option<i32>,
    pub initial_trans_m: f64,
    pub initial_rot_rad: f64,
    pub end_trans_m: f64,
    pub end_rot_rad: f64,
    pub ape_trans_m: Option<f64>,
    pub ape_rot_rad: Option<f64>,
    pub length_ratio: Option<f64>,
    pub failure: Option<String>,
}

impl From<&TrialRecord> for TrialRow {
    fn from(r: &TrialRecord) -> Self {
        Self {
            trial: r.id,
            converged: r.converged,
            velocity_settled: r.flags.velocity_settled,
            reduction_reached: r.flags.reduction_reached,
            iterations: r.iterations,
            rotation_compensation_deg: r.rotation.as_ref().map(|e| e.angle_deg),
            initial_trans_m: r.initial_error.0,
            initial_rot_rad: r.initial_error.1.to_radians(),
            end_trans_m: r.end_error.0,
            end_rot_rad: r.end_error.1.to_radians(),
            ape_trans_m: r.ape.map(|a| a.0 / 100.0),
            ape_rot_rad: r.ape.map(|a| a.1.to_radians()),
            length_ratio: r.length_ratio,
            failure: r.failure.clone(),
        }
    }
}

/// Aggregates rows. End error, trajectory error and length ratio use
/// converged trials only.
pub fn aggregate(rows: &[TrialRow], config: &BenchConfig) -> BenchmarkReport {
    let conv: Vec<&TrialRow> = rows.iter().filter(|r| r.converged).collect();
    let collect = |f: &dyn Fn(&TrialRow) -> Option<f64>| -> Option<Stat> {
        Stat::of(&conv.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
    };
    let n = rows.len();
    BenchmarkReport {
        trials: n,
        converged: conv.len(),
        convergence_rate_pct: if n == 0 { 0.0 } else { 100.0 * conv.len() as f64 / n as f64 },
        velocity_settled: rows.iter().filter(|r| r.velocity_settled).count(),
        reduction_reached: rows.iter().filter(|r| r.reduction_reached).count(),
        failures: rows.iter().filter(|r| r.failure.is_some()).count(),
        end_error_trans_mm: collect(&|r| Some(r.end_trans_m * 1000.0)),
        end_error_rot_deg: collect(&|r| Some(r.end_rot_rad.to_degrees())),
        ape_label: APE_LABEL.to_string(),
        ape_trans_cm: collect(&|r| r.ape_trans_m.map(|v| v * 100.0)),
        ape_rot_deg: collect(&|r| r.ape_rot_rad.map(f64::to_degrees)),
        length_ratio: collect(&|r| r.length_ratio),
        initial_error_trans_cm: Stat::of(&rows.iter().map(|r| r.initial_trans_m * 100.0).collect::<Vec<_>>()),
        initial_error_rot_deg: Stat::of(&rows.iter().map(|r| r.initial_rot_rad.to_degrees()).collect::<Vec<_>>()),
        seed: config.seed,
        config: config.clone(),
    }
}

pub fn write_trials_csv<W: std::io::Write>(rows: &[TrialRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err("writing trials"))?;
    Ok(())
}

pub fn read_trials_csv<R: std::io::Read>(input: R) -> Result<Vec<TrialRow>, BenchError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<TrialRow>, _>>()?)
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    iteration: i64,
    tx: f64,
    ty: f64,
    tz: f64,
    rx: f64,
    ry: f64,
    rz: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    wx: f64,
    wy: f64,
    wz: f64,
    raw_vx: f64,
    raw_vy: f64,
    raw_vz: f64,
    raw_wx: f64,
    raw_wy: f64,
    raw_wz: f64,
    error_norm: f64,
    mean_cosine: f64,
    k: usize,
    trans_error_m: f64,
    rot_error_rad: f64,
}

/// Per-iteration CSV. Row -1 is the start pose after rotation compensation.
pub fn write_trajectory_csv<W: std::io::Write>(record: &TrialRecord, out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    let row = |iteration: i64, pose: &Pose, s: &Twist, raw: &Twist, e: &IterationLog| {
        let p = PoseRecord::from(pose);
        TrajectoryRow {
            iteration,
            tx: p.translation[0],
            ty: p.translation[1],
            tz: p.translation[2],
            rx: p.rotation_vector[0],
            ry: p.rotation_vector[1],
            rz: p.rotation_vector[2],
            vx: s.linear.x,
            vy: s.linear.y,
            vz: s.linear.z,
            wx: s.angular.x,
            wy: s.angular.y,
            wz: s.angular.z,
            raw_vx: raw.linear.x,
            raw_vy: raw.linear.y,
            raw_vz: raw.linear.z,
            raw_wx: raw.angular.x,
            raw_wy: raw.angular.y,
            raw_wz: raw.angular.z,
            error_norm: e.error_norm,
            mean_cosine: e.mean_cosine,
            k: e.k,
            trans_error_m: e.trans_error_m,
            rot_error_rad: e.rot_error_deg.to_radians(),
        }
    };
    let (te, re) = pose_error(&record.compensated, &record.desired);
    let start = IterationLog {
        iteration: 0,
        pose: record.compensated,
        raw: Twist::zero(),
        smoothed: Twist::zero(),
        error_norm: f64::NAN,
        mean_cosine: f64::NAN,
        k: 0,
        trans_error_m: te,
        rot_error_deg: re,
    };
    w.serialize(row(-1, &start.pose, &start.smoothed, &start.raw, &start))?;
    for e in &record.log {
        w.serialize(row(e.iteration as i64, &e.pose, &e.smoothed, &e.raw, e))?;
    }
    w.flush().map_err(io_err("writing trajectory"))?;
    Ok(())
}

fn svg_polyline(values: &[f64], x0: f64, y0: f64, w: f64, h: f64, colour: &str) -> String {
    let finite: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
    let max = finite.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let n = values.len().max(2) - 1;
    let mut pts = String::new();
    for (i, v) in values.iter().enumerate() {
        let v = if v.is_finite() { *v } else { 0.0 };
        let _ = write!(pts, "{:.2},{:.2} ", x0 + w * i as f64 / n as f64, y0 + h - h * v / max);
    }
    format!(r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.trim_end())
}

/// Two stacked panels: pose errors, then command speeds.
pub fn trajectory_svg(record: &TrialRecord) -> String {
    let (w, h, pad) = (640.0, 200.0, 30.0);
    let te: Vec<f64> = record.log.iter().map(|e| e.trans_error_m).collect();
    let re: Vec<f64> = record.log.iter().map(|e| e.rot_error_deg).collect();
    let vl: Vec<f64> = record.log.iter().map(|e| e.smoothed.linear.norm()).collect();
    let va: Vec<f64> = record.log.iter().map(|e| e.smoothed.angular.norm()).collect();
    let total_h = 2.0 * h + 3.0 * pad;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{total_h}" font-family="sans-serif" font-size="12">"#,
        w + 2.0 * pad
    );
    s.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<text x="{pad}" y="{}">trial {}: translation error (blue), rotation error (red), normalised</text>"#,
        pad - 8.0,
        record.id
    );
    s.push_str(&svg_polyline(&te, pad, pad, w, h, "#1f77b4"));
    s.push_str(&svg_polyline(&re, pad, pad, w, h, "#d62728"));
    let y2 = 2.0 * pad + h;
    let _ = write!(
        s,
        r#"<text x="{pad}" y="{}">linear speed (blue), angular speed (red), normalised</text>"#,
        y2 - 8.0
    );
    s.push_str(&svg_polyline(&vl, pad, y2, w, h, "#1f77b4"));
    s.push_str(&svg_polyline(&va, pad, y2, w, h, "#d62728"));
    s.push_str("</svg>\n");
    s
}

/// Runs the whole benchmark and writes `report.json`, `trials.csv` and the
/// optional per-trial files into `out_dir`.
pub fn run_benchmark(ctx: &BenchContext, out_dir: Option<&Path>) -> Result<(BenchmarkReport, Vec<TrialRecord>), BenchError> {
    let records = ctx.run_all(ctx.config.threads)?;
    let rows: Vec<TrialRow> = records.iter().map(TrialRow::from).collect();
    let report = aggregate(&rows, &ctx.config);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
        let f = fs::File::create(dir.join("trials.csv")).map_err(io_err("creating trials.csv"))?;
        write_trials_csv(&rows, f)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)
            .map_err(io_err("writing report.json"))?;
        let out = &ctx.config.output;
        if out.trajectories || out.svg {
            let tdir = dir.join("trajectories");
            fs::create_dir_all(&tdir).map_err(io_err(format!("creating {}", tdir.display())))?;
            for r in &records {
                if out.trajectories {
                    let f = fs::File::create(tdir.join(format!("trial_{:04}.csv", r.id)))
                        .map_err(io_err("creating trajectory file"))?;
                    write_trajectory_csv(r, f)?;
                }
                if out.svg {
                    fs::write(tdir.join(format!("trial_{:04}.svg", r.id)), trajectory_svg(r))
                        .map_err(io_err("writing svg"))?;
                }
            }
        }
    }
    Ok((report, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub convergence_rate_pct: f64,
    pub length_ratio_mean: Option<f64>,
    pub length_ratio_std: Option<f64>,
    pub end_error_trans_mm: Option<f64>,
    pub end_error_rot_deg: Option<f64>,
    /// Mean length ratio over every trial that produced one, converged or not.
    pub length_ratio_all_mean: Option<f64>,
}

/// Reruns the benchmark once per α on identical seeds and poses.
pub fn alpha_sweep(ctx: &BenchContext, alphas: &[f64]) -> Result<Vec<AlphaRow>, BenchError> {
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut c = ctx.clone();
        c.config.controller.alpha = alpha;
        c.config.controller.validate()?;
        let (report, records) = run_benchmark(&c, None)?;
        let all: Vec<f64> = records.iter().filter_map(|r| r.length_ratio).collect();
        rows.push(AlphaRow {
            alpha,
            convergence_rate_pct: report.convergence_rate_pct,
            length_ratio_mean: report.length_ratio.map(|s| s.mean),
            length_ratio_std: report.length_ratio.map(|s| s.std),
            end_error_trans_mm: report.end_error_trans_mm.map(|s| s.mean),
            end_error_rot_deg: report.end_error_rot_deg.map(|s| s.mean),
            length_ratio_all_mean: Stat::of(&all).map(|s| s.mean),
        });
    }
    Ok(rows)
}

pub fn write_alpha_csv<W: std::io::Write>(rows: &[AlphaRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err("writing sweep"))?;
    Ok(())
}
