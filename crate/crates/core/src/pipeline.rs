//! Frame-to-keyframe tracking loop with a separate keyframe preparation activity.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::annf::build_annf;
use crate::config::VoConfig;
use crate::dataset::{load_depth, load_gray, TrajectoryEntry, TumDataset};
use crate::error::{Error, Result};
use crate::geometry::{compose, CameraIntrinsics, Pose, PoseDelta};
use crate::image::{extractor_pipeline, DepthImage, GrayImage, SemiDenseRegion};
use crate::map::{build_keyframe_map, KeyframeMap, MapConfig};
use crate::registration::{compute_residuals, project_map, register, RegistrationProblem, RegistrationResult};

/// Lazily loaded depth. Tracking never calls `load`; only keyframe preparation does.
pub trait DepthSource: Send + 'static {
    fn load(&self) -> Result<DepthImage>;
}

impl DepthSource for DepthImage {
    fn load(&self) -> Result<DepthImage> {
        Ok(self.clone())
    }
}

/// Depth PNG on disk.
#[derive(Debug, Clone)]
pub struct DepthFile {
    pub path: PathBuf,
    pub scale: f64,
}

impl DepthSource for DepthFile {
    fn load(&self) -> Result<DepthImage> {
        load_depth(&self.path, self.scale)
    }
}

/// Wraps a source and counts how often it is read.
#[derive(Debug, Clone)]
pub struct CountingDepth<D> {
    pub inner: D,
    pub reads: Arc<AtomicUsize>,
}

impl<D> CountingDepth<D> {
    pub fn new(inner: D, reads: Arc<AtomicUsize>) -> Self {
        Self { inner, reads }
    }
}

impl<D: DepthSource> DepthSource for CountingDepth<D> {
    fn load(&self) -> Result<DepthImage> {
        self.reads.fetch_add(1, Ordering::SeqCst);
        self.inner.load()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityState {
    /// Motion over one frame interval, in `compose` convention.
    pub last_delta: PoseDelta,
    pub valid: bool,
}

impl Default for VelocityState {
    fn default() -> Self {
        Self {
            last_delta: PoseDelta::zero(),
            valid: false,
        }
    }
}

impl VelocityState {
    /// State after a frame without an accepted measurement.
    pub fn decayed(&self, alpha: f64) -> Self {
        Self {
            last_delta: self.last_delta.scaled(alpha),
            valid: self.valid,
        }
    }
}

/// `compose(prev, α·last_delta)`, or `prev` when no velocity is known.
pub fn predict_pose(prev: &Pose, vel: &VelocityState, alpha: f64) -> Pose {
    if !vel.valid || alpha == 0.0 {
        return *prev;
    }
    compose(prev, &vel.last_delta.scaled(alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackingStatus {
    /// First usable frame; became the keyframe at the identity pose.
    Initialized,
    Tracked,
    /// Tracked after retrying from the previous pose without prediction.
    Recovered,
    /// Registration failed; pose held.
    Failed,
    /// Too many consecutive failures; pose held.
    Lost,
    /// Skipped because its region size jumped (blur).
    Discarded,
    /// No keyframe could be built yet.
    Uninitialized,
}

impl TrackingStatus {
    pub fn name(self) -> &'static str {
        match self {
            TrackingStatus::Initialized => "initialized",
            TrackingStatus::Tracked => "tracked",
            TrackingStatus::Recovered => "recovered",
            TrackingStatus::Failed => "failed",
            TrackingStatus::Lost => "lost",
            TrackingStatus::Discarded => "discarded",
            TrackingStatus::Uninitialized => "uninitialized",
        }
    }

    /// Whether the frame produces a trajectory entry.
    pub fn has_pose(self) -> bool {
        !matches!(self, TrackingStatus::Discarded | TrackingStatus::Uninitialized)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameReport {
    pub index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub status: TrackingStatus,
    pub iterations: usize,
    pub inliers: usize,
    pub visible: usize,
    pub median_disparity: f64,
    pub region_size: usize,
    /// Frame id of the keyframe tracked against.
    pub keyframe_id: usize,
    pub keyframe_requested: bool,
    pub blur_flagged: bool,
    pub elapsed: Duration,
}

impl FrameReport {
    pub fn entry(&self) -> TrajectoryEntry {
        TrajectoryEntry {
            timestamp: self.timestamp,
            pose: self.pose,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeEvent {
    pub frame_id: usize,
    pub timestamp: f64,
    pub points: usize,
}

struct PendingKeyframe {
    frame_id: usize,
    timestamp: f64,
    handle: JoinHandle<Result<KeyframeMap>>,
}

fn prepare_keyframe(
    region: &SemiDenseRegion,
    depth: &dyn DepthSource,
    intr: &CameraIntrinsics,
    pose: &Pose,
    frame_id: usize,
    cfg: &MapConfig,
) -> Result<KeyframeMap> {
    let depth = depth.load()?;
    build_keyframe_map(region, &depth, intr, pose, frame_id, cfg)
}

/// Visual odometry state machine. Feed frames in timestamp order.
pub struct Pipeline {
    cfg: VoConfig,
    intr: CameraIntrinsics,
    keyframe: Option<Arc<KeyframeMap>>,
    pending: Option<PendingKeyframe>,
    pose: Pose,
    velocity: VelocityState,
    sigma: f64,
    failures: usize,
    prediction_disabled: bool,
    prev_region_size: Option<usize>,
    frames: usize,
    keyframes: Vec<KeyframeEvent>,
}

impl Pipeline {
    pub fn new(cfg: VoConfig, intr: CameraIntrinsics) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sigma: cfg.registration.robust.t_sigma,
            cfg,
            intr,
            keyframe: None,
            pending: None,
            pose: Pose::identity(),
            velocity: VelocityState::default(),
            failures: 0,
            prediction_disabled: false,
            prev_region_size: None,
            frames: 0,
            keyframes: Vec::new(),
        })
    }

    pub fn config(&self) -> &VoConfig {
        &self.cfg
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intr
    }

    pub fn keyframe(&self) -> Option<&KeyframeMap> {
        self.keyframe.as_deref()
    }

    pub fn keyframes(&self) -> &[KeyframeEvent] {
        &self.keyframes
    }

    pub fn velocity(&self) -> &VelocityState {
        &self.velocity
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    fn install(&mut self, map: KeyframeMap, timestamp: f64) {
        self.keyframes.push(KeyframeEvent {
            frame_id: map.frame_id,
            timestamp,
            points: map.len(),
        });
        self.keyframe = Some(Arc::new(map));
    }

    /// Swaps in a finished keyframe. With `wait`, blocks until it is ready.
    fn collect_pending(&mut self, wait: bool) {
        let ready = self.pending.as_ref().is_some_and(|p| wait || p.handle.is_finished());
        if !ready {
            return;
        }
        let p = self.pending.take().expect("pending keyframe");
        // A failed build keeps the old keyframe; the next request retries.
        if let Ok(Ok(map)) = p.handle.join() {
            debug_assert_eq!(map.frame_id, p.frame_id);
            self.install(map, p.timestamp);
        }
    }

    /// Blocks until any keyframe under construction has been installed.
    pub fn finish(&mut self) {
        self.collect_pending(true);
    }

    fn request_keyframe<D: DepthSource>(&mut self, region: SemiDenseRegion, depth: D, pose: Pose, frame_id: usize, timestamp: f64) {
        if self.pending.is_some() {
            return;
        }
        let intr = self.intr;
        let map_cfg = self.cfg.map;
        if self.cfg.async_keyframes {
            let handle = std::thread::spawn(move || prepare_keyframe(&region, &depth, &intr, &pose, frame_id, &map_cfg));
            self.pending = Some(PendingKeyframe {
                frame_id,
                timestamp,
                handle,
            });
        } else if let Ok(map) = prepare_keyframe(&region, &depth, &intr, &pose, frame_id, &map_cfg) {
            self.install(map, timestamp);
        }
    }

    fn solve(&self, map: &KeyframeMap, field: &crate::annf::NearestNeighbourField, region: &SemiDenseRegion, initial: Pose) -> Result<RegistrationResult> {
        let problem = RegistrationProblem {
            map,
            field,
            intr: &self.intr,
            initial,
            sigma: self.sigma,
        };
        register(&problem, region, &self.cfg.registration)
    }

    /// Tracks one frame. The depth source is read only if this frame becomes a keyframe.
    pub fn process_frame<D: DepthSource>(&mut self, gray: &GrayImage, depth: D, timestamp: f64) -> Result<FrameReport> {
        let start = Instant::now();
        let index = self.frames;
        self.frames += 1;
        if gray.width() != self.intr.width || gray.height() != self.intr.height {
            return Err(Error::SizeMismatch {
                expected: self.intr.width * self.intr.height,
                actual: gray.width() * gray.height(),
            });
        }
        if !self.cfg.async_keyframes {
            debug_assert!(self.pending.is_none());
        }
        self.collect_pending(false);

        let region = extractor_pipeline(gray, &self.cfg.extractor)?;
        let blur_flagged = self.prev_region_size.is_some_and(|prev| {
            let prev = prev.max(1) as f64;
            (region.len() as f64 - prev).abs() / prev > self.cfg.blur_jump_ratio
        });
        self.prev_region_size = Some(region.len());

        let mut report = FrameReport {
            index,
            timestamp,
            pose: self.pose,
            status: TrackingStatus::Tracked,
            iterations: 0,
            inliers: 0,
            visible: 0,
            median_disparity: 0.0,
            region_size: region.len(),
            keyframe_id: 0,
            keyframe_requested: false,
            blur_flagged,
            elapsed: Duration::ZERO,
        };

        let Some(map) = self.keyframe.clone() else {
            // Bootstrap synchronously: the first keyframe anchors the world frame.
            report.status = match prepare_keyframe(&region, &depth, &self.intr, &self.pose, index, &self.cfg.map) {
                Ok(map) => {
                    self.install(map, timestamp);
                    report.keyframe_id = index;
                    TrackingStatus::Initialized
                }
                Err(_) => TrackingStatus::Uninitialized,
            };
            report.elapsed = start.elapsed();
            return Ok(report);
        };
        report.keyframe_id = map.frame_id;

        if blur_flagged && self.cfg.discard_blur_frames {
            self.velocity = self.velocity.decayed(self.cfg.velocity_decay);
            report.status = TrackingStatus::Discarded;
            report.elapsed = start.elapsed();
            return Ok(report);
        }

        let field = build_annf(&region, self.intr.width, self.intr.height)?;
        let use_prediction = self.cfg.motion_model && !self.prediction_disabled;
        let initial = if use_prediction {
            predict_pose(&self.pose, &self.velocity, self.cfg.velocity_decay)
        } else {
            self.pose
        };

        let mut outcome = self.solve(&map, &field, &region, initial);
        let mut status = TrackingStatus::Tracked;
        if outcome.is_err() && use_prediction && self.velocity.valid {
            outcome = self.solve(&map, &field, &region, self.pose);
            status = TrackingStatus::Recovered;
        }

        match outcome {
            Ok(res) => {
                self.velocity = VelocityState {
                    last_delta: PoseDelta::between(&self.pose, &res.pose),
                    valid: true,
                };
                self.pose = res.pose;
                self.sigma = res.sigma;
                self.failures = 0;
                self.prediction_disabled = false;
                report.pose = res.pose;
                report.iterations = res.iterations;
                report.inliers = res.inlier_count;
                report.visible = res.visible_count;
                report.median_disparity = res.median_disparity;
                report.status = status;
                if res.median_disparity > self.cfg.disparity_threshold {
                    report.keyframe_requested = true;
                    self.request_keyframe(region, depth, res.pose, index, timestamp);
                }
            }
            Err(_) => {
                self.failures += 1;
                self.velocity = self.velocity.decayed(self.cfg.velocity_decay);
                self.prediction_disabled = true;
                self.sigma = self.cfg.registration.robust.t_sigma;
                report.status = if self.failures >= self.cfg.max_failures {
                    TrackingStatus::Lost
                } else {
                    TrackingStatus::Failed
                };
            }
        }
        report.elapsed = start.elapsed();
        Ok(report)
    }
}

/// Output of a whole sequence.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub trajectory: Vec<TrajectoryEntry>,
    pub frames: Vec<FrameReport>,
    pub keyframes: Vec<KeyframeEvent>,
}

impl RunOutput {
    pub fn frames_per_second(&self) -> f64 {
        let total: f64 = self.frames.iter().map(|f| f.elapsed.as_secs_f64()).sum();
        if total > 0.0 {
            self.frames.len() as f64 / total
        } else {
            0.0
        }
    }

    pub fn mean_iterations(&self) -> f64 {
        let tracked: Vec<_> = self.frames.iter().filter(|f| f.iterations > 0).collect();
        if tracked.is_empty() {
            0.0
        } else {
            tracked.iter().map(|f| f.iterations as f64).sum::<f64>() / tracked.len() as f64
        }
    }

    pub fn count(&self, status: TrackingStatus) -> usize {
        self.frames.iter().filter(|f| f.status == status).count()
    }
}

/// Runs the pipeline over `(timestamp, gray, depth)` frames.
pub fn run_frames<D, I>(frames: I, intr: CameraIntrinsics, cfg: &VoConfig) -> Result<RunOutput>
where
    D: DepthSource,
    I: IntoIterator<Item = Result<(f64, GrayImage, D)>>,
{
    let mut pipeline = Pipeline::new(cfg.clone(), intr)?;
    let mut out = RunOutput::default();
    for frame in frames {
        let (t, gray, depth) = frame?;
        let report = pipeline.process_frame(&gray, depth, t)?;
        if report.status.has_pose() {
            out.trajectory.push(report.entry());
        }
        out.frames.push(report);
    }
    pipeline.finish();
    out.keyframes = pipeline.keyframes().to_vec();
    Ok(out)
}

/// Intrinsics for a dataset: explicit config, then camera.txt, then a TUM preset by name.
pub fn resolve_intrinsics(dataset: &TumDataset, cfg: &VoConfig) -> CameraIntrinsics {
    if let Some(c) = cfg.camera.or(dataset.intrinsics) {
        return c;
    }
    let name = dataset.root.to_string_lossy();
    let preset = ["freiburg1", "freiburg2", "freiburg3"]
        .iter()
        .zip(["fr1", "fr2", "fr3"])
        .find(|(k, _)| name.contains(*k))
        .map_or("default", |(_, p)| p);
    CameraIntrinsics::preset(preset).expect("known preset")
}

/// Runs the pipeline over an associated TUM-layout dataset.
pub fn run_sequence(dataset: &TumDataset, cfg: &VoConfig) -> Result<RunOutput> {
    let intr = resolve_intrinsics(dataset, cfg);
    let scale = cfg.depth_scale;
    let frames = dataset.frames.iter().map(|f| {
        let gray = load_gray(&f.rgb_path)?;
        Ok((
            f.timestamp,
            gray,
            DepthFile {
                path: f.depth_path.clone(),
                scale,
            },
        ))
    });
    run_frames(frames, intr, cfg)
}

/// One frame with a known ground-truth pose.
pub struct GtFrame<D> {
    pub gray: GrayImage,
    pub depth: D,
    pub gt_pose: Pose,
}

/// Projected residuals at ground-truth poses, replaying the keyframe rule.
///
/// The keyframe is replaced whenever the median disparity at the true pose
/// exceeds the threshold. Keyframe frames contribute no residuals.
pub fn collect_gt_residuals_frames<D, I>(frames: I, intr: &CameraIntrinsics, cfg: &VoConfig) -> Result<Vec<f64>>
where
    D: DepthSource,
    I: IntoIterator<Item = Result<GtFrame<D>>>,
{
    let mut keyframe: Option<KeyframeMap> = None;
    let mut out = Vec::new();
    for (index, frame) in frames.into_iter().enumerate() {
        let frame = frame?;
        let region = extractor_pipeline(&frame.gray, &cfg.extractor)?;
        if let Some(map) = &keyframe {
            let rel = map.pose.inverse() * frame.gt_pose;
            let field = build_annf(&region, intr.width, intr.height)?;
            match project_map(map, &rel, intr) {
                Ok(mut ws) => {
                    compute_residuals(&mut ws, &field, map)?;
                    out.extend(ws.visible_residuals());
                    if ws.median_disparity(map) <= cfg.disparity_threshold {
                        continue;
                    }
                }
                Err(Error::AllInvisible) => {}
                Err(e) => return Err(e),
            }
        }
        let depth = frame.depth.load()?;
        match build_keyframe_map(&region, &depth, intr, &frame.gt_pose, index, &cfg.map) {
            Ok(map) => keyframe = Some(map),
            Err(Error::EmptyMap { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// [`collect_gt_residuals_frames`] over a TUM-layout dataset with ground truth.
pub fn collect_gt_residuals(dataset: &TumDataset, cfg: &VoConfig) -> Result<Vec<f64>> {
    if !dataset.has_groundtruth() {
        return Err(Error::MissingGroundTruth);
    }
    let intr = resolve_intrinsics(dataset, cfg);
    let scale = cfg.depth_scale;
    let frames = dataset.frames.iter().filter_map(|f| {
        let gt_pose = f.gt_pose?;
        Some(load_gray(&f.rgb_path).map(|gray| GtFrame {
            gray,
            depth: DepthFile {
                path: f.depth_path.clone(),
                scale,
            },
            gt_pose,
        }))
    });
    collect_gt_residuals_frames(frames, &intr, cfg)
}

/// One residual per line.
pub fn write_residual_dump(path: &Path, residuals: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(residuals.len() * 12);
    for r in residuals {
        text.push_str(&format!("{r:.9}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_residual_dump(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
