//! TUM RGB-D layout, trajectory files, and synthetic curve scenes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

use crate::error::{Error, Result};
use crate::geometry::{backproject, project_unchecked, CameraIntrinsics, Pose};
use crate::image::{DepthImage, ExtractorConfig, ExtractorVariant, GrayImage};
use crate::map::KeyframeMap;

pub const TUM_DEPTH_SCALE: f64 = 5000.0;
pub const DEFAULT_MAX_DT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub timestamp: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociatedFrame {
    pub timestamp: f64,
    pub depth_timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
    pub gt_pose: Option<Pose>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AssociationStats {
    pub matched: usize,
    pub dropped_rgb: usize,
    pub dropped_depth: usize,
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        reason: reason.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// `timestamp filename` lists such as `rgb.txt`.
pub fn read_file_list(path: &Path) -> Result<Vec<(f64, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in content_lines(&text) {
        let mut it = line.split_whitespace();
        let (Some(t), Some(f)) = (it.next(), it.next()) else {
            return Err(parse_err(path, n, "expected `timestamp filename`"));
        };
        let t: f64 = t.parse().map_err(|_| parse_err(path, n, format!("bad timestamp `{t}`")))?;
        out.push((t, f.to_owned()));
    }
    Ok(out)
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<TrajectoryEntry>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(path, n, "non-numeric field"))?;
        if vals.len() != 8 {
            return Err(parse_err(path, n, format!("expected 8 fields, found {}", vals.len())));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if !(q.norm() > 0.0) {
            return Err(parse_err(path, n, "zero quaternion"));
        }
        out.push(TrajectoryEntry {
            timestamp: vals[0],
            pose: Pose::from_quaternion(&UnitQuaternion::from_quaternion(q), Vector3::new(vals[1], vals[2], vals[3])),
        });
    }
    Ok(out)
}

/// Reads `timestamp tx ty tz qx qy qz qw` lines; quaternions are normalized.
pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

pub fn format_trajectory(entries: &[TrajectoryEntry]) -> String {
    let mut out = String::with_capacity(entries.len() * 120);
    out.push_str("# timestamp tx ty tz qx qy qz qw\n");
    for e in entries {
        let q = e.pose.quaternion();
        let t = e.pose.translation;
        let _ = writeln!(
            out,
            "{:.9} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12}",
            e.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        );
    }
    out
}

pub fn write_trajectory(path: &Path, entries: &[TrajectoryEntry]) -> Result<()> {
    fs::write(path, format_trajectory(entries)).map_err(|e| Error::io(path, e))
}

/// Pose at `t` by translation lerp and rotation slerp between the bracketing
/// samples; `None` outside the sampled range.
pub fn interpolate_pose(gt: &[TrajectoryEntry], t: f64) -> Option<Pose> {
    let hi = gt.partition_point(|e| e.timestamp < t);
    if hi == gt.len() {
        return None;
    }
    if gt[hi].timestamp == t {
        return Some(gt[hi].pose);
    }
    if hi == 0 {
        return None;
    }
    let (a, b) = (&gt[hi - 1], &gt[hi]);
    let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
    let q = a.pose.quaternion().slerp(&b.pose.quaternion(), s);
    let tr = a.pose.translation.lerp(&b.pose.translation, s);
    Some(Pose::from_quaternion(&q, tr))
}

/// Greedy nearest-timestamp matching of rgb and depth lists within `max_dt`.
///
/// All candidate pairs are taken in order of increasing `|dt|`; ties go to
/// the earlier rgb, then the earlier depth timestamp. Each entry is used at
/// most once. Returns matched index pairs sorted by rgb index.
pub fn match_timestamps(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    let mut lo = 0;
    for (i, &ta) in a.iter().enumerate() {
        while lo < b.len() && b[lo] < ta - max_dt {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() && b[j] <= ta + max_dt {
            let dt = (ta - b[j]).abs();
            if dt <= max_dt {
                cand.push((dt, i, j));
            }
            j += 1;
        }
    }
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

pub fn associate(
    rgb: &[(f64, PathBuf)],
    depth: &[(f64, PathBuf)],
    gt: &[TrajectoryEntry],
    max_dt: f64,
) -> (Vec<AssociatedFrame>, AssociationStats) {
    let ta: Vec<f64> = rgb.iter().map(|x| x.0).collect();
    let tb: Vec<f64> = depth.iter().map(|x| x.0).collect();
    let pairs = match_timestamps(&ta, &tb, max_dt);
    let frames: Vec<AssociatedFrame> = pairs
        .iter()
        .map(|&(i, j)| AssociatedFrame {
            timestamp: rgb[i].0,
            depth_timestamp: depth[j].0,
            rgb_path: rgb[i].1.clone(),
            depth_path: depth[j].1.clone(),
            gt_pose: interpolate_pose(gt, rgb[i].0),
        })
        .collect();
    let stats = AssociationStats {
        matched: frames.len(),
        dropped_rgb: rgb.len() - frames.len(),
        dropped_depth: depth.len() - frames.len(),
    };
    (frames, stats)
}

/// Grayscale from an 8-bit gray or color image.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Codec {
        path: path.to_owned(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(g) => GrayImage::from_luma8(w, h, g.as_raw()),
        other => GrayImage::from_rgb8(w, h, other.to_rgb8().as_raw()),
    }
}

pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("size matches");
    buf.save(path).map_err(|source| Error::Codec {
        path: path.to_owned(),
        source,
    })
}

/// 16-bit depth PNG; raw value divided by `scale`, 0 stays invalid.
pub fn load_depth(path: &Path, scale: f64) -> Result<DepthImage> {
    if !(scale > 0.0) {
        return Err(Error::invalid("depth_scale", format!("must be positive, got {scale}")));
    }
    let img = image::open(path).map_err(|source| Error::Codec {
        path: path.to_owned(),
        source,
    })?;
    let raw = img.into_luma16();
    let (w, h) = (raw.width() as usize, raw.height() as usize);
    DepthImage::new(w, h, raw.as_raw().iter().map(|&d| d as f64 / scale).collect())
}

pub fn write_depth(path: &Path, depth: &DepthImage, scale: f64) -> Result<()> {
    let data: Vec<u16> = depth
        .data()
        .iter()
        .map(|z| (z * scale).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, data)
        .expect("size matches");
    buf.save(path).map_err(|source| Error::Codec {
        path: path.to_owned(),
        source,
    })
}

/// An opened TUM-layout directory.
#[derive(Debug, Clone)]
pub struct TumDataset {
    pub root: PathBuf,
    pub frames: Vec<AssociatedFrame>,
    pub groundtruth: Vec<TrajectoryEntry>,
    pub stats: AssociationStats,
    /// From an optional `camera.txt`.
    pub intrinsics: Option<CameraIntrinsics>,
}

pub const CAMERA_FILE: &str = "camera.txt";

impl TumDataset {
    pub fn open(root: &Path, max_dt: f64) -> Result<Self> {
        let list = |name: &str| -> Result<Vec<(f64, PathBuf)>> {
            Ok(read_file_list(&root.join(name))?
                .into_iter()
                .map(|(t, f)| (t, root.join(f)))
                .collect())
        };
        let mut rgb = list("rgb.txt")?;
        let mut depth = list("depth.txt")?;
        rgb.sort_by(|a, b| a.0.total_cmp(&b.0));
        depth.sort_by(|a, b| a.0.total_cmp(&b.0));
        let gt_path = root.join("groundtruth.txt");
        let mut groundtruth = if gt_path.exists() { read_trajectory(&gt_path)? } else { Vec::new() };
        groundtruth.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let (frames, stats) = associate(&rgb, &depth, &groundtruth, max_dt);
        let cam_path = root.join(CAMERA_FILE);
        let intrinsics = if cam_path.exists() {
            let text = fs::read_to_string(&cam_path).map_err(|e| Error::io(&cam_path, e))?;
            Some(text.parse().map_err(|e: Error| parse_err(&cam_path, 1, e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            root: root.to_owned(),
            frames,
            groundtruth,
            stats,
            intrinsics,
        })
    }

    pub fn has_groundtruth(&self) -> bool {
        !self.groundtruth.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Synthetic scenes

/// Polyline in world coordinates, drawn as a bright stroke.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub points: Vec<Vector3<f64>>,
    pub intensity: f64,
    /// Stroke width in pixels.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundPlane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterDistribution {
    Gaussian,
    StudentT { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub intensity_std: f64,
    pub depth_std: f64,
    /// Std (pixels) of the relative image offset of a curve between two frames.
    pub edge_jitter_px: f64,
    pub jitter: JitterDistribution,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            intensity_std: 0.0,
            depth_std: 0.0,
            edge_jitter_px: 0.0,
            jitter: JitterDistribution::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub curves: Vec<Curve>,
    pub background_intensity: f64,
    /// Gives depth to pixels off the curves; none leaves them invalid.
    pub background_plane: Option<BackgroundPlane>,
    /// Camera-to-world poses, one per frame.
    pub poses: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
    pub noise: NoiseParams,
    pub frame_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub timestamp: f64,
    pub gray: GrayImage,
    pub depth: DepthImage,
    pub pose: Pose,
}

const NEAR_PLANE: f64 = 0.05;

/// 640x480 camera with the TUM default focal length.
pub fn synthetic_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).expect("valid intrinsics")
}

/// Extraction settings for rendered scenes.
///
/// Rendered strokes have a known gradient peak (about 0.25 after smoothing),
/// so a threshold close to it keeps the edge bands one to two pixels thick.
/// Thick bands absorb sub-pixel motion and bias registration.
pub fn synthetic_extractor() -> ExtractorConfig {
    ExtractorConfig {
        variant: ExtractorVariant::SmoothedGradient5,
        threshold: 0.22,
        ..ExtractorConfig::default()
    }
}

fn circle(center: Vector3<f64>, radius: f64, tilt: f64, n: usize) -> Vec<Vector3<f64>> {
    (0..=n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            center + Vector3::new(radius * a.cos(), radius * a.sin(), tilt * radius * a.cos())
        })
        .collect()
}

fn polygon(center: Vector3<f64>, radius: f64, sides: usize, phase: f64, tilt: f64) -> Vec<Vector3<f64>> {
    (0..=sides)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / sides as f64;
            center + Vector3::new(radius * a.cos(), radius * a.sin(), tilt * radius * a.sin())
        })
        .collect()
}

fn wave(center: Vector3<f64>, half_len: f64, amp: f64, angle: f64, n: usize) -> Vec<Vector3<f64>> {
    let (c, s) = (angle.cos(), angle.sin());
    (0..=n)
        .map(|i| {
            let x = -half_len + 2.0 * half_len * i as f64 / n as f64;
            let y = amp * (3.0 * x / half_len).sin();
            center + Vector3::new(c * x - s * y, s * x + c * y, 0.4 * x)
        })
        .collect()
}

/// Desk-scale scene: a grid of distinct shapes at depths 0.8 to 3.8 m.
pub fn desk_curves(seed: u64) -> Vec<Curve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curves = Vec::new();
    let (cols, rows) = (5, 4);
    for row in 0..rows {
        for col in 0..cols {
            // Stratified depths so both near and far structure is present.
            let rank = ((row * cols + col) * 5 + seed as usize) % (rows * cols);
            let z = 0.8 + 3.0 * (rank as f64 + rng.random_range(0.0..1.0)) / (rows * cols) as f64;
            // Cell centers in normalized image coordinates.
            let nx = (col as f64 + 0.5) / cols as f64 * 2.0 - 1.0;
            let ny = (row as f64 + 0.5) / rows as f64 * 2.0 - 1.0;
            let center = Vector3::new(nx * 0.5 * z + rng.random_range(-0.03..0.03), ny * 0.38 * z, z);
            let size = rng.random_range(0.07..0.11) * z;
            let tilt = rng.random_range(-2.0..2.0);
            let points = match (row * cols + col + seed as usize) % 4 {
                0 => circle(center, size, tilt, 48),
                1 => polygon(center, size, 4, rng.random_range(0.0..1.5), tilt),
                2 => polygon(center, size, 3, rng.random_range(0.0..2.0), tilt),
                _ => wave(center, size * 1.3, size * 0.4, rng.random_range(0.0..3.0), 40),
            };
            curves.push(Curve {
                points,
                intensity: 1.0,
                width: 3.0,
            });
        }
    }
    curves
}

impl SyntheticScene {
    /// Desk scene observed by a still camera at the origin.
    pub fn desk(seed: u64, frames: usize) -> Self {
        Self {
            curves: desk_curves(seed),
            background_intensity: 0.1,
            background_plane: Some(BackgroundPlane {
                point: Vector3::new(0.0, 0.0, 5.0),
                normal: Vector3::new(0.0, 0.0, 1.0),
            }),
            poses: vec![Pose::identity(); frames],
            intrinsics: synthetic_intrinsics(),
            noise: NoiseParams::default(),
            frame_rate: 30.0,
            seed,
        }
    }

    /// Camera moving with a constant per-frame velocity (`compose` convention).
    pub fn with_constant_velocity(mut self, frames: usize, rotation_per_frame: Vector3<f64>, translation_per_frame: Vector3<f64>) -> Self {
        let mut pose = Pose::identity();
        self.poses = (0..frames)
            .map(|_| {
                let p = pose;
                pose = Pose::new(
                    pose.rotation * *nalgebra::Rotation3::new(rotation_per_frame).matrix(),
                    pose.translation + translation_per_frame,
                );
                p
            })
            .collect();
        self
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        1.0 + frame as f64 / self.frame_rate
    }
}

fn jitter_offset(rng: &mut ChaCha8Rng, noise: &NoiseParams) -> Vector2<f64> {
    if noise.edge_jitter_px <= 0.0 {
        return Vector2::zeros();
    }
    // Per-frame std sigma/sqrt(2) gives relative std sigma between frames.
    let s = noise.edge_jitter_px / std::f64::consts::SQRT_2;
    match noise.jitter {
        JitterDistribution::Gaussian => {
            let n = Normal::new(0.0, s).expect("valid std");
            Vector2::new(n.sample(rng), n.sample(rng))
        }
        JitterDistribution::StudentT { nu } => {
            let t = StudentT::new(nu).expect("valid nu");
            Vector2::new(s * t.sample(rng), s * t.sample(rng))
        }
    }
}

/// Renders one frame of `scene` from `pose`; `frame` seeds the noise.
pub fn render_frame(scene: &SyntheticScene, pose: &Pose, frame: usize) -> Result<(GrayImage, DepthImage)> {
    let intr = &scene.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(frame as u64));

    let mut gray = vec![scene.background_intensity; w * h];
    let mut depth = vec![0.0; w * h];
    if let Some(plane) = &scene.background_plane {
        let n = plane.normal;
        for v in 0..h {
            for u in 0..w {
                let ray = Vector3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0);
                let denom = n.dot(&(pose.rotation * ray));
                if denom.abs() > 1e-12 {
                    let lambda = n.dot(&(plane.point - pose.translation)) / denom;
                    if lambda > 0.0 {
                        depth[v * w + u] = lambda;
                    }
                }
            }
        }
    }

    struct Layer {
        mean_depth: f64,
        intensity: f64,
        coverage: Vec<(usize, f64, f64)>,
    }
    let mut layers = Vec::new();
    let mut cov = vec![0.0f64; w * h];
    let mut cz = vec![f64::INFINITY; w * h];
    for curve in &scene.curves {
        let offset = jitter_offset(&mut rng, &scene.noise);
        let cam: Vec<Vector3<f64>> = curve.points.iter().map(|s| pose.to_camera(s)).collect();
        let half = curve.width / 2.0;
        let mut touched: Vec<usize> = Vec::new();
        let mut zsum = 0.0;
        let mut zn = 0usize;
        for seg in cam.windows(2) {
            let (mut a, mut b) = (seg[0], seg[1]);
            if a.z < NEAR_PLANE && b.z < NEAR_PLANE {
                continue;
            }
            if a.z < NEAR_PLANE || b.z < NEAR_PLANE {
                let t = (NEAR_PLANE - a.z) / (b.z - a.z);
                let cut = a + (b - a) * t;
                if a.z < NEAR_PLANE {
                    a = cut;
                } else {
                    b = cut;
                }
            }
            zsum += a.z + b.z;
            zn += 2;
            let pa = project_unchecked(intr, &a) + offset;
            let pb = project_unchecked(intr, &b) + offset;
            let (iza, izb) = (1.0 / a.z, 1.0 / b.z);
            let ab = pb - pa;
            let len2 = ab.norm_squared();
            let reach = half + 1.0;
            let u0 = (pa.x.min(pb.x) - reach).floor().max(0.0);
            let u1 = (pa.x.max(pb.x) + reach).ceil().min((w - 1) as f64);
            let v0 = (pa.y.min(pb.y) - reach).floor().max(0.0);
            let v1 = (pa.y.max(pb.y) + reach).ceil().min((h - 1) as f64);
            if u0 > u1 || v0 > v1 {
                continue;
            }
            for v in v0 as usize..=v1 as usize {
                for u in u0 as usize..=u1 as usize {
                    let q = Vector2::new(u as f64, v as f64);
                    let t = if len2 > 0.0 { ((q - pa).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                    let dist = (q - (pa + ab * t)).norm();
                    let c = (half + 0.5 - dist).clamp(0.0, 1.0);
                    if c <= 0.0 {
                        continue;
                    }
                    let i = v * w + u;
                    let z = 1.0 / (iza + t * (izb - iza));
                    if cov[i] == 0.0 {
                        touched.push(i);
                    }
                    if c > cov[i] || (c == cov[i] && z < cz[i]) {
                        cov[i] = c;
                        cz[i] = z;
                    }
                }
            }
        }
        if touched.is_empty() {
            continue;
        }
        layers.push(Layer {
            mean_depth: zsum / zn as f64,
            intensity: curve.intensity,
            coverage: touched.iter().map(|&i| (i, cov[i], cz[i])).collect(),
        });
        for &i in &touched {
            cov[i] = 0.0;
            cz[i] = f64::INFINITY;
        }
    }
    if layers.is_empty() {
        return Err(Error::EmptyRender(frame));
    }

    // Painter's order for intensity, z-test for depth.
    layers.sort_by(|a, b| b.mean_depth.total_cmp(&a.mean_depth));
    let mut zbuf = vec![f64::INFINITY; w * h];
    for layer in &layers {
        for &(i, c, z) in &layer.coverage {
            gray[i] = layer.intensity * c + gray[i] * (1.0 - c);
            if c >= 0.5 && z < zbuf[i] {
                zbuf[i] = z;
            }
        }
    }
    for i in 0..w * h {
        if zbuf[i].is_finite() {
            depth[i] = zbuf[i];
        }
    }

    if scene.noise.intensity_std > 0.0 {
        let n = Normal::new(0.0, scene.noise.intensity_std).expect("valid std");
        for g in &mut gray {
            *g = (*g + n.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    if scene.noise.depth_std > 0.0 {
        let n = Normal::new(0.0, scene.noise.depth_std).expect("valid std");
        for z in depth.iter_mut().filter(|z| **z > 0.0) {
            *z = (*z + n.sample(&mut rng)).max(0.0);
        }
    }
    Ok((GrayImage::new(w, h, gray)?, DepthImage::new(w, h, depth)?))
}

pub fn render_synthetic(scene: &SyntheticScene) -> Result<Vec<SyntheticFrame>> {
    scene
        .poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let (gray, depth) = render_frame(scene, pose, i)?;
            Ok(SyntheticFrame {
                timestamp: scene.timestamp(i),
                gray,
                depth,
                pose: *pose,
            })
        })
        .collect()
}

/// Writes frames in TUM layout plus `camera.txt`.
pub fn write_synthetic_dataset(dir: &Path, frames: &[SyntheticFrame], intr: &CameraIntrinsics) -> Result<()> {
    for sub in ["rgb", "depth"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut rgb = String::from("# timestamp filename\n");
    let mut depth = String::from("# timestamp filename\n");
    let mut gt = Vec::with_capacity(frames.len());
    for f in frames {
        let name = format!("{:.6}.png", f.timestamp);
        write_gray(&dir.join("rgb").join(&name), &f.gray)?;
        write_depth(&dir.join("depth").join(&name), &f.depth, TUM_DEPTH_SCALE)?;
        let _ = writeln!(rgb, "{:.6} rgb/{name}", f.timestamp);
        let _ = writeln!(depth, "{:.6} depth/{name}", f.timestamp);
        gt.push(TrajectoryEntry {
            timestamp: f.timestamp,
            pose: f.pose,
        });
    }
    let write = |name: &str, text: String| fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e));
    write("rgb.txt", rgb)?;
    write("depth.txt", depth)?;
    write(CAMERA_FILE, format!("{intr}\n"))?;
    write_trajectory(&dir.join("groundtruth.txt"), &gt)
}

/// Moves a random `fraction` of map points sideways in the image by 6 to 12
/// pixels along one common random direction, keeping their range `d`.
pub fn contaminate_map<R: Rng>(map: &KeyframeMap, intr: &CameraIntrinsics, fraction: f64, rng: &mut R) -> KeyframeMap {
    let mut out = map.clone();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = Vector2::new(angle.cos(), angle.sin());
    let count = (fraction.clamp(0.0, 1.0) * map.len() as f64).round() as usize;
    let idx = rand::seq::index::sample(rng, map.len(), count);
    for i in idx.iter() {
        let pt = &mut out.points[i];
        let p = Vector2::new(pt.source_pixel[0] as f64, pt.source_pixel[1] as f64) + dir * rng.random_range(6.0..12.0);
        let f = backproject(intr, &p);
        pt.bearing = f;
        pt.s = f * pt.d;
    }
    out
}
