//! Keyframe 3D semi-dense map with foreground depth selection.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{backproject, CameraIntrinsics, Pose};
use crate::image::{DepthImage, GrayImage, Pixel, SemiDenseRegion};

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    /// Keyframe camera coordinates, meters.
    pub s: Vector3<f64>,
    /// Unit bearing through the source pixel.
    pub bearing: Vector3<f64>,
    /// Distance along the bearing, `s = d * bearing`.
    pub d: f64,
    pub source_pixel: Pixel,
    pub grad_dir: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeMap {
    pub points: Vec<MapPoint>,
    /// Keyframe camera to world.
    pub pose: Pose,
    pub frame_id: usize,
}

impl KeyframeMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    /// Depth gap (m) that splits two clusters: `gap_base + gap_relative * z`.
    pub gap_base: f64,
    pub gap_relative: f64,
    pub min_points: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            gap_base: 0.05,
            gap_relative: 0.02,
            min_points: 300,
        }
    }
}

const PATCH_RADIUS: usize = 2;

/// Foreground depth at `p`, or `None` when the whole patch is invalid.
///
/// Valid depths of the 5x5 patch are sorted and split wherever consecutive
/// values differ by more than the gap. If the nearest cluster is not the one
/// holding the center pixel, its mean is returned; otherwise the center depth.
pub fn foreground_depth(depth: &DepthImage, p: Pixel, cfg: &MapConfig) -> Option<f64> {
    let (u, v) = (p[0] as usize, p[1] as usize);
    if u >= depth.width() || v >= depth.height() {
        return None;
    }
    let mut vals: Vec<f64> = Vec::with_capacity(25);
    for y in v.saturating_sub(PATCH_RADIUS)..(v + PATCH_RADIUS + 1).min(depth.height()) {
        for x in u.saturating_sub(PATCH_RADIUS)..(u + PATCH_RADIUS + 1).min(depth.width()) {
            let z = depth.get(x, y);
            if z > 0.0 {
                vals.push(z);
            }
        }
    }
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f64::total_cmp);

    let center = depth.get(u, v);
    let z_ref = if center > 0.0 { center } else { vals[0] };
    let gap = cfg.gap_base + cfg.gap_relative * z_ref;

    // First cluster: the run of sorted values before the first large gap.
    let mut end = 1;
    while end < vals.len() && vals[end] - vals[end - 1] <= gap {
        end += 1;
    }
    let nearest = &vals[..end];
    let nearest_mean = nearest.iter().sum::<f64>() / nearest.len() as f64;

    if center > 0.0 {
        if center <= nearest[nearest.len() - 1] {
            Some(center)
        } else {
            Some(nearest_mean)
        }
    } else {
        Some(nearest_mean)
    }
}

/// Back-projects every region pixel with a foreground depth.
pub fn build_keyframe_map(
    region: &SemiDenseRegion,
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    pose: &Pose,
    frame_id: usize,
    cfg: &MapConfig,
) -> Result<KeyframeMap> {
    if region.width != depth.width() || region.height != depth.height() {
        return Err(Error::SizeMismatch {
            expected: region.width * region.height,
            actual: depth.width() * depth.height(),
        });
    }
    let mut points = Vec::with_capacity(region.len());
    for (&pixel, g) in region.pixels.iter().zip(&region.grad_dirs) {
        let Some(z) = foreground_depth(depth, pixel, cfg) else {
            continue;
        };
        let bearing = backproject(intr, &Vector2::new(pixel[0] as f64, pixel[1] as f64));
        let d = z / bearing.z;
        points.push(MapPoint {
            s: bearing * d,
            bearing,
            d,
            source_pixel: pixel,
            grad_dir: *g,
        });
    }
    if points.len() < cfg.min_points.max(1) {
        return Err(Error::EmptyMap {
            found: points.len(),
            required: cfg.min_points.max(1),
        });
    }
    Ok(KeyframeMap {
        points,
        pose: pose.clone(),
        frame_id,
    })
}

/// ASCII cloud, one `x y z r g b` line per point in world coordinates.
pub fn point_cloud_text(map: &KeyframeMap, gray: Option<&GrayImage>) -> String {
    let mut out = String::with_capacity(map.len() * 48);
    for pt in &map.points {
        let w = map.pose.transform_point(&pt.s);
        let c = gray
            .map(|g| (g.get(pt.source_pixel[0] as usize, pt.source_pixel[1] as usize) * 255.0).round() as u8)
            .unwrap_or(255);
        let _ = writeln!(out, "{:.6} {:.6} {:.6} {c} {c} {c}", w.x, w.y, w.z);
    }
    out
}

pub fn write_point_cloud(map: &KeyframeMap, gray: Option<&GrayImage>, path: &Path) -> Result<()> {
    std::fs::write(path, point_cloud_text(map, gray)).map_err(|e| Error::io(path, e))
}
