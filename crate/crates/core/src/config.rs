//! Flat `key = value` configuration covering every tunable constant.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{DEFAULT_MAX_DT, TUM_DEPTH_SCALE};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::image::{ExtractorConfig, ExtractorVariant};
use crate::map::MapConfig;
use crate::registration::RegistrationConfig;
use crate::robust::WeightKind;

#[derive(Debug, Clone, PartialEq)]
pub struct VoConfig {
    pub extractor: ExtractorConfig,
    pub map: MapConfig,
    /// Solver settings, including the robust weight function.
    pub registration: RegistrationConfig,
    /// Median projected displacement (pixels) that triggers a new keyframe.
    pub disparity_threshold: f64,
    /// Decay factor applied to the last inter-frame motion.
    pub velocity_decay: f64,
    pub motion_model: bool,
    /// Consecutive failed frames before the tracker reports itself lost.
    pub max_failures: usize,
    /// Relative change in region size that flags a frame as blurred.
    pub blur_jump_ratio: f64,
    pub discard_blur_frames: bool,
    /// Build keyframes on a worker thread while tracking continues.
    pub async_keyframes: bool,
    pub depth_scale: f64,
    pub max_dt: f64,
    /// Explicit intrinsics; `None` means camera.txt or a preset guessed from the path.
    pub camera: Option<CameraIntrinsics>,
    /// RPE interval, seconds.
    pub eval_delta: f64,
    pub eval_max_dt: f64,
}

impl Default for VoConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig::default(),
            map: MapConfig::default(),
            registration: RegistrationConfig::default(),
            disparity_threshold: 20.0,
            velocity_decay: 0.9,
            motion_model: true,
            max_failures: 3,
            blur_jump_ratio: 0.5,
            discard_blur_frames: false,
            async_keyframes: true,
            depth_scale: TUM_DEPTH_SCALE,
            max_dt: DEFAULT_MAX_DT,
            camera: None,
            eval_delta: 1.0,
            eval_max_dt: DEFAULT_MAX_DT,
        }
    }
}

/// Every recognised key, in the order written by [`VoConfig::to_text`].
pub const CONFIG_KEYS: [&str; 34] = [
    "extractor.variant",
    "extractor.threshold",
    "extractor.gaussian_sigma",
    "extractor.normalized",
    "map.gap_base",
    "map.gap_relative",
    "map.min_points",
    "robust.weight",
    "robust.huber_k",
    "robust.tukey_c",
    "robust.cauchy_c",
    "robust.t_nu",
    "robust.t_sigma",
    "robust.l1_epsilon",
    "robust.sigma_min",
    "registration.max_iterations",
    "registration.step_tolerance",
    "registration.max_cost_increases",
    "registration.inlier_threshold",
    "registration.condition_limit",
    "registration.coarse_to_fine",
    "registration.parallel",
    "pipeline.disparity_threshold",
    "pipeline.velocity_decay",
    "pipeline.motion_model",
    "pipeline.max_failures",
    "pipeline.blur_jump_ratio",
    "pipeline.discard_blur_frames",
    "pipeline.async_keyframes",
    "dataset.depth_scale",
    "dataset.max_dt",
    "dataset.camera",
    "eval.delta",
    "eval.max_dt",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::invalid("config", format!("{key}: `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::invalid("config", format!("{key}: `{value}` is not a boolean"))),
    }
}

impl VoConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let r = &mut self.registration;
        match key {
            "extractor.variant" => self.extractor.variant = v.parse::<ExtractorVariant>()?,
            "extractor.threshold" => self.extractor.threshold = parse(key, v)?,
            "extractor.gaussian_sigma" => self.extractor.gaussian_sigma = parse(key, v)?,
            "extractor.normalized" => self.extractor.normalized = parse_bool(key, v)?,
            "map.gap_base" => self.map.gap_base = parse(key, v)?,
            "map.gap_relative" => self.map.gap_relative = parse(key, v)?,
            "map.min_points" => self.map.min_points = parse(key, v)?,
            "robust.weight" => r.robust.kind = v.parse::<WeightKind>()?,
            "robust.huber_k" => r.robust.huber_k = parse(key, v)?,
            "robust.tukey_c" => r.robust.tukey_c = parse(key, v)?,
            "robust.cauchy_c" => r.robust.cauchy_c = parse(key, v)?,
            "robust.t_nu" => r.robust.t_nu = parse(key, v)?,
            "robust.t_sigma" => r.robust.t_sigma = parse(key, v)?,
            "robust.l1_epsilon" => r.robust.l1_epsilon = parse(key, v)?,
            "robust.sigma_min" => r.robust.sigma_min = parse(key, v)?,
            "registration.max_iterations" => r.max_iterations = parse(key, v)?,
            "registration.step_tolerance" => r.step_tolerance = parse(key, v)?,
            "registration.max_cost_increases" => r.max_cost_increases = parse(key, v)?,
            "registration.inlier_threshold" => r.inlier_threshold = parse(key, v)?,
            "registration.condition_limit" => r.condition_limit = parse(key, v)?,
            "registration.coarse_to_fine" => r.coarse_to_fine = parse_bool(key, v)?,
            "registration.parallel" => r.parallel = parse_bool(key, v)?,
            "pipeline.disparity_threshold" => self.disparity_threshold = parse(key, v)?,
            "pipeline.velocity_decay" => self.velocity_decay = parse(key, v)?,
            "pipeline.motion_model" => self.motion_model = parse_bool(key, v)?,
            "pipeline.max_failures" => self.max_failures = parse(key, v)?,
            "pipeline.blur_jump_ratio" => self.blur_jump_ratio = parse(key, v)?,
            "pipeline.discard_blur_frames" => self.discard_blur_frames = parse_bool(key, v)?,
            "pipeline.async_keyframes" => self.async_keyframes = parse_bool(key, v)?,
            "dataset.depth_scale" => self.depth_scale = parse(key, v)?,
            "dataset.max_dt" => self.max_dt = parse(key, v)?,
            "dataset.camera" => {
                self.camera = match v {
                    "auto" => None,
                    other => Some(other.parse::<CameraIntrinsics>()?),
                }
            }
            "eval.delta" => self.eval_delta = parse(key, v)?,
            "eval.max_dt" => self.eval_max_dt = parse(key, v)?,
            _ => return Err(Error::invalid("config", format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Textual value of one key, as accepted by [`VoConfig::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        let r = &self.registration;
        let s = match key {
            "extractor.variant" => self.extractor.variant.to_string(),
            "extractor.threshold" => self.extractor.threshold.to_string(),
            "extractor.gaussian_sigma" => self.extractor.gaussian_sigma.to_string(),
            "extractor.normalized" => self.extractor.normalized.to_string(),
            "map.gap_base" => self.map.gap_base.to_string(),
            "map.gap_relative" => self.map.gap_relative.to_string(),
            "map.min_points" => self.map.min_points.to_string(),
            "robust.weight" => r.robust.kind.to_string(),
            "robust.huber_k" => r.robust.huber_k.to_string(),
            "robust.tukey_c" => r.robust.tukey_c.to_string(),
            "robust.cauchy_c" => r.robust.cauchy_c.to_string(),
            "robust.t_nu" => r.robust.t_nu.to_string(),
            "robust.t_sigma" => r.robust.t_sigma.to_string(),
            "robust.l1_epsilon" => r.robust.l1_epsilon.to_string(),
            "robust.sigma_min" => r.robust.sigma_min.to_string(),
            "registration.max_iterations" => r.max_iterations.to_string(),
            "registration.step_tolerance" => r.step_tolerance.to_string(),
            "registration.max_cost_increases" => r.max_cost_increases.to_string(),
            "registration.inlier_threshold" => r.inlier_threshold.to_string(),
            "registration.condition_limit" => r.condition_limit.to_string(),
            "registration.coarse_to_fine" => r.coarse_to_fine.to_string(),
            "registration.parallel" => r.parallel.to_string(),
            "pipeline.disparity_threshold" => self.disparity_threshold.to_string(),
            "pipeline.velocity_decay" => self.velocity_decay.to_string(),
            "pipeline.motion_model" => self.motion_model.to_string(),
            "pipeline.max_failures" => self.max_failures.to_string(),
            "pipeline.blur_jump_ratio" => self.blur_jump_ratio.to_string(),
            "pipeline.discard_blur_frames" => self.discard_blur_frames.to_string(),
            "pipeline.async_keyframes" => self.async_keyframes.to_string(),
            "dataset.depth_scale" => self.depth_scale.to_string(),
            "dataset.max_dt" => self.max_dt.to_string(),
            "dataset.camera" => self.camera.map_or_else(|| "auto".to_string(), |c| c.to_string()),
            "eval.delta" => self.eval_delta.to_string(),
            "eval.max_dt" => self.eval_max_dt.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    reason: "expected `key = value`".into(),
                });
            };
            cfg.set(key.trim(), value).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    /// All keys with their current values, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extractor.threshold > 0.0) {
            return Err(Error::invalid("extractor.threshold", "must be positive"));
        }
        if !(self.extractor.gaussian_sigma > 0.0) {
            return Err(Error::invalid("extractor.gaussian_sigma", "must be positive"));
        }
        if !(self.disparity_threshold > 0.0) {
            return Err(Error::invalid("pipeline.disparity_threshold", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.velocity_decay) {
            return Err(Error::invalid("pipeline.velocity_decay", "must lie in [0, 1]"));
        }
        if self.registration.max_iterations == 0 {
            return Err(Error::invalid("registration.max_iterations", "must be at least 1"));
        }
        for (name, v) in [
            ("dataset.depth_scale", self.depth_scale),
            ("dataset.max_dt", self.max_dt),
            ("eval.delta", self.eval_delta),
            ("eval.max_dt", self.eval_max_dt),
            ("pipeline.blur_jump_ratio", self.blur_jump_ratio),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        self.registration.robust.validate()
    }
}
