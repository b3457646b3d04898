//! Synthetic registration studies: pose recovery, outlier contamination and
//! GN-versus-distance-field convergence. Shared by the test suites, the
//! benchmarks and the CLI.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annf::{build_annf, DistanceField, NearestNeighbourField};
use crate::dataset::{contaminate_map, render_frame, synthetic_extractor, SyntheticScene};
use crate::error::Result;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::{extractor_pipeline, DepthImage, ExtractorConfig, GrayImage, SemiDenseRegion};
use crate::map::{build_keyframe_map, KeyframeMap, MapConfig};
use crate::registration::{
    compute_residuals, gradient_descent_solve, project_map, register, GradientDescentOptions,
    RegistrationConfig, RegistrationProblem, RegistrationResult,
};
use crate::robust::WeightKind;

/// Keyframe at the origin plus one current frame whose true pose is `truth`.
#[derive(Debug, Clone)]
pub struct RegistrationFixture {
    pub intrinsics: CameraIntrinsics,
    pub map: KeyframeMap,
    pub region: SemiDenseRegion,
    pub field: NearestNeighbourField,
    pub truth: Pose,
}

impl RegistrationFixture {
    /// Renders the keyframe at the identity and the current frame at `truth`.
    pub fn from_scene(scene: &SyntheticScene, truth: Pose, extractor: &ExtractorConfig) -> Result<Self> {
        let (g0, d0) = render_frame(scene, &Pose::identity(), 0)?;
        let (g1, _) = render_frame(scene, &truth, 1)?;
        Self::from_images(&g0, &d0, &g1, scene.intrinsics, truth, extractor)
    }

    /// Keyframe from `(key_gray, key_depth)` placed at the identity.
    pub fn from_images(
        key_gray: &GrayImage,
        key_depth: &DepthImage,
        current: &GrayImage,
        intrinsics: CameraIntrinsics,
        truth: Pose,
        extractor: &ExtractorConfig,
    ) -> Result<Self> {
        let r0 = extractor_pipeline(key_gray, extractor)?;
        let map = build_keyframe_map(&r0, key_depth, &intrinsics, &Pose::identity(), 0, &MapConfig::default())?;
        let region = extractor_pipeline(current, extractor)?;
        let field = build_annf(&region, intrinsics.width, intrinsics.height)?;
        Ok(Self {
            intrinsics,
            map,
            region,
            field,
            truth,
        })
    }

    /// Noise-free desk scene with the synthetic extractor.
    pub fn desk(seed: u64, truth: Pose) -> Result<Self> {
        Self::from_scene(&SyntheticScene::desk(seed, 2), truth, &synthetic_extractor())
    }

    pub fn problem(&self, initial: Pose) -> RegistrationProblem<'_, NearestNeighbourField> {
        RegistrationProblem {
            map: &self.map,
            field: &self.field,
            intr: &self.intrinsics,
            initial,
            sigma: 1.0,
        }
    }

    pub fn solve(&self, initial: Pose, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
        register(&self.problem(initial), &self.region, cfg)
    }

    /// Rotation (degrees) and translation (metres) error of `pose`.
    pub fn error(&self, pose: &Pose) -> (f64, f64) {
        let (a, t) = self.truth.distance(pose);
        (a.to_degrees(), t)
    }

    /// Unweighted `Σ r²` of the projected residuals at `pose`.
    pub fn residual_energy(&self, pose: &Pose) -> Result<f64> {
        let rel = self.map.pose.inverse() * *pose;
        let mut ws = project_map(&self.map, &rel, &self.intrinsics)?;
        compute_residuals(&mut ws, &self.field, &self.map)?;
        Ok(ws.visible_residuals().iter().map(|r| r * r).sum())
    }
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random axis with an angle uniform in `[0, max_deg]`, random direction with
/// a length uniform in `[0, max_m]`.
pub fn random_pose<R: Rng>(rng: &mut R, max_deg: f64, max_m: f64) -> Pose {
    let angle = rng.random_range(0.0..=max_deg).to_radians();
    let axis = random_unit(rng);
    let len = rng.random_range(0.0..=max_m);
    let dir = random_unit(rng);
    Pose::from_axis_angle(&(axis * angle), dir * len)
}

/// Fixed-magnitude perturbation along random directions.
pub fn random_pose_exact<R: Rng>(rng: &mut R, deg: f64, m: f64) -> Pose {
    let axis = random_unit(rng);
    let dir = random_unit(rng);
    Pose::from_axis_angle(&(axis * deg.to_radians()), dir * m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOutcome {
    pub trial: u64,
    pub rot_err_deg: f64,
    pub trans_err_m: f64,
    pub iterations: usize,
    /// `None` when the solver succeeded.
    pub error: Option<String>,
}

impl RecoveryOutcome {
    pub fn within(&self, deg: f64, m: f64, max_iterations: usize) -> bool {
        self.error.is_none() && self.rot_err_deg <= deg && self.trans_err_m <= m && self.iterations <= max_iterations
    }
}

/// One pose-recovery trial on its own scene: the current frame sits at a
/// random motion of up to 2° / 4 cm and the solver starts from a further
/// perturbation of up to `max_deg` / `max_m`.
pub fn recovery_trial(scene_seed: u64, rng_seed: u64, max_deg: f64, max_m: f64, cfg: &RegistrationConfig) -> Result<RecoveryOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let truth = random_pose(&mut rng, 2.0, 0.04);
    let fix = RegistrationFixture::desk(scene_seed, truth)?;
    let init = truth * random_pose(&mut rng, max_deg, max_m);
    Ok(match fix.solve(init, cfg) {
        Ok(res) => {
            let (a, t) = fix.error(&res.pose);
            RecoveryOutcome {
                trial: scene_seed,
                rot_err_deg: a,
                trans_err_m: t,
                iterations: res.iterations,
                error: None,
            }
        }
        Err(e) => {
            let (a, t) = fix.error(&init);
            RecoveryOutcome {
                trial: scene_seed,
                rot_err_deg: a,
                trans_err_m: t,
                iterations: cfg.max_iterations,
                error: Some(e.to_string()),
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStudyRow {
    pub kind: WeightKind,
    /// Degrees.
    pub rmse_rot: f64,
    /// Metres.
    pub rmse_trans: f64,
    /// Trials where the solver returned an error. They count with the error
    /// of the initial guess.
    pub failures: usize,
    pub trials: usize,
}

/// Registration with a fraction of the map displaced as outliers, repeated
/// over `trials` scenes; every weight kind sees the same problems. Initial
/// guesses are off by up to 2° / 5 cm.
pub fn contamination_study(
    trials: usize,
    fraction: f64,
    base_seed: u64,
    kinds: &[WeightKind],
    base_cfg: &RegistrationConfig,
) -> Result<Vec<WeightStudyRow>> {
    let mut sums = vec![(0.0, 0.0, 0usize); kinds.len()];
    for trial in 0..trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_mul(31).wrapping_add(trial));
        let truth = random_pose(&mut rng, 2.0, 0.04);
        let mut fix = RegistrationFixture::desk(base_seed + trial, truth)?;
        fix.map = contaminate_map(&fix.map, &fix.intrinsics, fraction, &mut rng);
        let init = truth * random_pose(&mut rng, 2.0, 0.05);
        for (k, kind) in kinds.iter().enumerate() {
            let mut cfg = *base_cfg;
            cfg.robust.kind = *kind;
            let pose = match fix.solve(init, &cfg) {
                Ok(res) => res.pose,
                Err(_) => {
                    sums[k].2 += 1;
                    init
                }
            };
            let (a, t) = fix.error(&pose);
            sums[k].0 += a * a;
            sums[k].1 += t * t;
        }
    }
    let n = trials.max(1) as f64;
    Ok(kinds
        .iter()
        .zip(sums)
        .map(|(kind, (r, t, f))| WeightStudyRow {
            kind: *kind,
            rmse_rot: (r / n).sqrt(),
            rmse_trans: (t / n).sqrt(),
            failures: f,
            trials,
        })
        .collect())
}

/// Normalized energy per iteration; index 0 is the initial guess (1.0).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCurves {
    pub gn: Vec<f64>,
    pub gd: Vec<f64>,
}

impl ConvergenceCurves {
    pub const CSV_HEADER: &'static str = "iteration,gn,gd";

    /// Value at iteration `k`; a finished method keeps its last value.
    pub fn at(curve: &[f64], k: usize) -> f64 {
        curve.get(k).or(curve.last()).copied().unwrap_or(f64::NAN)
    }

    /// First iteration whose energy is at or below `level`.
    pub fn first_below(curve: &[f64], level: f64) -> Option<usize> {
        curve.iter().position(|&e| e <= level)
    }

    pub fn len(&self) -> usize {
        self.gn.len().max(self.gd.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for k in 0..self.len() {
            s.push_str(&format!("{k},{:.9e},{:.9e}\n", Self::at(&self.gn, k), Self::at(&self.gd, k)));
        }
        s
    }
}

/// GN on the nearest-neighbour field against gradient descent on the
/// distance field, from the same initial pose. Each curve is its own
/// objective divided by its initial value: `Σ r²` of the projected residuals
/// for GN, `Σ d²` of the bilinear distance field for GD.
pub fn convergence_curves(
    fix: &RegistrationFixture,
    initial: &Pose,
    cfg: &RegistrationConfig,
    gd_opts: &GradientDescentOptions,
) -> Result<ConvergenceCurves> {
    let mut cfg = *cfg;
    cfg.keep_trace = true;
    let res = fix.solve(*initial, &cfg)?;
    let e0 = fix.residual_energy(initial)?;
    let mut gn = vec![1.0];
    for row in &res.trace {
        gn.push(fix.residual_energy(&row.pose)? / e0);
    }
    let df = DistanceField::from_annf(&fix.field);
    let (_, out) = gradient_descent_solve(&fix.map, &df, &fix.intrinsics, initial, gd_opts)?;
    let d0 = out.history[0].1;
    let gd = out.history.iter().map(|(_, v)| v / d0).collect();
    Ok(ConvergenceCurves { gn, gd })
}

/// Standard convergence fixture: desk scene 1, current frame at a small
/// oblique motion, solver started 2° about x and 5 cm along z away.
pub fn standard_convergence_fixture() -> Result<(RegistrationFixture, Pose)> {
    let truth = Pose::from_axis_angle(&Vector3::new(0.005, -0.01, 0.003), Vector3::new(0.02, -0.01, 0.01));
    let fix = RegistrationFixture::desk(1, truth)?;
    let init = truth * Pose::from_axis_angle(&(Vector3::x() * 2f64.to_radians()), Vector3::new(0.0, 0.0, 0.05));
    Ok((fix, init))
}

/// Registration config of the convergence study: default weights, with
/// room for the solver to run until its own stopping rule.
pub fn convergence_config() -> RegistrationConfig {
    RegistrationConfig {
        max_iterations: 100,
        ..RegistrationConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_pose_magnitudes_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = random_pose(&mut rng, 3.0, 0.08);
            let (a, t) = Pose::identity().distance(&p);
            assert!(a.to_degrees() <= 3.0 + 1e-9 && t <= 0.08 + 1e-12);
            let q = random_pose_exact(&mut rng, 2.0, 0.05);
            let (a, t) = Pose::identity().distance(&q);
            assert!((a.to_degrees() - 2.0).abs() < 1e-9 && (t - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn curves_hold_last_value() {
        let c = ConvergenceCurves {
            gn: vec![1.0, 0.5],
            gd: vec![1.0, 0.9, 0.8],
        };
        assert_eq!(ConvergenceCurves::at(&c.gn, 2), 0.5);
        assert_eq!(ConvergenceCurves::first_below(&c.gd, 0.85), Some(2));
        assert_eq!(c.csv().lines().count(), 4);
    }
}
