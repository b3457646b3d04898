use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdvo_core::annf::{DistanceField, NearestNeighbourField, NearestNeighbourLookup};
use sdvo_core::dataset::{synthetic_extractor, Curve, SyntheticScene};
use sdvo_core::geometry::{compose, project, CameraIntrinsics, Pose, PoseDelta};
use sdvo_core::image::Pixel;
use sdvo_core::registration::{
    assemble_normal_equations, compute_residuals, condition_number, gauss_newton_solve, gradient_descent,
    gradient_descent_solve, jacobian_row, project_map, GradientDescentOptions, RegistrationConfig,
    RegistrationProblem,
};
use sdvo_core::robust::WeightKind;
use sdvo_core::study::{random_pose, random_pose_exact, random_unit, RegistrationFixture};
use sdvo_core::Result;

fn ls_config() -> RegistrationConfig {
    let mut cfg = RegistrationConfig::default();
    cfg.robust.kind = WeightKind::LeastSquares;
    cfg
}

fn small_motion() -> Pose {
    Pose::from_axis_angle(&Vector3::new(0.004, -0.006, 0.002), Vector3::new(0.015, -0.01, 0.008))
}

/// Counts every nearest-neighbour query.
struct CountingField<'a> {
    inner: &'a NearestNeighbourField,
    lookups: AtomicUsize,
}

impl NearestNeighbourLookup for CountingField<'_> {
    fn width(&self) -> usize {
        self.inner.width()
    }
    fn height(&self) -> usize {
        self.inner.height()
    }
    fn lookup(&self, p: &Vector2<f64>) -> Result<Pixel> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        self.inner.lookup(p)
    }
}

#[test]
fn analytic_jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let f = rng.random_range(300.0..800.0);
        let intr = CameraIntrinsics::new(f, f * rng.random_range(0.95..1.05), 319.5, 239.5, 640, 480).unwrap();
        let rel = random_pose(&mut rng, 15.0, 0.3);
        // A point in view of `rel`, expressed in the keyframe.
        let z = rng.random_range(0.5..5.0);
        let pix = Vector2::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
        let p_cam = Vector3::new((pix.x - intr.cx) / intr.fx * z, (pix.y - intr.cy) / intr.fy * z, z);
        let s = rel.transform_point(&p_cam);
        let g = {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Vector2::new(a.cos(), a.sin())
        };
        let residual = |d: &Vector6<f64>| {
            let moved = compose(&rel, &PoseDelta(*d));
            g.dot(&project(&intr, &moved.to_camera(&s)).unwrap())
        };
        let mut fd = Vector6::zeros();
        for k in 0..6 {
            let mut e = Vector6::zeros();
            e[k] = h;
            fd[k] = (residual(&e) - residual(&-e)) / (2.0 * h);
        }
        let j = jacobian_row(&intr, &rel, &rel.to_camera(&s), &g);
        let rel_err = (j - fd).norm() / j.norm().max(1e-12);
        worst = worst.max(rel_err);
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn jacobian_assembly_performs_no_lookups() {
    let fix = RegistrationFixture::desk(2, small_motion()).unwrap();
    let counting = CountingField {
        inner: &fix.field,
        lookups: AtomicUsize::new(0),
    };
    let intr = fix.intrinsics;
    let mut ws = project_map(&fix.map, &fix.truth, &intr).unwrap();
    compute_residuals(&mut ws, &counting, &fix.map).unwrap();
    let after_residuals = counting.lookups.load(Ordering::Relaxed);
    assert_eq!(after_residuals, ws.visible_count());
    let frozen = ws.clone();
    let (h, b) = assemble_normal_equations(&ws, &fix.map, &intr, &fix.truth);
    assert_eq!(counting.lookups.load(Ordering::Relaxed), after_residuals);
    assert_eq!(ws, frozen);
    assert!(h.iter().chain(b.iter()).all(|x| x.is_finite()));
}

#[test]
fn solver_looks_up_once_per_point_per_evaluation() {
    let fix = RegistrationFixture::desk(3, small_motion()).unwrap();
    let counting = CountingField {
        inner: &fix.field,
        lookups: AtomicUsize::new(0),
    };
    let init = fix.truth * Pose::from_axis_angle(&Vector3::new(0.0, 0.004, 0.0), Vector3::new(0.005, 0.0, 0.0));
    let problem = RegistrationProblem {
        map: &fix.map,
        field: &counting,
        intr: &fix.intrinsics,
        initial: init,
        sigma: 1.0,
    };
    let mut cfg = ls_config();
    cfg.parallel = false;
    let res = gauss_newton_solve(&problem, &cfg).unwrap();
    let lookups = counting.lookups.load(Ordering::Relaxed);
    // The motion is small enough that no point leaves the image, so every
    // residual evaluation looks each point up exactly once and the Jacobian
    // and normal equations add nothing.
    assert_eq!(res.visible_count, fix.map.len());
    assert_eq!(lookups, res.evaluations * fix.map.len());
    assert!(res.evaluations >= res.iterations);
}

#[test]
fn initial_guess_at_ground_truth_is_already_converged() {
    // Same frame twice: every map point projects onto its own region pixel.
    let fix = RegistrationFixture::desk(4, Pose::identity()).unwrap();
    for kind in WeightKind::ALL {
        let mut cfg = RegistrationConfig::default();
        cfg.robust.kind = kind;
        let res = fix.solve(Pose::identity(), &cfg).unwrap();
        assert!(res.iterations <= 2, "{kind}: {} iterations", res.iterations);
        let (a, t) = fix.error(&res.pose);
        assert!(a < 1e-6 && t < 1e-8, "{kind}: moved {a} deg {t} m");
        assert!(res.converged);
        // L1 weights are 1/ε at r = 0 and blow rounding-level residuals up.
        if kind != WeightKind::L1 {
            assert!(res.gradient_norm <= 1e-6 * (1.0 + res.final_cost), "{kind}: gradient {}", res.gradient_norm);
        }
    }
}

#[test]
fn recovers_two_degrees_and_five_centimetres() {
    let fix = RegistrationFixture::desk(1, small_motion()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let init = fix.truth * random_pose_exact(&mut rng, 2.0, 0.05);
        let mut cfg = ls_config();
        cfg.max_iterations = 20;
        let res = fix.solve(init, &cfg).unwrap();
        let (a, t) = fix.error(&res.pose);
        assert!(a <= 0.05 && t <= 0.002 && res.iterations <= 20, "{a} deg {t} m in {} iterations", res.iterations);
    }
}

#[test]
fn t_distribution_survives_contamination_that_breaks_least_squares() {
    let mut fix = RegistrationFixture::desk(1, small_motion()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    fix.map = sdvo_core::dataset::contaminate_map(&fix.map, &fix.intrinsics, 0.2, &mut rng);
    let init = fix.truth * Pose::from_axis_angle(&(Vector3::x() * 2f64.to_radians()), Vector3::new(0.0, 0.0, 0.05));
    let t = fix.solve(init, &RegistrationConfig::default()).unwrap();
    let (ta, tt) = fix.error(&t.pose);
    assert!(ta <= 0.2 && tt <= 0.005, "t-distribution: {ta} deg {tt} m");
    let ls = fix.solve(init, &ls_config()).unwrap();
    let (la, lt) = fix.error(&ls.pose);
    assert!(la > 0.2 || lt > 0.005, "least squares unexpectedly within bounds: {la} deg {lt} m");
}

/// All curves flattened onto the plane z = 2 m, background plane behind.
fn planar_scene(seed: u64) -> SyntheticScene {
    let mut scene = SyntheticScene::desk(seed, 2);
    scene.curves = scene
        .curves
        .iter()
        .map(|c| Curve {
            points: c.points.iter().map(|p| p * (2.0 / p.z)).collect(),
            ..c.clone()
        })
        .collect();
    scene
}

#[test]
fn single_plane_is_well_conditioned() {
    let fix = RegistrationFixture::from_scene(&planar_scene(5), small_motion(), &synthetic_extractor()).unwrap();
    let intr = fix.intrinsics;
    let mut ws = project_map(&fix.map, &fix.truth, &intr).unwrap();
    compute_residuals(&mut ws, &fix.field, &fix.map).unwrap();
    ws.apply_weights(&sdvo_core::WeightFunction::LeastSquares);
    let (h, _) = assemble_normal_equations(&ws, &fix.map, &intr, &fix.truth);
    let cond = condition_number(&h);
    assert!(cond < 1e8, "condition number {cond:e}");
    // And the plane is actually trackable.
    let init = fix.truth * Pose::from_axis_angle(&Vector3::new(0.0, 0.01, 0.0), Vector3::new(0.01, 0.0, 0.0));
    let res = fix.solve(init, &ls_config()).unwrap();
    let (a, t) = fix.error(&res.pose);
    assert!(a < 0.05 && t < 0.002, "{a} deg {t} m");
}

#[test]
fn least_squares_cost_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for seed in 0..8 {
        let fix = RegistrationFixture::desk(40 + seed, random_pose(&mut rng, 2.0, 0.04)).unwrap();
        let init = fix.truth * random_pose(&mut rng, 3.0, 0.08);
        let mut cfg = ls_config();
        cfg.keep_trace = true;
        let res = fix.solve(init, &cfg).unwrap();
        let mut costs: Vec<f64> = res.trace.iter().map(|r| r.cost).collect();
        costs.push(res.final_cost);
        for w in costs.windows(2) {
            assert!(w[1] <= w[0], "cost rose from {} to {}", w[0], w[1]);
        }
    }
}

#[test]
fn recovery_error_shrinks_with_the_perturbation() {
    // Mean rotation error after 3 iterations over a fixed set of directions.
    let fix = RegistrationFixture::desk(6, small_motion()).unwrap();
    let mut cfg = ls_config();
    cfg.max_iterations = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let dirs: Vec<(Vector3<f64>, Vector3<f64>)> = (0..8).map(|_| (random_unit(&mut rng), random_unit(&mut rng))).collect();
    let mean_err = |deg: f64, m: f64| {
        dirs.iter()
            .map(|(a, d)| {
                let init = fix.truth * Pose::from_axis_angle(&(a * deg.to_radians()), d * m);
                let res = fix.solve(init, &cfg).unwrap();
                let (ea, et) = fix.error(&res.pose);
                ea + et * 100.0
            })
            .sum::<f64>()
            / dirs.len() as f64
    };
    let errs: Vec<f64> = [(3.0, 0.08), (2.0, 0.05), (1.0, 0.025), (0.5, 0.0125)].iter().map(|&(d, m)| mean_err(d, m)).collect();
    for w in errs.windows(2) {
        assert!(w[1] <= w[0], "errors {errs:?}");
    }
}

#[test]
fn gradient_descent_finds_the_minimum_of_a_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let q = a * a.transpose() + Matrix6::identity();
    let target = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let f = |x: &Vector6<f64>| {
        let d = x - target;
        Some(((d.transpose() * q * d)[0], 2.0 * q * d))
    };
    let opts = GradientDescentOptions {
        max_iterations: 100_000,
        step_tolerance: 1e-12,
        ..GradientDescentOptions::default()
    };
    let out = gradient_descent(Vector6::zeros(), f, |x, d| x + d, &opts).unwrap();
    assert!((out.state - target).amax() < 1e-4, "{:?}", out.state - target);
}

#[test]
fn gradient_descent_does_not_move_a_registered_input() {
    let fix = RegistrationFixture::desk(7, Pose::identity()).unwrap();
    let df = DistanceField::from_annf(&fix.field);
    let (pose, out) = gradient_descent_solve(&fix.map, &df, &fix.intrinsics, &Pose::identity(), &GradientDescentOptions::default()).unwrap();
    assert!(out.value < 1e-12, "energy {}", out.value);
    let (a, t) = Pose::identity().distance(&pose);
    assert!(a < 1e-9 && t < 1e-9);
}

#[test]
fn parallel_and_sequential_solves_are_bit_identical() {
    let fix = RegistrationFixture::desk(8, small_motion()).unwrap();
    let init = fix.truth * Pose::from_axis_angle(&Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.0, 0.02, 0.0));
    let mut a = RegistrationConfig::default();
    a.parallel = true;
    let mut b = a;
    b.parallel = false;
    let ra = fix.solve(init, &a).unwrap();
    let rb = fix.solve(init, &b).unwrap();
    assert_eq!(ra.pose.rotation, rb.pose.rotation);
    assert_eq!(ra.pose.translation, rb.pose.translation);
    assert_eq!(ra.iterations, rb.iterations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projected_residual_is_bounded_by_the_raw_one(seed in 0u64..4, rot in 0.0f64..3.0, trans in 0.0f64..0.08, dir_seed in 0u64..1000) {
        let fix = RegistrationFixture::desk(seed, Pose::identity()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(dir_seed);
        let pose = random_pose_exact(&mut rng, rot, trans);
        let mut ws = project_map(&fix.map, &pose, &fix.intrinsics).unwrap();
        compute_residuals(&mut ws, &fix.field, &fix.map).unwrap();
        for e in &ws.entries {
            if e.visible {
                prop_assert!(e.r.abs() <= e.v.norm() + 1e-9);
            } else {
                prop_assert_eq!(e.weight, 0.0);
            }
        }
    }
}
