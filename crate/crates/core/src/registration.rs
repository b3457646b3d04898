//! 2D-3D registration of a keyframe map against the current frame's
//! nearest-neighbour field.
//!
//! Poses inside the solver are expressed relative to the keyframe camera
//! (`rel = keyframe⁻¹ · current`), so map points are used in the frame they
//! were built in. Updates follow [`compose`]: `R ← R·C(c)`, `t ← t + δt`.

use nalgebra::{Matrix2x3, Matrix3x6, Matrix6, Vector2, Vector3, Vector6};
use rayon::prelude::*;

use crate::annf::{build_annf_from_pixels, sample_bilinear_with_gradient, DistanceField, NearestNeighbourLookup};
use crate::error::{Error, Result};
use crate::geometry::{compose, project_unchecked, skew, CameraIntrinsics, Pose, PoseDelta};
use crate::image::{Pixel, SemiDenseRegion};
use crate::map::KeyframeMap;
use crate::robust::{median, RobustConfig, WeightFunction, WeightKind};

/// Points per reduction chunk. Fixed so the summation order does not depend
/// on the thread count.
const CHUNK: usize = 512;
const LINE_SEARCH_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub robust: RobustConfig,
    pub max_iterations: usize,
    /// Stop once `‖Δ‖∞` falls below this.
    pub step_tolerance: f64,
    /// Consecutive iterations without cost decrease before giving up.
    pub max_cost_increases: usize,
    /// `|r|` bound (pixels) for counting a point as an inlier.
    pub inlier_threshold: f64,
    pub condition_limit: f64,
    pub coarse_to_fine: bool,
    pub parallel: bool,
    pub keep_trace: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            robust: RobustConfig::default(),
            max_iterations: 30,
            step_tolerance: 1e-6,
            max_cost_increases: 5,
            inlier_threshold: 2.0,
            condition_limit: 1e12,
            coarse_to_fine: false,
            parallel: true,
            keep_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualEntry {
    /// Camera-frame point at the current pose.
    pub p_cam: Vector3<f64>,
    /// Projection into the current image.
    pub o: Vector2<f64>,
    pub nn: Pixel,
    /// `o - nn`.
    pub v: Vector2<f64>,
    /// `v · g` with `g` the keyframe gradient direction.
    pub r: f64,
    pub weight: f64,
    pub visible: bool,
}

impl ResidualEntry {
    fn hidden(p_cam: Vector3<f64>) -> Self {
        Self {
            p_cam,
            o: Vector2::new(f64::NAN, f64::NAN),
            nn: [0, 0],
            v: Vector2::zeros(),
            r: 0.0,
            weight: 0.0,
            visible: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualWorkspace {
    pub entries: Vec<ResidualEntry>,
}

impl ResidualWorkspace {
    pub fn visible_count(&self) -> usize {
        self.entries.iter().filter(|e| e.visible).count()
    }

    pub fn visible_residuals(&self) -> Vec<f64> {
        self.entries.iter().filter(|e| e.visible).map(|e| e.r).collect()
    }

    /// `Σ ρ(r)` over visible points.
    pub fn cost(&self, wf: &WeightFunction) -> f64 {
        self.entries.iter().filter(|e| e.visible).map(|e| wf.rho(e.r)).sum()
    }

    pub fn apply_weights(&mut self, wf: &WeightFunction) {
        for e in &mut self.entries {
            e.weight = if e.visible { wf.weight(e.r) } else { 0.0 };
        }
    }

    /// Median of `‖o - source_pixel‖` over visible points.
    pub fn median_disparity(&self, map: &KeyframeMap) -> f64 {
        let d: Vec<f64> = self
            .entries
            .iter()
            .zip(&map.points)
            .filter(|(e, _)| e.visible)
            .map(|(e, p)| (e.o - Vector2::new(p.source_pixel[0] as f64, p.source_pixel[1] as f64)).norm())
            .collect();
        median(&d).unwrap_or(0.0)
    }
}

/// Projects every map point with the pose `rel` of the current camera in the
/// keyframe frame. Points behind the camera or outside the image are hidden.
pub fn project_map(map: &KeyframeMap, rel: &Pose, intr: &CameraIntrinsics) -> Result<ResidualWorkspace> {
    project_map_with(map, rel, intr, false)
}

fn project_one(s: &Vector3<f64>, rel: &Pose, intr: &CameraIntrinsics) -> ResidualEntry {
    let p = rel.to_camera(s);
    if p.z <= 0.0 {
        return ResidualEntry::hidden(p);
    }
    let o = project_unchecked(intr, &p);
    if !intr.contains(&o) {
        return ResidualEntry::hidden(p);
    }
    ResidualEntry {
        o,
        visible: true,
        ..ResidualEntry::hidden(p)
    }
}

fn project_map_with(map: &KeyframeMap, rel: &Pose, intr: &CameraIntrinsics, parallel: bool) -> Result<ResidualWorkspace> {
    let entries: Vec<ResidualEntry> = if parallel {
        map.points.par_iter().map(|pt| project_one(&pt.s, rel, intr)).collect()
    } else {
        map.points.iter().map(|pt| project_one(&pt.s, rel, intr)).collect()
    };
    let ws = ResidualWorkspace { entries };
    if ws.visible_count() == 0 {
        return Err(Error::AllInvisible);
    }
    Ok(ws)
}

/// Nearest-neighbour lookup and projected residual for every visible point.
pub fn compute_residuals<L: NearestNeighbourLookup>(ws: &mut ResidualWorkspace, field: &L, map: &KeyframeMap) -> Result<()> {
    compute_residuals_with(ws, field, map, false)
}

fn residual_one<L: NearestNeighbourLookup>(e: &mut ResidualEntry, field: &L, g: &Vector2<f64>) -> Result<()> {
    if !e.visible {
        return Ok(());
    }
    let nn = field.lookup(&e.o)?;
    e.nn = nn;
    e.v = e.o - Vector2::new(nn[0] as f64, nn[1] as f64);
    e.r = e.v.dot(g);
    Ok(())
}

fn compute_residuals_with<L: NearestNeighbourLookup>(
    ws: &mut ResidualWorkspace,
    field: &L,
    map: &KeyframeMap,
    parallel: bool,
) -> Result<()> {
    if parallel {
        ws.entries
            .par_iter_mut()
            .zip(map.points.par_iter())
            .try_for_each(|(e, pt)| residual_one(e, field, &pt.grad_dir))
    } else {
        ws.entries
            .iter_mut()
            .zip(&map.points)
            .try_for_each(|(e, pt)| residual_one(e, field, &pt.grad_dir))
    }
}

/// Derivative of the pinhole projection at the camera-frame point `p`.
#[inline]
pub fn projection_jacobian(intr: &CameraIntrinsics, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        intr.fx * iz,
        0.0,
        -intr.fx * p.x * iz * iz,
        0.0,
        intr.fy * iz,
        -intr.fy * p.y * iz * iz,
    )
}

/// `∂p/∂θ = [2[p]ₓ | -Rᵀ]`.
#[inline]
fn point_jacobian(rel: &Pose, p: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut m = Matrix3x6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(skew(p) * 2.0));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rel.rotation.transpose()));
    m
}

/// `∂o/∂θ` at `θ = 0`, `θ = [c, δt]`.
#[inline]
pub fn pixel_jacobian(intr: &CameraIntrinsics, rel: &Pose, p: &Vector3<f64>) -> nalgebra::Matrix2x6<f64> {
    projection_jacobian(intr, p) * point_jacobian(rel, p)
}

/// Row of the residual Jacobian: `gᵀ ∂o/∂θ`, with `nn` and `g` held fixed.
#[inline]
pub fn jacobian_row(intr: &CameraIntrinsics, rel: &Pose, p: &Vector3<f64>, g: &Vector2<f64>) -> Vector6<f64> {
    (g.transpose() * pixel_jacobian(intr, rel, p)).transpose()
}

/// `(JᵀWJ, JᵀWr)` from the workspace weights and residuals.
pub fn assemble_normal_equations(
    ws: &ResidualWorkspace,
    map: &KeyframeMap,
    intr: &CameraIntrinsics,
    rel: &Pose,
) -> (Matrix6<f64>, Vector6<f64>) {
    assemble_with(ws, map, intr, rel, false)
}

fn assemble_chunk(
    entries: &[ResidualEntry],
    points: &[crate::map::MapPoint],
    intr: &CameraIntrinsics,
    rel: &Pose,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut b = Vector6::zeros();
    for (e, pt) in entries.iter().zip(points) {
        if !e.visible || e.weight == 0.0 {
            continue;
        }
        let j = jacobian_row(intr, rel, &e.p_cam, &pt.grad_dir);
        h.syger(e.weight, &j, &j, 1.0);
        b.axpy(e.weight * e.r, &j, 1.0);
    }
    (h, b)
}

fn assemble_with(
    ws: &ResidualWorkspace,
    map: &KeyframeMap,
    intr: &CameraIntrinsics,
    rel: &Pose,
    parallel: bool,
) -> (Matrix6<f64>, Vector6<f64>) {
    let partials: Vec<(Matrix6<f64>, Vector6<f64>)> = if parallel {
        ws.entries
            .par_chunks(CHUNK)
            .zip(map.points.par_chunks(CHUNK))
            .map(|(e, p)| assemble_chunk(e, p, intr, rel))
            .collect()
    } else {
        ws.entries
            .chunks(CHUNK)
            .zip(map.points.chunks(CHUNK))
            .map(|(e, p)| assemble_chunk(e, p, intr, rel))
            .collect()
    };
    let mut h = Matrix6::zeros();
    let mut b = Vector6::zeros();
    for (ph, pb) in partials {
        h += ph;
        b += pb;
    }
    // syger fills the lower triangle only.
    h.fill_upper_triangle_with_lower_triangle();
    (h, b)
}

/// `λmax / λmin` of a symmetric matrix; infinite if not positive definite.
pub fn condition_number(h: &Matrix6<f64>) -> f64 {
    let eig = h.symmetric_eigenvalues();
    let lo = eig.min();
    let hi = eig.max();
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// `Δ = -H⁻¹ b`.
pub fn solve_normal_equations(h: &Matrix6<f64>, b: &Vector6<f64>, condition_limit: f64) -> Result<Vector6<f64>> {
    let cond = condition_number(h);
    if !(cond <= condition_limit) {
        return Err(Error::Singular(cond));
    }
    let chol = h.cholesky().ok_or(Error::Singular(cond))?;
    Ok(-chol.solve(b))
}

/// Inputs of one registration.
#[derive(Debug, Clone, Copy)]
pub struct RegistrationProblem<'a, L> {
    pub map: &'a KeyframeMap,
    pub field: &'a L,
    pub intr: &'a CameraIntrinsics,
    /// Initial guess of the current camera pose in the world.
    pub initial: Pose,
    /// Seed for the t-distribution scale.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Robust cost `Σ ρ(r)` before the update.
    pub cost: f64,
    /// `‖Δ‖∞` of the computed step.
    pub step_norm: f64,
    pub inliers: usize,
    pub sigma: f64,
    /// Fraction of `Δ` applied; `0` when the line search found no decrease.
    pub step_scale: f64,
    /// World pose after the iteration.
    pub pose: Pose,
}

pub const TRACE_CSV_HEADER: &str = "iter,cost,step_norm,inliers,sigma,step_scale";

impl TraceRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{},{:.6e},{}",
            self.iteration, self.cost, self.step_norm, self.inliers, self.sigma, self.step_scale
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Current camera in the world.
    pub pose: Pose,
    pub iterations: usize,
    pub final_cost: f64,
    pub inlier_count: usize,
    pub visible_count: usize,
    pub residual_rms: f64,
    pub converged: bool,
    /// Stopped because no step along Δ lowered the cost.
    pub stalled: bool,
    pub median_disparity: f64,
    /// Scale estimate used by the final weights.
    pub sigma: f64,
    /// `‖JᵀWr‖` at the returned pose.
    pub gradient_norm: f64,
    /// Number of residual evaluations (each does one lookup per visible point).
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
}

struct Evaluator<'a, L> {
    map: &'a KeyframeMap,
    field: &'a L,
    intr: &'a CameraIntrinsics,
    parallel: bool,
    count: usize,
}

impl<L: NearestNeighbourLookup> Evaluator<'_, L> {
    fn eval(&mut self, rel: &Pose) -> Result<ResidualWorkspace> {
        self.count += 1;
        let mut ws = project_map_with(self.map, rel, self.intr, self.parallel)?;
        compute_residuals_with(&mut ws, self.field, self.map, self.parallel)?;
        Ok(ws)
    }
}

fn weights_for(cfg: &RegistrationConfig, ws: &ResidualWorkspace, sigma: f64) -> (WeightFunction, f64) {
    cfg.robust.instantiate(&ws.visible_residuals(), sigma)
}

/// Iteratively reweighted Gauss-Newton with fixed nearest neighbours per iteration.
pub fn gauss_newton_solve<L: NearestNeighbourLookup>(
    problem: &RegistrationProblem<'_, L>,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.robust.validate()?;
    let map = problem.map;
    let intr = problem.intr;
    if map.is_empty() {
        return Err(Error::EmptyMap { found: 0, required: 1 });
    }
    let kf = map.pose;
    let mut ev = Evaluator {
        map,
        field: problem.field,
        intr,
        parallel: cfg.parallel && map.len() >= 4 * CHUNK,
        count: 0,
    };
    let mut sigma = if problem.sigma > 0.0 { problem.sigma } else { cfg.robust.t_sigma };
    let mut rel = kf.inverse() * problem.initial;
    let mut ws = ev.eval(&rel)?;
    let mut increases = 0;
    let mut prev_cost = f64::INFINITY;
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;
    let mut trace = Vec::new();

    for it in 1..=cfg.max_iterations {
        iterations = it;
        let (wf, scale) = weights_for(cfg, &ws, sigma);
        if cfg.robust.kind == WeightKind::TDistribution {
            sigma = scale;
        }
        ws.apply_weights(&wf);
        let cost = ws.cost(&wf);
        // Costs under successive weight functions can still rise when the scale shrinks.
        if cost > prev_cost {
            increases += 1;
            if increases >= cfg.max_cost_increases {
                return Err(Error::Diverged(it));
            }
        } else {
            increases = 0;
        }
        prev_cost = cost;
        let (h, b) = assemble_with(&ws, map, intr, &rel, ev.parallel);
        let delta = solve_normal_equations(&h, &b, cfg.condition_limit)?;
        let step_norm = delta.amax();
        let inliers = count_inliers(&ws, cfg.inlier_threshold);

        if step_norm < cfg.step_tolerance {
            rel = compose(&rel, &PoseDelta(delta));
            ws = ev.eval(&rel)?;
            converged = true;
            if cfg.keep_trace {
                trace.push(TraceRow {
                    iteration: it,
                    cost,
                    step_norm,
                    inliers,
                    sigma: scale,
                    step_scale: 1.0,
                    pose: kf * rel,
                });
            }
            break;
        }

        // Backtracking along Δ; only steps that do not raise the cost are taken.
        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..LINE_SEARCH_STEPS {
            let cand = compose(&rel, &PoseDelta(delta * step));
            match ev.eval(&cand) {
                Ok(cws) if cws.cost(&wf) <= cost => {
                    accepted = Some((cand, cws));
                    break;
                }
                Ok(_) | Err(Error::AllInvisible) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let step_scale = match accepted {
            Some((cand, cws)) => {
                rel = cand;
                ws = cws;
                step
            }
            None => 0.0,
        };
        if cfg.keep_trace {
            trace.push(TraceRow {
                iteration: it,
                cost,
                step_norm,
                inliers,
                sigma: scale,
                step_scale,
                pose: kf * rel,
            });
        }
        if step_scale == 0.0 {
            // No descent along Δ: the next iteration would repeat this one.
            stalled = true;
            break;
        }
    }

    let (wf, scale) = weights_for(cfg, &ws, sigma);
    if cfg.robust.kind == WeightKind::TDistribution {
        sigma = scale;
    }
    ws.apply_weights(&wf);
    let (_, b) = assemble_with(&ws, map, intr, &rel, ev.parallel);
    let visible = ws.visible_count();
    let rs = ws.visible_residuals();
    Ok(RegistrationResult {
        pose: kf * rel,
        iterations,
        final_cost: ws.cost(&wf),
        inlier_count: count_inliers(&ws, cfg.inlier_threshold),
        visible_count: visible,
        residual_rms: (rs.iter().map(|r| r * r).sum::<f64>() / visible as f64).sqrt(),
        converged,
        stalled,
        median_disparity: ws.median_disparity(map),
        sigma: if cfg.robust.kind == WeightKind::TDistribution { sigma } else { scale },
        gradient_norm: b.norm(),
        evaluations: ev.count,
        trace,
    })
}

fn count_inliers(ws: &ResidualWorkspace, threshold: f64) -> usize {
    ws.entries.iter().filter(|e| e.visible && e.r.abs() <= threshold).count()
}

/// Region decimated by 2 in each direction, first gradient direction kept.
pub fn half_resolution_region(region: &SemiDenseRegion) -> SemiDenseRegion {
    let (w, h) = (region.width / 2, region.height / 2);
    let mut seen = vec![false; w * h];
    let mut pixels = Vec::new();
    let mut grad_dirs = Vec::new();
    for (&[u, v], g) in region.pixels.iter().zip(&region.grad_dirs) {
        let (hu, hv) = ((u / 2) as usize, (v / 2) as usize);
        if hu >= w || hv >= h || seen[hv * w + hu] {
            continue;
        }
        seen[hv * w + hu] = true;
        pixels.push([hu as u32, hv as u32]);
        grad_dirs.push(*g);
    }
    SemiDenseRegion {
        width: w,
        height: h,
        pixels,
        grad_dirs,
    }
}

/// Gauss-Newton, optionally preceded by a half-resolution pass.
pub fn register<L: NearestNeighbourLookup>(
    problem: &RegistrationProblem<'_, L>,
    region: &SemiDenseRegion,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    if !cfg.coarse_to_fine {
        return gauss_newton_solve(problem, cfg);
    }
    let half_intr = problem.intr.half();
    let half = half_resolution_region(region);
    let mut initial = problem.initial;
    let mut sigma = problem.sigma;
    let mut coarse_iters = 0;
    if !half.is_empty() {
        let field = build_annf_from_pixels(&half.pixels, half_intr.width, half_intr.height)?;
        let coarse = RegistrationProblem {
            map: problem.map,
            field: &field,
            intr: &half_intr,
            initial,
            sigma,
        };
        if let Ok(res) = gauss_newton_solve(&coarse, cfg) {
            initial = res.pose;
            sigma = res.sigma * 2.0;
            coarse_iters = res.iterations;
        }
    }
    let fine = RegistrationProblem {
        initial,
        sigma,
        ..*problem
    };
    let mut res = gauss_newton_solve(&fine, cfg)?;
    res.iterations += coarse_iters;
    Ok(res)
}

/// Options of the generic gradient-descent minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientDescentOptions {
    pub max_iterations: usize,
    /// `‖α g‖∞` of the very first trial step.
    pub initial_step: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Stop once the accepted step's `‖α g‖∞` falls below this.
    pub step_tolerance: f64,
    pub max_halvings: usize,
}

impl Default for GradientDescentOptions {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            initial_step: 0.01,
            armijo: 1e-4,
            step_tolerance: 1e-9,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradientDescentOutcome<S> {
    pub state: S,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// State and value after each iteration, starting with the initial one.
    pub history: Vec<(S, f64)>,
}

/// Steepest descent with a backtracking line search. Each iteration starts
/// from twice the previously accepted step and halves until the Armijo
/// condition holds. `f` returns `None` where the objective is undefined.
pub fn gradient_descent<S, F, R>(x0: S, mut f: F, retract: R, opts: &GradientDescentOptions) -> Result<GradientDescentOutcome<S>>
where
    S: Clone,
    F: FnMut(&S) -> Option<(f64, Vector6<f64>)>,
    R: Fn(&S, &Vector6<f64>) -> S,
{
    let (mut value, mut grad) = f(&x0).ok_or(Error::AllInvisible)?;
    let mut x = x0;
    let mut history = vec![(x.clone(), value)];
    let mut alpha = if grad.amax() > 0.0 { opts.initial_step / grad.amax() } else { 0.0 };
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iterations {
        iterations = it;
        let g2 = grad.norm_squared();
        if g2 == 0.0 {
            converged = true;
            break;
        }
        let mut found = None;
        for _ in 0..=opts.max_halvings {
            let cand = retract(&x, &(-alpha * grad));
            if let Some((v, g)) = f(&cand) {
                if v <= value - opts.armijo * alpha * g2 {
                    found = Some((cand, v, g));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((cand, v, g)) = found else {
            converged = true;
            break;
        };
        let moved = alpha * grad.amax();
        x = cand;
        value = v;
        grad = g;
        history.push((x.clone(), value));
        if moved < opts.step_tolerance {
            converged = true;
            break;
        }
        alpha *= 2.0;
    }
    Ok(GradientDescentOutcome {
        state: x,
        value,
        iterations,
        converged,
        history,
    })
}

/// `Σ d(o)²` over visible points, sampled bilinearly, and its pose gradient.
pub fn distance_energy(
    map: &KeyframeMap,
    field: &DistanceField,
    intr: &CameraIntrinsics,
    rel: &Pose,
) -> Option<(f64, Vector6<f64>)> {
    let mut e = 0.0;
    let mut g = Vector6::zeros();
    let mut visible = 0;
    for pt in &map.points {
        let entry = project_one(&pt.s, rel, intr);
        if !entry.visible {
            continue;
        }
        let Ok((d, grad)) = sample_bilinear_with_gradient(field, &entry.o) else {
            continue;
        };
        visible += 1;
        e += d * d;
        let j = pixel_jacobian(intr, rel, &entry.p_cam);
        g += (grad.transpose() * j).transpose() * (2.0 * d);
    }
    (visible > 0).then_some((e, g))
}

/// Minimizes `Σ d(o)²` over the distance field by gradient descent.
pub fn gradient_descent_solve(
    map: &KeyframeMap,
    field: &DistanceField,
    intr: &CameraIntrinsics,
    initial: &Pose,
    opts: &GradientDescentOptions,
) -> Result<(Pose, GradientDescentOutcome<Pose>)> {
    if map.is_empty() {
        return Err(Error::EmptyMap { found: 0, required: 1 });
    }
    let kf = map.pose;
    let rel0 = kf.inverse() * *initial;
    let out = gradient_descent(
        rel0,
        |rel| distance_energy(map, field, intr, rel),
        |rel, d| compose(rel, &PoseDelta(*d)),
        opts,
    )?;
    Ok((kf * out.state, out))
}
