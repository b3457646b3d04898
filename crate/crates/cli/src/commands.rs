use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::Vector3;
use sdvo_core::dataset::{
    load_depth, load_gray, read_trajectory, render_synthetic, synthetic_extractor, write_synthetic_dataset, write_trajectory,
    JitterDistribution, SyntheticScene, TrajectoryEntry, TumDataset,
};
use sdvo_core::image::{extractor_pipeline, ExtractorVariant};
use sdvo_core::pipeline::{collect_gt_residuals, read_residual_dump, resolve_intrinsics, run_sequence, write_residual_dump, RunOutput, TrackingStatus};
use sdvo_core::registration::{GradientDescentOptions, TRACE_CSV_HEADER};
use sdvo_core::robust::{compare_model_likelihoods, fit_sensor_model, WeightKind};
use sdvo_core::study::{contamination_study, convergence_curves, standard_convergence_fixture, ConvergenceCurves, RegistrationFixture};
use sdvo_core::{compute_rpe, Pose, RpeReport, VoConfig};

use crate::{
    AblateExtractorArgs, AblateWeightsArgs, ConvergenceArgs, EvalArgs, FitSensorArgs, Format, Report, RunArgs, SynthArgs,
    DATASET_CONFIG_FILE,
};

fn open_dataset(dir: &Path, cfg: &VoConfig) -> Result<TumDataset> {
    TumDataset::open(dir, cfg.max_dt).with_context(|| format!("opening dataset {}", dir.display()))
}

fn require_groundtruth(ds: &TumDataset) -> Result<()> {
    if !ds.has_groundtruth() {
        bail!("{} has no groundtruth.txt", ds.root.display());
    }
    Ok(())
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.config.load(Some(&a.dataset))?;
    if a.deterministic {
        cfg.async_keyframes = false;
    }
    if a.discard_blur_frames {
        cfg.discard_blur_frames = true;
    }
    let ds = open_dataset(&a.dataset, &cfg)?;
    let run = run_sequence(&ds, &cfg)?;
    write_trajectory(&a.out, &run.trajectory).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.trace {
        std::fs::write(path, frame_log(&run)).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut r = Report::new(&[
        "frames",
        "poses",
        "keyframes",
        "tracked",
        "recovered",
        "failed",
        "lost",
        "discarded",
        "blur_flagged",
        "frames_per_s",
        "mean_iterations",
    ]);
    r.push(vec![
        run.frames.len().to_string(),
        run.trajectory.len().to_string(),
        run.keyframes.len().to_string(),
        run.count(TrackingStatus::Tracked).to_string(),
        run.count(TrackingStatus::Recovered).to_string(),
        run.count(TrackingStatus::Failed).to_string(),
        run.count(TrackingStatus::Lost).to_string(),
        run.count(TrackingStatus::Discarded).to_string(),
        run.frames.iter().filter(|f| f.blur_flagged).count().to_string(),
        format!("{:.2}", run.frames_per_second()),
        format!("{:.2}", run.mean_iterations()),
    ]);
    r.write(a.format, out)?;
    Ok(())
}

fn frame_log(run: &RunOutput) -> String {
    let mut s = String::from("index,timestamp,status,iterations,inliers,visible,median_disparity,region_size,keyframe_id,keyframe_requested,blur_flagged,elapsed_ms\n");
    for fr in &run.frames {
        let _ = writeln!(
            s,
            "{},{:.6},{},{},{},{},{:.4},{},{},{},{},{:.3}",
            fr.index,
            fr.timestamp,
            fr.status.name(),
            fr.iterations,
            fr.inliers,
            fr.visible,
            fr.median_disparity,
            fr.region_size,
            fr.keyframe_id,
            fr.keyframe_requested,
            fr.blur_flagged,
            fr.elapsed.as_secs_f64() * 1e3
        );
    }
    s
}

fn load_sorted(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    let mut t = read_trajectory(path).with_context(|| format!("reading {}", path.display()))?;
    t.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(t)
}

fn write_rpe(report: &RpeReport, format: Format, out: &mut dyn Write) -> Result<()> {
    match format {
        Format::Table => writeln!(out, "{report}")?,
        Format::Csv => writeln!(out, "{}\n{}", RpeReport::CSV_HEADER, report.csv())?,
        Format::Json => writeln!(out, "{}", report.json())?,
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.config.load(None)?;
    let gt_path = match (&a.gt, &a.dataset) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join("groundtruth.txt"),
        (None, None) => bail!("either --gt or --dataset is required"),
    };
    let est = load_sorted(&a.est)?;
    let gt = load_sorted(&gt_path)?;
    let report = compute_rpe(&est, &gt, a.delta.unwrap_or(cfg.eval_delta), cfg.eval_max_dt)?;
    write_rpe(&report, a.format, out)
}

pub fn cmd_ablate_extractor(a: &AblateExtractorArgs, out: &mut dyn Write) -> Result<()> {
    let base = a.config.load(Some(&a.dataset))?;
    let ds = open_dataset(&a.dataset, &base)?;
    require_groundtruth(&ds)?;
    let delta = a.delta.unwrap_or(base.eval_delta);
    let mut r = Report::new(&["method", "rmse_rot_deg_s", "rmse_trans_m_s", "extraction_s", "mean_region"]);
    for variant in ExtractorVariant::ALL {
        let mut cfg = base.clone();
        cfg.extractor.variant = variant;
        let run = run_sequence(&ds, &cfg)?;
        let rpe = compute_rpe(&run.trajectory, &ds.groundtruth, delta, cfg.eval_max_dt)?;
        // Extraction alone, timed separately from tracking.
        let (mut secs, mut points) = (0.0, 0usize);
        for frame in &ds.frames {
            let gray = load_gray(&frame.rgb_path)?;
            let t0 = Instant::now();
            let region = extractor_pipeline(&gray, &cfg.extractor)?;
            secs += t0.elapsed().as_secs_f64();
            points += region.len();
        }
        let n = ds.frames.len().max(1) as f64;
        r.push(vec![
            variant.label().to_string(),
            f(rpe.rmse_rot),
            f(rpe.rmse_trans),
            format!("{:.5}", secs / n),
            format!("{:.0}", points as f64 / n),
        ]);
    }
    r.write(a.format, out)?;
    Ok(())
}

pub fn cmd_ablate_weights(a: &AblateWeightsArgs, out: &mut dyn Write) -> Result<()> {
    let base = a.config.load(a.dataset.as_deref())?;
    let Some(dir) = &a.dataset else {
        let rows = contamination_study(a.trials, a.fraction, a.seed, &WeightKind::ALL, &base.registration)?;
        let mut r = Report::new(&["method", "rmse_rot_deg", "rmse_trans_m", "failures", "trials"]);
        for row in rows {
            r.push(vec![
                row.kind.label().to_string(),
                f(row.rmse_rot),
                f(row.rmse_trans),
                row.failures.to_string(),
                row.trials.to_string(),
            ]);
        }
        r.write(a.format, out)?;
        return Ok(());
    };
    let ds = open_dataset(dir, &base)?;
    require_groundtruth(&ds)?;
    let delta = a.delta.unwrap_or(base.eval_delta);
    let mut r = Report::new(&["method", "rmse_rot_deg_s", "rmse_trans_m_s", "runtime_s"]);
    for kind in WeightKind::ALL {
        let mut cfg = base.clone();
        cfg.registration.robust.kind = kind;
        let run = run_sequence(&ds, &cfg)?;
        let rpe = compute_rpe(&run.trajectory, &ds.groundtruth, delta, cfg.eval_max_dt)?;
        let per_frame = run.frames.iter().map(|f| f.elapsed.as_secs_f64()).sum::<f64>() / run.frames.len().max(1) as f64;
        r.push(vec![kind.label().to_string(), f(rpe.rmse_rot), f(rpe.rmse_trans), format!("{per_frame:.5}")]);
    }
    r.write(a.format, out)?;
    Ok(())
}

pub fn cmd_fit_sensor(a: &FitSensorArgs, out: &mut dyn Write) -> Result<()> {
    let residuals = match (&a.residuals, &a.dataset) {
        (Some(path), _) => read_residual_dump(path)?,
        (None, Some(dir)) => {
            let cfg = a.config.load(Some(dir))?;
            let ds = open_dataset(dir, &cfg)?;
            collect_gt_residuals(&ds, &cfg)?
        }
        (None, None) => bail!("either --dataset or --residuals is required"),
    };
    if let Some(path) = &a.dump {
        write_residual_dump(path, &residuals)?;
    }
    let fit = fit_sensor_model(&residuals)?;
    let ranking = compare_model_likelihoods(&residuals)?;
    if a.format == Format::Json {
        let rows: Vec<serde_json::Value> = ranking
            .iter()
            .map(|s| {
                serde_json::json!({
                    "model": s.model.name(),
                    "scale": s.scale,
                    "nu": s.nu,
                    "heldout_log_likelihood": s.heldout_log_likelihood,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "fit": {
                "nu": fit.nu0,
                "sigma": fit.sigma0,
                "samples": fit.sample_count,
                "log_likelihood": fit.log_likelihood,
            },
            "ranking": rows,
        });
        writeln!(out, "{doc}")?;
        return Ok(());
    }
    let mut fr = Report::new(&["nu", "sigma", "samples", "log_likelihood"]);
    fr.push(vec![format!("{:.4}", fit.nu0), format!("{:.6}", fit.sigma0), fit.sample_count.to_string(), f(fit.log_likelihood)]);
    fr.write(a.format, out)?;
    writeln!(out)?;
    let mut rr = Report::new(&["model", "scale", "nu", "heldout_log_likelihood"]);
    for s in &ranking {
        rr.push(vec![
            s.model.name().to_string(),
            f(s.scale),
            s.nu.map_or_else(|| "-".to_string(), |nu| format!("{nu:.4}")),
            f(s.heldout_log_likelihood),
        ]);
    }
    rr.write(a.format, out)?;
    Ok(())
}

/// Desk scene under constant velocity about a fixed oblique axis.
pub fn synth_scene(a: &SynthArgs) -> SyntheticScene {
    let mut scene = SyntheticScene::desk(a.seed, a.frames).with_constant_velocity(
        a.frames,
        Vector3::new(0.3, 1.0, 0.2).normalize() * a.rot_deg.to_radians(),
        Vector3::new(1.0, -0.3, 0.5).normalize() * a.trans_m,
    );
    scene.noise.intensity_std = a.intensity_noise;
    scene.noise.depth_std = a.depth_noise;
    scene.noise.edge_jitter_px = a.jitter;
    if let Some(nu) = a.jitter_nu {
        scene.noise.jitter = JitterDistribution::StudentT { nu };
    }
    scene
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    if a.frames == 0 {
        bail!("--frames must be at least 1");
    }
    let scene = synth_scene(a);
    let frames = render_synthetic(&scene)?;
    write_synthetic_dataset(&a.out, &frames, &scene.intrinsics)?;
    let cfg = VoConfig {
        extractor: synthetic_extractor(),
        ..VoConfig::default()
    };
    let cfg_path = a.out.join(DATASET_CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_text()).with_context(|| format!("writing {}", cfg_path.display()))?;
    writeln!(out, "wrote {} frames to {}", frames.len(), a.out.display())?;
    Ok(())
}

pub fn cmd_convergence(a: &ConvergenceArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.config.load(a.dataset.as_deref())?;
    let (fix, initial) = match &a.dataset {
        None => standard_convergence_fixture()?,
        Some(dir) => {
            let ds = open_dataset(dir, &cfg)?;
            let (Some(key), Some(cur)) = (ds.frames.get(a.keyframe), ds.frames.get(a.frame)) else {
                bail!("dataset has {} frames; need indices {} and {}", ds.frames.len(), a.keyframe, a.frame);
            };
            let intr = resolve_intrinsics(&ds, &cfg);
            let truth = match (key.gt_pose, cur.gt_pose) {
                (Some(k), Some(c)) => k.inverse() * c,
                _ => Pose::identity(),
            };
            let fix = RegistrationFixture::from_images(
                &load_gray(&key.rgb_path)?,
                &load_depth(&key.depth_path, cfg.depth_scale)?,
                &load_gray(&cur.rgb_path)?,
                intr,
                truth,
                &cfg.extractor,
            )?;
            (fix, Pose::identity())
        }
    };
    let mut reg = cfg.registration;
    reg.max_iterations = a.iterations;
    let curves = convergence_curves(&fix, &initial, &reg, &GradientDescentOptions::default())?;
    if let Some(path) = &a.trace {
        reg.keep_trace = true;
        let res = fix.solve(initial, &reg)?;
        let mut s = format!("{TRACE_CSV_HEADER}\n");
        for row in &res.trace {
            let _ = writeln!(s, "{}", row.csv());
        }
        std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    }
    match &a.out {
        None => write!(out, "{}", curves.csv())?,
        Some(path) => {
            std::fs::write(path, curves.csv()).with_context(|| format!("writing {}", path.display()))?;
            let hit = |c: &[f64]| ConvergenceCurves::first_below(c, 0.01).map_or_else(|| "never".to_string(), |k| k.to_string());
            writeln!(out, "gn: {} iterations, 1% of initial energy at {}", curves.gn.len() - 1, hit(&curves.gn))?;
            writeln!(out, "gd: {} iterations, 1% of initial energy at {}", curves.gd.len() - 1, hit(&curves.gd))?;
        }
    }
    Ok(())
}
