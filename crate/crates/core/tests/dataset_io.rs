use std::collections::BTreeSet;
use std::path::PathBuf;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdvo_core::dataset::{
    associate, format_trajectory, load_depth, match_timestamps, parse_trajectory, render_frame, render_synthetic,
    synthetic_extractor, write_depth, write_synthetic_dataset, Curve, SyntheticScene, TrajectoryEntry, TumDataset,
};
use sdvo_core::geometry::{project, Pose};
use sdvo_core::image::{extractor_pipeline, DepthImage};
use sdvo_core::map::{build_keyframe_map, MapConfig};

/// Maximum-cardinality matching with minimal total |dt| among candidate
/// pairs within `max_dt`, found by exhaustive search per connected
/// component of the candidate graph.
fn brute_force_matching(a: &[f64], b: &[f64], max_dt: f64) -> BTreeSet<(usize, usize)> {
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (i, ta) in a.iter().enumerate() {
        for (j, tb) in b.iter().enumerate() {
            let dt = (ta - tb).abs();
            if dt <= max_dt {
                edges.push((i, j, dt));
            }
        }
    }
    // Components by union-find over rgb indices and offset depth indices.
    let n = a.len() + b.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &(i, j, _) in &edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, a.len() + j));
        parent[ri] = rj;
    }
    let mut comps: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> = Default::default();
    for &e in &edges {
        let r = find(&mut parent, e.0);
        comps.entry(r).or_default().push(e);
    }
    let mut out = BTreeSet::new();
    for (_, comp) in comps {
        assert!(comp.len() <= 16, "component too large for exhaustive search");
        let mut best: (usize, f64, Vec<(usize, usize)>) = (0, 0.0, Vec::new());
        for mask in 0u32..(1 << comp.len()) {
            let chosen: Vec<&(usize, usize, f64)> = comp.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, e)| e).collect();
            let ia: BTreeSet<usize> = chosen.iter().map(|e| e.0).collect();
            let ib: BTreeSet<usize> = chosen.iter().map(|e| e.1).collect();
            if ia.len() != chosen.len() || ib.len() != chosen.len() {
                continue;
            }
            let cost: f64 = chosen.iter().map(|e| e.2).sum();
            if chosen.len() > best.0 || (chosen.len() == best.0 && cost < best.1) {
                best = (chosen.len(), cost, chosen.iter().map(|e| (e.0, e.1)).collect());
            }
        }
        out.extend(best.2);
    }
    out
}

#[test]
fn matching_equals_brute_force_optimum_on_jittered_streams() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let rgb: Vec<f64> = (0..1000).map(|i| 1000.0 + i as f64 / 30.0).collect();
        let mut depth = Vec::new();
        for t in &rgb {
            if rng.random::<f64>() > 0.05 {
                depth.push(t + rng.random_range(-0.010..=0.010));
            }
        }
        depth.sort_by(f64::total_cmp);
        let greedy: BTreeSet<(usize, usize)> = match_timestamps(&rgb, &depth, 0.02).into_iter().collect();
        let optimal = brute_force_matching(&rgb, &depth, 0.02);
        assert_eq!(greedy, optimal, "seed {seed}");
    }
}

#[test]
fn association_examples() {
    let ts: Vec<(f64, PathBuf)> = (0..50).map(|i| (i as f64 * 0.1, PathBuf::from(format!("{i}.png")))).collect();
    let (frames, stats) = associate(&ts, &ts, &[], 0.02);
    assert_eq!(frames.len(), 50);
    assert_eq!((stats.dropped_rgb, stats.dropped_depth), (0, 0));
    let shifted: Vec<(f64, PathBuf)> = ts.iter().map(|(t, p)| (t + 0.5 + 0.05, p.clone())).collect();
    let far: Vec<(f64, PathBuf)> = ts.iter().map(|(t, p)| (t + 100.5, p.clone())).collect();
    assert_eq!(associate(&ts, &far, &[], 0.02).0.len(), 0);
    assert_eq!(associate(&ts, &shifted, &[], 0.02).0.len(), 0);
}

#[test]
fn association_is_symmetric_in_list_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a: Vec<f64> = (0..300).map(|i| i as f64 / 30.0 + rng.random_range(-0.01..0.01)).collect();
    let mut b: Vec<f64> = (0..300).map(|i| i as f64 / 30.0 + rng.random_range(-0.01..0.01)).collect();
    b.sort_by(f64::total_cmp);
    let mut a_sorted = a.clone();
    a_sorted.sort_by(f64::total_cmp);
    let ab: BTreeSet<(usize, usize)> = match_timestamps(&a_sorted, &b, 0.02).into_iter().collect();
    let ba: BTreeSet<(usize, usize)> = match_timestamps(&b, &a_sorted, 0.02).into_iter().map(|(j, i)| (i, j)).collect();
    assert_eq!(ab, ba);
}

#[test]
fn depth_round_trip_is_exact_for_representable_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.png");
    // Every 16-bit raw value once, across a 256x256 image.
    let data: Vec<f64> = (0..65536u32).map(|raw| raw as f64 / 5000.0).collect();
    let depth = DepthImage::new(256, 256, data.clone()).unwrap();
    write_depth(&path, &depth, 5000.0).unwrap();
    let back = load_depth(&path, 5000.0).unwrap();
    assert_eq!(back.data(), &data[..]);
    assert_eq!(back.get(1, 0), 1.0 / 5000.0);
    assert_eq!(back.get(0, 0), 0.0);
    assert_eq!(back.data()[5000], 1.0);
}

#[test]
fn trajectory_text_round_trip_and_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let entries: Vec<TrajectoryEntry> = (0..100)
        .map(|i| TrajectoryEntry {
            timestamp: 1305031102.175304 + i as f64 * 0.0333,
            pose: sdvo_core::study::random_pose(&mut rng, 90.0, 3.0),
        })
        .collect();
    let text = format_trajectory(&entries);
    let back = parse_trajectory(&text, std::path::Path::new("mem")).unwrap();
    for (a, b) in entries.iter().zip(&back) {
        assert!((a.timestamp - b.timestamp).abs() < 1e-9);
        let (ang, d) = a.pose.distance(&b.pose);
        assert!(ang < 1e-9 && d < 1e-9);
    }
    let scaled = parse_trajectory("1.0 0 0 0 0 0 0 2\n", std::path::Path::new("mem")).unwrap();
    assert!(scaled[0].pose.orthonormality_error() < 1e-12);
}

#[test]
fn hand_written_trajectory_fixture() {
    let text = "# ground truth\n\
                1305031102.1753 1.3405 0.6266 1.6575 0.6574 0.6126 -0.2949 -0.3248\n\
                1305031102.2113 1.3303 0.6256 1.6464 0.6579 0.6161 -0.2932 -0.3189\n\
                \n\
                1305031102.2753 1.3160 0.6254 1.6302 0.6609 0.6199 -0.2893 -0.3086\n";
    let traj = parse_trajectory(text, std::path::Path::new("fixture")).unwrap();
    assert_eq!(traj.len(), 3);
    assert_eq!(traj[1].timestamp, 1305031102.2113);
    assert_eq!(traj[2].pose.translation, Vector3::new(1.3160, 0.6254, 1.6302));
    for e in &traj {
        assert!(e.pose.orthonormality_error() < 1e-12);
    }
    // Same rotation as the written quaternion, up to sign.
    let q = traj[0].pose.quaternion();
    let written = nalgebra::Quaternion::new(-0.3248, 0.6574, 0.6126, -0.2949).normalize();
    assert!((q.coords.dot(&written.coords).abs() - 1.0).abs() < 1e-12);
}

/// One straight stroke from `a` to `b` and nothing else in front of the
/// background plane.
fn line_scene(a: Vector3<f64>, b: Vector3<f64>) -> SyntheticScene {
    let mut scene = SyntheticScene::desk(1, 1);
    scene.curves = vec![Curve {
        points: vec![a, b],
        intensity: 1.0,
        width: 3.0,
    }];
    scene
}

/// Largest perpendicular distance of `pts` from their total-least-squares line.
fn line_fit_residual(pts: &[Vector2<f64>]) -> f64 {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let mut m = nalgebra::Matrix2::zeros();
    for p in pts {
        let d = p - c;
        m += d * d.transpose();
    }
    let eig = m.symmetric_eigen();
    let k = if eig.eigenvalues[0] < eig.eigenvalues[1] { 0 } else { 1 };
    let normal = eig.eigenvectors.column(k).into_owned();
    pts.iter().map(|p| (p - c).dot(&normal).abs()).fold(0.0, f64::max)
}

#[test]
fn fronto_parallel_line_extracts_as_straight_edges() {
    let scene = line_scene(Vector3::new(-0.5, -0.15, 2.0), Vector3::new(0.5, 0.2, 2.0));
    let (gray, _) = render_frame(&scene, &Pose::identity(), 0).unwrap();
    let region = extractor_pipeline(&gray, &synthetic_extractor()).unwrap();
    let intr = scene.intrinsics;
    let pa = project(&intr, &Vector3::new(-0.5, -0.15, 2.0)).unwrap();
    let pb = project(&intr, &Vector3::new(0.5, 0.2, 2.0)).unwrap();
    let dir = (pb - pa).normalize();
    let normal = Vector2::new(-dir.y, dir.x);
    // The stroke has two flanks; away from the end caps each flank is a
    // straight edge parallel to the projected line.
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for px in &region.pixels {
        let q = Vector2::new(px[0] as f64, px[1] as f64);
        let along = (q - pa).dot(&dir);
        if along < 10.0 || along > (pb - pa).norm() - 10.0 {
            continue;
        }
        if (q - pa).dot(&normal) > 0.0 {
            left.push(q);
        } else {
            right.push(q);
        }
    }
    assert!(left.len() > 100 && right.len() > 100);
    for side in [&left, &right] {
        let r = line_fit_residual(side);
        assert!(r <= 0.5 + 1e-9, "flank deviates {r} px from its line");
    }
}

#[test]
fn rendered_depth_matches_the_analytic_line() {
    let a = Vector3::new(-0.6, -0.2, 1.2);
    let b = Vector3::new(0.5, 0.25, 3.1);
    let scene = line_scene(a, b);
    let pose = Pose::from_axis_angle(&Vector3::new(0.02, -0.03, 0.01), Vector3::new(0.05, 0.0, -0.1));
    let (_, depth) = render_frame(&scene, &pose, 0).unwrap();
    let intr = scene.intrinsics;
    let (ca, cb) = (pose.to_camera(&a), pose.to_camera(&b));
    let mut checked = 0;
    for v in 0..intr.height {
        for u in 0..intr.width {
            let z = depth.get(u, v);
            if z == 0.0 || z > 4.5 {
                continue;
            }
            // Point of the 3D segment whose projection is closest to the pixel.
            let q = Vector2::new(u as f64, v as f64);
            let img = |s: f64| project(&intr, &(ca + (cb - ca) * s)).unwrap();
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if (img(m1) - q).norm() < (img(m2) - q).norm() {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let s = 0.5 * (lo + hi);
            let expected = (ca + (cb - ca) * s).z;
            assert!((z - expected).abs() < 1e-4, "({u},{v}): {z} vs {expected}");
            checked += 1;
        }
    }
    assert!(checked > 500, "{checked} pixels");
}

#[test]
fn map_points_reproject_to_their_source_pixels() {
    let scene = SyntheticScene::desk(9, 1);
    let intr = scene.intrinsics;
    let (gray, depth) = render_frame(&scene, &Pose::identity(), 0).unwrap();
    let region = extractor_pipeline(&gray, &synthetic_extractor()).unwrap();
    let map = build_keyframe_map(&region, &depth, &intr, &Pose::identity(), 0, &MapConfig::default()).unwrap();
    assert!(map.len() <= region.len());
    for p in &map.points {
        let o = project(&intr, &p.s).unwrap();
        assert!((o - Vector2::new(p.source_pixel[0] as f64, p.source_pixel[1] as f64)).norm() < 1e-6);
        assert!((p.bearing.norm() - 1.0).abs() < 1e-9 && p.d > 0.0);
        assert!((p.s - p.bearing * p.d).norm() <= 1e-9);
        assert!((p.grad_dir.norm() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn synthetic_dataset_opens_as_tum_layout() {
    let scene = SyntheticScene::desk(10, 5).with_constant_velocity(5, Vector3::new(0.0, 0.001, 0.0), Vector3::new(0.001, 0.0, 0.0));
    let frames = render_synthetic(&scene).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_dataset(dir.path(), &frames, &scene.intrinsics).unwrap();
    let ds = TumDataset::open(dir.path(), 0.02).unwrap();
    assert_eq!(ds.frames.len(), 5);
    assert_eq!(ds.intrinsics, Some(scene.intrinsics));
    for (f, src) in ds.frames.iter().zip(&frames) {
        let gt = f.gt_pose.unwrap();
        let (a, t) = gt.distance(&src.pose);
        assert!(a < 1e-6 && t < 1e-6);
        assert!(gt.orthonormality_error() < 1e-9);
        let d = load_depth(&f.depth_path, 5000.0).unwrap();
        let quantized = src.depth.data().iter().zip(d.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 5000.0 + 1e-12);
        assert!(quantized);
    }
}
