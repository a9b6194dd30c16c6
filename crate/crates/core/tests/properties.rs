use std::collections::{HashMap, HashSet};

use nalgebra::{Matrix3, Rotation3 as NaRotation3, Vector3};
use proptest::prelude::*;

use fsp_core::background::{extract_foreground, BackgroundMap, ForegroundParams};
use fsp_core::cloud::{
    build_rotation, correct_frame, crop_roi, voxel_downsample, voxel_index, FrameTag, PointCloudFrame,
    RegionOfInterest, Rotation3, TiltAngles, VoxelParams,
};
use fsp_core::cluster::{
    classify_vehicle, cluster_features, dbscan, ClassifierThresholds, Cluster, DbscanParams, VehicleClass,
};
use fsp_core::eval::{compute_metrics, match_frame, ConfusionCounts, MatchThresholds, ScenarioAnnotation};
use fsp_core::geo::{
    apply_extrinsic, compose_final, estimate_static_extrinsic, trajectory_alignment_error, CorrespondenceSet,
    PlanarRefinement, RigidTransform3D,
};
use fsp_core::spatial::KdTree;
use fsp_core::tracker::{
    associate, direction_of, kf_predict, kf_update, step_tracker, Detection, NoiseParams, SensorSiteConfig,
    Track,
};
use fsp_core::Point3;

fn point(range: f64) -> impl Strategy<Value = Point3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn points(range: f64, max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(range), 1..max)
}

fn angle() -> impl Strategy<Value = f64> {
    -1.5707f64..1.5707
}

fn leveled(points: Vec<Point3>) -> PointCloudFrame {
    PointCloudFrame::with_tag(0, 0.0, points, FrameTag::LeveledFrame).unwrap()
}

fn transform() -> impl Strategy<Value = RigidTransform3D> {
    (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1, point(100.0)).prop_map(|(r, p, y, t)| {
        let m = NaRotation3::from_euler_angles(r, p, y).into_inner();
        RigidTransform3D::new(Rotation3::from_matrix(m, 1e-9).unwrap(), t.to_vector())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_is_orthonormal(roll in angle(), pitch in angle()) {
        let r = *build_rotation(&TiltAngles::new(roll, pitch).unwrap()).unwrap().matrix();
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn correction_preserves_distances(roll in angle(), pitch in angle(), pts in points(100.0, 30)) {
        let rot = build_rotation(&TiltAngles::new(roll, pitch).unwrap()).unwrap();
        let frame = PointCloudFrame::new(1, 0.0, pts.clone()).unwrap();
        let out = correct_frame(&frame, &rot).unwrap();
        for i in 0..pts.len() {
            for j in 0..i {
                let before = pts[i].distance(&pts[j]);
                let after = out.points[i].distance(&out.points[j]);
                prop_assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn crop_is_subset_and_idempotent(pts in points(20.0, 200), w in 1.0f64..15.0, h in 1.0f64..15.0) {
        let roi = RegionOfInterest::new(vec![[-w, -h], [w, -h], [w, h], [0.0, 1.5 * h], [-w, h]], -5.0, 5.0).unwrap();
        let f = leveled(pts.clone());
        let once = crop_roi(&f, &roi).unwrap();
        let twice = crop_roi(&once, &roi).unwrap();
        prop_assert_eq!(&once.points, &twice.points);
        for p in &once.points {
            prop_assert!(pts.contains(p));
            prop_assert!(roi.contains(p));
        }
    }

    #[test]
    fn voxel_centroids_match_hash_oracle(pts in points(10.0, 300), size in 0.05f64..3.0) {
        let f = leveled(pts.clone());
        let down = voxel_downsample(&f, &VoxelParams::new(size).unwrap()).unwrap();
        let mut groups: HashMap<[i64; 3], Vec<Point3>> = HashMap::new();
        for p in &pts {
            groups.entry(voxel_index(p, size)).or_default().push(*p);
        }
        prop_assert_eq!(down.len(), groups.len());
        let keys: Vec<[i64; 3]> = down.points.iter().map(|c| voxel_index(c, size)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        prop_assert_eq!(&keys, &sorted);
        for (c, k) in down.points.iter().zip(&keys) {
            // a centroid lands in its own voxel barring exact-boundary ties
            let members = groups.get(k);
            prop_assert!(members.is_some());
            let m = Point3::centroid(members.unwrap()).unwrap();
            prop_assert!(m.distance(c) < 1e-9);
        }
        prop_assert_eq!(voxel_downsample(&f, &VoxelParams::new(size).unwrap()).unwrap(), down);
    }

    #[test]
    fn kd_tree_matches_exhaustive(pts in points(50.0, 400), queries in points(60.0, 20), r in 0.1f64..20.0) {
        let tree = KdTree::build(pts.clone());
        for q in &queries {
            let best = pts.iter().map(|p| q.distance_squared(p)).fold(f64::INFINITY, f64::min);
            let got = tree.nearest(q).unwrap();
            prop_assert_eq!(got.distance, best.sqrt());
            let within: Vec<usize> = (0..pts.len()).filter(|&i| q.distance_squared(&pts[i]) <= r * r).collect();
            prop_assert_eq!(tree.within_radius(q, r), within);
        }
    }

    #[test]
    fn foreground_is_subset_and_monotone_in_alpha(
        bg in points(20.0, 200), frame in points(25.0, 200), a1 in 0.0f64..3.0, a2 in 0.0f64..3.0,
    ) {
        let map = BackgroundMap::from_points(bg, 0.1, vec![]).unwrap();
        let f = leveled(frame.clone());
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let run = |alpha| extract_foreground(&f, &map, &ForegroundParams { alpha, clamp: None }).unwrap();
        let (small, large) = (run(lo), run(hi));
        let big: HashSet<[u64; 3]> = small.frame.points.iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect();
        for p in &large.frame.points {
            prop_assert!(big.contains(&[p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]));
        }
        for p in &small.frame.points {
            prop_assert!(frame.contains(p));
            prop_assert!(map.nearest_distance(p) > small.stats.threshold);
        }
    }

    #[test]
    fn dbscan_partitions_input(pts in points(5.0, 150), eps in 0.2f64..3.0, min_pts in 1usize..10) {
        let c = dbscan(&pts, &DbscanParams::new(eps, min_pts).unwrap()).unwrap();
        let mut seen = vec![0u32; pts.len()];
        for members in &c.clusters {
            for &i in members {
                seen[i] += 1;
            }
        }
        for &i in &c.noise {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
        for (ci, members) in c.clusters.iter().enumerate() {
            for &i in members {
                prop_assert_eq!(c.labels[i], Some(ci));
            }
        }
    }

    #[test]
    fn features_are_permutation_invariant(pts in points(5.0, 60), seed in any::<u64>()) {
        let a = cluster_features(pts.clone()).unwrap();
        let mut shuffled = pts;
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = cluster_features(shuffled).unwrap();
        prop_assert!(a.centroid.distance(&b.centroid) < 1e-9);
        prop_assert_eq!(a.hmax, b.hmax);
        prop_assert_eq!(a.abs_height, b.abs_height);
        prop_assert_eq!(a.extent_xy, b.extent_xy);
        prop_assert!((a.sigma_z - b.sigma_z).abs() < 1e-9);
    }

    #[test]
    fn taller_never_demotes_a_truck(h in 0.0f64..6.0, extra in 0.0f64..3.0, hmax in -6.0f64..2.0, sz in 0.0f64..2.0, len in 1.0f64..20.0) {
        let th = ClassifierThresholds::for_ground(-6.0);
        let mk = |abs_height| Cluster {
            cluster_id: 0,
            points: vec![],
            centroid: Point3::ORIGIN,
            hmax,
            sigma_z: sz,
            abs_height,
            extent_xy: (len, 2.0),
        };
        if classify_vehicle(&mk(h), &th).is_truck() {
            prop_assert!(classify_vehicle(&mk(h + extra), &th).is_truck());
        }
    }

    #[test]
    fn covariance_stays_symmetric_psd(zs in prop::collection::vec(point(50.0), 1..30), dts in prop::collection::vec(0.01f64..1.0, 30)) {
        let noise = NoiseParams::default();
        let mut s = noise.initial_state(&zs[0]);
        for (z, dt) in zs.iter().zip(&dts) {
            s = kf_predict(&s, *dt, &noise.q(*dt)).unwrap();
            s = kf_update(&s, z, &noise.r()).unwrap().state;
            prop_assert!((s.p - s.p.transpose()).amax() < 1e-9);
            let min_eig = s.p.symmetric_eigenvalues().min();
            prop_assert!(min_eig >= -1e-9);
        }
    }

    #[test]
    fn association_ignores_detection_order(tp in points(30.0, 8), dp in points(30.0, 8), seed in any::<u64>()) {
        let noise = NoiseParams::default();
        let tracks: Vec<Track> = {
            let mut next = 1;
            let dets: Vec<Detection> = tp.iter().map(|p| Detection { position: *p, class: VehicleClass::NonTruck }).collect();
            step_tracker(vec![], &dets, f64::NAN, 0.0, &SensorSiteConfig::default(), &noise, &mut next).unwrap()
        };
        let dets: Vec<Detection> = dp.iter().map(|p| Detection { position: *p, class: VehicleClass::NonTruck }).collect();
        let mut perm: Vec<usize> = (0..dets.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<Detection> = perm.iter().map(|&i| dets[i]).collect();
        let as_ids = |pairs: Vec<(usize, usize)>, order: &[usize]| -> HashSet<(u64, usize)> {
            pairs.into_iter().map(|(t, d)| (tracks[t].track_id, order[d])).collect()
        };
        let identity: Vec<usize> = (0..dets.len()).collect();
        prop_assert_eq!(
            as_ids(associate(&tracks, &dets, 5.0), &identity),
            as_ids(associate(&tracks, &shuffled, 5.0), &perm)
        );
    }

    #[test]
    fn track_count_is_bounded(tp in points(30.0, 8), dp in points(30.0, 8)) {
        let noise = NoiseParams::default();
        let cfg = SensorSiteConfig::default();
        let mut next = 1;
        let det = |ps: &[Point3]| -> Vec<Detection> { ps.iter().map(|p| Detection { position: *p, class: VehicleClass::NonTruck }).collect() };
        let tracks = step_tracker(vec![], &det(&tp), f64::NAN, 0.0, &cfg, &noise, &mut next).unwrap();
        let before = tracks.len();
        let after = step_tracker(tracks, &det(&dp), 0.1, 0.1, &cfg, &noise, &mut next).unwrap();
        prop_assert!(after.len() <= before + dp.len());
    }

    #[test]
    fn direction_ignores_line_of_sight_length(v in point(20.0), pos in point(100.0), k in 0.01f64..100.0) {
        let sensor = Point3::ORIGIN;
        let scaled = sensor - (sensor - pos) * k;
        prop_assert_eq!(direction_of(&v, &pos, &sensor, 0.5), direction_of(&v, &scaled, &sensor, 0.5));
    }

    #[test]
    fn registration_commutes_with_rigid_premotion(truth in transform(), g in transform(), pts in prop::collection::vec(point(50.0), 4..10)) {
        let pairs: Vec<_> = pts.iter().map(|p| (*p, apply_extrinsic(&truth, p))).collect();
        let moved: Vec<_> = pairs
            .iter()
            .map(|(l, e)| (g.apply(l), apply_extrinsic(&g, &e.to_point())))
            .collect();
        let (Ok(c1), Ok(c2)) = (CorrespondenceSet::new(pairs), CorrespondenceSet::new(moved)) else {
            return Ok(());
        };
        let a = estimate_static_extrinsic(&c1).unwrap().transform;
        let b = estimate_static_extrinsic(&c2).unwrap().transform;
        for p in &pts {
            let via_a = g.apply(&a.apply(p));
            let via_b = b.apply(&g.apply(p));
            prop_assert!(via_a.distance(&via_b) < 1e-6);
        }
    }

    #[test]
    fn composed_extrinsic_is_a_rotation(init in transform(), yaw in -3.1f64..3.1, tx in -10.0f64..10.0, ty in -10.0f64..10.0, dz in -5.0f64..5.0) {
        let out = compose_final(&init, &PlanarRefinement { theta_yaw: yaw, t_xy: [tx, ty], delta_z: dz });
        let r = *out.rotation.matrix();
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        prop_assert!((out.translation - (Vector3::new(tx, ty, dz) + NaRotation3::from_axis_angle(&Vector3::z_axis(), yaw) * init.translation)).amax() < 1e-9);
    }

    #[test]
    fn self_alignment_error_is_zero(traj in points(100.0, 50)) {
        let pairs: Vec<_> = traj.iter().map(|p| (*p, *p)).collect();
        prop_assert!(trajectory_alignment_error(&pairs).unwrap().per_point.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn outcomes_partition_and_f1_is_harmonic(cases in prop::collection::vec((0usize..3, point(30.0), prop::collection::vec((0usize..3, point(30.0)), 0..4)), 1..40)) {
        let th = MatchThresholds::default();
        let n = cases.len() as u64;
        let counts: ConfusionCounts = cases
            .iter()
            .map(|(c, p, preds)| {
                let gt = ScenarioAnnotation {
                    scenario_id: String::new(),
                    frame_file: "f".into(),
                    gt_class: VehicleClass::ALL[*c],
                    gt_position: *p,
                    note: String::new(),
                    frame_id: None,
                    thresholds: None,
                };
                let preds: Vec<_> = preds.iter().map(|(c, p)| (VehicleClass::ALL[*c], *p)).collect();
                match_frame(&gt, &preds, &th)
            })
            .collect();
        prop_assert_eq!(counts.total(), n);
        let m = compute_metrics(&counts);
        if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
            prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
        }
    }

    #[test]
    fn wider_threshold_keeps_hits(d in 0.0f64..20.0, t1 in 0.1f64..15.0, extra in 0.0f64..10.0, long in any::<bool>()) {
        let gt = ScenarioAnnotation {
            scenario_id: String::new(),
            frame_file: "f".into(),
            gt_class: if long { VehicleClass::LongTruck } else { VehicleClass::CompactTruck },
            gt_position: Point3::ORIGIN,
            note: String::new(),
            frame_id: None,
            thresholds: None,
        };
        let preds = [(VehicleClass::CompactTruck, Point3::new(d, 0.0, 0.0))];
        let narrow = MatchThresholds { long_truck_m: t1, compact_truck_m: t1 };
        let wide = MatchThresholds { long_truck_m: t1 + extra, compact_truck_m: t1 + extra };
        if match_frame(&gt, &preds, &narrow) == fsp_core::eval::Outcome::Tp {
            prop_assert_eq!(match_frame(&gt, &preds, &wide), fsp_core::eval::Outcome::Tp);
        }
    }
}
