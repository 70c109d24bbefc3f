use proptest::prelude::*;
use radcam_core::evalkit::{polygon_area, rotated_iou_bev, Box3D, ObjectClass};
use radcam_core::geomkit::{normalize_angle, voxelize, RadarPoint, RangeSpec, RigidTransform, VoxelSpec};
use radcam_core::numkit::{bilinear_sample, softmax_lastdim, Tensor};
use radcam_core::viewtrans::{splat_to_bev, CameraModel, DepthBins, SplatPlan};

fn boxes() -> impl Strategy<Value = Box3D> {
    (-20.0..20.0f64, -20.0..20.0f64, 0.2..5.0f64, 0.2..6.0f64, -7.0..7.0f64)
        .prop_map(|(x, y, w, l, t)| Box3D::new(ObjectClass::Car, [x, y, 0.0], [w, l, 1.5], t))
}

fn near_pair() -> impl Strategy<Value = (Box3D, Box3D)> {
    (
        boxes(),
        -2.0..2.0f64,
        -2.0..2.0f64,
        0.2..5.0f64,
        0.2..6.0f64,
        -7.0..7.0f64,
    )
        .prop_map(|(a, dx, dy, w, l, t)| {
            let b = Box3D::new(ObjectClass::Car, [a.x + dx, a.y + dy, 0.0], [w, l, 1.5], t);
            (a, b)
        })
}

fn transforms() -> impl Strategy<Value = RigidTransform> {
    (
        -4.0..4.0f64,
        prop::array::uniform3(-10.0..10.0f64),
        any::<bool>(),
        any::<bool>(),
        0.5..2.0f64,
    )
        .prop_map(|(yaw, t, fx, fy, s)| RigidTransform {
            flip_x: fx,
            flip_y: fy,
            scale: s,
            ..RigidTransform::from_yaw_translation(yaw, t)
        })
}

fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
    (0..3).all(|i| (a[i] - b[i]).abs() <= tol * (1.0 + a[i].abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_is_symmetric_and_bounded((a, b) in near_pair()) {
        let ab = rotated_iou_bev(&a, &b).unwrap();
        let ba = rotated_iou_bev(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn iou_with_itself_is_one(a in boxes()) {
        prop_assert!((rotated_iou_bev(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_survives_rigid_motion((a, b) in near_pair(), yaw in -4.0..4.0f64, tx in -30.0..30.0f64, ty in -30.0..30.0f64) {
        let t = RigidTransform::from_yaw_translation(yaw, [tx, ty, 0.0]);
        let before = rotated_iou_bev(&a, &b).unwrap();
        let after = rotated_iou_bev(&a.transformed(&t), &b.transformed(&t)).unwrap();
        prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn footprint_area_is_w_times_l(a in boxes()) {
        prop_assert!((polygon_area(&a.footprint()) - a.w * a.l).abs() < 1e-9);
    }

    #[test]
    fn matrix_agrees_with_apply(t in transforms(), p in prop::array::uniform3(-50.0..50.0f64)) {
        let m = t.to_matrix();
        let q: [f64; 3] = std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3]);
        prop_assert!(close(q, t.apply_point(p), 1e-12));
    }

    #[test]
    fn compose_and_inverse(a in transforms(), b in transforms(), p in prop::array::uniform3(-50.0..50.0f64)) {
        prop_assert!(close(a.compose(&b).apply_point(p), a.apply_point(b.apply_point(p)), 1e-10));
        prop_assert!(close(a.inverse().apply_point(a.apply_point(p)), p, 1e-10));
    }

    #[test]
    fn angles_normalize_into_half_open_circle(a in -100.0..100.0f64) {
        let n = normalize_angle(a);
        prop_assert!(n > -std::f64::consts::PI && n <= std::f64::consts::PI);
        prop_assert!(((a - n) / std::f64::consts::TAU - ((a - n) / std::f64::consts::TAU).round()).abs() < 1e-9);
    }

    #[test]
    fn voxels_contain_their_points(pts in prop::collection::vec(
        (0.0..51.2f64, -25.6..25.6f64, -3.0..2.0f64, -5.0..5.0f64), 0..200)) {
        let (spec, range) = (VoxelSpec::FULL_SCALE, RangeSpec::FULL_SCALE_PCR);
        let eff = spec.effective_range(&range);
        let points: Vec<RadarPoint> = pts
            .into_iter()
            .map(|(x, y, z, v)| RadarPoint::new(x, y, z, v))
            .filter(|p| eff.contains(p.xyz()))
            .collect();
        let grid = voxelize(&points, &spec, &range).unwrap();
        prop_assert_eq!(grid.total_points(), points.len());
        for (idx, v) in &grid.voxels {
            for p in &v.points {
                for a in 0..3 {
                    let lo = spec.lower_bound(&range, a, idx[a]);
                    let hi = spec.lower_bound(&range, a, idx[a] + 1);
                    prop_assert!(lo <= p.xyz()[a] && p.xyz()[a] < hi);
                }
            }
            prop_assert_eq!(v.feature[4], v.points.len() as f64);
        }
    }

    #[test]
    fn bilinear_is_linear_in_the_map(
        a in prop::collection::vec(-1.0..1.0f64, 12),
        b in prop::collection::vec(-1.0..1.0f64, 12),
        k in -3.0..3.0f64,
        r in -1.5..4.5f64,
        c in -1.5..5.5f64,
    ) {
        let ta = Tensor::new(vec![1, 3, 4], a).unwrap();
        let tb = Tensor::new(vec![1, 3, 4], b).unwrap();
        let mut mix = ta.map(|v| k * v);
        mix.add_assign(&tb).unwrap();
        let lhs = bilinear_sample(&mix, (r, c)).unwrap().data()[0];
        let rhs = k * bilinear_sample(&ta, (r, c)).unwrap().data()[0] + bilinear_sample(&tb, (r, c)).unwrap().data()[0];
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn softmax_ignores_shifts(x in prop::collection::vec(-20.0..20.0f64, 1..16), s in -50.0..50.0f64) {
        let n = x.len();
        let a = softmax_lastdim(&Tensor::new(vec![n], x.clone()).unwrap()).unwrap();
        let b = softmax_lastdim(&Tensor::new(vec![n], x.iter().map(|v| v + s).collect()).unwrap()).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn splat_counts_in_range_cells(bins in 2usize..8, dmin in 0.5..3.0f64, span in 2.0..30.0f64) {
        let cam = CameraModel::toy();
        let bins = DepthBins::new(bins, dmin, dmin + span).unwrap();
        let plan = SplatPlan::new(&cam, &bins, Default::default()).unwrap();
        let ones = Tensor::full(&[1, bins.count, cam.height, cam.width], 1.0);
        let bev = splat_to_bev(&ones, &plan).unwrap();
        prop_assert_eq!(bev.tensor.sum(), plan.in_range_cells() as f64);
        prop_assert!(bev.tensor.data().iter().all(|v| *v >= 0.0));
    }
}
