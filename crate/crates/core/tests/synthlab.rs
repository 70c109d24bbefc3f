use radcam_core::evalkit::{Box3D, ObjectClass};
use radcam_core::geomkit::{filter_pcr, stack_frames, VOXEL_FEATURES};
use radcam_core::numkit::Tensor;
use radcam_core::synthlab::save_scene_dir;
use radcam_core::synthlab::{
    decode_boxes, generate_scene, load_scene_dir, radar_range, radar_to_bev, render_scene, ClassCounts, ClassSizes,
    Occluder, RadarBevSpec, SceneLayout, SceneObject, SceneSpec,
};
use radcam_core::viewtrans::BevGrid;

fn empty_counts() -> ClassCounts {
    ClassCounts {
        car: 0,
        pedestrian: 0,
        cyclist: 0,
    }
}

#[test]
fn same_seed_same_scene() {
    let spec = SceneSpec {
        seed: 7,
        ..SceneSpec::default()
    };
    let a = generate_scene(&spec).unwrap();
    let b = generate_scene(&spec).unwrap();
    assert_eq!(a, b);
    let c = generate_scene(&SceneSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(a.frames, c.frames);
}

#[test]
fn boxes_stay_on_the_grid() {
    let grid = BevGrid::default();
    for seed in 0..20 {
        let s = generate_scene(&SceneSpec {
            seed,
            ..SceneSpec::default()
        })
        .unwrap();
        assert_eq!(s.boxes.len(), 5);
        for b in &s.boxes {
            for [x, y] in b.footprint() {
                assert!(grid.cell_of(x, y).is_some(), "seed {seed}: {b:?}");
            }
        }
    }
}

#[test]
fn zero_objects() {
    let spec = SceneSpec {
        counts: empty_counts(),
        occluders: 0,
        clutter: 0,
        ..SceneSpec::default()
    };
    let s = generate_scene(&spec).unwrap();
    assert!(s.boxes.is_empty());
    assert!(s.frames.iter().all(|f| f.points.is_empty()));
    // All pixels are background, so every pixel's feature is identical
    // outside the two-pixel band the stacked 3×3 convolutions see padding in.
    let f = &s.camera_features;
    let (h, w) = (f.dim(1), f.dim(2));
    for c in 0..f.dim(0) {
        let at = |r: usize, col: usize| f.data()[(c * h + r) * w + col];
        for r in 2..h - 2 {
            for col in 2..w - 2 {
                assert_eq!(at(r, col), at(2, 2));
            }
        }
    }
}

fn occluded_layout(spec: &SceneSpec) -> SceneLayout {
    let ped = Box3D::new(
        ObjectClass::Pedestrian,
        [8.0, 0.0, spec.ground_z + 0.85],
        [0.8, 0.8, 1.7],
        0.0,
    );
    SceneLayout {
        objects: vec![SceneObject {
            bbox: ped,
            velocity: [0.0, 1.0],
        }],
        occluders: vec![Occluder {
            x: 4.0,
            y: 0.0,
            l: 0.4,
            w: 4.0,
            h: 2.0,
            theta: 0.0,
            ground_z: spec.ground_z,
        }],
    }
}

#[test]
fn fully_occluded_object_gets_no_returns_without_xray() {
    let spec = SceneSpec {
        p_xray: 0.0,
        noise_sigma: 0.0,
        clutter: 0,
        frames: 1,
        returns: ClassCounts {
            car: 0,
            pedestrian: 50,
            cyclist: 0,
        },
        ..SceneSpec::default()
    };
    let layout = occluded_layout(&spec);
    let s = render_scene(&spec, &layout).unwrap();
    // Grown slightly so returns sampled exactly on a face count as inside.
    let ped = Box3D {
        l: 0.8 + 1e-9,
        w: 0.8 + 1e-9,
        ..layout.objects[0].bbox
    };
    assert!(!s.current_points().is_empty());
    assert!(s.current_points().iter().all(|p| !ped.contains_xy(p.x, p.y)));
    assert!(s.xray[0].iter().all(|x| !x));

    let leaky = render_scene(
        &SceneSpec {
            p_xray: 1.0,
            ..spec.clone()
        },
        &layout,
    )
    .unwrap();
    let on_ped: Vec<usize> = (0..leaky.current_points().len())
        .filter(|&i| {
            let p = leaky.current_points()[i];
            ped.contains_xy(p.x, p.y)
        })
        .collect();
    assert!(!on_ped.is_empty());
    for (i, x) in leaky.xray[0].iter().enumerate() {
        assert_eq!(*x, on_ped.contains(&i), "point {i}");
    }
}

#[test]
fn full_dropout_empties_the_radar_map() {
    let spec = SceneSpec {
        dropout: 1.0,
        seed: 3,
        ..SceneSpec::default()
    };
    let s = generate_scene(&spec).unwrap();
    let pts = stack_frames(&s.frames, spec.frames).unwrap();
    assert!(pts.is_empty());
    let grid = spec.grid;
    let bev = RadarBevSpec::default();
    let m = radar_to_bev(&pts, &grid, &bev.voxel(&grid), &radar_range(&grid, &bev)).unwrap();
    assert_eq!(m.tensor.max_abs(), 0.0);
}

#[test]
fn radar_bev_matches_brute_force_pooling() {
    let grid = BevGrid::default();
    let bev = RadarBevSpec::default();
    let range = radar_range(&grid, &bev);
    let voxel = bev.voxel(&grid);
    for seed in 0..5 {
        let s = generate_scene(&SceneSpec {
            seed,
            ..SceneSpec::default()
        })
        .unwrap();
        let pts = filter_pcr(&stack_frames(&s.frames, 5).unwrap(), &voxel.effective_range(&range));
        let m = radar_to_bev(&pts, &grid, &voxel, &range).unwrap();
        let slabs = bev.slabs(&grid);
        let mut expected = vec![0.0; slabs * VOXEL_FEATURES * 1024];
        let mut count = vec![0usize; slabs * 1024];
        for p in &pts {
            let r = ((p.x - grid.x_min) / 0.4).floor() as usize;
            let c = ((p.y - grid.y_min) / 0.4).floor() as usize;
            let z = ((p.z - bev.z_min) / bev.slab).floor() as usize;
            count[z * 1024 + r * 32 + c] += 1;
        }
        for (cell, &n) in count.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let (z, rc) = (cell / 1024, cell % 1024);
            let members: Vec<_> = pts
                .iter()
                .filter(|p| {
                    let r = ((p.x - grid.x_min) / 0.4).floor() as usize;
                    let c = ((p.y - grid.y_min) / 0.4).floor() as usize;
                    let zz = ((p.z - bev.z_min) / bev.slab).floor() as usize;
                    zz == z && r * 32 + c == rc
                })
                .collect();
            let attrs = [
                members.iter().map(|p| p.x).sum::<f64>(),
                members.iter().map(|p| p.y).sum::<f64>(),
                members.iter().map(|p| p.z).sum::<f64>(),
                members.iter().map(|p| p.v_r).sum::<f64>(),
            ];
            for f in 0..4 {
                expected[(z * VOXEL_FEATURES + f) * 1024 + rc] = attrs[f] / n as f64;
            }
            expected[(z * VOXEL_FEATURES + 4) * 1024 + rc] = n as f64;
        }
        let diff = m
            .tensor
            .data()
            .iter()
            .zip(&expected)
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff < 1e-12, "seed {seed}: {diff}");
    }
}

#[test]
fn two_blobs_two_boxes() {
    let grid = BevGrid::default();
    let mut probs = Tensor::zeros(&[3, 32, 32]);
    let cells = 1024;
    // Pedestrian blob 2×2 at rows 5–6, cols 3–4 with mean 0.8.
    for (r, c, p) in [(5, 3, 0.9), (5, 4, 0.7), (6, 3, 0.8), (6, 4, 0.8)] {
        probs.data_mut()[cells + r * 32 + c] = p;
    }
    // A separate cyclist blob, diagonal neighbors only touch, so it splits.
    for (r, c) in [(20, 20), (21, 21)] {
        probs.data_mut()[2 * cells + r * 32 + c] = 1.0;
    }
    let d = decode_boxes(&probs, &grid, 0.5, &ClassSizes::default(), -1.0);
    assert_eq!(d.len(), 3);
    assert_eq!(d[0].class, ObjectClass::Pedestrian);
    assert!((d[0].score.unwrap() - 0.8).abs() < 1e-12);
    assert!((d[0].x - 2.4).abs() < 1e-12 && (d[0].y - (-6.4 + 1.6)).abs() < 1e-12);
    assert_eq!((d[1].class, d[2].class), (ObjectClass::Cyclist, ObjectClass::Cyclist));
}

#[test]
fn scene_directory_round_trip() {
    let s = generate_scene(&SceneSpec {
        seed: 11,
        ..SceneSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene_dir(&s, dir.path()).unwrap();
    for f in ["points.csv", "boxes.jsonl", "camera.json", "camfeat.bin", "frames.json"] {
        assert!(dir.path().join(f).exists());
    }
    assert_eq!(load_scene_dir(dir.path()).unwrap(), s);
}
