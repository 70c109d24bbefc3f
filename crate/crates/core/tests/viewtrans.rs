mod common;

use common::{rng, uniform, RandomCamera};
use radcam_core::geomkit::RadarPoint;
use radcam_core::numkit::{Conv2d, Tensor};
use radcam_core::viewtrans::{
    depth_context_lss, depth_supervised_lss, frustum_points, lss_forward, rasterize_radar_depth, splat_to_bev,
    vanilla_lss, CameraModel, DepthBins, LssParams, LssVariant, SplatPlan,
};
use rand::Rng;

/// Softmax over the first index of `logits[k][px]`.
fn softmax_cols(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let px = logits[0].len();
    let mut out = vec![vec![0.0; px]; logits.len()];
    for p in 0..px {
        let m = logits.iter().map(|l| l[p]).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logits.iter().map(|l| (l[p] - m).exp()).sum();
        for (k, l) in logits.iter().enumerate() {
            out[k][p] = (l[p] - m).exp() / s;
        }
    }
    out
}

/// 1×1 convolution written out per output channel and pixel.
fn pointwise(conv: &Conv2d, input: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cin = input.len();
    (0..conv.out_channels())
        .map(|o| {
            (0..input[0].len())
                .map(|p| {
                    conv.bias.data()[o]
                        + (0..cin)
                            .map(|i| conv.kernel.data()[o * cin + i] * input[i][p])
                            .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

fn channels(t: &Tensor) -> Vec<Vec<f64>> {
    let n = t.dim(1) * t.dim(2);
    t.data().chunks(n).map(|c| c.to_vec()).collect()
}

/// Reference lift for all three variants: depth distribution and context.
fn lss_ref(p: &LssParams, x: &Tensor, d: &Tensor) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let xs = channels(x);
    match p.variant {
        LssVariant::Vanilla => (softmax_cols(&pointwise(&p.depth_net, &xs)), xs),
        LssVariant::DepthSupervised => {
            let mut input = channels(d);
            input.extend(xs);
            let y = pointwise(&p.depth_net, &input);
            (softmax_cols(&y[..p.bins]), y[p.bins..].to_vec())
        }
        LssVariant::DepthContext => (
            softmax_cols(&pointwise(&p.depth_net, &xs)),
            pointwise(p.context_net.as_ref().unwrap(), &xs),
        ),
    }
}

#[test]
fn lss_variants_match_reference() {
    let mut r = rng(31);
    for i in 0..60 {
        let variant = LssVariant::ALL[i % 3];
        let (c, bins, h, w) = (
            r.random_range(1..=4),
            r.random_range(2..=6),
            r.random_range(1..=4),
            r.random_range(1..=5),
        );
        let p = LssParams::random(variant, c, bins, &mut r).unwrap();
        let x = uniform(&[c, h, w], -2.0, 2.0, &mut r);
        let d = uniform(&[1, h, w], 0.0, 10.0, &mut r);
        let out = lss_forward(&p, &x, Some(&d)).unwrap();
        let (depth, ctx) = lss_ref(&p, &x, &d);
        let n = h * w;
        for k in 0..bins {
            for px in 0..n {
                assert!((out.depth.data()[k * n + px] - depth[k][px]).abs() < 1e-14);
            }
        }
        assert_eq!(out.context.dim(0), ctx.len());
        for ch in 0..ctx.len() {
            for k in 0..bins {
                for px in 0..n {
                    let got = out.frustum.data()[(ch * bins + k) * n + px];
                    let want = ctx[ch][px] * depth[k][px];
                    assert!((got - want).abs() < 1e-14, "{}: {got} vs {want}", variant.name());
                }
            }
        }
    }
}

#[test]
fn depth_distributions_are_normalized() {
    let (pixels, worst) = common::check_depth_normalization(1000, 32).unwrap();
    println!("{pixels} pixels, worst {worst:.2e}");
}

#[test]
fn identity_context_net_reduces_to_vanilla() {
    let mut r = rng(33);
    let v = LssParams::random(LssVariant::Vanilla, 3, 4, &mut r).unwrap();
    let dc = LssParams {
        variant: LssVariant::DepthContext,
        context_net: Some(Conv2d::identity(3)),
        ..v.clone()
    };
    let x = uniform(&[3, 4, 5], -1.0, 1.0, &mut r);
    assert_eq!(vanilla_lss(&v, &x).unwrap(), depth_context_lss(&dc, &x).unwrap());
}

#[test]
fn variant_entry_points_check_their_variant() {
    let mut r = rng(34);
    let v = LssParams::random(LssVariant::Vanilla, 2, 3, &mut r).unwrap();
    let ds = LssParams::random(LssVariant::DepthSupervised, 2, 3, &mut r).unwrap();
    let x = uniform(&[2, 3, 3], -1.0, 1.0, &mut r);
    let d = Tensor::zeros(&[1, 3, 3]);
    assert!(depth_context_lss(&v, &x).is_err());
    assert!(depth_supervised_lss(&ds, &x, &d).is_ok());
    assert!(lss_forward(&ds, &x, None).is_err());
    assert!(lss_forward(&ds, &x, Some(&Tensor::zeros(&[1, 3, 4]))).is_err());
}

#[test]
fn splat_conserves_in_range_mass() {
    match common::check_splat_conservation(100, 35) {
        Ok(s) => println!("{s}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn splat_matches_per_cell_brute_force() {
    let mut r = rng(36);
    for i in 0..100 {
        let rc = RandomCamera::sample(&mut r);
        let c = r.random_range(1..=3);
        let f = uniform(&[c, rc.bins.count, rc.cam.height, rc.cam.width], -1.0, 1.0, &mut r);
        let plan = SplatPlan::new(&rc.cam, &rc.bins, rc.grid).unwrap();
        let got = splat_to_bev(&f, &plan).unwrap();
        let want = common::splat_ref(&rc, &f);
        let err = got.tensor.max_abs_diff(&want);
        assert!(err < 1e-12, "camera {i}: {err:e}");
    }
}

#[test]
fn splat_rejects_wrong_frustum_shape() {
    let cam = CameraModel::toy();
    let bins = DepthBins::new(4, 1.0, 9.0).unwrap();
    let plan = SplatPlan::new(&cam, &bins, Default::default()).unwrap();
    assert!(splat_to_bev(&Tensor::zeros(&[2, 3, cam.height, cam.width]), &plan).is_err());
    assert!(splat_to_bev(&Tensor::zeros(&[2, 4, cam.height, cam.width]), &plan).is_ok());
}

#[test]
fn frustum_points_reproject_to_their_pixels() {
    let cam = CameraModel::toy();
    let bins = DepthBins::new(5, 1.0, 11.0).unwrap();
    let pts = frustum_points(&cam, &bins);
    assert_eq!(pts.len(), 5 * cam.height * cam.width);
    for (i, p) in pts.iter().enumerate() {
        let (d, row, col) = (i / (cam.height * cam.width), i / cam.width % cam.height, i % cam.width);
        let (u, v, z) = cam.project(*p).unwrap();
        assert!((u - col as f64).abs() < 1e-9 && (v - row as f64).abs() < 1e-9);
        assert!((z - (1.0 + 2.0 * (d as f64 + 0.5))).abs() < 1e-9);
    }
}

#[test]
fn radar_depth_keeps_nearest_return_per_pixel() {
    let mut r = rng(37);
    let cam = CameraModel::toy();
    let points: Vec<RadarPoint> = (0..400)
        .map(|_| {
            RadarPoint::new(
                r.random_range(-2.0..15.0),
                r.random_range(-6.0..6.0),
                r.random_range(-1.0..2.0),
                0.0,
            )
        })
        .collect();
    let got = rasterize_radar_depth(&points, &cam);
    let mut filled = 0;
    for row in 0..cam.height {
        for col in 0..cam.width {
            let nearest = points
                .iter()
                .filter_map(|p| cam.project(p.xyz()))
                .filter(|&(u, v, _)| u.round() == col as f64 && v.round() == row as f64)
                .map(|(_, _, z)| z)
                .fold(f64::INFINITY, f64::min);
            let want = if nearest.is_finite() { nearest } else { 0.0 };
            assert_eq!(got.data()[row * cam.width + col], want);
            filled += usize::from(want > 0.0);
        }
    }
    assert!(filled > 10, "only {filled} pixels hit");
}
