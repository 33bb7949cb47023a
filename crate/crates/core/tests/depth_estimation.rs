//! Monocular depth: Monte Carlo check of the stated variances and a
//! render-and-detect sweep over distance.

use legtrack::depth::{
    backproject, depth_from_area, depth_from_distance, fuse_depth, CameraModel, DepthFilterParams,
};
use legtrack::quat::Vec3;
use legtrack::sim::{render_frame, MarkerImage};
use legtrack::vision::{detect_markers, DetectorParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

fn cam() -> CameraModel<f64> {
    CameraModel::default_vga()
}

#[test]
fn distance_depth_variance_matches_monte_carlo() {
    let cam = cam();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // ±0.5 px read as a uniform quantization error has σ = 1/√12; use the
    // stated 0.5 px as a Gaussian σ instead so the model is exact.
    let jitter = Normal::new(0.0, 0.5).unwrap();
    let z_true = 2.5;
    let (a, b) = (Vec3::new(0.05, -0.2, z_true), Vec3::new(0.02, 0.2, z_true));
    let (pa, pb) = (cam.project(a), cam.project(b));
    let len = (a - b).norm();
    let n = 20_000;
    let mut zs = Vec::with_capacity(n);
    let mut stated = 0.0;
    for _ in 0..n {
        let na = (pa.0 + jitter.sample(&mut rng), pa.1 + jitter.sample(&mut rng));
        let nb = (pb.0 + jitter.sample(&mut rng), pb.1 + jitter.sample(&mut rng));
        let e = depth_from_distance(na, nb, len, &cam).unwrap();
        stated += e.var;
        zs.push(e.z);
    }
    let mean = zs.iter().sum::<f64>() / n as f64;
    let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    stated /= n as f64;
    assert!((mean - z_true).abs() < 0.01, "mean {mean}");
    // first-order propagation: only the jitter along the separation moves d
    let ratio = var / stated;
    assert!((0.95..1.05).contains(&ratio), "sampled/stated variance {ratio}");
}

#[test]
fn backprojection_inverts_projection() {
    let cam = cam();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = Uniform::new(-0.6, 0.6).unwrap();
    let zd = Uniform::new(1.0, 5.0).unwrap();
    for _ in 0..200 {
        let p = Vec3::new(u.sample(&mut rng), u.sample(&mut rng), zd.sample(&mut rng));
        let back = backproject(cam.project(p), p.z, &cam);
        assert!((back - p).norm() < 1e-12);
    }
}

#[test]
fn rendered_marker_area_gives_depth_within_two_percent() {
    let cam = cam();
    let params = DetectorParams::default();
    for k in 0..13 {
        let z = 1.5 + 0.25 * f64::from(k);
        let side = cam.marker_side_px(z);
        let marker = |u: f64, visible: bool| MarkerImage {
            center: (u, 240.3),
            side_px: side,
            visible,
        };
        let frame = render_frame(&cam, &[marker(300.37, true), marker(0.0, false), marker(0.0, false)]);
        let blobs = detect_markers(&frame, &params, 3);
        assert_eq!(blobs.len(), 1, "z = {z}");
        let est = depth_from_area(blobs[0].best_area(), &cam).unwrap();
        let rel = (est.z - z).abs() / z;
        assert!(rel < 0.02, "z = {z}: estimated {} ({:.2}%)", est.z, 100.0 * rel);
        let (cu, cv) = blobs[0].centroid;
        assert!((cu - 300.37).abs() < 0.5 && (cv - 240.3).abs() < 0.5, "centroid {cu},{cv}");
    }
}

#[test]
fn filter_holds_through_gaps_and_reconverges() {
    let cam = cam();
    let area = |z: f64| depth_from_area(cam.marker_side_px(z).powi(2), &cam).ok();
    let mut stream = Vec::new();
    for k in 0..60 {
        let z = 2.0 + 0.002 * f64::from(k);
        let pair = (None, area(z));
        // frames 20..30 see nothing
        stream.push(if (20..30).contains(&k) { (None, None) } else { pair });
    }
    let out = fuse_depth(&stream, DepthFilterParams::default());
    assert!(out[25].estimate.is_some() && !out[25].valid);
    let last = out[59].estimate.unwrap();
    assert!((last.z - (2.0 + 0.002 * 59.0)).abs() < 0.02, "{}", last.z);
}
