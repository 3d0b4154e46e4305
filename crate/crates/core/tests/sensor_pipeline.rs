use idrive::image::RgbImage;
use idrive::sensor::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent per-point binning written from the stated mapping.
fn naive_bins(points: &[[f64; 3]], z_ground: f64) -> Vec<u32> {
    let mut grid = vec![0u32; 256 * 256 * 2];
    for p in points {
        let (x, y, z) = (p[0], p[1], p[2]);
        if x < 0.0 || x >= 32.0 || y < -16.0 || y >= 16.0 {
            continue;
        }
        let row = 255 - (x * 8.0).floor() as usize;
        let col = ((y + 16.0) * 8.0).floor() as usize;
        let bin = if z <= z_ground { 0 } else { 1 };
        grid[(row * 256 + col) * 2 + bin] += 1;
    }
    grid
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, in_range: bool) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            if in_range {
                [rng.gen_range(0.0..32.0), rng.gen_range(-16.0..16.0), rng.gen_range(-0.5..2.0)]
            } else {
                [rng.gen_range(-10.0..45.0), rng.gen_range(-25.0..25.0), rng.gen_range(-0.5..2.0)]
            }
        })
        .collect()
}

#[test]
fn empty_cloud_rasterizes_to_zero() {
    let h = rasterize_bev(&PointCloud::empty(0), &BevConfig::default());
    assert_eq!(h.total(), 0);
    assert_eq!(h.discarded, 0);
}

#[test]
fn single_point_lands_in_near_centre_cell() {
    let pc = PointCloud::new(vec![[0.0, 0.0, 1.0]], 0);
    let h = rasterize_bev(&pc, &BevConfig::default());
    assert_eq!(h.get(255, 128, 1), 1);
    assert_eq!(h.total(), 1);
}

#[test]
fn boundaries_are_half_open() {
    let pc = PointCloud::new(
        vec![[32.0, 0.0, 0.0], [0.0, 16.0, 0.0], [-1e-12, 0.0, 0.0], [31.999, -16.0, 0.0]],
        0,
    );
    let h = rasterize_bev(&pc, &BevConfig::default());
    assert_eq!(h.total(), 1);
    assert_eq!(h.discarded, 3);
    assert_eq!(h.get(0, 0, 0), 1);
}

#[test]
fn thousand_points_match_naive_binning() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pts = random_points(&mut rng, 1000, true);
    let h = rasterize_bev(&PointCloud::new(pts.clone(), 0), &BevConfig::default());
    assert_eq!(h.total(), 1000);
    assert_eq!(h.counts(), naive_bins(&pts, 0.2).as_slice());
}

#[test]
fn transform_identity_and_translation() {
    let pc = PointCloud::new(vec![[0.0, 0.0, 0.3], [3.0, -2.0, 1.0]], -1);
    let p = EgoPose::new(4.0, -7.0, 0.6);
    let same = transform_points(&pc, &p, &p);
    for (a, b) in same.points.iter().zip(&pc.points) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }
    let moved = transform_points(&pc, &EgoPose::origin(), &EgoPose::new(1.0, 0.0, 0.0));
    assert_eq!(moved.points[0], [-1.0, 0.0, 0.3]);
}

#[test]
fn transform_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let a = EgoPose::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-3.0..3.0));
        let b = EgoPose::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-3.0..3.0));
        let pc = PointCloud::new(random_points(&mut rng, 50, false), -2);
        let back = transform_points(&transform_points(&pc, &a, &b), &b, &a);
        for (p, q) in back.points.iter().zip(&pc.points) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn static_scene_frames_give_identical_channels() {
    let pts = vec![[10.0, 2.0, 1.0], [5.0, -3.0, 0.0], [20.0, 0.5, 1.5]];
    let clouds: Vec<_> = (0..3).map(|t| PointCloud::new(pts.clone(), t - 2)).collect();
    let poses = vec![EgoPose::origin(); 3];
    let img = build_pseudo_image(&clouds, &poses, &BevConfig::default()).unwrap();
    for row in 0..256 {
        for col in 0..256 {
            let c1 = img.count(row, col, 1);
            assert_eq!(c1, img.count(row, col, 2));
            assert_eq!(c1, img.count(row, col, 3));
        }
    }
    let (r, c) = bev_cell(5.0, -3.0, 256).unwrap();
    assert_eq!(img.count(r, c, 0), 3);
}

#[test]
fn moving_point_occupies_distinct_cells() {
    // one vehicle point advancing 2 m per frame, ego parked
    let clouds: Vec<_> = (0..3)
        .map(|f| PointCloud::new(vec![[8.0 + 2.0 * f as f64, 0.0, 1.0]], f as i32 - 2))
        .collect();
    let img = build_pseudo_image(&clouds, &[EgoPose::origin(); 3], &BevConfig::default()).unwrap();
    let cells: Vec<(usize, usize)> = (0..3)
        .map(|f| bev_cell(8.0 + 2.0 * f as f64, 0.0, 256).unwrap())
        .collect();
    for (f, &(r, c)) in cells.iter().enumerate() {
        for ch in 1..4 {
            assert_eq!(img.count(r, c, ch), u32::from(ch == f + 1));
        }
    }
}

#[test]
fn empty_frames_and_wrong_count() {
    let clouds: Vec<_> = (0..3).map(|t| PointCloud::empty(t - 2)).collect();
    let img = build_pseudo_image(&clouds, &[EgoPose::origin(); 3], &BevConfig::default()).unwrap();
    assert!(img.values.iter().all(|&v| v == 0.0));
    let err = build_pseudo_image(&clouds[..2], &[EgoPose::origin(); 2], &BevConfig::default()).unwrap_err();
    assert_eq!(err.category(), "contract");
    let h = rasterize_bev(&clouds[0], &BevConfig::default());
    assert!(stack_frames(&[h.clone(), h], &[EgoPose::origin(); 2], &BevConfig::default()).is_err());
}

#[test]
fn normalization_caps_counts() {
    let pts = vec![[1.0, 1.0, 1.0]; 40];
    let clouds: Vec<_> = (0..3).map(|t| PointCloud::new(pts.clone(), t - 2)).collect();
    let img = build_pseudo_image(&clouds, &[EgoPose::origin(); 3], &BevConfig::default()).unwrap();
    let (r, c) = bev_cell(1.0, 1.0, 256).unwrap();
    assert_eq!(img.count(r, c, 3), 40);
    assert_eq!(img.value(r, c, 3), 1.0);
}

#[test]
fn crop_uniform_and_marker() {
    let gray = RgbImage::filled(400, 300, [128, 128, 128]);
    let crop = crop_image(&gray, CropAnchor::Bottom).unwrap();
    assert_eq!(crop.values.len(), 256 * 256 * 3);
    assert!(crop.values.iter().all(|&v| v == 128.0 / 255.0));

    let mut raw = RgbImage::new(400, 300);
    raw.set(200, 200, [255, 255, 255]);
    let crop = crop_image(&raw, CropAnchor::Bottom).unwrap();
    assert_eq!(crop.get(200 - 44, 128, 0), 1.0);
    let lit = crop.values.iter().filter(|&&v| v > 0.0).count();
    assert_eq!(lit, 3);

    assert!(crop_image(&RgbImage::new(256, 256), CropAnchor::Bottom).is_err());
    assert!(crop_image(&raw, CropAnchor::Top(45)).is_err());
}

#[test]
fn crop_matches_index_oracle() {
    let mut raw = RgbImage::new(400, 300);
    for y in 0..300 {
        for x in 0..400 {
            raw.set(x, y, [(x % 256) as u8, (y % 256) as u8, ((x * 7 + y * 3) % 256) as u8]);
        }
    }
    for anchor in [CropAnchor::Bottom, CropAnchor::Top(0), CropAnchor::Top(10)] {
        let row0 = match anchor {
            CropAnchor::Bottom => 44,
            CropAnchor::Top(o) => o,
        };
        let crop = crop_image(&raw, anchor).unwrap();
        for r in (0..256).step_by(7) {
            for c in (0..256).step_by(5) {
                let px = raw.pixel(c + 72, r + row0);
                for ch in 0..3 {
                    assert_eq!(crop.get(r, c, ch), px[ch] as f32 / 255.0);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rasterization_conserves_count(seed in any::<u64>(), n in 0usize..600) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n, false);
        let h = rasterize_bev(&PointCloud::new(pts.clone(), 0), &BevConfig::default());
        let in_range = pts.iter().filter(|p| bev_cell(p[0], p[1], 256).is_some()).count();
        prop_assert_eq!(h.total() as usize, in_range);
        prop_assert_eq!(h.total() as usize + h.discarded, n);
    }

    #[test]
    fn ground_channel_is_frame_sum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = BevConfig::default();
        let clouds: Vec<_> = (0..3).map(|t| PointCloud::new(random_points(&mut rng, 200, true), t - 2)).collect();
        let hists: Vec<_> = clouds.iter().map(|c| rasterize_bev(c, &cfg)).collect();
        let img = stack_frames(&hists, &[EgoPose::origin(); 3], &cfg).unwrap();
        for row in 0..256 {
            for col in 0..256 {
                let sum: u32 = hists.iter().map(|h| h.get(row, col, 0)).sum();
                prop_assert_eq!(img.count(row, col, 0), sum);
            }
        }
    }

    #[test]
    fn aligned_static_scene_matches_direct(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = BevConfig::default();
        let current = EgoPose::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(-3.0..3.0));
        let past = EgoPose::new(
            current.x + rng.gen_range(-4.0..4.0),
            current.y + rng.gen_range(-4.0..4.0),
            current.yaw + rng.gen_range(-0.4..0.4),
        );
        // world-fixed points, kept away from cell boundaries in the current frame
        let mut cur_pts = Vec::new();
        while cur_pts.len() < 300 {
            let p: [f64; 3] = [rng.gen_range(0.0..32.0), rng.gen_range(-16.0..16.0), rng.gen_range(-0.2..2.0)];
            let fx = (p[0] * 8.0).fract();
            let fy = ((p[1] + 16.0) * 8.0).fract();
            if fx.min(1.0 - fx) > 1e-5 && fy.min(1.0 - fy) > 1e-5 {
                cur_pts.push(p);
            }
        }
        let past_pts = transform_points(&PointCloud::new(cur_pts.clone(), 0), &current, &past);
        let aligned = transform_points(&past_pts, &past, &current);
        let direct = rasterize_bev(&PointCloud::new(cur_pts, 0), &cfg);
        let realigned = rasterize_bev(&aligned, &cfg);
        prop_assert_eq!(realigned.counts(), direct.counts());
    }
}
