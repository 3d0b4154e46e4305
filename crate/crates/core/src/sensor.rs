//! LiDAR and camera preprocessing into model inputs.
//!
//! The BEV grid covers 32 m ahead of the ego vehicle and 16 m to each side.
//! At the full 256-cell resolution that is 8 cells per metre. Row 0 is the far
//! edge; column 0 is 16 m to the left.

use std::f64::consts::PI;

use crate::error::{contract_err, Result};
use crate::image::RgbImage;
use crate::tensor::{Element, Tensor};

pub const BEV_RANGE_FORWARD: f64 = 32.0;
pub const BEV_RANGE_SIDE: f64 = 16.0;
pub const BEV_SIZE: usize = 256;
/// Number of LiDAR frames fused into one pseudo-image (two past, one current).
pub const LIDAR_FRAMES: usize = 3;
pub const CAMERA_RAW_WIDTH: usize = 400;
pub const CAMERA_RAW_HEIGHT: usize = 300;
pub const CAMERA_SIZE: usize = 256;

/// Maps an ego-frame point to its BEV cell on an `r×r` grid, or `None` when
/// it falls outside `[0, 32) × [−16, 16)`.
pub fn bev_cell(x: f64, y: f64, r: usize) -> Option<(usize, usize)> {
    if !(0.0..BEV_RANGE_FORWARD).contains(&x) || !(-BEV_RANGE_SIDE..BEV_RANGE_SIDE).contains(&y) {
        return None;
    }
    let s = r as f64 / BEV_RANGE_FORWARD;
    let i = ((x * s).floor() as usize).min(r - 1);
    let j = (((y + BEV_RANGE_SIDE) * s).floor() as usize).min(r - 1);
    Some((r - 1 - i, j))
}

/// Ego-frame coordinates of the centre of cell `(row, col)` on an `r×r` grid.
pub fn bev_cell_center(row: usize, col: usize, r: usize) -> (f64, f64) {
    let s = r as f64 / BEV_RANGE_FORWARD;
    let i = (r - 1 - row) as f64;
    ((i + 0.5) / s, (col as f64 + 0.5) / s - BEV_RANGE_SIDE)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl EgoPose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        EgoPose {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn origin() -> Self {
        EgoPose::new(0.0, 0.0, 0.0)
    }

    /// Ego-frame point to world frame.
    pub fn to_world(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    /// World-frame point to this ego frame.
    pub fn to_local(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (wx - self.x, wy - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    /// 0 for the current frame, negative for past frames.
    pub frame_time_index: i32,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, frame_time_index: i32) -> Self {
        PointCloud {
            points,
            frame_time_index,
        }
    }

    pub fn empty(frame_time_index: i32) -> Self {
        Self::new(Vec::new(), frame_time_index)
    }
}

/// Re-expresses points recorded in the `from` ego frame in the `to` ego frame.
/// Height is untouched.
pub fn transform_points(pc: &PointCloud, from: &EgoPose, to: &EgoPose) -> PointCloud {
    let points = pc
        .points
        .iter()
        .map(|&[x, y, z]| {
            let (wx, wy) = from.to_world(x, y);
            let (lx, ly) = to.to_local(wx, wy);
            [lx, ly, z]
        })
        .collect();
    PointCloud::new(points, pc.frame_time_index)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevConfig {
    /// Points with `z <= z_ground` land in the ground bin.
    pub z_ground: f64,
    /// Per-cell count at which normalized inputs saturate to 1.
    pub count_cap: u32,
}

impl Default for BevConfig {
    fn default() -> Self {
        BevConfig {
            z_ground: 0.2,
            count_cap: 16,
        }
    }
}

/// `R×R×2` point counts; bin 0 is at/below ground, bin 1 above.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BevHistogram {
    counts: Vec<u32>,
    pub discarded: usize,
}

impl BevHistogram {
    pub fn zeros() -> Self {
        BevHistogram {
            counts: vec![0; BEV_SIZE * BEV_SIZE * 2],
            discarded: 0,
        }
    }

    pub fn get(&self, row: usize, col: usize, bin: usize) -> u32 {
        self.counts[(row * BEV_SIZE + col) * 2 + bin]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// One bin as a flat `R×R` plane.
    pub fn channel(&self, bin: usize) -> Vec<u32> {
        self.counts.iter().skip(bin).step_by(2).copied().collect()
    }
}

pub fn rasterize_bev(pc: &PointCloud, cfg: &BevConfig) -> BevHistogram {
    let mut h = BevHistogram::zeros();
    for &[x, y, z] in &pc.points {
        match bev_cell(x, y, BEV_SIZE) {
            Some((row, col)) => {
                let bin = usize::from(z > cfg.z_ground);
                h.counts[(row * BEV_SIZE + col) * 2 + bin] += 1;
            }
            None => h.discarded += 1,
        }
    }
    h
}

/// `256×256×4` LiDAR input, channel-last: summed ground counts, then the
/// above-ground counts of each frame from oldest to current.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarPseudoImage {
    pub counts: Vec<u32>,
    pub values: Vec<f32>,
}

impl LidarPseudoImage {
    pub const CHANNELS: usize = LIDAR_FRAMES + 1;

    pub fn count(&self, row: usize, col: usize, ch: usize) -> u32 {
        self.counts[(row * BEV_SIZE + col) * Self::CHANNELS + ch]
    }

    pub fn value(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.values[(row * BEV_SIZE + col) * Self::CHANNELS + ch]
    }

    /// Channel-first `4×256×256` tensor for the network.
    pub fn to_chw<T: Element>(&self) -> Tensor<T> {
        hwc_to_chw(&self.values, BEV_SIZE, BEV_SIZE, Self::CHANNELS)
    }
}

/// Fuses three aligned frames (oldest first) into the pseudo-image.
pub fn stack_frames(hists: &[BevHistogram], poses: &[EgoPose], cfg: &BevConfig) -> Result<LidarPseudoImage> {
    if hists.len() != LIDAR_FRAMES || poses.len() != LIDAR_FRAMES {
        return Err(contract_err!(
            "stack_frames needs exactly {LIDAR_FRAMES} histograms and poses, got {} and {}",
            hists.len(),
            poses.len()
        ));
    }
    let ch = LidarPseudoImage::CHANNELS;
    let cells = BEV_SIZE * BEV_SIZE;
    let mut counts = vec![0u32; cells * ch];
    for cell in 0..cells {
        for (f, h) in hists.iter().enumerate() {
            counts[cell * ch] += h.counts[cell * 2];
            counts[cell * ch + 1 + f] = h.counts[cell * 2 + 1];
        }
    }
    let cap = cfg.count_cap.max(1);
    let values = counts
        .iter()
        .map(|&c| c.min(cap) as f32 / cap as f32)
        .collect();
    Ok(LidarPseudoImage { counts, values })
}

/// Aligns every frame to the last pose, rasterizes and stacks.
pub fn build_pseudo_image(clouds: &[PointCloud], poses: &[EgoPose], cfg: &BevConfig) -> Result<LidarPseudoImage> {
    if clouds.len() != LIDAR_FRAMES || poses.len() != LIDAR_FRAMES {
        return Err(contract_err!(
            "pseudo-image needs {LIDAR_FRAMES} clouds and poses, got {} and {}",
            clouds.len(),
            poses.len()
        ));
    }
    let current = poses[LIDAR_FRAMES - 1];
    let hists: Vec<BevHistogram> = clouds
        .iter()
        .zip(poses)
        .map(|(pc, pose)| rasterize_bev(&transform_points(pc, pose, &current), cfg))
        .collect();
    stack_frames(&hists, poses, cfg)
}

/// Where the 256-row crop window starts inside the 300-row raw frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropAnchor {
    Bottom,
    Top(usize),
}

impl Default for CropAnchor {
    fn default() -> Self {
        CropAnchor::Bottom
    }
}

/// `256×256×3` camera input, channel-last, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraImage {
    pub values: Vec<f32>,
}

impl CameraImage {
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.values[(row * CAMERA_SIZE + col) * 3 + ch]
    }

    pub fn to_chw<T: Element>(&self) -> Tensor<T> {
        hwc_to_chw(&self.values, CAMERA_SIZE, CAMERA_SIZE, 3)
    }
}

pub fn crop_image(raw: &RgbImage, anchor: CropAnchor) -> Result<CameraImage> {
    if raw.width != CAMERA_RAW_WIDTH || raw.height != CAMERA_RAW_HEIGHT {
        return Err(contract_err!(
            "camera frame must be {CAMERA_RAW_WIDTH}×{CAMERA_RAW_HEIGHT}, got {}×{}",
            raw.width,
            raw.height
        ));
    }
    let col0 = (CAMERA_RAW_WIDTH - CAMERA_SIZE) / 2;
    let row0 = match anchor {
        CropAnchor::Bottom => CAMERA_RAW_HEIGHT - CAMERA_SIZE,
        CropAnchor::Top(off) => {
            if off + CAMERA_SIZE > CAMERA_RAW_HEIGHT {
                return Err(contract_err!("crop offset {off} leaves fewer than {CAMERA_SIZE} rows"));
            }
            off
        }
    };
    let mut values = Vec::with_capacity(CAMERA_SIZE * CAMERA_SIZE * 3);
    for r in row0..row0 + CAMERA_SIZE {
        for c in col0..col0 + CAMERA_SIZE {
            let px = raw.pixel(c, r);
            values.extend(px.iter().map(|&v| v as f32 / 255.0));
        }
    }
    Ok(CameraImage { values })
}

pub(crate) fn hwc_to_chw<T: Element>(values: &[f32], h: usize, w: usize, c: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + x] = T::of(values[(y * w + x) * c + ch] as f64);
            }
        }
    }
    Tensor::new(&[c, h, w], out).expect("consistent extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_mapping_corners() {
        assert_eq!(bev_cell(0.0, 0.0, 256), Some((255, 128)));
        assert_eq!(bev_cell(0.0, -16.0, 256), Some((255, 0)));
        assert_eq!(bev_cell(31.999, 15.999, 256), Some((0, 255)));
        assert_eq!(bev_cell(32.0, 0.0, 256), None);
        assert_eq!(bev_cell(-0.01, 0.0, 256), None);
        assert_eq!(bev_cell(1.0, 16.0, 256), None);
        let (x, y) = bev_cell_center(255, 128, 256);
        assert_eq!((x, y), (0.0625, 0.0625));
        assert_eq!(bev_cell(x, y, 256), Some((255, 128)));
    }

    #[test]
    fn angle_normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_frame_count_is_a_contract_error() {
        let h = BevHistogram::zeros();
        let p = EgoPose::origin();
        let err = stack_frames(&[h.clone(), h], &[p, p], &BevConfig::default()).unwrap_err();
        assert_eq!(err.category(), "contract");
    }

    #[test]
    fn crop_rejects_wrong_extents() {
        let raw = RgbImage::new(300, 400);
        assert!(crop_image(&raw, CropAnchor::Bottom).is_err());
        let raw = RgbImage::new(400, 300);
        assert!(crop_image(&raw, CropAnchor::Top(60)).is_err());
        assert!(crop_image(&raw, CropAnchor::Top(44)).is_ok());
    }
}
