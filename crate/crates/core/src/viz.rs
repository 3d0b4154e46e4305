//! Rendering of model inputs and predictions as PPM panels.
//!
//! Colour key of the BEV panels: drivable area grey, lanes white,
//! background black, ego red, other agents yellow, waypoints blue.

use std::fmt::Write as _;
use std::path::Path;

use crate::codec::{decode, AgentBox, TIMESTEPS};
use crate::error::{contract_err, Error, Result};
use crate::image::RgbImage;
use crate::model::{HeadOutputs, ModelInput};
use crate::sensor::{bev_cell, bev_cell_center, BEV_SIZE, CAMERA_SIZE};
use crate::sim::Weather;
use crate::tensor::Element;

pub const DRIVABLE: [u8; 3] = [128, 128, 128];
pub const LANE: [u8; 3] = [255, 255, 255];
pub const BACKGROUND: [u8; 3] = [0, 0, 0];
pub const EGO: [u8; 3] = [255, 0, 0];
pub const AGENT: [u8; 3] = [255, 255, 0];
pub const WAYPOINT: [u8; 3] = [0, 0, 255];

/// Heat value above which a density peak is drawn.
pub const DETECTION_THRESHOLD: f64 = 0.3;

const EGO_HALF_WIDTH: f64 = 0.9;
const EGO_FRONT: f64 = 2.2;

#[derive(Debug, Clone)]
pub struct Panels {
    pub camera: RgbImage,
    pub lidar: RgbImage,
    /// Map, current detections, ego and waypoints at `R×R`.
    pub bev: RgbImage,
    /// Map and detections for each predicted timestep.
    pub timesteps: Vec<RgbImage>,
    pub sidecar: String,
}

fn class_color(c: u8) -> [u8; 3] {
    match c {
        0 => DRIVABLE,
        1 => LANE,
        _ => BACKGROUND,
    }
}

fn map_panel(classes: &[u8], r: usize) -> RgbImage {
    let mut img = RgbImage::new(r, r);
    for row in 0..r {
        for col in 0..r {
            img.set(col, row, class_color(classes[row * r + col]));
        }
    }
    img
}

fn draw_box(img: &mut RgbImage, b: &AgentBox, color: [u8; 3]) {
    let r = img.width;
    let (c, s) = (b.theta.cos(), b.theta.sin());
    let mut hit = false;
    for row in 0..r {
        for col in 0..r {
            let (x, y) = bev_cell_center(row, col, r);
            let (dx, dy) = (x - b.x, y - b.y);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            if u.abs() <= b.l / 2.0 && v.abs() <= b.w / 2.0 {
                img.set(col, row, color);
                hit = true;
            }
        }
    }
    if !hit {
        // Boxes smaller than a cell still get their centre marked.
        if let Some((row, col)) = bev_cell(b.x, b.y, r) {
            img.set(col, row, color);
        }
    }
}

fn draw_ego(img: &mut RgbImage) {
    let r = img.width;
    for row in 0..r {
        for col in 0..r {
            let (x, y) = bev_cell_center(row, col, r);
            if x <= EGO_FRONT && y.abs() <= EGO_HALF_WIDTH {
                img.set(col, row, EGO);
            }
        }
    }
    img.set(r / 2, r - 1, EGO);
}

fn draw_waypoints(img: &mut RgbImage, wp: &[[f64; 2]]) {
    let r = img.width;
    let rad = (r / 64) as i64;
    for p in wp {
        if let Some((row, col)) = bev_cell(p[0], p[1], r) {
            for dr in -rad..=rad {
                for dc in -rad..=rad {
                    img.put(col as i64 + dc, row as i64 + dr, WAYPOINT);
                }
            }
        }
    }
}

fn camera_panel<T: Element>(input: &ModelInput<T>) -> RgbImage {
    let n = CAMERA_SIZE * CAMERA_SIZE;
    let d = input.image.data();
    let mut img = RgbImage::new(CAMERA_SIZE, CAMERA_SIZE);
    for (i, px) in img.data.chunks_exact_mut(3).enumerate() {
        for c in 0..3 {
            px[c] = (d[c * n + i].as_f64() * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    img
}

/// Ground returns dim, current above-ground returns bright.
fn lidar_panel<T: Element>(input: &ModelInput<T>) -> RgbImage {
    let n = BEV_SIZE * BEV_SIZE;
    let d = input.lidar.data();
    let mut img = RgbImage::new(BEV_SIZE, BEV_SIZE);
    for (i, px) in img.data.chunks_exact_mut(3).enumerate() {
        let ground = d[i].as_f64();
        let now = d[3 * n + i].as_f64();
        let v = (80.0 * ground).max(255.0 * now).round().clamp(0.0, 255.0) as u8;
        px.copy_from_slice(&[v, v, v]);
    }
    img
}

fn sidecar(out: &HeadOutputs) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "traffic_light {:.4}", out.traffic[0]);
    let _ = writeln!(s, "stop_sign {:.4}", out.traffic[1]);
    let w = Weather::from_index(out.weather_class()).expect("four weather classes");
    let _ = writeln!(s, "weather {}", w.name());
    for (w, p) in Weather::ALL.iter().zip(out.weather) {
        let _ = writeln!(s, "p_{} {:.4}", w.name(), p);
    }
    for (i, p) in out.waypoints.iter().enumerate() {
        let _ = writeln!(s, "waypoint{} {:.3} {:.3}", i + 1, p[0], p[1]);
    }
    s
}

pub fn render<T: Element>(input: &ModelInput<T>, out: &HeadOutputs) -> Result<Panels> {
    let r = out.density.r;
    if out.bev.len() != r * r * 3 {
        return Err(contract_err!("BEV logits hold {} values, expected {}", out.bev.len(), r * r * 3));
    }
    let classes = out.bev_classes();
    let boxes = decode(&out.density, DETECTION_THRESHOLD);
    let mut timesteps = Vec::with_capacity(TIMESTEPS);
    for t in 1..=TIMESTEPS {
        let mut img = map_panel(&classes, r);
        for b in boxes.iter().filter(|b| b.timestep == t) {
            draw_box(&mut img, b, AGENT);
        }
        draw_ego(&mut img);
        timesteps.push(img);
    }
    let mut bev = timesteps[0].clone();
    draw_waypoints(&mut bev, &out.waypoints);
    Ok(Panels {
        camera: camera_panel(input),
        lidar: lidar_panel(input),
        bev,
        timesteps,
        sidecar: sidecar(out),
    })
}

impl Panels {
    /// Writes `camera.ppm`, `lidar.ppm`, `bev.ppm`, `density_t<k>.ppm` and
    /// `rules.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.camera.save(&dir.join("camera.ppm"))?;
        self.lidar.save(&dir.join("lidar.ppm"))?;
        self.bev.save(&dir.join("bev.ppm"))?;
        for (t, img) in self.timesteps.iter().enumerate() {
            img.save(&dir.join(format!("density_t{}.ppm", t + 1)))?;
        }
        let p = dir.join("rules.txt");
        std::fs::write(&p, &self.sidecar).map_err(|e| Error::io(&p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{AgentKind, DensityMap};

    fn outputs(r: usize) -> HeadOutputs {
        let mut bev = vec![0.0; r * r * 3];
        for (i, px) in bev.chunks_exact_mut(3).enumerate() {
            px[if i % r < r / 4 { 2 } else { 0 }] = 1.0;
        }
        HeadOutputs {
            waypoints: [[6.0, 0.0], [12.0, 0.0], [18.0, 0.0], [24.0, 0.0]],
            density: DensityMap::zeros(r),
            bev,
            traffic: [0.9, 0.1],
            weather: [0.1, 0.1, 0.7, 0.1],
            eca: Vec::new(),
            feature_shape: Vec::new(),
        }
    }

    fn input() -> ModelInput<f32> {
        ModelInput {
            lidar: crate::tensor::Tensor::zeros(&[4, BEV_SIZE, BEV_SIZE]),
            image: crate::tensor::Tensor::zeros(&[3, CAMERA_SIZE, CAMERA_SIZE]),
            goal: [20.0, 0.0],
        }
    }

    #[test]
    fn colour_key() {
        let r = 64;
        let p = render(&input(), &outputs(r)).unwrap();
        assert_eq!((p.bev.width, p.bev.height), (r, r));
        assert_eq!(p.bev.pixel(r / 2, r - 1), EGO);
        let (row, col) = bev_cell(12.0, 0.0, r).unwrap();
        assert_eq!(p.bev.pixel(col, row), WAYPOINT);
        assert_eq!(p.bev.pixel(r - 1, 0), DRIVABLE);
        assert_eq!(p.bev.pixel(0, 0), BACKGROUND);
        assert!(p.sidecar.contains("weather rainy"));
        assert_eq!(p.timesteps.len(), TIMESTEPS);
    }

    #[test]
    fn agents_are_yellow() {
        let mut img = RgbImage::new(64, 64);
        let b = AgentBox {
            x: 16.0,
            y: 3.0,
            w: 2.0,
            l: 4.5,
            theta: 0.3,
            timestep: 1,
            kind: AgentKind::Vehicle,
        };
        draw_box(&mut img, &b, AGENT);
        let (row, col) = bev_cell(16.0, 3.0, 64).unwrap();
        assert_eq!(img.pixel(col, row), AGENT);
    }
}
