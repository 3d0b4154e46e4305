//! Synthetic LiDAR, camera and expert labels.
//!
//! LiDAR returns are sampled, not ray cast: a world-fixed ground grid, curb
//! points along both road edges and points on the vertical faces of every
//! box. Because the ground samples are fixed in the world, a static scene
//! seen from a static ego yields identical scans.

use super::expert::{Expert, WAYPOINT_DT};
use super::labels::FrameLabels;
use super::route::Route;
use super::scenario::{LightState, Weather};
use super::world::{ObjectId, Obb, World};
use crate::codec::{AgentBox, AgentKind};
use crate::error::Result;
use crate::image::RgbImage;
use crate::sensor::{bev_cell, normalize_angle, EgoPose, PointCloud, CAMERA_RAW_HEIGHT, CAMERA_RAW_WIDTH, LIDAR_FRAMES};

pub const GROUND_SPACING: f64 = 0.5;
pub const SURFACE_SPACING: f64 = 0.25;
pub const CURB_HEIGHT: f64 = 0.12;
pub const VEHICLE_HEIGHT: f64 = 1.5;
pub const PEDESTRIAN_HEIGHT: f64 = 1.7;
/// Distance ahead along the route of the goal point given to the model.
pub const GOAL_DISTANCE: f64 = 10.0;
pub const CAMERA_HEIGHT: f64 = 1.6;
pub const CAMERA_FORWARD: f64 = 1.5;
pub const CAMERA_FOV_DEG: f64 = 100.0;

const SCAN_X: (f64, f64) = (-2.0, 34.0);
const SCAN_Y: f64 = 17.0;

/// Everything the sensors report at one model step.
#[derive(Debug, Clone)]
pub struct SensorFrame {
    /// Oldest first; each cloud in the ego frame it was captured in.
    pub clouds: Vec<PointCloud>,
    pub poses: Vec<EgoPose>,
    pub camera: RgbImage,
    pub labels: FrameLabels,
}

fn height_of(world: &World, id: ObjectId) -> f64 {
    match id {
        ObjectId::Npc(_) => VEHICLE_HEIGHT,
        ObjectId::Pedestrian(_) => PEDESTRIAN_HEIGHT,
        ObjectId::Layout(i) => world.scenario.layout[i].h,
    }
}

fn in_scan(x: f64, y: f64) -> bool {
    (SCAN_X.0..SCAN_X.1).contains(&x) && (-SCAN_Y..SCAN_Y).contains(&y)
}

/// One LiDAR sweep in the current ego frame.
pub fn lidar_scan(world: &World) -> PointCloud {
    let pose = world.ego.pose;
    let mut pts = Vec::new();
    let corners = [(SCAN_X.0, -SCAN_Y), (SCAN_X.0, SCAN_Y), (SCAN_X.1, -SCAN_Y), (SCAN_X.1, SCAN_Y)]
        .map(|(x, y)| pose.to_world(x, y));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in corners {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let g = GROUND_SPACING;
    for i in (x0 / g).floor() as i64..=(x1 / g).ceil() as i64 {
        for j in (y0 / g).floor() as i64..=(y1 / g).ceil() as i64 {
            let (lx, ly) = pose.to_local(i as f64 * g, j as f64 * g);
            if in_scan(lx, ly) {
                pts.push([lx, ly, 0.0]);
            }
        }
    }
    let (s, _) = world.ego_progress();
    let hw = world.scenario.lane_half_width;
    let step = SURFACE_SPACING;
    for k in ((s - 10.0) / step).floor() as i64..=((s + 45.0) / step).ceil() as i64 {
        let p = world.route.pose_at(k as f64 * step);
        for side in [-hw, hw] {
            let (wx, wy) = p.to_world(0.0, side);
            let (lx, ly) = pose.to_local(wx, wy);
            if in_scan(lx, ly) {
                pts.push([lx, ly, CURB_HEIGHT]);
            }
        }
    }
    for (id, b) in world.obstacles() {
        let (lx, ly) = pose.to_local(b.x, b.y);
        if lx.hypot(ly) > 50.0 {
            continue;
        }
        box_surface(&b, height_of(world, id), &pose, &mut pts);
    }
    PointCloud::new(pts, 0)
}

fn box_surface(b: &Obb, h: f64, pose: &EgoPose, out: &mut Vec<[f64; 3]>) {
    let obj = EgoPose::new(b.x, b.y, b.yaw);
    let mut zs = Vec::new();
    let mut z = 0.5;
    while z < h {
        zs.push(z);
        z += 0.4;
    }
    zs.push(h);
    let face = |out: &mut Vec<[f64; 3]>, a: (f64, f64), c: (f64, f64)| {
        let len = (c.0 - a.0).hypot(c.1 - a.1);
        let n = (len / SURFACE_SPACING).ceil().max(1.0) as usize;
        for k in 0..n {
            let t = k as f64 / n as f64;
            let (px, py) = (a.0 + t * (c.0 - a.0), a.1 + t * (c.1 - a.1));
            let (wx, wy) = obj.to_world(px, py);
            let (lx, ly) = pose.to_local(wx, wy);
            for &z in &zs {
                out.push([lx, ly, z]);
            }
        }
    };
    let (hl, hw) = (b.l / 2.0, b.w / 2.0);
    let c = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)];
    for i in 0..4 {
        face(out, c[i], c[(i + 1) % 4]);
    }
}

/// Captures a scan into the world's history, pre-filling the buffer with
/// copies when it is empty.
pub fn capture(world: &mut World) {
    let scan = lidar_scan(world);
    if world.history.is_empty() {
        for _ in 1..LIDAR_FRAMES {
            world.push_history(scan.clone(), LIDAR_FRAMES);
        }
    }
    world.push_history(scan, LIDAR_FRAMES);
}

struct Palette {
    sky: [f64; 3],
    road: [f64; 3],
    grass: [f64; 3],
    line: [f64; 3],
    fog: Option<([f64; 3], f64)>,
    rain: bool,
}

fn palette(w: Weather) -> Palette {
    match w {
        Weather::Sunny => Palette {
            sky: [135.0, 195.0, 245.0],
            road: [95.0, 95.0, 95.0],
            grass: [80.0, 150.0, 60.0],
            line: [245.0, 245.0, 245.0],
            fog: None,
            rain: false,
        },
        Weather::Cloudy => Palette {
            sky: [165.0, 168.0, 175.0],
            road: [80.0, 80.0, 84.0],
            grass: [70.0, 110.0, 65.0],
            line: [220.0, 220.0, 220.0],
            fog: None,
            rain: false,
        },
        Weather::Rainy => Palette {
            sky: [75.0, 80.0, 100.0],
            road: [45.0, 50.0, 62.0],
            grass: [40.0, 75.0, 55.0],
            line: [170.0, 175.0, 190.0],
            fog: None,
            rain: true,
        },
        Weather::Foggy => Palette {
            sky: [200.0, 200.0, 200.0],
            road: [90.0, 90.0, 92.0],
            grass: [85.0, 115.0, 80.0],
            line: [225.0, 225.0, 225.0],
            fog: Some(([205.0, 205.0, 205.0], 18.0)),
            rain: false,
        },
    }
}

fn to_u8(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

fn fogged(p: &Palette, c: [f64; 3], depth: f64) -> [f64; 3] {
    match p.fog {
        Some((f, d)) => {
            let a = 1.0 - (-depth / d).exp();
            [0, 1, 2].map(|i| c[i] * (1.0 - a) + f[i] * a)
        }
        None => c,
    }
}

/// Ground class at lateral offset `d`: 0 drivable, 1 line, 2 other.
pub fn ground_class(d: f64, hw: f64, line_half: f64) -> u8 {
    let a = d.abs();
    if (a - hw).abs() <= line_half {
        1
    } else if a < hw {
        0
    } else {
        2
    }
}

/// The road around the ego as a polyline in the ego frame.
pub fn local_route(world: &World, behind: f64, ahead: f64) -> Result<Route> {
    let (s, _) = world.ego_progress();
    Route::new(world.route.local_polyline(&world.ego.pose, s - behind, s + ahead, 1.0))
}

/// Schematic 400×300 front camera.
pub fn render_camera(world: &World) -> Result<RgbImage> {
    let (w, h) = (CAMERA_RAW_WIDTH, CAMERA_RAW_HEIGHT);
    let pal = palette(world.scenario.weather);
    let f = (w as f64 / 2.0) / (CAMERA_FOV_DEG.to_radians() / 2.0).tan();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let hw = world.scenario.lane_half_width;
    let road = local_route(world, 10.0, 110.0)?;
    let mut img = RgbImage::new(w, h);
    for v in 0..h {
        let dv = v as f64 + 0.5 - cy;
        for u in 0..w {
            let c = if dv <= 0.0 {
                pal.sky
            } else {
                let depth = f * CAMERA_HEIGHT / dv;
                if depth > 100.0 {
                    fogged(&pal, [0, 1, 2].map(|i| 0.5 * (pal.sky[i] + pal.grass[i])), depth)
                } else {
                    let x = depth + CAMERA_FORWARD;
                    let y = (u as f64 + 0.5 - cx) * depth / f;
                    let (_, d) = road.project(x, y);
                    let base = match ground_class(d, hw, 0.15) {
                        0 => pal.road,
                        1 => pal.line,
                        _ => pal.grass,
                    };
                    fogged(&pal, base, depth)
                }
            };
            img.set(u, v, to_u8(c));
        }
    }
    // Billboards painted far to near.
    let pose = world.ego.pose;
    let mut items: Vec<(f64, i64, i64, i64, i64, [u8; 3])> = Vec::new();
    let mut billboard = |b: &Obb, z0: f64, z1: f64, color: [f64; 3]| {
        let mut umin = f64::INFINITY;
        let mut umax = f64::NEG_INFINITY;
        let mut near = f64::INFINITY;
        for [wx, wy] in b.corners() {
            let (lx, ly) = pose.to_local(wx, wy);
            let depth = lx - CAMERA_FORWARD;
            if depth < 0.5 {
                return;
            }
            near = near.min(depth);
            let u = cx + f * ly / depth;
            umin = umin.min(u);
            umax = umax.max(u);
        }
        if near > 100.0 {
            return;
        }
        let v_top = cy + f * (CAMERA_HEIGHT - z1) / near;
        let v_bot = cy + f * (CAMERA_HEIGHT - z0) / near;
        let c = to_u8(fogged(&pal, color, near));
        items.push((near, umin.floor() as i64, v_top.floor() as i64, umax.ceil() as i64, v_bot.ceil() as i64, c));
    };
    for (id, b) in world.obstacles() {
        let (color, z1) = match id {
            ObjectId::Npc(_) => ([40.0, 70.0, 190.0], VEHICLE_HEIGHT),
            ObjectId::Pedestrian(_) => ([200.0, 50.0, 170.0], PEDESTRIAN_HEIGHT),
            ObjectId::Layout(i) => ([125.0, 95.0, 65.0], world.scenario.layout[i].h),
        };
        billboard(&b, 0.0, z1, color);
    }
    for (i, l) in world.scenario.lights.iter().enumerate() {
        let color = match world.light_state(i) {
            LightState::Green => [30.0, 210.0, 70.0],
            LightState::Yellow => [235.0, 200.0, 30.0],
            LightState::Red => [235.0, 30.0, 30.0],
        };
        billboard(&sign_box(&world.route, l.s, hw), 2.4, 3.2, color);
    }
    for &s in &world.scenario.stop_signs {
        billboard(&sign_box(&world.route, s, hw), 1.9, 2.8, [205.0, 20.0, 25.0]);
    }
    items.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (_, x0, y0, x1, y1, c) in items {
        img.fill_rect(x0, y0, x1.max(x0 + 1), y1.max(y0 + 1), c);
    }
    if pal.rain {
        for v in 0..h {
            for u in 0..w {
                if (u * 7 + v * 3) % 53 == 0 {
                    let p = img.pixel(u, v);
                    img.set(u, v, p.map(|c| c.saturating_add(60)));
                }
            }
        }
    }
    Ok(img)
}

fn sign_box(route: &Route, s: f64, hw: f64) -> Obb {
    let p = route.pose_at(s);
    let (x, y) = p.to_world(0.0, hw + 0.8);
    Obb {
        x,
        y,
        yaw: p.yaw,
        w: 0.8,
        l: 0.8,
    }
}

/// Light and stop-sign flags as the model should report them.
pub fn rule_states(world: &World) -> [bool; 2] {
    let (s, _) = world.ego_progress();
    let front = s + world.vehicle.length / 2.0;
    let light = world.scenario.lights.iter().enumerate().any(|(i, l)| {
        let ahead = l.s - front;
        (-0.5..30.0).contains(&ahead) && world.light_state(i) != LightState::Green
    });
    let stop = world.scenario.stop_signs.iter().any(|&ss| (-0.5..20.0).contains(&(ss - front)));
    [light, stop]
}

/// Agent boxes now and 0.5 s / 1.0 s ahead, in the current ego frame.
pub fn future_agents(world: &World) -> Vec<AgentBox> {
    let pose = world.ego.pose;
    let mut out = Vec::new();
    let mut push = |b: Obb, kind: AgentKind, t: usize| {
        let (x, y) = pose.to_local(b.x, b.y);
        if bev_cell(x, y, 256).is_some() {
            out.push(AgentBox {
                x,
                y,
                w: b.w,
                l: b.l,
                theta: normalize_angle(b.yaw - pose.yaw),
                timestep: t,
                kind,
            });
        }
    };
    for t in 1..=3 {
        let dt = (t - 1) as f64 * WAYPOINT_DT;
        let npcs = if t == 1 { world.npcs.clone() } else { world.predict_npcs(dt, 0.05) };
        for n in &npcs {
            push(
                Obb {
                    x: n.pose.x,
                    y: n.pose.y,
                    yaw: n.pose.yaw,
                    w: n.w,
                    l: n.l,
                },
                AgentKind::Vehicle,
                t,
            );
        }
        for i in 0..world.scenario.pedestrians.len() {
            push(world.pedestrian_box(i, world.time + dt), AgentKind::Pedestrian, t);
        }
    }
    out
}

/// The goal point handed to the planner, in the ego frame.
pub fn goal_point(world: &World) -> [f64; 2] {
    let (s, _) = world.ego_progress();
    let p = world.route.pose_at(s + GOAL_DISTANCE);
    let (x, y) = world.ego.pose.to_local(p.x, p.y);
    [x, y]
}

pub fn make_labels(world: &World, expert: &Expert) -> Result<FrameLabels> {
    let road = local_route(world, 4.0, 36.0)?;
    Ok(FrameLabels {
        weather: world.scenario.weather,
        traffic: rule_states(world),
        speed: world.ego.speed,
        goal: goal_point(world),
        waypoints: expert.plan(world),
        lane_half_width: world.scenario.lane_half_width,
        route: road.points().to_vec(),
        agents: future_agents(world),
    })
}

/// Sensor readout from the last three buffered sweeps plus camera and labels.
pub fn synth_sensors(world: &World, expert: &Expert) -> Result<SensorFrame> {
    let hist = world.recent_history(LIDAR_FRAMES)?;
    let n = hist.len() as i32;
    let (poses, clouds) = hist
        .into_iter()
        .enumerate()
        .map(|(i, (p, mut c))| {
            c.frame_time_index = i as i32 - (n - 1);
            (p, c)
        })
        .unzip();
    Ok(SensorFrame {
        clouds,
        poses,
        camera: render_camera(world)?,
        labels: make_labels(world, expert)?,
    })
}
