use std::collections::VecDeque;

use super::route::Route;
use super::scenario::{AgentState, LayoutBox, LightState, Scenario, PEDESTRIAN_SIZE, VEHICLE_LENGTH, VEHICLE_WIDTH};
use crate::controller::ControlCommand;
use crate::error::{contract_err, Result};
use crate::sensor::{normalize_angle, EgoPose, PointCloud};

/// NPC target speeds below this are treated as a stop.
pub const NPC_CREEP_SPEED: f64 = 0.05;

/// Ego vehicle dynamics. Throttle maps linearly to acceleration; with
/// neither throttle nor brake the car coasts down slowly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Front wheel angle at steer = ±1, radians.
    pub max_steer: f64,
    /// m/s² at throttle 1.
    pub accel: f64,
    pub brake_decel: f64,
    pub coast_decel: f64,
    pub width: f64,
    pub length: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 2.7,
            max_steer: 0.6,
            accel: 2.0,
            brake_decel: 4.0,
            coast_decel: 0.3,
            width: VEHICLE_WIDTH,
            length: VEHICLE_LENGTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState {
    pub pose: EgoPose,
    pub speed: f64,
}

/// Oriented rectangle on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub w: f64,
    pub l: f64,
}

impl Obb {
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(a, b)| [self.x + c * a - s * b, self.y + s * a + c * b])
    }

    /// Separating-axis test; touching edges do not count as overlap.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let (a, b) = (self.corners(), other.corners());
        for yaw in [self.yaw, other.yaw] {
            let (s, c) = yaw.sin_cos();
            for axis in [[c, s], [-s, c]] {
                let proj = |pts: &[[f64; 2]; 4]| {
                    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        let v = p[0] * axis[0] + p[1] * axis[1];
                        (lo.min(v), hi.max(v))
                    })
                };
                let (a0, a1) = proj(&a);
                let (b0, b1) = proj(&b);
                if a1 <= b0 || b1 <= a0 {
                    return false;
                }
            }
        }
        true
    }
}

/// What an obstacle box belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectId {
    Npc(usize),
    Pedestrian(usize),
    Layout(usize),
}

/// Full simulator state. NPCs and pedestrians never react to the ego, so
/// their trajectories depend only on the scenario and the clock.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub route: Route,
    pub vehicle: VehicleParams,
    pub time: f64,
    pub ego: EgoState,
    pub npcs: Vec<AgentState>,
    /// Recent `(pose, scan)` pairs, oldest first.
    pub history: VecDeque<(EgoPose, PointCloud)>,
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let route = scenario.route()?;
        Ok(World {
            ego: EgoState {
                pose: route.pose_at(0.0),
                speed: 0.0,
            },
            npcs: scenario
                .npcs
                .iter()
                .map(|n| AgentState {
                    pose: route.pose_at(n.s),
                    ..*n
                })
                .collect(),
            route,
            scenario: scenario.clone(),
            vehicle: VehicleParams::default(),
            time: 0.0,
            history: VecDeque::new(),
        })
    }

    pub fn ego_box(&self) -> Obb {
        Obb {
            x: self.ego.pose.x,
            y: self.ego.pose.y,
            yaw: self.ego.pose.yaw,
            w: self.vehicle.width,
            l: self.vehicle.length,
        }
    }

    pub fn npc_box(&self, i: usize) -> Obb {
        let n = &self.npcs[i];
        Obb {
            x: n.pose.x,
            y: n.pose.y,
            yaw: n.pose.yaw,
            w: n.w,
            l: n.l,
        }
    }

    pub fn pedestrian_box(&self, i: usize, t: f64) -> Obb {
        let p = &self.scenario.pedestrians[i];
        let base = self.route.pose_at(p.s);
        let (x, y) = base.to_world(0.0, p.offset_at(t));
        Obb {
            x,
            y,
            yaw: normalize_angle(base.yaw + p.heading_sign() * std::f64::consts::FRAC_PI_2),
            w: PEDESTRIAN_SIZE,
            l: PEDESTRIAN_SIZE,
        }
    }

    pub fn layout_box(b: &LayoutBox) -> Obb {
        Obb {
            x: b.x,
            y: b.y,
            yaw: b.yaw,
            w: b.w,
            l: b.l,
        }
    }

    /// Every obstacle box at the current time.
    pub fn obstacles(&self) -> Vec<(ObjectId, Obb)> {
        let mut out = Vec::new();
        for i in 0..self.npcs.len() {
            out.push((ObjectId::Npc(i), self.npc_box(i)));
        }
        for i in 0..self.scenario.pedestrians.len() {
            out.push((ObjectId::Pedestrian(i), self.pedestrian_box(i, self.time)));
        }
        for (i, b) in self.scenario.layout.iter().enumerate() {
            out.push((ObjectId::Layout(i), Self::layout_box(b)));
        }
        out
    }

    pub fn light_state(&self, i: usize) -> LightState {
        self.scenario.lights[i].state_at(self.time)
    }

    /// Route arc and lateral offset of the ego centre.
    pub fn ego_progress(&self) -> (f64, f64) {
        self.route.project(self.ego.pose.x, self.ego.pose.y)
    }

    /// Advances time by `dt`: ego bicycle kinematics under `cmd`, NPC car
    /// following, light schedules (implicitly, through the clock).
    pub fn step(&mut self, cmd: &ControlCommand, dt: f64) {
        assert!(dt > 0.0, "dt must be positive");
        self.step_npcs(dt);
        let v = &self.vehicle;
        let a = if cmd.brake {
            -v.brake_decel
        } else if cmd.throttle > 0.0 {
            cmd.throttle.min(1.0) * v.accel
        } else {
            -v.coast_decel
        };
        let v0 = self.ego.speed;
        let v1 = (v0 + a * dt).max(0.0);
        // Distance under constant deceleration that stops mid-step.
        let travelled = if v0 + a * dt < 0.0 { v0 * v0 / (2.0 * -a) } else { 0.5 * (v0 + v1) * dt };
        let delta = cmd.steer.clamp(-1.0, 1.0) * v.max_steer;
        let dyaw = travelled * delta.tan() / v.wheelbase;
        let p = self.ego.pose;
        let mid = p.yaw + 0.5 * dyaw;
        self.ego.pose = EgoPose::new(p.x + travelled * mid.cos(), p.y + travelled * mid.sin(), p.yaw + dyaw);
        self.ego.speed = v1;
        self.time += dt;
    }

    /// Distance the front of NPC `i` may still travel, and how fast the thing
    /// it is closing on moves; `None` when the road ahead is clear.
    fn npc_constraint(&self, i: usize) -> Option<(f64, f64)> {
        let me = &self.npcs[i];
        let p = me.behavior.params();
        let front = me.s + me.l / 2.0;
        let mut best: Option<(f64, f64)> = None;
        let mut consider = |room: f64, v: f64| {
            if best.map_or(true, |(r, _)| room < r) {
                best = Some((room, v));
            }
        };
        for (j, o) in self.npcs.iter().enumerate() {
            if j != i && o.s > me.s {
                consider(o.s - o.l / 2.0 - front - p.min_distance, o.speed);
            }
        }
        for l in &self.scenario.lights {
            let to_line = l.s - front;
            if to_line >= 0.0 {
                match l.state_at(self.time) {
                    LightState::Red => consider(to_line - 0.5, 0.0),
                    LightState::Yellow if to_line > me.speed * me.speed / 8.0 => consider(to_line - 0.5, 0.0),
                    _ => {}
                }
            }
        }
        for ped in &self.scenario.pedestrians {
            let d = ped.offset_at(self.time);
            if d.abs() < self.scenario.lane_half_width + 1.0 && ped.s > me.s {
                consider(ped.s - PEDESTRIAN_SIZE / 2.0 - front - 2.0, 0.0);
            }
        }
        best
    }

    fn step_npcs(&mut self, dt: f64) {
        let plans: Vec<(f64, f64)> = (0..self.npcs.len())
            .map(|i| {
                let n = &self.npcs[i];
                let p = n.behavior.params();
                let room = self.npc_constraint(i).map(|c| c.0.max(0.0));
                let target = match room {
                    Some(r) => (r / p.time_gap).min(p.speed_limit),
                    None => p.speed_limit,
                };
                // Creeping the last few centimetres is not worth modelling.
                let target = if target < NPC_CREEP_SPEED { 0.0 } else { target };
                let mut v = target.clamp(n.speed - 6.0 * dt, n.speed + 2.0 * dt).max(0.0);
                let mut ds = v * dt;
                if let Some(r) = room {
                    if ds > r {
                        ds = r;
                        v = r / dt;
                    }
                }
                (ds, v)
            })
            .collect();
        for (n, (ds, v)) in self.npcs.iter_mut().zip(plans) {
            n.s += ds;
            n.speed = v;
            n.pose = self.route.pose_at(n.s);
        }
    }

    /// NPC states `dt_total` seconds from now, stepped at `dt`.
    pub fn predict_npcs(&self, dt_total: f64, dt: f64) -> Vec<AgentState> {
        let mut w = self.clone();
        w.history.clear();
        let steps = (dt_total / dt).round() as usize;
        for _ in 0..steps {
            w.step_npcs(dt);
            w.time += dt;
        }
        w.npcs
    }

    pub fn push_history(&mut self, scan: PointCloud, keep: usize) {
        self.history.push_back((self.ego.pose, scan));
        while self.history.len() > keep {
            self.history.pop_front();
        }
    }

    /// The last `n` `(pose, scan)` pairs, oldest first.
    pub fn recent_history(&self, n: usize) -> Result<Vec<(EgoPose, PointCloud)>> {
        if self.history.len() < n {
            return Err(contract_err!(
                "sensor synthesis needs {n} buffered frames, have {}",
                self.history.len()
            ));
        }
        Ok(self.history.iter().skip(self.history.len() - n).cloned().collect())
    }
}

/// `step_world` in functional form.
pub fn step_world(world: &World, cmd: &ControlCommand, dt: f64) -> World {
    let mut next = world.clone();
    next.step(cmd, dt);
    next
}
