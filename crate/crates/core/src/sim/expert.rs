//! Rule-based expert with privileged access to the world state. Its plan is
//! a set of four route points 0.5 s apart, which is both the training label
//! and, through the same PID controller the model uses, how it drives.

use super::scenario::{LightState, PEDESTRIAN_SIZE};
use super::world::World;
use crate::model::WAYPOINTS;

/// Seconds between consecutive waypoints.
pub const WAYPOINT_DT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertConfig {
    /// Cruise speed in sunny and cloudy weather.
    pub cruise_speed: f64,
    /// Cruise speed in rain and fog.
    pub adverse_speed: f64,
    /// Deceleration assumed when planning to stop, m/s².
    pub comfort_decel: f64,
    pub min_gap: f64,
    pub time_headway: f64,
    /// How long to stand still at a stop sign.
    pub stop_wait: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            cruise_speed: 6.0,
            adverse_speed: 4.0,
            comfort_decel: 2.0,
            min_gap: 4.0,
            time_headway: 1.0,
            stop_wait: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Expert {
    pub cfg: ExpertConfig,
    stop_done: Vec<bool>,
    waited: f64,
}

/// Something the ego must not pass: room left for the ego centre, and the
/// speed at which that limit moves.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Limit {
    room: f64,
    speed: f64,
}

impl Expert {
    pub fn new(cfg: ExpertConfig, world: &World) -> Self {
        Expert {
            cfg,
            stop_done: vec![false; world.scenario.stop_signs.len()],
            waited: 0.0,
        }
    }

    pub fn cruise(&self, world: &World) -> f64 {
        if world.scenario.weather.is_adverse() {
            self.cfg.adverse_speed
        } else {
            self.cfg.cruise_speed
        }
    }

    fn next_stop_sign(&self, world: &World, s: f64) -> Option<usize> {
        let front = s + world.vehicle.length / 2.0;
        world
            .scenario
            .stop_signs
            .iter()
            .enumerate()
            .filter(|&(i, &ss)| !self.stop_done[i] && ss + 1.0 > front)
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
    }

    /// Bookkeeping between plans: counts time spent halted at a stop sign.
    pub fn update(&mut self, world: &World, dt: f64) {
        let (s, _) = world.ego_progress();
        if let Some(i) = self.next_stop_sign(world, s) {
            let front = s + world.vehicle.length / 2.0;
            if world.scenario.stop_signs[i] - front < 3.5 && world.ego.speed < 0.1 {
                self.waited += dt;
                if self.waited >= self.cfg.stop_wait {
                    self.stop_done[i] = true;
                    self.waited = 0.0;
                }
            }
        }
    }

    fn limits(&self, world: &World, s: f64) -> Vec<Limit> {
        let half = world.vehicle.length / 2.0;
        let front = s + half;
        let hw = world.scenario.lane_half_width;
        let mut out = Vec::new();
        for n in &world.npcs {
            let (ns, nd) = world.route.project(n.pose.x, n.pose.y);
            if ns > s && nd.abs() < hw {
                let gap = ns - n.l / 2.0 - front;
                out.push(Limit {
                    room: gap - self.cfg.min_gap - self.cfg.time_headway * n.speed,
                    speed: n.speed,
                });
            }
        }
        for (i, l) in world.scenario.lights.iter().enumerate() {
            if l.s < s {
                continue;
            }
            let to_line = l.s - front;
            let room = match world.light_state(i) {
                LightState::Red if to_line > 0.0 => Some(to_line - 0.5),
                // Nose already over the line: hold the centre behind it.
                LightState::Red => Some(l.s - s - 0.3),
                LightState::Yellow if to_line > world.ego.speed.powi(2) / (2.0 * 3.0) => Some(to_line - 0.5),
                _ => None,
            };
            if let Some(room) = room {
                out.push(Limit { room, speed: 0.0 });
            }
        }
        if let Some(i) = self.next_stop_sign(world, s) {
            out.push(Limit {
                room: world.scenario.stop_signs[i] - front - 0.5,
                speed: 0.0,
            });
        }
        let v = world.ego.speed.max(1.0);
        for p in &world.scenario.pedestrians {
            let ahead = p.s - PEDESTRIAN_SIZE / 2.0 - front;
            // Too close to stop short of the crossing: keep going.
            if ahead < 1.0 {
                continue;
            }
            // Will the pedestrian be in the road before the ego is past?
            let horizon = (ahead + world.vehicle.length + PEDESTRIAN_SIZE) / v + 1.0;
            let (a, b) = (p.offset_at(world.time), p.offset_at(world.time + horizon));
            let reach = world.vehicle.width / 2.0 + 1.0;
            if a.min(b) < reach && a.max(b) > -reach {
                out.push(Limit {
                    room: ahead - 3.0,
                    speed: 0.0,
                });
            }
        }
        out
    }

    /// Target speed right now: cruise, capped so that every limit can be
    /// respected at comfortable deceleration.
    pub fn target_speed(&self, world: &World) -> f64 {
        let (s, _) = world.ego_progress();
        let b = self.cfg.comfort_decel;
        self.limits(world, s)
            .iter()
            .map(|l| (l.speed * l.speed + 2.0 * b * l.room.max(0.0)).sqrt())
            .fold(self.cruise(world), f64::min)
    }

    /// Four waypoints in the ego frame.
    pub fn plan(&self, world: &World) -> [[f64; 2]; WAYPOINTS] {
        let (s, _) = world.ego_progress();
        let v = self.target_speed(world);
        let limits = self.limits(world, s);
        let mut wp = [[0.0; 2]; WAYPOINTS];
        for (k, w) in wp.iter_mut().enumerate() {
            let t = (k + 1) as f64 * WAYPOINT_DT;
            let reach = limits
                .iter()
                .map(|l| l.room.max(0.0) + l.speed * t)
                .fold(v * t, f64::min);
            let p = world.route.pose_at(s + reach);
            let (x, y) = world.ego.pose.to_local(p.x, p.y);
            *w = [x, y];
        }
        wp
    }
}
