//! Randomized scenarios and their line-based text serialization.
//!
//! ```text
//! scenario v1
//! seed <u64>
//! difficulty <u32>
//! weather <sunny|cloudy|rainy|foggy>
//! lane_half_width <m>
//! route <x> <y>                      (>= 2 lines, in order)
//! layout <x> <y> <yaw> <w> <l> <h>
//! npc <s> <speed> <w> <l> <normal|aggressive|cautious>
//! ped <s> <d_from> <d_to> <start_s> <speed>
//! light <s> <green_s> <yellow_s> <red_s> <offset_s>
//! stop <s>
//! end
//! ```
//! Floats use the shortest representation that round-trips exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::route::{build_route, Route};
use crate::error::{contract_err, Error, Result};
use crate::sensor::EgoPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Weather {
    Sunny,
    Cloudy,
    Rainy,
    Foggy,
}

impl Weather {
    pub const ALL: [Weather; 4] = [Weather::Sunny, Weather::Cloudy, Weather::Rainy, Weather::Foggy];

    pub fn name(self) -> &'static str {
        match self {
            Weather::Sunny => "sunny",
            Weather::Cloudy => "cloudy",
            Weather::Rainy => "rainy",
            Weather::Foggy => "foggy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Weather::ALL.into_iter().find(|w| w.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Weather::ALL.get(i).copied()
    }

    /// Rain and fog make every agent drive cautiously.
    pub fn is_adverse(self) -> bool {
        matches!(self, Weather::Rainy | Weather::Foggy)
    }

    pub fn permits(self, b: Behavior) -> bool {
        if self.is_adverse() {
            b == Behavior::Cautious
        } else {
            b != Behavior::Cautious
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    Normal,
    Aggressive,
    Cautious,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorParams {
    pub speed_limit: f64,
    pub time_gap: f64,
    pub min_distance: f64,
}

impl Behavior {
    pub fn name(self) -> &'static str {
        match self {
            Behavior::Normal => "normal",
            Behavior::Aggressive => "aggressive",
            Behavior::Cautious => "cautious",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Behavior::Normal, Behavior::Aggressive, Behavior::Cautious]
            .into_iter()
            .find(|b| b.name() == s)
    }

    pub fn params(self) -> BehaviorParams {
        match self {
            Behavior::Normal => BehaviorParams {
                speed_limit: 6.0,
                time_gap: 1.5,
                min_distance: 4.0,
            },
            Behavior::Aggressive => BehaviorParams {
                speed_limit: 8.0,
                time_gap: 1.0,
                min_distance: 2.0,
            },
            Behavior::Cautious => BehaviorParams {
                speed_limit: 4.0,
                time_gap: 2.5,
                min_distance: 6.0,
            },
        }
    }
}

/// Static obstacle, world frame. `h` is only used by the sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutBox {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
}

/// An NPC vehicle on the route. `s` is the arc length of its centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub s: f64,
    pub pose: EgoPose,
    pub speed: f64,
    pub w: f64,
    pub l: f64,
    pub behavior: Behavior,
}

/// Walks straight across the route at arc `s`, from lateral offset `d_from`
/// to `d_to`, starting at `start` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pedestrian {
    pub s: f64,
    pub d_from: f64,
    pub d_to: f64,
    pub start: f64,
    pub speed: f64,
}

pub const PEDESTRIAN_SIZE: f64 = 0.6;

impl Pedestrian {
    /// Lateral offset at time `t`.
    pub fn offset_at(&self, t: f64) -> f64 {
        let span = self.d_to - self.d_from;
        if self.speed <= 0.0 || span == 0.0 {
            return self.d_from;
        }
        let walked = ((t - self.start) * self.speed).clamp(0.0, span.abs());
        self.d_from + walked * span.signum()
    }

    pub fn heading_sign(&self) -> f64 {
        (self.d_to - self.d_from).signum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightState {
    Green,
    Yellow,
    Red,
}

impl LightState {
    pub fn name(self) -> &'static str {
        match self {
            LightState::Green => "green",
            LightState::Yellow => "yellow",
            LightState::Red => "red",
        }
    }
}

/// Cyclic green → yellow → red schedule with its stop line at arc `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficLight {
    pub s: f64,
    pub green: f64,
    pub yellow: f64,
    pub red: f64,
    pub offset: f64,
}

impl TrafficLight {
    pub fn state_at(&self, t: f64) -> LightState {
        let cycle = self.green + self.yellow + self.red;
        let phase = (t + self.offset).rem_euclid(cycle);
        if phase < self.green {
            LightState::Green
        } else if phase < self.green + self.yellow {
            LightState::Yellow
        } else {
            LightState::Red
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub difficulty: u32,
    pub weather: Weather,
    pub lane_half_width: f64,
    pub route: Vec<[f64; 2]>,
    pub layout: Vec<LayoutBox>,
    pub npcs: Vec<AgentState>,
    pub pedestrians: Vec<Pedestrian>,
    pub lights: Vec<TrafficLight>,
    pub stop_signs: Vec<f64>,
}

pub const LANE_HALF_WIDTH: f64 = 3.0;
pub const VEHICLE_WIDTH: f64 = 2.0;
pub const VEHICLE_LENGTH: f64 = 4.5;

impl Scenario {
    pub fn route(&self) -> Result<Route> {
        Route::new(self.route.clone())
    }

    /// Same scene under another weather tag; NPC behaviors are re-drawn only
    /// where the new weather forbids the old class.
    pub fn with_weather(&self, weather: Weather) -> Scenario {
        let mut s = self.clone();
        s.weather = weather;
        for n in &mut s.npcs {
            if !weather.permits(n.behavior) {
                n.behavior = if weather.is_adverse() {
                    Behavior::Cautious
                } else {
                    Behavior::Normal
                };
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.route.len() < 2 {
            return Err(contract_err!("scenario route has {} points", self.route.len()));
        }
        if let Some(n) = self.npcs.iter().find(|n| !self.weather.permits(n.behavior)) {
            return Err(contract_err!(
                "behavior {} is not allowed in {} weather",
                n.behavior.name(),
                self.weather.name()
            ));
        }
        if self.npcs.iter().any(|n| !(n.speed >= 0.0)) {
            return Err(contract_err!("NPC speed must be >= 0"));
        }
        self.route()?;
        Ok(())
    }

    pub fn serialize(&self) -> String {
        use std::fmt::Write;
        let mut o = String::new();
        let _ = writeln!(o, "scenario v1");
        let _ = writeln!(o, "seed {}", self.seed);
        let _ = writeln!(o, "difficulty {}", self.difficulty);
        let _ = writeln!(o, "weather {}", self.weather.name());
        let _ = writeln!(o, "lane_half_width {}", self.lane_half_width);
        for p in &self.route {
            let _ = writeln!(o, "route {} {}", p[0], p[1]);
        }
        for b in &self.layout {
            let _ = writeln!(o, "layout {} {} {} {} {} {}", b.x, b.y, b.yaw, b.w, b.l, b.h);
        }
        for n in &self.npcs {
            let _ = writeln!(o, "npc {} {} {} {} {}", n.s, n.speed, n.w, n.l, n.behavior.name());
        }
        for p in &self.pedestrians {
            let _ = writeln!(o, "ped {} {} {} {} {}", p.s, p.d_from, p.d_to, p.start, p.speed);
        }
        for l in &self.lights {
            let _ = writeln!(o, "light {} {} {} {} {}", l.s, l.green, l.yellow, l.red, l.offset);
        }
        for s in &self.stop_signs {
            let _ = writeln!(o, "stop {s}");
        }
        o.push_str("end\n");
        o
    }

    pub fn parse(text: &str) -> Result<Scenario> {
        let err = |line: usize, msg: String| Error::parse("scenario", format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "scenario v1")) => {}
            _ => return Err(err(1, "expected header `scenario v1`".into())),
        }
        let mut seed = None;
        let mut difficulty = None;
        let mut weather = None;
        let mut hw = None;
        let mut route = Vec::new();
        let mut layout = Vec::new();
        let mut raw_npcs = Vec::new();
        let mut pedestrians = Vec::new();
        let mut lights = Vec::new();
        let mut stop_signs = Vec::new();
        let mut ended = false;
        for (i, line) in lines {
            let n = i + 1;
            if ended {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(err(n, "content after `end`".into()));
            }
            let mut it = line.split_whitespace();
            let Some(key) = it.next() else {
                return Err(err(n, "empty line".into()));
            };
            let rest: Vec<&str> = it.collect();
            let nums = |k: usize| -> Result<Vec<f64>> {
                if rest.len() != k {
                    return Err(err(n, format!("`{key}` takes {k} fields, got {}", rest.len())));
                }
                rest.iter()
                    .map(|t| match t.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(err(n, format!("bad number `{t}`"))),
                    })
                    .collect()
            };
            match key {
                "seed" | "difficulty" => {
                    if rest.len() != 1 {
                        return Err(err(n, format!("`{key}` takes 1 field")));
                    }
                    let v: u64 = rest[0].parse().map_err(|_| err(n, format!("bad integer `{}`", rest[0])))?;
                    if key == "seed" {
                        seed = Some(v);
                    } else {
                        difficulty = Some(u32::try_from(v).map_err(|_| err(n, "difficulty too large".into()))?);
                    }
                }
                "weather" => {
                    if rest.len() != 1 {
                        return Err(err(n, "`weather` takes 1 field".into()));
                    }
                    weather = Some(Weather::parse(rest[0]).ok_or_else(|| err(n, format!("unknown weather `{}`", rest[0])))?);
                }
                "lane_half_width" => {
                    let v = nums(1)?[0];
                    if !(v > 0.0) {
                        return Err(err(n, "lane_half_width must be positive".into()));
                    }
                    hw = Some(v);
                }
                "route" => {
                    let v = nums(2)?;
                    route.push([v[0], v[1]]);
                }
                "layout" => {
                    let v = nums(6)?;
                    if v[3] <= 0.0 || v[4] <= 0.0 || v[5] <= 0.0 {
                        return Err(err(n, "layout extents must be positive".into()));
                    }
                    layout.push(LayoutBox {
                        x: v[0],
                        y: v[1],
                        yaw: v[2],
                        w: v[3],
                        l: v[4],
                        h: v[5],
                    });
                }
                "npc" => {
                    if rest.len() != 5 {
                        return Err(err(n, format!("`npc` takes 5 fields, got {}", rest.len())));
                    }
                    let b = Behavior::parse(rest[4]).ok_or_else(|| err(n, format!("unknown behavior `{}`", rest[4])))?;
                    let mut v = Vec::with_capacity(4);
                    for t in &rest[..4] {
                        match t.parse::<f64>() {
                            Ok(x) if x.is_finite() => v.push(x),
                            _ => return Err(err(n, format!("bad number `{t}`"))),
                        }
                    }
                    if v[1] < 0.0 || v[2] <= 0.0 || v[3] <= 0.0 {
                        return Err(err(n, "npc speed must be >= 0 and extents positive".into()));
                    }
                    raw_npcs.push((v[0], v[1], v[2], v[3], b));
                }
                "ped" => {
                    let v = nums(5)?;
                    if v[4] < 0.0 {
                        return Err(err(n, "pedestrian speed must be >= 0".into()));
                    }
                    pedestrians.push(Pedestrian {
                        s: v[0],
                        d_from: v[1],
                        d_to: v[2],
                        start: v[3],
                        speed: v[4],
                    });
                }
                "light" => {
                    let v = nums(5)?;
                    if v[1] < 0.0 || v[2] < 0.0 || v[3] < 0.0 || v[1] + v[2] + v[3] <= 0.0 {
                        return Err(err(n, "light phases must be >= 0 with a positive cycle".into()));
                    }
                    lights.push(TrafficLight {
                        s: v[0],
                        green: v[1],
                        yellow: v[2],
                        red: v[3],
                        offset: v[4],
                    });
                }
                "stop" => stop_signs.push(nums(1)?[0]),
                "end" => {
                    if !rest.is_empty() {
                        return Err(err(n, "`end` takes no fields".into()));
                    }
                    ended = true;
                }
                other => return Err(err(n, format!("unknown record `{other}`"))),
            }
        }
        if !ended {
            return Err(Error::parse("scenario", "missing `end`"));
        }
        let missing = |k: &str| Error::parse("scenario", format!("missing `{k}`"));
        let route_obj = Route::new(route.clone())?;
        let npcs = raw_npcs
            .into_iter()
            .map(|(s, speed, w, l, behavior)| AgentState {
                s,
                pose: route_obj.pose_at(s),
                speed,
                w,
                l,
                behavior,
            })
            .collect();
        let sc = Scenario {
            seed: seed.ok_or_else(|| missing("seed"))?,
            difficulty: difficulty.ok_or_else(|| missing("difficulty"))?,
            weather: weather.ok_or_else(|| missing("weather"))?,
            lane_half_width: hw.ok_or_else(|| missing("lane_half_width"))?,
            route,
            layout,
            npcs,
            pedestrians,
            lights,
            stop_signs,
        };
        sc.validate()?;
        Ok(sc)
    }
}

fn npc(route: &Route, s: f64, speed: f64, behavior: Behavior) -> AgentState {
    AgentState {
        s,
        pose: route.pose_at(s),
        speed,
        w: VEHICLE_WIDTH,
        l: VEHICLE_LENGTH,
        behavior,
    }
}

fn roadside_boxes(rng: &mut ChaCha8Rng, route: &Route, hw: f64, count: usize) -> Vec<LayoutBox> {
    let len = route.length();
    (0..count)
        .map(|_| {
            let s = rng.gen_range(0.0..len + 20.0);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (w, l, h) = (rng.gen_range(1.0..3.0), rng.gen_range(1.5..5.0), rng.gen_range(1.0..4.0));
            let d = side * (hw + 1.0 + w / 2.0 + rng.gen_range(0.0..4.0));
            let p = route.pose_at(s);
            let (x, y) = p.to_world(0.0, d);
            LayoutBox {
                x,
                y,
                yaw: p.yaw,
                w,
                l,
                h,
            }
        })
        .collect()
}

/// Draws a scenario. Difficulty 0 is an empty straight road; 1 adds lead
/// vehicles and roadside layout on a straight road; 2 and above use curved
/// routes with traffic lights, stop signs and crossing pedestrians, with
/// more agents as difficulty grows.
pub fn generate_scenario(seed: u64, difficulty: u32) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_A410_0000_0000);
    let weather = Weather::ALL[rng.gen_range(0..4)];
    let behavior = if weather.is_adverse() {
        Behavior::Cautious
    } else if rng.gen_bool(0.5) {
        Behavior::Normal
    } else {
        Behavior::Aggressive
    };
    let hw = LANE_HALF_WIDTH;
    let mut sc = Scenario {
        seed,
        difficulty,
        weather,
        lane_half_width: hw,
        route: Vec::new(),
        layout: Vec::new(),
        npcs: Vec::new(),
        pedestrians: Vec::new(),
        lights: Vec::new(),
        stop_signs: Vec::new(),
    };
    let route = match difficulty {
        0 => build_route(&[(60.0, 0.0)]),
        1 => build_route(&[(rng.gen_range(70.0..90.0), 0.0)]),
        _ => {
            let mut pieces = vec![(rng.gen_range(20.0..30.0), 0.0)];
            for _ in 0..2 {
                let k = rng.gen_range(1.0 / 45.0..1.0 / 25.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                pieces.push((rng.gen_range(15.0..30.0), k));
                pieces.push((rng.gen_range(15.0..30.0), 0.0));
            }
            build_route(&pieces)
        }
    }
    .expect("generated routes are valid");
    sc.route = route.points().to_vec();
    if difficulty == 0 {
        return sc;
    }
    let len = route.length();
    let extra = (difficulty as usize).saturating_sub(2);
    let n_npc = rng.gen_range(1..=2 + extra.min(2));
    let mut s = rng.gen_range(14.0..24.0);
    for _ in 0..n_npc {
        let speed = behavior.params().speed_limit * rng.gen_range(0.3..0.8);
        sc.npcs.push(npc(&route, s, speed, behavior));
        s += rng.gen_range(14.0..24.0);
    }
    let n_boxes = rng.gen_range(4..10);
    sc.layout = roadside_boxes(&mut rng, &route, hw, n_boxes);
    if difficulty >= 2 {
        let light_s = rng.gen_range(0.45..0.65) * len;
        sc.lights.push(TrafficLight {
            s: light_s,
            green: rng.gen_range(6.0..10.0),
            yellow: 2.0,
            red: rng.gen_range(4.0..6.0),
            offset: rng.gen_range(0.0..16.0),
        });
        if rng.gen_bool(0.5) {
            sc.stop_signs.push(rng.gen_range(0.75..0.85) * len);
        }
        for _ in 0..rng.gen_range(1..=1 + extra.min(2)) {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sc.pedestrians.push(Pedestrian {
                s: rng.gen_range(0.2..0.9) * len,
                d_from: side * (hw + 2.0),
                d_to: -side * (hw + 2.0),
                start: rng.gen_range(2.0..14.0),
                speed: 1.2,
            });
        }
        let poles: Vec<f64> = sc.lights.iter().map(|l| l.s).chain(sc.stop_signs.iter().copied()).collect();
        for ps in poles {
            sc.layout.push(pole(&route, ps, hw + 0.8));
        }
    }
    sc
}

fn pole(route: &Route, s: f64, d: f64) -> LayoutBox {
    let p = route.pose_at(s);
    let (x, y) = p.to_world(0.0, d);
    LayoutBox {
        x,
        y,
        yaw: p.yaw,
        w: 0.3,
        l: 0.3,
        h: 3.0,
    }
}

/// Straight road with a single lead vehicle 15 m ahead, used for matched
/// weather comparisons.
pub fn lead_vehicle_scenario(seed: u64, weather: Weather) -> Scenario {
    let route = build_route(&[(80.0, 0.0)]).expect("valid route");
    let behavior = if weather.is_adverse() {
        Behavior::Cautious
    } else {
        Behavior::Normal
    };
    Scenario {
        seed,
        difficulty: 1,
        weather,
        lane_half_width: LANE_HALF_WIDTH,
        npcs: vec![npc(&route, 15.0, behavior.params().speed_limit * 0.5, behavior)],
        route: route.points().to_vec(),
        layout: Vec::new(),
        pedestrians: Vec::new(),
        lights: Vec::new(),
        stop_signs: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn light_cycles() {
        let l = TrafficLight {
            s: 0.0,
            green: 5.0,
            yellow: 2.0,
            red: 3.0,
            offset: 0.0,
        };
        assert_eq!(l.state_at(0.0), LightState::Green);
        assert_eq!(l.state_at(6.0), LightState::Yellow);
        assert_eq!(l.state_at(8.0), LightState::Red);
        assert_eq!(l.state_at(10.5), LightState::Green);
    }

    #[test]
    fn pedestrian_walks_then_stops() {
        let p = Pedestrian {
            s: 10.0,
            d_from: -5.0,
            d_to: 5.0,
            start: 1.0,
            speed: 2.0,
        };
        assert_eq!(p.offset_at(0.0), -5.0);
        assert_eq!(p.offset_at(2.0), -3.0);
        assert_eq!(p.offset_at(100.0), 5.0);
    }

    #[test]
    fn serialization_round_trips() {
        for d in 0..4 {
            let s = generate_scenario(11 + d as u64, d);
            let back = Scenario::parse(&s.serialize()).unwrap();
            assert_eq!(back.serialize(), s.serialize());
        }
    }
}
