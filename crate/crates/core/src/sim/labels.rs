//! Per-frame supervision and its text schema.
//!
//! ```text
//! labels v1
//! weather <sunny|cloudy|rainy|foggy>
//! traffic_light <0|1>          stop-required light ahead
//! stop_sign <0|1>
//! speed <m/s>
//! goal <x> <y>
//! waypoint <x> <y>             exactly 4, in order
//! lane_half_width <m>
//! route <x> <y>                >= 2, road centreline in the ego frame
//! agent <timestep 1..3> <vehicle|pedestrian> <x> <y> <w> <l> <theta>
//! end
//! ```
//! Coordinates are metres in the ego frame of the current sweep.

use super::route::Route;
use super::scenario::Weather;
use super::sensors::ground_class;
use crate::codec::{encode, AgentBox, AgentKind, TIMESTEPS};
use crate::error::{Error, Result};
use crate::model::{Targets, WAYPOINTS};
use crate::sensor::{bev_cell_center, BEV_RANGE_FORWARD};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub weather: Weather,
    pub traffic: [bool; 2],
    pub speed: f64,
    pub goal: [f64; 2],
    pub waypoints: [[f64; 2]; WAYPOINTS],
    pub lane_half_width: f64,
    pub route: Vec<[f64; 2]>,
    pub agents: Vec<AgentBox>,
}

/// `R×R` BEV classes (0 drivable, 1 lines, 2 other) from a road centreline.
/// Lines are at least one cell wide at every resolution.
pub fn bev_class_map(road: &Route, hw: f64, r: usize) -> Vec<u8> {
    let cell = BEV_RANGE_FORWARD / r as f64;
    let line_half = (0.5 * cell).max(0.15);
    let mut out = Vec::with_capacity(r * r);
    for row in 0..r {
        for col in 0..r {
            let (x, y) = bev_cell_center(row, col, r);
            let (_, d) = road.project(x, y);
            out.push(ground_class(d, hw, line_half));
        }
    }
    out
}

impl FrameLabels {
    pub fn targets(&self, r: usize) -> Result<Targets> {
        let (density, mask) = encode(&self.agents, r);
        let road = Route::new(self.route.clone())?;
        Ok(Targets {
            waypoints: self.waypoints,
            density,
            mask,
            bev: bev_class_map(&road, self.lane_half_width, r),
            traffic: self.traffic,
            weather: self.weather.index(),
        })
    }

    pub fn serialize(&self) -> String {
        use std::fmt::Write;
        let mut o = String::from("labels v1\n");
        let _ = writeln!(o, "weather {}", self.weather.name());
        let _ = writeln!(o, "traffic_light {}", self.traffic[0] as u8);
        let _ = writeln!(o, "stop_sign {}", self.traffic[1] as u8);
        let _ = writeln!(o, "speed {}", self.speed);
        let _ = writeln!(o, "goal {} {}", self.goal[0], self.goal[1]);
        for w in &self.waypoints {
            let _ = writeln!(o, "waypoint {} {}", w[0], w[1]);
        }
        let _ = writeln!(o, "lane_half_width {}", self.lane_half_width);
        for p in &self.route {
            let _ = writeln!(o, "route {} {}", p[0], p[1]);
        }
        for a in &self.agents {
            let _ = writeln!(
                o,
                "agent {} {} {} {} {} {} {}",
                a.timestep,
                a.kind.name(),
                a.x,
                a.y,
                a.w,
                a.l,
                a.theta
            );
        }
        o.push_str("end\n");
        o
    }

    pub fn parse(text: &str) -> Result<FrameLabels> {
        let err = |n: usize, m: String| Error::parse("labels", format!("line {n}: {m}"));
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some("labels v1") {
            return Err(err(1, "expected header `labels v1`".into()));
        }
        let mut weather = None;
        let mut light = None;
        let mut stop = None;
        let mut speed = None;
        let mut goal = None;
        let mut hw = None;
        let mut wps = Vec::new();
        let mut route = Vec::new();
        let mut agents = Vec::new();
        let mut ended = false;
        for (i, line) in lines {
            let n = i + 1;
            if ended {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(err(n, "content after `end`".into()));
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let Some((&key, rest)) = f.split_first() else {
                return Err(err(n, "empty line".into()));
            };
            let want = |k: usize| {
                if rest.len() == k {
                    Ok(())
                } else {
                    Err(err(n, format!("`{key}` takes {k} fields, got {}", rest.len())))
                }
            };
            let num = |t: &str| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(n, format!("bad number `{t}`"))),
            };
            let flag = |t: &str| match t {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(err(n, format!("expected 0 or 1, got `{t}`"))),
            };
            match key {
                "weather" => {
                    want(1)?;
                    weather = Some(Weather::parse(rest[0]).ok_or_else(|| err(n, format!("unknown weather `{}`", rest[0])))?);
                }
                "traffic_light" => {
                    want(1)?;
                    light = Some(flag(rest[0])?);
                }
                "stop_sign" => {
                    want(1)?;
                    stop = Some(flag(rest[0])?);
                }
                "speed" => {
                    want(1)?;
                    speed = Some(num(rest[0])?);
                }
                "goal" => {
                    want(2)?;
                    goal = Some([num(rest[0])?, num(rest[1])?]);
                }
                "waypoint" => {
                    want(2)?;
                    wps.push([num(rest[0])?, num(rest[1])?]);
                }
                "lane_half_width" => {
                    want(1)?;
                    let v = num(rest[0])?;
                    if v <= 0.0 {
                        return Err(err(n, "lane_half_width must be positive".into()));
                    }
                    hw = Some(v);
                }
                "route" => {
                    want(2)?;
                    route.push([num(rest[0])?, num(rest[1])?]);
                }
                "agent" => {
                    want(7)?;
                    let t: usize = rest[0].parse().map_err(|_| err(n, format!("bad timestep `{}`", rest[0])))?;
                    if !(1..=TIMESTEPS).contains(&t) {
                        return Err(err(n, format!("timestep {t} outside 1..={TIMESTEPS}")));
                    }
                    let kind = AgentKind::parse(rest[1]).ok_or_else(|| err(n, format!("unknown agent kind `{}`", rest[1])))?;
                    let v: Vec<f64> = rest[2..].iter().map(|t| num(t)).collect::<Result<_>>()?;
                    if v[2] <= 0.0 || v[3] <= 0.0 {
                        return Err(err(n, "agent extents must be positive".into()));
                    }
                    agents.push(AgentBox {
                        x: v[0],
                        y: v[1],
                        w: v[2],
                        l: v[3],
                        theta: v[4],
                        timestep: t,
                        kind,
                    });
                }
                "end" => {
                    want(0)?;
                    ended = true;
                }
                other => return Err(err(n, format!("unknown record `{other}`"))),
            }
        }
        if !ended {
            return Err(Error::parse("labels", "missing `end`"));
        }
        let missing = |k: &str| Error::parse("labels", format!("missing `{k}`"));
        if wps.len() != WAYPOINTS {
            return Err(Error::parse("labels", format!("expected {WAYPOINTS} waypoints, got {}", wps.len())));
        }
        Route::new(route.clone()).map_err(|e| Error::parse("labels", format!("route: {e}")))?;
        Ok(FrameLabels {
            weather: weather.ok_or_else(|| missing("weather"))?,
            traffic: [light.ok_or_else(|| missing("traffic_light"))?, stop.ok_or_else(|| missing("stop_sign"))?],
            speed: speed.ok_or_else(|| missing("speed"))?,
            goal: goal.ok_or_else(|| missing("goal"))?,
            waypoints: [wps[0], wps[1], wps[2], wps[3]],
            lane_half_width: hw.ok_or_else(|| missing("lane_half_width"))?,
            route,
            agents,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FrameLabels {
        FrameLabels {
            weather: Weather::Foggy,
            traffic: [true, false],
            speed: 3.25,
            goal: [10.0, -0.1],
            waypoints: [[1.0, 0.0], [2.0, 0.0], [3.0, 0.1], [4.0, 0.2]],
            lane_half_width: 3.0,
            route: vec![[-4.0, 0.0], [36.0, 0.5]],
            agents: vec![AgentBox {
                x: 10.0,
                y: 1.0,
                w: 2.0,
                l: 4.5,
                theta: 0.1,
                timestep: 2,
                kind: AgentKind::Vehicle,
            }],
        }
    }

    #[test]
    fn round_trip() {
        let l = sample();
        assert_eq!(FrameLabels::parse(&l.serialize()).unwrap(), l);
    }

    #[test]
    fn rejects_wrong_waypoint_count() {
        let text = sample().serialize().replacen("waypoint 1 0\n", "", 1);
        assert!(FrameLabels::parse(&text).is_err());
    }

    #[test]
    fn straight_road_bev_classes() {
        let road = Route::new(vec![[-4.0, 0.0], [40.0, 0.0]]).unwrap();
        let m = bev_class_map(&road, 3.0, 32);
        // Cell centres along a row: y = -15.5 .. 15.5 in 1 m steps.
        let row: Vec<u8> = m[..32].to_vec();
        assert_eq!(row[16], 0);
        assert_eq!(row[16 + 2], 1);
        assert_eq!(row[16 - 3], 1);
        assert_eq!(row[0], 2);
    }
}
