//! Infractions, route completion, infraction score and driving score.

use std::collections::BTreeSet;

use super::scenario::{LightState, Scenario};
use super::world::{ObjectId, World};
use crate::error::{contract_err, Result};
use crate::sensor::EgoPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InfractionKind {
    Ped,
    Veh,
    Lay,
    Red,
    OR,
    Dev,
    TO,
    Block,
}

impl InfractionKind {
    pub const ALL: [InfractionKind; 8] = [
        InfractionKind::Ped,
        InfractionKind::Veh,
        InfractionKind::Lay,
        InfractionKind::Red,
        InfractionKind::OR,
        InfractionKind::Dev,
        InfractionKind::TO,
        InfractionKind::Block,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InfractionKind::Ped => "Ped",
            InfractionKind::Veh => "Veh",
            InfractionKind::Lay => "Lay",
            InfractionKind::Red => "Red",
            InfractionKind::OR => "OR",
            InfractionKind::Dev => "Dev",
            InfractionKind::TO => "TO",
            InfractionKind::Block => "Block",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        InfractionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| contract_err!("unknown infraction kind `{s}`"))
    }

    /// Deviation, timeout and blocking end the route.
    pub fn terminates(self) -> bool {
        matches!(self, InfractionKind::Dev | InfractionKind::TO | InfractionKind::Block)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfractionEvent {
    pub kind: InfractionKind,
    pub time: f64,
    pub x: f64,
    pub y: f64,
}

/// Multiplicative penalty per infraction kind, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalties {
    values: Vec<(InfractionKind, f64)>,
}

impl Default for Penalties {
    fn default() -> Self {
        use InfractionKind::*;
        Penalties {
            values: vec![
                (Ped, 0.50),
                (Veh, 0.60),
                (Lay, 0.65),
                (Red, 0.70),
                (OR, 1.0),
                (Dev, 1.0),
                (TO, 1.0),
                (Block, 1.0),
            ],
        }
    }
}

impl Penalties {
    pub fn empty() -> Self {
        Penalties { values: Vec::new() }
    }

    pub fn set(&mut self, kind: InfractionKind, value: f64) -> Result<()> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(contract_err!("penalty for {} must be in (0, 1], got {value}", kind.name()));
        }
        self.values.retain(|(k, _)| *k != kind);
        self.values.push((kind, value));
        Ok(())
    }

    pub fn get(&self, kind: InfractionKind) -> Result<f64> {
        self.values
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| *v)
            .ok_or_else(|| contract_err!("no penalty configured for infraction kind {}", kind.name()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteResult {
    pub rc: f64,
    pub is: f64,
    pub ds: f64,
    pub events: Vec<InfractionEvent>,
}

pub fn compute_metrics(events: &[InfractionEvent], completed_fraction: f64, penalties: &Penalties) -> Result<RouteResult> {
    if !(0.0..=1.0).contains(&completed_fraction) {
        return Err(contract_err!("completed fraction {completed_fraction} outside [0, 1]"));
    }
    let mut is = 1.0;
    for e in events {
        is *= penalties.get(e.kind)?;
    }
    let is = f64::max(is, 0.0);
    let rc = 100.0 * completed_fraction;
    Ok(RouteResult {
        rc,
        is,
        ds: rc * is,
        events: events.to_vec(),
    })
}

/// Mean driving score over routes.
pub fn mean_driving_score(results: &[RouteResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(|r| r.rc * r.is).sum::<f64>() / results.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfractionConfig {
    /// Seconds the ego centre may spend off the drivable area before an OR event.
    pub off_road_time: f64,
    /// Lateral distance from the route that ends the run.
    pub deviation: f64,
    pub block_speed: f64,
    pub block_window: f64,
    /// Route time budget; infinite disables the timeout.
    pub time_budget: f64,
}

impl Default for InfractionConfig {
    fn default() -> Self {
        InfractionConfig {
            off_road_time: 1.0,
            deviation: 6.0,
            block_speed: 0.1,
            block_window: 10.0,
            time_budget: f64::INFINITY,
        }
    }
}

/// Online infraction detector; feed it the world after every tick.
#[derive(Debug, Clone)]
pub struct InfractionMonitor {
    pub cfg: InfractionConfig,
    contacts: BTreeSet<ObjectId>,
    prev_s: Option<f64>,
    off_road_since: Option<f64>,
    off_road_reported: bool,
    slow_since: f64,
    /// Route progress covered while off the drivable area, metres.
    pub off_road_progress: f64,
    pub terminated: bool,
}

impl InfractionMonitor {
    pub fn new(cfg: InfractionConfig) -> Self {
        InfractionMonitor {
            cfg,
            contacts: BTreeSet::new(),
            prev_s: None,
            off_road_since: None,
            off_road_reported: false,
            slow_since: 0.0,
            off_road_progress: 0.0,
            terminated: false,
        }
    }

    pub fn observe(&mut self, w: &World) -> Vec<InfractionEvent> {
        let mut out = Vec::new();
        if self.terminated {
            return out;
        }
        let p = w.ego.pose;
        let ev = |kind| InfractionEvent {
            kind,
            time: w.time,
            x: p.x,
            y: p.y,
        };
        let ego = w.ego_box();
        let mut now = BTreeSet::new();
        for (id, b) in w.obstacles() {
            if ego.overlaps(&b) {
                now.insert(id);
                if !self.contacts.contains(&id) {
                    out.push(ev(match id {
                        ObjectId::Npc(_) => InfractionKind::Veh,
                        ObjectId::Pedestrian(_) => InfractionKind::Ped,
                        ObjectId::Layout(_) => InfractionKind::Lay,
                    }));
                }
            }
        }
        self.contacts = now;

        let (s, d) = w.ego_progress();
        let hw = w.scenario.lane_half_width;
        if let Some(prev) = self.prev_s {
            for (i, l) in w.scenario.lights.iter().enumerate() {
                if prev < l.s && s >= l.s && d.abs() < hw + 2.0 && w.light_state(i) == LightState::Red {
                    out.push(ev(InfractionKind::Red));
                }
            }
            if d.abs() > hw {
                self.off_road_progress += (s - prev).max(0.0);
            }
        }
        self.prev_s = Some(s);

        if d.abs() > hw {
            let since = *self.off_road_since.get_or_insert(w.time);
            if !self.off_road_reported && w.time - since > self.cfg.off_road_time {
                out.push(ev(InfractionKind::OR));
                self.off_road_reported = true;
            }
        } else {
            self.off_road_since = None;
            self.off_road_reported = false;
        }

        if d.abs() > self.cfg.deviation {
            out.push(ev(InfractionKind::Dev));
        } else if w.time > self.cfg.time_budget {
            out.push(ev(InfractionKind::TO));
        } else {
            if w.ego.speed >= self.cfg.block_speed {
                self.slow_since = w.time;
            }
            if w.time - self.slow_since > self.cfg.block_window {
                out.push(ev(InfractionKind::Block));
            }
        }
        if out.iter().any(|e| e.kind.terminates()) {
            self.terminated = true;
        }
        out
    }
}

/// One recorded ego sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub pose: EgoPose,
    pub speed: f64,
}

/// Replays a recorded ego trajectory against the scenario. Samples must be
/// equally spaced in time, starting at `dt` after the route start.
pub fn detect_infractions(traj: &[TrajectoryPoint], scenario: &Scenario, cfg: &InfractionConfig) -> Result<Vec<InfractionEvent>> {
    let mut w = World::new(scenario)?;
    let mut mon = InfractionMonitor::new(*cfg);
    let mut events = Vec::new();
    for tp in traj {
        if tp.time < w.time {
            return Err(contract_err!("trajectory times must be increasing"));
        }
        let dt = tp.time - w.time;
        if dt > 0.0 {
            let held = w.ego;
            w.step(&Default::default(), dt);
            w.ego = held;
        }
        w.time = tp.time;
        w.ego.pose = tp.pose;
        w.ego.speed = tp.speed;
        events.extend(mon.observe(&w));
        if mon.terminated {
            break;
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(kind: InfractionKind) -> InfractionEvent {
        InfractionEvent {
            kind,
            time: 0.0,
            x: 0.0,
            y: 0.0,
        }
    }

    #[test]
    fn metric_examples() {
        let p = Penalties::default();
        let r = compute_metrics(&[], 1.0, &p).unwrap();
        assert_eq!((r.rc, r.is, r.ds), (100.0, 1.0, 100.0));
        let r = compute_metrics(&[ev(InfractionKind::Ped)], 1.0, &p).unwrap();
        assert_eq!((r.is, r.ds), (0.5, 50.0));
        let r = compute_metrics(&[ev(InfractionKind::Veh), ev(InfractionKind::Veh)], 0.8, &p).unwrap();
        assert!((r.rc - 80.0).abs() < 1e-12);
        assert!((r.is - 0.36).abs() < 1e-12);
        assert!((r.ds - 28.8).abs() < 1e-9);
    }

    #[test]
    fn missing_penalty_is_contract_error() {
        let e = compute_metrics(&[ev(InfractionKind::Red)], 1.0, &Penalties::empty()).unwrap_err();
        assert_eq!(e.category(), "contract");
        assert!(InfractionKind::parse("Speeding").is_err());
    }
}
