//! Closed-loop episodes: a policy proposes waypoints every model period, the
//! PID controller turns them into a command, and the command is held while
//! the world advances tick by tick under the infraction monitor.

use super::expert::{Expert, ExpertConfig};
use super::metrics::{compute_metrics, InfractionConfig, InfractionEvent, InfractionMonitor, Penalties, RouteResult, TrajectoryPoint};
use super::scenario::Scenario;
use super::sensors::{capture, goal_point, render_camera};
use super::world::World;
use crate::controller::{desired_speed, Controller, ControllerConfig};
use crate::data::model_input;
use crate::error::Result;
use crate::model::{Model, WAYPOINTS};
use crate::sensor::{BevConfig, LIDAR_FRAMES};
use crate::tensor::Element;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub tick: f64,
    /// Seconds between policy invocations.
    pub model_period: f64,
    /// Hard cap on episode length.
    pub max_time: f64,
    /// Time budget as a multiple of the expert's completion time.
    pub timeout_factor: f64,
    /// The route counts as complete within this distance of its end.
    pub goal_tolerance: f64,
    pub infractions: InfractionConfig,
    pub penalties: Penalties,
    pub controller: ControllerConfig,
    pub expert: ExpertConfig,
    pub bev: BevConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tick: 0.05,
            model_period: 0.5,
            max_time: 180.0,
            timeout_factor: 2.0,
            goal_tolerance: 2.0,
            infractions: InfractionConfig::default(),
            penalties: Penalties::default(),
            controller: ControllerConfig::default(),
            expert: ExpertConfig::default(),
            bev: BevConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn ticks_per_step(&self) -> usize {
        ((self.model_period / self.tick).round() as usize).max(1)
    }
}

pub trait Policy {
    /// Ego-frame waypoints for this step. The world's sensor history already
    /// holds the current sweep.
    fn plan(&mut self, world: &World, cfg: &SimConfig) -> Result<[[f64; 2]; WAYPOINTS]>;
}

/// The privileged rule-based expert.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    pub expert: Option<Expert>,
    pub cfg: ExpertConfig,
}

impl ExpertPolicy {
    pub fn new(cfg: ExpertConfig) -> Self {
        ExpertPolicy { expert: None, cfg }
    }
}

impl Policy for ExpertPolicy {
    fn plan(&mut self, world: &World, cfg: &SimConfig) -> Result<[[f64; 2]; WAYPOINTS]> {
        let e = self.expert.get_or_insert_with(|| Expert::new(self.cfg, world));
        e.update(world, cfg.model_period);
        Ok(e.plan(world))
    }
}

/// Drives with a trained network from synthesized sensors only.
pub struct ModelPolicy<'a, T: Element> {
    pub model: &'a Model<T>,
}

impl<T: Element> Policy for ModelPolicy<'_, T> {
    fn plan(&mut self, world: &World, cfg: &SimConfig) -> Result<[[f64; 2]; WAYPOINTS]> {
        let hist = world.recent_history(LIDAR_FRAMES)?;
        let (poses, clouds): (Vec<_>, Vec<_>) = hist.into_iter().unzip();
        let camera = render_camera(world)?;
        let input = model_input::<T>(&clouds, &poses, &camera, goal_point(world), &cfg.bev)?;
        Ok(self.model.predict(&input)?.waypoints)
    }
}

/// A policy frozen to one plan, for scripted tests.
pub struct FixedPolicy(pub [[f64; 2]; WAYPOINTS]);

impl Policy for FixedPolicy {
    fn plan(&mut self, _: &World, _: &SimConfig) -> Result<[[f64; 2]; WAYPOINTS]> {
        Ok(self.0)
    }
}

/// One route being driven.
pub struct Episode {
    pub world: World,
    pub cfg: SimConfig,
    pub monitor: InfractionMonitor,
    pub controller: Controller,
    pub events: Vec<InfractionEvent>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Desired speed implied by each plan.
    pub desired_speeds: Vec<f64>,
    pub max_progress: f64,
    pub completed: bool,
}

impl Episode {
    pub fn new(scenario: &Scenario, cfg: &SimConfig, time_budget: f64) -> Result<Self> {
        let mut world = World::new(scenario)?;
        capture(&mut world);
        let mut icfg = cfg.infractions;
        icfg.time_budget = time_budget;
        Ok(Episode {
            world,
            monitor: InfractionMonitor::new(icfg),
            controller: Controller::new(cfg.controller),
            events: Vec::new(),
            trajectory: Vec::new(),
            desired_speeds: Vec::new(),
            max_progress: 0.0,
            completed: false,
            cfg: cfg.clone(),
        })
    }

    pub fn finished(&self) -> bool {
        self.completed || self.monitor.terminated || self.world.time >= self.cfg.max_time
    }

    /// Applies one plan for one model period.
    pub fn advance(&mut self, wp: &[[f64; 2]; WAYPOINTS]) {
        self.desired_speeds.push(desired_speed(wp, self.cfg.controller.speed_gain));
        let cmd = self.controller.control(wp, self.world.ego.speed);
        let len = self.world.route.length();
        for _ in 0..self.cfg.ticks_per_step() {
            self.world.step(&cmd, self.cfg.tick);
            self.trajectory.push(TrajectoryPoint {
                time: self.world.time,
                pose: self.world.ego.pose,
                speed: self.world.ego.speed,
            });
            self.events.extend(self.monitor.observe(&self.world));
            let (s, _) = self.world.ego_progress();
            self.max_progress = self.max_progress.max(s.min(len));
            if s >= len - self.cfg.goal_tolerance {
                self.completed = true;
            }
            if self.finished() {
                break;
            }
        }
        if !self.finished() {
            capture(&mut self.world);
        }
    }

    pub fn completed_fraction(&self) -> f64 {
        let len = self.world.route.length();
        let reach = if self.completed { 1.0 } else { self.max_progress / len };
        (reach - self.monitor.off_road_progress / len).clamp(0.0, 1.0)
    }

    pub fn result(&self) -> Result<RouteResult> {
        compute_metrics(&self.events, self.completed_fraction(), &self.cfg.penalties)
    }
}

#[derive(Debug, Clone)]
pub struct RouteRun {
    pub result: RouteResult,
    pub duration: f64,
    pub completed: bool,
    pub trajectory: Vec<TrajectoryPoint>,
    pub desired_speeds: Vec<f64>,
}

pub fn run_episode(scenario: &Scenario, policy: &mut dyn Policy, cfg: &SimConfig, time_budget: f64) -> Result<RouteRun> {
    let mut ep = Episode::new(scenario, cfg, time_budget)?;
    while !ep.finished() {
        let wp = policy.plan(&ep.world, cfg)?;
        ep.advance(&wp);
    }
    Ok(RouteRun {
        result: ep.result()?,
        duration: ep.world.time,
        completed: ep.completed,
        trajectory: ep.trajectory,
        desired_speeds: ep.desired_speeds,
    })
}

/// How long the expert needs for the route, or `None` if it fails to finish.
pub fn expert_time(scenario: &Scenario, cfg: &SimConfig) -> Result<Option<f64>> {
    let run = run_episode(scenario, &mut ExpertPolicy::new(cfg.expert), cfg, f64::INFINITY)?;
    Ok(run.completed.then_some(run.duration))
}

/// Evaluates a policy with the timeout derived from the expert's time.
pub fn evaluate_route(scenario: &Scenario, policy: &mut dyn Policy, cfg: &SimConfig) -> Result<RouteRun> {
    let budget = match expert_time(scenario, cfg)? {
        Some(t) => cfg.timeout_factor * t,
        None => cfg.max_time,
    };
    run_episode(scenario, policy, cfg, budget)
}
