//! Kinematic driving simulator: scenarios, world stepping, the privileged
//! expert, sensor synthesis, closed-loop episodes and route metrics.

pub mod expert;
pub mod labels;
pub mod metrics;
pub mod report;
pub mod route;
pub mod run;
pub mod scenario;
pub mod sensors;
pub mod world;

pub use expert::{Expert, ExpertConfig};
pub use labels::FrameLabels;
pub use metrics::{compute_metrics, InfractionEvent, InfractionKind, Penalties, RouteResult};
pub use report::{evaluate_routes, load_routes, parse_routes, Report, ReportRow, RouteSpec};
pub use route::Route;
pub use run::{evaluate_route, run_episode, Episode, ExpertPolicy, ModelPolicy, Policy, SimConfig};
pub use scenario::{generate_scenario, lead_vehicle_scenario, Scenario, Weather};
pub use world::World;
