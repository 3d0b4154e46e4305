//! Route lists and route-result reports.
//!
//! A routes file has one route per line:
//!
//! ```text
//! route <seed> <difficulty>
//! lead <seed> <weather>
//! scenario <path>
//! ```
//!
//! Relative scenario paths resolve against the routes file's directory.
//!
//! A report is tab-separated text: a header, one row per route and a final
//! `mean` row over all routes. Floats are written in shortest round-trip
//! form, so parsing a report gives back the exact values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{InfractionEvent, InfractionKind, RouteResult};
use super::run::{evaluate_route, Policy, SimConfig};
use super::scenario::{generate_scenario, lead_vehicle_scenario, Scenario, Weather};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum RouteSpec {
    Generated { seed: u64, difficulty: u32 },
    Lead { seed: u64, weather: Weather },
    File(PathBuf),
}

impl RouteSpec {
    pub fn scenario(&self) -> Result<Scenario> {
        match self {
            RouteSpec::Generated { seed, difficulty } => Ok(generate_scenario(*seed, *difficulty)),
            RouteSpec::Lead { seed, weather } => Ok(lead_vehicle_scenario(*seed, *weather)),
            RouteSpec::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Scenario::parse(&text)
            }
        }
    }

    /// The seed column of the report; file scenarios report their own seed.
    pub fn seed(&self) -> Result<u64> {
        match self {
            RouteSpec::Generated { seed, .. } | RouteSpec::Lead { seed, .. } => Ok(*seed),
            RouteSpec::File(_) => Ok(self.scenario()?.seed),
        }
    }
}

pub fn parse_routes(text: &str, base: &Path) -> Result<Vec<RouteSpec>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::parse("routes", format!("line {}: {m}", i + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        let seed = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad seed `{s}`")));
        let spec = match f.as_slice() {
            ["route", s, d] => RouteSpec::Generated {
                seed: seed(s)?,
                difficulty: d.parse().map_err(|_| err(format!("bad difficulty `{d}`")))?,
            },
            ["lead", s, w] => RouteSpec::Lead {
                seed: seed(s)?,
                weather: Weather::parse(w).ok_or_else(|| err(format!("unknown weather `{w}`")))?,
            },
            ["scenario", p] => RouteSpec::File(base.join(p)),
            _ => return Err(err(format!("expected `route <seed> <difficulty>`, `lead <seed> <weather>` or `scenario <path>`, got `{line}`"))),
        };
        out.push(spec);
    }
    if out.is_empty() {
        return Err(Error::parse("routes", "no routes listed"));
    }
    Ok(out)
}

pub fn load_routes(path: &Path) -> Result<Vec<RouteSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_routes(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub route: usize,
    pub seed: u64,
    pub result: RouteResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

const HEADER: &str = "route\tseed\trc\tis\tds\tevents";

fn events_field(events: &[InfractionEvent]) -> String {
    if events.is_empty() {
        return "-".into();
    }
    let parts: Vec<String> = events.iter().map(|e| format!("{}@{}@{}@{}", e.kind.name(), e.time, e.x, e.y)).collect();
    parts.join(",")
}

fn parse_events(s: &str) -> std::result::Result<Vec<InfractionEvent>, String> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|e| {
            let f: Vec<&str> = e.split('@').collect();
            if f.len() != 4 {
                return Err(format!("bad event `{e}`"));
            }
            let num = |v: &str| v.parse::<f64>().map_err(|_| format!("bad number `{v}` in event `{e}`"));
            Ok(InfractionEvent {
                kind: InfractionKind::parse(f[0]).map_err(|x| x.to_string())?,
                time: num(f[1])?,
                x: num(f[2])?,
                y: num(f[3])?,
            })
        })
        .collect()
}

impl Report {
    /// Mean RC, IS and DS over the rows; DS is the mean of per-route RC·IS.
    pub fn mean(&self) -> (f64, f64, f64) {
        let n = self.rows.len().max(1) as f64;
        let sum = |f: &dyn Fn(&RouteResult) -> f64| self.rows.iter().map(|r| f(&r.result)).sum::<f64>() / n;
        (sum(&|r| r.rc), sum(&|r| r.is), sum(&|r| r.rc * r.is))
    }

    pub fn serialize(&self) -> String {
        let mut o = String::new();
        o.push_str(HEADER);
        o.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                o,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.route,
                r.seed,
                r.result.rc,
                r.result.is,
                r.result.ds,
                events_field(&r.result.events)
            );
        }
        let (rc, is, ds) = self.mean();
        let _ = writeln!(o, "mean\t-\t{rc}\t{is}\t{ds}\t{}", self.rows.iter().map(|r| r.result.events.len()).sum::<usize>());
        o
    }

    pub fn parse(text: &str) -> Result<Report> {
        let err = |n: usize, m: String| Error::parse("report", format!("line {n}: {m}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => return Err(err(1, format!("expected header `{HEADER}`"))),
        }
        let mut rows = Vec::new();
        let mut saw_mean = false;
        for (i, line) in lines {
            let n = i + 1;
            if saw_mean {
                return Err(err(n, "content after the mean row".into()));
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(err(n, format!("expected 6 tab-separated fields, got {}", f.len())));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|_| err(n, format!("bad number `{s}`")));
            if f[0] == "mean" {
                saw_mean = true;
                continue;
            }
            rows.push(ReportRow {
                route: f[0].parse().map_err(|_| err(n, format!("bad route id `{}`", f[0])))?,
                seed: f[1].parse().map_err(|_| err(n, format!("bad seed `{}`", f[1])))?,
                result: RouteResult {
                    rc: float(f[2])?,
                    is: float(f[3])?,
                    ds: float(f[4])?,
                    events: parse_events(f[5]).map_err(|m| err(n, m))?,
                },
            });
        }
        if !saw_mean {
            return Err(Error::parse("report", "missing mean row"));
        }
        Ok(Report { rows })
    }
}

/// Runs every route with a fresh policy from `make_policy`.
pub fn evaluate_routes<'a>(routes: &[RouteSpec], make_policy: &mut dyn FnMut() -> Box<dyn Policy + 'a>, cfg: &SimConfig) -> Result<Report> {
    let mut rows = Vec::with_capacity(routes.len());
    for (i, spec) in routes.iter().enumerate() {
        let sc = spec.scenario()?;
        let mut policy = make_policy();
        let run = evaluate_route(&sc, policy.as_mut(), cfg)?;
        log::debug!("route {i}: rc {} is {} events {}", run.result.rc, run.result.is, run.result.events.len());
        rows.push(ReportRow {
            route: i,
            seed: sc.seed,
            result: run.result,
        });
    }
    Ok(Report { rows })
}
