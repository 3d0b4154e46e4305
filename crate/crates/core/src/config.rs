//! Experiment configuration: flat `key = value` lines grouped in
//! `[model]`, `[train]`, `[eval]`, `[controller]` and `[data]` sections.
//! `#` starts a comment. Unknown sections and keys are errors; keys that
//! are not given keep their defaults.
//!
//! ```text
//! [model]
//! width_factor = 0.25
//! r = 64
//! precision = f32
//!
//! [train]
//! steps = 2000
//! lr = 0.001
//!
//! [eval]
//! penalty.Ped = 0.5
//! ```

use std::path::Path;

use crate::controller::ControllerConfig;
use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sim::metrics::InfractionKind;
use crate::sim::SimConfig;
use crate::tensor::Precision;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub data: DataConfig,
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("bad value `{v}`"))
}

fn float(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("non-finite value `{v}`"))
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut c = Config::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let err = |m: String| Error::parse("config", format!("line {n}: {m}"));
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["model", "train", "eval", "controller", "data"].contains(&name) {
                    return Err(err(format!("unknown section `[{name}]`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| err(format!("key `{key}` outside any section")))?;
            c.set(sec, key, value).map_err(err)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, sec: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        let unknown = || Err(format!("unknown key `{key}` in [{sec}]"));
        match sec {
            "model" => {
                let m = &mut self.model;
                match key {
                    "width_factor" => m.width_factor = float(v)?,
                    "r" => m.r = num(v)?,
                    "gru_hidden" => m.gru_hidden = num(v)?,
                    "attention_heads" => m.attention_heads = num(v)?,
                    "eca_kernel" => m.eca_kernel = num(v)?,
                    "blocks_per_stage" => m.blocks_per_stage = num(v)?,
                    "transformer_layers" => m.transformer_layers = num(v)?,
                    "decoder_width" => m.decoder_width = num(v)?,
                    "seed" => m.seed = num(v)?,
                    "precision" => {
                        m.precision = match v {
                            "f32" => Precision::F32,
                            "f64" => Precision::F64,
                            _ => return Err(format!("precision must be f32 or f64, got `{v}`")),
                        }
                    }
                    _ => return unknown(),
                }
            }
            "train" => {
                let t = &mut self.train;
                let w = &mut t.weights;
                match key {
                    "optimizer" => t.optimizer = crate::train::Optimizer::parse(v).map_err(|e| e.to_string())?,
                    "steps" => t.steps = num(v)?,
                    "batch" => t.batch = num(v)?,
                    "lr" => t.lr = float(v)?,
                    "min_lr" => t.min_lr = float(v)?,
                    "momentum" => t.momentum = float(v)?,
                    "seed" => t.seed = num(v)?,
                    "checkpoint_every" => t.checkpoint_every = num(v)?,
                    "lambda_wp" => w.lambda_wp = float(v)?,
                    "lambda_o" => w.lambda_o = float(v)?,
                    "lambda_m" => w.lambda_m = float(v)?,
                    "lambda_tf" => w.lambda_tf = float(v)?,
                    "lambda_wc" => w.lambda_wc = float(v)?,
                    "alpha" => w.alpha = float(v)?,
                    "beta" => w.beta = float(v)?,
                    "gamma" => w.gamma = float(v)?,
                    "delta" => w.delta = float(v)?,
                    _ => return unknown(),
                }
            }
            "eval" => {
                let s = &mut self.sim;
                if let Some(kind) = key.strip_prefix("penalty.") {
                    let kind = InfractionKind::parse(kind).map_err(|e| e.to_string())?;
                    return s.penalties.set(kind, float(v)?).map_err(|e| e.to_string());
                }
                match key {
                    "tick" => s.tick = float(v)?,
                    "model_period" => s.model_period = float(v)?,
                    "max_time" => s.max_time = float(v)?,
                    "timeout_factor" => s.timeout_factor = float(v)?,
                    "goal_tolerance" => s.goal_tolerance = float(v)?,
                    "off_road_time" => s.infractions.off_road_time = float(v)?,
                    "deviation" => s.infractions.deviation = float(v)?,
                    "block_speed" => s.infractions.block_speed = float(v)?,
                    "block_window" => s.infractions.block_window = float(v)?,
                    "expert_cruise_speed" => s.expert.cruise_speed = float(v)?,
                    "expert_adverse_speed" => s.expert.adverse_speed = float(v)?,
                    _ => return unknown(),
                }
            }
            "controller" => {
                let c: &mut ControllerConfig = &mut self.sim.controller;
                match key {
                    "lateral_kp" => c.lateral[0] = float(v)?,
                    "lateral_ki" => c.lateral[1] = float(v)?,
                    "lateral_kd" => c.lateral[2] = float(v)?,
                    "longitudinal_kp" => c.longitudinal[0] = float(v)?,
                    "longitudinal_ki" => c.longitudinal[1] = float(v)?,
                    "longitudinal_kd" => c.longitudinal[2] = float(v)?,
                    "window" => c.window = num(v)?,
                    "speed_gain" => c.speed_gain = float(v)?,
                    "brake_speed" => c.brake_speed = float(v)?,
                    "brake_ratio" => c.brake_ratio = float(v)?,
                    "max_throttle" => c.max_throttle = float(v)?,
                    _ => return unknown(),
                }
            }
            "data" => {
                let d = &mut self.data;
                match key {
                    "difficulties" => {
                        d.difficulties = v.split(',').map(|t| num(t.trim())).collect::<std::result::Result<_, _>>()?;
                    }
                    "frames_per_route" => d.frames_per_route = num(v)?,
                    "stride" => d.stride = num(v)?,
                    "lead_every" => d.lead_every = num(v)?,
                    "balance_weather" => d.balance_weather = num(v)?,
                    "z_ground" => self.sim.bev.z_ground = float(v)?,
                    "count_cap" => self.sim.bev.count_cap = num(v)?,
                    _ => return unknown(),
                }
            }
            _ => unreachable!("section checked by the caller"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let s = &self.sim;
        if !(s.tick > 0.0 && s.model_period >= s.tick && s.max_time > 0.0) {
            return Err(crate::error::contract_err!("eval: need 0 < tick <= model_period and max_time > 0"));
        }
        if self.data.difficulties.is_empty() || self.data.frames_per_route == 0 || self.data.stride == 0 {
            return Err(crate::error::contract_err!("data: difficulties, frames_per_route and stride must be non-empty / >= 1"));
        }
        if s.bev.count_cap == 0 {
            return Err(crate::error::contract_err!("data: count_cap must be >= 1"));
        }
        Ok(())
    }
}
