//! The `idrive` subcommands as plain functions over files.

use std::path::{Path, PathBuf};

use idrive::analysis::{correlation_report, probe_inputs, CorrelationReport};
use idrive::config::Config;
use idrive::data::{generate_dataset, load_dataset, read_frame, Manifest, Sample};
use idrive::error::{Error, Result};
use idrive::model::Model;
use idrive::sim::{evaluate_routes, load_routes, ExpertPolicy, ModelPolicy, Policy, Report};
use idrive::tensor::{peek_precision, read_checkpoint, write_checkpoint, Checkpoint, Element, Precision};
use idrive::train::{config_from_checkpoint, load_model, LossLog, Trainer};
use idrive::viz::{render, Panels};

pub fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    peek_precision(&bytes)
}

pub fn cmd_gen_data(config: &Config, out: &Path, frames: usize, seed: u64) -> Result<Manifest> {
    let m = generate_dataset(out, frames, seed, &config.data, &config.sim)?;
    log::info!("wrote {} frames to {}", m.entries.len(), out.display());
    Ok(m)
}

/// Paths written by a training run next to the final checkpoint.
pub fn loss_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".loss.tsv");
    PathBuf::from(s)
}

pub fn periodic_checkpoint_path(out: &Path, step: usize) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(format!(".step{step:06}"));
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub samples: usize,
    pub skipped: usize,
    pub steps: usize,
    pub final_total: Option<f64>,
}

fn train_t<T: Element>(config: &Config, samples: &[Sample], skipped: usize, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    let mut trainer = match resume {
        Some(p) => Trainer::resume(config.model.clone(), config.train, &read_checkpoint::<T>(p)?)?,
        None => Trainer::new(Model::<T>::new(config.model.clone())?, config.train)?,
    };
    let mut log = LossLog::new(skipped);
    let mut last = None;
    let every = config.train.checkpoint_every;
    while trainer.step < config.train.steps {
        let s = trainer.train_step(samples)?;
        log.push(&s);
        last = Some(s.loss.total);
        if s.step % 50 == 0 {
            log::info!("step {} lr {:.3e} loss {:.5}", s.step, s.lr, s.loss.total);
        }
        if every > 0 && trainer.step % every == 0 && trainer.step < config.train.steps {
            write_checkpoint(&periodic_checkpoint_path(out, trainer.step), &trainer.checkpoint())?;
        }
    }
    write_checkpoint(out, &trainer.checkpoint())?;
    let p = loss_log_path(out);
    std::fs::write(&p, &log.text).map_err(|e| Error::io(p, e))?;
    Ok(TrainSummary {
        samples: samples.len(),
        skipped,
        steps: trainer.step,
        final_total: last,
    })
}

/// Trains on every loadable frame under `data`; unreadable frames are
/// skipped with a warning and counted in the loss log.
pub fn cmd_train(config: &Config, data: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    let (samples, skipped) = load_dataset(data, &config.sim.bev)?;
    for (p, e) in &skipped {
        log::warn!("skipping {}: {e}", p.display());
    }
    if samples.is_empty() {
        return Err(Error::Contract(format!("no loadable frames under {}", data.display())));
    }
    match config.model.precision {
        Precision::F32 => train_t::<f32>(config, &samples, skipped.len(), out, resume),
        Precision::F64 => train_t::<f64>(config, &samples, skipped.len(), out, resume),
    }
}

fn load_checked<T: Element>(config: &Config, path: &Path) -> Result<Model<T>> {
    let ckpt: Checkpoint<T> = read_checkpoint(path)?;
    let mut cfg = config.model.clone();
    cfg.precision = T::PRECISION;
    load_model(cfg, &ckpt)
}

fn eval_t<T: Element>(config: &Config, ckpt: &Path, routes: &Path) -> Result<Report> {
    let model = load_checked::<T>(config, ckpt)?;
    let specs = load_routes(routes)?;
    evaluate_routes(&specs, &mut || Box::new(ModelPolicy { model: &model }) as Box<dyn Policy>, &config.sim)
}

/// Runs every listed route closed-loop and writes the report. Without a
/// checkpoint the privileged expert drives.
pub fn cmd_eval(config: &Config, ckpt: Option<&Path>, routes: &Path, report: &Path) -> Result<Report> {
    let rep = match ckpt {
        None => {
            let specs = load_routes(routes)?;
            let expert = config.sim.expert;
            evaluate_routes(&specs, &mut || Box::new(ExpertPolicy::new(expert)) as Box<dyn Policy>, &config.sim)?
        }
        Some(p) => match checkpoint_precision(p)? {
            Precision::F32 => eval_t::<f32>(config, p, routes)?,
            Precision::F64 => eval_t::<f64>(config, p, routes)?,
        },
    };
    std::fs::write(report, rep.serialize()).map_err(|e| Error::io(report, e))?;
    Ok(rep)
}

fn model_for<T: Element>(config: Option<&Config>, path: &Path) -> Result<Model<T>> {
    match config {
        Some(c) => load_checked(c, path),
        None => {
            let ckpt: Checkpoint<T> = read_checkpoint(path)?;
            load_model(config_from_checkpoint(&ckpt)?, &ckpt)
        }
    }
}

fn visualize_t<T: Element>(config: Option<&Config>, ckpt: &Path, frame: &Path, out: &Path) -> Result<Panels> {
    let raw = read_frame(frame)?;
    let model = model_for::<T>(config, ckpt)?;
    let bev = config.map(|c| c.sim.bev).unwrap_or_default();
    let input = idrive::data::model_input::<T>(&raw.clouds, &raw.poses, &raw.camera, raw.labels.goal, &bev)?;
    let panels = render(&input, &model.predict(&input)?)?;
    panels.write(out)?;
    Ok(panels)
}

/// Renders the input and prediction panels for one frame directory.
pub fn cmd_visualize(config: Option<&Config>, ckpt: &Path, frame: &Path, out: &Path) -> Result<Panels> {
    match checkpoint_precision(ckpt)? {
        Precision::F32 => visualize_t::<f32>(config, ckpt, frame, out),
        Precision::F64 => visualize_t::<f64>(config, ckpt, frame, out),
    }
}

fn analyze_t<T: Element>(config: Option<&Config>, ckpt: &Path, seed: u64, n: usize) -> Result<CorrelationReport> {
    let model = model_for::<T>(config, ckpt)?;
    let sim = config.map(|c| c.sim.clone()).unwrap_or_default();
    let probe = probe_inputs::<T>(seed, n, &sim)?;
    correlation_report(&model, &probe, seed)
}

/// Writes the head-correlation report for a probe batch drawn from `seed`.
pub fn cmd_analyze(config: Option<&Config>, ckpt: &Path, out: &Path, seed: u64, n: usize) -> Result<CorrelationReport> {
    let rep = match checkpoint_precision(ckpt)? {
        Precision::F32 => analyze_t::<f32>(config, ckpt, seed, n)?,
        Precision::F64 => analyze_t::<f64>(config, ckpt, seed, n)?,
    };
    std::fs::write(out, rep.render()).map_err(|e| Error::io(out, e))?;
    Ok(rep)
}
