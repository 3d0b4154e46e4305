//! Multi-task training loop: per-sample tapes accumulated into a batch
//! gradient, SGD with momentum (or Adam) and a cosine learning-rate schedule.
//!
//! Checkpoints carry the weights, the model configuration (`meta.*`), the
//! step counter (`meta.step`) and the optimizer buffers (`opt.<param>`, plus
//! `opt2.<param>` for Adam), so a resumed run continues exactly where it
//! stopped.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{contract_err, Result};
use crate::losses::{total_loss, LossBreakdown, LossParts, LossWeights};
use crate::model::{check_meta, Model, ModelConfig};
use crate::tensor::{Checkpoint, Element, Graph, Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// `v = μv + g; p -= lr·v`
    #[default]
    Momentum,
    /// Adam with `β1 = momentum`, `β2 = 0.999`, `ε = 1e-8`.
    Adam,
}

impl Optimizer {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "momentum" => Ok(Optimizer::Momentum),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(contract_err!("optimizer must be `momentum` or `adam`, got `{s}`")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Momentum => "momentum",
            Optimizer::Adam => "adam",
        }
    }
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Floor of the cosine schedule.
    pub min_lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Write an intermediate checkpoint every N steps; 0 disables.
    pub checkpoint_every: usize,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Momentum,
            steps: 2000,
            batch: 8,
            lr: 1e-3,
            min_lr: 0.0,
            momentum: 0.9,
            seed: 0,
            checkpoint_every: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(contract_err!("batch must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..=self.lr).contains(&self.min_lr) {
            return Err(contract_err!("need 0 <= min_lr <= lr, lr > 0; got lr {} min_lr {}", self.lr, self.min_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(contract_err!("momentum {} outside [0, 1)", self.momentum));
        }
        self.weights.validate()
    }

    /// Cosine decay from `lr` at step 0 to `min_lr` at `steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps == 0 {
            return self.lr;
        }
        let p = (step.min(self.steps) as f64) / self.steps as f64;
        self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Sample indices of batch `step`: consecutive slices of per-epoch
/// permutations, so any step can be recomputed without replaying the run.
pub fn batch_indices(seed: u64, step: usize, batch: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for k in step * batch..(step + 1) * batch {
        let epoch = k / n;
        if cached.as_ref().map_or(true, |(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407));
            perm.shuffle(&mut rng);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().unwrap().1[k % n]);
    }
    out
}

/// One logged step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub struct Trainer<T: Element> {
    pub model: Model<T>,
    pub cfg: TrainConfig,
    /// Steps completed so far.
    pub step: usize,
    velocity: Vec<Vec<T>>,
    /// Adam second moments; empty for momentum.
    second: Vec<Vec<T>>,
}

impl<T: Element> Trainer<T> {
    pub fn new(model: Model<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let velocity: Vec<Vec<T>> = model.params.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect();
        let second = match cfg.optimizer {
            Optimizer::Momentum => Vec::new(),
            Optimizer::Adam => velocity.clone(),
        };
        Ok(Trainer {
            model,
            cfg,
            step: 0,
            velocity,
            second,
        })
    }

    /// Forward and backward over one batch; adds `1/B`-scaled gradients into
    /// `acc` and returns the mean loss parts.
    fn accumulate(&self, samples: &[&Sample], acc: &mut [Vec<f64>]) -> Result<LossParts> {
        let r = self.model.cfg.r;
        let inv = 1.0 / samples.len() as f64;
        let mut mean = LossParts::default();
        for s in samples {
            let targets = s.targets(r)?;
            let input = s.input::<T>();
            let mut g = Graph::new();
            let p = self.model.bind(&mut g);
            let hv = self.model.forward(&mut g, &p, &input)?;
            let (terms, parts) = self.model.loss_terms(&mut g, &hv, &targets)?;
            let total = self.model.weighted_loss(&mut g, &terms, &self.cfg.weights)?;
            let total = g.scale(total, T::of(inv));
            g.backward(total)?;
            for (a, &v) in acc.iter_mut().zip(&p) {
                if let Some(gr) = g.grad(v) {
                    for (x, y) in a.iter_mut().zip(gr) {
                        *x += y.as_f64();
                    }
                }
            }
            mean.wp += inv * parts.wp;
            mean.heat += inv * parts.heat;
            mean.reg += inv * parts.reg;
            mean.m += inv * parts.m;
            mean.light += inv * parts.light;
            mean.sign += inv * parts.sign;
            mean.wc += inv * parts.wc;
        }
        Ok(mean)
    }

    /// One optimizer step on the batch chosen for the current step.
    pub fn train_step(&mut self, data: &[Sample]) -> Result<StepLog> {
        if data.is_empty() {
            return Err(contract_err!("training needs at least one sample"));
        }
        let idx = batch_indices(self.cfg.seed, self.step, self.cfg.batch, data.len());
        let batch: Vec<&Sample> = idx.iter().map(|&i| &data[i]).collect();
        let mut acc: Vec<Vec<f64>> = self.velocity.iter().map(|v| vec![0.0; v.len()]).collect();
        let parts = self.accumulate(&batch, &mut acc)?;
        let loss = total_loss(&parts, &self.cfg.weights);
        if !loss.total.is_finite() {
            return Err(crate::Error::Numeric {
                index: 0,
                message: format!("non-finite training loss at step {}", self.step),
            });
        }
        let lr = self.cfg.lr_at(self.step);
        let mu = self.cfg.momentum;
        let t = (self.step + 1) as i32;
        let (c1, c2) = (1.0 - mu.powi(t), 1.0 - ADAM_BETA2.powi(t));
        for (i, id) in self.model.params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let vel = &mut self.velocity[i];
            let param = self.model.params.get_mut(id).data_mut();
            match self.cfg.optimizer {
                Optimizer::Momentum => {
                    for ((v, p), gr) in vel.iter_mut().zip(param.iter_mut()).zip(&acc[i]) {
                        *v = T::of(mu) * *v + T::of(*gr);
                        *p = *p - T::of(lr) * *v;
                    }
                }
                Optimizer::Adam => {
                    let sq = &mut self.second[i];
                    for (((v, s), p), &gr) in vel.iter_mut().zip(sq.iter_mut()).zip(param.iter_mut()).zip(&acc[i]) {
                        let m = mu * v.as_f64() + (1.0 - mu) * gr;
                        let q = ADAM_BETA2 * s.as_f64() + (1.0 - ADAM_BETA2) * gr * gr;
                        *v = T::of(m);
                        *s = T::of(q);
                        *p = *p - T::of(lr * (m / c1) / ((q / c2).sqrt() + ADAM_EPS));
                    }
                }
            }
        }
        let log = StepLog {
            step: self.step,
            lr,
            loss,
        };
        self.step += 1;
        Ok(log)
    }

    /// Weights, configuration, step counter and momentum buffers.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut tensors: Vec<(String, Tensor<T>)> = self
            .model
            .params
            .iter()
            .map(|(_, n, t)| {
                let mut t = t.clone();
                t.grad = None;
                (n.to_string(), t)
            })
            .collect();
        tensors.extend(self.model.meta_tensors());
        tensors.push(("meta.step".into(), Tensor::scalar(T::of(self.step as f64))));
        for ((_, n, t), v) in self.model.params.iter().zip(&self.velocity) {
            tensors.push((format!("opt.{n}"), Tensor::new(t.shape(), v.clone()).expect("same extents")));
        }
        for ((_, n, t), v) in self.model.params.iter().zip(&self.second) {
            tensors.push((format!("opt2.{n}"), Tensor::new(t.shape(), v.clone()).expect("same extents")));
        }
        Checkpoint { tensors }
    }

    /// Restores a run from [`Trainer::checkpoint`] output.
    pub fn resume(model_cfg: ModelConfig, cfg: TrainConfig, ckpt: &Checkpoint<T>) -> Result<Self> {
        let model = load_model(model_cfg, ckpt)?;
        let mut t = Trainer::new(model, cfg)?;
        let step = ckpt.get("meta.step").ok_or_else(|| contract_err!("checkpoint has no `meta.step`; not a training checkpoint"))?;
        t.step = step.data()[0].as_f64().round() as usize;
        for (i, (_, n, _)) in t.model.params.iter().enumerate() {
            let v = ckpt.get(&format!("opt.{n}")).ok_or_else(|| contract_err!("checkpoint lacks momentum `opt.{n}`"))?;
            if v.len() != t.velocity[i].len() {
                return Err(contract_err!("momentum `opt.{n}` has the wrong size"));
            }
            t.velocity[i].copy_from_slice(v.data());
        }
        for i in 0..t.second.len() {
            let n = t.model.params.name(crate::tensor::ParamId(i)).to_string();
            let v = ckpt.get(&format!("opt2.{n}")).ok_or_else(|| contract_err!("checkpoint lacks Adam moment `opt2.{n}`"))?;
            if v.len() != t.second[i].len() {
                return Err(contract_err!("Adam moment `opt2.{n}` has the wrong size"));
            }
            t.second[i].copy_from_slice(v.data());
        }
        Ok(t)
    }
}

/// Model configuration recorded in a checkpoint's `meta.*` entries, on top
/// of the defaults.
pub fn config_from_checkpoint<T: Element>(ckpt: &Checkpoint<T>) -> Result<ModelConfig> {
    let get = |k: &str| -> Result<f64> {
        ckpt.get(&format!("meta.{k}"))
            .map(|t| t.data()[0].as_f64())
            .ok_or_else(|| contract_err!("checkpoint lacks `meta.{k}`"))
    };
    let int = |k: &str| -> Result<usize> { Ok(get(k)?.round() as usize) };
    let cfg = ModelConfig {
        width_factor: get("width_factor")?,
        r: int("r")?,
        gru_hidden: int("gru_hidden")?,
        attention_heads: int("attention_heads")?,
        eca_kernel: int("eca_kernel")?,
        blocks_per_stage: int("blocks_per_stage")?,
        transformer_layers: int("transformer_layers")?,
        decoder_width: int("decoder_width")?,
        precision: if T::PRECISION == Precision::F64 { Precision::F64 } else { Precision::F32 },
        ..ModelConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Builds a model for `cfg` and copies its weights out of `ckpt`. A
/// configuration that disagrees with the checkpoint is a contract error
/// naming both values.
pub fn load_model<T: Element>(cfg: ModelConfig, ckpt: &Checkpoint<T>) -> Result<Model<T>> {
    check_meta(&cfg, &ckpt.tensors)?;
    let mut model = Model::new(cfg)?;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        let src = ckpt.get(&name).ok_or_else(|| contract_err!("checkpoint is missing parameter `{name}`"))?;
        let dst = model.params.get_mut(id);
        if src.shape() != dst.shape() {
            return Err(contract_err!(
                "parameter `{name}`: checkpoint shape {:?} vs model shape {:?}",
                src.shape(),
                dst.shape()
            ));
        }
        dst.data_mut().copy_from_slice(src.data());
    }
    Ok(model)
}

/// Tab-separated loss log: a header, `# skipped_samples N`, then one row
/// per step with the learning rate and every [`LossBreakdown`] column.
pub struct LossLog {
    pub text: String,
}

impl LossLog {
    pub fn new(skipped: usize) -> Self {
        let mut text = String::from("step\tlr");
        for c in LossBreakdown::COLUMNS {
            text.push('\t');
            text.push_str(c);
        }
        text.push('\n');
        let _ = writeln!(text, "# skipped_samples {skipped}");
        LossLog { text }
    }

    pub fn push(&mut self, s: &StepLog) {
        let _ = write!(self.text, "{}\t{}", s.step, s.lr);
        for v in s.loss.values() {
            let _ = write!(self.text, "\t{v}");
        }
        self.text.push('\n');
    }
}

/// Parsed loss log row: step, learning rate, breakdown values.
pub fn parse_loss_log(text: &str) -> Result<(usize, Vec<(usize, f64, [f64; 10])>)> {
    let perr = |m: String| crate::Error::parse("loss log", m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| perr("empty".into()))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() != 12 || cols[0] != "step" || cols[1] != "lr" || cols[2..] != LossBreakdown::COLUMNS {
        return Err(perr("unexpected header".into()));
    }
    let mut skipped = 0;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if let Some(rest) = line.strip_prefix("# skipped_samples ") {
            skipped = rest.trim().parse().map_err(|_| perr(format!("line {}: bad count", i + 2)))?;
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 12 {
            return Err(perr(format!("line {}: expected 12 columns, got {}", i + 2, f.len())));
        }
        let step = f[0].parse().map_err(|_| perr(format!("line {}: bad step", i + 2)))?;
        let num = |t: &str| t.parse::<f64>().map_err(|_| perr(format!("line {}: bad number `{t}`", i + 2)));
        let lr = num(f[1])?;
        let mut v = [0.0; 10];
        for (o, t) in v.iter_mut().zip(&f[2..]) {
            *o = num(t)?;
        }
        rows.push((step, lr, v));
    }
    Ok((skipped, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig {
            steps: 100,
            lr: 1e-3,
            min_lr: 1e-5,
            ..Default::default()
        };
        assert!((c.lr_at(0) - 1e-3).abs() < 1e-15);
        assert!((c.lr_at(100) - 1e-5).abs() < 1e-15);
        assert!((c.lr_at(50) - 0.5 * (1e-3 + 1e-5)).abs() < 1e-12);
    }

    #[test]
    fn batches_cover_each_epoch() {
        let n = 10;
        let mut seen: Vec<usize> = (0..5).flat_map(|s| batch_indices(3, s, 2, n)).collect();
        seen.sort();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        assert_eq!(batch_indices(3, 7, 4, n), batch_indices(3, 7, 4, n));
    }
}
