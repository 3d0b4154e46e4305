//! Task correlation through the per-head channel attention weights.

use std::fmt::Write as _;

use crate::data::{for_each_frame, model_input, DataConfig};
use crate::error::{dim_err, Error, Result};
use crate::model::{Head, Model, ModelInput};
use crate::sim::SimConfig;
use crate::tensor::Element;

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err!("cosine similarity of lengths {} and {}", a.len(), b.len()));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Numeric {
            index: if na == 0.0 || !na.is_finite() { 0 } else { 1 },
            message: "similarity undefined for a zero or non-finite vector".into(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub probe_seed: u64,
    pub probe_size: usize,
    /// Mean channel weights per head, in [`Head::ALL`] order.
    pub weights: Vec<Vec<f64>>,
    /// Pairwise similarities in [`Head::ALL`] order.
    pub matrix: [[f64; 5]; 5],
}

impl CorrelationReport {
    pub fn from_weights(weights: Vec<Vec<f64>>, probe_seed: u64, probe_size: usize) -> Result<Self> {
        if weights.len() != Head::ALL.len() {
            return Err(dim_err!("need weights for {} heads, got {}", Head::ALL.len(), weights.len()));
        }
        let mut matrix = [[0.0; 5]; 5];
        for i in 0..5 {
            matrix[i][i] = 1.0;
            for j in 0..i {
                let c = cosine_similarity(&weights[i], &weights[j])?;
                matrix[i][j] = c;
                matrix[j][i] = c;
            }
        }
        Ok(CorrelationReport {
            probe_seed,
            probe_size,
            weights,
            matrix,
        })
    }

    pub fn get(&self, a: Head, b: Head) -> f64 {
        self.matrix[a.index()][b.index()]
    }

    /// Planning against each auxiliary head, then the full matrix.
    pub fn render(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "probe_seed\t{}", self.probe_seed);
        let _ = writeln!(o, "probe_size\t{}", self.probe_size);
        let _ = writeln!(o, "\tcosine similarity");
        for (label, h) in [
            ("plan x det&pred", Head::Density),
            ("plan x BEV", Head::Bev),
            ("plan x traffic", Head::Traffic),
            ("plan x weather", Head::Weather),
        ] {
            let _ = writeln!(o, "{label}\t{:.4}", self.get(Head::Planning, h));
        }
        o.push('\n');
        o.push_str("head");
        for h in Head::ALL {
            let _ = write!(o, "\t{}", h.name());
        }
        o.push('\n');
        for a in Head::ALL {
            o.push_str(a.name());
            for b in Head::ALL {
                let _ = write!(o, "\t{:.6}", self.get(a, b));
            }
            o.push('\n');
        }
        o
    }
}

/// Mean ECA weights of every head over the probe inputs.
pub fn mean_head_weights<T: Element>(model: &Model<T>, probe: &[ModelInput<T>]) -> Result<Vec<Vec<f64>>> {
    if probe.is_empty() {
        return Err(crate::error::contract_err!("probe batch is empty"));
    }
    let mut acc: Vec<Vec<f64>> = Vec::new();
    for input in probe {
        let out = model.predict(input)?;
        if acc.is_empty() {
            acc = out.eca.iter().map(|w| vec![0.0; w.len()]).collect();
        }
        for (a, w) in acc.iter_mut().zip(&out.eca) {
            for (x, y) in a.iter_mut().zip(w) {
                *x += y / probe.len() as f64;
            }
        }
    }
    Ok(acc)
}

/// `n` simulator frames drawn from `seed`, one per route over difficulties
/// 0 to 2.
pub fn probe_inputs<T: Element>(seed: u64, n: usize, sim: &SimConfig) -> Result<Vec<ModelInput<T>>> {
    let dc = DataConfig {
        difficulties: vec![0, 1, 2],
        frames_per_route: 1,
        stride: 1,
        lead_every: 0,
        balance_weather: false,
    };
    let mut out = Vec::with_capacity(n);
    for_each_frame(n, seed, &dc, sim, &mut |_, f| {
        out.push(model_input(&f.clouds, &f.poses, &f.camera, f.labels.goal, &sim.bev)?);
        Ok(())
    })?;
    Ok(out)
}

pub fn correlation_report<T: Element>(model: &Model<T>, probe: &[ModelInput<T>], probe_seed: u64) -> Result<CorrelationReport> {
    CorrelationReport::from_weights(mean_head_weights(model, probe)?, probe_seed, probe.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_values() {
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), -1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err().category(), "numeric");
        assert_eq!(cosine_similarity(&[1.0], &[1.0, 0.0]).unwrap_err().category(), "dimension");
    }

    #[test]
    fn paper_style_rows() {
        let w = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.1], vec![2.0, 0.0]];
        let r = CorrelationReport::from_weights(w, 7, 4).unwrap();
        let text = r.render();
        assert!(text.contains("plan x det&pred\t0.7071"));
        assert!(text.contains("plan x BEV\t0.0000"));
        assert!(text.contains("plan x weather\t1.0000"));
    }
}
