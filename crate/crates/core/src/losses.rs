//! The multi-task training objective, evaluated on plain values.
//!
//! The same terms are built on the autodiff tape by the model module; these
//! functions are the reference implementations used for logging, tests and
//! evaluation.

use crate::codec::{DensityMap, SupervisionMask, CHANNELS, FEATURES, TIMESTEPS};
use crate::error::{contract_err, Error, Result};

/// Clamp applied to probabilities before taking logarithms.
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_wp: f64,
    pub lambda_o: f64,
    pub lambda_m: f64,
    pub lambda_tf: f64,
    pub lambda_wc: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_wp: 1.0,
            lambda_o: 0.4,
            lambda_m: 0.4,
            lambda_tf: 0.2,
            lambda_wc: 0.2,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_wp", self.lambda_wp),
            ("lambda_o", self.lambda_o),
            ("lambda_m", self.lambda_m),
            ("lambda_tf", self.lambda_tf),
            ("lambda_wc", self.lambda_wc),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(contract_err!("loss weight {name} must be finite and >= 0, got {v}"));
            }
        }
        if self.lambda_wp <= 0.0 {
            return Err(contract_err!("lambda_wp must be > 0"));
        }
        Ok(())
    }
}

/// Unweighted loss terms of one sample or batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub wp: f64,
    pub heat: f64,
    pub reg: f64,
    pub m: f64,
    pub light: f64,
    pub sign: f64,
    pub wc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub wp: f64,
    /// α·heat + β·reg
    pub o: f64,
    pub o_heat: f64,
    pub o_reg: f64,
    pub m: f64,
    /// γ·light + δ·sign
    pub tf: f64,
    pub tf_light: f64,
    pub tf_sign: f64,
    pub wc: f64,
}

impl LossBreakdown {
    pub const COLUMNS: [&'static str; 10] = [
        "total", "wp", "o", "o_heat", "o_reg", "m", "tf", "tf_light", "tf_sign", "wc",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.total,
            self.wp,
            self.o,
            self.o_heat,
            self.o_reg,
            self.m,
            self.tf,
            self.tf_light,
            self.tf_sign,
            self.wc,
        ]
    }
}

pub fn total_loss(p: &LossParts, w: &LossWeights) -> LossBreakdown {
    let o = w.alpha * p.heat + w.beta * p.reg;
    let tf = w.gamma * p.light + w.delta * p.sign;
    LossBreakdown {
        total: w.lambda_wp * p.wp + w.lambda_o * o + w.lambda_m * p.m + w.lambda_tf * tf + w.lambda_wc * p.wc,
        wp: p.wp,
        o,
        o_heat: p.heat,
        o_reg: p.reg,
        m: p.m,
        tf,
        tf_light: p.light,
        tf_sign: p.sign,
        wc: p.wc,
    }
}

/// Mean absolute error over every coordinate of the trajectory.
pub fn waypoint_loss(pred: &[[f64; 2]], expert: &[[f64; 2]]) -> Result<f64> {
    if pred.len() != expert.len() || pred.is_empty() {
        return Err(contract_err!(
            "waypoint_loss: {} predicted vs {} expert waypoints",
            pred.len(),
            expert.len()
        ));
    }
    let sum: f64 = pred
        .iter()
        .zip(expert)
        .map(|(p, e)| (p[0] - e[0]).abs() + (p[1] - e[1]).abs())
        .sum();
    Ok(sum / (2 * pred.len()) as f64)
}

/// Binary cross-entropy of probability `p` against target `y ∈ [0, 1]`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let mut l = 0.0;
    if y > 0.0 {
        l -= y * p.ln();
    }
    if y < 1.0 {
        l -= (1.0 - y) * (1.0 - p).ln();
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityLoss {
    pub heat: f64,
    pub reg: f64,
    pub value: f64,
}

/// `pred` heat channels hold probabilities (post-sigmoid).
pub fn density_loss(
    pred: &DensityMap,
    target: &DensityMap,
    mask: &SupervisionMask,
    alpha: f64,
    beta: f64,
) -> Result<DensityLoss> {
    if pred.r != target.r || pred.data.len() != target.data.len() || mask.r != target.r {
        return Err(contract_err!(
            "density_loss: pred R={} vs target R={} vs mask R={}",
            pred.r,
            target.r,
            mask.r
        ));
    }
    let cells = target.r * target.r;
    let mut heat = 0.0;
    let mut reg = 0.0;
    let mut count = 0usize;
    for cell in 0..cells {
        for t in 0..TIMESTEPS {
            let base = cell * CHANNELS + t * FEATURES;
            heat += bce(pred.data[base], target.data[base]);
            if mask.cells[cell * TIMESTEPS + t] {
                for f in 1..FEATURES {
                    reg += smooth_l1(pred.data[base + f] - target.data[base + f]);
                }
                count += FEATURES - 1;
            }
        }
    }
    heat /= (cells * TIMESTEPS) as f64;
    let reg = if count == 0 { 0.0 } else { reg / count as f64 };
    Ok(DensityLoss {
        heat,
        reg,
        value: alpha * heat + beta * reg,
    })
}

/// Mean per-pixel cross-entropy. `logits` is pixel-major with three class
/// scores per pixel.
pub fn bev_loss(logits: &[f64], classes: &[u8]) -> Result<f64> {
    if logits.len() != classes.len() * 3 || classes.is_empty() {
        return Err(contract_err!(
            "bev_loss: {} logits for {} pixels",
            logits.len(),
            classes.len()
        ));
    }
    let mut total = 0.0;
    for (px, &c) in logits.chunks_exact(3).zip(classes) {
        if c > 2 {
            return Err(contract_err!("bev_loss: class id {c} outside 0..3"));
        }
        total += logsumexp(px) - px[c as usize];
    }
    Ok(total / classes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficLoss {
    pub light: f64,
    pub sign: f64,
    pub value: f64,
}

/// `pred` = (stop-required light, stop sign) probabilities.
pub fn traffic_loss(pred: [f64; 2], target: [bool; 2], gamma: f64, delta: f64) -> Result<TrafficLoss> {
    for (i, p) in pred.iter().enumerate() {
        if !(*p > 0.0 && *p < 1.0) {
            return Err(Error::Numeric {
                index: i,
                message: format!("traffic score {p} outside (0, 1)"),
            });
        }
    }
    let light = bce(pred[0], f64::from(u8::from(target[0])));
    let sign = bce(pred[1], f64::from(u8::from(target[1])));
    Ok(TrafficLoss {
        light,
        sign,
        value: gamma * light + delta * sign,
    })
}

/// Cross-entropy of 4-class weather probabilities against `target`.
pub fn weather_loss(probs: [f64; 4], target: usize) -> Result<f64> {
    if target >= 4 {
        return Err(contract_err!("weather class {target} outside 0..4"));
    }
    Ok(-probs[target].max(PROB_EPS).ln())
}

pub fn smooth_l1(r: f64) -> f64 {
    if r.abs() < 1.0 {
        0.5 * r * r
    } else {
        r.abs() - 0.5
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            lambda_wp: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bce_edges() {
        assert_eq!(bce(1.0, 1.0), -(1.0f64 - 1e-12).ln());
        assert!((bce(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
