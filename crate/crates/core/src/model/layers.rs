use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Activation, Element, Graph, Init, ParamId, ParamStore, Var};

/// Square convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        ps: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv {
            w: ps.add(&format!("{name}.w"), &[c_out, c_in, k, k], Init::FanIn(c_in * k * k), rng),
            b: ps.add(&format!("{name}.b"), &[c_out], Init::Zeros, rng),
            stride,
            pad,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = g.conv2d(x, p[self.w.0], self.stride, self.pad)?;
        g.add_bias(y, p[self.b.0], 0)
    }
}

/// 3×3 depthwise convolution with bias, "same" padding.
#[derive(Debug, Clone)]
pub struct DwConv {
    pub w: ParamId,
    pub b: ParamId,
}

impl DwConv {
    pub fn new<T: Element>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, c: usize) -> Self {
        DwConv {
            w: ps.add(&format!("{name}.w"), &[c, 3, 3], Init::FanIn(9), rng),
            b: ps.add(&format!("{name}.b"), &[c], Init::Zeros, rng),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = g.depthwise_conv2d(x, p[self.w.0], 1, 1)?;
        g.add_bias(y, p[self.b.0], 0)
    }
}

/// `N×d_in → N×d_out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Element>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            w: ps.add(&format!("{name}.w"), &[d_in, d_out], Init::FanIn(d_in), rng),
            b: ps.add(&format!("{name}.b"), &[d_out], Init::Zeros, rng),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w.0])?;
        g.add_bias(y, p[self.b.0], 1)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Element>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: ps.add(&format!("{name}.gamma"), &[d], Init::Ones, rng),
            beta: ps.add(&format!("{name}.beta"), &[d], Init::Zeros, rng),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gamma.0], p[self.beta.0], 1e-5)
    }
}

/// Pre-norm transformer block: multi-head self-attention then a GELU MLP,
/// each with a residual connection.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl TransformerBlock {
    pub fn new<T: Element>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, dim: usize, heads: usize) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(ps, rng, &format!("{name}.ln1"), dim),
            qkv: Linear::new(ps, rng, &format!("{name}.qkv"), dim, 3 * dim),
            proj: Linear::new(ps, rng, &format!("{name}.proj"), dim, dim),
            ln2: LayerNorm::new(ps, rng, &format!("{name}.ln2"), dim),
            fc1: Linear::new(ps, rng, &format!("{name}.fc1"), dim, 2 * dim),
            fc2: Linear::new(ps, rng, &format!("{name}.fc2"), 2 * dim, dim),
            heads,
            dim,
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let d = self.dim;
        let dh = d / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let h = self.ln1.forward(g, p, x)?;
        let qkv = self.qkv.forward(g, p, h)?;
        let mut outs = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let q = g.narrow(qkv, 1, i * dh, dh)?;
            let k = g.narrow(qkv, 1, d + i * dh, dh)?;
            let v = g.narrow(qkv, 1, 2 * d + i * dh, dh)?;
            let kt = g.transpose(k)?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, scale);
            let a = g.softmax(s, 1)?;
            outs.push(g.matmul(a, v)?);
        }
        let heads = g.concat(&outs, 1)?;
        let attn = self.proj.forward(g, p, heads)?;
        let x = g.add(x, attn)?;
        let h = self.ln2.forward(g, p, x)?;
        let h = self.fc1.forward(g, p, h)?;
        let h = g.activation(h, Activation::Gelu);
        let h = self.fc2.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Single GRU cell, PyTorch gate convention (r, z, n).
#[derive(Debug, Clone)]
pub struct GruCell {
    pub wx: Linear,
    pub wh: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Element>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, d_in: usize, hidden: usize) -> Self {
        let wx = Linear {
            w: ps.add(&format!("{name}.wx"), &[d_in, 3 * hidden], Init::FanIn(hidden), rng),
            b: ps.add(&format!("{name}.bx"), &[3 * hidden], Init::Zeros, rng),
        };
        let wh = Linear {
            w: ps.add(&format!("{name}.wh"), &[hidden, 3 * hidden], Init::FanIn(hidden), rng),
            b: ps.add(&format!("{name}.bh"), &[3 * hidden], Init::Zeros, rng),
        };
        GruCell { wx, wh, hidden }
    }

    /// `x: 1×d_in`, `h: 1×hidden` → `1×hidden`.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var, h: Var) -> Result<Var> {
        let n = self.hidden;
        let gx = self.wx.forward(g, p, x)?;
        let gh = self.wh.forward(g, p, h)?;
        let (xr, xz, xn) = (g.narrow(gx, 1, 0, n)?, g.narrow(gx, 1, n, n)?, g.narrow(gx, 1, 2 * n, n)?);
        let (hr, hz, hn) = (g.narrow(gh, 1, 0, n)?, g.narrow(gh, 1, n, n)?, g.narrow(gh, 1, 2 * n, n)?);
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn)?;
        let cand = g.add(xn, rh)?;
        let cand = g.activation(cand, Activation::Tanh);
        // h' = n + z ⊙ (h − n)
        let diff = g.sub(h, cand)?;
        let keep = g.mul(z, diff)?;
        g.add(cand, keep)
    }
}
