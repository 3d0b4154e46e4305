//! The fusion network.
//!
//! Two convolutional backbones (camera and LiDAR pseudo-image) run in
//! lock-step through four stages. After every stage a transformer fuses the
//! two feature maps: each map is average-pooled to an 8×8 token grid, the
//! 128 tokens attend jointly, and the result is upsampled and added back to
//! the map it came from. The final maps are concatenated and projected by a
//! 1×1 convolution into the scene feature. Five heads read that feature,
//! each through its own channel attention.

mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{DensityMap, SupervisionMask, CHANNELS, FEATURES, TIMESTEPS};
use crate::error::{contract_err, Result};
use crate::losses::LossParts;
use crate::tensor::{Element, Graph, Init, ParamId, ParamStore, Precision, Tensor, Var};

pub use layers::{Conv, DwConv, GruCell, LayerNorm, Linear, TransformerBlock};

pub const BASE_STAGE_CHANNELS: [usize; 4] = [64, 128, 256, 512];
pub const BASE_FEATURE_CHANNELS: usize = 1024;
pub const TOKEN_GRID: usize = 8;
pub const WAYPOINTS: usize = 4;
/// Spatial size of both network inputs.
pub const INPUT_SIZE: usize = 256;
const MLP_DIMS: [usize; 3] = [256, 256, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Planning,
    Density,
    Bev,
    Traffic,
    Weather,
}

impl Head {
    pub const ALL: [Head; 5] = [Head::Planning, Head::Density, Head::Bev, Head::Traffic, Head::Weather];

    pub fn name(self) -> &'static str {
        match self {
            Head::Planning => "planning",
            Head::Density => "density",
            Head::Bev => "bev",
            Head::Traffic => "traffic",
            Head::Weather => "weather",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Head::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| contract_err!("unknown head `{s}`"))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Lidar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub width_factor: f64,
    /// Output resolution of the density and BEV heads.
    pub r: usize,
    pub gru_hidden: usize,
    pub attention_heads: usize,
    pub eca_kernel: usize,
    pub precision: Precision,
    pub blocks_per_stage: usize,
    pub transformer_layers: usize,
    pub decoder_width: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width_factor: 1.0,
            r: 256,
            gru_hidden: 64,
            attention_heads: 4,
            eca_kernel: 5,
            precision: Precision::F32,
            blocks_per_stage: 1,
            transformer_layers: 1,
            decoder_width: 32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width ¼, R = 64.
    pub fn desk() -> Self {
        ModelConfig {
            width_factor: 0.25,
            r: 64,
            ..Default::default()
        }
    }

    pub fn stage_channels(&self) -> [usize; 4] {
        BASE_STAGE_CHANNELS.map(|c| scaled(c, self.width_factor))
    }

    pub fn feature_channels(&self) -> usize {
        scaled(BASE_FEATURE_CHANNELS, self.width_factor)
    }

    /// Number of 2× upsampling stages from the 8×8 feature to `R×R`.
    pub fn decoder_stages(&self) -> usize {
        (self.r / TOKEN_GRID).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_factor > 0.0 && self.width_factor <= 4.0) {
            return Err(contract_err!("width_factor {} outside (0, 4]", self.width_factor));
        }
        if self.r < TOKEN_GRID || !self.r.is_power_of_two() {
            return Err(contract_err!("R = {} must be a power of two >= {TOKEN_GRID}", self.r));
        }
        if self.eca_kernel % 2 == 0 {
            return Err(contract_err!("eca_kernel {} must be odd", self.eca_kernel));
        }
        if self.attention_heads == 0 || self.gru_hidden == 0 || self.decoder_width == 0 {
            return Err(contract_err!("attention_heads, gru_hidden and decoder_width must be >= 1"));
        }
        for c in self.stage_channels() {
            if c % self.attention_heads != 0 {
                return Err(contract_err!(
                    "stage width {c} is not divisible by {} attention heads",
                    self.attention_heads
                ));
            }
        }
        Ok(())
    }
}

fn scaled(c: usize, wf: f64) -> usize {
    ((c as f64 * wf).round() as usize).max(1)
}

#[derive(Debug, Clone)]
struct Block {
    dw: DwConv,
    pw: Conv,
}

#[derive(Debug, Clone)]
struct Stage {
    down: Conv,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct Fusion {
    pos: ParamId,
    blocks: Vec<TransformerBlock>,
    out_proj: Linear,
    pool: usize,
}

#[derive(Debug, Clone)]
struct Eca {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Decoder {
    reduce: Conv,
    ups: Vec<Conv>,
}

#[derive(Debug, Clone)]
struct Layout {
    image: Vec<Stage>,
    lidar: Vec<Stage>,
    fusion: Vec<Fusion>,
    fuse: Conv,
    eca: Vec<Eca>,
    mlp: Vec<Linear>,
    gru: GruCell,
    delta: Linear,
    density_dec: Decoder,
    heat: Conv,
    reg: Conv,
    bev_dec: Decoder,
    bev: Conv,
    traffic: Linear,
    weather: Linear,
}

/// Network inputs, channel-first.
#[derive(Debug, Clone)]
pub struct ModelInput<T: Element> {
    /// `4×256×256`
    pub lidar: Tensor<T>,
    /// `3×256×256`
    pub image: Tensor<T>,
    /// Route target point in the ego frame, metres.
    pub goal: [f64; 2],
}

/// Tape handles of everything a forward pass produces.
#[derive(Debug, Clone)]
pub struct HeadVars {
    pub image_stages: Vec<Var>,
    pub lidar_stages: Vec<Var>,
    /// `C×8×8`
    pub feature: Var,
    /// One `C` vector per [`Head`], in `Head::ALL` order.
    pub eca: Vec<Var>,
    /// `4×2`
    pub waypoints: Var,
    /// Per-step `1×2` offsets; waypoint t is the sum of the first t.
    pub deltas: Vec<Var>,
    /// `3×R×R` heat logits, one plane per timestep.
    pub heat_logits: Var,
    /// `18×R×R`, six regression planes per timestep.
    pub reg: Var,
    /// `3×R×R`
    pub bev_logits: Var,
    /// `1×2`
    pub traffic_logits: Var,
    /// `1×4`
    pub weather_logits: Var,
}

/// Plain-value head outputs, channel-last like [`DensityMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub waypoints: [[f64; 2]; WAYPOINTS],
    pub density: DensityMap,
    /// `R×R×3` class logits.
    pub bev: Vec<f64>,
    pub traffic: [f64; 2],
    pub weather: [f64; 4],
    pub eca: Vec<Vec<f64>>,
    pub feature_shape: Vec<usize>,
}

impl HeadOutputs {
    /// Per-pixel argmax of the BEV logits, row-major.
    pub fn bev_classes(&self) -> Vec<u8> {
        self.bev
            .chunks_exact(3)
            .map(|px| {
                let mut best = 0;
                for c in 1..3 {
                    if px[c] > px[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn weather_class(&self) -> usize {
        let mut best = 0;
        for c in 1..4 {
            if self.weather[c] > self.weather[best] {
                best = c;
            }
        }
        best
    }
}

/// Supervision for one sample.
#[derive(Debug, Clone)]
pub struct Targets {
    pub waypoints: [[f64; 2]; WAYPOINTS],
    pub density: DensityMap,
    pub mask: SupervisionMask,
    /// `R×R` row-major class ids.
    pub bev: Vec<u8>,
    pub traffic: [bool; 2],
    pub weather: usize,
}

#[derive(Debug, Clone)]
pub struct Model<T: Element> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

impl<T: Element> Model<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut ps = ParamStore::new();
        let ch = cfg.stage_channels();
        let image = build_backbone(&mut ps, &mut rng, "image", 3, &ch, cfg.blocks_per_stage);
        let lidar = build_backbone(&mut ps, &mut rng, "lidar", 4, &ch, cfg.blocks_per_stage);
        let mut fusion = Vec::new();
        for (i, &c) in ch.iter().enumerate() {
            let name = format!("fusion{i}");
            let side = INPUT_SIZE / (4 << i);
            fusion.push(Fusion {
                pos: ps.add(&format!("{name}.pos"), &[2 * TOKEN_GRID * TOKEN_GRID, c], Init::FanIn(c), &mut rng),
                blocks: (0..cfg.transformer_layers)
                    .map(|l| TransformerBlock::new(&mut ps, &mut rng, &format!("{name}.block{l}"), c, cfg.attention_heads))
                    .collect(),
                out_proj: Linear::new(&mut ps, &mut rng, &format!("{name}.out_proj"), c, c),
                pool: side / TOKEN_GRID,
            });
        }
        let c_feat = cfg.feature_channels();
        let fuse = Conv::new(&mut ps, &mut rng, "fuse", 2 * ch[3], c_feat, 1, 1, 0);
        let eca = Head::ALL
            .iter()
            .map(|h| Eca {
                w: ps.add(&format!("eca.{}.w", h.name()), &[cfg.eca_kernel], Init::FanIn(cfg.eca_kernel), &mut rng),
                b: ps.add(&format!("eca.{}.b", h.name()), &[1], Init::Zeros, &mut rng),
            })
            .collect();
        let mut mlp = Vec::new();
        let mut d_in = c_feat;
        for (i, &d) in MLP_DIMS.iter().enumerate() {
            mlp.push(Linear::new(&mut ps, &mut rng, &format!("plan.mlp{i}"), d_in, d));
            d_in = d;
        }
        let gru = GruCell::new(&mut ps, &mut rng, "plan.gru", MLP_DIMS[2] + 4, cfg.gru_hidden);
        let delta = Linear::new(&mut ps, &mut rng, "plan.delta", cfg.gru_hidden, 2);
        let density_dec = build_decoder(&mut ps, &mut rng, "density.dec", c_feat, &cfg);
        let dec_out = decoder_channels(&cfg).last().copied().unwrap_or(cfg.decoder_width);
        let heat = Conv::new(&mut ps, &mut rng, "density.heat", dec_out, TIMESTEPS, 1, 1, 0);
        let reg = Conv::new(&mut ps, &mut rng, "density.reg", dec_out, TIMESTEPS * (FEATURES - 1), 1, 1, 0);
        let bev_dec = build_decoder(&mut ps, &mut rng, "bev.dec", c_feat, &cfg);
        let bev = Conv::new(&mut ps, &mut rng, "bev.out", dec_out, 3, 1, 1, 0);
        let traffic = Linear::new(&mut ps, &mut rng, "traffic.fc", c_feat, 2);
        let weather = Linear::new(&mut ps, &mut rng, "weather.fc", c_feat, 4);
        Ok(Model {
            cfg,
            params: ps,
            layout: Layout {
                image,
                lidar,
                fusion,
                fuse,
                eca,
                mlp,
                gru,
                delta,
                density_dec,
                heat,
                reg,
                bev_dec,
                bev,
                traffic,
                weather,
            },
        })
    }

    /// Parameters bound onto `g`, indexable by [`ParamId`].
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.bind(g)
    }

    pub fn input_vars(&self, g: &mut Graph<T>, input: &ModelInput<T>) -> Result<(Var, Var)> {
        for (name, t, c) in [("lidar", &input.lidar, 4), ("image", &input.image, 3)] {
            let s = t.shape();
            if s.len() != 3 || s[0] != c {
                return Err(contract_err!("{name} input must be {c}×H×W, got {:?}", s));
            }
            if s[1] != INPUT_SIZE || s[2] != INPUT_SIZE {
                return Err(contract_err!(
                    "{name} input extents {}×{} must be {INPUT_SIZE}×{INPUT_SIZE}",
                    s[1],
                    s[2]
                ));
            }
        }
        Ok((g.constant(input.image.clone()), g.constant(input.lidar.clone())))
    }

    /// One backbone stage of one modality.
    pub fn backbone_stage(&self, g: &mut Graph<T>, p: &[Var], m: Modality, i: usize, x: Var) -> Result<Var> {
        let stage = match m {
            Modality::Image => &self.layout.image[i],
            Modality::Lidar => &self.layout.lidar[i],
        };
        let y = stage.down.forward(g, p, x)?;
        let mut x = g.relu(y);
        for b in &stage.blocks {
            let h = b.dw.forward(g, p, x)?;
            let h = g.relu(h);
            let h = b.pw.forward(g, p, h)?;
            x = g.add(x, h)?;
        }
        Ok(x)
    }

    /// All four stages of one backbone without fusion.
    pub fn backbone_forward(&self, g: &mut Graph<T>, p: &[Var], m: Modality, x: Var) -> Result<Vec<Var>> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[1] % 32 != 0 || s[2] % 32 != 0 {
            return Err(contract_err!("backbone input extents {:?} must be divisible by 32", s));
        }
        let mut out = Vec::with_capacity(4);
        let mut h = x;
        for i in 0..4 {
            h = self.backbone_stage(g, p, m, i, h)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Joint attention over both modalities' token grids at stage `i`.
    pub fn transfuser_stage(&self, g: &mut Graph<T>, p: &[Var], i: usize, img: Var, lid: Var) -> Result<(Var, Var)> {
        let f = &self.layout.fusion[i];
        let c = self.cfg.stage_channels()[i];
        let side = TOKEN_GRID * f.pool;
        for (name, v) in [("image", img), ("lidar", lid)] {
            if g.shape(v) != [c, side, side] {
                return Err(contract_err!(
                    "transfuser stage {i}: {name} feature {:?}, expected {:?}",
                    g.shape(v),
                    [c, side, side]
                ));
            }
        }
        let n = TOKEN_GRID * TOKEN_GRID;
        let mut toks = Vec::with_capacity(2);
        for v in [img, lid] {
            let pooled = if f.pool > 1 { g.avg_pool_2d(v, f.pool)? } else { v };
            let flat = g.reshape(pooled, &[c, n])?;
            toks.push(g.transpose(flat)?);
        }
        let tokens = g.concat(&toks, 0)?;
        let mut x = g.add(tokens, p[f.pos.0])?;
        for b in &f.blocks {
            x = b.forward(g, p, x)?;
        }
        let x = f.out_proj.forward(g, p, x)?;
        let mut outs = Vec::with_capacity(2);
        for (k, v) in [img, lid].into_iter().enumerate() {
            let part = g.narrow(x, 0, k * n, n)?;
            let part = g.transpose(part)?;
            let grid = g.reshape(part, &[c, TOKEN_GRID, TOKEN_GRID])?;
            let up = if f.pool > 1 { g.upsample_nearest(grid, f.pool)? } else { grid };
            outs.push(g.add(v, up)?);
        }
        Ok((outs[0], outs[1]))
    }

    pub fn fuse(&self, g: &mut Graph<T>, p: &[Var], img: Var, lid: Var) -> Result<Var> {
        if g.shape(img) != g.shape(lid) || g.shape(img)[1..] != [TOKEN_GRID, TOKEN_GRID] {
            return Err(contract_err!(
                "fuse needs two {TOKEN_GRID}×{TOKEN_GRID} maps, got {:?} and {:?}",
                g.shape(img),
                g.shape(lid)
            ));
        }
        let cat = g.concat(&[img, lid], 0)?;
        self.layout.fuse.forward(g, p, cat)
    }

    /// Returns `(f ⊙ w, w)` for `head`.
    pub fn eca_apply(&self, g: &mut Graph<T>, p: &[Var], f: Var, head: Head) -> Result<(Var, Var)> {
        let e = self.layout.eca.get(head.index()).ok_or_else(|| contract_err!("head not registered"))?;
        let c = g.shape(f)[0];
        let pooled = g.global_avg_pool(f)?;
        let desc = g.reshape(pooled, &[1, c])?;
        let conv = g.conv1d_same(desc, p[e.w.0])?;
        let logits = g.add_bias(conv, p[e.b.0], 0)?;
        let w = g.sigmoid(logits);
        let w = g.reshape(w, &[c])?;
        Ok((g.mul_broadcast(f, w, 0)?, w))
    }

    fn pooled_vector(&self, g: &mut Graph<T>, f: Var) -> Result<Var> {
        let c = g.shape(f)[0];
        let pooled = g.global_avg_pool(f)?;
        g.reshape(pooled, &[1, c])
    }

    /// Returns the stacked `4×2` waypoints and the per-step deltas.
    pub fn planning_head(&self, g: &mut Graph<T>, p: &[Var], f: Var, goal: [f64; 2]) -> Result<(Var, Vec<Var>)> {
        let l = &self.layout;
        let mut h = self.pooled_vector(g, f)?;
        for (i, lin) in l.mlp.iter().enumerate() {
            h = lin.forward(g, p, h)?;
            if i + 1 < l.mlp.len() {
                h = g.relu(h);
            }
        }
        let goal = g.constant(Tensor::from_f64(&[1, 2], &goal)?);
        let mut state = g.constant(Tensor::zeros(&[1, self.cfg.gru_hidden]));
        let mut prev = g.constant(Tensor::zeros(&[1, 2]));
        let mut points = Vec::with_capacity(WAYPOINTS);
        let mut deltas = Vec::with_capacity(WAYPOINTS);
        for _ in 0..WAYPOINTS {
            let x = g.concat(&[h, prev, goal], 1)?;
            state = l.gru.forward(g, p, x, state)?;
            let d = l.delta.forward(g, p, state)?;
            prev = g.add(prev, d)?;
            deltas.push(d);
            points.push(prev);
        }
        Ok((g.concat(&points, 0)?, deltas))
    }

    fn decode(&self, g: &mut Graph<T>, p: &[Var], dec: &Decoder, f: Var) -> Result<Var> {
        let x = dec.reduce.forward(g, p, f)?;
        let mut x = g.relu(x);
        for conv in &dec.ups {
            let up = g.upsample_nearest(x, 2)?;
            let y = conv.forward(g, p, up)?;
            x = g.relu(y);
        }
        Ok(x)
    }

    /// `(heat logits 3×R×R, regression 18×R×R)`.
    pub fn density_head(&self, g: &mut Graph<T>, p: &[Var], f: Var) -> Result<(Var, Var)> {
        let x = self.decode(g, p, &self.layout.density_dec, f)?;
        Ok((self.layout.heat.forward(g, p, x)?, self.layout.reg.forward(g, p, x)?))
    }

    pub fn bev_head(&self, g: &mut Graph<T>, p: &[Var], f: Var) -> Result<Var> {
        let x = self.decode(g, p, &self.layout.bev_dec, f)?;
        self.layout.bev.forward(g, p, x)
    }

    /// `(traffic logits 1×2, weather logits 1×4)` from the two weighted features.
    pub fn rule_heads(&self, g: &mut Graph<T>, p: &[Var], f_traffic: Var, f_weather: Var) -> Result<(Var, Var)> {
        let t = self.pooled_vector(g, f_traffic)?;
        let w = self.pooled_vector(g, f_weather)?;
        Ok((self.layout.traffic.forward(g, p, t)?, self.layout.weather.forward(g, p, w)?))
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], input: &ModelInput<T>) -> Result<HeadVars> {
        let (mut img, mut lid) = self.input_vars(g, input)?;
        let mut image_stages = Vec::with_capacity(4);
        let mut lidar_stages = Vec::with_capacity(4);
        for i in 0..4 {
            img = self.backbone_stage(g, p, Modality::Image, i, img)?;
            lid = self.backbone_stage(g, p, Modality::Lidar, i, lid)?;
            let (a, b) = self.transfuser_stage(g, p, i, img, lid)?;
            img = a;
            lid = b;
            image_stages.push(img);
            lidar_stages.push(lid);
        }
        let feature = self.fuse(g, p, img, lid)?;
        let mut weighted = Vec::with_capacity(5);
        let mut eca = Vec::with_capacity(5);
        for h in Head::ALL {
            let (fw, w) = self.eca_apply(g, p, feature, h)?;
            weighted.push(fw);
            eca.push(w);
        }
        let (waypoints, deltas) = self.planning_head(g, p, weighted[0], input.goal)?;
        let (heat_logits, reg) = self.density_head(g, p, weighted[1])?;
        let bev_logits = self.bev_head(g, p, weighted[2])?;
        let (traffic_logits, weather_logits) = self.rule_heads(g, p, weighted[3], weighted[4])?;
        Ok(HeadVars {
            image_stages,
            lidar_stages,
            feature,
            eca,
            waypoints,
            deltas,
            heat_logits,
            reg,
            bev_logits,
            traffic_logits,
            weather_logits,
        })
    }

    /// Forward pass without gradients, converted to plain values.
    pub fn predict(&self, input: &ModelInput<T>) -> Result<HeadOutputs> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let hv = self.forward(&mut g, &p, input)?;
        Ok(self.outputs(&g, &hv))
    }

    pub fn outputs(&self, g: &Graph<T>, hv: &HeadVars) -> HeadOutputs {
        let r = self.cfg.r;
        let n = r * r;
        let f64s = |v: Var| -> Vec<f64> { g.data(v).iter().map(|x| x.as_f64()).collect() };
        let wp = f64s(hv.waypoints);
        let mut waypoints = [[0.0; 2]; WAYPOINTS];
        for (t, w) in waypoints.iter_mut().enumerate() {
            *w = [wp[2 * t], wp[2 * t + 1]];
        }
        let heat = f64s(hv.heat_logits);
        let reg = f64s(hv.reg);
        let mut density = DensityMap::zeros(r);
        for cell in 0..n {
            for t in 0..TIMESTEPS {
                let base = cell * CHANNELS + t * FEATURES;
                density.data[base] = sigmoid(heat[t * n + cell]);
                for f in 1..FEATURES {
                    density.data[base + f] = reg[(t * (FEATURES - 1) + f - 1) * n + cell];
                }
            }
        }
        let bev_chw = f64s(hv.bev_logits);
        let mut bev = vec![0.0; n * 3];
        for cell in 0..n {
            for c in 0..3 {
                bev[cell * 3 + c] = bev_chw[c * n + cell];
            }
        }
        let tl = f64s(hv.traffic_logits);
        let wl = f64s(hv.weather_logits);
        let m = wl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = wl.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = ex.iter().sum();
        HeadOutputs {
            waypoints,
            density,
            bev,
            traffic: [sigmoid(tl[0]), sigmoid(tl[1])],
            weather: [ex[0] / z, ex[1] / z, ex[2] / z, ex[3] / z],
            eca: hv.eca.iter().map(|&v| f64s(v)).collect(),
            feature_shape: g.shape(hv.feature).to_vec(),
        }
    }

    /// Builds the unweighted loss terms on the tape. Returns one scalar
    /// handle per term in [`LossParts`] order (wp, heat, reg, m, light,
    /// sign, wc) and their values.
    pub fn loss_terms(&self, g: &mut Graph<T>, hv: &HeadVars, t: &Targets) -> Result<([Var; 7], LossParts)> {
        let r = self.cfg.r;
        let n = r * r;
        if t.density.r != r || t.mask.r != r || t.bev.len() != n {
            return Err(contract_err!(
                "targets at R={} do not match model R={r}",
                t.density.r
            ));
        }
        let flat: Vec<f64> = t.waypoints.iter().flat_map(|w| w.iter().copied()).collect();
        let expert = g.constant(Tensor::from_f64(&[WAYPOINTS, 2], &flat)?);
        let diff = g.sub(hv.waypoints, expert)?;
        let abs = g.abs(diff);
        let wp = g.mean(abs);

        let mut heat_t = vec![T::zero(); TIMESTEPS * n];
        let mut reg_t = vec![T::zero(); TIMESTEPS * (FEATURES - 1) * n];
        let mut reg_m = vec![false; TIMESTEPS * (FEATURES - 1) * n];
        for cell in 0..n {
            for ts in 0..TIMESTEPS {
                let base = cell * CHANNELS + ts * FEATURES;
                heat_t[ts * n + cell] = T::of(t.density.data[base]);
                let on = t.mask.cells[cell * TIMESTEPS + ts];
                for f in 1..FEATURES {
                    let i = (ts * (FEATURES - 1) + f - 1) * n + cell;
                    reg_t[i] = T::of(t.density.data[base + f]);
                    reg_m[i] = on;
                }
            }
        }
        let heat = g.bce_with_logits(hv.heat_logits, &heat_t)?;
        let reg = g.smooth_l1_masked(hv.reg, &reg_t, &reg_m)?;
        let classes: Vec<usize> = t.bev.iter().map(|&c| c as usize).collect();
        let m = g.cross_entropy(hv.bev_logits, &classes)?;
        let light_logit = g.narrow(hv.traffic_logits, 1, 0, 1)?;
        let sign_logit = g.narrow(hv.traffic_logits, 1, 1, 1)?;
        let light = g.bce_with_logits(light_logit, &[T::of(f64::from(u8::from(t.traffic[0])))])?;
        let sign = g.bce_with_logits(sign_logit, &[T::of(f64::from(u8::from(t.traffic[1])))])?;
        let wl = g.reshape(hv.weather_logits, &[4, 1])?;
        let wc = g.cross_entropy(wl, &[t.weather])?;
        let vars = [wp, heat, reg, m, light, sign, wc];
        let val = |v: Var| g.data(v)[0].as_f64();
        let parts = LossParts {
            wp: val(wp),
            heat: val(heat),
            reg: val(reg),
            m: val(m),
            light: val(light),
            sign: val(sign),
            wc: val(wc),
        };
        Ok((vars, parts))
    }

    /// λ-weighted total on the tape.
    pub fn weighted_loss(&self, g: &mut Graph<T>, terms: &[Var; 7], w: &crate::losses::LossWeights) -> Result<Var> {
        let coef = [
            w.lambda_wp,
            w.lambda_o * w.alpha,
            w.lambda_o * w.beta,
            w.lambda_m,
            w.lambda_tf * w.gamma,
            w.lambda_tf * w.delta,
            w.lambda_wc,
        ];
        let mut total = g.scale(terms[0], T::of(coef[0]));
        for (v, c) in terms.iter().zip(coef).skip(1) {
            let s = g.scale(*v, T::of(c));
            total = g.add(total, s)?;
        }
        Ok(total)
    }

    /// Stores the configuration as `meta.*` scalars alongside the weights.
    pub fn meta_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let c = &self.cfg;
        [
            ("meta.width_factor", c.width_factor),
            ("meta.r", c.r as f64),
            ("meta.gru_hidden", c.gru_hidden as f64),
            ("meta.attention_heads", c.attention_heads as f64),
            ("meta.eca_kernel", c.eca_kernel as f64),
            ("meta.blocks_per_stage", c.blocks_per_stage as f64),
            ("meta.transformer_layers", c.transformer_layers as f64),
            ("meta.decoder_width", c.decoder_width as f64),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), Tensor::scalar(T::of(v))))
        .collect()
    }
}

/// Checks that `meta.*` entries of a checkpoint agree with `cfg`; the error
/// names both values.
pub fn check_meta<T: Element>(cfg: &ModelConfig, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let want = [
        ("meta.width_factor", cfg.width_factor),
        ("meta.r", cfg.r as f64),
        ("meta.gru_hidden", cfg.gru_hidden as f64),
        ("meta.attention_heads", cfg.attention_heads as f64),
        ("meta.eca_kernel", cfg.eca_kernel as f64),
        ("meta.blocks_per_stage", cfg.blocks_per_stage as f64),
        ("meta.transformer_layers", cfg.transformer_layers as f64),
        ("meta.decoder_width", cfg.decoder_width as f64),
    ];
    for (key, v) in want {
        if let Some((_, t)) = tensors.iter().find(|(n, _)| n == key) {
            let got = t.data()[0].as_f64();
            if (got - v).abs() > 1e-6 * v.abs().max(1.0) {
                return Err(contract_err!(
                    "{}: config has {v}, checkpoint has {got}",
                    &key[5..]
                ));
            }
        }
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn build_backbone<T: Element>(
    ps: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    c_in: usize,
    ch: &[usize; 4],
    blocks: usize,
) -> Vec<Stage> {
    let mut prev = c_in;
    let mut stages = Vec::with_capacity(4);
    for (i, &c) in ch.iter().enumerate() {
        let k = if i == 0 { 4 } else { 2 };
        let down = Conv::new(ps, rng, &format!("{name}.s{i}.down"), prev, c, k, k, 0);
        let blocks = (0..blocks)
            .map(|b| Block {
                dw: DwConv::new(ps, rng, &format!("{name}.s{i}.b{b}.dw"), c),
                pw: Conv::new(ps, rng, &format!("{name}.s{i}.b{b}.pw"), c, c, 1, 1, 0),
            })
            .collect();
        stages.push(Stage { down, blocks });
        prev = c;
    }
    stages
}

fn decoder_channels(cfg: &ModelConfig) -> Vec<usize> {
    (0..cfg.decoder_stages())
        .map(|j| (cfg.decoder_width >> j).max(16.min(cfg.decoder_width)))
        .collect()
}

fn build_decoder<T: Element>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, c_in: usize, cfg: &ModelConfig) -> Decoder {
    let reduce = Conv::new(ps, rng, &format!("{name}.reduce"), c_in, cfg.decoder_width, 1, 1, 0);
    let mut prev = cfg.decoder_width;
    let ups = decoder_channels(cfg)
        .into_iter()
        .enumerate()
        .map(|(j, c)| {
            let conv = Conv::new(ps, rng, &format!("{name}.up{j}"), prev, c, 3, 1, 1);
            prev = c;
            conv
        })
        .collect();
    Decoder { reduce, ups }
}
