//! Object density maps: per-cell heatmap plus box regression, for the current
//! and the next two timesteps.
//!
//! Each timestep owns 7 consecutive channels: `[heat, dx, dy, log w, log l,
//! sin θ, cos θ]`. `(dx, dy)` is the continuous object centre minus the
//! minimum corner of its cell, in cell units along the forward (x) and
//! rightward (y) axes. Regression channels are supervised only at centre
//! cells, which the mask marks.

use std::f64::consts::PI;

use crate::sensor::{bev_cell, BEV_RANGE_FORWARD, BEV_RANGE_SIDE};

pub const TIMESTEPS: usize = 3;
pub const FEATURES: usize = 7;
pub const CHANNELS: usize = TIMESTEPS * FEATURES;
pub const MIN_RADIUS: usize = 2;
/// Boxes shorter than this decode as pedestrians.
pub const PEDESTRIAN_MAX_LENGTH: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Vehicle => "vehicle",
            AgentKind::Pedestrian => "pedestrian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vehicle" => Some(AgentKind::Vehicle),
            "pedestrian" => Some(AgentKind::Pedestrian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub theta: f64,
    /// 1..=3
    pub timestep: usize,
    pub kind: AgentKind,
}

/// `R×R×21`, channel-last, stored in f64 so decoding can be exact.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub r: usize,
    pub data: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(r: usize) -> Self {
        DensityMap {
            r,
            data: vec![0.0; r * r * CHANNELS],
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.r + col) * CHANNELS + ch
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.idx(row, col, ch)]
    }

    pub fn heat(&self, row: usize, col: usize, t: usize) -> f64 {
        self.get(row, col, (t - 1) * FEATURES)
    }

    /// Channel-first copy, `21×R×R`.
    pub fn to_chw(&self) -> Vec<f64> {
        let (r, n) = (self.r, self.r * self.r);
        let mut out = vec![0.0; CHANNELS * n];
        for cell in 0..n {
            for ch in 0..CHANNELS {
                out[ch * n + cell] = self.data[cell * CHANNELS + ch];
            }
        }
        debug_assert_eq!(out.len(), CHANNELS * r * r);
        out
    }

    pub fn from_chw(r: usize, chw: &[f64]) -> Self {
        let n = r * r;
        assert_eq!(chw.len(), CHANNELS * n);
        let mut data = vec![0.0; CHANNELS * n];
        for ch in 0..CHANNELS {
            for cell in 0..n {
                data[cell * CHANNELS + ch] = chw[ch * n + cell];
            }
        }
        DensityMap { r, data }
    }
}

/// Which cells carry regression supervision, `R×R×3` (one plane per timestep).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionMask {
    pub r: usize,
    pub cells: Vec<bool>,
}

impl SupervisionMask {
    pub fn get(&self, row: usize, col: usize, t: usize) -> bool {
        self.cells[(row * self.r + col) * TIMESTEPS + (t - 1)]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Expands to the 21-channel, channel-first layout used by the loss:
    /// true on the six regression channels of every supervised cell.
    pub fn regression_mask_chw(&self) -> Vec<bool> {
        let n = self.r * self.r;
        let mut out = vec![false; CHANNELS * n];
        for cell in 0..n {
            for t in 0..TIMESTEPS {
                if self.cells[cell * TIMESTEPS + t] {
                    for f in 1..FEATURES {
                        out[(t * FEATURES + f) * n + cell] = true;
                    }
                }
            }
        }
        out
    }
}

/// Size-adaptive Gaussian radius in cells for a `h×w` (cells) box,
/// following the CenterNet overlap construction at 0.7 minimum IoU.
pub fn gaussian_radius(h: f64, w: f64) -> usize {
    let min_overlap = 0.7;
    let b1 = h + w;
    let c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).sqrt()) / 2.0;
    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - min_overlap) * w * h;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).sqrt()) / 2.0;
    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (h + w);
    let c3 = (min_overlap - 1.0) * w * h;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;
    let r = r1.min(r2).min(r3);
    (r.max(0.0).floor() as usize).max(MIN_RADIUS)
}

pub fn encode(agents: &[AgentBox], r: usize) -> (DensityMap, SupervisionMask) {
    let mut map = DensityMap::zeros(r);
    let mut mask = SupervisionMask {
        r,
        cells: vec![false; r * r * TIMESTEPS],
    };
    let s = r as f64 / BEV_RANGE_FORWARD;
    for a in agents {
        if !(1..=TIMESTEPS).contains(&a.timestep) || !(a.w > 0.0 && a.l > 0.0) {
            continue;
        }
        let Some((row, col)) = bev_cell(a.x, a.y, r) else { continue };
        let base = (a.timestep - 1) * FEATURES;
        let radius = gaussian_radius(a.l * s, a.w * s);
        let sigma = (2 * radius + 1) as f64 / 6.0;
        let rad = radius as isize;
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                let (rr, cc) = (row as isize + dr, col as isize + dc);
                if rr < 0 || cc < 0 || rr >= r as isize || cc >= r as isize {
                    continue;
                }
                let v = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp();
                let i = map.idx(rr as usize, cc as usize, base);
                if v > map.data[i] {
                    map.data[i] = v;
                }
            }
        }
        let qx = a.x * s;
        let qy = (a.y + BEV_RANGE_SIDE) * s;
        let i = map.idx(row, col, base);
        map.data[i + 1] = qx - qx.floor();
        map.data[i + 2] = qy - qy.floor();
        map.data[i + 3] = a.w.ln();
        map.data[i + 4] = a.l.ln();
        map.data[i + 5] = a.theta.sin();
        map.data[i + 6] = a.theta.cos();
        mask.cells[(row * r + col) * TIMESTEPS + a.timestep - 1] = true;
    }
    (map, mask)
}

/// Extracts boxes at 3×3 strict local maxima of each heat channel above
/// `heat_threshold`. Equal neighbours are resolved in favour of the lower
/// row-major index.
pub fn decode(map: &DensityMap, heat_threshold: f64) -> Vec<AgentBox> {
    let r = map.r;
    let s = r as f64 / BEV_RANGE_FORWARD;
    let mut out = Vec::new();
    for t in 1..=TIMESTEPS {
        let base = (t - 1) * FEATURES;
        for row in 0..r {
            for col in 0..r {
                let v = map.get(row, col, base);
                if !(v > heat_threshold) || !is_peak(map, row, col, base) {
                    continue;
                }
                let i = map.idx(row, col, base);
                let cell_x = (r - 1 - row) as f64;
                let x = (cell_x + map.data[i + 1]) / s;
                let y = (col as f64 + map.data[i + 2]) / s - BEV_RANGE_SIDE;
                let w = map.data[i + 3].exp();
                let l = map.data[i + 4].exp();
                let mut theta = map.data[i + 5].atan2(map.data[i + 6]);
                if theta <= -PI {
                    theta += 2.0 * PI;
                }
                let kind = if l < PEDESTRIAN_MAX_LENGTH {
                    AgentKind::Pedestrian
                } else {
                    AgentKind::Vehicle
                };
                out.push(AgentBox {
                    x,
                    y,
                    w,
                    l,
                    theta,
                    timestep: t,
                    kind,
                });
            }
        }
    }
    out
}

fn is_peak(map: &DensityMap, row: usize, col: usize, ch: usize) -> bool {
    let r = map.r as isize;
    let v = map.get(row, col, ch);
    let here = row * map.r + col;
    for dr in -1isize..=1 {
        for dc in -1isize..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let (rr, cc) = (row as isize + dr, col as isize + dc);
            if rr < 0 || cc < 0 || rr >= r || cc >= r {
                continue;
            }
            let n = map.get(rr as usize, cc as usize, ch);
            let idx = rr as usize * map.r + cc as usize;
            if n > v || (n == v && idx < here) {
                return false;
            }
        }
    }
    true
}
