use crate::error::{contract_err, Result};
use crate::sensor::{normalize_angle, EgoPose};

/// Piecewise-linear path parameterized by arc length. Queries beyond either
/// end extrapolate along the first or last segment, so the road it describes
/// never ends abruptly in front of a sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    points: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

impl Route {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(contract_err!("route needs at least 2 points, got {}", points.len()));
        }
        let mut cum = Vec::with_capacity(points.len());
        cum.push(0.0);
        for w in points.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if !(d > 1e-9) || !d.is_finite() {
                return Err(contract_err!("route has a degenerate or non-finite segment"));
            }
            cum.push(cum.last().unwrap() + d);
        }
        Ok(Route { points, cum })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn segment_of(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Position and heading at arc length `s`.
    pub fn pose_at(&self, s: f64) -> EgoPose {
        let i = self.segment_of(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let len = self.cum[i + 1] - self.cum[i];
        let t = (s - self.cum[i]) / len;
        EgoPose::new(
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            (b[1] - a[1]).atan2(b[0] - a[0]),
        )
    }

    /// Arc length of the closest point and signed lateral offset (positive to
    /// the right of the direction of travel).
    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        let n = self.points.len() - 1;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..n {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len = self.cum[i + 1] - self.cum[i];
            let (px, py) = (x - a[0], y - a[1]);
            let mut t = (px * ex + py * ey) / (len * len);
            let lo = if i == 0 { f64::NEG_INFINITY } else { 0.0 };
            let hi = if i == n - 1 { f64::INFINITY } else { 1.0 };
            t = t.clamp(lo, hi);
            let (qx, qy) = (px - t * ex, py - t * ey);
            let dist2 = qx * qx + qy * qy;
            if dist2 < best.0 {
                let lateral = (ex * py - ey * px) / len;
                best = (dist2, self.cum[i] + t * len, lateral);
            }
        }
        (best.1, best.2)
    }

    /// Heading of the route at `s` relative to `yaw`.
    pub fn heading_error(&self, s: f64, yaw: f64) -> f64 {
        normalize_angle(yaw - self.pose_at(s).yaw)
    }

    /// Samples the route every `step` metres over `[s0, s1]`, expressed in
    /// the frame of `pose`.
    pub fn local_polyline(&self, pose: &EgoPose, s0: f64, s1: f64, step: f64) -> Vec<[f64; 2]> {
        let n = ((s1 - s0) / step).ceil().max(1.0) as usize;
        (0..=n)
            .map(|k| {
                let p = self.pose_at(s0 + k as f64 * step);
                let (lx, ly) = pose.to_local(p.x, p.y);
                [lx, ly]
            })
            .collect()
    }
}

/// Route made of straight and constant-curvature pieces, sampled at 1 m.
/// Each piece is `(length, curvature)`; positive curvature turns right.
pub fn build_route(pieces: &[(f64, f64)]) -> Result<Route> {
    let mut pts = vec![[0.0, 0.0]];
    let (mut x, mut y, mut yaw) = (0.0f64, 0.0f64, 0.0f64);
    for &(len, k) in pieces {
        let n = len.ceil().max(1.0) as usize;
        let ds = len / n as f64;
        for _ in 0..n {
            let mid = yaw + 0.5 * k * ds;
            x += ds * mid.cos();
            y += ds * mid.sin();
            yaw += k * ds;
            pts.push([x, y]);
        }
    }
    Route::new(pts)
}
