//! Waypoint tracking with a lateral and a longitudinal PID controller.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct PidState {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Number of recent errors summed into the integral term; 0 means unbounded.
    pub window: usize,
    /// Symmetric bound on the integral sum.
    pub clamp: f64,
    history: VecDeque<f64>,
    integral: f64,
    prev_error: Option<f64>,
}

impl PidState {
    pub fn new(kp: f64, ki: f64, kd: f64, window: usize) -> Self {
        PidState {
            kp,
            ki,
            kd,
            window,
            clamp: f64::INFINITY,
            history: VecDeque::new(),
            integral: 0.0,
            prev_error: None,
        }
    }

    pub fn with_clamp(mut self, clamp: f64) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// One controller update. The integral is the (windowed) discrete sum of
    /// `error · dt`; the derivative is zero on the first step.
    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        debug_assert!(dt > 0.0);
        let term = error * dt;
        self.history.push_back(term);
        if self.window > 0 && self.history.len() > self.window {
            self.history.pop_front();
        }
        self.integral = if self.window > 0 {
            self.history.iter().sum()
        } else {
            self.integral + term
        }
        .clamp(-self.clamp, self.clamp);
        let derivative = match self.prev_error {
            Some(p) => (error - p) / dt,
            None => 0.0,
        };
        self.prev_error = Some(error);
        self.kp * error + self.ki * self.integral + self.kd * derivative
    }
}

/// `pid_step` in functional form.
pub fn pid_step(state: &PidState, error: f64, dt: f64) -> (f64, PidState) {
    let mut next = state.clone();
    let out = next.step(error, dt);
    (out, next)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlCommand {
    pub steer: f64,
    pub throttle: f64,
    pub brake: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub lateral: [f64; 3],
    pub longitudinal: [f64; 3],
    pub window: usize,
    /// Desired speed = `speed_gain` × mean waypoint spacing.
    pub speed_gain: f64,
    pub brake_speed: f64,
    pub brake_ratio: f64,
    pub max_throttle: f64,
    /// Controller update interval in seconds.
    pub dt: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            lateral: [1.25, 0.75, 0.3],
            longitudinal: [5.0, 0.5, 1.0],
            window: 20,
            speed_gain: 2.0,
            brake_speed: 0.4,
            brake_ratio: 1.1,
            max_throttle: 0.75,
            dt: 0.5,
        }
    }
}

/// Owns both PID states for one vehicle.
#[derive(Debug, Clone)]
pub struct Controller {
    pub cfg: ControllerConfig,
    pub lateral: PidState,
    pub longitudinal: PidState,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Self {
        let [lp, li, ld] = cfg.lateral;
        let [gp, gi, gd] = cfg.longitudinal;
        Controller {
            cfg,
            lateral: PidState::new(lp, li, ld, cfg.window),
            longitudinal: PidState::new(gp, gi, gd, cfg.window),
        }
    }

    pub fn control(&mut self, wp: &[[f64; 2]], speed: f64) -> ControlCommand {
        waypoints_to_control(wp, speed, &mut self.lateral, &mut self.longitudinal, &self.cfg)
    }
}

/// κ × mean distance between consecutive waypoints.
pub fn desired_speed(wp: &[[f64; 2]], speed_gain: f64) -> f64 {
    if wp.len() < 2 {
        return 0.0;
    }
    let total: f64 = wp
        .windows(2)
        .map(|p| (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]))
        .sum();
    speed_gain * total / (wp.len() - 1) as f64
}

/// Below this speed the lateral error is taken as zero.
pub const STANDSTILL_SPEED: f64 = 0.01;

/// Positive steer turns toward +y (right).
pub fn waypoints_to_control(
    wp: &[[f64; 2]],
    speed: f64,
    lat: &mut PidState,
    lon: &mut PidState,
    cfg: &ControllerConfig,
) -> ControlCommand {
    let speed = if speed.is_finite() { speed.max(0.0) } else { 0.0 };
    let sane = |v: f64| if v.is_finite() { v } else { 0.0 };
    let aim = match wp.len() {
        0 => [0.0, 0.0],
        1 => wp[0],
        _ => [(wp[0][0] + wp[1][0]) / 2.0, (wp[0][1] + wp[1][1]) / 2.0],
    };
    // Standing still, the aim point carries no steering information and the
    // error would only wind up the integral.
    let heading = if speed < STANDSTILL_SPEED || (aim[0] == 0.0 && aim[1] == 0.0) {
        0.0
    } else {
        sane(aim[1].atan2(aim[0]))
    };
    let steer = sane(lat.step(heading, cfg.dt)).clamp(-1.0, 1.0);

    let desired = sane(desired_speed(wp, cfg.speed_gain));
    let brake = desired < cfg.brake_speed || speed > desired * cfg.brake_ratio;
    let delta = (desired - speed).clamp(0.0, 0.25);
    let throttle = sane(lon.step(delta, cfg.dt)).clamp(0.0, cfg.max_throttle);
    ControlCommand {
        steer,
        throttle: if brake { 0.0 } else { throttle },
        brake,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_uses_previous_error() {
        let mut p = PidState::new(0.0, 0.0, 1.0, 0);
        assert_eq!(p.step(1.0, 0.5), 0.0);
        assert_eq!(p.step(2.0, 0.5), 2.0);
    }

    #[test]
    fn window_drops_old_terms() {
        let mut p = PidState::new(0.0, 1.0, 0.0, 3);
        for _ in 0..5 {
            p.step(1.0, 1.0);
        }
        assert_eq!(p.integral(), 3.0);
    }
}
