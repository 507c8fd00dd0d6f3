//! Reactive pushing strategy: body-frame velocity commands from the current
//! contact estimate and the target, with Normal, Realignment and ContactLoss
//! behaviours.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_finite, Pose2};
use crate::world::ContactState;

/// Margin keeping the heading tangent away from its pole at `±π/2`.
pub const TAN_CLAMP_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

impl ControlCommand {
    pub const fn new(v_x: f64, v_y: f64, omega: f64) -> Self {
        Self { v_x, v_y, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.v_x.is_finite() && self.v_y.is_finite() && self.omega.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.v_x == 0.0 && self.v_y == 0.0 && self.omega == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpsParams {
    /// Velocity gain, 1/s.
    pub k_v: f64,
    /// Heading gain.
    pub k_h: f64,
    /// Curvature sharpness, m.
    pub l_curv: f64,
    /// Upper asymptote of the adaptive rate.
    pub eta: f64,
    /// Lower asymptote of the adaptive rate.
    pub zeta: f64,
    /// Logistic inflection in |l|, m.
    pub beta: f64,
    /// Logistic steepness, 1/m.
    pub k: f64,
    /// Stop threshold on ‖d‖, m.
    pub d_th: f64,
    pub realign_enter: f64,
    pub realign_exit: f64,
    /// Forward creep while contact is lost, m/s.
    pub loss_creep_vx: f64,
    /// Factor applied to ω while realigning.
    pub realign_omega_scale: f64,
}

impl Default for RpsParams {
    fn default() -> Self {
        Self {
            k_v: 0.3,
            k_h: 1.75,
            l_curv: 0.15,
            eta: 3.0,
            zeta: 0.1,
            beta: 0.2,
            k: 30.0,
            d_th: 0.05,
            realign_enter: 0.25,
            realign_exit: 0.15,
            loss_creep_vx: 0.01,
            realign_omega_scale: 0.2,
        }
    }
}

impl RpsParams {
    pub fn validate(&self, half_width: f64) -> Result<()> {
        let positive = [
            self.k_v,
            self.k_h,
            self.l_curv,
            self.eta,
            self.zeta,
            self.beta,
            self.k,
            self.d_th,
            self.realign_enter,
            self.realign_exit,
            self.loss_creep_vx,
            self.realign_omega_scale,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!("rps parameters must be positive: {self:?}")));
        }
        if self.zeta >= self.eta {
            return Err(Error::Config("rps: zeta must be < eta".into()));
        }
        if !(self.realign_exit < self.realign_enter && self.realign_enter <= half_width) {
            return Err(Error::Config(
                "rps: need realign_exit < realign_enter <= half_width".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RpsPhase {
    Normal,
    Realignment,
    ContactLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpsMode {
    pub phase: RpsPhase,
    pub time_in_mode: f64,
}

impl Default for RpsMode {
    fn default() -> Self {
        Self {
            phase: RpsPhase::Normal,
            time_in_mode: 0.0,
        }
    }
}

impl RpsMode {
    fn advance(self, phase: RpsPhase, dt: f64) -> Self {
        if phase == self.phase {
            Self {
                phase,
                time_in_mode: self.time_in_mode + dt,
            }
        } else {
            Self {
                phase,
                time_in_mode: 0.0,
            }
        }
    }
}

/// `d = p_T - (p_R + R p_C)` and `v* = K_v ‖d‖`.
pub fn compute_v_star(
    robot: &Pose2,
    p_c_r: Vector2<f64>,
    target: Vector2<f64>,
    k_v: f64,
) -> (f64, Vector2<f64>) {
    let d = target - robot.to_parent(p_c_r);
    (k_v * d.norm(), d)
}

/// Logistic adaptive rate; zero inside the stop radius.
pub fn compute_adaptive_rate(l: f64, d_norm: f64, p: &RpsParams) -> f64 {
    if d_norm <= p.d_th {
        return 0.0;
    }
    let sgn = if l > 0.0 {
        1.0
    } else if l < 0.0 {
        -1.0
    } else {
        0.0
    };
    (p.zeta + (p.eta - p.zeta) / (1.0 + ((p.beta - l.abs()) * p.k).exp())) * sgn
}

/// Splits `v*` into body-frame `(v_x, v_y)` with `v_y / v_x = a_r`.
pub fn compute_linear_velocity(v_star: f64, a_r: f64) -> (f64, f64) {
    let s = (1.0 + a_r * a_r).sqrt();
    (v_star / s, a_r * v_star / s)
}

/// `ω = v_x tan(K_h (θ* ⊖ θ)) / L` with the tangent argument clamped short of its pole.
pub fn compute_angular_velocity(v_x: f64, d: Vector2<f64>, theta: f64, p: &RpsParams) -> f64 {
    let heading = d.y.atan2(d.x);
    let err = wrap_finite(heading - theta);
    let lim = FRAC_PI_2 - TAN_CLAMP_MARGIN;
    v_x * (p.k_h * err).clamp(-lim, lim).tan() / p.l_curv
}

/// One controller tick. Returns the command and the next mode.
pub fn rps_step(
    contact: &ContactState,
    robot: &Pose2,
    target: Vector2<f64>,
    mode: RpsMode,
    params: &RpsParams,
    front_x: f64,
    dt: f64,
) -> (ControlCommand, RpsMode) {
    let (Some(l), true) = (contact.l, contact.in_contact()) else {
        let next = mode.advance(RpsPhase::ContactLoss, dt);
        return (ControlCommand::new(params.loss_creep_vx, 0.0, 0.0), next);
    };
    let (v_star, d) = compute_v_star(robot, Vector2::new(front_x, l), target, params.k_v);
    let d_norm = d.norm();

    let phase = match mode.phase {
        RpsPhase::Realignment if l.abs() >= params.realign_exit => RpsPhase::Realignment,
        _ if l.abs() > params.realign_enter => RpsPhase::Realignment,
        _ => RpsPhase::Normal,
    };
    let next = mode.advance(phase, dt);
    if d_norm <= params.d_th {
        return (ControlCommand::default(), next);
    }

    let a_r = match phase {
        RpsPhase::Realignment => params.eta * if l > 0.0 { 1.0 } else if l < 0.0 { -1.0 } else { 0.0 },
        _ => compute_adaptive_rate(l, d_norm, params),
    };
    let (v_x, v_y) = compute_linear_velocity(v_star, a_r);
    let mut omega = compute_angular_velocity(v_x, d, robot.theta, params);
    if phase == RpsPhase::Realignment {
        omega *= params.realign_omega_scale;
    }
    (ControlCommand::new(v_x, v_y, omega), next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn v_star_examples() {
        let (v, d) = compute_v_star(&Pose2::default(), Vector2::new(0.4, 0.0), Vector2::new(1.0, 0.0), 0.5);
        assert!(close(v, 0.3, 1e-15));
        assert!(close(d.x, 0.6, 1e-15) && d.y == 0.0);

        let (v, _) = compute_v_star(&Pose2::default(), Vector2::new(0.4, 0.1), Vector2::new(0.4, 0.1), 0.5);
        assert_eq!(v, 0.0);

        let (v, d) = compute_v_star(
            &Pose2::new(0.0, 0.0, PI / 2.0),
            Vector2::new(0.4, 0.0),
            Vector2::new(0.0, 1.0),
            0.5,
        );
        assert!(close(d.x, 0.0, 1e-15) && close(d.y, 0.6, 1e-15));
        assert!(close(v, 0.3, 1e-15));
    }

    #[test]
    fn adaptive_rate_examples() {
        let p = RpsParams::default();
        assert_eq!(compute_adaptive_rate(0.0, 1.0, &p), 0.0);
        assert_eq!(compute_adaptive_rate(0.2, 0.01, &p), 0.0);
        assert!(close(compute_adaptive_rate(p.beta, 1.0, &p), 1.55, 1e-12));
        assert!(close(compute_adaptive_rate(-p.beta, 1.0, &p), -1.55, 1e-12));
    }

    #[test]
    fn linear_velocity_examples() {
        assert_eq!(compute_linear_velocity(0.7, 0.0), (0.7, 0.0));
        let (vx, vy) = compute_linear_velocity(1.0, 1.0);
        assert!(close(vx, 1.0 / 2f64.sqrt(), 1e-15) && close(vy, 1.0 / 2f64.sqrt(), 1e-15));
    }

    #[test]
    fn angular_velocity_examples() {
        let p = RpsParams::default();
        let d = Vector2::new(1.0, 1.0);
        assert_eq!(compute_angular_velocity(0.3, d, PI / 4.0, &p), 0.0);
        assert_eq!(compute_angular_velocity(0.3, Vector2::new(1.0, 0.0), 0.0, &p), 0.0);

        let p = RpsParams { k_h: 1.0, l_curv: 0.5, ..p };
        let d = Vector2::new(0.3f64.cos(), 0.3f64.sin());
        let w = compute_angular_velocity(0.2, d, 0.0, &p);
        assert!(close(w, 0.2 * 0.3f64.tan() / 0.5, 1e-12));
        assert!(close(w, 0.1237, 1e-4));
    }

    #[test]
    fn heading_tangent_is_clamped() {
        let p = RpsParams::default();
        let w = compute_angular_velocity(0.1, Vector2::new(-1.0, 1e-9), 0.0, &p);
        let bound = 0.1 * (FRAC_PI_2 - TAN_CLAMP_MARGIN).tan() / p.l_curv;
        assert!(close(w.abs(), bound, 1e-12));
    }

    #[test]
    fn no_contact_creeps_forward() {
        let p = RpsParams::default();
        let (cmd, mode) = rps_step(
            &ContactState::NONE,
            &Pose2::default(),
            Vector2::new(2.0, 0.0),
            RpsMode::default(),
            &p,
            0.33,
            0.1,
        );
        assert_eq!(cmd, ControlCommand::new(0.01, 0.0, 0.0));
        assert_eq!(mode.phase, RpsPhase::ContactLoss);

        // any contact leaves the loss state
        let (_, mode) = rps_step(
            &ContactState::point(0.0),
            &Pose2::default(),
            Vector2::new(2.0, 0.0),
            mode,
            &p,
            0.33,
            0.1,
        );
        assert_eq!(mode.phase, RpsPhase::Normal);
    }

    #[test]
    fn centred_contact_drives_straight() {
        let p = RpsParams::default();
        let (cmd, _) = rps_step(
            &ContactState::line(0.0),
            &Pose2::default(),
            Vector2::new(2.0, 0.0),
            RpsMode::default(),
            &p,
            0.33,
            0.1,
        );
        assert_eq!(cmd.v_y, 0.0);
        assert_eq!(cmd.omega, 0.0);
        assert!(close(cmd.v_x, p.k_v * (2.0 - 0.33), 1e-15));
    }

    #[test]
    fn realignment_uses_max_rate_with_hysteresis() {
        let p = RpsParams::default();
        let target = Vector2::new(2.0, 1.0);
        let run = |l: f64, mode: RpsMode| {
            rps_step(&ContactState::point(l), &Pose2::default(), target, mode, &p, 0.33, 0.1)
        };
        let (cmd, mode) = run(0.27, RpsMode::default());
        assert_eq!(mode.phase, RpsPhase::Realignment);
        assert!(close(cmd.v_y / cmd.v_x, p.eta, 1e-12));

        // between exit and enter thresholds: stay realigning
        let (_, mode) = run(0.2, mode);
        assert_eq!(mode.phase, RpsPhase::Realignment);
        assert!(mode.time_in_mode > 0.0);
        let (_, mode) = run(0.1, mode);
        assert_eq!(mode.phase, RpsPhase::Normal);
        assert_eq!(mode.time_in_mode, 0.0);

        // omega is reduced while realigning
        let (normal, _) = run(0.2, RpsMode::default());
        let (realign, _) = run(0.27, RpsMode::default());
        assert!(realign.omega.abs() < normal.omega.abs());
    }

    #[test]
    fn stop_inside_threshold() {
        let p = RpsParams::default();
        let (cmd, _) = rps_step(
            &ContactState::point(0.1),
            &Pose2::default(),
            Vector2::new(0.33 + 0.03, 0.1),
            RpsMode::default(),
            &p,
            0.33,
            0.1,
        );
        assert!(cmd.is_zero());
    }

    #[test]
    fn params_validation() {
        let p = RpsParams::default();
        p.validate(0.3).unwrap();
        assert!(RpsParams { zeta: 5.0, ..p }.validate(0.3).is_err());
        assert!(RpsParams { realign_exit: 0.3, ..p }.validate(0.3).is_err());
        assert!(RpsParams { k_v: 0.0, ..p }.validate(0.3).is_err());
    }
}
