//! Stroke planning: intercept prediction, contact-model inversion and the
//! per-tick paddle motion command.

use serde::{Deserialize, Serialize};

use super::{PaddleCommand, PaddleLimits, SkillSpec, Style};
use crate::ballistics::{
    aero_forces, aim_velocity, contact_paddle, BallState, EventKind, FlightParams, PaddleState, Physics, Side,
    SpinClass,
};
use crate::vec3::{Vec2, Vec3};

/// Control period of the skill layer, s.
pub const CONTROL_DT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrokeConfig {
    pub forehand_reach_x: [f64; 2],
    pub backhand_reach_x: [f64; 2],
    pub reach_y: [f64; 2],
    pub reach_z: [f64; 2],
    /// Constant-velocity ticks immediately before the planned contact.
    pub swing_ticks: usize,
    /// Contacts further away than this use the cheap vacuum solution.
    pub full_solve_window: f64,
    pub horizon: f64,
}

impl Default for StrokeConfig {
    fn default() -> Self {
        Self {
            forehand_reach_x: [-0.35, 1.4],
            backhand_reach_x: [-1.4, 0.35],
            reach_y: [-2.3, -0.3],
            reach_z: [-0.2, 1.1],
            swing_ticks: 2,
            full_solve_window: 0.3,
            horizon: 1.6,
        }
    }
}

impl StrokeConfig {
    pub fn reach_x(&self, style: Style) -> [f64; 2] {
        match style {
            Style::Forehand => self.forehand_reach_x,
            Style::Backhand => self.backhand_reach_x,
        }
    }
}

/// What the controller sees about the ball at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Time the measurement refers to.
    pub t: f64,
    pub ball: BallState,
    /// A bounce on the robot half has been seen by this time.
    pub robot_bounced: bool,
}

/// Predicted ball state where the paddle should meet it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intercept {
    pub t: f64,
    pub ball: BallState,
}

/// Forward-simulates an observed ball and picks the hitting point closest to
/// `hit_plane_y` inside the style's reach box, after the robot-side bounce.
pub fn predict_intercept(
    obs: &Observation,
    style: Style,
    hit_plane_y: f64,
    cfg: &StrokeConfig,
    physics: &Physics,
) -> Option<Intercept> {
    let mut prop = physics.propagator(obs.ball).with_time(obs.t);
    let mut events = Vec::new();
    let mut bounced = obs.robot_bounced;
    let [x_lo, x_hi] = cfg.reach_x(style);
    let [y_lo, y_hi] = cfg.reach_y;
    let [z_lo, z_hi] = cfg.reach_z;
    let mut best: Option<(f64, Intercept)> = None;
    let steps = (cfg.horizon / physics.flight.dt) as usize;
    for _ in 0..steps {
        events.clear();
        if prop.step(&mut events).is_err() {
            break;
        }
        let mut stop = false;
        for e in &events {
            match e.kind {
                EventKind::TableBounce(Side::Robot) => {
                    if bounced {
                        stop = true;
                    }
                    bounced = true;
                }
                // A serve's first bounce on the server's half is part of the incoming flight.
                EventKind::TableBounce(Side::Opponent) => stop = bounced || prop.state.velocity.y > 0.0,
                EventKind::NetFault => stop = true,
                _ => {}
            }
        }
        if stop {
            break;
        }
        let s = prop.state;
        if bounced && s.velocity.y < 0.0 && (y_lo..=y_hi).contains(&s.position.y) {
            let p = s.position;
            if (x_lo..=x_hi).contains(&p.x) && (z_lo..=z_hi).contains(&p.z) {
                let score = (p.y - hit_plane_y).abs();
                if best.is_none_or(|(b, _)| score < b) {
                    best = Some((score, Intercept { t: prop.t, ball: s }));
                }
            }
        }
        if prop.done || s.position.y < y_lo {
            break;
        }
    }
    best.map(|(_, i)| i)
}

/// Paddle normal and velocity that send the ball toward a landing target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactSolution {
    pub normal: Vec3,
    pub paddle_velocity: Vec3,
    /// Launch velocity the aim solver asked for.
    pub aim: Vec3,
    /// Ball state right after the modelled contact.
    pub outgoing: BallState,
    /// Remaining landing miss of the aim solve, m.
    pub miss: f64,
}

/// Shortest velocity history used for a spin estimate, s.
pub const MIN_SPIN_WINDOW: f64 = 0.06;
const MAX_SPIN_ESTIMATE: f64 = 250.0;
/// Observations this soon after the hit carry velocity from only a few
/// samples and are not used to anchor the spin estimate.
pub const SPIN_ANCHOR_SETTLE: f64 = 0.04;

/// Spin component perpendicular to the flight path that explains the mean
/// acceleration between two velocity observations, after gravity and drag.
/// Spin along the velocity is unobservable and left at zero.
pub fn estimate_spin(t0: f64, v0: Vec3, t1: f64, v1: Vec3, flight: &FlightParams) -> Vec3 {
    let dt = t1 - t0;
    let v = (v0 + v1) * 0.5;
    let speed2 = v.norm_squared();
    if !(dt > 0.0) || speed2 < 1e-6 {
        return Vec3::ZERO;
    }
    let probe = BallState::new(Vec3::ZERO, v, Vec3::ZERO);
    let f = aero_forces(&probe, flight);
    let base = Vec3::new(0.0, 0.0, -flight.gravity) + f.drag / flight.ball_mass;
    let residual = (v1 - v0) / dt - base;
    let r = flight.ball_radius;
    let k = flight.magnus_lift * flight.air_density * (4.0 / 3.0 * std::f64::consts::PI * r * r * r) / flight.ball_mass;
    if k <= 0.0 {
        return Vec3::ZERO;
    }
    let v_rel = v - flight.wind;
    let w = v_rel.cross(residual) / (k * v_rel.norm_squared());
    if w.is_finite() { w.clamp_norm(MAX_SPIN_ESTIMATE) } else { Vec3::ZERO }
}

/// Frictionless paddle normal and speed that turn `v_in` into `u`.
pub fn frictionless_contact(v_in: Vec3, u: Vec3, restitution: f64) -> Option<(Vec3, f64)> {
    let d = u - v_in;
    if d.norm() < 1e-9 {
        return None;
    }
    let n = d.normalized();
    let s = (u.dot(n) + restitution * v_in.dot(n)) / (1.0 + restitution);
    Some((n, s))
}

/// Vacuum launch guess used far from contact.
fn vacuum_aim(start: Vec3, target: Vec2, speed: f64, physics: &Physics) -> Vec3 {
    let t = ((target.y - start.y) / speed).max(0.05);
    let r = physics.flight.ball_radius;
    Vec3::new((target.x - start.x) / t, speed, (r - start.z + 0.5 * physics.flight.gravity * t * t) / t)
}

/// Inverts the contact model: finds the paddle normal and velocity for which
/// the ball at `ball` leaves toward `target` at `speed`. Starts from the
/// frictionless solution and corrects it by fixed-point iteration through
/// [`contact_paddle`], re-aiming once with the predicted outgoing spin.
pub fn solve_contact(
    ball: &BallState,
    target: Vec2,
    speed: f64,
    class: SpinClass,
    physics: &Physics,
    warm: Option<&ContactSolution>,
    full: bool,
) -> Option<ContactSolution> {
    let e = physics.contact.paddle_restitution(class);
    let r = physics.flight.ball_radius;
    if !full {
        let u = vacuum_aim(ball.position, target, speed, physics);
        let (n, s) = frictionless_contact(ball.velocity, u, e)?;
        let outgoing = BallState::new(ball.position, u, ball.spin);
        return Some(ContactSolution { normal: n, paddle_velocity: n * s, aim: u, outgoing, miss: f64::NAN });
    }
    let mut spin_guess = warm.map_or(Vec3::ZERO, |w| w.outgoing.spin);
    let mut guess = warm.map(|w| w.aim);
    let mut best: Option<ContactSolution> = None;
    let passes = if warm.is_some() { 1 } else { 2 };
    for _ in 0..passes {
        let (u, miss) = aim_velocity(ball.position, spin_guess, target, speed, &physics.flight, guess)?;
        let mut cmd = u;
        let mut last = None;
        for _ in 0..6 {
            let (n, s) = frictionless_contact(ball.velocity, cmd, e)?;
            let paddle = PaddleState { position: ball.position - n * r, normal: n, velocity: n * s, angular_velocity: Vec3::ZERO };
            let out = contact_paddle(ball, &paddle, &physics.contact, class, r).ok()?;
            let err = u - out.velocity;
            last = Some(ContactSolution { normal: n, paddle_velocity: n * s, aim: u, outgoing: out, miss });
            if err.norm() < 1e-3 {
                break;
            }
            cmd += err;
        }
        let sol = last?;
        spin_guess = sol.outgoing.spin;
        guess = Some(u);
        best = Some(sol);
    }
    best
}

/// How the contact is chosen: solved from the skill target, or supplied
/// directly (policy skills).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactChoice {
    Solve,
    /// Desired outgoing ball velocity, inverted without friction, then the
    /// face tilted by `tilt` (added to the normal's x and z).
    Outgoing { velocity: Vec3, tilt: Vec2, hit_plane_shift: f64 },
}

/// Everything a skill sees at one control tick.
#[derive(Debug, Clone, Copy)]
pub struct TickContext<'a> {
    pub tick: usize,
    pub t: f64,
    /// When a command issued now starts acting on the paddle.
    pub t_effective: f64,
    pub observation: &'a Observation,
    /// Paddle state at `t_effective`, from the queued commands.
    pub paddle: PaddleState,
    pub physics: &'a Physics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeCommand {
    pub command: PaddleCommand,
    pub reachable: bool,
    /// Planned contact time and paddle centre, when an intercept exists.
    pub contact: Option<(f64, Vec3)>,
}

#[derive(Debug, Clone, Copy)]
struct PlanCache {
    t: f64,
    position: Vec3,
    solution: ContactSolution,
}

/// Stateful per-shot planner; caches the last contact solution to warm-start
/// the next tick.
#[derive(Debug, Clone)]
pub struct StrokePlanner {
    pub spec: SkillSpec,
    pub cfg: StrokeConfig,
    pub limits: PaddleLimits,
    cache: Option<PlanCache>,
    pub last_intercept: Option<Intercept>,
    /// Spin the last pre-bounce prediction expected after the bounce.
    spin_estimate: Option<Vec3>,
    /// First and latest pre-bounce observations of the current flight.
    anchor: Option<(f64, Vec3)>,
    previous: Option<(f64, Vec3)>,
}

impl StrokePlanner {
    pub fn new(spec: SkillSpec, cfg: StrokeConfig, limits: PaddleLimits) -> Self {
        Self { spec, cfg, limits, cache: None, last_intercept: None, spin_estimate: None, anchor: None, previous: None }
    }

    pub fn command(&mut self, ctx: &TickContext<'_>, choice: ContactChoice) -> StrokeCommand {
        let idle = StrokeCommand { command: PaddleCommand::ZERO, reachable: false, contact: None };
        let obs = ctx.observation;
        // Ball already behind the paddle and still travelling away from the table.
        if obs.ball.position.y < ctx.paddle.position.y && obs.ball.velocity.y < 0.0 {
            self.last_intercept = None;
            return idle;
        }
        let shift = match choice {
            ContactChoice::Solve => 0.0,
            ContactChoice::Outgoing { hit_plane_shift, .. } => hit_plane_shift,
        };
        // Spin is not observed directly: estimate it from the velocity history
        // before the bounce and carry the predicted post-bounce spin after it.
        let assumed = Vec3::new(self.spec.assumed_spin_x, 0.0, 0.0);
        let mut seen = *obs;
        seen.ball.spin = if obs.robot_bounced {
            self.spin_estimate.unwrap_or(assumed)
        } else {
            self.track(obs, &ctx.physics.flight).unwrap_or(assumed)
        };
        let Some(icp) = predict_intercept(&seen, self.spec.style, self.spec.hit_plane_y + shift, &self.cfg, ctx.physics) else {
            self.last_intercept = None;
            return idle;
        };
        self.last_intercept = Some(icp);
        if !obs.robot_bounced {
            self.spin_estimate = Some(icp.ball.spin);
        }
        let t_c = icp.t;
        if t_c <= ctx.t_effective {
            return StrokeCommand { command: PaddleCommand::ZERO, reachable: true, contact: None };
        }
        let (normal, v_c) = match choice {
            ContactChoice::Outgoing { velocity, tilt, .. } => {
                let e = ctx.physics.contact.paddle_restitution(self.spec.spin_preset);
                let Some((n, speed)) = frictionless_contact(icp.ball.velocity, velocity, e) else {
                    return StrokeCommand { command: PaddleCommand::ZERO, reachable: false, contact: None };
                };
                let n = (n + Vec3::new(tilt.x, 0.0, tilt.y)).normalized();
                (n, n * speed)
            }
            ContactChoice::Solve => {
                let ball = icp.ball;
                let full = t_c - ctx.t_effective <= self.cfg.full_solve_window;
                let warm = self.cache.filter(|c| {
                    full && (c.t - t_c).abs() < 0.05 && (c.position - ball.position).norm() < 0.1 && c.solution.miss.is_finite()
                });
                let sol = solve_contact(
                    &ball,
                    self.spec.target_landing,
                    self.spec.target_speed,
                    self.spec.spin_preset,
                    ctx.physics,
                    warm.as_ref().map(|c| &c.solution),
                    full,
                );
                let Some(sol) = sol else {
                    return StrokeCommand { command: PaddleCommand::ZERO, reachable: false, contact: None };
                };
                if full {
                    self.cache = Some(PlanCache { t: t_c, position: ball.position, solution: sol });
                }
                (sol.normal, sol.paddle_velocity)
            }
        };
        let r = ctx.physics.flight.ball_radius;
        let p_c = icp.ball.position - normal * r;
        let linear = self.motion(ctx, t_c, p_c, v_c, normal);
        let angular = rotation_toward(ctx.paddle.normal, normal, self.limits.max_angular_velocity);
        let command = PaddleCommand { linear, angular }.clamped(&self.limits);
        StrokeCommand { command, reachable: true, contact: Some((t_c, p_c)) }
    }

    // Spin from the velocity change since the start of the flight segment.
    // A bounce or a clock jump restarts the segment.
    fn track(&mut self, obs: &Observation, flight: &FlightParams) -> Option<Vec3> {
        let now = (obs.t, obs.ball.velocity);
        let restart = match self.previous {
            Some((t, v)) => obs.t <= t || now.1.z - v.z > 1.0,
            None => true,
        };
        self.previous = Some(now);
        if restart || self.anchor.is_none() {
            self.anchor = (obs.t >= SPIN_ANCHOR_SETTLE).then_some(now);
            return None;
        }
        let (t0, v0) = self.anchor?;
        if obs.t - t0 < MIN_SPIN_WINDOW {
            return None;
        }
        Some(estimate_spin(t0, v0, now.0, now.1, flight))
    }

    fn motion(&self, ctx: &TickContext<'_>, t_c: f64, p_c: Vec3, v_c: Vec3, normal: Vec3) -> Vec3 {
        let p = ctx.paddle.position;
        let v = ctx.paddle.velocity;
        let remaining = t_c - ctx.t_effective;
        let swing = self.cfg.swing_ticks as f64 * CONTROL_DT;
        let desired = if remaining <= swing + 1e-9 {
            // Hold the contact velocity; only correct drift across the face.
            let err = p_c - v_c * remaining - p;
            let across = err - normal * err.dot(normal);
            v_c + across / (remaining + CONTROL_DT)
        } else {
            let t_s = t_c - swing;
            let p_s = p_c - v_c * swing;
            hermite_step_velocity(p, v, p_s, v_c, t_s - ctx.t_effective, CONTROL_DT)
        };
        limit_acceleration(v, desired, self.limits.max_acceleration * CONTROL_DT).clamp_norm(self.limits.max_velocity)
    }
}

/// Average velocity over the next `dt` along the cubic Hermite curve from
/// (p0, v0) to (p1, v1) over duration `span`.
pub fn hermite_step_velocity(p0: Vec3, v0: Vec3, p1: Vec3, v1: Vec3, span: f64, dt: f64) -> Vec3 {
    if span <= dt {
        return (p1 - p0) / span.max(1e-3);
    }
    let s = dt / span;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let at = p0 * h00 + v0 * (h10 * span) + p1 * h01 + v1 * (h11 * span);
    (at - p0) / dt
}

pub fn limit_acceleration(current: Vec3, desired: Vec3, max_change: f64) -> Vec3 {
    current + (desired - current).clamp_norm(max_change)
}

/// Angular velocity turning `from` toward `to` within one tick, capped.
pub fn rotation_toward(from: Vec3, to: Vec3, max_rate: f64) -> Vec3 {
    let axis = from.cross(to);
    let s = axis.norm();
    let angle = s.atan2(from.dot(to));
    if s < 1e-12 || angle.abs() < 1e-12 {
        return Vec3::ZERO;
    }
    axis * ((angle / CONTROL_DT).min(max_rate) / s)
}

/// One-shot planning call without warm-start state.
pub fn plan_stroke(spec: &SkillSpec, ctx: &TickContext<'_>, cfg: &StrokeConfig, limits: &PaddleLimits) -> StrokeCommand {
    StrokePlanner::new(spec.clone(), *cfg, *limits).command(ctx, ContactChoice::Solve)
}
