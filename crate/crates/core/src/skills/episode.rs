//! Closed-loop episode execution: 50 Hz skill commands, 1 ms ball and paddle
//! integration, latency and observation noise, contact and the return flight.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::planner::{ContactChoice, Intercept, Observation, StrokeCommand, StrokeConfig, StrokePlanner, TickContext, CONTROL_DT};
use super::policy::{apply_film, frame_features, ObsStack};
use super::{ExecutionNoise, PaddleCommand, PaddleLimits, Skill, SkillError, Style};
use crate::ballistics::{
    contact_paddle, physical_spin_class, BallState, ContactParams, EventKind, PaddleState, Physics, Side, SpinClass,
    TrajectoryEvent,
};
use crate::vec3::{Vec2, Vec3};

/// Gaussian delay with variance in ms².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyChannel {
    pub mean_ms: f64,
    pub variance_ms2: f64,
}

impl LatencyChannel {
    pub fn sample_ms<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sd = self.variance_ms2.max(0.0).sqrt();
        (self.mean_ms + sd * rng.sample::<f64, _>(StandardNormal)).max(0.0)
    }

    /// Sampled delay rounded to whole control ticks.
    pub fn sample_ticks<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        (self.sample_ms(rng) / (CONTROL_DT * 1000.0)).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub ball: LatencyChannel,
    pub paddle: LatencyChannel,
    pub action: LatencyChannel,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            ball: LatencyChannel { mean_ms: 40.0, variance_ms2: 8.2 },
            paddle: LatencyChannel { mean_ms: 29.0, variance_ms2: 8.2 },
            action: LatencyChannel { mean_ms: 71.0, variance_ms2: 5.7 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatencySample {
    pub ball_ticks: usize,
    pub paddle_ticks: usize,
    pub action_ticks: usize,
}

impl LatencyModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatencySample {
        LatencySample {
            ball_ticks: self.ball.sample_ticks(rng),
            paddle_ticks: self.paddle.sample_ticks(rng),
            action_ticks: self.action.sample_ticks(rng),
        }
    }
}

/// Ball perception noise. Velocity noise follows the least-squares slope
/// variance of a uniformly sampled window since the last hit or bounce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationNoise {
    pub position_std: f64,
    pub sample_period: f64,
    pub max_window: usize,
}

impl Default for ObservationNoise {
    fn default() -> Self {
        Self { position_std: 0.003, sample_period: 0.008, max_window: 12 }
    }
}

impl ObservationNoise {
    pub const NONE: ObservationNoise = ObservationNoise { position_std: 0.0, sample_period: 0.008, max_window: 12 };

    /// Velocity std after `elapsed` seconds of clean tracking.
    pub fn velocity_std(&self, elapsed: f64) -> f64 {
        if self.position_std == 0.0 {
            return 0.0;
        }
        let n = ((elapsed.max(0.0) / self.sample_period).floor() as usize + 1).clamp(2, self.max_window.max(2)) as f64;
        let h = self.sample_period;
        self.position_std / (h * h * n * (n * n - 1.0) / 12.0).sqrt()
    }
}

/// Which paddle restitution set a contact uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactMode {
    /// One set for every ball, as in the original training simulator.
    Fixed(SpinClass),
    /// Picked from the ball's physical spin.
    SpinConditioned,
}

impl ContactMode {
    pub fn class_for(&self, ball: &BallState) -> SpinClass {
        match self {
            ContactMode::Fixed(c) => *c,
            ContactMode::SpinConditioned => physical_spin_class(ball),
        }
    }
}

/// Offsets applied to nominal contact parameters during training rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationRanges {
    pub table_damping: [f64; 2],
    pub paddle_damping: [f64; 2],
    pub paddle_friction: [f64; 2],
    pub table_friction: [f64; 2],
    /// Restitution change per unit damping offset.
    pub restitution_per_damping: f64,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            table_damping: [-1.0, 5.0],
            paddle_damping: [-5.0, -1.0],
            paddle_friction: [-0.29, 0.29],
            table_friction: [-0.05, 0.05],
            restitution_per_damping: -0.25 / 103.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationSample {
    pub table_damping: f64,
    pub paddle_damping: f64,
    pub paddle_friction: f64,
    pub table_friction: f64,
}

impl RandomizationRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RandomizationSample {
        let mut u = |r: [f64; 2]| if r[1] > r[0] { Uniform::new(r[0], r[1]).map_or(r[0], |d| d.sample(rng)) } else { r[0] };
        RandomizationSample {
            table_damping: u(self.table_damping),
            paddle_damping: u(self.paddle_damping),
            paddle_friction: u(self.paddle_friction),
            table_friction: u(self.table_friction),
        }
    }

    pub fn apply(&self, nominal: &ContactParams, s: &RandomizationSample) -> ContactParams {
        let k = self.restitution_per_damping;
        let clamp_e = |e: f64| e.clamp(0.05, 0.99);
        ContactParams {
            table_restitution_normal: clamp_e(nominal.table_restitution_normal + k * s.table_damping),
            table_friction: (nominal.table_friction + s.table_friction).max(0.0),
            paddle_restitution_topspin: clamp_e(nominal.paddle_restitution_topspin + k * s.paddle_damping),
            paddle_restitution_underspin: clamp_e(nominal.paddle_restitution_underspin + k * s.paddle_damping),
            paddle_friction: (nominal.paddle_friction + s.paddle_friction).max(0.0),
            ..*nominal
        }
    }
}

/// Paddle position and face normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddlePose {
    pub position: Vec3,
    pub normal: Vec3,
}

impl Default for PaddlePose {
    fn default() -> Self {
        Self { position: Vec3::new(0.0, -1.8, 0.25), normal: Vec3::Y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub limits: PaddleLimits,
    pub stroke: StrokeConfig,
    /// Pose every skill starts from.
    pub initial_pose: PaddlePose,
    pub observation: ObservationNoise,
    pub latency: Option<LatencyModel>,
    pub contact_mode: ContactMode,
    pub max_duration: f64,
    /// Returns rising above this height are a let.
    pub high_ball_ceiling: f64,
    pub return_horizon: f64,
    /// The ball counts as passed once it is this far behind the table.
    pub pass_line_y: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            limits: PaddleLimits::default(),
            stroke: StrokeConfig::default(),
            initial_pose: PaddlePose::default(),
            observation: ObservationNoise::default(),
            latency: Some(LatencyModel::default()),
            contact_mode: ContactMode::SpinConditioned,
            max_duration: 1.6,
            high_ball_ceiling: 2.0,
            return_horizon: 3.0,
            pass_line_y: -2.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShotOutcome {
    /// First bounce of the return on the opponent half.
    Landed,
    NetFault,
    /// Return bounced on the robot half.
    OwnSide,
    /// Return left play without touching the table.
    Out,
    /// Ball struck before it bounced on the robot half.
    Volley,
    /// No contact.
    Miss,
}

impl ShotOutcome {
    pub fn landed(self) -> bool {
        self == ShotOutcome::Landed
    }

    pub fn hit(self) -> bool {
        self != ShotOutcome::Miss
    }

    pub fn label(self) -> &'static str {
        match self {
            ShotOutcome::Landed => "landed",
            ShotOutcome::NetFault => "net",
            ShotOutcome::OwnSide => "own_side",
            ShotOutcome::Out => "out",
            ShotOutcome::Volley => "volley",
            ShotOutcome::Miss => "miss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub position: Vec3,
    pub normal: Vec3,
    /// Command in effect over this tick.
    pub velocity: Vec3,
    pub angular: Vec3,
    pub reachable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub t: f64,
    pub ball_in: BallState,
    pub ball_out: BallState,
    pub paddle: PaddleState,
    pub class: SpinClass,
}

/// Everything recorded about one sub-episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub style: Style,
    pub skill_id: Option<usize>,
    pub ticks: Vec<TickRecord>,
    pub contact: Option<ContactRecord>,
    pub outcome: ShotOutcome,
    pub landing: Option<Vec2>,
    /// Return state just after its first opponent-side bounce.
    pub landing_state: Option<BallState>,
    pub net_height: Option<f64>,
    pub max_height: f64,
    pub high_ball: bool,
    pub collision_steps: usize,
    pub height_violation_steps: usize,
    pub decisions: Vec<(usize, usize)>,
    pub latency: LatencySample,
}

impl Transcript {
    pub fn hit_velocity_y(&self) -> Option<f64> {
        self.contact.map(|c| c.ball_out.velocity.y)
    }
}

/// Called every tick; returning `Some(index)` (re)assigns the active skill.
pub trait Decider {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Option<usize>;
}

impl<F: FnMut(&DecisionContext<'_>) -> Option<usize>> Decider for F {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Option<usize> {
        self(ctx)
    }
}

pub struct DecisionContext<'a> {
    pub tick: usize,
    pub t: f64,
    pub history: &'a [Observation],
    pub current: Option<usize>,
}

impl DecisionContext<'_> {
    pub fn latest(&self) -> &Observation {
        self.history.last().expect("history holds the current observation")
    }
}

/// Commits to `skill` at tick `at_tick` and never changes it.
#[derive(Debug, Clone, Copy)]
pub struct FixedSkill {
    pub skill: usize,
    pub at_tick: usize,
}

impl Decider for FixedSkill {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Option<usize> {
        (ctx.tick == self.at_tick).then_some(self.skill)
    }
}

/// Paddle perturbation drawn once per episode and applied at impact.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSample {
    pub velocity: Vec3,
    pub tilt: Vec3,
}

impl ExecutionNoise {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseSample {
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let v = Vec3::new(g(), g(), g());
        let t = Vec3::new(g(), g(), g());
        NoiseSample { velocity: v * self.velocity, tilt: t * self.normal }
    }
}

impl NoiseSample {
    pub fn apply(&self, paddle: &PaddleState) -> PaddleState {
        let n = paddle.normal;
        let tilt = self.tilt - n * self.tilt.dot(n);
        let angle = tilt.norm();
        let normal = if angle > 0.0 { n.rotate(tilt / angle, angle).normalized() } else { n };
        PaddleState { velocity: paddle.velocity + self.velocity, normal, ..*paddle }
    }
}

struct ActiveSkill<'s> {
    index: usize,
    skill: &'s Skill,
    planner: StrokePlanner,
    stack: ObsStack,
}

impl<'s> ActiveSkill<'s> {
    fn new(index: usize, skill: &'s Skill, cfg: &EpisodeConfig) -> Self {
        Self {
            index,
            skill,
            planner: StrokePlanner::new(skill.spec.clone(), cfg.stroke, cfg.limits),
            stack: ObsStack::new(),
        }
    }

    fn command(&mut self, ctx: &TickContext<'_>) -> StrokeCommand {
        let Some(policy) = &self.skill.policy else {
            return self.planner.command(ctx, ContactChoice::Solve);
        };
        let frame = frame_features(ctx, self.planner.last_intercept.as_ref(), self.skill.spec.style);
        self.stack.push(frame);
        let obs = self.stack.flatten();
        let normed = policy.normalize(&obs);
        let mut action = policy.act_normalized(&normed);
        if let Some(film) = &self.skill.film {
            if let Ok(a) = apply_film(&action, film, &normed) {
                action = a;
            }
        }
        let choice = policy.mapping.contact(&action);
        self.planner.command(ctx, choice)
    }
}

/// Everything up to the paddle impact, reusable across noise draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PreContact {
    pub transcript: Transcript,
    /// Ball state at impact and the nominal (noise-free) paddle.
    pub impact: Option<(f64, BallState, PaddleState)>,
    pub robot_bounced: bool,
}

fn advance_paddle(p: &mut PaddleState, dt: f64) {
    p.position += p.velocity * dt;
    let w = p.angular_velocity.norm();
    if w > 0.0 {
        p.normal = p.normal.rotate(p.angular_velocity / w, w * dt).normalized();
    }
}

fn table_collision(p: &PaddleState, physics: &Physics, radius: f64) -> bool {
    let g = &physics.geometry;
    let extent = radius * (1.0 - p.normal.z * p.normal.z).max(0.0).sqrt();
    let q = p.position;
    q.x.abs() <= g.half_width() + radius
        && q.y.abs() <= g.half_length() + radius * p.normal.y.abs()
        && q.z - extent < 0.0
        && q.z + extent > -0.03
}

/// Runs the shot until the paddle meets the ball or the ball is gone.
/// Draws latency, then observation noise, from `rng`.
pub fn run_until_contact<R: Rng + ?Sized>(
    skills: &[Skill],
    initial: &BallState,
    decider: &mut dyn Decider,
    cfg: &EpisodeConfig,
    physics: &Physics,
    rng: &mut R,
) -> Result<PreContact, SkillError> {
    if !initial.is_finite() {
        return Err(SkillError::Ballistics(crate::ballistics::BallisticsError::InvalidState("non-finite component")));
    }
    let latency = cfg.latency.map(|l| l.sample(rng)).unwrap_or_default();
    let pose = cfg.initial_pose;
    let mut paddle = PaddleState::at_rest(pose.position, pose.normal);
    let mut prop = physics.propagator(*initial);
    let mut events: Vec<TrajectoryEvent> = Vec::new();
    let substeps = (CONTROL_DT / physics.flight.dt).round().max(1.0) as usize;
    let sub_dt = CONTROL_DT / substeps as f64;
    let radius = physics.flight.ball_radius;
    let pr = cfg.limits.paddle_radius;
    let pos_noise = Normal::new(0.0, cfg.observation.position_std.max(0.0)).expect("finite std");

    let mut truth: Vec<BallState> = vec![*initial];
    let mut robot_bounce: Option<f64> = None;
    let mut history: Vec<Observation> = Vec::new();
    let mut queue: VecDeque<PaddleCommand> = std::iter::repeat(PaddleCommand::ZERO).take(latency.action_ticks).collect();
    let mut active: Option<ActiveSkill<'_>> = None;
    let mut transcript = Transcript {
        style: Style::Forehand,
        skill_id: None,
        ticks: Vec::new(),
        contact: None,
        outcome: ShotOutcome::Miss,
        landing: None,
        landing_state: None,
        net_height: None,
        max_height: initial.position.z,
        high_ball: false,
        collision_steps: 0,
        height_violation_steps: 0,
        decisions: Vec::new(),
        latency,
    };
    let max_ticks = (cfg.max_duration / CONTROL_DT).ceil() as usize;
    let mut last_cmd = PaddleCommand::ZERO;

    for tick in 0..max_ticks {
        let t = tick as f64 * CONTROL_DT;
        let idx = tick.saturating_sub(latency.ball_ticks);
        let t_obs = idx as f64 * CONTROL_DT;
        let seen_bounce = robot_bounce.filter(|&tb| tb <= t_obs);
        let true_ball = truth[idx];
        let v_std = cfg.observation.velocity_std(t_obs - seen_bounce.unwrap_or(0.0));
        let mut noisy = true_ball;
        noisy.spin = Vec3::ZERO;
        if cfg.observation.position_std > 0.0 {
            let mut g = || pos_noise.sample(rng);
            noisy.position += Vec3::new(g(), g(), g());
            let mut h = || v_std * rng.sample::<f64, _>(StandardNormal);
            noisy.velocity += Vec3::new(h(), h(), h());
        }
        history.push(Observation { t: t_obs, ball: noisy, robot_bounced: seen_bounce.is_some() });

        let choice = decider.decide(&DecisionContext { tick, t, history: &history, current: active.as_ref().map(|a| a.index) });
        if let Some(i) = choice {
            if active.as_ref().is_none_or(|a| a.index != i) {
                let skill = skills.get(i).ok_or(SkillError::DimensionMismatch { expected: skills.len(), got: i })?;
                transcript.decisions.push((tick, i));
                transcript.style = skill.spec.style;
                transcript.skill_id = Some(skill.id());
                active = Some(ActiveSkill::new(i, skill, cfg));
            }
        }

        // Paddle state when the new command starts acting: replay the queue.
        let mut predicted = paddle;
        for c in queue.iter() {
            predicted.velocity = c.linear;
            predicted.angular_velocity = c.angular;
            advance_paddle(&mut predicted, CONTROL_DT);
        }
        predicted.velocity = queue.back().copied().unwrap_or(last_cmd).linear;
        let t_eff = t + latency.action_ticks as f64 * CONTROL_DT;
        let issued = match active.as_mut() {
            Some(a) => {
                let ctx = TickContext {
                    tick,
                    t,
                    t_effective: t_eff,
                    observation: history.last().expect("pushed above"),
                    paddle: predicted,
                    physics,
                };
                a.command(&ctx)
            }
            None => StrokeCommand { command: PaddleCommand::ZERO, reachable: true, contact: None },
        };
        let prev = queue.back().copied().unwrap_or(last_cmd);
        let mut cmd = issued.command.clamped(&cfg.limits);
        cmd.linear = prev.linear + (cmd.linear - prev.linear).clamp_norm(cfg.limits.max_acceleration * CONTROL_DT);
        queue.push_back(cmd);
        let effective = queue.pop_front().expect("queue is non-empty after push");
        last_cmd = effective;
        paddle.velocity = effective.linear;
        paddle.angular_velocity = effective.angular;

        transcript.ticks.push(TickRecord {
            t,
            position: paddle.position,
            normal: paddle.normal,
            velocity: effective.linear,
            angular: effective.angular,
            reachable: issued.reachable,
        });
        if table_collision(&paddle, physics, pr) {
            transcript.collision_steps += 1;
        }
        if paddle.position.z < -0.3 || paddle.position.z > 1.3 {
            transcript.height_violation_steps += 1;
        }

        for _ in 0..substeps {
            let b0 = prop.state.position;
            let p0 = paddle;
            events.clear();
            prop.step(&mut events)?;
            advance_paddle(&mut paddle, sub_dt);
            for e in &events {
                match e.kind {
                    EventKind::TableBounce(Side::Robot) => {
                        if robot_bounce.is_some() {
                            return Ok(PreContact { transcript, impact: None, robot_bounced: true });
                        }
                        robot_bounce = Some(e.t);
                    }
                    EventKind::TableBounce(Side::Opponent) if robot_bounce.is_none() && prop.state.velocity.y < 0.0 => {}
                    EventKind::TableBounce(Side::Opponent) | EventKind::NetFault | EventKind::OutOfPlay => {
                        return Ok(PreContact { transcript, impact: None, robot_bounced: robot_bounce.is_some() });
                    }
                    EventKind::NetCrossing { .. } => {}
                }
            }
            let ball = prop.state;
            let d0 = (b0 - p0.position).dot(p0.normal);
            let rel = ball.position - paddle.position;
            let d1 = rel.dot(paddle.normal);
            let lateral = (rel - paddle.normal * d1).norm();
            let crossed = d0 * d1 < 0.0;
            if lateral <= pr && ((d1.abs() <= radius && d0.abs() > radius) || crossed) {
                let side = if d0 != 0.0 { d0.signum() } else { 1.0 };
                let mut at = ball;
                at.position = ball.position - paddle.normal * (d1 - side * radius);
                let bounced = robot_bounce.is_some();
                return Ok(PreContact { transcript, impact: Some((prop.t, at, paddle)), robot_bounced: bounced });
            }
            if prop.done || ball.position.y < cfg.pass_line_y {
                return Ok(PreContact { transcript, impact: None, robot_bounced: robot_bounce.is_some() });
            }
        }
        truth.push(prop.state);
    }
    Ok(PreContact { transcript, impact: None, robot_bounced: robot_bounce.is_some() })
}

/// Applies one noise draw at impact and flies the return.
pub fn resolve_contact(
    pre: &PreContact,
    noise: &NoiseSample,
    cfg: &EpisodeConfig,
    physics: &Physics,
) -> Result<Transcript, SkillError> {
    let mut tr = pre.transcript.clone();
    let Some((t, ball, nominal)) = pre.impact else {
        tr.outcome = ShotOutcome::Miss;
        return Ok(tr);
    };
    let paddle = noise.apply(&nominal);
    let class = cfg.contact_mode.class_for(&ball);
    let Ok(out) = contact_paddle(&ball, &paddle, &physics.contact, class, physics.flight.ball_radius) else {
        tr.outcome = ShotOutcome::Miss;
        return Ok(tr);
    };
    tr.contact = Some(ContactRecord { t, ball_in: ball, ball_out: out, paddle, class });
    tr.max_height = out.position.z;
    let mut prop = physics.propagator(out).with_time(t);
    let mut events = Vec::new();
    let steps = (cfg.return_horizon / physics.flight.dt) as usize;
    let mut outcome = ShotOutcome::Out;
    'flight: for _ in 0..steps {
        events.clear();
        prop.step(&mut events)?;
        tr.max_height = tr.max_height.max(prop.state.position.z);
        for e in &events {
            match e.kind {
                EventKind::NetCrossing { height } => {
                    if tr.net_height.is_none() {
                        tr.net_height = Some(height);
                    }
                }
                EventKind::TableBounce(Side::Opponent) => {
                    outcome = ShotOutcome::Landed;
                    tr.landing = Some(Vec2::new(e.position.x, e.position.y));
                    tr.landing_state = Some(prop.state);
                    break 'flight;
                }
                EventKind::TableBounce(Side::Robot) => {
                    outcome = ShotOutcome::OwnSide;
                    break 'flight;
                }
                EventKind::NetFault => {
                    outcome = ShotOutcome::NetFault;
                    break 'flight;
                }
                EventKind::OutOfPlay => break 'flight,
            }
        }
        if prop.done {
            break;
        }
    }
    tr.high_ball = tr.max_height > cfg.high_ball_ceiling;
    tr.outcome = if pre.robot_bounced { outcome } else { ShotOutcome::Volley };
    Ok(tr)
}

/// Full episode: latency, execution noise, observation noise, in that order
/// of rng use.
pub fn run_episode<R: Rng + ?Sized>(
    skills: &[Skill],
    initial: &BallState,
    decider: &mut dyn Decider,
    cfg: &EpisodeConfig,
    physics: &Physics,
    rng: &mut R,
) -> Result<Transcript, SkillError> {
    let pre = run_until_contact(skills, initial, decider, cfg, physics, rng)?;
    let noise = match pre.transcript.skill_id.and_then(|id| skills.iter().find(|s| s.id() == id)) {
        Some(s) => s.spec.execution_noise.sample(rng),
        None => NoiseSample::default(),
    };
    resolve_contact(&pre, &noise, cfg, physics)
}

/// Single skill committed from the first tick.
pub fn run_skill<R: Rng + ?Sized>(
    skill: &Skill,
    initial: &BallState,
    cfg: &EpisodeConfig,
    physics: &Physics,
    rng: &mut R,
) -> Result<Transcript, SkillError> {
    let mut decider = FixedSkill { skill: 0, at_tick: 0 };
    run_episode(std::slice::from_ref(skill), initial, &mut decider, cfg, physics, rng)
}

/// Land and hit rates of one skill over a ball set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub hit_rate: f64,
    pub land_rate: f64,
    pub mean_reward: f64,
}

pub fn evaluate_skill<R: Rng + ?Sized>(
    skill: &Skill,
    balls: &[BallState],
    cfg: &EpisodeConfig,
    physics: &Physics,
    reward: &super::RewardConfig,
    rng: &mut R,
) -> Result<EvalSummary, SkillError> {
    let mut s = EvalSummary { episodes: balls.len(), ..Default::default() };
    if balls.is_empty() {
        return Ok(s);
    }
    for b in balls {
        let tr = run_skill(skill, b, cfg, physics, rng)?;
        s.hit_rate += tr.outcome.hit() as u8 as f64;
        s.land_rate += tr.outcome.landed() as u8 as f64;
        s.mean_reward += super::compute_reward(&tr, reward)?;
    }
    let n = balls.len() as f64;
    s.hit_rate /= n;
    s.land_rate /= n;
    s.mean_reward /= n;
    Ok(s)
}

/// Intercept for reporting and style heuristics; `None` when unreachable.
pub fn intercept_for(obs: &Observation, style: Style, hit_plane_y: f64, cfg: &EpisodeConfig, physics: &Physics) -> Option<Intercept> {
    super::planner::predict_intercept(obs, style, hit_plane_y, &cfg.stroke, physics)
}
