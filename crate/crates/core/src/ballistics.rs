//! Ball flight, table bounce and paddle contact.
//!
//! Flight uses a sphere specialisation of an ellipsoid fluid model:
//!
//! ```text
//! F_drag   = -1/2 rho C_blunt (pi r^2) |v_rel| v_rel  -  6 pi mu r v_rel
//! F_magnus =  C_magnus rho (4/3 pi r^3) (omega x v_rel)
//! ```
//!
//! The slender-drag and Kutta-lift coefficients are carried in
//! [`FlightParams`] but vanish for a sphere (both depend on differences
//! between the projected areas of the ellipsoid axes).
//!
//! Integration advances position with `p + v dt + a dt^2 / 2` and velocity
//! with `v + a dt`, where `a` is evaluated at the start of the step. This is
//! first order for velocity dependent forces and exact for constant ones, so
//! ballistic arcs and elastic bounces carry no integrator drift. Table impacts
//! are resolved at the exact sub-step time of contact.
//!
//! Contacts are impulse based: normal restitution plus Coulomb friction capped
//! at the impulse that brings the contact point to rolling, with the angular
//! impulse applied to a thin-shell ball (`I = 2/3 m r^2`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::{Vec2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BallisticsError {
    #[error("invalid ball state: {0}")]
    InvalidState(&'static str),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("trajectory never reaches the robot back line")]
    NotClassifiable,
}

/// Fixed ITTF table dimensions. The table surface is the plane `z = 0`, the
/// net sits at `y = 0` and the robot plays from the `y < 0` half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableGeometry {
    pub length: f64,
    pub width: f64,
    pub net_height: f64,
    /// How far the net extends past each side line.
    pub net_overhang: f64,
    pub floor_z: f64,
}

impl Default for TableGeometry {
    fn default() -> Self {
        Self { length: 2.74, width: 1.525, net_height: 0.1525, net_overhang: 0.1525, floor_z: -0.76 }
    }
}

impl TableGeometry {
    pub fn half_length(&self) -> f64 {
        0.5 * self.length
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width
    }

    pub fn on_table(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.half_width() && y.abs() <= self.half_length()
    }

    pub fn side_of(&self, y: f64) -> Side {
        if y < 0.0 {
            Side::Robot
        } else {
            Side::Opponent
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlightParams {
    pub air_density: f64,
    pub viscosity: f64,
    pub blunt_drag: f64,
    /// Zero for a sphere; kept for parity with the ellipsoid model.
    pub slender_drag: f64,
    /// Spin decay rate in 1/s.
    pub angular_drag: f64,
    /// Zero for a sphere; kept for parity with the ellipsoid model.
    pub kutta_lift: f64,
    pub magnus_lift: f64,
    pub wind: Vec3,
    pub gravity: f64,
    pub ball_radius: f64,
    pub ball_mass: f64,
    pub dt: f64,
}

impl Default for FlightParams {
    fn default() -> Self {
        Self {
            air_density: 1.225,
            viscosity: 1.8e-5,
            blunt_drag: 0.235,
            slender_drag: 0.25,
            angular_drag: 0.0,
            kutta_lift: 1.0,
            magnus_lift: 1.0,
            wind: Vec3::ZERO,
            gravity: 9.81,
            ball_radius: 0.02,
            ball_mass: 0.0027,
            dt: 0.001,
        }
    }
}

impl FlightParams {
    pub fn validate(&self) -> Result<(), BallisticsError> {
        if !(self.dt > 0.0) {
            return Err(BallisticsError::InvalidParams("dt must be positive".into()));
        }
        if !(self.air_density > 0.0 && self.ball_radius > 0.0 && self.ball_mass > 0.0) {
            return Err(BallisticsError::InvalidParams("density, radius and mass must be positive".into()));
        }
        Ok(())
    }

    /// Gravity, drag and Magnus switched off except gravity.
    pub fn vacuum() -> Self {
        Self { viscosity: 0.0, blunt_drag: 0.0, magnus_lift: 0.0, angular_drag: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    pub table_restitution_normal: f64,
    pub table_friction: f64,
    pub table_spin_coupling: f64,
    pub paddle_restitution_topspin: f64,
    pub paddle_restitution_underspin: f64,
    pub paddle_friction: f64,
    pub paddle_spin_transfer: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            table_restitution_normal: 0.9,
            table_friction: 0.1,
            table_spin_coupling: 1.0,
            paddle_restitution_topspin: 0.85,
            paddle_restitution_underspin: 0.6,
            paddle_friction: 1.5,
            paddle_spin_transfer: 1.0,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<(), BallisticsError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.table_restitution_normal)
            && unit(self.paddle_restitution_topspin)
            && unit(self.paddle_restitution_underspin))
        {
            return Err(BallisticsError::InvalidParams("restitutions must lie in [0, 1]".into()));
        }
        if self.table_friction < 0.0 || self.paddle_friction < 0.0 {
            return Err(BallisticsError::InvalidParams("friction must be non-negative".into()));
        }
        Ok(())
    }

    pub fn paddle_restitution(&self, class: SpinClass) -> f64 {
        match class {
            SpinClass::Topspin => self.paddle_restitution_topspin,
            SpinClass::Underspin => self.paddle_restitution_underspin,
        }
    }
}

/// Flight, contact and table parameters travelling together.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Physics {
    pub flight: FlightParams,
    pub contact: ContactParams,
    pub geometry: TableGeometry,
}

impl Physics {
    pub fn propagator(&self, state: BallState) -> Propagator<'_> {
        Propagator::new(state, &self.flight, &self.contact, &self.geometry)
    }

    pub fn simulate(&self, initial: &BallState, horizon: f64) -> Result<Trajectory, BallisticsError> {
        simulate_trajectory(initial, &self.flight, &self.contact, &self.geometry, horizon)
    }

    pub fn validate(&self) -> Result<(), BallisticsError> {
        self.flight.validate()?;
        self.contact.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BallState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub spin: Vec3,
}

impl BallState {
    pub fn new(position: Vec3, velocity: Vec3, spin: Vec3) -> Self {
        Self { position, velocity, spin }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite() && self.spin.is_finite()
    }

    pub fn to_array(&self) -> [f64; 9] {
        let (p, v, w) = (self.position, self.velocity, self.spin);
        [p.x, p.y, p.z, v.x, v.y, v.z, w.x, w.y, w.z]
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self::new(Vec3::from_slice(&a[0..3]), Vec3::from_slice(&a[3..6]), Vec3::from_slice(&a[6..9]))
    }

    /// Position and velocity, the key used by skill descriptors.
    pub fn key6(&self) -> [f64; 6] {
        let (p, v) = (self.position, self.velocity);
        [p.x, p.y, p.z, v.x, v.y, v.z]
    }

    fn kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass * self.velocity.norm_squared()
    }

    /// Translational kinetic plus gravitational potential energy.
    pub fn mechanical_energy(&self, params: &FlightParams) -> f64 {
        self.kinetic_energy(params.ball_mass) + params.ball_mass * params.gravity * self.position.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddleState {
    pub position: Vec3,
    pub normal: Vec3,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
}

impl PaddleState {
    pub fn at_rest(position: Vec3, normal: Vec3) -> Self {
        Self { position, normal: normal.normalized(), velocity: Vec3::ZERO, angular_velocity: Vec3::ZERO }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinClass {
    Topspin,
    Underspin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Robot,
    Opponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StyleSide {
    Forehand,
    Center,
    Backhand,
}

impl StyleSide {
    pub fn mirrored(self) -> StyleSide {
        match self {
            StyleSide::Forehand => StyleSide::Backhand,
            StyleSide::Backhand => StyleSide::Forehand,
            StyleSide::Center => StyleSide::Center,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Fast,
    Normal,
    Slow,
    Topspin,
    Nospin,
    Underspin,
    Lob,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Fast,
        Category::Normal,
        Category::Slow,
        Category::Topspin,
        Category::Nospin,
        Category::Underspin,
        Category::Lob,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Fast => "Fast",
            Category::Normal => "Normal",
            Category::Slow => "Slow",
            Category::Topspin => "Topspin",
            Category::Nospin => "Nospin",
            Category::Underspin => "Underspin",
            Category::Lob => "Lob",
        }
    }
}

/// Category membership of one ball: one speed label, one spin label and an
/// optional lob flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BallCategory {
    pub speed: Category,
    pub spin: Category,
    pub lob: bool,
}

impl BallCategory {
    pub fn contains(&self, c: Category) -> bool {
        self.speed == c || self.spin == c || (self.lob && c == Category::Lob)
    }

    pub fn labels(&self) -> Vec<Category> {
        let mut v = vec![self.speed, self.spin];
        if self.lob {
            v.push(Category::Lob);
        }
        v
    }

    pub fn paddle_class(&self) -> SpinClass {
        if self.spin == Category::Underspin {
            SpinClass::Underspin
        } else {
            SpinClass::Topspin
        }
    }
}

pub fn classify_category(state: &BallState) -> BallCategory {
    let vy = state.velocity.y.abs();
    let wx = state.spin.x;
    let speed = if vy > 7.0 {
        Category::Fast
    } else if vy >= 3.5 {
        Category::Normal
    } else {
        Category::Slow
    };
    let spin = if wx > 50.0 {
        Category::Topspin
    } else if wx >= -25.0 {
        Category::Nospin
    } else {
        Category::Underspin
    };
    let lob = vy < 5.1 && state.velocity.z > 2.5;
    BallCategory { speed, spin, lob }
}

/// Contact parameter set the physical paddle uses for an incoming ball.
pub fn physical_spin_class(state: &BallState) -> SpinClass {
    classify_category(state).paddle_class()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroForces {
    pub drag: Vec3,
    pub magnus: Vec3,
}

pub fn aero_forces(state: &BallState, params: &FlightParams) -> AeroForces {
    let r = params.ball_radius;
    let v_rel = state.velocity - params.wind;
    let area = std::f64::consts::PI * r * r;
    let volume = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
    let quadratic = -0.5 * params.air_density * params.blunt_drag * area * v_rel.norm();
    let viscous = -6.0 * std::f64::consts::PI * params.viscosity * r;
    let drag = v_rel * (quadratic + viscous);
    let magnus = state.spin.cross(v_rel) * (params.magnus_lift * params.air_density * volume);
    AeroForces { drag, magnus }
}

fn acceleration(state: &BallState, params: &FlightParams) -> Vec3 {
    let f = aero_forces(state, params);
    Vec3::new(0.0, 0.0, -params.gravity) + (f.drag + f.magnus) / params.ball_mass
}

fn drift(state: &BallState, accel: Vec3, params: &FlightParams, dt: f64) -> BallState {
    let decay = (1.0 - params.angular_drag * dt).max(0.0);
    BallState {
        position: state.position + state.velocity * dt + accel * (0.5 * dt * dt),
        velocity: state.velocity + accel * dt,
        spin: state.spin * decay,
    }
}

/// One integration step of free flight.
pub fn step_flight(state: &BallState, params: &FlightParams) -> Result<BallState, BallisticsError> {
    if !state.is_finite() {
        return Err(BallisticsError::InvalidState("non-finite component"));
    }
    params.validate()?;
    Ok(drift(state, acceleration(state, params), params, params.dt))
}

// Impulse along a slipping contact, shared by table and paddle.
// `u` is the slip velocity of the contact point, `jn` the normal impulse per
// unit mass, `r` the lever arm from the ball centre to the contact point.
fn friction_impulse(u: Vec3, jn: f64, mu: f64, r: Vec3, radius: f64, coupling: f64) -> (Vec3, Vec3) {
    let slip = u.norm();
    if slip <= 0.0 || mu <= 0.0 {
        return (Vec3::ZERO, Vec3::ZERO);
    }
    // k^2 = I/m for a thin shell; stopping the slip needs |u| / (1 + r^2/k^2).
    let k2 = 2.0 / 3.0 * radius * radius;
    let stop = slip / (1.0 + radius * radius / k2);
    let jt = (mu * jn).min(stop);
    let impulse = u * (-jt / slip);
    let dspin = r.cross(impulse) * (coupling / k2);
    (impulse, dspin)
}

/// Table impact. Requires a descending ball.
pub fn bounce_table(state: &BallState, params: &ContactParams, radius: f64) -> Result<BallState, BallisticsError> {
    if !state.is_finite() {
        return Err(BallisticsError::InvalidState("non-finite component"));
    }
    if state.velocity.z >= 0.0 {
        return Err(BallisticsError::Precondition("table bounce needs a descending ball"));
    }
    let v = state.velocity;
    let jn = (1.0 + params.table_restitution_normal) * (-v.z);
    let r = Vec3::new(0.0, 0.0, -radius);
    let u = Vec3::new(v.x, v.y, 0.0) + state.spin.cross(r);
    let u = Vec3::new(u.x, u.y, 0.0);
    let (jt, dspin) = friction_impulse(u, jn, params.table_friction, r, radius, params.table_spin_coupling);
    Ok(BallState {
        position: state.position,
        velocity: Vec3::new(v.x + jt.x, v.y + jt.y, -params.table_restitution_normal * v.z),
        spin: state.spin + dspin,
    })
}

/// How close the ball centre must be to the paddle plane for a contact.
pub const PADDLE_CONTACT_TOLERANCE: f64 = 0.01;

/// Ball-paddle impact with the restitution set picked by `class`. The paddle
/// is two-sided; the face is the one on the ball's side of the plane.
pub fn contact_paddle(
    ball: &BallState,
    paddle: &PaddleState,
    params: &ContactParams,
    class: SpinClass,
    radius: f64,
) -> Result<BallState, BallisticsError> {
    if !ball.is_finite() || !paddle.position.is_finite() || !paddle.velocity.is_finite() {
        return Err(BallisticsError::InvalidState("non-finite component"));
    }
    let n = paddle.normal;
    if (n.norm() - 1.0).abs() > 1e-9 {
        return Err(BallisticsError::Precondition("paddle normal must be a unit vector"));
    }
    let d = (ball.position - paddle.position).dot(n);
    if d.abs() > radius + PADDLE_CONTACT_TOLERANCE {
        return Err(BallisticsError::Precondition("ball is not within contact distance of the paddle"));
    }
    let contact_point = ball.position - n * (d.signum() * radius);
    let surface_velocity = paddle.velocity + paddle.angular_velocity.cross(contact_point - paddle.position);
    let v_rel = ball.velocity - surface_velocity;
    let face = if d > 0.0 {
        n
    } else if d < 0.0 {
        -n
    } else if v_rel.dot(n) < 0.0 {
        n
    } else {
        -n
    };
    let vn = v_rel.dot(face);
    if vn >= 0.0 {
        return Err(BallisticsError::Precondition("ball is moving away from the paddle"));
    }
    let e = params.paddle_restitution(class);
    let jn = (1.0 + e) * (-vn);
    let r = face * (-radius);
    let tangential = v_rel - face * vn;
    let slip = tangential + ball.spin.cross(r);
    let slip = slip - face * slip.dot(face);
    let (jt, dspin) = friction_impulse(slip, jn, params.paddle_friction, r, radius, params.paddle_spin_transfer);
    let v_out_rel = v_rel + face * jn + jt;
    Ok(BallState { position: ball.position, velocity: surface_velocity + v_out_rel, spin: ball.spin + dspin })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    TableBounce(Side),
    NetCrossing { height: f64 },
    NetFault,
    OutOfPlay,
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::TableBounce(Side::Robot) => "bounce_robot",
            EventKind::TableBounce(Side::Opponent) => "bounce_opponent",
            EventKind::NetCrossing { .. } => "net_crossing",
            EventKind::NetFault => "net_fault",
            EventKind::OutOfPlay => "out_of_play",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub t: f64,
    pub kind: EventKind,
    pub position: Vec3,
}

/// Bounces below this rebound speed count as a dead ball.
const DEAD_BALL_SPEED: f64 = 0.05;

/// Stepwise ball propagation with table, net and out-of-play handling.
#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    pub flight: &'a FlightParams,
    pub contact: &'a ContactParams,
    pub geometry: &'a TableGeometry,
    pub state: BallState,
    pub t: f64,
    pub collide_net: bool,
    pub done: bool,
}

impl<'a> Propagator<'a> {
    pub fn new(
        state: BallState,
        flight: &'a FlightParams,
        contact: &'a ContactParams,
        geometry: &'a TableGeometry,
    ) -> Self {
        Self { flight, contact, geometry, state, t: 0.0, collide_net: true, done: false }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    /// Advance one `dt`, appending any events to `events`.
    pub fn step(&mut self, events: &mut Vec<TrajectoryEvent>) -> Result<(), BallisticsError> {
        if self.done {
            return Ok(());
        }
        if !self.state.is_finite() {
            return Err(BallisticsError::InvalidState("non-finite component"));
        }
        let dt = self.flight.dt;
        let r = self.flight.ball_radius;
        let s0 = self.state;
        let a0 = acceleration(&s0, self.flight);
        let mut s1 = drift(&s0, a0, self.flight, dt);

        if (s0.position.y > 0.0) != (s1.position.y > 0.0) && s0.position.y != s1.position.y {
            let f = s0.position.y / (s0.position.y - s1.position.y);
            let x = s0.position.x + f * (s1.position.x - s0.position.x);
            let z = s0.position.z + f * (s1.position.z - s0.position.z);
            let at = Vec3::new(x, 0.0, z);
            let in_net_span = x.abs() <= self.geometry.half_width() + self.geometry.net_overhang;
            if self.collide_net && in_net_span && z > -r && z < self.geometry.net_height + r {
                events.push(TrajectoryEvent { t: self.t + f * dt, kind: EventKind::NetFault, position: at });
                self.state = s1;
                self.t += dt;
                self.done = true;
                return Ok(());
            }
            if z > 0.0 {
                events.push(TrajectoryEvent { t: self.t + f * dt, kind: EventKind::NetCrossing { height: z }, position: at });
            }
        }

        if s0.position.z >= r && s1.position.z < r {
            if let Some(tau) = descent_root(s0.position.z - r, s0.velocity.z, a0.z, dt) {
                let hit = drift(&s0, a0, self.flight, tau);
                if self.geometry.on_table(hit.position.x, hit.position.y) && hit.velocity.z < 0.0 {
                    let bounced = bounce_table(&hit, self.contact, r)?;
                    events.push(TrajectoryEvent {
                        t: self.t + tau,
                        kind: EventKind::TableBounce(self.geometry.side_of(hit.position.y)),
                        position: hit.position,
                    });
                    if bounced.velocity.z < DEAD_BALL_SPEED {
                        events.push(TrajectoryEvent { t: self.t + tau, kind: EventKind::OutOfPlay, position: hit.position });
                        self.state = bounced;
                        self.t += dt;
                        self.done = true;
                        return Ok(());
                    }
                    let rest = dt - tau;
                    s1 = drift(&bounced, acceleration(&bounced, self.flight), self.flight, rest);
                }
            }
        }

        self.state = s1;
        self.t += dt;
        let p = s1.position;
        if p.z < self.geometry.floor_z + r || p.y.abs() > 6.0 || p.x.abs() > 4.0 {
            events.push(TrajectoryEvent { t: self.t, kind: EventKind::OutOfPlay, position: p });
            self.done = true;
        }
        Ok(())
    }
}

// Smallest tau in [0, dt] with h + v tau + a tau^2 / 2 = 0, given h >= 0.
fn descent_root(h: f64, v: f64, a: f64, dt: f64) -> Option<f64> {
    let qa = 0.5 * a;
    let tau = if qa.abs() < 1e-15 {
        if v >= 0.0 {
            return None;
        }
        -h / v
    } else {
        let disc = v * v - 4.0 * qa * h;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Numerically stable pair of roots.
        let q = -0.5 * (v + v.signum() * sq);
        let r1 = q / qa;
        let r2 = if q != 0.0 { h / q } else { r1 };
        let mut best: Option<f64> = None;
        for r in [r1, r2] {
            if r >= 0.0 && r <= dt * (1.0 + 1e-12) {
                best = Some(best.map_or(r, |b: f64| b.min(r)));
            }
        }
        return best.map(|t| t.min(dt));
    };
    (0.0..=dt).contains(&tau).then_some(tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: BallState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub events: Vec<TrajectoryEvent>,
}

impl Trajectory {
    pub fn first_bounce(&self) -> Option<&TrajectoryEvent> {
        self.events.iter().find(|e| matches!(e.kind, EventKind::TableBounce(_)))
    }

    pub fn first_bounce_on(&self, side: Side) -> Option<&TrajectoryEvent> {
        self.events.iter().find(|e| e.kind == EventKind::TableBounce(side))
    }

    pub fn net_crossing_height(&self) -> Option<f64> {
        self.events.iter().find_map(|e| match e.kind {
            EventKind::NetCrossing { height } => Some(height),
            _ => None,
        })
    }

    pub fn net_fault(&self) -> bool {
        self.events.iter().any(|e| e.kind == EventKind::NetFault)
    }

    pub fn final_state(&self) -> Option<&BallState> {
        self.samples.last().map(|s| &s.state)
    }

    /// Delimited export: `t,px,py,pz,vx,vy,vz,wx,wy,wz,event`. Event rows
    /// are interleaved at their own timestamps with the state of the sample
    /// that follows them.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,px,py,pz,vx,vy,vz,wx,wy,wz,event\n");
        let mut ev = self.events.iter().peekable();
        for s in &self.samples {
            let mut label = String::new();
            while let Some(e) = ev.peek() {
                if e.t <= s.t + 1e-12 {
                    if !label.is_empty() {
                        label.push('|');
                    }
                    label.push_str(e.kind.label());
                    ev.next();
                } else {
                    break;
                }
            }
            let a = s.state.to_array();
            out.push_str(&format!("{:.6}", s.t));
            for v in a {
                out.push_str(&format!(",{v:.9}"));
            }
            out.push(',');
            out.push_str(&label);
            out.push('\n');
        }
        out
    }
}

pub fn simulate_trajectory(
    initial: &BallState,
    flight: &FlightParams,
    contact: &ContactParams,
    geometry: &TableGeometry,
    horizon: f64,
) -> Result<Trajectory, BallisticsError> {
    if !(horizon > 0.0) {
        return Err(BallisticsError::Precondition("horizon must be positive"));
    }
    if !initial.is_finite() {
        return Err(BallisticsError::InvalidState("non-finite component"));
    }
    flight.validate()?;
    let steps = (horizon / flight.dt).round() as usize;
    let mut prop = Propagator::new(*initial, flight, contact, geometry);
    let mut traj = Trajectory { samples: Vec::with_capacity(steps + 1), events: Vec::new() };
    traj.samples.push(TrajectorySample { t: 0.0, state: *initial });
    for i in 1..=steps {
        prop.step(&mut traj.events)?;
        traj.samples.push(TrajectorySample { t: i as f64 * flight.dt, state: prop.state });
        if prop.done {
            break;
        }
    }
    Ok(traj)
}

/// Where a ball first descends through `z = plane` in free flight (no table,
/// no net), with the state at that moment. Used for aiming.
pub fn plane_crossing(state: &BallState, flight: &FlightParams, plane: f64, max_t: f64) -> Option<(f64, BallState)> {
    let dt = flight.dt;
    let mut s = *state;
    let mut t = 0.0;
    while t < max_t {
        let a = acceleration(&s, flight);
        let next = drift(&s, a, flight, dt);
        if s.position.z >= plane && next.position.z < plane {
            let tau = descent_root(s.position.z - plane, s.velocity.z, a.z, dt).unwrap_or(dt);
            return Some((t + tau, drift(&s, a, flight, tau)));
        }
        if !next.is_finite() || next.position.z < flight.ball_radius - 5.0 {
            return None;
        }
        s = next;
        t += dt;
    }
    None
}

/// Solves for the lateral and vertical launch velocity that makes a ball with
/// the given forward speed first reach table height at `target`.
///
/// Returns the velocity and the remaining landing miss distance.
pub fn aim_velocity(
    start: Vec3,
    spin: Vec3,
    target: Vec2,
    forward_speed: f64,
    flight: &FlightParams,
    initial_guess: Option<Vec3>,
) -> Option<(Vec3, f64)> {
    let dy = target.y - start.y;
    if dy.abs() < 1e-6 || forward_speed <= 0.0 {
        return None;
    }
    let vy = forward_speed * dy.signum();
    let r = flight.ball_radius;
    let mut v = initial_guess.unwrap_or_else(|| {
        let t = dy / vy;
        Vec3::new((target.x - start.x) / t, vy, (r - start.z + 0.5 * flight.gravity * t * t) / t)
    });
    v.y = vy;
    let land = |v: Vec3| -> Option<(f64, f64)> {
        plane_crossing(&BallState::new(start, v, spin), flight, r, 3.0).map(|(_, s)| (s.position.x, s.position.y))
    };
    let h = 1e-3;
    let mut best = (v, f64::INFINITY);
    for _ in 0..8 {
        let (x0, y0) = land(v)?;
        let (ex, ey) = (x0 - target.x, y0 - target.y);
        let miss = (ex * ex + ey * ey).sqrt();
        if miss < best.1 {
            best = (v, miss);
        }
        if miss < 2e-4 {
            break;
        }
        let (x1, y1) = land(v + Vec3::new(h, 0.0, 0.0))?;
        let (x2, y2) = land(v + Vec3::new(0.0, 0.0, h))?;
        let (j11, j21) = ((x1 - x0) / h, (y1 - y0) / h);
        let (j12, j22) = ((x2 - x0) / h, (y2 - y0) / h);
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-12 {
            break;
        }
        let dvx = (j22 * ex - j12 * ey) / det;
        let dvz = (-j21 * ex + j11 * ey) / det;
        v.x -= dvx.clamp(-3.0, 3.0);
        v.z -= dvz.clamp(-3.0, 3.0);
    }
    Some(best)
}

/// Lateral bands used to annotate style sides at the robot back line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleBands {
    pub center_half_width: f64,
    /// +1 when positive `x` is the robot forehand side.
    pub forehand_sign: f64,
}

impl Default for StyleBands {
    fn default() -> Self {
        Self { center_half_width: 0.2, forehand_sign: 1.0 }
    }
}

impl StyleBands {
    pub fn classify(&self, lateral: f64) -> StyleSide {
        let x = lateral * self.forehand_sign;
        if x > self.center_half_width {
            StyleSide::Forehand
        } else if x < -self.center_half_width {
            StyleSide::Backhand
        } else {
            StyleSide::Center
        }
    }
}

/// Lateral position where the ball passes the robot back line `y = -L/2`.
pub fn back_line_intercept(
    initial: &BallState,
    flight: &FlightParams,
    contact: &ContactParams,
    geometry: &TableGeometry,
) -> Result<f64, BallisticsError> {
    let line = -geometry.half_length();
    if initial.position.y <= line {
        return Err(BallisticsError::NotClassifiable);
    }
    let mut prop = Propagator::new(*initial, flight, contact, geometry);
    let mut events = Vec::new();
    let max_steps = (4.0 / flight.dt) as usize;
    for _ in 0..max_steps {
        let prev = prop.state.position;
        prop.step(&mut events)?;
        let cur = prop.state.position;
        if cur.y <= line {
            let f = (prev.y - line) / (prev.y - cur.y);
            return Ok(prev.x + f * (cur.x - prev.x));
        }
        if prop.done {
            break;
        }
    }
    Err(BallisticsError::NotClassifiable)
}

pub fn annotate_style_side(
    initial: &BallState,
    flight: &FlightParams,
    contact: &ContactParams,
    geometry: &TableGeometry,
    bands: &StyleBands,
) -> Result<StyleSide, BallisticsError> {
    back_line_intercept(initial, flight, contact, geometry).map(|x| bands.classify(x))
}
