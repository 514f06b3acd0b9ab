//! Synthetic ball generators: incoming rally balls, serves and observed
//! position streams with known ground truth.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{validate_incoming, Dataset, ObservedTrajectory};
use crate::ballistics::{aim_velocity, BallState, EventKind, Physics, Side, StyleBands, Trajectory};
use crate::vec3::{Vec2, Vec3};

/// Category mixture of generated rally balls, roughly the proportions of a
/// mature collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RallyMix {
    pub fast: f64,
    pub slow: f64,
    pub lob: f64,
    pub topspin: f64,
    pub underspin: f64,
    /// Lateral range of the landing point on the robot half, m.
    pub landing_x: (f64, f64),
    pub landing_y: (f64, f64),
}

impl Default for RallyMix {
    fn default() -> Self {
        Self {
            fast: 0.08,
            slow: 0.08,
            lob: 0.06,
            topspin: 0.37,
            underspin: 0.10,
            landing_x: (-0.65, 0.65),
            landing_y: (-1.25, -0.3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpinKind {
    Topspin,
    Nospin,
    Underspin,
}

pub fn spin_for<R: Rng + ?Sized>(kind: SpinKind, rng: &mut R) -> Vec3 {
    let wx = match kind {
        SpinKind::Topspin => rng.random_range(55.0..150.0),
        SpinKind::Nospin => rng.random_range(-20.0..45.0),
        SpinKind::Underspin => rng.random_range(-130.0..-30.0),
    };
    let side = Normal::new(0.0, 12.0).unwrap();
    Vec3::new(wx, side.sample(rng), side.sample(rng))
}

/// Launches a ball from `start` so that it first reaches table height at
/// `target`, then checks it crosses the net and bounces on the robot half.
pub fn aimed_ball(start: Vec3, target: Vec2, speed: f64, spin: Vec3, physics: &Physics) -> Option<BallState> {
    let (v, miss) = aim_velocity(start, spin, target, speed, &physics.flight, None)?;
    if miss > 0.01 {
        return None;
    }
    let s = BallState::new(start, v, spin);
    validate_incoming(&s, physics).then_some(s)
}

/// One valid incoming rally ball drawn from the mixture.
pub fn rally_ball<R: Rng + ?Sized>(mix: &RallyMix, physics: &Physics, rng: &mut R) -> BallState {
    rally_ball_from(mix, None, physics, rng)
}

/// As [`rally_ball`], with the hitter standing near lateral `start_x` when
/// given.
pub fn rally_ball_from<R: Rng + ?Sized>(mix: &RallyMix, start_x: Option<f64>, physics: &Physics, rng: &mut R) -> BallState {
    loop {
        let u: f64 = rng.random();
        let (speed, start_y, start_z) = if u < mix.lob {
            (rng.random_range(2.6..4.6), rng.random_range(2.3..3.0), rng.random_range(0.1..0.4))
        } else if u < mix.lob + mix.fast {
            (rng.random_range(7.2..9.5), rng.random_range(1.7..2.4), rng.random_range(0.25..0.5))
        } else if u < mix.lob + mix.fast + mix.slow {
            (rng.random_range(2.6..3.45), rng.random_range(1.5..2.0), rng.random_range(0.15..0.4))
        } else {
            (rng.random_range(3.6..6.9), rng.random_range(1.6..2.4), rng.random_range(0.15..0.45))
        };
        let v: f64 = rng.random();
        let kind = if v < mix.topspin {
            SpinKind::Topspin
        } else if v < mix.topspin + mix.underspin {
            SpinKind::Underspin
        } else {
            SpinKind::Nospin
        };
        let mut x = rng.random_range(-0.7..0.7);
        if let Some(sx) = start_x {
            x = (sx + 0.15 * x).clamp(-0.8, 0.8);
        }
        let start = Vec3::new(x, start_y, start_z);
        let target = Vec2::new(rng.random_range(mix.landing_x.0..mix.landing_x.1), rng.random_range(mix.landing_y.0..mix.landing_y.1));
        if let Some(s) = aimed_ball(start, target, speed, spin_for(kind, rng), physics) {
            return s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeMix {
    pub underspin: f64,
    pub topspin: f64,
    pub speed: (f64, f64),
    /// Lateral placement of the server, m.
    pub start_x: (f64, f64),
}

impl Default for ServeMix {
    fn default() -> Self {
        Self { underspin: 0.3, topspin: 0.05, speed: (2.2, 4.2), start_x: (-0.6, 0.6) }
    }
}

/// A serve: first bounce on the server's half, then over the net onto the
/// robot half.
pub fn serve_ball<R: Rng + ?Sized>(mix: &ServeMix, physics: &Physics, rng: &mut R) -> (BallState, SpinKind) {
    let kind = serve_kind(mix, rng);
    loop {
        if let Some(s) = try_serve(kind, mix, physics, rng) {
            return (s, kind);
        }
    }
}

pub fn serve_kind<R: Rng + ?Sized>(mix: &ServeMix, rng: &mut R) -> SpinKind {
    let v: f64 = rng.random();
    if v < mix.underspin {
        SpinKind::Underspin
    } else if v < mix.underspin + mix.topspin {
        SpinKind::Topspin
    } else {
        SpinKind::Nospin
    }
}

pub fn try_serve<R: Rng + ?Sized>(kind: SpinKind, mix: &ServeMix, physics: &Physics, rng: &mut R) -> Option<BallState> {
    let half = physics.geometry.half_length();
    let start = Vec3::new(rng.random_range(mix.start_x.0..mix.start_x.1), half + rng.random_range(0.05..0.3), rng.random_range(0.08..0.3));
    let target = Vec2::new(start.x * rng.random_range(0.3..0.9), rng.random_range(0.45..1.0));
    let speed = rng.random_range(mix.speed.0..mix.speed.1);
    let spin = spin_for(kind, rng);
    let (v, miss) = aim_velocity(start, spin, target, speed, &physics.flight, None)?;
    if miss > 0.01 {
        return None;
    }
    let s = BallState::new(start, v, spin);
    let traj = physics.simulate(&s, 2.5).ok()?;
    let first = traj.first_bounce()?;
    if first.kind != EventKind::TableBounce(Side::Opponent) {
        return None;
    }
    validate_incoming(&s, physics).then_some(s)
}

/// A corpus of `n_rally` rally balls and `n_serve` serves, all in `cycle`.
pub fn generate_corpus<R: Rng + ?Sized>(
    n_rally: usize,
    n_serve: usize,
    cycle: u32,
    rally: &RallyMix,
    serve: &ServeMix,
    physics: &Physics,
    bands: &StyleBands,
    rng: &mut R,
) -> Dataset {
    let mut d = Dataset::new();
    while d.len() < n_rally {
        let s = rally_ball(rally, physics, rng);
        let _ = d.push_state(s, false, cycle, physics, bands);
    }
    while d.len() < n_rally + n_serve {
        let (s, _) = serve_ball(serve, physics, rng);
        let _ = d.push_state(s, true, cycle, physics, bands);
    }
    d
}

/// Positions sampled at `rate_hz` from a simulated trajectory, with Gaussian
/// noise of `noise` m per axis, timestamps shifted by `t_offset`.
pub fn observe<R: Rng + ?Sized>(traj: &Trajectory, rate_hz: f64, noise: f64, t_offset: f64, rng: &mut R) -> Vec<(f64, Vec3)> {
    let period = 1.0 / rate_hz;
    let Some(last) = traj.samples.last() else { return vec![] };
    let dt = if traj.samples.len() > 1 { traj.samples[1].t - traj.samples[0].t } else { period };
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 * period;
        if t > last.t + 1e-12 {
            break;
        }
        let i = ((t / dt).round() as usize).min(traj.samples.len() - 1);
        let p = traj.samples[i].state.position;
        let mut n = || noise * rng.sample::<f64, _>(StandardNormal);
        out.push((t + t_offset, p + Vec3::new(n(), n(), n())));
        k += 1;
    }
    out
}

/// Noiseless 125 Hz observation of `state` for `duration` seconds.
pub fn observe_flight(state: &BallState, duration: f64, physics: &Physics) -> Option<ObservedTrajectory> {
    let traj = physics.simulate(state, duration).ok()?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    ObservedTrajectory::new(observe(&traj, 125.0, 0.0, 0.0, &mut rng), "synthetic").ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub stream: ObservedTrajectory,
    /// Times of the paddle hits inside the stream.
    pub hit_times: Vec<f64>,
}

/// A rally stream at 125 Hz: an incoming ball, a robot return, then the
/// opponent's next ball, with the two hits at known times.
pub fn synthetic_rally_stream<R: Rng + ?Sized>(physics: &Physics, noise: f64, rng: &mut R) -> SyntheticStream {
    let period = 1.0 / 125.0;
    loop {
        let incoming = rally_ball(&RallyMix { fast: 0.0, lob: 0.0, slow: 0.0, ..Default::default() }, physics, rng);
        let Ok(a) = physics.simulate(&incoming, 2.0) else { continue };
        // Robot hit shortly after the robot-side bounce, at the sample grid.
        let Some(bounce) = a.first_bounce_on(Side::Robot) else { continue };
        let t1 = ((bounce.t + 0.12) / period).ceil() * period;
        let i1 = (t1 / physics.flight.dt).round() as usize;
        if i1 >= a.samples.len() {
            continue;
        }
        let hit1 = a.samples[i1].state;
        let ret_target = Vec2::new(rng.random_range(-0.5..0.5), rng.random_range(0.5..1.1));
        let Some((v, miss)) = aim_velocity(hit1.position, Vec3::new(-40.0, 0.0, 0.0), ret_target, 5.0, &physics.flight, None)
        else {
            continue;
        };
        if miss > 0.01 {
            continue;
        }
        let Ok(b) = physics.simulate(&BallState::new(hit1.position, v, Vec3::new(-40.0, 0.0, 0.0)), 2.0) else { continue };
        if b.net_fault() {
            continue;
        }
        let Some(bounce_b) = b.first_bounce_on(Side::Opponent) else { continue };
        let t2_rel = ((bounce_b.t + 0.15) / period).ceil() * period;
        let i2 = (t2_rel / physics.flight.dt).round() as usize;
        if i2 >= b.samples.len() {
            continue;
        }
        let hit2 = b.samples[i2].state;
        let next = Vec2::new(rng.random_range(-0.5..0.5), rng.random_range(-1.1..-0.5));
        let Some(c_state) = aimed_ball(hit2.position, next, 5.0, Vec3::new(50.0, 0.0, 0.0), physics) else { continue };
        let Ok(c) = physics.simulate(&c_state, 0.6) else { continue };
        let mut samples = Vec::new();
        let mut push = |traj: &Trajectory, until: f64, offset: f64, rng: &mut R| {
            let cut = Trajectory { samples: traj.samples.iter().filter(|s| s.t < until - 1e-9).copied().collect(), events: vec![] };
            samples.extend(observe(&cut, 125.0, noise, offset, rng));
        };
        push(&a, t1, 0.0, rng);
        push(&b, t2_rel, t1, rng);
        push(&c, f64::INFINITY, t1 + t2_rel, rng);
        let Ok(stream) = ObservedTrajectory::new(samples, "synthetic-rally") else { continue };
        return SyntheticStream { stream, hit_times: vec![t1, t1 + t2_rel] };
    }
}
