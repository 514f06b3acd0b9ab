//! Scripted opponents standing in for human players.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ballistics::{BallState, Physics, StyleSide};
use crate::dataset::synth::{rally_ball_from, serve_kind, try_serve, RallyMix, ServeMix, SpinKind};
use crate::hlc::opponent_side;
use crate::vec3::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Beginner,
    Intermediate,
    Advanced,
    AdvancedPlus,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Beginner, Tier::Intermediate, Tier::Advanced, Tier::AdvancedPlus];

    pub fn tag(self) -> &'static str {
        match self {
            Tier::Beginner => "beginner",
            Tier::Intermediate => "intermediate",
            Tier::Advanced => "advanced",
            Tier::AdvancedPlus => "advanced_plus",
        }
    }

    pub fn parse(s: &str) -> Option<Tier> {
        Tier::ALL.into_iter().find(|t| t.tag() == s)
    }
}

/// Scripted change of serves from a given game on, aimed at one skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exploit {
    /// First game (1-based) the exploit serves are used in.
    pub from_game: usize,
    pub serve: ServeMix,
    /// Skill the exploit is expected to hurt.
    pub skill_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpponentProfile {
    pub id: String,
    pub tier: Tier,
    pub serve: ServeMix,
    pub rally: RallyMix,
    pub max_return: f64,
    /// Return probability starts falling above this ball speed, m/s.
    pub comfort_speed: f64,
    /// Speed over `comfort_speed` that divides the return probability by e.
    pub speed_falloff: f64,
    /// Where the opponent stands, as a landing point on their half.
    pub position: Vec2,
    pub comfort_radius: f64,
    /// Landings farther than this from `position` are never returned.
    pub reach: f64,
    pub weak_side: Option<StyleSide>,
    pub weak_side_penalty: f64,
    /// Extra probability of touching a ball that is not returned.
    pub touch_margin: f64,
    /// Half-width of the center band when classifying landing sides.
    pub center_half_width: f64,
    pub exploit: Option<Exploit>,
}

impl OpponentProfile {
    pub fn tier(tier: Tier) -> Self {
        let base = Self {
            id: tier.tag().to_string(),
            tier,
            serve: ServeMix::default(),
            rally: RallyMix::default(),
            max_return: 0.7,
            comfort_speed: 4.5,
            speed_falloff: 2.5,
            position: Vec2::new(0.0, 1.0),
            comfort_radius: 0.4,
            reach: 1.1,
            weak_side: Some(StyleSide::Backhand),
            weak_side_penalty: 0.2,
            touch_margin: 0.1,
            center_half_width: 0.2,
            exploit: None,
        };
        match tier {
            Tier::Beginner => Self {
                serve: ServeMix { underspin: 0.1, topspin: 0.1, speed: (2.2, 3.2), ..ServeMix::default() },
                rally: RallyMix { fast: 0.02, slow: 0.2, lob: 0.1, topspin: 0.2, underspin: 0.05, ..RallyMix::default() },
                max_return: 0.55,
                comfort_speed: 3.5,
                speed_falloff: 2.0,
                comfort_radius: 0.3,
                reach: 0.9,
                weak_side_penalty: 0.3,
                ..base
            },
            Tier::Intermediate => base,
            Tier::Advanced => Self {
                serve: ServeMix { underspin: 0.45, topspin: 0.05, speed: (2.4, 4.4), ..ServeMix::default() },
                rally: RallyMix { fast: 0.15, slow: 0.05, lob: 0.03, topspin: 0.45, underspin: 0.12, ..RallyMix::default() },
                max_return: 0.85,
                comfort_speed: 5.5,
                speed_falloff: 3.0,
                comfort_radius: 0.5,
                reach: 1.3,
                weak_side_penalty: 0.1,
                ..base
            },
            Tier::AdvancedPlus => Self {
                serve: ServeMix { underspin: 0.55, topspin: 0.05, speed: (2.6, 4.6), ..ServeMix::default() },
                rally: RallyMix { fast: 0.2, slow: 0.04, lob: 0.02, topspin: 0.5, underspin: 0.12, ..RallyMix::default() },
                max_return: 0.93,
                comfort_speed: 6.5,
                speed_falloff: 4.0,
                comfort_radius: 0.55,
                reach: 1.4,
                weak_side: None,
                weak_side_penalty: 0.0,
                ..base
            },
        }
    }

    /// Misses everything.
    pub fn never_returns() -> Self {
        Self { id: "never-returns".into(), max_return: 0.0, touch_margin: 0.0, ..Self::tier(Tier::Beginner) }
    }

    /// Intermediate player who switches to heavy underspin serves to the
    /// robot's forehand from game 2, hurting the forehand topspin receiver.
    pub fn underspin_exploiter() -> Self {
        let serve = ServeMix { underspin: 1.0, topspin: 0.0, speed: (2.8, 3.5), start_x: (0.25, 0.6) };
        Self {
            id: "underspin-exploiter".into(),
            exploit: Some(Exploit { from_game: 2, serve, skill_id: 13 }),
            ..Self::tier(Tier::Intermediate)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| if (0.0..=1.0).contains(&v) { Ok(()) } else { Err(format!("{name} must lie in [0, 1], got {v}")) };
        unit("max_return", self.max_return)?;
        unit("weak_side_penalty", self.weak_side_penalty)?;
        unit("touch_margin", self.touch_margin)?;
        let mixes = std::iter::once(&self.serve).chain(self.exploit.as_ref().map(|e| &e.serve));
        for m in mixes {
            unit("serve underspin", m.underspin)?;
            unit("serve topspin", m.topspin)?;
            if m.underspin + m.topspin > 1.0 + 1e-12 {
                return Err("serve spin fractions exceed 1".into());
            }
        }
        let r = &self.rally;
        for (n, v) in [("fast", r.fast), ("slow", r.slow), ("lob", r.lob), ("topspin", r.topspin), ("underspin", r.underspin)] {
            unit(n, v)?;
        }
        if r.fast + r.slow + r.lob > 1.0 + 1e-12 || r.topspin + r.underspin > 1.0 + 1e-12 {
            return Err("rally fractions exceed 1".into());
        }
        if !(self.speed_falloff > 0.0) || !(self.reach > 0.0) || self.comfort_radius < 0.0 {
            return Err("speed_falloff and reach must be positive".into());
        }
        Ok(())
    }

    /// Serve mix in force for a 0-based game index.
    pub fn serve_mix(&self, game_index: usize) -> &ServeMix {
        match &self.exploit {
            Some(e) if game_index + 1 >= e.from_game => &e.serve,
            _ => &self.serve,
        }
    }

    /// Probability of returning a ball that landed at `landing` (opponent
    /// half) and left the bounce at `speed`.
    pub fn return_probability(&self, landing: Vec2, speed: f64) -> f64 {
        let d = landing.distance(self.position);
        let dist = if d <= self.comfort_radius {
            1.0
        } else if d >= self.reach {
            0.0
        } else {
            1.0 - (d - self.comfort_radius) / (self.reach - self.comfort_radius)
        };
        let fast = if speed <= self.comfort_speed { 1.0 } else { (-(speed - self.comfort_speed) / self.speed_falloff).exp() };
        let weak = match self.weak_side {
            Some(s) if opponent_side(landing.x, self.center_half_width) == s => 1.0 - self.weak_side_penalty,
            _ => 1.0,
        };
        (self.max_return * dist * fast * weak).clamp(0.0, 1.0)
    }
}

/// What the opponent is responding to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShotContext {
    Serve { game_index: usize },
    /// The robot's return, just after its bounce on the opponent half.
    Rally { landing: Vec2, ball: BallState },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OpponentShot {
    Ball { state: BallState, spin: SpinKind },
    /// `touched` when the opponent got a paddle on it.
    Missed { touched: bool },
}

/// Spin family of a rally ball, from its lateral-axis spin.
pub fn spin_bucket(spin_x: f64) -> SpinKind {
    if spin_x > 50.0 {
        SpinKind::Topspin
    } else if spin_x < -25.0 {
        SpinKind::Underspin
    } else {
        SpinKind::Nospin
    }
}

pub fn opponent_shot<R: Rng + ?Sized>(profile: &OpponentProfile, ctx: ShotContext, physics: &Physics, rng: &mut R) -> OpponentShot {
    match ctx {
        ShotContext::Serve { game_index } => {
            let mix = profile.serve_mix(game_index);
            let kind = serve_kind(mix, rng);
            loop {
                if let Some(s) = try_serve(kind, mix, physics, rng) {
                    return OpponentShot::Ball { state: s, spin: kind };
                }
            }
        }
        ShotContext::Rally { landing, ball } => {
            let p = profile.return_probability(landing, ball.velocity.norm());
            let u: f64 = rng.random();
            if u < p {
                let state = rally_ball_from(&profile.rally, Some(landing.x), physics, rng);
                OpponentShot::Ball { state, spin: spin_bucket(state.spin.x) }
            } else {
                OpponentShot::Missed { touched: u < (p + profile.touch_margin).min(1.0) && p > 0.0 }
            }
        }
    }
}
