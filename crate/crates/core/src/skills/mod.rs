//! Low-level stroke skills: a roster of scripted strokes with distinct
//! targets and noise, a small trainable policy skill, the episode runner that
//! executes them at 50 Hz, and the training reward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{BallisticsError, SpinClass, StyleSide};
use crate::optimizer::OptimizerError;
use crate::vec3::{Vec2, Vec3};

pub mod episode;
pub mod planner;
pub mod policy;
pub mod reward;

pub use episode::*;
pub use planner::*;
pub use policy::*;
pub use reward::*;

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("transcript is missing the {0} channel")]
    MissingChannel(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no training balls available: {0}")]
    NoData(String),
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize, checkpoint: Vec<f64> },
    #[error("skill {0} has no trainable policy")]
    NotTrainable(usize),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Ballistics(#[from] BallisticsError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

/// Forehand or backhand play posture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Style {
    Forehand,
    Backhand,
}

impl Style {
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Style::Forehand => [1.0, 0.0],
            Style::Backhand => [0.0, 1.0],
        }
    }

    pub fn side(self) -> StyleSide {
        match self {
            Style::Forehand => StyleSide::Forehand,
            Style::Backhand => StyleSide::Backhand,
        }
    }

    pub fn mirrored(self) -> Style {
        match self {
            Style::Forehand => Style::Backhand,
            Style::Backhand => Style::Forehand,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkillKind {
    Generalist,
    TargetLeft,
    TargetRight,
    FastHit,
    TopspinServe,
    UnderspinServe,
}

/// Per-episode execution noise, applied to the paddle at impact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionNoise {
    /// Paddle velocity noise per axis, m/s.
    pub velocity: f64,
    /// Paddle face tilt noise, rad.
    pub normal: f64,
}

impl Default for ExecutionNoise {
    fn default() -> Self {
        Self { velocity: 0.1, normal: 0.02 }
    }
}

impl ExecutionNoise {
    pub const NONE: ExecutionNoise = ExecutionNoise { velocity: 0.0, normal: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub id: usize,
    pub name: String,
    pub style: Style,
    pub is_serve_receiver: bool,
    pub kind: SkillKind,
    /// Aim point on the opponent half.
    pub target_landing: Vec2,
    /// Forward speed of the return, m/s.
    pub target_speed: f64,
    pub execution_noise: ExecutionNoise,
    /// Contact parameter set the stroke is tuned for.
    pub spin_preset: SpinClass,
    /// Incoming lateral-axis spin the stroke assumes, rad/s.
    pub assumed_spin_x: f64,
    /// Preferred hitting plane, m.
    pub hit_plane_y: f64,
}

impl SkillSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.target_landing.y > 0.0 && self.target_landing.y <= 1.37 && self.target_landing.x.abs() <= 0.7625) {
            return Err(format!("skill {} aims outside the opponent half", self.id));
        }
        if !(self.target_speed > 0.0) {
            return Err(format!("skill {} needs a positive target speed", self.id));
        }
        Ok(())
    }
}

fn spec(
    id: usize,
    name: &str,
    style: Style,
    kind: SkillKind,
    target: (f64, f64),
    speed: f64,
    noise: (f64, f64),
    hit_plane_y: f64,
) -> SkillSpec {
    let (serve, preset, spin) = match kind {
        SkillKind::TopspinServe => (true, SpinClass::Topspin, 0.0),
        SkillKind::UnderspinServe => (true, SpinClass::Underspin, -60.0),
        _ => (false, SpinClass::Topspin, 0.0),
    };
    SkillSpec {
        id,
        name: name.to_string(),
        style,
        is_serve_receiver: serve,
        kind,
        target_landing: Vec2::new(target.0, target.1),
        target_speed: speed,
        execution_noise: ExecutionNoise { velocity: noise.0, normal: noise.1 },
        spin_preset: preset,
        assumed_spin_x: spin,
        hit_plane_y,
    }
}

/// Default roster: 13 rally skills and 4 serve receivers. "Left" and
/// "right" are from the robot's point of view (right is +x).
pub fn default_roster() -> Vec<SkillSpec> {
    use SkillKind::*;
    use Style::*;
    vec![
        spec(0, "fh-generalist-a", Forehand, Generalist, (0.05, 0.85), 5.0, (0.10, 0.020), -1.50),
        spec(1, "fh-generalist-b", Forehand, Generalist, (0.15, 0.95), 5.5, (0.12, 0.025), -1.55),
        spec(2, "fh-generalist-c", Forehand, Generalist, (-0.10, 0.75), 4.5, (0.09, 0.020), -1.45),
        spec(3, "fh-right", Forehand, TargetRight, (0.45, 0.90), 5.0, (0.12, 0.025), -1.50),
        spec(4, "fh-left-a", Forehand, TargetLeft, (-0.45, 0.90), 5.0, (0.12, 0.025), -1.50),
        spec(5, "fh-left-b", Forehand, TargetLeft, (-0.50, 1.00), 5.5, (0.14, 0.030), -1.55),
        spec(6, "fh-left-c", Forehand, TargetLeft, (-0.35, 0.70), 4.5, (0.10, 0.020), -1.45),
        spec(7, "fh-right-fast", Forehand, FastHit, (0.40, 1.00), 7.0, (0.22, 0.040), -1.60),
        spec(8, "fh-left-fast", Forehand, FastHit, (-0.40, 1.00), 7.0, (0.22, 0.040), -1.60),
        spec(9, "bh-generalist", Backhand, Generalist, (0.0, 0.85), 5.0, (0.11, 0.022), -1.50),
        spec(10, "bh-fast", Backhand, FastHit, (0.0, 1.00), 7.0, (0.24, 0.045), -1.60),
        spec(11, "bh-right", Backhand, TargetRight, (0.45, 0.90), 5.0, (0.13, 0.028), -1.50),
        spec(12, "bh-left", Backhand, TargetLeft, (-0.45, 0.90), 5.0, (0.13, 0.028), -1.50),
        spec(13, "fh-topspin-serve", Forehand, TopspinServe, (0.0, 0.80), 4.0, (0.08, 0.015), -1.50),
        spec(14, "bh-topspin-serve", Backhand, TopspinServe, (0.0, 0.80), 4.0, (0.08, 0.015), -1.50),
        spec(15, "fh-underspin-serve", Forehand, UnderspinServe, (0.0, 0.80), 4.0, (0.08, 0.015), -1.50),
        spec(16, "bh-underspin-serve", Backhand, UnderspinServe, (0.0, 0.80), 4.0, (0.08, 0.015), -1.50),
    ]
}

/// Actuator limits of the paddle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaddleLimits {
    pub max_velocity: f64,
    pub max_acceleration: f64,
    pub max_angular_velocity: f64,
    pub paddle_radius: f64,
}

impl Default for PaddleLimits {
    fn default() -> Self {
        Self { max_velocity: 5.0, max_acceleration: 40.0, max_angular_velocity: 25.0, paddle_radius: 0.075 }
    }
}

/// Velocity command held for one 20 ms control tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PaddleCommand {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl PaddleCommand {
    pub const ZERO: PaddleCommand = PaddleCommand { linear: Vec3::ZERO, angular: Vec3::ZERO };

    /// Clamps both channels to the limits; total over all inputs.
    pub fn clamped(self, limits: &PaddleLimits) -> PaddleCommand {
        let fix = |v: Vec3, max: f64| if v.is_finite() { v.clamp_norm(max) } else { Vec3::ZERO };
        PaddleCommand { linear: fix(self.linear, limits.max_velocity), angular: fix(self.angular, limits.max_angular_velocity) }
    }
}

/// A roster entry: the stroke spec plus, for trained skills, the policy that
/// chooses the contact and an optional adapter on its action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub spec: SkillSpec,
    pub policy: Option<LinearPolicy>,
    pub film: Option<FilmAdapter>,
}

impl Skill {
    pub fn scripted(spec: SkillSpec) -> Self {
        Self { spec, policy: None, film: None }
    }

    pub fn id(&self) -> usize {
        self.spec.id
    }
}

pub fn default_skills() -> Vec<Skill> {
    default_roster().into_iter().map(Skill::scripted).collect()
}
