//! Forehand/backhand selection. A linear score over a few ball features,
//! initialised to the table-half rule and tuned with ES on paired outcomes
//! of a frozen forehand and backhand generalist.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HlcError;
use crate::ballistics::{back_line_intercept, BallState, Physics};
use crate::descriptors::episode_seed;
use crate::optimizer::{self, EsConfig};
use crate::skills::{run_skill, EpisodeConfig, Skill, Style};

pub const STYLE_FEATURE_DIM: usize = 7;

// Rough feature magnitudes so one ES step size suits all weights.
const FEATURE_SCALES: [f64; STYLE_FEATURE_DIM] = [0.5, 0.5, 0.3, 1.5, 5.0, 2.0, 1.0];

/// Lateral position where the ball crosses the robot back line, ignoring
/// spin (it is not observed). Falls back to a straight-line extrapolation.
pub fn predicted_lateral(obs: &BallState, physics: &Physics) -> f64 {
    let mut b = *obs;
    b.spin = crate::vec3::Vec3::ZERO;
    match back_line_intercept(&b, &physics.flight, &physics.contact, &physics.geometry) {
        Ok(x) => x,
        Err(_) => {
            let line = -physics.geometry.half_length();
            if b.velocity.y < -1e-6 {
                b.position.x + b.velocity.x * (line - b.position.y) / b.velocity.y
            } else {
                b.position.x
            }
        }
    }
}

/// Features in the forehand frame (lateral terms multiplied by
/// `forehand_sign`): back-line lateral, x, z, vx, vy, vz, bias.
pub fn style_features(obs: &BallState, physics: &Physics, forehand_sign: f64) -> [f64; STYLE_FEATURE_DIM] {
    let lat = predicted_lateral(obs, physics) * forehand_sign;
    let (p, v) = (obs.position, obs.velocity);
    let raw = [lat, p.x * forehand_sign, p.z, v.x * forehand_sign, v.y, v.z, 1.0];
    let mut f = [0.0; STYLE_FEATURE_DIM];
    for i in 0..STYLE_FEATURE_DIM {
        f[i] = raw[i] / FEATURE_SCALES[i];
    }
    f
}

/// Table-half rule on the back-line lateral.
pub fn heuristic_style(features: &[f64; STYLE_FEATURE_DIM]) -> Style {
    if features[0] >= 0.0 {
        Style::Forehand
    } else {
        Style::Backhand
    }
}

pub fn heuristic_weights() -> Vec<f64> {
    let mut w = vec![0.0; STYLE_FEATURE_DIM];
    w[0] = 1.0;
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSelector {
    pub weights: Option<Vec<f64>>,
    pub forehand_sign: f64,
    /// Use the table-half rule when no weights are loaded.
    pub fallback: bool,
}

impl Default for StyleSelector {
    fn default() -> Self {
        Self::heuristic()
    }
}

impl StyleSelector {
    pub fn heuristic() -> Self {
        Self { weights: None, forehand_sign: 1.0, fallback: true }
    }

    pub fn trained(weights: Vec<f64>) -> Self {
        Self { weights: Some(weights), forehand_sign: 1.0, fallback: true }
    }

    pub fn decide(&self, features: &[f64; STYLE_FEATURE_DIM]) -> Result<Style, HlcError> {
        match &self.weights {
            Some(w) => {
                if w.len() != STYLE_FEATURE_DIM {
                    return Err(HlcError::InvalidConfig(format!("style model has {} weights", w.len())));
                }
                let s: f64 = w.iter().zip(features).map(|(a, b)| a * b).sum();
                Ok(if s >= 0.0 { Style::Forehand } else { Style::Backhand })
            }
            None if self.fallback => Ok(heuristic_style(features)),
            None => Err(HlcError::NoStyleModel),
        }
    }

    pub fn select(&self, obs: &BallState, physics: &Physics) -> Result<Style, HlcError> {
        self.decide(&style_features(obs, physics, self.forehand_sign))
    }
}

/// One training ball: its features and the land rates of the two frozen
/// generalists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub features: [f64; STYLE_FEATURE_DIM],
    pub forehand: f64,
    pub backhand: f64,
}

/// Runs both generalists on every ball, `repetitions` times each, with
/// per-ball seeds shared between the two styles.
pub fn paired_outcomes(
    balls: &[BallState],
    forehand: &Skill,
    backhand: &Skill,
    episode: &EpisodeConfig,
    physics: &Physics,
    repetitions: usize,
    seed: u64,
) -> Result<Vec<PairedOutcome>, HlcError> {
    use rand::SeedableRng;
    let reps = repetitions.max(1);
    let mut out = Vec::with_capacity(balls.len());
    for (i, b) in balls.iter().enumerate() {
        let rate = |skill: &Skill| -> Result<f64, HlcError> {
            let mut landed = 0usize;
            for r in 0..reps {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(episode_seed(seed, 0, i as u64, Some(r)));
                landed += run_skill(skill, b, episode, physics, &mut rng)?.outcome.landed() as usize;
            }
            Ok(landed as f64 / reps as f64)
        };
        let fh = rate(forehand)?;
        let bh = rate(backhand)?;
        out.push(PairedOutcome { features: style_features(b, physics, 1.0), forehand: fh, backhand: bh });
    }
    Ok(out)
}

/// Land rate of the hard decisions of `selector` on precomputed outcomes.
pub fn evaluate_style(selector: &StyleSelector, outcomes: &[PairedOutcome]) -> Result<f64, HlcError> {
    if outcomes.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for o in outcomes {
        total += match selector.decide(&o.features)? {
            Style::Forehand => o.forehand,
            Style::Backhand => o.backhand,
        };
    }
    Ok(total / outcomes.len() as f64)
}

fn soft_fitness(w: &[f64], outcomes: &[PairedOutcome], temperature: f64) -> f64 {
    let mut total = 0.0;
    for o in outcomes {
        let s: f64 = w.iter().zip(&o.features).map(|(a, b)| a * b).sum();
        let p = 1.0 / (1.0 + (-s / temperature).exp());
        total += p * o.forehand + (1.0 - p) * o.backhand;
    }
    total / outcomes.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleTrainingConfig {
    pub es: EsConfig,
    pub iterations: usize,
    /// Softness of the forehand probability used during training.
    pub temperature: f64,
    pub validation_fraction: f64,
}

impl Default for StyleTrainingConfig {
    fn default() -> Self {
        Self { es: EsConfig::desk(), iterations: 150, temperature: 0.1, validation_fraction: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleReport {
    pub heuristic_train: f64,
    pub trained_train: f64,
    pub heuristic_validation: f64,
    pub trained_validation: f64,
    /// False when the trained weights lost to the rule on validation and
    /// the rule was kept instead.
    pub kept_trained: bool,
    pub curve: Vec<optimizer::CurveRow>,
}

/// Maximises the expected land rate of a soft forehand/backhand choice,
/// starting from the table-half rule. The last `validation_fraction` of the
/// outcomes only decides whether the trained weights are kept.
pub fn train_style<R: Rng + ?Sized>(
    outcomes: &[PairedOutcome],
    cfg: &StyleTrainingConfig,
    rng: &mut R,
) -> Result<(StyleSelector, StyleReport), HlcError> {
    if outcomes.is_empty() {
        return Err(HlcError::NoData("no paired outcomes for style training".into()));
    }
    let n_val = ((outcomes.len() as f64) * cfg.validation_fraction).round() as usize;
    let (train, val) = outcomes.split_at(outcomes.len() - n_val.min(outcomes.len() - 1));
    let init = heuristic_weights();
    let tau = cfg.temperature;
    let (w, curve) = optimizer::train(init.clone(), |p: &[f64], _| soft_fitness(p, train, tau), &cfg.es, cfg.iterations, rng)
        .map_err(|e| HlcError::InvalidConfig(e.to_string()))?;
    let trained = StyleSelector::trained(w);
    let rule = StyleSelector::trained(init);
    let heuristic_val = evaluate_style(&rule, val)?;
    let trained_val = evaluate_style(&trained, val)?;
    let kept = val.is_empty() || trained_val >= heuristic_val;
    let report = StyleReport {
        heuristic_train: evaluate_style(&rule, train)?,
        trained_train: evaluate_style(&trained, train)?,
        heuristic_validation: heuristic_val,
        trained_validation: trained_val,
        kept_trained: kept,
        curve,
    };
    Ok((if kept { trained } else { rule }, report))
}
