//! Trainable policy skill: a linear-tanh map from a stacked (8, 16)
//! observation to contact parameters, the FiLM adapter on its action, ES
//! training and the two-stage topspin correction.

use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::episode::{evaluate_skill, run_skill, ContactMode, EpisodeConfig, RandomizationRanges};
use super::planner::{ContactChoice, Intercept, TickContext};
use super::{RewardConfig, Skill, SkillError, SkillSpec, Style};
use crate::ballistics::{BallState, Category, Physics, SpinClass, StyleSide};
use crate::dataset::Dataset;
use crate::optimizer::{self, CurveRow, EsConfig, OptimizerError};
use crate::vec3::{Vec2, Vec3};

pub const FRAME_DIM: usize = 16;
pub const STACK_DEPTH: usize = 8;
pub const OBS_DIM: usize = FRAME_DIM * STACK_DEPTH;
pub const ACTION_DIM: usize = 6;

const FRAME_MEAN: [f64; FRAME_DIM] =
    [0.0, -0.5, 0.3, 0.0, -4.0, 0.0, 0.0, -1.7, 0.25, 0.0, 1.0, 0.0, 0.3, 0.0, 0.5, 0.5];
const FRAME_SCALE: [f64; FRAME_DIM] =
    [0.5, 1.0, 0.2, 1.0, 2.0, 1.5, 0.5, 0.2, 0.2, 0.3, 0.1, 0.3, 0.3, 0.5, 0.5, 0.5];

/// One observation frame: ball position and velocity, paddle position and
/// normal, time to the predicted contact, lateral offset to the intercept and
/// the style one-hot.
pub fn frame_features(ctx: &TickContext<'_>, intercept: Option<&Intercept>, style: Style) -> [f64; FRAME_DIM] {
    let b = ctx.observation.ball;
    let p = ctx.paddle;
    let (ttc, dx) = match intercept {
        Some(i) => (i.t - ctx.t_effective, i.ball.position.x - p.position.x),
        None => (0.0, 0.0),
    };
    let s = style.one_hot();
    [
        b.position.x, b.position.y, b.position.z, b.velocity.x, b.velocity.y, b.velocity.z,
        p.position.x, p.position.y, p.position.z, p.normal.x, p.normal.y, p.normal.z,
        ttc, dx, s[0], s[1],
    ]
}

/// Last `STACK_DEPTH` frames, newest first, padded with the oldest.
#[derive(Debug, Clone, Default)]
pub struct ObsStack {
    frames: VecDeque<[f64; FRAME_DIM]>,
}

impl ObsStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame: [f64; FRAME_DIM]) {
        self.frames.push_front(frame);
        self.frames.truncate(STACK_DEPTH);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(OBS_DIM);
        let oldest = self.frames.back().copied().unwrap_or([0.0; FRAME_DIM]);
        for i in 0..STACK_DEPTH {
            out.extend_from_slice(self.frames.get(i).unwrap_or(&oldest));
        }
        out
    }
}

/// Maps an action in roughly `[-1, 1]^6` to a contact: forward, vertical and
/// lateral speed of the return, face pitch and yaw tilt, and a shift of the
/// hitting plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionMapping {
    pub base_forward: f64,
    pub forward_gain: f64,
    pub base_vertical: f64,
    pub vertical_gain: f64,
    pub lateral_gain: f64,
    pub tilt_gain: f64,
    pub shift_gain: f64,
}

impl Default for ActionMapping {
    fn default() -> Self {
        Self {
            base_forward: 3.0,
            forward_gain: 2.0,
            base_vertical: 0.0,
            vertical_gain: 2.0,
            lateral_gain: 1.5,
            tilt_gain: 0.3,
            shift_gain: 0.1,
        }
    }
}

impl ActionMapping {
    pub fn contact(&self, action: &[f64]) -> ContactChoice {
        let a = |i: usize| action.get(i).copied().unwrap_or(0.0).clamp(-1.5, 1.5);
        let velocity = Vec3::new(
            self.lateral_gain * a(2),
            self.base_forward + self.forward_gain * a(0),
            self.base_vertical + self.vertical_gain * a(1),
        );
        ContactChoice::Outgoing {
            velocity,
            tilt: Vec2::new(self.tilt_gain * a(4), self.tilt_gain * a(3)),
            hit_plane_shift: self.shift_gain * a(5),
        }
    }
}

/// `tanh(W o + b)` over a fixed-scaled observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Row-major `act_dim x obs_dim`, then `act_dim` biases.
    pub params: Vec<f64>,
    pub mapping: ActionMapping,
}

impl LinearPolicy {
    pub fn zeros(act_dim: usize) -> Self {
        Self { obs_dim: OBS_DIM, act_dim, params: vec![0.0; act_dim * (OBS_DIM + 1)], mapping: ActionMapping::default() }
    }

    pub fn param_count(&self) -> usize {
        self.act_dim * (self.obs_dim + 1)
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self, SkillError> {
        if params.len() != self.param_count() {
            return Err(SkillError::DimensionMismatch { expected: self.param_count(), got: params.len() });
        }
        Ok(Self { params: params.to_vec(), ..self.clone() })
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter().enumerate().map(|(i, x)| (x - FRAME_MEAN[i % FRAME_DIM]) / FRAME_SCALE[i % FRAME_DIM]).collect()
    }

    pub fn act_normalized(&self, obs: &[f64]) -> Vec<f64> {
        let (w, b) = self.params.split_at(self.act_dim * self.obs_dim);
        (0..self.act_dim)
            .map(|i| {
                let row = &w[i * self.obs_dim..(i + 1) * self.obs_dim];
                (row.iter().zip(obs).map(|(a, o)| a * o).sum::<f64>() + b[i]).tanh()
            })
            .collect()
    }

    /// Flat text form: a dimension header, then one value per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("linear_policy {} {}\n", self.obs_dim, self.act_dim);
        for p in &self.params {
            s.push_str(&format!("{p}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or("empty policy file")?.split_whitespace().collect();
        if header.len() != 3 || header[0] != "linear_policy" {
            return Err("missing linear_policy header".into());
        }
        let obs_dim: usize = header[1].parse().map_err(|_| "bad obs dimension")?;
        let act_dim: usize = header[2].parse().map_err(|_| "bad action dimension")?;
        let params: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        if obs_dim != OBS_DIM || params.len() != act_dim * (obs_dim + 1) {
            return Err(format!("expected {} values for dims {obs_dim}x{act_dim}, got {}", act_dim * (obs_dim + 1), params.len()));
        }
        Ok(Self { obs_dim, act_dim, params, mapping: ActionMapping::default() })
    }
}

/// Feature-wise affine adapter: `gamma = 1 + Wg o + bg`, `beta = Wb o + bb`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmAdapter {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Gamma weights and biases, then beta weights and biases.
    pub params: Vec<f64>,
}

impl FilmAdapter {
    pub fn identity(obs_dim: usize, act_dim: usize) -> Self {
        Self { obs_dim, act_dim, params: vec![0.0; 2 * act_dim * (obs_dim + 1)] }
    }

    pub fn param_count(&self) -> usize {
        2 * self.act_dim * (self.obs_dim + 1)
    }

    fn affine(&self, block: usize, obs: &[f64]) -> Vec<f64> {
        let stride = self.act_dim * (self.obs_dim + 1);
        let p = &self.params[block * stride..(block + 1) * stride];
        let (w, b) = p.split_at(self.act_dim * self.obs_dim);
        (0..self.act_dim)
            .map(|i| w[i * self.obs_dim..(i + 1) * self.obs_dim].iter().zip(obs).map(|(a, o)| a * o).sum::<f64>() + b[i])
            .collect()
    }

    pub fn gamma(&self, obs: &[f64]) -> Vec<f64> {
        self.affine(0, obs).into_iter().map(|g| 1.0 + g).collect()
    }

    pub fn beta(&self, obs: &[f64]) -> Vec<f64> {
        self.affine(1, obs)
    }
}

/// `gamma(obs) * action + beta(obs)`, elementwise.
pub fn apply_film(action: &[f64], adapter: &FilmAdapter, obs: &[f64]) -> Result<Vec<f64>, SkillError> {
    if action.len() != adapter.act_dim {
        return Err(SkillError::DimensionMismatch { expected: adapter.act_dim, got: action.len() });
    }
    if obs.len() != adapter.obs_dim {
        return Err(SkillError::DimensionMismatch { expected: adapter.obs_dim, got: obs.len() });
    }
    let g = adapter.gamma(obs);
    let b = adapter.beta(obs);
    Ok(action.iter().zip(g).zip(b).map(|((a, g), b)| g * a + b).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyTrainingConfig {
    pub style: Style,
    pub iterations: usize,
    /// Balls per rollout seed.
    pub balls_per_rollout: usize,
    pub episode: EpisodeConfig,
    pub randomization: Option<RandomizationRanges>,
    /// Restrict training balls to records carrying one of these labels.
    pub categories: Vec<Category>,
    pub act_dim: usize,
}

impl Default for PolicyTrainingConfig {
    fn default() -> Self {
        Self {
            style: Style::Forehand,
            iterations: 200,
            balls_per_rollout: 3,
            episode: EpisodeConfig { contact_mode: ContactMode::Fixed(SpinClass::Underspin), ..EpisodeConfig::default() },
            randomization: None,
            categories: Vec::new(),
            act_dim: ACTION_DIM,
        }
    }
}

/// Rally balls on the style's side (or the centre band) matching the filter.
pub fn training_balls(dataset: &Dataset, style: Style, categories: &[Category]) -> Vec<BallState> {
    dataset
        .rally_records()
        .filter(|r| r.style_side == style.side() || r.style_side == StyleSide::Center)
        .filter(|r| categories.is_empty() || categories.iter().any(|c| r.categories.contains(*c)))
        .map(|r| r.initial)
        .collect()
}

/// Template spec for a policy skill of the given style.
pub fn policy_spec(id: usize, style: Style) -> SkillSpec {
    let mut spec = super::default_roster().into_iter().find(|s| s.style == style).expect("roster has both styles");
    spec.id = id;
    spec.name = format!("{}-policy", if style == Style::Forehand { "fh" } else { "bh" });
    spec
}

fn rollout_fitness(
    skill: &Skill,
    pool: &[BallState],
    n: usize,
    seed: u64,
    cfg: &EpisodeConfig,
    randomization: Option<&RandomizationRanges>,
    physics: &Physics,
    reward: &RewardConfig,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n {
        let ball = *pool.choose(&mut rng).expect("pool checked non-empty");
        let mut phys = *physics;
        if let Some(r) = randomization {
            phys.contact = r.apply(&physics.contact, &r.sample(&mut rng));
        }
        total += match run_skill(skill, &ball, cfg, &phys, &mut rng) {
            Ok(tr) => super::compute_reward(&tr, reward).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        };
    }
    total / n as f64
}

fn map_opt(e: OptimizerError) -> SkillError {
    match e {
        OptimizerError::Diverged { iteration, checkpoint } => SkillError::Diverged { iteration, checkpoint },
        other => SkillError::Optimizer(other),
    }
}

/// Trains a linear policy skill with ES on the dataset's balls for the
/// configured style. Returns the skill and its training curve.
pub fn train_policy_skill<R: Rng + ?Sized>(
    dataset: &Dataset,
    es: &EsConfig,
    reward: &RewardConfig,
    tcfg: &PolicyTrainingConfig,
    physics: &Physics,
    spec: SkillSpec,
    rng: &mut R,
) -> Result<(Skill, Vec<CurveRow>), SkillError> {
    let pool = training_balls(dataset, tcfg.style, &tcfg.categories);
    if pool.is_empty() {
        return Err(SkillError::NoData(format!("no rally balls for {:?}", tcfg.style)));
    }
    let base = LinearPolicy::zeros(tcfg.act_dim);
    let template = Skill { spec, policy: Some(base.clone()), film: None };
    let evaluate = |params: &[f64], seed: u64| {
        let Ok(policy) = base.with_params(params) else { return f64::NAN };
        let skill = Skill { policy: Some(policy), ..template.clone() };
        rollout_fitness(&skill, &pool, tcfg.balls_per_rollout, seed, &tcfg.episode, tcfg.randomization.as_ref(), physics, reward)
    };
    let (params, curve) = optimizer::train(base.params.clone(), evaluate, es, tcfg.iterations, rng).map_err(map_opt)?;
    let policy = base.with_params(&params)?;
    Ok((Skill { policy: Some(policy), ..template }, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopspinCorrectionConfig {
    pub stage1: EsConfig,
    pub stage1_iterations: usize,
    pub stage2: EsConfig,
    pub stage2_iterations: usize,
    pub balls_per_rollout: usize,
    pub episode: EpisodeConfig,
    /// Balls per category in the paired selection evaluation.
    pub selection_balls: usize,
    pub selection_seed: u64,
    /// Largest underspin land-rate loss a candidate may cause.
    pub underspin_tolerance: f64,
}

impl Default for TopspinCorrectionConfig {
    fn default() -> Self {
        Self {
            stage1: EsConfig { num_perturbations: 8, rollouts_per_perturbation: 1, keep_fraction: 0.5, step_size: 0.02, perturbation_std: 0.05, ..EsConfig::simulation() },
            stage1_iterations: 40,
            stage2: EsConfig::adapter(),
            stage2_iterations: 40,
            balls_per_rollout: 4,
            episode: EpisodeConfig { contact_mode: ContactMode::SpinConditioned, ..EpisodeConfig::default() },
            selection_balls: 60,
            selection_seed: 17,
            underspin_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub pre_topspin: f64,
    pub pre_underspin: f64,
    pub post_topspin: f64,
    pub post_underspin: f64,
    /// 0 = unchanged, 1 = fine-tuned policy, 2 = fine-tuned policy with adapter.
    pub selected_stage: usize,
    pub stage1_curve: Vec<CurveRow>,
    pub stage2_curve: Vec<CurveRow>,
}

fn category_balls(dataset: &Dataset, style: Style, c: Category, n: usize, seed: u64) -> Vec<BallState> {
    let pool = training_balls(dataset, style, &[c]);
    if pool.is_empty() {
        return pool;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| *pool.choose(&mut rng).expect("non-empty")).collect()
}

fn paired_land_rate(skill: &Skill, balls: &[BallState], cfg: &EpisodeConfig, physics: &Physics, seed: u64) -> Result<f64, SkillError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(evaluate_skill(skill, balls, cfg, physics, &RewardConfig::default(), &mut rng)?.land_rate)
}

/// Stage 1 fine-tunes the policy on topspin balls with spin-conditioned
/// contact and the net-height and contact-angle terms; stage 2 freezes it
/// and trains a FiLM adapter on the same balls. The returned skill is the
/// candidate with the best topspin land rate on a fixed paired evaluation
/// whose underspin land rate stays within tolerance of the original.
pub fn topspin_correct<R: Rng + ?Sized>(
    skill: &Skill,
    dataset: &Dataset,
    cfg: &TopspinCorrectionConfig,
    physics: &Physics,
    rng: &mut R,
) -> Result<(Skill, CorrectionReport), SkillError> {
    let policy = skill.policy.clone().ok_or(SkillError::NotTrainable(skill.id()))?;
    let style = skill.spec.style;
    let pool = training_balls(dataset, style, &[Category::Topspin]);
    if pool.is_empty() {
        return Err(SkillError::NoData("no topspin records".into()));
    }
    let reward = RewardConfig::default().with_topspin_terms();
    let ep = &cfg.episode;
    let n = cfg.balls_per_rollout;

    let stage1_eval = |params: &[f64], seed: u64| {
        let Ok(p) = policy.with_params(params) else { return f64::NAN };
        let s = Skill { policy: Some(p), film: None, spec: skill.spec.clone() };
        rollout_fitness(&s, &pool, n, seed, ep, None, physics, &reward)
    };
    let (p1, curve1) = optimizer::train(policy.params.clone(), stage1_eval, &cfg.stage1, cfg.stage1_iterations, rng).map_err(map_opt)?;
    let stage1 = Skill { policy: Some(policy.with_params(&p1)?), film: None, spec: skill.spec.clone() };

    let film0 = FilmAdapter::identity(policy.obs_dim, policy.act_dim);
    let stage2_eval = |params: &[f64], seed: u64| {
        let s = Skill { film: Some(FilmAdapter { params: params.to_vec(), ..film0.clone() }), ..stage1.clone() };
        rollout_fitness(&s, &pool, n, seed, ep, None, physics, &reward)
    };
    let (p2, curve2) = optimizer::train(film0.params.clone(), stage2_eval, &cfg.stage2, cfg.stage2_iterations, rng).map_err(map_opt)?;
    let stage2 = Skill { film: Some(FilmAdapter { params: p2, ..film0.clone() }), ..stage1.clone() };

    let top = category_balls(dataset, style, Category::Topspin, cfg.selection_balls, cfg.selection_seed);
    let under = category_balls(dataset, style, Category::Underspin, cfg.selection_balls, cfg.selection_seed + 1);
    let seed = cfg.selection_seed.wrapping_mul(31);
    let score = |s: &Skill| -> Result<(f64, f64), SkillError> {
        let t = paired_land_rate(s, &top, ep, physics, seed)?;
        let u = if under.is_empty() { 0.0 } else { paired_land_rate(s, &under, ep, physics, seed + 1)? };
        Ok((t, u))
    };
    let base_film = Skill { film: None, ..skill.clone() };
    let (pre_t, pre_u) = score(&base_film)?;
    let mut best = (0usize, pre_t, pre_u, base_film.clone());
    for (stage, cand) in [(1usize, &stage1), (2, &stage2)] {
        let (t, u) = score(cand)?;
        if t > best.1 && u >= pre_u - cfg.underspin_tolerance {
            best = (stage, t, u, cand.clone());
        }
    }
    let report = CorrectionReport {
        pre_topspin: pre_t,
        pre_underspin: pre_u,
        post_topspin: best.1,
        post_underspin: best.2,
        selected_stage: best.0,
        stage1_curve: curve1,
        stage2_curve: curve2,
    };
    Ok((best.3, report))
}
