//! Serve spin classifier: features from the server's paddle and the ball
//! just before the serve contact, a small network, and a 4-of-5 vote that
//! only calls underspin when the recent raw predictions agree.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Adam, AdamConfig, Mlp};
use super::HlcError;
use crate::ballistics::{BallState, Physics, SpinClass};
use crate::dataset::synth::{observe, serve_ball, ServeMix};
use crate::dataset::{fit_initial_state, FitConfig, ObservedTrajectory};
use crate::vec3::Vec3;

pub const HISTORY_LEN: usize = 6;
pub const FEATURE_STEPS: usize = 3;
pub const DELTA_LAG: usize = 3;
pub const FEATURES_PER_STEP: usize = 6;
pub const SPIN_FEATURE_DIM: usize = FEATURE_STEPS * FEATURES_PER_STEP;
pub const VOTE_WINDOW: usize = 5;
pub const VOTE_THRESHOLD: usize = 4;

/// Server paddle and ball at one tracking frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeSample {
    pub t: f64,
    pub paddle_position: Vec3,
    pub paddle_normal: Vec3,
    pub ball_position: Vec3,
}

/// Per step, for the last three frames: paddle height change over three
/// frames, paddle normal change over three frames (x, y, z), paddle minus
/// ball height, and paddle to ball distance. Oldest step first.
pub fn extract_spin_features(history: &[StrokeSample]) -> Result<[f64; SPIN_FEATURE_DIM], HlcError> {
    if history.len() < HISTORY_LEN {
        return Err(HlcError::InsufficientHistory { need: HISTORY_LEN, got: history.len() });
    }
    let h = &history[history.len() - HISTORY_LEN..];
    let mut f = [0.0; SPIN_FEATURE_DIM];
    for s in 0..FEATURE_STEPS {
        let cur = &h[DELTA_LAG + s];
        let old = &h[s];
        let dn = cur.paddle_normal - old.paddle_normal;
        let o = s * FEATURES_PER_STEP;
        f[o] = cur.paddle_position.z - old.paddle_position.z;
        f[o + 1] = dn.x;
        f[o + 2] = dn.y;
        f[o + 3] = dn.z;
        f[o + 4] = cur.paddle_position.z - cur.ball_position.z;
        f[o + 5] = (cur.paddle_position - cur.ball_position).norm();
    }
    Ok(f)
}

/// Last raw predictions and the 4-of-5 decision.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpinVote {
    recent: VecDeque<SpinClass>,
}

impl SpinVote {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, raw: SpinClass) {
        if self.recent.len() == VOTE_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(raw);
    }

    pub fn clear(&mut self) {
        self.recent.clear();
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    /// Topspin until five predictions exist.
    pub fn decision(&self) -> SpinClass {
        let under = self.recent.iter().filter(|&&c| c == SpinClass::Underspin).count();
        if self.recent.len() == VOTE_WINDOW && under >= VOTE_THRESHOLD {
            SpinClass::Underspin
        } else {
            SpinClass::Topspin
        }
    }
}

/// Vote over a fixed list of raw predictions, oldest first.
pub fn vote(raw: &[SpinClass]) -> SpinClass {
    let mut v = SpinVote::new();
    raw.iter().for_each(|&c| v.push(c));
    v.decision()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinClassifier {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub net: Mlp,
}

impl SpinClassifier {
    /// `(topspin, underspin)` probabilities.
    pub fn probabilities(&self, features: &[f64; SPIN_FEATURE_DIM]) -> [f64; 2] {
        let x: Vec<f64> = features.iter().zip(self.mean.iter().zip(&self.std)).map(|(f, (m, s))| (f - m) / s).collect();
        let p = self.net.predict(&x);
        [p[0], p[1]]
    }

    pub fn raw_class(&self, features: &[f64; SPIN_FEATURE_DIM]) -> SpinClass {
        let p = self.probabilities(features);
        if p[1] > p[0] {
            SpinClass::Underspin
        } else {
            SpinClass::Topspin
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("classifier serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HlcError> {
        let c: Self = serde_json::from_str(text).map_err(|e| HlcError::Parse(e.to_string()))?;
        if c.net.input_dim() != SPIN_FEATURE_DIM || c.net.output_dim() != 2 || c.mean.len() != SPIN_FEATURE_DIM || c.std.len() != SPIN_FEATURE_DIM {
            return Err(HlcError::Parse("spin classifier has the wrong shape".into()));
        }
        Ok(c)
    }
}

/// Raw prediction for the newest window, folded into `vote`; returns the
/// voted class.
pub fn classify_spin(features: &[f64; SPIN_FEATURE_DIM], classifier: &SpinClassifier, vote: &mut SpinVote) -> SpinClass {
    vote.push(classifier.raw_class(features));
    vote.decision()
}

/// Queries the classifier on the last five windows of a stroke history,
/// oldest first, and votes.
pub fn classify_stroke(history: &[StrokeSample], classifier: &SpinClassifier) -> Result<SpinClass, HlcError> {
    let mut v = SpinVote::new();
    let end = history.len();
    for back in (0..VOTE_WINDOW).rev() {
        if end < HISTORY_LEN + back {
            continue;
        }
        let f = extract_spin_features(&history[..end - back])?;
        classify_spin(&f, classifier, &mut v);
    }
    Ok(v.decision())
}

/// Label by the sign of the lateral-axis spin.
pub fn spin_label(spin_x: f64) -> SpinClass {
    if spin_x < 0.0 {
        SpinClass::Underspin
    } else {
        SpinClass::Topspin
    }
}

/// Label from a fit of the serve's observed flight (125 Hz, `noise` m),
/// as a tracker would produce without access to the true spin.
pub fn fitted_label<R: Rng + ?Sized>(
    serve: &BallState,
    physics: &Physics,
    fit: &FitConfig,
    noise: f64,
    rng: &mut R,
) -> Result<SpinClass, HlcError> {
    let traj = physics.simulate(serve, 0.35).map_err(|e| HlcError::Parse(e.to_string()))?;
    let obs = ObservedTrajectory::new(observe(&traj, 125.0, noise, 0.0, rng), "serve")
        .map_err(|e| HlcError::Parse(e.to_string()))?;
    let r = fit_initial_state(&obs, physics, fit).map_err(|e| HlcError::Parse(e.to_string()))?;
    Ok(spin_label(r.state.spin.x))
}

/// How the synthetic server moves the paddle for a given spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrokeModel {
    pub rate_hz: f64,
    /// Upward paddle speed per rad/s of imparted spin.
    pub brush_gain: f64,
    pub brush_noise: f64,
    /// Face closing angle per rad/s of spin at contact, rad.
    pub tilt_gain: f64,
    /// Face rotation rate per rad/s of spin, rad/s.
    pub tilt_rate_gain: f64,
    pub tilt_noise: f64,
    pub position_noise: f64,
    pub normal_noise: f64,
    pub contact_offset: f64,
}

impl Default for StrokeModel {
    fn default() -> Self {
        Self {
            rate_hz: 125.0,
            brush_gain: 0.015,
            brush_noise: 0.35,
            tilt_gain: 0.003,
            tilt_rate_gain: 0.02,
            tilt_noise: 0.08,
            position_noise: 0.002,
            normal_noise: 0.01,
            contact_offset: 0.03,
        }
    }
}

impl StrokeModel {
    /// Samples per 100 ms augmentation window.
    pub fn window_samples(&self) -> usize {
        (0.1 * self.rate_hz + 1e-9).floor() as usize
    }

    /// `len` frames ending at the contact with `serve` (the ball just after
    /// the server's paddle), which is the last frame.
    pub fn stroke<R: Rng + ?Sized>(&self, serve: &BallState, len: usize, physics: &Physics, rng: &mut R) -> Vec<StrokeSample> {
        let mut g = || rng.sample::<f64, StandardNormal>(StandardNormal);
        let wx = serve.spin.x;
        let dir = serve.velocity.normalized();
        let fwd = serve.velocity.norm() * (0.6 + 0.1 * g());
        let up = self.brush_gain * wx + self.brush_noise * g();
        let paddle_v = dir * fwd + Vec3::Z * up;
        let tilt_c = -self.tilt_gain * wx + self.tilt_noise * g();
        let tilt_rate = -self.tilt_rate_gain * wx * (1.0 + 0.3 * g());
        let toss = Vec3::new(0.0, 0.0, -(0.8 + 0.4 * g().abs()));
        let offset = Vec3::new(self.contact_offset * g(), 0.0, self.contact_offset * g());
        let r = physics.flight.ball_radius;
        let gravity = physics.flight.gravity;
        let dt = 1.0 / self.rate_hz;
        let c = serve.position;
        let mut out = Vec::with_capacity(len);
        for k in 0..len {
            let t = -((len - 1 - k) as f64) * dt;
            let tilt = tilt_c + tilt_rate * t;
            // Face points toward the receiver, closed (down) for positive tilt.
            let normal = Vec3::new(0.0, -tilt.cos(), -tilt.sin());
            let ball = c + toss * t + Vec3::new(0.0, 0.0, -0.5 * gravity * t * t);
            let paddle = c - normal * r + offset + paddle_v * t;
            let mut noisy = |v: Vec3, s: f64| v + Vec3::new(s * g(), s * g(), s * g());
            out.push(StrokeSample {
                t,
                paddle_position: noisy(paddle, self.position_noise),
                paddle_normal: noisy(normal, self.normal_noise).normalized(),
                ball_position: noisy(ball, self.position_noise),
            });
        }
        out
    }
}

/// One serve with its recorded stroke and label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStroke {
    pub stroke: Vec<StrokeSample>,
    pub label: SpinClass,
    pub true_spin_x: f64,
}

/// Serves with strokes long enough for the full augmentation window.
/// Labels come from `label`, usually [`spin_label`] of the truth or a
/// [`fitted_label`].
pub fn synthetic_strokes<R, L>(n: usize, mix: &ServeMix, model: &StrokeModel, physics: &Physics, mut label: L, rng: &mut R) -> Vec<LabeledStroke>
where
    R: Rng + ?Sized,
    L: FnMut(&BallState, &mut R) -> SpinClass,
{
    let len = HISTORY_LEN + model.window_samples();
    (0..n)
        .map(|_| {
            let (serve, _) = serve_ball(mix, physics, rng);
            let stroke = model.stroke(&serve, len, physics, rng);
            let label = label(&serve, rng);
            LabeledStroke { stroke, label, true_spin_x: serve.spin.x }
        })
        .collect()
}

/// Every window ending at the contact or up to one augmentation window
/// before it, each with the stroke's label.
pub fn augmented_examples(strokes: &[LabeledStroke], window: usize) -> Vec<([f64; SPIN_FEATURE_DIM], SpinClass)> {
    let mut out = Vec::new();
    for s in strokes {
        for back in 0..=window {
            if s.stroke.len() < HISTORY_LEN + back {
                break;
            }
            if let Ok(f) = extract_spin_features(&s.stroke[..s.stroke.len() - back]) {
                out.push((f, s.label));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpinTrainingConfig {
    pub hidden: (usize, usize),
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Fraction of strokes (not windows) held out for evaluation.
    pub holdout_fraction: f64,
    pub augment: bool,
}

impl Default for SpinTrainingConfig {
    fn default() -> Self {
        Self {
            hidden: (128, 64),
            epochs: 40,
            batch_size: 32,
            adam: AdamConfig::default(),
            holdout_fraction: 0.2,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpinReport {
    pub train_examples: usize,
    pub holdout_examples: usize,
    pub final_loss: f64,
    pub holdout_accuracy: f64,
    pub underspin_precision: f64,
    pub underspin_recall: f64,
}

fn class_index(c: SpinClass) -> usize {
    match c {
        SpinClass::Topspin => 0,
        SpinClass::Underspin => 1,
    }
}

/// Accuracy, underspin precision and recall of raw predictions.
pub fn evaluate_raw(classifier: &SpinClassifier, examples: &[([f64; SPIN_FEATURE_DIM], SpinClass)]) -> (f64, f64, f64) {
    let (mut correct, mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (f, y) in examples {
        let p = classifier.raw_class(f);
        correct += (p == *y) as usize;
        match (p, y) {
            (SpinClass::Underspin, SpinClass::Underspin) => tp += 1,
            (SpinClass::Underspin, SpinClass::Topspin) => fp += 1,
            (SpinClass::Topspin, SpinClass::Underspin) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(correct, examples.len()), ratio(tp, tp + fp), ratio(tp, tp + fneg))
}

/// Supervised cross-entropy training. Strokes are split before
/// augmentation so windows of one serve never straddle the split.
pub fn train_spin_classifier<R: Rng + ?Sized>(
    strokes: &[LabeledStroke],
    model: &StrokeModel,
    cfg: &SpinTrainingConfig,
    rng: &mut R,
) -> Result<(SpinClassifier, SpinReport), HlcError> {
    let under = strokes.iter().filter(|s| s.label == SpinClass::Underspin).count();
    if under == 0 || under == strokes.len() {
        return Err(HlcError::SingleClass);
    }
    let mut order: Vec<usize> = (0..strokes.len()).collect();
    order.shuffle(rng);
    let n_hold = ((strokes.len() as f64) * cfg.holdout_fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| strokes[i].clone()).collect::<Vec<_>>();
    let hold = pick(&order[..n_hold]);
    let train = pick(&order[n_hold..]);
    let window = if cfg.augment { model.window_samples() } else { 0 };
    let train_ex = augmented_examples(&train, window);
    let hold_ex = augmented_examples(&hold, 0);
    if train_ex.is_empty() {
        return Err(HlcError::InsufficientHistory { need: HISTORY_LEN, got: 0 });
    }

    let n = train_ex.len() as f64;
    let mut mean = vec![0.0; SPIN_FEATURE_DIM];
    let mut std = vec![0.0; SPIN_FEATURE_DIM];
    for (f, _) in &train_ex {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x / n;
        }
    }
    for (f, _) in &train_ex {
        for ((s, x), m) in std.iter_mut().zip(f).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    std.iter_mut().for_each(|s| *s = if s.sqrt() > 1e-12 { s.sqrt() } else { 1.0 });

    let xs: Vec<(Vec<f64>, usize)> = train_ex
        .iter()
        .map(|(f, y)| (f.iter().zip(mean.iter().zip(&std)).map(|(x, (m, s))| (x - m) / s).collect(), class_index(*y)))
        .collect();
    let mut net = Mlp::new(&[SPIN_FEATURE_DIM, cfg.hidden.0, cfg.hidden.1, 2], rng);
    let mut adam = Adam::new(&net, cfg.adam);
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    let mut final_loss = f64::NAN;
    let bs = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        let mut total = 0.0;
        for chunk in idx.chunks(bs) {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| (xs[i].0.as_slice(), xs[i].1)).collect();
            total += adam.train_batch(&mut net, &batch) * batch.len() as f64;
        }
        final_loss = total / xs.len() as f64;
        if !final_loss.is_finite() {
            return Err(HlcError::Diverged);
        }
    }
    let clf = SpinClassifier { mean, std, net };
    let (acc, prec, rec) = evaluate_raw(&clf, &hold_ex);
    let report = SpinReport {
        train_examples: train_ex.len(),
        holdout_examples: hold_ex.len(),
        final_loss,
        holdout_accuracy: acc,
        underspin_precision: prec,
        underspin_recall: rec,
    };
    Ok((clf, report))
}

/// Reference numbers for the underspin class of a deployed classifier of
/// this kind, shown next to ours in reports.
pub const REFERENCE_UNDERSPIN_PRECISION: f64 = 1.0;
pub const REFERENCE_UNDERSPIN_RECALL: f64 = 0.4;
