//! Gradient-bandit preferences over skills.
//!
//! [`PreferenceState::update`] follows the batch recurrence literally: the
//! selection probabilities are taken once at the start of the batch and the
//! selection mask keeps every skill chosen earlier in the batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HlcError;

/// Numerically stable softmax. Adding a constant to every entry leaves the
/// result unchanged.
pub fn softmax(h: &[f64]) -> Vec<f64> {
    if h.is_empty() {
        return Vec::new();
    }
    let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = h.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Index drawn with probability proportional to `p`.
pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len().saturating_sub(1)
}

pub fn sample_softmax<R: Rng + ?Sized>(h: &[f64], rng: &mut R) -> usize {
    sample_index(&softmax(h), rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceState {
    pub h: Vec<f64>,
    pub avg_reward: f64,
    pub counts: Vec<u64>,
    pub t: u64,
    pub alpha: f64,
    pub baseline: Vec<f64>,
    /// Recompute the probabilities and reset the mask before every shot
    /// instead of once per batch.
    pub refresh_per_shot: bool,
}

impl PreferenceState {
    pub fn new(baseline: Vec<f64>, alpha: f64) -> Self {
        let n = baseline.len();
        Self { h: baseline.clone(), avg_reward: 0.0, counts: vec![0; n], t: 0, alpha, baseline, refresh_per_shot: false }
    }

    pub fn zeros(n: usize, alpha: f64) -> Self {
        Self::new(vec![0.0; n], alpha)
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Back to the baseline preferences for a new opponent.
    pub fn reset(&mut self) {
        self.h.clone_from(&self.baseline);
        self.avg_reward = 0.0;
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.t = 0;
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.h)
    }

    /// Applies one batch of `(skill, reward)` shots. The whole batch is
    /// checked before anything changes.
    pub fn update(&mut self, batch: &[(usize, f64)]) -> Result<(), HlcError> {
        if let Some(&(bad, _)) = batch.iter().find(|(s, _)| *s >= self.h.len()) {
            return Err(HlcError::UnknownSkill(bad));
        }
        if !(self.alpha > 0.0) {
            return Err(HlcError::InvalidConfig(format!("bandit step size must be positive, got {}", self.alpha)));
        }
        let n = self.h.len();
        let mut p = softmax(&self.h);
        let mut z = vec![0.0; n];
        for &(skill, reward) in batch {
            if self.refresh_per_shot {
                p = softmax(&self.h);
                z.iter_mut().for_each(|v| *v = 0.0);
            }
            self.t += 1;
            self.counts[skill] += 1;
            self.avg_reward += (reward - self.avg_reward) / self.t as f64;
            z[skill] = 1.0;
            let step = self.alpha * (reward - self.avg_reward);
            for i in 0..n {
                self.h[i] += step * (z[i] - p[i]);
            }
        }
        Ok(())
    }
}
