//! High-level controller: picks one skill per incoming ball.
//!
//! Serves go straight to the serve receiver matching the chosen style and
//! the classified serve spin. Rally balls get a shortlist from the
//! heuristics; each entry's preference plus its queried land rate feeds a
//! softmax, and the skill is sampled from it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{BallState, Physics, SpinClass};
use crate::descriptors::{DescriptorError, DescriptorSet};
use crate::skills::{SkillError, SkillKind, SkillSpec, Style};

pub mod bandit;
pub mod heuristics;
pub mod mlp;
pub mod spin;
pub mod style;

pub use bandit::{sample_index, sample_softmax, softmax, PreferenceState};
pub use heuristics::{
    incoming_landing, opponent_side, query_candidates, shortlist_from_candidates, strategy_shortlist, Candidate, Heuristic,
    HeuristicConfig, OpponentStats, ShortlistEntry, SideCounts, StrategyShortlist,
};
pub use spin::{
    classify_spin, classify_stroke, extract_spin_features, SpinClassifier, SpinVote, StrokeModel, StrokeSample, SPIN_FEATURE_DIM,
};
pub use style::{StyleSelector, STYLE_FEATURE_DIM};

#[derive(Debug, Error)]
pub enum HlcError {
    #[error("unknown skill {0}")]
    UnknownSkill(usize),
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("need {need} synchronized frames, got {got}")]
    InsufficientHistory { need: usize, got: usize },
    #[error("training corpus holds a single class")]
    SingleClass,
    #[error("training diverged")]
    Diverged,
    #[error("no style model and the fallback is disabled")]
    NoStyleModel,
    #[error("no skill has a descriptor table for this ball")]
    NoCandidates,
    #[error("no data: {0}")]
    NoData(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    /// Shortlist, preferences and softmax.
    Full,
    /// Any skill of the right phase, uniformly.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HlcConfig {
    pub alpha: f64,
    /// Weight on the land rate added to the preference before the softmax.
    pub r_scale: f64,
    pub refresh_per_shot: bool,
    pub heuristics: HeuristicConfig,
    pub mode: SelectionMode,
}

impl Default for HlcConfig {
    fn default() -> Self {
        Self { alpha: 0.1, r_scale: 1.0, refresh_per_shot: false, heuristics: HeuristicConfig::default(), mode: SelectionMode::Full }
    }
}

/// What the controller chose for one ball, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub skill_id: usize,
    pub style: Style,
    pub spin: Option<SpinClass>,
    pub shortlist: Option<StrategyShortlist>,
    /// Softmax over the shortlist entries.
    pub probabilities: Vec<f64>,
    /// Index of the sampled shortlist entry.
    pub entry: Option<usize>,
}

impl Decision {
    pub fn heuristic(&self) -> Option<Heuristic> {
        let s = self.shortlist.as_ref()?;
        Some(s.entries[self.entry?].heuristic)
    }
}

/// Shortlist preferences plus scaled land rates.
pub fn combined_preferences(entries: &[ShortlistEntry], prefs: &PreferenceState, r_scale: f64) -> Result<Vec<f64>, HlcError> {
    entries
        .iter()
        .map(|e| prefs.h.get(e.skill_id).map(|h| h + r_scale * e.r).ok_or(HlcError::UnknownSkill(e.skill_id)))
        .collect()
}

/// Samples one shortlist entry; returns its index and the probabilities.
pub fn choose_entry<R: Rng + ?Sized>(
    entries: &[ShortlistEntry],
    prefs: &PreferenceState,
    r_scale: f64,
    rng: &mut R,
) -> Result<(usize, Vec<f64>), HlcError> {
    if entries.is_empty() {
        return Err(HlcError::NoCandidates);
    }
    let h = combined_preferences(entries, prefs, r_scale)?;
    let p = softmax(&h);
    Ok((sample_index(&p, rng), p))
}

/// Serve receiver for a style and spin class.
pub fn serve_skill(skills: &[SkillSpec], style: Style, spin: SpinClass) -> Option<usize> {
    let kind = match spin {
        SpinClass::Topspin => SkillKind::TopspinServe,
        SpinClass::Underspin => SkillKind::UnderspinServe,
    };
    skills.iter().find(|s| s.style == style && s.kind == kind).map(|s| s.id)
}

#[derive(Debug, Clone)]
pub struct Hlc {
    pub skills: Vec<SkillSpec>,
    pub descriptors: DescriptorSet,
    pub style: StyleSelector,
    pub spin: Option<SpinClassifier>,
    pub cfg: HlcConfig,
}

impl Hlc {
    pub fn new(skills: Vec<SkillSpec>, descriptors: DescriptorSet, cfg: HlcConfig) -> Self {
        Self { skills, descriptors, style: StyleSelector::heuristic(), spin: None, cfg }
    }

    /// Fresh preferences for a new opponent, zero baseline.
    pub fn initial_preferences(&self) -> PreferenceState {
        let n = self.skills.iter().map(|s| s.id + 1).max().unwrap_or(0);
        let mut p = PreferenceState::zeros(n, self.cfg.alpha);
        p.refresh_per_shot = self.cfg.refresh_per_shot;
        p
    }

    /// One decision for the ball observed one control step after the
    /// opponent's hit. `stroke` is the tracked serve stroke, if any.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &BallState,
        is_serve: bool,
        stroke: Option<&[StrokeSample]>,
        prefs: &PreferenceState,
        opp: &OpponentStats,
        physics: &Physics,
        rng: &mut R,
    ) -> Result<Decision, HlcError> {
        if self.cfg.mode == SelectionMode::UniformRandom {
            let pool: Vec<&SkillSpec> = self.skills.iter().filter(|s| s.is_serve_receiver == is_serve).collect();
            if pool.is_empty() {
                return Err(HlcError::NoCandidates);
            }
            let s = pool[rng.random_range(0..pool.len())];
            return Ok(Decision { skill_id: s.id, style: s.style, spin: None, shortlist: None, probabilities: vec![], entry: None });
        }
        let style = self.style.select(obs, physics)?;
        if is_serve {
            let spin = match (&self.spin, stroke) {
                (Some(c), Some(h)) => classify_stroke(h, c)?,
                _ => SpinClass::Topspin,
            };
            if let Some(id) = serve_skill(&self.skills, style, spin) {
                return Ok(Decision { skill_id: id, style, spin: Some(spin), shortlist: None, probabilities: vec![], entry: None });
            }
        }
        let shortlist = strategy_shortlist(obs, style, &self.skills, &self.descriptors, opp, &self.cfg.heuristics, physics, rng)?;
        let (i, p) = choose_entry(&shortlist.entries, prefs, self.cfg.r_scale, rng)?;
        let skill_id = shortlist.entries[i].skill_id;
        Ok(Decision { skill_id, style, spin: None, shortlist: Some(shortlist), probabilities: p, entry: Some(i) })
    }
}

/// Free-function form of [`Hlc::act`].
pub fn hlc_act<R: Rng + ?Sized>(
    hlc: &Hlc,
    obs: &BallState,
    is_serve: bool,
    stroke: Option<&[StrokeSample]>,
    prefs: &PreferenceState,
    opp: &OpponentStats,
    physics: &Physics,
    rng: &mut R,
) -> Result<Decision, HlcError> {
    hlc.act(obs, is_serve, stroke, prefs, opp, physics, rng)
}

/// Preferences and statistics kept for one opponent across games.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpponentRecord {
    pub prefs: PreferenceState,
    pub stats: OpponentStats,
}

/// Per-opponent records, saved as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceStore {
    pub opponents: BTreeMap<String, OpponentRecord>,
}

impl PreferenceStore {
    /// The opponent's record, created from `baseline` on first sight.
    pub fn entry(&mut self, opponent: &str, baseline: &PreferenceState) -> &mut OpponentRecord {
        self.opponents.entry(opponent.to_string()).or_insert_with(|| {
            let mut prefs = baseline.clone();
            prefs.reset();
            OpponentRecord { prefs, stats: OpponentStats::default() }
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HlcError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| HlcError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HlcError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HlcError::Parse(e.to_string()))
    }
}

/// Preference change of one skill over one game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRow {
    pub game: usize,
    pub skill_id: usize,
    pub h_start: f64,
    pub h_end: f64,
    /// Percentage change of the skill's softmax probability over all
    /// skills; a raw preference has no fixed zero to take a percentage of.
    pub pct_change: f64,
}

pub fn adaptation_rows(game: usize, start: &[f64], end: &[f64]) -> Vec<AdaptationRow> {
    let (p0, p1) = (softmax(start), softmax(end));
    (0..start.len().min(end.len()))
        .map(|i| AdaptationRow { game, skill_id: i, h_start: start[i], h_end: end[i], pct_change: 100.0 * (p1[i] - p0[i]) / p0[i] })
        .collect()
}

pub fn adaptation_csv(rows: &[AdaptationRow]) -> String {
    let mut out = String::from("game,skill,h_start,h_end,pct_change\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6},{:.6},{:.3}\n", r.game, r.skill_id, r.h_start, r.h_end, r.pct_change));
    }
    out
}
