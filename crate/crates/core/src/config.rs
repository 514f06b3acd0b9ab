//! Run configuration: one TOML file covering paths, seeds, per-stage
//! settings and opponent profiles.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ballistics::{Physics, StyleBands};
use crate::dataset::synth::{RallyMix, ServeMix};
use crate::dataset::{FitConfig, SegmentConfig};
use crate::descriptors::BuildConfig;
use crate::hlc::spin::SpinTrainingConfig;
use crate::hlc::style::StyleTrainingConfig;
use crate::hlc::{HlcConfig, StrokeModel};
use crate::matchsim::{MatchConfig, OpponentProfile, Tier};
use crate::optimizer::EsConfig;
use crate::skills::{EpisodeConfig, PolicyTrainingConfig, RewardConfig, TopspinCorrectionConfig};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "RALLYBOT_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Artifact locations, relative to `root` unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub root: PathBuf,
    pub dataset: PathBuf,
    pub skills: PathBuf,
    pub descriptors: PathBuf,
    pub preferences: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            root: PathBuf::from("."),
            dataset: "dataset.jsonl".into(),
            skills: "skills".into(),
            descriptors: "descriptors".into(),
            preferences: "preferences.json".into(),
            models: "models".into(),
            reports: "reports".into(),
        }
    }
}

impl Paths {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn dataset(&self) -> PathBuf {
        self.resolve(&self.dataset)
    }

    pub fn skills(&self) -> PathBuf {
        self.resolve(&self.skills)
    }

    pub fn descriptors(&self) -> PathBuf {
        self.resolve(&self.descriptors)
    }

    pub fn preferences(&self) -> PathBuf {
        self.resolve(&self.preferences)
    }

    pub fn models(&self) -> PathBuf {
        self.resolve(&self.models)
    }

    pub fn reports(&self) -> PathBuf {
        self.resolve(&self.reports)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Sizes of the corpus made by `dataset synth`.
    pub rally_balls: usize,
    pub serve_balls: usize,
    pub cycle: u32,
    pub rally: RallyMix,
    pub serve: ServeMix,
    pub bands: StyleBands,
    pub segment: SegmentConfig,
    pub fit: FitConfig,
    /// Position noise of synthetic observation streams, m.
    pub stream_noise: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            rally_balls: 240,
            serve_balls: 80,
            cycle: 0,
            rally: RallyMix::default(),
            serve: ServeMix::default(),
            bands: StyleBands::default(),
            segment: SegmentConfig::default(),
            fit: FitConfig::default(),
            stream_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Optimizer preset for skill training: `simulation`, `adapter` or `desk`.
    pub preset: String,
    pub skill_iterations: usize,
    pub balls_per_rollout: usize,
    /// Episode settings while training policy skills.
    pub episode: EpisodeConfig,
    pub reward: RewardConfig,
    pub style: StyleTrainingConfig,
    /// Balls and repetitions for the paired forehand/backhand outcomes.
    pub style_balls: usize,
    pub style_repetitions: usize,
    pub spin: SpinTrainingConfig,
    pub spin_strokes: usize,
    /// Underspin share of the synthetic serves the spin model learns from.
    pub spin_underspin_fraction: f64,
    pub stroke_model: StrokeModel,
    pub film: TopspinCorrectionConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            skill_iterations: 30,
            balls_per_rollout: 3,
            episode: PolicyTrainingConfig::default().episode,
            reward: RewardConfig::default(),
            style: StyleTrainingConfig::default(),
            style_balls: 120,
            style_repetitions: 2,
            spin: SpinTrainingConfig { epochs: 15, ..SpinTrainingConfig::default() },
            spin_strokes: 300,
            spin_underspin_fraction: 0.5,
            stroke_model: StrokeModel::default(),
            film: TopspinCorrectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaySection {
    /// Profile id for `play match`.
    pub opponent: String,
    /// Matches per profile in `play tournament`.
    pub matches: usize,
    /// Profiles used by `play tournament`; empty means the four tiers.
    pub tournament: Vec<String>,
    pub ablation_balls: usize,
    #[serde(rename = "match")]
    pub match_cfg: MatchConfig,
    /// Extra profiles, looked up by id before the built-in ones.
    pub profiles: Vec<OpponentProfile>,
}

impl Default for PlaySection {
    fn default() -> Self {
        Self {
            opponent: "intermediate".into(),
            matches: 5,
            tournament: Vec::new(),
            ablation_balls: 300,
            match_cfg: MatchConfig::default(),
            profiles: Vec::new(),
        }
    }
}

/// Which optional pieces of the stack are used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    /// Pick skills uniformly instead of through the controller.
    pub uniform_random: bool,
    /// Load trained skill files over the scripted roster.
    pub trained_skills: bool,
    pub style_model: bool,
    pub spin_model: bool,
    /// Start matches from, and save back to, the preference store. Off by
    /// default so reruns with one seed reproduce their reports.
    pub persist_preferences: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self { uniform_random: false, trained_skills: true, style_model: true, spin_model: true, persist_preferences: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub physics: Physics,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    /// Descriptor builds. Its episode settings are also used in play, so
    /// the tables describe the skills as they are run. Its seed is replaced
    /// by the run seed.
    pub descriptors: BuildConfig,
    pub hlc: HlcConfig,
    pub play: PlaySection,
    pub flags: Flags,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative artifact paths are taken relative to
    /// the file's directory unless `paths.root` is absolute.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.paths.root = dir.join(&cfg.paths.root);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Sets one dotted key, e.g. `hlc.alpha=0.2` or `play.opponent=advanced`.
    /// The value is read as a TOML value, or as a bare string if that fails.
    pub fn with_override(&self, assignment: &str) -> Result<Self, ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("override `{assignment}` is not KEY=VALUE")))?;
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let root = self.paths.root.clone();
        let text = self.to_toml()?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields one part");
        let mut node = &mut table;
        for p in parents {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(format!("`{p}` in `{key}` is not a section")))?;
        }
        node.insert(last.to_string(), value);
        let text = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut cfg = Self::from_toml(&text)?;
        // Nested sections ignore unknown keys, so check the key survived.
        let back: toml::Table = toml::from_str(&cfg.to_toml()?).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut node = Some(&back);
        for p in parents {
            node = node.and_then(|t| t.get(*p)).and_then(|v| v.as_table());
        }
        if !node.is_some_and(|t| t.contains_key(*last)) {
            return Err(ConfigError::Invalid(format!("unknown config key `{key}`")));
        }
        if key.trim() != "paths.root" {
            cfg.paths.root = root;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.physics.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        EsConfig::preset(&self.train.preset).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.play.match_cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.hlc.alpha > 0.0) {
            return bad(format!("hlc.alpha must be positive, got {}", self.hlc.alpha));
        }
        if !(0.0..=1.0).contains(&self.train.spin_underspin_fraction) {
            return bad("train.spin_underspin_fraction must lie in [0, 1]".into());
        }
        for p in &self.play.profiles {
            p.validate().map_err(|e| ConfigError::Invalid(format!("profile {}: {e}", p.id)))?;
        }
        for id in std::iter::once(&self.play.opponent).chain(&self.play.tournament) {
            self.profile(id)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form with the seed and the path root
    /// left out, so one hash covers a setup across seeds and directories.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.paths.root = PathBuf::from(".");
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// A profile by id: the config's own first, then the built-ins.
    pub fn profile(&self, id: &str) -> Result<OpponentProfile, ConfigError> {
        if let Some(p) = self.play.profiles.iter().find(|p| p.id == id) {
            return Ok(p.clone());
        }
        builtin_profile(id).ok_or_else(|| ConfigError::Invalid(format!("unknown opponent profile `{id}`")))
    }

    pub fn tournament_profiles(&self) -> Result<Vec<OpponentProfile>, ConfigError> {
        if self.play.tournament.is_empty() {
            return Ok(Tier::ALL.into_iter().map(OpponentProfile::tier).collect());
        }
        self.play.tournament.iter().map(|id| self.profile(id)).collect()
    }

    pub fn stamp(&self) -> Stamp {
        Stamp { seed: self.seed, config_hash: self.hash() }
    }
}

pub fn builtin_profile(id: &str) -> Option<OpponentProfile> {
    match id {
        "never-returns" => Some(OpponentProfile::never_returns()),
        "underspin-exploiter" => Some(OpponentProfile::underspin_exploiter()),
        _ => Tier::parse(id).map(OpponentProfile::tier),
    }
}

/// Seed and config hash carried by every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub seed: u64,
    pub config_hash: String,
}

impl Stamp {
    /// Comment line put above delimited reports.
    pub fn csv_comment(&self) -> String {
        format!("# seed={} config={}\n", self.seed, self.config_hash)
    }

    /// Reads the stamp back from a report's first line.
    pub fn from_csv(text: &str) -> Option<Stamp> {
        let line = text.lines().next()?.strip_prefix("# ")?;
        let mut seed = None;
        let mut hash = None;
        for kv in line.split_whitespace() {
            match kv.split_once('=')? {
                ("seed", v) => seed = v.parse().ok(),
                ("config", v) => hash = Some(v.to_string()),
                _ => {}
            }
        }
        Some(Stamp { seed: seed?, config_hash: hash? })
    }
}
