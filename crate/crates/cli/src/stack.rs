//! Artifact I/O and assembling the robot from saved stages.

use std::path::{Path, PathBuf};

use rallybot::config::{RunConfig, Stamp};
use rallybot::dataset::Dataset;
use rallybot::descriptors::DescriptorSet;
use rallybot::hlc::{Hlc, SelectionMode, SpinClassifier, StyleSelector};
use rallybot::matchsim::Robot;
use rallybot::skills::{default_skills, Skill};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::failure::{Failure, DATA};

pub fn skill_file(cfg: &RunConfig, id: usize) -> PathBuf {
    cfg.paths.skills().join(format!("skill_{id:02}.json"))
}

pub fn style_file(cfg: &RunConfig) -> PathBuf {
    cfg.paths.models().join("style.json")
}

pub fn spin_file(cfg: &RunConfig) -> PathBuf {
    cfg.paths.models().join("spin.json")
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::data(e).context(format!("creating {}", dir.display())))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Failure::data(e).context(format!("writing {}", path.display())))
}

/// A delimited report with the stamp as its first line.
pub fn write_csv(path: &Path, stamp: &Stamp, body: &str) -> Result<(), Failure> {
    write_text(path, &format!("{}{body}", stamp.csv_comment()))
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    seed: u64,
    config_hash: &'a str,
    kind: &'a str,
    payload: &'a T,
}

/// A JSON artifact: the stamp, a kind tag and the payload.
pub fn write_json<T: Serialize>(path: &Path, stamp: &Stamp, kind: &str, payload: &T) -> Result<(), Failure> {
    let doc = Stamped { seed: stamp.seed, config_hash: &stamp.config_hash, kind, payload };
    let text = serde_json::to_string_pretty(&doc).map_err(Failure::data)?;
    write_text(path, &(text + "\n"))
}

/// Payload of a JSON artifact written by [`write_json`].
pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(e).context(format!("reading {}", path.display())))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::data(e).context(format!("parsing {}", path.display())))?;
    if doc.get("kind").and_then(|k| k.as_str()) != Some(kind) {
        return Err(Failure::msg(DATA, format!("{} is not a {kind} artifact", path.display())));
    }
    serde_json::from_value(doc["payload"].take()).map_err(|e| Failure::data(e).context(format!("parsing {}", path.display())))
}

/// Sidecar next to artifacts whose own format has no room for a stamp.
pub fn write_meta(path: &Path, stamp: &Stamp, command: &str, items: usize) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct Meta<'a> {
        command: &'a str,
        items: usize,
    }
    write_json(path, stamp, "meta", &Meta { command, items })
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    let path = cfg.paths.dataset();
    if !path.exists() {
        return Err(Failure::msg(
            DATA,
            format!("missing dataset stage: {} not found (run `rallybot dataset synth` or `dataset import`)", path.display()),
        ));
    }
    let d = Dataset::load_path(&path).map_err(|e| Failure::data(e).context(format!("loading {}", path.display())))?;
    if d.is_empty() {
        return Err(Failure::msg(DATA, format!("dataset {} is empty", path.display())));
    }
    Ok(d)
}

/// The scripted roster with any trained skill files laid over it by id.
pub fn load_roster(cfg: &RunConfig) -> Result<Vec<Skill>, Failure> {
    let mut skills = default_skills();
    let dir = cfg.paths.skills();
    if !cfg.flags.trained_skills || !dir.is_dir() {
        return Ok(skills);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("skill_") && n.ends_with(".json") && !n.contains(".checkpoint"))
        })
        .collect();
    files.sort();
    for f in files {
        let skill: Skill = read_json(&f, "skill")?;
        match skills.iter_mut().find(|s| s.id() == skill.id()) {
            Some(slot) => *slot = skill,
            None => skills.push(skill),
        }
    }
    Ok(skills)
}

/// Skills, descriptors and optional models assembled for play.
pub fn load_robot(cfg: &RunConfig, uniform_random: bool) -> Result<Robot, Failure> {
    let skills = load_roster(cfg)?;
    let dir = cfg.paths.descriptors();
    if !dir.is_dir() {
        return Err(Failure::msg(
            DATA,
            format!("missing descriptors stage: {} not found (run `rallybot descriptors build`)", dir.display()),
        ));
    }
    let descriptors = DescriptorSet::load_dir(&dir).map_err(|e| Failure::data(e).context(format!("loading {}", dir.display())))?;
    for s in &skills {
        if descriptors.table(s.id()).is_none() {
            return Err(Failure::msg(
                DATA,
                format!("missing descriptors stage: no table for skill {} (rerun `rallybot descriptors build`)", s.id()),
            ));
        }
    }
    let specs = skills.iter().map(|s| s.spec.clone()).collect();
    let mut hlc = Hlc::new(specs, descriptors, cfg.hlc.clone());
    if uniform_random || cfg.flags.uniform_random {
        hlc.cfg.mode = SelectionMode::UniformRandom;
    }
    let style = style_file(cfg);
    if cfg.flags.style_model && style.exists() {
        hlc.style = read_json::<StyleModel>(&style, "style")?.selector;
    }
    let spin = spin_file(cfg);
    if cfg.flags.spin_model && spin.exists() {
        hlc.spin = Some(read_json::<SpinModel>(&spin, "spin")?.classifier);
    }
    let robot = Robot { stroke_model: cfg.train.stroke_model, ..Robot::new(hlc, skills, cfg.descriptors.episode, cfg.physics) };
    Ok(robot)
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct StyleModel {
    pub selector: StyleSelector,
    pub heuristic_validation: f64,
    pub trained_validation: f64,
    pub kept_trained: bool,
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct SpinModel {
    pub classifier: SpinClassifier,
    pub report: rallybot::hlc::spin::SpinReport,
}
