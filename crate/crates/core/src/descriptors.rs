//! Skill descriptors: per-skill lookup tables from an initial ball state to
//! the skill's simulated performance on similar balls, refined online with
//! real outcomes.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{BallState, Physics};
use crate::dataset::{BallStateRecord, Dataset};
use crate::skills::{resolve_contact, run_until_contact, EpisodeConfig, FixedSkill, Skill, SkillError};
use crate::vec3::Vec2;

pub mod kdtree;

pub use kdtree::{brute_force_knn, KdTree, Neighbor, Point, DIM};

/// Neighbours blended by [`DescriptorTable::update_with_real`].
pub const UPDATE_NEIGHBORS: usize = 25;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("skill {0} never reached a ball; descriptor table would be empty")]
    EmptyTable(usize),
    #[error("descriptor table is empty")]
    NoEntries,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("malformed descriptor file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Skill(#[from] SkillError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillMetrics {
    pub land_rate: f64,
    /// Median forward velocity of the return just after the paddle, m/s.
    pub hit_velocity_y: f64,
    /// Landing statistics over the landed returns; zero when none landed.
    pub landing_mean: Vec2,
    pub landing_std: Vec2,
    pub sample_count: usize,
}

impl SkillMetrics {
    /// Metrics of one observed shot.
    pub fn single(landed: bool, hit_velocity_y: f64, landing: Option<Vec2>) -> Self {
        Self {
            land_rate: landed as u8 as f64,
            hit_velocity_y,
            landing_mean: landing.unwrap_or(Vec2::new(0.0, 0.0)),
            landing_std: Vec2::new(0.0, 0.0),
            sample_count: 1,
        }
    }

    fn has_landing(&self) -> bool {
        self.land_rate > 0.0
    }

    /// Equal-weight blend of `self` with `other`. Landing statistics are
    /// pooled as an equal mixture of the two distributions, and only over the
    /// sides that actually have landed returns. The sample count is kept, so
    /// queries weigh the entry as before.
    pub fn blend(&self, other: &SkillMetrics) -> SkillMetrics {
        let (landing_mean, landing_std) = match (self.has_landing(), other.has_landing()) {
            (true, true) => {
                let pool = |ma: f64, sa: f64, mb: f64, sb: f64| {
                    let m = 0.5 * (ma + mb);
                    let v = 0.5 * (sa * sa + sb * sb) + 0.25 * (ma - mb) * (ma - mb);
                    (m, v.sqrt())
                };
                let (mx, sx) = pool(self.landing_mean.x, self.landing_std.x, other.landing_mean.x, other.landing_std.x);
                let (my, sy) = pool(self.landing_mean.y, self.landing_std.y, other.landing_mean.y, other.landing_std.y);
                (Vec2::new(mx, my), Vec2::new(sx, sy))
            }
            (true, false) => (self.landing_mean, self.landing_std),
            (false, true) => (other.landing_mean, other.landing_std),
            (false, false) => (Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0)),
        };
        SkillMetrics {
            land_rate: (0.5 * (self.land_rate + other.land_rate)).clamp(0.0, 1.0),
            hit_velocity_y: 0.5 * (self.hit_velocity_y + other.hit_velocity_y),
            landing_mean,
            landing_std,
            sample_count: self.sample_count,
        }
    }
}

/// Sample-weighted average of several metrics; landing statistics are
/// weighted by landed samples and pooled.
pub fn weighted_average(items: &[SkillMetrics]) -> Option<SkillMetrics> {
    let total: usize = items.iter().map(|m| m.sample_count).sum();
    if total == 0 {
        return None;
    }
    let w = |m: &SkillMetrics| m.sample_count as f64 / total as f64;
    let land_rate = items.iter().map(|m| w(m) * m.land_rate).sum::<f64>();
    let hit_velocity_y = items.iter().map(|m| w(m) * m.hit_velocity_y).sum::<f64>();
    let landed: f64 = items.iter().map(|m| m.land_rate * m.sample_count as f64).sum();
    let (landing_mean, landing_std) = if landed > 0.0 {
        let lw = |m: &SkillMetrics| m.land_rate * m.sample_count as f64 / landed;
        let mx = items.iter().map(|m| lw(m) * m.landing_mean.x).sum::<f64>();
        let my = items.iter().map(|m| lw(m) * m.landing_mean.y).sum::<f64>();
        let vx = items.iter().map(|m| lw(m) * (m.landing_std.x.powi(2) + (m.landing_mean.x - mx).powi(2))).sum::<f64>();
        let vy = items.iter().map(|m| lw(m) * (m.landing_std.y.powi(2) + (m.landing_mean.y - my).powi(2))).sum::<f64>();
        (Vec2::new(mx, my), Vec2::new(vx.sqrt(), vy.sqrt()))
    } else {
        (Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0))
    };
    Some(SkillMetrics { land_rate: land_rate.clamp(0.0, 1.0), hit_velocity_y, landing_mean, landing_std, sample_count: total })
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub repetitions: usize,
    /// Index of the first repetition; builds with disjoint ranges and the
    /// same seed use the same noise draws as one larger build.
    pub first_repetition: usize,
    pub seed: u64,
    pub episode: EpisodeConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self { repetitions: 10, first_repetition: 0, seed: 0, episode: EpisodeConfig::default() }
    }
}

// SplitMix64 finaliser, used to derive per-ball and per-repetition seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn episode_seed(base: u64, skill: usize, record: u64, repetition: Option<usize>) -> u64 {
    let r = repetition.map_or(0, |r| r as u64 + 1);
    mix(mix(mix(base ^ skill as u64) ^ record) ^ r)
}

/// Metrics of `skill` on one ball: a single approach, then one execution
/// noise draw per repetition at impact.
pub fn measure_ball(
    skill: &Skill,
    record_id: u64,
    ball: &BallState,
    cfg: &BuildConfig,
    physics: &Physics,
) -> Result<(SkillMetrics, bool), SkillError> {
    let skills = std::slice::from_ref(skill);
    let mut approach = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, skill.id(), record_id, None));
    let mut decider = FixedSkill { skill: 0, at_tick: 0 };
    let pre = run_until_contact(skills, ball, &mut decider, &cfg.episode, physics, &mut approach)?;
    let reached = pre.impact.is_some();
    let mut landed = 0usize;
    let mut hits = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in cfg.first_repetition..cfg.first_repetition + cfg.repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, skill.id(), record_id, Some(r)));
        let noise = skill.spec.execution_noise.sample(&mut rng);
        let tr = resolve_contact(&pre, &noise, &cfg.episode, physics)?;
        if let Some(v) = tr.hit_velocity_y() {
            hits.push(v);
        }
        if let (true, Some(l)) = (tr.outcome.landed(), tr.landing) {
            landed += 1;
            xs.push(l.x);
            ys.push(l.y);
        }
    }
    let n = cfg.repetitions.max(1);
    let (landing_mean, landing_std) = if xs.is_empty() {
        (Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0))
    } else {
        let (mx, sx) = mean_std(&xs);
        let (my, sy) = mean_std(&ys);
        (Vec2::new(mx, my), Vec2::new(sx, sy))
    };
    let metrics = SkillMetrics {
        land_rate: landed as f64 / n as f64,
        hit_velocity_y: median(&mut hits).unwrap_or(0.0),
        landing_mean,
        landing_std,
        sample_count: n,
    };
    Ok((metrics, reached))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub metrics: SkillMetrics,
    /// Entry indices of the neighbours used, closest first.
    pub neighbors: Vec<usize>,
    /// Set when `k` exceeded the table size and the whole table was used.
    pub truncated: bool,
}

/// Nearest-neighbour performance table of one skill.
#[derive(Debug, Clone)]
pub struct DescriptorTable {
    pub skill_id: usize,
    /// Per-dimension divisors applied to keys before distances.
    pub scales: Point,
    pub keys: Vec<Point>,
    pub record_ids: Vec<u64>,
    pub metrics: Vec<SkillMetrics>,
    /// Real observations folded in so far, for reporting.
    pub real: Vec<SkillMetrics>,
    tree: KdTree,
}

impl PartialEq for DescriptorTable {
    fn eq(&self, o: &Self) -> bool {
        self.skill_id == o.skill_id
            && self.scales == o.scales
            && self.keys == o.keys
            && self.record_ids == o.record_ids
            && self.metrics == o.metrics
            && self.real == o.real
    }
}

/// Per-dimension standard deviation of the keys; zero spreads become 1.
pub fn key_scales(keys: &[Point]) -> Point {
    let mut s = [1.0; DIM];
    if keys.is_empty() {
        return s;
    }
    let n = keys.len() as f64;
    for (d, sd) in s.iter_mut().enumerate() {
        let m = keys.iter().map(|k| k[d]).sum::<f64>() / n;
        let v = keys.iter().map(|k| (k[d] - m).powi(2)).sum::<f64>() / n;
        if v.sqrt() > 1e-12 {
            *sd = v.sqrt();
        }
    }
    s
}

fn scaled(k: &Point, s: &Point) -> Point {
    let mut out = [0.0; DIM];
    for i in 0..DIM {
        out[i] = k[i] / s[i];
    }
    out
}

impl DescriptorTable {
    pub fn new(
        skill_id: usize,
        scales: Point,
        keys: Vec<Point>,
        record_ids: Vec<u64>,
        metrics: Vec<SkillMetrics>,
    ) -> Result<Self, DescriptorError> {
        if keys.is_empty() {
            return Err(DescriptorError::NoEntries);
        }
        if keys.len() != metrics.len() || keys.len() != record_ids.len() {
            return Err(DescriptorError::Parse("key, id and metric counts differ".into()));
        }
        let tree = KdTree::build(keys.iter().map(|k| scaled(k, &scales)).collect());
        Ok(Self { skill_id, scales, keys, record_ids, metrics, real: Vec::new(), tree })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Entry indices of the `k` nearest keys, closest first, ties to the
    /// lower index.
    pub fn neighbors(&self, key: &Point, k: usize) -> Vec<usize> {
        self.tree.knn(&scaled(key, &self.scales), k).into_iter().map(|n| n.index).collect()
    }

    pub fn query(&self, key: &Point, k: usize) -> Result<QueryResult, DescriptorError> {
        if k == 0 {
            return Err(DescriptorError::ZeroK);
        }
        let truncated = k > self.len();
        let neighbors = self.neighbors(key, k.min(self.len()));
        let picked: Vec<SkillMetrics> = neighbors.iter().map(|&i| self.metrics[i]).collect();
        let metrics = weighted_average(&picked).ok_or(DescriptorError::NoEntries)?;
        Ok(QueryResult { metrics, neighbors, truncated })
    }

    pub fn query_ball(&self, ball: &BallState, k: usize) -> Result<QueryResult, DescriptorError> {
        self.query(&ball.key6(), k)
    }

    /// Blends the observed metrics into each of the 25 nearest entries with
    /// equal weight. Repeated updates weigh later observations more.
    pub fn update_with_real(&mut self, key: &Point, observed: &SkillMetrics) -> Vec<usize> {
        let idx = self.neighbors(key, UPDATE_NEIGHBORS.min(self.len()));
        for &i in &idx {
            self.metrics[i] = self.metrics[i].blend(observed);
        }
        self.real.push(*observed);
        idx
    }

    /// Header line, then one row per entry: record id, 6 key values, then
    /// land rate, hit velocity, landing mean and std, sample count. Real
    /// observations follow as `real` rows.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), DescriptorError> {
        let scales: Vec<String> = self.scales.iter().map(|s| s.to_string()).collect();
        writeln!(w, "descriptor skill={} count={} real={} scales={}", self.skill_id, self.len(), self.real.len(), scales.join(","))?;
        for i in 0..self.len() {
            let mut line = self.record_ids[i].to_string();
            for v in &self.keys[i] {
                let _ = write!(line, " {v}");
            }
            let _ = write!(line, " {}", metrics_row(&self.metrics[i]));
            writeln!(w, "{line}")?;
        }
        for m in &self.real {
            writeln!(w, "real {}", metrics_row(m))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, DescriptorError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| DescriptorError::Parse("missing header".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("descriptor") {
            return Err(DescriptorError::Parse("header must start with `descriptor`".into()));
        }
        let mut skill = None;
        let mut count = None;
        let mut real_count = 0usize;
        let mut scales = None;
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| DescriptorError::Parse(format!("bad header field `{f}`")))?;
            match k {
                "skill" => skill = Some(parse::<usize>(v)?),
                "count" => count = Some(parse::<usize>(v)?),
                "real" => real_count = parse::<usize>(v)?,
                "scales" => {
                    let vals: Vec<f64> = v.split(',').map(parse::<f64>).collect::<Result<_, _>>()?;
                    scales = Some(<Point>::try_from(vals.as_slice()).map_err(|_| DescriptorError::Parse("need 6 scales".into()))?);
                }
                _ => return Err(DescriptorError::Parse(format!("unknown header field `{k}`"))),
            }
        }
        let (skill, count, scales) = match (skill, count, scales) {
            (Some(s), Some(c), Some(sc)) => (s, c, sc),
            _ => return Err(DescriptorError::Parse("header needs skill, count and scales".into())),
        };
        let (mut keys, mut ids, mut metrics, mut real) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts[0] == "real" {
                real.push(parse_metrics(&parts[1..])?);
                continue;
            }
            if parts.len() != 1 + DIM + 7 {
                return Err(DescriptorError::Parse(format!("row has {} fields", parts.len())));
            }
            ids.push(parse::<u64>(parts[0])?);
            let mut k = [0.0; DIM];
            for (d, kv) in k.iter_mut().enumerate() {
                *kv = parse::<f64>(parts[1 + d])?;
            }
            keys.push(k);
            metrics.push(parse_metrics(&parts[1 + DIM..])?);
        }
        if keys.len() != count || real.len() != real_count {
            return Err(DescriptorError::Parse(format!("header promises {count} rows, found {}", keys.len())));
        }
        let mut t = Self::new(skill, scales, keys, ids, metrics)?;
        t.real = real;
        Ok(t)
    }

    pub fn save_path(&self, path: &std::path::Path) -> Result<(), DescriptorError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_path(path: &std::path::Path) -> Result<Self, DescriptorError> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Mean metrics over every entry.
    pub fn overall(&self) -> SkillMetrics {
        weighted_average(&self.metrics).expect("table is non-empty")
    }
}

fn metrics_row(m: &SkillMetrics) -> String {
    format!(
        "{} {} {} {} {} {} {}",
        m.land_rate, m.hit_velocity_y, m.landing_mean.x, m.landing_mean.y, m.landing_std.x, m.landing_std.y, m.sample_count
    )
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, DescriptorError> {
    s.parse().map_err(|_| DescriptorError::Parse(format!("cannot parse `{s}`")))
}

fn parse_metrics(p: &[&str]) -> Result<SkillMetrics, DescriptorError> {
    if p.len() != 7 {
        return Err(DescriptorError::Parse(format!("metrics need 7 fields, got {}", p.len())));
    }
    Ok(SkillMetrics {
        land_rate: parse(p[0])?,
        hit_velocity_y: parse(p[1])?,
        landing_mean: Vec2::new(parse(p[2])?, parse(p[3])?),
        landing_std: Vec2::new(parse(p[4])?, parse(p[5])?),
        sample_count: parse(p[6])?,
    })
}

/// Records a skill is built on: serves for serve receivers, rally balls
/// otherwise.
pub fn records_for<'a>(skill: &Skill, dataset: &'a Dataset) -> Vec<&'a BallStateRecord> {
    dataset.records().iter().filter(|r| r.is_serve == skill.spec.is_serve_receiver).collect()
}

/// Simulates `skill` on every matching record and tabulates the averaged
/// metrics by initial state.
pub fn build_descriptor(
    skill: &Skill,
    dataset: &Dataset,
    cfg: &BuildConfig,
    physics: &Physics,
) -> Result<DescriptorTable, DescriptorError> {
    let records = records_for(skill, dataset);
    let mut keys = Vec::with_capacity(records.len());
    let mut ids = Vec::with_capacity(records.len());
    let mut metrics = Vec::with_capacity(records.len());
    let mut any = false;
    for r in records {
        let (m, reached) = measure_ball(skill, r.id, &r.initial, cfg, physics)?;
        any |= reached;
        keys.push(r.initial.key6());
        ids.push(r.id);
        metrics.push(m);
    }
    if !any {
        return Err(DescriptorError::EmptyTable(skill.id()));
    }
    let scales = key_scales(&keys);
    DescriptorTable::new(skill.id(), scales, keys, ids, metrics)
}

/// One table per skill, indexed by position in the roster.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub tables: Vec<DescriptorTable>,
}

impl DescriptorSet {
    pub fn build(skills: &[Skill], dataset: &Dataset, cfg: &BuildConfig, physics: &Physics) -> Result<Self, DescriptorError> {
        let tables = skills.iter().map(|s| build_descriptor(s, dataset, cfg, physics)).collect::<Result<_, _>>()?;
        Ok(Self { tables })
    }

    pub fn table(&self, skill_id: usize) -> Option<&DescriptorTable> {
        self.tables.iter().find(|t| t.skill_id == skill_id)
    }

    pub fn table_mut(&mut self, skill_id: usize) -> Option<&mut DescriptorTable> {
        self.tables.iter_mut().find(|t| t.skill_id == skill_id)
    }

    pub fn save_dir(&self, dir: &std::path::Path) -> Result<(), DescriptorError> {
        std::fs::create_dir_all(dir)?;
        for t in &self.tables {
            t.save_path(&dir.join(format!("skill_{:02}.desc", t.skill_id)))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &std::path::Path) -> Result<Self, DescriptorError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "desc"))
            .collect();
        paths.sort();
        let tables = paths.iter().map(|p| DescriptorTable::load_path(p)).collect::<Result<Vec<_>, _>>()?;
        if tables.is_empty() {
            return Err(DescriptorError::NoEntries);
        }
        Ok(Self { tables })
    }

    /// Per-skill summary, simulated and real side by side, as CSV.
    pub fn report(&self, skills: &[Skill]) -> String {
        let mut out = String::from(
            "skill,name,entries,sim_land_rate,sim_hit_velocity_y,sim_landing_x,sim_landing_y,real_shots,real_land_rate,real_hit_velocity_y,real_landing_x,real_landing_y\n",
        );
        for t in &self.tables {
            let name = skills.iter().find(|s| s.id() == t.skill_id).map_or("", |s| s.spec.name.as_str());
            let sim = t.overall();
            let real = weighted_average(&t.real);
            let real_cols = match real {
                Some(r) => format!(
                    "{},{:.4},{:.3},{:.3},{:.3}",
                    t.real.len(),
                    r.land_rate,
                    r.hit_velocity_y,
                    r.landing_mean.x,
                    r.landing_mean.y
                ),
                None => "0,,,,".to_string(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.3},{:.3},{:.3},{}",
                t.skill_id,
                name,
                t.len(),
                sim.land_rate,
                sim.hit_velocity_y,
                sim.landing_mean.x,
                sim.landing_mean.y,
                real_cols
            );
        }
        out
    }
}
