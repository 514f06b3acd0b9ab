//! Corpus of initial ball states: ingestion of observed ball streams,
//! segmentation, initial-state fitting, reflection augmentation and
//! return-rate weighted sampling.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{
    annotate_style_side, classify_category, BallCategory, BallState, BallisticsError, Category, EventKind, Physics,
    Side, StyleBands, StyleSide, Trajectory,
};
use crate::optimizer::{es_step, EsConfig};
use crate::vec3::Vec3;

pub mod synth;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown record id {0}")]
    UnknownId(u64),
    #[error("duplicate record id {0}")]
    DuplicateId(u64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("fit failed with residual {residual:.4} m")]
    FitFailed { best: BallState, residual: f64 },
    #[error("no valid perturbed state after {0} attempts")]
    SamplingExhausted(usize),
    #[error("no records available for sampling")]
    EmptySelection,
    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ballistics(#[from] BallisticsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    /// Hit and landed on the far side.
    Return,
    /// Touched but did not land.
    Hit,
    Miss,
    Unknown,
}

impl Outcome {
    fn counts(self) -> Option<bool> {
        match self {
            Outcome::Return => Some(true),
            Outcome::Hit | Outcome::Miss => Some(false),
            Outcome::Unknown => None,
        }
    }
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallStateRecord {
    pub id: u64,
    pub initial: BallState,
    pub is_serve: bool,
    pub outcome: Outcome,
    pub categories: BallCategory,
    pub style_side: StyleSide,
    pub cycle: u32,
    pub reflected: bool,
    /// Within-category sampling weight.
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

impl BallStateRecord {
    /// Builds a record with categories and style side derived from `initial`.
    pub fn annotate(
        id: u64,
        initial: BallState,
        is_serve: bool,
        cycle: u32,
        physics: &Physics,
        bands: &StyleBands,
    ) -> Result<Self, DatasetError> {
        let style_side = annotate_style_side(&initial, &physics.flight, &physics.contact, &physics.geometry, bands)?;
        Ok(Self {
            id,
            initial,
            is_serve,
            outcome: Outcome::Unknown,
            categories: classify_category(&initial),
            style_side,
            cycle,
            reflected: false,
            weight: 1.0,
        })
    }

    pub fn mirrored(&self, id: u64) -> Self {
        Self {
            id,
            initial: reflect_state(&self.initial),
            style_side: self.style_side.mirrored(),
            reflected: !self.reflected,
            ..self.clone()
        }
    }
}

/// Mirror image across the `x = 0` plane. Spin is an axial vector, so its
/// lateral component is kept and the other two flip.
pub fn reflect_state(s: &BallState) -> BallState {
    BallState::new(
        Vec3::new(-s.position.x, s.position.y, s.position.z),
        Vec3::new(-s.velocity.x, s.velocity.y, s.velocity.z),
        Vec3::new(s.spin.x, -s.spin.y, -s.spin.z),
    )
}

/// Half-turn about the vertical axis: maps a ball travelling towards +y onto
/// one travelling towards -y.
pub fn rotate_half_turn(s: &BallState) -> BallState {
    let r = |v: Vec3| Vec3::new(-v.x, -v.y, v.z);
    BallState::new(r(s.position), r(s.velocity), r(s.spin))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateCounter {
    pub returned: u64,
    pub attempts: u64,
}

impl RateCounter {
    /// Return rate, or `prior` when nothing has been recorded.
    pub fn rate_or(&self, prior: f64) -> f64 {
        if self.attempts == 0 {
            prior
        } else {
            self.returned as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<BallStateRecord>,
    index: HashMap<u64, usize>,
    accumulators: [RateCounter; 7],
    next_id: u64,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<BallStateRecord>) -> Result<Self, DatasetError> {
        let mut d = Self::new();
        for r in records {
            d.insert(r)?;
        }
        Ok(d)
    }

    pub fn records(&self) -> &[BallStateRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&BallStateRecord> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn accumulator(&self, c: Category) -> RateCounter {
        self.accumulators[c.index()]
    }

    fn account(&mut self, categories: &BallCategory, outcome: Outcome, sign: i64) {
        let Some(returned) = outcome.counts() else { return };
        for c in categories.labels() {
            let acc = &mut self.accumulators[c.index()];
            acc.attempts = (acc.attempts as i64 + sign) as u64;
            if returned {
                acc.returned = (acc.returned as i64 + sign) as u64;
            }
        }
    }

    pub fn insert(&mut self, record: BallStateRecord) -> Result<u64, DatasetError> {
        if self.index.contains_key(&record.id) {
            return Err(DatasetError::DuplicateId(record.id));
        }
        let id = record.id;
        self.account(&record.categories, record.outcome, 1);
        self.index.insert(id, self.records.len());
        self.next_id = self.next_id.max(id + 1);
        self.records.push(record);
        Ok(id)
    }

    /// Adds a freshly annotated record with the next free id.
    pub fn push_state(
        &mut self,
        initial: BallState,
        is_serve: bool,
        cycle: u32,
        physics: &Physics,
        bands: &StyleBands,
    ) -> Result<u64, DatasetError> {
        let r = BallStateRecord::annotate(self.next_id, initial, is_serve, cycle, physics, bands)?;
        self.insert(r)
    }

    /// Sets a record's outcome and keeps the category accumulators in step.
    /// `overweight` sets the within-category sampling weight of Hit and Miss
    /// records.
    pub fn record_outcome(&mut self, id: u64, outcome: Outcome, overweight: Option<f64>) -> Result<(), DatasetError> {
        let &i = self.index.get(&id).ok_or(DatasetError::UnknownId(id))?;
        let (cats, old) = (self.records[i].categories, self.records[i].outcome);
        self.account(&cats, old, -1);
        self.account(&cats, outcome, 1);
        let r = &mut self.records[i];
        r.outcome = outcome;
        if let Some(w) = overweight {
            if matches!(outcome, Outcome::Hit | Outcome::Miss) {
                r.weight = w.max(0.0);
            }
        }
        Ok(())
    }

    /// Accumulators rebuilt from the records alone.
    pub fn recount(&self) -> [RateCounter; 7] {
        let mut fresh = Dataset::new();
        for r in &self.records {
            fresh.account(&r.categories, r.outcome, 1);
        }
        fresh.accumulators
    }

    pub fn accumulators(&self) -> [RateCounter; 7] {
        self.accumulators
    }

    /// Line-delimited JSON, one record per line.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(|e| DatasetError::Parse { line: 0, message: e.to_string() })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, DatasetError> {
        let mut d = Dataset::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: BallStateRecord =
                serde_json::from_str(&line).map_err(|e| DatasetError::Parse { line: i + 1, message: e.to_string() })?;
            d.insert(rec)?;
        }
        Ok(d)
    }

    pub fn save_path(&self, path: &std::path::Path) -> Result<(), DatasetError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_path(path: &std::path::Path) -> Result<Self, DatasetError> {
        let f = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(f))
    }

    pub fn rally_records(&self) -> impl Iterator<Item = &BallStateRecord> {
        self.records.iter().filter(|r| !r.is_serve)
    }

    pub fn serve_records(&self) -> impl Iterator<Item = &BallStateRecord> {
        self.records.iter().filter(|r| r.is_serve)
    }

    /// Category counts in the column order `All, Forehand, Center, Backhand,
    /// Fast, Normal, Slow, Topspin, Nospin, Underspin, Lob`.
    pub fn summary_row<'a>(records: impl Iterator<Item = &'a BallStateRecord>) -> [usize; 11] {
        let mut row = [0usize; 11];
        for r in records {
            row[0] += 1;
            row[1 + match r.style_side {
                StyleSide::Forehand => 0,
                StyleSide::Center => 1,
                StyleSide::Backhand => 2,
            }] += 1;
            for c in r.categories.labels() {
                row[4 + c.index()] += 1;
            }
        }
        row
    }

    /// Per-cycle summary table as CSV, split by rally and serve records.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "dataset_type,dataset,all,forehand,center,backhand,fast,normal,slow,topspin,nospin,underspin,lob\n",
        );
        for (label, serve) in [("Rallying", false), ("Serves", true)] {
            let mut cycles: Vec<u32> = self.records.iter().filter(|r| r.is_serve == serve).map(|r| r.cycle).collect();
            cycles.sort_unstable();
            cycles.dedup();
            let mut push = |name: String, row: [usize; 11]| {
                out.push_str(&format!("{label},{name}"));
                for v in row {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            };
            for c in &cycles {
                let name = if *c == 0 { "Initial".to_string() } else { format!("Cycle {c}") };
                let row = Self::summary_row(
                    self.records.iter().filter(|r| r.is_serve == serve && r.cycle == *c && !r.reflected),
                );
                push(name, row);
            }
            if cycles.is_empty() {
                continue;
            }
            push("Final".into(), Self::summary_row(self.records.iter().filter(|r| r.is_serve == serve && !r.reflected)));
            if self.records.iter().any(|r| r.is_serve == serve && r.reflected) {
                push("Final+reflection".into(), Self::summary_row(self.records.iter().filter(|r| r.is_serve == serve)));
            }
        }
        out
    }
}

/// Appends a mirrored copy of every record, so the size exactly doubles.
pub fn reflect_y(dataset: &Dataset) -> Dataset {
    let mut out = dataset.clone();
    let mut id = dataset.next_id;
    for r in dataset.records() {
        out.insert(r.mirrored(id)).expect("fresh ids are unique");
        id += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedTrajectory {
    pub samples: Vec<(f64, Vec3)>,
    pub source: String,
}

impl ObservedTrajectory {
    pub fn new(samples: Vec<(f64, Vec3)>, source: impl Into<String>) -> Result<Self, DatasetError> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(DatasetError::Parse { line: i + 2, message: "timestamps must strictly increase".into() });
            }
        }
        Ok(Self { samples, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }

    /// Parses `t,x,y,z` rows; a non-numeric first line is taken as a header.
    pub fn from_csv(text: &str, source: &str) -> Result<Self, DatasetError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 4 => samples.push((v[0], Vec3::new(v[1], v[2], v[3]))),
                Err(_) if i == 0 => continue,
                _ => {
                    return Err(DatasetError::Parse { line: i + 1, message: "expected four numeric fields t,x,y,z".into() })
                }
            }
        }
        Self::new(samples, source)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,y,z\n");
        for (t, p) in &self.samples {
            s.push_str(&format!("{t},{},{},{}\n", p.x, p.y, p.z));
        }
        s
    }

    fn slice(&self, a: usize, b: usize) -> Self {
        Self { samples: self.samples[a..b].to_vec(), source: self.source.clone() }
    }

    /// Half-turn about the vertical axis.
    pub fn rotated_half_turn(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|(t, p)| (*t, Vec3::new(-p.x, -p.y, p.z))).collect(),
            source: self.source.clone(),
        }
    }

    /// Sign of the net y displacement over the first few samples.
    pub fn heading_y(&self) -> f64 {
        let n = self.samples.len().min(5);
        if n < 2 {
            return 0.0;
        }
        (self.samples[n - 1].1.y - self.samples[0].1.y).signum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    /// Minimum change in y velocity across a reversal, m/s.
    pub reversal_threshold: f64,
    /// Samples on each side of a candidate hit used for the velocity estimates.
    pub window: usize,
    pub min_samples: usize,
    pub min_displacement: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { reversal_threshold: 2.0, window: 3, min_samples: 5, min_displacement: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<ObservedTrajectory>,
    /// Sample indices where hits were detected.
    pub hits: Vec<usize>,
    pub warning: Option<String>,
}

/// Splits a stream at hits. A hit is a sign reversal of the y velocity,
/// estimated over `window` samples on each side, with a change larger than
/// the threshold. Segments start at hits; with no hit, a moving stream is a
/// single segment. The partial flight before the first hit is dropped.
pub fn segment_trajectories(stream: &ObservedTrajectory, cfg: &SegmentConfig) -> Segmentation {
    let n = stream.samples.len();
    let w = cfg.window.max(1);
    if n < 8 {
        return Segmentation { segments: vec![], hits: vec![], warning: Some(format!("stream too short ({n} samples)")) };
    }
    let s = &stream.samples;
    let vy = |a: usize, b: usize| (s[b].1.y - s[a].1.y) / (s[b].0 - s[a].0);
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for j in w..n.saturating_sub(w) {
        let before = vy(j - w, j);
        let after = vy(j, j + w);
        let change = (after - before).abs();
        if before * after < 0.0 && change > cfg.reversal_threshold {
            candidates.push((j, change));
        }
    }
    // Keep the strongest candidate of each run of neighbouring detections.
    let mut hits: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < candidates.len() {
        let mut best = candidates[i];
        let mut k = i + 1;
        while k < candidates.len() && candidates[k].0 <= candidates[k - 1].0 + w {
            if candidates[k].1 > best.1 {
                best = candidates[k];
            }
            k += 1;
        }
        hits.push(best.0);
        i = k;
    }
    let bounds: Vec<(usize, usize)> = if hits.is_empty() {
        vec![(0, n)]
    } else {
        hits.iter().enumerate().map(|(k, &h)| (h, hits.get(k + 1).copied().unwrap_or(n))).collect()
    };
    let segments = bounds
        .into_iter()
        .map(|(a, b)| stream.slice(a, b))
        .filter(|seg| {
            if seg.len() < cfg.min_samples {
                return false;
            }
            let p0 = seg.samples[0].1;
            seg.samples.iter().map(|(_, p)| (*p - p0).norm()).fold(0.0, f64::max) >= cfg.min_displacement
        })
        .collect();
    Segmentation { segments, hits, warning: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub es_iterations: usize,
    pub es_perturbations: usize,
    pub lm_iterations: usize,
    /// RMSE above which a fit is reported as failed, m.
    pub residual_ceiling: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { restarts: 4, es_iterations: 25, es_perturbations: 9, lm_iterations: 40, residual_ceiling: 0.02, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub state: BallState,
    /// Position RMSE over the observations, m.
    pub residual: f64,
}

// Optimisation coordinates are scaled so unit steps are comparable.
const FIT_SCALES: [f64; 9] = [0.01, 0.01, 0.01, 0.1, 0.1, 0.1, 10.0, 10.0, 10.0];

fn to_state(x: &[f64]) -> BallState {
    let v: Vec<f64> = x.iter().zip(FIT_SCALES).map(|(a, s)| a * s).collect();
    BallState::from_array(&v)
}

fn to_coords(s: &BallState) -> Vec<f64> {
    s.to_array().iter().zip(FIT_SCALES).map(|(a, s)| a / s).collect()
}

/// Simulated positions at `times` (relative to the initial state), sampled
/// exactly at step boundaries and linearly between them otherwise. Net
/// collisions are ignored.
pub fn simulate_positions(initial: &BallState, times: &[f64], physics: &Physics) -> Vec<Vec3> {
    let dt = physics.flight.dt;
    let mut prop = physics.propagator(*initial);
    prop.collide_net = false;
    let mut events = Vec::new();
    let mut out = Vec::with_capacity(times.len());
    let mut step = 0usize;
    let mut prev = initial.position;
    let mut cur = initial.position;
    for &t in times {
        let f = t / dt;
        let target = f.floor().max(0.0) as usize;
        let frac = f - target as f64;
        let (target, frac) = if frac > 1.0 - 1e-9 { (target + 1, 0.0) } else { (target, frac) };
        let need = if frac > 1e-9 { target + 1 } else { target };
        while step < need {
            prev = cur;
            if !prop.done {
                let _ = prop.step(&mut events);
                events.clear();
            }
            cur = prop.state.position;
            step += 1;
        }
        if frac > 1e-9 {
            out.push(prev + (cur - prev) * frac);
        } else {
            out.push(cur);
        }
    }
    out
}

fn rmse(sim: &[Vec3], obs: &[(f64, Vec3)]) -> f64 {
    let sse: f64 = sim.iter().zip(obs).map(|(a, (_, b))| (*a - *b).norm_squared()).sum();
    (sse / obs.len() as f64).sqrt()
}

/// Position RMSE of `state` against the observations, with times measured
/// from the first sample.
pub fn fit_residual(state: &BallState, traj: &ObservedTrajectory, physics: &Physics) -> f64 {
    let t0 = traj.samples[0].0;
    let times: Vec<f64> = traj.samples.iter().map(|(t, _)| t - t0).collect();
    rmse(&simulate_positions(state, &times, physics), &traj.samples)
}

// Quadratic least-squares fit over the first samples for a starting point.
fn initial_guess(traj: &ObservedTrajectory, gravity: f64) -> BallState {
    let n = traj.samples.len().min(8);
    let t0 = traj.samples[0].0;
    let pts: Vec<(f64, Vec3)> = traj.samples[..n].iter().map(|(t, p)| (t - t0, *p)).collect();
    // Linear fit of p(t) + g t^2 / 2 in z, plain linear fit in x and y.
    let m = n as f64;
    let st: f64 = pts.iter().map(|(t, _)| t).sum();
    let stt: f64 = pts.iter().map(|(t, _)| t * t).sum();
    let det = m * stt - st * st;
    let fit = |f: &dyn Fn(&(f64, Vec3)) -> f64| {
        let sy: f64 = pts.iter().map(f).sum();
        let sty: f64 = pts.iter().map(|p| p.0 * f(p)).sum();
        let slope = (m * sty - st * sy) / det;
        let icpt = (sy - slope * st) / m;
        (icpt, slope)
    };
    let (px, vx) = fit(&|p| p.1.x);
    let (py, vy) = fit(&|p| p.1.y);
    let (pz, vz) = fit(&|p| p.1.z + 0.5 * gravity * p.0 * p.0);
    BallState::new(Vec3::new(px, py, pz), Vec3::new(vx, vy, vz), Vec3::ZERO)
}

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn residual_vector(x: &[f64], times: &[f64], obs: &[(f64, Vec3)], physics: &Physics) -> Vec<f64> {
    let sim = simulate_positions(&to_state(x), times, physics);
    sim.iter()
        .zip(obs)
        .flat_map(|(a, (_, b))| {
            let d = *a - *b;
            [d.x, d.y, d.z]
        })
        .collect()
}

// Levenberg-Marquardt with a forward-difference Jacobian.
fn levenberg_marquardt(x0: Vec<f64>, times: &[f64], obs: &[(f64, Vec3)], physics: &Physics, iterations: usize) -> Vec<f64> {
    let mut x = x0;
    let mut r = residual_vector(&x, times, obs, physics);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let h = 1e-6;
    let dim = x.len();
    for _ in 0..iterations {
        let cols: Vec<Vec<f64>> = (0..dim)
            .map(|j| {
                let mut xp = x.clone();
                xp[j] += h;
                let rp = residual_vector(&xp, times, obs, physics);
                rp.iter().zip(&r).map(|(a, b)| (a - b) / h).collect()
            })
            .collect();
        let mut jtj = vec![vec![0.0; dim]; dim];
        let mut jtr = vec![0.0; dim];
        for i in 0..dim {
            for k in 0..=i {
                let v: f64 = cols[i].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                jtj[i][k] = v;
                jtj[k][i] = v;
            }
            jtr[i] = cols[i].iter().zip(&r).map(|(a, b)| a * b).sum();
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj.clone();
            for i in 0..dim {
                a[i][i] += lambda * (jtj[i][i] + 1e-9);
            }
            let Some(delta) = solve_linear(a, jtr.iter().map(|v| -v).collect()) else { break };
            let cand: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let rc = residual_vector(&cand, times, obs, physics);
            let cc: f64 = rc.iter().map(|v| v * v).sum();
            if cc.is_finite() && cc < cost {
                let rel = (cost - cc) / cost.max(1e-300);
                x = cand;
                r = rc;
                cost = cc;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-12 {
                    return x;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    x
}

/// Fits the 9-dim initial state of an observed flight: a few evolution
/// strategies restarts from a finite-difference estimate with different spin
/// seeds, each polished by Levenberg-Marquardt. The residual is the position
/// RMSE of the returned state.
pub fn fit_initial_state(
    traj: &ObservedTrajectory,
    physics: &Physics,
    cfg: &FitConfig,
) -> Result<FitResult, DatasetError> {
    use rand::SeedableRng;
    if traj.len() < 10 || traj.duration() < 0.1 {
        return Err(DatasetError::Precondition("fitting needs at least 10 samples spanning 0.1 s".into()));
    }
    let t0 = traj.samples[0].0;
    let times: Vec<f64> = traj.samples.iter().map(|(t, _)| t - t0).collect();
    let obs = &traj.samples;
    let guess = initial_guess(traj, physics.flight.gravity);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let es = EsConfig {
        step_size: 0.5,
        perturbation_std: 0.5,
        num_perturbations: cfg.es_perturbations.max(1),
        rollouts_per_perturbation: 1,
        keep_fraction: 0.5,
        ..EsConfig::simulation()
    };
    let spin_seeds = [0.0, 80.0, -80.0, 30.0, -30.0, 150.0, -150.0];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let mut start = guess;
        start.spin.x = spin_seeds[restart % spin_seeds.len()];
        if restart >= spin_seeds.len() {
            start.spin.x += rng.random_range(-50.0..50.0);
        }
        let mut x = to_coords(&start);
        let objective = |p: &[f64], _: u64| {
            let sim = simulate_positions(&to_state(p), &times, physics);
            -rmse(&sim, obs).powi(2) * 1e4
        };
        for _ in 0..cfg.es_iterations {
            match es_step(&x, objective, &es, &mut rng) {
                Ok(s) => x = s.params,
                Err(_) => break,
            }
        }
        let x = levenberg_marquardt(x, &times, obs, physics, cfg.lm_iterations);
        let res = rmse(&simulate_positions(&to_state(&x), &times, physics), obs);
        if best.as_ref().is_none_or(|b| res < b.1) {
            best = Some((x, res));
        }
    }
    let (x, _) = best.expect("at least one restart");
    let state = to_state(&x);
    let residual = fit_residual(&state, traj, physics);
    if !(residual <= cfg.residual_ceiling) {
        return Err(DatasetError::FitFailed { best: state, residual });
    }
    Ok(FitResult { state, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub position: f64,
    pub velocity: f64,
    pub spin: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { position: 0.005, velocity: 0.05, spin: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Added to every category return rate before inversion.
    pub epsilon: f64,
    /// Return rate assumed for a category with no recorded outcomes.
    pub prior_rate: f64,
    /// Restrict to these categories; empty means all.
    pub categories: Vec<Category>,
    /// Restrict to these style sides; empty means all.
    pub style_sides: Vec<StyleSide>,
    pub serves: bool,
    pub rallies: bool,
    pub max_attempts: usize,
    pub perturbation: PerturbationConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            prior_rate: 0.5,
            categories: vec![],
            style_sides: vec![],
            serves: false,
            rallies: true,
            max_attempts: 100,
            perturbation: PerturbationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub record_id: u64,
    pub category: Category,
    pub state: BallState,
}

/// Precomputed category and record weights over a dataset snapshot.
#[derive(Debug, Clone)]
pub struct Sampler {
    categories: Vec<Category>,
    category_cdf: Vec<f64>,
    members: Vec<Vec<usize>>,
    member_cdf: Vec<Vec<f64>>,
    cfg: SamplerConfig,
}

fn cdf(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn pick<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().unwrap();
    let u = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl Sampler {
    pub fn new(dataset: &Dataset, cfg: &SamplerConfig) -> Result<Self, DatasetError> {
        let wanted: Vec<Category> = if cfg.categories.is_empty() { Category::ALL.to_vec() } else { cfg.categories.clone() };
        let mut categories = Vec::new();
        let mut weights = Vec::new();
        let mut members = Vec::new();
        let mut member_cdf = Vec::new();
        for c in wanted {
            let idx: Vec<usize> = dataset
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    (if r.is_serve { cfg.serves } else { cfg.rallies })
                        && r.categories.contains(c)
                        && (cfg.style_sides.is_empty() || cfg.style_sides.contains(&r.style_side))
                        && r.weight > 0.0
                })
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let rate = dataset.accumulator(c).rate_or(cfg.prior_rate);
            weights.push(1.0 / (rate + cfg.epsilon).max(1e-9));
            member_cdf.push(cdf(idx.iter().map(|&i| dataset.records[i].weight)));
            members.push(idx);
            categories.push(c);
        }
        if categories.is_empty() {
            return Err(DatasetError::EmptySelection);
        }
        Ok(Self { categories, category_cdf: cdf(weights.into_iter()), members, member_cdf, cfg: cfg.clone() })
    }

    /// Sampling probability of each non-empty category.
    pub fn category_probabilities(&self) -> Vec<(Category, f64)> {
        let total = *self.category_cdf.last().unwrap();
        let mut prev = 0.0;
        self.categories
            .iter()
            .zip(&self.category_cdf)
            .map(|(c, &v)| {
                let p = (v - prev) / total;
                prev = v;
                (*c, p)
            })
            .collect()
    }

    /// Draws a category and a record without perturbation or validation.
    pub fn draw<R: Rng + ?Sized>(&self, dataset: &Dataset, rng: &mut R) -> (Category, u64) {
        let ci = pick(&self.category_cdf, rng);
        let ri = self.members[ci][pick(&self.member_cdf[ci], rng)];
        (self.categories[ci], dataset.records[ri].id)
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        dataset: &Dataset,
        physics: &Physics,
        scale: f64,
        rng: &mut R,
    ) -> Result<Sample, DatasetError> {
        let p = &self.cfg.perturbation;
        for _ in 0..self.cfg.max_attempts {
            let (category, id) = self.draw(dataset, rng);
            let rec = dataset.get(id).expect("sampler built from this dataset");
            let mut noise = |sd: f64| scale * sd * rng.sample::<f64, _>(StandardNormal);
            let s = rec.initial;
            let state = if scale == 0.0 {
                s
            } else {
                BallState::new(
                    s.position + Vec3::new(noise(p.position), noise(p.position), noise(p.position)),
                    s.velocity + Vec3::new(noise(p.velocity), noise(p.velocity), noise(p.velocity)),
                    s.spin + Vec3::new(noise(p.spin), noise(p.spin), noise(p.spin)),
                )
            };
            if validate_incoming(&state, physics) {
                return Ok(Sample { record_id: id, category, state });
            }
        }
        Err(DatasetError::SamplingExhausted(self.cfg.max_attempts))
    }
}

pub fn sample_initial_state<R: Rng + ?Sized>(
    dataset: &Dataset,
    cfg: &SamplerConfig,
    physics: &Physics,
    perturbation_scale: f64,
    rng: &mut R,
) -> Result<Sample, DatasetError> {
    Sampler::new(dataset, cfg)?.sample(dataset, physics, perturbation_scale, rng)
}

/// The ball crosses the net towards the robot and then bounces on the
/// robot's half.
pub fn validate_trajectory(traj: &Trajectory) -> bool {
    let mut crossed = false;
    for e in &traj.events {
        match e.kind {
            EventKind::NetFault => return false,
            EventKind::NetCrossing { .. } => crossed = true,
            EventKind::TableBounce(Side::Robot) => return crossed,
            EventKind::OutOfPlay => return false,
            EventKind::TableBounce(Side::Opponent) => {}
        }
    }
    false
}

pub fn validate_incoming(state: &BallState, physics: &Physics) -> bool {
    if !state.is_finite() || state.position.y <= 0.0 || state.velocity.y >= 0.0 {
        return false;
    }
    let mut prop = physics.propagator(*state);
    let mut events = Vec::new();
    let steps = (3.0 / physics.flight.dt) as usize;
    for _ in 0..steps {
        if prop.step(&mut events).is_err() {
            return false;
        }
        if events.iter().any(|e| matches!(e.kind, EventKind::TableBounce(Side::Robot)) || e.kind == EventKind::NetFault)
            || prop.done
        {
            break;
        }
    }
    validate_trajectory(&Trajectory { samples: vec![], events })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportReport {
    pub segments: usize,
    pub added: Vec<u64>,
    pub residuals: Vec<f64>,
    pub failures: usize,
    pub warning: Option<String>,
}

/// Segments a stream, fits each segment and adds the fitted initial states.
/// Segments heading towards +y are turned a half turn first so every stored
/// ball travels towards the robot.
pub fn import_stream(
    dataset: &mut Dataset,
    stream: &ObservedTrajectory,
    is_serve: bool,
    cycle: u32,
    physics: &Physics,
    bands: &StyleBands,
    seg: &SegmentConfig,
    fit: &FitConfig,
) -> ImportReport {
    let parts = segment_trajectories(stream, seg);
    let mut report = ImportReport { segments: parts.segments.len(), warning: parts.warning, ..Default::default() };
    for s in parts.segments {
        let s = if s.heading_y() > 0.0 { s.rotated_half_turn() } else { s };
        match fit_initial_state(&s, physics, fit) {
            Ok(f) => match dataset.push_state(f.state, is_serve, cycle, physics, bands) {
                Ok(id) => {
                    report.added.push(id);
                    report.residuals.push(f.residual);
                }
                Err(_) => report.failures += 1,
            },
            Err(_) => report.failures += 1,
        }
    }
    report
}
