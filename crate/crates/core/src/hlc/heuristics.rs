//! Opponent statistics and the five shortlist heuristics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HlcError;
use crate::ballistics::{BallState, Physics, Side, StyleSide};
use crate::dataset::RateCounter;
use crate::descriptors::{DescriptorSet, SkillMetrics};
use crate::skills::{SkillKind, SkillSpec, Style};
use crate::vec3::{Vec2, Vec3};

/// Side of the opponent a landing at lateral `x` goes to. The opponent
/// faces the robot, so their forehand (right-handed) is the robot's −x.
pub fn opponent_side(x: f64, center_half_width: f64) -> StyleSide {
    if x < -center_half_width {
        StyleSide::Forehand
    } else if x > center_half_width {
        StyleSide::Backhand
    } else {
        StyleSide::Center
    }
}

fn side_index(s: StyleSide) -> usize {
    match s {
        StyleSide::Forehand => 0,
        StyleSide::Backhand => 1,
        StyleSide::Center => 2,
    }
}

/// Balls the robot put on the opponent's half, split by the side they
/// landed on: `attempts`, how many the opponent touched (`hits`) and how
/// many came back legally (`returns`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideCounts {
    pub attempts: u64,
    pub hits: u64,
    pub returns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpponentStats {
    /// Forehand, backhand, center.
    pub sides: [SideCounts; 3],
}

impl OpponentStats {
    pub fn record(&mut self, side: StyleSide, hit: bool, returned: bool) {
        let c = &mut self.sides[side_index(side)];
        c.attempts += 1;
        c.hits += (hit || returned) as u64;
        c.returns += returned as u64;
    }

    pub fn side(&self, side: StyleSide) -> SideCounts {
        self.sides[side_index(side)]
    }

    pub fn total(&self) -> SideCounts {
        self.sides.iter().fold(SideCounts::default(), |a, c| SideCounts {
            attempts: a.attempts + c.attempts,
            hits: a.hits + c.hits,
            returns: a.returns + c.returns,
        })
    }

    pub fn hit_rate(&self, prior: f64) -> f64 {
        let t = self.total();
        RateCounter { returned: t.hits, attempts: t.attempts }.rate_or(prior)
    }

    pub fn return_rate(&self, prior: f64) -> f64 {
        let t = self.total();
        RateCounter { returned: t.returns, attempts: t.attempts }.rate_or(prior)
    }

    pub fn side_return_rate(&self, side: StyleSide, prior: f64) -> f64 {
        let c = self.side(side);
        RateCounter { returned: c.returns, attempts: c.attempts }.rate_or(prior)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heuristic {
    Random,
    HitVelocity,
    LandingDistance,
    WeakSide,
    OpponentSkill,
}

impl Heuristic {
    pub const ALL: [Heuristic; 5] =
        [Heuristic::Random, Heuristic::HitVelocity, Heuristic::LandingDistance, Heuristic::WeakSide, Heuristic::OpponentSkill];

    pub fn tag(self) -> &'static str {
        match self {
            Heuristic::Random => "random",
            Heuristic::HitVelocity => "hit_velocity",
            Heuristic::LandingDistance => "landing_distance",
            Heuristic::WeakSide => "weak_side",
            Heuristic::OpponentSkill => "opponent_skill",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    pub enabled: Vec<Heuristic>,
    /// Candidates each ranking heuristic picks from.
    pub m: usize,
    /// Land-rate rank cut applied before ranking by speed or distance.
    pub n: usize,
    pub land_threshold: f64,
    pub strong_hit_rate: f64,
    /// Neighbours per descriptor query.
    pub k: usize,
    /// Side statistics with fewer attempts use the prior.
    pub min_side_attempts: u64,
    pub prior_rate: f64,
    pub center_half_width: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            enabled: Heuristic::ALL.to_vec(),
            m: 3,
            n: 5,
            land_threshold: 0.80,
            strong_hit_rate: 0.75,
            k: 25,
            min_side_attempts: 3,
            prior_rate: 0.5,
            center_half_width: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub skill_id: usize,
    pub metrics: SkillMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub skill_id: usize,
    /// Queried land rate of the skill.
    pub r: f64,
    pub heuristic: Heuristic,
    /// The heuristic's own condition matched nothing and it fell back to
    /// the highest land rate.
    pub relaxed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyShortlist {
    pub entries: Vec<ShortlistEntry>,
    /// No skill of the requested style had a table; a generalist stood in.
    pub fallback: bool,
}

fn by_land_rate(c: &[Candidate]) -> Vec<Candidate> {
    let mut v = c.to_vec();
    v.sort_by(|a, b| b.metrics.land_rate.total_cmp(&a.metrics.land_rate).then(a.skill_id.cmp(&b.skill_id)));
    v
}

fn best_land(c: &[Candidate]) -> Candidate {
    by_land_rate(c)[0]
}

// Uniform pick among the first `m` of `ranked`.
fn pick_top<R: Rng + ?Sized>(ranked: &[Candidate], m: usize, rng: &mut R) -> Candidate {
    let m = m.clamp(1, ranked.len());
    ranked[rng.random_range(0..m)]
}

fn ranked_by<F: Fn(&Candidate) -> f64>(c: &[Candidate], key: F) -> Vec<Candidate> {
    let mut v = c.to_vec();
    v.sort_by(|a, b| key(b).total_cmp(&key(a)).then(a.skill_id.cmp(&b.skill_id)));
    v
}

/// One entry per enabled heuristic from already-queried candidates.
/// `incoming_landing` is where the incoming ball bounces on the robot half.
pub fn shortlist_from_candidates<R: Rng + ?Sized>(
    candidates: &[Candidate],
    incoming_landing: Vec2,
    opp: &OpponentStats,
    cfg: &HeuristicConfig,
    rng: &mut R,
) -> Result<Vec<ShortlistEntry>, HlcError> {
    if candidates.is_empty() {
        return Err(HlcError::NoCandidates);
    }
    let ranked = by_land_rate(candidates);
    let top_n = &ranked[..cfg.n.clamp(1, ranked.len())];
    let distance = |c: &Candidate| c.metrics.landing_mean.distance(incoming_landing);
    let entry = |c: Candidate, h: Heuristic, relaxed: bool| ShortlistEntry { skill_id: c.skill_id, r: c.metrics.land_rate, heuristic: h, relaxed };
    let mut out = Vec::with_capacity(cfg.enabled.len());
    for &h in &cfg.enabled {
        let e = match h {
            Heuristic::Random => {
                let ok: Vec<Candidate> = ranked.iter().copied().filter(|c| c.metrics.land_rate > cfg.land_threshold).collect();
                if ok.is_empty() {
                    entry(ranked[0], h, true)
                } else {
                    let mut by_id = ok;
                    by_id.sort_by_key(|c| c.skill_id);
                    entry(by_id[rng.random_range(0..by_id.len())], h, false)
                }
            }
            Heuristic::HitVelocity => entry(pick_top(&ranked_by(top_n, |c| c.metrics.hit_velocity_y), cfg.m, rng), h, false),
            Heuristic::LandingDistance => entry(pick_top(&ranked_by(top_n, distance), cfg.m, rng), h, false),
            Heuristic::WeakSide => {
                let rate = |s: StyleSide| {
                    let c = opp.side(s);
                    if c.attempts < cfg.min_side_attempts {
                        cfg.prior_rate
                    } else {
                        opp.side_return_rate(s, cfg.prior_rate)
                    }
                };
                let (fh, bh) = (rate(StyleSide::Forehand), rate(StyleSide::Backhand));
                if fh == bh {
                    entry(ranked[0], h, true)
                } else {
                    let weak = if fh < bh { StyleSide::Forehand } else { StyleSide::Backhand };
                    let on_side: Vec<Candidate> = ranked
                        .iter()
                        .copied()
                        .filter(|c| c.metrics.land_rate > 0.0 && opponent_side(c.metrics.landing_mean.x, cfg.center_half_width) == weak)
                        .collect();
                    match on_side.first() {
                        Some(&c) => entry(c, h, false),
                        None => {
                            // Closest to the weak side instead.
                            let toward = if weak == StyleSide::Forehand { -1.0 } else { 1.0 };
                            let landed: Vec<Candidate> = ranked.iter().copied().filter(|c| c.metrics.land_rate > 0.0).collect();
                            let pool = if landed.is_empty() { ranked.clone() } else { landed };
                            entry(ranked_by(&pool, |c| toward * c.metrics.landing_mean.x)[0], h, true)
                        }
                    }
                }
            }
            Heuristic::OpponentSkill => {
                if opp.hit_rate(cfg.prior_rate) > cfg.strong_hit_rate {
                    entry(ranked_by(&ranked, distance)[0], h, false)
                } else {
                    entry(best_land(candidates), h, false)
                }
            }
        };
        out.push(e);
    }
    Ok(out)
}

/// Where `obs` first bounces on the robot half, spin ignored; the ball's
/// own position when it never does.
pub fn incoming_landing(obs: &BallState, physics: &Physics) -> Vec2 {
    let mut b = *obs;
    b.spin = Vec3::ZERO;
    physics
        .simulate(&b, 2.0)
        .ok()
        .and_then(|t| t.first_bounce_on(Side::Robot).map(|e| Vec2::new(e.position.x, e.position.y)))
        .unwrap_or(Vec2::new(obs.position.x, obs.position.y))
}

/// Queries the descriptor of every rally skill of `style`.
pub fn query_candidates(
    obs: &BallState,
    style: Style,
    skills: &[SkillSpec],
    tables: &DescriptorSet,
    k: usize,
) -> Result<Vec<Candidate>, HlcError> {
    let mut out = Vec::new();
    for s in skills.iter().filter(|s| s.style == style && !s.is_serve_receiver) {
        if let Some(t) = tables.table(s.id) {
            out.push(Candidate { skill_id: s.id, metrics: t.query_ball(obs, k)?.metrics });
        }
    }
    Ok(out)
}

/// Shortlist for an incoming rally ball. When no skill of `style` has a
/// table, the generalist with the highest land rate fills every entry and
/// the fallback flag is set.
pub fn strategy_shortlist<R: Rng + ?Sized>(
    obs: &BallState,
    style: Style,
    skills: &[SkillSpec],
    tables: &DescriptorSet,
    opp: &OpponentStats,
    cfg: &HeuristicConfig,
    physics: &Physics,
    rng: &mut R,
) -> Result<StrategyShortlist, HlcError> {
    let candidates = query_candidates(obs, style, skills, tables, cfg.k)?;
    if candidates.is_empty() {
        let mut general = Vec::new();
        for s in skills.iter().filter(|s| s.kind == SkillKind::Generalist && !s.is_serve_receiver) {
            if let Some(t) = tables.table(s.id) {
                general.push(Candidate { skill_id: s.id, metrics: t.query_ball(obs, cfg.k)?.metrics });
            }
        }
        if general.is_empty() {
            return Err(HlcError::NoCandidates);
        }
        let c = best_land(&general);
        let entries = cfg
            .enabled
            .iter()
            .map(|&h| ShortlistEntry { skill_id: c.skill_id, r: c.metrics.land_rate, heuristic: h, relaxed: true })
            .collect();
        return Ok(StrategyShortlist { entries, fallback: true });
    }
    let landing = incoming_landing(obs, physics);
    let entries = shortlist_from_candidates(&candidates, landing, opp, cfg, rng)?;
    Ok(StrategyShortlist { entries, fallback: false })
}
