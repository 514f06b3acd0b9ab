//! Full matches against scripted opponents.
//!
//! A point is a chain of sub-episodes. Each starts at an opponent hit with
//! the paddle back at the shared initial pose; the controller decides one
//! control step after it perceives the hit, the chosen skill plays the ball, and the referee
//! turns the outcome into a score, a let or the next opponent shot.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{BallState, Physics, SpinClass, StyleBands, StyleSide};
use crate::dataset::synth::{generate_corpus, RallyMix, ServeMix, SpinKind};
use crate::descriptors::{episode_seed, BuildConfig, DescriptorError, DescriptorSet};
use crate::hlc::spin::{spin_label, synthetic_strokes, train_spin_classifier, SpinTrainingConfig, HISTORY_LEN};
use crate::hlc::{
    adaptation_rows, opponent_side, AdaptationRow, Decision, Hlc, HlcConfig, HlcError, OpponentRecord, OpponentStats,
    PreferenceState, StrokeModel, StrokeSample,
};
use crate::skills::{
    default_skills, run_episode, DecisionContext, EpisodeConfig, RandomizationRanges, ShotOutcome, Skill, SkillError, Transcript,
    CONTROL_DT,
};
use crate::vec3::{Vec2, Vec3};

pub mod opponent;
pub mod rules;

pub use opponent::{opponent_shot, spin_bucket, Exploit, OpponentProfile, OpponentShot, ShotContext, Tier};
pub use rules::{
    game_over, LetReason, MatchState, Phase, Player, PointResult, Referee, RuleVariant, RulesError, ShotEvent, GAMES_PER_MATCH,
};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error(transparent)]
    Hlc(#[from] HlcError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error("match stalled: {0}")]
    Stalled(String),
    #[error("inconsistent shot: {0}")]
    Inconsistent(String),
}

/// Everything on the robot side of the table.
#[derive(Debug, Clone)]
pub struct Robot {
    pub hlc: Hlc,
    pub skills: Vec<Skill>,
    pub episode: EpisodeConfig,
    pub physics: Physics,
    /// Generates the opponent's serve strokes the spin classifier sees.
    pub stroke_model: StrokeModel,
}

impl Robot {
    pub fn new(hlc: Hlc, skills: Vec<Skill>, episode: EpisodeConfig, physics: Physics) -> Self {
        Self { hlc, skills, episode, physics, stroke_model: StrokeModel::default() }
    }

    /// Position of a skill id in `skills`.
    pub fn index_of(&self, skill_id: usize) -> Option<usize> {
        self.skills.iter().position(|s| s.id() == skill_id)
    }
}

/// Sizes of the self-contained stack built by [`desk_stack`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackConfig {
    pub rally_balls: usize,
    pub serve_balls: usize,
    pub repetitions: usize,
    /// Synthetic serve strokes for the spin classifier; 0 leaves it out.
    pub spin_strokes: usize,
    pub spin_epochs: usize,
    pub seed: u64,
    pub hlc: HlcConfig,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self { rally_balls: 240, serve_balls: 80, repetitions: 2, spin_strokes: 0, spin_epochs: 15, seed: 0, hlc: HlcConfig::default() }
    }
}

/// Scripted skills, descriptors over a synthetic corpus and, optionally, a
/// spin classifier trained on synthetic strokes.
pub fn desk_stack(cfg: &StackConfig) -> Result<Robot, MatchError> {
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ds = generate_corpus(
        cfg.rally_balls,
        cfg.serve_balls,
        0,
        &RallyMix::default(),
        &ServeMix::default(),
        &physics,
        &StyleBands::default(),
        &mut rng,
    );
    let skills = default_skills();
    let episode = EpisodeConfig::default();
    let build = BuildConfig { repetitions: cfg.repetitions, seed: cfg.seed, episode, ..BuildConfig::default() };
    let descriptors = DescriptorSet::build(&skills, &ds, &build, &physics)?;
    let specs = skills.iter().map(|s| s.spec.clone()).collect();
    let mut hlc = Hlc::new(specs, descriptors, cfg.hlc.clone());
    let stroke_model = StrokeModel::default();
    if cfg.spin_strokes > 0 {
        let mix = ServeMix { underspin: 0.5, ..ServeMix::default() };
        let strokes = synthetic_strokes(cfg.spin_strokes, &mix, &stroke_model, &physics, |b, _| spin_label(b.spin.x), &mut rng);
        let tc = SpinTrainingConfig { epochs: cfg.spin_epochs, ..SpinTrainingConfig::default() };
        hlc.spin = Some(train_spin_classifier(&strokes, &stroke_model, &tc, &mut rng)?.0);
    }
    let robot = Robot { stroke_model, ..Robot::new(hlc, skills, episode, physics) };
    Ok(robot)
}

/// When the controller decides within a sub-episode. Steps count from the
/// perceived hit: the first tick whose (delayed) observation postdates the
/// opponent's contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionTiming {
    /// Control steps after the perceived hit before the first decision.
    pub wait_steps: usize,
    /// Decide again every this many steps until contact.
    pub redecide_every: Option<usize>,
}

impl Default for DecisionTiming {
    fn default() -> Self {
        Self { wait_steps: 1, redecide_every: None }
    }
}

impl DecisionTiming {
    pub fn due(&self, ctx: &DecisionContext<'_>) -> bool {
        // History holds one observation per tick, so its index is the tick.
        let Some(seen) = ctx.history.iter().position(|o| o.t > 0.0) else {
            return false;
        };
        let first = seen + self.wait_steps;
        match self.redecide_every {
            _ if ctx.tick == first => true,
            Some(k) if k > 0 && ctx.tick > first => (ctx.tick - first).is_multiple_of(k),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub variant: RuleVariant,
    pub timing: DecisionTiming,
    /// Chance per point of a protective stop, which is a let.
    pub protective_stop_prob: f64,
    pub max_shots_per_point: usize,
    pub max_consecutive_lets: usize,
    /// Contact-parameter offsets drawn for every sub-episode.
    pub randomization: Option<RandomizationRanges>,
    /// Collect a point's shots into one preference batch instead of
    /// updating after every shot.
    pub batch_per_point: bool,
    pub record_events: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            variant: RuleVariant::MainRules,
            timing: DecisionTiming::default(),
            protective_stop_prob: 0.0,
            max_shots_per_point: 200,
            max_consecutive_lets: 200,
            randomization: None,
            batch_per_point: false,
            record_events: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if !(0.0..=1.0).contains(&self.protective_stop_prob) {
            return Err(MatchError::InvalidConfig(format!("protective_stop_prob {} outside [0, 1]", self.protective_stop_prob)));
        }
        if self.max_shots_per_point == 0 || self.max_consecutive_lets == 0 {
            return Err(MatchError::InvalidConfig("shot and let limits must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MatchEvent {
    PointStart {
        t: f64,
        game: usize,
        server: Player,
        score: [u32; 2],
    },
    OpponentHit {
        t: f64,
        hit_index: u64,
        serve: bool,
        spin: SpinKind,
        ball: BallState,
    },
    Decision {
        t: f64,
        hit_index: u64,
        decision_index: u64,
        tick: usize,
        skill_id: usize,
        spin: Option<SpinClass>,
        heuristic: Option<String>,
        probabilities: Vec<f64>,
    },
    RobotShot {
        t: f64,
        hit_index: u64,
        skill_id: Option<usize>,
        outcome: ShotOutcome,
        landing: Option<Vec2>,
        high_ball: bool,
        paddle_start: Vec3,
    },
    OpponentMiss {
        t: f64,
        touched: bool,
        side: StyleSide,
    },
    PreferenceUpdate {
        t: f64,
        batch: Vec<(usize, f64)>,
    },
    PointEnd {
        t: f64,
        result: PointResult,
        score: [u32; 2],
    },
    GameEnd {
        t: f64,
        game: usize,
        score: [u32; 2],
        winner: Player,
    },
}

pub fn events_jsonl(events: &[MatchEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

/// Return rate of the robot by incoming spin family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpinReturns {
    pub balls: u64,
    pub landed: u64,
}

impl SpinReturns {
    pub fn rate(&self) -> f64 {
        if self.balls == 0 {
            0.0
        } else {
            self.landed as f64 / self.balls as f64
        }
    }
}

fn kind_tag(k: SpinKind) -> &'static str {
    match k {
        SpinKind::Topspin => "topspin",
        SpinKind::Nospin => "nospin",
        SpinKind::Underspin => "underspin",
    }
}

/// Running tallies of a match: the event log, counters and clock.
#[derive(Debug, Clone, Default)]
pub struct MatchRecorder {
    pub events: Vec<MatchEvent>,
    pub record_events: bool,
    pub t: f64,
    pub opponent_hits: u64,
    pub decisions: u64,
    pub lets: u32,
    pub batches: Vec<Vec<(usize, f64)>>,
    /// Keyed `serve/topspin`, `rally/underspin` and so on.
    pub spin_returns: BTreeMap<String, SpinReturns>,
    pub heuristic_counts: BTreeMap<String, u64>,
}

impl MatchRecorder {
    pub fn new(record_events: bool) -> Self {
        Self { record_events, ..Self::default() }
    }

    fn log(&mut self, e: MatchEvent) {
        if self.record_events {
            self.events.push(e);
        }
    }
}

struct ShotResult {
    transcript: Transcript,
    decisions: Vec<(usize, Decision)>,
}

/// One sub-episode. The episode and the controller each get their own
/// stream derived from `seed`.
fn robot_shot(
    robot: &Robot,
    incoming: &BallState,
    is_serve: bool,
    stroke: Option<&[StrokeSample]>,
    record: &OpponentRecord,
    timing: DecisionTiming,
    physics: &Physics,
    seed: u64,
) -> Result<ShotResult, MatchError> {
    let mut ep_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dec_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_2f4a_7c15);
    let mut decisions = Vec::new();
    let mut failure: Option<MatchError> = None;
    let mut decider = |ctx: &DecisionContext<'_>| -> Option<usize> {
        if failure.is_some() || !timing.due(ctx) {
            return None;
        }
        let obs = ctx.latest().ball;
        match robot.hlc.act(&obs, is_serve, stroke, &record.prefs, &record.stats, &robot.physics, &mut dec_rng) {
            Ok(d) => match robot.index_of(d.skill_id) {
                Some(i) => {
                    decisions.push((ctx.tick, d));
                    Some(i)
                }
                None => {
                    failure = Some(HlcError::UnknownSkill(d.skill_id).into());
                    None
                }
            },
            Err(e) => {
                failure = Some(e.into());
                None
            }
        }
    };
    let tr = run_episode(&robot.skills, incoming, &mut decider, &robot.episode, physics, &mut ep_rng)?;
    if let Some(e) = failure {
        return Err(e);
    }
    if tr.outcome.landed() != tr.landing.is_some() || tr.landing.is_some() != tr.landing_state.is_some() {
        return Err(MatchError::Inconsistent(format!("outcome {} with landing {:?}", tr.outcome.label(), tr.landing)));
    }
    Ok(ShotResult { transcript: tr, decisions })
}

fn shot_physics<R: Rng + ?Sized>(robot: &Robot, cfg: &MatchConfig, rng: &mut R) -> Physics {
    match &cfg.randomization {
        Some(r) => {
            let s = r.sample(rng);
            Physics { contact: r.apply(&robot.physics.contact, &s), ..robot.physics }
        }
        None => robot.physics,
    }
}

/// Plays one point (or let) and applies it to `state`.
pub fn run_point<R: Rng + ?Sized>(
    state: &mut MatchState,
    robot: &Robot,
    profile: &OpponentProfile,
    record: &mut OpponentRecord,
    cfg: &MatchConfig,
    rec: &mut MatchRecorder,
    rng: &mut R,
) -> Result<PointResult, MatchError> {
    if state.finished() {
        return Err(RulesError::MatchOver.into());
    }
    rec.log(MatchEvent::PointStart { t: rec.t, game: state.game_index + 1, server: state.serving, score: state.points });
    let mut referee = Referee::new(state);
    let mut batch: Vec<(usize, f64)> = Vec::new();
    let stop = cfg.protective_stop_prob > 0.0 && rng.random::<f64>() < cfg.protective_stop_prob;
    let center = robot.hlc.cfg.heuristics.center_half_width;
    if stop {
        // The arm halts before the serve reaches it; the point is replayed.
        let result = referee.feed(ShotEvent::ProtectiveStop)?.expect("a stop ends the point");
        return finish_point(state, rec, result, batch, record, cfg);
    }

    let (mut incoming, mut spin) = match opponent_shot(profile, ShotContext::Serve { game_index: state.game_index }, &robot.physics, rng) {
        OpponentShot::Ball { state, spin } => (state, spin),
        OpponentShot::Missed { .. } => return Err(MatchError::Inconsistent("serve generator missed".into())),
    };
    let stroke_len = HISTORY_LEN + robot.stroke_model.window_samples();
    let mut stroke = Some(robot.stroke_model.stroke(&incoming, stroke_len, &robot.physics, rng));
    let mut is_serve = true;
    let mut shots = 0usize;

    let result = loop {
        let hit_index = rec.opponent_hits;
        rec.opponent_hits += 1;
        rec.log(MatchEvent::OpponentHit { t: rec.t, hit_index, serve: is_serve, spin, ball: incoming });
        shots += 1;
        if shots > cfg.max_shots_per_point {
            return Err(MatchError::Stalled(format!("point exceeded {} robot shots", cfg.max_shots_per_point)));
        }
        let physics = shot_physics(robot, cfg, rng);
        let seed: u64 = rng.random();
        let shot = robot_shot(robot, &incoming, is_serve, stroke.as_deref(), record, cfg.timing, &physics, seed)?;
        let tr = &shot.transcript;
        for (tick, d) in &shot.decisions {
            let tag = match (d.heuristic(), is_serve) {
                (Some(h), _) => h.tag(),
                (None, true) => "serve",
                (None, false) => "uniform",
            };
            *rec.heuristic_counts.entry(tag.to_string()).or_default() += 1;
            rec.log(MatchEvent::Decision {
                t: rec.t + *tick as f64 * CONTROL_DT,
                hit_index,
                decision_index: rec.decisions,
                tick: *tick,
                skill_id: d.skill_id,
                spin: d.spin,
                heuristic: d.heuristic().map(|h| h.tag().to_string()),
                probabilities: d.probabilities.clone(),
            });
            rec.decisions += 1;
        }
        let landed = tr.outcome.landed();
        let key = format!("{}/{}", if is_serve { "serve" } else { "rally" }, kind_tag(spin));
        let tally = rec.spin_returns.entry(key).or_default();
        tally.balls += 1;
        tally.landed += landed as u64;
        rec.log(MatchEvent::RobotShot {
            t: rec.t,
            hit_index,
            skill_id: tr.skill_id,
            outcome: tr.outcome,
            landing: tr.landing,
            high_ball: tr.high_ball,
            paddle_start: tr.ticks.first().map_or(robot.episode.initial_pose.position, |k| k.position),
        });
        rec.t += tr.ticks.len() as f64 * CONTROL_DT;
        if let Some(id) = tr.skill_id {
            let r = if landed { 1.0 } else { 0.0 };
            if cfg.batch_per_point {
                batch.push((id, r));
            } else {
                record.prefs.update(&[(id, r)])?;
                rec.batches.push(vec![(id, r)]);
                rec.log(MatchEvent::PreferenceUpdate { t: rec.t, batch: vec![(id, r)] });
            }
        }
        if let Some(r) = referee.feed(ShotEvent::Robot { landed, high_ball: tr.high_ball })? {
            break r;
        }
        let (landing, ball) = (tr.landing.expect("checked"), tr.landing_state.expect("checked"));
        let side = opponent_side(landing.x, center);
        match opponent_shot(profile, ShotContext::Rally { landing, ball }, &robot.physics, rng) {
            OpponentShot::Ball { state: next, spin: k } => {
                record.stats.record(side, true, true);
                referee.feed(ShotEvent::Opponent { returned: true })?;
                incoming = next;
                spin = k;
                is_serve = false;
                stroke = None;
            }
            OpponentShot::Missed { touched } => {
                record.stats.record(side, touched, false);
                rec.log(MatchEvent::OpponentMiss { t: rec.t, touched, side });
                break referee.feed(ShotEvent::Opponent { returned: false })?.expect("a miss ends the point");
            }
        }
    };

    finish_point(state, rec, result, batch, record, cfg)
}

fn finish_point(
    state: &mut MatchState,
    rec: &mut MatchRecorder,
    result: PointResult,
    batch: Vec<(usize, f64)>,
    record: &mut OpponentRecord,
    cfg: &MatchConfig,
) -> Result<PointResult, MatchError> {
    if cfg.batch_per_point && !batch.is_empty() {
        record.prefs.update(&batch)?;
        rec.log(MatchEvent::PreferenceUpdate { t: rec.t, batch: batch.clone() });
        rec.batches.push(batch);
    }
    if matches!(result, PointResult::Let(_)) {
        rec.lets += 1;
    }
    let game = state.game_index + 1;
    let ended = state.apply(result)?;
    let score = if ended.is_some() { *state.game_scores.last().expect("game recorded") } else { state.points };
    rec.log(MatchEvent::PointEnd { t: rec.t, result, score });
    if let Some(winner) = ended {
        rec.log(MatchEvent::GameEnd { t: rec.t, game, score, winner });
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub profile: String,
    pub tier: Tier,
    pub variant: RuleVariant,
    /// Final score of each game, human then robot.
    pub game_scores: Vec<[u32; 2]>,
    pub games: [u32; 2],
    pub points: [u32; 2],
    pub lets: u32,
    pub opponent_hits: u64,
    pub decisions: u64,
    pub spin_returns: BTreeMap<String, SpinReturns>,
    pub heuristic_counts: BTreeMap<String, u64>,
    /// Preferences at the start and after each game.
    pub h_snapshots: Vec<Vec<f64>>,
    pub adaptation: Vec<AdaptationRow>,
    /// Every preference batch in order, for replay.
    pub batches: Vec<Vec<(usize, f64)>>,
    pub final_preferences: PreferenceState,
    pub opponent_stats: OpponentStats,
}

impl MatchReport {
    pub fn robot_won(&self) -> bool {
        self.games[1] > self.games[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub report: MatchReport,
    pub events: Vec<MatchEvent>,
}

/// Three games against `profile`, carrying `record` (preferences and
/// opponent statistics) through them.
pub fn run_match<R: Rng + ?Sized>(
    robot: &Robot,
    profile: &OpponentProfile,
    cfg: &MatchConfig,
    record: &mut OpponentRecord,
    rng: &mut R,
) -> Result<MatchOutcome, MatchError> {
    cfg.validate()?;
    profile.validate().map_err(MatchError::InvalidConfig)?;
    let mut state = MatchState::new(cfg.variant);
    let mut rec = MatchRecorder::new(cfg.record_events);
    let mut snapshots = vec![record.prefs.h.clone()];
    let mut lets_in_a_row = 0usize;
    while !state.finished() {
        let game = state.game_index;
        let r = run_point(&mut state, robot, profile, record, cfg, &mut rec, rng)?;
        if matches!(r, PointResult::Let(_)) {
            lets_in_a_row += 1;
            if lets_in_a_row > cfg.max_consecutive_lets {
                return Err(MatchError::Stalled(format!("{lets_in_a_row} lets in a row")));
            }
        } else {
            lets_in_a_row = 0;
        }
        if state.game_index != game {
            snapshots.push(record.prefs.h.clone());
        }
    }
    let adaptation = snapshots.windows(2).enumerate().flat_map(|(g, w)| adaptation_rows(g + 1, &w[0], &w[1])).collect();
    let points = state.game_scores.iter().fold([0, 0], |acc, s| [acc[0] + s[0], acc[1] + s[1]]);
    let report = MatchReport {
        profile: profile.id.clone(),
        tier: profile.tier,
        variant: cfg.variant,
        game_scores: state.game_scores.clone(),
        games: state.games,
        points,
        lets: rec.lets,
        opponent_hits: rec.opponent_hits,
        decisions: rec.decisions,
        spin_returns: rec.spin_returns,
        heuristic_counts: rec.heuristic_counts,
        h_snapshots: snapshots,
        adaptation,
        batches: rec.batches,
        final_preferences: record.prefs.clone(),
        opponent_stats: record.stats.clone(),
    };
    Ok(MatchOutcome { report, events: rec.events })
}

/// Fresh record for a new opponent.
pub fn new_record(robot: &Robot) -> OpponentRecord {
    OpponentRecord { prefs: robot.hlc.initial_preferences(), stats: OpponentStats::default() }
}

/// Replays logged preference batches from `start`.
pub fn replay_preferences(start: &PreferenceState, batches: &[Vec<(usize, f64)>]) -> Result<PreferenceState, HlcError> {
    let mut p = start.clone();
    for b in batches {
        p.update(b)?;
    }
    Ok(p)
}

/// Scored points (lets excluded) over back-to-back matches against one
/// opponent until `n_points` have been played.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PointTally {
    pub robot: u32,
    pub human: u32,
    pub lets: u32,
}

impl PointTally {
    pub fn played(&self) -> u32 {
        self.robot + self.human
    }

    pub fn robot_rate(&self) -> f64 {
        if self.played() == 0 {
            0.0
        } else {
            self.robot as f64 / self.played() as f64
        }
    }
}

pub fn play_points<R: Rng + ?Sized>(
    robot: &Robot,
    profile: &OpponentProfile,
    cfg: &MatchConfig,
    n_points: u32,
    rng: &mut R,
) -> Result<PointTally, MatchError> {
    cfg.validate()?;
    profile.validate().map_err(MatchError::InvalidConfig)?;
    let mut tally = PointTally::default();
    let mut record = new_record(robot);
    let mut rec = MatchRecorder::new(false);
    let mut state = MatchState::new(cfg.variant);
    let mut lets_in_a_row = 0usize;
    while tally.played() < n_points {
        if state.finished() {
            state = MatchState::new(cfg.variant);
        }
        match run_point(&mut state, robot, profile, &mut record, cfg, &mut rec, rng)? {
            PointResult::Won(Player::Robot) => tally.robot += 1,
            PointResult::Won(Player::Human) => tally.human += 1,
            PointResult::Let(_) => {
                tally.lets += 1;
                lets_in_a_row += 1;
                if lets_in_a_row > cfg.max_consecutive_lets {
                    return Err(MatchError::Stalled(format!("{lets_in_a_row} lets in a row")));
                }
                continue;
            }
        }
        lets_in_a_row = 0;
    }
    Ok(tally)
}

/// P(X ≥ k) for X ~ Binomial(n, p).
pub fn binomial_upper_tail(k: u32, n: u32, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut ln_c = 0.0; // ln C(n, i), built up from i = 0
    let mut total = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            let term = ln_c + i as f64 * lp + (n - i) as f64 * lq;
            total += term.exp();
        }
    }
    total.min(1.0)
}

/// Match, game and point win percentages by tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TournamentRow {
    pub tier: Tier,
    pub matches: u32,
    pub match_wins: u32,
    pub games: u32,
    pub game_wins: u32,
    pub points: u32,
    pub point_wins: u32,
    pub lets: u32,
}

fn pct(a: u32, b: u32) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * a as f64 / b as f64
    }
}

impl TournamentRow {
    pub fn match_win_pct(&self) -> f64 {
        pct(self.match_wins, self.matches)
    }

    pub fn game_win_pct(&self) -> f64 {
        pct(self.game_wins, self.games)
    }

    pub fn point_win_pct(&self) -> f64 {
        pct(self.point_wins, self.points)
    }
}

/// `matches` seeded matches per profile, each against a fresh record.
pub fn tournament(
    robot: &Robot,
    profiles: &[OpponentProfile],
    matches: usize,
    cfg: &MatchConfig,
    seed: u64,
) -> Result<Vec<TournamentRow>, MatchError> {
    let mut rows: BTreeMap<Tier, TournamentRow> = BTreeMap::new();
    for (pi, profile) in profiles.iter().enumerate() {
        for m in 0..matches {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, pi, m as u64, None));
            let mut record = new_record(robot);
            let rep = run_match(robot, profile, &MatchConfig { record_events: false, ..cfg.clone() }, &mut record, &mut rng)?.report;
            let row = rows.entry(profile.tier).or_insert(TournamentRow {
                tier: profile.tier,
                matches: 0,
                match_wins: 0,
                games: 0,
                game_wins: 0,
                points: 0,
                point_wins: 0,
                lets: 0,
            });
            row.matches += 1;
            row.match_wins += rep.robot_won() as u32;
            row.games += rep.games[0] + rep.games[1];
            row.game_wins += rep.games[1];
            row.points += rep.points[0] + rep.points[1];
            row.point_wins += rep.points[1];
            row.lets += rep.lets;
        }
    }
    Ok(rows.into_values().collect())
}

pub fn tournament_csv(rows: &[TournamentRow]) -> String {
    let mut out = String::from("tier,matches,match_win_pct,games,game_win_pct,points,point_win_pct,lets\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.1},{},{:.1},{},{:.1},{}\n",
            r.tier.tag(),
            r.matches,
            r.match_win_pct(),
            r.games,
            r.game_win_pct(),
            r.points,
            r.point_win_pct(),
            r.lets
        ));
    }
    out
}

/// One row of a decision-timing comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSetting {
    pub label: String,
    pub timing: DecisionTiming,
    /// Land rate reported for the physical robot, shown alongside ours.
    pub reference_land: Option<f64>,
}

impl TimingSetting {
    /// Decide after one step versus after three.
    pub fn wait_rows() -> Vec<TimingSetting> {
        vec![
            TimingSetting { label: "wait-1".into(), timing: DecisionTiming { wait_steps: 1, redecide_every: None }, reference_land: Some(0.39) },
            TimingSetting { label: "wait-3".into(), timing: DecisionTiming { wait_steps: 3, redecide_every: None }, reference_land: Some(0.25) },
        ]
    }

    /// Commit to the first decision versus deciding again every step.
    pub fn redecide_rows() -> Vec<TimingSetting> {
        vec![
            TimingSetting { label: "decisive".into(), timing: DecisionTiming { wait_steps: 1, redecide_every: None }, reference_land: Some(0.64) },
            TimingSetting {
                label: "re-decide".into(),
                timing: DecisionTiming { wait_steps: 1, redecide_every: Some(1) },
                reference_land: Some(0.56),
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub episodes: usize,
    pub hit_rate: f64,
    pub land_rate: f64,
    pub miss_rate: f64,
    pub reference_land: Option<f64>,
}

/// Runs every ball under every setting with the same per-ball seeds and a
/// fresh controller state, so rows differ only in decision timing.
pub fn ablate_decision_timing(
    robot: &Robot,
    balls: &[BallState],
    settings: &[TimingSetting],
    seed: u64,
) -> Result<Vec<AblationRow>, MatchError> {
    let record = new_record(robot);
    let mut rows = Vec::with_capacity(settings.len());
    for s in settings {
        let (mut hit, mut land) = (0usize, 0usize);
        for (i, b) in balls.iter().enumerate() {
            let shot_seed = episode_seed(seed, 0, i as u64, None);
            let shot = robot_shot(robot, b, false, None, &record, s.timing, &robot.physics, shot_seed)?;
            hit += shot.transcript.outcome.hit() as usize;
            land += shot.transcript.outcome.landed() as usize;
        }
        let n = balls.len().max(1) as f64;
        rows.push(AblationRow {
            label: s.label.clone(),
            episodes: balls.len(),
            hit_rate: hit as f64 / n,
            land_rate: land as f64 / n,
            miss_rate: 1.0 - hit as f64 / n,
            reference_land: s.reference_land,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("setting,episodes,hit,land,miss,reference_land\n");
    for r in rows {
        let reference = r.reference_land.map_or(String::new(), |v| format!("{v:.2}"));
        out.push_str(&format!("{},{},{:.3},{:.3},{:.3},{}\n", r.label, r.episodes, r.hit_rate, r.land_rate, r.miss_rate, reference));
    }
    out
}

/// Serve/rally return rates by spin family, one row per bucket.
pub fn spin_returns_csv(rows: &BTreeMap<String, SpinReturns>) -> String {
    let mut out = String::from("bucket,balls,landed,rate\n");
    for (k, v) in rows {
        out.push_str(&format!("{},{},{},{:.3}\n", k, v.balls, v.landed, v.rate()));
    }
    out
}
