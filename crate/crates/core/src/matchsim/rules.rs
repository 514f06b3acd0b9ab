//! Scoring: games to 11 by two or a cap of 20, three games per match, lets,
//! and the two serve variants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GAME_POINTS: u32 = 11;
pub const GAME_MARGIN: u32 = 2;
pub const GAME_CAP: u32 = 20;
pub const GAMES_PER_MATCH: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RulesError {
    #[error("the match is already over")]
    MatchOver,
    #[error("{0} is out of turn")]
    OutOfTurn(&'static str),
    #[error("the point is already decided")]
    PointOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    Human,
    Robot,
}

impl Player {
    pub fn other(self) -> Player {
        match self {
            Player::Human => Player::Robot,
            Player::Robot => Player::Human,
        }
    }

    fn index(self) -> usize {
        match self {
            Player::Human => 0,
            Player::Robot => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleVariant {
    /// The opponent always serves; nothing scores until the robot has
    /// returned a ball.
    MainRules,
    /// Serve alternates every two points. On the robot's turn the opponent
    /// still serves, with scoring suspended until the robot's return lands.
    AlternatingServes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Serve,
    Rally,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LetReason {
    HighBall,
    ServeNotReturned,
    ProtectiveStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointResult {
    Won(Player),
    Let(LetReason),
}

/// True once a game at this score is over.
pub fn game_over(a: u32, b: u32) -> bool {
    let (hi, lo) = (a.max(b), a.min(b));
    (hi >= GAME_POINTS && hi - lo >= GAME_MARGIN) || hi >= GAME_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchState {
    /// Current game, human then robot.
    pub points: [u32; 2],
    pub games: [u32; 2],
    pub game_index: usize,
    pub phase: Phase,
    pub serving: Player,
    pub variant: RuleVariant,
    pub let_count: u32,
    /// Points scored in the match so far, lets excluded.
    pub points_played: u32,
    /// Final scores of finished games.
    pub game_scores: Vec<[u32; 2]>,
}

impl MatchState {
    pub fn new(variant: RuleVariant) -> Self {
        Self {
            points: [0, 0],
            games: [0, 0],
            game_index: 0,
            phase: Phase::Serve,
            serving: Player::Human,
            variant,
            let_count: 0,
            points_played: 0,
            game_scores: Vec::new(),
        }
    }

    pub fn finished(&self) -> bool {
        self.game_scores.len() >= GAMES_PER_MATCH
    }

    /// Server for the next point.
    pub fn server_for(variant: RuleVariant, points_played: u32) -> Player {
        match variant {
            RuleVariant::MainRules => Player::Human,
            RuleVariant::AlternatingServes => {
                if (points_played / 2).is_multiple_of(2) {
                    Player::Human
                } else {
                    Player::Robot
                }
            }
        }
    }

    /// Whether a failed first return is a let rather than a lost point.
    pub fn scoring_suspended(&self) -> bool {
        self.variant == RuleVariant::MainRules || self.serving == Player::Robot
    }

    /// Awards a point; returns the game winner when the point ends a game.
    pub fn score_point(&mut self, winner: Player) -> Result<Option<Player>, RulesError> {
        if self.finished() {
            return Err(RulesError::MatchOver);
        }
        self.points[winner.index()] += 1;
        self.points_played += 1;
        let mut ended = None;
        if game_over(self.points[0], self.points[1]) {
            let w = if self.points[0] > self.points[1] { Player::Human } else { Player::Robot };
            self.games[w.index()] += 1;
            self.game_scores.push(self.points);
            self.points = [0, 0];
            self.game_index += 1;
            ended = Some(w);
        }
        self.serving = Self::server_for(self.variant, self.points_played);
        self.phase = if self.finished() { Phase::Dead } else { Phase::Serve };
        Ok(ended)
    }

    pub fn record_let(&mut self) -> Result<(), RulesError> {
        if self.finished() {
            return Err(RulesError::MatchOver);
        }
        self.let_count += 1;
        self.phase = Phase::Serve;
        Ok(())
    }

    pub fn apply(&mut self, result: PointResult) -> Result<Option<Player>, RulesError> {
        match result {
            PointResult::Won(p) => self.score_point(p),
            PointResult::Let(_) => self.record_let().map(|_| None),
        }
    }
}

/// One thing that happens in a point after the opponent's serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShotEvent {
    Robot { landed: bool, high_ball: bool },
    Opponent { returned: bool },
    ProtectiveStop,
}

/// Decides a point from its shots. The opponent serves first, so the robot
/// is expected to play next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Referee {
    suspended: bool,
    robot_to_play: bool,
    robot_returned: bool,
    result: Option<PointResult>,
}

impl Referee {
    pub fn new(state: &MatchState) -> Self {
        Self { suspended: state.scoring_suspended(), robot_to_play: true, robot_returned: false, result: None }
    }

    pub fn result(&self) -> Option<PointResult> {
        self.result
    }

    pub fn feed(&mut self, e: ShotEvent) -> Result<Option<PointResult>, RulesError> {
        if self.result.is_some() {
            return Err(RulesError::PointOver);
        }
        let r = match e {
            ShotEvent::ProtectiveStop => Some(PointResult::Let(LetReason::ProtectiveStop)),
            ShotEvent::Robot { landed, high_ball } => {
                if !self.robot_to_play {
                    return Err(RulesError::OutOfTurn("robot"));
                }
                self.robot_to_play = false;
                if high_ball {
                    Some(PointResult::Let(LetReason::HighBall))
                } else if !landed {
                    if !self.robot_returned && self.suspended {
                        Some(PointResult::Let(LetReason::ServeNotReturned))
                    } else {
                        Some(PointResult::Won(Player::Human))
                    }
                } else {
                    self.robot_returned = true;
                    None
                }
            }
            ShotEvent::Opponent { returned } => {
                if self.robot_to_play {
                    return Err(RulesError::OutOfTurn("opponent"));
                }
                self.robot_to_play = true;
                if returned {
                    None
                } else {
                    Some(PointResult::Won(Player::Robot))
                }
            }
        };
        self.result = r;
        Ok(r)
    }
}
