use std::sync::OnceLock;

use proptest::prelude::*;
use rallybot::ballistics::{BallState, Physics};
use rallybot::dataset::synth::{rally_ball, RallyMix, SpinKind};
use rallybot::matchsim::*;
use rallybot::vec3::{Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn robot() -> &'static Robot {
    static R: OnceLock<Robot> = OnceLock::new();
    R.get_or_init(|| desk_stack(&StackConfig { rally_balls: 120, serve_balls: 40, repetitions: 1, seed: 3, ..StackConfig::default() }).unwrap())
}

fn quiet() -> MatchConfig {
    MatchConfig { record_events: false, ..MatchConfig::default() }
}

// ---- scoring ----

fn play(state: &mut MatchState, winners: &[Player]) {
    for &w in winners {
        state.score_point(w).unwrap();
    }
}

#[test]
fn ten_all_then_robot_point_continues() {
    let mut s = MatchState::new(RuleVariant::MainRules);
    for _ in 0..10 {
        play(&mut s, &[Player::Human, Player::Robot]);
    }
    assert_eq!(s.score_point(Player::Robot).unwrap(), None);
    assert_eq!(s.points, [10, 11]);
    assert_eq!(s.game_index, 0);
}

#[test]
fn cap_of_twenty_ends_the_game() {
    let mut s = MatchState::new(RuleVariant::MainRules);
    for _ in 0..19 {
        play(&mut s, &[Player::Human, Player::Robot]);
    }
    assert_eq!(s.points, [19, 19]);
    assert_eq!(s.score_point(Player::Robot).unwrap(), Some(Player::Robot));
    assert_eq!(s.game_scores, vec![[19, 20]]);
    assert_eq!(s.points, [0, 0]);
}

#[test]
fn eleven_nine_ends_the_game() {
    let mut s = MatchState::new(RuleVariant::MainRules);
    for _ in 0..9 {
        play(&mut s, &[Player::Human, Player::Robot]);
    }
    play(&mut s, &[Player::Robot]);
    assert_eq!(s.score_point(Player::Robot).unwrap(), Some(Player::Robot));
    assert_eq!(s.game_scores, vec![[9, 11]]);
    assert_eq!(s.games, [0, 1]);
}

#[test]
fn exactly_three_games_then_scoring_is_an_error() {
    let mut s = MatchState::new(RuleVariant::MainRules);
    for _ in 0..33 {
        s.score_point(Player::Robot).unwrap();
    }
    assert!(s.finished());
    assert_eq!(s.games, [0, 3]);
    assert_eq!(s.phase, Phase::Dead);
    assert_eq!(s.score_point(Player::Human), Err(RulesError::MatchOver));
    assert_eq!(s.record_let(), Err(RulesError::MatchOver));
}

#[test]
fn alternating_serves_switch_every_two_points() {
    let mut s = MatchState::new(RuleVariant::AlternatingServes);
    let mut servers = vec![s.serving];
    for _ in 0..8 {
        s.score_point(Player::Human).unwrap();
        servers.push(s.serving);
    }
    use Player::*;
    assert_eq!(servers, vec![Human, Human, Robot, Robot, Human, Human, Robot, Robot, Human]);
    let mut m = MatchState::new(RuleVariant::MainRules);
    play(&mut m, &[Robot, Robot, Robot]);
    assert_eq!(m.serving, Human);
}

#[test]
fn referee_lets_and_points() {
    let main = MatchState::new(RuleVariant::MainRules);
    let mut r = Referee::new(&main);
    assert_eq!(r.feed(ShotEvent::Robot { landed: false, high_ball: false }), Ok(Some(PointResult::Let(LetReason::ServeNotReturned))));
    assert_eq!(r.feed(ShotEvent::Opponent { returned: true }), Err(RulesError::PointOver));

    let mut r = Referee::new(&main);
    assert_eq!(r.feed(ShotEvent::Robot { landed: true, high_ball: true }), Ok(Some(PointResult::Let(LetReason::HighBall))));

    let mut r = Referee::new(&main);
    assert_eq!(r.feed(ShotEvent::Robot { landed: true, high_ball: false }), Ok(None));
    assert_eq!(r.feed(ShotEvent::Robot { landed: true, high_ball: false }), Err(RulesError::OutOfTurn("robot")));
    assert_eq!(r.feed(ShotEvent::Opponent { returned: false }), Ok(Some(PointResult::Won(Player::Robot))));

    let mut r = Referee::new(&main);
    r.feed(ShotEvent::Robot { landed: true, high_ball: false }).unwrap();
    r.feed(ShotEvent::Opponent { returned: true }).unwrap();
    assert_eq!(r.feed(ShotEvent::Robot { landed: false, high_ball: false }), Ok(Some(PointResult::Won(Player::Human))));

    // Human's serve turn under alternating serves: a missed return scores.
    let alt = MatchState::new(RuleVariant::AlternatingServes);
    let mut r = Referee::new(&alt);
    assert_eq!(r.feed(ShotEvent::Robot { landed: false, high_ball: false }), Ok(Some(PointResult::Won(Player::Human))));
    let mut r = Referee::new(&MatchState { serving: Player::Robot, ..alt });
    assert_eq!(r.feed(ShotEvent::Robot { landed: false, high_ball: false }), Ok(Some(PointResult::Let(LetReason::ServeNotReturned))));

    let mut r = Referee::new(&main);
    assert_eq!(r.feed(ShotEvent::Opponent { returned: true }), Err(RulesError::OutOfTurn("opponent")));
    assert_eq!(r.feed(ShotEvent::ProtectiveStop), Ok(Some(PointResult::Let(LetReason::ProtectiveStop))));
}

/// Plays one random point through the referee and checks the serve rule.
fn random_point(state: &MatchState, rng: &mut impl Rng) -> PointResult {
    let mut r = Referee::new(state);
    let mut returned = false;
    loop {
        let ev = if rng.random::<f64>() < 0.02 {
            ShotEvent::ProtectiveStop
        } else {
            ShotEvent::Robot { landed: rng.random::<f64>() < 0.6, high_ball: rng.random::<f64>() < 0.03 }
        };
        if let Some(res) = r.feed(ev).unwrap() {
            if let (ShotEvent::Robot { landed: false, high_ball: false }, false) = (ev, returned) {
                let suspended = state.variant == RuleVariant::MainRules || state.serving == Player::Robot;
                let expect = if suspended { PointResult::Let(LetReason::ServeNotReturned) } else { PointResult::Won(Player::Human) };
                assert_eq!(res, expect);
            }
            return res;
        }
        returned = true;
        if let Some(res) = r.feed(ShotEvent::Opponent { returned: rng.random::<f64>() < 0.6 }).unwrap() {
            return res;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_matches_obey_the_rules(seed in any::<u64>(), alternating in any::<bool>()) {
        let variant = if alternating { RuleVariant::AlternatingServes } else { RuleVariant::MainRules };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = MatchState::new(variant);
        let (mut won, mut lets) = (0u32, 0u32);
        while !s.finished() {
            prop_assert_eq!(s.serving, MatchState::server_for(variant, s.points_played));
            if variant == RuleVariant::AlternatingServes {
                let human = (s.points_played / 2) % 2 == 0;
                prop_assert_eq!(s.serving == Player::Human, human);
            }
            let before = (s.points, s.game_scores.len());
            let res = random_point(&s, &mut rng);
            s.apply(res).unwrap();
            match res {
                PointResult::Let(_) => {
                    lets += 1;
                    prop_assert_eq!((s.points, s.game_scores.len()), before);
                }
                PointResult::Won(_) => won += 1,
            }
            prop_assert!(!game_over(s.points[0], s.points[1]));
        }
        prop_assert_eq!(s.game_scores.len(), GAMES_PER_MATCH);
        prop_assert_eq!(s.let_count, lets);
        prop_assert_eq!(s.points_played, won);
        let total: u32 = s.game_scores.iter().map(|g| g[0] + g[1]).sum();
        prop_assert_eq!(total, won);
        for g in &s.game_scores {
            let (hi, lo) = (g[0].max(g[1]), g[0].min(g[1]));
            prop_assert!(game_over(g[0], g[1]));
            prop_assert!(hi <= 20);
            prop_assert!(hi == 20 || (hi >= 11 && hi - lo >= 2));
            prop_assert!(hi == 11 || hi - lo == 2 || hi == 20);
            // The point before the last one did not end the game.
            let prev = if g[0] > g[1] { (g[0] - 1, g[1]) } else { (g[0], g[1] - 1) };
            prop_assert!(!game_over(prev.0, prev.1));
        }
        prop_assert_eq!(s.games[0] + s.games[1], 3);
    }
}

// ---- opponents ----

#[test]
fn beginner_serve_underspin_rate_matches_the_mixture() {
    let p = OpponentProfile::tier(Tier::Beginner);
    assert_eq!(p.serve.underspin, 0.1);
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10_000;
    let mut under = 0;
    for _ in 0..n {
        match opponent_shot(&p, ShotContext::Serve { game_index: 0 }, &physics, &mut rng) {
            OpponentShot::Ball { spin, state } => {
                under += (spin == SpinKind::Underspin) as usize;
                assert!(state.position.y > 0.0 && state.velocity.y < 0.0);
            }
            OpponentShot::Missed { .. } => panic!("serves are never missed"),
        }
    }
    let rate = under as f64 / n as f64;
    assert!((rate - 0.10).abs() <= 0.02, "underspin serve rate {rate}");
}

#[test]
fn return_probability_limits() {
    let p = OpponentProfile::tier(Tier::Intermediate);
    assert_eq!(p.return_probability(p.position, 1.0), p.max_return);
    let far = Vec2::new(p.position.x, p.position.y + p.reach + 0.05);
    assert_eq!(p.return_probability(far, 1.0), 0.0);
    let fast = p.return_probability(p.position, p.comfort_speed + p.speed_falloff);
    assert!((fast - p.max_return / std::f64::consts::E).abs() < 1e-12);
    // The weak side costs the declared penalty.
    let weak = Vec2::new(0.3, p.position.y);
    let strong = Vec2::new(-0.3, p.position.y);
    let ratio = p.return_probability(weak, 1.0) / p.return_probability(strong, 1.0);
    assert!((ratio - (1.0 - p.weak_side_penalty)).abs() < 1e-12);

    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ball = BallState::new(Vec3::new(far.x, far.y, 0.02), Vec3::new(0.0, 3.0, 1.0), Vec3::ZERO);
    for _ in 0..500 {
        let s = opponent_shot(&p, ShotContext::Rally { landing: far, ball }, &physics, &mut rng);
        assert_eq!(s, OpponentShot::Missed { touched: false });
    }
}

#[test]
fn profiles_validate_and_exploit_starts_in_game_two() {
    for t in Tier::ALL {
        OpponentProfile::tier(t).validate().unwrap();
        assert_eq!(Tier::parse(t.tag()), Some(t));
    }
    let e = OpponentProfile::underspin_exploiter();
    e.validate().unwrap();
    assert_eq!(e.serve_mix(0), &e.serve);
    assert_eq!(e.serve_mix(1).underspin, 1.0);
    let bad = OpponentProfile { max_return: 1.5, ..OpponentProfile::tier(Tier::Beginner) };
    assert!(bad.validate().is_err());
}

// ---- matches ----

#[test]
fn never_returning_opponent_loses_eleven_love_three_times() {
    let r = robot();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rec = new_record(r);
    let out = run_match(r, &OpponentProfile::never_returns(), &MatchConfig::default(), &mut rec, &mut rng).unwrap();
    assert_eq!(out.report.game_scores, vec![[0, 11]; 3]);
    assert_eq!(out.report.games, [0, 3]);
    assert_eq!(out.report.points, [0, 33]);
    assert!(out.report.robot_won());
}

#[test]
fn identical_seeds_give_identical_matches() {
    let r = robot();
    let p = OpponentProfile::tier(Tier::Intermediate);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rec = new_record(r);
        run_match(r, &p, &MatchConfig::default(), &mut rec, &mut rng).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(events_jsonl(&a.events), events_jsonl(&b.events));
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
}

fn check_log(events: &[MatchEvent], robot: &Robot) {
    let mut hits = 0u64;
    let mut decisions_per_hit: Vec<u64> = Vec::new();
    for e in events {
        match e {
            MatchEvent::OpponentHit { hit_index, .. } => {
                assert_eq!(*hit_index, hits);
                hits += 1;
                decisions_per_hit.push(0);
            }
            MatchEvent::Decision { hit_index, decision_index, .. } => {
                assert_eq!(decision_index, hit_index);
                decisions_per_hit[*hit_index as usize] += 1;
            }
            MatchEvent::RobotShot { paddle_start, .. } => assert_eq!(*paddle_start, robot.episode.initial_pose.position),
            _ => {}
        }
    }
    assert!(hits > 0);
    assert!(decisions_per_hit.iter().all(|&d| d == 1));
}

#[test]
fn one_decision_per_opponent_hit_and_paddle_reset() {
    let r = robot();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rec = new_record(r);
    let cfg = MatchConfig { protective_stop_prob: 0.05, ..MatchConfig::default() };
    let out = run_match(r, &OpponentProfile::tier(Tier::Advanced), &cfg, &mut rec, &mut rng).unwrap();
    check_log(&out.events, r);
    let stops = out.events.iter().filter(|e| matches!(e, MatchEvent::PointEnd { result: PointResult::Let(LetReason::ProtectiveStop), .. })).count();
    assert!(stops > 0, "seed should exercise protective stops");
    assert_eq!(out.report.decisions, out.report.opponent_hits);
    let jsonl = events_jsonl(&out.events);
    for line in jsonl.lines() {
        let e: MatchEvent = serde_json::from_str(line).unwrap();
        assert!(serde_json::to_string(&e).unwrap().contains("\"event\""));
    }
}

#[test]
fn preferences_replay_from_the_logged_batches() {
    let r = robot();
    for batch_per_point in [false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut rec = new_record(r);
        let start = rec.prefs.clone();
        let cfg = MatchConfig { batch_per_point, ..MatchConfig::default() };
        let out = run_match(r, &OpponentProfile::tier(Tier::Intermediate), &cfg, &mut rec, &mut rng).unwrap();
        let replayed = replay_preferences(&start, &out.report.batches).unwrap();
        assert_eq!(replayed, out.report.final_preferences);
        assert_eq!(replayed, rec.prefs);
        let logged: Vec<Vec<(usize, f64)>> = out
            .events
            .iter()
            .filter_map(|e| match e {
                MatchEvent::PreferenceUpdate { batch, .. } => Some(batch.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(logged, out.report.batches);
    }
}

#[test]
fn alternating_serve_log_follows_parity() {
    let r = robot();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rec = new_record(r);
    let cfg = MatchConfig { variant: RuleVariant::AlternatingServes, ..MatchConfig::default() };
    let out = run_match(r, &OpponentProfile::tier(Tier::Beginner), &cfg, &mut rec, &mut rng).unwrap();
    let mut played = 0u32;
    for e in &out.events {
        match e {
            MatchEvent::PointStart { server, .. } => assert_eq!(*server, MatchState::server_for(RuleVariant::AlternatingServes, played)),
            MatchEvent::PointEnd { result: PointResult::Won(_), .. } => played += 1,
            _ => {}
        }
    }
    assert_eq!(played, out.report.points[0] + out.report.points[1]);
}

#[test]
fn report_tallies_are_consistent() {
    let r = robot();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rec = new_record(r);
    let out = run_match(r, &OpponentProfile::tier(Tier::Intermediate), &quiet(), &mut rec, &mut rng).unwrap();
    let rep = &out.report;
    assert!(out.events.is_empty());
    assert_eq!(rep.h_snapshots.len(), 4);
    assert_eq!(rep.adaptation.len(), 3 * rep.h_snapshots[0].len());
    let shots: u64 = rep.spin_returns.values().map(|v| v.balls).sum();
    assert_eq!(shots, rep.opponent_hits);
    assert_eq!(rep.heuristic_counts.values().sum::<u64>(), rep.decisions);
    assert_eq!(rep.decisions, rep.opponent_hits);
    assert!(rep.heuristic_counts.contains_key("serve"));
    let total = rep.opponent_stats.total();
    assert!(total.attempts >= total.hits && total.hits >= total.returns);
    assert!(spin_returns_csv(&rep.spin_returns).starts_with("bucket,balls,landed,rate\n"));
}

#[test]
fn endless_protective_stops_stall_the_match() {
    let r = robot();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rec = new_record(r);
    let cfg = MatchConfig { protective_stop_prob: 1.0, max_consecutive_lets: 20, ..MatchConfig::default() };
    let err = run_match(r, &OpponentProfile::tier(Tier::Beginner), &cfg, &mut rec, &mut rng).unwrap_err();
    assert!(matches!(err, MatchError::Stalled(_)), "{err}");
    let bad = MatchConfig { protective_stop_prob: 1.5, ..MatchConfig::default() };
    assert!(matches!(run_match(r, &OpponentProfile::tier(Tier::Beginner), &bad, &mut rec, &mut rng), Err(MatchError::InvalidConfig(_))));
}

#[test]
fn exploited_skill_loses_preference() {
    let r = robot();
    let p = OpponentProfile::underspin_exploiter();
    let skill = p.exploit.as_ref().unwrap().skill_id;
    let mut down = 0;
    for seed in 0..12 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rec = new_record(r);
        let rep = run_match(r, &p, &quiet(), &mut rec, &mut rng).unwrap().report;
        down += (rep.h_snapshots[3][skill] < rep.h_snapshots[1][skill]) as usize;
    }
    assert!(down >= 9, "exploited skill lost preference in {down} of 12 matches");
}

#[test]
fn randomized_contact_still_plays_legal_matches() {
    let r = robot();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut rec = new_record(r);
    let cfg = MatchConfig { randomization: Some(Default::default()), ..quiet() };
    let rep = run_match(r, &OpponentProfile::tier(Tier::Intermediate), &cfg, &mut rec, &mut rng).unwrap().report;
    assert_eq!(rep.game_scores.len(), 3);
}

// ---- tournaments, point runs and ablations ----

#[test]
fn tournament_rows_by_tier() {
    let r = robot();
    let profiles = [OpponentProfile::tier(Tier::Beginner), OpponentProfile::never_returns()];
    let rows = tournament(r, &profiles, 1, &MatchConfig::default(), 1).unwrap();
    // Both profiles are beginner tier and share a row.
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].matches, 2);
    assert!(rows[0].match_wins >= 1);
    let csv = tournament_csv(&rows);
    assert!(csv.starts_with("tier,matches,match_win_pct,games,game_win_pct,points,point_win_pct,lets\nbeginner,2,"));
}

#[test]
fn point_runs_count_scored_points_only() {
    let r = robot();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let t = play_points(r, &OpponentProfile::tier(Tier::Intermediate), &quiet(), 40, &mut rng).unwrap();
    assert_eq!(t.played(), 40);
    assert!((0.0..=1.0).contains(&t.robot_rate()));
}

#[test]
fn binomial_tail_matches_hand_values() {
    assert!((binomial_upper_tail(8, 10, 0.5) - 56.0 / 1024.0).abs() < 1e-12);
    assert_eq!(binomial_upper_tail(0, 10, 0.3), 1.0);
    assert_eq!(binomial_upper_tail(11, 10, 0.3), 0.0);
    assert!((binomial_upper_tail(10, 10, 0.3) - 0.3f64.powi(10)).abs() < 1e-15);
}

fn corpus(n: usize, seed: u64) -> Vec<BallState> {
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rally_ball(&RallyMix::default(), &physics, &mut rng)).collect()
}

#[test]
fn waiting_past_the_ball_never_lands() {
    let r = robot();
    let balls = corpus(20, 1);
    let late = TimingSetting { label: "wait-200".into(), timing: DecisionTiming { wait_steps: 200, redecide_every: None }, reference_land: None };
    let rows = ablate_decision_timing(r, &balls, &[late], 1).unwrap();
    assert_eq!(rows[0].land_rate, 0.0);
    assert_eq!(rows[0].miss_rate, 1.0);
}

#[test]
fn ablation_table_schema() {
    let r = robot();
    let balls = corpus(30, 2);
    let rows = ablate_decision_timing(r, &balls, &TimingSetting::wait_rows(), 2).unwrap();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.episodes, 30);
        assert!((row.hit_rate + row.miss_rate - 1.0).abs() < 1e-12);
        assert!(row.land_rate <= row.hit_rate);
    }
    let csv = ablation_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "setting,episodes,hit,land,miss,reference_land");
    assert!(lines[1].starts_with("wait-1,30,") && lines[1].ends_with(",0.39"));
    assert!(lines[2].starts_with("wait-3,30,") && lines[2].ends_with(",0.25"));
    // Same seeds, same rows.
    assert_eq!(rows, ablate_decision_timing(r, &balls, &TimingSetting::wait_rows(), 2).unwrap());
}
