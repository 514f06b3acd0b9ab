//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines print in order.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rallybot::ballistics::*;
use rallybot::dataset::synth::{self, rally_ball, RallyMix, ServeMix};
use rallybot::dataset::*;
use rallybot::descriptors::*;
use rallybot::hlc::{sample_softmax, PreferenceState, SelectionMode};
use rallybot::matchsim::*;
use rallybot::optimizer::{orthogonal_perturbations, train, EsConfig};
use rallybot::skills::{apply_film, net_height_reward, FilmAdapter};
use rallybot::vec3::{Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn stack() -> &'static Robot {
    static R: OnceLock<Robot> = OnceLock::new();
    R.get_or_init(|| desk_stack(&StackConfig::default()).expect("desk stack builds"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

// ---- 1 ----

fn bandit() -> Outcome {
    let mut p = PreferenceState::zeros(2, 0.1);
    p.update(&[(0, 1.0), (0, 0.0)]).map_err(|e| e.to_string())?;
    if p.h != [-0.025, 0.025] {
        return Err(format!("hand-traced batch gave {:?}", p.h));
    }
    let means = [0.8, 0.5, 0.2];
    let mut good = 0;
    for run in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run);
        let mut p = PreferenceState::zeros(3, 0.1);
        for _ in 0..5000 {
            let a = sample_softmax(&p.h, &mut rng);
            let r = (rng.random::<f64>() < means[a]) as u8 as f64;
            p.update(&[(a, r)]).map_err(|e| e.to_string())?;
        }
        good += (p.probabilities()[0] > 0.8) as usize;
    }
    check(good >= 95, format!("H=(-0.025, 0.025) exact; best arm above 0.8 in {good}/100 runs"))
}

// ---- 2 ----

fn decisions_per_hit(events: &[MatchEvent]) -> Result<u64, String> {
    let mut per_hit: Vec<u64> = Vec::new();
    for e in events {
        match e {
            MatchEvent::OpponentHit { .. } => per_hit.push(0),
            MatchEvent::Decision { hit_index, decision_index, .. } => {
                if hit_index != decision_index {
                    return Err(format!("decision {decision_index} logged for hit {hit_index}"));
                }
                *per_hit.get_mut(*hit_index as usize).ok_or("decision before its hit")? += 1;
            }
            _ => {}
        }
    }
    match per_hit.iter().position(|&d| d != 1) {
        Some(i) => Err(format!("hit {i} has {} decisions", per_hit[i])),
        None => Ok(per_hit.len() as u64),
    }
}

fn inference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 10_000;
    let first = (0..n).filter(|_| sample_softmax(&[1.0, 0.0], &mut rng) == 0).count() as f64 / n as f64;
    let e = std::f64::consts::E;
    let softmax_ok = (first - e / (e + 1.0)).abs() < 0.02;
    let robot = stack();
    let mut hits = 0;
    let opponents = [OpponentProfile::tier(Tier::Beginner), OpponentProfile::tier(Tier::Advanced), OpponentProfile::underspin_exploiter()];
    for (seed, p) in opponents.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let mut rec = new_record(robot);
        let cfg = MatchConfig { protective_stop_prob: 0.03, ..MatchConfig::default() };
        let out = run_match(robot, p, &cfg, &mut rec, &mut rng).map_err(|e| e.to_string())?;
        hits += decisions_per_hit(&out.events)?;
    }
    check(softmax_ok, format!("P(first)={first:.4} vs 0.7311; one decision for each of {hits} opponent hits"))
}

// ---- 3 ----

fn formulas() -> Outcome {
    let nhr = [net_height_reward(0.173), net_height_reward(0.5), net_height_reward(0.25)];
    let nhr_ok = nhr[0] == 1.0 && nhr[1] == -1.1 && (nhr[2] - (-0.77f64).exp()).abs() <= 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let film = FilmAdapter::identity(9, 5);
    let mut film_ok = true;
    for _ in 0..100 {
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let obs: Vec<f64> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
        film_ok &= apply_film(&a, &film, &obs).map_err(|e| e.to_string())? == a;
    }

    let physics = Physics::default();
    let d = synth::generate_corpus(1423, 311, 0, &RallyMix::default(), &ServeMix::default(), &physics, &StyleBands::default(), &mut rng);
    let r = reflect_y(&d);
    let csv = r.summary_csv();
    let row = |label: &str, name: &str| -> Vec<usize> {
        let prefix = format!("{label},{name},");
        let line = csv.lines().find(|l| l.starts_with(&prefix)).unwrap_or_default();
        line.split(',').skip(2).filter_map(|v| v.parse().ok()).collect()
    };
    let mut reflect_ok = r.len() == 2 * d.len();
    for label in ["Rallying", "Serves"] {
        let (fin, refl) = (row(label, "Final"), row(label, "Final+reflection"));
        reflect_ok &= !fin.is_empty() && refl.first().copied() == fin.first().map(|n| 2 * n);
    }
    check(
        nhr_ok && film_ok && reflect_ok,
        format!("NHR {nhr:?}; FiLM identity exact: {film_ok}; reflection {} -> {}", d.len(), r.len()),
    )
}

// ---- 4 ----

fn descriptors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let keys: Vec<Point> = (0..10_000).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
    let tree = KdTree::build(keys.clone());
    let mut mismatches = 0;
    for _ in 0..1000 {
        let q: Point = std::array::from_fn(|_| rng.random_range(-2.5..2.5));
        for k in [1, 5, 25] {
            let a: Vec<usize> = tree.knn(&q, k).iter().map(|n| n.index).collect();
            let b: Vec<usize> = brute_force_knn(&keys, &q, k).iter().map(|n| n.index).collect();
            mismatches += (a != b) as usize;
        }
    }

    // Replay oracle for the equal-weight update on a 300-entry table.
    let n = 300;
    let keys: Vec<Point> = keys[..n].to_vec();
    let metrics: Vec<SkillMetrics> = (0..n)
        .map(|_| SkillMetrics {
            land_rate: rng.random_range(0..=10) as f64 / 10.0,
            hit_velocity_y: rng.random_range(2.0..8.0),
            landing_mean: Vec2::new(0.0, 0.9),
            landing_std: Vec2::new(0.05, 0.05),
            sample_count: 4,
        })
        .collect();
    let mut t = DescriptorTable::new(0, key_scales(&keys), keys, (0..n as u64).collect(), metrics).map_err(|e| e.to_string())?;
    let mut oracle: Vec<f64> = t.metrics.iter().map(|m| m.land_rate).collect();
    let scaled: Vec<Point> = t.keys.iter().map(|k| std::array::from_fn(|d| k[d] / t.scales[d])).collect();
    let mut worst = 0.0f64;
    for step in 0..50 {
        let mut q = t.keys[rng.random_range(0..n)];
        q[0] += rng.random_range(-0.05..0.05);
        let landed = step % 3 != 0;
        let qs: Point = std::array::from_fn(|d| q[d] / t.scales[d]);
        for nb in brute_force_knn(&scaled, &qs, 25) {
            oracle[nb.index] = (oracle[nb.index] + landed as u8 as f64) / 2.0;
        }
        t.update_with_real(&q, &SkillMetrics::single(landed, 5.0, landed.then(|| Vec2::new(0.1, 0.9))));
        for (m, o) in t.metrics.iter().zip(&oracle) {
            worst = worst.max((m.land_rate - o).abs());
        }
    }
    check(
        mismatches == 0 && worst < 1e-15,
        format!("{mismatches} k-NN mismatches over 3000 queries; replay oracle max deviation {worst:e}"),
    )
}

// ---- 5 ----

fn flight_position(s0: &BallState, params: &FlightParams, dt: f64, t: f64) -> Vec3 {
    let p = FlightParams { dt, ..params.clone() };
    let mut s = *s0;
    for _ in 0..(t / dt).round() as usize {
        s = step_flight(&s, &p).expect("finite flight");
    }
    s.position
}

fn physics_invariants() -> Outcome {
    let params = FlightParams::default();
    let vacuum = FlightParams::vacuum();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut max_power, mut max_perp, mut max_parabola) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    let (mut ratio_lo, mut ratio_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..200 {
        let s0 = rally_ball(&RallyMix::default(), &Physics::default(), &mut rng);
        let mut s = s0;
        for _ in 0..50 {
            let f = aero_forces(&s, &params);
            let v = s.velocity - params.wind;
            max_power = max_power.max(f.drag.dot(v));
            max_perp = max_perp.max(f.magnus.dot(v).abs() / (f.magnus.norm() * v.norm()).max(1e-12));
            s = step_flight(&s, &params).map_err(|e| e.to_string())?;
        }
        let mut s = s0;
        for k in 1..=50 {
            s = step_flight(&s, &vacuum).map_err(|e| e.to_string())?;
            let t = k as f64 * vacuum.dt;
            let exact = s0.position + s0.velocity * t + Vec3::new(0.0, 0.0, -0.5 * vacuum.gravity * t * t);
            max_parabola = max_parabola.max((s.position - exact).norm());
        }
        if i % 10 == 0 {
            let a = flight_position(&s0, &params, params.dt, 0.32);
            let b = flight_position(&s0, &params, params.dt / 2.0, 0.32);
            let c = flight_position(&s0, &params, params.dt / 4.0, 0.32);
            let r = (a - b).norm() / (b - c).norm();
            ratio_lo = ratio_lo.min(r);
            ratio_hi = ratio_hi.max(r);
        }
    }
    let contact = ContactParams { table_restitution_normal: 1.0, table_friction: 0.0, ..ContactParams::default() };
    let s0 = BallState::new(Vec3::new(0.1, 0.6, 0.35), Vec3::new(0.2, -1.5, 0.5), Vec3::new(30.0, 0.0, 0.0));
    let tr = simulate_trajectory(&s0, &vacuum, &contact, &TableGeometry::default(), 1.2).map_err(|e| e.to_string())?;
    let e0 = s0.mechanical_energy(&vacuum);
    let drift = tr.samples.iter().map(|s| ((s.state.mechanical_energy(&vacuum) - e0) / e0).abs()).fold(0.0, f64::max);
    check(
        max_power <= 0.0 && max_perp <= 1e-9 && max_parabola <= 1e-9 && drift <= 1e-6 && ratio_lo >= 1.5 && ratio_hi <= 2.5,
        format!(
            "drag power max {max_power:.2e}; Magnus cos {max_perp:.1e}; parabola {max_parabola:.1e} m; energy drift {drift:.1e}; halving ratio [{ratio_lo:.3}, {ratio_hi:.3}]"
        ),
    )
}

// ---- 6 ----

fn fitting() -> Outcome {
    let physics = Physics::default();
    let cfg = FitConfig::default();
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rally_ball(&RallyMix::default(), &physics, &mut rng);
        let obs = synth::observe_flight(&b, 0.5, &physics).ok_or("unobservable flight")?;
        let f = fit_initial_state(&obs, &physics, &cfg).map_err(|e| e.to_string())?.state;
        worst.0 = worst.0.max((f.position - b.position).norm());
        worst.1 = worst.1.max((f.velocity - b.velocity).norm());
        worst.2 = worst.2.max((f.spin - b.spin).norm());
    }
    let (mut ve, mut we) = (Vec::new(), Vec::new());
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let b = rally_ball(&RallyMix::default(), &physics, &mut rng);
        let traj = physics.simulate(&b, 0.5).map_err(|e| e.to_string())?;
        let obs = ObservedTrajectory::new(synth::observe(&traj, 125.0, 0.005, 0.0, &mut rng), "noisy").map_err(|e| e.to_string())?;
        let f = match fit_initial_state(&obs, &physics, &cfg) {
            Ok(r) => r.state,
            Err(DatasetError::FitFailed { best, .. }) => best,
            Err(e) => return Err(e.to_string()),
        };
        ve.push((f.velocity - b.velocity).norm() / b.velocity.norm());
        we.push((f.spin - b.spin).norm());
    }
    ve.sort_by(f64::total_cmp);
    we.sort_by(f64::total_cmp);
    let (mv, mw) = ((ve[24] + ve[25]) / 2.0, (we[24] + we[25]) / 2.0);
    check(
        worst.0 <= 1e-3 && worst.1 <= 1e-2 && worst.2 <= 1.0 && mv <= 0.05 && mw <= 15.0,
        format!(
            "noiseless worst {:.1e} m, {:.1e} m/s, {:.1e} rad/s; 5 mm noise medians {:.2}% velocity, {mw:.2} rad/s spin",
            worst.0,
            worst.1,
            worst.2,
            100.0 * mv
        ),
    )
}

// ---- 7 ----

fn optimizer() -> Outcome {
    let target: Vec<f64> = (0..20).map(|i| 0.1 * i as f64 - 0.7).collect();
    let start: Vec<f64> = target.iter().enumerate().map(|(i, t)| t + if i % 2 == 0 { 1.0 } else { -1.0 } / 20f64.sqrt()).collect();
    let objective = |x: &[f64], _: u64| -x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (x, _) = train(start, objective, &EsConfig::simulation(), 200, &mut rng).map_err(|e| e.to_string())?;
    let d2: f64 = x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
    let mut worst = 0.0f64;
    for (count, dim) in [(50, 20), (9, 20), (64, 9), (7, 3)] {
        let rows = orthogonal_perturbations(count, dim, &mut rng).map_err(|e| e.to_string())?;
        for block in rows.chunks(dim) {
            for i in 0..block.len() {
                for j in 0..i {
                    worst = worst.max(block[i].iter().zip(&block[j]).map(|(a, b)| a * b).sum::<f64>().abs());
                }
            }
        }
    }
    check(d2 <= 1e-3 && worst <= 1e-9, format!("squared distance {d2:.2e} after 200 iterations; block dot products {worst:.1e}"))
}

// ---- 8 ----

fn sampling() -> Outcome {
    let mk = |id, vy: f64, wx: f64| {
        let s = BallState::new(Vec3::new(0.0, 1.8, 0.35), Vec3::new(0.0, vy, 0.5), Vec3::new(wx, 0.0, 0.0));
        BallStateRecord {
            id,
            initial: s,
            is_serve: false,
            outcome: rallybot::dataset::Outcome::Unknown,
            categories: classify_category(&s),
            style_side: StyleSide::Center,
            cycle: 0,
            reflected: false,
            weight: 1.0,
        }
    };
    let mut d = Dataset::new();
    for i in 0..10u64 {
        d.insert(mk(i, -8.0, 80.0)).map_err(|e| e.to_string())?;
        d.insert(mk(100 + i, -3.0, -60.0)).map_err(|e| e.to_string())?;
    }
    let ret = |ok: bool| if ok { rallybot::dataset::Outcome::Return } else { rallybot::dataset::Outcome::Miss };
    for i in 0..10u64 {
        d.record_outcome(i, ret(i < 9), None).map_err(|e| e.to_string())?;
        d.record_outcome(100 + i, ret(i < 2), None).map_err(|e| e.to_string())?;
    }
    let cfg = SamplerConfig { categories: vec![Category::Fast, Category::Slow], ..SamplerConfig::default() };
    let eps = cfg.epsilon;
    let s = Sampler::new(&d, &cfg).map_err(|e| e.to_string())?;
    let target = (1.0 / (0.2 + eps)) / (1.0 / (0.9 + eps));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts = [0usize; 2];
    for _ in 0..100_000 {
        let (c, _) = s.draw(&d, &mut rng);
        counts[(c != Category::Fast) as usize] += 1;
    }
    let ratio = counts[1] as f64 / counts[0] as f64;
    let rel = (ratio / target - 1.0).abs();

    let ball = |v: [f64; 3], w: [f64; 3]| BallState::new(Vec3::ZERO, Vec3::from_slice(&v), Vec3::from_slice(&w));
    let examples = [
        (ball([0.0, 8.0, 0.0], [60.0, 0.0, 0.0]), (Category::Fast, Category::Topspin, false)),
        (ball([0.0, 4.0, 0.0], [0.0; 3]), (Category::Normal, Category::Nospin, false)),
        (ball([0.0, 3.0, 3.0], [-30.0, 0.0, 0.0]), (Category::Slow, Category::Underspin, true)),
    ];
    let labels_ok = examples.iter().all(|(b, want)| {
        let c = classify_category(b);
        (c.speed, c.spin, c.lob) == *want
    });
    check(
        rel <= 0.05 && labels_ok,
        format!("slow/fast draw ratio {ratio:.3} vs analytic {target:.3} ({:.2}% off); category examples exact: {labels_ok}", 100.0 * rel),
    )
}

// ---- 9 ----

fn adaptation() -> Outcome {
    let robot = stack();
    let p = OpponentProfile::underspin_exploiter();
    let skill = p.exploit.as_ref().ok_or("exploiter has no target")?.skill_id;
    let cfg = MatchConfig { record_events: false, ..MatchConfig::default() };
    let mut down = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rec = new_record(robot);
        let rep = run_match(robot, &p, &cfg, &mut rec, &mut rng).map_err(|e| e.to_string())?.report;
        down += (rep.h_snapshots[3][skill] < rep.h_snapshots[1][skill]) as usize;
    }
    check(down >= 90, format!("H of exploited skill {skill} fell from game 1 to game 3 in {down}/100 matches"))
}

// ---- 10 ----

fn strategy_value() -> Outcome {
    let full = stack();
    let mut uniform = full.clone();
    uniform.hlc.cfg.mode = SelectionMode::UniformRandom;
    let p = OpponentProfile::tier(Tier::Intermediate);
    let cfg = MatchConfig { record_events: false, ..MatchConfig::default() };
    let n = 200;
    let a = play_points(full, &p, &cfg, n, &mut ChaCha8Rng::seed_from_u64(10)).map_err(|e| e.to_string())?;
    let b = play_points(&uniform, &p, &cfg, n, &mut ChaCha8Rng::seed_from_u64(10)).map_err(|e| e.to_string())?;
    // One-sided test of the full controller's wins against the baseline's rate.
    let pval = binomial_upper_tail(a.robot, n, b.robot_rate());
    check(
        a.robot > b.robot && pval < 0.05,
        format!("full {}-{} vs uniform {}-{} over {n} points; p = {pval:.2e}", a.robot, a.human, b.robot, b.human),
    )
}

// ---- 11 ----

fn ablations() -> Outcome {
    let robot = stack();
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let balls: Vec<BallState> = (0..1500).map(|_| rally_ball(&RallyMix::default(), &physics, &mut rng)).collect();
    let wait = ablate_decision_timing(robot, &balls, &TimingSetting::wait_rows(), 11).map_err(|e| e.to_string())?;
    let redecide = ablate_decision_timing(robot, &balls, &TimingSetting::redecide_rows(), 11).map_err(|e| e.to_string())?;
    let fmt = |r: &AblationRow| {
        let reference = r.reference_land.map(|x| format!(" (reference {x})")).unwrap_or_default();
        format!("{} {:.3}{reference}", r.label, r.land_rate)
    };
    check(
        wait[0].land_rate >= wait[1].land_rate && redecide[0].land_rate >= redecide[1].land_rate,
        format!("land rates over {} balls: {}, {}; {}, {}", balls.len(), fmt(&wait[0]), fmt(&wait[1]), fmt(&redecide[0]), fmt(&redecide[1])),
    )
}

// ---- 12 ----

/// One random point through the referee. Returns the result and whether the
/// serve rule was broken.
fn random_point(state: &MatchState, rng: &mut impl Rng) -> Result<(PointResult, bool), String> {
    let mut r = Referee::new(state);
    let mut returned = false;
    loop {
        let ev = if rng.random::<f64>() < 0.02 {
            ShotEvent::ProtectiveStop
        } else {
            ShotEvent::Robot { landed: rng.random::<f64>() < 0.6, high_ball: rng.random::<f64>() < 0.03 }
        };
        if let Some(res) = r.feed(ev).map_err(|e| e.to_string())? {
            let mut broken = false;
            if let (ShotEvent::Robot { landed: false, high_ball: false }, false) = (ev, returned) {
                let suspended = state.variant == RuleVariant::MainRules || state.serving == Player::Robot;
                let expect = if suspended { PointResult::Let(LetReason::ServeNotReturned) } else { PointResult::Won(Player::Human) };
                broken = res != expect;
            }
            return Ok((res, broken));
        }
        returned = true;
        if let Some(res) = r.feed(ShotEvent::Opponent { returned: rng.random::<f64>() < 0.6 }).map_err(|e| e.to_string())? {
            return Ok((res, false));
        }
    }
}

fn rules() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut sequences, mut matches) = (0usize, 0usize);
    let mut violations: Vec<String> = Vec::new();
    while sequences < 10_000 {
        let variant = if matches % 2 == 0 { RuleVariant::MainRules } else { RuleVariant::AlternatingServes };
        matches += 1;
        let mut s = MatchState::new(variant);
        let (mut won, mut lets) = (0u32, 0u32);
        while !s.finished() {
            sequences += 1;
            if s.serving != MatchState::server_for(variant, s.points_played)
                || (variant == RuleVariant::AlternatingServes && (s.serving == Player::Human) != ((s.points_played / 2) % 2 == 0))
            {
                violations.push(format!("serve parity at point {}", s.points_played));
            }
            let before = (s.points, s.game_scores.len());
            let (res, broken) = random_point(&s, &mut rng)?;
            if broken {
                violations.push(format!("{variant:?}: score before the serve was returned"));
            }
            s.apply(res).map_err(|e| e.to_string())?;
            match res {
                PointResult::Let(_) => {
                    lets += 1;
                    if (s.points, s.game_scores.len()) != before {
                        violations.push("a let changed the score".into());
                    }
                }
                PointResult::Won(_) => won += 1,
            }
            if game_over(s.points[0], s.points[1]) {
                violations.push(format!("game not closed at {:?}", s.points));
            }
        }
        if s.let_count != lets || s.points_played != won {
            violations.push(format!("let count {} vs {lets}, points {} vs {won}", s.let_count, s.points_played));
        }
        if s.game_scores.len() != GAMES_PER_MATCH || s.game_scores.iter().map(|g| g[0] + g[1]).sum::<u32>() != won {
            violations.push("game tallies do not add up".into());
        }
        for g in &s.game_scores {
            let (hi, lo) = (g[0].max(g[1]), g[0].min(g[1]));
            let prev = if g[0] > g[1] { (g[0] - 1, g[1]) } else { (g[0], g[1] - 1) };
            let legal = hi <= 20 && (hi == 20 || (hi >= 11 && hi - lo >= 2)) && (hi == 11 || hi - lo == 2 || hi == 20);
            if !legal || game_over(prev.0, prev.1) {
                violations.push(format!("game ended at {g:?}"));
            }
        }
    }
    let first = violations.first().cloned().unwrap_or_default();
    check(
        violations.is_empty(),
        format!("{sequences} point sequences over {matches} matches; {} violations {first}", violations.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 12] = [
        ("gradient bandit", Some(Duration::from_secs(10)), bandit),
        ("controller inference", Some(Duration::from_secs(5)), inference),
        ("formula exactness", None, formulas),
        ("descriptor search and update", Some(Duration::from_secs(30)), descriptors),
        ("physics invariants", Some(Duration::from_secs(10)), physics_invariants),
        ("trajectory fitting", Some(Duration::from_secs(120)), fitting),
        ("optimizer", Some(Duration::from_secs(60)), optimizer),
        ("category sampling", None, sampling),
        ("adaptation to an exploiting opponent", Some(Duration::from_secs(300)), adaptation),
        ("strategy value", Some(Duration::from_secs(300)), strategy_value),
        ("decision-timing ablations", None, ablations),
        ("rules engine", None, rules),
    ];
    let t = Instant::now();
    stack();
    println!("shared desk stack built in {:.1} s", t.elapsed().as_secs_f64());
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = run();
        let took = t.elapsed();
        let over = limit.filter(|l| took > *l);
        let (ok, detail) = match (&result, over) {
            (Ok(d), None) => (true, d.clone()),
            (Ok(d), Some(l)) => (false, format!("{d}; took longer than {} s", l.as_secs())),
            (Err(d), _) => (false, d.clone()),
        };
        failed += !ok as usize;
        println!("{} {:>2} {name}: {detail} [{:.1} s]", if ok { "PASS" } else { "FAIL" }, i + 1, took.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
