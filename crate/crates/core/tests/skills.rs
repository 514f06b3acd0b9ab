use proptest::prelude::*;
use rallybot::ballistics::{BallState, Category, PaddleState, Physics, StyleBands, StyleSide};
use rallybot::dataset::synth::{self, RallyMix, ServeMix};
use rallybot::dataset::Dataset;
use rallybot::optimizer::EsConfig;
use rallybot::skills::*;
use rallybot::vec3::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clean() -> EpisodeConfig {
    EpisodeConfig { latency: None, observation: ObservationNoise::NONE, ..EpisodeConfig::default() }
}

fn slow_mix() -> RallyMix {
    RallyMix { fast: 0.0, lob: 0.0, slow: 1.0, topspin: 0.0, underspin: 0.0, ..RallyMix::default() }
}

fn corpus(n: usize, mix: &RallyMix, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth::generate_corpus(n, 0, 0, mix, &ServeMix::default(), &Physics::default(), &StyleBands::default(), &mut rng)
}

fn forehand_balls(ds: &Dataset) -> Vec<BallState> {
    ds.rally_records().filter(|r| r.style_side != StyleSide::Backhand).map(|r| r.initial).collect()
}

fn noiseless(id: usize) -> Skill {
    let mut s = default_skills().remove(id);
    s.spec.execution_noise = ExecutionNoise::NONE;
    s
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn roster_is_valid_with_unique_ids() {
    let roster = default_roster();
    assert_eq!(roster.len(), 17);
    assert_eq!(roster.iter().filter(|s| s.is_serve_receiver).count(), 4);
    for (i, s) in roster.iter().enumerate() {
        assert_eq!(s.id, i);
        s.validate().unwrap();
    }
}

#[test]
fn noiseless_slow_balls_land_near_target() {
    let physics = Physics::default();
    let ds = corpus(180, &slow_mix(), 11);
    let balls: Vec<_> = forehand_balls(&ds).into_iter().take(100).collect();
    assert_eq!(balls.len(), 100);
    let skill = noiseless(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let errs: Vec<f64> = balls
        .iter()
        .map(|b| {
            let tr = run_skill(&skill, b, &clean(), &physics, &mut rng).unwrap();
            tr.landing.map_or(f64::INFINITY, |l| l.distance(skill.spec.target_landing))
        })
        .collect();
    let m = median(errs);
    assert!(m <= 0.05, "median landing error {m}");
}

#[test]
fn left_and_right_targets_order_landing_x() {
    let physics = Physics::default();
    let ds = corpus(120, &RallyMix::default(), 12);
    let balls = forehand_balls(&ds);
    let mean_x = |id: usize| {
        let skill = default_skills().remove(id);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = balls
            .iter()
            .filter_map(|b| run_skill(&skill, b, &EpisodeConfig::default(), &physics, &mut rng).unwrap().landing)
            .map(|l| l.x)
            .collect();
        assert!(xs.len() > 20);
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let roster = default_roster();
    assert_eq!(roster[3].kind, SkillKind::TargetRight);
    assert_eq!(roster[4].kind, SkillKind::TargetLeft);
    let (right, left) = (mean_x(3), mean_x(4));
    assert!(right > left + 0.3, "right {right}, left {left}");
}

#[test]
fn ball_past_the_paddle_gives_idle_command() {
    let physics = Physics::default();
    let spec = default_roster().remove(0);
    let obs = Observation {
        t: 0.8,
        ball: BallState::new(Vec3::new(0.3, -2.2, 0.4), Vec3::new(0.0, -4.0, -0.5), Vec3::ZERO),
        robot_bounced: true,
    };
    let ctx = TickContext {
        tick: 40,
        t: 0.8,
        t_effective: 0.8,
        observation: &obs,
        paddle: PaddleState::at_rest(Vec3::new(0.3, -1.8, 0.3), Vec3::Y),
        physics: &physics,
    };
    let cmd = plan_stroke(&spec, &ctx, &StrokeConfig::default(), &PaddleLimits::default());
    assert!(!cmd.reachable);
    assert_eq!(cmd.command, PaddleCommand::ZERO);
}

#[test]
fn every_skill_starts_from_the_same_pose() {
    let physics = Physics::default();
    let ds = corpus(10, &RallyMix::default(), 13);
    let cfg = EpisodeConfig::default();
    let ball = ds.records()[0].initial;
    for skill in default_skills() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tr = run_skill(&skill, &ball, &cfg, &physics, &mut rng).unwrap();
        assert_eq!(tr.ticks[0].position, cfg.initial_pose.position, "skill {}", skill.id());
        assert_eq!(tr.ticks[0].normal, cfg.initial_pose.normal, "skill {}", skill.id());
    }
}

#[test]
fn episodes_are_deterministic_per_seed() {
    let physics = Physics::default();
    let ds = corpus(20, &RallyMix::default(), 14);
    let skill = default_skills().remove(1);
    for r in ds.records() {
        let a = run_skill(&skill, &r.initial, &EpisodeConfig::default(), &physics, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = run_skill(&skill, &r.initial, &EpisodeConfig::default(), &physics, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn noiseless_planning_ignores_the_rng() {
    let physics = Physics::default();
    let ds = corpus(10, &RallyMix::default(), 15);
    let skill = noiseless(2);
    for r in ds.records() {
        let a = run_skill(&skill, &r.initial, &clean(), &physics, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = run_skill(&skill, &r.initial, &clean(), &physics, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn spin_estimate_recovers_cross_track_spin() {
    let physics = Physics::default();
    let spin = Vec3::new(90.0, 0.0, -20.0);
    let ball = BallState::new(Vec3::new(0.2, 1.8, 0.3), Vec3::new(-0.4, -5.0, 1.5), spin);
    let traj = physics.simulate(&ball, 0.1).unwrap();
    let a = traj.samples[0];
    let b = traj.samples[80];
    let w = estimate_spin(a.t, a.state.velocity, b.t, b.state.velocity, &physics.flight);
    let v = ball.velocity.normalized();
    let perp = spin - v * spin.dot(v);
    assert!((w - perp).norm() < 3.0, "estimate {w:?}, truth {perp:?}");
}

// A transcript of a perfect return: paddle held still at the style pose,
// contact made and the return landed.
fn perfect(style: Style, cfg: &RewardConfig) -> Transcript {
    let physics = Physics::default();
    let ds = corpus(5, &slow_mix(), 16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tr = run_skill(&noiseless(0), &ds.records()[0].initial, &clean(), &physics, &mut rng).unwrap();
    let pose = match style {
        Style::Forehand => cfg.forehand_pose,
        Style::Backhand => cfg.backhand_pose,
    };
    tr.style = style;
    for k in tr.ticks.iter_mut() {
        k.position = pose.position;
        k.normal = pose.normal;
        k.velocity = Vec3::ZERO;
    }
    tr.outcome = ShotOutcome::Landed;
    tr.collision_steps = 0;
    tr.height_violation_steps = 0;
    assert!(tr.contact.is_some());
    tr
}

#[test]
fn perfect_return_scores_the_weighted_maximum() {
    let cfg = RewardConfig::default();
    let fh = compute_reward(&perfect(Style::Forehand, &cfg), &cfg).unwrap();
    let bh = compute_reward(&perfect(Style::Backhand, &cfg), &cfg).unwrap();
    assert!((fh - 5.1).abs() < 1e-12, "{fh}");
    assert!((bh - 6.1).abs() < 1e-12, "{bh}");
}

#[test]
fn missing_contact_earns_no_hit_and_land_bonus() {
    let cfg = RewardConfig::default();
    let mut tr = perfect(Style::Forehand, &cfg);
    tr.contact = None;
    tr.outcome = ShotOutcome::Miss;
    let terms = reward_terms(&tr, &cfg).unwrap();
    assert_eq!(terms.weighted(&cfg)[1], 0.0);
}

#[test]
fn one_collision_step_costs_the_collision_weight() {
    let cfg = RewardConfig::default();
    let mut tr = perfect(Style::Forehand, &cfg);
    let before = compute_reward(&tr, &cfg).unwrap();
    tr.collision_steps = 1;
    let after = compute_reward(&tr, &cfg).unwrap();
    assert_eq!(before - after, cfg.collision);
}

#[test]
fn empty_transcript_is_rejected() {
    let cfg = RewardConfig::default();
    let mut tr = perfect(Style::Forehand, &cfg);
    tr.ticks.clear();
    assert!(matches!(compute_reward(&tr, &cfg), Err(SkillError::MissingChannel(_))));
}

#[test]
fn net_height_reward_values() {
    assert_eq!(net_height_reward(0.173), 1.0);
    assert_eq!(net_height_reward(0.5), -1.1);
    assert!((net_height_reward(0.25) - (-0.77f64).exp()).abs() < 1e-12);
}

fn film_with(gamma_bias: &[f64], beta_bias: &[f64], obs_dim: usize) -> FilmAdapter {
    let act = gamma_bias.len();
    let mut f = FilmAdapter::identity(obs_dim, act);
    let stride = act * (obs_dim + 1);
    for i in 0..act {
        f.params[act * obs_dim + i] = gamma_bias[i] - 1.0;
        f.params[stride + act * obs_dim + i] = beta_bias[i];
    }
    f
}

#[test]
fn film_zero_gamma_returns_beta() {
    let b = [0.4, -1.2, 2.5];
    let f = film_with(&[0.0; 3], &b, 4);
    let out = apply_film(&[7.0, -3.0, 0.5], &f, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    assert_eq!(out, b.to_vec());
}

#[test]
fn film_matches_elementwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (obs_dim, act) = (5, 4);
    let mut f = FilmAdapter::identity(obs_dim, act);
    for p in f.params.iter_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    let obs: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a: Vec<f64> = (0..act).map(|_| rng.random_range(-1.0..1.0)).collect();
    let stride = act * (obs_dim + 1);
    let lin = |block: usize, i: usize| {
        let base = block * stride;
        let mut s = f.params[base + act * obs_dim + i];
        for j in 0..obs_dim {
            s += f.params[base + i * obs_dim + j] * obs[j];
        }
        s
    };
    let out = apply_film(&a, &f, &obs).unwrap();
    for i in 0..act {
        let expect = (1.0 + lin(0, i)) * a[i] + lin(1, i);
        assert!((out[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn film_rejects_wrong_dimensions() {
    let f = FilmAdapter::identity(4, 3);
    assert!(matches!(apply_film(&[1.0, 2.0], &f, &[0.0; 4]), Err(SkillError::DimensionMismatch { .. })));
    assert!(matches!(apply_film(&[1.0, 2.0, 3.0], &f, &[0.0; 5]), Err(SkillError::DimensionMismatch { .. })));
}

fn finite_or_wild() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        Just(f64::NAN),
        Just(f64::INFINITY),
        Just(f64::NEG_INFINITY),
    ]
}

proptest! {
    #[test]
    fn clamped_commands_respect_limits(
        l in prop::array::uniform3(finite_or_wild()),
        w in prop::array::uniform3(finite_or_wild()),
    ) {
        let limits = PaddleLimits::default();
        let c = PaddleCommand { linear: Vec3::new(l[0], l[1], l[2]), angular: Vec3::new(w[0], w[1], w[2]) }.clamped(&limits);
        prop_assert!(c.linear.is_finite() && c.angular.is_finite());
        prop_assert!(c.linear.norm() <= limits.max_velocity * (1.0 + 1e-12));
        prop_assert!(c.angular.norm() <= limits.max_angular_velocity * (1.0 + 1e-12));
    }

    #[test]
    fn reward_is_additive_over_terms(which in 0usize..11) {
        let cfg = RewardConfig::default().with_topspin_terms();
        let tr = perfect(Style::Forehand, &cfg);
        let terms = reward_terms(&tr, &cfg).unwrap();
        let full = terms.total(&cfg);
        let mut zeroed = cfg;
        match which {
            0 => zeroed.transition = 0.0,
            1 => zeroed.hit_and_land = 0.0,
            2 => zeroed.jerk = 0.0,
            3 => zeroed.acceleration = 0.0,
            4 => zeroed.velocity = 0.0,
            5 => zeroed.pose_safety = 0.0,
            6 => zeroed.collision = 0.0,
            7 => zeroed.paddle_height = 0.0,
            8 => zeroed.style_pose = 0.0,
            9 => zeroed.net_height = Some(0.0),
            _ => zeroed.contact_angle = Some(0.0),
        }
        let part = terms.weighted(&cfg)[which];
        prop_assert!((full - terms.total(&zeroed) - part).abs() < 1e-12);
    }
}

fn toy_training(iterations: usize, seed: u64) -> (Skill, Dataset) {
    let ds = corpus(120, &slow_mix(), 3);
    let tcfg = PolicyTrainingConfig { iterations, ..PolicyTrainingConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (skill, _) = train_policy_skill(
        &ds,
        &EsConfig::desk(),
        &RewardConfig::default(),
        &tcfg,
        &Physics::default(),
        policy_spec(100, Style::Forehand),
        &mut rng,
    )
    .unwrap();
    (skill, ds)
}

#[test]
fn zero_iterations_return_the_initial_policy() {
    let (skill, _) = toy_training(0, 1);
    assert_eq!(skill.policy.unwrap(), LinearPolicy::zeros(ACTION_DIM));
}

#[test]
fn training_is_deterministic_per_seed() {
    let (a, _) = toy_training(3, 7);
    let (b, _) = toy_training(3, 7);
    assert_eq!(a.policy, b.policy);
    assert_ne!(a.policy.unwrap(), LinearPolicy::zeros(ACTION_DIM));
}

#[test]
fn toy_training_raises_land_rate() {
    let (trained, ds) = toy_training(200, 5);
    let untrained = Skill { policy: Some(LinearPolicy::zeros(ACTION_DIM)), ..trained.clone() };
    let balls = training_balls(&ds, Style::Forehand, &[]);
    let cfg = PolicyTrainingConfig::default().episode;
    let rate = |s: &Skill| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        evaluate_skill(s, &balls, &cfg, &Physics::default(), &RewardConfig::default(), &mut rng).unwrap().land_rate
    };
    let (before, after) = (rate(&untrained), rate(&trained));
    assert!(after - before >= 0.2, "land rate {before} -> {after}");
}

#[test]
fn identity_adapter_leaves_episodes_unchanged() {
    let (skill, ds) = toy_training(5, 2);
    let adapted = Skill { film: Some(FilmAdapter::identity(OBS_DIM, ACTION_DIM)), ..skill.clone() };
    let physics = Physics::default();
    for b in forehand_balls(&ds).iter().take(10) {
        let a = run_skill(&skill, b, &EpisodeConfig::default(), &physics, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let c = run_skill(&adapted, b, &EpisodeConfig::default(), &physics, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, c);
    }
}

#[test]
fn topspin_correction_keeps_underspin_returns() {
    let mix = RallyMix { fast: 0.0, lob: 0.0, slow: 0.3, topspin: 0.5, underspin: 0.3, ..RallyMix::default() };
    let ds = corpus(200, &mix, 8);
    let tcfg = PolicyTrainingConfig { iterations: 60, ..PolicyTrainingConfig::default() };
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (skill, _) =
        train_policy_skill(&ds, &EsConfig::desk(), &RewardConfig::default(), &tcfg, &physics, policy_spec(100, Style::Forehand), &mut rng)
            .unwrap();
    let cfg = TopspinCorrectionConfig { stage1_iterations: 15, stage2_iterations: 10, selection_balls: 40, ..Default::default() };
    let (corrected, report) = topspin_correct(&skill, &ds, &cfg, &physics, &mut rng).unwrap();
    assert!(report.post_topspin >= report.pre_topspin);
    assert!(report.post_underspin >= report.pre_underspin - 0.05);
    assert_eq!(report.stage1_curve.len(), 15);
    assert_eq!(report.stage2_curve.len(), 10);
    assert!(corrected.policy.is_some());
}

#[test]
fn topspin_correction_needs_topspin_records() {
    let ds = corpus(30, &slow_mix(), 9);
    assert!(ds.records().iter().all(|r| !r.categories.contains(Category::Topspin)));
    let skill = Skill { policy: Some(LinearPolicy::zeros(ACTION_DIM)), ..Skill::scripted(policy_spec(100, Style::Forehand)) };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = topspin_correct(&skill, &ds, &TopspinCorrectionConfig::default(), &Physics::default(), &mut rng);
    assert!(matches!(r, Err(SkillError::NoData(_))));
}

#[test]
fn scripted_skills_cannot_be_corrected() {
    let ds = corpus(30, &RallyMix::default(), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = topspin_correct(&default_skills()[0], &ds, &TopspinCorrectionConfig::default(), &Physics::default(), &mut rng);
    assert!(matches!(r, Err(SkillError::NotTrainable(0))));
}
