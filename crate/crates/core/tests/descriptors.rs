use proptest::prelude::*;
use rallybot::ballistics::{Physics, StyleBands};
use rallybot::dataset::synth::{self, RallyMix, ServeMix};
use rallybot::dataset::{reflect_y, Dataset};
use rallybot::descriptors::*;
use rallybot::skills::{default_skills, EpisodeConfig, ExecutionNoise, ObservationNoise, Skill};
use rallybot::vec3::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_keys(n: usize, rng: &mut impl Rng) -> Vec<Point> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect()
}

fn random_metrics(rng: &mut impl Rng) -> SkillMetrics {
    SkillMetrics {
        land_rate: rng.random_range(0..=10) as f64 / 10.0,
        hit_velocity_y: rng.random_range(2.0..8.0),
        landing_mean: Vec2::new(rng.random_range(-0.7..0.7), rng.random_range(0.2..1.3)),
        landing_std: Vec2::new(rng.random_range(0.0..0.2), rng.random_range(0.0..0.2)),
        sample_count: rng.random_range(1..12),
    }
}

fn random_table(n: usize, seed: u64) -> DescriptorTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = random_keys(n, &mut rng);
    let metrics = (0..n).map(|_| random_metrics(&mut rng)).collect();
    let scales = key_scales(&keys);
    DescriptorTable::new(3, scales, keys, (0..n as u64).collect(), metrics).unwrap()
}

fn corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth::generate_corpus(n, 0, 0, &RallyMix::default(), &ServeMix::default(), &Physics::default(), &StyleBands::default(), &mut rng)
}

#[test]
fn kd_tree_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let keys = random_keys(10_000, &mut rng);
    let tree = KdTree::build(keys.clone());
    for _ in 0..1000 {
        let q: Point = std::array::from_fn(|_| rng.random_range(-2.5..2.5));
        for k in [1, 5, 25] {
            let a: Vec<usize> = tree.knn(&q, k).iter().map(|n| n.index).collect();
            let b: Vec<usize> = brute_force_knn(&keys, &q, k).iter().map(|n| n.index).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn kd_tree_matches_linear_scan_on_grid_ties() {
    // Integer lattice keys produce many equal distances.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let keys: Vec<Point> = (0..2000).map(|_| std::array::from_fn(|_| rng.random_range(-2..=2) as f64)).collect();
    let tree = KdTree::build(keys.clone());
    for _ in 0..300 {
        let q: Point = std::array::from_fn(|_| rng.random_range(-2..=2) as f64);
        for k in [1, 5, 25] {
            let a: Vec<usize> = tree.knn(&q, k).iter().map(|n| n.index).collect();
            let b: Vec<usize> = brute_force_knn(&keys, &q, k).iter().map(|n| n.index).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn exact_key_with_k1_returns_stored_metrics() {
    let t = random_table(500, 3);
    for i in [0, 17, 499] {
        let r = t.query(&t.keys[i], 1).unwrap();
        assert_eq!(r.neighbors, vec![i]);
        assert_eq!(r.metrics, t.metrics[i]);
        assert!(!r.truncated);
    }
}

#[test]
fn oversized_k_uses_whole_table_with_flag() {
    let t = random_table(7, 4);
    let r = t.query(&[0.0; DIM], 25).unwrap();
    assert!(r.truncated);
    assert_eq!(r.neighbors.len(), 7);
    assert!(matches!(t.query(&[0.0; DIM], 0), Err(DescriptorError::ZeroK)));
}

#[test]
fn equidistant_keys_resolve_to_lower_id() {
    let mut keys = vec![[0.0; DIM]; 3];
    keys[0][0] = 1.0;
    keys[1][0] = -1.0;
    keys[2][0] = 3.0;
    let metrics = vec![SkillMetrics::single(true, 5.0, Some(Vec2::new(0.0, 1.0))); 3];
    let t = DescriptorTable::new(0, [1.0; DIM], keys, vec![10, 11, 12], metrics).unwrap();
    assert_eq!(t.query(&[0.0; DIM], 1).unwrap().neighbors, vec![0]);
}

#[test]
fn update_halves_land_rate_of_each_neighbor() {
    let mut t = random_table(200, 5);
    for m in t.metrics.iter_mut() {
        m.land_rate = 0.8;
    }
    let key = t.keys[10];
    let touched = t.update_with_real(&key, &SkillMetrics::single(false, 4.0, None));
    assert_eq!(touched.len(), 25);
    for i in 0..t.len() {
        let expect = if touched.contains(&i) { 0.4 } else { 0.8 };
        assert!((t.metrics[i].land_rate - expect).abs() < 1e-15);
    }
}

#[test]
fn update_with_identical_metrics_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let keys = random_keys(100, &mut rng);
    let m = random_metrics(&mut rng);
    let scales = key_scales(&keys);
    let mut t = DescriptorTable::new(0, scales, keys, (0..100).collect(), vec![m; 100]).unwrap();
    let before = t.metrics.clone();
    let k = t.keys[3];
    t.update_with_real(&k, &m);
    assert_eq!(t.metrics, before);
}

// Independent replay of the equal-weight rule: brute-force 25-NN on the
// scaled keys, then (stored + observed) / 2 for the land rate.
#[test]
fn sequential_updates_match_replay_oracle() {
    let mut t = random_table(300, 7);
    let mut oracle: Vec<f64> = t.metrics.iter().map(|m| m.land_rate).collect();
    let scaled: Vec<Point> = t.keys.iter().map(|k| std::array::from_fn(|d| k[d] / t.scales[d])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let center = t.keys[42];
    for step in 0..6 {
        let mut q = center;
        q[0] += rng.random_range(-0.05..0.05);
        let landed = step % 2 == 1;
        let qs: Point = std::array::from_fn(|d| q[d] / t.scales[d]);
        for n in brute_force_knn(&scaled, &qs, 25) {
            oracle[n.index] = (oracle[n.index] + landed as u8 as f64) / 2.0;
        }
        t.update_with_real(&q, &SkillMetrics::single(landed, 5.0, landed.then(|| Vec2::new(0.1, 0.9))));
    }
    for (m, o) in t.metrics.iter().zip(&oracle) {
        assert!((m.land_rate - o).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn query_stays_inside_neighbor_envelope(seed in 0u64..500, k in 1usize..40) {
        let t = random_table(60, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let q: Point = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let r = t.query(&q, k).unwrap();
        let picked: Vec<&SkillMetrics> = r.neighbors.iter().map(|&i| &t.metrics[i]).collect();
        let env = |f: &dyn Fn(&SkillMetrics) -> f64, only_landed: bool| {
            let vals: Vec<f64> = picked.iter().filter(|m| !only_landed || m.land_rate > 0.0).map(|m| f(m)).collect();
            (vals.iter().cloned().fold(f64::INFINITY, f64::min), vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        };
        let eps = 1e-12;
        let (lo, hi) = env(&|m| m.land_rate, false);
        prop_assert!(r.metrics.land_rate >= lo - eps && r.metrics.land_rate <= hi + eps);
        let (lo, hi) = env(&|m| m.hit_velocity_y, false);
        prop_assert!(r.metrics.hit_velocity_y >= lo - eps && r.metrics.hit_velocity_y <= hi + eps);
        if r.metrics.land_rate > 0.0 {
            let (lo, hi) = env(&|m| m.landing_mean.x, true);
            prop_assert!(r.metrics.landing_mean.x >= lo - eps && r.metrics.landing_mean.x <= hi + eps);
            let (lo, hi) = env(&|m| m.landing_mean.y, true);
            prop_assert!(r.metrics.landing_mean.y >= lo - eps && r.metrics.landing_mean.y <= hi + eps);
        }
    }

    #[test]
    fn updates_keep_land_rate_in_unit_interval(seed in 0u64..200, outcomes in prop::collection::vec(any::<bool>(), 1..12)) {
        let mut t = random_table(80, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for landed in outcomes {
            let q: Point = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            t.update_with_real(&q, &SkillMetrics::single(landed, 5.0, landed.then(|| Vec2::new(0.0, 1.0))));
        }
        prop_assert!(t.metrics.iter().all(|m| (0.0..=1.0).contains(&m.land_rate)));
    }
}

fn clean_build(repetitions: usize) -> BuildConfig {
    BuildConfig {
        repetitions,
        episode: EpisodeConfig { latency: None, observation: ObservationNoise::NONE, ..EpisodeConfig::default() },
        ..BuildConfig::default()
    }
}

#[test]
fn noiseless_skill_has_binary_land_rates() {
    let ds = corpus(40, 9);
    let mut skill = default_skills().remove(0);
    skill.spec.execution_noise = ExecutionNoise::NONE;
    let t = build_descriptor(&skill, &ds, &clean_build(10), &Physics::default()).unwrap();
    assert_eq!(t.len(), 40);
    assert!(t.metrics.iter().all(|m| m.land_rate == 0.0 || m.land_rate == 1.0));
}

#[test]
fn ten_repetitions_average_ten_single_builds() {
    let ds = corpus(30, 10);
    let skill = default_skills().remove(7);
    let physics = Physics::default();
    let cfg = BuildConfig { repetitions: 10, seed: 4, ..BuildConfig::default() };
    let full = build_descriptor(&skill, &ds, &cfg, &physics).unwrap();
    let singles: Vec<DescriptorTable> = (0..10)
        .map(|r| build_descriptor(&skill, &ds, &BuildConfig { repetitions: 1, first_repetition: r, ..cfg }, &physics).unwrap())
        .collect();
    for i in 0..full.len() {
        let mean = singles.iter().map(|t| t.metrics[i].land_rate).sum::<f64>() / 10.0;
        assert!((full.metrics[i].land_rate - mean).abs() < 1e-12, "entry {i}");
    }
    assert!(full.metrics.iter().any(|m| m.land_rate > 0.0 && m.land_rate < 1.0));
}

#[test]
fn table_has_one_entry_per_record() {
    let ds = reflect_y(&corpus(25, 11));
    assert_eq!(ds.len(), 50);
    let t = build_descriptor(&default_skills()[9], &ds, &BuildConfig { repetitions: 2, ..BuildConfig::default() }, &Physics::default()).unwrap();
    assert_eq!(t.len(), 50);
    let mut ids = t.record_ids.clone();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 50);
}

#[test]
fn same_seed_gives_identical_file_and_round_trips() {
    let ds = corpus(20, 12);
    let skill = default_skills().remove(3);
    let physics = Physics::default();
    let cfg = BuildConfig { repetitions: 3, seed: 77, ..BuildConfig::default() };
    let a = build_descriptor(&skill, &ds, &cfg, &physics).unwrap();
    let b = build_descriptor(&skill, &ds, &cfg, &physics).unwrap();
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    a.save(&mut fa).unwrap();
    b.save(&mut fb).unwrap();
    assert_eq!(fa, fb);
    let mut c = DescriptorTable::load(fa.as_slice()).unwrap();
    assert_eq!(c, a);
    c.update_with_real(&c.keys[0].clone(), &SkillMetrics::single(true, 5.5, Some(Vec2::new(0.2, 0.9))));
    let mut fc = Vec::new();
    c.save(&mut fc).unwrap();
    assert_eq!(DescriptorTable::load(fc.as_slice()).unwrap(), c);
}

#[test]
fn unreachable_skill_is_an_error() {
    let ds = corpus(10, 13);
    let mut cfg = clean_build(1);
    cfg.episode.stroke.reach_z = [5.0, 6.0];
    let r = build_descriptor(&default_skills()[0], &ds, &cfg, &Physics::default());
    assert!(matches!(r, Err(DescriptorError::EmptyTable(0))));
}

#[test]
fn report_lists_every_skill() {
    let ds = corpus(15, 14);
    let skills: Vec<Skill> = default_skills().into_iter().take(3).collect();
    let set = DescriptorSet::build(&skills, &ds, &BuildConfig { repetitions: 2, ..BuildConfig::default() }, &Physics::default()).unwrap();
    let report = set.report(&skills);
    assert_eq!(report.lines().count(), 4);
    assert!(report.lines().nth(1).unwrap().starts_with("0,fh-generalist-a,15,"));
}
