use std::path::{Path, PathBuf};

use rallybot::ballistics::BallState;
use rallybot::config::RunConfig;
use rallybot::dataset::synth::{generate_corpus, observe, rally_ball, synthetic_rally_stream, ServeMix};
use rallybot::dataset::{fit_initial_state, import_stream, reflect_y, Dataset, DatasetError, ObservedTrajectory};
use rallybot::descriptors::{BuildConfig, DescriptorSet};
use rallybot::hlc::spin::{
    spin_label, synthetic_strokes, train_spin_classifier, REFERENCE_UNDERSPIN_PRECISION, REFERENCE_UNDERSPIN_RECALL,
};
use rallybot::hlc::style::{paired_outcomes, train_style as fit_style};
use rallybot::hlc::{adaptation_csv, PreferenceStore};
use rallybot::matchsim::{
    ablate_decision_timing, ablation_csv, events_jsonl, new_record, run_match, spin_returns_csv, tournament, tournament_csv,
    RuleVariant, TimingSetting,
};
use rallybot::optimizer::{curve_to_csv, EsConfig};
use rallybot::skills::{
    policy_spec, topspin_correct, train_policy_skill, LinearPolicy, PolicyTrainingConfig, Skill, SkillError, SkillKind, Style,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::failure::{Failure, DATA, USAGE};
use crate::stack::{
    load_dataset, load_robot, load_roster, meta_path, read_json, skill_file, spin_file, style_file, write_csv, write_json,
    write_meta, write_text, SpinModel, StyleModel,
};
use crate::{AblationArg, ObserveKind, StyleArg, VariantArg};

fn rng(cfg: &RunConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed)
}

fn report_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.reports().join(name)
}

fn read_input(path: &Path) -> Result<ObservedTrajectory, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(e).context(format!("reading {}", path.display())))?;
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    let traj = ObservedTrajectory::from_csv(&text, &name).map_err(|e| Failure::data(e).context(format!("parsing {}", path.display())))?;
    if traj.is_empty() {
        return Err(Failure::msg(DATA, format!("{} holds no samples", path.display())));
    }
    Ok(traj)
}

fn save_dataset(cfg: &RunConfig, d: &Dataset, path: &Path, command: &str) -> Result<(), Failure> {
    write_text(path, "")?;
    d.save_path(path).map_err(|e| Failure::data(e).context(format!("writing {}", path.display())))?;
    write_meta(&meta_path(path), &cfg.stamp(), command, d.len())
}

pub fn config_show(cfg: &RunConfig) -> Result<(), Failure> {
    let text = cfg.to_toml().map_err(Failure::data)?;
    print!("# config_hash = \"{}\"\n{text}", cfg.hash());
    Ok(())
}

pub fn config_init(cfg: &RunConfig, path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(Failure::msg(USAGE, format!("{} exists; pass --force to overwrite", path.display())));
    }
    let mut c = cfg.clone();
    c.paths.root = PathBuf::from(".");
    write_text(path, &c.to_toml().map_err(Failure::data)?)?;
    println!("wrote {} (config hash {})", path.display(), c.hash());
    Ok(())
}

pub fn dataset_synth(cfg: &RunConfig, rally: Option<usize>, serve: Option<usize>) -> Result<(), Failure> {
    let s = &cfg.dataset;
    let (n_rally, n_serve) = (rally.unwrap_or(s.rally_balls), serve.unwrap_or(s.serve_balls));
    let d = generate_corpus(n_rally, n_serve, s.cycle, &s.rally, &s.serve, &cfg.physics, &s.bands, &mut rng(cfg));
    let path = cfg.paths.dataset();
    save_dataset(cfg, &d, &path, "dataset synth")?;
    println!("wrote {} records ({n_rally} rally, {n_serve} serve) to {}", d.len(), path.display());
    Ok(())
}

pub fn dataset_observe(cfg: &RunConfig, out_dir: &Path, count: usize, kind: ObserveKind) -> Result<(), Failure> {
    let mut rng = rng(cfg);
    let noise = cfg.dataset.stream_noise;
    let mut truth = String::from("file,x,y,z,vx,vy,vz,wx,wy,wz,hit_times\n");
    for i in 0..count {
        let (name, traj, state, hits) = match kind {
            ObserveKind::Flight => {
                let b = rally_ball(&cfg.dataset.rally, &cfg.physics, &mut rng);
                let t = cfg.physics.simulate(&b, 0.6).map_err(Failure::data)?;
                let name = format!("flight_{i:03}.csv");
                let traj = ObservedTrajectory::new(observe(&t, 125.0, noise, 0.0, &mut rng), name.clone())?;
                (name, traj, b, String::new())
            }
            ObserveKind::Rally => {
                let s = synthetic_rally_stream(&cfg.physics, noise, &mut rng);
                let first = s.stream.samples.first().map(|&(t, p)| (t, p));
                let hits = s.hit_times.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>().join(" ");
                let (_, p) = first.ok_or_else(|| Failure::msg(DATA, "empty synthetic stream"))?;
                let state = BallState::new(p, Default::default(), Default::default());
                (format!("rally_{i:03}.csv"), s.stream, state, hits)
            }
        };
        write_text(&out_dir.join(&name), &traj.to_csv())?;
        let a = state.to_array();
        let cols = a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        truth.push_str(&format!("{name},{cols},{hits}\n"));
    }
    write_csv(&out_dir.join("truth.csv"), &cfg.stamp(), &truth)?;
    println!("wrote {count} observation files to {}", out_dir.display());
    Ok(())
}

pub fn dataset_import(cfg: &RunConfig, inputs: &[PathBuf], serve: bool, cycle: Option<u32>) -> Result<(), Failure> {
    // Parse everything first so a bad file leaves no artifacts behind.
    let streams = inputs.iter().map(|p| read_input(p)).collect::<Result<Vec<_>, _>>()?;
    let path = cfg.paths.dataset();
    let mut d = if path.exists() { Dataset::load_path(&path)? } else { Dataset::new() };
    let cycle = cycle.unwrap_or(cfg.dataset.cycle);
    let fit = rallybot::dataset::FitConfig { seed: cfg.seed, ..cfg.dataset.fit.clone() };
    let mut rows = String::from("source,record,residual\n");
    let (mut added, mut failures, mut segments) = (0usize, 0usize, 0usize);
    for s in &streams {
        let rep = import_stream(&mut d, s, serve, cycle, &cfg.physics, &cfg.dataset.bands, &cfg.dataset.segment, &fit);
        if let Some(w) = &rep.warning {
            eprintln!("warning: {}: {w}", s.source);
        }
        for (id, r) in rep.added.iter().zip(&rep.residuals) {
            rows.push_str(&format!("{},{id},{r:.6}\n", s.source));
        }
        added += rep.added.len();
        failures += rep.failures;
        segments += rep.segments;
    }
    if added == 0 {
        return Err(Failure::msg(DATA, format!("no ball states recovered ({segments} segments, {failures} failed fits)")));
    }
    save_dataset(cfg, &d, &path, "dataset import")?;
    write_csv(&report_path(cfg, "import.csv"), &cfg.stamp(), &rows)?;
    println!("imported {added} of {segments} segments ({failures} failed); dataset now holds {} records", d.len());
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn dataset_fit(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<(), Failure> {
    let trajs = inputs.iter().map(|p| read_input(p)).collect::<Result<Vec<_>, _>>()?;
    let fit = rallybot::dataset::FitConfig { seed: cfg.seed, ..cfg.dataset.fit.clone() };
    let mut rows = String::from("source,status,residual,x,y,z,vx,vy,vz,wx,wy,wz\n");
    let mut residuals = Vec::new();
    for t in &trajs {
        let (status, state, residual) = match fit_initial_state(t, &cfg.physics, &fit) {
            Ok(f) => ("ok", f.state, f.residual),
            Err(DatasetError::FitFailed { best, residual }) => ("failed", best, residual),
            Err(e) => return Err(Failure::data(e).context(format!("fitting {}", t.source))),
        };
        residuals.push(residual);
        let cols = state.to_array().iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",");
        rows.push_str(&format!("{},{status},{residual:.6},{cols}\n", t.source));
    }
    write_csv(&report_path(cfg, "fit.csv"), &cfg.stamp(), &rows)?;
    let m = median(&mut residuals);
    println!("fitted {} trajectories, median residual {m:.5} m (ceiling {} m)", trajs.len(), fit.residual_ceiling);
    if !(m <= fit.residual_ceiling) {
        return Err(Failure::msg(DATA, format!("median residual {m:.5} m above the ceiling {} m", fit.residual_ceiling)));
    }
    Ok(())
}

pub fn dataset_reflect(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Failure> {
    let d = load_dataset(cfg)?;
    let r = reflect_y(&d);
    let path = out.map_or_else(|| cfg.paths.dataset(), Path::to_path_buf);
    save_dataset(cfg, &r, &path, "dataset reflect")?;
    println!("reflected {} records into {} at {}", d.len(), r.len(), path.display());
    Ok(())
}

pub fn dataset_stats(cfg: &RunConfig) -> Result<(), Failure> {
    let d = load_dataset(cfg)?;
    let csv = d.summary_csv();
    write_csv(&report_path(cfg, "dataset_stats.csv"), &cfg.stamp(), &csv)?;
    print!("{csv}");
    Ok(())
}

fn style_of(s: StyleArg) -> Style {
    match s {
        StyleArg::Forehand => Style::Forehand,
        StyleArg::Backhand => Style::Backhand,
    }
}

pub fn train_skill(cfg: &RunConfig, style: StyleArg, id: Option<usize>, iterations: Option<usize>) -> Result<(), Failure> {
    let d = load_dataset(cfg)?;
    let es = EsConfig::preset(&cfg.train.preset)?;
    let style = style_of(style);
    let id = id.unwrap_or(if style == Style::Forehand { 0 } else { 9 });
    let tcfg = PolicyTrainingConfig {
        style,
        iterations: iterations.unwrap_or(cfg.train.skill_iterations),
        balls_per_rollout: cfg.train.balls_per_rollout,
        episode: cfg.train.episode,
        ..PolicyTrainingConfig::default()
    };
    let spec = policy_spec(id, style);
    let stamp = cfg.stamp();
    match train_policy_skill(&d, &es, &cfg.train.reward, &tcfg, &cfg.physics, spec.clone(), &mut rng(cfg)) {
        Ok((skill, curve)) => {
            let path = skill_file(cfg, id);
            write_json(&path, &stamp, "skill", &skill)?;
            write_csv(&report_path(cfg, &format!("train_skill_{id:02}.csv")), &stamp, &curve_to_csv(&curve))?;
            let last = curve.last().map_or(f64::NAN, |r| r.mean_fitness);
            println!("trained skill {id} ({:?}) for {} iterations, final mean fitness {last:.4}; wrote {}", style, curve.len(), path.display());
            Ok(())
        }
        Err(SkillError::Diverged { iteration, checkpoint }) => {
            let policy = LinearPolicy::zeros(tcfg.act_dim).with_params(&checkpoint)?;
            let path = cfg.paths.skills().join(format!("skill_{id:02}.checkpoint.json"));
            write_json(&path, &stamp, "skill", &Skill { spec, policy: Some(policy), film: None })?;
            Err(Failure::msg(crate::failure::DIVERGED, format!("training diverged at iteration {iteration}; checkpoint kept at {}", path.display())))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn train_style(cfg: &RunConfig) -> Result<(), Failure> {
    let d = load_dataset(cfg)?;
    let skills = load_roster(cfg)?;
    let generalist = |style: Style| {
        skills
            .iter()
            .find(|s| s.spec.style == style && s.spec.kind == SkillKind::Generalist && !s.spec.is_serve_receiver)
            .ok_or_else(|| Failure::msg(DATA, format!("roster has no {style:?} generalist")))
    };
    let (fh, bh) = (generalist(Style::Forehand)?, generalist(Style::Backhand)?);
    let balls: Vec<BallState> = d.rally_records().take(cfg.train.style_balls).map(|r| r.initial).collect();
    if balls.is_empty() {
        return Err(Failure::msg(DATA, "dataset has no rally balls for style training"));
    }
    let ep = cfg.descriptors.episode;
    let outcomes = paired_outcomes(&balls, fh, bh, &ep, &cfg.physics, cfg.train.style_repetitions, cfg.seed)?;
    let (selector, rep) = fit_style(&outcomes, &cfg.train.style, &mut rng(cfg))?;
    let stamp = cfg.stamp();
    let model = StyleModel {
        selector,
        heuristic_validation: rep.heuristic_validation,
        trained_validation: rep.trained_validation,
        kept_trained: rep.kept_trained,
    };
    write_json(&style_file(cfg), &stamp, "style", &model)?;
    write_csv(&report_path(cfg, "train_style.csv"), &stamp, &curve_to_csv(&rep.curve))?;
    println!(
        "style model: validation land rate {:.3} trained vs {:.3} table-half rule ({})",
        rep.trained_validation,
        rep.heuristic_validation,
        if rep.kept_trained { "kept trained weights" } else { "kept the rule" }
    );
    Ok(())
}

pub fn train_spin(cfg: &RunConfig) -> Result<(), Failure> {
    let t = &cfg.train;
    let frac = t.spin_underspin_fraction;
    let mix = ServeMix { underspin: frac, topspin: cfg.dataset.serve.topspin.min(1.0 - frac), ..cfg.dataset.serve.clone() };
    let mut rng = rng(cfg);
    let strokes = synthetic_strokes(t.spin_strokes, &mix, &t.stroke_model, &cfg.physics, |b, _| spin_label(b.spin.x), &mut rng);
    let (classifier, report) = train_spin_classifier(&strokes, &t.stroke_model, &t.spin, &mut rng)?;
    write_json(&spin_file(cfg), &cfg.stamp(), "spin", &SpinModel { classifier, report })?;
    println!(
        "spin model: holdout accuracy {:.3}, underspin precision {:.3} recall {:.3} (reference {:.2} / {:.2})",
        report.holdout_accuracy, report.underspin_precision, report.underspin_recall, REFERENCE_UNDERSPIN_PRECISION, REFERENCE_UNDERSPIN_RECALL
    );
    Ok(())
}

pub fn train_film(cfg: &RunConfig, id: usize) -> Result<(), Failure> {
    let path = skill_file(cfg, id);
    if !path.exists() {
        return Err(Failure::msg(DATA, format!("missing skill stage: {} not found (run `rallybot train skill --id {id}`)", path.display())));
    }
    let skill: Skill = read_json(&path, "skill")?;
    let d = load_dataset(cfg)?;
    let (corrected, rep) = topspin_correct(&skill, &d, &cfg.train.film, &cfg.physics, &mut rng(cfg))?;
    let stamp = cfg.stamp();
    write_json(&path, &stamp, "skill", &corrected)?;
    write_json(&report_path(cfg, &format!("film_{id:02}.json")), &stamp, "film_report", &rep)?;
    println!(
        "skill {id}: topspin land {:.3} -> {:.3}, underspin {:.3} -> {:.3}, stage {}",
        rep.pre_topspin, rep.post_topspin, rep.pre_underspin, rep.post_underspin, rep.selected_stage
    );
    Ok(())
}

pub fn descriptors_build(cfg: &RunConfig) -> Result<(), Failure> {
    let skills = load_roster(cfg)?;
    let d = load_dataset(cfg)?;
    let build = BuildConfig { seed: cfg.seed, ..cfg.descriptors };
    let set = DescriptorSet::build(&skills, &d, &build, &cfg.physics)?;
    let dir = cfg.paths.descriptors();
    if dir.is_dir() {
        // Tables of skills no longer in the roster would otherwise linger.
        for e in std::fs::read_dir(&dir)?.filter_map(Result::ok) {
            if e.path().extension().is_some_and(|x| x == "desc") {
                std::fs::remove_file(e.path())?;
            }
        }
    }
    set.save_dir(&dir)?;
    let stamp = cfg.stamp();
    write_meta(&dir.join("meta.json"), &stamp, "descriptors build", set.tables.len())?;
    let report = set.report(&skills);
    write_csv(&report_path(cfg, "descriptors.csv"), &stamp, &report)?;
    println!("built {} descriptor tables in {}", set.tables.len(), dir.display());
    Ok(())
}

pub fn descriptors_report(cfg: &RunConfig) -> Result<(), Failure> {
    let dir = cfg.paths.descriptors();
    if !dir.is_dir() {
        return Err(Failure::msg(DATA, format!("missing descriptors stage: {} not found", dir.display())));
    }
    let set = DescriptorSet::load_dir(&dir)?;
    print!("{}", set.report(&load_roster(cfg)?));
    Ok(())
}

fn with_variant(cfg: &RunConfig, variant: Option<VariantArg>) -> RunConfig {
    let mut c = cfg.clone();
    match variant {
        Some(VariantArg::Main) => c.play.match_cfg.variant = RuleVariant::MainRules,
        Some(VariantArg::Alternating) => c.play.match_cfg.variant = RuleVariant::AlternatingServes,
        None => {}
    }
    c
}

pub fn play_match(cfg: &RunConfig, opponent: Option<&str>, variant: Option<VariantArg>, uniform: bool) -> Result<(), Failure> {
    let cfg = with_variant(cfg, variant);
    let profile = cfg.profile(opponent.unwrap_or(&cfg.play.opponent)).map_err(Failure::usage)?;
    let robot = load_robot(&cfg, uniform)?;
    let persist = cfg.flags.persist_preferences;
    let store_path = cfg.paths.preferences();
    let mut store = if persist && store_path.exists() { PreferenceStore::load(&store_path)? } else { PreferenceStore::default() };
    let mut record = if persist { store.entry(&profile.id, &robot.hlc.initial_preferences()).clone() } else { new_record(&robot) };
    let out = run_match(&robot, &profile, &cfg.play.match_cfg, &mut record, &mut rng(&cfg))?;
    if persist {
        store.opponents.insert(profile.id.clone(), record);
        store.save(&store_path)?;
    }
    let stamp = cfg.stamp();
    let base = format!("match_{}", profile.id);
    let rep = &out.report;
    write_json(&report_path(&cfg, &format!("{base}.json")), &stamp, "match_report", rep)?;
    if cfg.play.match_cfg.record_events {
        let events = report_path(&cfg, &format!("{base}.events.jsonl"));
        write_text(&events, &events_jsonl(&out.events))?;
        write_meta(&meta_path(&events), &stamp, "play match", out.events.len())?;
    }
    write_csv(&report_path(&cfg, &format!("{base}.adaptation.csv")), &stamp, &adaptation_csv(&rep.adaptation))?;
    write_csv(&report_path(&cfg, &format!("{base}.spin_returns.csv")), &stamp, &spin_returns_csv(&rep.spin_returns))?;
    let games: Vec<String> = rep.game_scores.iter().map(|g| format!("{}-{}", g[1], g[0])).collect();
    println!(
        "{} vs {}: games {}-{} ({}), points {}-{}, lets {}; robot {}",
        if robot.hlc.cfg.mode == rallybot::hlc::SelectionMode::UniformRandom { "uniform-random robot" } else { "robot" },
        profile.id,
        rep.games[1],
        rep.games[0],
        games.join(", "),
        rep.points[1],
        rep.points[0],
        rep.lets,
        if rep.robot_won() { "wins" } else { "loses" }
    );
    Ok(())
}

pub fn play_tournament(cfg: &RunConfig, matches: Option<usize>, variant: Option<VariantArg>, uniform: bool) -> Result<(), Failure> {
    let cfg = with_variant(cfg, variant);
    let profiles = cfg.tournament_profiles().map_err(Failure::usage)?;
    let robot = load_robot(&cfg, uniform)?;
    let mcfg = rallybot::matchsim::MatchConfig { record_events: false, ..cfg.play.match_cfg.clone() };
    let rows = tournament(&robot, &profiles, matches.unwrap_or(cfg.play.matches), &mcfg, cfg.seed)?;
    let csv = tournament_csv(&rows);
    let name = if uniform || cfg.flags.uniform_random { "tournament_uniform.csv" } else { "tournament.csv" };
    write_csv(&report_path(&cfg, name), &cfg.stamp(), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn play_ablate(cfg: &RunConfig, kind: AblationArg, balls: Option<usize>) -> Result<(), Failure> {
    let robot = load_robot(cfg, false)?;
    let d = load_dataset(cfg)?;
    let n = balls.unwrap_or(cfg.play.ablation_balls);
    let pool: Vec<BallState> = d.rally_records().take(n).map(|r| r.initial).collect();
    if pool.is_empty() {
        return Err(Failure::msg(DATA, "dataset has no rally balls for the ablation"));
    }
    let (settings, name) = match kind {
        AblationArg::Wait => (TimingSetting::wait_rows(), "ablation_wait.csv"),
        AblationArg::Redecide => (TimingSetting::redecide_rows(), "ablation_redecide.csv"),
    };
    let rows = ablate_decision_timing(&robot, &pool, &settings, cfg.seed)?;
    let csv = ablation_csv(&rows);
    write_csv(&report_path(cfg, name), &cfg.stamp(), &csv)?;
    print!("{csv}");
    Ok(())
}
