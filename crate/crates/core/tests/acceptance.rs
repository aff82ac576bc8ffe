//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints a PASS/FAIL line whether or not output capture is on.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spotter_core::engine::{Engine, SpotterConfig};
use spotter_core::genprecon::{gen_precon, ValueIndex};
use spotter_core::gridworld::{base_task, reset_layout, EnvConfig, Layout, Vocabulary};
use spotter_core::harness::{clears_door, run_seeds, write_outputs, ExperimentConfig, RunMode, SeedOutcome};
use spotter_core::par::Mode;
use spotter_core::rl::{EpsSchedule, TabularLearner};
use spotter_core::symbolic::{owfs, regress, FluentSet};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(started: Instant, budget: Duration, detail: String) -> Check {
    let took = started.elapsed();
    ensure!(took < budget, "{detail}; took {took:.1?}, budget {budget:?}");
    Ok(format!("{detail} ({took:.1?})"))
}

fn symbolic_oracle() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut with_plan, mut regressions) = (0, 0);
    let all = all_partial_states();
    for i in 0..1000 {
        let d = random_domain(&mut rng);
        let ops = d.operators();
        let out = owfs(&ops, &to_pfs(&d.goal), &to_pfs(&d.start), 100_000).map_err(|e| e.to_string())?;
        match (d.shortest_plan(4), &out.plan) {
            (Some(n), Some(p)) => ensure!(p.len() == n, "domain {i}: plan length {} vs shortest {n}", p.len()),
            (Some(_), None) => return Err(format!("domain {i}: search missed a plan")),
            (None, Some(p)) => ensure!(p.len() > 4, "domain {i}: plan of {} steps not enumerated", p.len()),
            (None, None) => {}
        }
        if let Some(p) = &out.plan {
            with_plan += 1;
            let idx: Vec<usize> = p.steps.iter().map(|o| o.name[1..].parse().unwrap()).collect();
            let end = d.replay(&idx).ok_or(format!("domain {i}: plan does not execute"))?;
            ensure!(subset(&d.goal, &end), "domain {i}: plan misses the goal");
        }
        for (oi, o) in d.ops.iter().enumerate() {
            // random targets are rarely relevant; successors always are
            let from = random_arr(&mut rng, 0.9);
            let target = match o.apply(&from) {
                Some(next) if rng.gen_bool(0.7) => next,
                _ => random_arr(&mut rng, 0.6),
            };
            let Ok(r) = regress(&to_pfs(&target), &ops[oi]) else { continue };
            regressions += 1;
            let r = from_pfs(&r);
            for t in &all {
                let yields = o.apply(t).is_some_and(|n| subset(&target, &n));
                ensure!(yields == subset(&r, t), "domain {i} op {oi}: regression not minimal at {t:?}");
            }
        }
    }
    within(
        started,
        Duration::from_secs(60),
        format!("1000 domains, {with_plan} with plans, {regressions} regressions checked over 81 states"),
    )
}

fn puzzle1_plans() -> Check {
    let started = Instant::now();
    let full = ["goToObj(agent,key)", "pickUp(agent,key)", "goToObj(agent,door)", "useKey(agent,door,key)"];
    let (mut full_plan, mut suffix) = (0, Vec::new());
    for seed in 0..100 {
        let mut e = Engine::new(SpotterConfig::default(), seed);
        e.begin_puzzle(EnvConfig::default_for(1, seed), 1).map_err(|x| x.to_string())?;
        let r = e.run_episode();
        ensure!(!r.impasse && r.reward > 0.0, "seed {seed}: impasse={} reward={}", r.impasse, r.reward);
        let plan: Vec<&str> = r.first_plan.iter().map(|s| &**s).collect();
        if plan == full {
            full_plan += 1;
        } else {
            ensure!(plan == full[1..], "seed {seed}: unexpected plan {plan:?}");
            suffix.push(seed);
        }
    }
    for seed in &suffix {
        println!("  seed {seed}: agent starts facing the key, plan skips goToObj(agent,key)");
    }
    ensure!(full_plan >= 95, "only {full_plan}/100 layouts used the 4-step plan");
    within(
        started,
        Duration::from_secs(60),
        format!("{full_plan}/100 via 4-step plan, {} via its 3-step suffix", suffix.len()),
    )
}

fn puzzle2_has_no_plan() -> Check {
    let started = Instant::now();
    let task = base_task(2).map_err(|e| e.to_string())?;
    for seed in 0..100 {
        let layout = Layout::new(EnvConfig::default_for(2, seed)).map_err(|e| e.to_string())?;
        let s = reset_layout(&layout, &mut ChaCha8Rng::seed_from_u64(seed));
        let out = task.owfs(&s.detect()).map_err(|e| e.to_string())?;
        ensure!(out.plan.is_none(), "seed {seed}: found {:?}", out.plan.unwrap().names());
    }
    within(started, Duration::from_secs(60), "100/100 layouts without a plan".into())
}

fn reduced(puzzles: Vec<u8>, episodes: Vec<u64>, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        mode: RunMode::Spotter,
        puzzles,
        episodes,
        width: 7,
        height: 5,
        seeds,
        par: Mode::Sequential,
        ..ExperimentConfig::default()
    }
}

/// Episode of the first installed door-clearing operator followed by a
/// later impasse-free episode.
fn discovery(o: &SeedOutcome) -> Option<(u64, u64)> {
    let found = o.discovered.iter().filter(|d| clears_door(d)).map(|d| d.episode).min()?;
    let solved = o.rows.iter().find(|r| r.episode > found && !r.impasse)?.episode;
    Some((found, solved))
}

fn operator_discovery(outcomes: &[SeedOutcome], took: Duration) -> Check {
    let mut passed = 0;
    for o in outcomes {
        match discovery(o) {
            Some((found, solved)) => {
                passed += 1;
                println!("  seed {}: operator at episode {found}, impasse-free at {solved}", o.seed);
            }
            None => println!("  seed {}: no door-clearing operator followed by a plan", o.seed),
        }
    }
    ensure!(passed >= 7, "{passed}/10 seeds");
    ensure!(took < Duration::from_secs(600), "took {took:.1?}");
    Ok(format!("{passed}/10 seeds on 7x5 ({took:.1?})"))
}

fn transfer(outcomes: &[SeedOutcome], dir: &std::path::Path) -> Check {
    let started = Instant::now();
    let mut cfg = reduced(vec![2], vec![20_000], outcomes.iter().map(|o| o.seed).collect());
    cfg.out_dir = dir.to_path_buf();
    write_outputs(&cfg, outcomes).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for o in outcomes.iter().filter(|o| discovery(o).is_some()) {
        let mut p3 = reduced(vec![3], vec![10_000], vec![o.seed]);
        p3.load_operators = Some(dir.join(format!("operators-seed{}.owpddl", o.seed)));
        let run = run_seeds(&p3).map_err(|e| e.to_string())?;
        let learn = run[0].learn_calls_in(3);
        let impasses = run[0].rows.iter().filter(|r| r.impasse).count();
        ensure!(learn == 0 && impasses == 0, "seed {}: {learn} learn calls, {impasses} impasses", o.seed);
        checked += 1;
    }
    within(
        started,
        Duration::from_secs(300),
        format!("{checked} seeds x 10000 puzzle-3 episodes, 0 learn calls"),
    )
}

fn genprecon_fixtures() -> Check {
    let started = Instant::now();
    let fs: FluentSet = (0..NF).map(fluent).collect();
    let vocab = Vocabulary::new(&fs);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..100 {
        let f = random_precon_fixture(&mut rng);
        let index = ValueIndex::from_values(f.visited.iter().map(|(s, v)| (vocab.encode(&to_pfs(s)).unwrap(), *v)));
        let seeds: Vec<_> = f.seeds.iter().map(to_pfs).collect();
        let b = rng.gen_range(0..12);
        let small = gen_precon(&index, &vocab, &seeds, f.tau, b);
        let large = gen_precon(&index, &vocab, &seeds, f.tau, b + rng.gen_range(0..12));
        ensure!(large.starts_with(&small), "fixture {i}: budget monotonicity");
        for c in &large {
            let a = from_pfs(&c.literals);
            ensure!(f.seeds.iter().any(|s| subset(&a, s)), "fixture {i}: candidate outside every seed");
            ensure!(f.value(&a).0 > f.tau, "fixture {i}: candidate below tau");
        }
        let zero: Vec<Arr> = gen_precon(&index, &vocab, &seeds, f.tau, 0).iter().map(|c| from_pfs(&c.literals)).collect();
        let mut want: Vec<Arr> = Vec::new();
        for s in &f.seeds {
            if f.value(s).0 > f.tau && !want.contains(s) {
                want.push(*s);
            }
        }
        ensure!(zero == want, "fixture {i}: budget 0 gave {zero:?}, want {want:?}");
    }
    within(started, Duration::from_secs(60), "100 fixtures".into())
}

fn precondition_trend() -> Check {
    let started = Instant::now();
    let mut cfg = reduced(vec![2], vec![5000], vec![0, 1, 2]);
    cfg.defer_operators = true;
    cfg.log_every = 50;
    let outcomes = run_seeds(&cfg).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for o in &outcomes {
        let log = &o.precon_log.entries;
        ensure!(!log.is_empty(), "seed {}: nothing logged", o.seed);
        ensure!(o.discovered.is_empty(), "seed {}: installed despite deferral", o.seed);
        // minimum precondition count over what was logged by each checkpoint
        let mut by_episode: BTreeMap<u64, usize> = BTreeMap::new();
        for e in log {
            let m = by_episode.entry(e.episode).or_insert(usize::MAX);
            *m = (*m).min(e.preconditions.len());
        }
        let mut best = usize::MAX;
        let mut series = Vec::new();
        for t in (50..=5000).step_by(50) {
            if let Some(m) = by_episode.get(&t) {
                best = best.min(*m);
            }
            if best != usize::MAX {
                series.push(best);
            }
        }
        ensure!(series.windows(2).all(|w| w[1] <= w[0]), "seed {}: minimum increased", o.seed);
        for (i, e) in log.iter().enumerate() {
            for earlier in &log[..i] {
                ensure!(
                    earlier.learner != e.learner || !earlier.preconditions.is_subset_of(&e.preconditions),
                    "seed {}: entry {} specializes entry {}",
                    o.seed,
                    e.op_id,
                    earlier.op_id
                );
            }
        }
        let dominations = log
            .iter()
            .filter_map(|e| e.dominated_by.map(|d| (e, &log[d])))
            .inspect(|(e, d)| assert!(d.preconditions.is_subset_of(&e.preconditions) && d.episode >= e.episode))
            .count();
        ensure!(dominations > 0, "seed {}: no domination among {} entries", o.seed, log.len());
        summary.push(format!("seed {}: {} logged, {dominations} dominated, min {}", o.seed, log.len(), best));
    }
    within(started, Duration::from_secs(1800), summary.join("; "))
}

fn rl_numerics() -> Check {
    let mut l = TabularLearner::new(0.1, 0.99, 2, None);
    l.update(5, 0, 4.0, 9, true);
    let q0 = l.q(5, 0);
    l.update(6, 1, 7.0, 9, true);
    let next = l.q(6, 1);
    l.update(5, 0, 1.0, 6, false);
    ensure!(l.q(5, 0) == q0 + 0.1 * (1.0 + 0.99 * next - q0), "q update differs from formula");

    let chain = Chain { n: 8 };
    let oracle = chain.value_iteration(0.99);
    let mut l = TabularLearner::new(0.1, 0.99, 2, None);
    for _ in 0..3000 {
        for s in 0..chain.n - 1 {
            for a in 0..2 {
                let (next, r, done) = chain.step(s, a);
                l.update(s, a, r, next, done);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for s in 0..chain.n - 1 {
        for a in 0..2 {
            worst = worst.max((l.q(s, a) - oracle[s as usize][a]).abs());
        }
    }
    ensure!(worst < 1e-3, "chain error {worst}");

    let e = EpsSchedule::new(0.9, 0.05, 10_000);
    let (e0, en, einf) = (e.epsilon(0), e.epsilon(10_000), e.epsilon(10_000_000));
    ensure!((e0 - 0.9).abs() < 1e-12 && (en - 0.0585).abs() < 1e-12 && (einf - 0.05).abs() < 1e-12,
        "epsilon {e0} {en} {einf}");
    Ok(format!("chain max error {worst:.1e}, eps(0)={e0}, eps(N)={en:.4}"))
}

fn determinism() -> Check {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for mode in [RunMode::Spotter, RunMode::Vql, RunMode::Hlaql, RunMode::Hlalql] {
        let mut dirs: Vec<PathBuf> = Vec::new();
        for (run, par) in [Mode::Sequential, Mode::Parallel, Mode::Parallel].into_iter().enumerate() {
            let mut cfg = reduced(vec![1, 2], vec![200, 1500], vec![3, 4]);
            cfg.mode = mode;
            cfg.par = par;
            cfg.out_dir = tmp.path().join(format!("{mode:?}-{run}"));
            write_outputs(&cfg, &run_seeds(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            dirs.push(cfg.out_dir);
        }
        let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            let a = fs::read(dirs[0].join(&name)).unwrap();
            for d in &dirs[1..] {
                ensure!(fs::read(d.join(&name)).ok() == Some(a.clone()), "{mode:?}: {name:?} differs");
            }
            files += 1;
        }
    }
    within(started, Duration::from_secs(300), format!("{files} files identical across 3 runs per mode"))
}

fn run(n: usize, f: impl FnOnce() -> Check) -> bool {
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(msg) => {
            println!("criterion {n}: PASS {msg}");
            true
        }
        Err(msg) => {
            println!("criterion {n}: FAIL {msg}");
            false
        }
    }
}

fn main() -> ExitCode {
    // under `cargo test -- <filter>` skip unless the filter names this suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }

    let mut ok = true;
    ok &= run(1, symbolic_oracle);
    ok &= run(2, puzzle1_plans);
    ok &= run(3, puzzle2_has_no_plan);

    let started = Instant::now();
    let discovery_runs = run_seeds(&reduced(vec![2], vec![20_000], (0..10).collect()));
    let took = started.elapsed();
    match discovery_runs {
        Ok(outcomes) => {
            ok &= run(4, || operator_discovery(&outcomes, took));
            let dir = tempfile::tempdir().expect("temp dir");
            ok &= run(5, || transfer(&outcomes, dir.path()));
        }
        Err(e) => {
            println!("criterion 4: FAIL {e}");
            println!("criterion 5: FAIL depends on criterion 4");
            ok = false;
        }
    }

    ok &= run(6, genprecon_fixtures);
    ok &= run(7, precondition_trend);
    ok &= run(8, rl_numerics);
    ok &= run(9, determinism);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
