//! Experiment runner: puzzle sequences per seed, baselines, metrics CSVs,
//! operator dumps and precondition logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{Discovered, Engine, EngineError, SpotterConfig};
use crate::executors::{execute, hand_executor, Executor};
use crate::genprecon::PreconditionCandidate;
use crate::gridworld::{base_task, reset_layout, EnvConfig, Layout, PrimitiveAction};
use crate::owpddl::{parse_operator_dump, serialize_discovered, OperatorMeta, OwpddlError};
use crate::par::{self, Mode};
use crate::rl::{EpsSchedule, RlError, TabularLearner};
use crate::symbolic::{Fluent, PartialFluentState};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Dump { path: PathBuf, source: OwpddlError },
    #[error("{path}: {source}")]
    Snapshot { path: PathBuf, source: RlError },
    #[error("{path}: {msg}")]
    Metrics { path: PathBuf, msg: String },
    #[error("no metrics to summarize")]
    EmptyInput,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Spotter,
    Vql,
    Hlaql,
    Hlalql,
}

impl FromStr for RunMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spotter" => Ok(RunMode::Spotter),
            "vql" => Ok(RunMode::Vql),
            "hlaql" => Ok(RunMode::Hlaql),
            "hlalql" => Ok(RunMode::Hlalql),
            other => Err(HarnessError::Usage(format!(
                "unknown mode `{other}` (expected spotter, vql, hlaql or hlalql)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub mode: RunMode,
    pub puzzles: Vec<u8>,
    pub episodes: Vec<u64>,
    pub width: u8,
    pub height: u8,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub eps_max: f64,
    pub eps_min: f64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub defer_operators: bool,
    pub log_every: u64,
    pub precon_budget: usize,
    /// Node budget for the periodic precondition log.
    pub log_budget: usize,
    pub load_operators: Option<PathBuf>,
    pub render_ascii: bool,
    /// Real timings make metrics files differ between runs, so they are
    /// opt-in.
    pub record_wall_time: bool,
    pub par: Mode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: RunMode::Spotter,
            puzzles: vec![1, 2, 3],
            episodes: vec![10_000, 20_000, 10_000],
            width: crate::gridworld::DEFAULT_WIDTH,
            height: crate::gridworld::DEFAULT_HEIGHT,
            alpha: 0.1,
            gamma: 0.99,
            tau: 0.9,
            eps_max: 0.9,
            eps_min: 0.05,
            seeds: (0..10).collect(),
            out_dir: PathBuf::from("out"),
            defer_operators: false,
            log_every: 50,
            precon_budget: 16,
            log_budget: 256,
            load_operators: None,
            render_ascii: false,
            record_wall_time: false,
            par: Mode::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let usage = |m: &str| Err(HarnessError::Usage(m.to_string()));
        if self.puzzles.is_empty() || self.puzzles.len() != self.episodes.len() {
            return usage("--puzzles and --episodes need the same, non-zero length");
        }
        if self.puzzles.iter().any(|p| !(1..=3).contains(p)) {
            return usage("puzzles are numbered 1 to 3");
        }
        if self.episodes.contains(&0) {
            return usage("episode counts must be at least 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return usage("tau must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eps_min) || !(0.0..=1.0).contains(&self.eps_max) || self.eps_min > self.eps_max {
            return usage("--eps expects MAX:MIN with 0 <= MIN <= MAX <= 1");
        }
        if self.seeds.is_empty() {
            return usage("at least one seed is required");
        }
        if self.defer_operators && self.log_every == 0 {
            return usage("--log-every must be positive");
        }
        for p in &self.puzzles {
            EnvConfig::new(*p, self.width, self.height, 0)
                .validate()
                .map_err(|e| HarnessError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    fn spotter_config(&self) -> SpotterConfig {
        SpotterConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            tau: self.tau,
            eps_max: self.eps_max,
            eps_min: self.eps_min,
            precon_budget: self.precon_budget,
            defer_operators: self.defer_operators,
            learning: true,
            mode: Mode::Sequential,
            fanout_threshold: usize::MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub puzzle: u8,
    pub episode: u64,
    pub reward: f64,
    pub steps: u32,
    pub impasse: bool,
    pub operators_known: usize,
    pub learn_calls: u32,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "seed,puzzle,episode,reward,steps,impasse,operators_known,wall_ms";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 32);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.seed, r.puzzle, r.episode, r.reward, r.steps, r.impasse as u8, r.operators_known, r.wall_ms
        );
    }
    out
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let bad = |line: usize, msg: &str| HarnessError::Metrics {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(bad(1, "unexpected header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(i + 1, "expected 8 fields"));
        }
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        rows.push(MetricsRow {
            seed: num(0)? as u64,
            puzzle: num(1)? as u8,
            episode: num(2)? as u64,
            reward: num(3)?,
            steps: num(4)? as u32,
            impasse: num(5)? != 0.0,
            operators_known: num(6)? as usize,
            learn_calls: 0,
            wall_ms: num(7)? as u64,
        });
    }
    Ok(rows)
}

/// One logged precondition set from the deferred-installation experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct PreconLogEntry {
    pub op_id: usize,
    pub episode: u64,
    pub learner: usize,
    pub preconditions: PartialFluentState,
    pub value: f64,
    pub dominated_by: Option<usize>,
}

/// Keeps new candidates that are not specializations of preconditions
/// already logged for the same learner.
#[derive(Clone, Debug, Default)]
pub struct PreconLog {
    pub entries: Vec<PreconLogEntry>,
}

impl PreconLog {
    pub fn record(&mut self, episode: u64, learner: usize, cands: &[PreconditionCandidate]) -> usize {
        let mut added = 0;
        for c in cands {
            let specializes = self
                .entries
                .iter()
                .any(|e| e.learner == learner && e.preconditions.is_subset_of(&c.literals));
            if specializes {
                continue;
            }
            let op_id = self.entries.len();
            for e in self.entries.iter_mut() {
                if e.learner == learner && e.dominated_by.is_none() && c.literals.is_subset_of(&e.preconditions) {
                    e.dominated_by = Some(op_id);
                }
            }
            self.entries.push(PreconLogEntry {
                op_id,
                episode,
                learner,
                preconditions: c.literals.clone(),
                value: c.avg_value,
                dominated_by: None,
            });
            added += 1;
        }
        added
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("op_id,episode,learner,preconds,dominated_by\n");
        for e in &self.entries {
            let dom = e.dominated_by.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", e.op_id, e.episode, e.learner, e.preconditions.len(), dom);
        }
        out
    }

    /// Smallest precondition count logged up to each entry.
    pub fn running_min(&self) -> Vec<usize> {
        let mut m = usize::MAX;
        self.entries
            .iter()
            .map(|e| {
                m = m.min(e.preconditions.len());
                m
            })
            .collect()
    }
}

/// Everything one seed produced.
#[derive(Clone, Debug, Default)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub discovered: Vec<Discovered>,
    pub learner_tables: BTreeMap<usize, TabularLearner>,
    pub dump_fluents: Option<crate::symbolic::FluentSet>,
    pub precon_log: PreconLog,
}

impl SeedOutcome {
    pub fn learn_calls_in(&self, puzzle: u8) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.puzzle == puzzle)
            .map(|r| r.learn_calls as u64)
            .sum()
    }
}

/// Reads a dump plus the q-table files next to it and installs every
/// operator that fits the engine's current puzzle.
pub fn load_operators(engine: &mut Engine, path: &Path) -> Result<usize, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let layout = engine.layout().ok_or(EngineError::NoPuzzle)?.clone();
    let fluents = layout.vocabulary.fluent_set();
    let ops = parse_operator_dump(&text, &fluents).map_err(|source| HarnessError::Dump {
        path: path.to_path_buf(),
        source,
    })?;
    let mut installed = 0;
    for d in ops {
        let Some(meta) = d.meta else {
            warn!("{}: skipping {} without discovery metadata", path.display(), d.operator.name);
            continue;
        };
        let learner = meta.learner.unwrap_or(0);
        let qpath = snapshot_path(path, learner);
        let qtext = fs::read_to_string(&qpath).map_err(io_err(&qpath))?;
        let table = TabularLearner::from_text(&qtext).map_err(|source| HarnessError::Snapshot {
            path: qpath.clone(),
            source,
        })?;
        if engine.install_operator(d.operator, table.snapshot(), None, meta.value)? {
            installed += 1;
        }
    }
    info!("loaded {installed} operators from {}", path.display());
    Ok(installed)
}

pub fn snapshot_path(dump: &Path, learner: usize) -> PathBuf {
    let stem = dump.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dump.with_file_name(format!("{stem}.learner-{learner}.q"))
}

fn run_spotter_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome, HarnessError> {
    let mut engine = Engine::new(config.spotter_config(), seed);
    let mut out = SeedOutcome {
        seed,
        ..SeedOutcome::default()
    };
    for (&puzzle, &episodes) in config.puzzles.iter().zip(&config.episodes) {
        engine.begin_puzzle(EnvConfig::new(puzzle, config.width, config.height, seed), episodes)?;
        if let Some(path) = &config.load_operators {
            match load_operators(&mut engine, path) {
                Ok(_) => {}
                // a dump over another puzzle's fluents does not apply here
                Err(HarnessError::Dump { source: OwpddlError::Semantic(msg), .. }) => {
                    info!("puzzle {puzzle}: dump not applicable ({msg})")
                }
                Err(e) => return Err(e),
            }
        }
        for ep in 0..episodes {
            let started = Instant::now();
            let r = engine.run_episode();
            if config.render_ascii && ep == 0 {
                if let Some(layout) = engine.layout() {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    info!("seed {seed} puzzle {puzzle}:\n{}", reset_layout(layout, &mut rng).render_ascii());
                }
            }
            out.rows.push(MetricsRow {
                seed,
                puzzle,
                episode: ep,
                reward: r.reward,
                steps: r.steps,
                impasse: r.impasse,
                operators_known: r.operators_known,
                learn_calls: r.learn_calls,
                wall_ms: if config.record_wall_time {
                    started.elapsed().as_millis() as u64
                } else {
                    0
                },
            });
            if config.defer_operators && (ep + 1) % config.log_every == 0 {
                for (learner, cands) in engine.candidates(config.log_budget) {
                    out.precon_log.record(ep + 1, learner, &cands);
                }
            }
        }
        if !engine.discovered().is_empty() {
            out.dump_fluents = engine.layout().map(|l| l.vocabulary.fluent_set());
        }
    }
    out.discovered = engine.discovered().to_vec();
    for d in &out.discovered {
        if let Some(l) = d.learner {
            out.learner_tables
                .insert(l, engine.learners()[l].learner.clone());
        }
    }
    Ok(out)
}

/// The base operators of the hardest puzzle, fixed so baseline q-tables
/// keep their shape across puzzles.
fn high_level_actions() -> Vec<Arc<str>> {
    base_task(3)
        .expect("built-in model parses")
        .operators()
        .iter()
        .map(|o| o.name.clone())
        .collect()
}

fn run_baseline_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome, HarnessError> {
    let hlas = if config.mode == RunMode::Vql {
        Vec::new()
    } else {
        high_level_actions()
    };
    let n_actions = PrimitiveAction::COUNT + hlas.len();
    let mut learner = TabularLearner::new(config.alpha, config.gamma, n_actions, None);
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut out = SeedOutcome {
        seed,
        ..SeedOutcome::default()
    };
    for (&puzzle, &episodes) in config.puzzles.iter().zip(&config.episodes) {
        let env = EnvConfig::new(puzzle, config.width, config.height, seed);
        let layout = Layout::new(env).map_err(EngineError::from)?;
        let task = base_task(puzzle).map_err(EngineError::from)?;
        let executors: Vec<Option<Executor>> = hlas
            .iter()
            .map(|name| {
                task.operator(name)
                    .and_then(|op| hand_executor(op, &layout.vocabulary, env.max_steps).ok())
            })
            .collect();
        let schedule = EpsSchedule::new(config.eps_max, config.eps_min, episodes);
        for ep in 0..episodes {
            let started = Instant::now();
            let eps = schedule.epsilon(ep);
            let mut s = reset_layout(&layout, &mut env_rng);
            let mut reward = 0.0;
            while !s.is_terminal() {
                let key = s.key();
                let a = learner.select_action(key, eps, &mut rng);
                if a < PrimitiveAction::COUNT {
                    let (next, r) = s.stepped(PrimitiveAction::from_index(a));
                    reward += r.reward;
                    learner.update(key, a, r.reward, next.key(), next.goal_reached());
                    s = next;
                    continue;
                }
                let x = executors[a - PrimitiveAction::COUNT].as_ref();
                let result = x.filter(|x| x.initiates(&s)).map(|x| execute(x, &s));
                match result {
                    Some(res) if !res.trajectory.is_empty() => {
                        let mut ret = 0.0;
                        let mut disc = 1.0;
                        for t in &res.trajectory {
                            ret += disc * t.reward;
                            disc *= config.gamma;
                            if config.mode == RunMode::Hlalql {
                                learner.update(
                                    t.state.key(),
                                    t.action.index(),
                                    t.reward,
                                    t.next.key(),
                                    t.next.goal_reached(),
                                );
                            }
                        }
                        reward += res.total_reward();
                        let k = res.trajectory.len() as u32;
                        let next = res.final_state;
                        learner.smdp_update(key, a, ret, k, next.key(), next.goal_reached());
                        s = next;
                    }
                    // unavailable executor: a wasted step
                    _ => {
                        let r = s.idle();
                        learner.update(key, a, r.reward, s.key(), false);
                    }
                }
            }
            out.rows.push(MetricsRow {
                seed,
                puzzle,
                episode: ep,
                reward,
                steps: s.steps,
                impasse: false,
                operators_known: hlas.len(),
                learn_calls: 0,
                wall_ms: if config.record_wall_time {
                    started.elapsed().as_millis() as u64
                } else {
                    0
                },
            });
        }
    }
    Ok(out)
}

/// Runs every seed (in parallel when enabled) without touching the disk.
pub fn run_seeds(config: &ExperimentConfig) -> Result<Vec<SeedOutcome>, HarnessError> {
    config.validate()?;
    let results = par::map(config.par, &config.seeds, |&seed| match config.mode {
        RunMode::Spotter => run_spotter_seed(config, seed),
        _ => run_baseline_seed(config, seed),
    });
    results.into_iter().collect()
}

/// Operator dump text for one seed's discoveries.
pub fn operator_dump(outcome: &SeedOutcome) -> String {
    let Some(fluents) = &outcome.dump_fluents else {
        return String::new();
    };
    let mut out = String::new();
    for d in &outcome.discovered {
        let meta = OperatorMeta {
            episode: d.episode,
            value: d.value,
            preconds: d.operator.pre.len(),
            learner: d.learner,
        };
        out.push_str(&serialize_discovered(&d.operator, fluents, &meta));
        out.push('\n');
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Writes per-seed metrics, dumps and logs plus the merged summary.
pub fn write_outputs(config: &ExperimentConfig, outcomes: &[SeedOutcome]) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mode = format!("{:?}", config.mode).to_lowercase();
    for o in outcomes {
        let metrics = dir.join(format!("metrics-{mode}-seed{}.csv", o.seed));
        write(&metrics, &metrics_csv(&o.rows))?;
        written.push(metrics);
        if !o.discovered.is_empty() {
            let dump = dir.join(format!("operators-seed{}.owpddl", o.seed));
            write(&dump, &operator_dump(o))?;
            for (id, table) in &o.learner_tables {
                write(&snapshot_path(&dump, *id), &table.to_text())?;
            }
            written.push(dump);
        }
        if config.defer_operators {
            let log = dir.join(format!("precon-seed{}.csv", o.seed));
            write(&log, &o.precon_log.to_csv())?;
            written.push(log);
        }
    }
    let all: Vec<MetricsRow> = outcomes.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    let summary = dir.join(format!("summary-{mode}.csv"));
    write(&summary, &summary_csv(&summarize(&all, None)?))?;
    written.push(summary);
    Ok(written)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let outcomes = run_seeds(config)?;
    write_outputs(config, &outcomes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub puzzle: u8,
    pub episode: u64,
    pub mean: f64,
    pub std: f64,
    pub normalized: Option<f64>,
}

/// Per-episode mean and population standard deviation across seeds,
/// optionally divided by `normalize_to` (e.g. the best SPOTTER mean).
pub fn summarize(rows: &[MetricsRow], normalize_to: Option<f64>) -> Result<Vec<SummaryRow>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let mut groups: BTreeMap<(usize, u64), (u8, Vec<f64>)> = BTreeMap::new();
    let mut order: Vec<u8> = Vec::new();
    for r in rows {
        let pos = match order.iter().position(|p| *p == r.puzzle) {
            Some(p) => p,
            None => {
                order.push(r.puzzle);
                order.len() - 1
            }
        };
        groups.entry((pos, r.episode)).or_insert((r.puzzle, Vec::new())).1.push(r.reward);
    }
    Ok(groups
        .into_iter()
        .map(|((_, episode), (puzzle, xs))| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            SummaryRow {
                puzzle,
                episode,
                mean,
                std: var.sqrt(),
                normalized: normalize_to.map(|m| if m > 0.0 { mean / m } else { 0.0 }),
            }
        })
        .collect())
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let with_norm = rows.iter().any(|r| r.normalized.is_some());
    let mut out = String::from("puzzle,episode,mean_reward,std_reward");
    out.push_str(if with_norm { ",normalized\n" } else { "\n" });
    for r in rows {
        let _ = write!(out, "{},{},{},{}", r.puzzle, r.episode, r.mean, r.std);
        if let Some(n) = r.normalized {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
    }
    out
}

pub fn summarize_files(paths: &[PathBuf], normalize: bool) -> Result<String, HarnessError> {
    let mut rows = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        rows.extend(parse_metrics(&text, p)?);
    }
    let plain = summarize(&rows, None)?;
    let norm = normalize.then(|| plain.iter().map(|r| r.mean).fold(0.0, f64::max));
    Ok(summary_csv(&summarize(&rows, norm)?))
}

/// `¬blocked(door)` — the effect that makes the second puzzle plannable.
pub fn clears_door(d: &Discovered) -> bool {
    d.operator.eff.contains(&Fluent::new("blocked", ["door"]).neg())
}
