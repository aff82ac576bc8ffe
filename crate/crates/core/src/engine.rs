//! The plan–execute–explore loop: plan with the symbolic model, execute
//! operators through executors, and when planning fails explore with
//! Q-learning until a plannable state turns up. Plans found that way are
//! regressed into subgoals, each with its own learner, and learners whose
//! values clear the threshold become new operators.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::executors::{execute, hand_executor, make_executor, ExecError, Executor};
use crate::genprecon::{gen_precon_bits, PreconditionCandidate, ValueIndex};
use crate::gridworld::{
    base_task, reset_layout, Bits, EnvConfig, EnvError, GridState, Layout, PrimitiveAction,
};
use crate::owpddl::OwpddlError;
use crate::par::{self, Mode};
use crate::rl::{EpsSchedule, QTable, TabularLearner};
use crate::symbolic::{
    regress_unchecked, FluentSet, Operator, PartialFluentState, Plan, StripsTask, SymbolicError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] OwpddlError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error("no puzzle has been started")]
    NoPuzzle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpotterConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub eps_max: f64,
    pub eps_min: f64,
    /// Queue nodes gen-precon may expand after each exploration phase.
    pub precon_budget: usize,
    /// Log candidates instead of installing them.
    pub defer_operators: bool,
    /// When false an impasse ends the episode instead of exploring.
    pub learning: bool,
    pub mode: Mode,
    /// Learner count from which per-step training fans out in parallel.
    pub fanout_threshold: usize,
}

impl Default for SpotterConfig {
    fn default() -> Self {
        SpotterConfig {
            alpha: 0.1,
            gamma: 0.99,
            tau: 0.9,
            eps_max: 0.9,
            eps_min: 0.05,
            precon_budget: 16,
            defer_operators: false,
            learning: true,
            mode: Mode::default(),
            fanout_threshold: 16,
        }
    }
}

/// A learner together with its subgoal encoded for the current puzzle.
#[derive(Clone, Debug)]
pub struct LearnerSlot {
    pub id: usize,
    pub learner: TabularLearner,
    goal_bits: Option<Bits>,
}

impl LearnerSlot {
    fn train(&mut self, s: u64, a: usize, s_next: u64, sigma: Bits, done: bool) {
        match self.goal_bits {
            Some(g) => {
                let hit = g.is_subset_of(sigma);
                self.learner.update(s, a, hit as u8 as f64, s_next, hit);
            }
            None if self.learner.subgoal.is_none() => {
                self.learner.update(s, a, done as u8 as f64, s_next, done);
            }
            // subgoal not expressible in this puzzle
            None => {}
        }
    }
}

/// An operator found by exploration, with where it came from.
#[derive(Clone, Debug)]
pub struct Discovered {
    pub operator: Operator,
    pub learner: Option<usize>,
    pub q: Arc<QTable>,
    pub episode: u64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeReport {
    pub episode: u64,
    pub reward: f64,
    pub steps: u32,
    pub impasse: bool,
    pub learn_calls: u32,
    pub operators_known: usize,
    /// Operator names of the first plan executed, if any.
    pub first_plan: Vec<Arc<str>>,
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub impasse: bool,
    pub episodes_used: u64,
    pub operators_added: Vec<(Operator, u64)>,
    pub episodes: Vec<EpisodeReport>,
}

struct SearchEntry {
    plan: Option<Plan>,
    visited: Vec<Bits>,
}

struct Puzzle {
    layout: Arc<Layout>,
    task: StripsTask,
    goal: Bits,
    executors: HashMap<Arc<str>, Executor>,
    schedule: EpsSchedule,
    episode: u64,
}

pub struct Engine {
    pub config: SpotterConfig,
    env_rng: ChaCha8Rng,
    explore_rng: ChaCha8Rng,
    learners: Vec<LearnerSlot>,
    learner_index: HashMap<PartialFluentState, usize>,
    discovered: Vec<Discovered>,
    puzzle: Option<Puzzle>,
    sigma_reach: Vec<Bits>,
    reach_set: HashSet<Bits>,
    sigma_plan: Vec<Bits>,
    plan_set: HashSet<Bits>,
    searches: HashMap<Bits, Arc<SearchEntry>>,
    reach_added: HashSet<Bits>,
    total_learn_calls: u64,
}

impl Engine {
    /// Splits `seed` into independent streams for resets and exploration.
    pub fn new(config: SpotterConfig, seed: u64) -> Self {
        let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
        env_rng.set_stream(1);
        let mut explore_rng = ChaCha8Rng::seed_from_u64(seed);
        explore_rng.set_stream(2);
        let explorer = TabularLearner::new(config.alpha, config.gamma, PrimitiveAction::COUNT, None);
        Engine {
            config,
            env_rng,
            explore_rng,
            learners: vec![LearnerSlot {
                id: 0,
                learner: explorer,
                goal_bits: None,
            }],
            learner_index: HashMap::new(),
            discovered: Vec::new(),
            puzzle: None,
            sigma_reach: Vec::new(),
            reach_set: HashSet::new(),
            sigma_plan: Vec::new(),
            plan_set: HashSet::new(),
            searches: HashMap::new(),
            reach_added: HashSet::new(),
            total_learn_calls: 0,
        }
    }

    /// Switches to a new puzzle, keeping learners and discovered operators.
    pub fn begin_puzzle(&mut self, env: EnvConfig, episodes: u64) -> Result<(), EngineError> {
        let layout = Layout::new(env)?;
        let task = base_task(env.puzzle)?;
        let goal = layout
            .vocabulary
            .encode(&task.goal)
            .expect("goal fluents belong to the vocabulary");
        let mut executors = HashMap::new();
        for op in task.operators() {
            executors.insert(
                op.name.clone(),
                hand_executor(op, &layout.vocabulary, env.max_steps)?,
            );
        }
        for slot in &mut self.learners {
            slot.goal_bits = slot
                .learner
                .subgoal
                .as_ref()
                .and_then(|g| layout.vocabulary.encode(g));
        }
        self.puzzle = Some(Puzzle {
            layout,
            task,
            goal,
            executors,
            schedule: EpsSchedule::new(self.config.eps_max, self.config.eps_min, episodes),
            episode: 0,
        });
        self.sigma_reach.clear();
        self.reach_set.clear();
        self.sigma_plan.clear();
        self.plan_set.clear();
        self.reach_added.clear();
        self.searches.clear();
        let carried: Vec<Discovered> = self.discovered.clone();
        for d in carried {
            // operators over fluents this puzzle lacks stay dormant
            match self.add_to_task(&d.operator, d.q.clone()) {
                Ok(_) | Err(EngineError::Exec(ExecError::Vocabulary(_))) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn puzzle(&self) -> &Puzzle {
        self.puzzle.as_ref().expect("begin_puzzle must be called first")
    }

    pub fn layout(&self) -> Option<&Arc<Layout>> {
        self.puzzle.as_ref().map(|p| &p.layout)
    }

    pub fn task(&self) -> Option<&StripsTask> {
        self.puzzle.as_ref().map(|p| &p.task)
    }

    pub fn learners(&self) -> &[LearnerSlot] {
        &self.learners
    }

    pub fn discovered(&self) -> &[Discovered] {
        &self.discovered
    }

    pub fn total_learn_calls(&self) -> u64 {
        self.total_learn_calls
    }

    pub fn sigma_reach(&self) -> Vec<PartialFluentState> {
        let v = &self.puzzle().layout.vocabulary;
        self.sigma_reach.iter().map(|b| v.decode(*b)).collect()
    }

    pub fn sigma_plan(&self) -> Vec<PartialFluentState> {
        let v = &self.puzzle().layout.vocabulary;
        self.sigma_plan.iter().map(|b| v.decode(*b)).collect()
    }

    /// Adds a learner for `subgoal` unless one exists; returns its id.
    pub fn spawn_learner(&mut self, subgoal: PartialFluentState) -> usize {
        if let Some(&id) = self.learner_index.get(&subgoal) {
            return id;
        }
        let id = self.learners.len();
        let goal_bits = self
            .puzzle
            .as_ref()
            .and_then(|p| p.layout.vocabulary.encode(&subgoal));
        self.learner_index.insert(subgoal.clone(), id);
        self.learners.push(LearnerSlot {
            id,
            learner: TabularLearner::new(
                self.config.alpha,
                self.config.gamma,
                PrimitiveAction::COUNT,
                Some(subgoal),
            ),
            goal_bits,
        });
        debug!("spawned learner {id}");
        id
    }

    fn add_to_task(&mut self, op: &Operator, q: Arc<QTable>) -> Result<bool, EngineError> {
        let p = self.puzzle.as_mut().ok_or(EngineError::NoPuzzle)?;
        if !op.static_fluents.is_empty() {
            return Err(ExecError::StaticFluentsUnsupported(op.name.to_string()).into());
        }
        let x = make_executor(q, op, &p.layout.vocabulary, p.layout.config.max_steps)?;
        if !p.task.add_operator(op.clone()) {
            return Ok(false);
        }
        p.executors.insert(op.name.clone(), x);
        self.searches.clear();
        self.reach_added.clear();
        Ok(true)
    }

    /// Installs a discovered operator driven by `q` (e.g. loaded from a
    /// dump). Returns false for duplicates.
    pub fn install_operator(
        &mut self,
        op: Operator,
        q: Arc<QTable>,
        learner: Option<usize>,
        value: f64,
    ) -> Result<bool, EngineError> {
        if !self.add_to_task(&op, q.clone())? {
            return Ok(false);
        }
        let episode = self.puzzle.as_ref().map_or(0, |p| p.episode);
        self.discovered.push(Discovered {
            operator: op,
            learner,
            q,
            episode,
            value,
        });
        Ok(true)
    }

    fn search(&mut self, sigma: Bits) -> Arc<SearchEntry> {
        if let Some(e) = self.searches.get(&sigma) {
            return e.clone();
        }
        let p = self.puzzle();
        let v = &p.layout.vocabulary;
        let outcome = p.task.owfs(&v.decode(sigma)).expect("search stays within the node limit");
        let entry = Arc::new(SearchEntry {
            visited: outcome
                .visited
                .iter()
                .map(|s| v.encode(s).expect("search stays in the vocabulary"))
                .collect(),
            plan: outcome.plan,
        });
        self.searches.insert(sigma, entry.clone());
        entry
    }

    fn add_plan_state(&mut self, b: Bits) {
        if self.plan_set.insert(b) {
            self.sigma_plan.push(b);
        }
    }

    fn plannable(&self, sigma: Bits) -> bool {
        self.sigma_plan.iter().any(|m| m.is_subset_of(sigma))
    }

    /// One episode: reset, then alternate planning/execution and
    /// exploration until the environment ends the episode.
    pub fn run_episode(&mut self) -> EpisodeReport {
        let layout = self.puzzle().layout.clone();
        let mut s = reset_layout(&layout, &mut self.env_rng);
        let goal = self.puzzle().goal;
        let mut reward = 0.0;
        let mut impasse = false;
        let mut learn_calls = 0;
        let mut learning = false;
        let mut first_plan = Vec::new();

        while !s.is_terminal() {
            if learning {
                impasse = true;
                learn_calls += 1;
                self.total_learn_calls += 1;
                if !self.config.learning {
                    break;
                }
                reward += self.learn(&mut s);
                learning = false;
                continue;
            }
            let sigma = s.detect_bits();
            if goal.is_subset_of(sigma) {
                break;
            }
            let entry = self.search(sigma);
            if self.reach_added.insert(sigma) {
                for b in &entry.visited {
                    if self.reach_set.insert(*b) {
                        self.sigma_reach.push(*b);
                    }
                }
            }
            let Some(plan) = &entry.plan else {
                learning = true;
                continue;
            };
            if first_plan.is_empty() {
                first_plan = plan.steps.iter().map(|o| o.name.clone()).collect();
            }
            let v = &layout.vocabulary;
            for st in &plan.states {
                self.add_plan_state(v.encode(st).expect("plan states stay in the vocabulary"));
            }
            let p = self.puzzle();
            for (i, op) in plan.steps.iter().enumerate() {
                if i > 0 && !v.encode(&op.pre).is_some_and(|pre| pre.is_subset_of(s.detect_bits())) {
                    debug!("precondition of {} failed", op.name);
                    learning = true;
                    break;
                }
                let r = execute(&p.executors[&op.name], &s);
                reward += r.total_reward();
                s = r.final_state;
                if r.env_done {
                    break;
                }
            }
            if !learning && !s.is_terminal() && !goal.is_subset_of(s.detect_bits()) {
                learning = true;
            }
        }

        let p = self.puzzle.as_mut().expect("puzzle");
        let report = EpisodeReport {
            episode: p.episode,
            reward,
            steps: s.steps,
            impasse,
            learn_calls,
            operators_known: p.task.operators().len(),
            first_plan,
        };
        p.episode += 1;
        report
    }

    /// Explores from `s` until a plannable state (or the episode end), then
    /// turns learner values into operators. Returns the reward collected.
    fn learn(&mut self, s: &mut GridState) -> f64 {
        let (eps, goal_state) = {
            let p = self.puzzle();
            (p.schedule.epsilon(p.episode), p.task.goal.clone())
        };
        let mut reward = 0.0;
        while !s.is_terminal() {
            let key = s.key();
            let a = self.learners[0]
                .learner
                .select_action(key, eps, &mut self.explore_rng);
            let (next, r) = s.stepped(PrimitiveAction::from_index(a));
            reward += r.reward;
            let sigma = next.detect_bits();
            let mut done = self.plannable(sigma);
            if !done {
                let entry = self.search(sigma);
                if let Some(plan) = &entry.plan {
                    let mut sg = goal_state.clone();
                    for op in plan.steps.iter().rev() {
                        sg = regress_unchecked(&sg, op)
                            .expect("regression along an executed plan stays consistent");
                        let b = self
                            .puzzle()
                            .layout
                            .vocabulary
                            .encode(&sg)
                            .expect("subgoal in vocabulary");
                        self.add_plan_state(b);
                        self.spawn_learner(sg.clone());
                    }
                    done = true;
                }
            }
            let next_key = next.key();
            let mode = if self.learners.len() >= self.config.fanout_threshold {
                self.config.mode
            } else {
                Mode::Sequential
            };
            par::for_each_mut(mode, &mut self.learners, |l| {
                l.train(key, a, next_key, sigma, done)
            });
            *s = next;
            if done {
                break;
            }
        }
        self.after_learn();
        reward
    }

    /// Precondition candidates per subgoal learner against the current
    /// tables, as `(learner id, candidates)`.
    pub fn candidates(&self, budget: usize) -> Vec<(usize, Vec<PreconditionCandidate>)> {
        let p = self.puzzle();
        let layout = &p.layout;
        let tau = self.config.tau;
        let seeds = &self.sigma_reach;
        let slots: Vec<&LearnerSlot> = self
            .learners
            .iter()
            .filter(|l| l.goal_bits.is_some())
            .collect();
        par::map(self.config.mode, &slots, |slot| {
            let table = slot.learner.table();
            let found = if table.states().any(|k| table.greedy_value(k) > tau) {
                let index = ValueIndex::from_table(table, |k| GridState::from_key(layout, k).detect_bits());
                gen_precon_bits(&index, seeds, tau, budget)
            } else {
                Vec::new()
            };
            let cands = found
                .into_iter()
                .map(|(b, avg_value, support)| PreconditionCandidate {
                    literals: layout.vocabulary.decode(b),
                    avg_value,
                    support,
                })
                .collect();
            (slot.id, cands)
        })
    }

    fn after_learn(&mut self) {
        // learned executors follow their learner's latest table
        let refresh: Vec<(usize, Operator)> = self
            .discovered
            .iter()
            .filter_map(|d| d.learner.map(|l| (l, d.operator.clone())))
            .collect();
        for (l, op) in refresh {
            let q = self.learners[l].learner.snapshot();
            let p = self.puzzle.as_mut().expect("puzzle");
            if let Ok(x) = make_executor(q.clone(), &op, &p.layout.vocabulary, p.layout.config.max_steps) {
                p.executors.insert(op.name.clone(), x);
            }
            if let Some(d) = self.discovered.iter_mut().find(|d| d.operator.name == op.name) {
                d.q = q;
            }
        }
        if self.config.defer_operators {
            return;
        }
        for (id, cands) in self.candidates(self.config.precon_budget) {
            let sg = self.learners[id].learner.subgoal.clone().expect("subgoal learner");
            let n = self.discovered.iter().filter(|d| d.learner == Some(id)).count();
            for c in cands {
                let name = format!("learned-{id}-{n}");
                let Ok(op) = Operator::new(name, c.literals, sg.clone(), FluentSet::new()) else {
                    continue;
                };
                let q = self.learners[id].learner.snapshot();
                match self.install_operator(op, q, Some(id), c.avg_value) {
                    Ok(true) => {
                        info!(
                            "installed operator from learner {id} ({} preconditions, value {:.3})",
                            self.discovered.last().map_or(0, |d| d.operator.pre.len()),
                            c.avg_value
                        );
                        break;
                    }
                    Ok(false) => continue,
                    Err(e) => debug!("skipping candidate: {e}"),
                }
            }
        }
    }

    /// Episodes until one finishes without an impasse, at most `max_episodes`.
    pub fn spotter(&mut self, max_episodes: u64) -> RunReport {
        let mut report = RunReport {
            impasse: true,
            ..RunReport::default()
        };
        let before = self.discovered.len();
        for _ in 0..max_episodes {
            let ep = self.run_episode();
            let impasse = ep.impasse;
            report.episodes.push(ep);
            report.episodes_used += 1;
            if !impasse {
                report.impasse = false;
                break;
            }
        }
        report.operators_added = self.discovered[before..]
            .iter()
            .map(|d| (d.operator.clone(), d.episode))
            .collect();
        report
    }
}
