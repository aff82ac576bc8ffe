//! Executors ground operators in the gridworld: an initiation test, a policy
//! and a termination condition, the latter two also seeing the state the
//! executor started from.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::gridworld::{Bits, Dir, GridState, Pos, PrimitiveAction, StepResult, Vocabulary};
use crate::rl::QTable;
use crate::symbolic::{Operator, PartialFluentState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("no hand-written executor for operator {0}")]
    UnknownOperator(String),
    #[error("operator {0} has static fluents; learned executors need an empty static set")]
    StaticFluentsUnsupported(String),
    #[error("operator {0} mentions fluents outside the puzzle vocabulary")]
    Vocabulary(String),
    #[error("q-table for operator {0} has {1} actions, expected {n}", n = PrimitiveAction::COUNT)]
    ActionCount(String, usize),
}

pub type InitiationFn = Arc<dyn Fn(&GridState) -> bool + Send + Sync>;
pub type PolicyFn = Arc<dyn Fn(&GridState, &GridState) -> PrimitiveAction + Send + Sync>;
/// Termination probability; always 0 or 1 in this deterministic world.
pub type TerminationFn = Arc<dyn Fn(&GridState, &GridState) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Executor {
    pub name: Arc<str>,
    pub initiation: InitiationFn,
    pub policy: PolicyFn,
    pub termination: TerminationFn,
    pub step_cap: u32,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor")
            .field("name", &self.name)
            .field("step_cap", &self.step_cap)
            .finish_non_exhaustive()
    }
}

impl Executor {
    pub fn initiates(&self, s: &GridState) -> bool {
        (self.initiation)(s)
    }

    pub fn terminates(&self, init: &GridState, cur: &GridState) -> bool {
        (self.termination)(init, cur) >= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: GridState,
    pub action: PrimitiveAction,
    pub reward: f64,
    pub next: GridState,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionResult {
    pub final_state: GridState,
    pub trajectory: Vec<Transition>,
    pub success: bool,
    pub env_done: bool,
}

impl ExecutionResult {
    pub fn total_reward(&self) -> f64 {
        self.trajectory.iter().map(|t| t.reward).sum()
    }
}

/// Runs `x` until it terminates, the episode ends or the step cap is hit.
///
/// Policies and dynamics are deterministic, so revisiting a state means
/// the executor is looping; that also ends the run, unsuccessfully.
pub fn execute(x: &Executor, start: &GridState) -> ExecutionResult {
    let init = start.clone();
    let mut cur = start.clone();
    let mut trajectory = Vec::new();
    let mut seen = HashSet::new();
    let mut env_done = cur.is_terminal();
    loop {
        if x.terminates(&init, &cur) {
            return ExecutionResult {
                final_state: cur,
                trajectory,
                success: true,
                env_done,
            };
        }
        if env_done || trajectory.len() as u32 >= x.step_cap || !seen.insert(cur.key()) {
            return ExecutionResult {
                final_state: cur,
                trajectory,
                success: false,
                env_done,
            };
        }
        let action = (x.policy)(&init, &cur);
        let (next, StepResult { reward, done }) = cur.stepped(action);
        trajectory.push(Transition {
            state: cur,
            action,
            reward,
            next: next.clone(),
            done,
        });
        cur = next;
        env_done = done;
    }
}

fn encode(vocab: &Vocabulary, op: &Operator, state: &PartialFluentState) -> Result<Bits, ExecError> {
    vocab
        .encode(state)
        .ok_or_else(|| ExecError::Vocabulary(op.name.to_string()))
}

/// First action of a shortest turn/forward path that ends facing `target`
/// (or standing on it when `stand_on`).
pub fn navigate(s: &GridState, target: Pos, stand_on: bool) -> Option<PrimitiveAction> {
    let reached = |p: Pos, d: Dir| {
        if stand_on {
            return p == target;
        }
        let (dx, dy) = d.delta();
        let f = (p.0 as i16 + dx as i16, p.1 as i16 + dy as i16);
        f == (target.0 as i16, target.1 as i16)
    };
    if reached(s.agent, s.dir) {
        return None;
    }
    let w = s.layout.config.width as usize;
    let h = s.layout.config.height as usize;
    let idx = |p: Pos, d: Dir| (p.1 as usize * w + p.0 as usize) * 4 + d as usize;
    let mut first: Vec<Option<PrimitiveAction>> = vec![None; w * h * 4];
    let mut seen = vec![false; w * h * 4];
    let mut queue = VecDeque::new();
    seen[idx(s.agent, s.dir)] = true;
    queue.push_back((s.agent, s.dir));
    while let Some((p, d)) = queue.pop_front() {
        let origin = first[idx(p, d)];
        let moves = [
            (PrimitiveAction::TurnLeft, p, d.left()),
            (PrimitiveAction::TurnRight, p, d.right()),
            (PrimitiveAction::Forward, step_pos(s, p, d), d),
        ];
        for (a, np, nd) in moves {
            let i = idx(np, nd);
            if seen[i] {
                continue;
            }
            seen[i] = true;
            let act = origin.unwrap_or(a);
            first[i] = Some(act);
            if reached(np, nd) {
                return Some(act);
            }
            queue.push_back((np, nd));
        }
    }
    None
}

fn step_pos(s: &GridState, p: Pos, d: Dir) -> Pos {
    let (dx, dy) = d.delta();
    let n = (p.0 as i16 + dx as i16, p.1 as i16 + dy as i16);
    if !s.layout.in_bounds(n) {
        return p;
    }
    let n = (n.0 as u8, n.1 as u8);
    if s.passable(n) {
        n
    } else {
        p
    }
}

fn target_of(s: &GridState, name: &str) -> Option<Pos> {
    match name {
        "key" => s.key,
        "ball" => s.ball,
        "door" => Some(s.layout.door),
        "goal" => s.layout.goal,
        _ => None,
    }
}

/// Hand-written executor for a ground base operator. Termination checks the
/// accuracy condition `d(s) ⊇ eff ∪ restrict(d(s_init), static)`.
pub fn hand_executor(op: &Operator, vocab: &Vocabulary, step_cap: u32) -> Result<Executor, ExecError> {
    let pre = encode(vocab, op, &op.pre)?;
    let eff = encode(vocab, op, &op.eff)?;
    let static_mask = vocab
        .fluents()
        .iter()
        .enumerate()
        .filter(|(_, f)| op.static_fluents.contains(*f))
        .fold(0u32, |m, (i, _)| m | 1 << i);

    let args: Vec<String> = op.name_args().iter().map(|s| s.to_string()).collect();
    let policy: PolicyFn = match (op.schema_name(), args.as_slice()) {
        ("goToObj", [_, obj]) => {
            let obj = obj.clone();
            Arc::new(move |_, cur: &GridState| {
                target_of(cur, &obj)
                    .and_then(|t| navigate(cur, t, false))
                    .unwrap_or(PrimitiveAction::TurnLeft)
            })
        }
        ("goToGoal", _) => Arc::new(|_, cur: &GridState| {
            cur.layout
                .goal
                .and_then(|g| navigate(cur, g, true))
                .unwrap_or(PrimitiveAction::TurnLeft)
        }),
        ("pickUp", _) => Arc::new(|_, _| PrimitiveAction::Pickup),
        ("useKey", _) => Arc::new(|_, _| PrimitiveAction::UseKey),
        // turn until the faced cell can take the object
        ("putDown", _) => Arc::new(|_, cur: &GridState| {
            if cur.front().is_some_and(|p| cur.droppable(p)) {
                PrimitiveAction::Drop
            } else {
                PrimitiveAction::TurnLeft
            }
        }),
        _ => return Err(ExecError::UnknownOperator(op.name.to_string())),
    };

    Ok(Executor {
        name: op.name.clone(),
        initiation: Arc::new(move |s| pre.is_subset_of(s.detect_bits())),
        policy,
        termination: Arc::new(move |init, cur| {
            let now = cur.detect_bits();
            let before = init.detect_bits();
            let kept = Bits {
                known: before.known & static_mask,
                value: before.value & static_mask,
            };
            if eff.is_subset_of(now) && kept.is_subset_of(now) {
                1.0
            } else {
                0.0
            }
        }),
        step_cap,
    })
}

/// Executor for a discovered operator: greedy over a frozen q-table,
/// terminating once `d(s) ⊇ eff`.
pub fn make_executor(
    q: Arc<QTable>,
    op: &Operator,
    vocab: &Vocabulary,
    step_cap: u32,
) -> Result<Executor, ExecError> {
    if !op.static_fluents.is_empty() {
        return Err(ExecError::StaticFluentsUnsupported(op.name.to_string()));
    }
    if q.n_actions() != PrimitiveAction::COUNT {
        return Err(ExecError::ActionCount(op.name.to_string(), q.n_actions()));
    }
    let pre = encode(vocab, op, &op.pre)?;
    let eff = encode(vocab, op, &op.eff)?;
    Ok(Executor {
        name: op.name.clone(),
        initiation: Arc::new(move |s| pre.is_subset_of(s.detect_bits())),
        policy: Arc::new(move |_, cur| PrimitiveAction::from_index(q.greedy_action(cur.key()))),
        termination: Arc::new(move |_, cur| {
            if eff.is_subset_of(cur.detect_bits()) {
                1.0
            } else {
                0.0
            }
        }),
        step_cap,
    })
}
