//! Tabular Q-learning with ε-greedy exploration.

use std::fmt::Write as _;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::Rng;
use thiserror::Error;

use crate::gridworld::StateKey;
use crate::symbolic::{Fluent, Literal, PartialFluentState};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("malformed q-table snapshot, line {line}: {msg}")]
    Snapshot { line: usize, msg: String },
}

/// Q-values per state; rows exist for every state ever seen, including
/// states only reached as successors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QTable {
    n_actions: usize,
    rows: IndexMap<StateKey, Box<[f64]>>,
}

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        QTable {
            n_actions,
            rows: IndexMap::new(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, s: StateKey) -> Option<&[f64]> {
        self.rows.get(&s).map(|r| &**r)
    }

    /// Visited states in first-visit order.
    pub fn states(&self) -> impl Iterator<Item = StateKey> + '_ {
        self.rows.keys().copied()
    }

    pub fn rows(&self) -> impl Iterator<Item = (StateKey, &[f64])> + '_ {
        self.rows.iter().map(|(k, v)| (*k, &**v))
    }

    fn row_mut(&mut self, s: StateKey) -> &mut [f64] {
        let n = self.n_actions;
        self.rows.entry(s).or_insert_with(|| vec![0.0; n].into_boxed_slice())
    }

    pub fn get(&self, s: StateKey, a: usize) -> f64 {
        self.row(s).map_or(0.0, |r| r[a])
    }

    /// First maximal action; action 0 for unseen states.
    pub fn greedy_action(&self, s: StateKey) -> usize {
        match self.row(s) {
            Some(r) => argmax(r),
            None => 0,
        }
    }

    pub fn greedy_value(&self, s: StateKey) -> f64 {
        self.row(s).map_or(0.0, max_of)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn max_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularLearner {
    pub alpha: f64,
    pub gamma: f64,
    /// `None` for the exploration learner.
    pub subgoal: Option<PartialFluentState>,
    q: Arc<QTable>,
}

impl TabularLearner {
    pub fn new(alpha: f64, gamma: f64, n_actions: usize, subgoal: Option<PartialFluentState>) -> Self {
        TabularLearner {
            alpha,
            gamma,
            subgoal,
            q: Arc::new(QTable::new(n_actions)),
        }
    }

    pub fn table(&self) -> &QTable {
        &self.q
    }

    /// Cheap frozen copy; later updates copy the table on write.
    pub fn snapshot(&self) -> Arc<QTable> {
        self.q.clone()
    }

    pub fn n_actions(&self) -> usize {
        self.q.n_actions
    }

    pub fn is_visited(&self, s: StateKey) -> bool {
        self.q.rows.contains_key(&s)
    }

    pub fn q(&self, s: StateKey, a: usize) -> f64 {
        self.q.get(s, a)
    }

    /// `q(s,a) += α (r + γ max q(s',·) − q(s,a))`.
    pub fn q_update(&mut self, s: StateKey, a: usize, r: f64, s_next: StateKey) {
        self.update(s, a, r, s_next, false);
    }

    /// Like [`q_update`](Self::q_update); a terminal successor contributes
    /// no bootstrap term.
    pub fn update(&mut self, s: StateKey, a: usize, r: f64, s_next: StateKey, terminal: bool) {
        self.smdp_update(s, a, r, 1, s_next, terminal);
    }

    /// Update for a `k`-step transition with discounted return `r`:
    /// target `r + γ^k max q(s',·)`.
    pub fn smdp_update(&mut self, s: StateKey, a: usize, r: f64, k: u32, s_next: StateKey, terminal: bool) {
        let gamma_k = self.gamma.powi(k as i32);
        let alpha = self.alpha;
        let q = Arc::make_mut(&mut self.q);
        let bootstrap = if terminal {
            q.row_mut(s_next);
            0.0
        } else {
            max_of(q.row_mut(s_next))
        };
        let row = q.row_mut(s);
        row[a] += alpha * (r + gamma_k * bootstrap - row[a]);
    }

    pub fn greedy_action(&self, s: StateKey) -> usize {
        self.q.greedy_action(s)
    }

    pub fn greedy_value(&self, s: StateKey) -> f64 {
        self.q.greedy_value(s)
    }

    /// ε-greedy; the exploration coin is drawn even when `eps` is 0 so the
    /// random stream does not depend on ε.
    pub fn select_action<R: Rng + ?Sized>(&self, s: StateKey, eps: f64, rng: &mut R) -> usize {
        if rng.gen::<f64>() < eps {
            rng.gen_range(0..self.n_actions())
        } else {
            self.greedy_action(s)
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "alpha {}", self.alpha);
        let _ = writeln!(out, "gamma {}", self.gamma);
        let _ = writeln!(out, "actions {}", self.n_actions());
        if let Some(sg) = &self.subgoal {
            for l in sg {
                let _ = write!(out, "subgoal {} {}", if l.positive { '+' } else { '-' }, l.fluent.predicate());
                for a in l.fluent.args() {
                    let _ = write!(out, " {a}");
                }
                out.push('\n');
            }
        }
        for (k, row) in self.q.rows() {
            let _ = write!(out, "{k:x}");
            for v in row {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, RlError> {
        let mut alpha = None;
        let mut gamma = None;
        let mut n_actions = None;
        let mut subgoal = Vec::new();
        let mut rows = IndexMap::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: &str| RlError::Snapshot {
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut parts = line.split_whitespace();
            let Some(head) = parts.next() else { continue };
            let num = |v: Option<&str>| -> Result<f64, RlError> {
                v.and_then(|v| v.parse().ok()).ok_or_else(|| err("expected a number"))
            };
            match head {
                "alpha" => alpha = Some(num(parts.next())?),
                "gamma" => gamma = Some(num(parts.next())?),
                "actions" => {
                    n_actions = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse::<usize>().ok())
                            .ok_or_else(|| err("expected an action count"))?,
                    )
                }
                "subgoal" => {
                    let positive = match parts.next() {
                        Some("+") => true,
                        Some("-") => false,
                        _ => return Err(err("expected + or -")),
                    };
                    let pred = parts.next().ok_or_else(|| err("expected a predicate"))?;
                    subgoal.push(Literal::new(Fluent::new(pred, parts), positive));
                }
                key => {
                    let n = n_actions.ok_or_else(|| err("rows before `actions`"))?;
                    let k = StateKey::from_str_radix(key, 16).map_err(|_| err("bad state key"))?;
                    let row = parts.map(|v| num(Some(v))).collect::<Result<Vec<_>, _>>()?;
                    if row.len() != n {
                        return Err(err("wrong number of action values"));
                    }
                    rows.insert(k, row.into_boxed_slice());
                }
            }
        }
        let missing = |what: &str| RlError::Snapshot {
            line: 0,
            msg: format!("missing {what}"),
        };
        let subgoal = if subgoal.is_empty() {
            None
        } else {
            Some(PartialFluentState::new(subgoal).map_err(|e| RlError::Snapshot {
                line: 0,
                msg: e.to_string(),
            })?)
        };
        let n_actions = n_actions.ok_or_else(|| missing("actions"))?;
        Ok(TabularLearner {
            alpha: alpha.ok_or_else(|| missing("alpha"))?,
            gamma: gamma.ok_or_else(|| missing("gamma"))?,
            subgoal,
            q: Arc::new(QTable { n_actions, rows }),
        })
    }
}

/// `ε(t) = ε_min + (ε_max − ε_min) e^{−λt}` with `λ = ln(100)/N`, so ε has
/// covered 99% of its range after `N` episodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsSchedule {
    pub eps_min: f64,
    pub eps_max: f64,
    pub horizon: u64,
}

impl EpsSchedule {
    pub fn new(eps_max: f64, eps_min: f64, horizon: u64) -> Self {
        assert!(eps_min <= eps_max, "eps_min must not exceed eps_max");
        EpsSchedule {
            eps_min,
            eps_max,
            horizon: horizon.max(1),
        }
    }

    pub fn lambda(&self) -> f64 {
        -(0.01f64.ln()) / self.horizon as f64
    }

    pub fn epsilon(&self, t: u64) -> f64 {
        self.eps_min + (self.eps_max - self.eps_min) * (-self.lambda() * t as f64).exp()
    }
}
