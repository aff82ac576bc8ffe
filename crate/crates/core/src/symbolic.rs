//! Open-world propositional STRIPS.
//!
//! Partial fluent states are consistent literal sets kept in canonical
//! (sorted) form, so equality and hashing are structural. Fluents that a
//! state does not mention are unknown; nothing here applies a closed-world
//! assumption.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Default cap on the number of search nodes generated by [`owfs`].
pub const DEFAULT_NODE_LIMIT: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolicError {
    #[error("fluent {0} appears with both polarities")]
    Inconsistent(Fluent),
    #[error("operator {0} is not applicable")]
    NotApplicable(String),
    #[error("operator {0} is not relevant")]
    NotRelevant(String),
    #[error("invalid operator {name}: {reason}")]
    InvalidOperator { name: String, reason: String },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("search exceeded the node limit of {0}")]
    SearchBudgetExceeded(usize),
}

/// A ground propositional state variable, e.g. `inRoom(agent,key)`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fluent {
    predicate: Arc<str>,
    args: Arc<[Arc<str>]>,
}

impl Fluent {
    pub fn new<P, I, A>(predicate: P, args: I) -> Self
    where
        P: Into<Arc<str>>,
        I: IntoIterator<Item = A>,
        A: Into<Arc<str>>,
    {
        Fluent {
            predicate: predicate.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn args(&self) -> &[Arc<str>] {
        &self.args
    }

    pub fn pos(&self) -> Literal {
        Literal::new(self.clone(), true)
    }

    pub fn neg(&self) -> Literal {
        Literal::new(self.clone(), false)
    }
}

impl fmt::Display for Fluent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(a)?;
        }
        f.write_str(")")
    }
}

impl fmt::Debug for Fluent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A signed fluent. Ordering is (predicate, args, polarity).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub fluent: Fluent,
    pub positive: bool,
}

impl Literal {
    pub fn new(fluent: Fluent, positive: bool) -> Self {
        Literal { fluent, positive }
    }

    pub fn negated(&self) -> Literal {
        Literal::new(self.fluent.clone(), !self.positive)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.positive {
            f.write_str("¬")?;
        }
        write!(f, "{}", self.fluent)
    }
}

impl fmt::Debug for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

pub type FluentSet = BTreeSet<Fluent>;

/// A consistent set of literals in canonical order.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PartialFluentState {
    lits: Vec<Literal>,
}

/// A partial fluent state that assigns every fluent of its task.
pub type FluentState = PartialFluentState;

impl PartialFluentState {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a state from arbitrary literals. Duplicates collapse; a fluent
    /// with both polarities is an error.
    pub fn new<I: IntoIterator<Item = Literal>>(lits: I) -> Result<Self, SymbolicError> {
        let mut lits: Vec<Literal> = lits.into_iter().collect();
        lits.sort();
        lits.dedup();
        for w in lits.windows(2) {
            if w[0].fluent == w[1].fluent {
                return Err(SymbolicError::Inconsistent(w[0].fluent.clone()));
            }
        }
        Ok(PartialFluentState { lits })
    }

    /// Caller guarantees `lits` is sorted, deduplicated and consistent.
    pub(crate) fn from_sorted_unchecked(lits: Vec<Literal>) -> Self {
        debug_assert!(lits.windows(2).all(|w| w[0].fluent < w[1].fluent));
        PartialFluentState { lits }
    }

    pub fn len(&self) -> usize {
        self.lits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lits.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Literal> {
        self.lits.iter()
    }

    pub fn literals(&self) -> &[Literal] {
        &self.lits
    }

    pub fn fluents(&self) -> impl Iterator<Item = &Fluent> {
        self.lits.iter().map(|l| &l.fluent)
    }

    /// Value assigned to `fluent`, or `None` when unknown.
    pub fn get(&self, fluent: &Fluent) -> Option<bool> {
        self.lits
            .binary_search_by(|l| l.fluent.cmp(fluent))
            .ok()
            .map(|i| self.lits[i].positive)
    }

    pub fn contains(&self, lit: &Literal) -> bool {
        self.get(&lit.fluent) == Some(lit.positive)
    }

    pub fn mentions(&self, fluent: &Fluent) -> bool {
        self.get(fluent).is_some()
    }

    /// Literal-set inclusion `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        if self.lits.len() > other.lits.len() {
            return false;
        }
        let mut it = other.lits.iter();
        'outer: for l in &self.lits {
            for o in it.by_ref() {
                match o.cmp(l) {
                    std::cmp::Ordering::Less => continue,
                    std::cmp::Ordering::Equal => continue 'outer,
                    std::cmp::Ordering::Greater => return false,
                }
            }
            return false;
        }
        true
    }

    pub fn union(&self, other: &Self) -> Result<Self, SymbolicError> {
        let mut out = Vec::with_capacity(self.lits.len() + other.lits.len());
        let (mut i, mut j) = (0, 0);
        while i < self.lits.len() && j < other.lits.len() {
            let (a, b) = (&self.lits[i], &other.lits[j]);
            match a.fluent.cmp(&b.fluent) {
                std::cmp::Ordering::Less => {
                    out.push(a.clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b.clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    if a.positive != b.positive {
                        return Err(SymbolicError::Inconsistent(a.fluent.clone()));
                    }
                    out.push(a.clone());
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.lits[i..]);
        out.extend_from_slice(&other.lits[j..]);
        Ok(Self::from_sorted_unchecked(out))
    }

    /// Literal-set difference `self \ other`.
    pub fn difference(&self, other: &Self) -> Self {
        Self::from_sorted_unchecked(
            self.lits
                .iter()
                .filter(|l| !other.contains(l))
                .cloned()
                .collect(),
        )
    }

    /// Literal-set intersection.
    pub fn intersection(&self, other: &Self) -> Self {
        Self::from_sorted_unchecked(
            self.lits
                .iter()
                .filter(|l| other.contains(l))
                .cloned()
                .collect(),
        )
    }

    /// Keeps only the literals whose fluent is in `keep`.
    pub fn restrict(&self, keep: &FluentSet) -> Self {
        Self::from_sorted_unchecked(
            self.lits
                .iter()
                .filter(|l| keep.contains(&l.fluent))
                .cloned()
                .collect(),
        )
    }

    /// True when every fluent of `fluents` is assigned.
    pub fn is_complete_over(&self, fluents: &FluentSet) -> bool {
        self.lits.len() == fluents.len() && self.fluents().all(|f| fluents.contains(f))
    }
}

impl fmt::Display for PartialFluentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, l) in self.lits.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{l}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for PartialFluentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl<'a> IntoIterator for &'a PartialFluentState {
    type Item = &'a Literal;
    type IntoIter = std::slice::Iter<'a, Literal>;

    fn into_iter(self) -> Self::IntoIter {
        self.lits.iter()
    }
}

/// Open-world operator `⟨pre, eff, static⟩`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Operator {
    pub name: Arc<str>,
    pub pre: PartialFluentState,
    pub eff: PartialFluentState,
    pub static_fluents: FluentSet,
}

impl Operator {
    /// Validates that some effect is not already a precondition and that no
    /// effect fluent is declared static.
    pub fn new(
        name: impl Into<Arc<str>>,
        pre: PartialFluentState,
        eff: PartialFluentState,
        static_fluents: FluentSet,
    ) -> Result<Self, SymbolicError> {
        let name = name.into();
        if eff.difference(&pre).is_empty() {
            return Err(SymbolicError::InvalidOperator {
                name: name.to_string(),
                reason: "effects add nothing beyond preconditions".into(),
            });
        }
        if let Some(f) = eff.fluents().find(|f| static_fluents.contains(*f)) {
            return Err(SymbolicError::InvalidOperator {
                name: name.to_string(),
                reason: format!("effect fluent {f} is also static"),
            });
        }
        Ok(Operator {
            name,
            pre,
            eff,
            static_fluents,
        })
    }

    /// Schema part of a ground name such as `goToObj(agent,key)`.
    pub fn schema_name(&self) -> &str {
        self.name.split('(').next().unwrap_or(&self.name)
    }

    /// Arguments of a ground name such as `goToObj(agent,key)`.
    pub fn name_args(&self) -> Vec<&str> {
        match (self.name.find('('), self.name.rfind(')')) {
            (Some(l), Some(r)) if r > l + 1 => self.name[l + 1..r].split(',').collect(),
            _ => Vec::new(),
        }
    }

    /// Every fluent of `fluents` is an effect or static.
    pub fn is_complete_over(&self, fluents: &FluentSet) -> bool {
        fluents
            .iter()
            .all(|f| self.eff.mentions(f) || self.static_fluents.contains(f))
    }
}

pub fn restrict(state: &PartialFluentState, keep: &FluentSet) -> PartialFluentState {
    state.restrict(keep)
}

pub fn applicable(op: &Operator, state: &PartialFluentState) -> bool {
    op.pre.is_subset_of(state)
}

/// `δ(σ, o) = eff(o) ∪ restrict(σ, static(o))`.
pub fn successor(state: &PartialFluentState, op: &Operator) -> Result<PartialFluentState, SymbolicError> {
    if !applicable(op, state) {
        return Err(SymbolicError::NotApplicable(op.name.to_string()));
    }
    let next = op.eff.union(&state.restrict(&op.static_fluents));
    debug_assert!(next.is_ok(), "operator invariants rule out inconsistent successors");
    next
}

pub fn relevant(op: &Operator, state: &PartialFluentState) -> bool {
    let rest = state.difference(&op.eff);
    if rest.restrict(&op.static_fluents) != rest {
        return false;
    }
    match op.eff.union(&op.pre.restrict(&op.static_fluents)) {
        Ok(needed) => needed.is_subset_of(state),
        Err(_) => false,
    }
}

/// `δ⁻¹(σ, o) = pre(o) ∪ (σ \ eff(o))`, defined only where `o` is relevant.
pub fn regress(state: &PartialFluentState, op: &Operator) -> Result<PartialFluentState, SymbolicError> {
    if !relevant(op, state) {
        return Err(SymbolicError::NotRelevant(op.name.to_string()));
    }
    regress_unchecked(state, op)
}

/// The regression formula without the relevance test. Along a plan that
/// executes from a consistent state the result is always consistent.
pub fn regress_unchecked(
    state: &PartialFluentState,
    op: &Operator,
) -> Result<PartialFluentState, SymbolicError> {
    op.pre.union(&state.difference(&op.eff))
}

pub fn subsumes(general: &PartialFluentState, specific: &PartialFluentState) -> bool {
    general.is_subset_of(specific)
}

/// Ground open-world STRIPS task `⟨F, O, σ₀, σ_g⟩`.
#[derive(Clone, Debug)]
pub struct StripsTask {
    pub fluents: FluentSet,
    operators: Vec<Arc<Operator>>,
    pub initial: FluentState,
    pub goal: PartialFluentState,
}

impl StripsTask {
    pub fn new(
        fluents: FluentSet,
        operators: Vec<Operator>,
        initial: FluentState,
        goal: PartialFluentState,
    ) -> Result<Self, SymbolicError> {
        if !initial.is_complete_over(&fluents) {
            return Err(SymbolicError::InvalidTask(
                "initial state must assign every fluent".into(),
            ));
        }
        if let Some(f) = goal.fluents().find(|f| !fluents.contains(*f)) {
            return Err(SymbolicError::InvalidTask(format!("goal fluent {f} is undeclared")));
        }
        let mut task = StripsTask {
            fluents,
            operators: Vec::new(),
            initial,
            goal,
        };
        for op in operators {
            task.add_operator(op);
        }
        Ok(task)
    }

    /// Operators in canonical name order.
    pub fn operators(&self) -> &[Arc<Operator>] {
        &self.operators
    }

    pub fn operator(&self, name: &str) -> Option<&Arc<Operator>> {
        self.operators
            .binary_search_by(|o| (*o.name).cmp(name))
            .ok()
            .map(|i| &self.operators[i])
    }

    /// Inserts in name order. Returns false when an operator with the same
    /// name or the same (pre, eff) pair already exists.
    pub fn add_operator(&mut self, op: Operator) -> bool {
        if self.operators.iter().any(|o| o.pre == op.pre && o.eff == op.eff) {
            return false;
        }
        match self.operators.binary_search_by(|o| o.name.cmp(&op.name)) {
            Ok(_) => false,
            Err(i) => {
                self.operators.insert(i, Arc::new(op));
                true
            }
        }
    }

    pub fn owfs(&self, start: &PartialFluentState) -> Result<SearchOutcome, SymbolicError> {
        owfs(&self.operators, &self.goal, start, DEFAULT_NODE_LIMIT)
    }
}

/// Operator sequence plus the partial states it passes through
/// (`states.len() == steps.len() + 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub steps: Vec<Arc<Operator>>,
    pub states: Vec<PartialFluentState>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.steps.iter().map(|o| &*o.name).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub plan: Option<Plan>,
    /// Every node generated, start first, in generation order.
    pub visited: Vec<PartialFluentState>,
}

/// Breadth-first open-world forward search from `start`.
///
/// `operators` must be in canonical name order; successors are generated in
/// that order so the first goal node found gives the canonical shortest plan.
pub fn owfs(
    operators: &[Arc<Operator>],
    goal: &PartialFluentState,
    start: &PartialFluentState,
    node_limit: usize,
) -> Result<SearchOutcome, SymbolicError> {
    let mut index: HashMap<PartialFluentState, usize> = HashMap::new();
    let mut nodes: Vec<(PartialFluentState, Option<(usize, usize)>)> = Vec::new();
    index.insert(start.clone(), 0);
    nodes.push((start.clone(), None));

    let extract = |nodes: &[(PartialFluentState, Option<(usize, usize)>)], mut at: usize| {
        let mut steps = Vec::new();
        let mut states = vec![nodes[at].0.clone()];
        while let Some((parent, op)) = nodes[at].1 {
            steps.push(operators[op].clone());
            states.push(nodes[parent].0.clone());
            at = parent;
        }
        steps.reverse();
        states.reverse();
        Plan { steps, states }
    };

    if goal.is_subset_of(start) {
        return Ok(SearchOutcome {
            plan: Some(extract(&nodes, 0)),
            visited: vec![start.clone()],
        });
    }

    let mut queue = VecDeque::from([0usize]);
    while let Some(at) = queue.pop_front() {
        for (oi, op) in operators.iter().enumerate() {
            if !applicable(op, &nodes[at].0) {
                continue;
            }
            let next = successor(&nodes[at].0, op)?;
            if index.contains_key(&next) {
                continue;
            }
            if nodes.len() >= node_limit {
                return Err(SymbolicError::SearchBudgetExceeded(node_limit));
            }
            let id = nodes.len();
            let reached = goal.is_subset_of(&next);
            index.insert(next.clone(), id);
            nodes.push((next, Some((at, oi))));
            if reached {
                let plan = extract(&nodes, id);
                return Ok(SearchOutcome {
                    plan: Some(plan),
                    visited: nodes.into_iter().map(|n| n.0).collect(),
                });
            }
            queue.push_back(id);
        }
    }
    Ok(SearchOutcome {
        plan: None,
        visited: nodes.into_iter().map(|n| n.0).collect(),
    })
}
