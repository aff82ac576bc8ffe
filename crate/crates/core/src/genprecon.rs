//! Precondition generalization: starting from planner-reachable states whose
//! learned value clears a threshold, intersect with visited fluent states
//! and keep every intersection whose average value still clears it.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::gridworld::{Bits, GridState, Layout, Vocabulary};
use crate::rl::QTable;
use crate::symbolic::{FluentState, Operator, PartialFluentState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenPreconError {
    #[error("operators {0} and {1} have different effects")]
    EffectMismatch(String, String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreconditionCandidate {
    pub literals: PartialFluentState,
    pub avg_value: f64,
    pub support: usize,
}

/// Greedy values of visited states grouped by detection, in first-visit
/// order.
#[derive(Clone, Debug, Default)]
pub struct ValueIndex {
    groups: Vec<(Bits, f64, usize)>,
    max_value: f64,
}

impl ValueIndex {
    pub fn from_values<I: IntoIterator<Item = (Bits, f64)>>(values: I) -> Self {
        let mut at: HashMap<Bits, usize> = HashMap::new();
        let mut index = ValueIndex {
            groups: Vec::new(),
            max_value: f64::NEG_INFINITY,
        };
        for (bits, v) in values {
            index.max_value = index.max_value.max(v);
            match at.get(&bits) {
                Some(&i) => {
                    index.groups[i].1 += v;
                    index.groups[i].2 += 1;
                }
                None => {
                    at.insert(bits, index.groups.len());
                    index.groups.push((bits, v, 1));
                }
            }
        }
        index
    }

    pub fn from_table(table: &QTable, mut detect: impl FnMut(u64) -> Bits) -> Self {
        Self::from_values(table.states().map(|s| (detect(s), table.greedy_value(s))))
    }

    /// Mean greedy value over visited states whose detection contains
    /// `bits`, with its support; `(0, 0)` when nothing matches.
    pub fn value(&self, bits: Bits) -> (f64, usize) {
        let (mut sum, mut n) = (0.0, 0);
        for (g, s, c) in &self.groups {
            if bits.is_subset_of(*g) {
                sum += s;
                n += c;
            }
        }
        if n == 0 {
            (0.0, 0)
        } else {
            (sum / n as f64, n)
        }
    }

    /// Distinct detections of visited states.
    pub fn been(&self) -> impl Iterator<Item = Bits> + '_ {
        self.groups.iter().map(|g| g.0)
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Anytime generalization over compact states. `budget` bounds the number
/// of queue nodes expanded; with budget 0 only the qualifying seeds return.
pub fn gen_precon_bits(index: &ValueIndex, seeds: &[Bits], tau: f64, budget: usize) -> Vec<(Bits, f64, usize)> {
    let mut accepted = Vec::new();
    if index.is_empty() || index.max_value() <= tau {
        return accepted;
    }
    let mut memo: HashMap<Bits, (f64, usize)> = HashMap::new();
    let mut value = |b: Bits| *memo.entry(b).or_insert_with(|| index.value(b));
    let mut present = HashSet::new();
    let mut queue = VecDeque::new();
    for &s in seeds {
        let (v, n) = value(s);
        if v > tau && present.insert(s) {
            accepted.push((s, v, n));
            queue.push_back(s);
        }
    }
    let been: Vec<Bits> = {
        let mut b: Vec<Bits> = index.been().collect();
        b.sort_by_key(|b| (b.known, b.value));
        b
    };
    let mut expanded = 0;
    while expanded < budget {
        let Some(node) = queue.pop_front() else { break };
        expanded += 1;
        for other in &been {
            let common = node.intersect(*other);
            if present.contains(&common) {
                continue;
            }
            let (v, n) = value(common);
            if v > tau {
                present.insert(common);
                accepted.push((common, v, n));
                queue.push_back(common);
            }
        }
    }
    accepted
}

pub fn gen_precon(
    index: &ValueIndex,
    vocab: &Vocabulary,
    sigma_reach: &[PartialFluentState],
    tau: f64,
    budget: usize,
) -> Vec<PreconditionCandidate> {
    let seeds: Vec<Bits> = sigma_reach.iter().filter_map(|s| vocab.encode(s)).collect();
    gen_precon_bits(index, &seeds, tau, budget)
        .into_iter()
        .map(|(b, avg_value, support)| PreconditionCandidate {
            literals: vocab.decode(b),
            avg_value,
            support,
        })
        .collect()
}

/// Detections of every state in the table.
pub fn been_states(table: &QTable, layout: &Arc<Layout>) -> BTreeSet<FluentState> {
    table
        .states()
        .map(|k| GridState::from_key(layout, k).detect())
        .collect()
}

/// Mean greedy value over visited states whose detection contains `pfs`.
pub fn value_of(pfs: &PartialFluentState, table: &QTable, layout: &Arc<Layout>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (k, _) in table.rows() {
        if pfs.is_subset_of(&GridState::from_key(layout, k).detect()) {
            sum += table.greedy_value(k);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `a` dominates `b` when both share effects and `pre(a) ⊊ pre(b)`.
pub fn dominates(a: &Operator, b: &Operator) -> Result<bool, GenPreconError> {
    if a.eff != b.eff {
        return Err(GenPreconError::EffectMismatch(a.name.to_string(), b.name.to_string()));
    }
    Ok(a.pre != b.pre && a.pre.is_subset_of(&b.pre))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::{Fluent, FluentSet, Literal};

    fn vocab() -> Vocabulary {
        let f: FluentSet = ["p", "q"].iter().map(|n| Fluent::new(*n, Vec::<&str>::new())).collect();
        Vocabulary::new(&f)
    }

    fn st(v: &Vocabulary, lits: &[(&str, bool)]) -> PartialFluentState {
        PartialFluentState::new(
            lits.iter()
                .map(|(n, p)| Literal::new(Fluent::new(*n, Vec::<&str>::new()), *p)),
        )
        .inspect(|s| assert!(v.encode(s).is_some()))
        .unwrap()
    }

    fn toy(second: f64) -> (Vocabulary, ValueIndex, Vec<PartialFluentState>) {
        let v = vocab();
        let pq = st(&v, &[("p", true), ("q", true)]);
        let pnq = st(&v, &[("p", true), ("q", false)]);
        let idx = ValueIndex::from_values([
            (v.encode(&pq).unwrap(), 1.0),
            (v.encode(&pnq).unwrap(), second),
        ]);
        (v, idx, vec![pq])
    }

    #[test]
    fn low_value_generalization_is_rejected() {
        let (v, idx, reach) = toy(0.0);
        let out = gen_precon(&idx, &v, &reach, 0.9, 100);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].literals, reach[0]);
        assert_eq!(idx.value(v.encode(&st(&v, &[("p", true)])).unwrap()), (0.5, 2));
    }

    #[test]
    fn high_value_generalization_is_accepted() {
        let (v, idx, reach) = toy(0.95);
        let out = gen_precon(&idx, &v, &reach, 0.9, 100);
        let p = st(&v, &[("p", true)]);
        let found = out.iter().find(|c| c.literals == p).unwrap();
        assert!((found.avg_value - 0.975).abs() < 1e-12);
        assert_eq!(found.support, 2);
    }

    #[test]
    fn budget_zero_returns_seeds() {
        let (v, idx, reach) = toy(0.95);
        let out = gen_precon(&idx, &v, &reach, 0.9, 0);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn unsupported_sets_have_zero_value() {
        let idx = ValueIndex::from_values([(Bits { known: 1, value: 1 }, 1.0)]);
        assert_eq!(idx.value(Bits { known: 1, value: 0 }), (0.0, 0));
    }

    #[test]
    fn domination() {
        let v = vocab();
        let eff = st(&v, &[("q", true)]);
        let a = Operator::new("a", st(&v, &[("p", true)]), eff.clone(), FluentSet::new()).unwrap();
        let b = Operator::new("b", st(&v, &[("p", true), ("q", false)]), eff.clone(), FluentSet::new()).unwrap();
        let c = Operator::new("c", st(&v, &[("p", false)]), eff.clone(), FluentSet::new()).unwrap();
        assert!(dominates(&a, &b).unwrap());
        assert!(!dominates(&a, &a).unwrap());
        assert!(!dominates(&a, &c).unwrap());
        let d = Operator::new("d", st(&v, &[]), st(&v, &[("p", true)]), FluentSet::new()).unwrap();
        assert!(dominates(&a, &d).is_err());
    }
}
