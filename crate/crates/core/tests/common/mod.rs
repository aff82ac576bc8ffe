//! Shared fixtures: small random open-world domains over array-encoded
//! states, with a brute-force successor that does not go through the crate.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use spotter_core::symbolic::{Fluent, FluentSet, Literal, Operator, PartialFluentState};

pub const NF: usize = 4;

/// `None` = unknown.
pub type Arr = [Option<bool>; NF];

pub fn fluent(i: usize) -> Fluent {
    Fluent::new(format!("p{i}"), Vec::<&str>::new())
}

pub fn to_pfs(a: &Arr) -> PartialFluentState {
    PartialFluentState::new(
        a.iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|b| Literal::new(fluent(i), b))),
    )
    .unwrap()
}

pub fn from_pfs(s: &PartialFluentState) -> Arr {
    let mut a = [None; NF];
    for (i, slot) in a.iter_mut().enumerate() {
        *slot = s.get(&fluent(i));
    }
    a
}

pub fn all_partial_states() -> Vec<Arr> {
    let mut out = Vec::with_capacity(81);
    for code in 0..3usize.pow(NF as u32) {
        let mut a = [None; NF];
        let mut c = code;
        for slot in a.iter_mut() {
            *slot = match c % 3 {
                0 => None,
                1 => Some(false),
                _ => Some(true),
            };
            c /= 3;
        }
        out.push(a);
    }
    out
}

pub fn subset(a: &Arr, b: &Arr) -> bool {
    a.iter().zip(b).all(|(x, y)| x.is_none() || x == y)
}

#[derive(Clone, Debug)]
pub struct ArrOp {
    pub pre: Arr,
    pub eff: Arr,
    pub stat: [bool; NF],
}

impl ArrOp {
    pub fn apply(&self, s: &Arr) -> Option<Arr> {
        if !subset(&self.pre, s) {
            return None;
        }
        let mut out = [None; NF];
        for i in 0..NF {
            out[i] = if self.eff[i].is_some() {
                self.eff[i]
            } else if self.stat[i] {
                s[i]
            } else {
                None
            };
        }
        Some(out)
    }

    pub fn to_operator(&self, name: &str) -> Option<Operator> {
        let stat: FluentSet = (0..NF).filter(|i| self.stat[*i]).map(fluent).collect();
        Operator::new(name, to_pfs(&self.pre), to_pfs(&self.eff), stat).ok()
    }
}

pub fn random_arr<R: Rng>(rng: &mut R, p_known: f64) -> Arr {
    let mut a = [None; NF];
    for slot in a.iter_mut() {
        if rng.gen_bool(p_known) {
            *slot = Some(rng.gen_bool(0.5));
        }
    }
    a
}

/// A valid random operator: some effect not already a precondition, and no
/// effect fluent static.
pub fn random_op<R: Rng>(rng: &mut R) -> ArrOp {
    loop {
        let pre = random_arr(rng, 0.4);
        let eff = random_arr(rng, 0.4);
        let adds = (0..NF).any(|i| eff[i].is_some() && eff[i] != pre[i]);
        if !adds {
            continue;
        }
        let mut stat = [false; NF];
        for i in 0..NF {
            stat[i] = eff[i].is_none() && rng.gen_bool(0.6);
        }
        return ArrOp { pre, eff, stat };
    }
}

#[derive(Clone, Debug)]
pub struct Domain {
    pub ops: Vec<ArrOp>,
    pub start: Arr,
    pub goal: Arr,
}

pub fn random_domain<R: Rng>(rng: &mut R) -> Domain {
    let n_ops = rng.gen_range(1..=4);
    Domain {
        ops: (0..n_ops).map(|_| random_op(rng)).collect(),
        start: random_arr(rng, 0.8),
        goal: random_arr(rng, 0.4),
    }
}

impl Domain {
    /// Operators named `o0`, `o1`, ... (already canonical order).
    pub fn operators(&self) -> Vec<Arc<Operator>> {
        self.ops
            .iter()
            .enumerate()
            .map(|(i, o)| Arc::new(o.to_operator(&format!("o{i}")).expect("valid random operator")))
            .collect()
    }

    /// Length of the shortest operator sequence (≤ `max_len`) reaching the
    /// goal, by exhaustive enumeration.
    pub fn shortest_plan(&self, max_len: usize) -> Option<usize> {
        let mut frontier = vec![self.start];
        for len in 0..=max_len {
            if frontier.iter().any(|s| subset(&self.goal, s)) {
                return Some(len);
            }
            frontier = frontier
                .iter()
                .flat_map(|s| self.ops.iter().filter_map(move |o| o.apply(s)))
                .collect();
        }
        None
    }

    /// Replays operator indices; `None` if some step is inapplicable.
    pub fn replay(&self, steps: &[usize]) -> Option<Arr> {
        let mut s = self.start;
        for &i in steps {
            s = self.ops[i].apply(&s)?;
        }
        Some(s)
    }
}

/// Random visited complete states with values, plus planner seeds.
#[derive(Clone, Debug)]
pub struct PreconFixture {
    pub visited: Vec<(Arr, f64)>,
    pub seeds: Vec<Arr>,
    pub tau: f64,
}

pub fn random_precon_fixture<R: Rng>(rng: &mut R) -> PreconFixture {
    let n = rng.gen_range(1..40);
    let visited = (0..n)
        .map(|_| (random_arr(rng, 1.0), if rng.gen_bool(0.6) { rng.gen_range(0.85..1.0) } else { rng.gen_range(0.0..1.0) }))
        .collect();
    let seeds = (0..rng.gen_range(0..6)).map(|_| random_arr(rng, 0.9)).collect();
    PreconFixture {
        visited,
        seeds,
        tau: rng.gen_range(0.5..0.95),
    }
}

impl PreconFixture {
    /// Mean value over visited states containing `a`, with support.
    pub fn value(&self, a: &Arr) -> (f64, usize) {
        let hits: Vec<f64> = self.visited.iter().filter(|(s, _)| subset(a, s)).map(|(_, v)| *v).collect();
        if hits.is_empty() {
            (0.0, 0)
        } else {
            (hits.iter().sum::<f64>() / hits.len() as f64, hits.len())
        }
    }
}

/// Deterministic chain: action 0 moves left, 1 moves right; entering the
/// last state pays 1 and ends the episode.
pub struct Chain {
    pub n: u64,
}

impl Chain {
    pub fn step(&self, s: u64, a: usize) -> (u64, f64, bool) {
        let next = if a == 0 { s.saturating_sub(1) } else { (s + 1).min(self.n - 1) };
        let done = next == self.n - 1;
        (next, if done { 1.0 } else { 0.0 }, done)
    }

    /// Q* by value iteration.
    pub fn value_iteration(&self, gamma: f64) -> Vec<[f64; 2]> {
        let mut q = vec![[0.0f64; 2]; self.n as usize];
        for _ in 0..10_000 {
            let mut delta: f64 = 0.0;
            for s in 0..self.n - 1 {
                for a in 0..2 {
                    let (next, r, done) = self.step(s, a);
                    let boot = if done { 0.0 } else { q[next as usize][0].max(q[next as usize][1]) };
                    let v = r + gamma * boot;
                    delta = delta.max((v - q[s as usize][a]).abs());
                    q[s as usize][a] = v;
                }
            }
            if delta < 1e-12 {
                break;
            }
        }
        q
    }
}
