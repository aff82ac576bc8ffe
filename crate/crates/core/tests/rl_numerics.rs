mod common;

use common::Chain;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spotter_core::rl::{EpsSchedule, TabularLearner};

#[test]
fn update_matches_formula_on_tabulated_cases() {
    // (q0, r, max q(s'), terminal)
    let cases = [
        (0.0, 0.0, 0.0, false),
        (0.0, 1.0, 0.0, false),
        (0.5, 0.0, 0.8, false),
        (0.3, 1.0, 0.9, true),
        (-0.2, 0.25, 0.125, false),
    ];
    for (q0, r, next_max, terminal) in cases {
        let mut l = TabularLearner::new(0.1, 0.99, 2, None);
        // seed q(s,0) = q0 and max q(s',·) = next_max by single exact updates
        l.update(2, 1, next_max / 0.1, 9, true);
        l.update(1, 0, q0 / 0.1, 9, true);
        let (q0, next_max) = (l.q(1, 0), l.q(2, 1));
        let boot = if terminal { 0.0 } else { next_max };
        let expected = q0 + 0.1 * (r + 0.99 * boot - q0);
        l.update(1, 0, r, 2, terminal);
        assert_eq!(l.q(1, 0), expected, "case q0={q0} r={r}");
    }
}

#[test]
fn smdp_update_discounts_by_duration() {
    let mut l = TabularLearner::new(0.1, 0.99, 1, None);
    l.update(7, 0, 10.0, 9, true);
    let next = l.q(7, 0);
    // three zero-reward steps, then bootstrap from s'
    l.smdp_update(1, 0, 0.0, 3, 7, false);
    assert_eq!(l.q(1, 0), 0.1 * (0.99f64.powi(3) * next));
    // a terminal reward r after k steps enters as r·γ^(k-1) in the return
    let mut m = TabularLearner::new(0.1, 0.99, 1, None);
    let ret = 0.99f64.powi(2);
    m.smdp_update(1, 0, ret, 3, 7, true);
    assert_eq!(m.q(1, 0), 0.1 * ret);
}

#[test]
fn sweeps_on_a_chain_converge_to_value_iteration() {
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
    for s in 0..chain.n - 1 {
        for a in 0..2 {
            assert!((l.q(s, a) - oracle[s as usize][a]).abs() < 1e-3, "q({s},{a})");
        }
    }
}

#[test]
fn epsilon_greedy_episodes_learn_the_chain() {
    let chain = Chain { n: 6 };
    let oracle = chain.value_iteration(0.99);
    let mut l = TabularLearner::new(0.1, 0.99, 2, None);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20_000 {
        let mut s = 0;
        for _ in 0..100 {
            let a = l.select_action(s, 0.5, &mut rng);
            let (next, r, done) = chain.step(s, a);
            l.update(s, a, r, next, done);
            s = next;
            if done {
                break;
            }
        }
    }
    for s in 0..chain.n - 1 {
        assert_eq!(l.greedy_action(s), 1);
        assert!((l.greedy_value(s) - oracle[s as usize][1]).abs() < 1e-3);
    }
}

#[test]
fn epsilon_schedule_endpoints() {
    let e = EpsSchedule::new(0.9, 0.05, 20_000);
    assert!((e.epsilon(0) - 0.9).abs() < 1e-12);
    assert!((e.epsilon(20_000) - 0.0585).abs() < 1e-12);
    assert!((e.epsilon(u64::MAX / 2) - 0.05).abs() < 1e-12);
    assert!((e.lambda() - 100f64.ln() / 20_000.0).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for t in (0..40_000).step_by(997) {
        let x = e.epsilon(t);
        assert!(x <= prev && x >= 0.05);
        prev = x;
    }
}

#[test]
fn snapshots_round_trip_exactly() {
    let mut l = TabularLearner::new(0.1, 0.99, 3, None);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..500u64 {
        let a = l.select_action(i % 17, 0.3, &mut rng);
        l.update(i % 17, a, (i % 5) as f64 * 0.1, (i * 7) % 17, i % 11 == 0);
    }
    let back = TabularLearner::from_text(&l.to_text()).unwrap();
    for s in 0..17 {
        for a in 0..3 {
            assert_eq!(back.q(s, a).to_bits(), l.q(s, a).to_bits());
        }
    }
}
