use std::fs;

use spotter_core::harness::{
    run_experiment, run_seeds, summarize_files, ExperimentConfig, HarnessError, RunMode, METRICS_HEADER,
};
use spotter_core::par::Mode;

fn small(mode: RunMode) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        puzzles: vec![1, 2],
        episodes: vec![30, 60],
        width: 7,
        height: 5,
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    }
}

#[test]
fn row_count_is_total_episodes() {
    for mode in [RunMode::Spotter, RunMode::Vql, RunMode::Hlaql, RunMode::Hlalql] {
        for o in run_seeds(&small(mode)).unwrap() {
            assert_eq!(o.rows.len(), 90, "{mode:?}");
            assert!(o.rows.iter().take(30).all(|r| r.puzzle == 1));
            assert!(o.rows.iter().all(|r| r.wall_ms == 0));
        }
    }
}

#[test]
fn sequential_and_parallel_agree() {
    let mut a = small(RunMode::Spotter);
    a.seeds = vec![0, 1, 2, 3];
    let mut b = a.clone();
    a.par = Mode::Sequential;
    b.par = Mode::Parallel;
    let (ra, rb) = (run_seeds(&a).unwrap(), run_seeds(&b).unwrap());
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x.rows, y.rows);
    }
}

#[test]
fn vql_finds_reward_on_the_first_puzzle() {
    let cfg = ExperimentConfig {
        mode: RunMode::Vql,
        puzzles: vec![1],
        episodes: vec![500],
        seeds: vec![7],
        ..ExperimentConfig::default()
    };
    let o = &run_seeds(&cfg).unwrap()[0];
    assert!(o.rows.iter().any(|r| r.reward > 0.0));
    assert!(o.rows.iter().all(|r| !r.impasse));
}

#[test]
fn high_level_baselines_differ_from_flat() {
    let cfg = |mode| ExperimentConfig {
        puzzles: vec![1],
        episodes: vec![300],
        seeds: vec![0],
        ..small(mode)
    };
    let flat = run_seeds(&cfg(RunMode::Vql)).unwrap();
    let hla = run_seeds(&cfg(RunMode::Hlaql)).unwrap();
    let hlal = run_seeds(&cfg(RunMode::Hlalql)).unwrap();
    assert!(hla[0].rows.iter().all(|r| r.operators_known > 0));
    assert_ne!(flat[0].rows, hla[0].rows);
    assert_ne!(hla[0].rows, hlal[0].rows);
}

#[test]
fn outputs_are_written_and_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(RunMode::Spotter);
    cfg.out_dir = dir.path().to_path_buf();
    cfg.defer_operators = true;
    cfg.log_every = 10;
    let files = run_experiment(&cfg).unwrap();
    let metrics: Vec<_> = files
        .iter()
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("metrics-"))
        .cloned()
        .collect();
    assert_eq!(metrics.len(), 2);
    let text = fs::read_to_string(&metrics[0]).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    assert_eq!(text.lines().count(), 91);
    assert!(dir.path().join("precon-seed0.csv").exists());
    let summary = summarize_files(&metrics, true).unwrap();
    assert!(summary.starts_with("puzzle,episode,mean_reward,std_reward,normalized\n"));
    assert_eq!(summary.lines().count(), 91);
}

#[test]
fn summarize_rejects_missing_and_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert!(matches!(summarize_files(&[missing], false), Err(HarnessError::Io { .. })));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b\n1,2\n").unwrap();
    assert!(matches!(summarize_files(&[bad], false), Err(HarnessError::Metrics { .. })));
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, format!("{METRICS_HEADER}\n")).unwrap();
    assert!(matches!(summarize_files(&[empty], false), Err(HarnessError::EmptyInput)));
}

#[test]
fn invalid_configs_are_usage_errors() {
    let mut c = small(RunMode::Spotter);
    c.episodes = vec![10];
    assert!(matches!(run_seeds(&c), Err(HarnessError::Usage(_))));
    let mut c = small(RunMode::Spotter);
    c.puzzles = vec![4, 1];
    assert!(matches!(run_seeds(&c), Err(HarnessError::Usage(_))));
    let mut c = small(RunMode::Spotter);
    c.eps_min = 0.95;
    assert!(matches!(run_seeds(&c), Err(HarnessError::Usage(_))));
    let mut c = small(RunMode::Spotter);
    c.width = 3;
    assert!(matches!(run_seeds(&c), Err(HarnessError::Usage(_))));
}
