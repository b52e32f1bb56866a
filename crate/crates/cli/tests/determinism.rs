//! End-to-end determinism: the same configuration and seed produce
//! byte-identical metric, energy and audit tables (wall-clock timings are
//! the documented exception and live in their own file).

use csnn_cli::config::{RunConfig, StudyChoice};
use csnn_cli::harness::full_run;
use csnn_cli::report::write_bundle;
use csnn_core::eeg::GeneratorConfig;

fn quick_config(out: std::path::PathBuf) -> RunConfig {
    RunConfig {
        experiment: 1,
        study: StudyChoice::Both,
        seed: 41,
        out_dir: out,
        repeats: 1,
        generator: GeneratorConfig {
            trials_nominal: 4,
            trials_stressed: 3,
            trials_stoplight: 3,
            seed: 0,
            ..GeneratorConfig::default()
        },
        group_trials: 2,
        edge: csnn_cli::config::EdgeRunConfig {
            neurons_per_class: 60,
            epochs: 4,
            ..Default::default()
        },
        stage1: csnn_cli::config::Stage1Config {
            epochs: 2,
            learning_rate: 2e-4,
            momentum: 0.9,
            batch_size: 8,
        },
        ..Default::default()
    }
}

#[test]
fn identical_seeds_give_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let out = dir.path().join(tag);
        let config = quick_config(out.clone());
        let summary = full_run(&config).unwrap();
        write_bundle(&out, &summary).unwrap();
        (
            std::fs::read(out.join("metrics.csv")).unwrap(),
            std::fs::read(out.join("energy.csv")).unwrap(),
            std::fs::read(out.join("audit/predictions.csv")).unwrap(),
        )
    };
    let (m1, e1, a1) = run("a");
    let (m2, e2, a2) = run("b");
    assert_eq!(m1, m2, "metrics.csv differs between reruns");
    assert_eq!(e1, e2, "energy.csv differs between reruns");
    assert_eq!(a1, a2, "audit/predictions.csv differs between reruns");
}

#[test]
fn stressed_and_stoplight_scenarios_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    for experiment in [2u64, 3] {
        let mut config = quick_config(dir.path().join(format!("exp{experiment}")));
        config.experiment = experiment;
        config.study = StudyChoice::Fcas;
        let summary = full_run(&config).unwrap();
        // One split, three drivers, epochs 0..=4 recorded each.
        let epoch_rows = summary
            .metrics
            .iter()
            .filter(|r| r.stage.starts_with("epoch"))
            .count();
        assert_eq!(epoch_rows, 3 * 5, "experiment {experiment}");
        assert_eq!(summary.energy.len(), 3);
        // The stoplight scenario keeps its natural class balance: no
        // duplication means roughly equal confusion-count denominators.
        if experiment == 3 {
            for row in summary.metrics.iter().filter(|r| r.stage == "stage1") {
                let m = &row.metrics;
                let positives = m.tp + m.fn_;
                let negatives = m.tn + m.fp;
                let ratio = positives as f64 / negatives as f64;
                assert!((0.5..=2.0).contains(&ratio), "balance {positives}/{negatives}");
            }
        }
    }
}

#[test]
fn report_on_single_repeat_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = quick_config(out.clone());
    let summary = full_run(&config).unwrap();
    write_bundle(&out, &summary).unwrap();
    let report_dir = out.join("report");
    csnn_cli::report::write_report(&out, &report_dir, &[3]).unwrap();

    let tables = std::fs::read_to_string(report_dir.join("tables.csv")).unwrap();
    let mut lines = tables.lines();
    assert_eq!(lines.next().unwrap(), "stage,study,metric,mean,sd,p_value");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // Fixed row order: stage1 first, stage2 next, then reported epochs.
    let stages: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    let first_stage2 = stages.iter().position(|s| *s == "stage2").unwrap();
    assert!(stages[..first_stage2].iter().all(|s| *s == "stage1"));
    // A single-repeat bundle has one group-stage value per study, so the
    // SD column is exactly zero there.
    for r in &rows {
        if r[0] == "stage1" || r[0] == "stage2" {
            assert_eq!(r[4], "0.000000", "stage row SD should be zero: {r:?}");
        }
        // The p-value column exists on every row (both studies ran, and
        // epoch rows have three models per study).
        assert_eq!(r.len(), 6);
    }
    // Epoch rows compare 3 models per study, so a p-value is present.
    assert!(rows
        .iter()
        .filter(|r| r[0] == "epoch3")
        .all(|r| !r[5].is_empty()));

    let curves = std::fs::read_to_string(report_dir.join("curves.csv")).unwrap();
    assert!(curves.lines().count() > 1);
    let energy = std::fs::read_to_string(report_dir.join("energy_summary.csv")).unwrap();
    assert!(energy.lines().any(|l| l.starts_with("acs,event")));
}

#[test]
fn different_seed_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let mut config = quick_config(out_a.clone());
    let a = full_run(&config).unwrap();
    config.seed = 42;
    config.out_dir = dir.path().join("b");
    let b = full_run(&config).unwrap();
    let acc = |s: &csnn_cli::harness::RunSummary| -> Vec<String> {
        s.metrics.iter().map(|r| format!("{}:{:.9}", r.stage, r.metrics.accuracy)).collect()
    };
    assert_ne!(acc(&a), acc(&b));
}
