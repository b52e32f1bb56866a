//! Command-line surface: subcommands, exit codes, archive determinism.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn csnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csnn"))
}

fn read_all_archives(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.display().to_string(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_smoke_profile_under_ten_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("smoke.json");
    std::fs::write(
        &config_path,
        r#"{
            "seed": 3,
            "generator": {
                "participants": 11,
                "trials_nominal": 2,
                "trials_stressed": 2,
                "trials_stoplight": 2,
                "cnv_amplitude_range": [8.0, 14.0],
                "cnv_onset_jitter_ms": 120.0,
                "noise_sigma": 5.0,
                "stress_multiplier": 1.5,
                "seed": 0
            },
            "group_trials": 2
        }"#,
    )
    .unwrap();
    let out = dir.path().join("data");
    let start = Instant::now();
    let status = csnn()
        .args(["gen-data", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(status.success());
    assert!(elapsed < 10.0, "smoke gen-data took {elapsed:.1} s");

    // Eleven participant archives per scenario.
    for exp in ["exp1", "exp2", "exp3"] {
        let count = std::fs::read_dir(out.join(exp)).unwrap().count();
        assert_eq!(count, 11, "{exp} archive count");
    }

    // Re-running with the same seed produces byte-identical archives.
    let first = read_all_archives(&out);
    let status = csnn()
        .args(["gen-data", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let second = read_all_archives(&out);
    assert_eq!(first.len(), second.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "archive {name_a} changed across reruns");
    }

    // Archives round-trip through the reader.
    let (dataset, manifest) =
        csnn_core::archive::read_dataset(&out.join("exp1").join("p00")).unwrap();
    assert_eq!(manifest.channels, 19);
    assert_eq!(dataset.width, 996);
    assert_eq!(dataset.len(), 10); // 2 trials × 5 segments
}

#[test]
fn invalid_experiment_exits_with_validation_code() {
    let status = csnn().args(["gen-data", "--experiment", "9"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn bad_config_path_is_a_runtime_error() {
    let status = csnn()
        .args(["full-run", "--config", "/nonexistent/config.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn report_on_missing_bundle_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let status = csnn().arg("report").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unknown_study_rejected_by_parser() {
    let status = csnn().args(["full-run", "--study", "nope"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}
