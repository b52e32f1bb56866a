//! Bundle serialization and report aggregation.
//!
//! A run bundle holds four CSV files plus the resolved configuration:
//! `metrics.csv` (per stage/partition confusion counts and rates),
//! `energy.csv` (deterministic operation counts and proxy energies),
//! `timings.csv` (measured wall-clock, excluded from the byte-determinism
//! guarantee) and `audit/predictions.csv` (every per-sample prediction each
//! table number derives from). The `report` command aggregates a bundle
//! into mean/SD tables with study-difference p-values, an energy summary,
//! and per-epoch learning curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use csnn_core::stats::{aggregate, welch_t_test};

use crate::harness::RunSummary;

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

/// Write the whole bundle under `dir`.
pub fn write_bundle(dir: &Path, summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir.join("audit")).with_context(|| format!("creating {}", dir.display()))?;

    let config_json = serde_json::to_string_pretty(&summary.config)?;
    fs::write(dir.join("run_config.json"), config_json)?;

    let mut metrics = String::from(
        "experiment,study,split,driver,stage,partition,seed,tp,tn,fp,fn,accuracy,tpr,tnr\n",
    );
    for r in &summary.metrics {
        let m = &r.metrics;
        writeln!(
            metrics,
            "{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{}",
            r.experiment,
            r.study,
            r.split,
            r.driver.map_or(String::new(), |d| d.to_string()),
            r.stage,
            r.partition,
            r.seed,
            m.tp,
            m.tn,
            m.fp,
            m.fn_,
            m.accuracy,
            fmt_opt(m.tpr),
            fmt_opt(m.tnr),
        )?;
    }
    fs::write(dir.join("metrics.csv"), metrics)?;

    let mut energy = String::from(
        "experiment,study,split,driver,samples,dense_total_macs,event_dense_macs,\
         event_accumulates,event_weight_fetches,conv2_dense_macs,conv2_event_accumulates,\
         conv2_trace_expected,readout_dense_macs,readout_event_accumulates,\
         pool1_spike_count,pool1_total_units,dense_proxy,event_proxy,proxy_percent_reduction\n",
    );
    for r in &summary.energy {
        writeln!(
            energy,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{:.3},{:.4}",
            r.experiment,
            r.study,
            r.split,
            r.driver,
            r.samples,
            r.dense_total_macs,
            r.event_dense_macs,
            r.event_accumulates,
            r.event_weight_fetches,
            r.conv2_dense_macs,
            r.conv2_event_accumulates,
            r.conv2_trace_expected,
            r.readout_dense_macs,
            r.readout_event_accumulates,
            r.pool1_spike_count,
            r.pool1_total_units,
            r.dense_proxy,
            r.event_proxy,
            r.proxy_percent_reduction,
        )?;
    }
    fs::write(dir.join("energy.csv"), energy)?;

    let mut timings = String::from(
        "experiment,study,split,driver,dense_seconds,event_seconds,latency_ratio\n",
    );
    for r in &summary.timings {
        writeln!(
            timings,
            "{},{},{},{},{:.6},{:.6},{:.4}",
            r.experiment, r.study, r.split, r.driver, r.dense_seconds, r.event_seconds, r.latency_ratio,
        )?;
    }
    fs::write(dir.join("timings.csv"), timings)?;

    let mut audit = String::from("experiment,study,split,driver,stage,index,label,prediction\n");
    for r in &summary.predictions {
        writeln!(
            audit,
            "{},{},{},{},{},{},{},{}",
            r.experiment,
            r.study,
            r.split,
            r.driver.map_or(String::new(), |d| d.to_string()),
            r.stage,
            r.index,
            r.label,
            r.prediction,
        )?;
    }
    fs::write(dir.join("audit").join("predictions.csv"), audit)?;
    Ok(())
}

fn parse_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| anyhow::anyhow!("{} is empty", path.display()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| anyhow::anyhow!("missing column {name}"))
}

/// A metrics.csv row restored from disk.
#[derive(Debug, Clone)]
pub struct StoredMetricRow {
    pub study: String,
    pub split: usize,
    pub driver: Option<u32>,
    pub stage: String,
    pub partition: String,
    pub accuracy: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

pub fn read_metric_rows(bundle: &Path) -> Result<Vec<StoredMetricRow>> {
    let (header, rows) = parse_csv(&bundle.join("metrics.csv"))?;
    let study = column(&header, "study")?;
    let split = column(&header, "split")?;
    let driver = column(&header, "driver")?;
    let stage = column(&header, "stage")?;
    let partition = column(&header, "partition")?;
    let accuracy = column(&header, "accuracy")?;
    let tpr = column(&header, "tpr")?;
    let tnr = column(&header, "tnr")?;
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            Ok(Some(s.parse::<f64>()?))
        }
    };
    rows.iter()
        .map(|r| {
            Ok(StoredMetricRow {
                study: r[study].clone(),
                split: r[split].parse()?,
                driver: if r[driver].is_empty() { None } else { Some(r[driver].parse()?) },
                stage: r[stage].clone(),
                partition: r[partition].clone(),
                accuracy: r[accuracy].parse()?,
                tpr: parse_opt(&r[tpr])?,
                tnr: parse_opt(&r[tnr])?,
            })
        })
        .collect()
}

const METRIC_NAMES: [&str; 3] = ["accuracy", "tpr", "tnr"];

fn metric_value(row: &StoredMetricRow, metric: &str) -> Option<f64> {
    match metric {
        "accuracy" => Some(row.accuracy),
        "tpr" => row.tpr,
        "tnr" => row.tnr,
        _ => None,
    }
}

/// Aggregate a bundle into the three report CSVs under `out`.
///
/// `tables.csv` rows follow the fixed order stage-1, stage-2, then the
/// reported epochs, with one row per study and metric and a Welch p-value
/// comparing the two studies.
pub fn write_report(bundle: &Path, out: &Path, report_epochs: &[usize]) -> Result<()> {
    let rows = read_metric_rows(bundle)?;
    if rows.is_empty() {
        bail!("bundle {} has no metric rows", bundle.display());
    }
    fs::create_dir_all(out)?;

    let mut stages: Vec<String> = vec!["stage1".into(), "stage2".into()];
    stages.extend(report_epochs.iter().map(|e| format!("epoch{e}")));

    let mut tables = String::from("stage,study,metric,mean,sd,p_value\n");
    for stage in &stages {
        for metric in METRIC_NAMES {
            let collect = |study: &str| -> Vec<f64> {
                rows.iter()
                    .filter(|r| {
                        r.stage == *stage && r.study == study && r.partition == "eval"
                    })
                    .filter_map(|r| metric_value(r, metric))
                    .collect()
            };
            let acs = collect("acs");
            let fcas = collect("fcas");
            let p = if acs.len() >= 2 && fcas.len() >= 2 {
                welch_t_test(&acs, &fcas).map(|t| t.p).ok()
            } else {
                None
            };
            for (study, values) in [("acs", &acs), ("fcas", &fcas)] {
                if values.is_empty() {
                    continue;
                }
                let (mean, sd) = aggregate(values)?;
                writeln!(
                    tables,
                    "{stage},{study},{metric},{mean:.6},{sd:.6},{}",
                    fmt_opt(p)
                )?;
            }
        }
    }
    fs::write(out.join("tables.csv"), tables)?;

    // Energy summary: proxy means/SDs per study plus the percent reduction
    // recomputed from the mean columns; latency ratio from timing means.
    let (eh, erows) = parse_csv(&bundle.join("energy.csv"))?;
    let e_study = column(&eh, "study")?;
    let e_dense = column(&eh, "dense_proxy")?;
    let e_event = column(&eh, "event_proxy")?;
    let (th, trows) = parse_csv(&bundle.join("timings.csv"))?;
    let t_study = column(&th, "study")?;
    let t_dense = column(&th, "dense_seconds")?;
    let t_event = column(&th, "event_seconds")?;

    let mut energy_summary = String::from(
        "study,path,proxy_mean,proxy_sd,percent_reduction,wall_mean_s,wall_sd_s,latency_ratio\n",
    );
    for study in ["acs", "fcas"] {
        let dense: Vec<f64> = erows
            .iter()
            .filter(|r| r[e_study] == study)
            .map(|r| r[e_dense].parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        let event: Vec<f64> = erows
            .iter()
            .filter(|r| r[e_study] == study)
            .map(|r| r[e_event].parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        if dense.is_empty() {
            continue;
        }
        let dense_wall: Vec<f64> = trows
            .iter()
            .filter(|r| r[t_study] == study)
            .map(|r| r[t_dense].parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        let event_wall: Vec<f64> = trows
            .iter()
            .filter(|r| r[t_study] == study)
            .map(|r| r[t_event].parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        let (dense_mean, dense_sd) = aggregate(&dense)?;
        let (event_mean, event_sd) = aggregate(&event)?;
        let pr = csnn_core::stats::percent_reduction(dense_mean, event_mean)?;
        let (dw_mean, dw_sd) = aggregate(&dense_wall)?;
        let (ew_mean, ew_sd) = aggregate(&event_wall)?;
        let lr = csnn_core::stats::latency_ratio(ew_mean, dw_mean)?;
        writeln!(
            energy_summary,
            "{study},dense,{dense_mean:.3},{dense_sd:.3},,{dw_mean:.6},{dw_sd:.6},"
        )?;
        writeln!(
            energy_summary,
            "{study},event,{event_mean:.3},{event_sd:.3},{pr:.2},{ew_mean:.6},{ew_sd:.6},{lr:.3}"
        )?;
    }
    fs::write(out.join("energy_summary.csv"), energy_summary)?;

    // Learning curves: per-epoch mean/SD per study and metric.
    let max_epoch = rows
        .iter()
        .filter_map(|r| r.stage.strip_prefix("epoch").and_then(|e| e.parse::<usize>().ok()))
        .max()
        .unwrap_or(0);
    let mut curves = String::from("study,epoch,metric,mean,sd\n");
    for epoch in 0..=max_epoch {
        let stage = format!("epoch{epoch}");
        for study in ["acs", "fcas"] {
            for metric in METRIC_NAMES {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.stage == stage && r.study == study)
                    .filter_map(|r| metric_value(r, metric))
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, sd) = aggregate(&values)?;
                writeln!(curves, "{study},{epoch},{metric},{mean:.6},{sd:.6}")?;
            }
        }
    }
    fs::write(out.join("curves.csv"), curves)?;
    Ok(())
}

/// Convenience: bundle directory layout rooted at the configured out_dir.
pub fn bundle_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("bundle")
}
