//! Repeats, rolling-window summaries, sweeps and the files they leave behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::orchestrator::{run_repeat, RoundRecord};

pub const METRICS_HEADER: [&str; 9] = [
    "repeat",
    "round",
    "test_accuracy",
    "test_loss",
    "accepted_count",
    "malicious_sampled",
    "malicious_accepted",
    "agg_update_norm",
    "server_update_norm",
];

pub const SWEEP_HEADER: [&str; 4] = ["value", "final_acc_mean", "final_acc_min", "final_acc_max"];

/// Float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Running mean; exact for constant input.
fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut m = None;
    for (k, x) in values.into_iter().enumerate() {
        m = Some(match m {
            None => x,
            Some(m) => m + (x - m) / (k + 1) as f64,
        });
    }
    m
}

/// Trailing mean over the last `window` entries, skipping `None` and
/// averaging over what is available. `None` where a window holds no value.
pub fn rolling_mean(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    assert!(window >= 1, "window must be >= 1");
    (0..values.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(window);
            mean(values[start..=t].iter().flatten().copied())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Band {
        assert!(!values.is_empty(), "band of nothing");
        Band {
            mean: mean(values.iter().copied()).expect("non-empty"),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    #[serde(flatten)]
    pub accuracy: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub repeats: usize,
    pub rounds: usize,
    pub rolling_window: usize,
    /// Rolling accuracy across repeats, per round.
    pub per_round: Vec<RoundSummary>,
    /// The last entry of `per_round`; `None` for a zero-round run.
    pub final_accuracy: Option<Band>,
}

/// All repeats of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub records: Vec<Vec<RoundRecord>>,
    pub summary: Summary,
}

pub fn summarize(records: &[Vec<RoundRecord>], window: usize) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::config("run.repeats", "nothing to summarize"));
    }
    let rounds = records[0].len();
    let rolling: Vec<Vec<Option<f64>>> = records
        .iter()
        .map(|rs| {
            let acc: Vec<Option<f64>> = rs.iter().map(|r| r.test_accuracy).collect();
            rolling_mean(&acc, window)
        })
        .collect();
    let per_round: Vec<RoundSummary> = (0..rounds)
        .filter_map(|t| {
            let vals: Option<Vec<f64>> = rolling.iter().map(|s| s[t]).collect();
            vals.map(|v| RoundSummary {
                round: t,
                accuracy: Band::of(&v),
            })
        })
        .collect();
    let final_accuracy = per_round.last().map(|r| r.accuracy.clone());
    Ok(Summary {
        repeats: records.len(),
        rounds,
        rolling_window: window,
        per_round,
        final_accuracy,
    })
}

/// Runs every repeat of `config`; repeats run concurrently under
/// [`Execution::Parallel`].
pub fn run_experiment_repeats(
    config: &ExperimentConfig,
    execution: Execution,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let repeats: Vec<usize> = (0..config.run.repeats).collect();
    let records = execution
        .map(&repeats, |&r| run_repeat(config, r, execution))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records, config.run.rolling_window)?;
    Ok(ExperimentOutcome { records, summary })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_metrics(path: &Path, records: &[Vec<RoundRecord>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for (repeat, rs) in records.iter().enumerate() {
        for r in rs {
            w.write_record([
                repeat.to_string(),
                r.round.to_string(),
                opt(r.test_accuracy),
                opt(r.test_loss),
                r.accepted_ids.len().to_string(),
                r.num_malicious_sampled.to_string(),
                r.num_malicious_accepted.to_string(),
                fmt_f64(r.aggregate_update_norm),
                fmt_f64(r.server_update_norm),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `objective.csv`: the honest global objective per round, when logged.
fn write_objective(path: &Path, records: &[Vec<RoundRecord>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["repeat", "round", "honest_objective"])?;
    for (repeat, rs) in records.iter().enumerate() {
        for r in rs {
            w.write_record([
                repeat.to_string(),
                r.round.to_string(),
                opt(r.honest_objective),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs `config` and writes `metrics.csv`, `summary.json` and
/// `config.resolved` (plus `objective.csv` when the honest objective is
/// logged) into `out_dir`.
pub fn run_and_persist(
    config: &ExperimentConfig,
    out_dir: &Path,
    execution: Execution,
) -> Result<Summary> {
    let config = config.resolve();
    config.validate()?;
    create_dir(out_dir)?;
    write_text(&out_dir.join("config.resolved"), &config.to_toml())?;
    let outcome = run_experiment_repeats(&config, execution)?;
    write_metrics(&out_dir.join("metrics.csv"), &outcome.records)?;
    if config.run.log_honest_objective {
        write_objective(&out_dir.join("objective.csv"), &outcome.records)?;
    }
    let json = serde_json::to_string_pretty(&outcome.summary)?;
    write_text(&out_dir.join("summary.json"), &(json + "\n"))?;
    Ok(outcome.summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub final_accuracy: Option<Band>,
}

/// Directory name of one sweep point.
pub fn point_dir(out_dir: &Path, axis: &str, index: usize, value: f64) -> PathBuf {
    out_dir.join(format!("{index:03}_{axis}={value}"))
}

/// One full run per value of `axis`, all under the base config's master
/// seed. Each point's files go to its own subdirectory; `sweep.csv` lists
/// the points in the order given.
pub fn sweep(
    base: &ExperimentConfig,
    axis: &str,
    values: &[f64],
    out_dir: &Path,
    execution: Execution,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "at least one value is required"));
    }
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = base.resolve();
            c.set_axis(axis, v)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(out_dir)?;

    let mut rows = Vec::with_capacity(values.len());
    for (i, (config, &value)) in configs.iter().zip(values).enumerate() {
        let summary = run_and_persist(config, &point_dir(out_dir, axis, i, value), execution)?;
        rows.push(SweepRow {
            value,
            final_accuracy: summary.final_accuracy,
        });
    }

    let path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in &rows {
        let band = r.final_accuracy.as_ref();
        w.write_record([
            fmt_f64(r.value),
            opt(band.map(|b| b.mean)),
            opt(band.map(|b| b.min)),
            opt(band.map(|b| b.max)),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
