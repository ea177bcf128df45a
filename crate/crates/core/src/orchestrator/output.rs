use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Strategy};
use super::loops::{AcquisitionRow, BaselineRow, RunResult, StepRow};
use crate::acquisition::AcquisitionFunction;
use crate::error::{Error, Result};
use crate::segmenter::save_checkpoint;

/// Fractions of the full-data Dice used for the pixels-to-target summary.
pub const TARGET_FRACTIONS: [f64; 3] = [0.75, 0.80, 0.85];

const RESULTS_HEADER: [&str; 15] = [
    "step", "strategy", "acq_fn", "seed", "labeled_pixels", "f1", "dice_obj", "jaccard", "nll",
    "ece", "brier", "rel", "res", "unc", "wallclock_s",
];
const ACQUISITION_HEADER: [&str; 10] = [
    "step", "strategy", "acq_fn", "seed", "image_id", "top", "left", "k_w", "k_h", "score",
];
const BASELINE_HEADER: [&str; 8] = ["seed", "labeled_pixels", "f1", "dice_obj", "jaccard", "nll", "ece", "brier"];
const TARGET_HEADER: [&str; 8] = [
    "strategy", "acq_fn", "seed", "fraction", "target_dice", "step", "labeled_pixels", "fraction_of_pool",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `header` then one record per row, so an empty input still yields a header.
fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `rows` as a results.csv file.
pub fn write_results_csv(path: &Path, rows: &[StepRow]) -> Result<()> {
    write_csv(path, &RESULTS_HEADER, rows)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub strategy: Strategy,
    pub acq_fn: AcquisitionFunction,
    pub seed: u64,
    pub fraction: f64,
    pub target_dice: f64,
    /// First step whose Dice reaches the target; empty when never reached.
    pub step: Option<usize>,
    pub labeled_pixels: Option<usize>,
    /// `labeled_pixels` relative to the fully annotated training split.
    pub fraction_of_pool: Option<f64>,
}

/// First step at which each run reaches each fraction of its seed's full-data Dice.
pub fn pixels_to_target(results: &[RunResult], baselines: &[BaselineRow], fractions: &[f64]) -> Vec<TargetRow> {
    let mut out = Vec::new();
    for run in results {
        let Some(base) = baselines.iter().find(|b| b.seed == run.seed) else {
            continue;
        };
        for &fraction in fractions {
            let target = fraction * base.dice_obj;
            let hit = run.rows.iter().find(|r| r.dice_obj >= target);
            out.push(TargetRow {
                strategy: run.strategy,
                acq_fn: run.acq_fn,
                seed: run.seed,
                fraction,
                target_dice: target,
                step: hit.map(|r| r.step),
                labeled_pixels: hit.map(|r| r.labeled_pixels),
                fraction_of_pool: hit.map(|r| r.labeled_pixels as f64 / base.labeled_pixels as f64),
            });
        }
    }
    out
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub results: Vec<RunResult>,
    pub baselines: Vec<BaselineRow>,
}

#[derive(Serialize)]
struct DiagramCsvRow {
    seed: u64,
    bin: usize,
    center: f64,
    confidence: Option<f64>,
    accuracy: Option<f64>,
    count: usize,
}

#[derive(Serialize)]
struct HistogramCsvRow {
    seed: u64,
    bin: usize,
    lower: f64,
    upper: f64,
    mass: f64,
}

#[derive(Serialize)]
struct RestartCsvRow {
    seed: u64,
    step: usize,
    restart: usize,
    restart_seed: u64,
    selection_loss: f64,
    final_train_loss: f64,
}

/// Writes results.csv, acquisition.csv, per-step reliability and histogram CSVs,
/// restarts.csv, baseline.csv, pixels_to_target.csv, config.json and checkpoints.
pub fn emit_results(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    let rows: Vec<&StepRow> = outcome.results.iter().flat_map(|r| &r.rows).collect();
    write_csv(&put("results.csv".into()), &RESULTS_HEADER, &rows)?;
    let acq: Vec<&AcquisitionRow> = outcome.results.iter().flat_map(|r| &r.acquisitions).collect();
    write_csv(&put("acquisition.csv".into()), &ACQUISITION_HEADER, &acq)?;

    let mut diagrams: BTreeMap<usize, Vec<DiagramCsvRow>> = BTreeMap::new();
    let mut histograms: BTreeMap<usize, Vec<HistogramCsvRow>> = BTreeMap::new();
    let mut restarts = Vec::new();
    for run in &outcome.results {
        for (step, diagram) in &run.reliability {
            diagrams.entry(*step).or_default().extend(diagram.iter().enumerate().map(|(bin, d)| DiagramCsvRow {
                seed: run.seed,
                bin,
                center: d.center,
                confidence: d.confidence,
                accuracy: d.accuracy,
                count: d.count,
            }));
        }
        for (step, hist) in &run.histograms {
            let k = hist.len() as f64;
            histograms.entry(*step).or_default().extend(hist.iter().enumerate().map(|(bin, m)| HistogramCsvRow {
                seed: run.seed,
                bin,
                lower: bin as f64 / k,
                upper: (bin + 1) as f64 / k,
                mass: *m,
            }));
        }
        for (step, logs) in &run.restarts {
            restarts.extend(logs.iter().map(|l| RestartCsvRow {
                seed: run.seed,
                step: *step,
                restart: l.restart,
                restart_seed: l.seed,
                selection_loss: l.selection_loss,
                final_train_loss: l.final_train_loss,
            }));
        }
    }
    for (step, rows) in &diagrams {
        let header = ["seed", "bin", "center", "confidence", "accuracy", "count"];
        write_csv(&put(format!("reliability_step{step}.csv")), &header, rows)?;
    }
    for (step, rows) in &histograms {
        let header = ["seed", "bin", "lower", "upper", "mass"];
        write_csv(&put(format!("histogram_step{step}.csv")), &header, rows)?;
    }
    let header = ["seed", "step", "restart", "restart_seed", "selection_loss", "final_train_loss"];
    write_csv(&put("restarts.csv".into()), &header, &restarts)?;
    write_csv(&put("baseline.csv".into()), &BASELINE_HEADER, &outcome.baselines)?;
    let targets = pixels_to_target(&outcome.results, &outcome.baselines, &TARGET_FRACTIONS);
    write_csv(&put("pixels_to_target.csv".into()), &TARGET_HEADER, &targets)?;

    let cfg_path = put("config.json".into());
    std::fs::write(&cfg_path, outcome.config.to_json()).map_err(|e| Error::io(&cfg_path, e))?;

    if outcome.config.save_checkpoints {
        let ck = dir.join("checkpoints");
        std::fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        for run in &outcome.results {
            let p = ck.join(format!("seed{}.bin", run.seed));
            save_checkpoint(&run.params, &p)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Per-step medians over seeds for one strategy and acquisition function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub strategy: Strategy,
    pub acq_fn: AcquisitionFunction,
    pub step: usize,
    pub seeds: usize,
    pub labeled_pixels: f64,
    pub f1: f64,
    pub dice_obj: f64,
    pub jaccard: f64,
    pub nll: f64,
    pub ece: f64,
    pub brier: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median learning curves, one per (strategy, acquisition function), ordered by step.
pub fn median_curves(rows: &[StepRow]) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(&str, &str, usize), Vec<&StepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.strategy.name(), r.acq_fn.name(), r.step)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let col = |f: fn(&StepRow) -> f64| median(&mut g.iter().map(|r| f(r)).collect::<Vec<_>>());
            CurvePoint {
                strategy: g[0].strategy,
                acq_fn: g[0].acq_fn,
                step: g[0].step,
                seeds: g.len(),
                labeled_pixels: col(|r| r.labeled_pixels as f64),
                f1: col(|r| r.f1),
                dice_obj: col(|r| r.dice_obj),
                jaccard: col(|r| r.jaccard),
                nll: col(|r| r.nll),
                ece: col(|r| r.ece),
                brier: col(|r| r.brier),
            }
        })
        .collect()
}

/// Reads every results.csv and baseline.csv under `dir` (one level of
/// subdirectories included) and renders median curves with pixels-to-target rows.
pub fn summarize_dir(dir: &Path) -> Result<String> {
    let mut dirs = vec![dir.to_path_buf()];
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subs.sort();
    dirs.extend(subs);
    let mut rows: Vec<StepRow> = Vec::new();
    let mut baselines: Vec<BaselineRow> = Vec::new();
    for d in &dirs {
        let r = d.join("results.csv");
        if r.exists() {
            rows.extend(read_csv::<StepRow>(&r)?);
        }
        let b = d.join("baseline.csv");
        if b.exists() {
            baselines.extend(read_csv::<BaselineRow>(&b)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("no results.csv found under {}", dir.display())));
    }
    let curves = median_curves(&rows);
    let mut out = String::new();
    out.push_str("strategy    acq_fn    step seeds  labeled_px   dice_obj  f1      nll     brier   ece\n");
    for c in &curves {
        out.push_str(&format!(
            "{:<11} {:<9} {:>4} {:>5} {:>11.0}  {:.4}    {:.4}  {:.4}  {:.4}  {:.4}\n",
            c.strategy.name(),
            c.acq_fn.name(),
            c.step,
            c.seeds,
            c.labeled_pixels,
            c.dice_obj,
            c.f1,
            c.nll,
            c.brier,
            c.ece
        ));
    }
    if !baselines.is_empty() {
        let mut dice: Vec<f64> = baselines.iter().map(|b| b.dice_obj).collect();
        let base = median(&mut dice);
        out.push_str(&format!("\nfull-data dice (median over {} seeds): {base:.4}\n", baselines.len()));
        for f in TARGET_FRACTIONS.iter().chain([0.9].iter()) {
            let target = f * base;
            let mut keys: Vec<(Strategy, AcquisitionFunction)> = Vec::new();
            for c in &curves {
                if !keys.contains(&(c.strategy, c.acq_fn)) {
                    keys.push((c.strategy, c.acq_fn));
                }
            }
            for (s, a) in keys {
                let hit = curves
                    .iter()
                    .find(|c| c.strategy == s && c.acq_fn == a && c.dice_obj >= target);
                let text = match hit {
                    Some(c) => format!("step {} with {:.0} px", c.step, c.labeled_pixels),
                    None => "not reached".into(),
                };
                out.push_str(&format!("{:.0}% target ({target:.4}) {} {}: {text}\n", f * 100.0, s.name(), a.name()));
            }
        }
    }
    Ok(out)
}
