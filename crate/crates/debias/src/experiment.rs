//! Multi-seed experiments and hyperparameter sweeps.
//!
//! An experiment trains one method on one dataset for several seeds in
//! parallel and writes, under `<output_dir>/<name>-<hash>/`:
//!
//! - `config.json`: the experiment config as run
//! - `seed-<s>.ndjson`: the run record of seed `s`
//! - `seed-<s>.ckpt.json`: the selected parameters of seed `s`
//! - `summary.json`: per-seed results plus mean and population std
//!
//! `<hash>` is the first 12 hex digits of the SHA-256 of the canonical config
//! JSON, so identical configs map to the same directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use debias_core::data::{generate, BiasGenSpec, SplitDataset};
use debias_core::metrics::{evaluate, GroupAccuracyTable};
use debias_core::model::{Mlp, Parameters};
use debias_core::moo::{MetricSummary, RunGroups, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::save_checkpoint;
use crate::dataset_file::read_dataset;
use crate::error::{Error, Result};
use crate::records::write_records;

/// Where the data of an experiment comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    Preset {
        preset: String,
        #[serde(default)]
        seed: u64,
    },
    Spec {
        spec: BiasGenSpec,
    },
    Path {
        path: PathBuf,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<SplitDataset> {
        match self {
            DatasetSource::Preset { preset, seed } => Ok(generate(&BiasGenSpec::preset(preset, *seed)?)?),
            DatasetSource::Spec { spec } => Ok(generate(spec)?),
            DatasetSource::Path { path } => read_dataset(path),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Prefix of the run directory; the method name when absent.
    #[serde(default)]
    pub name: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// 12 hex digits identifying the config; the output directory is not part of it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hash12(&c)
    }

    pub fn run_dir(&self) -> PathBuf {
        let prefix = self.name.clone().unwrap_or_else(|| self.train.method.name().to_string());
        self.output_dir.join(format!("{prefix}-{}", self.hash()))
    }

    pub fn seed_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}

/// First 12 hex digits of the SHA-256 of `value`'s JSON.
pub fn hash12<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&json))[..12].to_string()
}

/// Number of worker threads: `DEBIAS_WORKERS` if set, else the machine's parallelism.
pub fn worker_count() -> usize {
    std::env::var("DEBIAS_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Applies `f` to every item on up to `workers` threads; output order matches input.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item processed")).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Stat { mean, std: var.sqrt(), n }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub unbiased: Stat,
    pub indist: Stat,
    pub worst: Stat,
    /// Per group label, over the seeds where the group is non-empty.
    pub groups: BTreeMap<String, Stat>,
}

impl MetricStats {
    fn of(tables: &[&GroupAccuracyTable]) -> MetricStats {
        let pick = |f: fn(&GroupAccuracyTable) -> f64| Stat::of(&tables.iter().map(|t| f(t)).collect::<Vec<_>>());
        let mut per_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for t in tables {
            for g in &t.groups {
                if let Some(a) = g.accuracy {
                    per_group.entry(g.label.clone()).or_default().push(a);
                }
            }
        }
        MetricStats {
            unbiased: pick(|t| t.unbiased),
            indist: pick(|t| t.indist),
            worst: pick(|t| t.worst),
            groups: per_group.into_iter().map(|(k, v)| (k, Stat::of(&v))).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// `None` on success.
    pub error: Option<String>,
    pub selection_value: Option<f64>,
    pub val: Option<MetricSummary>,
    pub test: Option<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub hash: String,
    pub seeds: Vec<SeedResult>,
    pub selection: Stat,
    pub val: MetricStats,
    pub test: MetricStats,
}

/// Outcome of one seed, kept in memory.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: std::result::Result<debias_core::moo::TrainOutput, String>,
}

fn summarize(config: &ExperimentConfig, runs: &[SeedRun]) -> Summary {
    let ok: Vec<_> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let seeds = runs
        .iter()
        .map(|r| match &r.outcome {
            Ok(o) => SeedResult {
                seed: r.seed,
                error: None,
                selection_value: Some(o.record.selection.value),
                val: Some((&o.record.val).into()),
                test: Some((&o.record.test).into()),
            },
            Err(e) => SeedResult { seed: r.seed, error: Some(e.clone()), selection_value: None, val: None, test: None },
        })
        .collect();
    Summary {
        method: config.train.method.name().to_string(),
        hash: config.hash(),
        seeds,
        selection: Stat::of(&ok.iter().map(|o| o.record.selection.value).collect::<Vec<_>>()),
        val: MetricStats::of(&ok.iter().map(|o| &o.record.val).collect::<Vec<_>>()),
        test: MetricStats::of(&ok.iter().map(|o| &o.record.test).collect::<Vec<_>>()),
    }
}

/// Trains every seed of `config` on `data` without touching the disk.
pub fn run_seeds(config: &ExperimentConfig, data: &SplitDataset, workers: usize) -> Vec<SeedRun> {
    parallel_map(&config.seeds, workers, |&seed| SeedRun {
        seed,
        outcome: debias_core::moo::train(&config.seed_config(seed), data).map_err(|e| e.to_string()),
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub dir: PathBuf,
    pub summary: Summary,
    pub runs: Vec<SeedRun>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs all seeds and writes the run directory.
///
/// Failed seeds are recorded in the summary; the others are written as usual.
/// Returns [`Error::SeedsFailed`] after writing if any seed failed.
pub fn run_experiment(config: &ExperimentConfig, force: bool) -> Result<ExperimentResult> {
    config.validate()?;
    let dir = config.run_dir();
    if dir.exists() {
        if !force {
            return Err(Error::Exists(dir));
        }
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let data = config.dataset.load()?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&dir.join("config.json"), config)?;

    let runs = run_seeds(config, &data, worker_count());
    for run in &runs {
        if let Ok(out) = &run.outcome {
            let cfg = config.seed_config(run.seed);
            write_records(&dir.join(format!("seed-{}.ndjson", run.seed)), &cfg, &out.record)?;
            save_checkpoint(&dir.join(format!("seed-{}.ckpt.json", run.seed)), &out.spec, &out.params)?;
        }
    }
    let summary = summarize(config, &runs);
    write_json(&dir.join("summary.json"), &summary)?;
    let failed = runs.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        return Err(Error::SeedsFailed { failed, total: runs.len(), dir });
    }
    Ok(ExperimentResult { dir, summary, runs })
}

/// Val, optional in-distribution val, and test tables of `params` under `config`'s grouping.
pub fn evaluate_params(
    config: &TrainConfig,
    data: &SplitDataset,
    model: &Mlp,
    params: &Parameters,
) -> Result<(GroupAccuracyTable, Option<GroupAccuracyTable>, GroupAccuracyTable)> {
    let groups = RunGroups::build(config, data)?;
    let table = |d| -> Result<GroupAccuracyTable> {
        let idx = groups.eval_index(d)?;
        evaluate(model, params.flat(), d, &idx, &groups.train_proportions)
            .map_err(|e| Error::Train(e.into()))
    };
    let vi = if data.val_indist.is_empty() { None } else { Some(table(&data.val_indist)?) };
    Ok((table(&data.val)?, vi, table(&data.test)?))
}

/// Hyperparameter grid. Empty axes keep the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    #[serde(rename = "U")]
    pub period: Vec<usize>,
    pub weight_decay: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub grid: Grid,
    /// Seeds used to score grid cells; the winner is rerun with `base.seeds`.
    #[serde(default = "default_search_seeds")]
    pub search_seeds: Vec<u64>,
    /// Use `eta2 / U` for every cell, keeping `eta2 * U` fixed along the U axis.
    #[serde(default)]
    pub eta2_inverse_u: bool,
}

fn default_search_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub eta1: f64,
    pub eta2: f64,
    #[serde(rename = "U")]
    pub period: usize,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    /// Mean validation selection value; `None` if any seed failed.
    pub score: Option<f64>,
    pub errors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: Vec<CellResult>,
    pub best: Option<Cell>,
    pub best_dir: Option<PathBuf>,
}

impl SweepConfig {
    pub fn cells(&self) -> Vec<Cell> {
        let t = &self.base.train;
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let periods = if self.grid.period.is_empty() { vec![t.period] } else { self.grid.period.clone() };
        let mut out = Vec::new();
        for &eta1 in &or(&self.grid.eta1, t.eta1) {
            for &eta2 in &or(&self.grid.eta2, t.eta2) {
                for &period in &periods {
                    for &weight_decay in &or(&self.grid.weight_decay, t.weight_decay) {
                        let eta2 = if self.eta2_inverse_u { eta2 / period as f64 } else { eta2 };
                        out.push(Cell { eta1, eta2, period, weight_decay });
                    }
                }
            }
        }
        out
    }

    pub fn cell_config(&self, cell: &Cell) -> ExperimentConfig {
        let mut c = self.base.clone();
        c.train.eta1 = cell.eta1;
        c.train.eta2 = cell.eta2;
        c.train.period = cell.period;
        c.train.weight_decay = cell.weight_decay;
        c
    }
}

/// Scores every grid cell on `search_seeds`, then reruns the best cell with the
/// full seed list through [`run_experiment`]. A failing cell is marked and skipped.
pub fn sweep(config: &SweepConfig, force: bool) -> Result<SweepSummary> {
    config.base.validate()?;
    if config.search_seeds.is_empty() {
        return Err(Error::Config("search_seeds must not be empty".into()));
    }
    let data = config.base.dataset.load()?;
    let cells = config.cells();
    let jobs: Vec<(usize, u64)> =
        (0..cells.len()).flat_map(|c| config.search_seeds.iter().map(move |&s| (c, s))).collect();
    let outcomes = parallel_map(&jobs, worker_count(), |&(c, seed)| {
        let mut tc = config.cell_config(&cells[c]).train;
        tc.seed = seed;
        debias_core::moo::train(&tc, &data).map(|o| o.record.selection.value).map_err(|e| e.to_string())
    });

    let mut results: Vec<CellResult> =
        cells.iter().map(|c| CellResult { cell: c.clone(), score: None, errors: Vec::new() }).collect();
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); cells.len()];
    for (&(c, _), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(v) => scores[c].push(v),
            Err(e) => results[c].errors.push(e),
        }
    }
    for (r, s) in results.iter_mut().zip(&scores) {
        if r.errors.is_empty() {
            r.score = Some(s.iter().sum::<f64>() / s.len() as f64);
        }
    }
    let best = results
        .iter()
        .filter_map(|r| r.score.map(|s| (s, &r.cell)))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.clone());

    let best_exp = best.as_ref().map(|c| config.cell_config(c));
    let summary = SweepSummary { cells: results, best, best_dir: best_exp.as_ref().map(|e| e.run_dir()) };
    let out = &config.base.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(format!("sweep-{}.json", hash12(config))), &summary)?;
    if let Some(exp) = best_exp {
        run_experiment(&exp, force)?;
    }
    Ok(summary)
}
