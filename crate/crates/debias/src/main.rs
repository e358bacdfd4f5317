use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use debias::checkpoint::{load_checkpoint, save_checkpoint};
use debias::dataset_file::{read_dataset, write_dataset};
use debias::experiment::{evaluate_params, run_experiment, sweep, DatasetSource, ExperimentConfig, SweepConfig};
use debias::export::export_trajectories;
use debias::records::write_records;
use debias::{Error, Result};
use debias_core::data::{generate, BiasGenSpec, SplitDataset};
use debias_core::moo::{train, Method, TrainConfig};
use serde::de::DeserializeOwned;

/// Group-robust training on synthetic multi-bias data.
#[derive(Parser)]
#[command(name = "debias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file from a preset or a generator spec.
    Generate {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator spec as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train one run and write its record and checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Training config as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on the val and test splits.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training config whose grouping options apply.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train all seeds of an experiment config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Grid search, then rerun the best cell with all seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Write per-seed trajectory CSVs for a run directory.
    ExportTraj {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataArgs {
    /// Dataset file written by `generate`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate a preset in memory instead.
    #[arg(long)]
    preset: Option<String>,
}

impl DataArgs {
    fn load(&self, seed: u64) -> Result<SplitDataset> {
        match (&self.data, &self.preset) {
            (Some(p), _) => read_dataset(p),
            (None, Some(name)) => DatasetSource::Preset { preset: name.clone(), seed }.load(),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

fn train_config(path: Option<&Path>) -> Result<TrainConfig> {
    path.map_or(Ok(TrainConfig::default()), read_json)
}

fn ensure_absent(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists(path.into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { preset, seed, config, out, force } => {
            ensure_absent(&out, force)?;
            let spec = match (preset, config) {
                (Some(name), _) => BiasGenSpec::preset(&name, seed)?,
                (None, Some(p)) => read_json(&p)?,
                (None, None) => unreachable!("clap enforces one source"),
            };
            let data = generate(&spec)?;
            write_dataset(&data, &out)?;
            println!(
                "wrote {} (train {}, val {}, val_indist {}, test {})",
                out.display(),
                data.train.len(),
                data.val.len(),
                data.val_indist.len(),
                data.test.len()
            );
        }
        Command::Train { data, config, method, seed, out, force } => {
            let mut cfg = train_config(config.as_deref())?;
            if let Some(m) = method {
                cfg.method = Method::parse(&m).ok_or_else(|| Error::Config(format!("unknown method {m:?}")))?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let records = out.join(format!("seed-{}.ndjson", cfg.seed));
            ensure_absent(&records, force)?;
            let ds = data.load(0)?;
            let output = train(&cfg, &ds)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            write_records(&records, &cfg, &output.record)?;
            save_checkpoint(&out.join(format!("seed-{}.ckpt.json", cfg.seed)), &output.spec, &output.params)?;
            println!("{} seed {}: selected iter {}", cfg.method.name(), cfg.seed, output.record.selection.iter);
            print!("test\n{}", output.record.test.to_text());
        }
        Command::Eval { data, checkpoint, config } => {
            let cfg = train_config(config.as_deref())?;
            let ds = data.load(0)?;
            let (model, params) = load_checkpoint(&checkpoint)?;
            let (val, val_indist, test) = evaluate_params(&cfg, &ds, &model, &params)?;
            print!("val\n{}", val.to_text());
            if let Some(vi) = val_indist {
                print!("val_indist\n{}", vi.to_text());
            }
            print!("test\n{}", test.to_text());
        }
        Command::Experiment { config, force } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            let result = run_experiment(&cfg, force)?;
            let t = &result.summary.test;
            println!("{}", result.dir.display());
            println!(
                "test unbiased {:.2} ± {:.2}  worst {:.2} ± {:.2}  indist {:.2} ± {:.2}",
                100.0 * t.unbiased.mean,
                100.0 * t.unbiased.std,
                100.0 * t.worst.mean,
                100.0 * t.worst.std,
                100.0 * t.indist.mean,
                100.0 * t.indist.std
            );
        }
        Command::Sweep { config, force } => {
            let cfg: SweepConfig = read_json(&config)?;
            let summary = sweep(&cfg, force)?;
            for c in &summary.cells {
                let score = c.score.map_or("failed".to_string(), |s| format!("{:.4}", s));
                println!(
                    "eta1 {:e}  eta2 {:e}  U {}  wd {:e}  {}",
                    c.cell.eta1, c.cell.eta2, c.cell.period, c.cell.weight_decay, score
                );
            }
            match &summary.best_dir {
                Some(d) => println!("best rerun in {}", d.display()),
                None => return Err(Error::Config("every sweep cell failed".into())),
            }
        }
        Command::ExportTraj { run_dir } => {
            for p in export_trajectories(&run_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
