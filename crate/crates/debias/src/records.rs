//! Run records as newline-delimited JSON.
//!
//! A record file holds one `run` line (method, seed, group labels and the
//! full training config), one `joint` line per joint step, one `eval` line per
//! evaluation and a closing `final` line with the selected checkpoint's tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use debias_core::metrics::GroupAccuracyTable;
use debias_core::moo::{EvalRecord, JointStepRecord, Method, OptimizerInfo, RunRecord, Selection, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub method: Method,
    pub seed: u64,
    pub group_labels: Vec<String>,
    pub train_group_sizes: Vec<usize>,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub selection: Selection,
    pub selected_on_test: bool,
    pub iterations: usize,
    pub optimizer: OptimizerInfo,
    pub val: GroupAccuracyTable,
    pub val_indist: Option<GroupAccuracyTable>,
    pub test: GroupAccuracyTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Line {
    Run(RunHeader),
    Joint(JointStepRecord),
    Eval(EvalRecord),
    Final(Box<FinalMetrics>),
}

pub fn write_records_to<W: Write>(config: &TrainConfig, record: &RunRecord, mut w: W) -> std::io::Result<()> {
    let mut put = |line: &Line| -> std::io::Result<()> {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")
    };
    put(&Line::Run(RunHeader {
        method: record.method,
        seed: config.seed,
        group_labels: record.group_labels.clone(),
        train_group_sizes: record.train_group_sizes.clone(),
        config: config.clone(),
    }))?;
    for j in &record.joint_steps {
        put(&Line::Joint(j.clone()))?;
    }
    for e in &record.evals {
        put(&Line::Eval(e.clone()))?;
    }
    put(&Line::Final(Box::new(FinalMetrics {
        selection: record.selection.clone(),
        selected_on_test: record.selected_on_test,
        iterations: record.iterations,
        optimizer: record.optimizer.clone(),
        val: record.val.clone(),
        val_indist: record.val_indist.clone(),
        test: record.test.clone(),
    })))?;
    w.flush()
}

pub fn write_records(path: &Path, config: &TrainConfig, record: &RunRecord) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_to(config, record, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

/// Reads a record file back into the config and the run record.
pub fn read_records(path: &Path) -> Result<(TrainConfig, RunRecord)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut joint = Vec::new();
    let mut evals = Vec::new();
    let mut fin = None;
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        match parsed {
            Line::Run(h) => header = Some(h),
            Line::Joint(j) => joint.push(j),
            Line::Eval(e) => evals.push(e),
            Line::Final(f) => fin = Some(f),
        }
    }
    let h = header.ok_or_else(|| Error::format(path, "missing run line"))?;
    let f = fin.ok_or_else(|| Error::format(path, "missing final line"))?;
    let record = RunRecord {
        method: h.method,
        group_labels: h.group_labels,
        joint_steps: joint,
        evals,
        selection: f.selection,
        selected_on_test: f.selected_on_test,
        iterations: f.iterations,
        optimizer: f.optimizer,
        val: f.val,
        val_indist: f.val_indist,
        test: f.test,
        train_group_sizes: h.train_group_sizes,
    };
    Ok((h.config, record))
}
