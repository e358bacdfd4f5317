//! Trajectory export: one CSV row per joint step.

use std::io::Write;
use std::path::{Path, PathBuf};

use debias_core::moo::RunRecord;

use crate::error::{Error, Result};
use crate::records::read_records;

/// Header: `iter, sigma_<label>.., lambda, pareto_residual, loss_<label>..`.
pub fn trajectory_header(labels: &[String]) -> Vec<String> {
    let mut h = vec!["iter".to_string()];
    h.extend(labels.iter().map(|l| format!("sigma_{l}")));
    h.push("lambda".into());
    h.push("pareto_residual".into());
    h.extend(labels.iter().map(|l| format!("loss_{l}")));
    h
}

pub fn write_trajectory<W: Write>(record: &RunRecord, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trajectory_header(&record.group_labels))?;
    for j in &record.joint_steps {
        let mut row = vec![j.iter.to_string()];
        row.extend(j.sigma_alpha.iter().map(|v| format!("{v:?}")));
        row.push(format!("{:?}", j.lambda));
        row.push(format!("{:?}", j.pareto_residual));
        row.extend(j.group_losses.iter().map(|v| format!("{v:?}")));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// A parsed trajectory CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row: Result<Vec<f64>> = rec
            .iter()
            .map(|v| v.parse().map_err(|_| Error::format(path, format!("bad number {v:?}"))))
            .collect();
        rows.push(row?);
    }
    Ok(Trajectory { header, rows })
}

/// Writes `<stem>.traj.csv` next to every `*.ndjson` record in `run_dir`.
pub fn export_trajectories(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut records: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    records.sort();
    if records.is_empty() {
        return Err(Error::format(run_dir, "no run records (*.ndjson) found"));
    }
    let mut written = Vec::new();
    for rec in records {
        let (_, record) = read_records(&rec)?;
        let out = rec.with_extension("traj.csv");
        let f = std::fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
        write_trajectory(&record, std::io::BufWriter::new(f))?;
        written.push(out);
    }
    Ok(written)
}
