//! Text dataset format.
//!
//! Line 1 is a JSON header:
//!
//! ```text
//! {"format":"debias-dataset","version":1,"num_classes":2,"alphabets":[2,2],
//!  "feature_dim":32,"splits":{"train":6695,"val":1600,"val_indist":0,"test":2000},
//!  "spec":{...generator spec...}}
//! ```
//!
//! Every following line is one sample, tab separated:
//! `split<TAB>target<TAB>b_1,..,b_D<TAB>x_1,..,x_F`. Samples appear in split
//! order train, val, val_indist, test. Reals use the shortest decimal that
//! parses back to the same bits. Group labels are never stored; they are
//! recomputed from the training split.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use debias_core::data::{BiasGenSpec, Dataset, SplitDataset};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "debias-dataset";
pub const VERSION: u32 = 1;

const SPLITS: [&str; 4] = ["train", "val", "val_indist", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub val_indist: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub num_classes: usize,
    pub alphabets: Vec<usize>,
    pub feature_dim: usize,
    pub splits: SplitSizes,
    pub spec: BiasGenSpec,
}

fn parts(data: &SplitDataset) -> [&Dataset; 4] {
    [&data.train, &data.val, &data.val_indist, &data.test]
}

pub fn write_dataset_to<W: Write>(data: &SplitDataset, mut w: W) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        num_classes: data.train.num_classes(),
        alphabets: data.train.alphabets().to_vec(),
        feature_dim: data.train.feature_dim(),
        splits: SplitSizes {
            train: data.train.len(),
            val: data.val.len(),
            val_indist: data.val_indist.len(),
            test: data.test.len(),
        },
        spec: data.spec.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut line = String::new();
    for (name, split) in SPLITS.iter().zip(parts(data)) {
        for i in 0..split.len() {
            line.clear();
            let _ = write!(line, "{name}\t{}\t", split.target(i));
            for (k, b) in split.bias(i).iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{b}");
            }
            line.push('\t');
            for (k, v) in split.x(i).iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{v:?}");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
    }
    w.flush()
}

pub fn write_dataset(data: &SplitDataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(data, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<SplitDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(BufReader::new(f), path)
}

pub fn read_dataset_from<R: BufRead>(r: R, path: &Path) -> Result<SplitDataset> {
    let bad = |line: usize, m: String| Error::format(path, format!("line {line}: {m}"));
    let mut lines = r.lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::format(path, "empty file")),
    };
    let header: Header = serde_json::from_str(&first).map_err(|e| Error::json(path, e))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::format(path, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut splits: Vec<Dataset> = (0..4)
        .map(|_| Dataset::new(header.num_classes, header.alphabets.clone(), header.feature_dim))
        .collect();
    let mut x = Vec::with_capacity(header.feature_dim);
    let mut b = Vec::with_capacity(header.alphabets.len());
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(split), Some(t), Some(bs), Some(xs), None) =
            (fields.next(), fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad(lineno, "expected 4 tab-separated fields".into()));
        };
        let s = SPLITS.iter().position(|&name| name == split).ok_or_else(|| bad(lineno, format!("unknown split {split:?}")))?;
        let t: usize = t.parse().map_err(|_| bad(lineno, format!("bad target {t:?}")))?;
        b.clear();
        for v in bs.split(',').filter(|v| !v.is_empty()) {
            b.push(v.parse().map_err(|_| bad(lineno, format!("bad attribute {v:?}")))?);
        }
        x.clear();
        for v in xs.split(',').filter(|v| !v.is_empty()) {
            x.push(v.parse().map_err(|_| bad(lineno, format!("bad feature {v:?}")))?);
        }
        splits[s].push(&x, t, &b).map_err(|e| bad(lineno, e.to_string()))?;
    }
    let sizes = [header.splits.train, header.splits.val, header.splits.val_indist, header.splits.test];
    for ((name, d), want) in SPLITS.iter().zip(&splits).zip(sizes) {
        if d.len() != want {
            return Err(Error::format(path, format!("split {name}: header says {want} samples, found {}", d.len())));
        }
    }
    let mut it = splits.into_iter();
    let (train, val, val_indist, test) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    Ok(SplitDataset { spec: header.spec, train, val, val_indist, test })
}
