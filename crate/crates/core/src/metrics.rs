//! Group-robustness metrics.
//!
//! A group's accuracy is the mean of its per-class accuracies, so class
//! imbalance inside a group does not move it. From the group accuracies:
//! `unbiased` is their plain mean, `indist` their mean weighted by training
//! group proportions and `worst` their minimum. Empty groups and empty
//! `(group, class)` cells are skipped and reported as warnings.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::{DataError, Dataset, GroupIndex};
use crate::model::Mlp;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("every (group, class) cell is empty")]
    AllCellsEmpty,
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// `G` for guiding, `C` for conflicting, one letter per bias type.
pub fn label_groups_for_report(g: &[bool]) -> String {
    g.iter().map(|&b| if b { 'G' } else { 'C' }).collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupAccuracy {
    pub group: usize,
    pub label: String,
    pub count: usize,
    /// Accuracy per class; `None` where the cell is empty.
    pub class_accuracies: Vec<Option<f64>>,
    /// Class-balanced accuracy; `None` for an empty group.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupAccuracyTable {
    pub groups: Vec<GroupAccuracy>,
    pub unbiased: f64,
    pub indist: f64,
    pub worst: f64,
    pub warnings: Vec<String>,
}

impl GroupAccuracyTable {
    pub fn group_by_label(&self, label: &str) -> Option<&GroupAccuracy> {
        self.groups.iter().find(|g| g.label == label)
    }

    /// Accuracy of the group with `label`, if present and non-empty.
    pub fn accuracy(&self, label: &str) -> Option<f64> {
        self.group_by_label(label).and_then(|g| g.accuracy)
    }

    /// Groups in report order: all-guiding first, all-conflicting last.
    pub fn report_order(&self) -> Vec<&GroupAccuracy> {
        let mut v: Vec<&GroupAccuracy> = self.groups.iter().collect();
        v.sort_by_key(|g| core::cmp::Reverse(g.group));
        v
    }

    /// Header and value row in percent: `InDist, <groups...>, Unbiased, Worst`.
    pub fn to_text(&self) -> String {
        let groups = self.report_order();
        let mut cols: Vec<String> = vec!["InDist".into()];
        cols.extend(groups.iter().map(|g| g.label.clone()));
        cols.push("Unbiased".into());
        cols.push("Worst".into());
        let pct = |v: Option<f64>| match v {
            Some(v) => format!("{:.1}", 100.0 * v),
            None => "-".into(),
        };
        let mut vals = vec![pct(Some(self.indist))];
        vals.extend(groups.iter().map(|g| pct(g.accuracy)));
        vals.push(pct(Some(self.unbiased)));
        vals.push(pct(Some(self.worst)));
        let widths: Vec<usize> = cols.iter().zip(&vals).map(|(c, v)| c.len().max(v.len())).collect();
        let line = |items: &[String]| {
            items.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect::<Vec<_>>().join("  ")
        };
        format!("{}\n{}\n", line(&cols), line(&vals))
    }
}

/// Builds the table from predictions on the samples of `index`.
///
/// `targets[i]` and `predictions[i]` belong to sample `i` of the split
/// `index` was built on. `train_proportions[g]` is the share of training
/// samples in group `g` under the same grouping.
pub fn table_from_predictions(
    predictions: &[usize],
    targets: &[usize],
    index: &GroupIndex,
    train_proportions: &[f64],
) -> Result<GroupAccuracyTable, MetricsError> {
    let n = index.total();
    if predictions.len() != n {
        return Err(MetricsError::LengthMismatch { what: "predictions", expected: n, got: predictions.len() });
    }
    if targets.len() != n {
        return Err(MetricsError::LengthMismatch { what: "targets", expected: n, got: targets.len() });
    }
    if train_proportions.len() != index.num_groups() {
        return Err(MetricsError::LengthMismatch {
            what: "train proportions",
            expected: index.num_groups(),
            got: train_proportions.len(),
        });
    }
    let c = index.num_classes();
    let mut warnings = Vec::new();
    let mut groups = Vec::with_capacity(index.num_groups());
    for g in 0..index.num_groups() {
        let label = index.label(g);
        let mut class_accuracies = vec![None; c];
        for (t, acc) in class_accuracies.iter_mut().enumerate() {
            let cell = index.group_class(g, t);
            if cell.is_empty() {
                if !index.group(g).is_empty() {
                    warnings.push(format!("group {label}: class {t} has no samples, skipped"));
                }
                continue;
            }
            let correct = cell.iter().filter(|&&i| predictions[i] == targets[i]).count();
            *acc = Some(correct as f64 / cell.len() as f64);
        }
        let present: Vec<f64> = class_accuracies.iter().flatten().copied().collect();
        let accuracy = if present.is_empty() {
            warnings.push(format!("group {label} is empty, skipped"));
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        };
        groups.push(GroupAccuracy { group: g, label, count: index.group(g).len(), class_accuracies, accuracy });
    }

    let accs: Vec<(usize, f64)> = groups.iter().filter_map(|g| g.accuracy.map(|a| (g.group, a))).collect();
    if accs.is_empty() {
        return Err(MetricsError::AllCellsEmpty);
    }
    let unbiased = accs.iter().map(|(_, a)| a).sum::<f64>() / accs.len() as f64;
    let worst = accs.iter().map(|(_, a)| *a).fold(f64::INFINITY, f64::min);
    let weight: f64 = accs.iter().map(|(g, _)| train_proportions[*g]).sum();
    let indist = if weight > 0.0 {
        accs.iter().map(|(g, a)| train_proportions[*g] * a).sum::<f64>() / weight
    } else {
        warnings.push("no training mass on evaluated groups; InDist set to 0".into());
        0.0
    };
    Ok(GroupAccuracyTable { groups, unbiased, indist, worst, warnings })
}

/// Evaluates `params` on `data`, grouped by `index` (built on `data`).
pub fn evaluate(
    model: &Mlp,
    params: &[f64],
    data: &Dataset,
    index: &GroupIndex,
    train_proportions: &[f64],
) -> Result<GroupAccuracyTable, MetricsError> {
    let predictions = predict_all(model, params, data)?;
    table_from_predictions(&predictions, data.targets(), index, train_proportions)
}

/// Predictions for every sample of `data`, in chunks.
pub fn predict_all(model: &Mlp, params: &[f64], data: &Dataset) -> Result<Vec<usize>, MetricsError> {
    const CHUNK: usize = 1024;
    let mut out = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let (x, _) = data.batch(chunk)?;
        out.extend(model.predict(params, &x)?);
    }
    Ok(out)
}
