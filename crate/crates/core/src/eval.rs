//! Patient-wise stratified splitting and evaluation metrics, with optional
//! demographic grouping.

use crate::error::{PcgError, Result};
use crate::manifest::{PatientMeta, Sex};
use crate::recording::Label;
use crate::rng::stream;
use rand::seq::SliceRandom;
use serde::Serialize;
use std::collections::BTreeMap;

/// Split fractions: `test` is taken from the whole corpus, `val` from the
/// remaining training pool.
#[derive(Debug, Clone, Copy)]
pub struct SplitFractions {
    pub test: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { test: 0.05, val: 0.05 }
    }
}

/// Index sets into the caller's item slice, disjoint by patient.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified patient-wise split. Patients are grouped by label, shuffled
/// deterministically, and allocated so every split keeps close to the corpus
/// CHD fraction; all items of one patient land in exactly one split.
pub fn patient_wise_split<T>(
    items: &[T],
    key: impl Fn(&T) -> (&str, Label),
    fractions: SplitFractions,
    seed: u64,
) -> Result<Split> {
    for (name, f) in [("test", fractions.test), ("val", fractions.val)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(PcgError::Config(format!("{name} fraction must be in (0, 1)")));
        }
    }
    // patient -> (label, item indices), insertion-ordered per label
    let mut patients: BTreeMap<&str, (Label, Vec<usize>)> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        let (pid, label) = key(item);
        let entry = patients.entry(pid).or_insert((label, Vec::new()));
        if entry.0 != label {
            return Err(PcgError::Config(format!(
                "patient {pid} carries two labels"
            )));
        }
        entry.1.push(i);
    }

    let mut by_label: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (pid, (label, _)) in &patients {
        let class = label.class_index().unwrap_or(0);
        by_label.entry(class).or_default().push(pid);
    }

    let mut rng = stream(seed, "patient-split", 0);
    let mut train_p: Vec<&str> = Vec::new();
    let mut val_p: Vec<&str> = Vec::new();
    let mut test_p: Vec<&str> = Vec::new();
    for (_, mut pids) in by_label {
        pids.shuffle(&mut rng);
        let n = pids.len();
        let n_test = ((n as f64 * fractions.test).round() as usize).min(n);
        let rest = n - n_test;
        let n_val = ((rest as f64 * fractions.val).round() as usize).min(rest);
        test_p.extend(&pids[..n_test]);
        val_p.extend(&pids[n_test..n_test + n_val]);
        train_p.extend(&pids[n_test + n_val..]);
    }
    if train_p.is_empty() || val_p.is_empty() || test_p.is_empty() {
        return Err(PcgError::TooFewPatients(format!(
            "{} patients cannot fill train/val/test at fractions {:.2}/{:.2}",
            patients.len(),
            fractions.test,
            fractions.val
        )));
    }

    let collect = |pids: &[&str]| -> Vec<usize> {
        let mut out: Vec<usize> = pids
            .iter()
            .flat_map(|pid| patients[pid].1.iter().copied())
            .collect();
        out.sort_unstable();
        out
    };
    Ok(Split {
        train: collect(&train_p),
        val: collect(&val_p),
        test: collect(&test_p),
    })
}

/// Confusion counts with CHD as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, label: Label, predicted: Label) {
        match (label, predicted) {
            (Label::Chd, Label::Chd) => self.tp += 1,
            (Label::Chd, _) => self.fn_ += 1,
            (_, Label::Chd) => self.fp += 1,
            _ => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// The five evaluation metrics. Ratios with a zero denominator are absent
/// rather than zero.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

pub fn compute_metrics(counts: ConfusionCounts) -> Result<MetricsReport> {
    let total = counts.total();
    if total == 0 {
        return Err(PcgError::EmptyEvaluation);
    }
    let accuracy = (counts.tp + counts.tn) as f64 / total as f64;
    let sensitivity = ratio(counts.tp, counts.tp + counts.fn_);
    let specificity = ratio(counts.tn, counts.tn + counts.fp);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(MetricsReport {
        counts,
        accuracy,
        sensitivity,
        specificity,
        precision,
        f1,
        group: None,
    })
}

/// One scored segment.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub segment_id: String,
    pub patient_id: String,
    pub label: Label,
    pub predicted: Label,
    pub prob_chd: f64,
}

pub fn confusion_from_predictions(preds: &[Prediction]) -> ConfusionCounts {
    let mut counts = ConfusionCounts::default();
    for p in preds {
        counts.add(p.label, p.predicted);
    }
    counts
}

/// Demographic grouping key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    AgeBand,
    Sex,
}

/// Age bands used by the demographic reports.
pub fn age_band(age_years: f64) -> &'static str {
    if age_years < 1.0 {
        "0-1"
    } else if age_years < 5.0 {
        "1-5"
    } else if age_years < 10.0 {
        "5-10"
    } else {
        ">10"
    }
}

/// Metrics per demographic group. Every prediction's patient must appear in
/// the metadata map.
pub fn grouped_metrics(
    preds: &[Prediction],
    metadata: &BTreeMap<String, PatientMeta>,
    group_by: GroupBy,
) -> Result<Vec<MetricsReport>> {
    let mut groups: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
    for p in preds {
        let meta = metadata
            .get(&p.patient_id)
            .ok_or_else(|| PcgError::MissingMetadata(p.patient_id.clone()))?;
        let key = match group_by {
            GroupBy::AgeBand => age_band(meta.age_years).to_string(),
            GroupBy::Sex => match meta.sex {
                Sex::Male => "M".to_string(),
                Sex::Female => "F".to_string(),
            },
        };
        groups.entry(key).or_default().add(p.label, p.predicted);
    }
    let mut reports = Vec::with_capacity(groups.len());
    for (group, counts) in groups {
        let mut report = compute_metrics(counts)?;
        report.group = Some(group);
        reports.push(report);
    }
    Ok(reports)
}

/// Majority vote over each patient's segment predictions (ties break toward
/// CHD, the class it is costlier to miss), reported alongside the
/// segment-level numbers.
pub fn patient_level_counts(preds: &[Prediction]) -> ConfusionCounts {
    let mut by_patient: BTreeMap<&str, (Label, usize, usize)> = BTreeMap::new();
    for p in preds {
        let entry = by_patient.entry(&p.patient_id).or_insert((p.label, 0, 0));
        match p.predicted {
            Label::Chd => entry.1 += 1,
            _ => entry.2 += 1,
        }
    }
    let mut counts = ConfusionCounts::default();
    for (_, (label, chd_votes, non_votes)) in by_patient {
        let predicted = if chd_votes >= non_votes { Label::Chd } else { Label::NonChd };
        counts.add(label, predicted);
    }
    counts
}
