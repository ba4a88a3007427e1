//! End-to-end orchestration: corpus loading, segmentation, quality gating,
//! preprocessing, feature extraction, training, prediction, evaluation, and
//! the threshold-sweep experiment. The CLI subcommands are thin wrappers
//! around these functions.

use crate::config::RunConfig;
use crate::error::{PcgError, Result};
use crate::eval::{
    compute_metrics, confusion_from_predictions, grouped_metrics, patient_level_counts,
    patient_wise_split, GroupBy, MetricsReport, Prediction, SplitFractions,
};
use crate::features::{extract_features, FeatureMatrix, FrameParams};
use crate::manifest::{load_corpus, patient_metadata, read_manifest, PatientMeta};
use crate::model::checkpoint::save_checkpoint;
use crate::model::train::{evaluate_set, predict_one, train, EpochLog, TrainOutcome, TrainSample};
use crate::model::{Architecture, ModelParams};
use crate::preprocess::{bandpass_filter, remove_spikes, FilterSpec};
use crate::quality::{assess_quality, QualityReport};
use crate::recording::{split_recording, DurationClass, Label, Segment};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// One segment flowing through the pipeline.
pub struct DatasetEntry {
    pub segment_id: String,
    pub patient_id: String,
    pub label: Label,
    /// `None` when the segment is degenerate (identically zero).
    pub quality: Option<QualityReport>,
    /// Populated according to the featurize mode.
    pub features: Option<FeatureMatrix>,
}

impl DatasetEntry {
    pub fn suitable(&self) -> bool {
        self.quality.as_ref().map_or(false, |q| q.suitable)
    }

    /// Suitability under thresholds other than the configured ones.
    pub fn suitable_at(&self, rmssd_threshold: f64, zcr_threshold: f64) -> bool {
        self.quality
            .as_ref()
            .map_or(false, |q| q.rmssd <= rmssd_threshold && q.zcr <= zcr_threshold)
    }
}

pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub duration: DurationClass,
}

/// Which segments get the preprocess + MFCC treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Featurize {
    /// Quality-passing segments only (the training pipeline).
    SuitableOnly,
    /// Every non-degenerate segment (the sweep needs features outside the
    /// configured gate).
    All,
    /// Quality assessment only.
    None,
}

/// Bandpass, spike removal, MFCC chain for one raw segment.
pub fn preprocess_and_featurize(seg: &Segment, frame: &FrameParams) -> Result<FeatureMatrix> {
    let filtered = bandpass_filter(seg, &FilterSpec::default())?;
    let cleaned = remove_spikes(&filtered)?;
    extract_features(&cleaned, frame)
}

/// Split every corpus recording, gate it, and (optionally) featurize.
pub fn build_dataset(root: &Path, cfg: &RunConfig, featurize: Featurize) -> Result<Dataset> {
    let duration = cfg.duration()?;
    let frame = FrameParams::default();
    let recordings = load_corpus(root)?;
    if recordings.is_empty() {
        return Err(PcgError::Config(format!("no recordings under {root:?}")));
    }
    let mut entries = Vec::new();
    for rec in &recordings {
        for seg in split_recording(rec, duration)? {
            let quality = match assess_quality(&seg, &cfg.quality) {
                Ok(q) => Some(q),
                Err(PcgError::DegenerateSignal) => None,
                Err(e) => return Err(e),
            };
            let wanted = match featurize {
                Featurize::SuitableOnly => quality.as_ref().map_or(false, |q| q.suitable),
                Featurize::All => quality.is_some(),
                Featurize::None => false,
            };
            let features = if wanted {
                Some(preprocess_and_featurize(&seg, &frame)?)
            } else {
                None
            };
            entries.push(DatasetEntry {
                segment_id: seg.parent_id.clone(),
                patient_id: rec.patient_id.clone(),
                label: rec.label,
                quality,
                features,
            });
        }
    }
    Ok(Dataset { entries, duration })
}

pub fn write_quality_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::from("parent_id,duration_class,rmssd,zcr,suitable\n");
    for e in &dataset.entries {
        match &e.quality {
            Some(q) => out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.segment_id, dataset.duration, q.rmssd, q.zcr, q.suitable
            )),
            None => out.push_str(&format!("{},{},,,false\n", e.segment_id, dataset.duration)),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Artifacts of one full training run.
pub struct TrainedPipeline {
    pub outcome: TrainOutcome,
    pub arch: Architecture,
    pub train_segments: usize,
    pub val_segments: usize,
    pub test_segments: usize,
    pub test_predictions: Vec<Prediction>,
    pub test_metrics: MetricsReport,
}

fn entry_sample(entry: &DatasetEntry) -> Result<TrainSample> {
    let features = entry
        .features
        .as_ref()
        .ok_or_else(|| PcgError::Config(format!("segment {} has no features", entry.segment_id)))?;
    let class = entry
        .label
        .class_index()
        .ok_or_else(|| PcgError::Config(format!("segment {} is unlabeled", entry.segment_id)))?;
    Ok(TrainSample {
        features: features.values.clone(),
        class,
    })
}

fn predictions_for(params: &ModelParams, entries: &[&DatasetEntry]) -> Result<Vec<Prediction>> {
    entries
        .iter()
        .map(|e| {
            let features = e.features.as_ref().unwrap();
            let (class, prob_chd) = predict_one(params, &features.values)?;
            Ok(Prediction {
                segment_id: e.segment_id.clone(),
                patient_id: e.patient_id.clone(),
                label: e.label,
                predicted: Label::from_class_index(class),
                prob_chd,
            })
        })
        .collect()
}

/// Gate, featurize, split patient-wise, train, and score the held-out test
/// split.
pub fn train_pipeline(root: &Path, cfg: &RunConfig) -> Result<TrainedPipeline> {
    cfg.validate()?;
    let dataset = build_dataset(root, cfg, Featurize::SuitableOnly)?;
    let usable: Vec<&DatasetEntry> = dataset
        .entries
        .iter()
        .filter(|e| e.features.is_some() && e.label.class_index().is_some())
        .collect();
    if usable.is_empty() {
        return Err(PcgError::EmptyEvaluation);
    }
    let fractions = SplitFractions {
        test: cfg.split.test_fraction,
        val: cfg.split.val_fraction,
    };
    let split = patient_wise_split(
        &usable,
        |e| (e.patient_id.as_str(), e.label),
        fractions,
        cfg.training.seed,
    )?;
    let collect = |idx: &[usize]| -> Result<Vec<TrainSample>> {
        idx.iter().map(|&i| entry_sample(usable[i])).collect()
    };
    let train_set = collect(&split.train)?;
    let val_set = collect(&split.val)?;
    let arch = Architecture::from_config(&cfg.model);
    let outcome = train(&arch, &train_set, &val_set, &cfg.training)?;

    let test_entries: Vec<&DatasetEntry> = split.test.iter().map(|&i| usable[i]).collect();
    let test_predictions = predictions_for(&outcome.params, &test_entries)?;
    let test_metrics = compute_metrics(confusion_from_predictions(&test_predictions))?;
    Ok(TrainedPipeline {
        outcome,
        arch,
        train_segments: split.train.len(),
        val_segments: split.val.len(),
        test_segments: split.test.len(),
        test_predictions,
        test_metrics,
    })
}

pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for l in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            l.epoch, l.train_loss, l.train_acc, l.val_loss, l.val_acc
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Score every suitable segment of a corpus with a trained model.
pub fn predict_pipeline(root: &Path, cfg: &RunConfig, params: &ModelParams) -> Result<Vec<Prediction>> {
    let dataset = build_dataset(root, cfg, Featurize::SuitableOnly)?;
    let entries: Vec<&DatasetEntry> = dataset
        .entries
        .iter()
        .filter(|e| e.features.is_some())
        .collect();
    predictions_for(params, &entries)
}

pub fn write_predictions_csv(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut out = String::from("segment_id,patient_id,label,pred,prob_chd\n");
    for p in preds {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.segment_id, p.patient_id, p.label, p.predicted, p.prob_chd
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// metrics.json payload: global segment-level metrics, a patient-level
/// majority-vote companion, and optional per-group breakdowns.
pub fn metrics_json(
    preds: &[Prediction],
    metadata: &BTreeMap<String, PatientMeta>,
    group_by: Option<GroupBy>,
) -> Result<serde_json::Value> {
    let global = compute_metrics(confusion_from_predictions(preds))?;
    let patient_level = compute_metrics(patient_level_counts(preds))?;
    let mut value = serde_json::json!({
        "global": global,
        "patient_level": patient_level,
    });
    if let Some(group_by) = group_by {
        let groups = grouped_metrics(preds, metadata, group_by)?;
        let map: serde_json::Map<String, serde_json::Value> = groups
            .into_iter()
            .map(|g| {
                let key = g.group.clone().unwrap_or_default();
                (key, serde_json::to_value(&g).unwrap())
            })
            .collect();
        value["groups"] = serde_json::Value::Object(map);
    }
    Ok(value)
}

/// Load the patient metadata map for a corpus.
pub fn corpus_metadata(root: &Path) -> Result<BTreeMap<String, PatientMeta>> {
    Ok(patient_metadata(&read_manifest(root)?))
}

// ------------------------------------------------------------------ sweep

/// The RMSSD x ZCR threshold grid of the sweep experiment.
pub struct SweepGrid {
    pub thresholds: Vec<f64>,
    pub cells: Vec<Vec<SweepCell>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepCell {
    pub rmssd_threshold: f64,
    pub zcr_threshold: f64,
    pub fraction_suitable: f64,
    pub n_suitable: usize,
    pub accuracy: Option<f64>,
}

pub const SWEEP_THRESHOLDS: [f64; 9] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Per-cell training is the expensive, paper-faithful mode; the default
/// scores one shared checkpoint against every cell's gated subset.
pub enum SweepMode<'a> {
    ReuseCheckpoint(&'a ModelParams),
    TrainPerCell,
}

/// Run the 9x9 threshold sweep. Quality indicators and features are computed
/// once per segment; cells below `min_suitable` report no accuracy.
pub fn sweep(
    root: &Path,
    cfg: &RunConfig,
    mode: SweepMode<'_>,
    min_suitable: usize,
) -> Result<SweepGrid> {
    let dataset = build_dataset(root, cfg, Featurize::All)?;
    let entries: Vec<&DatasetEntry> = dataset
        .entries
        .iter()
        .filter(|e| e.label.class_index().is_some())
        .collect();
    let total = entries.len();
    if total == 0 {
        return Err(PcgError::EmptyEvaluation);
    }

    // cache one prediction per segment in reuse mode
    let cached_correct: Option<Vec<bool>> = match &mode {
        SweepMode::ReuseCheckpoint(params) => {
            let featured: Vec<&DatasetEntry> =
                entries.iter().copied().filter(|e| e.features.is_some()).collect();
            let preds = predictions_for(params, &featured)?;
            let by_id: BTreeMap<&str, bool> = featured
                .iter()
                .zip(&preds)
                .map(|(e, p)| (e.segment_id.as_str(), p.label == p.predicted))
                .collect();
            Some(
                entries
                    .iter()
                    .map(|e| by_id.get(e.segment_id.as_str()).copied().unwrap_or(false))
                    .collect(),
            )
        }
        SweepMode::TrainPerCell => None,
    };

    let mut cells = Vec::with_capacity(SWEEP_THRESHOLDS.len());
    for &rmssd_t in &SWEEP_THRESHOLDS {
        let mut row = Vec::with_capacity(SWEEP_THRESHOLDS.len());
        for &zcr_t in &SWEEP_THRESHOLDS {
            let idx: Vec<usize> = (0..total)
                .filter(|&i| entries[i].suitable_at(rmssd_t, zcr_t))
                .collect();
            let n_suitable = idx.len();
            let fraction_suitable = n_suitable as f64 / total as f64;
            let accuracy = if n_suitable < min_suitable.max(1) {
                None
            } else {
                match &mode {
                    SweepMode::ReuseCheckpoint(_) => {
                        let correct = cached_correct.as_ref().unwrap();
                        let hits = idx.iter().filter(|&&i| correct[i]).count();
                        Some(hits as f64 / n_suitable as f64)
                    }
                    SweepMode::TrainPerCell => {
                        train_cell(&entries, &idx, cfg).ok()
                    }
                }
            };
            row.push(SweepCell {
                rmssd_threshold: rmssd_t,
                zcr_threshold: zcr_t,
                fraction_suitable,
                n_suitable,
                accuracy,
            });
        }
        cells.push(row);
    }
    Ok(SweepGrid {
        thresholds: SWEEP_THRESHOLDS.to_vec(),
        cells,
    })
}

/// Train and score inside one sweep cell; errors (e.g. a split with too few
/// patients) surface as an absent accuracy.
fn train_cell(entries: &[&DatasetEntry], idx: &[usize], cfg: &RunConfig) -> Result<f64> {
    let cell_entries: Vec<&DatasetEntry> = idx.iter().map(|&i| entries[i]).collect();
    let fractions = SplitFractions {
        test: cfg.split.test_fraction,
        val: cfg.split.val_fraction,
    };
    let split = patient_wise_split(
        &cell_entries,
        |e| (e.patient_id.as_str(), e.label),
        fractions,
        cfg.training.seed,
    )?;
    let collect = |idx: &[usize]| -> Result<Vec<TrainSample>> {
        idx.iter().map(|&i| entry_sample(cell_entries[i])).collect()
    };
    let train_set = collect(&split.train)?;
    let val_set = collect(&split.val)?;
    let test_set = collect(&split.test)?;
    let arch = Architecture::from_config(&cfg.model);
    let outcome = train(&arch, &train_set, &val_set, &cfg.training)?;
    let (_, acc) = evaluate_set(&outcome.params, &test_set, &outcome.class_weights, cfg.training.batch_size)?;
    Ok(acc)
}

/// Long-format sweep CSV: `rmssd,zcr,fraction_suitable,n_suitable,accuracy`.
pub fn write_sweep_csv(path: &Path, grid: &SweepGrid) -> Result<()> {
    let mut out = String::from("rmssd,zcr,fraction_suitable,n_suitable,accuracy\n");
    for row in &grid.cells {
        for c in row {
            let acc = c.accuracy.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.rmssd_threshold, c.zcr_threshold, c.fraction_suitable, c.n_suitable, acc
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Matrix-form companions for plotting: one 9x9 table per quantity.
pub fn write_sweep_matrices(dir: &Path, grid: &SweepGrid) -> Result<()> {
    let header = {
        let mut h = String::from("rmssd\\zcr");
        for t in &grid.thresholds {
            h.push_str(&format!(",{t}"));
        }
        h.push('\n');
        h
    };
    let mut frac = header.clone();
    let mut acc = header;
    for (i, row) in grid.cells.iter().enumerate() {
        frac.push_str(&grid.thresholds[i].to_string());
        acc.push_str(&grid.thresholds[i].to_string());
        for c in row {
            frac.push_str(&format!(",{}", c.fraction_suitable));
            match c.accuracy {
                Some(a) => acc.push_str(&format!(",{a}")),
                None => acc.push(','),
            }
        }
        frac.push('\n');
        acc.push('\n');
    }
    std::fs::write(dir.join("sweep_fraction_matrix.csv"), frac)?;
    std::fs::write(dir.join("sweep_accuracy_matrix.csv"), acc)?;
    Ok(())
}

/// Persist a trained pipeline: checkpoint + training log.
pub fn save_training_artifacts(dir: &Path, trained: &TrainedPipeline) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_checkpoint(&dir.join("model.pcgm"), &trained.outcome.params)?;
    write_train_log(&dir.join("train_log.csv"), &trained.outcome.log)?;
    let mut f = std::fs::File::create(dir.join("class_weights.csv"))?;
    writeln!(f, "class,weight")?;
    writeln!(f, "NON_CHD,{}", trained.outcome.class_weights[0])?;
    writeln!(f, "CHD,{}", trained.outcome.class_weights[1])?;
    Ok(())
}
