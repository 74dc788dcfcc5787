//! Prediction directories: `predictions.json` indexing one tensor per map.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PredictionSet;
use crate::models::{FoldPrediction, FoldPredictions};
use crate::nncore::ChannelField;

use super::otf::{read_otf, write_atomic, write_otf, OtfTensor};
use super::{read_json, to_json};

pub const PREDICTIONS_FORMAT: &str = "opic-predictions/1";
pub const PREDICTIONS_FILE: &str = "predictions.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionEntry {
    pub method: String,
    pub subject: String,
    pub task: String,
    pub path: String,
    pub level: usize,
    /// Set for per-fold outputs of a leave-one-group-out run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_domain: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionIndex {
    pub format: String,
    /// Held-out group of each fold, when the directory holds fold outputs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<String>,
    pub entries: Vec<PredictionEntry>,
}

/// Accumulates predictions and writes them as one directory.
#[derive(Debug, Default)]
pub struct PredictionWriter {
    folds: Vec<String>,
    items: Vec<(PredictionEntry, ChannelField)>,
}

impl PredictionWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, method: &str, subject: &str, task: &str, field: ChannelField) {
        let path = format!("{method}/{subject}_{task}.otf");
        self.items.push((
            PredictionEntry {
                method: method.into(),
                subject: subject.into(),
                task: task.into(),
                path,
                level: field.level(),
                fold: None,
                in_domain: None,
            },
            field,
        ));
    }

    pub fn add_set(&mut self, set: &PredictionSet) {
        for (method, map) in &set.methods {
            for ((s, t), f) in map {
                self.add(method, s, t, f.clone());
            }
        }
    }

    pub fn add_folds(&mut self, method: &str, fp: &FoldPredictions) {
        self.folds = fp.folds.clone();
        for e in &fp.entries {
            self.items.push((
                PredictionEntry {
                    method: method.into(),
                    subject: e.subject.clone(),
                    task: e.task.clone(),
                    path: format!("folds/{}/{}_{}.otf", e.fold, e.subject, e.task),
                    level: e.field.level(),
                    fold: Some(e.fold),
                    in_domain: Some(e.in_domain),
                },
                e.field.clone(),
            ));
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PredictionIndex> {
        for (e, f) in &self.items {
            let t = OtfTensor::f64(vec![f.channels(), f.vertices()], f.data().to_vec())?;
            write_otf(&dir.join(&e.path), &t)?;
        }
        let index = PredictionIndex {
            format: PREDICTIONS_FORMAT.into(),
            folds: self.folds.clone(),
            entries: self.items.iter().map(|(e, _)| e.clone()).collect(),
        };
        write_atomic(&dir.join(PREDICTIONS_FILE), to_json(&index)?.as_bytes())?;
        Ok(index)
    }
}

pub fn read_index(dir: &Path) -> Result<PredictionIndex> {
    let idx: PredictionIndex = read_json(&dir.join(PREDICTIONS_FILE))?;
    if idx.format != PREDICTIONS_FORMAT {
        return Err(Error::Data(format!("unsupported predictions format `{}`", idx.format)));
    }
    Ok(idx)
}

fn load_field(dir: &Path, e: &PredictionEntry) -> Result<ChannelField> {
    let p = dir.join(&e.path);
    let t = read_otf(&p)?;
    match t.dims() {
        &[c, v] => ChannelField::new(e.level, c, v, t.to_f64()),
        d => Err(Error::Data(format!("{} has dims {d:?}, expected rank 2", p.display()))),
    }
}

/// Merged (non-fold) predictions of a directory.
pub fn read_prediction_set(dir: &Path) -> Result<PredictionSet> {
    let idx = read_index(dir)?;
    let mut set = PredictionSet::default();
    for e in idx.entries.iter().filter(|e| e.fold.is_none()) {
        set.insert(&e.method, &e.subject, &e.task, load_field(dir, e)?);
    }
    Ok(set)
}

pub fn read_fold_predictions(dir: &Path) -> Result<FoldPredictions> {
    let idx = read_index(dir)?;
    let mut entries = Vec::new();
    for e in idx.entries.iter() {
        if let (Some(fold), Some(in_domain)) = (e.fold, e.in_domain) {
            entries.push(FoldPrediction {
                fold,
                subject: e.subject.clone(),
                task: e.task.clone(),
                in_domain,
                field: load_field(dir, e)?,
            });
        }
    }
    Ok(FoldPredictions {
        folds: idx.folds,
        entries,
    })
}
