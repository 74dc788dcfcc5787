//! On-disk formats: tensor files, dataset directories, checkpoints,
//! training logs, and prediction directories.

mod checkpoint;
mod dataset;
mod linear;
mod otf;
mod predictions;

pub use checkpoint::{
    load_model, read_train_log, save_model, save_trained, write_train_log, CheckpointManifest, LogLine,
    TrainingSummary, CHECKPOINT_FILE, CHECKPOINT_FORMAT, PARAMS_FILE, TRAIN_LOG,
};
pub use dataset::{
    hemisphere_names, read_dataset, write_dataset, Manifest, MeshSpec, SubjectEntry, TaskEntry,
    DATASET_FORMAT, MANIFEST,
};
pub use linear::{load_linear_model, save_linear_model, LinearManifest, LINEAR_FILE, LINEAR_FORMAT};
pub use otf::{read_otf, write_atomic, write_otf, OtfTensor, TensorData, MAGIC, MAX_RANK};
pub use predictions::{
    read_fold_predictions, read_index, read_prediction_set, PredictionEntry, PredictionIndex,
    PredictionWriter, PREDICTIONS_FILE, PREDICTIONS_FORMAT,
};

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Pretty JSON written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}
