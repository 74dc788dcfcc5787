//! Model checkpoints (`checkpoint.json` + `params.otf`) and training logs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{EpochRecord, Model, ModelKind, TrainConfig, Trained, UNet};
use crate::nncore::{ConvShape, Dtype, ParamStore};

use super::dataset::hemisphere_names;
use super::otf::{read_otf, write_atomic, write_otf, OtfTensor, TensorData};
use super::{read_json, to_json};

pub const CHECKPOINT_FORMAT: &str = "opic-checkpoint/1";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "params.otf";
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub kind: ModelKind,
    pub hemispheres: usize,
    pub hemisphere_order: Vec<String>,
    pub components: usize,
    /// Output block order of a per-task model.
    pub tasks: Vec<String>,
    pub net: UNet,
    /// Layer shapes in parameter order; each layer is `out×in×7` weights then `out` biases.
    pub layers: Vec<ConvShape>,
    pub dtype: Dtype,
    pub params: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSummary {
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_tasks: Vec<String>,
}

pub fn save_model(model: &Model, dir: &Path, training: Option<TrainingSummary>) -> Result<CheckpointManifest> {
    let n = model.params.len();
    write_otf(&dir.join(PARAMS_FILE), &OtfTensor::f32(vec![n], model.params.data().to_vec())?)?;
    let m = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        kind: model.kind,
        hemispheres: model.hemispheres,
        hemisphere_order: hemisphere_names(model.hemispheres),
        components: model.components,
        tasks: model.tasks.clone(),
        net: model.net.clone(),
        layers: model.params.shapes().to_vec(),
        dtype: Dtype::F32,
        params: PARAMS_FILE.into(),
        training,
    };
    write_atomic(&dir.join(CHECKPOINT_FILE), to_json(&m)?.as_bytes())?;
    Ok(m)
}

/// Saves the selected parameters plus the training log.
pub fn save_trained(trained: &Trained, cfg: &TrainConfig, dir: &Path) -> Result<CheckpointManifest> {
    let summary = TrainingSummary {
        config: cfg.clone(),
        best_epoch: trained.best_epoch,
        best_val_loss: trained.best_val_loss(),
        train_tasks: trained.train_tasks.clone(),
    };
    let m = save_model(&trained.model, dir, Some(summary))?;
    write_train_log(&dir.join(TRAIN_LOG), &trained.history)?;
    Ok(m)
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let m: CheckpointManifest = read_json(&dir.join(CHECKPOINT_FILE))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!("unsupported checkpoint format `{}`", m.format)));
    }
    let net = UNet::new(m.net.in_channels, m.net.out_channels, m.net.config.clone())?;
    if net.shapes() != m.layers {
        return Err(Error::Data("checkpoint layer shapes disagree with its network layout".into()));
    }
    let p = dir.join(&m.params);
    let t = read_otf(&p)?;
    let data = match t.into_data() {
        TensorData::F32(v) => v,
        TensorData::F64(_) => {
            return Err(Error::Data(format!("{} must hold 32-bit parameters", p.display())));
        }
    };
    let params = ParamStore::from_data(m.layers.clone(), data)?;
    let expect_in = match m.kind {
        ModelKind::Opic => m.hemispheres * m.components + m.hemispheres,
        ModelKind::Bsc => m.hemispheres * m.components,
    };
    let expect_out = match m.kind {
        ModelKind::Opic => m.hemispheres,
        ModelKind::Bsc => m.hemispheres * m.tasks.len(),
    };
    if net.in_channels != expect_in || net.out_channels != expect_out {
        return Err(Error::Data("checkpoint channel counts disagree with its model kind".into()));
    }
    Ok(Model {
        kind: m.kind,
        hemispheres: m.hemispheres,
        components: m.components,
        tasks: m.tasks,
        net,
        params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub split: String,
    pub loss_kind: String,
    pub loss: f64,
    /// Tasks whose contrasts were read (train lines only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks_read: Option<Vec<String>>,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

/// One train and one val line per epoch. Timestamps count back from now
/// using the recorded epoch durations.
pub fn write_train_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let total: f64 = history.iter().map(|e| e.seconds).sum();
    let mut t = now - total;
    let mut out = String::new();
    for e in history {
        t += e.seconds;
        let kind = serde_json::to_value(e.loss).ok().and_then(|v| v.as_str().map(String::from));
        let kind = kind.unwrap_or_default();
        for (split, loss, read) in [
            ("train", e.train_loss, Some(e.tasks_read.clone())),
            ("val", e.val_loss, None),
        ] {
            let line = LogLine {
                epoch: e.epoch,
                split: split.into(),
                loss_kind: if split == "val" { "l2".into() } else { kind.clone() },
                loss,
                tasks_read: read,
                timestamp: t,
            };
            out.push_str(&serde_json::to_string(&line).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })?);
            out.push('\n');
        }
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_train_log(path: &Path) -> Result<Vec<LogLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })
        })
        .collect()
}
