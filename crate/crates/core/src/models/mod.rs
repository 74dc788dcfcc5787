//! The conditioned network (one output block shared by every task), the
//! per-task-channel baseline network, training, and the
//! leave-one-group-out protocol.

mod logo;
mod train;
mod unet;

pub use logo::{
    average_indomain_predictions, logo_run, predict_tasks, FoldOutcome, FoldPrediction, FoldPredictions,
    LogoOutcome,
};
pub use train::{
    loss_and_grad, train, EpochRecord, LossKind, LossSpec, TrainConfig, Trained,
};
pub use unet::{UNet, UNetConfig};

use serde::{Deserialize, Serialize};

use crate::connectome::{Connectome, GroupAverageMap};
use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;
use crate::nncore::{ChannelField, ParamStore, Real};
use crate::seed::rng_for;

/// Largest deviation of a nonzero conditioning map's abs-max from 1.
pub const GAVG_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Opic,
    Bsc,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Opic => "opic",
            ModelKind::Bsc => "bsc",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "opic" => Ok(ModelKind::Opic),
            "bsc" => Ok(ModelKind::Bsc),
            _ => Err(Error::InvalidArgument(format!("unknown model `{s}`"))),
        }
    }
}

/// A trained or freshly initialized network with its task binding.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub hemispheres: usize,
    pub components: usize,
    /// Output block order of a per-task model; empty for the conditioned one.
    pub tasks: Vec<String>,
    pub net: UNet,
    pub params: ParamStore<f32>,
}

/// Conditioned model: input `H·D + H` channels (connectome, then group
/// average), output `H` channels for whichever task the map describes.
pub type OpicModel = Model;
/// Per-task baseline: input `H·D` channels, output block `t` for task `t`.
pub type BscModel = Model;

impl Model {
    pub fn opic(hemispheres: usize, components: usize, config: UNetConfig, seed: u64) -> Result<Self> {
        let net = UNet::new(hemispheres * components + hemispheres, hemispheres, config)?;
        Ok(Self::init(ModelKind::Opic, hemispheres, components, Vec::new(), net, seed))
    }

    pub fn bsc(
        hemispheres: usize,
        components: usize,
        tasks: Vec<String>,
        config: UNetConfig,
        seed: u64,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("a per-task model needs at least one task".into()));
        }
        let net = UNet::new(hemispheres * components, hemispheres * tasks.len(), config)?;
        Ok(Self::init(ModelKind::Bsc, hemispheres, components, tasks, net, seed))
    }

    fn init(kind: ModelKind, hemispheres: usize, components: usize, tasks: Vec<String>, net: UNet, seed: u64) -> Self {
        let mut rng = rng_for(seed, "init", 0);
        let params = ParamStore::init_uniform(net.shapes(), &mut rng);
        Model {
            kind,
            hemispheres,
            components,
            tasks,
            net,
            params,
        }
    }

    /// Output block of `task` within a per-task prediction.
    pub fn task_block(&self, pred: &ChannelField, task: &str) -> Result<ChannelField> {
        let t = self
            .tasks
            .iter()
            .position(|x| x == task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))?;
        let (hn, n) = (self.hemispheres, pred.vertices());
        if pred.channels() != hn * self.tasks.len() {
            return Err(Error::shape("prediction does not match the model's task blocks"));
        }
        ChannelField::new(pred.level(), hn, n, pred.data()[t * hn * n..(t + 1) * hn * n].to_vec())
    }

    fn check_connectome(&self, c: &Connectome, h: &MeshHierarchy) -> Result<()> {
        if c.level() != h.finest_level() {
            return Err(Error::LevelMismatch {
                expected: h.finest_level(),
                actual: c.level(),
            });
        }
        if c.hemispheres() != self.hemispheres || c.components() != self.components {
            return Err(Error::shape(format!(
                "model expects {}x{} connectome channels, got {}x{}",
                self.hemispheres,
                self.components,
                c.hemispheres(),
                c.components()
            )));
        }
        Ok(())
    }
}

/// Network input of the conditioned model, channel-major `(H·D + H)×V`.
pub fn opic_input<T: Real>(c: &Connectome, gavg: &ChannelField) -> Result<Vec<T>> {
    if gavg.channels() != c.hemispheres() || gavg.vertices() != c.vertices() || gavg.level() != c.level() {
        return Err(Error::shape("group average does not match the connectome"));
    }
    let f = c.to_field();
    Ok(f.data()
        .iter()
        .chain(gavg.data())
        .map(|&x| T::from_f64(x))
        .collect())
}

pub fn check_normalized(gavg: &GroupAverageMap) -> Result<()> {
    if !gavg.is_normalized(GAVG_TOLERANCE) {
        return Err(Error::InvalidArgument(format!(
            "group average of {} is not scaled to absolute maximum 1 (max |v| = {})",
            gavg.task,
            gavg.field.abs_max()
        )));
    }
    Ok(())
}

/// Prediction of the conditioned model for one subject and task map.
pub fn opic_forward(
    model: &OpicModel,
    h: &MeshHierarchy,
    c: &Connectome,
    gavg: &GroupAverageMap,
) -> Result<ChannelField> {
    if model.kind != ModelKind::Opic {
        return Err(Error::InvalidArgument("expected a conditioned model".into()));
    }
    model.check_connectome(c, h)?;
    check_normalized(gavg)?;
    let input = opic_input::<f32>(c, &gavg.field)?;
    let out = model.net.forward(&model.params, h, input)?;
    to_field(c, model.net.out_channels, out)
}

/// All task blocks of the per-task model for one subject.
pub fn bsc_forward(model: &BscModel, h: &MeshHierarchy, c: &Connectome) -> Result<ChannelField> {
    if model.kind != ModelKind::Bsc {
        return Err(Error::InvalidArgument("expected a per-task model".into()));
    }
    model.check_connectome(c, h)?;
    let input: Vec<f32> = c.to_field().data().iter().map(|&x| x as f32).collect();
    let out = model.net.forward(&model.params, h, input)?;
    to_field(c, model.net.out_channels, out)
}

fn to_field(c: &Connectome, channels: usize, out: Vec<f32>) -> Result<ChannelField> {
    ChannelField::new(
        c.level(),
        channels,
        c.vertices(),
        out.into_iter().map(f64::from).collect(),
    )
}
