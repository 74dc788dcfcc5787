use log::info;

use crate::cohort::Cohort;
use crate::connectome::GroupAverageMap;
use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;
use crate::nncore::ChannelField;
use crate::seed::derive_seed;

use super::train::{train, TrainConfig, Trained};
use super::{opic_forward, Model, UNetConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPrediction {
    pub fold: usize,
    pub subject: String,
    pub task: String,
    /// Whether the task's group was seen while training this fold.
    pub in_domain: bool,
    pub field: ChannelField,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoldPredictions {
    /// Held-out group of each fold.
    pub folds: Vec<String>,
    pub entries: Vec<FoldPrediction>,
}

impl FoldPredictions {
    pub fn get(&self, fold: usize, subject: &str, task: &str) -> Option<&FoldPrediction> {
        self.entries
            .iter()
            .find(|e| e.fold == fold && e.subject == subject && e.task == task)
    }

    /// The prediction from the fold that held the task's group out.
    pub fn out_of_domain(&self, subject: &str, task: &str) -> Result<&ChannelField> {
        self.entries
            .iter()
            .find(|e| !e.in_domain && e.subject == subject && e.task == task)
            .map(|e| &e.field)
            .ok_or_else(|| Error::Data(format!("no out-of-domain prediction for {subject}/{task}")))
    }
}

/// Vertexwise mean over every fold in which `task` was in-domain.
pub fn average_indomain_predictions(fp: &FoldPredictions, subject: &str, task: &str) -> Result<ChannelField> {
    let fields: Vec<&ChannelField> = fp
        .entries
        .iter()
        .filter(|e| e.in_domain && e.subject == subject && e.task == task)
        .map(|e| &e.field)
        .collect();
    if fields.is_empty() {
        return Err(Error::Data(format!("no in-domain prediction for {subject}/{task}")));
    }
    ChannelField::mean(&fields)
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub group: String,
    pub seed: u64,
    pub trained: Trained,
}

#[derive(Debug, Clone)]
pub struct LogoOutcome {
    pub folds: Vec<FoldOutcome>,
    pub predictions: FoldPredictions,
}

/// Conditioned predictions for the cohort's test subjects (id order) on
/// the listed tasks, with the conditioning map optionally replaced.
pub fn predict_tasks(
    model: &Model,
    cohort: &Cohort,
    h: &MeshHierarchy,
    tasks: &[usize],
    map_override: Option<&GroupAverageMap>,
) -> Result<Vec<(String, String, ChannelField)>> {
    let mut out = Vec::new();
    for &i in &cohort.test_indices_by_id() {
        let s = &cohort.subjects[i];
        for &j in tasks {
            let t = cohort.tasks.task(j);
            let gavg = map_override.unwrap_or(&t.gavg);
            out.push((s.id.clone(), t.id.clone(), opic_forward(model, h, &s.connectome, gavg)?));
        }
    }
    Ok(out)
}

/// One conditioned model per task group, each trained from scratch with
/// that group excluded, predicting every task for every test subject.
pub fn logo_run(cohort: &Cohort, h: &MeshHierarchy, cfg: &TrainConfig, net: &UNetConfig) -> Result<LogoOutcome> {
    let groups = cohort.tasks.groups();
    if groups.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-group-out needs at least 2 task groups, found {}",
            groups.len()
        )));
    }
    let all: Vec<usize> = (0..cohort.tasks.len()).collect();
    let mut folds = Vec::with_capacity(groups.len());
    let mut predictions = FoldPredictions {
        folds: groups.clone(),
        entries: Vec::new(),
    };
    for (f, g) in groups.iter().enumerate() {
        let seed = derive_seed(cfg.seed, "fold", f as u64);
        let fold_cfg = TrainConfig {
            holdout_group: Some(g.clone()),
            seed,
            ..cfg.clone()
        };
        info!("fold {f}: holding out {g}");
        let model = Model::opic(cohort.hemispheres, cohort.components, net.clone(), seed)?;
        let trained = train(model, cohort, h, &fold_cfg)?;
        for (subject, task, field) in predict_tasks(&trained.model, cohort, h, &all, None)? {
            let in_domain = cohort.tasks.task(cohort.tasks.index_of(&task)?).group != *g;
            predictions.entries.push(FoldPrediction {
                fold: f,
                subject,
                task,
                in_domain,
                field,
            });
        }
        folds.push(FoldOutcome {
            group: g.clone(),
            seed,
            trained,
        });
    }
    Ok(LogoOutcome { folds, predictions })
}
