use std::collections::BTreeSet;
use std::time::Instant;

use log::{info, warn};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Split};
use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;
use crate::nncore::{adam_step, AdamHyper, AdamState, ParamStore, RcWeights, Real, Tape};
use crate::par::map_ordered;
use crate::seed::rng_for;

use super::{Model, ModelKind, UNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L2,
    Rc,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossKind::L2),
            "rc" => Ok(LossKind::Rc),
            _ => Err(Error::InvalidArgument(format!("unknown loss `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Task group excluded from training (conditioned model only).
    pub holdout_group: Option<String>,
    /// Individual tasks excluded from training (conditioned model only).
    pub holdout_tasks: Vec<String>,
    pub loss: LossKind,
    pub rc: RcWeights,
    /// Other subjects' contrasts compared against per sample under the rc loss.
    pub rc_negatives: usize,
    /// Extra epochs with the rc loss after the main schedule.
    pub rc_finetune_epochs: usize,
    /// Feed an all-zero conditioning map during training.
    pub ablate_group_average: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 10,
            lr: 3e-3,
            seed: 0,
            holdout_group: None,
            holdout_tasks: Vec::new(),
            loss: LossKind::L2,
            rc: RcWeights::default(),
            rc_negatives: 4,
            rc_finetune_epochs: 0,
            ablate_group_average: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs + self.rc_finetune_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if (self.loss == LossKind::Rc || self.rc_finetune_epochs > 0) && self.rc_negatives == 0 {
            return Err(Error::Config("rc loss needs rc_negatives >= 1".into()));
        }
        self.rc.validate()
    }
}

/// Losses after one epoch (epoch 0 is the initialization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossKind,
    /// Mean training loss over the epoch's steps; at epoch 0, a full pass.
    pub train_loss: f64,
    /// Mean l2 over validation subjects and training tasks.
    pub val_loss: f64,
    pub steps: usize,
    /// Every task whose contrasts were read by a gradient step.
    pub tasks_read: Vec<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_tasks: Vec<String>,
}

impl Trained {
    pub fn best_val_loss(&self) -> f64 {
        self.history[self.best_epoch].val_loss
    }
}

pub enum LossSpec<'x, T> {
    L2 {
        target: &'x [T],
    },
    Rc {
        own: &'x [T],
        others: Vec<&'x [T]>,
        weights: RcWeights,
    },
}

/// Loss and parameter gradient for one sample.
pub fn loss_and_grad<T: Real>(
    net: &UNet,
    params: &ParamStore<T>,
    h: &MeshHierarchy,
    input: Vec<T>,
    loss: &LossSpec<T>,
) -> Result<(f64, Vec<T>)> {
    let mut tape = Tape::new(params);
    let x = tape.input(input, net.in_channels, h.finest().num_vertices())?;
    let y = net.record(&mut tape, x, h)?;
    let l = match loss {
        LossSpec::L2 { target } => tape.l2_loss(y, target)?,
        LossSpec::Rc {
            own,
            others,
            weights,
        } => tape.rc_loss(y, own, others, *weights)?,
    };
    let value = tape.scalar(l);
    let grads = tape.backward(l)?;
    Ok((value, grads.params))
}

struct Problem<'c> {
    kind: ModelKind,
    cohort: &'c Cohort,
    /// Connectome input per cohort subject (train and val only).
    conn: Vec<Option<Vec<f32>>>,
    /// Conditioning map per cohort task.
    gavg: Vec<Vec<f32>>,
    /// Cohort task indices the model learns from.
    tasks: Vec<usize>,
}

type Sample = (usize, Option<usize>);

impl Problem<'_> {
    fn input(&self, s: usize, task: Option<usize>) -> Vec<f32> {
        let conn = self.conn[s].as_ref().expect("connectome cached for training subjects");
        match (self.kind, task) {
            (ModelKind::Opic, Some(j)) => {
                let mut x = Vec::with_capacity(conn.len() + self.gavg[j].len());
                x.extend_from_slice(conn);
                x.extend_from_slice(&self.gavg[j]);
                x
            }
            _ => conn.clone(),
        }
    }

    fn target(&self, s: usize, task: Option<usize>) -> Vec<f32> {
        let subj = &self.cohort.subjects[s];
        let tasks = match task {
            Some(j) => vec![j],
            None => self.tasks.clone(),
        };
        tasks
            .iter()
            .flat_map(|&j| subj.contrasts[j].data().iter().map(|&x| x as f32))
            .collect()
    }

    fn samples(&self, subjects: &[usize]) -> Vec<Sample> {
        let mut out = Vec::new();
        for &s in subjects {
            match self.kind {
                ModelKind::Opic => out.extend(self.tasks.iter().map(|&j| (s, Some(j)))),
                ModelKind::Bsc => out.push((s, None)),
            }
        }
        out
    }

    fn mean_l2(&self, net: &UNet, params: &ParamStore<f32>, h: &MeshHierarchy, samples: &[Sample]) -> Result<f64> {
        let losses = map_ordered(samples, |&(s, j)| -> Result<f64> {
            let y = net.forward(params, h, self.input(s, j))?;
            let t = self.target(s, j);
            let n = t.len() as f64;
            Ok(y.iter()
                .zip(&t)
                .map(|(a, b)| {
                    let d = (*a - *b) as f64;
                    d * d
                })
                .sum::<f64>()
                / n)
        });
        let mut sum = 0.0;
        for l in losses {
            sum += l?;
        }
        Ok(sum / samples.len().max(1) as f64)
    }
}

fn training_tasks(model: &Model, cohort: &Cohort, cfg: &TrainConfig) -> Result<Vec<usize>> {
    match model.kind {
        ModelKind::Opic => {
            let mut excluded = BTreeSet::new();
            if let Some(g) = &cfg.holdout_group {
                excluded.extend(cohort.tasks.tasks_in_group(g)?);
            }
            for t in &cfg.holdout_tasks {
                excluded.insert(cohort.tasks.index_of(t)?);
            }
            let tasks: Vec<usize> = (0..cohort.tasks.len()).filter(|j| !excluded.contains(j)).collect();
            if tasks.is_empty() {
                return Err(Error::Config("every task is held out".into()));
            }
            Ok(tasks)
        }
        ModelKind::Bsc => {
            if cfg.holdout_group.is_some() || !cfg.holdout_tasks.is_empty() {
                return Err(Error::Config(
                    "the per-task model trains on its fixed task list; no holdout applies".into(),
                ));
            }
            model.tasks.iter().map(|t| cohort.tasks.index_of(t)).collect()
        }
    }
}

/// Trains `model` with Adam and returns the best-validation checkpoint.
///
/// Samples are (subject, task) pairs for the conditioned model and whole
/// subjects for the per-task model. Per-sample gradients are computed in
/// parallel and summed in sample order, so results are bit-reproducible.
pub fn train(model: Model, cohort: &Cohort, h: &MeshHierarchy, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    model.net.check_hierarchy(h)?;
    if cohort.level != h.finest_level() {
        return Err(Error::LevelMismatch {
            expected: h.finest_level(),
            actual: cohort.level,
        });
    }
    if cohort.hemispheres != model.hemispheres || cohort.components != model.components {
        return Err(Error::shape("model and cohort disagree on hemispheres or components"));
    }
    let tasks = training_tasks(&model, cohort, cfg)?;
    let train_subjects = cohort.split_indices(Split::Train);
    let val_subjects = cohort.split_indices(Split::Val);
    if train_subjects.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let uses_rc = cfg.loss == LossKind::Rc || cfg.rc_finetune_epochs > 0;
    if uses_rc && train_subjects.len() < 2 {
        return Err(Error::Data("rc loss needs at least two training subjects".into()));
    }

    let mut conn = vec![None; cohort.subjects.len()];
    for &s in train_subjects.iter().chain(&val_subjects) {
        conn[s] = Some(
            cohort.subjects[s]
                .connectome
                .to_field()
                .data()
                .iter()
                .map(|&x| x as f32)
                .collect(),
        );
    }
    let gavg = cohort
        .tasks
        .tasks()
        .iter()
        .map(|t| {
            t.gavg
                .field
                .data()
                .iter()
                .map(|&x| if cfg.ablate_group_average { 0.0 } else { x as f32 })
                .collect()
        })
        .collect();
    let problem = Problem {
        kind: model.kind,
        cohort,
        conn,
        gavg,
        tasks: tasks.clone(),
    };
    let train_samples = problem.samples(&train_subjects);
    let val_samples = problem.samples(&val_subjects);
    let select_on = if val_samples.is_empty() {
        warn!("no validation subjects; selecting the checkpoint on training loss");
        &train_samples
    } else {
        &val_samples
    };
    let task_names: Vec<String> = tasks.iter().map(|&j| cohort.tasks.task(j).id.clone()).collect();

    let Model { net, params, .. } = &model;
    let mut params = params.clone();
    let mut adam = AdamState::new(params.len(), AdamHyper::with_lr(cfg.lr));
    let mut history = Vec::new();
    let start = Instant::now();
    let init_train = problem.mean_l2(net, &params, h, &train_samples)?;
    let init_val = problem.mean_l2(net, &params, h, select_on)?;
    history.push(EpochRecord {
        epoch: 0,
        loss: LossKind::L2,
        train_loss: init_train,
        val_loss: init_val,
        steps: 0,
        tasks_read: Vec::new(),
        seconds: start.elapsed().as_secs_f64(),
    });
    let mut best = (0, init_val, params.clone());

    let total = cfg.epochs + cfg.rc_finetune_epochs;
    let mut order = train_samples.clone();
    for epoch in 1..=total {
        let t0 = Instant::now();
        let kind = if epoch > cfg.epochs { LossKind::Rc } else { cfg.loss };
        order.copy_from_slice(&train_samples);
        order.shuffle(&mut rng_for(cfg.seed, "shuffle", epoch as u64));
        let mut neg_rng = rng_for(cfg.seed, "negatives", epoch as u64);
        let mut read = BTreeSet::new();
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for batch in order.chunks(cfg.batch_size) {
            let negatives: Vec<Vec<usize>> = batch
                .iter()
                .map(|&(s, _)| match kind {
                    LossKind::L2 => Vec::new(),
                    LossKind::Rc => draw_negatives(&train_subjects, s, cfg.rc_negatives, &mut neg_rng),
                })
                .collect();
            for &(_, j) in batch {
                match j {
                    Some(j) => {
                        read.insert(j);
                    }
                    None => read.extend(tasks.iter().copied()),
                }
            }
            let items: Vec<(Sample, &Vec<usize>)> = batch.iter().copied().zip(&negatives).collect();
            let results = map_ordered(&items, |&((s, j), negs)| {
                let input = problem.input(s, j);
                let own = problem.target(s, j);
                match kind {
                    LossKind::L2 => loss_and_grad(net, &params, h, input, &LossSpec::L2 { target: &own }),
                    LossKind::Rc => {
                        let others: Vec<Vec<f32>> = negs.iter().map(|&o| problem.target(o, j)).collect();
                        let spec = LossSpec::Rc {
                            own: &own,
                            others: others.iter().map(Vec::as_slice).collect(),
                            weights: cfg.rc,
                        };
                        loss_and_grad(net, &params, h, input, &spec)
                    }
                }
            });
            let mut grad = vec![0.0f32; params.len()];
            let scale = 1.0 / batch.len() as f32;
            for r in results {
                let (l, g) = r.map_err(|e| diverged(epoch, e))?;
                if !l.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("loss {l}"),
                    });
                }
                loss_sum += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += *b * scale);
            }
            adam_step(params.data_mut(), &grad, &mut adam)?;
            steps += 1;
        }
        let train_loss = loss_sum / train_samples.len() as f64;
        let val_loss = problem.mean_l2(net, &params, h, select_on).map_err(|e| diverged(epoch, e))?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        history.push(EpochRecord {
            epoch,
            loss: kind,
            train_loss,
            val_loss,
            steps,
            tasks_read: read.iter().map(|&j| cohort.tasks.task(j).id.clone()).collect(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, params.clone());
        }
    }

    let (best_epoch, _, best_params) = best;
    Ok(Trained {
        model: Model {
            params: best_params,
            ..model
        },
        history,
        best_epoch,
        train_tasks: task_names,
    })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Diverged { epoch, detail },
        other => other,
    }
}

fn draw_negatives<R: Rng>(pool: &[usize], own: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let others: Vec<usize> = pool.iter().copied().filter(|&s| s != own).collect();
    if others.is_empty() {
        return Vec::new();
    }
    others.choose_multiple(rng, k.min(others.len())).copied().collect()
}
