//! Reference predictors: the group-average map and per-parcel linear
//! regression on connectome features.

use log::warn;

use crate::cohort::{Cohort, Parcellation, Split, TaskTable};
use crate::connectome::Connectome;
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::nncore::ChannelField;

/// Affine map `intercept + weights·features`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParcelMap {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

/// The task's unscaled group-mean contrast, identical for every subject.
pub fn group_average_predict(task: &str, table: &TaskTable) -> Result<ChannelField> {
    Ok(table.task(table.index_of(task)?).mean.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParcelLinearModel {
    pub parcels: Parcellation,
    pub components: usize,
    pub tasks: Vec<String>,
    /// `[task][parcel]`
    pub maps: Vec<Vec<ParcelMap>>,
}

impl ParcelLinearModel {
    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }
}

/// Fits on training and validation subjects.
pub fn fit_linear_baseline(cohort: &Cohort, parcels: &Parcellation) -> Result<ParcelLinearModel> {
    let mut pool = cohort.split_indices(Split::Train);
    pool.extend(cohort.split_indices(Split::Val));
    pool.sort_unstable();
    fit_linear_baseline_on(cohort, parcels, &pool)
}

/// Per-subject least squares within each parcel, averaged over `subjects`
/// in the given order.
pub fn fit_linear_baseline_on(
    cohort: &Cohort,
    parcels: &Parcellation,
    subjects: &[usize],
) -> Result<ParcelLinearModel> {
    if subjects.is_empty() {
        return Err(Error::Data("linear baseline needs at least one subject".into()));
    }
    let (n, d) = (cohort.vertices(), cohort.components);
    if parcels.labels().len() != cohort.hemispheres * n {
        return Err(Error::shape("parcellation does not match the cohort mesh"));
    }
    let cols = d + 1;
    let members = parcels.members();
    for (p, m) in members.iter().enumerate() {
        if m.is_empty() {
            warn!("parcel {p} is empty; it predicts a constant 0");
        } else if m.len() < cols {
            warn!("parcel {p} has {} vertices for {cols} unknowns; using ridge", m.len());
        }
    }
    let mut maps = Vec::with_capacity(cohort.tasks.len());
    for j in 0..cohort.tasks.len() {
        let mut task_maps = Vec::with_capacity(members.len());
        for m in &members {
            let mut acc = ParcelMap {
                intercept: 0.0,
                weights: vec![0.0; d],
            };
            if !m.is_empty() {
                let mut x = vec![0.0; m.len() * cols];
                let mut y = vec![0.0; m.len()];
                for &s in subjects {
                    let subj = &cohort.subjects[s];
                    for (row, &i) in m.iter().enumerate() {
                        x[row * cols] = 1.0;
                        x[row * cols + 1..(row + 1) * cols]
                            .copy_from_slice(subj.connectome.features(i / n, i % n));
                        y[row] = subj.contrasts[j].data()[i];
                    }
                    let (w, _) = least_squares(m.len(), cols, &x, &y);
                    acc.intercept += w[0];
                    acc.weights.iter_mut().zip(&w[1..]).for_each(|(a, b)| *a += b);
                }
                let k = subjects.len() as f64;
                acc.intercept /= k;
                acc.weights.iter_mut().for_each(|a| *a /= k);
            }
            task_maps.push(acc);
        }
        maps.push(task_maps);
    }
    Ok(ParcelLinearModel {
        parcels: parcels.clone(),
        components: d,
        tasks: cohort.tasks.tasks().iter().map(|t| t.id.clone()).collect(),
        maps,
    })
}

pub fn linreg_predict(model: &ParcelLinearModel, c: &Connectome, task: &str) -> Result<ChannelField> {
    let j = model.task_index(task)?;
    let (hn, n, d) = (c.hemispheres(), c.vertices(), c.components());
    if d != model.components || model.parcels.labels().len() != hn * n {
        return Err(Error::shape("connectome does not match the linear model"));
    }
    let mut out = Vec::with_capacity(hn * n);
    for h in 0..hn {
        for v in 0..n {
            let m = &model.maps[j][model.parcels.labels()[h * n + v]];
            let f = c.features(h, v);
            out.push(m.intercept + m.weights.iter().zip(f).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    ChannelField::new(c.level(), hn, n, out)
}
