//! Synthetic cohorts with known generating parameters.
//!
//! Spatial structure comes from smooth random fields: white noise on a
//! coarse icosphere level, unpooled to the working level. Per subject, a
//! latent vector mixes smooth modes into per-vertex correlation targets; the
//! subject's resting timeseries are built so their Pearson correlations with
//! the component timeseries hit those targets, and the connectome is then
//! recomputed from the series. Task contrasts are exact functions of the
//! task and the recomputed connectome, plus observation noise.

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::ParcelMap;
use crate::cohort::{AveragePool, Cohort, Parcellation, Split, Subject, TaskTable};
use crate::connectome::{compute_connectome, Connectome, Timeseries};
use crate::error::{Error, Result};
use crate::eval::{dice_auc, dice_curve, mse, THRESHOLDS};
use crate::linalg::least_squares;
use crate::mesh::{build_hierarchy, MeshHierarchy};
use crate::nncore::{mesh_unpool, ChannelField};
use crate::seed::{rng_for, SeedRecord};

/// How task contrasts depend on the connectome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastModel {
    /// `g_j(v)·(1 + β·z + γ·z²)` with `z = w_j·c(v)`: the task pattern is
    /// reshaped by a connectome-driven gain shared in part across tasks.
    #[default]
    Modulated,
    /// `b_pj + W_pj·c(v) (+ γ·(W_pj·c(v))²)` per parcel `p`.
    ParcelLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub level: usize,
    pub hemispheres: usize,
    pub components: usize,
    pub latent_dims: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub groups: usize,
    pub tasks_per_group: usize,
    pub sigma_obs: f64,
    pub sigma_rt: f64,
    pub seed: u64,
    pub timepoints: usize,
    pub contrast: ContrastModel,
    pub nonlinear: bool,
    /// β: linear gain of the subject-specific modulation.
    pub subject_effect: f64,
    /// γ: weight of the squared term, used when `nonlinear` is set.
    pub nonlinear_strength: f64,
    /// η: group-specific share of the modulation direction.
    pub group_specificity: f64,
    /// τ: task-specific share of the spatial pattern within a group.
    pub task_specificity: f64,
    /// Weight of the subject-invariant component maps in the connectome.
    pub anatomy_weight: f64,
    /// Weight of the latent-driven modes in the connectome.
    pub latent_weight: f64,
    /// Per-entry noise on the connectome targets.
    pub feature_noise: f64,
    pub average_pool: AveragePool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            level: 4,
            hemispheres: 1,
            components: 8,
            latent_dims: 4,
            n_train: 40,
            n_val: 8,
            n_test: 12,
            groups: 4,
            tasks_per_group: 3,
            sigma_obs: 0.1,
            sigma_rt: 0.1,
            seed: 0,
            timepoints: 64,
            contrast: ContrastModel::Modulated,
            nonlinear: true,
            subject_effect: 3.0,
            nonlinear_strength: 2.0,
            group_specificity: 0.5,
            task_specificity: 0.5,
            anatomy_weight: 0.5,
            latent_weight: 1.0,
            feature_noise: 0.05,
            average_pool: AveragePool::TrainVal,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return fail("subject counts must be at least 1".into());
        }
        if self.groups < 2 {
            return fail(format!("need at least 2 task groups, got {}", self.groups));
        }
        if self.tasks_per_group == 0 {
            return fail("tasks_per_group must be at least 1".into());
        }
        if self.components == 0 || self.latent_dims == 0 {
            return fail("components and latent_dims must be at least 1".into());
        }
        if !(1..=2).contains(&self.hemispheres) {
            return fail(format!("hemispheres must be 1 or 2, got {}", self.hemispheres));
        }
        if self.level > 7 {
            return fail(format!("mesh level {} is too fine", self.level));
        }
        if self.timepoints < self.components + 2 {
            return fail(format!(
                "timepoints ({}) must exceed components + 1 ({})",
                self.timepoints,
                self.components + 1
            ));
        }
        let reals = [
            ("sigma_obs", self.sigma_obs),
            ("sigma_rt", self.sigma_rt),
            ("subject_effect", self.subject_effect),
            ("nonlinear_strength", self.nonlinear_strength),
            ("group_specificity", self.group_specificity),
            ("task_specificity", self.task_specificity),
            ("anatomy_weight", self.anatomy_weight),
            ("latent_weight", self.latent_weight),
            ("feature_noise", self.feature_noise),
        ];
        for (name, x) in reals {
            if !x.is_finite() || x < 0.0 {
                return fail(format!("{name} must be finite and non-negative, got {x}"));
            }
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn group_id(g: usize) -> String {
        format!("G{}", g + 1)
    }

    /// `(task id, group id)` pairs in task-table order.
    pub fn task_ids(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for g in 0..self.groups {
            for t in 0..self.tasks_per_group {
                out.push((format!("G{}_T{}", g + 1, t + 1), Self::group_id(g)));
            }
        }
        out
    }

    fn split_of(&self, i: usize) -> Split {
        if i < self.n_train {
            Split::Train
        } else if i < self.n_train + self.n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// The generating parameters of a synthetic cohort.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub model: ContrastModel,
    pub beta: f64,
    /// Effective squared-term weight (0 when the nonlinearity is off).
    pub gamma: f64,
    /// `g_j`, one `H×V` field per task.
    pub patterns: Vec<ChannelField>,
    /// Unit modulation direction `w_j` per task.
    pub directions: Vec<Vec<f64>>,
    /// `[task][parcel]` affine maps (parcel-linear model only).
    pub parcel_maps: Vec<Vec<ParcelMap>>,
    /// Latent vector per subject, cohort order.
    pub latents: Vec<Vec<f64>>,
    /// Noiseless contrast per subject and task.
    pub cores: Vec<Vec<ChannelField>>,
}

impl GroundTruth {
    /// Vertexwise affine map `(intercept[H·V], weights[H·V·D])` of a task,
    /// when the contrast is linear in the connectome.
    pub fn vertex_linear_map(&self, task: usize, parcels: &Parcellation) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.gamma != 0.0 {
            return None;
        }
        let g = &self.patterns[task];
        let d = self.directions[task].len();
        let n = g.data().len();
        let mut b = vec![0.0; n];
        let mut w = vec![0.0; n * d];
        for i in 0..n {
            match self.model {
                ContrastModel::Modulated => {
                    b[i] = g.data()[i];
                    for k in 0..d {
                        w[i * d + k] = self.beta * g.data()[i] * self.directions[task][k];
                    }
                }
                ContrastModel::ParcelLinear => {
                    let m = &self.parcel_maps[task][parcels.labels()[i]];
                    b[i] = m.intercept;
                    w[i * d..(i + 1) * d].copy_from_slice(&m.weights);
                }
            }
        }
        Some((b, w))
    }

    /// Noiseless contrast of a task for an arbitrary connectome.
    pub fn core(&self, task: usize, c: &Connectome, parcels: &Parcellation) -> Result<ChannelField> {
        let g = &self.patterns[task];
        let (hn, n, d) = (c.hemispheres(), c.vertices(), c.components());
        let mut out = vec![0.0; hn * n];
        for h in 0..hn {
            for v in 0..n {
                let f = c.features(h, v);
                let i = h * n + v;
                out[i] = match self.model {
                    ContrastModel::Modulated => {
                        let z = dot(&self.directions[task], f);
                        g.data()[i] * (1.0 + self.beta * z + self.gamma * z * z)
                    }
                    ContrastModel::ParcelLinear => {
                        let m = &self.parcel_maps[task][parcels.labels()[i]];
                        let lin = dot(&m.weights, f);
                        m.intercept + lin + self.gamma * lin * lin
                    }
                };
            }
        }
        debug_assert_eq!(d, self.directions[task].len());
        ChannelField::new(c.level(), hn, n, out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Zero-mean, unit-variance random field, smooth at the scale of `coarse`.
fn smooth_field(h: &MeshHierarchy, coarse: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let start = coarse.min(h.finest_level());
    let n = h.levels()[start].num_vertices();
    let noise: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let mut f = ChannelField::new(start, 1, n, noise).expect("finite noise");
    while f.level() < h.finest_level() {
        f = mesh_unpool(&f, h).expect("level within hierarchy");
    }
    let mut data = f.into_data();
    let m = data.iter().sum::<f64>() / data.len() as f64;
    let sd = (data.iter().map(|x| (x - m).powi(2)).sum::<f64>() / data.len() as f64).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    data.iter_mut().for_each(|x| *x = (*x - m) / sd);
    data
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / n).collect()
}

/// Random centered unit vector of length `t` orthogonal to every row of `basis`.
fn orthogonal_unit(basis: &[Vec<f64>], t: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = (0..t).map(|_| normal(rng)).collect();
        let m = x.iter().sum::<f64>() / t as f64;
        x.iter_mut().for_each(|a| *a -= m);
        for b in basis {
            let p = dot(&x, b);
            x.iter_mut().zip(b).for_each(|(a, bi)| *a -= p * bi);
        }
        let n = dot(&x, &x).sqrt();
        if n > 1e-6 {
            return x.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Vertex and component timeseries whose sample correlations equal `rho`
/// (`V×D`, every row inside the unit ball).
fn synthesize_timeseries(
    rho: &[f64],
    d: usize,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Timeseries>, Vec<Timeseries>)> {
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let z = orthogonal_unit(&comps, t, rng);
        comps.push(z);
    }
    let v = rho.len() / d;
    let mut verts = Vec::with_capacity(v);
    for row in rho.chunks(d) {
        let n = orthogonal_unit(&comps, t, rng);
        let resid = (1.0 - dot(row, row)).max(0.0).sqrt();
        let x: Vec<f64> = (0..t)
            .map(|s| row.iter().zip(&comps).map(|(r, z)| r * z[s]).sum::<f64>() + resid * n[s])
            .collect();
        verts.push(Timeseries::new(x)?);
    }
    let comps = comps.into_iter().map(Timeseries::new).collect::<Result<_>>()?;
    Ok((verts, comps))
}

fn noisy(core: &ChannelField, sigma: f64, rng: &mut ChaCha8Rng) -> Result<ChannelField> {
    if sigma == 0.0 {
        return Ok(core.clone());
    }
    let data = core.data().iter().map(|x| x + sigma * normal(rng)).collect();
    ChannelField::new(core.level(), core.channels(), core.vertices(), data)
}

/// Deterministic synthetic cohort for `cfg`.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<Cohort> {
    cfg.validate()?;
    let h = build_hierarchy(cfg.level);
    let (hn, d, k) = (cfg.hemispheres, cfg.components, cfg.latent_dims);
    let n = h.finest().num_vertices();
    let master = cfg.seed;

    let mut space = rng_for(master, "space", 0);
    // anatomy[h][d], modes[h][k][d]: V-length smooth fields
    let anatomy: Vec<Vec<Vec<f64>>> = (0..hn)
        .map(|_| (0..d).map(|_| smooth_field(&h, 1, &mut space)).collect())
        .collect();
    let modes: Vec<Vec<Vec<Vec<f64>>>> = (0..hn)
        .map(|_| {
            (0..k)
                .map(|_| (0..d).map(|_| smooth_field(&h, 2, &mut space)).collect())
                .collect()
        })
        .collect();
    let mut labels = Vec::with_capacity(hn * n);
    for (hi, maps) in anatomy.iter().enumerate() {
        for v in 0..n {
            let best = (0..d)
                .max_by(|&a, &b| maps[a][v].total_cmp(&maps[b][v]).then(b.cmp(&a)))
                .expect("at least one component");
            labels.push(hi * d + best);
        }
    }
    let parcels = Parcellation::new(labels, hn * d)?;

    let shared = {
        let mut r = rng_for(master, "shared", 0);
        (0..d).map(|_| normal(&mut r)).collect::<Vec<_>>()
    };
    let mut group_patterns = Vec::new();
    let mut group_dirs = Vec::new();
    for g in 0..cfg.groups {
        let mut r = rng_for(master, "group", g as u64);
        let p: Vec<f64> = (0..hn).flat_map(|_| smooth_field(&h, 1, &mut r)).collect();
        let w: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
        group_patterns.push(p);
        group_dirs.push(w);
    }
    let task_ids = cfg.task_ids();
    let mut patterns = Vec::with_capacity(task_ids.len());
    let mut directions = Vec::with_capacity(task_ids.len());
    let mut parcel_maps = Vec::with_capacity(task_ids.len());
    for j in 0..task_ids.len() {
        let g = j / cfg.tasks_per_group;
        let mut r = rng_for(master, "task", j as u64);
        let q: Vec<f64> = (0..hn).flat_map(|_| smooth_field(&h, 2, &mut r)).collect();
        let raw: Vec<f64> = group_patterns[g]
            .iter()
            .zip(&q)
            .map(|(p, q)| p + cfg.task_specificity * q)
            .collect();
        let m = raw.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let m = if m > 0.0 { m } else { 1.0 };
        patterns.push(ChannelField::new(cfg.level, hn, n, raw.iter().map(|x| x / m).collect())?);
        directions.push(unit(
            shared
                .iter()
                .zip(&group_dirs[g])
                .map(|(s, w)| s + cfg.group_specificity * w)
                .collect(),
        ));
        parcel_maps.push(
            (0..parcels.count())
                .map(|_| ParcelMap {
                    intercept: normal(&mut r),
                    weights: (0..d).map(|_| normal(&mut r)).collect(),
                })
                .collect::<Vec<_>>(),
        );
    }
    let mut truth = GroundTruth {
        model: cfg.contrast,
        beta: cfg.subject_effect,
        gamma: if cfg.nonlinear { cfg.nonlinear_strength } else { 0.0 },
        patterns,
        directions,
        parcel_maps,
        latents: Vec::new(),
        cores: Vec::new(),
    };

    let mut subjects = Vec::with_capacity(cfg.n_subjects());
    let mut lineage = Vec::new();
    for i in 0..cfg.n_subjects() {
        let split = cfg.split_of(i);
        let rec = SeedRecord::derive(master, "subject", i as u64);
        let mut r = rng_for(master, "subject", i as u64);
        let s: Vec<f64> = (0..k).map(|_| normal(&mut r)).collect();
        let mut parts = Vec::with_capacity(hn);
        for hi in 0..hn {
            let mut rho = vec![0.0; n * d];
            for v in 0..n {
                let row = &mut rho[v * d..(v + 1) * d];
                for (di, x) in row.iter_mut().enumerate() {
                    let latent: f64 = (0..k).map(|ki| s[ki] * modes[hi][ki][di][v]).sum();
                    *x = cfg.anatomy_weight * anatomy[hi][di][v]
                        + cfg.latent_weight * latent
                        + cfg.feature_noise * normal(&mut r);
                }
                let norm = (1.0 + dot(row, row)).sqrt();
                row.iter_mut().for_each(|x| *x /= norm);
            }
            let (vts, cts) = synthesize_timeseries(&rho, d, cfg.timepoints, &mut r)?;
            parts.push(compute_connectome(cfg.level, &vts, &cts)?);
        }
        let connectome = Connectome::stack(parts)?;

        let mut obs_rng = rng_for(master, "noise", i as u64);
        let mut rt_rng = rng_for(master, "retest", i as u64);
        let mut contrasts = Vec::with_capacity(task_ids.len());
        let mut retest = Vec::new();
        let mut cores = Vec::with_capacity(task_ids.len());
        for j in 0..task_ids.len() {
            let core = truth.core(j, &connectome, &parcels)?;
            contrasts.push(noisy(&core, cfg.sigma_obs, &mut obs_rng)?);
            if split == Split::Test {
                retest.push(noisy(&core, cfg.sigma_rt, &mut rt_rng)?);
            }
            cores.push(core);
        }
        truth.latents.push(s);
        truth.cores.push(cores);
        subjects.push(Subject {
            id: format!("S{i:03}"),
            split,
            connectome,
            contrasts,
            retest: (split == Split::Test).then_some(retest),
        });
        lineage.push(rec);
    }

    let tasks = TaskTable::from_subjects(&task_ids, &subjects, cfg.average_pool)?;
    let cohort = Cohort {
        level: cfg.level,
        hemispheres: hn,
        components: d,
        subjects,
        tasks,
        parcels,
        truth: Some(truth),
        master_seed: Some(master),
        lineage,
    };
    cohort.validate()?;
    Ok(cohort)
}

/// Vertexwise least-squares fit of one task's contrast on connectome
/// features over the training subjects, scored on the test subjects.
#[derive(Debug, Clone)]
pub struct OracleFit {
    pub task: String,
    /// `H·V` intercepts.
    pub intercepts: Vec<f64>,
    /// `H·V·D` feature weights.
    pub weights: Vec<f64>,
    /// Vertices that needed the ridge fallback.
    pub ridge_vertices: usize,
    pub heldout_l2: f64,
    pub heldout_dice_auc: f64,
    pub group_average_l2: f64,
    pub group_average_dice_auc: f64,
}

impl OracleFit {
    pub fn predict(&self, c: &Connectome) -> Result<ChannelField> {
        let (hn, n, d) = (c.hemispheres(), c.vertices(), c.components());
        if self.intercepts.len() != hn * n || self.weights.len() != hn * n * d {
            return Err(Error::shape("connectome does not match the oracle fit"));
        }
        let mut out = Vec::with_capacity(hn * n);
        for h in 0..hn {
            for v in 0..n {
                let i = h * n + v;
                out.push(self.intercepts[i] + dot(&self.weights[i * d..(i + 1) * d], c.features(h, v)));
            }
        }
        ChannelField::new(c.level(), hn, n, out)
    }
}

pub fn oracle_linear_fit(cohort: &Cohort, task: &str) -> Result<OracleFit> {
    let j = cohort.tasks.index_of(task)?;
    let train = cohort.split_indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Data("oracle fit needs training subjects".into()));
    }
    let (hn, n, d) = (cohort.hemispheres, cohort.vertices(), cohort.components);
    let cols = d + 1;
    let mut intercepts = vec![0.0; hn * n];
    let mut weights = vec![0.0; hn * n * d];
    let mut ridge_vertices = 0;
    let mut x = vec![0.0; train.len() * cols];
    let mut y = vec![0.0; train.len()];
    for h in 0..hn {
        for v in 0..n {
            let i = h * n + v;
            for (row, &s) in train.iter().enumerate() {
                let subj = &cohort.subjects[s];
                x[row * cols] = 1.0;
                x[row * cols + 1..(row + 1) * cols].copy_from_slice(subj.connectome.features(h, v));
                y[row] = subj.contrasts[j].data()[i];
            }
            let (w, ridge) = least_squares(train.len(), cols, &x, &y);
            ridge_vertices += ridge as usize;
            intercepts[i] = w[0];
            weights[i * d..(i + 1) * d].copy_from_slice(&w[1..]);
        }
    }
    if ridge_vertices > 0 {
        warn!("oracle fit for {task}: ridge fallback at {ridge_vertices} vertices");
    }
    let mut fit = OracleFit {
        task: task.to_string(),
        intercepts,
        weights,
        ridge_vertices,
        heldout_l2: 0.0,
        heldout_dice_auc: 0.0,
        group_average_l2: 0.0,
        group_average_dice_auc: 0.0,
    };
    let test = cohort.test_indices_by_id();
    if !test.is_empty() {
        let gavg = &cohort.tasks.task(j).mean;
        let m = test.len() as f64;
        for &s in &test {
            let subj = &cohort.subjects[s];
            let target = &subj.contrasts[j];
            let pred = fit.predict(&subj.connectome)?;
            fit.heldout_l2 += mse(&pred, target)? / m;
            fit.heldout_dice_auc += dice_auc(&dice_curve(&pred, target, &THRESHOLDS)?)? / m;
            fit.group_average_l2 += mse(gavg, target)? / m;
            fit.group_average_dice_auc += dice_auc(&dice_curve(gavg, target, &THRESHOLDS)?)? / m;
        }
    }
    Ok(fit)
}
