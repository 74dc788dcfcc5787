//! Overlap and identification metrics, and the per-task evaluation report.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::nncore::ChannelField;

/// Default top-X% grid: 5, 10, …, 50.
pub const THRESHOLDS: [f64; 10] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];

pub fn mse(a: &ChannelField, b: &ChannelField) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Flat indices sorted by descending value, ties by lower index.
fn ranking(a: &[f64]) -> Vec<usize> {
    let mut ix: Vec<usize> = (0..a.len()).collect();
    ix.sort_by(|&i, &j| a[j].total_cmp(&a[i]).then(i.cmp(&j)));
    ix
}

fn top_k(n: usize, x: f64) -> Result<usize> {
    if !(x > 0.0 && x <= 100.0) {
        return Err(Error::InvalidArgument(format!("threshold {x} outside (0, 100]")));
    }
    let k = (x / 100.0 * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "top {x}% of {n} values selects nothing"
        )));
    }
    Ok(k)
}

fn overlap(ra: &[usize], rb: &[usize], k: usize, mark: &mut [u32], stamp: u32) -> f64 {
    for &i in &ra[..k] {
        mark[i] = stamp;
    }
    let common = rb[..k].iter().filter(|&&i| mark[i] == stamp).count();
    common as f64 / k as f64
}

/// Dice overlap of the top `x`% values of `a` and `b`, over all channels.
pub fn dice_top_x(a: &ChannelField, b: &ChannelField, x: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    let k = top_k(a.data().len(), x)?;
    let mut mark = vec![0; a.data().len()];
    Ok(overlap(&ranking(a.data()), &ranking(b.data()), k, &mut mark, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

fn check_grid(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "thresholds must be nonempty and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn curve_from_rankings(ra: &[usize], rb: &[usize], thresholds: &[f64], mark: &mut [u32]) -> Result<DiceCurve> {
    let mut values = Vec::with_capacity(thresholds.len());
    for (t, &x) in thresholds.iter().enumerate() {
        let k = top_k(ra.len(), x)?;
        values.push(overlap(ra, rb, k, mark, t as u32 + 1));
    }
    mark.iter_mut().for_each(|m| *m = 0);
    Ok(DiceCurve {
        thresholds: thresholds.to_vec(),
        values,
    })
}

pub fn dice_curve(a: &ChannelField, b: &ChannelField, thresholds: &[f64]) -> Result<DiceCurve> {
    a.check_same_shape(b)?;
    check_grid(thresholds)?;
    let mut mark = vec![0; a.data().len()];
    curve_from_rankings(&ranking(a.data()), &ranking(b.data()), thresholds, &mut mark)
}

/// Trapezoidal area under the curve divided by the threshold span.
pub fn dice_auc(curve: &DiceCurve) -> Result<f64> {
    let (x, y) = (&curve.thresholds, &curve.values);
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::InvalidArgument(
            "dice AUC needs at least two curve points".into(),
        ));
    }
    let area: f64 = (1..x.len())
        .map(|i| 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]))
        .sum();
    Ok(area / (x[x.len() - 1] - x[0]))
}

/// Dice AUC on the default grid.
pub fn auc(a: &ChannelField, b: &ChannelField) -> Result<f64> {
    dice_auc(&dice_curve(a, b, &THRESHOLDS)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdNormalization {
    Raw,
    ColumnStandardized,
}

/// `M[i][j]` = Dice AUC of subject i's prediction against subject j's target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationMatrix {
    pub n: usize,
    /// Row-major `n×n`.
    pub data: Vec<f64>,
    pub normalization: IdNormalization,
}

impl IdentificationMatrix {
    pub fn new(n: usize, data: Vec<f64>, normalization: IdNormalization) -> Result<Self> {
        if n < 2 || data.len() != n * n {
            return Err(Error::shape(format!(
                "identification matrix needs n >= 2 and n*n entries, got n={n}, {} entries",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("identification matrix".into()));
        }
        Ok(IdentificationMatrix {
            n,
            data,
            normalization,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Subject-labelled field, used to line up predictions with targets.
pub type Labeled<'a> = (&'a str, &'a ChannelField);

pub fn identification_matrix(preds: &[Labeled], targets: &[Labeled]) -> Result<IdentificationMatrix> {
    identification_matrix_on(preds, targets, &THRESHOLDS)
}

pub fn identification_matrix_on(
    preds: &[Labeled],
    targets: &[Labeled],
    thresholds: &[f64],
) -> Result<IdentificationMatrix> {
    if preds.len() != targets.len() || preds.iter().zip(targets).any(|(p, t)| p.0 != t.0) {
        return Err(Error::Data(
            "predictions and targets are not in the same subject order".into(),
        ));
    }
    check_grid(thresholds)?;
    for (p, t) in preds.iter().zip(targets) {
        p.1.check_same_shape(t.1)?;
        preds[0].1.check_same_shape(p.1)?;
    }
    let n = preds.len();
    let rp: Vec<Vec<usize>> = preds.iter().map(|p| ranking(p.1.data())).collect();
    let rt: Vec<Vec<usize>> = targets.iter().map(|t| ranking(t.1.data())).collect();
    let mut mark = vec![0; rp.first().map_or(0, Vec::len)];
    let mut data = Vec::with_capacity(n * n);
    for a in &rp {
        for b in &rt {
            data.push(dice_auc(&curve_from_rankings(a, b, thresholds, &mut mark)?)?);
        }
    }
    IdentificationMatrix::new(n, data, IdNormalization::Raw)
}

/// Standardizes each column to mean 0 and population variance 1.
///
/// A zero-variance column is left as is, with a warning.
pub fn normalize_id_matrix(m: &IdentificationMatrix) -> Result<IdentificationMatrix> {
    let n = m.n;
    let mut out = m.data.clone();
    for j in 0..n {
        let mean = (0..n).map(|i| m.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (m.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        if var <= 1e-300 {
            warn!("identification column {j} has zero variance; left unnormalized");
            continue;
        }
        let sd = var.sqrt();
        for i in 0..n {
            out[i * n + j] = (m.get(i, j) - mean) / sd;
        }
    }
    IdentificationMatrix::new(n, out, IdNormalization::ColumnStandardized)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdAccuracy {
    /// Fraction of rows whose diagonal entry is the strict row maximum.
    pub top1: f64,
    /// Mean of `(n − rank)/(n − 1)` over rows; 1 is perfect.
    pub mean_rank: f64,
}

pub fn identification_accuracy(m: &IdentificationMatrix) -> Result<IdAccuracy> {
    let n = m.n;
    if n < 2 {
        return Err(Error::InvalidArgument("identification needs n >= 2".into()));
    }
    let mut top1 = 0usize;
    let mut score = 0.0;
    for i in 0..n {
        let d = m.get(i, i);
        // rivals that tie or beat the diagonal push it down
        let rank = 1 + (0..n).filter(|&j| j != i && m.get(i, j) >= d).count();
        if rank == 1 {
            top1 += 1;
        }
        score += (n - rank) as f64 / (n - 1) as f64;
    }
    Ok(IdAccuracy {
        top1: top1 as f64 / n as f64,
        mean_rank: score / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Paired two-tailed t-test of `a − b`.
///
/// Identical samples give `t = 0, p = 1`; differences that are constant but
/// nonzero have no defined statistic and are rejected.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs two equal samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    if d.iter().all(|&x| x == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, df });
    }
    if !(var > 0.0) {
        return Err(Error::Degenerate(
            "paired differences have zero variance".into(),
        ));
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Degenerate(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}

/// Per-task predictability evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictability {
    pub task: String,
    pub retest_auc: f64,
    pub group_average_auc: f64,
    pub predictable: bool,
}

/// A task is predictable when test sessions resemble their retest sessions
/// more than the group average, on average over subjects.
pub fn task_predictability(
    task: &str,
    test: &[&ChannelField],
    retest: &[Option<&ChannelField>],
    gavg: &ChannelField,
) -> Result<Predictability> {
    if test.is_empty() || test.len() != retest.len() {
        return Err(Error::Data(format!("task {task}: test/retest sets differ")));
    }
    let n = test.len() as f64;
    let (mut rt, mut ga) = (0.0, 0.0);
    for (t, r) in test.iter().zip(retest) {
        let r = r.ok_or_else(|| Error::Data(format!("task {task}: missing retest contrast")))?;
        rt += auc(t, r)?;
        ga += auc(t, gavg)?;
    }
    let (retest_auc, group_average_auc) = (rt / n, ga / n);
    Ok(Predictability {
        task: task.to_string(),
        retest_auc,
        group_average_auc,
        predictable: retest_auc > group_average_auc,
    })
}

/// Predictability of every task over the cohort's test subjects.
pub fn predictable_filter(cohort: &Cohort) -> Result<Vec<Predictability>> {
    let test = cohort.test_indices_by_id();
    (0..cohort.tasks.len())
        .map(|j| {
            let task = cohort.tasks.task(j);
            let obs: Vec<&ChannelField> = test.iter().map(|&i| &cohort.subjects[i].contrasts[j]).collect();
            let rt: Vec<Option<&ChannelField>> = test
                .iter()
                .map(|&i| cohort.subjects[i].retest.as_ref().map(|r| &r[j]))
                .collect();
            task_predictability(&task.id, &obs, &rt, &task.mean)
        })
        .collect()
}

/// Method labels used in reports.
pub mod method {
    pub const OPIC_ID: &str = "opic-id";
    pub const OPIC_OOD: &str = "opic-ood";
    pub const OPIC_OOD_SEEN: &str = "opic-ood-seen";
    pub const BSC_ID: &str = "bsc-id";
    pub const GROUP_AVERAGE: &str = "group-average";
    pub const LINEAR: &str = "linear-regression";
    pub const RETEST: &str = "retest";
}

/// Predictions keyed by method, then by `(subject id, task id)`.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    pub methods: BTreeMap<String, BTreeMap<(String, String), ChannelField>>,
}

impl PredictionSet {
    pub fn insert(&mut self, method: &str, subject: &str, task: &str, field: ChannelField) {
        self.methods
            .entry(method.to_string())
            .or_default()
            .insert((subject.to_string(), task.to_string()), field);
    }

    pub fn get(&self, method: &str, subject: &str, task: &str) -> Option<&ChannelField> {
        self.methods
            .get(method)?
            .get(&(subject.to_string(), task.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub mean_auc: f64,
    pub n: usize,
    /// Per-subject Dice AUC, subjects ordered by id.
    pub per_subject: Vec<f64>,
    pub mean_curve: Vec<f64>,
    pub id_raw: Option<IdAccuracy>,
    pub id_normalized: Option<IdAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: String,
    pub baseline: String,
    pub mean_difference: f64,
    pub ttest: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub group: String,
    pub predictable: bool,
    pub methods: Vec<MethodScore>,
    pub comparisons: Vec<Comparison>,
}

impl TaskReport {
    pub fn score(&self, method: &str) -> Option<&MethodScore> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Mean Dice AUC of one method in one scenario, pooled over tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub method: String,
    pub tasks: usize,
    pub n: usize,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub subjects: Vec<String>,
    pub predictability: Vec<Predictability>,
    pub predictable_tasks: Vec<String>,
    pub tasks: Vec<TaskReport>,
    pub scenarios: Vec<ScenarioSummary>,
}

impl EvalReport {
    pub fn task(&self, id: &str) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == id)
    }

    /// One line per (task, method, threshold): `task,method,threshold,dice`.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("task,method,threshold,dice\n");
        for t in &self.tasks {
            for m in &t.methods {
                for (x, d) in self.thresholds.iter().zip(&m.mean_curve) {
                    s.push_str(&format!("{},{},{x},{d:.6}\n", t.task, m.method));
                }
            }
        }
        s
    }

    /// Table of per-task mean Dice AUC, one column per method.
    pub fn table_csv(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        for t in &self.tasks {
            for m in &t.methods {
                if !methods.contains(&m.method.as_str()) {
                    methods.push(&m.method);
                }
            }
        }
        let mut s = format!("task,group,predictable,{}\n", methods.join(","));
        for t in &self.tasks {
            let cells: Vec<String> = methods
                .iter()
                .map(|m| t.score(m).map_or(String::new(), |x| format!("{:.4}", x.mean_auc)))
                .collect();
            s.push_str(&format!("{},{},{},{}\n", t.task, t.group, t.predictable, cells.join(",")));
        }
        s
    }
}

/// Evaluates every method in `preds` plus the group-average and retest
/// references on the cohort's test subjects.
///
/// Methods missing a prediction for some test subject of a task are
/// skipped for that task. Subjects are processed in id order.
pub fn evaluate(cohort: &Cohort, preds: &PredictionSet) -> Result<EvalReport> {
    let test = cohort.test_indices_by_id();
    if test.is_empty() {
        return Err(Error::Data("no test subjects to evaluate".into()));
    }
    let ids: Vec<&str> = test.iter().map(|&i| cohort.subjects[i].id.as_str()).collect();
    let predictability = predictable_filter(cohort)?;
    let mut tasks = Vec::with_capacity(cohort.tasks.len());
    for (j, task) in cohort.tasks.tasks().iter().enumerate() {
        let targets: Vec<&ChannelField> = test.iter().map(|&i| &cohort.subjects[i].contrasts[j]).collect();
        let mut candidates: Vec<(String, Vec<&ChannelField>)> = Vec::new();
        for (name, map) in &preds.methods {
            let fields: Option<Vec<&ChannelField>> = ids
                .iter()
                .map(|s| map.get(&(s.to_string(), task.id.clone())))
                .collect();
            if let Some(f) = fields {
                candidates.push((name.clone(), f));
            }
        }
        candidates.push((method::GROUP_AVERAGE.into(), vec![&task.mean; test.len()]));
        let retest: Option<Vec<&ChannelField>> = test
            .iter()
            .map(|&i| cohort.subjects[i].retest.as_ref().map(|r| &r[j]))
            .collect();
        if let Some(r) = retest {
            candidates.push((method::RETEST.into(), r));
        }

        let mut methods = Vec::with_capacity(candidates.len());
        for (name, fields) in &candidates {
            let labeled_p: Vec<Labeled> = ids.iter().copied().zip(fields.iter().copied()).collect();
            let labeled_t: Vec<Labeled> = ids.iter().copied().zip(targets.iter().copied()).collect();
            let mut per_subject = Vec::with_capacity(ids.len());
            let mut mean_curve = vec![0.0; THRESHOLDS.len()];
            for (p, t) in fields.iter().zip(&targets) {
                let c = dice_curve(p, t, &THRESHOLDS)?;
                per_subject.push(dice_auc(&c)?);
                for (m, v) in mean_curve.iter_mut().zip(&c.values) {
                    *m += v / ids.len() as f64;
                }
            }
            let (id_raw, id_normalized) = if ids.len() >= 2 && name != method::GROUP_AVERAGE {
                let raw = identification_matrix(&labeled_p, &labeled_t)?;
                let norm = normalize_id_matrix(&raw)?;
                (
                    Some(identification_accuracy(&raw)?),
                    Some(identification_accuracy(&norm)?),
                )
            } else {
                (None, None)
            };
            methods.push(MethodScore {
                method: name.clone(),
                mean_auc: per_subject.iter().sum::<f64>() / per_subject.len() as f64,
                n: per_subject.len(),
                per_subject,
                mean_curve,
                id_raw,
                id_normalized,
            });
        }

        let mut comparisons = Vec::new();
        for ours in [method::OPIC_ID, method::OPIC_OOD, method::OPIC_OOD_SEEN] {
            let Some(a) = methods.iter().find(|m| m.method == ours) else { continue };
            for b in methods.iter().filter(|m| !m.method.starts_with("opic")) {
                let diff = a.mean_auc - b.mean_auc;
                comparisons.push(Comparison {
                    method: ours.to_string(),
                    baseline: b.method.clone(),
                    mean_difference: diff,
                    ttest: paired_ttest(&a.per_subject, &b.per_subject).ok(),
                });
            }
        }
        tasks.push(TaskReport {
            task: task.id.clone(),
            group: task.group.clone(),
            predictable: predictability[j].predictable,
            methods,
            comparisons,
        });
    }

    let scenarios = summarize(&tasks);
    Ok(EvalReport {
        thresholds: THRESHOLDS.to_vec(),
        subjects: ids.iter().map(|s| s.to_string()).collect(),
        predictable_tasks: predictability
            .iter()
            .filter(|p| p.predictable)
            .map(|p| p.task.clone())
            .collect(),
        predictability,
        tasks,
        scenarios,
    })
}

fn summarize(tasks: &[TaskReport]) -> Vec<ScenarioSummary> {
    let scenario_of = |m: &str| match m {
        method::OPIC_ID | method::BSC_ID => "in-domain",
        method::OPIC_OOD => "ood-new-group",
        method::OPIC_OOD_SEEN => "ood-seen-group",
        _ => "reference",
    };
    let mut acc: BTreeMap<(String, String), (usize, usize, f64)> = BTreeMap::new();
    for t in tasks {
        for m in &t.methods {
            let e = acc
                .entry((scenario_of(&m.method).to_string(), m.method.clone()))
                .or_insert((0, 0, 0.0));
            e.0 += 1;
            e.1 += m.n;
            e.2 += m.mean_auc;
        }
    }
    acc.into_iter()
        .map(|((scenario, method), (tasks, n, sum))| ScenarioSummary {
            scenario,
            method,
            tasks,
            n,
            mean_auc: sum / tasks as f64,
        })
        .collect()
}
