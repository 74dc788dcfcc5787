use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use opic_core::baselines::{fit_linear_baseline, linreg_predict};
use opic_core::cohort::{Cohort, Split};
use opic_core::connectome::GroupAverageMap;
use opic_core::eval::{
    evaluate, identification_matrix, method, normalize_id_matrix, EvalReport, IdentificationMatrix, Labeled,
    PredictionSet,
};
use opic_core::io::{
    load_model, read_dataset, read_json, read_prediction_set, save_linear_model, save_trained, write_atomic,
    write_dataset, write_json, write_otf, CheckpointManifest, Manifest, OtfTensor, PredictionIndex,
    PredictionWriter, CHECKPOINT_FILE,
};
use opic_core::mesh::build_hierarchy;
use opic_core::models::{
    average_indomain_predictions, bsc_forward, logo_run, predict_tasks, train, Model, ModelKind, TrainConfig,
    Trained, UNetConfig,
};
use opic_core::nncore::ChannelField;
use opic_core::synthdata::{generate_cohort, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const REPORT_FILE: &str = "report.json";
pub const LOGO_FILE: &str = "logo.json";

pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> CliResult<(Cohort, Manifest)> {
    let cohort = generate_cohort(cfg)?;
    let generator = serde_json::json!({ "synth": cfg });
    let manifest = write_dataset(&cohort, out, Some(generator))?;
    Ok((cohort, manifest))
}

pub fn cohort_summary(c: &Cohort) -> String {
    let count = |s| c.split_indices(s).len();
    format!(
        "level {} ({} vertices), {} hemisphere(s), {} components\n\
         subjects: {} train, {} val, {} test\n\
         tasks: {} in {} groups ({})",
        c.level,
        c.vertices(),
        c.hemispheres,
        c.components,
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        c.tasks.len(),
        c.tasks.groups().len(),
        c.tasks.groups().join(", ")
    )
}

#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub model: ModelKind,
    pub train: TrainConfig,
    pub net: UNetConfig,
}

pub fn cmd_train(data: &Path, out: &Path, req: &TrainRequest) -> CliResult<Trained> {
    let cohort = read_dataset(data)?;
    let h = build_hierarchy(cohort.level);
    let (hn, d) = (cohort.hemispheres, cohort.components);
    let model = match req.model {
        ModelKind::Opic => Model::opic(hn, d, req.net.clone(), req.train.seed)?,
        ModelKind::Bsc => {
            let tasks = cohort.tasks.tasks().iter().map(|t| t.id.clone()).collect();
            Model::bsc(hn, d, tasks, req.net.clone(), req.train.seed)?
        }
    };
    let trained = train(model, &cohort, &h, &req.train)?;
    save_trained(&trained, &req.train, out)?;
    info!(
        "saved {} checkpoint to {} (best epoch {}, val loss {:.5})",
        req.model,
        out.display(),
        trained.best_epoch,
        trained.best_val_loss()
    );
    Ok(trained)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub group: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogoSummary {
    pub master_seed: u64,
    pub folds: Vec<FoldSummary>,
    pub predictions: String,
}

/// One fold per task group; fold checkpoints under `folds/<group>`,
/// predictions (per fold plus merged) under `predictions`.
pub fn cmd_logo(data: &Path, out: &Path, cfg: &TrainConfig, net: &UNetConfig) -> CliResult<LogoSummary> {
    let cohort = read_dataset(data)?;
    let h = build_hierarchy(cohort.level);
    let outcome = logo_run(&cohort, &h, cfg, net)?;

    let mut folds = Vec::with_capacity(outcome.folds.len());
    for (f, fold) in outcome.folds.iter().enumerate() {
        let rel = format!("folds/{}", fold.group);
        let fold_cfg = TrainConfig {
            holdout_group: Some(fold.group.clone()),
            seed: fold.seed,
            ..cfg.clone()
        };
        save_trained(&fold.trained, &fold_cfg, &out.join(&rel))?;
        folds.push(FoldSummary {
            fold: f,
            group: fold.group.clone(),
            seed: fold.seed,
            best_epoch: fold.trained.best_epoch,
            best_val_loss: fold.trained.best_val_loss(),
            checkpoint: rel,
        });
    }

    let fp = &outcome.predictions;
    let mut w = PredictionWriter::new();
    w.add_folds("opic", fp);
    for &i in &cohort.test_indices_by_id() {
        let s = &cohort.subjects[i].id;
        for t in cohort.tasks.tasks() {
            w.add(method::OPIC_ID, s, &t.id, average_indomain_predictions(fp, s, &t.id)?);
            w.add(method::OPIC_OOD, s, &t.id, fp.out_of_domain(s, &t.id)?.clone());
        }
    }
    w.write(&out.join("predictions"))?;

    let summary = LogoSummary {
        master_seed: cfg.seed,
        folds,
        predictions: "predictions".into(),
    };
    write_json(&out.join(LOGO_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub enum PredictSource {
    Checkpoint(PathBuf),
    Linear,
}

#[derive(Debug, Clone)]
pub struct PredictRequest {
    pub source: PredictSource,
    pub method: Option<String>,
    pub zero_map: bool,
    /// Restrict predictions to these task ids; empty means all tasks.
    pub tasks: Vec<String>,
}

/// Default label of a conditioned model's prediction for `task`.
fn opic_label(cm: &CheckpointManifest, cohort: &Cohort, task: usize) -> &'static str {
    let t = cohort.tasks.task(task);
    match &cm.training {
        Some(s) if s.config.holdout_group.as_deref() == Some(t.group.as_str()) => method::OPIC_OOD,
        Some(s) if s.config.holdout_tasks.contains(&t.id) => method::OPIC_OOD_SEEN,
        _ => method::OPIC_ID,
    }
}

pub fn cmd_predict(data: &Path, out: &Path, req: &PredictRequest) -> CliResult<PredictionIndex> {
    let cohort = read_dataset(data)?;
    let test = cohort.test_indices_by_id();
    let selected: Vec<usize> = if req.tasks.is_empty() {
        (0..cohort.tasks.len()).collect()
    } else {
        req.tasks.iter().map(|t| cohort.tasks.index_of(t)).collect::<Result<_, _>>()?
    };
    let mut w = PredictionWriter::new();
    let label = |default: &str| -> String {
        match (&req.method, req.zero_map) {
            (Some(m), _) => m.clone(),
            (None, true) => format!("{default}-zero-map"),
            (None, false) => default.to_string(),
        }
    };
    match &req.source {
        PredictSource::Linear => {
            if req.zero_map {
                return Err(CliError::Usage("--zero-map needs a conditioned checkpoint".into()));
            }
            let model = fit_linear_baseline(&cohort, &cohort.parcels)?;
            save_linear_model(&model, out)?;
            let m = label(method::LINEAR);
            for &i in &test {
                let s = &cohort.subjects[i];
                for t in selected.iter().map(|&j| cohort.tasks.task(j)) {
                    w.add(&m, &s.id, &t.id, linreg_predict(&model, &s.connectome, &t.id)?);
                }
            }
        }
        PredictSource::Checkpoint(dir) => {
            let model = load_model(dir)?;
            let cm: CheckpointManifest = read_json(&dir.join(CHECKPOINT_FILE))?;
            let h = build_hierarchy(cohort.level);
            match model.kind {
                ModelKind::Opic => {
                    let zero = GroupAverageMap {
                        task: "zero".into(),
                        field: ChannelField::zeros(cohort.level, cohort.hemispheres, cohort.vertices()),
                    };
                    let preds = predict_tasks(&model, &cohort, &h, &selected, req.zero_map.then_some(&zero))?;
                    for (s, t, f) in preds {
                        let j = cohort.tasks.index_of(&t)?;
                        w.add(&label(opic_label(&cm, &cohort, j)), &s, &t, f);
                    }
                }
                ModelKind::Bsc => {
                    if req.zero_map {
                        return Err(CliError::Usage("--zero-map needs a conditioned checkpoint".into()));
                    }
                    let m = label(method::BSC_ID);
                    for &i in &test {
                        let s = &cohort.subjects[i];
                        let all = bsc_forward(&model, &h, &s.connectome)?;
                        for t in selected.iter().map(|&j| cohort.tasks.task(j)) {
                            w.add(&m, &s.id, &t.id, model.task_block(&all, &t.id)?);
                        }
                    }
                }
            }
        }
    }
    Ok(w.write(out)?)
}

/// Every method must cover all test subjects for each task it predicts.
fn check_coverage(cohort: &Cohort, set: &PredictionSet) -> CliResult<()> {
    let ids: BTreeSet<&str> = cohort
        .test_indices_by_id()
        .iter()
        .map(|&i| cohort.subjects[i].id.as_str())
        .collect();
    for (m, map) in &set.methods {
        let mut by_task: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (s, t) in map.keys() {
            cohort.tasks.index_of(t)?;
            by_task.entry(t).or_default().insert(s);
        }
        for (t, have) in by_task {
            if let Some(missing) = ids.iter().find(|s| !have.contains(*s)) {
                return Err(opic_core::Error::Data(format!("missing {m} prediction for {missing}/{t}")).into());
            }
        }
    }
    Ok(())
}

/// Merges prediction directories; a method may span directories as long
/// as no (subject, task) pair is predicted twice.
pub fn load_predictions(dirs: &[PathBuf]) -> CliResult<PredictionSet> {
    let mut set = PredictionSet::default();
    for d in dirs {
        for (m, map) in read_prediction_set(d)?.methods {
            let dst = set.methods.entry(m.clone()).or_default();
            for ((s, t), f) in map {
                if dst.insert((s.clone(), t.clone()), f).is_some() {
                    return Err(CliError::Usage(format!(
                        "{m} prediction for {s}/{t} appears in more than one directory"
                    )));
                }
            }
        }
    }
    Ok(set)
}

/// Raw and column-standardized identification matrix of each task and method.
pub fn identification_matrices(
    cohort: &Cohort,
    set: &PredictionSet,
) -> CliResult<Vec<(String, String, IdentificationMatrix, IdentificationMatrix)>> {
    let test = cohort.test_indices_by_id();
    let mut out = Vec::new();
    if test.len() < 2 {
        return Ok(out);
    }
    for (j, task) in cohort.tasks.tasks().iter().enumerate() {
        let targets: Vec<Labeled> = test
            .iter()
            .map(|&i| (cohort.subjects[i].id.as_str(), &cohort.subjects[i].contrasts[j]))
            .collect();
        let mut sources: Vec<(String, Vec<Labeled>)> = Vec::new();
        for (m, map) in &set.methods {
            let preds: Option<Vec<Labeled>> = test
                .iter()
                .map(|&i| {
                    let s = cohort.subjects[i].id.as_str();
                    map.get(&(s.to_string(), task.id.clone())).map(|f| (s, f))
                })
                .collect();
            if let Some(p) = preds {
                sources.push((m.clone(), p));
            }
        }
        let retest: Option<Vec<Labeled>> = test
            .iter()
            .map(|&i| {
                let s = &cohort.subjects[i];
                s.retest.as_ref().map(|r| (s.id.as_str(), &r[j]))
            })
            .collect();
        if let Some(r) = retest {
            sources.push((method::RETEST.into(), r));
        }
        for (m, p) in sources {
            let raw = identification_matrix(&p, &targets)?;
            let norm = normalize_id_matrix(&raw)?;
            out.push((task.id.clone(), m, raw, norm));
        }
    }
    Ok(out)
}

/// Writes `report.json`, `table.csv`, `curves.csv` and identification
/// matrices under `identification/<task>/`.
pub fn cmd_eval(data: &Path, predictions: &[PathBuf], out: &Path) -> CliResult<EvalReport> {
    let cohort = read_dataset(data)?;
    let set = load_predictions(predictions)?;
    check_coverage(&cohort, &set)?;
    let report = evaluate(&cohort, &set)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    write_atomic(&out.join("table.csv"), report.table_csv().as_bytes())?;
    write_atomic(&out.join("curves.csv"), report.curves_csv().as_bytes())?;
    for (task, m, raw, norm) in identification_matrices(&cohort, &set)? {
        for (suffix, mat) in [("raw", raw), ("normalized", norm)] {
            let t = OtfTensor::f64(vec![mat.n, mat.n], mat.data)?;
            write_otf(&out.join(format!("identification/{task}/{m}_{suffix}.otf")), &t)?;
        }
    }
    Ok(report)
}

const COLUMN_ORDER: [&str; 7] = [
    method::OPIC_ID,
    method::OPIC_OOD,
    method::OPIC_OOD_SEEN,
    method::BSC_ID,
    method::LINEAR,
    method::GROUP_AVERAGE,
    method::RETEST,
];

/// Per-task mean Dice AUC table with the conditioned model's t-tests
/// against the group average, then the scenario summary.
pub fn format_report(r: &EvalReport) -> String {
    let mut methods: Vec<String> = COLUMN_ORDER
        .iter()
        .filter(|m| r.tasks.iter().any(|t| t.score(m).is_some()))
        .map(|m| m.to_string())
        .collect();
    for t in &r.tasks {
        for m in &t.methods {
            if !methods.contains(&m.method) {
                methods.push(m.method.clone());
            }
        }
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} test subjects; {} of {} tasks predictable (* marks predictable)\n",
        r.subjects.len(),
        r.predictable_tasks.len(),
        r.tasks.len()
    );
    let _ = write!(s, "{:<14}{:<8}", "task", "group");
    for m in &methods {
        let _ = write!(s, "{m:>19}");
    }
    let _ = writeln!(s, "{:>22}", "opic vs gavg (t, p)");
    for t in &r.tasks {
        let name = format!("{}{}", t.task, if t.predictable { "*" } else { "" });
        let _ = write!(s, "{name:<14}{:<8}", t.group);
        for m in &methods {
            match t.score(m) {
                Some(sc) => {
                    let _ = write!(s, "{:>19.4}", sc.mean_auc);
                }
                None => {
                    let _ = write!(s, "{:>19}", "-");
                }
            }
        }
        let cmp = [method::OPIC_OOD, method::OPIC_ID].iter().find_map(|m| {
            t.comparisons
                .iter()
                .find(|c| c.method == *m && c.baseline == method::GROUP_AVERAGE)
        });
        match cmp.and_then(|c| c.ttest.as_ref()) {
            Some(tt) => {
                let _ = writeln!(s, "{:>12.3}{:>10.2e}", tt.t, tt.p);
            }
            None => {
                let _ = writeln!(s, "{:>22}", "-");
            }
        }
    }
    let _ = writeln!(s, "\n{:<18}{:<22}{:>7}{:>12}", "scenario", "method", "tasks", "mean AUC");
    for sc in &r.scenarios {
        let _ = writeln!(s, "{:<18}{:<22}{:>7}{:>12.4}", sc.scenario, sc.method, sc.tasks, sc.mean_auc);
    }
    let _ = writeln!(s, "\nidentification (top-1 raw / normalized, chance {:.3})", 1.0 / r.subjects.len().max(1) as f64);
    for t in &r.tasks {
        for m in &t.methods {
            if let (Some(a), Some(b)) = (&m.id_raw, &m.id_normalized) {
                let _ = writeln!(s, "  {:<12}{:<22}{:>7.3}{:>8.3}", t.task, m.method, a.top1, b.top1);
            }
        }
    }
    s
}

pub fn cmd_report(eval_dir: &Path) -> CliResult<String> {
    let r: EvalReport = read_json(&eval_dir.join(REPORT_FILE))?;
    Ok(format_report(&r))
}
