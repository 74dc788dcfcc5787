//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the criteria execute in order and
//! the training runs do not compete for cores.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use opic_cli::commands::{
    cmd_eval, cmd_logo, cmd_predict, cmd_synth, cmd_train, PredictRequest, PredictSource, TrainRequest,
};
use opic_core::eval::{method, mse, paired_ttest, EvalReport};
use opic_core::io::{load_model, read_dataset, read_otf, write_otf, OtfTensor};
use opic_core::mesh::build_hierarchy;
use opic_core::models::{opic_forward, ModelKind, TrainConfig, UNetConfig};
use opic_core::synthdata::SynthConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Run {
    failed: Vec<&'static str>,
}

impl Run {
    fn check(&mut self, name: &'static str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS  {name:<24} {msg} [{secs:.1} s]"),
            Err(msg) => {
                println!("FAIL  {name:<24} {msg} [{secs:.1} s]");
                self.failed.push(name);
            }
        }
    }
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<(), String> {
    let e = start.elapsed();
    if e < limit {
        Ok(())
    } else {
        Err(format!("{what} took {:.1} s, limit {:.0} s", e.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn mesh() -> Outcome {
    let t = Instant::now();
    support::mesh_suite(5)?;
    within(Duration::from_secs(5), t, "mesh suite")?;
    Ok("levels 0..=5".into())
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let f = support::opic_fixture(3);
    let cases = [
        ("conv", support::grad_single_conv()),
        ("conv+pool+unpool", support::grad_conv_pool_unpool()),
        ("opic l2", support::grad_opic_l2(&f)),
        ("rc", support::grad_rc(&f)),
    ];
    let mut parts = Vec::new();
    for (name, r) in &cases {
        if !r.passes(support::GRAD_TOL) {
            return Err(format!("{name}: {r:?}"));
        }
        parts.push(format!("{name} {:.1e}", r.max_rel_error));
    }
    within(Duration::from_secs(120), t, "gradient suite")?;
    Ok(parts.join(", "))
}

fn metrics() -> Outcome {
    let checks = support::metric_suite();
    let failed: Vec<String> = checks
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(format!("{} worked examples", checks.len()))
    } else {
        Err(failed.join("; "))
    }
}

fn baselines() -> Outcome {
    let c = support::linear_cohort();
    let e = support::linear_recovery_error(&c);
    if e >= 1e-6 {
        return Err(format!("coefficient error {e:.2e}"));
    }
    let mut worst = f64::NEG_INFINITY;
    for (task, oracle, gavg) in support::oracle_vs_group_average(&c) {
        if oracle > gavg {
            return Err(format!("{task}: oracle l2 {oracle:.4} above group average {gavg:.4}"));
        }
        worst = worst.max(oracle - gavg);
    }
    Ok(format!("recovery error {e:.1e}, oracle minus group-average l2 at most {worst:.3}"))
}

/// Shared state of the end-to-end criteria.
struct Pipeline {
    root: PathBuf,
    data: PathBuf,
    logo: PathBuf,
    report: Option<EvalReport>,
    groups: Vec<String>,
    net: UNetConfig,
    train: TrainConfig,
}

impl Pipeline {
    fn new(root: &Path) -> Self {
        Pipeline {
            root: root.to_path_buf(),
            data: root.join("data"),
            logo: root.join("logo"),
            report: None,
            groups: Vec::new(),
            net: UNetConfig {
                widths: vec![16, 32, 64],
                ..Default::default()
            },
            train: TrainConfig::default(),
        }
    }

    fn report(&self) -> Result<&EvalReport, String> {
        self.report.as_ref().ok_or_else(|| "leave-one-group-out run did not complete".into())
    }
}

/// Per-subject AUC averaged over a set of tasks.
fn pooled(r: &EvalReport, tasks: &[&str], m: &str) -> Result<Vec<f64>, String> {
    let mut acc = vec![0.0; r.subjects.len()];
    for t in tasks {
        let s = r
            .task(t)
            .and_then(|x| x.score(m))
            .ok_or_else(|| format!("no {m} score for {t}"))?;
        for (a, v) in acc.iter_mut().zip(&s.per_subject) {
            *a += v / tasks.len() as f64;
        }
    }
    Ok(acc)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn group_tasks<'r>(r: &'r EvalReport, g: &str) -> Vec<&'r str> {
    r.tasks.iter().filter(|t| t.group == g).map(|t| t.task.as_str()).collect()
}

fn table1(p: &mut Pipeline) -> Outcome {
    let t = Instant::now();
    let (cohort, _) = cmd_synth(&SynthConfig::default(), &p.data).map_err(err)?;
    p.groups = cohort.tasks.groups();
    cmd_logo(&p.data, &p.logo, &p.train, &p.net).map_err(err)?;
    let report = cmd_eval(&p.data, &[p.logo.join("predictions")], &p.root.join("eval")).map_err(err)?;
    within(Duration::from_secs(30 * 60), t, "synth + logo + eval")?;
    let mut parts = Vec::new();
    let mut bad = Vec::new();
    for g in &p.groups {
        let tasks = group_tasks(&report, g);
        let ours = pooled(&report, &tasks, method::OPIC_OOD)?;
        let base = pooled(&report, &tasks, method::GROUP_AVERAGE)?;
        let tt = paired_ttest(&ours, &base).map_err(err)?;
        let line = format!("{g} {:.3} vs {:.3} (p={:.1e})", mean(&ours), mean(&base), tt.p);
        if !(mean(&ours) > mean(&base) && tt.p < 0.05) {
            bad.push(line.clone());
        }
        parts.push(line);
    }
    p.report = Some(report);
    if bad.is_empty() {
        Ok(parts.join(", "))
    } else {
        Err(parts.join(", "))
    }
}

fn table2(p: &Pipeline) -> Outcome {
    let report = p.report()?;
    let group = p.groups.first().ok_or("no task groups")?;
    let held: Vec<String> = group_tasks(report, group).iter().take(2).map(|s| s.to_string()).collect();
    let ckpt = p.root.join("seen_group");
    let train = TrainConfig {
        holdout_tasks: held.clone(),
        ..p.train.clone()
    };
    let req = TrainRequest {
        model: ModelKind::Opic,
        train,
        net: p.net.clone(),
    };
    cmd_train(&p.data, &ckpt, &req).map_err(err)?;
    let preds = p.root.join("seen_group_predictions");
    let pr = PredictRequest {
        source: PredictSource::Checkpoint(ckpt),
        method: None,
        zero_map: false,
        tasks: held.clone(),
    };
    cmd_predict(&p.data, &preds, &pr).map_err(err)?;
    let r = cmd_eval(&p.data, &[p.logo.join("predictions"), preds], &p.root.join("eval_seen")).map_err(err)?;
    let held: Vec<&str> = held.iter().map(String::as_str).collect();
    let id = mean(&pooled(&r, &held, method::OPIC_ID)?);
    let seen = mean(&pooled(&r, &held, method::OPIC_OOD_SEEN)?);
    let new = mean(&pooled(&r, &held, method::OPIC_OOD)?);
    let msg = format!("{}: in-domain {id:.4}, OOD seen group {seen:.4}, OOD new group {new:.4}", held.join("+"));
    if id >= seen && seen >= new - 0.005 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn identification(p: &Pipeline) -> Outcome {
    let r = p.report()?;
    let chance = 1.0 / r.subjects.len() as f64;
    let mut parts = Vec::new();
    let mut ok = true;
    for id in &r.predictable_tasks {
        let acc = r
            .task(id)
            .and_then(|t| t.score(method::OPIC_OOD))
            .and_then(|s| s.id_normalized.as_ref())
            .ok_or_else(|| format!("no identification accuracy for {id}"))?;
        ok &= acc.top1 > 3.0 * chance;
        parts.push(format!("{id} {:.2}", acc.top1));
    }
    if r.predictable_tasks.is_empty() {
        return Err("no predictable tasks".into());
    }
    let msg = format!("top-1 vs {:.3}: {}", 3.0 * chance, parts.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn liveness(p: &Pipeline) -> Outcome {
    let base = p.report()?;
    let cohort = read_dataset(&p.data).map_err(err)?;
    let h = build_hierarchy(cohort.level);
    let g = &p.groups[0];
    let model = load_model(&p.logo.join("folds").join(g)).map_err(err)?;
    let subj = &cohort.subjects[cohort.test_indices_by_id()[0]];
    let (a, b) = (cohort.tasks.task(0), cohort.tasks.task(cohort.tasks.len() - 1));
    let pa = opic_forward(&model, &h, &subj.connectome, &a.gavg).map_err(err)?;
    let pa2 = opic_forward(&model, &h, &subj.connectome, &a.gavg).map_err(err)?;
    let pb = opic_forward(&model, &h, &subj.connectome, &b.gavg).map_err(err)?;
    let rms = mse(&pa, &pa2).map_err(err)?.sqrt();
    let scale = (pa.data().iter().map(|x| x * x).sum::<f64>() / pa.data().len() as f64).sqrt();
    let floor = rms.max(f64::from(f32::EPSILON) * scale);
    let dist = mse(&pa, &pb).map_err(err)?.sqrt();
    if dist <= 10.0 * floor {
        return Err(format!("swap distance {dist:.2e} vs noise floor {floor:.2e}"));
    }

    let mut dirs = vec![p.logo.join("predictions")];
    for g in &p.groups {
        let out = p.root.join("zero_map").join(g);
        let req = PredictRequest {
            source: PredictSource::Checkpoint(p.logo.join("folds").join(g)),
            method: None,
            zero_map: true,
            tasks: group_tasks(base, g).iter().map(|s| s.to_string()).collect(),
        };
        cmd_predict(&p.data, &out, &req).map_err(err)?;
        dirs.push(out);
    }
    let r = cmd_eval(&p.data, &dirs, &p.root.join("eval_zero_map")).map_err(err)?;
    let all: Vec<&str> = r.tasks.iter().map(|t| t.task.as_str()).collect();
    let live = mean(&pooled(&r, &all, method::OPIC_OOD)?);
    let zero = mean(&pooled(&r, &all, &format!("{}-zero-map", method::OPIC_OOD))?);
    let msg = format!("swap distance {dist:.3} (floor {floor:.1e}); OOD AUC {live:.4} vs zero map {zero:.4}");
    if zero < live {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism(root: &Path) -> Outcome {
    let synth = SynthConfig {
        level: 3,
        n_train: 10,
        n_val: 4,
        n_test: 4,
        seed: 31,
        ..Default::default()
    };
    let req = TrainRequest {
        model: ModelKind::Opic,
        train: TrainConfig {
            epochs: 2,
            seed: 9,
            holdout_group: Some("G2".into()),
            ..Default::default()
        },
        net: UNetConfig {
            widths: vec![8, 16],
            ..Default::default()
        },
    };
    let mut runs = Vec::new();
    for k in 0..2 {
        let dir = root.join(format!("repeat{k}"));
        cmd_synth(&synth, &dir.join("data")).map_err(err)?;
        cmd_train(&dir.join("data"), &dir.join("ckpt"), &req).map_err(err)?;
        let mut files = tree(&dir);
        // the training log carries wall-clock timestamps
        files.retain(|p, _| !p.ends_with("train_log.jsonl"));
        runs.push(files);
    }
    if runs[0] != runs[1] {
        let diff: Vec<_> = runs[0]
            .iter()
            .filter(|(p, b)| runs[1].get(*p) != Some(*b))
            .map(|(p, _)| p.display().to_string())
            .collect();
        return Err(format!("runs differ in {diff:?}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for rank in 0..=4usize {
        let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..5)).collect();
        let n: usize = dims.iter().product();
        let v64: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.random())).collect();
        let v32: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.random())).collect();
        for t in [OtfTensor::f64(dims.clone(), v64).map_err(err)?, OtfTensor::f32(dims.clone(), v32).map_err(err)?] {
            let path = root.join(format!("roundtrip_{checked}.otf"));
            write_otf(&path, &t).map_err(err)?;
            let back = read_otf(&path).map_err(err)?;
            if back.to_bytes() != t.to_bytes() {
                return Err(format!("OTF round trip changed a rank-{rank} tensor"));
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{} identical files across two runs, {checked} OTF tensors bit-exact",
        runs[0].len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut run = Run { failed: Vec::new() };
    run.check("mesh", mesh);
    run.check("gradients", gradients);
    run.check("metric oracles", metrics);
    run.check("baseline oracle", baselines);
    let mut p = Pipeline::new(tmp.path());
    run.check("ood vs group average", || table1(&mut p));
    run.check("seen-group holdout", || table2(&p));
    run.check("identification", || identification(&p));
    run.check("conditioning liveness", || liveness(&p));
    run.check("determinism", || determinism(tmp.path()));
    if !run.failed.is_empty() {
        eprintln!("failed criteria: {}", run.failed.join(", "));
        std::process::exit(1);
    }
}
