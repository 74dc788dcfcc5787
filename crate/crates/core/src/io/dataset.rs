//! Dataset directory: `manifest.json` plus one tensor file per array.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{AveragePool, Cohort, Parcellation, Split, Subject, Task, TaskTable};
use crate::connectome::{Connectome, GroupAverageMap};
use crate::error::{Error, Result};
use crate::mesh::icosphere_vertex_count;
use crate::models::check_normalized;
use crate::nncore::ChannelField;
use crate::seed::SeedRecord;

use super::otf::{read_otf, write_atomic, write_otf, OtfTensor};
use super::{read_json, to_json};

pub const DATASET_FORMAT: &str = "opic-dataset/1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeshSpec {
    Icosphere { level: usize },
}

impl MeshSpec {
    pub fn level(&self) -> usize {
        match self {
            MeshSpec::Icosphere { level } => *level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub id: String,
    pub group: String,
    /// Unscaled vertexwise mean; recomputed from the subjects when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<String>,
    /// Abs-max scaled mean used as conditioning input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_average: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub split: Split,
    pub connectome: String,
    /// Task id to contrast file.
    pub contrasts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retest: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub mesh: MeshSpec,
    pub hemispheres: usize,
    /// Hemisphere of each output channel; left is channel 0.
    pub hemisphere_order: Vec<String>,
    pub components: usize,
    #[serde(default)]
    pub average_pool: AveragePool,
    pub parcels: String,
    pub tasks: Vec<TaskEntry>,
    pub subjects: Vec<SubjectEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lineage: Vec<SeedRecord>,
    /// Free-form description of how the data were produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParcelFile {
    count: usize,
    labels: Vec<usize>,
}

pub fn hemisphere_names(h: usize) -> Vec<String> {
    match h {
        1 => vec!["left".into()],
        2 => vec!["left".into(), "right".into()],
        _ => (0..h).map(|i| format!("h{i}")).collect(),
    }
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Self> {
        let m: Manifest = read_json(&root.join(MANIFEST))?;
        if m.format != DATASET_FORMAT {
            return Err(Error::Data(format!(
                "unsupported dataset format `{}`, expected `{DATASET_FORMAT}`",
                m.format
            )));
        }
        m.check_files(root)?;
        Ok(m)
    }

    /// Every referenced file exists; test subjects carry retest maps.
    pub fn check_files(&self, root: &Path) -> Result<()> {
        let exists = |rel: &str| -> Result<()> {
            let p = root.join(rel);
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Data(format!("manifest references missing file {}", p.display())))
            }
        };
        exists(&self.parcels)?;
        for t in &self.tasks {
            for p in t.mean.iter().chain(&t.group_average) {
                exists(p)?;
            }
        }
        for s in &self.subjects {
            exists(&s.connectome)?;
            for t in &self.tasks {
                let p = s
                    .contrasts
                    .get(&t.id)
                    .ok_or_else(|| Error::Data(format!("subject {} has no contrast for {}", s.id, t.id)))?;
                exists(p)?;
            }
            match &s.retest {
                Some(r) => {
                    for t in &self.tasks {
                        let p = r
                            .get(&t.id)
                            .ok_or_else(|| Error::Data(format!("subject {} has no retest for {}", s.id, t.id)))?;
                        exists(p)?;
                    }
                }
                None if s.split == Split::Test => {
                    return Err(Error::Data(format!("test subject {} has no retest maps", s.id)));
                }
                None => {}
            }
        }
        Ok(())
    }
}

fn field_tensor(f: &ChannelField) -> OtfTensor {
    OtfTensor::f64(vec![f.channels(), f.vertices()], f.data().to_vec()).expect("field shape")
}

fn read_field(root: &Path, rel: &str, level: usize, h: usize, v: usize) -> Result<ChannelField> {
    let p = root.join(rel);
    let t = read_otf(&p)?;
    if t.dims() != [h, v] {
        return Err(Error::Data(format!(
            "{} has dims {:?}, expected [{h}, {v}]",
            p.display(),
            t.dims()
        )));
    }
    ChannelField::new(level, h, v, t.to_f64())
}

/// Writes `cohort` under `root`. Ground truth is not persisted.
pub fn write_dataset(cohort: &Cohort, root: &Path, generator: Option<serde_json::Value>) -> Result<Manifest> {
    cohort.validate()?;
    let (hn, d, v) = (cohort.hemispheres, cohort.components, cohort.vertices());
    let put = |rel: &str, t: &OtfTensor| write_otf(&root.join(rel), t);

    let mut tasks = Vec::with_capacity(cohort.tasks.len());
    for t in cohort.tasks.tasks() {
        let mean = format!("tasks/{}_mean.otf", t.id);
        let gavg = format!("tasks/{}_gavg.otf", t.id);
        put(&mean, &field_tensor(&t.mean))?;
        put(&gavg, &field_tensor(&t.gavg.field))?;
        tasks.push(TaskEntry {
            id: t.id.clone(),
            group: t.group.clone(),
            mean: Some(mean),
            group_average: Some(gavg),
        });
    }

    let mut subjects = Vec::with_capacity(cohort.subjects.len());
    for s in &cohort.subjects {
        let base = format!("subjects/{}", s.id);
        let conn = format!("{base}/connectome.otf");
        put(&conn, &OtfTensor::f64(vec![hn, v, d], s.connectome.data().to_vec())?)?;
        let mut contrasts = BTreeMap::new();
        for (t, f) in cohort.tasks.tasks().iter().zip(&s.contrasts) {
            let rel = format!("{base}/contrast_{}.otf", t.id);
            put(&rel, &field_tensor(f))?;
            contrasts.insert(t.id.clone(), rel);
        }
        let retest = match &s.retest {
            Some(r) => {
                let mut m = BTreeMap::new();
                for (t, f) in cohort.tasks.tasks().iter().zip(r) {
                    let rel = format!("{base}/retest_{}.otf", t.id);
                    put(&rel, &field_tensor(f))?;
                    m.insert(t.id.clone(), rel);
                }
                Some(m)
            }
            None => None,
        };
        subjects.push(SubjectEntry {
            id: s.id.clone(),
            split: s.split,
            connectome: conn,
            contrasts,
            retest,
        });
    }

    let parcels = "parcels.json".to_string();
    let pf = ParcelFile {
        count: cohort.parcels.count(),
        labels: cohort.parcels.labels().to_vec(),
    };
    write_atomic(&root.join(&parcels), to_json(&pf)?.as_bytes())?;

    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        mesh: MeshSpec::Icosphere { level: cohort.level },
        hemispheres: hn,
        hemisphere_order: hemisphere_names(hn),
        components: d,
        average_pool: AveragePool::TrainVal,
        parcels,
        tasks,
        subjects,
        master_seed: cohort.master_seed,
        lineage: cohort.lineage.clone(),
        generator,
    };
    write_atomic(&root.join(MANIFEST), to_json(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Loads a dataset directory. Missing task means or group averages are
/// recomputed from the manifest's averaging pool.
pub fn read_dataset(root: &Path) -> Result<Cohort> {
    let m = Manifest::read(root)?;
    let level = m.mesh.level();
    let (hn, d) = (m.hemispheres, m.components);
    if hn == 0 || d == 0 {
        return Err(Error::Data("manifest needs hemispheres and components".into()));
    }
    let v = icosphere_vertex_count(level);

    let mut subjects = Vec::with_capacity(m.subjects.len());
    for s in &m.subjects {
        let p = root.join(&s.connectome);
        let t = read_otf(&p)?;
        if t.dims() != [hn, v, d] {
            return Err(Error::Data(format!(
                "{} has dims {:?}, expected [{hn}, {v}, {d}]",
                p.display(),
                t.dims()
            )));
        }
        let connectome = Connectome::new(level, hn, v, d, t.to_f64())?;
        let contrasts = m
            .tasks
            .iter()
            .map(|t| read_field(root, &s.contrasts[&t.id], level, hn, v))
            .collect::<Result<Vec<_>>>()?;
        let retest = match &s.retest {
            Some(r) => Some(
                m.tasks
                    .iter()
                    .map(|t| read_field(root, &r[&t.id], level, hn, v))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        subjects.push(Subject {
            id: s.id.clone(),
            split: s.split,
            connectome,
            contrasts,
            retest,
        });
    }

    let ids_and_groups: Vec<(String, String)> =
        m.tasks.iter().map(|t| (t.id.clone(), t.group.clone())).collect();
    let derived = if m.tasks.iter().any(|t| t.mean.is_none() || t.group_average.is_none()) {
        Some(TaskTable::from_subjects(&ids_and_groups, &subjects, m.average_pool)?)
    } else {
        None
    };
    let mut tasks = Vec::with_capacity(m.tasks.len());
    for (j, t) in m.tasks.iter().enumerate() {
        let fallback = derived.as_ref().map(|d| d.task(j));
        let mean = match &t.mean {
            Some(rel) => read_field(root, rel, level, hn, v)?,
            None => fallback.expect("derived table").mean.clone(),
        };
        let gavg = match &t.group_average {
            Some(rel) => GroupAverageMap {
                task: t.id.clone(),
                field: read_field(root, rel, level, hn, v)?,
            },
            None => fallback.expect("derived table").gavg.clone(),
        };
        check_normalized(&gavg).map_err(|e| Error::Data(e.to_string()))?;
        tasks.push(Task {
            id: t.id.clone(),
            group: t.group.clone(),
            mean,
            gavg,
        });
    }

    let pf: ParcelFile = read_json(&root.join(&m.parcels))?;
    let cohort = Cohort {
        level,
        hemispheres: hn,
        components: d,
        subjects,
        tasks: TaskTable::new(tasks)?,
        parcels: Parcellation::new(pf.labels, pf.count)?,
        truth: None,
        master_seed: m.master_seed,
        lineage: m.lineage,
    };
    cohort.validate()?;
    Ok(cohort)
}
