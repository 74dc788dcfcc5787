//! In-memory datasets: subjects with connectomes and task contrasts, the task
//! table with group-average maps, and the parcellation used by the linear
//! baseline. Synthetic generation and on-disk ingestion both produce a
//! [`Cohort`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::connectome::{group_average, Connectome, GroupAverageMap};
use crate::error::{Error, Result};
use crate::nncore::ChannelField;
use crate::seed::SeedRecord;
use crate::synthdata::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split tag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub split: Split,
    pub connectome: Connectome,
    /// One `H×V` contrast per task, in task-table order.
    pub contrasts: Vec<ChannelField>,
    /// Second-session contrasts, same order; present for test subjects.
    pub retest: Option<Vec<ChannelField>>,
}

/// Which subjects contribute to group-average maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragePool {
    TrainOnly,
    #[default]
    TrainVal,
}

impl AveragePool {
    pub fn includes(self, split: Split) -> bool {
        match self {
            AveragePool::TrainOnly => split == Split::Train,
            AveragePool::TrainVal => split != Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub group: String,
    /// Vertexwise mean over the averaging pool, before scaling.
    pub mean: ChannelField,
    /// `mean` scaled to absolute maximum 1; the conditioning input.
    pub gavg: GroupAverageMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskTable {
    tasks: Vec<Task>,
}

impl TaskTable {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for t in &tasks {
            if !seen.insert(t.id.as_str()) {
                return Err(Error::Data(format!("duplicate task `{}`", t.id)));
            }
        }
        Ok(TaskTable { tasks })
    }

    /// Builds the table from subject contrasts, averaging over `pool`.
    pub fn from_subjects(
        ids_and_groups: &[(String, String)],
        subjects: &[Subject],
        pool: AveragePool,
    ) -> Result<Self> {
        let members: Vec<&Subject> = subjects.iter().filter(|s| pool.includes(s.split)).collect();
        if members.is_empty() {
            return Err(Error::Data("no subjects in the group-average pool".into()));
        }
        let mut tasks = Vec::with_capacity(ids_and_groups.len());
        for (j, (id, group)) in ids_and_groups.iter().enumerate() {
            let maps: Vec<&ChannelField> = members
                .iter()
                .map(|s| {
                    s.contrasts
                        .get(j)
                        .ok_or_else(|| Error::Data(format!("subject {} lacks task {id}", s.id)))
                })
                .collect::<Result<_>>()?;
            let mean = ChannelField::mean(&maps)?;
            let gavg = group_average(id, &maps)?;
            tasks.push(Task {
                id: id.clone(),
                group: group.clone(),
                mean,
                gavg,
            });
        }
        TaskTable::new(tasks)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, j: usize) -> &Task {
        &self.tasks[j]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    /// Group ids in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.tasks {
            if !out.contains(&t.group) {
                out.push(t.group.clone());
            }
        }
        out
    }

    pub fn tasks_in_group(&self, group: &str) -> Result<Vec<usize>> {
        let ix: Vec<usize> = (0..self.tasks.len())
            .filter(|&j| self.tasks[j].group == group)
            .collect();
        if ix.is_empty() {
            return Err(Error::UnknownGroup(group.to_string()));
        }
        Ok(ix)
    }
}

/// Parcel label per (hemisphere, vertex), stored hemisphere-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parcellation {
    labels: Vec<usize>,
    count: usize,
}

impl Parcellation {
    pub fn new(labels: Vec<usize>, count: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= count) {
            return Err(Error::Data(format!("parcel label {bad} >= parcel count {count}")));
        }
        Ok(Parcellation { labels, count })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Flat (hemisphere-major) vertex indices of each parcel.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub level: usize,
    pub hemispheres: usize,
    pub components: usize,
    pub subjects: Vec<Subject>,
    pub tasks: TaskTable,
    pub parcels: Parcellation,
    /// Generating parameters, known only for synthetic cohorts.
    pub truth: Option<GroundTruth>,
    pub master_seed: Option<u64>,
    /// Derived per-subject seeds, cohort order.
    pub lineage: Vec<SeedRecord>,
}

impl Cohort {
    /// Checks shapes, split discipline and completeness.
    pub fn validate(&self) -> Result<()> {
        let v = crate::mesh::icosphere_vertex_count(self.level);
        let field_ok = |f: &ChannelField| {
            f.level() == self.level && f.channels() == self.hemispheres && f.vertices() == v
        };
        if self.parcels.labels().len() != self.hemispheres * v {
            return Err(Error::Data("parcellation does not cover every vertex".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate subject `{}`", s.id)));
            }
            let c = &s.connectome;
            if c.level() != self.level
                || c.hemispheres() != self.hemispheres
                || c.vertices() != v
                || c.components() != self.components
            {
                return Err(Error::Data(format!("subject {} connectome has wrong shape", s.id)));
            }
            if s.contrasts.len() != self.tasks.len() || !s.contrasts.iter().all(field_ok) {
                return Err(Error::Data(format!(
                    "subject {} needs one {}x{v} contrast per task",
                    s.id, self.hemispheres
                )));
            }
            match &s.retest {
                Some(r) if r.len() != self.tasks.len() || !r.iter().all(field_ok) => {
                    return Err(Error::Data(format!("subject {} retest has wrong shape", s.id)));
                }
                None if s.split == Split::Test => {
                    return Err(Error::Data(format!("test subject {} has no retest", s.id)));
                }
                _ => {}
            }
        }
        for t in self.tasks.tasks() {
            if !field_ok(&t.mean) || !field_ok(&t.gavg.field) {
                return Err(Error::Data(format!("group average of {} has wrong shape", t.id)));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> usize {
        crate::mesh::icosphere_vertex_count(self.level)
    }

    /// Indices of subjects in `split`, in cohort order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.subjects.len())
            .filter(|&i| self.subjects[i].split == split)
            .collect()
    }

    /// Test subject indices ordered by id.
    pub fn test_indices_by_id(&self) -> Vec<usize> {
        let mut ix = self.split_indices(Split::Test);
        ix.sort_by(|&a, &b| self.subjects[a].id.cmp(&self.subjects[b].id));
        ix
    }

    pub fn subject_index(&self, id: &str) -> Result<usize> {
        self.subjects
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Data(format!("unknown subject `{id}`")))
    }
}
