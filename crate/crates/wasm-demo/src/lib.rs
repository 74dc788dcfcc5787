//! Browser bindings for three small explorers: icosphere meshes,
//! synthetic subjects' contrast maps, and Dice overlap curves.

use opic_core::cohort::{Cohort, Split};
use opic_core::eval::{dice_auc, dice_curve, THRESHOLDS};
use opic_core::mesh::{build_hierarchy, Mesh};
use opic_core::nncore::ChannelField;
use opic_core::synthdata::{generate_cohort, SynthConfig};
use wasm_bindgen::prelude::*;

const MAX_MESH_LEVEL: usize = 6;
const MAX_COHORT_LEVEL: usize = 4;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct MeshView {
    mesh: Mesh,
}

#[wasm_bindgen]
impl MeshView {
    #[wasm_bindgen(constructor)]
    pub fn new(level: usize) -> Result<MeshView, JsError> {
        if level > MAX_MESH_LEVEL {
            return Err(js(format!("level must be at most {MAX_MESH_LEVEL}")));
        }
        let mesh = build_hierarchy(level).finest().clone();
        Ok(MeshView { mesh })
    }

    pub fn level(&self) -> usize {
        self.mesh.level()
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.num_vertices()
    }

    pub fn face_count(&self) -> usize {
        self.mesh.faces().len()
    }

    pub fn edge_count(&self) -> usize {
        self.mesh.edge_count()
    }

    pub fn euler_characteristic(&self) -> i32 {
        self.mesh.euler_characteristic() as i32
    }

    pub fn pentagon_count(&self) -> usize {
        (0..self.mesh.num_vertices()).filter(|&v| self.mesh.degree(v) == 5).count()
    }

    /// Vertex positions as `x0, y0, z0, x1, ...`.
    pub fn positions(&self) -> Vec<f64> {
        self.mesh.vertices().iter().flatten().copied().collect()
    }

    /// Triangle corner indices, three per face.
    pub fn faces(&self) -> Vec<u32> {
        self.mesh.faces().iter().flatten().map(|&i| i as u32).collect()
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.mesh.num_vertices()).map(|v| self.mesh.degree(v) as f64).collect()
    }
}

/// Dice values at each threshold plus the normalized area under them.
#[wasm_bindgen]
pub struct DiceResult {
    values: Vec<f64>,
    auc: f64,
}

#[wasm_bindgen]
impl DiceResult {
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn auc(&self) -> f64 {
        self.auc
    }
}

#[wasm_bindgen]
pub fn thresholds() -> Vec<f64> {
    THRESHOLDS.to_vec()
}

/// A small synthetic cohort; only its test subjects are exposed.
#[wasm_bindgen]
pub struct CohortView {
    cohort: Cohort,
    test: Vec<usize>,
    mesh: MeshView,
}

#[wasm_bindgen]
impl CohortView {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, level: usize, subject_effect: f64) -> Result<CohortView, JsError> {
        if level > MAX_COHORT_LEVEL {
            return Err(js(format!("level must be at most {MAX_COHORT_LEVEL}")));
        }
        let cfg = SynthConfig {
            level,
            seed,
            subject_effect,
            n_train: 8,
            n_val: 2,
            n_test: 6,
            ..Default::default()
        };
        let cohort = generate_cohort(&cfg).map_err(js)?;
        let test = cohort.split_indices(Split::Test);
        Ok(CohortView {
            mesh: MeshView::new(level)?,
            cohort,
            test,
        })
    }

    pub fn mesh(&self) -> MeshView {
        MeshView { mesh: self.mesh.mesh.clone() }
    }

    pub fn tasks(&self) -> Vec<String> {
        self.cohort.tasks.tasks().iter().map(|t| format!("{} ({})", t.id, t.group)).collect()
    }

    pub fn subjects(&self) -> Vec<String> {
        self.test.iter().map(|&i| self.cohort.subjects[i].id.clone()).collect()
    }

    fn task(&self, task: usize) -> Result<usize, JsError> {
        if task < self.cohort.tasks.len() {
            Ok(task)
        } else {
            Err(js(format!("no task {task}")))
        }
    }

    fn subject(&self, subject: usize) -> Result<&opic_core::cohort::Subject, JsError> {
        self.test
            .get(subject)
            .map(|&i| &self.cohort.subjects[i])
            .ok_or_else(|| js(format!("no test subject {subject}")))
    }

    fn field(&self, subject: usize, task: usize, kind: &str) -> Result<&ChannelField, JsError> {
        let j = self.task(task)?;
        match kind {
            "contrast" => Ok(&self.subject(subject)?.contrasts[j]),
            "retest" => self
                .subject(subject)?
                .retest
                .as_ref()
                .map(|r| &r[j])
                .ok_or_else(|| js("subject has no retest session")),
            "group-average" => Ok(&self.cohort.tasks.task(j).mean),
            other => Err(js(format!("unknown map `{other}`"))),
        }
    }

    /// Left-hemisphere values of a subject contrast, its retest, or the
    /// task's group average.
    pub fn map(&self, subject: usize, task: usize, kind: &str) -> Result<Vec<f64>, JsError> {
        let f = self.field(subject, task, kind)?;
        Ok(f.data()[..f.vertices()].to_vec())
    }

    /// Dice curve of a subject's contrast against a reference map.
    pub fn dice(&self, subject: usize, task: usize, reference: &str) -> Result<DiceResult, JsError> {
        let target = self.field(subject, task, "contrast")?;
        let other = self.field(subject, task, reference)?;
        let curve = dice_curve(other, target, &THRESHOLDS).map_err(js)?;
        let auc = dice_auc(&curve).map_err(js)?;
        Ok(DiceResult {
            values: curve.values,
            auc,
        })
    }
}
