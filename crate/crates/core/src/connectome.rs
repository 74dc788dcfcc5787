//! Resting-state connectome features and group-average contrast maps.
//!
//! A connectome entry is the Pearson correlation between a vertex's
//! timeseries and one component's timeseries. Group-average contrasts are
//! vertexwise means over subjects, scaled so their absolute maximum is 1.

use log::warn;

use crate::error::{Error, Result};
use crate::nncore::ChannelField;

/// A finite real-valued timeseries with at least two samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeseries(Vec<f64>);

impl Timeseries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "timeseries needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("timeseries sample".into()));
        }
        Ok(Timeseries(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Centered series scaled to unit norm, or `None` when constant.
    fn standardized(&self) -> Option<Vec<f64>> {
        let n = self.0.len() as f64;
        let mean = self.0.iter().sum::<f64>() / n;
        let centered: Vec<f64> = self.0.iter().map(|x| x - mean).collect();
        let norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || norm <= 1e-14 * mean.abs() * n.sqrt() {
            return None;
        }
        Some(centered.into_iter().map(|x| x / norm).collect())
    }
}

pub fn pearson(x: &Timeseries, y: &Timeseries) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "timeseries lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let (Some(a), Some(b)) = (x.standardized(), y.standardized()) else {
        return Err(Error::Degenerate("zero-variance timeseries".into()));
    };
    Ok(dot(&a, &b).clamp(-1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-vertex correlation features, `hemispheres × vertices × components`.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectome {
    level: usize,
    hemispheres: usize,
    vertices: usize,
    components: usize,
    data: Vec<f64>,
}

impl Connectome {
    pub fn new(
        level: usize,
        hemispheres: usize,
        vertices: usize,
        components: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if hemispheres == 0 || components == 0 {
            return Err(Error::shape("connectome needs hemispheres and components"));
        }
        if data.len() != hemispheres * vertices * components {
            return Err(Error::shape(format!(
                "connectome has {} values, expected {hemispheres}x{vertices}x{components}",
                data.len()
            )));
        }
        if let Some(i) = data
            .iter()
            .position(|x| !x.is_finite() || x.abs() > 1.0 + 1e-9)
        {
            return Err(Error::Data(format!(
                "connectome entry {i} = {} is not a correlation",
                data[i]
            )));
        }
        Ok(Connectome {
            level,
            hemispheres,
            vertices,
            components,
            data,
        })
    }

    /// Joins single-hemisphere connectomes, left hemisphere first.
    pub fn stack(parts: Vec<Connectome>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("nothing to stack"))?;
        let (level, vertices, components) = (first.level, first.vertices, first.components);
        let mut data = Vec::new();
        let mut hemispheres = 0;
        for p in parts {
            if (p.level, p.vertices, p.components) != (level, vertices, components) {
                return Err(Error::shape("stacked connectomes differ in shape"));
            }
            hemispheres += p.hemispheres;
            data.extend(p.data);
        }
        Connectome::new(level, hemispheres, vertices, components, data)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn hemispheres(&self) -> usize {
        self.hemispheres
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Feature vector of vertex `v` in hemisphere `h`.
    pub fn features(&self, h: usize, v: usize) -> &[f64] {
        let start = (h * self.vertices + v) * self.components;
        &self.data[start..start + self.components]
    }

    pub fn get(&self, h: usize, v: usize, d: usize) -> f64 {
        self.data[(h * self.vertices + v) * self.components + d]
    }

    /// Network input layout: channel `h·D + d` holds component `d` of hemisphere `h`.
    pub fn to_field(&self) -> ChannelField {
        let (hn, n, d) = (self.hemispheres, self.vertices, self.components);
        let mut out = vec![0.0; hn * d * n];
        for h in 0..hn {
            for v in 0..n {
                for (k, &x) in self.features(h, v).iter().enumerate() {
                    out[(h * d + k) * n + v] = x;
                }
            }
        }
        ChannelField::new(self.level, hn * d, n, out).expect("connectome values are finite")
    }
}

/// `data[v,d] = pearson(vertex_ts[v], component_ts[d])` for one hemisphere.
///
/// Constant vertex series (e.g. medial wall) get correlation 0; a constant
/// component series is an error.
pub fn compute_connectome(
    level: usize,
    vertex_ts: &[Timeseries],
    component_ts: &[Timeseries],
) -> Result<Connectome> {
    let t = component_ts
        .first()
        .map(Timeseries::len)
        .ok_or_else(|| Error::InvalidArgument("no component timeseries".into()))?;
    if let Some(bad) = component_ts
        .iter()
        .chain(vertex_ts)
        .find(|s| s.len() != t)
    {
        return Err(Error::shape(format!(
            "timeseries length {} differs from {t}",
            bad.len()
        )));
    }
    let comps: Vec<Vec<f64>> = component_ts
        .iter()
        .enumerate()
        .map(|(d, s)| {
            s.standardized()
                .ok_or_else(|| Error::Degenerate(format!("component {d} has zero variance")))
        })
        .collect::<Result<_>>()?;

    let d = comps.len();
    let mut data = vec![0.0; vertex_ts.len() * d];
    let mut flat = 0;
    for (v, series) in vertex_ts.iter().enumerate() {
        match series.standardized() {
            Some(x) => {
                for (k, c) in comps.iter().enumerate() {
                    data[v * d + k] = dot(&x, c).clamp(-1.0, 1.0);
                }
            }
            None => {
                flat += 1;
                if flat == 1 {
                    warn!("vertex {v} has a constant timeseries; its correlations are set to 0");
                }
            }
        }
    }
    if flat > 1 {
        warn!("{flat} vertices had constant timeseries");
    }
    Connectome::new(level, 1, vertex_ts.len(), d, data)
}

/// A task's group-average contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAverageMap {
    pub task: String,
    pub field: ChannelField,
}

impl GroupAverageMap {
    /// Whether the map is scaled to absolute maximum 1 (or is all zero).
    pub fn is_normalized(&self, tol: f64) -> bool {
        let m = self.field.abs_max();
        m == 0.0 || (m - 1.0).abs() <= tol
    }
}

pub fn normalize_group_average(raw: GroupAverageMap) -> Result<GroupAverageMap> {
    if raw.field.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("group average of {}", raw.task)));
    }
    let m = raw.field.abs_max();
    if m == 0.0 {
        warn!("group average of task {} is identically zero", raw.task);
        return Ok(raw);
    }
    Ok(GroupAverageMap {
        field: raw.field.map(|x| x / m)?,
        task: raw.task,
    })
}

/// Vertexwise mean of a task's contrasts, then abs-max scaling.
pub fn group_average(task: &str, contrasts: &[&ChannelField]) -> Result<GroupAverageMap> {
    if contrasts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no contrasts to average for task {task}"
        )));
    }
    normalize_group_average(GroupAverageMap {
        task: task.to_string(),
        field: ChannelField::mean(contrasts)?,
    })
}
