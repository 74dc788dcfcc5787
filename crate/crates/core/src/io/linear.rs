//! Fitted parcel-linear baselines: `linear_model.json` + one coefficient tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{ParcelLinearModel, ParcelMap};
use crate::cohort::Parcellation;
use crate::error::{Error, Result};

use super::otf::{read_otf, write_otf, OtfTensor};
use super::{read_json, write_json};

pub const LINEAR_FORMAT: &str = "opic-linear/1";
pub const LINEAR_FILE: &str = "linear_model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearManifest {
    pub format: String,
    pub tasks: Vec<String>,
    pub parcel_count: usize,
    pub components: usize,
    pub parcel_labels: Vec<usize>,
    /// `[task, parcel, 1 + components]`: intercept, then weights.
    pub coefficients: String,
}

pub fn save_linear_model(m: &ParcelLinearModel, dir: &Path) -> Result<LinearManifest> {
    let (t, p, d) = (m.tasks.len(), m.parcels.count(), m.components);
    let mut data = Vec::with_capacity(t * p * (d + 1));
    for row in &m.maps {
        for map in row {
            data.push(map.intercept);
            data.extend_from_slice(&map.weights);
        }
    }
    let coefficients = "linear_coefficients.otf".to_string();
    write_otf(&dir.join(&coefficients), &OtfTensor::f64(vec![t, p, d + 1], data)?)?;
    let man = LinearManifest {
        format: LINEAR_FORMAT.into(),
        tasks: m.tasks.clone(),
        parcel_count: p,
        components: d,
        parcel_labels: m.parcels.labels().to_vec(),
        coefficients,
    };
    write_json(&dir.join(LINEAR_FILE), &man)?;
    Ok(man)
}

pub fn load_linear_model(dir: &Path) -> Result<ParcelLinearModel> {
    let man: LinearManifest = read_json(&dir.join(LINEAR_FILE))?;
    if man.format != LINEAR_FORMAT {
        return Err(Error::Data(format!("unsupported linear model format `{}`", man.format)));
    }
    let (t, p, d) = (man.tasks.len(), man.parcel_count, man.components);
    let path = dir.join(&man.coefficients);
    let tensor = read_otf(&path)?;
    if tensor.dims() != [t, p, d + 1] {
        return Err(Error::Data(format!("{} has dims {:?}", path.display(), tensor.dims())));
    }
    let data = tensor.to_f64();
    let maps = data
        .chunks_exact(p * (d + 1))
        .map(|task| {
            task.chunks_exact(d + 1)
                .map(|c| ParcelMap {
                    intercept: c[0],
                    weights: c[1..].to_vec(),
                })
                .collect()
        })
        .collect();
    Ok(ParcelLinearModel {
        parcels: Parcellation::new(man.parcel_labels, p)?,
        components: d,
        tasks: man.tasks,
        maps,
    })
}
