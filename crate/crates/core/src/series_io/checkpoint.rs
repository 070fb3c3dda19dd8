use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::preprocess::NormStats;
use crate::vae::{Architecture, ModelParams, SkipSettings};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model together with everything needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f64>,
    pub stats: NormStats<f64>,
    /// Free-form record of the settings the model was trained with.
    pub hyperparameters: Value,
    /// Sample spacing of the training series, if known.
    pub cadence_seconds: Option<i64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u32,
    architecture: Architecture,
    skip: SkipSettings,
    hyperparameters: Value,
    norm_stats: NormStats<f64>,
    cadence_seconds: Option<i64>,
    arrays: Map<String, Value>,
}

pub fn save_checkpoint<W: Write>(checkpoint: &Checkpoint, mut writer: W) -> Result<()> {
    let params = &checkpoint.params;
    params.arch.validate()?;
    let mut arrays = Map::new();
    for (name, _, values) in params.tensors() {
        let mut out = Vec::with_capacity(values.len());
        for &v in values {
            let number = serde_json::Number::from_f64(v).ok_or_else(|| Error::Checkpoint {
                array: name.clone(),
                message: format!("cannot store non-finite value {v}"),
            })?;
            out.push(Value::Number(number));
        }
        arrays.insert(name, Value::Array(out));
    }
    let doc = Document {
        format_version: CHECKPOINT_VERSION,
        architecture: params.arch.clone(),
        skip: params.skip,
        hyperparameters: checkpoint.hyperparameters.clone(),
        norm_stats: checkpoint.stats,
        cadence_seconds: checkpoint.cadence_seconds,
        arrays,
    };
    serde_json::to_writer(&mut writer, &doc)?;
    writer.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(reader: R) -> Result<Checkpoint> {
    let value: Value = serde_json::from_reader(reader)?;
    let found = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Checkpoint {
            array: "format_version".into(),
            message: "missing or not an integer".into(),
        })?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut doc: Document = serde_json::from_value(value)?;
    doc.norm_stats.validate()?;
    let mut params = ModelParams::<f64>::empty(doc.architecture, doc.skip)?;

    for (name, _, dst) in params.tensors_mut() {
        let raw = doc.arrays.remove(&name).ok_or_else(|| Error::Checkpoint {
            array: name.clone(),
            message: "missing".into(),
        })?;
        let items = raw.as_array().ok_or_else(|| Error::Checkpoint {
            array: name.clone(),
            message: "not an array".into(),
        })?;
        if items.len() != dst.len() {
            return Err(Error::Checkpoint {
                array: name,
                message: format!("expected {} values, found {}", dst.len(), items.len()),
            });
        }
        for (i, (d, item)) in dst.iter_mut().zip(items).enumerate() {
            *d = item.as_f64().ok_or_else(|| Error::Checkpoint {
                array: name.clone(),
                message: format!("entry {i} is not a number: {item}"),
            })?;
        }
    }
    if let Some(extra) = doc.arrays.keys().next() {
        return Err(Error::Checkpoint {
            array: extra.clone(),
            message: "not part of the declared architecture".into(),
        });
    }
    Ok(Checkpoint {
        params,
        stats: doc.norm_stats,
        hyperparameters: doc.hyperparameters,
        cadence_seconds: doc.cadence_seconds,
    })
}
