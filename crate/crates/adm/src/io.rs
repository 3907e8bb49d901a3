//! JSON artifacts: splits, parameters, reports and loss curves.

use std::fs;
use std::path::Path;

use adm_core::{LabeledDataset, SplitSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

/// Reads a split and checks it against `dataset`.
pub fn load_split(path: &Path, dataset: &LabeledDataset) -> Result<SplitSpec> {
    let split: SplitSpec = read_json(path)?;
    split.validate(dataset)?;
    Ok(split)
}
