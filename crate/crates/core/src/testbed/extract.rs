//! Unmasked forward passes written out as per-layer feature dumps.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::model::Model;
use crate::error::{Error, Result};
use crate::featio::{self, Dtype, Manifest};
use crate::scalar::Real;

/// Run `frames` through the model without masking and write one dump per
/// layer into `dir`, plus `manifest.json` with paths relative to `dir`.
/// The returned manifest holds the full paths, as `Manifest::load` would.
pub fn extract<T: Real>(model: &Model<T>, utterance_id: &str, frames: &DMatrix<f64>, dir: &Path, dtype: Dtype) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let trace = model.forward_unmasked(&frames.map(|v| T::lit(v)))?;
    let mut manifest = Manifest::new(utterance_id);
    for dump in trace.to_dumps()? {
        let path = dir.join(format!("{}.prbf", dump.layer_id));
        let mut entry = featio::write_dump(&dump, &path, dtype)?;
        entry.path = path.file_name().expect("file name").into();
        manifest.layers.push(entry);
    }
    manifest.save(&dir.join("manifest.json"))?;
    for entry in &mut manifest.layers {
        entry.path = dir.join(&entry.path);
    }
    Ok(manifest)
}
