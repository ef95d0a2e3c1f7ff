pub mod analysis;
pub mod data;
pub mod model;
pub mod reports;

use std::fs;
use std::path::Path;

use probekit::spanpool::PooledSet;
use probekit::testbed::{load_config, Model, StoredParams};
use probekit::{Model64, PooledSet64};
use serde_json::Value;

use crate::error::{CliError, CliResult, Stage};

/// Ordered layer ids of a pooled directory.
pub const LAYER_INDEX: &str = "layers.txt";

pub fn create_dir(dir: &Path, stage: &str) -> CliResult<()> {
    fs::create_dir_all(dir).stage(&format!("{stage}: creating {}", dir.display()))
}

pub fn write_text(path: &Path, text: &str, stage: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent, stage)?;
    }
    fs::write(path, text).stage(&format!("{stage}: writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &Value, stage: &str) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    write_text(path, &(text + "\n"), stage)
}

pub fn require_dir(dir: &Path, stage: &str) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::new(
            crate::error::ExitKind::Io,
            stage,
            format!("{} is not a directory", dir.display()),
        ))
    }
}

/// Layer sets of a pooled directory, in index order.
pub fn load_pooled(dir: &Path, stage: &str) -> CliResult<Vec<PooledSet64>> {
    require_dir(dir, stage)?;
    let index = dir.join(LAYER_INDEX);
    let text = fs::read_to_string(&index).stage(&format!("{stage}: reading {}", index.display()))?;
    let sets: Vec<PooledSet64> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|id| PooledSet::load(dir, id.trim()))
        .collect::<probekit::Result<_>>()
        .stage(stage)?;
    if sets.is_empty() {
        return Err(CliError::validation(stage, format!("{} lists no layers", index.display())));
    }
    Ok(sets)
}

pub fn save_pooled(dir: &Path, sets: &[PooledSet64], stage: &str) -> CliResult<()> {
    create_dir(dir, stage)?;
    let mut index = String::new();
    for s in sets {
        s.save(dir, &s.layer_id).stage(stage)?;
        index.push_str(&s.layer_id);
        index.push('\n');
    }
    write_text(&dir.join(LAYER_INDEX), &index, stage)
}

/// Model from a run directory (`config.toml` + `params.json`).
pub fn load_run(dir: &Path, stage: &str) -> CliResult<Model64> {
    require_dir(dir, stage)?;
    let config = load_config(&dir.join(model::CONFIG_FILE)).stage(stage)?.config;
    let stored = StoredParams::load(&dir.join(model::PARAMS_FILE)).stage(stage)?;
    let mut m = Model::new(config).stage(stage)?;
    m.params_mut().load_stored(&stored).stage(stage)?;
    Ok(m)
}
