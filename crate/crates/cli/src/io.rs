//! JSON and TOML files, written atomically.

use std::io::Write;
use std::path::{Path, PathBuf};

use armdance_core::kinematics::RobotModel;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.to_path_buf(), source }
}

/// Writes a sibling temporary file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fs_err(path))?;
    tmp.write_all(bytes).map_err(fs_err(path))?;
    tmp.as_file().sync_all().map_err(fs_err(path))?;
    tmp.persist(path).map_err(|e| fs_err(path)(e.error))?;
    Ok(())
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<V: DeserializeOwned>(path: &Path) -> Result<V, IoError> {
    let text = std::fs::read_to_string(path).map_err(fs_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Robot description: the fields of [`RobotModel`] as TOML keys, with the
/// collision spheres as `[[collision.spheres]]` tables.
pub fn read_robot(path: Option<&Path>) -> Result<RobotModel<f64>, IoError> {
    let Some(path) = path else {
        return Ok(RobotModel::canonical());
    };
    let text = std::fs::read_to_string(path).map_err(fs_err(path))?;
    let model: RobotModel<f64> =
        toml::from_str(&text).map_err(|e| IoError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    model.validate().map_err(|e| IoError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(model)
}

pub fn robot_toml(model: &RobotModel<f64>) -> String {
    toml::to_string(model).expect("robot model is TOML-representable")
}

/// `*.json` files of a directory in name order.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(fs_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(fs_err(dir)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}
