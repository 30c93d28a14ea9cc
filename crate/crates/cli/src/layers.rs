use std::fs;
use std::path::{Path, PathBuf};

use flrq::io::read_container_file;
use flrq::{CalibrationBatch, Matrix};

use crate::error::CliError;

pub const WEIGHT_FILE: &str = "weight.flrt";
pub const CALIB_FILE: &str = "calib.flrt";

/// A named layer directory.
#[derive(Debug, Clone)]
pub struct LayerSource {
    pub name: String,
    pub dir: PathBuf,
}

pub fn layer_name(index: usize) -> String {
    format!("layer_{index:04}")
}

/// Either `input` itself (when it holds a weight file) or its subdirectories
/// that do, sorted by name.
pub fn discover(input: &Path) -> Result<Vec<LayerSource>, CliError> {
    if input.join(WEIGHT_FILE).is_file() {
        let name = input
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| layer_name(0));
        return Ok(vec![LayerSource {
            name,
            dir: input.to_path_buf(),
        }]);
    }
    let entries = fs::read_dir(input).map_err(|e| CliError::data(format!("{}: {e}", input.display())))?;
    let mut layers = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.join(WEIGHT_FILE).is_file() {
            layers.push(LayerSource {
                name: path.file_name().expect("directory entry").to_string_lossy().into_owned(),
                dir: path,
            });
        }
    }
    if layers.is_empty() {
        return Err(CliError::data(format!("{}: no layer directories with {WEIGHT_FILE}", input.display())));
    }
    layers.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(layers)
}

pub fn read_matrix(path: &Path) -> Result<Matrix, CliError> {
    read_container_file(path)
        .and_then(|c| c.to_matrix())
        .map_err(|e| CliError::from(e).context(path.display()))
}

/// Weight from a layer directory or directly from a weight file.
pub fn read_weight(input: &Path) -> Result<Matrix, CliError> {
    if input.is_dir() {
        read_matrix(&input.join(WEIGHT_FILE))
    } else {
        read_matrix(input)
    }
}

/// Calibration next to the weight, if present.
pub fn read_optional_calibration(input: &Path) -> Result<Option<CalibrationBatch>, CliError> {
    let dir = if input.is_dir() { input } else { input.parent().unwrap_or(Path::new(".")) };
    let path = dir.join(CALIB_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let x = read_matrix(&path)?;
    Ok(Some(CalibrationBatch::new(x).map_err(|e| CliError::from(e).context(path.display()))?))
}

pub fn load(layer: &LayerSource) -> Result<(Matrix, CalibrationBatch), CliError> {
    let w = read_matrix(&layer.dir.join(WEIGHT_FILE))?;
    let calib = read_optional_calibration(&layer.dir)?
        .ok_or_else(|| CliError::data(format!("{}: missing {CALIB_FILE}", layer.dir.display())))?;
    if calib.x.rows() != w.cols() {
        return Err(CliError::data(format!(
            "{}: weight has {} columns but calibration has {} rows",
            layer.name,
            w.cols(),
            calib.x.rows()
        )));
    }
    Ok((w, calib))
}
