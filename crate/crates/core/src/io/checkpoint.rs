//! Training checkpoints: a directory with `dx.cdzm`, `dz.cdzm` and the
//! `config.txt` the dictionaries were trained with. `progress.txt` records how
//! many outer iterations the stored dictionaries have seen.

use std::path::Path;

use crate::dictionary::CoupledDictionary;
use crate::io::config::{parse_config, PipelineConfig};
use crate::io::{read_matrix, write_matrix, DataError};

pub const VISUAL_FILE: &str = "dx.cdzm";
pub const ATTRIBUTE_FILE: &str = "dz.cdzm";
pub const CONFIG_FILE: &str = "config.txt";
pub const PROGRESS_FILE: &str = "progress.txt";

fn write(path: &Path, text: String) -> Result<(), DataError> {
    std::fs::write(path, text).map_err(|e| DataError::io(path, e))
}

pub fn write_checkpoint(
    dir: &Path,
    dict: &CoupledDictionary,
    config: &PipelineConfig,
    completed: usize,
) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    write_matrix(dir.join(VISUAL_FILE), &dict.visual)?;
    write_matrix(dir.join(ATTRIBUTE_FILE), &dict.attribute)?;
    write(&dir.join(CONFIG_FILE), config.to_text())?;
    write(
        &dir.join(PROGRESS_FILE),
        format!(
            "completed_iterations = {completed}\nouter_iterations = {}\n",
            config.training.outer_iterations
        ),
    )
}

pub fn read_checkpoint(dir: &Path) -> Result<(CoupledDictionary, PipelineConfig), DataError> {
    let visual = read_matrix(dir.join(VISUAL_FILE))?;
    let attribute = read_matrix(dir.join(ATTRIBUTE_FILE))?;
    if visual.ncols() != attribute.ncols() {
        return Err(DataError::Manifest {
            path: dir.to_path_buf(),
            message: format!(
                "checkpoint dictionaries have {} and {} atoms",
                visual.ncols(),
                attribute.ncols()
            ),
        });
    }
    let cfg_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| DataError::io(&cfg_path, e))?;
    let config = parse_config(&text, &cfg_path)?;
    Ok((CoupledDictionary { visual, attribute }, config))
}
