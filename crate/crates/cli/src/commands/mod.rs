pub mod dehaze;
pub mod density;
pub mod eval;
pub mod gen_haze;
pub mod train;

use std::path::{Path, PathBuf};

use crate::CliError;

/// Images in a directory (png/hzf), sorted by file name for determinism.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("reading {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("png") || x.eq_ignore_ascii_case("hzf"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}
