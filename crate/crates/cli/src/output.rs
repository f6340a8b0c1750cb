//! Output directory bookkeeping. Files are registered before they are
//! written; unless [`Outputs::commit`] is reached, every registered file is
//! removed again so a failed run leaves nothing half-written behind.

use std::fs;
use std::path::{Path, PathBuf};

use cardiac_core::geometry::vtk::surface_path;

use crate::error::CliError;

pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    /// A mesh file and its boundary-surface companion.
    pub fn mesh_file(&mut self, name: &str) -> PathBuf {
        let p = self.file(name);
        self.files.push(surface_path(&p));
        p
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let p = self.file(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}
