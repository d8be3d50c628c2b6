use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Files written by one command. Unless [`OutputSet::commit`] is called,
/// every file created through the set is removed when it is dropped, so a
/// failed stage leaves no partial output behind.
#[derive(Debug, Default)]
pub struct OutputSet {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&mut self, path: &Path) -> Result<BufWriter<File>> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.paths.push(path.to_path_buf());
        Ok(BufWriter::new(file))
    }

    pub fn write_jsonl<T: Serialize>(&mut self, path: &Path, records: &[T]) -> Result<()> {
        let mut w = self.create(path)?;
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush().with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut w = self.create(path)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush().with_context(|| format!("writing {}", path.display()))
    }

    /// Registers a file written by other means (e.g. a checkpoint).
    pub fn track(&mut self, path: &Path) {
        self.paths.push(path.to_path_buf());
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}
