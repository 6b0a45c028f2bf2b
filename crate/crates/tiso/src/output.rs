//! Deterministic CSV and JSON writers.
//!
//! Floats are written in their shortest round-trip decimal form, so equal
//! values always give equal bytes.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Result, TisoError};

#[derive(Debug, Clone)]
pub struct OutputDir {
    pub path: PathBuf,
}

/// One CSV cell.
pub fn f(x: f64) -> String {
    format!("{x}")
}

impl OutputDir {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| TisoError::io(path, e))?;
        Ok(OutputDir { path: path.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.file(name);
        std::fs::write(&p, text).map_err(|e| TisoError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| TisoError::numerical(format!("serializing {name}: {e}")))?;
        s.push('\n');
        self.write_text(name, &s)
    }

    /// Header plus rows; an empty row set gives a header-only file.
    pub fn write_csv<I>(&self, name: &str, header: &[&str], rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let p = self.file(name);
        let bytes = csv_bytes(header, rows).map_err(|e| TisoError::io(&p, e))?;
        std::fs::write(&p, bytes).map_err(|e| TisoError::io(&p, e))?;
        Ok(p)
    }
}

pub fn csv_bytes<I>(header: &[&str], rows: I) -> std::io::Result<Vec<u8>>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}
