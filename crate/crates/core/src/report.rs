//! Report plumbing: JSON and CSV writers and content hashes.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed;

/// SHA-256 of the compact JSON serialization of `value`.
pub fn json_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(seed::sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// In-memory CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Panics if the row width differs from the header.
    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "csv row width");
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn render(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in std::iter::once(&self.header).chain(&self.rows) {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.render())
    }
}

/// Fixed-precision rendering for report cells.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_when_needed() {
        let mut c = Csv::new(&["a", "b"]);
        c.push(vec!["x,y".into(), "say \"hi\"".into()]);
        c.push(vec!["1".into(), "2".into()]);
        assert_eq!(c.render(), "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n1,2\n");
    }

    #[test]
    fn json_hash_is_stable() {
        let v = serde_json::json!({"a": 1, "b": [1.5, 2.0]});
        assert_eq!(json_hash(&v).unwrap(), json_hash(&v.clone()).unwrap());
        assert_ne!(json_hash(&v).unwrap(), json_hash(&serde_json::json!({"a": 2})).unwrap());
    }
}
