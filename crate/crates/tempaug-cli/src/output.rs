//! CSV/JSON artifact writers. All CSV numerics are printed with 17
//! significant digits so binary64 values survive a round trip.

use crate::error::{io_err, CliError};
use serde_json::Value;
use std::path::Path;

/// 17-significant-digit float formatting (16 digits after the point in
/// scientific notation).
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Csv {
    lines: Vec<String>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            lines: vec![header.join(",")],
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.lines.push(fields.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = self.lines.join("\n");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("json serialization: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err("creating output dir"))?;
    }
    std::fs::write(path, bytes).map_err(io_err("writing output"))
}
