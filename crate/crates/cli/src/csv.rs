//! Small CSV writer for the experiment artifacts.
//!
//! UTF-8, LF endings, one `#` provenance line, then the header. Floats use
//! 17 significant digits so values round-trip exactly.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use crate::config::ExperimentSpec;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub enum Cell<'a> {
    Text(&'a str),
    Int(u64),
    Float(f64),
}

impl From<f64> for Cell<'_> {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell<'_> {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl<'a> From<&'a str> for Cell<'a> {
    fn from(v: &'a str) -> Self {
        Cell::Text(v)
    }
}

pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

pub struct Table {
    columns: usize,
    text: String,
}

impl Table {
    /// Provenance line followed by the header row.
    pub fn new(spec: &ExperimentSpec, header: &[&str]) -> Table {
        let mut text = String::new();
        writeln!(
            text,
            "# spec_hash={} seed={} version={} experiment={} optimizer={} lr={:e} steps={} batch={} stop_tol={:e}",
            spec.hash(),
            spec.seed,
            ARTIFACT_VERSION,
            spec.experiment,
            format!("{:?}", spec.optimizer).to_lowercase(),
            spec.lr,
            spec.steps,
            spec.batch,
            spec.stop_tol
        )
        .unwrap();
        text.push_str(&header.join(","));
        text.push('\n');
        Table { columns: header.len(), text }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        assert_eq!(cells.len(), self.columns, "row width");
        let fields: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::Text(s) => s.to_string(),
                Cell::Int(v) => v.to_string(),
                Cell::Float(v) => fmt_float(*v),
            })
            .collect();
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    /// Marks the file as incomplete.
    pub fn note(&mut self, msg: &str) {
        writeln!(self.text, "# partial: {msg}").unwrap();
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, dir: &Path, name: &str) -> io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        std::fs::write(&path, &self.text)?;
        Ok(path)
    }
}
