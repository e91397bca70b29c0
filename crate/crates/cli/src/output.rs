use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{CliError, Experiment, ExperimentConfig, RunSummary, TOOL, VERSION};

/// A sweep point that could not be simulated or fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub point: String,
    pub error: String,
}

impl Failure {
    pub fn new(point: impl Into<String>, error: impl ToString) -> Self {
        Self {
            point: point.into(),
            error: error.to_string(),
        }
    }
}

/// One CSV output. The first line names the column schema and its version.
#[derive(Debug, Clone)]
pub struct Table {
    /// `None` writes `<name>.csv`, `Some(s)` writes `<name>.<s>.csv`.
    pub suffix: Option<&'static str>,
    pub schema: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(suffix: Option<&'static str>, schema: &'static str, header: &[&'static str]) -> Self {
        Self {
            suffix,
            schema,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn file_name(&self, name: &str) -> String {
        match self.suffix {
            None => format!("{name}.csv"),
            Some(s) => format!("{name}.{s}.csv"),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("# qleak {} v1\n", self.schema).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.header).expect("in-memory write");
            for r in &self.rows {
                w.write_record(r).expect("in-memory write");
            }
            w.flush().expect("in-memory write");
        }
        out
    }
}

/// Shortest round-trip text, in exponent form for very small or large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-3..1e6).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Everything an experiment produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    /// Extra files as (suffix, contents), written to `<name>.<suffix>`.
    pub files: Vec<(&'static str, String)>,
    pub results: Value,
    pub failures: Vec<Failure>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub tool: String,
    pub version: String,
    pub experiment: Experiment,
    pub seed: u64,
    pub config: C,
    pub results: Value,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    pub failures: Vec<Failure>,
}

pub(crate) fn write_outputs<S: Serialize>(
    config: &ExperimentConfig<S>,
    mut outcome: Outcome,
    mut notes: Vec<String>,
) -> Result<RunSummary, CliError> {
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let name = config.output_name();
    let mut outputs = Vec::new();
    let mut write = |file: String, bytes: &[u8]| -> Result<(), CliError> {
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        outputs.push(path);
        Ok(())
    };
    let mut names = Vec::new();
    for t in &outcome.tables {
        let file = t.file_name(&name);
        write(file.clone(), &t.to_bytes())?;
        names.push(file);
    }
    for (suffix, contents) in &outcome.files {
        let file = format!("{name}.{suffix}");
        write(file.clone(), contents.as_bytes())?;
        names.push(file);
    }
    notes.append(&mut outcome.notes);
    let manifest = Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        experiment: config.experiment,
        seed: config.seed,
        config,
        results: outcome.results,
        outputs: names,
        notes,
        failures: outcome.failures.clone(),
    };
    let path = dir.join(format!("{name}.manifest.json"));
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(RunSummary {
        manifest: path,
        outputs,
        failures: outcome.failures,
    })
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
