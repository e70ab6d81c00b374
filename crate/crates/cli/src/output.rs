use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spdc_bell::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Infeasible,
}

impl ErrorKind {
    pub fn code(self) -> u8 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Infeasible => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Data, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::InsufficientData(_) | Error::GridMismatch => ErrorKind::Data,
            Error::Infeasible { .. } => ErrorKind::Infeasible,
            _ => ErrorKind::Config,
        };
        Self { kind, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Flat `key = value` report.
#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Header row then one record per row; floats in shortest round-trip form.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let err = |e: csv::Error| CliError::data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Reads a two-column numeric CSV with a header row.
pub fn read_fringe_csv(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers = r
        .headers()
        .map_err(|e| CliError::data(format!("{}: header: {e}", path.display())))?
        .clone();
    if headers.len() < 2 {
        return Err(CliError::data(format!(
            "{}: header needs two columns (axis_value, rate)",
            path.display()
        )));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        // Row 1 is the header.
        let row = i + 2;
        let rec = rec.map_err(|e| CliError::data(format!("{}: row {row}: {e}", path.display())))?;
        if rec.len() < 2 {
            return Err(CliError::data(format!(
                "{}: row {row}: expected 2 fields, found {}",
                path.display(),
                rec.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                CliError::data(format!("{}: row {row}: '{s}' is not a finite number", path.display()))
            })
        };
        x.push(num(&rec[0])?);
        y.push(num(&rec[1])?);
    }
    if x.is_empty() {
        return Err(CliError::data(format!("{}: no data rows", path.display())));
    }
    Ok((x, y))
}

pub fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let mut name = output.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    output.with_file_name(name)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    pub output_paths: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub reference_mode: bool,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, arguments: &[String], config: Option<&Path>, reference: bool) -> Self {
        Self {
            command: command.to_string(),
            arguments: arguments.to_vec(),
            config_path: config.map(|p| p.display().to_string()),
            output_paths: Vec::new(),
            seed: None,
            reference_mode: reference,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| CliError::data(e.to_string()))?;
        write_text(path, &text)
    }
}
