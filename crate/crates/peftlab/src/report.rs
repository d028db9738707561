//! Suite reports and their on-disk form: `report.json`, `summary.md`, and
//! one CSV per table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    MeasuredOnly,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::MeasuredOnly => "measured-only",
        }
    }

    pub fn from_check(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

/// One named headline number or flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub status: Status,
    pub metrics: Vec<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<String>,
    pub details: serde_json::Value,
}

impl Section {
    pub fn new(name: &str, status: Status) -> Self {
        Self { name: name.into(), status, metrics: Vec::new(), error: None, artifacts: Vec::new(), details: serde_json::Value::Null }
    }

    pub fn metric(mut self, name: &str, value: impl Serialize) -> Self {
        let value = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.metrics.push(Metric { name: name.into(), value });
        self
    }

    pub fn details(mut self, details: impl Serialize) -> Self {
        self.details = serde_json::to_value(details).unwrap_or(serde_json::Value::Null);
        self
    }

    pub fn failed(name: &str, error: impl std::fmt::Display) -> Self {
        Self { error: Some(error.to_string()), ..Self::new(name, Status::Fail) }
    }
}

/// A CSV written next to the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self { file: file.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Extra JSON document written next to the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub file: String,
    pub body: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: String,
    pub tool_version: String,
    pub subcommand: String,
    pub seed: u64,
    pub config_digest: String,
    pub status: Status,
    pub sections: Vec<Section>,
    /// Excluded from determinism comparisons.
    pub wall_time_seconds: f64,
}

impl SuiteReport {
    /// Fail iff any assertable section failed; measured-only sections never
    /// change the outcome.
    pub fn overall(sections: &[Section]) -> Status {
        if sections.iter().any(|s| s.status == Status::Fail) {
            Status::Fail
        } else {
            Status::Pass
        }
    }

    pub fn summary_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# peftlab {}\n", self.subcommand);
        let _ = writeln!(s, "- overall: **{}**", self.status.as_str());
        let _ = writeln!(s, "- seed: {}", self.seed);
        let _ = writeln!(s, "- config digest: `{}`", self.config_digest);
        let _ = writeln!(s, "- tool version: {}\n", self.tool_version);
        if self.sections.is_empty() {
            s.push_str("No sections were run.\n");
            return s;
        }
        s.push_str("| section | status | metrics |\n|---|---|---|\n");
        for sec in &self.sections {
            let metrics: Vec<String> = sec.metrics.iter().map(|m| format!("{} = {}", m.name, m.value)).collect();
            let mut cell = metrics.join("; ");
            if let Some(e) = &sec.error {
                cell = format!("error: {e}");
            }
            let _ = writeln!(s, "| {} | {} | {} |", sec.name, sec.status.as_str(), cell.replace('|', "\\|"));
        }
        s
    }

    /// Short plain-text form for the terminal.
    pub fn screen_summary(&self) -> String {
        let mut s = String::new();
        for sec in &self.sections {
            let _ = writeln!(s, "{:<20} {}", sec.name, sec.status.as_str());
            if let Some(e) = &sec.error {
                let _ = writeln!(s, "    error: {e}");
            }
            for m in sec.metrics.iter().take(6) {
                let _ = writeln!(s, "    {} = {}", m.name, m.value);
            }
        }
        let _ = writeln!(s, "overall: {}", self.status.as_str());
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WriteError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WriteError + '_ {
    move |source| WriteError::Io { path: path.display().to_string(), source }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), WriteError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes the report, its markdown summary, every table and attachment.
pub fn write_report(report: &SuiteReport, tables: &[Table], attachments: &[Attachment], out_dir: &Path) -> Result<Vec<PathBuf>, WriteError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut paths = Vec::new();
    for t in tables {
        let path = out_dir.join(&t.file);
        let csv_err = |source| WriteError::Csv { path: path.display().to_string(), source };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(&t.header).map_err(csv_err)?;
        for row in &t.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&path))?;
        paths.push(path);
    }
    for a in attachments {
        let path = out_dir.join(&a.file);
        write_json(&path, &a.body)?;
        paths.push(path);
    }
    let json = out_dir.join("report.json");
    write_json(&json, report)?;
    let md = out_dir.join("summary.md");
    std::fs::write(&md, report.summary_markdown()).map_err(io_err(&md))?;
    paths.push(json);
    paths.push(md);
    Ok(paths)
}
