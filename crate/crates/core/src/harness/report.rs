use std::path::{Path, PathBuf};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// What a command produced. Wall time is measured by the caller and never
/// written to disk, so output files stay reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
    pub metrics: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            outputs: Vec::new(),
            metrics: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: impl ToString) {
        self.metrics.push((name.into(), value.to_string()));
    }

    pub fn float(&mut self, name: impl Into<String>, value: f64) {
        self.metric(name, format!("{value:.9}"));
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn value(&self, name: &str) -> Option<&str> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub fn number(&self, name: &str) -> Option<f64> {
        self.value(name).and_then(|v| v.parse().ok())
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn output(&self, file_name: &str) -> Option<&Path> {
        self.outputs
            .iter()
            .find(|p| p.file_name().is_some_and(|f| f == file_name))
            .map(PathBuf::as_path)
    }

    /// Writes `<command>_summary.csv` into `dir` and records it as an output.
    pub fn write_summary(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("{}_summary.csv", self.command.replace('-', "_")));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["name", "value", "detail"])?;
        w.write_record(["seed", &self.seed.to_string(), ""])?;
        for (n, v) in &self.metrics {
            w.write_record([n.as_str(), v.as_str(), ""])?;
        }
        for c in &self.checks {
            let verdict = if c.passed { "pass" } else { "fail" };
            w.write_record([format!("check:{}", c.name).as_str(), verdict, c.detail.as_str()])?;
        }
        w.flush()?;
        self.outputs.push(path);
        Ok(())
    }
}
