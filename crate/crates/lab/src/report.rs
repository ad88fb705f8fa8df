//! Assertions, in-memory artifacts and the output directory layout.

use std::fs;
use std::path::{Path, PathBuf};

use ebsde_core::Error;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Assertion {
    /// Fails NaN values.
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            pass: value <= bound,
            value: Some(value),
            threshold: Some(bound),
            detail: format!("{value:.6e} <= {bound:.6e}"),
        }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            pass: value >= bound,
            value: Some(value),
            threshold: Some(bound),
            detail: format!("{value:.6e} >= {bound:.6e}"),
        }
    }

    pub fn flag(name: &str, got: Option<bool>, want: bool) -> Self {
        Self {
            name: name.into(),
            pass: got == Some(want),
            value: None,
            threshold: None,
            detail: match got {
                Some(g) => format!("{g} (expected {want})"),
                None => format!("not applicable (expected {want})"),
            },
        }
    }

    pub fn missing(name: &str, why: &str) -> Self {
        Self {
            name: name.into(),
            pass: false,
            value: None,
            threshold: None,
            detail: why.into(),
        }
    }
}

/// Result of one pipeline before anything touches the disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: String,
    pub summary: Value,
    pub assertions: Vec<Assertion>,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn new(command: &str, summary: Value, assertions: Vec<Assertion>) -> Self {
        Self {
            command: command.into(),
            summary,
            assertions,
            files: Vec::new(),
        }
    }

    pub fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }
}

pub fn csv_bytes<S: AsRef<str>>(header: &[&str], rows: &[Vec<S>]) -> Result<Vec<u8>, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref())).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Writes `summary.json`, every CSV of the outcome and `manifest.json`
/// into `dir`. Returns the paths written.
pub fn write_outputs(dir: &Path, outcome: &Outcome, manifest: Value) -> Result<Vec<PathBuf>, Error> {
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let mut written = Vec::new();
    let summary = json!({
        "command": outcome.command,
        "passed": outcome.passed(),
        "assertions": outcome.assertions,
        "results": outcome.summary,
    });
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), Error> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(io)?;
        written.push(p);
        Ok(())
    };
    put("summary.json", pretty(&summary).as_bytes())?;
    for (name, bytes) in &outcome.files {
        put(name, bytes)?;
    }
    let mut manifest = manifest;
    let names: Vec<&str> = std::iter::once("summary.json")
        .chain(outcome.files.iter().map(|(n, _)| n.as_str()))
        .collect();
    manifest["outputs"] = json!(names);
    manifest["passed"] = json!(outcome.passed());
    put("manifest.json", pretty(&manifest).as_bytes())?;
    Ok(written)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).unwrap_or_default();
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_never_passes() {
        assert!(!Assertion::at_most("x", f64::NAN, 1.0).pass);
        assert!(!Assertion::at_least("x", f64::NAN, 1.0).pass);
        assert!(Assertion::at_most("x", 1.0, 1.0).pass);
    }

    #[test]
    fn flag_needs_a_value() {
        assert!(!Assertion::flag("h4", None, false).pass);
        assert!(Assertion::flag("h4", Some(false), false).pass);
    }

    #[test]
    fn empty_outcome_passes() {
        assert!(Outcome::new("check", Value::Null, vec![]).passed());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let b = csv_bytes(&["a", "b"], &[vec!["1", "2"]]).unwrap();
        assert_eq!(String::from_utf8(b).unwrap(), "a,b\n1,2\n");
    }
}
