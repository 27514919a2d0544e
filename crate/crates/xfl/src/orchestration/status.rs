//! JSON-lines status records and the report table built from them.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::io::{ensure_parent, IoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl StageState {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Running => "running",
            Self::Succeeded => "succeeded",
            Self::Failed => "failed",
        }
    }
}

/// `{"stage": 0, "party": "alice", "state": "succeeded", "metrics": {...}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusLine {
    pub stage: usize,
    pub party: String,
    pub state: StageState,
    #[serde(default)]
    pub metrics: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Final per-party outcome of every stage that started.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStatus {
    pub session_id: String,
    pub lines: Vec<StatusLine>,
}

impl TaskStatus {
    pub fn succeeded(&self) -> bool {
        self.lines.iter().all(|l| l.state == StageState::Succeeded)
    }

    pub fn first_failure(&self) -> Option<&StatusLine> {
        self.lines.iter().find(|l| l.state == StageState::Failed)
    }

    pub fn line(&self, stage: usize, party: &str) -> Option<&StatusLine> {
        self.lines.iter().find(|l| l.stage == stage && l.party == party)
    }
}

/// Appends lines to a JSON-lines file.
#[derive(Debug, Clone)]
pub struct JsonLines {
    path: PathBuf,
}

impl JsonLines {
    /// Starts an empty file at `path`.
    pub fn create(path: PathBuf) -> Result<Self, IoError> {
        ensure_parent(&path)?;
        fs::write(&path, b"").map_err(|e| IoError::io(&path, e))?;
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, line: &StatusLine) -> Result<(), IoError> {
        let mut bytes =
            serde_json::to_vec(line).map_err(|e| IoError::Json { path: self.path.clone(), message: e.to_string() })?;
        bytes.push(b'\n');
        let mut f = OpenOptions::new().append(true).open(&self.path).map_err(|e| IoError::io(&self.path, e))?;
        f.write_all(&bytes).map_err(|e| IoError::io(&self.path, e))
    }
}

pub fn read_status_lines(path: &Path) -> Result<Vec<StatusLine>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| IoError::Json { path: path.to_owned(), message: format!("line {}: {e}", i + 1) })
        })
        .collect()
}

/// Columns shown by the report, in order. A party's value comes from its
/// last line for the stage.
pub const REPORT_COLUMNS: [&str; 7] = ["epochs", "ks", "auc", "accuracy", "loss", "mse", "rows"];

/// Latest line per (stage, party), in first-seen order.
pub fn final_lines(lines: &[StatusLine]) -> Vec<StatusLine> {
    let mut out: Vec<StatusLine> = Vec::new();
    for l in lines {
        match out.iter_mut().find(|o| o.stage == l.stage && o.party == l.party) {
            Some(o) => *o = l.clone(),
            None => out.push(l.clone()),
        }
    }
    out
}

/// Plain-text table of the final state and metrics per stage and party.
pub fn render_report(session: &str, lines: &[StatusLine]) -> String {
    let finals = final_lines(lines);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["stage".to_owned(), "party".to_owned(), "state".to_owned()];
    header.extend(REPORT_COLUMNS.iter().map(|c| (*c).to_owned()));
    for l in &finals {
        let mut row = vec![l.stage.to_string(), l.party.clone(), l.state.as_str().to_owned()];
        for c in REPORT_COLUMNS {
            row.push(match l.metrics.get(c) {
                Some(Value::Number(n)) => n.to_string(),
                Some(Value::String(s)) => s.clone(),
                _ => "-".to_owned(),
            });
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = format!("session {session}\n");
    for r in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    for l in finals.iter().filter(|l| l.error.is_some()) {
        let _ = writeln!(out, "stage {} {}: {}", l.stage, l.party, l.error.as_deref().unwrap_or_default());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(stage: usize, party: &str, state: StageState, m: Value) -> StatusLine {
        let Value::Object(metrics) = m else { panic!() };
        StatusLine { stage, party: party.into(), state, metrics, error: None }
    }

    #[test]
    fn report_uses_last_line_per_party() {
        let lines = vec![
            line(0, "a", StageState::Running, serde_json::json!({})),
            line(0, "a", StageState::Succeeded, serde_json::json!({"ks": 0.25, "epochs": 3})),
        ];
        let r = render_report("s", &lines);
        assert!(r.contains("succeeded"));
        assert!(r.contains("0.25"));
        assert!(!r.contains("running"));
    }

    #[test]
    fn status_lines_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let log = JsonLines::create(dir.path().join("x/status.jsonl")).unwrap();
        let l = line(1, "b", StageState::Failed, serde_json::json!({"loss": 0.5}));
        log.append(&l).unwrap();
        log.append(&l).unwrap();
        assert_eq!(read_status_lines(log.path()).unwrap(), vec![l.clone(), l]);
        let text = fs::read_to_string(log.path()).unwrap();
        assert!(text.starts_with(r#"{"stage":1,"party":"b","state":"failed","metrics":{"loss":0.5}}"#));
    }
}
