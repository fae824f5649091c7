//! Subprocess sandbox for generated validator scripts.
//!
//! Protocol, bit-exact: the script is invoked with the table CSV path as its
//! sole argument inside a fresh working directory holding only that CSV and
//! a read-only `external_knowledge_base/` copy of the reference tables. It
//! must print a JSON array of 0-based violating row indices on stdout and
//! exit 0. Isolation is subprocess-level: cleared environment, isolated
//! interpreter mode, wall-clock timeout; OS-level jailing is out of scope.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{DqError, Result};
use crate::mask::{CellRef, MaskFragment};
use crate::table::Table;

/// Directory name the scripts expect reference tables under.
pub const KNOWLEDGE_BASE_DIR: &str = "external_knowledge_base";

/// How generated scripts are executed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandboxConfig {
    /// Interpreter to launch; resolved via the restricted sandbox PATH.
    pub python: String,
    /// Wall-clock budget per run.
    pub timeout: Duration,
    /// Source directory of reference CSVs, copied into each sandbox.
    pub ref_dir: Option<PathBuf>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            python: "python3".to_string(),
            timeout: Duration::from_secs(30),
            ref_dir: None,
        }
    }
}

/// A generated validator script plus how many attempts it took to build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalScript {
    pub source: String,
    pub attempts: usize,
}

/// Raw outcome of one sandboxed run.
#[derive(Debug, Clone)]
pub struct SandboxResult {
    /// Process exit code; `None` when the process died on a signal.
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: Duration,
}

impl SandboxResult {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0)
    }
}

/// Runs `script` against `table` in a fresh sandbox directory. Returns the
/// process outcome even on nonzero exit (the repair loop reads stderr);
/// errors are reserved for environment failures and timeouts.
pub fn run_script(script: &str, table: &Table, cfg: &SandboxConfig) -> Result<SandboxResult> {
    let dir = tempfile::tempdir().map_err(|e| DqError::io("sandbox tempdir", e))?;
    let csv_path = dir.path().join("data.csv");
    table.write_csv(&csv_path)?;

    let kb_dir = dir.path().join(KNOWLEDGE_BASE_DIR);
    std::fs::create_dir(&kb_dir).map_err(|e| DqError::io(kb_dir.display().to_string(), e))?;
    if let Some(src) = &cfg.ref_dir {
        copy_reference_files(src, &kb_dir)?;
    }

    let script_path = dir.path().join("validator.py");
    std::fs::write(&script_path, script)
        .map_err(|e| DqError::io(script_path.display().to_string(), e))?;

    let start = Instant::now();
    let mut child = Command::new(&cfg.python)
        .arg("-I")
        .arg(&script_path)
        .arg(&csv_path)
        .current_dir(dir.path())
        .env_clear()
        .env("PATH", "/usr/bin:/bin")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| DqError::Sandbox(format!("failed to launch `{}`: {e}", cfg.python)))?;

    // Pipes are drained on their own threads so a chatty script can never
    // deadlock the timeout loop.
    let mut stdout_pipe = child.stdout.take().expect("stdout piped");
    let mut stderr_pipe = child.stderr.take().expect("stderr piped");
    let stdout_thread = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout_pipe.read_to_end(&mut buf);
        buf
    });
    let stderr_thread = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr_pipe.read_to_end(&mut buf);
        buf
    });

    let deadline = start + cfg.timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    let _ = stdout_thread.join();
                    let _ = stderr_thread.join();
                    return Err(DqError::SandboxTimeout {
                        seconds: cfg.timeout.as_secs(),
                    });
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(DqError::Sandbox(format!("wait failed: {e}"))),
        }
    };

    let stdout = String::from_utf8_lossy(&stdout_thread.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&stderr_thread.join().unwrap_or_default()).into_owned();
    Ok(SandboxResult {
        exit_code: status.code(),
        stdout,
        stderr,
        wall_time: start.elapsed(),
    })
}

/// Copies the reference CSVs into the sandbox and marks them read-only.
fn copy_reference_files(src: &std::path::Path, dst: &std::path::Path) -> Result<()> {
    let entries =
        std::fs::read_dir(src).map_err(|e| DqError::io(src.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| DqError::io(src.display().to_string(), e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let target = dst.join(entry.file_name());
        std::fs::copy(&path, &target)
            .map_err(|e| DqError::io(path.display().to_string(), e))?;
        if let Ok(meta) = std::fs::metadata(&target) {
            let mut perms = meta.permissions();
            perms.set_readonly(true);
            let _ = std::fs::set_permissions(&target, perms);
        }
    }
    Ok(())
}

/// Runs an external validator under the full protocol and expands the
/// reported rows to one cell per target column. Timeouts, nonzero exits,
/// unparseable stdout, and out-of-range indices all reject the run.
pub fn run_external(
    rule_name: &str,
    target_columns: &[String],
    script: &ExternalScript,
    table: &Table,
    cfg: &SandboxConfig,
) -> Result<MaskFragment> {
    for target in target_columns {
        if table.column_index(target).is_none() {
            return Err(DqError::UnknownColumn(target.clone()));
        }
    }
    let result = run_script(&script.source, table, cfg)?;
    if !result.success() {
        let detail = match result.exit_code {
            Some(code) => format!("exited with status {code}"),
            None => "was killed by a signal".to_string(),
        };
        return Err(DqError::Sandbox(format!(
            "script {detail}: {}",
            truncate(&result.stderr, 400)
        )));
    }
    let rows = parse_row_indices(&result.stdout, table.row_count())?;
    let mut cells = BTreeSet::new();
    for row in rows {
        for target in target_columns {
            cells.insert(CellRef::new(row, target.clone()));
        }
    }
    Ok(MaskFragment {
        rule_name: rule_name.to_string(),
        cells,
    })
}

/// Parses the protocol output: one JSON array of 0-based row indices.
pub(crate) fn parse_row_indices(stdout: &str, row_count: usize) -> Result<BTreeSet<usize>> {
    let trimmed = stdout.trim();
    let indices: Vec<u64> = serde_json::from_str(trimmed).map_err(|_| {
        DqError::Protocol(format!(
            "stdout is not a JSON array of row indices: {}",
            truncate(trimmed, 200)
        ))
    })?;
    let mut rows = BTreeSet::new();
    for idx in indices {
        let idx = usize::try_from(idx).ok().filter(|i| *i < row_count);
        match idx {
            Some(i) => {
                rows.insert(i);
            }
            None => {
                return Err(DqError::Protocol(format!(
                    "row index out of range for a {row_count}-row table"
                )))
            }
        }
    }
    Ok(rows)
}

fn truncate(s: &str, limit: usize) -> String {
    let s = s.trim();
    if s.len() <= limit {
        s.to_string()
    } else {
        let cut = s
            .char_indices()
            .take_while(|(i, _)| *i < limit)
            .last()
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(limit);
        format!("{}...", &s[..cut])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_row_table() -> Table {
        Table::from_rows(
            "t",
            &["id", "name"],
            (0..5)
                .map(|i| vec![Some(i.to_string()), Some(format!("n{i}"))])
                .collect(),
        )
        .unwrap()
    }

    fn script(source: &str) -> ExternalScript {
        ExternalScript {
            source: source.to_string(),
            attempts: 1,
        }
    }

    #[test]
    fn reported_rows_expand_to_every_target_column() {
        let fragment = run_external(
            "r",
            &["id".into(), "name".into()],
            &script("print('[0,3]')"),
            &five_row_table(),
            &SandboxConfig::default(),
        )
        .unwrap();
        let expected: BTreeSet<CellRef> = [
            CellRef::new(0, "id"),
            CellRef::new(0, "name"),
            CellRef::new(3, "id"),
            CellRef::new(3, "name"),
        ]
        .into_iter()
        .collect();
        assert_eq!(fragment.cells, expected);
    }

    #[test]
    fn empty_array_gives_empty_fragment() {
        let fragment = run_external(
            "r",
            &["id".into()],
            &script("print('[]')"),
            &five_row_table(),
            &SandboxConfig::default(),
        )
        .unwrap();
        assert!(fragment.cells.is_empty());
    }

    #[test]
    fn script_receives_the_csv_path_as_sole_argument() {
        let source = r#"
import csv, json, sys
assert len(sys.argv) == 2, sys.argv
with open(sys.argv[1]) as fh:
    rows = list(csv.DictReader(fh))
print(json.dumps([i for i, row in enumerate(rows) if row["id"] == "2"]))
"#;
        let fragment = run_external(
            "r",
            &["id".into()],
            &script(source),
            &five_row_table(),
            &SandboxConfig::default(),
        )
        .unwrap();
        assert_eq!(fragment.cells, BTreeSet::from([CellRef::new(2, "id")]));
    }

    #[test]
    fn reference_directory_is_copied_beside_the_csv() {
        let refs = tempfile::tempdir().unwrap();
        std::fs::write(refs.path().join("codes.csv"), "code\nOR\n").unwrap();
        let cfg = SandboxConfig {
            ref_dir: Some(refs.path().to_path_buf()),
            ..SandboxConfig::default()
        };
        let source = r#"
import os, sys
path = os.path.join(os.path.dirname(sys.argv[1]), "external_knowledge_base", "codes.csv")
assert os.path.exists(path), path
print("[]")
"#;
        let fragment =
            run_external("r", &["id".into()], &script(source), &five_row_table(), &cfg).unwrap();
        assert!(fragment.cells.is_empty());
    }

    #[test]
    fn nonzero_exit_is_rejected_with_stderr() {
        let err = run_external(
            "r",
            &["id".into()],
            &script("raise ValueError('bad column')"),
            &five_row_table(),
            &SandboxConfig::default(),
        )
        .unwrap_err();
        match err {
            DqError::Sandbox(msg) => assert!(msg.contains("bad column"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_json_stdout_is_a_protocol_error() {
        let err = run_external(
            "r",
            &["id".into()],
            &script("print('checked 5 rows')"),
            &five_row_table(),
            &SandboxConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DqError::Protocol(_)));
    }

    #[test]
    fn out_of_range_index_is_a_protocol_error() {
        let err = run_external(
            "r",
            &["id".into()],
            &script("print('[7]')"),
            &five_row_table(),
            &SandboxConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DqError::Protocol(_)));
    }

    #[test]
    fn runaway_script_hits_the_wall_clock_timeout() {
        let cfg = SandboxConfig {
            timeout: Duration::from_millis(400),
            ..SandboxConfig::default()
        };
        let err = run_external(
            "r",
            &["id".into()],
            &script("import time\ntime.sleep(30)\nprint('[]')"),
            &five_row_table(),
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, DqError::SandboxTimeout { .. }));
    }

    #[test]
    fn missing_target_column_is_checked_before_running() {
        let err = run_external(
            "r",
            &["ghost".into()],
            &script("print('[]')"),
            &five_row_table(),
            &SandboxConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DqError::UnknownColumn(c) if c == "ghost"));
    }
}
