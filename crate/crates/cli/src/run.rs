//! Per-command bookkeeping: input digests, atomic artifact writes and the
//! JSON run report.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const REPORT_SCHEMA: &str = "solidarity.run-report/v1";

/// An error caused by how the tool was invoked rather than by the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path, data: &[u8]) -> Self {
        FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(data)),
            bytes: data.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub command: String,
    pub tool_version: String,
    pub core_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: Value,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

/// Checks that `v` has the run-report shape: every field present with the right JSON type.
pub fn validate_report(v: &Value) -> Result<(), Vec<String>> {
    let mut problems = Vec::new();
    let Some(obj) = v.as_object() else {
        return Err(vec!["report is not a JSON object".into()]);
    };
    let expect = |key: &str, ok: fn(&Value) -> bool, what: &str, problems: &mut Vec<String>| match obj.get(key) {
        None => problems.push(format!("missing `{key}`")),
        Some(x) if !ok(x) => problems.push(format!("`{key}` must be {what}")),
        _ => {}
    };
    for key in ["command", "tool_version", "core_version"] {
        expect(key, |x| x.as_str().is_some_and(|s| !s.is_empty()), "a non-empty string", &mut problems);
    }
    expect("schema", |x| x.as_str() == Some(REPORT_SCHEMA), REPORT_SCHEMA, &mut problems);
    for key in ["started_at", "finished_at"] {
        expect(
            key,
            |x| x.as_str().is_some_and(|s| chrono::DateTime::parse_from_rfc3339(s).is_ok()),
            "an RFC 3339 timestamp",
            &mut problems,
        );
    }
    expect(
        "seeds",
        |x| x.as_object().is_some_and(|m| m.values().all(|s| s.is_u64())),
        "an object of unsigned integers",
        &mut problems,
    );
    for key in ["inputs", "outputs"] {
        expect(
            key,
            |x| {
                x.as_array().is_some_and(|a| {
                    a.iter().all(|d| {
                        d["path"].is_string()
                            && d["bytes"].is_u64()
                            && d["sha256"].as_str().is_some_and(|h| h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit()))
                    })
                })
            },
            "an array of {path, sha256, bytes}",
            &mut problems,
        );
    }
    for key in ["warnings", "notes"] {
        expect(
            key,
            |x| x.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
            "an array of strings",
            &mut problems,
        );
    }
    expect("summary", Value::is_object, "an object", &mut problems);
    expect("config", |x| x.is_object() || x.is_null(), "an object", &mut problems);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

/// Collects everything a command reads and writes.
#[derive(Debug)]
pub struct Run {
    command: String,
    started_at: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Run {
    pub fn new(command: &str) -> Self {
        Run {
            command: command.to_string(),
            started_at: now(),
            seeds: BTreeMap::new(),
            config: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    /// Reads an input file whole and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        if !path.is_file() {
            return Err(usage(format!("input file not found: {}", path.display())));
        }
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let digest = FileDigest::of(path, &data);
        if !self.inputs.contains(&digest) {
            self.inputs.push(digest);
        }
        Ok(data)
    }

    /// Writes an artifact atomically and records its digest.
    pub fn write(&mut self, path: &Path, data: &[u8]) -> Result<()> {
        write_atomic(path, data)?;
        self.outputs.retain(|d| d.path != path.display().to_string());
        self.outputs.push(FileDigest::of(path, data));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut data = serde_json::to_vec_pretty(value)?;
        data.push(b'\n');
        self.write(path, &data)
    }

    pub fn finish(self, summary: Value) -> RunReport {
        RunReport {
            schema: REPORT_SCHEMA.to_string(),
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: solidarity_core::VERSION.to_string(),
            started_at: self.started_at,
            finished_at: now(),
            seeds: self.seeds,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            summary,
            warnings: self.warnings,
            notes: self.notes,
        }
    }
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(data)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        // tempfile creates 0600; outputs should get ordinary permissions
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let mut data = serde_json::to_vec_pretty(report)?;
    data.push(b'\n');
    write_atomic(path, &data)
}
