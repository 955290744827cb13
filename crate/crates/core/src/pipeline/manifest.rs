use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageVerdict {
    Pass,
    Fail,
}

/// One editing triplet. Fields this crate does not know about are kept in
/// `extra` and written back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub input_path: PathBuf,
    pub edited_path: PathBuf,
    pub instruction: String,
    #[serde(default = "unknown_edit_type")]
    pub edit_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub stage_verdicts: BTreeMap<String, StageVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest_input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest_edited: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn unknown_edit_type() -> String {
    "unknown".into()
}

impl TripletRecord {
    pub fn new(id: impl Into<String>, input: impl Into<PathBuf>, edited: impl Into<PathBuf>, instruction: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            input_path: input.into(),
            edited_path: edited.into(),
            instruction: instruction.into(),
            edit_type: unknown_edit_type(),
            width: None,
            height: None,
            mask_path: None,
            scores: BTreeMap::new(),
            stage_verdicts: BTreeMap::new(),
            digest_input: None,
            digest_edited: None,
            extra: Map::new(),
        }
    }
}

const REQUIRED: [&str; 4] = ["id", "input_path", "edited_path", "instruction"];

fn parse_line(line: &str, lineno: usize) -> Result<TripletRecord, PipelineError> {
    let bad = |message: String| PipelineError::Manifest { line: lineno, message };
    let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| bad("record is not a JSON object".into()))?;
    if let Some(field) = REQUIRED.iter().find(|f| !obj.contains_key(**f)) {
        return Err(bad(format!("missing required field \"{field}\"")));
    }
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}

/// Parse JSON Lines from a reader. Blank lines are skipped; ids must be unique.
pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<TripletRecord>, PipelineError> {
    let mut out: Vec<TripletRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| PipelineError::Manifest {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_line(&line, lineno)?;
        if !seen.insert(rec.id.clone()) {
            return Err(PipelineError::Manifest {
                line: lineno,
                message: format!("duplicate id \"{}\"", rec.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<TripletRecord>, PipelineError> {
    let f = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    read_manifest(BufReader::new(f))
}

pub fn manifest_to_string(records: &[TripletRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records always serialize"));
        s.push('\n');
    }
    s
}

/// Write `contents` next to `path` and rename over it, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PipelineError::io(path, e))?;
    tmp.write_all(contents).map_err(|e| PipelineError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| PipelineError::io(path, e))?;
    tmp.persist(path).map_err(|e| PipelineError::io(path, e.error))?;
    Ok(())
}

pub fn write_manifest(path: &Path, records: &[TripletRecord]) -> Result<(), PipelineError> {
    write_atomic(path, manifest_to_string(records).as_bytes())
}
