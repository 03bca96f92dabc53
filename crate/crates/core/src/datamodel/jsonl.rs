use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use super::{CaptionRecord, DetectionSet, DiagnosisReport, ImageRef, InstructionSample, Polarity, SampleType};

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: line {line} (byte offset {byte_offset}): malformed {kind} record: {source}")]
    Malformed {
        path: PathBuf,
        kind: &'static str,
        line: usize,
        byte_offset: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("failed to serialize {kind} record: {source}")]
    Serialize {
        kind: &'static str,
        #[source]
        source: serde_json::Error,
    },
}

/// A record type storable one-per-line.
///
/// Files are written in `sort_key` order, ties broken by the serialized line,
/// so output order depends on content only.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;
    type Key: Ord;

    fn sort_key(&self) -> Self::Key;
}

impl Record for ImageRef {
    const KIND: &'static str = "image";
    type Key = String;

    fn sort_key(&self) -> String {
        self.image_id.clone()
    }
}

impl Record for CaptionRecord {
    const KIND: &'static str = "caption";
    type Key = (String, String);

    fn sort_key(&self) -> Self::Key {
        (self.image_id.clone(), self.model_tag.clone())
    }
}

impl Record for DetectionSet {
    const KIND: &'static str = "detection";
    type Key = String;

    fn sort_key(&self) -> String {
        self.image_id.clone()
    }
}

impl Record for DiagnosisReport {
    const KIND: &'static str = "diagnosis";
    type Key = (String, String);

    fn sort_key(&self) -> Self::Key {
        (self.image_id.clone(), self.model_tag.clone())
    }
}

impl Record for InstructionSample {
    const KIND: &'static str = "instruction";
    type Key = (String, SampleType, Polarity, String);

    fn sort_key(&self) -> Self::Key {
        (self.image_id.clone(), self.sample_type, self.polarity, self.question.clone())
    }
}

/// Parse records from JSONL text. Blank lines are skipped.
pub fn read_jsonl_str<R: Record>(text: &str, path: &Path) -> Result<Vec<R>, JsonlError> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for (idx, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.trim_end_matches(['\n', '\r']);
        if !line.trim().is_empty() {
            let rec = serde_json::from_str(line).map_err(|source| JsonlError::Malformed {
                path: path.to_path_buf(),
                kind: R::KIND,
                line: idx + 1,
                byte_offset: offset,
                source,
            })?;
            out.push(rec);
        }
        offset += raw.len();
    }
    Ok(out)
}

pub fn read_jsonl<R: Record>(path: &Path) -> Result<Vec<R>, JsonlError> {
    let text = fs::read_to_string(path).map_err(|source| JsonlError::Io { path: path.to_path_buf(), source })?;
    read_jsonl_str(&text, path)
}

/// Serialize records in canonical order, one per line, trailing newline.
pub fn to_jsonl_string<R: Record>(records: &[R]) -> Result<String, JsonlError> {
    let mut lines = records
        .iter()
        .map(|r| {
            serde_json::to_string(r)
                .map(|line| (r.sort_key(), line))
                .map_err(|source| JsonlError::Serialize { kind: R::KIND, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    lines.sort();
    let mut out = String::new();
    for (_, line) in lines {
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<R: Record>(path: &Path, records: &[R]) -> Result<(), JsonlError> {
    let text = to_jsonl_string(records)?;
    let io_err = |source| JsonlError::Io { path: path.to_path_buf(), source };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(text.as_bytes()).map_err(io_err)?;
    Ok(())
}
