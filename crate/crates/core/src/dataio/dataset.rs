use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    parse_session, window_session, ActivityLabel, DataError, IngestWarning, Position, SessionRecording, SessionRef,
    SessionSchema, WindowInstance, WindowParams,
};

/// Ground-truth repetition annotation for one exercise segment.
/// `start` is inclusive, `end` exclusive (frame indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCount {
    pub activity: ActivityLabel,
    pub start: usize,
    pub end: usize,
    pub count: u32,
}

/// Contents of a `<stem>.counts.json` sidecar.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountsSidecar {
    pub segments: Vec<SegmentCount>,
}

impl CountsSidecar {
    pub fn path_for(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("counts.json")
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::Metadata { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).expect("counts serialize") + "\n";
        std::fs::write(path, text).map_err(|e| DataError::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSession {
    pub csv_path: PathBuf,
    pub recording: SessionRecording,
    pub counts: Option<CountsSidecar>,
    pub warnings: Vec<IngestWarning>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sessions: Vec<DatasetSession>,
}

impl Dataset {
    pub fn positions(&self) -> Vec<Position> {
        let mut p: Vec<_> = self.sessions.iter().map(|s| s.recording.meta.position).collect();
        p.sort();
        p.dedup();
        p
    }

    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<_> = self.sessions.iter().map(|s| s.recording.meta.subject_id).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn sessions_at(&self, position: Position) -> impl Iterator<Item = &DatasetSession> {
        self.sessions.iter().filter(move |s| s.recording.meta.position == position)
    }

    pub fn windows(&self, position: Position, params: WindowParams) -> Vec<WindowInstance> {
        self.sessions_at(position).flat_map(|s| window_session(&s.recording, params)).collect()
    }

    pub fn warning_count(&self) -> usize {
        self.sessions.iter().map(|s| s.warnings.len()).sum()
    }
}

/// Parses a `S<id>_D<day>_<position>` file stem.
pub fn parse_stem(stem: &str) -> Option<SessionRef> {
    let mut parts = stem.split('_');
    let subject_id = parts.next()?.strip_prefix('S')?.parse().ok()?;
    let day = parts.next()?.strip_prefix('D')?.parse().ok()?;
    let position = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(SessionRef { subject_id, day, position })
}

/// Loads every `S<id>_D<day>_<position>.csv` (+ `.json`, optional
/// `.counts.json`) in `dir`, sorted by subject, day and position.
pub fn load_dataset(dir: &Path, schema: &SessionSchema, position: Option<Position>) -> Result<Dataset, DataError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DataError::io(dir, e))?;
    let mut found: Vec<(SessionRef, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| DataError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        let Some(r) = parse_stem(stem) else {
            log::debug!("skipping {}: not a session file name", path.display());
            continue;
        };
        if position.is_none_or(|p| p == r.position) {
            found.push((r, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(DataError::EmptyDataset { path: dir.to_path_buf() });
    }
    let mut sessions = Vec::with_capacity(found.len());
    for (r, csv_path) in found {
        let parsed = parse_session(&csv_path, schema)?;
        if parsed.recording.session_ref() != r {
            return Err(DataError::Metadata {
                path: csv_path.with_extension("json"),
                message: format!("metadata describes {} but file is named {}", parsed.recording.session_ref(), r),
            });
        }
        let counts_path = CountsSidecar::path_for(&csv_path);
        let counts = if counts_path.exists() { Some(CountsSidecar::read(&counts_path)?) } else { None };
        sessions.push(DatasetSession { csv_path, recording: parsed.recording, counts, warnings: parsed.warnings });
    }
    Ok(Dataset { sessions })
}
