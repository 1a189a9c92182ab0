use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ActivityLabel, DataError};

/// Nominal sampling rate of every stream, in Hz.
pub const SAMPLING_RATE_HZ: usize = 20;

pub const CANONICAL_HEADER: [&str; 9] = ["timestamp", "hbc", "ax", "ay", "az", "gx", "gy", "gz", "label"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Wrist,
    Leg,
    Pocket,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::Wrist, Position::Leg, Position::Pocket];

    pub fn as_str(self) -> &'static str {
        match self {
            Position::Wrist => "wrist",
            Position::Leg => "leg",
            Position::Pocket => "pocket",
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Position {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wrist" => Ok(Position::Wrist),
            "leg" | "calf" => Ok(Position::Leg),
            "pocket" => Ok(Position::Pocket),
            other => Err(format!("unknown position `{other}` (expected wrist|leg|pocket)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClothesMaterial {
    Cotton,
    Polyester,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SoleHeight {
    /// The pair the participant usually wears.
    M,
    /// A second pair with a different sole height.
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SoleMaterial {
    #[serde(rename = "PVC")]
    Pvc,
    #[serde(rename = "rubber")]
    Rubber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WearingConfig {
    pub clothes_material: ClothesMaterial,
    pub sole_height: SoleHeight,
    pub sole_material: SoleMaterial,
}

impl WearingConfig {
    /// Wearing protocol of the collection campaign, indexed by day (1..=5).
    pub fn for_day(day: u32) -> Option<Self> {
        use ClothesMaterial::*;
        let (clothes_material, sole_height, sole_material) = match day {
            1 | 2 => (Cotton, SoleHeight::M, SoleMaterial::Pvc),
            3 => (Polyester, SoleHeight::M, SoleMaterial::Pvc),
            4 => (Cotton, SoleHeight::S, SoleMaterial::Pvc),
            5 => (Cotton, SoleHeight::M, SoleMaterial::Rubber),
            _ => return None,
        };
        Some(Self { clothes_material, sole_height, sole_material })
    }
}

/// One synchronized 20 Hz reading of all seven channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleFrame {
    pub timestamp: f64,
    pub hbc: f64,
    pub acc: [f64; 3],
    pub gyro: [f64; 3],
    pub label: ActivityLabel,
}

impl SampleFrame {
    /// Channels in canonical order: hbc, ax, ay, az, gx, gy, gz.
    pub fn channels(&self) -> [f64; 7] {
        [self.hbc, self.acc[0], self.acc[1], self.acc[2], self.gyro[0], self.gyro[1], self.gyro[2]]
    }
}

/// Session metadata as stored in the JSON sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub subject_id: u32,
    pub day: u32,
    pub position: Position,
    #[serde(flatten)]
    pub wearing: WearingConfig,
    /// Set by the synthetic generator; disables the session-length plausibility warning.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

impl SessionMeta {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=10).contains(&self.subject_id) {
            return Err(format!("subject_id {} outside 1..=10", self.subject_id));
        }
        if !(1..=5).contains(&self.day) {
            return Err(format!("day {} outside 1..=5", self.day));
        }
        Ok(())
    }

    pub fn session_ref(&self) -> SessionRef {
        SessionRef { subject_id: self.subject_id, day: self.day, position: self.position }
    }

    /// `S<id>_D<day>_<position>` stem used by the dataset layout.
    pub fn file_stem(&self) -> String {
        self.session_ref().file_stem()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionRef {
    pub subject_id: u32,
    pub day: u32,
    pub position: Position,
}

impl SessionRef {
    pub fn file_stem(&self) -> String {
        format!("S{}_D{}_{}", self.subject_id, self.day, self.position)
    }
}

impl fmt::Display for SessionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.file_stem())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecording {
    pub meta: SessionMeta,
    pub frames: Vec<SampleFrame>,
}

impl SessionRecording {
    pub fn session_ref(&self) -> SessionRef {
        self.meta.session_ref()
    }

    pub fn duration_s(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }
}

/// Column mapping for session CSV files.
///
/// The canonical layout is what this crate writes; other layouts (such as the
/// upstream open dataset) are read by naming their columns and label spellings.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSchema {
    pub timestamp: String,
    pub hbc: String,
    pub acc: [String; 3],
    pub gyro: [String; 3],
    pub label: String,
    pub label_aliases: BTreeMap<String, ActivityLabel>,
    pub nominal_interval_s: f64,
    /// Relative deviation from the nominal interval tolerated before warning.
    pub jitter_tolerance: f64,
    /// Plausible session length in seconds; outside it a warning is raised.
    pub duration_bounds_s: (f64, f64),
}

impl SessionSchema {
    pub fn canonical() -> Self {
        let s = |x: &str| x.to_string();
        Self {
            timestamp: s("timestamp"),
            hbc: s("hbc"),
            acc: [s("ax"), s("ay"), s("az")],
            gyro: [s("gx"), s("gy"), s("gz")],
            label: s("label"),
            label_aliases: BTreeMap::new(),
            nominal_interval_s: 1.0 / SAMPLING_RATE_HZ as f64,
            jitter_tolerance: 0.2,
            duration_bounds_s: (600.0, 3.0 * 3600.0),
        }
    }

    /// Folds the three Squat ground-type tokens into [`ActivityLabel::Squat`].
    pub fn with_squat_variants(mut self) -> Self {
        for token in ActivityLabel::SQUAT_VARIANTS {
            self.label_aliases.insert(token.to_string(), ActivityLabel::Squat);
        }
        self
    }

    fn resolve_label(&self, token: &str) -> Option<ActivityLabel> {
        token.parse().ok().or_else(|| self.label_aliases.get(token).copied())
    }
}

impl Default for SessionSchema {
    fn default() -> Self {
        Self::canonical()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestWarning {
    ImplausibleDuration { seconds: f64 },
    TimestampJitter { intervals: usize, first_row: usize, worst_interval_s: f64 },
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestWarning::ImplausibleDuration { seconds } => {
                write!(f, "session lasts {seconds:.1} s, outside the expected range")
            }
            IngestWarning::TimestampJitter { intervals, first_row, worst_interval_s } => write!(
                f,
                "{intervals} sample intervals deviate from the nominal spacing (first at row {first_row}, worst {worst_interval_s:.4} s)"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedSession {
    pub recording: SessionRecording,
    pub warnings: Vec<IngestWarning>,
}

/// Reads `<stem>.csv` together with its `<stem>.json` metadata sidecar.
pub fn parse_session(csv_path: &Path, schema: &SessionSchema) -> Result<ParsedSession, DataError> {
    let meta_path = csv_path.with_extension("json");
    let meta = read_meta(&meta_path)?;
    let file = File::open(csv_path).map_err(|e| DataError::io(csv_path, e))?;
    let frames = parse_frames(BufReader::new(file), schema, csv_path)?;
    let recording = SessionRecording { meta, frames };
    let warnings = check_plausibility(&recording, schema);
    for w in &warnings {
        log::warn!("{}: {w}", csv_path.display());
    }
    Ok(ParsedSession { recording, warnings })
}

pub fn read_meta(path: &Path) -> Result<SessionMeta, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let meta: SessionMeta = serde_json::from_str(&text)
        .map_err(|e| DataError::Metadata { path: path.to_path_buf(), message: e.to_string() })?;
    meta.validate().map_err(|message| DataError::Metadata { path: path.to_path_buf(), message })?;
    Ok(meta)
}

/// Parses frames from any reader. `source` only labels error messages.
pub fn parse_frames<R: Read>(reader: R, schema: &SessionSchema, source: &Path) -> Result<Vec<SampleFrame>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Parse { path: source.to_path_buf(), line: 1, row: 0, message: e.to_string() })?
        .clone();
    let column = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::Schema { path: source.to_path_buf(), column: name.to_string() })
    };
    let ts_col = column(&schema.timestamp)?;
    let hbc_col = column(&schema.hbc)?;
    let acc_cols = [column(&schema.acc[0])?, column(&schema.acc[1])?, column(&schema.acc[2])?];
    let gyro_cols = [column(&schema.gyro[0])?, column(&schema.gyro[1])?, column(&schema.gyro[2])?];
    let label_col = column(&schema.label)?;

    let mut frames: Vec<SampleFrame> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(row + 1);
            DataError::Parse { path: source.to_path_buf(), line, row, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(row + 1);
        let parse_err = |message: String| DataError::Parse { path: source.to_path_buf(), line, row, message };
        let field = |col: usize, name: &str| -> Result<&str, DataError> {
            record.get(col).map(str::trim).ok_or_else(|| parse_err(format!("missing value for column `{name}`")))
        };
        let number = |col: usize, name: &str| -> Result<f64, DataError> {
            let raw = field(col, name)?;
            let value: f64 = raw.parse().map_err(|_| parse_err(format!("column `{name}`: invalid number `{raw}`")))?;
            if value.is_finite() {
                Ok(value)
            } else {
                Err(parse_err(format!("column `{name}`: non-finite value `{raw}`")))
            }
        };
        let timestamp = number(ts_col, &schema.timestamp)?;
        let hbc = number(hbc_col, &schema.hbc)?;
        let acc = [
            number(acc_cols[0], &schema.acc[0])?,
            number(acc_cols[1], &schema.acc[1])?,
            number(acc_cols[2], &schema.acc[2])?,
        ];
        let gyro = [
            number(gyro_cols[0], &schema.gyro[0])?,
            number(gyro_cols[1], &schema.gyro[1])?,
            number(gyro_cols[2], &schema.gyro[2])?,
        ];
        let token = field(label_col, &schema.label)?;
        let label = schema
            .resolve_label(token)
            .ok_or_else(|| parse_err(format!("unknown activity label `{token}`")))?;
        if let Some(prev) = frames.last() {
            if timestamp <= prev.timestamp {
                return Err(DataError::Integrity {
                    path: source.to_path_buf(),
                    row,
                    message: format!("timestamp {timestamp} does not advance past {}", prev.timestamp),
                });
            }
        }
        frames.push(SampleFrame { timestamp, hbc, acc, gyro, label });
    }
    Ok(frames)
}

fn check_plausibility(rec: &SessionRecording, schema: &SessionSchema) -> Vec<IngestWarning> {
    let mut warnings = Vec::new();
    if !rec.meta.synthetic {
        let seconds = rec.duration_s();
        let (lo, hi) = schema.duration_bounds_s;
        if seconds < lo || seconds > hi {
            warnings.push(IngestWarning::ImplausibleDuration { seconds });
        }
    }
    let nominal = schema.nominal_interval_s;
    let mut intervals = 0;
    let mut first_row = 0;
    let mut worst: f64 = nominal;
    for (i, pair) in rec.frames.windows(2).enumerate() {
        let dt = pair[1].timestamp - pair[0].timestamp;
        if ((dt - nominal) / nominal).abs() > schema.jitter_tolerance {
            if intervals == 0 {
                first_row = i + 2;
            }
            intervals += 1;
            if (dt - nominal).abs() > (worst - nominal).abs() {
                worst = dt;
            }
        }
    }
    if intervals > 0 {
        warnings.push(IngestWarning::TimestampJitter { intervals, first_row, worst_interval_s: worst });
    }
    warnings
}

/// Writes frames in the canonical layout. Values use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_frames<W: Write>(writer: W, frames: &[SampleFrame]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CANONICAL_HEADER)?;
    for f in frames {
        let mut rec: Vec<String> = Vec::with_capacity(9);
        rec.push(f.timestamp.to_string());
        rec.extend(f.channels().iter().map(f64::to_string));
        rec.push(f.label.as_str().to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`; returns the CSV path.
pub fn write_session(dir: &Path, rec: &SessionRecording) -> Result<PathBuf, DataError> {
    let stem = rec.meta.file_stem();
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let file = File::create(&csv_path).map_err(|e| DataError::io(&csv_path, e))?;
    write_frames(BufWriter::new(file), &rec.frames).map_err(|e| DataError::Parse {
        path: csv_path.clone(),
        line: 0,
        row: 0,
        message: e.to_string(),
    })?;
    let json = serde_json::to_string_pretty(&rec.meta).expect("metadata serializes");
    std::fs::write(&json_path, json + "\n").map_err(|e| DataError::io(&json_path, e))?;
    Ok(csv_path)
}
