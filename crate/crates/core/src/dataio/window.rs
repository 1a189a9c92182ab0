use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ActivityLabel, SessionRecording, SessionRef};

/// Window length in samples (4 s at 20 Hz).
pub const WINDOW_LEN: usize = 80;
/// Window stride in samples (2 s overlap).
pub const WINDOW_STRIDE: usize = 40;
/// hbc + 3 acc + 3 gyro.
pub const N_CHANNELS: usize = 7;

/// Which sensing modality feeds the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalSource {
    Hbc,
    Imu,
    Combined,
}

impl SignalSource {
    pub const ALL: [SignalSource; 3] = [SignalSource::Hbc, SignalSource::Imu, SignalSource::Combined];

    pub fn n_channels(self) -> usize {
        match self {
            SignalSource::Hbc => 1,
            SignalSource::Imu => 6,
            SignalSource::Combined => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignalSource::Hbc => "hbc",
            SignalSource::Imu => "imu",
            SignalSource::Combined => "combined",
        }
    }
}

impl fmt::Display for SignalSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hbc" => Ok(SignalSource::Hbc),
            "imu" => Ok(SignalSource::Imu),
            "combined" | "hbc+imu" => Ok(SignalSource::Combined),
            other => Err(format!("unknown signal source `{other}` (expected hbc|imu|combined)")),
        }
    }
}

/// How a window with mixed per-frame labels is labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelRule {
    /// Most frequent frame label; ties go to `Null`.
    #[default]
    Majority,
    /// Only windows whose frames all share one label are kept.
    Pure,
}

impl LabelRule {
    pub fn apply(self, labels: impl IntoIterator<Item = ActivityLabel>) -> Option<ActivityLabel> {
        let mut counts = [0usize; ActivityLabel::COUNT];
        let mut total = 0;
        for l in labels {
            counts[l.index()] += 1;
            total += 1;
        }
        if total == 0 {
            return None;
        }
        let best = *counts.iter().max().unwrap();
        match self {
            LabelRule::Pure => counts.iter().position(|&c| c == total).and_then(ActivityLabel::from_index),
            LabelRule::Majority => {
                let mut winners = counts.iter().enumerate().filter(|(_, &c)| c == best).map(|(i, _)| i);
                let first = winners.next()?;
                if winners.next().is_some() {
                    Some(ActivityLabel::Null)
                } else {
                    ActivityLabel::from_index(first)
                }
            }
        }
    }
}

/// One classification instance: all seven channels over `len` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowInstance {
    /// Row-major `[N_CHANNELS × len]`, channel order hbc, ax, ay, az, gx, gy, gz.
    pub channels: Vec<f64>,
    pub len: usize,
    pub label: ActivityLabel,
    pub session: SessionRef,
    pub start_index: usize,
}

impl WindowInstance {
    pub fn subject_id(&self) -> u32 {
        self.session.subject_id
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c * self.len..(c + 1) * self.len]
    }

    /// Channel indices carried by `source`.
    pub fn source_channels(source: SignalSource) -> std::ops::Range<usize> {
        match source {
            SignalSource::Hbc => 0..1,
            SignalSource::Imu => 1..7,
            SignalSource::Combined => 0..7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowParams {
    pub len: usize,
    pub stride: usize,
    pub rule: LabelRule,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self { len: WINDOW_LEN, stride: WINDOW_STRIDE, rule: LabelRule::Majority }
    }
}

/// Cuts a session into windows starting at `0, stride, 2·stride, …` while the
/// window fits. Sessions shorter than one window yield nothing.
pub fn window_session(rec: &SessionRecording, params: WindowParams) -> Vec<WindowInstance> {
    let WindowParams { len, stride, rule } = params;
    assert!(len > 0 && stride > 0, "window length and stride must be positive");
    let n = rec.frames.len();
    if n < len {
        return Vec::new();
    }
    let session = rec.session_ref();
    (0..=(n - len))
        .step_by(stride)
        .filter_map(|start| {
            let frames = &rec.frames[start..start + len];
            let label = rule.apply(frames.iter().map(|f| f.label))?;
            let mut channels = vec![0.0; N_CHANNELS * len];
            for (t, f) in frames.iter().enumerate() {
                for (c, v) in f.channels().into_iter().enumerate() {
                    channels[c * len + t] = v;
                }
            }
            Some(WindowInstance { channels, len, label, session, start_index: start })
        })
        .collect()
}

/// Number of windows `window_session` produces for `n_frames` (majority rule).
pub fn window_count(n_frames: usize, len: usize, stride: usize) -> usize {
    if n_frames < len {
        0
    } else {
        (n_frames - len) / stride + 1
    }
}
