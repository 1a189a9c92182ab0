//! Repetition counting from accelerometer, gyroscope and HBC magnitudes.
//!
//! Each source is reduced to one sequence (3-axis magnitude for acc/gyro, the
//! raw channel for HBC), smoothed with [`fourier_lowpass`] at an
//! activity-dependent cutoff, and its peaks are counted with
//! [`detect_peaks`]. Peak parameters come from a grid search.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{ActivityLabel, CountsSidecar, SampleFrame, SessionRecording, SessionRef, SAMPLING_RATE_HZ};
use crate::signal::{detect_peaks, fourier_lowpass, magnitude, PeakParams, Series, SignalError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CountError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("real repetition count must be at least 1, got {0}")]
    InvalidRealCount(u32),
    #[error("segment has {0} samples, counting needs at least 3")]
    SegmentTooShort(usize),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("grid search needs at least one segment")]
    NoSegments,
    #[error("peak grid is empty")]
    EmptyGrid,
    #[error("leave-one-user-out counting needs at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountSource {
    Acc,
    Gyro,
    Hbc,
}

impl CountSource {
    pub const ALL: [CountSource; 3] = [CountSource::Acc, CountSource::Gyro, CountSource::Hbc];

    pub fn as_str(self) -> &'static str {
        match self {
            CountSource::Acc => "acc",
            CountSource::Gyro => "gyro",
            CountSource::Hbc => "hbc",
        }
    }
}

impl fmt::Display for CountSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How grid-searched peak parameters are obtained when reporting accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    /// Search over all segments, then count the same segments.
    UpperBound,
    /// For each subject, search on the other subjects' segments only.
    Louo,
}

impl FromStr for GridMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "upper-bound" => Ok(GridMode::UpperBound),
            "louo" => Ok(GridMode::Louo),
            other => Err(format!("unknown grid mode `{other}` (expected upper-bound|louo)")),
        }
    }
}

/// A contiguous run of one workout with its ground-truth repetition count.
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseSegment {
    pub activity: ActivityLabel,
    pub frames: Vec<SampleFrame>,
    pub true_count: u32,
    pub session: SessionRef,
    pub start: usize,
}

impl ExerciseSegment {
    pub fn new(
        activity: ActivityLabel,
        frames: Vec<SampleFrame>,
        true_count: u32,
        session: SessionRef,
        start: usize,
    ) -> Result<Self, CountError> {
        if activity == ActivityLabel::Null {
            return Err(CountError::InvalidSegment("Null segments are not counted".into()));
        }
        if true_count < 1 {
            return Err(CountError::InvalidRealCount(true_count));
        }
        if let Some(f) = frames.iter().find(|f| f.label != activity) {
            return Err(CountError::InvalidSegment(format!(
                "{activity} segment at {session}:{start} contains a {} frame",
                f.label
            )));
        }
        Ok(Self { activity, frames, true_count, session, start })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Cuts annotated segments out of a session using its counts sidecar.
pub fn extract_segments(rec: &SessionRecording, counts: &CountsSidecar) -> Result<Vec<ExerciseSegment>, CountError> {
    counts
        .segments
        .iter()
        .map(|s| {
            if s.start >= s.end || s.end > rec.frames.len() {
                return Err(CountError::InvalidSegment(format!(
                    "range {}..{} out of bounds for {} frames in {}",
                    s.start,
                    s.end,
                    rec.frames.len(),
                    rec.session_ref()
                )));
            }
            ExerciseSegment::new(s.activity, rec.frames[s.start..s.end].to_vec(), s.count, rec.session_ref(), s.start)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountConfig {
    pub sampling_rate: f64,
    pub cutoff_default_hz: f64,
    pub cutoff_fast_hz: f64,
    /// Threshold grid, scanned ascending.
    pub thresholds: Vec<f64>,
    /// Minimum peak distance grid in seconds, scanned ascending.
    pub min_distances_s: Vec<f64>,
}

impl CountConfig {
    /// Activities with higher repetition rates, smoothed at the fast cutoff.
    pub const FAST_SET: [ActivityLabel; 4] =
        [ActivityLabel::Running, ActivityLabel::Walking, ActivityLabel::Ropeskipping, ActivityLabel::Riding];

    pub fn cutoff_for(&self, activity: ActivityLabel) -> f64 {
        if Self::FAST_SET.contains(&activity) {
            self.cutoff_fast_hz
        } else {
            self.cutoff_default_hz
        }
    }

    /// Grid cells in scan order: threshold ascending, then distance ascending.
    pub fn peak_grid(&self) -> Vec<PeakParams> {
        let mut grid = Vec::with_capacity(self.thresholds.len() * self.min_distances_s.len());
        for &threshold in &self.thresholds {
            for &secs in &self.min_distances_s {
                let min_distance = ((secs * self.sampling_rate).round() as usize).max(1);
                grid.push(PeakParams { threshold, min_distance });
            }
        }
        grid
    }

    pub fn with_single_cell(mut self, threshold: f64, min_distance_s: f64) -> Self {
        self.thresholds = vec![threshold];
        self.min_distances_s = vec![min_distance_s];
        self
    }
}

impl Default for CountConfig {
    fn default() -> Self {
        Self {
            sampling_rate: SAMPLING_RATE_HZ as f64,
            cutoff_default_hz: 2.5,
            cutoff_fast_hz: 5.0,
            thresholds: (1..=9).map(|k| k as f64 / 10.0).collect(),
            min_distances_s: (1..=12).map(|k| k as f64 * 0.25).collect(),
        }
    }
}

/// The single sequence a source contributes for a segment.
pub fn source_series(seg: &ExerciseSegment, source: CountSource, fs: f64) -> Result<Series, CountError> {
    let axis = |f: fn(&SampleFrame) -> f64| Series::new(seg.frames.iter().map(f).collect(), fs);
    let s = match source {
        CountSource::Hbc => axis(|f| f.hbc)?,
        CountSource::Acc => magnitude(&axis(|f| f.acc[0])?, &axis(|f| f.acc[1])?, &axis(|f| f.acc[2])?)?,
        CountSource::Gyro => magnitude(&axis(|f| f.gyro[0])?, &axis(|f| f.gyro[1])?, &axis(|f| f.gyro[2])?)?,
    };
    Ok(s)
}

/// Source sequence after low-pass smoothing at the activity's cutoff.
pub fn smoothed_source(seg: &ExerciseSegment, source: CountSource, cfg: &CountConfig) -> Result<Series, CountError> {
    if seg.len() < 3 {
        return Err(CountError::SegmentTooShort(seg.len()));
    }
    let raw = source_series(seg, source, cfg.sampling_rate)?;
    Ok(fourier_lowpass(&raw, cfg.cutoff_for(seg.activity))?)
}

pub fn count_source(
    seg: &ExerciseSegment,
    source: CountSource,
    cfg: &CountConfig,
    params: &PeakParams,
) -> Result<usize, CountError> {
    let smooth = smoothed_source(seg, source, cfg)?;
    Ok(detect_peaks(smooth.values(), params).len())
}

/// `1 − |detected − real| / real`; negative when the error exceeds the real count.
pub fn count_accuracy(detected: f64, real_count: u32) -> Result<f64, CountError> {
    if real_count < 1 {
        return Err(CountError::InvalidRealCount(real_count));
    }
    let real = f64::from(real_count);
    Ok(1.0 - (detected - real).abs() / real)
}

/// IMU count: mean of accelerometer and gyroscope counts, unrounded.
pub fn fuse_imu(acc_count: usize, gyro_count: usize) -> f64 {
    (acc_count as f64 + gyro_count as f64) / 2.0
}

/// HBC + IMU count: mean of the two counts that agree best.
///
/// Among the three pairs the smallest absolute difference wins; ties prefer a
/// pair containing HBC, and remaining ties the lower mean.
pub fn fuse_closest_two(acc: usize, gyro: usize, hbc: usize) -> f64 {
    let pairs = [(acc, gyro, false), (acc, hbc, true), (gyro, hbc, true)];
    let key = |&(a, b, with_hbc): &(usize, usize, bool)| (a.abs_diff(b), !with_hbc, a + b);
    let (a, b, _) = pairs.iter().min_by_key(|p| key(p)).copied().expect("three pairs");
    (a as f64 + b as f64) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceAccuracies {
    pub acc: f64,
    pub gyro: f64,
    pub hbc: f64,
    pub imu: f64,
    pub combined: f64,
}

impl SourceAccuracies {
    pub const NAMES: [&'static str; 5] = ["acc", "gyro", "hbc", "imu", "combined"];

    pub fn as_array(&self) -> [f64; 5] {
        [self.acc, self.gyro, self.hbc, self.imu, self.combined]
    }
}

/// Detected counts of one segment with fused counts and derived accuracies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountResult {
    pub true_count: u32,
    pub acc: usize,
    pub gyro: usize,
    pub hbc: usize,
    pub imu: f64,
    pub combined: f64,
    pub accuracy: SourceAccuracies,
}

impl CountResult {
    pub fn from_counts(true_count: u32, acc: usize, gyro: usize, hbc: usize) -> Result<Self, CountError> {
        let imu = fuse_imu(acc, gyro);
        let combined = fuse_closest_two(acc, gyro, hbc);
        let accuracy = SourceAccuracies {
            acc: count_accuracy(acc as f64, true_count)?,
            gyro: count_accuracy(gyro as f64, true_count)?,
            hbc: count_accuracy(hbc as f64, true_count)?,
            imu: count_accuracy(imu, true_count)?,
            combined: count_accuracy(combined, true_count)?,
        };
        Ok(Self { true_count, acc, gyro, hbc, imu, combined, accuracy })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridChoice {
    pub params: PeakParams,
    pub mean_accuracy: f64,
}

fn mean_accuracy_for(smoothed: &[(Series, u32)], params: &PeakParams) -> f64 {
    let total: f64 = smoothed
        .iter()
        .map(|(s, real)| {
            let d = detect_peaks(s.values(), params).len() as f64;
            1.0 - (d - f64::from(*real)).abs() / f64::from(*real)
        })
        .sum();
    total / smoothed.len() as f64
}

/// Peak parameters maximising mean [`count_accuracy`] over `segments`.
///
/// Cells are evaluated in parallel but reduced in scan order, so the first
/// maximum in (threshold, distance) order wins exactly as a sequential scan.
pub fn grid_search_peak_params(
    segments: &[ExerciseSegment],
    source: CountSource,
    cfg: &CountConfig,
) -> Result<GridChoice, CountError> {
    if segments.is_empty() {
        return Err(CountError::NoSegments);
    }
    let smoothed: Vec<(Series, u32)> = segments
        .iter()
        .map(|s| Ok((smoothed_source(s, source, cfg)?, s.true_count)))
        .collect::<Result<_, CountError>>()?;
    let grid = cfg.peak_grid();
    if grid.is_empty() {
        return Err(CountError::EmptyGrid);
    }
    let scores: Vec<f64> = grid.par_iter().map(|p| mean_accuracy_for(&smoothed, p)).collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(GridChoice { params: grid[best], mean_accuracy: scores[best] })
}

/// Counting outcome for one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub session: SessionRef,
    pub activity: ActivityLabel,
    pub start: usize,
    pub len: usize,
    pub result: CountResult,
    /// Peak parameters used for acc, gyro and hbc.
    pub params: [PeakParams; 3],
}

fn count_with(
    seg: &ExerciseSegment,
    cfg: &CountConfig,
    params: &[PeakParams; 3],
) -> Result<SegmentOutcome, CountError> {
    let acc = count_source(seg, CountSource::Acc, cfg, &params[0])?;
    let gyro = count_source(seg, CountSource::Gyro, cfg, &params[1])?;
    let hbc = count_source(seg, CountSource::Hbc, cfg, &params[2])?;
    Ok(SegmentOutcome {
        session: seg.session,
        activity: seg.activity,
        start: seg.start,
        len: seg.len(),
        result: CountResult::from_counts(seg.true_count, acc, gyro, hbc)?,
        params: *params,
    })
}

fn search_all(segments: &[ExerciseSegment], cfg: &CountConfig) -> Result<[PeakParams; 3], CountError> {
    Ok([
        grid_search_peak_params(segments, CountSource::Acc, cfg)?.params,
        grid_search_peak_params(segments, CountSource::Gyro, cfg)?.params,
        grid_search_peak_params(segments, CountSource::Hbc, cfg)?.params,
    ])
}

/// Counts every segment, with per-source peak parameters from `mode`.
/// Outcomes keep the input order.
pub fn evaluate_counting(
    segments: &[ExerciseSegment],
    cfg: &CountConfig,
    mode: GridMode,
) -> Result<Vec<SegmentOutcome>, CountError> {
    if segments.is_empty() {
        return Err(CountError::NoSegments);
    }
    match mode {
        GridMode::UpperBound => {
            let params = search_all(segments, cfg)?;
            segments.iter().map(|s| count_with(s, cfg, &params)).collect()
        }
        GridMode::Louo => {
            let mut subjects: Vec<u32> = segments.iter().map(|s| s.session.subject_id).collect();
            subjects.sort_unstable();
            subjects.dedup();
            if subjects.len() < 2 {
                return Err(CountError::TooFewSubjects(subjects.len()));
            }
            let mut per_subject = BTreeMap::new();
            for &subject in &subjects {
                let train: Vec<ExerciseSegment> =
                    segments.iter().filter(|s| s.session.subject_id != subject).cloned().collect();
                per_subject.insert(subject, search_all(&train, cfg)?);
            }
            segments.iter().map(|s| count_with(s, cfg, &per_subject[&s.session.subject_id])).collect()
        }
    }
}

/// Mean and standard deviation per source, optionally per activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub n_segments: usize,
    pub mean: SourceAccuracies,
    pub std: SourceAccuracies,
}

impl AccuracySummary {
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a CountResult>) -> Option<Self> {
        let rows: Vec<[f64; 5]> = results.into_iter().map(|r| r.accuracy.as_array()).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 5];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 5];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let pack = |a: [f64; 5]| SourceAccuracies { acc: a[0], gyro: a[1], hbc: a[2], imu: a[3], combined: a[4] };
        Some(Self { n_segments: rows.len(), mean: pack(mean), std: pack(var.map(f64::sqrt)) })
    }
}

pub fn summarize_by_activity(outcomes: &[SegmentOutcome]) -> BTreeMap<ActivityLabel, AccuracySummary> {
    let mut groups: BTreeMap<ActivityLabel, Vec<&CountResult>> = BTreeMap::new();
    for o in outcomes {
        groups.entry(o.activity).or_default().push(&o.result);
    }
    groups
        .into_iter()
        .filter_map(|(a, rs)| AccuracySummary::from_results(rs).map(|s| (a, s)))
        .collect()
}
