//! Synthetic sessions with known class structure and exact repetition counts.
//!
//! Each repetition follows the motion profile
//! `m(θ) = ½(1 − cos θ) + ¼h(1 − cos 2θ)` over one period, which starts and
//! ends at rest and has a single maximum at `θ = π` while `|h| < ½`. The IMU
//! channels are offsets plus per-axis multiples of `m`; the body capacitance is
//! `C_B = C0 − ΔC·m` (the coupling shrinks as the limb moves) and the measured body-surface potential obeys the charge
//! balance of a current-limited source charging `C_B`:
//!
//! `C_B dV/dt = IS (1 − V/VS) − V dC_B/dt`
//!
//! which relaxes towards `VS` with time constant `C_B·VS/IS` and is pushed off
//! equilibrium by capacitance changes.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    window_count, write_session, ActivityLabel, CountsSidecar, DataError, Position, SampleFrame, SegmentCount,
    SessionMeta, SessionRecording, WearingConfig, SAMPLING_RATE_HZ, WINDOW_LEN, WINDOW_STRIDE,
};
use crate::seed::derive_seed;
use crate::signal::Series;

const PF: f64 = 1e-12;
const GRAVITY: f64 = 9.81;
/// RK4 substeps per sample interval.
const SUBSTEPS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Body-potential front end: a current-limited source charging the body capacitance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontEndModel {
    /// Resting body capacitance C0 in picofarads.
    pub body_capacitance_pf: f64,
    /// VS, volts.
    pub source_potential: f64,
    /// IS, amperes.
    pub supply_current: f64,
    /// Potential at t = 0, volts.
    pub initial_potential: f64,
    /// ADC counts per volt.
    pub adc_gain: f64,
}

impl FrontEndModel {
    /// Front end with the given resting capacitance and time constant (VS = 1 V).
    pub fn with_time_constant(body_capacitance_pf: f64, time_constant: f64) -> Self {
        let source_potential = 1.0;
        Self {
            body_capacitance_pf,
            source_potential,
            supply_current: body_capacitance_pf * PF * source_potential / time_constant,
            initial_potential: source_potential,
            adc_gain: 1000.0,
        }
    }

    /// `C0·VS/IS` in seconds.
    pub fn time_constant(&self) -> f64 {
        self.body_capacitance_pf * PF * self.source_potential / self.supply_current
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(50.0..=600.0).contains(&self.body_capacitance_pf) {
            return Err(SynthError::Invalid(format!(
                "body capacitance {} pF outside [50, 600]",
                self.body_capacitance_pf
            )));
        }
        if !(self.source_potential > 0.0 && self.supply_current > 0.0 && self.adc_gain > 0.0) {
            return Err(SynthError::Invalid("source potential, supply current and ADC gain must be positive".into()));
        }
        if !self.initial_potential.is_finite() {
            return Err(SynthError::Invalid("initial potential must be finite".into()));
        }
        Ok(())
    }
}

impl Default for FrontEndModel {
    fn default() -> Self {
        Self::with_time_constant(200.0, 0.1)
    }
}

/// Peak motion amplitude per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelAmplitude {
    /// ΔC, picofarads.
    pub capacitance_pf: f64,
    /// m/s² per axis.
    pub acc: [f64; 3],
    /// rad/s per axis.
    pub gyro: [f64; 3],
}

impl ChannelAmplitude {
    pub const ZERO: Self = Self { capacitance_pf: 0.0, acc: [0.0; 3], gyro: [0.0; 3] };
}

/// Standard deviation of the additive Gaussian noise per modality.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    /// ADC counts.
    pub hbc: f64,
    pub acc: f64,
    pub gyro: f64,
}

impl NoiseLevel {
    pub const NONE: Self = Self { hbc: 0.0, acc: 0.0, gyro: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub activity: ActivityLabel,
    pub duration_s: f64,
    /// Ignored for `Null` segments, which carry no motion.
    pub repetition_freq_hz: f64,
    pub amplitude: ChannelAmplitude,
    pub noise: NoiseLevel,
}

impl MotionSegment {
    pub fn rest(duration_s: f64, noise: NoiseLevel) -> Self {
        Self {
            activity: ActivityLabel::Null,
            duration_s,
            repetition_freq_hz: 1.0,
            amplitude: ChannelAmplitude::ZERO,
            noise,
        }
    }
}

/// How one subject moves and wears the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectSignature {
    /// Multiplies every repetition frequency.
    pub freq_scale: f64,
    /// Multiplies every motion amplitude.
    pub gain: f64,
    /// Extra per-axis multipliers on acc and gyro amplitudes.
    pub axis_gain: [f64; 3],
    /// Second-harmonic weight h of the motion profile.
    pub harmonic: f64,
    /// Static acceleration (gravity in sensor axes).
    pub acc_offset: [f64; 3],
}

impl Default for SubjectSignature {
    fn default() -> Self {
        Self { freq_scale: 1.0, gain: 1.0, axis_gain: [1.0; 3], harmonic: 0.0, acc_offset: [0.0, 0.0, GRAVITY] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub segments: Vec<MotionSegment>,
    pub signature: SubjectSignature,
}

/// Sample layout of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPlan {
    pub start: usize,
    pub len: usize,
    /// Samples per repetition (even); 0 for rest.
    pub period: usize,
    pub reps: u32,
}

impl MotionScript {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.segments.is_empty() {
            return Err(SynthError::Invalid("script has no segments".into()));
        }
        let sig = &self.signature;
        if !(sig.freq_scale > 0.0 && sig.gain >= 0.0 && sig.axis_gain.iter().all(|g| *g >= 0.0)) {
            return Err(SynthError::Invalid("signature scales must be non-negative".into()));
        }
        if sig.harmonic.abs() >= 0.5 {
            return Err(SynthError::Invalid(format!("harmonic weight {} must satisfy |h| < 0.5", sig.harmonic)));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.duration_s > 0.0 && seg.duration_s.is_finite()) {
                return Err(SynthError::Invalid(format!("segment {i}: duration must be positive")));
            }
            let n = [seg.noise.hbc, seg.noise.acc, seg.noise.gyro];
            if n.iter().any(|v| !(*v >= 0.0)) {
                return Err(SynthError::Invalid(format!("segment {i}: noise levels must be non-negative")));
            }
            if seg.activity.is_workout() {
                let f = seg.repetition_freq_hz * sig.freq_scale;
                if !(f > 0.1 && f <= 5.0) {
                    return Err(SynthError::Invalid(format!("segment {i}: repetition frequency {f} Hz outside (0.1, 5]")));
                }
                let acc = self.acc_amplitude(seg);
                if dot(&acc, &sig.acc_offset) < 0.0 {
                    // keeps |acc| monotone in m
                    return Err(SynthError::Invalid(format!("segment {i}: acc amplitude opposes the static offset")));
                }
            }
        }
        Ok(())
    }

    fn acc_amplitude(&self, seg: &MotionSegment) -> [f64; 3] {
        let s = &self.signature;
        std::array::from_fn(|j| seg.amplitude.acc[j] * s.gain * s.axis_gain[j])
    }

    fn gyro_amplitude(&self, seg: &MotionSegment) -> [f64; 3] {
        let s = &self.signature;
        std::array::from_fn(|j| seg.amplitude.gyro[j] * s.gain * s.axis_gain[j])
    }

    /// Workouts last a whole, even number of samples per repetition so every
    /// repetition starts and ends at rest and peaks on a sample.
    pub fn layout(&self, fs: f64) -> Vec<SegmentPlan> {
        let mut start = 0;
        self.segments
            .iter()
            .map(|seg| {
                let plan = if seg.activity.is_workout() {
                    let f = seg.repetition_freq_hz * self.signature.freq_scale;
                    let period = 2 * ((fs / (2.0 * f)).round() as usize).max(1);
                    let reps = ((seg.duration_s * fs / period as f64).round() as u32).max(1);
                    SegmentPlan { start, len: reps as usize * period, period, reps }
                } else {
                    SegmentPlan { start, len: ((seg.duration_s * fs).round() as usize).max(1), period: 0, reps: 0 }
                };
                start += plan.len;
                plan
            })
            .collect()
    }

    /// Ground-truth repetition counts of the workout segments.
    pub fn counts(&self, fs: f64) -> CountsSidecar {
        let segments = self
            .segments
            .iter()
            .zip(self.layout(fs))
            .filter(|(seg, _)| seg.activity.is_workout())
            .map(|(seg, p)| SegmentCount { activity: seg.activity, start: p.start, end: p.start + p.len, count: p.reps })
            .collect();
        CountsSidecar { segments }
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Motion profile and its derivative with respect to θ.
fn profile(theta: f64, h: f64) -> (f64, f64) {
    let m = 0.5 * (1.0 - theta.cos()) + 0.25 * h * (1.0 - (2.0 * theta).cos());
    let dm = 0.5 * theta.sin() + 0.5 * h * (2.0 * theta).sin();
    (m, dm)
}

/// `(m, dm/dt)` at local time `t` seconds into a segment.
fn motion_at(plan: &SegmentPlan, fs: f64, h: f64, t: f64) -> (f64, f64) {
    if plan.period == 0 {
        return (0.0, 0.0);
    }
    let omega = 2.0 * std::f64::consts::PI * fs / plan.period as f64;
    let (m, dm) = profile(omega * t, h);
    (m, dm * omega)
}

fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream]))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Simulated HBC readings (`adc_gain·V` plus noise) at `fs`.
pub fn simulate_hbc(script: &MotionScript, fe: &FrontEndModel, fs: f64, seed: u64) -> Result<Series, SynthError> {
    script.validate()?;
    fe.validate()?;
    let plans = script.layout(fs);
    let h = script.signature.harmonic;
    let (vs, is) = (fe.source_potential, fe.supply_current);
    let c0 = fe.body_capacitance_pf;
    for (seg, _) in script.segments.iter().zip(&plans) {
        let swing = seg.amplitude.capacitance_pf * script.signature.gain;
        // m stays within [0, 1]
        if !(50.0..=600.0).contains(&(c0 - swing)) {
            return Err(SynthError::Invalid(format!(
                "capacitance swing {swing} pF takes C_B outside [50, 600] pF"
            )));
        }
    }

    let total: usize = plans.iter().map(|p| p.len).sum();
    let dt = 1.0 / fs / SUBSTEPS as f64;
    let mut v = fe.initial_potential;
    let mut out = Vec::with_capacity(total);
    let mut rng = noise_rng(seed, 0);
    for (seg, plan) in script.segments.iter().zip(&plans) {
        let swing = seg.amplitude.capacitance_pf * script.signature.gain * PF;
        let rhs = |t: f64, v: f64| {
            let (m, dm) = motion_at(plan, fs, h, t);
            let c = c0 * PF - swing * m;
            (is * (1.0 - v / vs) + v * swing * dm) / c
        };
        for k in 0..plan.len {
            out.push(fe.adc_gain * v + seg.noise.hbc * gaussian(&mut rng));
            let t0 = k as f64 / fs;
            for s in 0..SUBSTEPS {
                let t = t0 + s as f64 * dt;
                let k1 = rhs(t, v);
                let k2 = rhs(t + dt / 2.0, v + dt / 2.0 * k1);
                let k3 = rhs(t + dt / 2.0, v + dt / 2.0 * k2);
                let k4 = rhs(t + dt, v + dt * k3);
                v += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
    }
    Series::new(out, fs).map_err(|e| SynthError::Invalid(e.to_string()))
}

/// Simulated accelerometer and gyroscope axes, in the order ax, ay, az, gx, gy, gz.
pub fn simulate_imu(script: &MotionScript, fs: f64, seed: u64) -> Result<[Series; 6], SynthError> {
    script.validate()?;
    let plans = script.layout(fs);
    let h = script.signature.harmonic;
    let total: usize = plans.iter().map(|p| p.len).sum();
    let mut channels: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(total));
    let mut rng = noise_rng(seed, 1);
    for (seg, plan) in script.segments.iter().zip(&plans) {
        let acc = script.acc_amplitude(seg);
        let gyro = script.gyro_amplitude(seg);
        for k in 0..plan.len {
            let (m, _) = motion_at(plan, fs, h, k as f64 / fs);
            for j in 0..3 {
                let a = script.signature.acc_offset[j] + acc[j] * m + seg.noise.acc * gaussian(&mut rng);
                channels[j].push(a);
            }
            for j in 0..3 {
                channels[3 + j].push(gyro[j] * m + seg.noise.gyro * gaussian(&mut rng));
            }
        }
    }
    let mut out = channels.into_iter().map(|c| Series::new(c, fs));
    let series: [Series; 6] = std::array::from_fn(|_| out.next().unwrap().expect("finite samples"));
    Ok(series)
}

/// Adds white Gaussian noise at `snr_db` relative to the signal's variance.
pub fn add_noise_snr(values: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let power = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    values.iter().map(|v| v + std * gaussian(&mut rng)).collect()
}

/// Frames and ground truth for one session.
pub fn synthesize_session(
    script: &MotionScript,
    fe: &FrontEndModel,
    meta: SessionMeta,
    seed: u64,
) -> Result<(SessionRecording, CountsSidecar), SynthError> {
    let fs = SAMPLING_RATE_HZ as f64;
    let hbc = simulate_hbc(script, fe, fs, seed)?;
    let imu = simulate_imu(script, fs, seed)?;
    let plans = script.layout(fs);
    let mut frames = Vec::with_capacity(hbc.len());
    for (seg, plan) in script.segments.iter().zip(&plans) {
        for i in plan.start..plan.start + plan.len {
            frames.push(SampleFrame {
                timestamp: i as f64 / fs,
                hbc: hbc.values()[i],
                acc: [imu[0].values()[i], imu[1].values()[i], imu[2].values()[i]],
                gyro: [imu[3].values()[i], imu[4].values()[i], imu[5].values()[i]],
                label: seg.activity,
            });
        }
    }
    Ok((SessionRecording { meta, frames }, script.counts(fs)))
}

/// Base repetition frequency (Hz), acc and gyro amplitudes and ΔC (pF) per workout.
pub fn activity_profile(activity: ActivityLabel) -> Option<(f64, ChannelAmplitude)> {
    use ActivityLabel::*;
    let (f, acc, gyro, cap) = match activity {
        Adductor => (0.45, [1.5, 0.6, 0.8], [0.3, 1.2, 0.2], 14.0),
        Armcurl => (0.6, [3.0, 1.0, 2.0], [2.2, 0.4, 0.6], 10.0),
        Benchpress => (0.5, [0.5, 1.0, 3.0], [0.5, 0.3, 1.2], 12.0),
        Legcurl => (0.7, [2.0, 0.5, 1.0], [0.4, 1.8, 0.3], 18.0),
        Legpress => (0.35, [1.0, 2.5, 0.5], [0.8, 0.4, 1.0], 22.0),
        Riding => (1.2, [1.2, 1.2, 1.0], [1.5, 1.0, 0.5], 16.0),
        Ropeskipping => (2.2, [5.0, 2.0, 7.0], [1.0, 0.8, 2.5], 30.0),
        Running => (2.6, [6.0, 3.0, 5.0], [2.0, 2.5, 1.0], 28.0),
        Squat => (0.4, [0.8, 0.8, 4.0], [0.2, 0.4, 0.5], 35.0),
        Stairsclimber => (0.9, [2.0, 2.0, 2.5], [0.6, 0.6, 1.5], 20.0),
        Walking => (1.7, [2.5, 1.5, 3.0], [1.2, 1.5, 0.6], 15.0),
        Null => return None,
    };
    Some((f, ChannelAmplitude { capacitance_pf: cap, acc, gyro }))
}

/// Direction of gravity in sensor axes for each wearing position.
fn gravity_direction(position: Position) -> [f64; 3] {
    match position {
        Position::Wrist => [0.3, 0.2, 0.93],
        Position::Leg => [0.9, 0.1, 0.42],
        Position::Pocket => [0.1, 0.95, 0.3],
    }
}

/// Position-dependent amplitude multiplier: arm exercises register less on
/// the leg and in the pocket and vice versa.
fn position_gain(position: Position, activity: ActivityLabel) -> f64 {
    use ActivityLabel::*;
    let upper = matches!(activity, Armcurl | Benchpress);
    match (position, upper) {
        (Position::Wrist, _) => 1.0,
        (_, true) => 0.4,
        (_, false) => 1.2,
    }
}

/// Fractional part of `k·α` for a golden-ratio style α: well spread, distinct per `k`.
fn spread(k: u32, alpha: f64) -> f64 {
    (f64::from(k) * alpha).fract()
}

/// Deterministic per-subject signature. Frequency scale and gain are spread
/// over their ranges so that subjects stay distinguishable.
pub fn subject_signature(subject: u32, position: Position, seed: u64) -> SubjectSignature {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5u64, u64::from(subject)]));
    let axis_gain = std::array::from_fn(|_| rng.random_range(0.7..1.3));
    let harmonic = rng.random_range(-0.15..0.15);
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
    let g = gravity_direction(position);
    let dir: [f64; 3] = std::array::from_fn(|j| (g[j] + tilt[j]).max(0.0));
    let norm = dot(&dir, &dir).sqrt();
    SubjectSignature {
        freq_scale: 0.85 + 0.3 * spread(subject, 0.618_033_988_7),
        gain: 0.8 + 0.4 * spread(subject, 0.381_966_011_3),
        axis_gain,
        harmonic,
        acc_offset: std::array::from_fn(|j| GRAVITY * dir[j] / norm),
    }
}

fn day_signature(base: SubjectSignature, subject: u32, day: u32, seed: u64) -> SubjectSignature {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xd, u64::from(subject), u64::from(day)]));
    SubjectSignature {
        freq_scale: base.freq_scale * (1.0 + rng.random_range(-0.02..0.02)),
        gain: base.gain * (1.0 + rng.random_range(-0.03..0.03)),
        ..base
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_subjects: u32,
    pub n_days: u32,
    pub positions: Vec<Position>,
    pub activities: Vec<ActivityLabel>,
    pub sets: u32,
    /// Nominal repetitions per set.
    pub reps: u32,
    /// Null time before the first set and after every set, seconds.
    pub rest_s: f64,
    pub noise: NoiseLevel,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(n_subjects: u32, n_days: u32, activities: Vec<ActivityLabel>, seed: u64) -> Self {
        Self {
            n_subjects,
            n_days,
            positions: vec![Position::Wrist],
            activities,
            sets: 3,
            reps: 10,
            rest_s: 10.0,
            noise: NoiseLevel { hbc: 0.05, acc: 0.05, gyro: 0.02 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(2..=10).contains(&self.n_subjects) {
            return Err(SynthError::Invalid(format!("n_subjects {} outside 2..=10", self.n_subjects)));
        }
        if !(1..=5).contains(&self.n_days) {
            return Err(SynthError::Invalid(format!("n_days {} outside 1..=5", self.n_days)));
        }
        if self.positions.is_empty() {
            return Err(SynthError::Invalid("no positions".into()));
        }
        if self.activities.is_empty() || self.activities.iter().any(|a| !a.is_workout()) {
            return Err(SynthError::Invalid("activities must be a non-empty list of workouts".into()));
        }
        if self.sets == 0 || self.reps == 0 || !(self.rest_s > 0.0) {
            return Err(SynthError::Invalid("sets, reps and rest must be positive".into()));
        }
        Ok(())
    }

    /// Motion script of one session.
    pub fn script(&self, subject: u32, day: u32, position: Position) -> MotionScript {
        let signature = day_signature(subject_signature(subject, position, self.seed), subject, day, self.seed);
        let mut segments = vec![MotionSegment::rest(self.rest_s, self.noise)];
        for &activity in &self.activities {
            let (freq, amp) = activity_profile(activity).expect("validated workout");
            let g = position_gain(position, activity);
            let amplitude = ChannelAmplitude {
                capacitance_pf: amp.capacitance_pf * g,
                acc: amp.acc.map(|a| a * g),
                gyro: amp.gyro.map(|a| a * g),
            };
            for _ in 0..self.sets {
                segments.push(MotionSegment {
                    activity,
                    duration_s: f64::from(self.reps) / (freq * signature.freq_scale),
                    repetition_freq_hz: freq,
                    amplitude,
                    noise: self.noise,
                });
                segments.push(MotionSegment::rest(self.rest_s, self.noise));
            }
        }
        MotionScript { segments, signature }
    }

    /// Front end of one subject: resting capacitance spread over 120–370 pF.
    pub fn front_end(&self, subject: u32) -> FrontEndModel {
        FrontEndModel::with_time_constant(120.0 + 250.0 * spread(subject, 0.754_877_666_2), 0.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stem: String,
    pub subject_id: u32,
    pub day: u32,
    pub position: Position,
    pub frames: usize,
    pub windows: usize,
    pub counts: Vec<SegmentCount>,
}

/// `manifest.json` written next to the sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub sessions: Vec<ManifestEntry>,
    pub total_windows: usize,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn read(dir: &Path) -> Result<Self, SynthError> {
        let path = dir.join(Self::FILE_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| SynthError::Data(DataError::Metadata { path, message: e.to_string() }))
    }
}

/// Writes every (subject, day, position) session of `cfg` into `dir`
/// (canonical CSV + JSON metadata + counts sidecar) and a manifest.
/// Sessions are generated in parallel; output depends on the seed only.
pub fn generate_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<DatasetManifest, SynthError> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut jobs = Vec::new();
    for subject in 1..=cfg.n_subjects {
        for day in 1..=cfg.n_days {
            for &position in &cfg.positions {
                jobs.push((subject, day, position));
            }
        }
    }
    let sessions = jobs
        .par_iter()
        .map(|&(subject, day, position)| {
            let meta = SessionMeta {
                subject_id: subject,
                day,
                position,
                wearing: WearingConfig::for_day(day).expect("day validated"),
                synthetic: true,
            };
            let session_seed = derive_seed(cfg.seed, &[u64::from(subject), u64::from(day), position as u64]);
            let script = cfg.script(subject, day, position);
            let (rec, counts) = synthesize_session(&script, &cfg.front_end(subject), meta, session_seed)?;
            let csv: PathBuf = write_session(dir, &rec)?;
            counts.write(&CountsSidecar::path_for(&csv))?;
            Ok(ManifestEntry {
                stem: meta.file_stem(),
                subject_id: subject,
                day,
                position,
                frames: rec.frames.len(),
                windows: window_count(rec.frames.len(), WINDOW_LEN, WINDOW_STRIDE),
                counts: counts.segments,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    let manifest = DatasetManifest {
        config: cfg.clone(),
        total_windows: sessions.iter().map(|s| s.windows).sum(),
        sessions,
    };
    let path = dir.join(DatasetManifest::FILE_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| DataError::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::{count_source, extract_segments, CountConfig, CountSource};
    use crate::dataio::{load_dataset, SessionSchema};
    use crate::signal::{detect_peaks, fourier_lowpass, PeakParams};

    const FS: f64 = 20.0;

    fn single(freq: f64, duration_s: f64, noise: NoiseLevel) -> MotionScript {
        MotionScript {
            segments: vec![MotionSegment {
                activity: ActivityLabel::Squat,
                duration_s,
                repetition_freq_hz: freq,
                amplitude: ChannelAmplitude { capacitance_pf: 30.0, acc: [1.0, 0.5, 3.0], gyro: [0.4, 0.2, 0.8] },
                noise,
            }],
            signature: SubjectSignature::default(),
        }
    }

    /// Amplitude spectrum by direct DFT, independent of the FFT used in `signal`.
    fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                    re += (v - mean) * a.cos();
                    im += (v - mean) * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn relaxes_to_source_potential() {
        let mut fe = FrontEndModel::default();
        fe.initial_potential = 0.0;
        let tau = fe.time_constant();
        assert!((tau - 0.1).abs() < 1e-12);
        let mut script = single(0.5, 2.0, NoiseLevel::NONE);
        script.segments = vec![MotionSegment::rest(2.0, NoiseLevel::NONE)];
        let s = simulate_hbc(&script, &fe, FS, 1).unwrap();
        let k = (5.0 * tau * FS).round() as usize;
        let v = s.values()[k] / fe.adc_gain;
        assert!((v - fe.source_potential).abs() <= 0.01 * fe.source_potential, "v = {v}");
        // analytic first-order response at constant capacitance
        for (i, &y) in s.values().iter().enumerate().take(k + 1) {
            let expect = 1.0 - (-(i as f64) / FS / tau).exp();
            assert!((y / fe.adc_gain - expect).abs() < 1e-7);
        }
    }

    #[test]
    fn dominant_frequency_and_band_limit() {
        let script = single(0.5, 60.0, NoiseLevel::NONE);
        let fe = FrontEndModel::default();
        for values in [
            simulate_hbc(&script, &fe, FS, 3).unwrap().into_values(),
            simulate_imu(&script, FS, 3).unwrap()[2].values().to_vec(),
        ] {
            assert_eq!(values.len(), 1200);
            let mag = dft_magnitudes(&values);
            let peak = (1..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
            assert!((peak as f64 * FS / 1200.0 - 0.5).abs() < 1e-12);
            let above = (0..mag.len()).filter(|&k| k as f64 * FS / 1200.0 > 5.0).map(|k| mag[k]).fold(0.0, f64::max);
            let db = 20.0 * (above / mag[peak]).log10();
            assert!(db < -60.0, "content above 5 Hz at {db:.1} dB");
        }
    }

    #[test]
    fn acc_magnitude_has_one_peak_per_repetition() {
        let script = single(0.5, 60.0, NoiseLevel::NONE);
        let imu = simulate_imu(&script, FS, 0).unwrap();
        let mag = crate::signal::magnitude(&imu[0], &imu[1], &imu[2]).unwrap();
        let smooth = fourier_lowpass(&mag, 2.5).unwrap();
        let peaks = detect_peaks(smooth.values(), &PeakParams::new(0.5, 10).unwrap());
        assert_eq!(peaks.len(), 30);
        assert_eq!(script.counts(FS).segments[0].count, 30);
    }

    #[test]
    fn rest_is_flat() {
        let mut script = single(0.5, 60.0, NoiseLevel::NONE);
        script.segments = vec![MotionSegment::rest(60.0, NoiseLevel::NONE)];
        let imu = simulate_imu(&script, FS, 0).unwrap();
        let mag = crate::signal::magnitude(&imu[0], &imu[1], &imu[2]).unwrap();
        let smooth = fourier_lowpass(&mag, 2.5).unwrap();
        let (lo, hi) = smooth.values().iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        // nothing beyond rounding residue to count
        assert!(hi - lo < 1e-9 * hi);
    }

    #[test]
    fn deterministic_under_seed() {
        let script = single(1.0, 20.0, NoiseLevel { hbc: 2.0, acc: 0.1, gyro: 0.1 });
        let fe = FrontEndModel::default();
        let a = simulate_hbc(&script, &fe, FS, 9).unwrap();
        let b = simulate_hbc(&script, &fe, FS, 9).unwrap();
        let c = simulate_hbc(&script, &fe, FS, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(simulate_imu(&script, FS, 9).unwrap(), simulate_imu(&script, FS, 9).unwrap());
    }

    #[test]
    fn snr_noise_power() {
        let x: Vec<f64> = (0..20000).map(|i| (i as f64 * 0.1).sin()).collect();
        let y = add_noise_snr(&x, 10.0, 4);
        let noise: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
        let snr = 10.0 * (0.5 / noise).log10();
        assert!((snr - 10.0).abs() < 0.2, "snr {snr}");
    }

    #[test]
    fn rejects_invalid_scripts() {
        assert!(single(0.05, 10.0, NoiseLevel::NONE).validate().is_err());
        assert!(single(6.0, 10.0, NoiseLevel::NONE).validate().is_err());
        assert!(single(1.0, 0.0, NoiseLevel::NONE).validate().is_err());
        let mut s = single(1.0, 10.0, NoiseLevel::NONE);
        s.signature.harmonic = 0.6;
        assert!(s.validate().is_err());
        let fe = FrontEndModel::with_time_constant(40.0, 0.1);
        assert!(simulate_hbc(&single(1.0, 10.0, NoiseLevel::NONE), &fe, FS, 0).is_err());
        let fe = FrontEndModel::with_time_constant(60.0, 0.1);
        assert!(simulate_hbc(&single(1.0, 10.0, NoiseLevel::NONE), &fe, FS, 0).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let acts = vec![ActivityLabel::Squat, ActivityLabel::Armcurl, ActivityLabel::Running];
        let mut cfg = DatasetConfig::new(2, 1, acts.clone(), 11);
        cfg.noise = NoiseLevel::NONE;
        cfg.sets = 1;
        let manifest = generate_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.sessions.len(), 2);
        let ds = load_dataset(dir.path(), &SessionSchema::canonical(), None).unwrap();
        assert_eq!(ds.sessions.len(), 2);
        assert_eq!(ds.warning_count(), 0);
        let windows: usize = ds.sessions.iter().map(|s| crate::dataio::window_session(&s.recording, Default::default()).len()).sum();
        assert_eq!(windows, manifest.total_windows);
        for (s, entry) in ds.sessions.iter().zip(&manifest.sessions) {
            assert_eq!(s.recording.frames.len(), entry.frames);
            assert_eq!(entry.windows, (entry.frames - 80) / 40 + 1);
            let counts = s.counts.as_ref().unwrap();
            assert_eq!(counts.segments.len(), 3);
            for seg in &counts.segments {
                assert!(s.recording.frames[seg.start..seg.end].iter().all(|f| f.label == seg.activity));
            }
            let labelled = s.recording.frames.iter().filter(|f| f.label.is_workout()).count();
            assert_eq!(labelled, counts.segments.iter().map(|c| c.end - c.start).sum::<usize>());
            // noiseless: every source recovers every count
            let cfg = CountConfig::default().with_single_cell(0.5, 0.25);
            for seg in extract_segments(&s.recording, counts).unwrap() {
                for src in CountSource::ALL {
                    let c = count_source(&seg, src, &cfg, &cfg.peak_grid()[0]).unwrap() as u32;
                    assert_eq!(c, seg.true_count, "{src:?}");
                }
            }
        }
    }

    #[test]
    fn dataset_is_reproducible() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut cfg = DatasetConfig::new(2, 1, vec![ActivityLabel::Legcurl], 5);
        cfg.sets = 1;
        generate_dataset(&cfg, a.path()).unwrap();
        generate_dataset(&cfg, b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 7);
        for n in names {
            assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
        }
        assert!(generate_dataset(&DatasetConfig::new(1, 1, vec![ActivityLabel::Legcurl], 5), a.path()).is_err());
    }

    /// Log band powers of each IMU axis over 0–0.75, 0.75–1.5, 1.5–3 and 3–10 Hz.
    fn bandpower_features(w: &crate::dataio::WindowInstance) -> Vec<f64> {
        let mut f = Vec::new();
        for c in 1..7 {
            let mag = dft_magnitudes(w.channel(c));
            let hz = |k: usize| k as f64 * FS / w.len as f64;
            for (lo, hi) in [(0.0, 0.75), (0.75, 1.5), (1.5, 3.0), (3.0, 10.1)] {
                let p: f64 = (1..mag.len()).filter(|&k| hz(k) > lo && hz(k) <= hi).map(|k| mag[k] * mag[k]).sum();
                f.push((1.0 + p).ln());
            }
        }
        f
    }

    #[test]
    fn activities_separable_by_nearest_centroid() {
        let dir = tempfile::tempdir().unwrap();
        let acts = vec![ActivityLabel::Squat, ActivityLabel::Armcurl, ActivityLabel::Stairsclimber, ActivityLabel::Running];
        let mut cfg = DatasetConfig::new(3, 1, acts, 2);
        cfg.sets = 2;
        generate_dataset(&cfg, dir.path()).unwrap();
        let ds = load_dataset(dir.path(), &SessionSchema::canonical(), None).unwrap();
        let params = crate::dataio::WindowParams { rule: crate::dataio::LabelRule::Pure, ..Default::default() };
        let windows: Vec<_> = ds.windows(Position::Wrist, params).into_iter().filter(|w| w.label.is_workout()).collect();
        let (train, test): (Vec<_>, Vec<_>) = windows.iter().partition(|w| w.subject_id() != 3);
        let mut centroids: std::collections::BTreeMap<ActivityLabel, (Vec<f64>, f64)> = Default::default();
        for w in &train {
            let f = bandpower_features(w);
            let e = centroids.entry(w.label).or_insert_with(|| (vec![0.0; f.len()], 0.0));
            e.0.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
            e.1 += 1.0;
        }
        let correct = test
            .iter()
            .filter(|w| {
                let f = bandpower_features(w);
                let best = centroids
                    .iter()
                    .map(|(l, (s, n))| (l, s.iter().zip(&f).map(|(a, b)| (a / n - b).powi(2)).sum::<f64>()))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap();
                *best.0 == w.label
            })
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc >= 0.99, "centroid accuracy {acc} on {} windows", test.len());
    }
}
