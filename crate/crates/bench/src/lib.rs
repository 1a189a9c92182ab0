//! Fixtures shared by the benchmarks.

use gymsense_core::synth::{ChannelAmplitude, MotionScript, MotionSegment, NoiseLevel, SubjectSignature};
use gymsense_core::ActivityLabel;

/// Deterministic pseudo-random windows of `7 × len` samples.
pub fn windows(n: usize, len: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..7 * len).map(|j| ((i * 7919 + j * 104_729) as f64 * 1e-3).sin()).collect())
        .collect()
}

/// One exercise segment of `reps` repetitions at `freq_hz`.
pub fn exercise_script(freq_hz: f64, reps: u32, noise: NoiseLevel) -> MotionScript {
    MotionScript {
        segments: vec![MotionSegment {
            activity: ActivityLabel::Squat,
            duration_s: f64::from(reps) / freq_hz,
            repetition_freq_hz: freq_hz,
            amplitude: ChannelAmplitude { capacitance_pf: 30.0, acc: [1.0, 0.5, 3.0], gyro: [0.4, 0.2, 0.8] },
            noise,
        }],
        signature: SubjectSignature::default(),
    }
}
