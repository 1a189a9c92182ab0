//! Frequency-domain smoothing and peak detection.

use std::cmp::Ordering;

use realfft::num_complex::Complex;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SignalError {
    #[error("series is empty")]
    Empty,
    #[error("series contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("sampling rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("series lengths differ: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("sampling rates differ: {0:?}")]
    RateMismatch(Vec<f64>),
    #[error("cutoff {cutoff} Hz outside (0, {nyquist}] Hz")]
    InvalidCutoff { cutoff: f64, nyquist: f64 },
    #[error("invalid peak parameters: {0}")]
    InvalidPeakParams(String),
}

/// A uniformly sampled real sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    values: Vec<f64>,
    sampling_rate: f64,
}

impl Series {
    pub fn new(values: Vec<f64>, sampling_rate: f64) -> Result<Self, SignalError> {
        if values.is_empty() {
            return Err(SignalError::Empty);
        }
        if !(sampling_rate > 0.0 && sampling_rate.is_finite()) {
            return Err(SignalError::InvalidRate(sampling_rate));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self { values, sampling_rate })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Euclidean norm of three axes, sample by sample.
pub fn magnitude(x: &Series, y: &Series, z: &Series) -> Result<Series, SignalError> {
    if x.len() != y.len() || x.len() != z.len() {
        return Err(SignalError::LengthMismatch(vec![x.len(), y.len(), z.len()]));
    }
    if x.sampling_rate != y.sampling_rate || x.sampling_rate != z.sampling_rate {
        return Err(SignalError::RateMismatch(vec![x.sampling_rate, y.sampling_rate, z.sampling_rate]));
    }
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .zip(&z.values)
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .collect();
    Ok(Series { values, sampling_rate: x.sampling_rate })
}

/// Brick-wall low-pass: forward real DFT, zero every bin whose frequency
/// `k·fs/N` exceeds `cutoff_hz` (DC is always kept), inverse DFT.
pub fn fourier_lowpass(s: &Series, cutoff_hz: f64) -> Result<Series, SignalError> {
    let nyquist = s.sampling_rate / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz <= nyquist) {
        return Err(SignalError::InvalidCutoff { cutoff: cutoff_hz, nyquist });
    }
    let n = s.len();
    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(n);
    let c2r = planner.plan_fft_inverse(n);

    let mut input = s.values.clone();
    let mut spectrum = r2c.make_output_vec();
    r2c.process(&mut input, &mut spectrum).expect("buffer sizes come from the planner");

    let bin_hz = s.sampling_rate / n as f64;
    for (k, bin) in spectrum.iter_mut().enumerate().skip(1) {
        if k as f64 * bin_hz > cutoff_hz {
            *bin = Complex::new(0.0, 0.0);
        }
    }
    // Imaginary parts of DC and (even N) Nyquist are rounding residue for real input.
    spectrum[0].im = 0.0;
    if n % 2 == 0 {
        if let Some(last) = spectrum.last_mut() {
            last.im = 0.0;
        }
    }

    let mut output = c2r.make_output_vec();
    c2r.process(&mut spectrum, &mut output).expect("buffer sizes come from the planner");
    let scale = 1.0 / n as f64;
    output.iter_mut().for_each(|v| *v *= scale);
    Ok(Series { values: output, sampling_rate: s.sampling_rate })
}

/// Peak detection parameters, after PeakUtils' `indexes(y, thres, min_dist)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    /// Fraction of the series' range above its minimum a peak must exceed.
    pub threshold: f64,
    /// Peaks closer than or equal to this many samples to a higher peak are dropped.
    pub min_distance: usize,
}

impl PeakParams {
    pub fn new(threshold: f64, min_distance: usize) -> Result<Self, SignalError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(SignalError::InvalidPeakParams(format!("threshold {threshold} outside [0, 1]")));
        }
        if min_distance < 1 {
            return Err(SignalError::InvalidPeakParams("min_distance must be at least 1".into()));
        }
        Ok(Self { threshold, min_distance })
    }
}

/// Indices of strict local maxima above `threshold·(max−min)+min`, thinned so
/// that no two kept peaks lie within `min_distance` samples of each other.
///
/// Thinning is greedy from the highest peak down; equal heights keep the lower
/// index. Plateaus are not peaks. Output is ascending; series shorter than 3
/// samples have no peaks.
pub fn detect_peaks(y: &[f64], p: &PeakParams) -> Vec<usize> {
    if y.len() < 3 {
        return Vec::new();
    }
    let (min, max) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let level = p.threshold * (max - min) + min;
    let mut peaks: Vec<usize> =
        (1..y.len() - 1).filter(|&i| y[i] > y[i - 1] && y[i] > y[i + 1] && y[i] > level).collect();
    if peaks.len() < 2 || p.min_distance <= 1 {
        return peaks;
    }

    let mut by_height = peaks.clone();
    by_height.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut suppressed = vec![false; y.len()];
    let mut kept = Vec::with_capacity(peaks.len());
    for &peak in &by_height {
        if suppressed[peak] {
            continue;
        }
        kept.push(peak);
        let lo = peak.saturating_sub(p.min_distance);
        let hi = (peak + p.min_distance).min(y.len() - 1);
        suppressed[lo..=hi].iter_mut().for_each(|s| *s = true);
    }
    kept.sort_unstable();
    peaks.clear();
    peaks.extend(kept);
    peaks
}
