//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,2,4` runs a subset. Criteria 10-13 need a dataset in the
//! canonical layout and read its directory from `GYMSENSE_DATASET`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gymsense_core::counting::{
    count_accuracy, evaluate_counting, extract_segments, fuse_closest_two, fuse_imu, AccuracySummary, GridMode,
};
use gymsense_core::dataio::{load_dataset, make_louo_folds, Dataset, SessionMeta, SessionSchema, WindowParams, N_CHANNELS};
use gymsense_core::evaluate::{rerun_stability, run_auth, run_louo, write_report_bundle};
use gymsense_core::nn::{attention_weights, forward, ops, ForwardCtx, LayerSpec, Padding, ParamStore};
use gymsense_core::signal::detect_peaks;
use gymsense_core::synth::{
    activity_profile, add_noise_snr, generate_dataset, subject_signature, synthesize_session, DatasetConfig,
    FrontEndModel, MotionScript, MotionSegment, NoiseLevel,
};
use gymsense_core::{
    ActivityLabel, CountConfig, EvalReport, ExerciseSegment, ModelConfig, Network, PeakParams, Position,
    SignalSource, Tensor, TrainSpec, WearingConfig, WindowInstance,
};

type Outcome = Result<String, String>;

enum Status {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-7 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Worst relative error of d⟨r, layer(x)⟩ over the input and every parameter.
/// The probe loss is evaluated in plain f64 from the forward output.
fn gradient_error(spec: &LayerSpec, shape: &[usize], seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for p in spec.param_specs(shape).map_err(|e| e.to_string())? {
        let n = p.shape.iter().product();
        store.insert(format!("p.{}", p.name), &p.shape, uniform(n, &mut rng)).map_err(|e| e.to_string())?;
    }
    let x0 = uniform(shape.iter().product(), &mut rng);
    let out_len: usize = spec.output_shape(shape).map_err(|e| e.to_string())?.iter().product();
    let r = uniform(out_len, &mut rng);
    let ctx_seed = seed.wrapping_mul(31).wrapping_add(7);

    let probe = |store: &ParamStore, x: &[f64]| -> f64 {
        let bound = store.bind(false);
        let xt = Tensor::new(x.to_vec(), shape).unwrap();
        let y = forward(spec, &bound, "p", &xt, &mut ForwardCtx::train(ctx_seed)).unwrap();
        y.data().iter().zip(&r).map(|(a, b)| a * b).sum()
    };

    let bound = store.bind(true);
    let xt = Tensor::param(x0.clone(), shape).unwrap();
    let y = forward(spec, &bound, "p", &xt, &mut ForwardCtx::train(ctx_seed)).map_err(|e| e.to_string())?;
    let loss = ops::sum(&ops::mul(&y, &Tensor::new(r.clone(), y.shape()).unwrap()).unwrap());
    loss.backward().map_err(|e| e.to_string())?;
    let gx = xt.grad().ok_or("input received no gradient")?;
    let gp = bound.grads();

    let mut numeric = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let (mut up, mut down) = (x0.clone(), x0.clone());
        up[i] += FD_STEP;
        down[i] -= FD_STEP;
        numeric.push((probe(&store, &up) - probe(&store, &down)) / (2.0 * FD_STEP));
    }
    let mut worst = relative_error(&gx, &numeric);

    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let analytic = gp.get(&name).ok_or_else(|| format!("{name} received no gradient"))?;
        let n = store.get(&name).unwrap().data.len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let (mut up, mut down) = (store.clone(), store.clone());
            up.get_mut(&name).unwrap().data[i] += FD_STEP;
            down.get_mut(&name).unwrap().data[i] -= FD_STEP;
            numeric.push((probe(&up, &x0) - probe(&down, &x0)) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(analytic, &numeric));
    }
    Ok(worst)
}

/// A random layer of the given kind together with a compatible input shape.
fn random_case(kind: usize, rng: &mut ChaCha8Rng) -> (LayerSpec, Vec<usize>) {
    let mut r = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    match kind {
        0 => {
            let kernel = (r(1, 3), r(1, 4));
            let spec = LayerSpec::Conv2d { out_maps: r(1, 3), kernel, padding: Padding::Same };
            (spec, vec![r(1, 2), r(1, 3), r(1, 4), r(2, 7)])
        }
        1 => {
            let kernel = (r(1, 3), r(1, 3));
            let shape = vec![r(1, 2), r(1, 3), kernel.0 + r(0, 2), kernel.1 + r(0, 3)];
            (LayerSpec::Conv2d { out_maps: r(1, 3), kernel, padding: Padding::Valid }, shape)
        }
        2 => {
            let kernel = (r(1, 4), r(1, 2));
            let shape = vec![r(1, 2), r(1, 3), kernel.0 + r(0, 2), kernel.1 + r(0, 3)];
            (LayerSpec::DepthwiseConv2d { kernel, depth_multiplier: r(1, 2) }, shape)
        }
        3 => (LayerSpec::LayerNorm { axes: vec![1, 2] }, vec![r(1, 2), r(1, 4), r(2, 4), r(1, 4)]),
        4 => (LayerSpec::LayerNorm { axes: vec![2] }, vec![r(1, 3), r(1, 3), r(2, 6)]),
        5 => {
            let rank = r(1, 4);
            (LayerSpec::Elu, (0..rank).map(|_| r(1, 4)).collect())
        }
        6 => {
            let pool = (r(1, 2), r(1, 3));
            (LayerSpec::AvgPool2d { pool }, vec![r(1, 2), r(1, 3), pool.0 * r(1, 3), pool.1 * r(1, 3)])
        }
        7 => {
            let rate = f64::from(r(1, 6) as u32) / 10.0;
            (LayerSpec::Dropout { rate }, vec![r(1, 3), r(2, 5), r(1, 3)])
        }
        8 => (LayerSpec::Dense { out_dim: r(1, 4) }, vec![r(1, 3), r(1, 3), r(1, 5)]),
        9 => {
            let heads = r(1, 2);
            let model_dim = heads * r(1, 3);
            (LayerSpec::MultiHeadSelfAttention { heads, model_dim }, vec![r(1, 2), r(1, 4), model_dim])
        }
        10 => {
            let spec = LayerSpec::DilatedConv1d { filters: r(1, 3), kernel: r(1, 3), dilation: r(1, 3) };
            (spec, vec![r(1, 2), r(1, 8), r(1, 3)])
        }
        _ => (LayerSpec::Softmax, vec![r(1, 3), r(1, 2), r(2, 5)]),
    }
}

fn criterion_gradients() -> Outcome {
    const KINDS: usize = 12;
    const SHAPES: usize = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AAD);
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    for kind in 0..KINDS {
        for s in 0..SHAPES {
            let (spec, shape) = random_case(kind, &mut rng);
            let e = gradient_error(&spec, &shape, (kind * SHAPES + s) as u64)?;
            if e > worst.0 {
                worst = (e, format!("{spec:?} on {shape:?}"));
            }
            if !(e < 1e-4) {
                failures.push(format!("{spec:?} on {shape:?}: {e:e}"));
            }
        }
    }
    let detail = format!("{} layer/shape pairs, worst relative error {:.2e} ({})", KINDS * SHAPES, worst.0, worst.1);
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; failing: {}", failures.join("; ")))
    }
}

// ---------------------------------------------------------------- 2

/// Repeatedly keeps the highest remaining candidate (lowest index on ties)
/// and discards every candidate within `min_distance` of it.
fn peaks_oracle(y: &[f64], threshold: f64, min_distance: usize) -> Vec<usize> {
    if y.len() < 3 {
        return Vec::new();
    }
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = threshold * (hi - lo) + lo;
    let mut candidates: Vec<usize> =
        (1..y.len() - 1).filter(|&i| y[i] > y[i - 1] && y[i] > y[i + 1] && y[i] > level).collect();
    let mut kept = Vec::new();
    while !candidates.is_empty() {
        let mut best = candidates[0];
        for &c in &candidates {
            if y[c] > y[best] {
                best = c;
            }
        }
        kept.push(best);
        candidates.retain(|&c| c.abs_diff(best) > min_distance);
    }
    kept.sort_unstable();
    kept
}

fn criterion_peak_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9EA4);
    let mut mismatches = Vec::new();
    let mut total_peaks = 0;
    for case in 0..1000 {
        let n = rng.random_range(0..200);
        let y: Vec<f64> = match case % 3 {
            0 => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            // Small integers: many ties and plateaus.
            1 => (0..n).map(|_| f64::from(rng.random_range(0..4u8))).collect(),
            _ => {
                let f = rng.random_range(0.01..0.3);
                (0..n).map(|i| (i as f64 * f).sin() + rng.random_range(-0.2..0.2)).collect()
            }
        };
        let threshold = rng.random_range(0.0..=1.0);
        let min_distance = rng.random_range(1..=20);
        let params = PeakParams::new(threshold, min_distance).unwrap();
        let got = detect_peaks(&y, &params);
        let want = peaks_oracle(&y, threshold, min_distance);
        total_peaks += want.len();
        if got != want {
            mismatches.push(case);
        }
    }
    check(
        mismatches.is_empty(),
        format!("1000 series, {total_peaks} oracle peaks, {} mismatches {mismatches:?}", mismatches.len()),
    )
}

// ---------------------------------------------------------------- 3

const COUNT_FREQS: [(f64, ActivityLabel); 4] = [
    (0.3, ActivityLabel::Squat),
    (0.5, ActivityLabel::Armcurl),
    (1.0, ActivityLabel::Stairsclimber),
    (2.0, ActivityLabel::Running),
];

/// One workout segment per subject signature at a fixed repetition frequency.
fn counting_segments(freq: f64, activity: ActivityLabel) -> Vec<ExerciseSegment> {
    let (_, amplitude) = activity_profile(activity).unwrap();
    let mut segments = Vec::new();
    for subject in 1..=5u32 {
        let mut signature = subject_signature(subject, Position::Wrist, 11);
        signature.freq_scale = 1.0;
        let script = MotionScript {
            segments: vec![
                MotionSegment::rest(3.0, NoiseLevel::NONE),
                MotionSegment {
                    activity,
                    duration_s: 12.0 / freq,
                    repetition_freq_hz: freq,
                    amplitude,
                    noise: NoiseLevel::NONE,
                },
                MotionSegment::rest(3.0, NoiseLevel::NONE),
            ],
            signature,
        };
        let fe = FrontEndModel::with_time_constant(140.0 + 45.0 * f64::from(subject), 0.1);
        let meta = SessionMeta {
            subject_id: subject,
            day: 1,
            position: Position::Wrist,
            wearing: WearingConfig::for_day(1).unwrap(),
            synthetic: true,
        };
        let (rec, counts) = synthesize_session(&script, &fe, meta, u64::from(subject)).unwrap();
        segments.extend(extract_segments(&rec, &counts).unwrap());
    }
    segments
}

fn with_noise(seg: &ExerciseSegment, snr_db: f64, seed: u64) -> ExerciseSegment {
    let mut frames = seg.frames.clone();
    for ch in 0..N_CHANNELS {
        let clean: Vec<f64> = frames.iter().map(|f| f.channels()[ch]).collect();
        let noisy = add_noise_snr(&clean, snr_db, seed * 16 + ch as u64);
        for (f, v) in frames.iter_mut().zip(noisy) {
            match ch {
                0 => f.hbc = v,
                1..=3 => f.acc[ch - 1] = v,
                _ => f.gyro[ch - 4] = v,
            }
        }
    }
    ExerciseSegment::new(seg.activity, frames, seg.true_count, seg.session, seg.start).unwrap()
}

fn criterion_counting_round_trip() -> Outcome {
    let cfg = CountConfig::default();
    let mut inexact = Vec::new();
    let mut noisy_results = Vec::new();
    let mut per_freq = String::new();
    for (i, &(freq, activity)) in COUNT_FREQS.iter().enumerate() {
        let clean = counting_segments(freq, activity);
        for o in evaluate_counting(&clean, &cfg, GridMode::UpperBound).map_err(|e| e.to_string())? {
            let a = o.result.accuracy;
            if a.acc != 1.0 || a.gyro != 1.0 || a.hbc != 1.0 {
                inexact.push(format!("{freq} Hz S{}: acc {} gyro {} hbc {}", o.session.subject_id, a.acc, a.gyro, a.hbc));
            }
        }
        let noisy: Vec<ExerciseSegment> =
            clean.iter().enumerate().map(|(j, s)| with_noise(s, 10.0, (i * 100 + j) as u64)).collect();
        let outcomes = evaluate_counting(&noisy, &cfg, GridMode::UpperBound).map_err(|e| e.to_string())?;
        let s = AccuracySummary::from_results(outcomes.iter().map(|o| &o.result)).unwrap();
        let _ = write!(per_freq, " {freq}Hz {:.3}/{:.3}/{:.3}", s.mean.acc, s.mean.gyro, s.mean.hbc);
        noisy_results.extend(outcomes.into_iter().map(|o| o.result));
    }
    let s = AccuracySummary::from_results(&noisy_results).unwrap();
    let worst = s.mean.acc.min(s.mean.gyro).min(s.mean.hbc);
    let detail = format!(
        "noiseless: {} inexact of {}; 10 dB mean acc {:.3} gyro {:.3} hbc {:.3} (per frequency{per_freq})",
        inexact.len(),
        noisy_results.len(),
        s.mean.acc,
        s.mean.gyro,
        s.mean.hbc
    );
    if !inexact.is_empty() {
        return Err(format!("{detail}: {}", inexact.join("; ")));
    }
    check(worst >= 0.95, detail)
}

// ---------------------------------------------------------------- 4

fn criterion_formulas() -> Outcome {
    let mut wrong = Vec::new();
    for (detected, real, want) in [(30.0, 30, 1.0), (27.0, 30, 0.9), (33.0, 30, 0.9)] {
        let got = count_accuracy(detected, real).map_err(|e| e.to_string())?;
        if got.to_bits() != f64::to_bits(want) {
            wrong.push(format!("count_accuracy({detected}, {real}) = {got:?}"));
        }
    }
    for (a, g, want) in [(10, 12, 11.0), (10, 10, 10.0), (0, 30, 15.0)] {
        let got = fuse_imu(a, g);
        if got.to_bits() != f64::to_bits(want) {
            wrong.push(format!("fuse_imu({a}, {g}) = {got:?}"));
        }
    }
    for (a, g, h, want) in [(10, 12, 20, 11.0), (10, 10, 10, 10.0), (10, 14, 12, 11.0)] {
        let got = fuse_closest_two(a, g, h);
        if got.to_bits() != f64::to_bits(want) {
            wrong.push(format!("fuse_closest_two({a}, {g}, {h}) = {got:?}"));
        }
    }
    check(wrong.is_empty(), if wrong.is_empty() { "9 examples bit-exact".into() } else { wrong.join("; ") })
}

// ---------------------------------------------------------------- 5, 6

fn synth_dataset(cfg: &DatasetConfig) -> Result<(tempfile::TempDir, Dataset), String> {
    let dir = tempdir();
    generate_dataset(cfg, dir.path()).map_err(|e| e.to_string())?;
    let ds = load_dataset(dir.path(), &SessionSchema::canonical(), None).map_err(|e| e.to_string())?;
    Ok((dir, ds))
}

fn desk_spec(seed: u64) -> TrainSpec {
    TrainSpec { max_epochs: 100, patience: 99, batch_size: 16, seed, ..TrainSpec::default() }
}

fn fold_line(r: &EvalReport) -> String {
    r.folds.iter().map(|f| format!("{}:{:.3}", f.held_out, f.metrics.accuracy)).collect::<Vec<_>>().join(" ")
}

struct Shared {
    reports: Vec<(String, EvalReport)>,
    windows: Vec<Vec<WindowInstance>>,
}

fn criterion_recognition(shared: &mut Shared) -> Outcome {
    let acts = vec![ActivityLabel::Squat, ActivityLabel::Armcurl, ActivityLabel::Stairsclimber, ActivityLabel::Running];
    let cfg = DatasetConfig::new(3, 1, acts, 1);
    let (_dir, ds) = synth_dataset(&cfg)?;
    let windows = ds.windows(Position::Wrist, WindowParams::default());
    let start = Instant::now();
    let report = run_louo(&windows, &ModelConfig::recognition(SignalSource::Combined), &desk_spec(0))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let acc = report.pooled.accuracy;
    let detail = format!(
        "{} windows, pooled accuracy {acc:.4} (folds {}), training {:.0} s",
        windows.len(),
        fold_line(&report),
        elapsed.as_secs_f64()
    );
    shared.reports.push(("recognition".into(), report));
    shared.windows.push(windows);
    check(acc >= 0.95 && elapsed < Duration::from_secs(15 * 60), detail)
}

fn criterion_authentication(shared: &mut Shared) -> Outcome {
    let mut cfg = DatasetConfig::new(4, 3, vec![ActivityLabel::Running], 2);
    cfg.reps = 60;
    cfg.rest_s = 5.0;
    let (_dir, ds) = synth_dataset(&cfg)?;
    let windows = ds.windows(Position::Wrist, WindowParams::default());
    let report = run_auth(&windows, ActivityLabel::Running, &ModelConfig::authentication(SignalSource::Combined), &desk_spec(0))
        .map_err(|e| e.to_string())?;
    let acc = report.pooled.accuracy;
    let detail = format!(
        "{} Running windows, day-held-out accuracy {acc:.4} (days {})",
        report.folds.iter().map(|f| f.n_test).sum::<usize>(),
        fold_line(&report)
    );
    shared.reports.push(("authentication".into(), report));
    check(acc >= 0.95, detail)
}

// ---------------------------------------------------------------- 7

/// Train-side windows whose subject is the fold's held-out subject.
fn leaked_windows(windows: &[WindowInstance]) -> Result<(usize, usize), String> {
    let plan = make_louo_folds(windows).map_err(|e| e.to_string())?;
    let mut leaked = 0;
    for fold in &plan.folds {
        let (train, test) = fold.partition(windows, |w| w.subject_id());
        let held: BTreeSet<u32> = test.iter().map(|&i| windows[i].subject_id()).collect();
        if held.len() > 1 || held.iter().any(|&s| s != fold.test_subject) {
            leaked += test.len();
        }
        leaked += train.iter().filter(|&&i| windows[i].subject_id() == fold.test_subject).count();
        if train.len() + test.len() != windows.len() {
            return Err(format!("fold {} drops windows", fold.test_subject));
        }
    }
    Ok((plan.folds.len(), leaked))
}

fn criterion_leakage(shared: &mut Shared) -> Outcome {
    if shared.windows.is_empty() {
        let mut cfg = DatasetConfig::new(4, 2, vec![ActivityLabel::Squat, ActivityLabel::Running], 5);
        cfg.sets = 1;
        shared.windows.push(synth_dataset(&cfg)?.1.windows(Position::Wrist, WindowParams::default()));
    }
    let mut folds = 0;
    let mut leaked = 0;
    for w in &shared.windows {
        let (f, l) = leaked_windows(w)?;
        folds += f;
        leaked += l;
    }
    let reported: usize = shared.reports.iter().map(|(_, r)| r.leakage_windows).sum();
    check(
        leaked == 0 && reported == 0,
        format!(
            "independent scan over {folds} folds: {leaked} leaked windows; {} run reports: {reported} leaked windows",
            shared.reports.len()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn seeded_run(out: &Path) -> Result<Vec<u8>, String> {
    let mut cfg = DatasetConfig::new(2, 1, vec![ActivityLabel::Squat, ActivityLabel::Running], 9);
    cfg.sets = 1;
    cfg.reps = 8;
    let (_dir, ds) = synth_dataset(&cfg)?;
    let windows = ds.windows(Position::Wrist, WindowParams::default());
    let spec = TrainSpec { max_epochs: 3, patience: 2, batch_size: 32, seed: 4, ..TrainSpec::default() };
    let report = run_louo(&windows, &ModelConfig::recognition(SignalSource::Imu), &spec).map_err(|e| e.to_string())?;
    write_report_bundle(out, &[("wrist_imu".into(), report)]).map_err(|e| e.to_string())?;
    std::fs::read(out.join("report.json")).map_err(|e| e.to_string())
}

fn criterion_determinism() -> Outcome {
    let (a, b) = (tempdir(), tempdir());
    let (ra, rb) = (seeded_run(a.path())?, seeded_run(b.path())?);
    check(ra == rb, format!("report.json {} bytes, identical: {}", ra.len(), ra == rb))
}

// ---------------------------------------------------------------- 9

fn worst_row_error(values: &[f64], row: usize) -> f64 {
    values.chunks(row).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

fn criterion_shapes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5AFE);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, c) = (rng.random_range(1..=8), rng.random_range(2..=16));
        let scale = rng.random_range(0.1..50.0);
        let logits: Vec<f64> = (0..n * c).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let p = ops::softmax(&Tensor::new(logits, &[n, c]).unwrap()).map_err(|e| e.to_string())?;
        worst = worst.max(worst_row_error(p.data(), c));

        let heads = rng.random_range(1..=4);
        let (n, t, d) = (rng.random_range(1..=3), rng.random_range(1..=10), heads * rng.random_range(1..=4));
        let q: Vec<f64> = (0..n * t * d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..n * t * d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(worst_row_error(&attention_weights(&q, &k, n, t, d, heads), t));
    }

    let mut shapes = Vec::new();
    let mut bad = Vec::new();
    for cfg in SignalSource::ALL
        .iter()
        .flat_map(|&s| [ModelConfig::recognition(s), ModelConfig::authentication(s)])
    {
        let net = Network::build(&cfg).map_err(|e| e.to_string())?;
        let params = net.init_params(3).map_err(|e| e.to_string())?;
        let b = 3;
        let windows: Vec<Vec<f64>> =
            (0..b).map(|_| (0..N_CHANNELS * cfg.window_len).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let refs: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
        let batch = net.batch(&refs).map_err(|e| e.to_string())?;
        let y = net.forward(&params.bind(false), &batch, &mut ForwardCtx::eval()).map_err(|e| e.to_string())?;
        let want = [b, cfg.n_classes];
        if y.shape() != want {
            bad.push(format!("{:?}/{}: {:?}", cfg.task, cfg.source.as_str(), y.shape()));
        }
        worst = worst.max(worst_row_error(y.data(), cfg.n_classes));
        shapes.push(format!("{}:{:?}", cfg.source.as_str(), y.shape()));
    }
    let detail = format!("worst |row sum − 1| {worst:.1e}; model outputs {}", shapes.join(" "));
    check(worst <= 1e-9 && bad.is_empty(), if bad.is_empty() { detail } else { format!("{detail}; wrong: {}", bad.join(", ")) })
}

// ---------------------------------------------------------------- 10-13

fn dataset_dir() -> Option<PathBuf> {
    std::env::var_os("GYMSENSE_DATASET").map(PathBuf::from)
}

fn real_dataset(position: Option<Position>) -> Result<Dataset, String> {
    let dir = dataset_dir().unwrap();
    load_dataset(&dir, &SessionSchema::canonical().with_squat_variants(), position).map_err(|e| e.to_string())
}

fn criterion_real_recognition() -> Outcome {
    let ds = real_dataset(None)?;
    let mut lines = Vec::new();
    let mut ok = true;
    for position in ds.positions() {
        let windows = ds.windows(position, WindowParams::default());
        let mut acc = [0.0; 3];
        for (i, &source) in SignalSource::ALL.iter().enumerate() {
            let r = run_louo(&windows, &ModelConfig::recognition(source), &TrainSpec::default()).map_err(|e| e.to_string())?;
            acc[i] = r.pooled.accuracy;
        }
        let (hbc, imu, combined) = (acc[0], acc[1], acc[2]);
        ok &= combined >= imu && imu >= hbc;
        if position == Position::Wrist {
            ok &= (combined - 0.944).abs() <= 0.05 && (imu - 0.936).abs() <= 0.05;
        }
        lines.push(format!("{position} hbc {hbc:.3} imu {imu:.3} combined {combined:.3}"));
    }
    check(ok, lines.join("; "))
}

fn criterion_real_counting() -> Outcome {
    let ds = real_dataset(Some(Position::Wrist))?;
    let mut segments = Vec::new();
    for s in ds.sessions_at(Position::Wrist) {
        if let Some(c) = &s.counts {
            segments.extend(extract_segments(&s.recording, c).map_err(|e| e.to_string())?);
        }
    }
    if segments.is_empty() {
        return Err("no counts sidecars at wrist".into());
    }
    let outcomes = evaluate_counting(&segments, &CountConfig::default(), GridMode::UpperBound).map_err(|e| e.to_string())?;
    let s = AccuracySummary::from_results(outcomes.iter().map(|o| &o.result)).unwrap();
    check(
        (s.mean.hbc - 0.800).abs() <= 0.05 && s.mean.hbc > s.mean.imu,
        format!("{} segments, hbc {:.3}±{:.3}, imu {:.3}±{:.3}", s.n_segments, s.mean.hbc, s.std.hbc, s.mean.imu, s.std.imu),
    )
}

fn criterion_real_authentication() -> Outcome {
    let ds = real_dataset(Some(Position::Wrist))?;
    let windows = ds.windows(Position::Wrist, WindowParams::default());
    let r = run_auth(&windows, ActivityLabel::Running, &ModelConfig::authentication(SignalSource::Combined), &TrainSpec::default())
        .map_err(|e| e.to_string())?;
    let acc = r.pooled.accuracy;
    check((0.87..=1.0).contains(&acc), format!("accuracy {acc:.4} (days {})", fold_line(&r)))
}

fn criterion_real_stability() -> Outcome {
    let ds = real_dataset(Some(Position::Wrist))?;
    let windows = ds.windows(Position::Wrist, WindowParams::default());
    let cfg = ModelConfig::recognition(SignalSource::Combined);
    let st = rerun_stability(&[0, 1, 2], |seed| run_louo(&windows, &cfg, &TrainSpec::default().with_seed(seed)))
        .map_err(|e| e.to_string())?;
    check(st.max_deviation < 0.01, format!("accuracies {:?}, max deviation {:.4}", st.accuracies, st.max_deviation))
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<BTreeSet<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let selected = |n: u32| only.as_ref().is_none_or(|set| set.contains(&n));
    let mut shared = Shared { reports: Vec::new(), windows: Vec::new() };
    let have_data = dataset_dir().is_some();

    type Criterion<'a> = (u32, &'static str, bool, Box<dyn FnMut(&mut Shared) -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "gradient correctness", false, Box::new(|_| criterion_gradients())),
        (2, "peak-detection oracle equivalence", false, Box::new(|_| criterion_peak_oracle())),
        (3, "counting round trip", false, Box::new(|_| criterion_counting_round_trip())),
        (4, "formula exactness", false, Box::new(|_| criterion_formulas())),
        (5, "synthetic end-to-end recognition", false, Box::new(criterion_recognition)),
        (6, "synthetic authentication", false, Box::new(criterion_authentication)),
        (7, "LOUO integrity", false, Box::new(criterion_leakage)),
        (8, "determinism", false, Box::new(|_| criterion_determinism())),
        (9, "shape and normalization", false, Box::new(|_| criterion_shapes())),
        (10, "dataset recognition", true, Box::new(|_| criterion_real_recognition())),
        (11, "dataset counting", true, Box::new(|_| criterion_real_counting())),
        (12, "dataset authentication", true, Box::new(|_| criterion_real_authentication())),
        (13, "dataset rerun stability", true, Box::new(|_| criterion_real_stability())),
    ];
    let limits = [(1, 120), (3, 60), (5, 15 * 60)];

    let mut failed = 0;
    for (n, name, needs_data, mut run) in criteria {
        if !selected(n) {
            continue;
        }
        let status = if needs_data && !have_data {
            Status::Skip("GYMSENSE_DATASET not set".into())
        } else {
            let start = Instant::now();
            let result = catch_unwind(AssertUnwindSafe(|| run(&mut shared)))
                .unwrap_or_else(|p| Err(format!("panicked: {}", p.downcast_ref::<String>().cloned().unwrap_or_default())));
            let secs = start.elapsed().as_secs_f64();
            let over = limits.iter().find(|(k, _)| *k == n).filter(|(_, limit)| secs > f64::from(*limit));
            match (result, over) {
                (Ok(d), None) => Status::Pass(format!("{d} [{secs:.1} s]")),
                (Ok(d), Some((_, limit))) => Status::Fail(format!("{d} [{secs:.1} s, limit {limit} s]")),
                (Err(d), _) => Status::Fail(format!("{d} [{secs:.1} s]")),
            }
        };
        match status {
            Status::Pass(d) => println!("PASS  {n:>2} {name}: {d}"),
            Status::Fail(d) => {
                failed += 1;
                println!("FAIL  {n:>2} {name}: {d}");
            }
            Status::Skip(d) => println!("SKIP  {n:>2} {name}: {d}"),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
