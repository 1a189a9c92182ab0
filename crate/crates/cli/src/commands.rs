use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use gymsense_core::counting::{evaluate_counting, extract_segments, summarize_by_activity, AccuracySummary, GridMode, SourceAccuracies};
use gymsense_core::dataio::{load_dataset, Dataset, SessionSchema, WindowParams};
use gymsense_core::evaluate::{fmt_sig, report_key, run_auth, run_louo, write_report_bundle};
use gymsense_core::nn::LrSchedule;
use gymsense_core::synth::{generate_dataset, DatasetConfig, NoiseLevel};
use gymsense_core::{ActivityLabel, CountConfig, EvalReport, ModelConfig, Position, SignalSource, TrainSpec};

use crate::{manifest, AuthArgs, CountArgs, DataArgs, EvalArgs, GridModeArg, IngestArgs, ReportArgs, SynthArgs, TrainArgs};

fn schema(args: &DataArgs) -> SessionSchema {
    let s = SessionSchema::canonical();
    if args.squat_variants {
        s.with_squat_variants()
    } else {
        s
    }
}

fn load(args: &DataArgs, position: Option<Position>) -> anyhow::Result<Dataset> {
    let ds = load_dataset(&args.data, &schema(args), position)
        .with_context(|| format!("loading dataset from {}", args.data.display()))?;
    for s in &ds.sessions {
        for w in &s.warnings {
            log::warn!("{}: {w}", s.csv_path.display());
        }
    }
    Ok(ds)
}

/// Creates `out`, refusing to write into the dataset directory.
fn prepare_out(out: &Path, data: Option<&Path>) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if let Some(data) = data {
        let (a, b) = (fs::canonicalize(out)?, fs::canonicalize(data)?);
        if a == b {
            bail!("--out must differ from --data; the dataset directory is never written to");
        }
    }
    Ok(())
}

fn train_spec(t: &TrainArgs) -> anyhow::Result<TrainSpec> {
    let patience = t.patience.unwrap_or_else(|| 100.min(t.epochs.saturating_sub(1)));
    let spec = TrainSpec {
        max_epochs: t.epochs,
        patience,
        batch_size: t.batch,
        schedule: LrSchedule { initial: t.lr, ..LrSchedule::default() },
        seed: t.seed,
        ..TrainSpec::default()
    };
    spec.validate()?;
    Ok(spec)
}

fn positions_or_present(requested: &[crate::PositionArg], ds: &Dataset) -> Vec<Position> {
    if requested.is_empty() {
        ds.positions()
    } else {
        let mut v: Vec<Position> = requested.iter().map(|&p| p.into()).collect();
        v.sort();
        v.dedup();
        v
    }
}

pub fn synth(a: &SynthArgs, argv: &[String]) -> anyhow::Result<()> {
    let activities =
        if a.activities.is_empty() { vec![ActivityLabel::Squat, ActivityLabel::Armcurl, ActivityLabel::Running] } else { a.activities.clone() };
    let mut cfg = DatasetConfig::new(a.subjects, a.days, activities, a.seed);
    if !a.positions.is_empty() {
        cfg.positions = a.positions.iter().map(|&p| p.into()).collect();
        cfg.positions.sort();
        cfg.positions.dedup();
    }
    cfg.sets = a.sets;
    cfg.reps = a.reps;
    cfg.rest_s = a.rest;
    if a.noiseless {
        cfg.noise = NoiseLevel::NONE;
    }
    prepare_out(&a.out, None)?;
    let m = generate_dataset(&cfg, &a.out)?;
    manifest::write(&a.out, argv)?;
    println!("wrote {} sessions ({} windows) to {}", m.sessions.len(), m.total_windows, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SessionSummary {
    stem: String,
    frames: usize,
    duration_s: f64,
    labels: BTreeMap<ActivityLabel, usize>,
    counted_segments: Option<usize>,
    warnings: Vec<String>,
}

pub fn ingest(a: &IngestArgs) -> anyhow::Result<()> {
    let ds = load(&a.data, a.position.map(Into::into))?;
    let mut rows = Vec::new();
    for s in &ds.sessions {
        let mut labels = BTreeMap::new();
        for f in &s.recording.frames {
            *labels.entry(f.label).or_insert(0) += 1;
        }
        rows.push(SessionSummary {
            stem: s.recording.meta.file_stem(),
            frames: s.recording.frames.len(),
            duration_s: s.recording.duration_s(),
            labels,
            counted_segments: s.counts.as_ref().map(|c| c.segments.len()),
            warnings: s.warnings.iter().map(ToString::to_string).collect(),
        });
    }
    for r in &rows {
        println!(
            "{:<16} {:>7} frames {:>8.1} s  {} labels  {} warnings",
            r.stem,
            r.frames,
            r.duration_s,
            r.labels.len(),
            r.warnings.len()
        );
    }
    println!("{} sessions, subjects {:?}, {} warnings", rows.len(), ds.subjects(), ds.warning_count());
    if let Some(out) = &a.out {
        prepare_out(out, Some(&a.data.data))?;
        let path = out.join("ingest.json");
        fs::write(&path, serde_json::to_string_pretty(&rows)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn print_report(key: &str, r: &EvalReport) {
    println!(
        "{key}: pooled accuracy {} macro F {} (fold mean {} ± {})",
        fmt_sig(r.pooled.accuracy, 6),
        fmt_sig(r.pooled.macro_f1, 6),
        fmt_sig(r.fold_accuracy_mean, 6),
        fmt_sig(r.fold_accuracy_std, 6)
    );
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> anyhow::Result<()> {
    let spec = train_spec(&a.train)?;
    let ds = load(&a.data, None)?;
    prepare_out(&a.out, Some(&a.data.data))?;
    let sources: Vec<SignalSource> = if a.sources.is_empty() {
        SignalSource::ALL.to_vec()
    } else {
        let mut v: Vec<SignalSource> = a.sources.iter().map(|&s| s.into()).collect();
        v.dedup();
        v
    };
    let mut reports = Vec::new();
    for position in positions_or_present(&a.positions, &ds) {
        let windows = ds.windows(position, WindowParams::default());
        if windows.is_empty() {
            bail!("no {position} windows in {}", a.data.data.display());
        }
        for &source in &sources {
            let cfg = ModelConfig::recognition(source);
            log::info!("recognition: {position} / {} on {} windows", source.as_str(), windows.len());
            let report = run_louo(&windows, &cfg, &spec).with_context(|| format!("{position} / {}", source.as_str()))?;
            let key = report_key(&report);
            print_report(&key, &report);
            reports.push((key, report));
        }
    }
    write_report_bundle(&a.out, &reports)?;
    manifest::write(&a.out, argv)
}

pub fn auth(a: &AuthArgs, argv: &[String]) -> anyhow::Result<()> {
    let spec = train_spec(&a.train)?;
    let position: Position = a.position.into();
    let ds = load(&a.data, Some(position))?;
    prepare_out(&a.out, Some(&a.data.data))?;
    let windows = ds.windows(position, WindowParams::default());
    let cfg = ModelConfig::authentication(a.source.into());
    let report = run_auth(&windows, a.activity, &cfg, &spec)?;
    let key = format!("{}_{}", report_key(&report), a.activity.as_str().to_lowercase());
    print_report(&key, &report);
    write_report_bundle(&a.out, &[(key, report)])?;
    manifest::write(&a.out, argv)
}

fn summary_row(out: &mut String, position: Position, activity: &str, s: &AccuracySummary) {
    let _ = write!(out, "{position},{activity},{}", s.n_segments);
    for (m, sd) in s.mean.as_array().iter().zip(s.std.as_array()) {
        let _ = write!(out, ",{},{}", fmt_sig(*m, 6), fmt_sig(sd, 6));
    }
    out.push('\n');
}

pub fn count(a: &CountArgs, argv: &[String]) -> anyhow::Result<()> {
    let ds = load(&a.data, None)?;
    prepare_out(&a.out, Some(&a.data.data))?;
    let cfg = CountConfig::default();
    let mode = match a.grid_mode {
        GridModeArg::UpperBound => GridMode::UpperBound,
        GridModeArg::Louo => GridMode::Louo,
    };
    let mut summary = String::from("position,activity,segments");
    for name in SourceAccuracies::NAMES {
        let _ = write!(summary, ",{name}_mean,{name}_std");
    }
    summary.push('\n');
    let mut details = BTreeMap::new();
    for position in positions_or_present(&a.positions, &ds) {
        let mut segments = Vec::new();
        for s in ds.sessions_at(position) {
            let Some(counts) = &s.counts else {
                bail!("{} has no counts sidecar; counting needs repetition ground truth", s.csv_path.display());
            };
            segments.extend(extract_segments(&s.recording, counts)?);
        }
        if segments.is_empty() {
            bail!("no annotated exercise segments at {position}");
        }
        let outcomes = evaluate_counting(&segments, &cfg, mode)?;
        let mut long = String::from("activity,source,accuracy\n");
        for o in &outcomes {
            for (name, acc) in SourceAccuracies::NAMES.iter().zip(o.result.accuracy.as_array()) {
                let _ = writeln!(long, "{},{name},{}", o.activity, fmt_sig(acc, 6));
            }
        }
        let path = a.out.join(format!("counting_long_{position}.csv"));
        fs::write(&path, long).with_context(|| format!("writing {}", path.display()))?;
        for (activity, s) in summarize_by_activity(&outcomes) {
            summary_row(&mut summary, position, activity.as_str(), &s);
        }
        let all = AccuracySummary::from_results(outcomes.iter().map(|o| &o.result)).expect("outcomes are non-empty");
        summary_row(&mut summary, position, "all", &all);
        println!(
            "{position}: {} segments, mean accuracy acc {} gyro {} hbc {} imu {} combined {}",
            all.n_segments,
            fmt_sig(all.mean.acc, 4),
            fmt_sig(all.mean.gyro, 4),
            fmt_sig(all.mean.hbc, 4),
            fmt_sig(all.mean.imu, 4),
            fmt_sig(all.mean.combined, 4)
        );
        details.insert(position.to_string(), outcomes);
    }
    let path = a.out.join("counting_summary.csv");
    fs::write(&path, summary).with_context(|| format!("writing {}", path.display()))?;
    let path = a.out.join("counting.json");
    fs::write(&path, serde_json::to_string_pretty(&details)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    manifest::write(&a.out, argv)
}

pub fn report(a: &ReportArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let reports: BTreeMap<String, EvalReport> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.input.display()))?;
    for (key, r) in &reports {
        print_report(key, r);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let written = write_report_bundle(&a.out, &reports.into_iter().collect::<Vec<_>>())?;
    println!("wrote {} files to {}", written.len(), a.out.display());
    Ok(())
}
