use std::collections::BTreeSet;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, train_fold, EvalError, Metrics, TrainSpec, TrainingSet};
use crate::dataio::{leakage_scan, make_louo_folds, ActivityLabel, FoldPlan, Position, SignalSource, WindowInstance};
use crate::model::{ModelConfig, Task};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Held-out subject (recognition) or day (authentication).
    pub held_out: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub position: Option<Position>,
    pub source: SignalSource,
    /// Authentication only: the activity the windows were drawn from.
    pub activity: Option<ActivityLabel>,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    /// Metrics over the test windows of all folds pooled together.
    pub pooled: Metrics,
    pub fold_accuracy_mean: f64,
    pub fold_accuracy_std: f64,
    pub leakage_windows: usize,
}

fn common_position(windows: &[&WindowInstance]) -> Option<Position> {
    let set: BTreeSet<Position> = windows.iter().map(|w| w.session.position).collect();
    (set.len() == 1).then(|| *set.iter().next().unwrap())
}

struct FoldJob<'a> {
    held_out: u32,
    train: Vec<&'a WindowInstance>,
    test: Vec<&'a WindowInstance>,
}

fn run_folds(
    jobs: Vec<FoldJob<'_>>,
    cfg: &ModelConfig,
    spec: &TrainSpec,
    target: impl Fn(&WindowInstance) -> usize + Sync,
    group: impl Fn(&WindowInstance) -> u32 + Sync,
) -> Result<(Vec<FoldReport>, Vec<usize>, Vec<usize>), EvalError> {
    let results: Vec<(FoldReport, Vec<usize>, Vec<usize>)> = jobs
        .par_iter()
        .map(|job| {
            let set = TrainingSet {
                targets: job.train.iter().map(|w| target(w)).collect(),
                groups: job.train.iter().map(|w| group(w)).collect(),
                windows: job.train.clone(),
            };
            let fold_spec = spec.with_seed(derive_seed(spec.seed, &[u64::from(job.held_out)]));
            let model = train_fold(cfg, &set, &fold_spec, Some(job.held_out))?;
            let preds = model.predict(&job.test)?;
            let labels: Vec<usize> = job.test.iter().map(|w| target(w)).collect();
            let metrics = compute_metrics(&preds, &labels, cfg.n_classes)?;
            info!(
                "held out {}: accuracy {:.4}, macro F {:.4} ({} epochs)",
                job.held_out, metrics.accuracy, metrics.macro_f1, model.meta.epochs_run
            );
            let report = FoldReport {
                held_out: job.held_out,
                n_train: job.train.len(),
                n_test: job.test.len(),
                epochs_run: model.meta.epochs_run,
                best_epoch: model.meta.best_epoch,
                metrics,
            };
            Ok((report, preds, labels))
        })
        .collect::<Result<_, EvalError>>()?;
    let mut folds = Vec::new();
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    for (f, p, l) in results {
        folds.push(f);
        preds.extend(p);
        labels.extend(l);
    }
    Ok((folds, preds, labels))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    cfg: &ModelConfig,
    spec: &TrainSpec,
    windows: &[&WindowInstance],
    activity: Option<ActivityLabel>,
    class_names: Vec<String>,
    folds: Vec<FoldReport>,
    preds: Vec<usize>,
    labels: Vec<usize>,
    leakage_windows: usize,
) -> Result<EvalReport, EvalError> {
    let pooled = compute_metrics(&preds, &labels, cfg.n_classes)?;
    let accs: Vec<f64> = folds.iter().map(|f| f.metrics.accuracy).collect();
    let (fold_accuracy_mean, fold_accuracy_std) = mean_std(&accs);
    Ok(EvalReport {
        task: cfg.task,
        position: common_position(windows),
        source: cfg.source,
        activity,
        class_names,
        seed: spec.seed,
        folds,
        pooled,
        fold_accuracy_mean,
        fold_accuracy_std,
        leakage_windows,
    })
}

/// Leave-one-user-out recognition: one model per held-out subject, targets
/// are activity indices. Folds train concurrently; results are gathered in
/// subject order.
pub fn run_louo(instances: &[WindowInstance], cfg: &ModelConfig, spec: &TrainSpec) -> Result<EvalReport, EvalError> {
    spec.validate()?;
    let plan: FoldPlan = make_louo_folds(instances)?;
    let leakage = leakage_scan(&plan, instances, WindowInstance::subject_id);
    if leakage > 0 {
        return Err(EvalError::Leakage { windows: leakage });
    }
    let jobs = plan
        .folds
        .iter()
        .map(|fold| {
            let (tr, te) = fold.partition(instances, WindowInstance::subject_id);
            FoldJob {
                held_out: fold.test_subject,
                train: tr.iter().map(|&i| &instances[i]).collect(),
                test: te.iter().map(|&i| &instances[i]).collect(),
            }
        })
        .collect();
    let (folds, preds, labels) = run_folds(jobs, cfg, spec, |w| w.label.index(), WindowInstance::subject_id)?;
    let names = ActivityLabel::ALL.iter().take(cfg.n_classes).map(|a| a.as_str().to_string()).collect();
    let all: Vec<&WindowInstance> = instances.iter().collect();
    assemble(cfg, spec, &all, None, names, folds, preds, labels, leakage)
}

/// Subject authentication on one activity with day-held-out rotation: each
/// fold trains on every other day and tests on the held-out day. Subject
/// `s` maps to class `s − 1`.
pub fn run_auth(
    instances: &[WindowInstance],
    activity: ActivityLabel,
    cfg: &ModelConfig,
    spec: &TrainSpec,
) -> Result<EvalReport, EvalError> {
    spec.validate()?;
    let windows: Vec<&WindowInstance> = instances.iter().filter(|w| w.label == activity).collect();
    if windows.is_empty() {
        return Err(EvalError::ActivityAbsent(activity));
    }
    let subjects: BTreeSet<u32> = windows.iter().map(|w| w.subject_id()).collect();
    if subjects.len() < 2 {
        return Err(EvalError::TooFewSubjects(subjects.len()));
    }
    if let Some(&s) = subjects.iter().find(|&&s| s == 0 || s as usize > cfg.n_classes) {
        return Err(EvalError::LabelOutOfRange { label: s as usize, classes: cfg.n_classes });
    }
    let days: BTreeSet<u32> = windows.iter().map(|w| w.session.day).collect();
    if days.len() < 2 {
        return Err(EvalError::TooFewDays(days.len()));
    }
    let jobs: Vec<FoldJob<'_>> = days
        .iter()
        .map(|&d| {
            let (test, train): (Vec<&WindowInstance>, Vec<&WindowInstance>) = windows.iter().partition(|w| w.session.day == d);
            FoldJob { held_out: d, train, test }
        })
        .collect();
    let leakage: usize = jobs.iter().map(|j| j.train.iter().filter(|w| w.session.day == j.held_out).count()).sum();
    if leakage > 0 {
        return Err(EvalError::Leakage { windows: leakage });
    }
    let (folds, preds, labels) = run_folds(jobs, cfg, spec, |w| w.subject_id() as usize - 1, |w| w.session.day)?;
    let names = (1..=cfg.n_classes).map(|s| format!("S{s}")).collect();
    assemble(cfg, spec, &windows, Some(activity), names, folds, preds, labels, leakage)
}

/// Spread of pooled accuracy over reruns with different seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Largest absolute deviation from the mean.
    pub max_deviation: f64,
}

pub fn rerun_stability<F>(seeds: &[u64], mut run: F) -> Result<Stability, EvalError>
where
    F: FnMut(u64) -> Result<EvalReport, EvalError>,
{
    if seeds.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    let accuracies = seeds.iter().map(|&s| run(s).map(|r| r.pooled.accuracy)).collect::<Result<Vec<_>, _>>()?;
    let (mean, std) = mean_std(&accuracies);
    let max_deviation = accuracies.iter().map(|a| (a - mean).abs()).fold(0.0, f64::max);
    Ok(Stability { seeds: seeds.to_vec(), accuracies, mean, std, max_deviation })
}
