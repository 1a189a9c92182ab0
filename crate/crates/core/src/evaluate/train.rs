use std::collections::BTreeSet;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataio::{balanced_class_weights, WindowInstance};
use crate::model::{ModelConfig, Network, Standardizer, TrainMeta, TrainedModel};
use crate::nn::{self, adam_step, lr_at, AdamState, ForwardCtx, LrSchedule, ParamStore};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Share of the training data held out to monitor early stopping.
    pub validation_fraction: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 100,
            batch_size: 256,
            schedule: LrSchedule::default(),
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidSpec(m.to_string()));
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if self.patience >= self.max_epochs {
            return bad("patience must be smaller than max_epochs");
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 0.5)");
        }
        if !(self.schedule.initial > 0.0 && self.schedule.decay_rate > 0.0 && self.schedule.decay_steps > 0) {
            return bad("learning-rate schedule must be positive");
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Windows with integer targets and a grouping key (subject or day) used to
/// build the validation split.
pub struct TrainingSet<'a> {
    pub windows: Vec<&'a WindowInstance>,
    pub targets: Vec<usize>,
    pub groups: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a loss that must strictly improve.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: None }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            return StopDecision::Improved;
        }
        match self.best_epoch {
            Some(b) if epoch - b >= self.patience => StopDecision::Stop,
            None if epoch + 1 >= self.patience => StopDecision::Stop,
            _ => StopDecision::Continue,
        }
    }
}

/// Splits indices into (train, validation). Whole groups are held out when
/// `round(fraction · groups)` is at least one and leaves a group to train on;
/// otherwise a seeded window-level split is used.
pub fn split_validation(groups: &[u32], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = groups.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if fraction <= 0.0 || n < 2 {
        return ((0..n).collect(), Vec::new());
    }
    let distinct: Vec<u32> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let k = (fraction * distinct.len() as f64).round() as usize;
    if k >= 1 && k < distinct.len() {
        let mut order = distinct;
        order.shuffle(&mut rng);
        let held: BTreeSet<u32> = order[..k].iter().copied().collect();
        return (0..n).partition(|&i| !held.contains(&groups[i]));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let held: BTreeSet<usize> = idx[..n_val].iter().copied().collect();
    (0..n).partition(|i| !held.contains(i))
}

struct Prepared<'a> {
    net: Network,
    inputs: Vec<Vec<f64>>,
    targets: &'a [usize],
    weights: Vec<f64>,
}

impl Prepared<'_> {
    /// Weighted loss over `idx` in eval mode, summed then normalized once.
    fn loss(&self, params: &ParamStore, idx: &[usize]) -> Result<f64, EvalError> {
        let bound = params.bind(false);
        let (mut num, mut den) = (0.0, 0.0);
        for chunk in idx.chunks(256) {
            let refs: Vec<&[f64]> = chunk.iter().map(|&i| self.inputs[i].as_slice()).collect();
            let probs = self.net.forward(&bound, &self.net.batch(&refs)?, &mut ForwardCtx::eval())?;
            let k = self.net.config.n_classes;
            for (row, &i) in probs.data().chunks(k).zip(chunk) {
                let w = self.weights[i];
                num -= w * row[self.targets[i]].clamp(nn::PROB_FLOOR, 1.0).ln();
                den += w;
            }
        }
        Ok(if den > 0.0 { num / den } else { 0.0 })
    }
}

/// Trains one model: seeded shuffled mini-batches, class-balanced weighted
/// cross-entropy, Adam on the staircase schedule, early stopping on the
/// validation loss, and best-epoch parameters restored at the end.
pub fn train_fold(cfg: &ModelConfig, set: &TrainingSet<'_>, spec: &TrainSpec, fold: Option<u32>) -> Result<TrainedModel, EvalError> {
    spec.validate()?;
    let n = set.windows.len();
    if n == 0 {
        return Err(EvalError::EmptyTrainingSet);
    }
    if set.targets.len() != n || set.groups.len() != n {
        return Err(EvalError::LengthMismatch { predictions: set.targets.len(), labels: n });
    }
    if let Some(&t) = set.targets.iter().find(|&&t| t >= cfg.n_classes) {
        return Err(EvalError::LabelOutOfRange { label: t, classes: cfg.n_classes });
    }
    let n_classes = set.targets.iter().collect::<BTreeSet<_>>().len();
    if n_classes < 2 {
        return Err(EvalError::TooFewClasses(n_classes));
    }
    let net = Network::build(cfg)?;
    let (train_idx, val_idx) = split_validation(&set.groups, spec.validation_fraction, derive_seed(spec.seed, &[1]));
    let standardizer = Standardizer::fit(train_idx.iter().map(|&i| set.windows[i]));
    let class_w = balanced_class_weights(train_idx.iter().map(|&i| set.targets[i]))?;
    let prep = Prepared {
        inputs: set.windows.iter().map(|w| standardizer.apply(w)).collect(),
        weights: set.targets.iter().map(|t| class_w.get(t).copied().unwrap_or(1.0)).collect(),
        targets: &set.targets,
        net,
    };
    debug!("fold {fold:?}: {} train / {} validation windows", train_idx.len(), val_idx.len());

    let mut params = prep.net.init_params(derive_seed(spec.seed, &[0]))?;
    let mut adam = AdamState::default();
    let mut stopper = EarlyStopping::new(spec.patience);
    let mut best = params.clone();
    let mut order = train_idx.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2]));
    let mut epochs_run = 0;
    let mut lr = lr_at(&spec.schedule, 0);
    for epoch in 0..spec.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut wsum) = (0.0, 0.0);
        for chunk in order.chunks(spec.batch_size) {
            let refs: Vec<&[f64]> = chunk.iter().map(|&i| prep.inputs[i].as_slice()).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| set.targets[i]).collect();
            let weights: Vec<f64> = chunk.iter().map(|&i| prep.weights[i]).collect();
            let bound = params.bind(true);
            let mut ctx = ForwardCtx::train(derive_seed(spec.seed, &[3, adam.step]));
            let probs = prep.net.forward(&bound, &prep.net.batch(&refs)?, &mut ctx)?;
            let loss = nn::weighted_cross_entropy(&probs, &targets, &weights)?;
            let value = loss.item()?;
            lr = lr_at(&spec.schedule, adam.step);
            if !value.is_finite() {
                return Err(EvalError::Divergence { epoch, step: adam.step, loss: value, lr });
            }
            let w: f64 = weights.iter().sum();
            sum += value * w;
            wsum += w;
            loss.backward()?;
            adam_step(&mut params, &bound.grads(), &mut adam, lr)?;
        }
        epochs_run = epoch + 1;
        let monitored = if val_idx.is_empty() { sum / wsum } else { prep.loss(&params, &val_idx)? };
        if !monitored.is_finite() {
            return Err(EvalError::Divergence { epoch, step: adam.step, loss: monitored, lr });
        }
        debug!("fold {fold:?} epoch {epoch}: train {:.5} monitor {monitored:.5}", sum / wsum);
        match stopper.observe(epoch, monitored) {
            StopDecision::Improved => best.clone_from(&params),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok(TrainedModel {
        config: cfg.clone(),
        params: best,
        standardizer,
        meta: TrainMeta {
            fold,
            epochs_run,
            best_epoch: stopper.best_epoch().unwrap_or(0),
            best_val_loss: stopper.best_loss(),
            final_lr: lr,
            steps: adam.step,
            seed: spec.seed,
        },
    })
}
