use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Grads, NnError, ParamStore};

/// Exponential decay `initial · decay_rate^(step / decay_steps)`, floored
/// exponent when `staircase`. A step is one optimizer update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub staircase: bool,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 1e-4, decay_rate: 0.5, decay_steps: 200, staircase: true }
    }
}

pub fn lr_at(sched: &LrSchedule, step: u64) -> f64 {
    let ratio = step as f64 / sched.decay_steps as f64;
    let exp = if sched.staircase { ratio.floor() } else { ratio };
    sched.initial * sched.decay_rate.powf(exp)
}

/// Adam moments, keyed like the parameter store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
/// Every parameter must have a gradient.
pub fn adam_step(params: &mut ParamStore, grads: &Grads, state: &mut AdamState, lr: f64) -> Result<(), NnError> {
    if let Some(name) = params.names().find(|n| !grads.contains_key(*n)) {
        return Err(NnError::MissingGrad(name.clone()));
    }
    if let Some(name) = grads.keys().find(|n| params.get(n).is_none()) {
        return Err(NnError::UnknownParam(name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let g = &grads[&name];
        let p = params.get_mut(&name).expect("name taken from store");
        if g.len() != p.data.len() {
            return Err(NnError::DataLength { shape: p.shape.clone(), len: g.len() });
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name).or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
