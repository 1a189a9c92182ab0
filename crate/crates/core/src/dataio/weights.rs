use std::collections::BTreeMap;

use super::{ActivityLabel, DataError, WindowInstance};

/// Balanced inverse-frequency weights: `N_total / (n_classes_present · N_c)`.
///
/// The weighted mass `N_c · w_c` is identical for every present class and the
/// weights sum back to `N_total` over all samples.
pub fn balanced_class_weights<K: Ord + Copy>(labels: impl IntoIterator<Item = K>) -> Result<BTreeMap<K, f64>, DataError> {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    let mut total = 0usize;
    for l in labels {
        *counts.entry(l).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(DataError::NoInstances);
    }
    let present = counts.len() as f64;
    Ok(counts.into_iter().map(|(k, n)| (k, total as f64 / (present * n as f64))).collect())
}

pub fn compute_sample_weights(instances: &[WindowInstance]) -> Result<BTreeMap<ActivityLabel, f64>, DataError> {
    balanced_class_weights(instances.iter().map(|w| w.label))
}
