use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{DataError, WindowInstance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_subject: u32,
    pub train_subjects: Vec<u32>,
}

impl Fold {
    /// Splits instance indices into (train, test) by subject.
    pub fn partition<T, F>(&self, items: &[T], subject_of: F) -> (Vec<usize>, Vec<usize>)
    where
        F: Fn(&T) -> u32,
    {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let s = subject_of(item);
            if s == self.test_subject {
                test.push(i);
            } else if self.train_subjects.binary_search(&s).is_ok() {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Leave-one-user-out plan: one fold per subject, ascending subject id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn from_subjects(subjects: impl IntoIterator<Item = u32>) -> Result<Self, DataError> {
        let subjects: BTreeSet<u32> = subjects.into_iter().collect();
        if subjects.len() < 2 {
            return Err(DataError::TooFewSubjects { found: subjects.len() });
        }
        let folds = subjects
            .iter()
            .map(|&test_subject| Fold {
                test_subject,
                train_subjects: subjects.iter().copied().filter(|&s| s != test_subject).collect(),
            })
            .collect();
        Ok(Self { folds })
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.folds.iter().map(|f| f.test_subject).collect()
    }
}

pub fn make_louo_folds(instances: &[WindowInstance]) -> Result<FoldPlan, DataError> {
    FoldPlan::from_subjects(instances.iter().map(WindowInstance::subject_id))
}

/// Scans every fold's training indices for windows of the held-out subject.
/// Returns the number of leaked windows (zero for a sound plan).
pub fn leakage_scan<T, F>(plan: &FoldPlan, items: &[T], subject_of: F) -> usize
where
    F: Fn(&T) -> u32 + Copy,
{
    plan.folds
        .iter()
        .map(|fold| {
            let (train, _) = fold.partition(items, subject_of);
            train.iter().filter(|&&i| subject_of(&items[i]) == fold.test_subject).count()
        })
        .sum()
}
