//! Seeded, per-task stratified test/train/val splits.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::SplitSizes;
use super::{derive_seed, PipelineError};
use crate::jsonl;
use crate::taxonomy::Trajectory;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub test: Vec<Trajectory>,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    /// Tasks with fewer items than requested for test.
    pub warnings: Vec<String>,
}

impl Splits {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes { test: self.test.len(), train: self.train.len(), val: self.val.len() }
    }

    /// Writes splits/{test,train,val}.jsonl under `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<(), PipelineError> {
        let dir = out_dir.join("splits");
        jsonl::write(&dir.join("test.jsonl"), &self.test)?;
        jsonl::write(&dir.join("train.jsonl"), &self.train)?;
        jsonl::write(&dir.join("val.jsonl"), &self.val)?;
        Ok(())
    }
}

/// Per task tag: shuffles ids with a seed derived from (seed, task), takes
/// `min(n, per_task_test)` for test, then `round(rest * train_frac)` for
/// train and the remainder for val. Each split is sorted by id.
pub fn split(dataset: &[Trajectory], per_task_test: usize, train_frac: f64, seed: u64) -> Splits {
    let mut by_task: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in dataset {
        by_task.entry(&t.task).or_default().push(t);
    }
    let mut out = Splits::default();
    for (task, mut items) in by_task {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, task));
        items.shuffle(&mut rng);
        let n_test = items.len().min(per_task_test);
        if items.len() < per_task_test {
            out.warnings.push(format!(
                "task {task}: {} items available, fewer than {per_task_test} requested for test",
                items.len()
            ));
        }
        let rest = items.len() - n_test;
        let n_train = ((rest as f64) * train_frac).round() as usize;
        out.test.extend(items[..n_test].iter().map(|t| (*t).clone()));
        out.train.extend(items[n_test..n_test + n_train].iter().map(|t| (*t).clone()));
        out.val.extend(items[n_test + n_train..].iter().map(|t| (*t).clone()));
    }
    for part in [&mut out.test, &mut out.train, &mut out.val] {
        part.sort_by(|a, b| a.id.cmp(&b.id));
    }
    out
}
