//! Multi-threaded evaluation with results identical to the sequential path.

use adm_core::model::task_accuracy;
use adm_core::{EvalConfig, EvalReport, LabeledDataset};
use rayon::prelude::*;

use crate::error::{Error, Result};

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {workers} workers: {e}")))
}

/// Per-task accuracies in `(rep, task)` order, computed on `workers` threads.
pub fn task_accuracies(
    dataset: &LabeledDataset,
    split: &[u32],
    config: &EvalConfig,
    workers: usize,
) -> Result<Vec<f64>> {
    if workers == 0 {
        return Err(Error::Usage("--workers must be positive".into()));
    }
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..config.reps)
        .flat_map(|r| (0..config.tasks).map(move |t| (r, t)))
        .collect();
    let out = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(r, t)| task_accuracy(dataset, split, config, r, t))
            .collect::<adm_core::Result<Vec<f64>>>()
    })?;
    Ok(out)
}

pub fn evaluate(
    dataset: &LabeledDataset,
    split: &[u32],
    config: &EvalConfig,
    workers: usize,
) -> Result<EvalReport> {
    let accs = task_accuracies(dataset, split, config, workers)?;
    Ok(EvalReport::from_accuracies(&accs, config))
}
