//! Accuracy, model selection, the leave-one-domain-out benchmark and
//! domain-shift statistics.

mod benchmark;
mod projection;
mod shift;

pub use benchmark::{
    assemble_report, benchmark_jobs, literature_table, run_benchmark, run_job, BenchmarkConfig, BenchmarkReport, Cell, Job,
    LiteratureRow, ReportRow, RunResult, RunSeeds, LITERATURE, LITERATURE_DOMAINS,
};
pub use projection::{eigen_projection, EigenProjection, ProjectedCentre};
pub use shift::{kl_divergence, DEFAULT_KL_BINS, kl_domain_shift, kl_domain_shift_with, mean_intensity, smoothed_histogram, DomainShiftReport};

use crate::data::{Batch, Example};
use crate::error::{Error, Result};
use crate::model::{classify, Model};
use crate::train::Checkpoint;

/// Percentage of `examples` whose predicted class equals the label.
pub fn evaluate_accuracy(model: &Model, examples: &[&Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyPool);
    }
    accuracy_on_batch(model, &crate::data::stack(examples)?)
}

pub fn accuracy_on_batch(model: &Model, batch: &Batch) -> Result<f64> {
    if batch.labels.is_empty() {
        return Err(Error::EmptyPool);
    }
    let predicted = classify(&model.forward(&batch.features)?);
    Ok(percent_correct(&predicted, &batch.labels))
}

pub fn percent_correct(predicted: &[usize], labels: &[usize]) -> f64 {
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * correct as f64 / labels.len() as f64
}

/// Index of the checkpoint with the highest validation accuracy; ties go to
/// the earliest.
pub fn select_best_model(checkpoints: &[Checkpoint]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in checkpoints.iter().enumerate() {
        if best.is_none_or(|b| c.val_acc > checkpoints[b].val_acc) {
            best = Some(i);
        }
    }
    best.ok_or(Error::EmptyPool)
}
