use std::time::Instant;

use rand::seq::SliceRandom;

use super::{direction, TrainConfig};
use crate::error::{check_dim, Error, Result};
use crate::losses::{Dataset, LossFunction, MlpModel};
use crate::measures::SeededStream;
use crate::sharpness::SharpnessSpec;

/// Stream component reserved for epoch shuffles.
const SHUFFLE_COMPONENT: u64 = u64::MAX;

/// Something trainable: a loss over a fixed set of examples, or a single
/// full-batch loss.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Example count for mini-batching; `None` means one full-batch step per epoch.
    fn num_examples(&self) -> Option<usize>;

    /// Runs `f` with the loss restricted to `indices` (ignored when full-batch).
    fn with_batch(
        &self,
        indices: &[usize],
        f: &mut dyn FnMut(&dyn LossFunction) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>>;
}

/// Full-batch wrapper around any loss.
pub struct FullBatch<'a>(pub &'a dyn LossFunction);

impl Objective for FullBatch<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn num_examples(&self) -> Option<usize> {
        None
    }

    fn with_batch(
        &self,
        _indices: &[usize],
        f: &mut dyn FnMut(&dyn LossFunction) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        f(self.0)
    }
}

/// An MLP over a dataset, mini-batched.
pub struct DatasetObjective<'a> {
    pub model: &'a MlpModel,
    pub data: &'a Dataset,
}

impl Objective for DatasetObjective<'_> {
    fn dim(&self) -> usize {
        self.model.num_params()
    }

    fn num_examples(&self) -> Option<usize> {
        Some(self.data.len())
    }

    fn with_batch(
        &self,
        indices: &[usize],
        f: &mut dyn FnMut(&dyn LossFunction) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let sub = self.data.subset(indices);
        f(&self.model.batch(&sub))
    }
}

/// Metrics recorded after an epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochMetrics {
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub trace: Option<f64>,
    pub frobenius_sq: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    pub epoch: usize,
    pub metrics: EpochMetrics,
    pub lambda: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    /// Wall-clock seconds per epoch; kept apart from the rows so that the
    /// rows stay reproducible.
    pub epoch_seconds: Vec<f64>,
}

impl RunRecord {
    pub const HEADER: [&'static str; 7] = [
        "epoch",
        "train_loss",
        "test_accuracy",
        "trace",
        "frobenius_sq",
        "lambda",
        "seed",
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub params: Vec<f64>,
    pub iterations: u64,
}

/// Momentum training: `b ← μb + g`, `x ← x − η_t b`. `evaluate` is called
/// after every epoch with the current parameters.
pub fn train(
    objective: &dyn Objective,
    cfg: &TrainConfig,
    init: Vec<f64>,
    spec: Option<&SharpnessSpec>,
    evaluate: &mut dyn FnMut(usize, &[f64]) -> Result<EpochMetrics>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dim(objective.dim(), init.len())?;
    let built;
    let spec = match (spec, &cfg.spec) {
        (Some(s), _) => Some(s),
        (None, Some(p)) if cfg.kind == super::OptimizerKind::Generic => {
            built = p.build(objective.dim())?;
            Some(&built)
        }
        _ => None,
    };
    let root = SeededStream::new(cfg.seed);
    let mut x = init;
    let mut buffer = vec![0.0; x.len()];
    let mut t: u64 = 0;
    let mut record = RunRecord::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        let batches: Vec<Vec<usize>> = match objective.num_examples() {
            None => vec![Vec::new()],
            Some(n) => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut root.rng(SHUFFLE_COMPONENT, epoch as u64));
                order.chunks(cfg.batch_size).map(|c| c.to_vec()).collect()
            }
        };
        for batch in &batches {
            let stream = root.at_iteration(t);
            let g = objective.with_batch(batch, &mut |loss| direction(loss, &x, cfg, spec, &stream))?;
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "update direction coordinate {k} at epoch {epoch}, iteration {t}"
                )));
            }
            for ((xi, bi), gi) in x.iter_mut().zip(buffer.iter_mut()).zip(&g) {
                *bi = cfg.momentum * *bi + gi;
                *xi -= lr * *bi;
            }
            t += 1;
        }
        let metrics = evaluate(epoch + 1, &x)?;
        if !metrics.train_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss after epoch {} (iteration {t})",
                epoch + 1
            )));
        }
        record.rows.push(RunRow {
            epoch: epoch + 1,
            metrics,
            lambda: cfg.lambda,
            seed: cfg.seed,
        });
        record.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome {
        record,
        params: x,
        iterations: t,
    })
}
