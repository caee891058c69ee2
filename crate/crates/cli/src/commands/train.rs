use std::path::PathBuf;

use rayon::prelude::*;
use serde_json::json;
use sharpness_core::losses::{hessian_norm_estimates, Dataset, LossFunction, MlpModel};
use sharpness_core::measures::SeededStream;
use sharpness_core::optim::{
    save_checkpoint, train, CheckpointHeader, DatasetObjective, EpochMetrics, FullBatch,
    Objective, OptimizerKind, RunRecord, TrainConfig, TrainOutcome,
};
use sharpness_core::sharpness::SharpnessSpec;

use super::Context;
use crate::config::{nonempty, BuiltLoss};
use crate::error::{CliError, CliResult};
use crate::svg::{LineChart, Series};
use crate::table::{fmt_f64, fmt_label, fmt_opt, CsvTable};

/// Stream tags, forked off the per-run seed.
const INIT_TAG: u64 = 0x1417;
const PROBE_TAG: u64 = 0x9b0e;

pub const BIAS_STUDY_DEVIATION: &str = "desk-scale setup: MNIST subset and a shallower \
MLP than the six-layer network of the original experiments; Frobenius norms are reported squared";

pub const BIAS_HEADER: [&str; 7] = [
    "lambda",
    "seed",
    "epoch",
    "train_loss",
    "test_accuracy",
    "frobenius_sq",
    "frobenius_sq_stderr",
];

pub const SUMMARY_HEADER: [&str; 7] = [
    "lambda",
    "seeds",
    "final_frobenius_sq_mean",
    "final_frobenius_sq_stderr",
    "min_test_accuracy",
    "mean_test_accuracy",
    "max_test_accuracy",
];

#[derive(Debug, Clone, Copy)]
struct Cell {
    lambda: f64,
    seed: u64,
}

impl Cell {
    fn stem(&self) -> String {
        format!("run_lambda-{}_seed-{}", fmt_label(self.lambda), self.seed)
    }
}

struct CellRun {
    cell: Cell,
    outcome: TrainOutcome,
    /// Probe standard error of the Frobenius estimate, per epoch.
    frob_stderr: Vec<Option<f64>>,
}

/// What the cells share.
struct Setup<'a> {
    loss: &'a BuiltLoss,
    base: TrainConfig,
    spec: Option<SharpnessSpec>,
    init_point: Option<Vec<f64>>,
    probes: Option<usize>,
    every: usize,
    subsample: Option<Dataset>,
}

impl Setup<'_> {
    fn init(&self, seed: u64) -> CliResult<Vec<f64>> {
        match self.loss {
            BuiltLoss::Mlp { model, .. } => Ok(model.init_params(&SeededStream::new(seed).fork(INIT_TAG))),
            BuiltLoss::Function(f) => {
                let x = self
                    .init_point
                    .clone()
                    .ok_or_else(|| CliError::Config("`point` is required as the initial iterate".into()))?;
                if x.len() != f.dim() {
                    return Err(CliError::Config(format!(
                        "`point` has {} coordinates but the loss has dimension {}",
                        x.len(),
                        f.dim()
                    )));
                }
                Ok(x)
            }
            BuiltLoss::Matrix(_) => Err(CliError::Config("an explicit matrix cannot be trained".into())),
        }
    }

    fn due(&self, epoch: usize) -> bool {
        self.probes.is_some() && (epoch % self.every == 0 || epoch == self.base.epochs)
    }

    fn run_cell(&self, cell: Cell) -> CliResult<CellRun> {
        let mut cfg = self.base.clone();
        cfg.lambda = cell.lambda;
        cfg.seed = cell.seed;
        let init = self.init(cell.seed)?;
        let probe_root = SeededStream::new(cell.seed).fork(PROBE_TAG);
        let mut frob_stderr = Vec::new();

        let norms = |loss: &dyn LossFunction, x: &[f64], epoch: usize| {
            hessian_norm_estimates(loss, x, self.probes.unwrap_or(1), &probe_root.at_iteration(epoch as u64))
        };
        let outcome = match self.loss {
            BuiltLoss::Mlp { model, train: data, test } => {
                let objective = DatasetObjective { model, data };
                let mut evaluate = |epoch: usize, p: &[f64]| {
                    let mut m = EpochMetrics {
                        train_loss: model.loss(p, data.features.view(), &data.labels)?,
                        test_accuracy: test.as_ref().map(|t| model.accuracy(p, t)).transpose()?,
                        ..Default::default()
                    };
                    let mut se = None;
                    if self.due(epoch) {
                        let sub = self.subsample.as_ref().unwrap_or(data);
                        let (tr, fr) = norms(&model.batch(sub), p, epoch)?;
                        m.trace = Some(tr.value);
                        m.frobenius_sq = Some(fr.value);
                        se = Some(fr.stderr);
                    }
                    frob_stderr.push(se);
                    Ok(m)
                };
                train(&objective, &cfg, init, self.spec.as_ref(), &mut evaluate)?
            }
            BuiltLoss::Function(f) => {
                let loss: &dyn LossFunction = f.as_ref();
                let mut evaluate = |epoch: usize, x: &[f64]| {
                    let mut m = EpochMetrics {
                        train_loss: loss.value(x)?,
                        ..Default::default()
                    };
                    let mut se = None;
                    if self.due(epoch) {
                        let (tr, fr) = norms(loss, x, epoch)?;
                        m.trace = Some(tr.value);
                        m.frobenius_sq = Some(fr.value);
                        se = Some(fr.stderr);
                    }
                    frob_stderr.push(se);
                    Ok(m)
                };
                train(&FullBatch(loss) as &dyn Objective, &cfg, init, self.spec.as_ref(), &mut evaluate)?
            }
            BuiltLoss::Matrix(_) => unreachable!("rejected by init"),
        };
        Ok(CellRun {
            cell,
            outcome,
            frob_stderr,
        })
    }
}

fn architecture(loss: &BuiltLoss, ctx: &Context) -> serde_json::Value {
    match loss {
        BuiltLoss::Mlp { model, .. } => serde_json::to_value(model).unwrap_or_default(),
        _ => json!({ "loss": ctx.loaded.config.loss.name() }),
    }
}

fn build_setup<'a>(ctx: &Context, loss: &'a BuiltLoss, default_probes: Option<usize>) -> CliResult<Setup<'a>> {
    let cfg = &ctx.loaded.config;
    let base = cfg.require_optimizer()?.clone();
    base.validate()?;
    let spec = if base.kind == OptimizerKind::Generic {
        let preset = base.spec.or(cfg.spec).ok_or_else(|| {
            CliError::Config("the generic optimizer needs `optimizer.spec` or `spec`".into())
        })?;
        let mut s = preset.build(loss.dim())?;
        if let Some(m) = &cfg.measure {
            let mu = m.build(loss.dim())?;
            for c in &mut s.components {
                c.measure = mu.clone();
            }
        }
        Some(s)
    } else {
        None
    };
    let probes = cfg.study.probes.or(default_probes);
    if probes == Some(0) {
        return Err(CliError::Config("`study.probes` must be ≥ 1".into()));
    }
    if cfg.study.sharpness_every == 0 {
        return Err(CliError::Config("`study.sharpness_every` must be ≥ 1".into()));
    }
    let subsample = match loss {
        BuiltLoss::Mlp { train, .. } if cfg.study.subsample == 0 => {
            return Err(CliError::Config(format!(
                "`study.subsample` must be ≥ 1 (the training set has {} examples)",
                train.len()
            )))
        }
        BuiltLoss::Mlp { train, .. } => Some(train.head(cfg.study.subsample)),
        _ => None,
    };
    Ok(Setup {
        loss,
        base,
        spec,
        init_point: cfg.point.clone(),
        probes,
        every: cfg.study.sharpness_every,
        subsample,
    })
}

fn cells(ctx: &Context, setup: &Setup, lambdas: &[f64]) -> CliResult<Vec<Cell>> {
    let seeds: Vec<u64> = match (ctx.seed_override, &ctx.loaded.config.study.seeds) {
        (Some(s), _) => vec![s],
        (None, Some(v)) if !v.is_empty() => v.clone(),
        (None, Some(_)) => return Err(CliError::Config("`study.seeds` must not be empty".into())),
        (None, None) => vec![setup.base.seed],
    };
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(CliError::Config(format!("λ must be finite and ≥ 0, got {l}")));
    }
    let mut out = Vec::with_capacity(lambdas.len() * seeds.len());
    for &lambda in lambdas {
        for &seed in &seeds {
            out.push(Cell { lambda, seed });
        }
    }
    Ok(out)
}

/// Runs every cell on the ambient thread pool; results come back in
/// `(λ, seed)` order regardless of scheduling.
fn run_cells(setup: &Setup, cells: &[Cell]) -> CliResult<Vec<CellRun>> {
    cells.par_iter().map(|&c| setup.run_cell(c)).collect()
}

fn record_table(record: &RunRecord) -> CsvTable {
    let mut t = CsvTable::new(&RunRecord::HEADER);
    for r in &record.rows {
        t.push(vec![
            r.epoch.to_string(),
            fmt_f64(r.metrics.train_loss),
            fmt_opt(r.metrics.test_accuracy),
            fmt_opt(r.metrics.trace),
            fmt_opt(r.metrics.frobenius_sq),
            fmt_f64(r.lambda),
            r.seed.to_string(),
        ]);
    }
    t
}

fn timings(runs: &[CellRun]) -> String {
    let cells: Vec<_> = runs
        .iter()
        .map(|r| {
            json!({
                "lambda": r.cell.lambda,
                "seed": r.cell.seed,
                "epoch_seconds": r.outcome.record.epoch_seconds,
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({ "cells": cells })).unwrap_or_default() + "\n"
}

pub fn run_train(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.loaded.config;
    let loss = cfg.loss.build(&ctx.loaded.base_dir)?;
    let setup = build_setup(ctx, &loss, None)?;
    let lambdas = match &cfg.study.lambdas {
        None => vec![setup.base.lambda],
        Some(_) => nonempty(&cfg.study.lambdas, "lambdas")?.to_vec(),
    };
    let cells = cells(ctx, &setup, &lambdas)?;
    let runs = run_cells(&setup, &cells)?;

    let arch = architecture(&loss, ctx);
    let mut written = Vec::new();
    let mut merged = CsvTable::new(&RunRecord::HEADER);
    for run in &runs {
        let table = record_table(&run.outcome.record);
        merged.rows.extend(table.rows.iter().cloned());
        let stem = run.cell.stem();
        written.push(ctx.write_table(&format!("{stem}.csv"), &table)?);
        let header = CheckpointHeader::new(
            arch.clone(),
            ctx.loaded.hash.clone(),
            run.cell.seed,
            run.outcome.iterations,
            run.outcome.params.len(),
        );
        let ckpt = ctx.out_dir.join(format!("{stem}.ckpt"));
        save_checkpoint(&ckpt, &header, &run.outcome.params)?;
        written.push(ckpt);
    }
    written.push(ctx.write_table("train.csv", &merged)?);
    written.push(ctx.write_text("timings.json", &timings(&runs))?);
    Ok(written)
}

fn mean_and_stderr(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

pub fn run_bias_study(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.loaded.config;
    let lambdas = nonempty(&cfg.study.lambdas, "lambdas")?.to_vec();
    let loss = cfg.loss.build(&ctx.loaded.base_dir)?;
    let (model, train_len, test_len): (&MlpModel, usize, Option<usize>) = match &loss {
        BuiltLoss::Mlp { model, train, test } => (model, train.len(), test.as_ref().map(Dataset::len)),
        _ => return Err(CliError::Config("bias-study needs an `mlp` loss".into())),
    };
    let setup = build_setup(ctx, &loss, Some(100))?;
    let cells = cells(ctx, &setup, &lambdas)?;
    let runs = run_cells(&setup, &cells)?;

    let mut table = CsvTable::new(&BIAS_HEADER);
    for run in &runs {
        for (row, se) in run.outcome.record.rows.iter().zip(&run.frob_stderr) {
            table.push(vec![
                fmt_f64(run.cell.lambda),
                run.cell.seed.to_string(),
                row.epoch.to_string(),
                fmt_f64(row.metrics.train_loss),
                fmt_opt(row.metrics.test_accuracy),
                fmt_opt(row.metrics.frobenius_sq),
                fmt_opt(*se),
            ]);
        }
    }

    let mut summary = CsvTable::new(&SUMMARY_HEADER);
    let mut series = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let group: Vec<&CellRun> = runs.iter().filter(|r| r.cell.lambda == lambda).collect();
        let finals: Vec<f64> = group
            .iter()
            .filter_map(|r| r.outcome.record.rows.last().and_then(|row| row.metrics.frobenius_sq))
            .collect();
        let accs: Vec<f64> = group
            .iter()
            .filter_map(|r| r.outcome.record.rows.last().and_then(|row| row.metrics.test_accuracy))
            .collect();
        let (fmean, fse) = if finals.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_and_stderr(&finals);
            (Some(m), s)
        };
        let (amin, amean, amax) = if accs.is_empty() {
            (None, None, None)
        } else {
            (
                Some(accs.iter().copied().fold(f64::INFINITY, f64::min)),
                Some(accs.iter().sum::<f64>() / accs.len() as f64),
                Some(accs.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            )
        };
        summary.push(vec![
            fmt_f64(lambda),
            group.len().to_string(),
            fmt_opt(fmean),
            fmt_opt(fse),
            fmt_opt(amin),
            fmt_opt(amean),
            fmt_opt(amax),
        ]);

        let mut s = Series {
            label: format!("λ = {}", fmt_label(lambda)),
            ..Default::default()
        };
        for epoch in 1..=setup.base.epochs {
            let vals: Vec<f64> = group
                .iter()
                .filter_map(|r| r.outcome.record.rows.get(epoch - 1).and_then(|row| row.metrics.frobenius_sq))
                .collect();
            if vals.is_empty() {
                continue;
            }
            let (m, se) = mean_and_stderr(&vals);
            s.points.push((epoch as f64, m));
            let se = se.unwrap_or(0.0);
            s.band.push((epoch as f64, m - se, m + se));
        }
        series.push(s);
    }
    let chart = LineChart {
        title: "Squared Hessian Frobenius norm during training".into(),
        x_label: "epoch".into(),
        y_label: "‖∇²L‖F² estimate (seed mean ± 1 s.e.)".into(),
        log_x: false,
        log_y: true,
        series,
        notes: vec![format!(
            "{} probes on {} training examples",
            setup.probes.unwrap_or(0),
            setup.subsample.as_ref().map(Dataset::len).unwrap_or(0)
        )],
    };
    let metadata = json!({
        "deviation": BIAS_STUDY_DEVIATION,
        "config_sha256": ctx.loaded.hash,
        "architecture": model,
        "optimizer": setup.base,
        "lambdas": lambdas,
        "seeds": cells.iter().map(|c| c.seed).filter({
            let mut seen = Vec::new();
            move |s| if seen.contains(s) { false } else { seen.push(*s); true }
        }).collect::<Vec<_>>(),
        "train_examples": train_len,
        "test_examples": test_len,
        "probes": setup.probes,
        "probe_examples": setup.subsample.as_ref().map(Dataset::len),
        "sharpness_every": setup.every,
        "y_quantity": "squared Frobenius norm",
    });
    Ok(vec![
        ctx.write_table("bias_study.csv", &table)?,
        ctx.write_table("bias_study_summary.csv", &summary)?,
        ctx.write_chart("bias_study.svg", &chart)?,
        ctx.write_text(
            "metadata.json",
            &(serde_json::to_string_pretty(&metadata).unwrap_or_default() + "\n"),
        )?,
        ctx.write_text("timings.json", &timings(&runs))?,
    ])
}
