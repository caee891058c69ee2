//! Sharpness-aware update directions and the training loop.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use train::{
    train, DatasetObjective, EpochMetrics, FullBatch, Objective, RunRecord, RunRow, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossFunction;
use crate::measures::SeededStream;
use crate::sharpness::{evaluate_regularizer, Estimate, SharpnessSpec, SpecPreset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Sam,
    /// Generic (φ, ψ, μ) step for the configured preset.
    Generic,
    TraceSam,
    FrobSam,
    DetSam,
}

impl OptimizerKind {
    pub fn is_sharpness_aware(&self) -> bool {
        !matches!(self, Self::Sgd)
    }
}

fn default_samples() -> usize {
    1
}
fn default_lambda() -> f64 {
    1.0
}
fn default_batch() -> usize {
    128
}
fn default_decay() -> f64 {
    1.0
}
fn default_det_t() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f64,
    /// Multiplicative learning-rate decay applied every `lr_decay_every` epochs.
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    /// Decay period in epochs; 0 disables the schedule.
    #[serde(default)]
    pub lr_decay_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Preset used by the generic step.
    #[serde(default)]
    pub spec: Option<SpecPreset>,
    /// Half-width of the Det-SAM hypercube.
    #[serde(default = "default_det_t")]
    pub det_t: f64,
}

impl TrainConfig {
    pub fn new(kind: OptimizerKind, lr: f64, epochs: usize) -> Self {
        Self {
            kind,
            lr,
            rho: 0.0,
            samples: default_samples(),
            lambda: default_lambda(),
            epochs,
            batch_size: default_batch(),
            momentum: 0.0,
            lr_decay: default_decay(),
            lr_decay_every: 0,
            seed: 0,
            spec: None,
            det_t: default_det_t(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.kind.is_sharpness_aware() && !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive for {:?}, got {}", self.kind, self.rho));
        }
        if self.samples == 0 {
            return bad("samples must be ≥ 1".into());
        }
        if self.kind == OptimizerKind::FrobSam && self.samples < 2 {
            return bad("Frob-SAM needs samples ≥ 2".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be ≥ 0, got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        if self.kind == OptimizerKind::DetSam && !(self.det_t > 0.0 && self.det_t.is_finite()) {
            return bad(format!("det_t must be positive, got {}", self.det_t));
        }
        if self.kind == OptimizerKind::Generic {
            match &self.spec {
                Some(p) => p.validate()?,
                None => return bad("the generic optimizer needs a spec preset".into()),
            }
        }
        Ok(())
    }

    /// Step size in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_decay_every == 0 {
            self.lr
        } else {
            self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
        }
    }
}

/// `∇L(x) + λ · Σ_ℓ ∂_ℓφ · Σᵢ wᵢ ψ'_ℓ(yᵢ)(∇L(x+ρvᵢ) − ∇L(x))`.
pub fn step_generic(
    loss: &dyn LossFunction,
    x: &[f64],
    spec: &SharpnessSpec,
    cfg: &TrainConfig,
    stream: &SeededStream,
) -> Result<Vec<f64>> {
    if cfg.lambda == 0.0 {
        return loss.grad(x);
    }
    let eval = evaluate_regularizer(loss, x, spec, cfg.rho, stream, cfg.samples, true)?;
    let term = eval.gradient.unwrap_or_default();
    Ok(eval
        .base_gradient
        .iter()
        .zip(&term)
        .map(|(g, t)| g + cfg.lambda * t)
        .collect())
}

/// Trace-SAM: `∇L + λ(1/n)Σᵢ(∇L(x+ρvᵢ) − ∇L(x))`, `vᵢ` uniform on the sphere.
pub fn step_trace(
    loss: &dyn LossFunction,
    x: &[f64],
    cfg: &TrainConfig,
    stream: &SeededStream,
) -> Result<Vec<f64>> {
    let g0 = loss.grad(x)?;
    if cfg.lambda == 0.0 {
        return Ok(g0);
    }
    let spec = SpecPreset::Trace.build(x.len())?;
    let samples = spec.sample(stream, cfg.samples, None)?;
    let n = cfg.samples as f64;
    let mut acc = vec![0.0; x.len()];
    for v in samples[0].points() {
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + cfg.rho * b).collect();
        let gp = loss.grad(&xp)?;
        for ((a, p), b) in acc.iter_mut().zip(&gp).zip(&g0) {
            *a += p - b;
        }
    }
    Ok(g0
        .iter()
        .zip(&acc)
        .map(|(g, a)| g + cfg.lambda * a / n)
        .collect())
}

/// Frob-SAM with the unbiased cross-covariance of `L(x+ρv)` and `∇L(x+ρv)`,
/// `v ∼ N(0, I)`.
pub fn step_frob(
    loss: &dyn LossFunction,
    x: &[f64],
    cfg: &TrainConfig,
    stream: &SeededStream,
) -> Result<Vec<f64>> {
    if cfg.samples < 2 {
        return Err(Error::InvalidArgument("Frob-SAM needs samples ≥ 2".into()));
    }
    let (_, g0) = loss.value_and_grad(x)?;
    if cfg.lambda == 0.0 {
        return Ok(g0);
    }
    let spec = SpecPreset::Frobenius.build(x.len())?;
    let samples = spec.sample(stream, cfg.samples, None)?;
    let mut values = Vec::with_capacity(cfg.samples);
    let mut grads = Vec::with_capacity(cfg.samples);
    for v in samples[0].points() {
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + cfg.rho * b).collect();
        let (l, g) = loss.value_and_grad(&xp)?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed point {xp:?}")));
        }
        values.push(l);
        grads.push(g);
    }
    let n = cfg.samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    // Σ(Lᵢ − L̄)(∇Lᵢ − ∇L(x)) equals ΣLᵢ∇Lᵢ − (1/n)ΣLᵢΣ∇Lᵢ and cancels less.
    let mut cov = vec![0.0; x.len()];
    for (l, g) in values.iter().zip(&grads) {
        let c = l - mean;
        for ((o, gi), gb) in cov.iter_mut().zip(g).zip(&g0) {
            *o += c * (gi - gb);
        }
    }
    let scale = cfg.lambda * 4.0 / ((n - 1.0) * cfg.rho * cfg.rho);
    Ok(g0.iter().zip(&cov).map(|(g, c)| g + scale * c).collect())
}

/// Det-SAM direction together with the determinant estimate at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetStep {
    pub direction: Vec<f64>,
    pub sharpness: Estimate,
}

pub fn step_det(
    loss: &dyn LossFunction,
    x: &[f64],
    cfg: &TrainConfig,
    stream: &SeededStream,
) -> Result<DetStep> {
    let spec = SpecPreset::Determinant { t: cfg.det_t }.build(x.len())?;
    let with_grad = cfg.lambda != 0.0;
    let eval = evaluate_regularizer(loss, x, &spec, cfg.rho, stream, cfg.samples, with_grad)?;
    let direction = match eval.gradient {
        Some(term) => eval
            .base_gradient
            .iter()
            .zip(&term)
            .map(|(g, t)| g + cfg.lambda * t)
            .collect(),
        None => eval.base_gradient,
    };
    Ok(DetStep {
        direction,
        sharpness: eval.estimate,
    })
}

/// SAM: `∇L(x + ρ∇L(x)/‖∇L(x)‖)`, or `∇L(x)` at a critical point.
pub fn step_sam(loss: &dyn LossFunction, x: &[f64], rho: f64) -> Result<Vec<f64>> {
    let g = loss.grad(x)?;
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || rho == 0.0 {
        return Ok(g);
    }
    let xp: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + rho * b / norm).collect();
    loss.grad(&xp)
}

/// Update direction for the configured optimizer.
pub fn direction(
    loss: &dyn LossFunction,
    x: &[f64],
    cfg: &TrainConfig,
    spec: Option<&SharpnessSpec>,
    stream: &SeededStream,
) -> Result<Vec<f64>> {
    match cfg.kind {
        OptimizerKind::Sgd => loss.grad(x),
        OptimizerKind::Sam => {
            if cfg.lambda == 0.0 {
                loss.grad(x)
            } else {
                step_sam(loss, x, cfg.rho)
            }
        }
        OptimizerKind::Generic => {
            let spec = spec.ok_or_else(|| {
                Error::InvalidArgument("the generic optimizer needs a sharpness spec".into())
            })?;
            step_generic(loss, x, spec, cfg, stream)
        }
        OptimizerKind::TraceSam => step_trace(loss, x, cfg, stream),
        OptimizerKind::FrobSam => step_frob(loss, x, cfg, stream),
        OptimizerKind::DetSam => Ok(step_det(loss, x, cfg, stream)?.direction),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymmetricMatrix;
    use crate::losses::QuadraticLoss;

    fn cfg(kind: OptimizerKind) -> TrainConfig {
        TrainConfig {
            rho: 0.1,
            samples: 4,
            ..TrainConfig::new(kind, 0.1, 1)
        }
    }

    #[test]
    fn sam_examples() {
        let q = QuadraticLoss::centered(SymmetricMatrix::from_diagonal(&[1.0, 0.0]).unwrap()).unwrap();
        let g = step_sam(&q, &[1.0, 0.0], 0.1).unwrap();
        assert!((g[0] - 1.1).abs() < 1e-15 && g[1] == 0.0);
        assert_eq!(step_sam(&q, &[0.0, 0.0], 0.1).unwrap(), vec![0.0, 0.0]);
        assert_eq!(step_sam(&q, &[1.0, 0.0], 0.0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_lambda_is_plain_gradient() {
        let q = QuadraticLoss::centered(SymmetricMatrix::from_diagonal(&[2.0, 3.0]).unwrap()).unwrap();
        let x = [0.3, -0.7];
        let g = q.grad(&x).unwrap();
        let st = SeededStream::new(1);
        for kind in [
            OptimizerKind::FrobSam,
            OptimizerKind::DetSam,
            OptimizerKind::TraceSam,
            OptimizerKind::Sam,
        ] {
            let c = TrainConfig {
                lambda: 0.0,
                ..cfg(kind)
            };
            assert_eq!(direction(&q, &x, &c, None, &st).unwrap(), g, "{kind:?}");
        }
        let spec = SpecPreset::Frobenius.build(2).unwrap();
        let c = TrainConfig {
            lambda: 0.0,
            ..cfg(OptimizerKind::Generic)
        };
        assert_eq!(step_generic(&q, &x, &spec, &c, &st).unwrap(), g);
    }

    #[test]
    fn constant_loss_gives_zero_direction() {
        let c0 = QuadraticLoss::constant(3, 2.5).unwrap();
        let x = [1.0, 2.0, 3.0];
        let st = SeededStream::new(2);
        for preset in [SpecPreset::Trace, SpecPreset::Frobenius] {
            let spec = preset.build(3).unwrap();
            let g = step_generic(&c0, &x, &spec, &cfg(OptimizerKind::Generic), &st).unwrap();
            assert_eq!(g, vec![0.0; 3]);
        }
        let d = step_det(&c0, &x, &cfg(OptimizerKind::DetSam), &st).unwrap();
        assert_eq!(d.direction, vec![0.0; 3]);
        assert_eq!(step_frob(&c0, &x, &cfg(OptimizerKind::FrobSam), &st).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn frob_needs_two_samples() {
        let c0 = QuadraticLoss::constant(2, 0.0).unwrap();
        let c = TrainConfig {
            samples: 1,
            ..cfg(OptimizerKind::FrobSam)
        };
        assert!(step_frob(&c0, &[0.0, 0.0], &c, &SeededStream::new(0)).is_err());
        assert!(c.validate().is_err());
    }

    #[test]
    fn schedule() {
        let c = TrainConfig {
            lr_decay: 0.1,
            lr_decay_every: 2,
            ..TrainConfig::new(OptimizerKind::Sgd, 1.0, 10)
        };
        assert_eq!(c.lr_at(0), 1.0);
        assert_eq!(c.lr_at(1), 1.0);
        assert!((c.lr_at(2) - 0.1).abs() < 1e-15);
        assert!((c.lr_at(5) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn config_parses_with_defaults() {
        let c: TrainConfig =
            serde_json::from_str(r#"{"kind":"frob-sam","lr":0.01,"rho":0.01,"samples":2,"epochs":3}"#)
                .unwrap();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.lambda, 1.0);
        c.validate().unwrap();
        assert!(serde_json::from_str::<TrainConfig>(r#"{"kind":"sgd","lr":0.1,"epochs":1,"bogus":1}"#).is_err());
    }
}
