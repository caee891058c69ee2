use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use sharpness_core::linalg::{quadratic_form, symmetric_eig, SymmetricMatrix};
use sharpness_core::losses::LossFunction;
use sharpness_core::sharpness::{estimate_sharpness_with_samples, measure_exact, SharpnessSpec, SpecPreset};

use super::Context;
use crate::config::{BuiltLoss, LossConfig};
use crate::error::{CliError, CliResult};
use crate::table::{fmt_f64, fmt_label, fmt_opt, fmt_point, CsvTable};

pub const HEADER: [&str; 8] = [
    "transform",
    "point",
    "S_at_x",
    "S_at_transformed_x",
    "coupled_abs_diff",
    "analytic_at_x",
    "analytic_at_transformed_x",
    "analytic_abs_diff",
];

const RANDOM_TAG: u64 = 0x7a2d;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Rescaling,
    Rotation,
}

/// A linear map `x ↦ Tx` under which the loss is invariant.
#[derive(Clone)]
struct Transform {
    label: String,
    dim: usize,
    /// Row-major.
    m: Vec<f64>,
}

impl Transform {
    fn rescaling(k: f64) -> Self {
        Self {
            label: format!("rescale(k={})", fmt_label(k)),
            dim: 2,
            m: vec![k, 0.0, 0.0, 1.0 / k],
        }
    }

    /// Rotation by `deg` degrees in the plane of the first two coordinates.
    fn plane_rotation(dim: usize, deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = 1.0;
        }
        m[0] = c;
        m[1] = -s;
        m[dim] = s;
        m[dim + 1] = c;
        Self {
            label: format!("rotate(deg={})", fmt_label(deg)),
            dim,
            m,
        }
    }

    /// Haar-like random orthogonal matrix by Gram–Schmidt on Gaussian columns.
    fn random_rotation(dim: usize, rng: &mut impl Rng, index: usize) -> Self {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while cols.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= dot * ci;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                cols.push(v.iter().map(|a| a / norm).collect());
            }
        }
        let mut m = vec![0.0; dim * dim];
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[i * dim + j] = *v;
            }
        }
        Self {
            label: format!("rotate(random#{index})"),
            dim,
            m,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.m[i * self.dim + j] * x[j]).sum())
            .collect()
    }
}

/// Closed-form preset value at `h` under the preset's own measure.
fn analytic(h: &SymmetricMatrix, preset: &SpecPreset) -> Option<f64> {
    symmetric_eig(h).ok().and_then(|s| measure_exact(&s, preset).ok())
}

fn exact_hessian(loss: &dyn LossFunction, x: &[f64]) -> CliResult<SymmetricMatrix> {
    loss.exact_hessian(x)
        .ok_or_else(|| CliError::Config("invariance-check needs an exact Hessian".into()))?
        .map_err(CliError::from)
}

fn check_measures(spec: &SharpnessSpec, family: Family) -> CliResult<()> {
    for (_, mu) in spec.groups() {
        match family {
            Family::Rescaling if !mu.is_scale_invariant() => {
                return Err(CliError::Config(format!(
                    "refusing a rescaling check: the {mu:?} measure is not scale-invariant \
                     (is_scale_invariant() = false); use a hypercube measure"
                )))
            }
            Family::Rotation if mu.is_scale_invariant() => {
                return Err(CliError::Config(format!(
                    "refusing a rotation check: the {mu:?} measure is not rotation-invariant; \
                     use a gaussian or sphere measure"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn run(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.loaded.config;
    let study = &cfg.study;
    let family = match cfg.loss {
        LossConfig::ScaleInvToy {} => Family::Rescaling,
        LossConfig::RotInvToy { .. } => Family::Rotation,
        _ => {
            return Err(CliError::Config(
                "invariance-check needs scale-inv-toy (rescaling) or rot-inv-toy (rotation)".into(),
            ))
        }
    };
    let built = cfg.loss.build(&ctx.loaded.base_dir)?;
    let loss = match &built {
        BuiltLoss::Function(f) => f.as_ref(),
        _ => unreachable!("toy losses build to functions"),
    };
    let d = loss.dim();
    if family == Family::Rotation && d < 2 {
        return Err(CliError::Config("rotations need rot-inv-toy with dim ≥ 2".into()));
    }
    let preset = cfg.require_spec()?;
    let spec = cfg.build_spec(d)?;
    check_measures(&spec, family)?;

    let points: Vec<Vec<f64>> = match (&study.points, &cfg.point) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => vec![p.clone()],
        (None, None) => Vec::new(),
    };
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(CliError::Config(format!(
            "point {p:?} has {} coordinates; the loss has dimension {d}",
            p.len()
        )));
    }
    let transforms: Vec<Transform> = match family {
        Family::Rescaling => {
            let ks = study.scales.clone().unwrap_or_else(|| vec![2.0]);
            if let Some(k) = ks.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
                return Err(CliError::Config(format!("rescaling factors must be positive, got {k}")));
            }
            ks.into_iter().map(Transform::rescaling).collect()
        }
        Family::Rotation => study
            .angles_deg
            .clone()
            .unwrap_or_else(|| vec![30.0])
            .into_iter()
            .map(|a| Transform::plane_rotation(d, a))
            .collect(),
    };
    let mut pairs: Vec<(Transform, Vec<f64>)> = Vec::new();
    for t in &transforms {
        for p in &points {
            pairs.push((t.clone(), p.clone()));
        }
    }
    let root = ctx.stream();
    for i in 0..study.random_pairs {
        let mut rng = root.fork(RANDOM_TAG).rng(0, i as u64);
        let (t, x) = match family {
            Family::Rescaling => {
                let k = 10f64.powf(rng.random_range(-1.0..1.0));
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut t = Transform::rescaling(k);
                t.label = format!("rescale(random#{i},k={})", fmt_label(k));
                (t, x)
            }
            Family::Rotation => {
                let scale = 1.0 / (d as f64).sqrt();
                let x: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                (Transform::random_rotation(d, &mut rng, i), x)
            }
        };
        pairs.push((t, x));
    }
    if pairs.is_empty() {
        return Err(CliError::Config(
            "no (point, transform) pairs: give `point`, `study.points` or `study.random_pairs`".into(),
        ));
    }

    let n = study.samples;
    let mut table = CsvTable::new(&HEADER);
    for (k, (t, x)) in pairs.iter().enumerate() {
        let tx = t.apply(x);
        let hx = exact_hessian(loss, x)?;
        let htx = exact_hessian(loss, &tx)?;
        let groups = spec.sample(&root.fork(k as u64), n, None)?;
        // Change of variables: v at x corresponds to Tv at Tx, with the same weight.
        let moved = groups
            .iter()
            .map(|g| g.map_points(|v| t.apply(v)))
            .collect::<sharpness_core::Result<Vec<_>>>()?;
        let s_x = estimate_sharpness_with_samples(&|v| quadratic_form(&hx, v), &spec, &groups)?.value;
        let s_tx = estimate_sharpness_with_samples(&|v| quadratic_form(&htx, v), &spec, &moved)?.value;
        let a_x = analytic(&hx, &preset);
        let a_tx = analytic(&htx, &preset);
        let a_diff = a_x.zip(a_tx).map(|(a, b)| (a - b).abs());
        table.push(vec![
            t.label.clone(),
            fmt_point(x),
            fmt_f64(s_x),
            fmt_f64(s_tx),
            fmt_f64((s_x - s_tx).abs()),
            fmt_opt(a_x),
            fmt_opt(a_tx),
            fmt_opt(a_diff),
        ]);
    }
    Ok(vec![ctx.write_table("invariance.csv", &table)?])
}
