use std::path::PathBuf;

use sharpness_core::linalg::{quadratic_form, SymmetricMatrix};
use sharpness_core::sharpness::{estimate_regularizer, estimate_sharpness, SharpnessSpec};

use super::{linear_fit, Context};
use crate::config::nonempty;
use crate::error::{CliError, CliResult};
use crate::svg::{LineChart, Series};
use crate::table::{fmt_f64, CsvTable};

pub const HEADER: [&str; 5] = ["rho", "estimate", "exact", "abs_error", "stderr"];

/// The spec value at the Hessian. Closed form where the measure is the
/// preset's own; otherwise a large shared-sample Monte-Carlo estimate.
fn exact_value(ctx: &Context, spec: &SharpnessSpec, h: &SymmetricMatrix) -> CliResult<f64> {
    let cfg = &ctx.loaded.config;
    if cfg.measure.is_none() {
        let spectrum = sharpness_core::linalg::symmetric_eig(h)?;
        return Ok(sharpness_core::sharpness::measure_exact(&spectrum, &cfg.require_spec()?)?);
    }
    let n = cfg.study.samples.max(2);
    Ok(estimate_sharpness(&|v| quadratic_form(h, v), spec, &ctx.stream().fork(u64::MAX), n)?.value)
}

pub fn run(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.loaded.config;
    let rhos = nonempty(&cfg.study.rhos, "rhos")?;
    if let Some(r) = rhos.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(CliError::Config(format!("every ρ must be positive, got {r}")));
    }
    let built = cfg.loss.build(&ctx.loaded.base_dir)?;
    let loss = built.function()?;
    let x = cfg.require_point()?;
    let spec = cfg.build_spec(loss.dim())?;
    let (h, _) = built.hessian_at(Some(x))?;
    let exact = exact_value(ctx, &spec, &h)?;
    let n = cfg.study.samples;
    let root = ctx.stream();

    let mut table = CsvTable::new(&HEADER);
    let mut errors = Vec::with_capacity(rhos.len());
    for (k, &rho) in rhos.iter().enumerate() {
        let est = estimate_regularizer(loss, x, &spec, rho, &root.fork(k as u64), n)?;
        let err = (est.value - exact).abs();
        errors.push((rho, err));
        table.push(vec![
            fmt_f64(rho),
            fmt_f64(est.value),
            fmt_f64(exact),
            fmt_f64(err),
            fmt_f64(est.stderr),
        ]);
    }
    let slope = log_log_slope(&errors);
    let chart = LineChart {
        title: format!("Regularizer error vs ρ ({})", spec.name),
        x_label: "ρ".into(),
        y_label: "|R̂ρ − S|".into(),
        log_x: true,
        log_y: true,
        series: vec![Series {
            label: "abs error".into(),
            points: errors,
            band: Vec::new(),
        }],
        notes: vec![match slope {
            Some(s) => format!("fitted log-log slope: {s:.3}"),
            None => "fitted log-log slope: undefined".into(),
        }],
    };
    Ok(vec![
        ctx.write_table("estimate.csv", &table)?,
        ctx.write_chart("estimate.svg", &chart)?,
    ])
}

/// Least-squares slope of `log err` against `log ρ`, over positive errors.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(r, e)| *r > 0.0 && *e > 0.0)
        .map(|(r, e)| (r.ln(), e.ln()))
        .collect();
    linear_fit(&logs).map(|(slope, _)| slope)
}
