use std::path::PathBuf;

use sharpness_core::linalg::{quadratic_form, symmetric_eig, Spectrum, SymmetricMatrix};
use sharpness_core::universality::{
    chebyshev_nodes, equispaced_nodes, node_bound, probe_hessian, probe_hessian_fd, probe_moments,
    reconstruct_eigenvalues, reconstruct_hessian, MomentSource, ProbeMode,
};

use super::Context;
use crate::config::{BuiltLoss, NodePlacement};
use crate::error::{CliError, CliResult};
use crate::table::{fmt_f64, CsvTable};

pub const HEADER: [&str; 5] = ["quantity", "index", "true", "reconstructed", "abs_error"];

/// Keeps `2σλ < 1` for every node so that sampled moments have finite variance.
const MC_NODE_LIMIT: f64 = 0.45;

fn nodes(placement: NodePlacement, d: usize, eps: f64, frac: f64) -> Vec<f64> {
    match placement {
        NodePlacement::Equispaced => equispaced_nodes(d, frac * eps),
        NodePlacement::Chebyshev => chebyshev_nodes(d, eps, frac),
    }
}

fn radius(s: &Spectrum) -> f64 {
    s.values.iter().fold(0.0_f64, |m, l| m.max(l.abs()))
}

fn push_vector(table: &mut CsvTable, quantity: &str, truth: &[f64], got: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for (k, (t, r)) in truth.iter().zip(got).enumerate() {
        let e = (t - r).abs();
        worst = worst.max(e);
        table.push(vec![quantity.into(), k.to_string(), fmt_f64(*t), fmt_f64(*r), fmt_f64(e)]);
    }
    worst
}

fn push_max(table: &mut CsvTable, quantity: &str, worst: f64) {
    table.push(vec![
        format!("max_error:{quantity}"),
        String::new(),
        String::new(),
        String::new(),
        fmt_f64(worst),
    ]);
}

pub fn run(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.loaded.config;
    let study = &cfg.study;
    if !(study.node_fraction > 0.0 && study.node_fraction < 1.0) {
        return Err(CliError::Config(format!(
            "`study.node_fraction` must lie in (0, 1), got {}",
            study.node_fraction
        )));
    }
    let built = cfg.loss.build(&ctx.loaded.base_dir)?;
    let (h, _) = built.hessian_at(cfg.point.as_deref())?;
    let d = h.dim();
    let spectrum = symmetric_eig(&h)?;
    let r = radius(&spectrum);
    let eps = node_bound(r);

    let mut table = CsvTable::new(&HEADER);
    let sigma = nodes(study.node_placement, d, eps, study.node_fraction);
    let probe = probe_moments(MomentSource::Spectrum(&spectrum), &sigma, ProbeMode::Exact)?;
    let eig = reconstruct_eigenvalues(&probe)?;
    let worst = push_vector(&mut table, "eigenvalue", &spectrum.values, &eig);
    push_max(&mut table, "eigenvalue", worst);

    if let Some(n) = study.mc_samples {
        let frac = if r > 0.0 {
            study.node_fraction.min(MC_NODE_LIMIT * (r + 1.0) / r)
        } else {
            study.node_fraction
        };
        let sigma = nodes(study.node_placement, d, eps, frac);
        let oracle = |v: &[f64]| quadratic_form(&h, v);
        let probe = probe_moments(
            MomentSource::Quadratic { oracle: &oracle, dim: d },
            &sigma,
            ProbeMode::MonteCarlo {
                n,
                stream: ctx.stream(),
            },
        )?;
        let eig = reconstruct_eigenvalues(&probe)?;
        let worst = push_vector(&mut table, "eigenvalue_mc", &spectrum.values, &eig);
        push_max(&mut table, "eigenvalue_mc", worst);
    }

    let probes = match &built {
        BuiltLoss::Function(f) => probe_hessian_fd(f.as_ref(), cfg.require_point()?)?,
        _ => probe_hessian(&|v| quadratic_form(&h, v), d)?,
    };
    let rec = reconstruct_hessian(&probes)?;
    let worst = push_entries(&mut table, &h, &rec);
    push_max(&mut table, "hessian_entry", worst);
    Ok(vec![ctx.write_table("universality.csv", &table)?])
}

fn push_entries(table: &mut CsvTable, truth: &SymmetricMatrix, got: &SymmetricMatrix) -> f64 {
    let d = truth.dim();
    let mut worst = 0.0_f64;
    for i in 0..d {
        for j in i..d {
            let (t, r) = (truth.get(i, j), got.get(i, j));
            let e = (t - r).abs();
            worst = worst.max(e);
            table.push(vec![
                "hessian_entry".into(),
                format!("{i}:{j}"),
                fmt_f64(t),
                fmt_f64(r),
                fmt_f64(e),
            ]);
        }
    }
    worst
}
