use std::path::PathBuf;

use sharpness_core::linalg::{quadratic_form, symmetric_eig};
use sharpness_core::sharpness::{estimate_sharpness, measure_exact, MomentMeasure, SpecPreset};

use super::Context;
use crate::config::HessianSource;
use crate::error::{CliError, CliResult};
use crate::table::{fmt_f64, CsvTable};

pub const HEADER: [&str; 6] = ["preset", "exact", "estimate", "stderr", "zscore", "note"];

fn default_presets() -> Vec<SpecPreset> {
    vec![
        SpecPreset::Trace,
        SpecPreset::Frobenius,
        SpecPreset::Determinant { t: 5.0 },
        SpecPreset::Moment {
            n: 2,
            measure: MomentMeasure::Gaussian,
        },
        SpecPreset::Charpoly { sigma: 0.1 },
    ]
}

fn preset_label(p: &SpecPreset) -> String {
    match *p {
        SpecPreset::Trace | SpecPreset::Frobenius => p.name().to_string(),
        SpecPreset::Determinant { t } => format!("determinant(t={t})"),
        SpecPreset::Moment { n, measure } => format!("moment(n={n},{measure:?})").to_lowercase(),
        SpecPreset::Charpoly { sigma } => format!("charpoly(sigma={sigma})"),
    }
}

pub fn run(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.loaded.config;
    if cfg.measure.is_some() {
        return Err(CliError::Config(
            "oracle compares each preset against its own measure; remove `measure`".into(),
        ));
    }
    let loss = cfg.loss.build(&ctx.loaded.base_dir)?;
    let (h, source) = loss.hessian_at(cfg.point.as_deref())?;
    let spectrum = symmetric_eig(&h)?;
    let presets = cfg.presets.clone().unwrap_or_else(default_presets);
    let n = cfg.study.samples;
    let root = ctx.stream();

    let mut table = CsvTable::new(&HEADER);
    for (k, preset) in presets.iter().enumerate() {
        let mut note = match source {
            HessianSource::FiniteDifference => "finite-difference Hessian".to_string(),
            _ => String::new(),
        };
        let exact = measure_exact(&spectrum, preset);
        let est = preset.build(h.dim()).map_err(CliError::from).and_then(|spec| {
            estimate_sharpness(&|v| quadratic_form(&h, v), &spec, &root.fork(k as u64), n)
                .map_err(CliError::from)
        });
        let add = |note: &mut String, msg: String| {
            if !note.is_empty() {
                note.push_str("; ");
            }
            note.push_str(&msg);
        };
        let exact_s = match &exact {
            Ok(v) => fmt_f64(*v),
            Err(e) => {
                add(&mut note, format!("exact: {e}"));
                String::new()
            }
        };
        let (est_s, se_s) = match &est {
            Ok(e) => (fmt_f64(e.value), fmt_f64(e.stderr)),
            Err(e) => {
                add(&mut note, format!("estimate: {e}"));
                (String::new(), String::new())
            }
        };
        let z = match (&exact, &est) {
            (Ok(x), Ok(e)) if e.stderr > 0.0 => fmt_f64(e.zscore(*x).abs()),
            _ => String::new(),
        };
        table.push(vec![preset_label(preset), exact_s, est_s, se_s, z, note]);
    }
    Ok(vec![ctx.write_table("oracle.csv", &table)?])
}
