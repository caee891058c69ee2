//! The (φ, ψ, μ) sharpness family: specifications, closed-form spectral
//! oracles, and Monte-Carlo estimators of the measure `S` and of the
//! finite-ρ regularizer `R_ρ` together with its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Spectrum;
use crate::losses::LossFunction;
use crate::measures::{MeasureSpec, SeededStream, WeightedSamples};

/// Largest admissible `|σu|` inside an exponential ψ.
pub const EXP_ARG_LIMIT: f64 = 700.0;

/// Smallest admissible integral mean under an inverse-square φ.
pub const INVERSE_SQUARE_FLOOR: f64 = 1e-30;

/// Inner map ψ, applied to `½vᵀHv` (or its finite-ρ surrogate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarMap {
    Identity,
    Power(u32),
    /// `exp(σu)`
    Exp(f64),
}

impl ScalarMap {
    pub fn eval(&self, u: f64) -> Result<f64> {
        match *self {
            Self::Identity => Ok(u),
            Self::Power(n) => Ok(u.powi(n as i32)),
            Self::Exp(s) => Ok(checked_exp(s * u)?),
        }
    }

    pub fn derivative(&self, u: f64) -> Result<f64> {
        match *self {
            Self::Identity => Ok(1.0),
            Self::Power(0) => Ok(0.0),
            Self::Power(n) => Ok(n as f64 * u.powi(n as i32 - 1)),
            Self::Exp(s) => Ok(s * checked_exp(s * u)?),
        }
    }
}

fn checked_exp(arg: f64) -> Result<f64> {
    if !arg.is_finite() || arg.abs() > EXP_ARG_LIMIT {
        return Err(Error::Domain(format!(
            "exponential argument {arg:e} exceeds ±{EXP_ARG_LIMIT}"
        )));
    }
    Ok(arg.exp())
}

/// Outer map φ: ℝ^m → ℝ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OuterMap {
    /// `φ(t) = t`
    Identity,
    /// `φ(t₁, t₂) = 2(t₂ − t₁²)`
    Variance,
    /// `φ(u) = c/u²`
    InverseSquare { scale: f64 },
}

impl OuterMap {
    pub fn arity(&self) -> usize {
        match self {
            Self::Variance => 2,
            _ => 1,
        }
    }

    pub fn eval(&self, t: &[f64]) -> Result<f64> {
        match *self {
            Self::Identity => Ok(t[0]),
            Self::Variance => Ok(2.0 * (t[1] - t[0] * t[0])),
            Self::InverseSquare { scale } => {
                guard_floor(t[0])?;
                Ok(scale / (t[0] * t[0]))
            }
        }
    }

    pub fn gradient(&self, t: &[f64]) -> Result<Vec<f64>> {
        match *self {
            Self::Identity => Ok(vec![1.0]),
            Self::Variance => Ok(vec![-4.0 * t[0], 2.0]),
            Self::InverseSquare { scale } => {
                guard_floor(t[0])?;
                Ok(vec![-2.0 * scale / (t[0] * t[0] * t[0])])
            }
        }
    }
}

fn guard_floor(u: f64) -> Result<()> {
    if u.is_finite() && u >= INVERSE_SQUARE_FLOOR {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "integral mean {u:e} is below the floor {INVERSE_SQUARE_FLOOR:e} of an inverse-square φ"
        )))
    }
}

/// One `(ψ_ℓ, μ_ℓ)` pair. Components with equal `group` share samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub psi: ScalarMap,
    pub measure: MeasureSpec,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessSpec {
    pub name: String,
    pub phi: OuterMap,
    pub components: Vec<Component>,
}

impl SharpnessSpec {
    pub fn new(name: impl Into<String>, phi: OuterMap, components: Vec<Component>) -> Result<Self> {
        if components.is_empty() || components.len() != phi.arity() {
            return Err(Error::InvalidArgument(format!(
                "φ takes {} arguments but {} components were given",
                phi.arity(),
                components.len()
            )));
        }
        let d = components[0].measure.dim();
        for c in &components {
            check_dim(d, c.measure.dim())?;
        }
        let mut seen: Vec<(usize, &MeasureSpec)> = Vec::new();
        for c in &components {
            match seen.iter().find(|(g, _)| *g == c.group) {
                Some((_, m)) if *m != &c.measure => {
                    return Err(Error::InvalidArgument(format!(
                        "components in sample group {} use different measures",
                        c.group
                    )))
                }
                Some(_) => {}
                None => seen.push((c.group, &c.measure)),
            }
        }
        Ok(Self {
            name: name.into(),
            phi,
            components,
        })
    }

    /// `m = 1`, `φ = ψ = id`: the average-direction sharpness under `μ`.
    pub fn average(measure: MeasureSpec) -> Self {
        Self {
            name: "custom".into(),
            phi: OuterMap::Identity,
            components: vec![Component {
                psi: ScalarMap::Identity,
                measure,
                group: 0,
            }],
        }
    }

    /// The single-point measure on the normalized gradient; with `n = 1`
    /// the generic step reproduces SAM.
    pub fn sam(dim: usize) -> Self {
        let mut s = Self::average(MeasureSpec::GradientDirection { dim });
        s.name = "sam".into();
        s
    }

    pub fn dim(&self) -> usize {
        self.components[0].measure.dim()
    }

    pub fn m(&self) -> usize {
        self.components.len()
    }

    /// Distinct sample groups, in first-appearance order, with their measure.
    pub fn groups(&self) -> Vec<(usize, &MeasureSpec)> {
        let mut out: Vec<(usize, &MeasureSpec)> = Vec::new();
        for c in &self.components {
            if !out.iter().any(|(g, _)| *g == c.group) {
                out.push((c.group, &c.measure));
            }
        }
        out
    }

    /// Draws one sample set per group; group `g` reads stream component `g`.
    pub fn sample(
        &self,
        stream: &SeededStream,
        n: usize,
        context: Option<&[f64]>,
    ) -> Result<Vec<WeightedSamples>> {
        self.groups()
            .into_iter()
            .map(|(g, mu)| {
                let ctx = if mu.needs_context() { context } else { None };
                if mu.needs_context() && ctx.is_none() {
                    return Err(Error::InvalidArgument(
                        "gradient-direction measure needs a gradient context".into(),
                    ));
                }
                mu.sample(stream, g as u64, n, ctx)
            })
            .collect()
    }

    fn group_index(&self, group: usize) -> usize {
        self.groups()
            .iter()
            .position(|(g, _)| *g == group)
            .expect("component group is registered")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentMeasure {
    Sphere,
    Gaussian,
}

/// Named rows of the sharpness table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase", try_from = "PresetFields")]
pub enum SpecPreset {
    Trace,
    Frobenius,
    Determinant { t: f64 },
    Moment { n: u32, measure: MomentMeasure },
    Charpoly { sigma: f64 },
}

/// Flat wire form; rejects parameters that do not belong to the preset.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFields {
    preset: String,
    t: Option<f64>,
    n: Option<u32>,
    measure: Option<MomentMeasure>,
    sigma: Option<f64>,
}

impl TryFrom<PresetFields> for SpecPreset {
    type Error = String;

    fn try_from(f: PresetFields) -> std::result::Result<Self, String> {
        let given = [
            ("t", f.t.is_some()),
            ("n", f.n.is_some()),
            ("measure", f.measure.is_some()),
            ("sigma", f.sigma.is_some()),
        ];
        let allowed: &[&str] = match f.preset.as_str() {
            "trace" | "frobenius" => &[],
            "determinant" => &["t"],
            "moment" => &["n", "measure"],
            "charpoly" => &["sigma"],
            other => return Err(format!("unknown preset {other:?}")),
        };
        if let Some((k, _)) = given.iter().find(|(k, g)| *g && !allowed.contains(k)) {
            return Err(format!("field {k:?} does not apply to preset {:?}", f.preset));
        }
        let need = |k: &str| format!("preset {:?} requires field {k:?}", f.preset);
        Ok(match f.preset.as_str() {
            "trace" => Self::Trace,
            "frobenius" => Self::Frobenius,
            "determinant" => Self::Determinant {
                t: f.t.ok_or_else(|| need("t"))?,
            },
            "moment" => Self::Moment {
                n: f.n.ok_or_else(|| need("n"))?,
                measure: f.measure.ok_or_else(|| need("measure"))?,
            },
            _ => Self::Charpoly {
                sigma: f.sigma.ok_or_else(|| need("sigma"))?,
            },
        })
    }
}

impl SpecPreset {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Trace => "trace",
            Self::Frobenius => "frobenius",
            Self::Determinant { .. } => "determinant",
            Self::Moment { .. } => "moment",
            Self::Charpoly { .. } => "charpoly",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Determinant { t } if !(t > 0.0 && t.is_finite()) => Err(Error::InvalidArgument(
                format!("determinant half-width t must be positive, got {t}"),
            )),
            Self::Charpoly { sigma } if !sigma.is_finite() => {
                Err(Error::InvalidArgument("charpoly σ must be finite".into()))
            }
            Self::Moment { n: 0, .. } => {
                Err(Error::InvalidArgument("moment degree must be ≥ 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, dim: usize) -> Result<SharpnessSpec> {
        self.validate()?;
        let single = |psi, measure| Component {
            psi,
            measure,
            group: 0,
        };
        let (phi, components) = match *self {
            Self::Trace => (
                OuterMap::Identity,
                vec![single(ScalarMap::Identity, MeasureSpec::sphere(dim))],
            ),
            Self::Frobenius => (
                OuterMap::Variance,
                vec![
                    single(ScalarMap::Identity, MeasureSpec::gaussian(dim)),
                    single(ScalarMap::Power(2), MeasureSpec::gaussian(dim)),
                ],
            ),
            Self::Determinant { t } => (
                OuterMap::InverseSquare {
                    scale: (2.0 * std::f64::consts::PI).powi(dim as i32),
                },
                vec![single(ScalarMap::Exp(-1.0), MeasureSpec::hypercube(dim, t)?)],
            ),
            Self::Moment { n, measure } => {
                let mu = match measure {
                    MomentMeasure::Sphere => MeasureSpec::sphere(dim),
                    MomentMeasure::Gaussian => MeasureSpec::gaussian(dim),
                };
                (OuterMap::Identity, vec![single(ScalarMap::Power(n), mu)])
            }
            Self::Charpoly { sigma } => (
                OuterMap::InverseSquare { scale: 1.0 },
                vec![single(ScalarMap::Exp(sigma), MeasureSpec::gaussian(dim))],
            ),
        };
        SharpnessSpec::new(self.name(), phi, components)
    }
}

/// Closed-form value of a preset as a function of the Hessian spectrum.
pub fn measure_exact(spectrum: &Spectrum, preset: &SpecPreset) -> Result<f64> {
    preset.validate()?;
    let lambda = &spectrum.values;
    let d = lambda.len() as f64;
    match *preset {
        SpecPreset::Trace => Ok(lambda.iter().sum::<f64>() / (2.0 * d)),
        SpecPreset::Frobenius => Ok(lambda.iter().map(|l| l * l).sum()),
        SpecPreset::Determinant { .. } => {
            let scale = lambda.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
            if let Some((k, l)) = lambda
                .iter()
                .enumerate()
                .find(|(_, &l)| l < -1e-12 * scale.max(1.0))
            {
                return Err(Error::Domain(format!(
                    "determinant preset needs a positive semidefinite Hessian; λ[{k}] = {l}"
                )));
            }
            Ok(lambda.iter().product())
        }
        SpecPreset::Charpoly { sigma } => {
            if let Some((k, l)) = lambda
                .iter()
                .enumerate()
                .find(|(_, &l)| sigma * l >= 1.0)
            {
                return Err(Error::Domain(format!(
                    "charpoly needs σλ < 1 for every eigenvalue; σ = {sigma}, λ[{k}] = {l}"
                )));
            }
            Ok(lambda.iter().map(|l| 1.0 - sigma * l).product())
        }
        SpecPreset::Moment { n, measure } => {
            let gauss = gaussian_quadratic_moment(lambda, n);
            match measure {
                MomentMeasure::Gaussian => Ok(gauss),
                MomentMeasure::Sphere => {
                    let norm: f64 = (0..n).map(|j| d + 2.0 * j as f64).product();
                    Ok(gauss / norm)
                }
            }
        }
    }
}

/// `E[(½vᵀHv)^n]` for `v ∼ N(0, I)`, via the cumulants of a weighted sum of
/// χ²₁ variables.
fn gaussian_quadratic_moment(lambda: &[f64], n: u32) -> f64 {
    let n = n as usize;
    let mut kappa = vec![0.0; n + 1];
    let mut fact = 1.0;
    for (k, kap) in kappa.iter_mut().enumerate().skip(1) {
        if k > 1 {
            fact *= (k - 1) as f64;
        }
        let power_sum: f64 = lambda.iter().map(|l| (0.5 * l).powi(k as i32)).sum();
        *kap = power_sum * 2f64.powi(k as i32 - 1) * fact;
    }
    let mut m = vec![0.0; n + 1];
    m[0] = 1.0;
    for j in 1..=n {
        let mut binom = 1.0;
        let mut acc = 0.0;
        for k in 1..=j {
            acc += binom * kappa[k] * m[j - k];
            binom = binom * (j - k) as f64 / k as f64;
        }
        m[j] = acc;
    }
    m[n]
}

/// `φ` at the sample means, with a delta-method standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Weighted sample means `Σᵢ wᵢ ψ_ℓ(yᵢ)`, one per component.
    pub means: Vec<f64>,
    /// Standard error of each mean.
    pub mean_stderr: Vec<f64>,
}

impl Estimate {
    pub fn zscore(&self, exact: f64) -> f64 {
        (self.value - exact) / self.stderr
    }
}

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Combines per-group arguments `yᵢ` into `φ(means)` plus standard errors.
fn combine(spec: &SharpnessSpec, groups: &[WeightedSamples], ys: &[Vec<f64>]) -> Result<Estimate> {
    let m = spec.m();
    let mut contributions: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m);
    for (l, c) in spec.components.iter().enumerate() {
        let gi = spec.group_index(c.group);
        let w = groups[gi].weights();
        let mut a = Vec::with_capacity(w.len());
        for (i, (&wi, &y)) in w.iter().zip(&ys[gi]).enumerate() {
            let v = c.psi.eval(y).map_err(|e| annotate(e, l, i, y))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "ψ_{l}({y}) at sample {i} is not finite"
                )));
            }
            a.push(wi * v);
        }
        means.push(pairwise_sum(&a));
        contributions.push(a);
    }
    let value = spec.phi.eval(&means)?;
    let grad = spec.phi.gradient(&means)?;

    let mut cov = vec![0.0; m * m];
    for l in 0..m {
        for k in l..m {
            if spec.components[l].group != spec.components[k].group {
                continue;
            }
            let c = mean_covariance(&contributions[l], &contributions[k]);
            cov[l * m + k] = c;
            cov[k * m + l] = c;
        }
    }
    let var: f64 = (0..m)
        .flat_map(|l| (0..m).map(move |k| (l, k)))
        .map(|(l, k)| grad[l] * grad[k] * cov[l * m + k])
        .sum();
    Ok(Estimate {
        value,
        stderr: var.max(0.0).sqrt(),
        mean_stderr: (0..m).map(|l| cov[l * m + l].max(0.0).sqrt()).collect(),
        means,
    })
}

fn annotate(e: Error, component: usize, sample: usize, y: f64) -> Error {
    match e {
        Error::Domain(msg) => {
            Error::Domain(format!("{msg} (component {component}, sample {sample}, argument {y:e})"))
        }
        other => other,
    }
}

/// Covariance of the two sums `Σaᵢ`, `Σbᵢ` treating `n·aᵢ` as i.i.d. draws.
fn mean_covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let ma = pairwise_sum(a);
    let mb = pairwise_sum(b);
    let prods: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (nf * x - ma) * (nf * y - mb))
        .collect();
    pairwise_sum(&prods) / ((nf - 1.0) * nf)
}

/// Estimates `S` from given samples; `quadratic(v)` returns `vᵀHv`.
pub fn estimate_sharpness_with_samples(
    quadratic: &dyn Fn(&[f64]) -> Result<f64>,
    spec: &SharpnessSpec,
    groups: &[WeightedSamples],
) -> Result<Estimate> {
    let ys = groups
        .iter()
        .map(|g| {
            g.points()
                .map(|v| quadratic(v).map(|q| 0.5 * q))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    combine(spec, groups, &ys)
}

/// Monte-Carlo estimate of `S(x; φ, ψ, μ)` from a quadratic-form oracle.
pub fn estimate_sharpness(
    quadratic: &dyn Fn(&[f64]) -> Result<f64>,
    spec: &SharpnessSpec,
    stream: &SeededStream,
    n: usize,
) -> Result<Estimate> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "the sharpness estimate needs n ≥ 2 for a standard error".into(),
        ));
    }
    if spec.components.iter().any(|c| c.measure.needs_context()) {
        return Err(Error::InvalidArgument(
            "gradient-direction measures need a loss, not a quadratic oracle".into(),
        ));
    }
    let groups = spec.sample(stream, n, None)?;
    estimate_sharpness_with_samples(quadratic, spec, &groups)
}

/// Value of `R_ρ` together with the generic-step gradient term.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerEval {
    pub estimate: Estimate,
    /// `Σ_ℓ ∂_ℓφ · Σᵢ wᵢ ψ'_ℓ(yᵢ) (∇L(x+ρvᵢ) − ∇L(x))`, or `None` if not requested.
    pub gradient: Option<Vec<f64>>,
    pub base_gradient: Vec<f64>,
    pub base_loss: f64,
}

pub(crate) fn evaluate_regularizer(
    loss: &dyn LossFunction,
    x: &[f64],
    spec: &SharpnessSpec,
    rho: f64,
    stream: &SeededStream,
    n: usize,
    with_gradient: bool,
) -> Result<RegularizerEval> {
    check_dim(loss.dim(), x.len())?;
    check_dim(loss.dim(), spec.dim())?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("ρ must be positive, got {rho}")));
    }
    let (l0, g0) = loss.value_and_grad(x)?;
    let groups = spec.sample(stream, n, Some(&g0))?;
    let rho2 = rho * rho;
    let mut ys = Vec::with_capacity(groups.len());
    let mut grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(groups.len());
    let mut xp = vec![0.0; x.len()];
    for g in &groups {
        let mut y = Vec::with_capacity(g.len());
        let mut gg = Vec::new();
        for v in g.points() {
            for ((p, &xi), &vi) in xp.iter_mut().zip(x).zip(v) {
                *p = xi + rho * vi;
            }
            let li = if with_gradient {
                let (li, gi) = loss.value_and_grad(&xp)?;
                gg.push(gi);
                li
            } else {
                loss.value(&xp)?
            };
            if !li.is_finite() {
                return Err(Error::NonFinite(format!("loss at perturbed point {xp:?}")));
            }
            y.push((li - l0) / rho2);
        }
        ys.push(y);
        grads.push(gg);
    }
    let estimate = combine(spec, &groups, &ys)?;
    let gradient = if with_gradient {
        let dphi = spec.phi.gradient(&estimate.means)?;
        let mut out = vec![0.0; x.len()];
        for (gi, ((group, _), samples)) in spec.groups().iter().zip(&groups).enumerate() {
            for (i, (&w, &y)) in samples.weights().iter().zip(&ys[gi]).enumerate() {
                let mut coef = 0.0;
                for (l, c) in spec.components.iter().enumerate() {
                    if c.group == *group {
                        coef += dphi[l] * w * c.psi.derivative(y)?;
                    }
                }
                if coef == 0.0 {
                    continue;
                }
                for ((o, &gp), &gb) in out.iter_mut().zip(&grads[gi][i]).zip(&g0) {
                    *o += coef * (gp - gb);
                }
            }
        }
        Some(out)
    } else {
        None
    };
    Ok(RegularizerEval {
        estimate,
        gradient,
        base_gradient: g0,
        base_loss: l0,
    })
}

/// Zeroth-order estimate of `R_ρ(x)` from loss differences.
pub fn estimate_regularizer(
    loss: &dyn LossFunction,
    x: &[f64],
    spec: &SharpnessSpec,
    rho: f64,
    stream: &SeededStream,
    n: usize,
) -> Result<Estimate> {
    Ok(evaluate_regularizer(loss, x, spec, rho, stream, n, false)?.estimate)
}

/// The sharpness term of the generic update (without the leading `∇L(x)`).
pub fn regularizer_gradient(
    loss: &dyn LossFunction,
    x: &[f64],
    spec: &SharpnessSpec,
    rho: f64,
    stream: &SeededStream,
    n: usize,
) -> Result<Vec<f64>> {
    Ok(evaluate_regularizer(loss, x, spec, rho, stream, n, true)?
        .gradient
        .unwrap_or_default())
}
