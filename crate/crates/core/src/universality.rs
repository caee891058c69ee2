//! Constructive reconstructions: every Hessian eigenvalue from exponential
//! moment integrals, and every Hessian entry from Dirac quadratic forms.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{real_poly_roots, vandermonde_solve, Spectrum, SymmetricMatrix, TRIM_TOLERANCE};
use crate::losses::{default_fd_step, LossFunction};
use crate::measures::{MeasureSpec, SeededStream};
use crate::sharpness::{pairwise_sum, EXP_ARG_LIMIT};

/// Integrals `Iᵢ = ∫ exp(σᵢ · ½vᵀHv) dN(0, I)(v)` at nodes `σᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentProbe {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// Monte-Carlo standard errors, if the values were sampled.
    pub stderr: Option<Vec<f64>>,
}

impl MomentProbe {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_dim(nodes.len(), values.len())?;
        validate_nodes(&nodes)?;
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Domain(format!(
                "moment integral I[{i}] = {v} must be finite and positive"
            )));
        }
        Ok(Self {
            nodes,
            values,
            stderr: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }
}

fn validate_nodes(nodes: &[f64]) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("at least one node is required".into()));
    }
    for (i, &s) in nodes.iter().enumerate() {
        if !s.is_finite() || s == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "node σ[{i}] = {s} must be finite and nonzero"
            )));
        }
        if let Some(j) = nodes[..i].iter().position(|&t| t == s) {
            return Err(Error::DuplicateNodes { i: j, j: i, value: s });
        }
    }
    Ok(())
}

/// `σᵢ = ε·i/(2d)`, `i = 1..d`.
pub fn equispaced_nodes(d: usize, eps: f64) -> Vec<f64> {
    (1..=d).map(|i| eps * i as f64 / (2.0 * d as f64)).collect()
}

/// Chebyshev–Lobatto points `frac·ε·cos(πk/d)`, `k = 0..d`, minus the one
/// closest to zero (zero itself is the known row `p(0) = 1`). Much better
/// conditioned than equispaced nodes for `d ≳ 4`.
pub fn chebyshev_nodes(d: usize, eps: f64, frac: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..=d)
        .map(|k| frac * eps * (std::f64::consts::PI * k as f64 / d as f64).cos())
        .collect();
    let drop = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    pts.remove(drop);
    pts
}

/// Largest admissible node magnitude, `(max|λ| + 1)⁻¹`, given a spectral bound.
pub fn node_bound(spectral_radius: f64) -> f64 {
    1.0 / (spectral_radius.abs() + 1.0)
}

/// Where the moment integrals come from.
pub enum MomentSource<'a> {
    Spectrum(&'a Spectrum),
    /// `v ↦ vᵀHv` in dimension `dim`.
    Quadratic {
        oracle: &'a dyn Fn(&[f64]) -> Result<f64>,
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub enum ProbeMode {
    Exact,
    /// All nodes share one Gaussian sample set.
    MonteCarlo { n: usize, stream: SeededStream },
}

pub fn probe_moments(source: MomentSource, nodes: &[f64], mode: ProbeMode) -> Result<MomentProbe> {
    validate_nodes(nodes)?;
    match (source, mode) {
        (MomentSource::Spectrum(spec), ProbeMode::Exact) => {
            let radius = spec.values.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
            let mut values = Vec::with_capacity(nodes.len());
            for (i, &s) in nodes.iter().enumerate() {
                if s.abs() * radius >= 1.0 {
                    return Err(Error::Domain(format!(
                        "node σ[{i}] = {s} lies outside (−ε, ε) with ε = {}",
                        1.0 / radius
                    )));
                }
                let p: f64 = spec.values.iter().map(|l| 1.0 - s * l).product();
                values.push(p.powf(-0.5));
            }
            MomentProbe::new(nodes.to_vec(), values)
        }
        (MomentSource::Quadratic { .. }, ProbeMode::Exact) => Err(Error::InvalidArgument(
            "exact moment probing needs the spectrum".into(),
        )),
        (source, ProbeMode::MonteCarlo { n, stream }) => {
            if n < 2 {
                return Err(Error::InvalidArgument("Monte-Carlo probing needs n ≥ 2".into()));
            }
            let ys: Vec<f64> = match source {
                MomentSource::Spectrum(spec) => {
                    let samples = MeasureSpec::gaussian(spec.dim()).sample(&stream, 0, n, None)?;
                    samples
                        .points()
                        .map(|v| {
                            0.5 * spec
                                .values
                                .iter()
                                .enumerate()
                                .map(|(k, l)| {
                                    let c: f64 = spec.vector(k).iter().zip(v).map(|(a, b)| a * b).sum();
                                    l * c * c
                                })
                                .sum::<f64>()
                        })
                        .collect()
                }
                MomentSource::Quadratic { oracle, dim } => {
                    let samples = MeasureSpec::gaussian(dim).sample(&stream, 0, n, None)?;
                    samples
                        .points()
                        .map(|v| oracle(v).map(|q| 0.5 * q))
                        .collect::<Result<_>>()?
                }
            };
            let nf = n as f64;
            let mut values = Vec::with_capacity(nodes.len());
            let mut errs = Vec::with_capacity(nodes.len());
            let mut terms = vec![0.0; n];
            for &s in nodes {
                for (t, &y) in terms.iter_mut().zip(&ys) {
                    let arg = s * y;
                    if arg.abs() > EXP_ARG_LIMIT {
                        return Err(Error::Domain(format!(
                            "exp({arg:e}) overflows at node σ = {s}"
                        )));
                    }
                    *t = arg.exp();
                }
                let mean = pairwise_sum(&terms) / nf;
                let dev: Vec<f64> = terms.iter().map(|t| (t - mean) * (t - mean)).collect();
                values.push(mean);
                errs.push((pairwise_sum(&dev) / (nf - 1.0) / nf).sqrt());
            }
            let mut probe = MomentProbe::new(nodes.to_vec(), values)?;
            probe.stderr = Some(errs);
            Ok(probe)
        }
    }
}

/// Recovers the eigenvalue multiset, sorted descending, from moment probes.
pub fn reconstruct_eigenvalues(probe: &MomentProbe) -> Result<Vec<f64>> {
    let d = probe.dim();
    let mut nodes = Vec::with_capacity(d + 1);
    let mut values = Vec::with_capacity(d + 1);
    nodes.push(0.0);
    values.push(1.0);
    for (&s, &i) in probe.nodes.iter().zip(&probe.values) {
        nodes.push(s);
        values.push(1.0 / (i * i));
    }
    let poly = vandermonde_solve(&nodes, &values)?;

    let scale = poly.max_abs_coeff();
    let trimmed = poly.trimmed(TRIM_TOLERANCE);
    let lead = trimmed.coeffs.last().copied().unwrap_or(0.0).abs() / scale;
    if trimmed.nominal_degree() > 0 && lead <= 10.0 * TRIM_TOLERANCE {
        return Err(Error::AmbiguousDegree {
            magnitudes: poly.coeffs.iter().map(|c| c.abs() / scale).collect(),
        });
    }
    let roots = real_poly_roots(&trimmed, TRIM_TOLERANCE)?;
    let mut eig: Vec<f64> = roots.iter().map(|r| 1.0 / r).collect();
    eig.resize(d, 0.0);
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

/// Dirac quadratic forms `qᵢ = eᵢᵀHeᵢ` and `qᵢⱼ = (eᵢ+eⱼ)ᵀH(eᵢ+eⱼ)`, `i < j`
/// in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianProbeSet {
    pub dim: usize,
    pub diagonal: Vec<f64>,
    pub pairs: Vec<f64>,
}

impl HessianProbeSet {
    pub fn new(dim: usize, diagonal: Vec<f64>, pairs: Vec<f64>) -> Result<Self> {
        check_dim(dim, diagonal.len())?;
        check_dim(dim * (dim - 1) / 2, pairs.len())?;
        Ok(Self {
            dim,
            diagonal,
            pairs,
        })
    }

    pub fn count(&self) -> usize {
        self.diagonal.len() + self.pairs.len()
    }
}

/// Evaluates the `d(d+1)/2` Dirac probes through a quadratic-form oracle.
pub fn probe_hessian(quadratic: &dyn Fn(&[f64]) -> Result<f64>, dim: usize) -> Result<HessianProbeSet> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be ≥ 1".into()));
    }
    let mut v = vec![0.0; dim];
    let mut diagonal = Vec::with_capacity(dim);
    for i in 0..dim {
        v[i] = 1.0;
        diagonal.push(quadratic(&v)?);
        v[i] = 0.0;
    }
    let mut pairs = Vec::with_capacity(dim * (dim - 1) / 2);
    for i in 0..dim {
        for j in (i + 1)..dim {
            v[i] = 1.0;
            v[j] = 1.0;
            pairs.push(quadratic(&v)?);
            v[i] = 0.0;
            v[j] = 0.0;
        }
    }
    HessianProbeSet::new(dim, diagonal, pairs)
}

/// Second-difference quadratic form `(L(x+εv) + L(x−εv) − 2L(x))/ε²`.
pub fn fd_quadratic_form(loss: &dyn LossFunction, x: &[f64], v: &[f64], eps: f64) -> Result<f64> {
    check_dim(loss.dim(), x.len())?;
    check_dim(loss.dim(), v.len())?;
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + eps * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - eps * b).collect();
    Ok((loss.value(&plus)? + loss.value(&minus)? - 2.0 * loss.value(x)?) / (eps * eps))
}

/// Dirac probes of a loss at `x` via second differences.
pub fn probe_hessian_fd(loss: &dyn LossFunction, x: &[f64]) -> Result<HessianProbeSet> {
    let eps = default_fd_step(x);
    probe_hessian(&|v| fd_quadratic_form(loss, x, v, eps), loss.dim())
}

/// `Hᵢᵢ = qᵢ`, `Hᵢⱼ = (qᵢⱼ − qᵢ − qⱼ)/2`.
pub fn reconstruct_hessian(probes: &HessianProbeSet) -> Result<SymmetricMatrix> {
    let d = probes.dim;
    check_dim(d * (d + 1) / 2, probes.count())?;
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = probes.diagonal[i];
    }
    let mut k = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            let h = (probes.pairs[k] - probes.diagonal[i] - probes.diagonal[j]) / 2.0;
            m[i * d + j] = h;
            m[j * d + i] = h;
            k += 1;
        }
    }
    SymmetricMatrix::from_row_major(d, &m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{quadratic_form, symmetric_eig};

    fn diag_spectrum(v: &[f64]) -> Spectrum {
        symmetric_eig(&SymmetricMatrix::from_diagonal(v).unwrap()).unwrap()
    }

    #[test]
    fn diag_one_two() {
        let probe = MomentProbe::new(
            vec![0.1, 0.2],
            vec![(0.9f64 * 0.8).powf(-0.5), (0.8f64 * 0.6).powf(-0.5)],
        )
        .unwrap();
        let eig = reconstruct_eigenvalues(&probe).unwrap();
        assert!((eig[0] - 2.0).abs() < 1e-10 && (eig[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_matrix_is_fully_deficient() {
        let probe = MomentProbe::new(vec![0.3, 0.7], vec![1.0, 1.0]).unwrap();
        assert_eq!(reconstruct_eigenvalues(&probe).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mixed_signs_with_a_zero() {
        let s = diag_spectrum(&[3.0, -1.0, 0.0]);
        let probe = probe_moments(MomentSource::Spectrum(&s), &[0.05, 0.1, 0.15], ProbeMode::Exact).unwrap();
        let eig = reconstruct_eigenvalues(&probe).unwrap();
        for (a, b) in eig.iter().zip([3.0, 0.0, -1.0]) {
            assert!((a - b).abs() < 1e-6, "{eig:?}");
        }
    }

    #[test]
    fn exact_probe_examples() {
        let id = diag_spectrum(&[1.0; 3]);
        let p = probe_moments(MomentSource::Spectrum(&id), &[0.5], ProbeMode::Exact).unwrap();
        assert!((p.values[0] - 0.5f64.powf(-1.5)).abs() < 1e-14);
        let s = diag_spectrum(&[1.0, -1.0]);
        let p = probe_moments(MomentSource::Spectrum(&s), &[0.5], ProbeMode::Exact).unwrap();
        assert!((p.values[0] - 1.1547005383792515).abs() < 1e-12);
        assert!(matches!(
            probe_moments(MomentSource::Spectrum(&s), &[1.0], ProbeMode::Exact),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn node_validation() {
        let s = diag_spectrum(&[1.0]);
        assert!(probe_moments(MomentSource::Spectrum(&s), &[0.0], ProbeMode::Exact).is_err());
        assert!(matches!(
            probe_moments(MomentSource::Spectrum(&s), &[0.1, 0.1], ProbeMode::Exact),
            Err(Error::DuplicateNodes { .. })
        ));
    }

    #[test]
    fn chebyshev_nodes_skip_zero() {
        let n = chebyshev_nodes(4, 1.0, 0.9);
        assert_eq!(n.len(), 4);
        assert!(n.iter().all(|x| x.abs() > 0.1));
        let n = chebyshev_nodes(3, 1.0, 0.9);
        assert_eq!(n.len(), 3);
        assert!(n.iter().all(|&x| x != 0.0));
    }

    #[test]
    fn mc_probe_within_four_sigma() {
        let h = SymmetricMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        let q = |v: &[f64]| quadratic_form(&h, v);
        let p = probe_moments(
            MomentSource::Quadratic { oracle: &q, dim: 2 },
            &[0.1],
            ProbeMode::MonteCarlo {
                n: 1_000_000,
                stream: SeededStream::new(0),
            },
        )
        .unwrap();
        let se = p.stderr.as_ref().unwrap()[0];
        assert!((p.values[0] - 0.72f64.powf(-0.5)).abs() <= 4.0 * se);
    }

    #[test]
    fn hessian_examples() {
        let p = HessianProbeSet::new(2, vec![2.0, 3.0], vec![7.0]).unwrap();
        assert_eq!(reconstruct_hessian(&p).unwrap().as_row_major(), &[2.0, 1.0, 1.0, 3.0]);
        let p = HessianProbeSet::new(2, vec![1.0, 1.0], vec![2.0]).unwrap();
        assert_eq!(reconstruct_hessian(&p).unwrap().as_row_major(), &[1.0, 0.0, 0.0, 1.0]);
        let p = HessianProbeSet::new(2, vec![0.0, 0.0], vec![0.0]).unwrap();
        assert_eq!(reconstruct_hessian(&p).unwrap().as_row_major(), &[0.0; 4]);
        assert!(HessianProbeSet::new(3, vec![0.0; 3], vec![0.0; 2]).is_err());
    }
}
