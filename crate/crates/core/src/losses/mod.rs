//! Loss functions: the value/gradient contract, the toy fixtures, the
//! multilayer perceptron, and Hessian probes built on top of them.

mod data;
mod mlp;

pub use data::{load_idx, synth_blobs, Dataset, Split, SynthBlobs};
pub use mlp::{Activation, Head, MlpBatch, MlpModel};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{quadratic_form, SymmetricMatrix};
use crate::measures::{MeasureSpec, SeededStream};
use crate::sharpness::pairwise_sum;

/// Largest dimension for which a dense finite-difference Hessian is built.
pub const MAX_FD_HESSIAN_DIM: usize = 512;

/// A twice-differentiable training loss `L: ℝ^d → ℝ`.
pub trait LossFunction {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(x)?, self.grad(x)?))
    }

    /// Closed-form Hessian, when one is known.
    fn exact_hessian(&self, _x: &[f64]) -> Option<Result<SymmetricMatrix>> {
        None
    }

    /// Exact Hessian-vector product, when cheaper than the dense Hessian.
    fn exact_hvp(&self, _x: &[f64], _z: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
}

/// `½(x₁² − x₂²)`. A saddle used only for measure evaluations; it is not
/// bounded below, so it never enters a training run.
#[derive(Debug, Clone, Copy, Default)]
pub struct SaddleToy;

impl LossFunction for SaddleToy {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(2, x.len())?;
        Ok(0.5 * (x[0] * x[0] - x[1] * x[1]))
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(2, x.len())?;
        Ok(vec![x[0], -x[1]])
    }

    fn exact_hessian(&self, x: &[f64]) -> Option<Result<SymmetricMatrix>> {
        Some(check_dim(2, x.len()).and_then(|_| SymmetricMatrix::from_diagonal(&[1.0, -1.0])))
    }
}

/// `(x₁x₂ − 1)²`, invariant under `(x₁, x₂) ↦ (kx₁, x₂/k)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScaleInvToy;

impl LossFunction for ScaleInvToy {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(2, x.len())?;
        let r = x[0] * x[1] - 1.0;
        Ok(r * r)
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(2, x.len())?;
        let r = x[0] * x[1] - 1.0;
        Ok(vec![2.0 * r * x[1], 2.0 * r * x[0]])
    }

    fn exact_hessian(&self, x: &[f64]) -> Option<Result<SymmetricMatrix>> {
        Some(check_dim(2, x.len()).and_then(|_| {
            let off = 4.0 * x[0] * x[1] - 2.0;
            SymmetricMatrix::from_rows(&[
                vec![2.0 * x[1] * x[1], off],
                vec![off, 2.0 * x[0] * x[0]],
            ])
        }))
    }
}

/// `(‖x‖² − 1)²`, invariant under rotations.
#[derive(Debug, Clone, Copy)]
pub struct RotInvToy {
    pub dim: usize,
}

impl LossFunction for RotInvToy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let r = x.iter().map(|v| v * v).sum::<f64>() - 1.0;
        Ok(r * r)
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let r = x.iter().map(|v| v * v).sum::<f64>() - 1.0;
        Ok(x.iter().map(|v| 4.0 * r * v).collect())
    }

    fn exact_hessian(&self, x: &[f64]) -> Option<Result<SymmetricMatrix>> {
        Some(check_dim(self.dim, x.len()).and_then(|_| {
            let d = self.dim;
            let r = x.iter().map(|v| v * v).sum::<f64>() - 1.0;
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    m[i * d + j] = 8.0 * x[i] * x[j] + if i == j { 4.0 * r } else { 0.0 };
                }
            }
            SymmetricMatrix::from_row_major(d, &m)
        }))
    }
}

/// `½(x − c)ᵀH(x − c) + offset` with `H ⪰ 0`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    h: SymmetricMatrix,
    center: Vec<f64>,
    offset: f64,
}

impl QuadraticLoss {
    pub fn new(h: SymmetricMatrix, center: Vec<f64>) -> Result<Self> {
        check_dim(h.dim(), center.len())?;
        let spec = crate::linalg::symmetric_eig(&h)?;
        let low = spec.values[spec.dim() - 1];
        if low < -1e-12 * h.max_abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "quadratic loss needs a positive semidefinite H; smallest eigenvalue {low}"
            )));
        }
        Ok(Self {
            h,
            center,
            offset: 0.0,
        })
    }

    pub fn centered(h: SymmetricMatrix) -> Result<Self> {
        let d = h.dim();
        Self::new(h, vec![0.0; d])
    }

    /// The constant loss `offset` on ℝ^d.
    pub fn constant(dim: usize, offset: f64) -> Result<Self> {
        Self::centered(SymmetricMatrix::zeros(dim)?)?.with_offset(offset)
    }

    pub fn with_offset(mut self, offset: f64) -> Result<Self> {
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "offset must be finite and nonnegative, got {offset}"
            )));
        }
        self.offset = offset;
        Ok(self)
    }

    pub fn hessian(&self) -> &SymmetricMatrix {
        &self.h
    }

    fn shifted(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.h.dim(), x.len())?;
        Ok(x.iter().zip(&self.center).map(|(a, c)| a - c).collect())
    }
}

impl LossFunction for QuadraticLoss {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let y = self.shifted(x)?;
        Ok(0.5 * quadratic_form(&self.h, &y)? + self.offset)
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.h.mul_vec(&self.shifted(x)?)
    }

    fn exact_hessian(&self, x: &[f64]) -> Option<Result<SymmetricMatrix>> {
        Some(check_dim(self.h.dim(), x.len()).map(|_| self.h.clone()))
    }
}

/// Default central-difference step, `1e-4 · (1 + ‖x‖∞)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-4 * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// `(∇L(x + εz) − ∇L(x − εz)) / 2ε`.
pub fn hvp(loss: &dyn LossFunction, x: &[f64], z: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_dim(loss.dim(), x.len())?;
    check_dim(loss.dim(), z.len())?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("ε must be positive, got {eps}")));
    }
    if z.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; z.len()]);
    }
    let plus: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + eps * b).collect();
    let minus: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - eps * b).collect();
    let gp = loss.grad(&plus)?;
    let gm = loss.grad(&minus)?;
    let out: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient in finite-difference HVP".into()));
    }
    Ok(out)
}

/// Dense Hessian whose columns are finite-difference HVPs against `e_j`.
pub fn finite_diff_hessian(loss: &dyn LossFunction, x: &[f64], eps: f64) -> Result<SymmetricMatrix> {
    let d = loss.dim();
    if d > MAX_FD_HESSIAN_DIM {
        return Err(Error::InvalidArgument(format!(
            "finite-difference Hessian limited to d ≤ {MAX_FD_HESSIAN_DIM}, got {d}"
        )));
    }
    let mut cols = vec![0.0; d * d];
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let col = hvp(loss, x, &e, eps)?;
        for i in 0..d {
            cols[i * d + j] = col[i];
        }
        e[j] = 0.0;
    }
    SymmetricMatrix::from_row_major(d, &cols)
}

/// `Hz` from the most exact source the loss offers.
pub fn best_hvp(loss: &dyn LossFunction, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if let Some(r) = loss.exact_hvp(x, z) {
        return r;
    }
    if let Some(h) = loss.exact_hessian(x) {
        return h?.mul_vec(z);
    }
    hvp(loss, x, z, default_fd_step(x))
}

/// Sample mean of per-probe values with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeEstimate {
    pub value: f64,
    pub stderr: f64,
    pub probes: usize,
}

impl ProbeEstimate {
    fn from_values(v: &[f64]) -> Self {
        let k = v.len() as f64;
        let mean = pairwise_sum(v) / k;
        let stderr = if v.len() > 1 {
            let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&dev) / (k - 1.0) / k).sqrt()
        } else {
            0.0
        };
        Self {
            value: mean,
            stderr,
            probes: v.len(),
        }
    }
}

fn probe_values(
    loss: &dyn LossFunction,
    x: &[f64],
    k: usize,
    stream: &SeededStream,
    f: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<ProbeEstimate> {
    check_dim(loss.dim(), x.len())?;
    if k == 0 {
        return Err(Error::InvalidArgument("probe count must be ≥ 1".into()));
    }
    let probes = MeasureSpec::gaussian(loss.dim()).sample(stream, 0, k, None)?;
    let values = probes
        .points()
        .map(|z| best_hvp(loss, x, z).map(|hz| f(z, &hz)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ProbeEstimate::from_values(&values))
}

/// Hutchinson estimate `(1/k) Σ zᵢᵀHzᵢ` of `tr ∇²L(x)`.
pub fn hutchinson_trace(
    loss: &dyn LossFunction,
    x: &[f64],
    k: usize,
    stream: &SeededStream,
) -> Result<ProbeEstimate> {
    probe_values(loss, x, k, stream, |z, hz| {
        z.iter().zip(hz).map(|(a, b)| a * b).sum()
    })
}

/// `(1/k) Σ ‖Hzᵢ‖²`, an unbiased estimate of `‖∇²L(x)‖_F²`.
pub fn frobenius_sq_estimate(
    loss: &dyn LossFunction,
    x: &[f64],
    k: usize,
    stream: &SeededStream,
) -> Result<ProbeEstimate> {
    probe_values(loss, x, k, stream, |_, hz| hz.iter().map(|v| v * v).sum())
}

/// Trace and squared-Frobenius estimates from one shared set of `k` probes,
/// so each probe costs a single Hessian-vector product.
pub fn hessian_norm_estimates(
    loss: &dyn LossFunction,
    x: &[f64],
    k: usize,
    stream: &SeededStream,
) -> Result<(ProbeEstimate, ProbeEstimate)> {
    check_dim(loss.dim(), x.len())?;
    if k == 0 {
        return Err(Error::InvalidArgument("probe count must be ≥ 1".into()));
    }
    let probes = MeasureSpec::gaussian(loss.dim()).sample(stream, 0, k, None)?;
    let mut tr = Vec::with_capacity(k);
    let mut fr = Vec::with_capacity(k);
    for z in probes.points() {
        let hz = best_hvp(loss, x, z)?;
        tr.push(z.iter().zip(&hz).map(|(a, b)| a * b).sum());
        fr.push(hz.iter().map(|v| v * v).sum());
    }
    Ok((ProbeEstimate::from_values(&tr), ProbeEstimate::from_values(&fr)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn hvp_examples() {
        let q = QuadraticLoss::centered(SymmetricMatrix::from_diagonal(&[2.0, 3.0]).unwrap()).unwrap();
        assert_close(&hvp(&q, &[0.3, -0.2], &[1.0, 0.0], 1e-4).unwrap(), &[2.0, 0.0], 1e-8);
        assert_eq!(hvp(&ScaleInvToy, &[0.4, 2.0], &[0.0, 0.0], 1e-4).unwrap(), vec![0.0, 0.0]);
        assert_close(&hvp(&ScaleInvToy, &[1.0, 1.0], &[1.0, 1.0], 1e-4).unwrap(), &[4.0, 4.0], 1e-6);
    }

    #[test]
    fn fd_hessian_examples() {
        let h = finite_diff_hessian(&SaddleToy, &[0.7, -2.0], 1e-4).unwrap();
        assert_close(h.as_row_major(), &[1.0, 0.0, 0.0, -1.0], 1e-7);
        let h = finite_diff_hessian(&ScaleInvToy, &[2.0, 0.5], 1e-4).unwrap();
        assert_close(h.as_row_major(), &[0.5, 2.0, 2.0, 8.0], 1e-5);
        let m = SymmetricMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let q = QuadraticLoss::new(m.clone(), vec![1.0, -1.0]).unwrap();
        let h = finite_diff_hessian(&q, &[5.0, 2.0], 1e-4).unwrap();
        assert_close(h.as_row_major(), m.as_row_major(), 1e-8);
    }

    #[test]
    fn fd_hessian_cost_guard() {
        let big = RotInvToy { dim: 513 };
        assert!(finite_diff_hessian(&big, &vec![0.0; 513], 1e-4).is_err());
    }

    #[test]
    fn exact_hessians_match_finite_differences() {
        let pts = [[1.0, 1.0], [2.0, 0.5], [-0.3, 1.7], [0.9, -1.2]];
        for p in pts {
            let fd = finite_diff_hessian(&ScaleInvToy, &p, default_fd_step(&p)).unwrap();
            let ex = ScaleInvToy.exact_hessian(&p).unwrap().unwrap();
            assert_close(fd.as_row_major(), ex.as_row_major(), 1e-5);
            let r = RotInvToy { dim: 2 };
            let fd = finite_diff_hessian(&r, &p, default_fd_step(&p)).unwrap();
            let ex = r.exact_hessian(&p).unwrap().unwrap();
            assert_close(fd.as_row_major(), ex.as_row_major(), 1e-5);
        }
    }

    #[test]
    fn hutchinson_examples() {
        let k = 10_000;
        let st = SeededStream::new(4);
        let e = hutchinson_trace(&SaddleToy, &[0.0, 0.0], k, &st).unwrap();
        assert!(e.value.abs() <= 4.0 * e.stderr);
        let q = QuadraticLoss::centered(SymmetricMatrix::from_diagonal(&[2.0, 3.0]).unwrap()).unwrap();
        let e = hutchinson_trace(&q, &[0.0, 0.0], k, &st).unwrap();
        assert!((e.value - 5.0).abs() <= 4.0 * e.stderr);
        let e = hutchinson_trace(&ScaleInvToy, &[1.0, 1.0], k, &st).unwrap();
        assert!((e.value - 4.0).abs() <= 4.0 * e.stderr);
    }

    #[test]
    fn frobenius_examples() {
        let k = 10_000;
        let st = SeededStream::new(5);
        let e = frobenius_sq_estimate(&SaddleToy, &[0.0, 0.0], k, &st).unwrap();
        assert!((e.value - 2.0).abs() <= 4.0 * e.stderr);
        let q = QuadraticLoss::centered(SymmetricMatrix::from_diagonal(&[2.0, 3.0]).unwrap()).unwrap();
        let e = frobenius_sq_estimate(&q, &[0.0, 0.0], k, &st).unwrap();
        assert!((e.value - 13.0).abs() <= 4.0 * e.stderr);
        let z = QuadraticLoss::constant(3, 0.0).unwrap();
        assert_eq!(frobenius_sq_estimate(&z, &[1.0; 3], 50, &st).unwrap().value, 0.0);
    }

    #[test]
    fn quadratic_rejects_indefinite() {
        assert!(QuadraticLoss::centered(SymmetricMatrix::from_diagonal(&[1.0, -1.0]).unwrap()).is_err());
        assert!(QuadraticLoss::constant(2, -1.0).is_err());
    }
}
