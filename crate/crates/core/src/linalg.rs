//! Dense symmetric linear algebra and the polynomial machinery used by the
//! spectral oracles and the universality reconstructions.
//!
//! Everything here is small-d and allocation-light: matrices are stored as
//! row-major `Vec<f64>` and all routines are pure functions of their inputs.

use crate::error::{check_dim, Error, Result};

/// Sweep cap for the cyclic Jacobi eigensolver.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Relative threshold below which trailing polynomial coefficients are
/// treated as zero (degree deficiency from zero eigenvalues).
pub const TRIM_TOLERANCE: f64 = 1e-8;

/// A dense symmetric matrix. Construction symmetrizes its input, so
/// `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    /// Builds from row-major entries, replacing `M` with `(M + Mᵀ)/2`.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be ≥ 1".into()));
        }
        check_dim(dim * dim, entries.len())?;
        let mut data = entries.to_vec();
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (entries[i * dim + j] + entries[j * dim + i]);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut flat = Vec::with_capacity(dim * dim);
        for row in rows {
            check_dim(dim, row.len())?;
            flat.extend_from_slice(row);
        }
        Self::from_row_major(dim, &flat)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        let mut flat = vec![0.0; dim * dim];
        for (i, &v) in diag.iter().enumerate() {
            flat[i * dim + i] = v;
        }
        Self::from_row_major(dim, &flat)
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::from_row_major(dim, &vec![0.0; dim * dim])
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_diagonal(&vec![1.0; dim])
    }

    /// `Q diag(values) Qᵀ` where the columns of row-major `q` are the vectors.
    pub fn from_spectrum(values: &[f64], q: &[f64]) -> Result<Self> {
        let d = values.len();
        check_dim(d * d, q.len())?;
        let mut flat = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                flat[i * d + j] = (0..d).map(|k| q[i * d + k] * values[k] * q[j * d + k]).sum();
            }
        }
        Self::from_row_major(d, &flat)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Squared Frobenius norm, `Σᵢⱼ Mᵢⱼ²`.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, v.len())?;
        Ok(self
            .data
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `D M D` for a diagonal `D` given by its diagonal.
    pub fn congruent_diagonal(&self, diag: &[f64]) -> Result<Self> {
        check_dim(self.dim, diag.len())?;
        let d = self.dim;
        let flat: Vec<f64> = (0..d * d)
            .map(|k| diag[k / d] * self.data[k] * diag[k % d])
            .collect();
        Self::from_row_major(d, &flat)
    }
}

/// `vᵀ M v`. The caller applies any ½ factor.
pub fn quadratic_form(m: &SymmetricMatrix, v: &[f64]) -> Result<f64> {
    check_dim(m.dim, v.len())?;
    let d = m.dim;
    let mut acc = 0.0;
    for i in 0..d {
        let row = &m.data[i * d..(i + 1) * d];
        let inner: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
        acc += v[i] * inner;
    }
    Ok(acc)
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Eigenvalues sorted descending.
    pub values: Vec<f64>,
    /// Row-major `d×d`; column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<f64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.vectors[i * d + k]).collect()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values[0]
    }

    pub fn reconstruct(&self) -> Result<SymmetricMatrix> {
        SymmetricMatrix::from_spectrum(&self.values, &self.vectors)
    }

    /// Product of eigenvalues whose magnitude exceeds `tol · max|λ|`.
    pub fn pseudo_det(&self, tol: f64) -> f64 {
        let scale = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 1.0;
        }
        self.values
            .iter()
            .filter(|v| v.abs() > tol * scale)
            .product()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn symmetric_eig(m: &SymmetricMatrix) -> Result<Spectrum> {
    if !m.is_finite() {
        return Err(Error::NonFinite("matrix passed to symmetric_eig".into()));
    }
    let n = m.dim;
    let mut a = m.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob = m.frobenius_sq().sqrt();
    let target = f64::EPSILON * 1e-1 * frob;

    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= target || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = arp - s * (arq + tau * arp);
                    let new_rq = arq + s * (arp - tau * arq);
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = vrp - s * (vrq + tau * vrp);
                    v[r * n + q] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence {
            sweeps: MAX_JACOBI_SWEEPS,
            norm: m.max_abs(),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + new_col] = v[r * n + old_col];
        }
    }
    Ok(Spectrum { values, vectors })
}

/// Real polynomial with coefficients in ascending-degree order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// `∏ (1 − rₖ x)`.
    pub fn from_reciprocal_roots(rs: &[f64]) -> Self {
        let mut coeffs = vec![1.0];
        for &r in rs {
            let mut next = vec![0.0; coeffs.len() + 1];
            for (k, &c) in coeffs.iter().enumerate() {
                next[k] += c;
                next[k + 1] -= r * c;
            }
            coeffs = next;
        }
        Self { coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &c in self.coeffs.iter().rev() {
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Nominal degree (length − 1), including any near-zero trailing terms.
    pub fn nominal_degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Drops high-degree coefficients with `|pₖ| ≤ tol · max|pⱼ|`.
    pub fn trimmed(&self, tol: f64) -> Self {
        let scale = self.max_abs_coeff();
        let mut coeffs = self.coeffs.clone();
        while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.abs() <= tol * scale) {
            coeffs.pop();
        }
        Self { coeffs }
    }
}

/// Solves `V(nodes) · p = values` for the interpolating polynomial `p`.
pub fn vandermonde_solve(nodes: &[f64], values: &[f64]) -> Result<Polynomial> {
    let n = nodes.len();
    check_dim(n, values.len())?;
    if n == 0 {
        return Err(Error::InvalidArgument("at least one node is required".into()));
    }
    if nodes.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Vandermonde nodes or values".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if nodes[i] == nodes[j] {
                return Err(Error::DuplicateNodes {
                    i,
                    j,
                    value: nodes[i],
                });
            }
        }
    }
    let mut a = vec![0.0; n * n];
    for (i, &x) in nodes.iter().enumerate() {
        let mut pow = 1.0;
        for j in 0..n {
            a[i * n + j] = pow;
            pow *= x;
        }
    }
    let coeffs = lu_solve(&mut a, values.to_vec(), n)?;
    let poly = Polynomial::new(coeffs);

    let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let residual = nodes
        .iter()
        .zip(values)
        .map(|(&x, &y)| (poly.eval(x) - y).abs())
        .fold(0.0, f64::max)
        / scale;
    if !residual.is_finite() || residual > 1e-8 {
        return Err(Error::IllConditioned { residual });
    }
    Ok(poly)
}

/// Gaussian elimination with partial pivoting on a row-major `n×n` system.
fn lu_solve(a: &mut [f64], mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col] == 0.0 {
            return Err(Error::IllConditioned {
                residual: f64::INFINITY,
            });
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for k in (col + 1)..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = ((row + 1)..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Ok(x)
}

/// Real roots of `p` via eigenvalues of its (balanced) companion matrix.
///
/// Trailing coefficients with `|pₖ| ≤ tol · max|pⱼ|` are trimmed first, which
/// reduces the root count. Conjugate pairs whose imaginary part is within
/// `√tol · max(1, |z|)` are read as (near-)double real roots; anything larger
/// is an error.
pub fn real_poly_roots(p: &Polynomial, tol: f64) -> Result<Vec<f64>> {
    if p.max_abs_coeff() == 0.0 {
        return Err(Error::ZeroPolynomial);
    }
    let trimmed = p.trimmed(tol);
    let degree = trimmed.nominal_degree();
    if degree == 0 {
        return Ok(Vec::new());
    }
    let lead = trimmed.coeffs[degree];
    let mut companion = vec![0.0; degree * degree];
    for j in 0..degree {
        companion[j] = -trimmed.coeffs[degree - 1 - j] / lead;
    }
    for i in 1..degree {
        companion[i * degree + (i - 1)] = 1.0;
    }
    balance(&mut companion, degree);
    let eigs = hessenberg_eigenvalues(&mut companion, degree)?;

    let imag_tol = tol.sqrt();
    let mut roots = Vec::with_capacity(degree);
    for (re, im) in eigs {
        if im.abs() > imag_tol * re.abs().max(1.0) {
            return Err(Error::ComplexRoots { re, im });
        }
        roots.push(polish_root(&trimmed, re));
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    Ok(roots)
}

fn polish_root(p: &Polynomial, mut x: f64) -> f64 {
    let mut best = p.eval(x).abs();
    for _ in 0..8 {
        let (val, der) = p.eval_with_derivative(x);
        if der == 0.0 || val == 0.0 {
            break;
        }
        let next = x - val / der;
        let next_val = p.eval(next).abs();
        if !(next_val < best) {
            break;
        }
        best = next_val;
        x = next;
    }
    x
}

/// Parlett–Reinsch balancing; leaves eigenvalues unchanged.
fn balance(a: &mut [f64], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j * n + i].abs();
                    r += a[i * n + j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i * n + j] *= g;
                    }
                    for j in 0..n {
                        a[j * n + i] *= f;
                    }
                }
            }
        }
    }
}

/// Eigenvalues `(re, im)` of an upper Hessenberg matrix by Francis
/// double-shift QR. Destroys `a`.
fn hessenberg_eigenvalues(a: &mut [f64], n: usize) -> Result<Vec<(f64, f64)>> {
    let idx = |i: isize, j: isize| (i as usize) * n + (j as usize);
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i * n + j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 1 {
                let mut s = a[idx(l - 1, l - 1)].abs() + a[idx(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[idx(l, l - 1)].abs() + s == s {
                    a[idx(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[idx(nn, nn)];
            if l == nn {
                wr[nn as usize] = x + t;
                wi[nn as usize] = 0.0;
                nn -= 1;
            } else {
                let mut y = a[idx(nn - 1, nn - 1)];
                let mut w = a[idx(nn, nn - 1)] * a[idx(nn - 1, nn)];
                if l == nn - 1 {
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let z = q.abs().sqrt();
                    x += t;
                    let (u, v) = ((nn - 1) as usize, nn as usize);
                    if q >= 0.0 {
                        let z = p + z.copysign(p);
                        wr[u] = x + z;
                        wr[v] = if z != 0.0 { x - w / z } else { x + z };
                        wi[u] = 0.0;
                        wi[v] = 0.0;
                    } else {
                        wr[u] = x + p;
                        wr[v] = x + p;
                        wi[u] = -z;
                        wi[v] = z;
                    }
                    nn -= 2;
                } else {
                    if its == 60 {
                        return Err(Error::RootsNoConvergence { degree: n });
                    }
                    if its == 10 || its == 20 || its == 40 {
                        t += x;
                        for i in 0..=nn {
                            a[idx(i, i)] -= x;
                        }
                        let s = a[idx(nn, nn - 1)].abs() + a[idx(nn - 1, nn - 2)].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    let (mut p, mut q, mut r);
                    loop {
                        let z = a[idx(m, m)];
                        let r0 = x - z;
                        let s0 = y - z;
                        p = (r0 * s0 - w) / a[idx(m + 1, m)] + a[idx(m, m + 1)];
                        q = a[idx(m + 1, m + 1)] - z - r0 - s0;
                        r = a[idx(m + 2, m + 1)];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[idx(m, m - 1)].abs() * (q.abs() + r.abs());
                        let v = p.abs()
                            * (a[idx(m - 1, m - 1)].abs() + z.abs() + a[idx(m + 1, m + 1)].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nn {
                        a[idx(i, i - 2)] = 0.0;
                        if i != m + 2 {
                            a[idx(i, i - 3)] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k <= nn - 1 {
                        if k != m {
                            p = a[idx(k, k - 1)];
                            q = a[idx(k + 1, k - 1)];
                            r = 0.0;
                            if k != nn - 1 {
                                r = a[idx(k + 2, k - 1)];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = (p * p + q * q + r * r).sqrt().copysign(p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[idx(k, k - 1)] = -a[idx(k, k - 1)];
                                }
                            } else {
                                a[idx(k, k - 1)] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            let z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                let mut pp = a[idx(k, j)] + q * a[idx(k + 1, j)];
                                if k != nn - 1 {
                                    pp += r * a[idx(k + 2, j)];
                                    a[idx(k + 2, j)] -= pp * z;
                                }
                                a[idx(k + 1, j)] -= pp * y;
                                a[idx(k, j)] -= pp * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                let mut pp = x * a[idx(i, k)] + y * a[idx(i, k + 1)];
                                if k != nn - 1 {
                                    pp += z * a[idx(i, k + 2)];
                                    a[idx(i, k + 2)] -= pp * r;
                                }
                                a[idx(i, k + 1)] -= pp * q;
                                a[idx(i, k)] -= pp;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if !(l + 1 < nn) {
                break;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).collect())
}
