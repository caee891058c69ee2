//! Sampleable measures with explicit quadrature weights, and the
//! counter-based random streams that drive every Monte-Carlo estimate.
//!
//! A draw is addressed by `(seed, iteration, component, sample)`, so the value
//! of sample `i` never depends on how many other samples were drawn or on
//! which thread drew them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of a deterministic family of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeededStream {
    pub seed: u64,
    pub iteration: u64,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, iteration: 0 }
    }

    pub fn at_iteration(self, iteration: u64) -> Self {
        Self { iteration, ..self }
    }

    /// Independent sub-seed, e.g. for a per-run or per-epoch family.
    pub fn fork(self, tag: u64) -> Self {
        let mut s = self.seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        Self::new(splitmix64(&mut s) ^ splitmix64(&mut s).rotate_left(17))
    }

    fn key(&self, component: u64) -> [u8; 32] {
        let mut state = self.seed;
        let mut key = [0u8; 32];
        let words = [
            splitmix64(&mut state),
            splitmix64(&mut state) ^ self.iteration.wrapping_mul(0xA24B_AED4_963E_E407),
            {
                state ^= self.iteration;
                splitmix64(&mut state)
            },
            {
                state ^= component.wrapping_mul(0x9FB2_1C65_1E98_DF25);
                splitmix64(&mut state)
            },
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        key
    }

    /// Generator for one `(component, sample)` cell of this stream.
    pub fn rng(&self, component: u64, sample: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key(component));
        rng.set_stream(sample);
        rng
    }

    /// A reusable per-component generator factory; avoids re-deriving the key.
    pub fn component(&self, component: u64) -> ComponentStream {
        ComponentStream {
            base: ChaCha8Rng::from_seed(self.key(component)),
        }
    }
}

/// Stream family for a single component; `rng(i)` is identical to
/// `SeededStream::rng(component, i)`.
#[derive(Debug, Clone)]
pub struct ComponentStream {
    base: ChaCha8Rng,
}

impl ComponentStream {
    pub fn rng(&self, sample: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(sample);
        rng.set_word_pos(0);
        rng
    }
}

/// A Borel measure on ℝ^d that can be sampled.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSpec {
    StandardGaussian { dim: usize },
    UnitSphere { dim: usize },
    /// Lebesgue measure restricted to `[−t, t]^d`.
    Hypercube { dim: usize, half_width: f64 },
    DiracPoint { point: Vec<f64> },
    /// Point mass at `∇L(x)/‖∇L(x)‖`, resolved from the context at sample time.
    GradientDirection { dim: usize },
}

impl MeasureSpec {
    pub fn gaussian(dim: usize) -> Self {
        Self::StandardGaussian { dim }
    }

    pub fn sphere(dim: usize) -> Self {
        Self::UnitSphere { dim }
    }

    pub fn hypercube(dim: usize, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "hypercube half-width must be positive and finite, got {half_width}"
            )));
        }
        Ok(Self::Hypercube { dim, half_width })
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        if point.is_empty() {
            return Err(Error::InvalidArgument("Dirac point must have dimension ≥ 1".into()));
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Dirac point".into()));
        }
        Ok(Self::DiracPoint { point })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::StandardGaussian { dim }
            | Self::UnitSphere { dim }
            | Self::Hypercube { dim, .. }
            | Self::GradientDirection { dim } => *dim,
            Self::DiracPoint { point } => point.len(),
        }
    }

    /// Total mass, `μ(ℝ^d)`.
    pub fn mass(&self) -> f64 {
        match self {
            Self::Hypercube { dim, half_width } => (2.0 * half_width).powi(*dim as i32),
            _ => 1.0,
        }
    }

    pub fn needs_context(&self) -> bool {
        matches!(self, Self::GradientDirection { .. })
    }

    /// Whether the measure is invariant under `x ↦ Dx` for diagonal `D` with
    /// `det D = 1`. Only the Lebesgue instance qualifies.
    pub fn is_scale_invariant(&self) -> bool {
        matches!(self, Self::Hypercube { .. })
    }

    /// Draws `n` weighted samples from component `component` of `stream`.
    pub fn sample(
        &self,
        stream: &SeededStream,
        component: u64,
        n: usize,
        context: Option<&[f64]>,
    ) -> Result<WeightedSamples> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be ≥ 1".into()));
        }
        if self.needs_context() != context.is_some() {
            return Err(Error::InvalidArgument(
                "a context gradient is required exactly for the gradient-direction measure".into(),
            ));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidArgument("measure dimension must be ≥ 1".into()));
        }
        let weight = self.mass() / n as f64;
        let mut points = vec![0.0; n * d];
        match self {
            Self::StandardGaussian { .. } => {
                let cs = stream.component(component);
                for (i, p) in points.chunks_exact_mut(d).enumerate() {
                    let mut rng = cs.rng(i as u64);
                    for x in p.iter_mut() {
                        *x = StandardNormal.sample(&mut rng);
                    }
                }
            }
            Self::UnitSphere { .. } => {
                let cs = stream.component(component);
                for (i, p) in points.chunks_exact_mut(d).enumerate() {
                    let mut rng = cs.rng(i as u64);
                    loop {
                        for x in p.iter_mut() {
                            *x = StandardNormal.sample(&mut rng);
                        }
                        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            p.iter_mut().for_each(|x| *x /= norm);
                            break;
                        }
                    }
                }
            }
            Self::Hypercube { half_width, .. } => {
                let cs = stream.component(component);
                let dist = Uniform::new_inclusive(-half_width, *half_width)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                for (i, p) in points.chunks_exact_mut(d).enumerate() {
                    let mut rng = cs.rng(i as u64);
                    for x in p.iter_mut() {
                        *x = dist.sample(&mut rng);
                    }
                }
            }
            Self::DiracPoint { point } => {
                for p in points.chunks_exact_mut(d) {
                    p.copy_from_slice(point);
                }
            }
            Self::GradientDirection { .. } => {
                let g = context.unwrap_or_default();
                if g.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: g.len(),
                    });
                }
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(Error::Domain(
                        "gradient-direction measure needs a nonzero finite gradient".into(),
                    ));
                }
                for p in points.chunks_exact_mut(d) {
                    for (x, gi) in p.iter_mut().zip(g) {
                        *x = gi / norm;
                    }
                }
            }
        }
        Ok(WeightedSamples {
            dim: d,
            points,
            weights: vec![weight; n],
        })
    }
}

/// Points `v₁…vₙ` with weights such that `Σ wᵢ f(vᵢ) ≈ ∫ f dμ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSamples {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * weights.len(),
                actual: points.len(),
            });
        }
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Pushes every point through `f`, keeping the weights. Used to couple
    /// samples across a change of variables with unit Jacobian.
    pub fn map_points(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut points = Vec::with_capacity(self.points.len());
        for p in self.points() {
            let q = f(p);
            if q.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: q.len(),
                });
            }
            points.extend(q);
        }
        Ok(Self {
            dim: self.dim,
            points,
            weights: self.weights.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirac_repeats_point_with_probability_weights() {
        let mu = MeasureSpec::dirac(vec![1.0, 0.0]).unwrap();
        let s = mu.sample(&SeededStream::new(1), 0, 3, None).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.points().all(|p| p == [1.0, 0.0]));
        assert!(s.weights().iter().all(|&w| w == 1.0 / 3.0));
    }

    #[test]
    fn hypercube_samples_and_weights() {
        let mu = MeasureSpec::hypercube(2, 1.0).unwrap();
        let s = mu.sample(&SeededStream::new(7), 0, 100, None).unwrap();
        assert!(s.points().flatten().all(|x| (-1.0..=1.0).contains(x)));
        assert!(s.weights().iter().all(|&w| w == 4.0 / 100.0));
        assert!((s.weights().iter().sum::<f64>() - 4.0).abs() < 1e-13);
        assert!(MeasureSpec::hypercube(2, 0.0).is_err());
    }

    #[test]
    fn sphere_samples_are_unit() {
        let mu = MeasureSpec::sphere(5);
        let s = mu.sample(&SeededStream::new(3), 0, 1000, None).unwrap();
        for p in s.points() {
            let n: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_invariance_flags() {
        assert!(MeasureSpec::hypercube(2, 1.0).unwrap().is_scale_invariant());
        assert!(!MeasureSpec::gaussian(2).is_scale_invariant());
        assert!(!MeasureSpec::dirac(vec![1.0, 0.0]).unwrap().is_scale_invariant());
    }

    #[test]
    fn gradient_direction_normalizes_and_rejects_zero() {
        let mu = MeasureSpec::GradientDirection { dim: 2 };
        let s = mu
            .sample(&SeededStream::new(0), 0, 1, Some(&[3.0, 4.0]))
            .unwrap();
        assert_eq!(s.point(0), &[0.6, 0.8]);
        assert!(matches!(
            mu.sample(&SeededStream::new(0), 0, 1, Some(&[0.0, 0.0])),
            Err(Error::Domain(_))
        ));
        assert!(mu.sample(&SeededStream::new(0), 0, 1, None).is_err());
    }

    #[test]
    fn cell_values_do_not_depend_on_sample_count() {
        let mu = MeasureSpec::gaussian(3);
        let st = SeededStream::new(11).at_iteration(4);
        let a = mu.sample(&st, 2, 10, None).unwrap();
        let b = mu.sample(&st, 2, 50, None).unwrap();
        for i in 0..10 {
            assert_eq!(a.point(i), b.point(i));
        }
        let c = mu.sample(&st, 3, 10, None).unwrap();
        assert_ne!(a.point(0), c.point(0));
        let e = mu.sample(&st.at_iteration(5), 2, 10, None).unwrap();
        assert_ne!(a.point(0), e.point(0));
    }

    #[test]
    fn component_stream_matches_direct_rng() {
        use rand::Rng;
        let st = SeededStream::new(5).at_iteration(9);
        let cs = st.component(1);
        for i in [0u64, 1, 17] {
            let a: u64 = cs.rng(i).random();
            let b: u64 = st.rng(1, i).random();
            assert_eq!(a, b);
        }
    }
}
