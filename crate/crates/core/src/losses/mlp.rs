use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{Dataset, LossFunction};
use crate::error::{check_dim, Error, Result};
use crate::measures::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Tanh => z.tanh(),
        }
    }

    /// `f'(z)` given `z` and `a = f(z)`.
    fn d1(self, z: f64, a: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - a * a,
        }
    }

    fn d2(self, a: f64) -> f64 {
        match self {
            Self::Relu => 0.0,
            Self::Tanh => -2.0 * a * (1.0 - a * a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    SoftmaxCrossEntropy,
    /// `½‖z − onehot(y)‖²`
    MeanSquaredError,
}

/// Fully connected network. Parameters are flattened layer by layer as the
/// row-major `fan_in × fan_out` weight block followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

struct Layer<'p> {
    w: ArrayView2<'p, f64>,
    b: ArrayView1<'p, f64>,
}

struct Forward {
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl MlpModel {
    pub fn new(sizes: Vec<usize>, activation: Activation, head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes need ≥ 2 positive entries, got {sizes:?}"
            )));
        }
        Ok(Self {
            sizes,
            activation,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    /// Uniform `±√(6/(fan_in + fan_out))` weights, zero biases.
    pub fn init_params(&self, stream: &SeededStream) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fi, fo) = (w[0], w[1]);
            let bound = (6.0 / (fi + fo) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let mut rng = stream.rng(l as u64, 0);
            p.extend((0..fi * fo).map(|_| dist.sample(&mut rng)));
            p.extend(std::iter::repeat_n(0.0, fo));
        }
        p
    }

    fn layers<'p>(&self, p: &'p [f64]) -> Vec<Layer<'p>> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let (fi, fo) = (w[0], w[1]);
                let wv = ArrayView2::from_shape((fi, fo), &p[off..off + fi * fo]).expect("layout");
                off += fi * fo;
                let bv = ArrayView1::from(&p[off..off + fo]);
                off += fo;
                Layer { w: wv, b: bv }
            })
            .collect()
    }

    fn forward(&self, layers: &[Layer], x: ArrayView2<f64>) -> Forward {
        let n = layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(n - 1);
        for (l, layer) in layers.iter().enumerate() {
            let z = {
                let a = if l == 0 { x } else { post[l - 1].view() };
                a.dot(&layer.w) + &layer.b
            };
            if l + 1 < n {
                post.push(z.mapv(|v| self.activation.apply(v)));
            }
            pre.push(z);
        }
        Forward { pre, post }
    }

    /// Mean loss and `∂loss/∂logits` for a batch.
    fn head(&self, logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>, Array2<f64>)> {
        let bsz = labels.len() as f64;
        let mut total = 0.0;
        let mut dz = Array2::zeros(logits.raw_dim());
        let mut probs = Array2::zeros(logits.raw_dim());
        for (i, (row, &y)) in logits.axis_iter(Axis(0)).zip(labels).enumerate() {
            match self.head {
                Head::SoftmaxCrossEntropy => {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    total += lse - row[y];
                    for (k, &z) in row.iter().enumerate() {
                        let p = (z - lse).exp();
                        probs[[i, k]] = p;
                        dz[[i, k]] = (p - if k == y { 1.0 } else { 0.0 }) / bsz;
                    }
                }
                Head::MeanSquaredError => {
                    for (k, &z) in row.iter().enumerate() {
                        let r = z - if k == y { 1.0 } else { 0.0 };
                        total += 0.5 * r * r;
                        dz[[i, k]] = r / bsz;
                    }
                }
            }
        }
        let loss = total / bsz;
        if !loss.is_finite() {
            return Err(Error::NonFinite("MLP batch loss".into()));
        }
        Ok((loss, dz, probs))
    }

    fn check_batch(&self, p: &[f64], x: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
        check_dim(self.num_params(), p.len())?;
        check_dim(self.input_dim(), x.ncols())?;
        check_dim(x.nrows(), labels.len())?;
        if labels.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.output_dim()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} exceeds the output width {}",
                self.output_dim()
            )));
        }
        Ok(())
    }

    pub fn loss(&self, p: &[f64], x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        self.check_batch(p, x, labels)?;
        let layers = self.layers(p);
        let fw = self.forward(&layers, x);
        Ok(self.head(fw.pre.last().expect("nonempty"), labels)?.0)
    }

    pub fn loss_and_grad(&self, p: &[f64], x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(p, x, labels)?;
        let layers = self.layers(p);
        let fw = self.forward(&layers, x);
        let (loss, mut dz, _) = self.head(fw.pre.last().expect("nonempty"), labels)?;
        let mut blocks: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(layers.len());
        for l in (0..layers.len()).rev() {
            let a = if l == 0 { x } else { fw.post[l - 1].view() };
            blocks.push((a.t().dot(&dz), dz.sum_axis(Axis(0))));
            if l > 0 {
                let mut da = dz.dot(&layers[l].w.t());
                let act = self.activation;
                ndarray::Zip::from(&mut da)
                    .and(&fw.pre[l - 1])
                    .and(&fw.post[l - 1])
                    .for_each(|d, &z, &a| *d *= act.d1(z, a));
                dz = da;
            }
        }
        Ok((loss, flatten(blocks.into_iter().rev(), self.num_params())))
    }

    /// Exact `∇²L · v` by forward-mode differentiation of backprop.
    pub fn hvp(&self, p: &[f64], x: ArrayView2<f64>, labels: &[usize], v: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(p, x, labels)?;
        check_dim(self.num_params(), v.len())?;
        let layers = self.layers(p);
        let dirs = self.layers(v);
        let act = self.activation;
        let fw = self.forward(&layers, x);
        let nl = layers.len();

        let mut rz: Vec<Array2<f64>> = Vec::with_capacity(nl);
        let mut ra: Vec<Array2<f64>> = Vec::with_capacity(nl - 1);
        for l in 0..nl {
            let mut r = if l == 0 {
                x.dot(&dirs[0].w)
            } else {
                ra[l - 1].dot(&layers[l].w) + fw.post[l - 1].dot(&dirs[l].w)
            };
            r += &dirs[l].b;
            if l + 1 < nl {
                let mut a = r.clone();
                ndarray::Zip::from(&mut a)
                    .and(&fw.pre[l])
                    .and(&fw.post[l])
                    .for_each(|o, &z, &av| *o *= act.d1(z, av));
                ra.push(a);
            }
            rz.push(r);
        }

        let bsz = labels.len() as f64;
        let (_, mut dz, probs) = self.head(&fw.pre[nl - 1], labels)?;
        let mut rdz = match self.head {
            Head::SoftmaxCrossEntropy => {
                let mut out = Array2::zeros(probs.raw_dim());
                for ((mut o, p), r) in out
                    .axis_iter_mut(Axis(0))
                    .zip(probs.axis_iter(Axis(0)))
                    .zip(rz[nl - 1].axis_iter(Axis(0)))
                {
                    let pr: f64 = p.dot(&r);
                    for k in 0..o.len() {
                        o[k] = p[k] * (r[k] - pr) / bsz;
                    }
                }
                out
            }
            Head::MeanSquaredError => &rz[nl - 1] / bsz,
        };

        let mut blocks: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(nl);
        for l in (0..nl).rev() {
            let a = if l == 0 { x } else { fw.post[l - 1].view() };
            let mut hw = a.t().dot(&rdz);
            if l > 0 {
                hw += &ra[l - 1].t().dot(&dz);
            }
            blocks.push((hw, rdz.sum_axis(Axis(0))));
            if l > 0 {
                let da = dz.dot(&layers[l].w.t());
                let rda = rdz.dot(&layers[l].w.t()) + dz.dot(&dirs[l].w.t());
                let mut ndz = da.clone();
                let mut nrdz = rda;
                ndarray::Zip::from(&mut ndz)
                    .and(&mut nrdz)
                    .and(&da)
                    .and(&fw.pre[l - 1])
                    .and(&fw.post[l - 1])
                    .and(&rz[l - 1])
                    .for_each(|d, rd, &dav, &z, &av, &r| {
                        let f1 = act.d1(z, av);
                        *d = dav * f1;
                        *rd = *rd * f1 + dav * act.d2(av) * r;
                    });
                dz = ndz;
                rdz = nrdz;
            }
        }
        Ok(flatten(blocks.into_iter().rev(), self.num_params()))
    }

    pub fn predict(&self, p: &[f64], x: ArrayView2<f64>) -> Result<Vec<usize>> {
        check_dim(self.num_params(), p.len())?;
        check_dim(self.input_dim(), x.ncols())?;
        let layers = self.layers(p);
        let fw = self.forward(&layers, x);
        Ok(fw.pre[layers.len() - 1]
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn accuracy(&self, p: &[f64], data: &Dataset) -> Result<f64> {
        let pred = self.predict(p, data.features.view())?;
        let hits = pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    /// Loss over a whole dataset.
    pub fn batch<'a>(&'a self, data: &'a Dataset) -> MlpBatch<'a> {
        MlpBatch {
            model: self,
            features: data.features.view(),
            labels: &data.labels,
        }
    }
}

fn flatten(blocks: impl Iterator<Item = (Array2<f64>, Array1<f64>)>, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    for (w, b) in blocks {
        out.extend(w.iter());
        out.extend(b.iter());
    }
    out
}

/// The MLP loss on a fixed batch, as a function of the parameters.
#[derive(Debug, Clone)]
pub struct MlpBatch<'a> {
    pub model: &'a MlpModel,
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

impl LossFunction for MlpBatch<'_> {
    fn dim(&self) -> usize {
        self.model.num_params()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.model.loss(x, self.features, self.labels)
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(x)?.1)
    }

    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.model.loss_and_grad(x, self.features, self.labels)
    }

    fn exact_hvp(&self, x: &[f64], z: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.model.hvp(x, self.features, self.labels, z))
    }
}
