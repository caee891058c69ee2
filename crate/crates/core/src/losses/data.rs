use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::measures::SeededStream;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Immutable labelled examples, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxTruncated {
            path: path.to_string(),
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Reads an IDX image/label pair (raw or gzip-compressed). Pixels are
/// scaled to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let ip = images_path.as_ref();
    let lp = labels_path.as_ref();
    let ipn = ip.display().to_string();
    let lpn = lp.display().to_string();

    let img = read_maybe_gz(ip)?;
    let magic = be_u32(&img, 0, &ipn)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxMagic {
            path: ipn,
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&img, 4, &ipn)? as usize;
    let rows = be_u32(&img, 8, &ipn)? as usize;
    let cols = be_u32(&img, 12, &ipn)? as usize;
    let pixels = rows * cols;
    let expected = 16 + n * pixels;
    if img.len() < expected {
        return Err(Error::IdxTruncated {
            path: ipn,
            expected,
            actual: img.len(),
        });
    }

    let lab = read_maybe_gz(lp)?;
    let magic = be_u32(&lab, 0, &lpn)?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxMagic {
            path: lpn,
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let nl = be_u32(&lab, 4, &lpn)? as usize;
    if lab.len() < 8 + nl {
        return Err(Error::IdxTruncated {
            path: lpn,
            expected: 8 + nl,
            actual: lab.len(),
        });
    }
    if nl != n {
        return Err(Error::IdxCountMismatch {
            images: n,
            labels: nl,
        });
    }

    let features = Array2::from_shape_fn((n, pixels), |(i, j)| img[16 + i * pixels + j] as f64 / 255.0);
    let labels: Vec<usize> = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    Dataset::new(features, labels, num_classes, Split::Train)
}

/// Parameters for [`synth_blobs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthBlobs {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for SynthBlobs {
    fn default() -> Self {
        Self {
            num_classes: 3,
            per_class: 100,
            dim: 2,
            spread: 0.3,
        }
    }
}

/// Isotropic Gaussian clusters around unit-circle vertices in the first two
/// coordinates (the regular simplex for three classes).
pub fn synth_blobs(cfg: SynthBlobs, stream: &SeededStream) -> Result<Dataset> {
    if cfg.num_classes == 0 || cfg.per_class == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument("blob counts must be positive".into()));
    }
    if !(cfg.spread >= 0.0 && cfg.spread.is_finite()) {
        return Err(Error::InvalidArgument("blob spread must be nonnegative".into()));
    }
    let n = cfg.num_classes * cfg.per_class;
    let mut features = Array2::zeros((n, cfg.dim));
    let mut labels = Vec::with_capacity(n);
    let cs = stream.component(0);
    for c in 0..cfg.num_classes {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / cfg.num_classes as f64;
        let mut center = vec![0.0; cfg.dim];
        center[0] = angle.cos();
        if cfg.dim > 1 {
            center[1] = angle.sin();
        }
        for k in 0..cfg.per_class {
            let row = c * cfg.per_class + k;
            let mut rng = cs.rng(row as u64);
            for (j, &m) in center.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[[row, j]] = m + cfg.spread * z;
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, cfg.num_classes, Split::Train)
}
