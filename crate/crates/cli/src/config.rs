//! JSON experiment configuration. Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use sharpness_core::linalg::SymmetricMatrix;
use sharpness_core::losses::{
    default_fd_step, finite_diff_hessian, load_idx, synth_blobs, Activation, Dataset, Head,
    LossFunction, MlpModel, QuadraticLoss, RotInvToy, SaddleToy, ScaleInvToy, Split, SynthBlobs,
};
use sharpness_core::measures::{MeasureSpec, SeededStream};
use sharpness_core::optim::TrainConfig;
use sharpness_core::sharpness::{SharpnessSpec, SpecPreset};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss: LossConfig,
    #[serde(default)]
    pub point: Option<Vec<f64>>,
    #[serde(default)]
    pub optimizer: Option<TrainConfig>,
    #[serde(default)]
    pub spec: Option<SpecPreset>,
    /// Replaces the measure of every component of `spec`.
    #[serde(default)]
    pub measure: Option<MeasureConfig>,
    #[serde(default)]
    pub presets: Option<Vec<SpecPreset>>,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossConfig {
    SaddleToy {},
    ScaleInvToy {},
    RotInvToy {
        dim: usize,
    },
    Quadratic {
        hessian: Vec<Vec<f64>>,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// An explicit Hessian with no loss attached.
    Matrix {
        hessian: Vec<Vec<f64>>,
    },
    Mlp {
        sizes: Vec<usize>,
        activation: Activation,
        #[serde(default = "default_head")]
        head: Head,
        data: DataConfig,
    },
}

fn default_head() -> Head {
    Head::SoftmaxCrossEntropy
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Blobs {
        #[serde(default = "blob_classes")]
        num_classes: usize,
        #[serde(default = "blob_per_class")]
        per_class: usize,
        #[serde(default = "blob_dim")]
        dim: usize,
        #[serde(default = "blob_spread")]
        spread: f64,
        #[serde(default)]
        test_per_class: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn blob_classes() -> usize {
    SynthBlobs::default().num_classes
}
fn blob_per_class() -> usize {
    SynthBlobs::default().per_class
}
fn blob_dim() -> usize {
    SynthBlobs::default().dim
}
fn blob_spread() -> f64 {
    SynthBlobs::default().spread
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureConfig {
    Gaussian {},
    Sphere {},
    Hypercube { t: f64 },
}

impl MeasureConfig {
    pub fn build(&self, dim: usize) -> CliResult<MeasureSpec> {
        Ok(match *self {
            Self::Gaussian {} => MeasureSpec::gaussian(dim),
            Self::Sphere {} => MeasureSpec::sphere(dim),
            Self::Hypercube { t } => MeasureSpec::hypercube(dim, t)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodePlacement {
    Equispaced,
    Chebyshev,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub seed: u64,
    /// Monte-Carlo sample count for measure and regularizer estimates.
    pub samples: usize,
    pub lambdas: Option<Vec<f64>>,
    pub rhos: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    /// Probe count for Hessian trace / Frobenius estimates during training.
    pub probes: Option<usize>,
    /// Number of training examples the Hessian estimates are computed on.
    pub subsample: usize,
    /// Estimate the Hessian norms every this many epochs (and at the end).
    pub sharpness_every: usize,
    /// Diagonal rescaling factors `k` for `(kx₁, x₂/k)`.
    pub scales: Option<Vec<f64>>,
    /// Rotation angles in degrees, in the plane of the first two coordinates.
    pub angles_deg: Option<Vec<f64>>,
    pub points: Option<Vec<Vec<f64>>>,
    /// Additional random (point, transform) pairs.
    pub random_pairs: usize,
    pub node_placement: NodePlacement,
    pub node_fraction: f64,
    /// If set, eigenvalues are also reconstructed from sampled moments.
    pub mc_samples: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 200_000,
            lambdas: None,
            rhos: None,
            seeds: None,
            probes: None,
            subsample: 1280,
            sharpness_every: 1,
            scales: None,
            angles_deg: None,
            points: None,
            random_pairs: 0,
            node_placement: NodePlacement::Chebyshev,
            node_fraction: 0.9,
            mc_samples: None,
        }
    }
}

/// A parsed config plus the bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config = parse_config(&bytes)?;
    Ok(LoadedConfig {
        config,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        hash: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn parse_config(bytes: &[u8]) -> CliResult<ExperimentConfig> {
    serde_json::from_slice(bytes).map_err(|e| CliError::Config(e.to_string()))
}

/// A loss instantiated from its config.
pub enum BuiltLoss {
    Function(Box<dyn LossFunction + Send + Sync>),
    Matrix(SymmetricMatrix),
    Mlp {
        model: MlpModel,
        train: Dataset,
        test: Option<Dataset>,
    },
}

/// Where a Hessian came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianSource {
    Exact,
    FiniteDifference,
    Explicit,
}

impl BuiltLoss {
    pub fn dim(&self) -> usize {
        match self {
            Self::Function(f) => f.dim(),
            Self::Matrix(m) => m.dim(),
            Self::Mlp { model, .. } => model.num_params(),
        }
    }

    pub fn function(&self) -> CliResult<&dyn LossFunction> {
        match self {
            Self::Function(f) => Ok(f.as_ref()),
            _ => Err(CliError::Config(
                "this subcommand needs an analytic loss (saddle-toy, scale-inv-toy, rot-inv-toy, quadratic)".into(),
            )),
        }
    }

    /// Hessian at `point` (ignored for explicit matrices).
    pub fn hessian_at(&self, point: Option<&[f64]>) -> CliResult<(SymmetricMatrix, HessianSource)> {
        match self {
            Self::Matrix(m) => Ok((m.clone(), HessianSource::Explicit)),
            Self::Function(f) => {
                let x = point.ok_or_else(|| CliError::Config("`point` is required for this loss".into()))?;
                if x.len() != f.dim() {
                    return Err(CliError::Config(format!(
                        "`point` has {} coordinates but the loss has dimension {}",
                        x.len(),
                        f.dim()
                    )));
                }
                match f.exact_hessian(x) {
                    Some(h) => Ok((h?, HessianSource::Exact)),
                    None => Ok((finite_diff_hessian(f.as_ref(), x, default_fd_step(x))?, HessianSource::FiniteDifference)),
                }
            }
            Self::Mlp { .. } => Err(CliError::Config(
                "dense Hessians are not available for the MLP loss".into(),
            )),
        }
    }
}

fn matrix(rows: &[Vec<f64>]) -> CliResult<SymmetricMatrix> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
        return Err(CliError::Config("`hessian` must be a nonempty square array".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config("`hessian` entries must be finite".into()));
    }
    let scale = rows.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate().skip(i + 1) {
            if (v - rows[j][i]).abs() > 1e-12 * scale {
                return Err(CliError::Config(format!("`hessian` is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(SymmetricMatrix::from_rows(rows)?)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl LossConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SaddleToy {} => "saddle-toy",
            Self::ScaleInvToy {} => "scale-inv-toy",
            Self::RotInvToy { .. } => "rot-inv-toy",
            Self::Quadratic { .. } => "quadratic",
            Self::Matrix { .. } => "matrix",
            Self::Mlp { .. } => "mlp",
        }
    }

    pub fn build(&self, base_dir: &Path) -> CliResult<BuiltLoss> {
        Ok(match self {
            Self::SaddleToy {} => BuiltLoss::Function(Box::new(SaddleToy)),
            Self::ScaleInvToy {} => BuiltLoss::Function(Box::new(ScaleInvToy)),
            Self::RotInvToy { dim } => {
                if *dim == 0 {
                    return Err(CliError::Config("rot-inv-toy needs dim ≥ 1".into()));
                }
                BuiltLoss::Function(Box::new(RotInvToy { dim: *dim }))
            }
            Self::Quadratic { hessian, center } => {
                let h = matrix(hessian)?;
                let c = center.clone().unwrap_or_else(|| vec![0.0; h.dim()]);
                BuiltLoss::Function(Box::new(QuadraticLoss::new(h, c)?))
            }
            Self::Matrix { hessian } => BuiltLoss::Matrix(matrix(hessian)?),
            Self::Mlp {
                sizes,
                activation,
                head,
                data,
            } => {
                let model = MlpModel::new(sizes.clone(), *activation, *head)?;
                let (train, test) = data.load(base_dir)?;
                if train.num_features() != model.input_dim() {
                    return Err(CliError::Config(format!(
                        "data has {} features but the network input is {}",
                        train.num_features(),
                        model.input_dim()
                    )));
                }
                if train.num_classes > model.output_dim() {
                    return Err(CliError::Config(format!(
                        "data has {} classes but the network output is {}",
                        train.num_classes,
                        model.output_dim()
                    )));
                }
                BuiltLoss::Mlp { model, train, test }
            }
        })
    }
}

impl DataConfig {
    pub fn load(&self, base: &Path) -> CliResult<(Dataset, Option<Dataset>)> {
        match self {
            Self::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => {
                let mut train = load_idx(resolve(base, train_images), resolve(base, train_labels))?;
                if let Some(n) = train_limit {
                    train = train.head(*n);
                }
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => {
                        let mut t = load_idx(resolve(base, i), resolve(base, l))?.with_split(Split::Test);
                        if let Some(n) = test_limit {
                            t = t.head(*n);
                        }
                        Some(t)
                    }
                    (None, None) => None,
                    _ => {
                        return Err(CliError::Config(
                            "test_images and test_labels must be given together".into(),
                        ))
                    }
                };
                Ok((train, test))
            }
            Self::Blobs {
                num_classes,
                per_class,
                dim,
                spread,
                test_per_class,
                seed,
            } => {
                let cfg = SynthBlobs {
                    num_classes: *num_classes,
                    per_class: *per_class,
                    dim: *dim,
                    spread: *spread,
                };
                let root = SeededStream::new(*seed);
                let train = synth_blobs(cfg, &root.fork(1))?;
                let test = if *test_per_class > 0 {
                    Some(
                        synth_blobs(
                            SynthBlobs {
                                per_class: *test_per_class,
                                ..cfg
                            },
                            &root.fork(2),
                        )?
                        .with_split(Split::Test),
                    )
                } else {
                    None
                };
                Ok((train, test))
            }
        }
    }
}

impl ExperimentConfig {
    pub fn require_point(&self) -> CliResult<&[f64]> {
        self.point
            .as_deref()
            .ok_or_else(|| CliError::Config("`point` is required".into()))
    }

    pub fn require_spec(&self) -> CliResult<SpecPreset> {
        self.spec
            .ok_or_else(|| CliError::Config("`spec` is required".into()))
    }

    pub fn require_optimizer(&self) -> CliResult<&TrainConfig> {
        self.optimizer
            .as_ref()
            .ok_or_else(|| CliError::Config("`optimizer` is required".into()))
    }

    /// The configured preset, with the measure override applied.
    pub fn build_spec(&self, dim: usize) -> CliResult<SharpnessSpec> {
        let mut spec = self.require_spec()?.build(dim)?;
        if let Some(m) = &self.measure {
            let mu = m.build(dim)?;
            for c in &mut spec.components {
                c.measure = mu.clone();
            }
        }
        Ok(spec)
    }
}

pub fn nonempty<'a, T>(v: &'a Option<Vec<T>>, name: &str) -> CliResult<&'a [T]> {
    match v {
        Some(v) if !v.is_empty() => Ok(v),
        Some(_) => Err(CliError::Config(format!("`study.{name}` must not be empty"))),
        None => Err(CliError::Config(format!("`study.{name}` is required"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = parse_config(br#"{"loss":{"name":"saddle-toy"},"point":[0,0]}"#).unwrap();
        assert!(matches!(c.loss, LossConfig::SaddleToy {}));
        assert_eq!(c.study.samples, 200_000);
    }

    #[test]
    fn schema_rejections() {
        let bad: &[&[u8]] = &[
            br#"{}"#,
            br#"{"loss":{"name":"saddle-toy","extra":1}}"#,
            br#"{"loss":{"name":"saddle-toy"},"bogus":true}"#,
            br#"{"loss":{"name":"rot-inv-toy"}}"#,
            br#"{"loss":{"name":"rot-inv-toy","dim":"two"}}"#,
            br#"{"loss":{"name":"nope"}}"#,
            br#"{"loss":{"name":"saddle-toy"},"point":"origin"}"#,
            br#"{"loss":{"name":"saddle-toy"},"study":{"sampels":3}}"#,
            br#"{"loss":{"name":"saddle-toy"},"spec":{"preset":"determinant"}}"#,
            br#"{"loss":{"name":"saddle-toy"},"optimizer":{"kind":"sgd","lr":0.1}}"#,
            br#"{"loss":{"name":"saddle-toy"},"measure":{"kind":"hypercube"}}"#,
            br#"{"loss":{"name":"mlp","sizes":[2,2],"activation":"relu","data":{"kind":"blobs","x":1}}}"#,
            br#"{"loss":{"name":"saddle-toy"},"study":{"samples":-1}}"#,
        ];
        for b in bad {
            assert!(parse_config(b).is_err(), "{}", String::from_utf8_lossy(b));
        }
    }
}
