//! Comparison of attribution methods by how much of each attribution lies in
//! the tangent space of the data manifold.
//!
//! An [`ExperimentConfig`] names a dataset, a model, a tangent-space provider
//! and a list of methods. [`run_comparison`] explains a seeded sample of
//! points with every method and writes
//!
//! * `metrics.csv`: one row per point and method, sorted by `point_id` then
//!   method name, with columns `point_id,method,target,n,d,mu,norm_fraction,E`;
//! * `summary.csv`: per-method statistics recomputed from `metrics.csv`;
//! * `hist_mu.svg`, `hist_norm_fraction.svg`: normalized histograms with the
//!   `√(n/d)` reference line (and `n/d` on the μ plot);
//! * `optimizer.csv`: final state of every tangential base-point search;
//! * `timings.csv`: wall time per point and method.
//!
//! Everything except `timings.csv` is byte-identical across runs with the
//! same configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    gradient_explainer, input_times_gradient, integrated_gradients, smoothgrad, SMOOTHGRAD_SAMPLES,
    SMOOTHGRAD_SIGMA,
};
use crate::basepoint::{
    baseline_basepoint, AlignmentObjective, BaselineSpec, OptimizerConfig, OptimizerTrace, PNorm,
};
use crate::data::{generate_synthetic, sample_indices, Dataset, Manifest, SyntheticSpec};
use crate::error::{Error, Result};
use crate::manifold::{ManifoldProvider, TangentBasis};
use crate::nn::{train_autoencoder, train_classifier, AutoencoderPair, DenseNetwork, Model, Probabilities, TrainConfig};
use crate::numerics::{Matrix, Vector};
use crate::plot::{render_gallery, render_histogram, GalleryCell, GalleryRow, HistogramOptions, Metric, ReferenceLine, Series};

/// Attribution methods compared by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    IgZero,
    IgMaxDistance,
    IgUniform,
    IgGaussian,
    /// IG from the base-point found by minimizing the alignment energy.
    IgTangential,
    Gradient,
    Smoothgrad,
    InputTimesGradient,
    /// Isotropic Gaussian noise: the chance level for μ.
    Random,
}

impl MethodSpec {
    pub const ALL: [MethodSpec; 9] = [
        MethodSpec::IgZero,
        MethodSpec::IgMaxDistance,
        MethodSpec::IgUniform,
        MethodSpec::IgGaussian,
        MethodSpec::IgTangential,
        MethodSpec::Gradient,
        MethodSpec::Smoothgrad,
        MethodSpec::InputTimesGradient,
        MethodSpec::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodSpec::IgZero => "ig_zero",
            MethodSpec::IgMaxDistance => "ig_max_distance",
            MethodSpec::IgUniform => "ig_uniform",
            MethodSpec::IgGaussian => "ig_gaussian",
            MethodSpec::IgTangential => "ig_tangential",
            MethodSpec::Gradient => "gradient",
            MethodSpec::Smoothgrad => "smoothgrad",
            MethodSpec::InputTimesGradient => "input_times_gradient",
            MethodSpec::Random => "random",
        }
    }

    /// Whether the method is IG from some base-point, so that an alignment
    /// energy is defined for it.
    pub fn uses_base_point(self) -> bool {
        matches!(
            self,
            MethodSpec::IgZero
                | MethodSpec::IgMaxDistance
                | MethodSpec::IgUniform
                | MethodSpec::IgGaussian
                | MethodSpec::IgTangential
        )
    }

    fn tag(self) -> u64 {
        MethodSpec::ALL.iter().position(|m| *m == self).unwrap() as u64 + 1
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodSpec::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Which output the attributions explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// The model's predicted class at `x`.
    #[default]
    Predicted,
    /// The dataset label of `x`.
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Logit,
    Probability,
}

/// Starting point of the tangential base-point search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentialInit {
    #[default]
    Zero,
    MaxDistance,
    Uniform,
    Gaussian,
}

/// Exactly one of `manifest` (path to a dataset manifest) or `synthetic`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub manifest: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// Decoder Jacobian of the `[autoencoder]` section's model.
    Decoder { latent: usize },
    Subspace { axes: Vec<usize> },
    Sphere {
        sphere_dims: usize,
        #[serde(default = "one")]
        radius: f64,
    },
    /// A fixed basis read from a tangent-basis file.
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

/// A single linear layer `F(x) = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub bias: Option<Vec<f64>>,
}

/// Exactly one of `path` (a saved network), `train` or `linear`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    pub path: Option<PathBuf>,
    pub train: Option<TrainConfig>,
    pub linear: Option<LinearSpec>,
}

/// Either both `encoder` and `decoder` paths, or `train`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSource {
    pub encoder: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub train: Option<TrainConfig>,
}

/// Experiment description, read from TOML.
///
/// ```toml
/// seed = 0
/// sample_size = 100
/// methods = ["ig_zero", "ig_tangential", "gradient"]
/// output_dir = "out/digits"
///
/// [dataset]
/// manifest = "../data/digits/manifest.toml"
///
/// [provider]
/// kind = "decoder"
/// latent = 10
///
/// [autoencoder.train]
/// epochs = 30
///
/// [model.train]
/// epochs = 30
///
/// [optimizer]
/// learning_rate = 0.1
/// max_iters = 200
/// ```
///
/// Input paths resolve against the directory of the config file;
/// `output_dir` resolves against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Midpoint-rule steps for every IG evaluation, including the ones
    /// inside the base-point search.
    #[serde(default = "default_steps")]
    pub quadrature_steps: usize,
    #[serde(default)]
    pub target: TargetRule,
    #[serde(default)]
    pub output: OutputKind,
    #[serde(default = "default_gaussian_sigma")]
    pub gaussian_sigma: f64,
    #[serde(default = "default_p_norm")]
    pub max_distance_norm: PNorm,
    #[serde(default = "default_smoothgrad_sigma")]
    pub smoothgrad_sigma: f64,
    #[serde(default = "default_smoothgrad_samples")]
    pub smoothgrad_samples: usize,
    /// Initial base-point of the tangential search. It is clipped into the
    /// data box; if it then lies within the separation floor of `x`, the
    /// farthest dataset point is used instead.
    #[serde(default)]
    pub tangential_init: TangentialInit,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub kde: bool,
    pub dataset: DatasetSource,
    pub provider: ProviderSpec,
    pub model: ModelSource,
    #[serde(default)]
    pub autoencoder: Option<AutoencoderSource>,
    /// Shared by all points.
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_sample_size() -> usize {
    200
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_steps() -> usize {
    crate::attribution::DEFAULT_STEPS
}
fn default_gaussian_sigma() -> f64 {
    0.5
}
fn default_p_norm() -> PNorm {
    PNorm::L2
}
fn default_smoothgrad_sigma() -> f64 {
    SMOOTHGRAD_SIGMA
}
fn default_smoothgrad_samples() -> usize {
    SMOOTHGRAD_SAMPLES
}
fn default_bins() -> usize {
    crate::plot::DEFAULT_BINS
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.methods.is_empty() {
            return fail("methods must not be empty");
        }
        if self.sample_size == 0 {
            return fail("sample_size must be at least 1");
        }
        if self.quadrature_steps == 0 {
            return fail("quadrature_steps must be at least 1");
        }
        if !(self.gaussian_sigma >= 0.0) || !(self.smoothgrad_sigma >= 0.0) || self.smoothgrad_samples == 0 {
            return fail("gaussian_sigma, smoothgrad_sigma >= 0 and smoothgrad_samples >= 1 required");
        }
        if self.bins == 0 {
            return fail("bins must be at least 1");
        }
        if self.dataset.manifest.is_some() == self.dataset.synthetic.is_some() {
            return fail("[dataset] needs exactly one of `manifest` or `synthetic`");
        }
        let m = &self.model;
        if [m.path.is_some(), m.train.is_some(), m.linear.is_some()].iter().filter(|b| **b).count() != 1 {
            return fail("[model] needs exactly one of `path`, `train` or `linear`");
        }
        if let Some(t) = &m.train {
            t.validate()?;
        }
        match (&self.provider, &self.autoencoder) {
            (ProviderSpec::Decoder { .. }, None) => return fail("a decoder provider needs an [autoencoder] section"),
            (ProviderSpec::Decoder { .. }, Some(ae)) => {
                let paths = ae.encoder.is_some() && ae.decoder.is_some();
                let partial = ae.encoder.is_some() != ae.decoder.is_some();
                if partial || paths == ae.train.is_some() {
                    return fail("[autoencoder] needs both `encoder` and `decoder`, or `train`");
                }
                if let Some(t) = &ae.train {
                    t.validate()?;
                }
            }
            _ => {}
        }
        self.optimizer.validate()
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }
}

/// The classifier as explained: logits or softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub net: DenseNetwork,
    pub output: OutputKind,
}

impl Model for ScoredModel {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn forward(&self, x: &Vector) -> Result<Vector> {
        match self.output {
            OutputKind::Logit => self.net.forward(x),
            OutputKind::Probability => Probabilities(&self.net).forward(x),
        }
    }

    fn input_gradient(&self, x: &Vector, target: usize) -> Result<Vector> {
        match self.output {
            OutputKind::Logit => self.net.input_gradient(x, target),
            OutputKind::Probability => Probabilities(&self.net).input_gradient(x, target),
        }
    }

    fn predicted_class(&self, x: &Vector) -> Result<usize> {
        // Softmax is monotone; logits decide.
        self.net.predicted_class(x)
    }
}

/// A configuration with its dataset loaded and models trained or read.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub model: ScoredModel,
    pub provider: ManifoldProvider,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.dataset.manifest, &cfg.dataset.synthetic) {
        (Some(path), None) => {
            let path = cfg.resolve(path);
            let manifest = Manifest::read(&path)?;
            manifest.load(path.parent().unwrap_or(Path::new(".")))
        }
        (None, Some(spec)) => generate_synthetic(spec),
        _ => Err(Error::Config("[dataset] needs exactly one of `manifest` or `synthetic`".into())),
    }
}

fn dataset_labels(ds: &Dataset) -> Result<&[usize]> {
    ds.labels()
        .ok_or_else(|| Error::Config(format!("dataset {} has no labels", ds.name())))
}

/// Trains or loads the classifier described by `[model]`.
pub fn build_model(cfg: &ExperimentConfig, ds: &Dataset) -> Result<DenseNetwork> {
    let m = &cfg.model;
    if let Some(path) = &m.path {
        DenseNetwork::load(&cfg.resolve(path))
    } else if let Some(train) = &m.train {
        train_classifier(ds, dataset_labels(ds)?, train)
    } else if let Some(lin) = &m.linear {
        let w = Matrix::from_rows(&lin.weights)?;
        let b = match &lin.bias {
            Some(b) => Vector::from(b.clone()),
            None => Vector::zeros(w.rows()),
        };
        DenseNetwork::linear(w, b)
    } else {
        Err(Error::Config("[model] needs exactly one of `path`, `train` or `linear`".into()))
    }
}

/// Trains or loads the autoencoder described by `[autoencoder]`.
pub fn build_autoencoder(cfg: &ExperimentConfig, ds: &Dataset, latent: usize) -> Result<AutoencoderPair> {
    let src = cfg
        .autoencoder
        .as_ref()
        .ok_or_else(|| Error::Config("missing [autoencoder] section".into()))?;
    let ae = match (&src.encoder, &src.decoder, &src.train) {
        (Some(e), Some(d), None) => {
            AutoencoderPair::new(DenseNetwork::load(&cfg.resolve(e))?, DenseNetwork::load(&cfg.resolve(d))?)?
        }
        (None, None, Some(train)) => train_autoencoder(ds, latent, train)?,
        _ => return Err(Error::Config("[autoencoder] needs both `encoder` and `decoder`, or `train`".into())),
    };
    if ae.latent_dim() != latent {
        return Err(Error::Config(format!(
            "autoencoder latent dimension {} differs from provider latent {latent}",
            ae.latent_dim()
        )));
    }
    Ok(ae)
}

pub fn build_provider(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ManifoldProvider> {
    let d = ds.dim();
    let provider = match &cfg.provider {
        ProviderSpec::Decoder { latent } => ManifoldProvider::Decoder(build_autoencoder(cfg, ds, *latent)?),
        ProviderSpec::Subspace { axes } => ManifoldProvider::subspace(d, axes.clone())
            .map_err(|e| Error::Config(format!("provider axes {axes:?} in R^{d}: {e}")))?,
        ProviderSpec::Sphere { sphere_dims, .. } if *sphere_dims < 2 || *sphere_dims > d => {
            return Err(Error::Config(format!("sphere_dims {sphere_dims} outside 2..={d}")));
        }
        ProviderSpec::Sphere { sphere_dims, radius } => ManifoldProvider::Sphere {
            dim: d,
            sphere_dims: *sphere_dims,
            radius: *radius,
        },
        ProviderSpec::File { path } => ManifoldProvider::from_file(&cfg.resolve(path))?,
    };
    if provider.ambient_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: provider.ambient_dim(),
        });
    }
    Ok(provider)
}

/// What one method produced at one point.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub values: Vector,
    pub target: usize,
    /// Alignment energy, for IG methods.
    pub energy: Option<f64>,
    /// Base-point, for IG methods.
    pub base_point: Option<Vector>,
    /// Search trace, for tangential IG.
    pub trace: Option<OptimizerTrace>,
}

impl Experiment {
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = load_dataset(&config)?;
        let net = build_model(&config, &dataset)?;
        if net.input_dim() != dataset.dim() {
            return Err(Error::DimensionMismatch {
                expected: dataset.dim(),
                found: net.input_dim(),
            });
        }
        let provider = build_provider(&config, &dataset)?;
        if config.sample_size > dataset.len() {
            return Err(Error::Config(format!(
                "sample_size {} exceeds dataset size {}",
                config.sample_size,
                dataset.len()
            )));
        }
        Ok(Experiment {
            model: ScoredModel {
                net,
                output: config.output,
            },
            config,
            dataset,
            provider,
        })
    }

    /// The seeded sample of dataset indices, in increasing order.
    pub fn sample(&self) -> Vec<usize> {
        sample_indices(self.dataset.len(), self.config.sample_size, self.config.seed)
    }

    pub fn target_for(&self, point_id: usize) -> Result<usize> {
        let x = self.point(point_id)?;
        match self.config.target {
            TargetRule::Predicted => self.model.predicted_class(x),
            TargetRule::Label => {
                let label = dataset_labels(&self.dataset)?[point_id];
                if label >= self.model.output_dim() {
                    return Err(Error::InvalidArgument(format!("label {label} out of model range")));
                }
                Ok(label)
            }
        }
    }

    pub fn point(&self, point_id: usize) -> Result<&Vector> {
        self.dataset
            .points()
            .get(point_id)
            .ok_or_else(|| Error::InvalidArgument(format!("point {point_id} out of range")))
    }

    /// Generator for one (point, method) pair, independent of which other
    /// methods or points are evaluated.
    fn rng(&self, point_id: usize, method: MethodSpec) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ method.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(point_id as u64);
        rng
    }

    /// Optimizer configuration shared by all points: the experiment's
    /// quadrature and the dataset's feature bounds.
    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            quadrature_steps: self.config.quadrature_steps,
            bounds: Some(self.dataset.bounds().to_vec()),
            ..self.config.optimizer.clone()
        }
    }

    fn baseline(&self, spec: &BaselineSpec, x: &Vector, rng: &mut ChaCha8Rng) -> Result<Vector> {
        baseline_basepoint(spec, x, &self.dataset, rng)
    }

    fn max_distance(&self) -> BaselineSpec {
        BaselineSpec::MaxDistance {
            p: self.config.max_distance_norm,
        }
    }

    fn tangential_init(&self, x: &Vector, rng: &mut ChaCha8Rng, cfg: &OptimizerConfig) -> Result<Vector> {
        let spec = match self.config.tangential_init {
            TangentialInit::Zero => BaselineSpec::Zero,
            TangentialInit::MaxDistance => self.max_distance(),
            TangentialInit::Uniform => BaselineSpec::Uniform { bounds: None },
            TangentialInit::Gaussian => BaselineSpec::Gaussian {
                sigma: self.config.gaussian_sigma,
            },
        };
        let mut init = self.baseline(&spec, x, rng)?;
        for (a, (lo, hi)) in init.iter_mut().zip(self.dataset.bounds()) {
            *a = a.clamp(*lo, *hi);
        }
        if init.distance(x) < cfg.separation_for(x.len()) {
            init = self.baseline(&self.max_distance(), x, rng)?;
        }
        Ok(init)
    }

    /// Runs one method at one dataset point.
    pub fn attribute(&self, point_id: usize, method: MethodSpec, tangent: &TangentBasis) -> Result<MethodOutcome> {
        let x = self.point(point_id)?;
        let target = self.target_for(point_id)?;
        let steps = self.config.quadrature_steps;
        let mut rng = self.rng(point_id, method);
        let ig_from = |base: Vector| -> Result<MethodOutcome> {
            let values = integrated_gradients(&self.model, x, &base, steps, target)?.values;
            let h = tangent.project_normal(&values)?;
            Ok(MethodOutcome {
                values,
                target,
                energy: Some(0.5 * h.norm_squared()),
                base_point: Some(base),
                trace: None,
            })
        };
        let plain = |values: Vector| MethodOutcome {
            values,
            target,
            energy: None,
            base_point: None,
            trace: None,
        };
        match method {
            MethodSpec::IgZero => ig_from(self.baseline(&BaselineSpec::Zero, x, &mut rng)?),
            MethodSpec::IgMaxDistance => ig_from(self.baseline(&self.max_distance(), x, &mut rng)?),
            MethodSpec::IgUniform => ig_from(self.baseline(&BaselineSpec::Uniform { bounds: None }, x, &mut rng)?),
            MethodSpec::IgGaussian => ig_from(self.baseline(
                &BaselineSpec::Gaussian {
                    sigma: self.config.gaussian_sigma,
                },
                x,
                &mut rng,
            )?),
            MethodSpec::IgTangential => {
                let cfg = self.optimizer_config();
                let init = self.tangential_init(x, &mut rng, &cfg)?;
                let objective = AlignmentObjective::new(&self.model, x, tangent, steps, target)?;
                let (alpha, trace) = objective.minimize(&cfg, &init)?;
                let mut out = ig_from(alpha)?;
                out.trace = Some(trace);
                Ok(out)
            }
            MethodSpec::Gradient => Ok(plain(gradient_explainer(&self.model, x, target)?.values)),
            MethodSpec::Smoothgrad => {
                let seed = self.config.seed ^ (point_id as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
                let a = smoothgrad(
                    &self.model,
                    x,
                    target,
                    self.config.smoothgrad_sigma,
                    self.config.smoothgrad_samples,
                    seed,
                )?;
                Ok(plain(a.values))
            }
            MethodSpec::InputTimesGradient => Ok(plain(input_times_gradient(&self.model, x, target)?.values)),
            MethodSpec::Random => Ok(plain((0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect())),
        }
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub point_id: usize,
    pub method: String,
    pub target: usize,
    /// Tangent-space dimension at the point.
    pub n: usize,
    pub d: usize,
    /// `None` for an all-zero attribution.
    pub mu: Option<f64>,
    pub norm_fraction: Option<f64>,
    /// Alignment energy; IG methods only.
    pub energy: Option<f64>,
}

impl MetricsRecord {
    pub fn new(point_id: usize, method: &str, outcome: &MethodOutcome, tangent: &TangentBasis) -> Self {
        let mu = tangent.tangent_fraction(&outcome.values).ok();
        MetricsRecord {
            point_id,
            method: method.to_string(),
            target: outcome.target,
            n: tangent.dim(),
            d: tangent.ambient_dim(),
            mu,
            norm_fraction: mu.map(f64::sqrt),
            energy: outcome.energy,
        }
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Mu => self.mu,
            Metric::NormFraction => self.norm_fraction,
        }
    }
}

pub const METRICS_HEADER: &str = "point_id,method,target,n,d,mu,norm_fraction,E";

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn format_metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.point_id,
            r.method,
            r.target,
            r.n,
            r.d,
            opt(r.mu),
            opt(r.norm_fraction),
            opt(r.energy)
        ));
    }
    out
}

pub fn parse_metrics_csv(text: &str, path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(path, format!("expected header {METRICS_HEADER:?}")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| Error::format(path, format!("line {}: {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad("expected 8 fields"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
            let float = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|_| bad("bad number"))
                }
            };
            Ok(MetricsRecord {
                point_id: int(f[0])?,
                method: f[1].to_string(),
                target: int(f[2])?,
                n: int(f[3])?,
                d: int(f[4])?,
                mu: float(f[5])?,
                norm_fraction: float(f[6])?,
                energy: float(f[7])?,
            })
        })
        .collect()
}

/// Per-method statistics over the records with a defined μ.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub count: usize,
    /// Records whose attribution was exactly zero (μ undefined).
    pub zero_attributions: usize,
    pub median_mu: f64,
    pub mean_mu: f64,
    pub median_norm_fraction: f64,
    pub mean_norm_fraction: f64,
    /// Share of records with `norm_fraction > √(n/d)`.
    pub frac_above_reference: f64,
}

pub const SUMMARY_HEADER: &str =
    "method,count,zero_attributions,median_mu,mean_mu,median_norm_fraction,mean_norm_fraction,frac_above_reference";

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Methods in order of name.
fn methods_of(records: &[MetricsRecord]) -> Vec<String> {
    let mut m: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    m.sort();
    m.dedup();
    m
}

pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    methods_of(records)
        .into_iter()
        .map(|method| {
            let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.method == method).collect();
            let defined: Vec<&MetricsRecord> = rows.iter().copied().filter(|r| r.mu.is_some()).collect();
            let mus: Vec<f64> = defined.iter().filter_map(|r| r.mu).collect();
            let nfs: Vec<f64> = defined.iter().filter_map(|r| r.norm_fraction).collect();
            let above = defined
                .iter()
                .filter(|r| r.norm_fraction.unwrap_or(0.0) > (r.n as f64 / r.d as f64).sqrt())
                .count();
            SummaryRow {
                count: rows.len(),
                zero_attributions: rows.len() - defined.len(),
                median_mu: median(&mus),
                mean_mu: mean(&mus),
                median_norm_fraction: median(&nfs),
                mean_norm_fraction: mean(&nfs),
                frac_above_reference: above as f64 / defined.len() as f64,
                method,
            }
        })
        .collect()
}

pub fn format_summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method,
            r.count,
            r.zero_attributions,
            r.median_mu,
            r.mean_mu,
            r.median_norm_fraction,
            r.mean_norm_fraction,
            r.frac_above_reference
        ));
    }
    out
}

/// Mean of `√(n/d)` over the records: the chance level of the norm fraction.
pub fn reference_norm_fraction(records: &[MetricsRecord]) -> f64 {
    mean(&records.iter().map(|r| (r.n as f64 / r.d as f64).sqrt()).collect::<Vec<_>>())
}

/// Histogram of one metric for every method in `records`.
pub fn histogram_for(records: &[MetricsRecord], metric: Metric, bins: usize, kde: bool) -> Result<String> {
    if records.is_empty() {
        return Err(Error::EmptySelection);
    }
    let series: Vec<Series> = methods_of(records)
        .into_iter()
        .map(|m| Series {
            values: records.iter().filter(|r| r.method == m).filter_map(|r| r.metric(metric)).collect(),
            label: m,
        })
        .collect();
    let sqrt_ref = reference_norm_fraction(records);
    let mut references = vec![ReferenceLine {
        label: "√(n/d)".into(),
        value: sqrt_ref,
    }];
    if metric == Metric::Mu {
        let n_over_d = mean(&records.iter().map(|r| r.n as f64 / r.d as f64).collect::<Vec<_>>());
        references.push(ReferenceLine {
            label: "n/d".into(),
            value: n_over_d,
        });
    }
    render_histogram(
        &series,
        &HistogramOptions {
            metric,
            bins,
            references,
            kde,
            title: format!("{} by method", metric.name()),
        },
    )
}

/// Paths and summary produced by a comparison run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub metrics_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub histograms: Vec<PathBuf>,
    pub optimizer_csv: PathBuf,
    pub timings_csv: PathBuf,
    pub summary: Vec<SummaryRow>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

struct PointResult {
    records: Vec<MetricsRecord>,
    timings: Vec<(usize, String, f64)>,
    optimizer: Option<String>,
}

fn run_point(exp: &Experiment, point_id: usize) -> Result<PointResult> {
    let x = exp.point(point_id)?;
    let tangent = exp
        .provider
        .tangent_basis_at(x)
        .map_err(|e| e.at_point(point_id, "tangent_space"))?;
    let mut methods = exp.config.methods.clone();
    methods.sort_by_key(|m| m.name());
    methods.dedup();
    let mut result = PointResult {
        records: Vec::with_capacity(methods.len()),
        timings: Vec::with_capacity(methods.len()),
        optimizer: None,
    };
    for method in methods {
        let start = Instant::now();
        let outcome = exp
            .attribute(point_id, method, &tangent)
            .map_err(|e| e.at_point(point_id, method.name()))?;
        result.timings.push((point_id, method.name().to_string(), start.elapsed().as_secs_f64()));
        if let Some(trace) = &outcome.trace {
            let last = trace.final_record();
            result.optimizer = Some(format!(
                "{},{},{},{},{},{}\n",
                point_id,
                trace.status,
                trace.records.len(),
                last.energy,
                last.separation,
                opt(last.mu)
            ));
        }
        result.records.push(MetricsRecord::new(point_id, method.name(), &outcome, &tangent));
    }
    Ok(result)
}

/// Explains the configured sample with every method and writes the report
/// into `out_dir`.
pub fn run_comparison(exp: &Experiment, out_dir: &Path) -> Result<ReportBundle> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let points = exp.sample();
    let results = points
        .par_iter()
        .map(|&p| run_point(exp, p))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut timings = String::from("point_id,method,seconds\n");
    let mut optimizer = String::from("point_id,status,iterations,E,separation,mu\n");
    for r in results {
        records.extend(r.records);
        for (p, m, s) in r.timings {
            timings.push_str(&format!("{p},{m},{s}\n"));
        }
        if let Some(line) = r.optimizer {
            optimizer.push_str(&line);
        }
    }
    records.sort_by(|a, b| (a.point_id, &a.method).cmp(&(b.point_id, &b.method)));

    let metrics_csv = out_dir.join("metrics.csv");
    write(&metrics_csv, &format_metrics_csv(&records))?;
    let optimizer_csv = out_dir.join("optimizer.csv");
    write(&optimizer_csv, &optimizer)?;
    let timings_csv = out_dir.join("timings.csv");
    write(&timings_csv, &timings)?;
    let report = report(out_dir, exp.config.bins, exp.config.kde, &[Metric::Mu, Metric::NormFraction])?;
    Ok(ReportBundle {
        metrics_csv,
        optimizer_csv,
        timings_csv,
        ..report
    })
}

/// Recomputes `summary.csv` and the requested histograms from the
/// `metrics.csv` in `out_dir`.
pub fn report(out_dir: &Path, bins: usize, kde: bool, metrics: &[Metric]) -> Result<ReportBundle> {
    let metrics_csv = out_dir.join("metrics.csv");
    let text = fs::read_to_string(&metrics_csv).map_err(|e| Error::io(&metrics_csv, e))?;
    let records = parse_metrics_csv(&text, &metrics_csv)?;
    let summary = summarize(&records);
    let summary_csv = out_dir.join("summary.csv");
    write(&summary_csv, &format_summary_csv(&summary))?;
    let mut histograms = Vec::new();
    for metric in metrics {
        let path = out_dir.join(format!("hist_{}.svg", metric.name()));
        write(&path, &histogram_for(&records, *metric, bins, kde)?)?;
        histograms.push(path);
    }
    Ok(ReportBundle {
        metrics_csv,
        summary_csv,
        histograms,
        optimizer_csv: out_dir.join("optimizer.csv"),
        timings_csv: out_dir.join("timings.csv"),
        summary,
    })
}

/// Image of each requested point followed by one heatmap per configured
/// method, captioned with μ.
pub fn gallery(exp: &Experiment, point_ids: &[usize]) -> Result<String> {
    let side = exp.dataset.image_side().ok_or(Error::NotAnImage)?;
    let mut methods = exp.config.methods.clone();
    methods.dedup();
    let rows = point_ids
        .par_iter()
        .map(|&p| {
            let x = exp.point(p)?;
            let tangent = exp.provider.tangent_basis_at(x).map_err(|e| e.at_point(p, "tangent_space"))?;
            let cells = methods
                .iter()
                .map(|&m| {
                    let out = exp.attribute(p, m, &tangent).map_err(|e| e.at_point(p, m.name()))?;
                    Ok(GalleryCell {
                        label: m.name().to_string(),
                        mu: tangent.tangent_fraction(&out.values).ok(),
                        values: out.values,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GalleryRow {
                point_id: p,
                image: x.clone(),
                cells,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = exp
        .dataset
        .bounds()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(*a), hi.max(*b)));
    render_gallery(side, (lo, hi), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subspace_config() -> ExperimentConfig {
        ExperimentConfig::parse(
            r#"
            seed = 3
            sample_size = 20
            methods = ["ig_uniform", "ig_tangential", "gradient", "random"]
            quadrature_steps = 8

            [dataset.synthetic]
            kind = "subspace"
            dim = 4
            intrinsic = 2
            count = 40
            noise = 0.3
            seed = 1

            [provider]
            kind = "subspace"
            axes = [0, 1]

            [model.linear]
            weights = [[1.0, -0.5, 0.8, 1.2]]
            "#,
            Path::new("."),
        )
        .unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = subspace_config();
        assert_eq!(cfg.bins, 40);
        assert_eq!(cfg.smoothgrad_sigma, 0.02);
        assert_eq!(cfg.smoothgrad_samples, 25);
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        let bad = r#"
            methods = []
            [dataset.synthetic]
            kind = "subspace"
            dim = 4
            intrinsic = 2
            count = 4
            [provider]
            kind = "subspace"
            axes = [0]
            [model.linear]
            weights = [[1.0, 1.0, 1.0, 1.0]]
        "#;
        assert!(matches!(ExperimentConfig::parse(bad, Path::new(".")), Err(Error::Config(_))));
        let unknown = "methods = [\"gradient\"]\nbogus = 1\n";
        assert!(matches!(ExperimentConfig::parse(unknown, Path::new(".")), Err(Error::Config(_))));
        let mut big = subspace_config();
        big.sample_size = 41;
        assert!(matches!(Experiment::load(big), Err(Error::Config(_))));
    }

    #[test]
    fn decoder_provider_requires_autoencoder() {
        let mut cfg = subspace_config();
        cfg.provider = ProviderSpec::Decoder { latent: 2 };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn subspace_comparison() {
        let exp = Experiment::load(subspace_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = run_comparison(&exp, dir.path()).unwrap();
        let text = fs::read_to_string(&bundle.metrics_csv).unwrap();
        let records = parse_metrics_csv(&text, &bundle.metrics_csv).unwrap();
        assert_eq!(records.len(), 20 * 4);
        assert_eq!(format_metrics_csv(&records), text);
        for r in &records {
            let (mu, nf) = (r.mu.unwrap(), r.norm_fraction.unwrap());
            assert!((0.0..=1.0).contains(&mu));
            assert!((mu - nf * nf).abs() < 1e-10);
            assert_eq!(r.energy.is_some(), r.method.starts_with("ig_"));
        }
        let row = |m: &str| bundle.summary.iter().find(|r| r.method == m).unwrap().clone();
        assert!(row("ig_tangential").median_mu >= 0.99);
        assert!(row("ig_uniform").median_mu < row("ig_tangential").median_mu);
        for h in &bundle.histograms {
            assert!(fs::read_to_string(h).unwrap().contains("√(n/d)"));
        }
    }

    #[test]
    fn gradient_only_gives_one_row_per_point() {
        let mut cfg = subspace_config();
        cfg.methods = vec![MethodSpec::Gradient];
        let exp = Experiment::load(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = run_comparison(&exp, dir.path()).unwrap();
        let text = fs::read_to_string(&bundle.metrics_csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 20);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn method_names_round_trip() {
        for m in MethodSpec::ALL {
            assert_eq!(m.name().parse::<MethodSpec>().unwrap(), m);
            let toml_value: String = toml::Value::try_from(m).unwrap().as_str().unwrap().to_string();
            assert_eq!(toml_value, m.name());
        }
        assert!("ig".parse::<MethodSpec>().is_err());
    }

    #[test]
    fn gallery_needs_images() {
        let exp = Experiment::load(subspace_config()).unwrap();
        assert!(matches!(gallery(&exp, &[0]), Err(Error::NotAnImage)));
    }
}
