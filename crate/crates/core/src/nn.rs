//! Small dense feed-forward networks with hand-written backpropagation.
//!
//! Networks here play three roles: the classifier `F` being explained, the
//! encoder/decoder pair whose decoder Jacobian spans the tangent space, and
//! (in tests) closed-form models such as a single linear layer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{Matrix, Vector};

/// A differentiable map `R^d → R^k`: anything attributions can be computed for.
pub trait Model {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, x: &Vector) -> Result<Vector>;
    /// `∇_x F_target(x)`.
    fn input_gradient(&self, x: &Vector, target: usize) -> Result<Vector>;

    /// Index of the largest output, lowest index on ties.
    fn predicted_class(&self, x: &Vector) -> Result<usize> {
        let out = self.forward(x)?;
        Ok(argmax(&out))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, a) in v.iter().enumerate() {
        if *a > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            // log(1 + e^z) without overflow for large |z|.
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(z),
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    fn tag(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Softplus => 2,
            Activation::Tanh => 3,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Softplus,
            3 => Activation::Tanh,
            _ => return None,
        })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine map followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Matrix,
    bias: Vector,
    activation: Activation,
}

impl Layer {
    /// `weights` is `out × in`.
    pub fn new(weights: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        check_dim(weights.rows(), bias.len())?;
        if !weights.is_finite() || !bias.is_finite() {
            return Err(Error::InvalidArgument("non-finite layer parameters".into()));
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn random(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let entries = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Layer {
            weights: Matrix::from_row_major(outputs, inputs, entries).expect("sized above"),
            bias: Vector::zeros(outputs),
            activation,
        }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &Vector {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn pre_activation(&self, x: &[f64]) -> Vector {
        let mut z = self.weights.mul_vec(x).expect("dimensions chained at construction");
        z.axpy(1.0, &self.bias);
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations recorded by a forward pass.
struct Trace {
    inputs: Vec<Vector>,
    pre: Vec<Vector>,
}

/// Parameter-shaped buffers: one `(weights, bias)` pair per layer.
#[derive(Clone)]
struct ParamBuffers(Vec<(Vec<f64>, Vec<f64>)>);

impl ParamBuffers {
    fn zeros_like(net: &DenseNetwork) -> Self {
        ParamBuffers(
            net.layers
                .iter()
                .map(|l| (vec![0.0; l.weights.entries().len()], vec![0.0; l.bias.len()]))
                .collect(),
        )
    }

    fn clear(&mut self) {
        for (w, b) in &mut self.0 {
            w.iter_mut().for_each(|a| *a = 0.0);
            b.iter_mut().for_each(|a| *a = 0.0);
        }
    }
}

impl DenseNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(DenseNetwork { layers })
    }

    /// Random network with the given layer widths; `hidden` activation on all
    /// but the last layer, `output` on the last.
    pub fn random(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output width".into()));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Layer::random(w[0], w[1], act, rng)
            })
            .collect();
        DenseNetwork::new(layers)
    }

    /// Single identity-activated affine layer `x ↦ Wx + b`.
    pub fn linear(weights: Matrix, bias: Vector) -> Result<Self> {
        DenseNetwork::new(vec![Layer::new(weights, bias, Activation::Identity)?])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn trace(&self, x: &[f64]) -> (Trace, Vector) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = Vector::from(x);
        for layer in &self.layers {
            let z = layer.pre_activation(&current);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut current, a));
            pre.push(z);
        }
        (Trace { inputs, pre }, current)
    }

    /// Pulls `grad_out` back through the recorded pass. Accumulates parameter
    /// gradients into `params` when given and returns the input gradient.
    fn backward(&self, trace: &Trace, grad_out: Vector, mut params: Option<&mut ParamBuffers>) -> Vector {
        let mut g = grad_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let delta: Vector = g
                .iter()
                .zip(trace.pre[l].iter())
                .map(|(gi, z)| gi * act.derivative(*z))
                .collect();
            if let Some(buffers) = params.as_deref_mut() {
                let (dw, db) = &mut buffers.0[l];
                let input = &trace.inputs[l];
                let cols = input.len();
                for (i, di) in delta.iter().enumerate() {
                    if *di == 0.0 {
                        continue;
                    }
                    for (w, xj) in dw[i * cols..(i + 1) * cols].iter_mut().zip(input.iter()) {
                        *w += di * xj;
                    }
                    db[i] += di;
                }
            }
            g = layer
                .weights
                .mul_vec_transposed(&delta)
                .expect("dimensions chained at construction");
        }
        g
    }

    /// Vector–Jacobian product `J_F(x)ᵀ · cotangent`.
    pub fn vjp(&self, x: &Vector, cotangent: &Vector) -> Result<Vector> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(self.output_dim(), cotangent.len())?;
        let (trace, _) = self.trace(x);
        Ok(self.backward(&trace, cotangent.clone(), None))
    }

    /// Full `output_dim × input_dim` Jacobian, propagated forward layer by
    /// layer as `J ← diag(σ'(z_l)) W_l J`.
    pub fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        check_dim(self.input_dim(), x.len())?;
        let (trace, _) = self.trace(x);
        let mut jac = Matrix::identity(self.input_dim());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = layer.weights.matmul(&jac)?;
            for (i, z) in trace.pre[l].iter().enumerate() {
                let s = layer.activation.derivative(*z);
                for j in 0..next.cols() {
                    next[(i, j)] *= s;
                }
            }
            jac = next;
        }
        Ok(jac)
    }

    /// `d × n` Jacobian of a decoder at latent code `z`; column `j` is
    /// `∂dec/∂z_j`.
    pub fn decoder_jacobian(&self, z: &Vector) -> Result<Matrix> {
        self.jacobian(z)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file)).map_err(|e| match e {
            ReadError::Io(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::TruncatedFile(path.display().to_string())
            }
            ReadError::Io(e) => Error::io(path, e),
            ReadError::Format(reason) => Error::format(path, reason),
        })
    }

    /// Writes the `TGNN` binary layout:
    ///
    /// ```text
    /// b"TGNN"  u32 version (=1)  u32 layer_count
    /// per layer: u32 in_dim  u32 out_dim  u32 activation
    ///            f64 × out·in weights (row-major)  f64 × out bias
    /// ```
    ///
    /// All integers and floats little-endian. Activation tags: 0 identity,
    /// 1 relu, 2 softplus, 3 tanh.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(NET_MAGIC)?;
        w.write_u32::<LittleEndian>(NET_VERSION)?;
        w.write_u32::<LittleEndian>(self.layers.len() as u32)?;
        for layer in &self.layers {
            w.write_u32::<LittleEndian>(layer.input_dim() as u32)?;
            w.write_u32::<LittleEndian>(layer.output_dim() as u32)?;
            w.write_u32::<LittleEndian>(layer.activation.tag())?;
            for v in layer.weights.entries() {
                w.write_f64::<LittleEndian>(*v)?;
            }
            for v in layer.bias.iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    fn read_from(r: &mut impl Read) -> std::result::Result<Self, ReadError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != NET_MAGIC {
            return Err(ReadError::Format("missing TGNN magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != NET_VERSION {
            return Err(ReadError::Format(format!("unsupported version {version}")));
        }
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = r.read_u32::<LittleEndian>()? as usize;
            let outputs = r.read_u32::<LittleEndian>()? as usize;
            let tag = r.read_u32::<LittleEndian>()?;
            let activation = Activation::from_tag(tag)
                .ok_or_else(|| ReadError::Format(format!("unknown activation tag {tag}")))?;
            let mut weights = vec![0.0; inputs * outputs];
            r.read_f64_into::<LittleEndian>(&mut weights)?;
            let mut bias = vec![0.0; outputs];
            r.read_f64_into::<LittleEndian>(&mut bias)?;
            let weights = Matrix::from_row_major(outputs, inputs, weights)
                .map_err(|e| ReadError::Format(e.to_string()))?;
            layers.push(
                Layer::new(weights, Vector::from(bias), activation)
                    .map_err(|e| ReadError::Format(e.to_string()))?,
            );
        }
        DenseNetwork::new(layers).map_err(|e| ReadError::Format(e.to_string()))
    }
}

const NET_MAGIC: &[u8; 4] = b"TGNN";
const NET_VERSION: u32 = 1;

enum ReadError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

impl Model for DenseNetwork {
    fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn forward(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.trace(x).1)
    }

    fn input_gradient(&self, x: &Vector, target: usize) -> Result<Vector> {
        check_dim(self.input_dim(), x.len())?;
        if target >= self.output_dim() {
            return Err(Error::InvalidArgument(format!(
                "target {target} out of range for {} outputs",
                self.output_dim()
            )));
        }
        let (trace, _) = self.trace(x);
        Ok(self.backward(&trace, Vector::unit(self.output_dim(), target), None))
    }
}

/// Softmax probabilities of a logit network, as a model in its own right.
#[derive(Debug, Clone, Copy)]
pub struct Probabilities<'a>(pub &'a DenseNetwork);

fn softmax(logits: &[f64]) -> Vector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Model for Probabilities<'_> {
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }

    fn forward(&self, x: &Vector) -> Result<Vector> {
        Ok(softmax(&self.0.forward(x)?))
    }

    fn input_gradient(&self, x: &Vector, target: usize) -> Result<Vector> {
        check_dim(self.input_dim(), x.len())?;
        if target >= self.output_dim() {
            return Err(Error::InvalidArgument(format!("target {target} out of range")));
        }
        let p = self.forward(x)?;
        // ∂p_t/∂z_j = p_t (δ_tj − p_j)
        let cotangent: Vector = p
            .iter()
            .enumerate()
            .map(|(j, pj)| p[target] * (if j == target { 1.0 } else { 0.0 } - pj))
            .collect();
        self.0.vjp(x, &cotangent)
    }
}

/// Encoder `R^d → R^n` and decoder `R^n → R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderPair {
    encoder: DenseNetwork,
    decoder: DenseNetwork,
}

impl AutoencoderPair {
    pub fn new(encoder: DenseNetwork, decoder: DenseNetwork) -> Result<Self> {
        check_dim(encoder.output_dim(), decoder.input_dim())?;
        check_dim(encoder.input_dim(), decoder.output_dim())?;
        Ok(AutoencoderPair { encoder, decoder })
    }

    pub fn encoder(&self) -> &DenseNetwork {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNetwork {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn reconstruct(&self, x: &Vector) -> Result<Vector> {
        self.decoder.forward(&self.encoder.forward(x)?)
    }

    /// Mean over points and features of the squared reconstruction error.
    pub fn reconstruction_mse(&self, points: &[Vector]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for p in points {
            let r = self.reconstruct(p)?;
            total += (&r - p).norm_squared();
            count += p.len();
        }
        Ok(total / count.max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Hidden layer widths. For autoencoders these are the encoder's; the
    /// decoder mirrors them.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::adam(),
            hidden: vec![32],
            activation: Activation::Softplus,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "training needs learning_rate > 0, epochs >= 1, batch_size >= 1".into(),
            ));
        }
        Ok(())
    }
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    first: ParamBuffers,
    second: ParamBuffers,
    step: i32,
}

impl Optimizer {
    fn new(net: &DenseNetwork, cfg: &TrainConfig) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            first: ParamBuffers::zeros_like(net),
            second: ParamBuffers::zeros_like(net),
            step: 0,
        }
    }

    fn apply(&mut self, net: &mut DenseNetwork, grads: &ParamBuffers, scale: f64) {
        self.step += 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.0[l];
            let (mw, mb) = &mut self.first.0[l];
            let (vw, vb) = &mut self.second.0[l];
            let w = layer.weights.entries_mut();
            update(self.kind, self.lr, self.step, w, gw, mw, vw, scale);
            update(self.kind, self.lr, self.step, &mut layer.bias, gb, mb, vb, scale);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    scale: f64,
) {
    match kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g * scale;
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for i in 0..params.len() {
                let g = grads[i] * scale;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Mini-batch training against a per-sample loss. `loss` receives the
/// sample index and the network output and returns the loss value and its
/// gradient with respect to the output.
fn fit<L>(net: &mut DenseNetwork, inputs: &[Vector], cfg: &TrainConfig, mut loss: L) -> Result<Vec<f64>>
where
    L: FnMut(usize, &Vector) -> (f64, Vector),
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut opt = Optimizer::new(net, cfg);
    let mut grads = ParamBuffers::zeros_like(net);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let (trace, out) = net.trace(&inputs[i]);
                let (value, grad_out) = loss(i, &out);
                epoch_loss += value;
                net.backward(&trace, grad_out, Some(&mut grads));
            }
            opt.apply(net, &grads, 1.0 / batch.len() as f64);
        }
        epoch_loss /= inputs.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        history.push(epoch_loss);
    }
    Ok(history)
}

/// Trains a dense autoencoder with latent width `latent` on squared error.
pub fn train_autoencoder(data: &Dataset, latent: usize, cfg: &TrainConfig) -> Result<AutoencoderPair> {
    let (ae, _) = train_autoencoder_with_history(data, latent, cfg)?;
    Ok(ae)
}

/// As [`train_autoencoder`], also returning the per-epoch mean loss.
pub fn train_autoencoder_with_history(
    data: &Dataset,
    latent: usize,
    cfg: &TrainConfig,
) -> Result<(AutoencoderPair, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = data.dim();
    if latent == 0 || latent >= d {
        return Err(Error::InvalidArgument(format!(
            "latent dimension {latent} must be in 1..{d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut widths = vec![d];
    widths.extend(&cfg.hidden);
    widths.push(latent);
    // Encoder and decoder are trained as one network and split afterwards.
    let mut full_widths = widths.clone();
    full_widths.extend(widths.iter().rev().skip(1));
    let n_enc = widths.len() - 1;
    let mut layers = Vec::with_capacity(full_widths.len() - 1);
    for (i, w) in full_widths.windows(2).enumerate() {
        let act = if i == n_enc - 1 || i == full_widths.len() - 2 {
            Activation::Identity
        } else {
            cfg.activation
        };
        layers.push(Layer::random(w[0], w[1], act, &mut rng));
    }
    let mut net = DenseNetwork::new(layers)?;
    let points = data.points();
    let scale = 2.0 / d as f64;
    let history = fit(&mut net, points, cfg, |i, out| {
        let diff = out - &points[i];
        (diff.norm_squared() / d as f64, diff.scaled(scale))
    })?;
    let mut layers = net.layers;
    let decoder_layers = layers.split_off(n_enc);
    let pair = AutoencoderPair::new(DenseNetwork::new(layers)?, DenseNetwork::new(decoder_layers)?)?;
    Ok((pair, history))
}

/// Trains a softmax classifier on cross-entropy; the returned network
/// outputs logits.
pub fn train_classifier(data: &Dataset, labels: &[usize], cfg: &TrainConfig) -> Result<DenseNetwork> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != data.len() {
        return Err(Error::CountMismatch {
            images: data.len(),
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut widths = vec![data.dim()];
    widths.extend(&cfg.hidden);
    widths.push(classes);
    let mut net = DenseNetwork::random(&widths, cfg.activation, Activation::Identity, &mut rng)?;
    fit(&mut net, data.points(), cfg, |i, out| {
        let p = softmax(out);
        let y = labels[i];
        let mut grad = p.clone();
        grad[y] -= 1.0;
        (-(p[y].max(1e-300)).ln(), grad)
    })?;
    Ok(net)
}

/// Fraction of points whose predicted class equals the label.
pub fn accuracy(model: &impl Model, data: &Dataset, labels: &[usize]) -> Result<f64> {
    if labels.len() != data.len() {
        return Err(Error::CountMismatch {
            images: data.len(),
            labels: labels.len(),
        });
    }
    let mut hits = 0usize;
    for (x, y) in data.points().iter().zip(labels) {
        if model.predicted_class(x)? == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}
