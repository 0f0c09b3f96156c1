//! Fixed-point network training over shares.
//!
//! A network is a list of [`Layer`]s ending in softmax with cross-entropy.
//! The same forward, backward and update code runs against three
//! [`Backend`]s: the two-party protocol ([`SecureBackend`]), a clear
//! fixed-point mirror with floor truncation ([`FixedBackend`]) and plain
//! floats ([`FloatBackend`]). Everything the oracles compute is therefore
//! step for step what the parties compute.
//!
//! The output error is `softmax(u) - y`, the analytic gradient of the loss
//! through softmax, so no logarithm is ever evaluated under sharing.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Sub};

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::arith::{self, plain, PwlTable};
use crate::compare::{max_tree, relu};
use crate::error::{Error, Result};
use crate::fixed::{truncate_plain, FixedPointCodec};
use crate::party::Party;
use crate::preprocessing::Correlations;
use crate::ring::RingElement;
use crate::tensor::{channel_major_to_spatial, col2im, im2col, pool_windows, spatial_to_channel_major, unpool_windows, ConvGeometry, Matrix};
use crate::transport::Link;

pub const MNIST_SIDE: usize = 28;
pub const MNIST_PIXELS: usize = MNIST_SIDE * MNIST_SIDE;
pub const MNIST_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Layer {
    Dense { inputs: usize, outputs: usize },
    /// Convolution over channel-major images, one filter per output
    /// channel.
    Conv { geometry: ConvGeometry, filters: usize },
    Relu { width: usize },
    /// Non-overlapping `size x size` max pooling.
    MaxPool { channels: usize, height: usize, width: usize, size: usize },
}

impl Layer {
    pub fn input_len(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv { geometry, .. } => geometry.image_len(),
            Layer::Relu { width } => width,
            Layer::MaxPool { channels, height, width, .. } => channels * height * width,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv { geometry, filters } => filters * geometry.out_height() * geometry.out_width(),
            Layer::Relu { width } => width,
            Layer::MaxPool { channels, height, width, size } => channels * (height / size) * (width / size),
        }
    }

    /// Weight shape (rows, cols) for layers that carry parameters.
    pub fn weight_shape(&self) -> Option<(usize, usize)> {
        match *self {
            Layer::Dense { inputs, outputs } => Some((inputs, outputs)),
            Layer::Conv { geometry, filters } => Some((geometry.patch_len(), filters)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<Layer>,
}

fn conv(in_channels: usize, side: usize, kernel: usize, stride: usize, padding: usize, filters: usize) -> Layer {
    Layer::Conv {
        geometry: ConvGeometry { in_channels, height: side, width: side, kernel, stride, padding },
        filters,
    }
}

impl NetworkSpec {
    /// Three dense layers, 784-128-128-10.
    pub fn network_a() -> Self {
        NetworkSpec {
            name: "A".into(),
            layers: vec![
                Layer::Dense { inputs: MNIST_PIXELS, outputs: 128 },
                Layer::Relu { width: 128 },
                Layer::Dense { inputs: 128, outputs: 128 },
                Layer::Relu { width: 128 },
                Layer::Dense { inputs: 128, outputs: MNIST_CLASSES },
            ],
        }
    }

    /// Two 5x5 convolutions with 16 channels and pooling, then 256-100-10.
    pub fn network_b() -> Self {
        NetworkSpec {
            name: "B".into(),
            layers: vec![
                conv(1, 28, 5, 1, 0, 16),
                Layer::Relu { width: 16 * 24 * 24 },
                Layer::MaxPool { channels: 16, height: 24, width: 24, size: 2 },
                conv(16, 12, 5, 1, 0, 16),
                Layer::Relu { width: 16 * 8 * 8 },
                Layer::MaxPool { channels: 16, height: 8, width: 8, size: 2 },
                Layer::Dense { inputs: 256, outputs: 100 },
                Layer::Relu { width: 100 },
                Layer::Dense { inputs: 100, outputs: MNIST_CLASSES },
            ],
        }
    }

    /// LeNet: 5x5 convolutions with 20 and 50 channels, then 800-500-10.
    pub fn network_c() -> Self {
        NetworkSpec {
            name: "C".into(),
            layers: vec![
                conv(1, 28, 5, 1, 0, 20),
                Layer::Relu { width: 20 * 24 * 24 },
                Layer::MaxPool { channels: 20, height: 24, width: 24, size: 2 },
                conv(20, 12, 5, 1, 0, 50),
                Layer::Relu { width: 50 * 8 * 8 },
                Layer::MaxPool { channels: 50, height: 8, width: 8, size: 2 },
                Layer::Dense { inputs: 800, outputs: 500 },
                Layer::Relu { width: 500 },
                Layer::Dense { inputs: 500, outputs: MNIST_CLASSES },
            ],
        }
    }

    /// One 5x5 stride-2 convolution with 5 channels (980 outputs), then
    /// 980-100-10.
    pub fn network_d() -> Self {
        NetworkSpec {
            name: "D".into(),
            layers: vec![
                conv(1, 28, 5, 2, 2, 5),
                Layer::Relu { width: 980 },
                Layer::Dense { inputs: 980, outputs: 100 },
                Layer::Relu { width: 100 },
                Layer::Dense { inputs: 100, outputs: MNIST_CLASSES },
            ],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().trim_start_matches("NETWORK-") {
            "A" => Ok(Self::network_a()),
            "B" => Ok(Self::network_b()),
            "C" => Ok(Self::network_c()),
            "D" => Ok(Self::network_d()),
            _ => Err(Error::Range(format!("unknown network {name:?}"))),
        }
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, Layer::input_len)
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_len)
    }

    /// Adjacent layers must agree on widths, pooling must tile and the
    /// network must end in at least two classes.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::dimension("network has no layers"));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::dimension(format!(
                    "layer {i} yields {} values but layer {} expects {}",
                    pair[0].output_len(),
                    i + 1,
                    pair[1].input_len()
                )));
            }
        }
        for l in &self.layers {
            match *l {
                Layer::MaxPool { height, width, size, .. } if size == 0 || height % size != 0 || width % size != 0 => {
                    return Err(Error::dimension("pooling window does not tile its input"));
                }
                Layer::Conv { geometry: g, .. } if g.stride == 0 || g.kernel > g.height + 2 * g.padding || g.kernel > g.width + 2 * g.padding => {
                    return Err(Error::dimension("convolution kernel does not fit its input"));
                }
                _ => {}
            }
        }
        if self.classes() < 2 {
            return Err(Error::dimension("softmax needs at least two classes"));
        }
        Ok(())
    }
}

/// Learning rate `2^-lr_log2`; the batch size must be a power of two so the
/// update scale `lr / batch` is a shift.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lr_log2: u32,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Segments of the piecewise-linear exponential inside softmax.
    pub exp_segments: usize,
}

impl TrainConfig {
    /// 2^-7 for network A, 2^-5 otherwise, batches of 128.
    pub fn for_network(spec: &NetworkSpec) -> Self {
        TrainConfig {
            lr_log2: if spec.name == "A" { 7 } else { 5 },
            batch: 128,
            epochs: 1,
            seed: 0,
            exp_segments: 16,
        }
    }

    pub fn update_shift(&self) -> Result<u32> {
        if self.batch == 0 || !self.batch.is_power_of_two() {
            return Err(Error::Range(format!("batch size {} is not a power of two", self.batch)));
        }
        Ok(self.lr_log2 + self.batch.trailing_zeros())
    }
}

/// Images as raw bytes, one row of pixels per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub features: usize,
}

impl Dataset {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>, features: usize) -> Result<Self> {
        if features == 0 || pixels.len() != labels.len() * features {
            return Err(Error::dimension(format!(
                "{} pixels do not make {} images of {features}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Dataset { pixels, labels, features })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Dataset {
            pixels: self.pixels[..n * self.features].to_vec(),
            labels: self.labels[..n].to_vec(),
            features: self.features,
        }
    }

    /// Pixels of samples `start..end` scaled to `[0, 1]`.
    pub fn images(&self, start: usize, end: usize) -> Matrix<f64> {
        let data = self.pixels[start * self.features..end * self.features].iter().map(|&p| p as f64 / 255.0).collect();
        Matrix::from_vec(end - start, self.features, data).expect("slice has whole rows")
    }

    pub fn onehot(&self, start: usize, end: usize, classes: usize) -> Matrix<f64> {
        Matrix::from_fn(end - start, classes, |r, c| (self.labels[start + r] as usize == c) as u8 as f64)
    }
}

/// Weights and bias of one parametric layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<E = RingElement> {
    pub w: Matrix<E>,
    pub b: Matrix<E>,
}

/// Parameters of every dense and convolution layer, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<E = RingElement> {
    pub params: Vec<Params<E>>,
}

impl<E: Copy> Model<E> {
    pub fn map<U: Copy>(&self, mut f: impl FnMut(E) -> U) -> Model<U> {
        Model {
            params: self.params.iter().map(|p| Params { w: p.w.map(&mut f), b: p.b.map(&mut f) }).collect(),
        }
    }

    pub fn try_map<U: Copy>(&self, mut f: impl FnMut(&Matrix<E>) -> Result<Matrix<U>>) -> Result<Model<U>> {
        let params = self.params.iter().map(|p| Ok(Params { w: f(&p.w)?, b: f(&p.b)? })).collect::<Result<_>>()?;
        Ok(Model { params })
    }

    /// Checks the tensors against the layers that carry parameters.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes: Vec<(usize, usize)> = spec.layers.iter().filter_map(Layer::weight_shape).collect();
        if shapes.len() != self.params.len() {
            return Err(Error::dimension(format!("model has {} layers, network {} expects {}", self.params.len(), spec.name, shapes.len())));
        }
        for (i, (p, &(r, c))) in self.params.iter().zip(&shapes).enumerate() {
            if p.w.shape() != (r, c) || p.b.shape() != (1, c) {
                return Err(Error::dimension(format!("layer {i} tensors {:?}/{:?} do not match {:?}", p.w.shape(), p.b.shape(), (r, c))));
            }
        }
        Ok(())
    }
}

impl Model<f64> {
    /// Weights uniform in `[-1/8, 1/8]`, already rounded to the fixed-point
    /// grid so every backend starts from the same point; zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64, codec: &FixedPointCodec) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = spec
            .layers
            .iter()
            .filter_map(Layer::weight_shape)
            .map(|(r, c)| {
                let w = Matrix::from_fn(r, c, |_, _| {
                    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                    let v = (2.0 * u - 1.0) / 8.0;
                    libm::round(v * codec.scale()) / codec.scale()
                });
                Params { w, b: Matrix::zeros(1, c) }
            })
            .collect();
        Model { params }
    }
}

/// A value and a same-shaped companion, such as a mask or a one-hot.
pub type MatrixPair<E> = (Matrix<E>, Matrix<E>);

/// Everything a training step needs from the arithmetic underneath.
pub trait Backend {
    type Elem: Copy + Default + Add<Output = Self::Elem> + Sub<Output = Self::Elem> + Mul<Output = Self::Elem>;

    /// Bring clear client data (inputs, labels, initial weights) into the
    /// backend's representation.
    fn input(&mut self, x: &Matrix<f64>) -> Result<Matrix<Self::Elem>>;
    /// Fixed-point product, rescaled once.
    fn matmul(&mut self, a: &Matrix<Self::Elem>, b: &Matrix<Self::Elem>) -> Result<Matrix<Self::Elem>>;
    /// `max(x, 0)` and the 0/1 derivative mask (integer, not fixed point).
    fn relu(&mut self, x: &Matrix<Self::Elem>) -> Result<MatrixPair<Self::Elem>>;
    /// `x * mask` for an integer 0/1 mask.
    fn gate(&mut self, x: &Matrix<Self::Elem>, mask: &Matrix<Self::Elem>) -> Result<Matrix<Self::Elem>>;
    /// Per-row maximum and its one-hot position, ties to the earlier column.
    fn max_rows(&mut self, x: &Matrix<Self::Elem>) -> Result<MatrixPair<Self::Elem>>;
    fn softmax(&mut self, x: &Matrix<Self::Elem>) -> Result<Matrix<Self::Elem>>;
    /// Divide by `2^k` without interaction.
    fn shift(&mut self, x: &Matrix<Self::Elem>, k: u32) -> Matrix<Self::Elem>;
    /// Open a tensor as reals.
    fn reveal(&mut self, x: &Matrix<Self::Elem>) -> Result<Matrix<f64>>;
}

/// The two-party protocol. Client data is shared with a stream both
/// parties derive from a common seed: party 0 holds the stream, party 1
/// holds the value minus the stream.
pub struct SecureBackend<'a, L: Link, C> {
    pub party: &'a mut Party<L, C>,
    table: PwlTable,
    client: ChaCha20Rng,
}

impl<'a, L: Link, C: Correlations> SecureBackend<'a, L, C> {
    pub fn new(party: &'a mut Party<L, C>, table: PwlTable, client_seed: u64) -> Self {
        SecureBackend { party, table, client: ChaCha20Rng::seed_from_u64(client_seed) }
    }
}

impl<L: Link, C: Correlations> Backend for SecureBackend<'_, L, C> {
    type Elem = RingElement;

    fn input(&mut self, x: &Matrix<f64>) -> Result<Matrix> {
        let p0 = self.party.is_p0();
        let codec = self.party.codec;
        let client = &mut self.client;
        let data = x
            .data()
            .iter()
            .map(|&v| {
                let r = RingElement(client.next_u64());
                Ok(if p0 { r } else { codec.encode(v)? - r })
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_vec(x.rows(), x.cols(), data)
    }

    fn matmul(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        arith::matmul_fixed(self.party, a, b)
    }

    fn relu(&mut self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let (y, d) = relu(self.party, x.data())?;
        Ok((Matrix::from_vec(x.rows(), x.cols(), y)?, Matrix::from_vec(x.rows(), x.cols(), d)?))
    }

    fn gate(&mut self, x: &Matrix, mask: &Matrix) -> Result<Matrix> {
        x.same_shape(mask)?;
        Matrix::from_vec(x.rows(), x.cols(), arith::mul_raw(self.party, x.data(), mask.data())?)
    }

    fn max_rows(&mut self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let (max, onehot) = max_tree(self.party, x, true)?;
        Ok((Matrix::from_vec(x.rows(), 1, max)?, onehot.expect("argmax was requested")))
    }

    fn softmax(&mut self, x: &Matrix) -> Result<Matrix> {
        arith::softmax(self.party, x, &self.table)
    }

    fn shift(&mut self, x: &Matrix, k: u32) -> Matrix {
        let t = arith::truncate(self.party, x.data(), k);
        Matrix::from_vec(x.rows(), x.cols(), t).expect("same shape")
    }

    fn reveal(&mut self, x: &Matrix) -> Result<Matrix<f64>> {
        let v = self.party.reveal(x.data())?;
        let codec = self.party.codec;
        Matrix::from_vec(x.rows(), x.cols(), v.into_iter().map(|e| codec.decode(e)).collect())
    }
}

/// Clear fixed-point mirror of [`SecureBackend`], truncating by floor.
#[derive(Clone, Debug)]
pub struct FixedBackend {
    pub codec: FixedPointCodec,
    pub table: PwlTable,
}

impl FixedBackend {
    pub fn new(table: PwlTable) -> Self {
        FixedBackend { codec: FixedPointCodec::default(), table }
    }
}

impl Backend for FixedBackend {
    type Elem = RingElement;

    fn input(&mut self, x: &Matrix<f64>) -> Result<Matrix> {
        let data = x.data().iter().map(|&v| self.codec.encode(v)).collect::<Result<Vec<_>>>()?;
        Matrix::from_vec(x.rows(), x.cols(), data)
    }

    fn matmul(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        plain::matmul_fixed(a, b, self.codec.frac_bits())
    }

    fn relu(&mut self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let d = x.map(|v| RingElement(plain::nonneg(v) as u64));
        Ok((x.zip_map(&d, |a, b| a * b)?, d))
    }

    fn gate(&mut self, x: &Matrix, mask: &Matrix) -> Result<Matrix> {
        x.zip_map(mask, |a, b| a * b)
    }

    fn max_rows(&mut self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut max = Vec::with_capacity(x.rows());
        let mut onehot = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let (m, at) = plain::max_row(x.row(r));
            max.push(m);
            onehot.set(r, at, RingElement::ONE);
        }
        Ok((Matrix::from_vec(x.rows(), 1, max)?, onehot))
    }

    fn softmax(&mut self, x: &Matrix) -> Result<Matrix> {
        plain::softmax(x, &self.table, &self.codec)
    }

    fn shift(&mut self, x: &Matrix, k: u32) -> Matrix {
        x.map(|v| truncate_plain(v, k))
    }

    fn reveal(&mut self, x: &Matrix) -> Result<Matrix<f64>> {
        Ok(x.map(|v| self.codec.decode(v)))
    }
}

/// Plain floating point with an exact softmax; the accuracy reference.
#[derive(Clone, Copy, Debug, Default)]
pub struct FloatBackend;

impl Backend for FloatBackend {
    type Elem = f64;

    fn input(&mut self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        Ok(x.clone())
    }

    fn matmul(&mut self, a: &Matrix<f64>, b: &Matrix<f64>) -> Result<Matrix<f64>> {
        a.matmul(b)
    }

    fn relu(&mut self, x: &Matrix<f64>) -> Result<(Matrix<f64>, Matrix<f64>)> {
        let d = x.map(|v| if v >= 0.0 { 1.0 } else { 0.0 });
        Ok((x.zip_map(&d, |a, b| a * b)?, d))
    }

    fn gate(&mut self, x: &Matrix<f64>, mask: &Matrix<f64>) -> Result<Matrix<f64>> {
        x.zip_map(mask, |a, b| a * b)
    }

    fn max_rows(&mut self, x: &Matrix<f64>) -> Result<(Matrix<f64>, Matrix<f64>)> {
        let mut max = Vec::with_capacity(x.rows());
        let mut onehot = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let (m, at) = max_row_f64(x.row(r));
            max.push(m);
            onehot.set(r, at, 1.0);
        }
        Ok((Matrix::from_vec(x.rows(), 1, max)?, onehot))
    }

    fn softmax(&mut self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        Ok(softmax_f64(x))
    }

    fn shift(&mut self, x: &Matrix<f64>, k: u32) -> Matrix<f64> {
        let s = libm::ldexp(1.0, -(k as i32));
        x.map(|v| v * s)
    }

    fn reveal(&mut self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        Ok(x.clone())
    }
}

/// Same tournament and tie rule as the shared maximum.
fn max_row_f64(row: &[f64]) -> (f64, usize) {
    let mut cand: Vec<(f64, usize)> = row.iter().copied().zip(0..).collect();
    while cand.len() > 1 {
        let mut next = Vec::with_capacity(cand.len() / 2 + 1);
        for q in 0..cand.len() / 2 {
            let (a, b) = (cand[2 * q], cand[2 * q + 1]);
            next.push(if a.0 >= b.0 { a } else { b });
        }
        if cand.len() % 2 == 1 {
            next.push(cand[cand.len() - 1]);
        }
        cand = next;
    }
    cand[0]
}

pub fn softmax_f64(x: &Matrix<f64>) -> Matrix<f64> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let m = x.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.row(r).iter().map(|&v| libm::exp(v - m)).collect();
        let s: f64 = e.iter().sum();
        for (c, v) in e.into_iter().enumerate() {
            out.set(r, c, v / s);
        }
    }
    out
}

/// Mean cross-entropy of probabilities against labels.
pub fn cross_entropy(probs: &Matrix<f64>, labels: &[u8]) -> f64 {
    let total: f64 = labels.iter().enumerate().map(|(r, &y)| -libm::log(probs.get(r, y as usize).max(1e-12))).sum();
    total / labels.len().max(1) as f64
}

/// What the backward pass needs from each layer.
enum Saved<E> {
    Dense { input: Matrix<E> },
    Conv { cols: Matrix<E>, batch: usize },
    Relu { mask: Matrix<E> },
    Pool { onehot: Matrix<E>, batch: usize },
}

pub struct Activations<E> {
    saved: Vec<Saved<E>>,
    pub logits: Matrix<E>,
}

/// Forward pass up to the logits.
pub fn forward<B: Backend>(be: &mut B, spec: &NetworkSpec, model: &Model<B::Elem>, x: &Matrix<B::Elem>) -> Result<Activations<B::Elem>> {
    model.check(spec)?;
    if x.cols() != spec.input_len() {
        return Err(Error::dimension(format!("input rows have {} values, network {} expects {}", x.cols(), spec.name, spec.input_len())));
    }
    let batch = x.rows();
    let mut params = model.params.iter();
    let mut saved = Vec::with_capacity(spec.layers.len());
    let mut h = x.clone();
    for layer in &spec.layers {
        h = match *layer {
            Layer::Dense { .. } => {
                let p = params.next().expect("checked against the network");
                let y = be.matmul(&h, &p.w)?.add_row(&p.b)?;
                saved.push(Saved::Dense { input: h });
                y
            }
            Layer::Conv { geometry, .. } => {
                let p = params.next().expect("checked against the network");
                let cols = im2col(&h, &geometry)?;
                let y = be.matmul(&cols, &p.w)?.add_row(&p.b)?;
                let spatial = geometry.out_height() * geometry.out_width();
                saved.push(Saved::Conv { cols, batch });
                spatial_to_channel_major(&y, batch, spatial)?
            }
            Layer::Relu { .. } => {
                let (y, mask) = be.relu(&h)?;
                saved.push(Saved::Relu { mask });
                y
            }
            Layer::MaxPool { channels, height, width, size } => {
                let windows = pool_windows(&h, channels, height, width, size)?;
                let (max, onehot) = be.max_rows(&windows)?;
                saved.push(Saved::Pool { onehot, batch });
                max.reshape(batch, layer.output_len())?
            }
        };
    }
    Ok(Activations { saved, logits: h })
}

/// Class probabilities.
pub fn predict<B: Backend>(be: &mut B, spec: &NetworkSpec, model: &Model<B::Elem>, x: &Matrix<B::Elem>) -> Result<Matrix<B::Elem>> {
    let act = forward(be, spec, model, x)?;
    be.softmax(&act.logits)
}

/// Gradients of the summed loss given the output error `softmax - y`.
pub fn backward<B: Backend>(be: &mut B, spec: &NetworkSpec, model: &Model<B::Elem>, act: Activations<B::Elem>, error: Matrix<B::Elem>) -> Result<Vec<Params<B::Elem>>> {
    let mut grads = Vec::with_capacity(model.params.len());
    let mut param_idx = model.params.len();
    let mut delta = error;
    let first_param = spec.layers.iter().position(|l| l.weight_shape().is_some());
    for (li, (layer, saved)) in spec.layers.iter().zip(act.saved).enumerate().rev() {
        // Layers before the first parametric one need no error signal.
        let need_delta = first_param.is_some_and(|f| li > f);
        delta = match (*layer, saved) {
            (Layer::Dense { .. }, Saved::Dense { input }) => {
                param_idx -= 1;
                let w = &model.params[param_idx].w;
                grads.push(Params { w: be.matmul(&input.transpose(), &delta)?, b: delta.sum_rows() });
                if need_delta {
                    be.matmul(&delta, &w.transpose())?
                } else {
                    delta
                }
            }
            (Layer::Conv { geometry, filters }, Saved::Conv { cols, batch }) => {
                param_idx -= 1;
                let w = &model.params[param_idx].w;
                let spatial = geometry.out_height() * geometry.out_width();
                let d = channel_major_to_spatial(&delta, filters, spatial)?;
                grads.push(Params { w: be.matmul(&cols.transpose(), &d)?, b: d.sum_rows() });
                if need_delta {
                    col2im(&be.matmul(&d, &w.transpose())?, batch, &geometry)?
                } else {
                    delta
                }
            }
            (Layer::Relu { .. }, Saved::Relu { mask }) => be.gate(&delta, &mask)?,
            (Layer::MaxPool { channels, height, width, size }, Saved::Pool { onehot, batch }) => {
                let spread = Matrix::from_fn(onehot.rows(), onehot.cols(), |r, _| delta.data()[r]);
                let routed = be.gate(&spread, &onehot)?;
                unpool_windows(&routed, batch, channels, height, width, size)?
            }
            _ => unreachable!("saved state is pushed in layer order"),
        };
    }
    grads.reverse();
    Ok(grads)
}

/// `w -= grad / 2^shift`, locally.
pub fn sgd_update<B: Backend>(be: &mut B, model: &mut Model<B::Elem>, grads: &[Params<B::Elem>], shift: u32) -> Result<()> {
    if grads.len() != model.params.len() {
        return Err(Error::dimension("one gradient per parametric layer"));
    }
    for (p, g) in model.params.iter_mut().zip(grads) {
        p.w = p.w.sub(&be.shift(&g.w, shift))?;
        p.b = p.b.sub(&be.shift(&g.b, shift))?;
    }
    Ok(())
}

/// Forward, output error and gradients for one batch.
pub fn gradients<B: Backend>(be: &mut B, spec: &NetworkSpec, model: &Model<B::Elem>, x: &Matrix<B::Elem>, y: &Matrix<B::Elem>) -> Result<Vec<Params<B::Elem>>> {
    let act = forward(be, spec, model, x)?;
    let probs = be.softmax(&act.logits)?;
    let error = probs.sub(y)?;
    backward(be, spec, model, act, error)
}

/// One SGD step on a batch of client data.
pub fn train_step<B: Backend>(be: &mut B, spec: &NetworkSpec, model: &mut Model<B::Elem>, x: &Matrix<f64>, y: &Matrix<f64>, shift: u32) -> Result<()> {
    let xs = be.input(x)?;
    let ys = be.input(y)?;
    let grads = gradients(be, spec, model, &xs, &ys)?;
    sgd_update(be, model, &grads, shift)
}

/// One pass over `data` in order. A short final batch uses the same update
/// shift as the full ones.
pub fn train_epoch<B: Backend>(be: &mut B, spec: &NetworkSpec, model: &mut Model<B::Elem>, data: &Dataset, cfg: &TrainConfig, mut on_batch: impl FnMut(usize, &Model<B::Elem>)) -> Result<()> {
    let shift = cfg.update_shift()?;
    let classes = spec.classes();
    let mut start = 0;
    let mut step = 0;
    while start < data.len() {
        let end = (start + cfg.batch).min(data.len());
        train_step(be, spec, model, &data.images(start, end), &data.onehot(start, end, classes), shift)?;
        on_batch(step, model);
        step += 1;
        start = end;
    }
    Ok(())
}

/// Bring a clear model into a backend.
pub fn load_model<B: Backend>(be: &mut B, model: &Model<f64>) -> Result<Model<B::Elem>> {
    model.try_map(|m| be.input(m))
}

/// Open a model as reals.
pub fn reveal_model<B: Backend>(be: &mut B, model: &Model<B::Elem>) -> Result<Model<f64>> {
    model.try_map(|m| be.reveal(m))
}

/// Index of the largest entry of each row.
pub fn argmax_rows(m: &Matrix<f64>) -> Vec<usize> {
    (0..m.rows()).map(|r| max_row_f64(m.row(r)).1).collect()
}

/// Float predictions of a clear model, in chunks of `chunk` images.
pub fn classify(spec: &NetworkSpec, model: &Model<f64>, data: &Dataset, chunk: usize) -> Result<Vec<usize>> {
    let mut be = FloatBackend;
    let mut out = Vec::with_capacity(data.len());
    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk.max(1)).min(data.len());
        let act = forward(&mut be, spec, model, &data.images(start, end))?;
        out.extend(argmax_rows(&act.logits));
        start = end;
    }
    Ok(out)
}

/// Fraction of `data` a clear model labels correctly.
pub fn accuracy(spec: &NetworkSpec, model: &Model<f64>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Range("accuracy of an empty dataset".to_string()));
    }
    let pred = classify(spec, model, data, 256)?;
    let hits = pred.iter().zip(&data.labels).filter(|(&p, &y)| p == y as usize).count();
    Ok(hits as f64 / data.len() as f64)
}
