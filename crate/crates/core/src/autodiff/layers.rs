//! Layer parameter types and their eager (tape-free) forward functions.

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Train or inference behaviour for stochastic layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Filters of a valid 3D convolution; weights are `(filters, h, w, d, in_channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel3D {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvKernel3D {
    pub fn zeros(filters: usize, extent: [usize; 3], in_channels: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[filters, extent[0], extent[1], extent[2], in_channels]),
            bias: Tensor::zeros(&[filters]),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(filters: usize, extent: [usize; 3], in_channels: usize, rng: &mut R) -> Self {
        let receptive = extent.iter().product::<usize>();
        Self {
            weights: glorot_uniform(
                &[filters, extent[0], extent[1], extent[2], in_channels],
                receptive * in_channels,
                receptive * filters,
                rng,
            ),
            bias: Tensor::zeros(&[filters]),
        }
    }

    pub fn from_parts(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 5 || bias.rank() != 1 || bias.len() != weights.shape()[0] {
            return Err(Error::Dimension(format!(
                "3D kernel needs weights (f, kh, kw, kd, c) and bias (f), got {:?} and {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn filters(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn extent(&self) -> [usize; 3] {
        let s = self.weights.shape();
        [s[1], s[2], s[3]]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[4]
    }

    pub fn param_count(&self) -> usize {
        let [h, w, d] = self.extent();
        self.filters() * (h * w * d * self.in_channels()) + self.filters()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        let [kh, kw, kd] = self.extent();
        if input.len() != 4 {
            return Err(Error::Dimension(format!("3D convolution expects (h, w, d, c), got {input:?}")));
        }
        if input.contains(&0) {
            return Err(Error::Dimension(format!("empty input {input:?}")));
        }
        if input[0] < kh || input[1] < kw || input[2] < kd || input[3] != self.in_channels() {
            return Err(Error::Dimension(format!(
                "input {:?} incompatible with kernel {:?}",
                input,
                self.weights.shape()
            )));
        }
        Ok([input[0] - kh + 1, input[1] - kw + 1, input[2] - kd + 1, self.filters()])
    }

    pub(crate) fn geom(&self, n: usize, input: &[usize]) -> ConvGeom {
        let [kh, kw, kd] = self.extent();
        ConvGeom { n, h: input[0], w: input[1], d: input[2], c: input[3], kh, kw, kd, f: self.filters() }
    }
}

/// Filters of a valid 2D convolution; weights are `(filters, h, w, in_channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel2D {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvKernel2D {
    pub fn zeros(filters: usize, extent: [usize; 2], in_channels: usize) -> Self {
        Self { weights: Tensor::zeros(&[filters, extent[0], extent[1], in_channels]), bias: Tensor::zeros(&[filters]) }
    }

    pub fn glorot<R: Rng + ?Sized>(filters: usize, extent: [usize; 2], in_channels: usize, rng: &mut R) -> Self {
        let receptive = extent[0] * extent[1];
        Self {
            weights: glorot_uniform(
                &[filters, extent[0], extent[1], in_channels],
                receptive * in_channels,
                receptive * filters,
                rng,
            ),
            bias: Tensor::zeros(&[filters]),
        }
    }

    pub fn from_parts(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 4 || bias.rank() != 1 || bias.len() != weights.shape()[0] {
            return Err(Error::Dimension(format!(
                "2D kernel needs weights (f, kh, kw, c) and bias (f), got {:?} and {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn filters(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn extent(&self) -> [usize; 2] {
        let s = self.weights.shape();
        [s[1], s[2]]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn param_count(&self) -> usize {
        let [h, w] = self.extent();
        self.filters() * (h * w * self.in_channels()) + self.filters()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        let [kh, kw] = self.extent();
        if input.len() != 3 {
            return Err(Error::Dimension(format!("2D convolution expects (h, w, c), got {input:?}")));
        }
        if input.contains(&0) {
            return Err(Error::Dimension(format!("empty input {input:?}")));
        }
        if input[0] < kh || input[1] < kw || input[2] != self.in_channels() {
            return Err(Error::Dimension(format!(
                "input {:?} incompatible with kernel {:?}",
                input,
                self.weights.shape()
            )));
        }
        Ok([input[0] - kh + 1, input[1] - kw + 1, self.filters()])
    }

    /// A 2D convolution is the 3D kernel with unit depth.
    pub(crate) fn geom(&self, n: usize, input: &[usize]) -> ConvGeom {
        let [kh, kw] = self.extent();
        ConvGeom { n, h: input[0], w: input[1], d: 1, c: input[2], kh, kw, kd: 1, f: self.filters() }
    }
}

/// Fully connected layer; weights are `(out_features, in_features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self { weights: Tensor::zeros(&[out_features, in_features]), bias: Tensor::zeros(&[out_features]) }
    }

    pub fn glorot<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            weights: glorot_uniform(&[out_features, in_features], in_features, out_features, rng),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    pub fn from_parts(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 || bias.rank() != 1 || bias.len() != weights.shape()[0] {
            return Err(Error::Dimension(format!(
                "dense layer needs weights (out, in) and bias (out), got {:?} and {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.out_features() * self.in_features() + self.out_features()
    }
}

/// Splits an optional leading batch axis off `shape`, given the per-sample rank.
fn split_batch(shape: &[usize], sample_rank: usize) -> Result<(usize, &[usize], bool)> {
    if shape.len() == sample_rank {
        Ok((1, shape, false))
    } else if shape.len() == sample_rank + 1 {
        Ok((shape[0], &shape[1..], true))
    } else {
        Err(Error::Dimension(format!(
            "expected a rank-{} sample or rank-{} batch, got shape {:?}",
            sample_rank,
            sample_rank + 1,
            shape
        )))
    }
}

/// Valid stride-1 3D cross-correlation plus bias; no activation.
///
/// Accepts one sample `(h, w, d, c)` or a batch `(n, h, w, d, c)`.
pub fn conv3d_forward(input: &Tensor, kernel: &ConvKernel3D) -> Result<Tensor> {
    if input.is_empty() {
        return Err(Error::Dimension(format!("empty input {:?}", input.shape())));
    }
    let (n, sample, batched) = split_batch(input.shape(), 4)?;
    let out = kernel.output_shape(sample)?;
    let g = kernel.geom(n, sample);
    let data = kernels::conv_forward(input.data(), kernel.weights.data(), kernel.bias.data(), &g);
    let shape: Vec<usize> = if batched { std::iter::once(n).chain(out).collect() } else { out.to_vec() };
    Tensor::new(&shape, data)
}

/// Valid stride-1 2D cross-correlation plus bias; no activation.
///
/// Accepts one sample `(h, w, c)` or a batch `(n, h, w, c)`.
pub fn conv2d_forward(input: &Tensor, kernel: &ConvKernel2D) -> Result<Tensor> {
    if input.is_empty() {
        return Err(Error::Dimension(format!("empty input {:?}", input.shape())));
    }
    let (n, sample, batched) = split_batch(input.shape(), 3)?;
    let out = kernel.output_shape(sample)?;
    let g = kernel.geom(n, sample);
    let data = kernels::conv_forward(input.data(), kernel.weights.data(), kernel.bias.data(), &g);
    let shape: Vec<usize> = if batched { std::iter::once(n).chain(out).collect() } else { out.to_vec() };
    Tensor::new(&shape, data)
}

/// `weights · input + bias` for one vector `(n)` or a batch `(batch, n)`.
pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    let (n, sample, batched) = split_batch(input.shape(), 1)?;
    if sample[0] != layer.in_features() {
        return Err(Error::Dimension(format!(
            "dense layer expects {} features, input has shape {:?}",
            layer.in_features(),
            input.shape()
        )));
    }
    let data = kernels::dense_forward(
        input.data(),
        n,
        layer.weights.data(),
        layer.bias.data(),
        layer.in_features(),
        layer.out_features(),
    );
    let shape = if batched { vec![n, layer.out_features()] } else { vec![layer.out_features()] };
    Tensor::new(&shape, data)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

/// Softmax over the last axis.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    let classes = *input
        .shape()
        .last()
        .filter(|&&c| c > 0)
        .ok_or_else(|| Error::Dimension(format!("softmax needs a non-empty last axis, got {:?}", input.shape())))?;
    Tensor::new(input.shape(), kernels::softmax_rows(input.data(), classes))
}

pub(crate) fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout: in train mode zeroes each element with probability
/// `rate` and rescales survivors by `1 / (1 - rate)`; identity in eval mode.
pub fn dropout_apply<R: Rng + ?Sized>(input: &Tensor, rate: f64, mode: Mode, rng: &mut R) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(input.detached());
    }
    let mask = dropout_mask(input.len(), rate, rng);
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Tensor::new(input.shape(), data)
}

pub(crate) fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Dimension(format!("{} labels for a batch of {}", labels.len(), batch)));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Index(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean over the batch of `-log softmax(logits)[label]`; labels are 0-based.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (batch, classes) = match logits.shape() {
        [b, c] if *c > 0 => (*b, *c),
        s => return Err(Error::Dimension(format!("logits must be (batch, classes), got {s:?}"))),
    };
    check_labels(labels, batch, classes)?;
    if batch == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    let nll = kernels::nll_rows(logits.data(), classes, labels);
    Ok(nll.iter().sum::<f64>() / batch as f64)
}
