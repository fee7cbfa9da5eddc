//! The hybrid 3D/2D convolutional classifier, its training loop and
//! checkpoints.

pub mod checkpoint;
mod gradcheck;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::layers::check_rate;
use crate::autodiff::{
    conv2d_forward, conv3d_forward, dense_forward, dropout_apply, relu, Adam, AdamConfig, ConvKernel2D, ConvKernel3D,
    DenseLayer, Mode, Tape, Tensor, Var,
};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{check_model_gradients, TensorGradError};
pub use train::{mix_seed, train, train_with, EpochRecord, TrainConfig, TrainTrace};

pub const MIN_WINDOW: usize = 9;
pub const MIN_BANDS: usize = 15;
pub const DEFAULT_DROPOUT: f64 = 0.4;

/// Layer names in stack order.
pub const LAYER_NAMES: [&str; 11] = [
    "Conv3D_1",
    "Conv3D_2",
    "Conv3D_3",
    "Reshape",
    "Conv2D_1",
    "Flatten_1",
    "Dense_1",
    "Dropout_1",
    "Dense_2",
    "Dropout_2",
    "Dense_3",
];

const CONV3D: [(usize, [usize; 3]); 3] = [(8, [3, 3, 7]), (16, [3, 3, 5]), (32, [3, 3, 3])];
const CONV2D: (usize, [usize; 2]) = (64, [3, 3]);
const HIDDEN: [usize; 2] = [256, 128];
const CHUNK: usize = 16;
const EVAL_CHUNK: usize = 8;

/// One row of the layer summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub kind: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// Three valid 3D convolutions, a reshape merging depth into channels, one
/// 2D convolution, then three dense layers with dropout after the first two.
/// ReLU follows every layer but the last, which emits logits.
#[derive(Debug, Clone)]
pub struct HybridModel {
    window: usize,
    bands: usize,
    classes: usize,
    dropout_rate: f64,
    conv3d: [ConvKernel3D; 3],
    conv2d: ConvKernel2D,
    dense: [DenseLayer; 3],
    optimizer: Adam,
}

impl PartialEq for HybridModel {
    fn eq(&self, other: &Self) -> bool {
        (self.window, self.bands, self.classes) == (other.window, other.bands, other.classes)
            && self.dropout_rate == other.dropout_rate
            && self.params().iter().zip(other.params()).all(|(a, b)| a.shape() == b.shape() && a.data() == b.data())
    }
}

fn shape_chain(window: usize, bands: usize) -> Vec<String> {
    let (mut h, mut d, mut c) = (window as isize, bands as isize, 1);
    let mut chain = vec![format!("({h}, {h}, {d}, {c})")];
    for (f, [kh, _, kd]) in CONV3D {
        h -= kh as isize - 1;
        d -= kd as isize - 1;
        c = f;
        chain.push(format!("({h}, {h}, {d}, {c})"));
        if h < 1 || d < 1 {
            return chain;
        }
    }
    chain.push(format!("reshape ({h}, {h}, {})", d * c as isize));
    chain.push(format!("Conv2D_1 ({}, {}, {})", h - 2, h - 2, CONV2D.0));
    chain
}

/// Validates `(window, bands, classes)` against the stack's minimum sizes.
pub fn check_architecture(window: usize, bands: usize, classes: usize) -> Result<()> {
    if window.is_multiple_of(2) || window < MIN_WINDOW || bands < MIN_BANDS {
        return Err(Error::Architecture(format!(
            "input ({window}, {window}, {bands}, 1) does not fit the layer stack: {}; need an odd window >= {MIN_WINDOW} and bands >= {MIN_BANDS}",
            shape_chain(window, bands).join(" -> ")
        )));
    }
    if classes < 2 {
        return Err(Error::Architecture(format!("need at least 2 classes, got {classes}")));
    }
    Ok(())
}

pub fn build_model(window: usize, bands: usize, classes: usize, seed: u64) -> Result<HybridModel> {
    HybridModel::new(window, bands, classes, seed)
}

impl HybridModel {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(window: usize, bands: usize, classes: usize, seed: u64) -> Result<Self> {
        check_architecture(window, bands, classes)?;
        Ok(Self::build(window, bands, classes, Some(&mut ChaCha8Rng::seed_from_u64(seed))))
    }

    /// All weights and biases zero.
    pub fn zeros(window: usize, bands: usize, classes: usize) -> Result<Self> {
        check_architecture(window, bands, classes)?;
        Ok(Self::build(window, bands, classes, None))
    }

    fn build(window: usize, bands: usize, classes: usize, mut rng: Option<&mut ChaCha8Rng>) -> Self {
        let mut in_ch = 1;
        let conv3d = CONV3D.map(|(filters, extent)| {
            let k = match rng.as_deref_mut() {
                Some(r) => ConvKernel3D::glorot(filters, extent, in_ch, r),
                None => ConvKernel3D::zeros(filters, extent, in_ch),
            };
            in_ch = filters;
            k
        });
        let (filters, extent) = CONV2D;
        let merged = in_ch * (bands - 12);
        let conv2d = match rng.as_deref_mut() {
            Some(r) => ConvKernel2D::glorot(filters, extent, merged, r),
            None => ConvKernel2D::zeros(filters, extent, merged),
        };
        let side = window - 8;
        let widths = [filters * side * side, HIDDEN[0], HIDDEN[1], classes];
        let dense = [0, 1, 2].map(|i| match rng.as_deref_mut() {
            Some(r) => DenseLayer::glorot(widths[i], widths[i + 1], r),
            None => DenseLayer::zeros(widths[i], widths[i + 1]),
        });
        Self { window, bands, classes, dropout_rate: DEFAULT_DROPOUT, conv3d, conv2d, dense, optimizer: Adam::new() }
    }

    /// Rebuilds a model from parameter tensors in stack order.
    pub fn from_params(window: usize, bands: usize, classes: usize, params: Vec<Tensor>) -> Result<Self> {
        let mut model = Self::zeros(window, bands, classes)?;
        if params.len() != 14 {
            return Err(Error::Dimension(format!("expected 14 parameter tensors, got {}", params.len())));
        }
        for (slot, p) in model.params_mut().into_iter().zip(params) {
            if slot.shape() != p.shape() {
                return Err(Error::Dimension(format!(
                    "parameter shape {:?} does not match the layer's {:?}",
                    p.shape(),
                    slot.shape()
                )));
            }
            *slot = p.detached();
        }
        Ok(model)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        check_rate(rate)?;
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.window, self.window, self.bands, 1]
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    /// Weight and bias tensors in stack order.
    pub fn params(&self) -> [&Tensor; 14] {
        let [c1, c2, c3] = &self.conv3d;
        let [d1, d2, d3] = &self.dense;
        [
            &c1.weights,
            &c1.bias,
            &c2.weights,
            &c2.bias,
            &c3.weights,
            &c3.bias,
            &self.conv2d.weights,
            &self.conv2d.bias,
            &d1.weights,
            &d1.bias,
            &d2.weights,
            &d2.bias,
            &d3.weights,
            &d3.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 14] {
        let [c1, c2, c3] = &mut self.conv3d;
        let [d1, d2, d3] = &mut self.dense;
        [
            &mut c1.weights,
            &mut c1.bias,
            &mut c2.weights,
            &mut c2.bias,
            &mut c3.weights,
            &mut c3.bias,
            &mut self.conv2d.weights,
            &mut self.conv2d.bias,
            &mut d1.weights,
            &mut d1.bias,
            &mut d2.weights,
            &mut d2.bias,
            &mut d3.weights,
            &mut d3.bias,
        ]
    }

    pub fn layer_summary(&self) -> Vec<LayerSummary> {
        let side = self.window;
        let s3 = |i: usize| side - 2 * (i + 1);
        let depth = [self.bands - 6, self.bands - 10, self.bands - 12];
        let row = |i: usize, shape: Vec<usize>, params: usize| LayerSummary {
            name: LAYER_NAMES[i].into(),
            kind: LAYER_NAMES[i].split('_').next().expect("non-empty").into(),
            output_shape: shape,
            params,
        };
        let flat = CONV2D.0 * (side - 8) * (side - 8);
        vec![
            row(0, vec![s3(0), s3(0), depth[0], 8], self.conv3d[0].param_count()),
            row(1, vec![s3(1), s3(1), depth[1], 16], self.conv3d[1].param_count()),
            row(2, vec![s3(2), s3(2), depth[2], 32], self.conv3d[2].param_count()),
            row(3, vec![s3(2), s3(2), depth[2] * 32], 0),
            row(4, vec![side - 8, side - 8, CONV2D.0], self.conv2d.param_count()),
            row(5, vec![flat], 0),
            row(6, vec![HIDDEN[0]], self.dense[0].param_count()),
            row(7, vec![HIDDEN[0]], 0),
            row(8, vec![HIDDEN[1]], self.dense[1].param_count()),
            row(9, vec![HIDDEN[1]], 0),
            row(10, vec![self.classes], self.dense[2].param_count()),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        match input.shape() {
            [n, rest @ ..] if rest == self.input_shape() && *n > 0 => Ok(*n),
            s => Err(Error::Dimension(format!(
                "model expects a batch (n, {}, {}, {}, 1), got {s:?}",
                self.window, self.window, self.bands
            ))),
        }
    }

    fn reshape_target(&self, n: usize) -> [usize; 4] {
        let side = self.window - 6;
        [n, side, side, (self.bands - 12) * 32]
    }

    /// Logits `(n, classes)` for a batch `(n, window, window, bands, 1)`.
    /// Train mode draws dropout masks from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, batch: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let n = self.check_input(batch)?;
        self.run_layers(0, batch.detached(), n, mode, rng)
    }

    /// One parametric layer with its activation and dropout. Layers 0..=2
    /// are the 3D convolutions, 3 the reshape, 2D convolution and flatten,
    /// 4..=6 the dense layers.
    fn layer_step<R: Rng + ?Sized>(
        &self,
        layer: usize,
        x: Tensor,
        n: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        Ok(match layer {
            0..=2 => relu(&conv3d_forward(&x, &self.conv3d[layer])?),
            3 => {
                let y = relu(&conv2d_forward(&x.reshape(&self.reshape_target(n))?, &self.conv2d)?);
                let flat = y.len() / n;
                y.reshape(&[n, flat])?
            }
            4 | 5 => dropout_apply(&relu(&dense_forward(&x, &self.dense[layer - 4])?), self.dropout_rate, mode, rng)?,
            _ => dense_forward(&x, &self.dense[2])?,
        })
    }

    /// Runs layers `from..7` on `x`, the input expected by layer `from`.
    pub(crate) fn run_layers<R: Rng + ?Sized>(
        &self,
        from: usize,
        mut x: Tensor,
        n: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        for layer in from..7 {
            x = self.layer_step(layer, x, n, mode, rng)?;
        }
        Ok(x)
    }

    /// Eval-mode logits for `n` concatenated patches, computed in chunks.
    pub fn logits(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        let per = self.window * self.window * self.bands;
        if inputs.len() != n * per {
            return Err(Error::Dimension(format!("{} values for {n} patches of {per}", inputs.len())));
        }
        let parts = inputs
            .par_chunks(EVAL_CHUNK * per)
            .map(|chunk| {
                let shape = [chunk.len() / per, self.window, self.window, self.bands, 1];
                let mut noop = ChaCha8Rng::seed_from_u64(0);
                Ok(self.forward(&Tensor::new(&shape, chunk.to_vec())?, Mode::Eval, &mut noop)?.into_data())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.concat())
    }

    /// Predicted classes (1-based) for `n` concatenated patches.
    pub fn predict(&self, inputs: &[f64], n: usize) -> Result<Vec<u16>> {
        Ok(self.logits(inputs, n)?.chunks_exact(self.classes).map(predict_class).collect())
    }

    /// Records the forward pass and mean cross-entropy on `tape`. Returns the
    /// loss node and the parameter leaves in stack order.
    pub fn record<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: Tensor,
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, [Var; 14])> {
        let n = self.check_input(&batch)?;
        let params: Vec<Var> = self.params().into_iter().map(|p| tape.leaf(p.detached())).collect();
        let params: [Var; 14] = params.try_into().expect("14 tensors");
        let mut x = tape.constant(batch);
        for i in 0..3 {
            let y = tape.conv3d(x, params[2 * i], params[2 * i + 1])?;
            x = tape.relu(y);
        }
        x = tape.reshape(x, &self.reshape_target(n))?;
        let y = tape.conv2d(x, params[6], params[7])?;
        x = tape.relu(y);
        let flat = tape.value(x).len() / n;
        x = tape.reshape(x, &[n, flat])?;
        for i in 0..3 {
            x = tape.dense(x, params[8 + 2 * i], params[9 + 2 * i])?;
            if i < 2 {
                x = tape.relu(x);
                if mode == Mode::Train && self.dropout_rate > 0.0 {
                    x = tape.dropout(x, self.dropout_rate, rng)?;
                }
            }
        }
        let loss = tape.cross_entropy(x, labels)?;
        Ok((loss, params))
    }

    /// Installs one gradient per parameter tensor, in stack order.
    pub fn set_gradients(&mut self, grads: Vec<Vec<f64>>) -> Result<()> {
        if grads.len() != 14 {
            return Err(Error::Contract(format!("expected 14 gradients, got {}", grads.len())));
        }
        for (p, g) in self.params_mut().into_iter().zip(grads) {
            p.set_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.clear_grad());
    }

    /// One Adam update from the gradients currently installed.
    pub fn adam_step(&mut self, config: &AdamConfig) -> Result<()> {
        let mut optimizer = std::mem::take(&mut self.optimizer);
        let result = optimizer.step(&mut self.params_mut(), config);
        self.optimizer = optimizer;
        result
    }
}

/// 1-based argmax; ties go to the lowest class.
pub fn predict_class(logits: &[f64]) -> u16 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u16 + 1
}
