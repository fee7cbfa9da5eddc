//! Central-difference check of the whole stack.
//!
//! `f(θ+h) − f(θ−h)` is evaluated in difference form: the perturbation is
//! pushed through the linear maps and the ReLUs on its own, and the loss
//! difference is taken with `ln_1p`/`expm1`, so the result carries roundoff
//! relative to the difference rather than to the loss. A step whose
//! perturbation flips any ReLU is shrunk tenfold, up to [`REFINEMENTS`]
//! times, since the quotient across a kink measures a different slope.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HybridModel, LAYER_NAMES};
use crate::autodiff::kernels::{self, ConvGeom};
use crate::autodiff::{relative_error, Mode, Tape, Tensor};
use crate::error::{Error, Result};

/// Tenfold step reductions tried on a coordinate whose step crosses a kink.
pub const REFINEMENTS: usize = 6;

/// Worst relative error between the tape gradient and central differences
/// over every coordinate of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGradError {
    pub name: String,
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Coordinates that needed a smaller step to stay clear of a kink.
    pub refined: usize,
    /// Coordinates still crossing a kink at the smallest step.
    pub kinked: usize,
}

const PARAMETRIC: [usize; 7] = [0, 1, 2, 4, 6, 8, 10];

enum Map {
    Conv { geom: ConvGeom, cols: Vec<f64> },
    Dense { fan_in: usize, fan_out: usize },
}

/// One parametric layer at the base point.
struct Stage<'a> {
    map: Map,
    input: Vec<f64>,
    weights: &'a [f64],
    zero_bias: Vec<f64>,
    pre: Vec<f64>,
}

impl Stage<'_> {
    fn linear(&self, x: &[f64], n: usize) -> Vec<f64> {
        match &self.map {
            Map::Conv { geom, .. } => kernels::conv_forward(x, self.weights, &self.zero_bias, geom),
            Map::Dense { fan_in, fan_out } => {
                kernels::dense_forward(x, n, self.weights, &self.zero_bias, *fan_in, *fan_out)
            }
        }
    }

    /// Change in pre-activation when coordinate `i` of the weights (or the
    /// bias) moves by `step`.
    fn seed_delta(&self, bias: bool, i: usize, step: f64, n: usize) -> Vec<f64> {
        let mut dz = vec![0.0; self.pre.len()];
        let units = self.zero_bias.len();
        match (&self.map, bias) {
            (_, true) => dz.iter_mut().skip(i).step_by(units).for_each(|d| *d = step),
            (Map::Conv { geom, cols }, false) => {
                let taps = geom.taps();
                let (f, tap) = (i / taps, i % taps);
                for r in 0..geom.rows() {
                    dz[r * units + f] = step * cols[r * taps + tap];
                }
            }
            (Map::Dense { fan_in, .. }, false) => {
                let (o, j) = (i / fan_in, i % fan_in);
                for b in 0..n {
                    dz[b * units + o] = step * self.input[b * fan_in + j];
                }
            }
        }
        dz
    }
}

fn relu_delta(pre: &[f64], dz: &[f64], kinked: &mut bool) -> Vec<f64> {
    pre.iter()
        .zip(dz)
        .map(|(&z, &d)| {
            let moved = z + d;
            if (z > 0.0) != (moved > 0.0) {
                *kinked = true;
                moved.max(0.0) - z.max(0.0)
            } else if z > 0.0 {
                d
            } else {
                0.0
            }
        })
        .collect()
}

struct Probe<'a> {
    stages: Vec<Stage<'a>>,
    probs: Vec<f64>,
    labels: &'a [usize],
    classes: usize,
    n: usize,
}

impl<'a> Probe<'a> {
    fn new(model: &'a HybridModel, batch: &Tensor, labels: &'a [usize]) -> Result<Self> {
        let n = model.check_input(batch)?;
        let mut stages: Vec<Stage<'a>> = Vec::with_capacity(7);
        let mut x = batch.data().to_vec();
        let mut sample = batch.shape()[1..5].to_vec();
        for layer in 0..7 {
            let (map, weights, bias) = match layer {
                0..=2 => {
                    let k = &model.conv3d[layer];
                    let geom = k.geom(n, &sample);
                    sample = k.output_shape(&sample)?.to_vec();
                    (Map::Conv { geom, cols: kernels::im2col(&x, &geom) }, &k.weights, &k.bias)
                }
                3 => {
                    let flat = [sample[0], sample[1], sample[2] * sample[3]];
                    let k = &model.conv2d;
                    let geom = k.geom(n, &flat);
                    sample = k.output_shape(&flat)?.to_vec();
                    (Map::Conv { geom, cols: kernels::im2col(&x, &geom) }, &k.weights, &k.bias)
                }
                _ => {
                    let d = &model.dense[layer - 4];
                    (Map::Dense { fan_in: d.in_features(), fan_out: d.out_features() }, &d.weights, &d.bias)
                }
            };
            let mut stage =
                Stage { map, input: x, weights: weights.data(), zero_bias: vec![0.0; bias.len()], pre: Vec::new() };
            let mut pre = stage.linear(&stage.input, n);
            let units = bias.len();
            for (i, z) in pre.iter_mut().enumerate() {
                *z += bias.data()[i % units];
            }
            x = if layer < 6 { pre.iter().map(|z| z.max(0.0)).collect() } else { Vec::new() };
            stage.pre = pre;
            stages.push(stage);
        }
        let classes = model.class_count();
        let probs = kernels::softmax_rows(&stages[6].pre, classes);
        Ok(Self { stages, probs, labels, classes, n })
    }

    /// `loss(θ + step·e) − loss(θ)` for coordinate `i` of parameter tensor
    /// `k`, and whether the step crossed a kink.
    fn loss_delta(&self, k: usize, i: usize, step: f64) -> (f64, bool) {
        let layer = k / 2;
        let mut kinked = false;
        let mut dz = self.stages[layer].seed_delta(k % 2 == 1, i, step, self.n);
        for l in layer..6 {
            let da = relu_delta(&self.stages[l].pre, &dz, &mut kinked);
            dz = self.stages[l + 1].linear(&da, self.n);
        }
        let mut total = 0.0;
        for (b, (d, p)) in dz.chunks_exact(self.classes).zip(self.probs.chunks_exact(self.classes)).enumerate() {
            let spread: f64 = d.iter().zip(p).map(|(&d, &p)| p * d.exp_m1()).sum();
            total += spread.ln_1p() - d[self.labels[b]];
        }
        (total / self.n as f64, kinked)
    }
}

/// Checks every parameter of `model` on one batch with dropout disabled,
/// starting each coordinate at step `eps`.
pub fn check_model_gradients(
    model: &HybridModel,
    batch: &Tensor,
    labels: &[usize],
    eps: f64,
) -> Result<Vec<TensorGradError>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let (loss, vars) = model.record(&mut tape, batch.detached(), labels, Mode::Eval, &mut unused)?;
    tape.backward(loss)?;
    let probe = Probe::new(model, batch, labels)?;

    let mut report = Vec::with_capacity(14);
    for (k, var) in vars.iter().enumerate() {
        let len = model.params()[k].len();
        let analytic = tape.grad(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len]);
        let name = format!("{}.{}", LAYER_NAMES[PARAMETRIC[k / 2]], if k % 2 == 0 { "weights" } else { "bias" });
        let mut entry = TensorGradError {
            name,
            coordinates: len,
            max_relative_error: 0.0,
            worst_coordinate: 0,
            analytic: 0.0,
            numeric: 0.0,
            refined: 0,
            kinked: 0,
        };
        for (i, &a) in analytic.iter().enumerate() {
            let mut step = eps;
            let mut tries = 0;
            let numeric = loop {
                let (up, k_up) = probe.loss_delta(k, i, step);
                let (down, k_down) = probe.loss_delta(k, i, -step);
                let numeric = (up - down) / (2.0 * step);
                if !numeric.is_finite() {
                    return Err(Error::Oracle(format!("non-finite difference quotient at {}[{i}]", entry.name)));
                }
                if !(k_up || k_down) {
                    break numeric;
                }
                if tries == REFINEMENTS {
                    entry.kinked += 1;
                    break numeric;
                }
                tries += 1;
                step /= 10.0;
            };
            if tries > 0 {
                entry.refined += 1;
            }
            let err = relative_error(numeric, a);
            if err > entry.max_relative_error {
                entry.max_relative_error = err;
                entry.worst_coordinate = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.push(entry);
    }
    Ok(report)
}
