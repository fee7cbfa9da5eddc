//! Operation-recording tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so parents always precede their
//! children and a reverse sweep over the node list is a valid topological
//! order. Leaf gradients persist across [`Tape::backward`] calls and
//! accumulate until [`Tape::zero_grad`].

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::layers::{check_labels, check_rate, dropout_mask};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { input: Var, weight: Var, bias: Var, geom: ConvGeom, cols: Vec<f64> },
    Dense { input: Var, weight: Var, bias: Var, batch: usize, fan_in: usize, fan_out: usize },
    Relu(Var),
    Reshape(Var),
    Dropout { input: Var, mask: Vec<f64> },
    Sum(Var),
    Mul(Var, Var),
    Scale(Var, f64),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value.detached(), Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.detached(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn conv_geom(&self, x: Var, w: Var, b: Var, spatial: usize) -> Result<(ConvGeom, Vec<usize>)> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let bs = self.value(b).shape();
        let (n, sample, batched) = if xs.len() == spatial + 1 {
            (1, xs, false)
        } else if xs.len() == spatial + 2 {
            (xs[0], &xs[1..], true)
        } else {
            return Err(Error::Dimension(format!("convolution input has unexpected shape {xs:?}")));
        };
        let bad = || Error::Dimension(format!("input {xs:?} incompatible with kernel {ws:?} / bias {bs:?}"));
        if ws.len() != spatial + 2 || bs != [ws[0]] || sample[spatial] != ws[spatial + 1] {
            return Err(bad());
        }
        if sample.contains(&0) {
            return Err(Error::Dimension(format!("empty input {xs:?}")));
        }
        if (0..spatial).any(|i| sample[i] < ws[i + 1]) {
            return Err(bad());
        }
        let geom = if spatial == 3 {
            ConvGeom {
                n,
                h: sample[0],
                w: sample[1],
                d: sample[2],
                c: sample[3],
                kh: ws[1],
                kw: ws[2],
                kd: ws[3],
                f: ws[0],
            }
        } else {
            ConvGeom { n, h: sample[0], w: sample[1], d: 1, c: sample[2], kh: ws[1], kw: ws[2], kd: 1, f: ws[0] }
        };
        let mut out: Vec<usize> = if batched { vec![n] } else { vec![] };
        out.extend((0..spatial).map(|i| sample[i] - ws[i + 1] + 1));
        out.push(ws[0]);
        Ok((geom, out))
    }

    fn conv(&mut self, x: Var, w: Var, b: Var, spatial: usize) -> Result<Var> {
        let (geom, shape) = self.conv_geom(x, w, b, spatial)?;
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let data = kernels::conv_forward_cols(&cols, self.value(w).data(), self.value(b).data(), &geom);
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Conv { input: x, weight: w, bias: b, geom, cols }, rg))
    }

    /// 3D convolution of `(n, h, w, d, c)` or `(h, w, d, c)` input.
    pub fn conv3d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        self.conv(x, weight, bias, 3)
    }

    /// 2D convolution of `(n, h, w, c)` or `(h, w, c)` input.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        self.conv(x, weight, bias, 2)
    }

    /// Fully connected layer on `(batch, in)` or `(in)` input.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let (batch, fan_in, batched) = match xs.as_slice() {
            [n] => (1, *n, false),
            [b, n] => (*b, *n, true),
            _ => return Err(Error::Dimension(format!("dense input must be rank 1 or 2, got {xs:?}"))),
        };
        if ws.len() != 2 || ws[1] != fan_in || self.value(bias).shape() != [ws[0]] {
            return Err(Error::Dimension(format!("input {xs:?} incompatible with dense weights {ws:?}")));
        }
        let fan_out = ws[0];
        let data = kernels::dense_forward(
            self.value(x).data(),
            batch,
            self.value(weight).data(),
            self.value(bias).data(),
            fan_in,
            fan_out,
        );
        let shape = if batched { vec![batch, fan_out] } else { vec![fan_out] };
        let rg = self.needs(&[x, weight, bias]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Dense { input: x, weight, bias, batch, fan_in, fan_out }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).detached().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Inverted dropout with a mask drawn from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        check_rate(rate)?;
        let mask = dropout_mask(self.value(x).len(), rate, rng);
        let data = self.value(x).data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(self.value(x).shape(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Dropout { input: x, mask }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Elementwise product of equally shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "mul of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// Mean softmax cross-entropy of `(batch, classes)` logits; labels are 0-based.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = match self.value(logits).shape() {
            [b, c] if *b > 0 && *c > 0 => (*b, *c),
            s => return Err(Error::Dimension(format!("logits must be a non-empty (batch, classes), got {s:?}"))),
        };
        check_labels(labels, batch, classes)?;
        let z = self.value(logits).data();
        let loss = kernels::nll_rows(z, classes, labels).iter().sum::<f64>() / batch as f64;
        let probs = kernels::softmax_rows(z, classes);
        let rg = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// Reverse sweep from a scalar node, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", root.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn add(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match &mut self.leaf_grads[idx] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                },
                Op::Conv { input, weight, bias, geom, cols } => {
                    let want_input = self.nodes[input.0].requires_grad;
                    let (dx, dw, db) =
                        kernels::conv_backward(cols, self.nodes[weight.0].value.data(), &g, geom, want_input);
                    if let Some(dx) = dx {
                        add(&mut grads, *input, dx);
                    }
                    add(&mut grads, *weight, dw);
                    add(&mut grads, *bias, db);
                }
                Op::Dense { input, weight, bias, batch, fan_in, fan_out } => {
                    let (dx, dw, db) = kernels::dense_backward(
                        self.nodes[input.0].value.data(),
                        *batch,
                        self.nodes[weight.0].value.data(),
                        &g,
                        *fan_in,
                        *fan_out,
                    );
                    add(&mut grads, *input, dx);
                    add(&mut grads, *weight, dw);
                    add(&mut grads, *bias, db);
                }
                Op::Relu(x) => {
                    let dx = g.iter().zip(node.value.data()).map(|(gi, &y)| if y > 0.0 { *gi } else { 0.0 }).collect();
                    add(&mut grads, *x, dx);
                }
                Op::Reshape(x) => add(&mut grads, *x, g),
                Op::Dropout { input, mask } => {
                    let dx = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                    add(&mut grads, *input, dx);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    add(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    let da = g.iter().zip(bv).map(|(gi, y)| gi * y).collect();
                    let db = g.iter().zip(av).map(|(gi, x)| gi * x).collect();
                    add(&mut grads, *a, da);
                    add(&mut grads, *b, db);
                }
                Op::Scale(x, factor) => add(&mut grads, *x, g.iter().map(|v| v * factor).collect()),
                Op::CrossEntropy { logits, labels, probs } => {
                    let classes = probs.len() / labels.len();
                    let w = g[0] / labels.len() as f64;
                    let mut dz: Vec<f64> = probs.iter().map(|p| p * w).collect();
                    for (r, &y) in labels.iter().enumerate() {
                        dz[r * classes + y] -= w;
                    }
                    add(&mut grads, *logits, dz);
                }
            }
        }
        Ok(())
    }
}
