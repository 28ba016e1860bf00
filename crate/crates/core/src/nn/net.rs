//! Batched forward and backward passes, generic over the float type so the
//! same code can be checked in `f64` against finite differences.

use std::fmt::Debug;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};

use super::{Activation, LayerSpec, ModuleParams};
use crate::data::InputPair;
use crate::error::{Error, Result};

pub(crate) trait Real: Float + NumAssign + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

pub(crate) struct Layer<'a, F> {
    pub w: ArrayView2<'a, F>,
    pub b: ArrayView1<'a, F>,
    pub act: Activation,
}

/// A network view over borrowed parameters.
///
/// Encoder activations are kept *stacked*: for a batch of `B` pairs the
/// encoder sees `2B` rows, the first `B` from the first input. The join
/// turns them into `B` rows of width `2 * latent` for the head.
pub(crate) struct Net<'a, F> {
    pub layers: Vec<Layer<'a, F>>,
    pub encoder_depth: usize,
    pub pairs: bool,
}

pub(crate) struct Trace<F> {
    pub start: usize,
    /// Input to each layer from `start` on.
    pub inputs: Vec<Array2<F>>,
    /// Post-activation output of each layer from `start` on.
    pub outputs: Vec<Array2<F>>,
    /// Pre-activation output of the last layer.
    pub logits: Array2<F>,
}

pub(crate) type Grad<F> = (Array2<F>, Array1<F>);

impl<'a> Net<'a, f32> {
    pub fn from_params(params: &'a [ModuleParams], acts: &[Activation], encoder_depth: usize, pairs: bool) -> Self {
        let layers = params
            .iter()
            .zip(acts)
            .map(|(p, &act)| Layer {
                w: ArrayView2::from_shape((p.output_dim, p.input_dim), &p.weights).expect("weight shape"),
                b: ArrayView1::from(&p.biases[..]),
                act,
            })
            .collect();
        Net {
            layers,
            encoder_depth,
            pairs,
        }
    }
}

pub(crate) fn join<F: Real>(stacked: &Array2<F>) -> Array2<F> {
    let b = stacked.nrows() / 2;
    concatenate(Axis(1), &[stacked.slice(s![..b, ..]), stacked.slice(s![b.., ..])]).expect("join")
}

pub(crate) fn split<F: Real>(joined: &Array2<F>) -> Array2<F> {
    let d = joined.ncols() / 2;
    concatenate(Axis(0), &[joined.slice(s![.., ..d]), joined.slice(s![.., d..])]).expect("split")
}

pub(crate) fn activate<F: Real>(act: Activation, z: &Array2<F>) -> Array2<F> {
    match act {
        Activation::Relu => z.mapv(|v| if v > F::zero() { v } else { F::zero() }),
        Activation::Sigmoid => z.mapv(sigmoid),
        Activation::Identity => z.clone(),
        Activation::Softmax => {
            let mut out = z.clone();
            for mut row in out.rows_mut() {
                let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            out
        }
    }
}

pub(crate) fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// Gradient with respect to the pre-activation, given the gradient with
/// respect to the activation output `out`.
fn activation_backward<F: Real>(act: Activation, out: &Array2<F>, mut grad: Array2<F>) -> Array2<F> {
    match act {
        Activation::Relu => {
            grad.zip_mut_with(out, |g, &o| {
                if o <= F::zero() {
                    *g = F::zero()
                }
            });
            grad
        }
        Activation::Sigmoid => {
            grad.zip_mut_with(out, |g, &o| *g = *g * o * (F::one() - o));
            grad
        }
        Activation::Identity => grad,
        Activation::Softmax => {
            for (mut g, s) in grad.rows_mut().into_iter().zip(out.rows()) {
                let dot = g.iter().zip(s.iter()).fold(F::zero(), |a, (&x, &y)| a + x * y);
                g.zip_mut_with(&s, |gv, &sv| *gv = sv * (*gv - dot));
            }
            grad
        }
    }
}

impl<'a, F: Real> Net<'a, F> {
    fn joins_before(&self, i: usize) -> bool {
        self.pairs && i == self.encoder_depth && i < self.layers.len()
    }

    /// Stacks a batch of inputs into the layout layer 0 expects.
    pub fn stack_inputs(&self, x1: ArrayView2<F>, x2: Option<ArrayView2<F>>) -> Array2<F> {
        match (self.pairs, x2) {
            (true, Some(x2)) => concatenate(Axis(0), &[x1, x2]).expect("stack"),
            _ => x1.to_owned(),
        }
    }

    /// Runs layers `start..` on `input`, the input of layer `start`.
    pub fn forward_from(&self, start: usize, input: Array2<F>) -> Trace<F> {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n - start);
        let mut outputs = Vec::with_capacity(n - start);
        let mut current = input;
        let mut logits = None;
        for i in start..n {
            if i != start && self.joins_before(i) {
                current = join(&current);
            }
            let layer = &self.layers[i];
            let mut z = current.dot(&layer.w.t());
            z += &layer.b;
            let out = activate(layer.act, &z);
            if i + 1 == n {
                logits = Some(z);
            }
            inputs.push(current);
            current = out.clone();
            outputs.push(out);
        }
        Trace {
            start,
            inputs,
            outputs,
            logits: logits.expect("network has at least one layer"),
        }
    }

    /// Inputs of layers `0..upto` for a whole batch.
    pub fn layer_inputs(&self, input: Array2<F>, upto: usize) -> Vec<Array2<F>> {
        let mut out = Vec::with_capacity(upto);
        let mut current = input;
        for i in 0..upto.min(self.layers.len() + 1) {
            if i > 0 && self.joins_before(i) {
                current = join(&current);
            }
            if i == upto || i == self.layers.len() {
                out.push(current);
                break;
            }
            let layer = &self.layers[i];
            let mut z = current.dot(&layer.w.t());
            z += &layer.b;
            let next = activate(layer.act, &z);
            out.push(current);
            current = next;
        }
        out
    }

    /// Backpropagates `dz_last`, the loss gradient at the last layer's
    /// pre-activation. Returns weight and bias gradients for the layers
    /// flagged in `want`; other entries are `None`.
    pub fn backward(&self, trace: &Trace<F>, dz_last: Array2<F>, want: &[bool]) -> Vec<Option<Grad<F>>> {
        let n = self.layers.len();
        let start = trace.start;
        let mut grads: Vec<Option<Grad<F>>> = (0..n).map(|_| None).collect();
        let mut dz = dz_last;
        for i in (start..n).rev() {
            let local = i - start;
            if want[i] {
                let gw = dz.t().dot(&trace.inputs[local]);
                let gb = dz.sum_axis(Axis(0));
                grads[i] = Some((gw, gb));
            }
            if i == start {
                break;
            }
            let mut da = dz.dot(&self.layers[i].w);
            if self.joins_before(i) {
                da = split(&da);
            }
            dz = activation_backward(self.layers[i - 1].act, &trace.outputs[local - 1], da);
        }
        grads
    }
}

/// Mean loss and its gradient at the last pre-activation.
///
/// Sigmoid outputs use binary cross-entropy, softmax outputs use
/// categorical cross-entropy; both are computed from logits.
pub(crate) fn loss_and_grad<F: Real>(act: Activation, logits: &Array2<F>, labels: &[u8]) -> (F, Array2<F>) {
    let b = F::from_f64(labels.len() as f64);
    let mut grad = Array2::zeros(logits.dim());
    let mut total = F::zero();
    match act {
        Activation::Sigmoid => {
            for (r, &y) in labels.iter().enumerate() {
                let z = logits[[r, 0]];
                let y = if y > 0 { F::one() } else { F::zero() };
                total = total + softplus(z) - z * y;
                grad[[r, 0]] = (sigmoid(z) - y) / b;
            }
        }
        Activation::Softmax => {
            for (r, &y) in labels.iter().enumerate() {
                let row = logits.row(r);
                let m = row.fold(F::neg_infinity(), |a, &v| a.max(v));
                let lse = m + row.fold(F::zero(), |a, &v| a + (v - m).exp()).ln();
                total = total + lse - row[y as usize];
                for (c, &v) in row.iter().enumerate() {
                    let p = (v - lse).exp();
                    let t = if c == y as usize { F::one() } else { F::zero() };
                    grad[[r, c]] = (p - t) / b;
                }
            }
        }
        _ => unreachable!("output layers are sigmoid or softmax"),
    }
    (total / b, grad)
}

/// Summed loss and number of correct predictions.
pub(crate) fn loss_and_hits<F: Real>(act: Activation, logits: &Array2<F>, labels: &[u8]) -> (f64, usize) {
    let mut total = 0.0;
    let mut hits = 0;
    match act {
        Activation::Sigmoid => {
            for (r, &y) in labels.iter().enumerate() {
                let z = logits[[r, 0]];
                let yf = if y > 0 { F::one() } else { F::zero() };
                total += (softplus(z) - z * yf).to_f64();
                if (z > F::zero()) == (y > 0) {
                    hits += 1;
                }
            }
        }
        Activation::Softmax => {
            for (r, &y) in labels.iter().enumerate() {
                let row = logits.row(r);
                let m = row.fold(F::neg_infinity(), |a, &v| a.max(v));
                let lse = m + row.fold(F::zero(), |a, &v| a + (v - m).exp()).ln();
                total += (lse - row[y as usize]).to_f64();
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                if best == y as usize {
                    hits += 1;
                }
            }
        }
        _ => unreachable!("output layers are sigmoid or softmax"),
    }
    (total, hits)
}

fn softplus<F: Real>(z: F) -> F {
    z.max(F::zero()) + (F::one() + (-z.abs()).exp()).ln()
}

/// Applies a chain of modules to one example.
///
/// Layers flagged `shared_across_branches` run on both inputs of a pair;
/// their outputs are concatenated before the first unshared layer. The
/// returned trace holds, for every layer, the input vectors it saw (two for
/// shared layers of a pair, one otherwise).
pub fn forward(
    path_modules: &[ModuleParams],
    specs: &[LayerSpec],
    input: &InputPair,
) -> Result<(Vec<f32>, Vec<Vec<Vec<f32>>>)> {
    if path_modules.len() != specs.len() || specs.is_empty() {
        return Err(Error::Shape(format!(
            "{} modules for {} layer specs",
            path_modules.len(),
            specs.len()
        )));
    }
    let encoder_depth = specs.iter().take_while(|s| s.shared_across_branches).count();
    let pairs = input.x2.is_some();
    if pairs && encoder_depth == 0 {
        return Err(Error::Shape("pair input but no shared layers".into()));
    }
    let mut expected = specs[0].input_dim;
    for (i, (m, s)) in path_modules.iter().zip(specs).enumerate() {
        if m.input_dim != s.input_dim || m.output_dim != s.output_dim {
            return Err(Error::Shape(format!("module {} does not match its layer spec", i + 1)));
        }
        if s.input_dim != expected {
            return Err(Error::Shape(format!(
                "layer {} expects {} inputs, gets {}",
                i + 1,
                s.input_dim,
                expected
            )));
        }
        expected = if pairs && i + 1 == encoder_depth {
            2 * s.output_dim
        } else {
            s.output_dim
        };
    }
    let v = specs[0].input_dim;
    if input.x1.len() != v || input.x2.as_ref().is_some_and(|x| x.len() != v) {
        return Err(Error::Shape(format!("input has wrong width, layer 1 expects {v}")));
    }
    let acts: Vec<_> = specs.iter().map(|s| s.activation).collect();
    let net = Net::from_params(path_modules, &acts, encoder_depth, pairs);
    let x1 = ArrayView2::from_shape((1, v), &input.x1).expect("row");
    let x2 = input.x2.as_ref().map(|x| ArrayView2::from_shape((1, v), &x[..]).expect("row"));
    let stacked = net.stack_inputs(x1, x2);
    let trace = net.forward_from(0, stacked);
    let per_layer = trace
        .inputs
        .iter()
        .map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect())
        .collect();
    let output = trace.outputs.last().expect("nonempty").row(0).to_vec();
    Ok((output, per_layer))
}
