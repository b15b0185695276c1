//! Dense feed-forward networks with hand-written backward passes.
//!
//! [`DenseNet`] is immutable during a forward pass. Gradients and the
//! activations needed for backprop live in a separate [`GradientTape`]:
//! [`DenseNet::forward_recorded`] pushes one record per call and
//! [`DenseNet::backward`] pops the most recent one. Recording several
//! forward passes and popping them in reverse is exactly what backprop
//! through an unrolled chain (a denoising loop) needs.
//!
//! ```
//! use covsem::nn::{Activation, DenseNet, GradientTape, Matrix};
//!
//! let net = DenseNet::new(3, &[(4, Activation::Tanh), (2, Activation::Linear)], 7);
//! let mut tape = GradientTape::for_net(&net);
//! let x = Matrix::row_vector(&[0.1, -0.2, 0.3]);
//! let y = net.forward_recorded(&x, &mut tape).unwrap();
//! // d(sum of outputs)/d(input)
//! let dx = net.backward(&mut tape, &Matrix::row_vector(&[1.0, 1.0])).unwrap();
//! assert_eq!(y.cols(), 2);
//! assert_eq!(dx.cols(), 3);
//! ```

mod adam;
mod checkpoint;
mod matrix;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use matrix::Matrix;

pub(crate) use matrix::axpy;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Silu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Silu => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Silu,
            _ => return None,
        })
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

/// One affine layer followed by an elementwise activation.
///
/// `weights` is `inputs x outputs`, so a batch `X` maps to `act(X W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    fn affine(&self, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows(), self.outputs());
        for r in 0..x.rows() {
            let out = z.row_mut(r);
            out.copy_from_slice(&self.bias);
            for (k, &xk) in x.row(r).iter().enumerate() {
                axpy(out, xk, self.weights.row(k));
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    input_dim: usize,
    layers: Vec<Layer>,
    seed: u64,
}

impl DenseNet {
    /// Builds a net with fan-in scaled uniform weights `U(-1/sqrt(n), 1/sqrt(n))`
    /// and zero biases.
    pub fn new(input_dim: usize, widths: &[(usize, Activation)], seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input_dim;
        for &(width, activation) in widths {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let data = (0..fan_in * width).map(|_| rng.random_range(-bound..=bound)).collect();
            layers.push(Layer {
                weights: Matrix::from_vec(fan_in, width, data).expect("sized above"),
                bias: vec![0.0; width],
                activation,
            });
            fan_in = width;
        }
        DenseNet { input_dim, layers, seed }
    }

    /// Assembles a net from explicit layers, checking that dimensions chain.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let mut expect = input_dim;
        for layer in &layers {
            if layer.inputs() != expect {
                return Err(Error::shape("layer inputs", expect, layer.inputs()));
            }
            if layer.bias.len() != layer.outputs() {
                return Err(Error::shape("bias length", layer.outputs(), layer.bias.len()));
            }
            expect = layer.outputs();
        }
        let net = DenseNet { input_dim, layers, seed };
        if !net.layers.iter().all(|l| {
            l.weights.as_slice().iter().chain(&l.bias).all(|v| v.is_finite())
        }) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::outputs)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer: weights (row-major), then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("parameter vector", self.param_count(), flat.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&flat[off..off + w.len()]);
            off += w.len();
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Zeroes the weights and bias of the last layer.
    pub fn zero_output_layer(&mut self) {
        if let Some(l) = self.layers.last_mut() {
            l.weights.as_mut_slice().fill(0.0);
            l.bias.fill(0.0);
        }
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim {
            return Err(Error::shape("network input", self.input_dim, input.cols()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            let mut z = layer.affine(&x);
            let act = layer.activation;
            if act != Activation::Linear {
                z.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            x = z;
        }
        Ok(x)
    }

    pub fn forward_vec(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Matrix::row_vector(input))?.into_vec())
    }

    /// Forward pass that also pushes the layer inputs and pre-activations
    /// onto `tape` for a later [`backward`](Self::backward).
    pub fn forward_recorded(&self, input: &Matrix, tape: &mut GradientTape) -> Result<Matrix> {
        self.check_input(input)?;
        tape.check_layout(self)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let z = layer.affine(&x);
            let mut a = z.clone();
            if layer.activation != Activation::Linear {
                a.as_mut_slice().iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            }
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        tape.records.push(Record { inputs, pre });
        Ok(x)
    }

    /// Pops the latest record from `tape`, accumulates parameter gradients
    /// into it and returns the gradient with respect to the recorded input.
    pub fn backward(&self, tape: &mut GradientTape, grad_output: &Matrix) -> Result<Matrix> {
        tape.check_layout(self)?;
        let record = tape
            .records
            .pop()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let batch = record.inputs.first().map_or(grad_output.rows(), Matrix::rows);
        if grad_output.cols() != self.output_dim() {
            return Err(Error::shape("output gradient width", self.output_dim(), grad_output.cols()));
        }
        if grad_output.rows() != batch {
            return Err(Error::shape("output gradient rows", batch, grad_output.rows()));
        }
        let mut grad = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &record.pre[i];
            let x = &record.inputs[i];
            if layer.activation != Activation::Linear {
                for (g, &zv) in grad.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *g *= layer.activation.derivative(zv);
                }
            }
            let (gw, gb) = &mut tape.grads[i];
            for r in 0..batch {
                let gz = grad.row(r);
                for (bv, g) in gb.iter_mut().zip(gz) {
                    *bv += g;
                }
                for (k, &xk) in x.row(r).iter().enumerate() {
                    axpy(gw.row_mut(k), xk, gz);
                }
            }
            // dX = dZ W^T, computed row-wise against the transposed weights.
            let wt = layer.weights.transpose();
            let mut gx = Matrix::zeros(batch, layer.inputs());
            for r in 0..batch {
                let dst = gx.row_mut(r);
                for (j, &gj) in grad.row(r).iter().enumerate() {
                    axpy(dst, gj, wt.row(j));
                }
            }
            grad = gx;
        }
        Ok(grad)
    }
}

#[derive(Debug, Clone)]
struct Record {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

/// Gradient buffers aligned with a [`DenseNet`], plus the stack of recorded
/// forward passes awaiting backprop.
#[derive(Debug, Clone)]
pub struct GradientTape {
    grads: Vec<(Matrix, Vec<f64>)>,
    records: Vec<Record>,
}

impl GradientTape {
    pub fn for_net(net: &DenseNet) -> Self {
        GradientTape {
            grads: net
                .layers
                .iter()
                .map(|l| (Matrix::zeros(l.inputs(), l.outputs()), vec![0.0; l.outputs()]))
                .collect(),
            records: Vec::new(),
        }
    }

    /// Clears gradients and any pending records.
    pub fn zero(&mut self) {
        for (w, b) in &mut self.grads {
            w.as_mut_slice().fill(0.0);
            b.fill(0.0);
        }
        self.records.clear();
    }

    pub fn pending_records(&self) -> usize {
        self.records.len()
    }

    /// Gradients flattened in the same order as [`DenseNet::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.grads {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.grads {
            w.as_mut_slice().iter_mut().chain(b.iter_mut()).for_each(|g| *g *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = &f64> {
        self.grads.iter().flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()))
    }

    fn check_layout(&self, net: &DenseNet) -> Result<()> {
        if self.grads.len() != net.layers.len() {
            return Err(Error::shape("tape layers", net.layers.len(), self.grads.len()));
        }
        for ((w, _), l) in self.grads.iter().zip(&net.layers) {
            if w.rows() != l.inputs() || w.cols() != l.outputs() {
                return Err(Error::shape("tape layer size", l.inputs() * l.outputs(), w.as_slice().len()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(n: usize) -> Layer {
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            w.row_mut(i)[i] = 1.0;
        }
        Layer { weights: w, bias: vec![0.0; n], activation: Activation::Linear }
    }

    #[test]
    fn identity_linear_layer_is_identity() {
        let net = DenseNet::from_layers(3, vec![identity_layer(3)], 0).unwrap();
        let x = [0.5, -1.25, 3.0];
        assert_eq!(net.forward_vec(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_depth_net_is_identity() {
        let net = DenseNet::new(4, &[], 1);
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(net.forward_vec(&x).unwrap(), x.to_vec());
        assert_eq!(net.output_dim(), 4);
    }

    #[test]
    fn relu_on_negative_input_is_zero() {
        let mut layer = identity_layer(3);
        layer.activation = Activation::Relu;
        let net = DenseNet::from_layers(3, vec![layer], 0).unwrap();
        assert_eq!(net.forward_vec(&[-1.0, -0.5, -3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn input_width_mismatch_is_shape_error() {
        let net = DenseNet::new(3, &[(2, Activation::Linear)], 0);
        assert!(matches!(net.forward_vec(&[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let net = DenseNet::new(3, &[(2, Activation::Linear)], 0);
        let mut tape = GradientTape::for_net(&net);
        let err = net.backward(&mut tape, &Matrix::row_vector(&[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn linear_net_weight_gradient_is_outer_product() {
        let net = DenseNet::new(3, &[(2, Activation::Linear)], 5);
        let mut tape = GradientTape::for_net(&net);
        let x = [0.3, -0.7, 1.1];
        let v = [2.0, -0.5];
        net.forward_recorded(&Matrix::row_vector(&x), &mut tape).unwrap();
        net.backward(&mut tape, &Matrix::row_vector(&v)).unwrap();
        let g = tape.flat();
        for k in 0..3 {
            for j in 0..2 {
                assert_eq!(g[k * 2 + j], x[k] * v[j]);
            }
        }
        assert_eq!(&g[6..], &v);
    }

    #[test]
    fn zero_output_gradient_leaves_tape_zero() {
        let net = DenseNet::new(3, &[(5, Activation::Silu), (2, Activation::Tanh)], 9);
        let mut tape = GradientTape::for_net(&net);
        net.forward_recorded(&Matrix::row_vector(&[1.0, 2.0, 3.0]), &mut tape).unwrap();
        net.backward(&mut tape, &Matrix::zeros(1, 2)).unwrap();
        assert!(tape.flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batched_forward_matches_row_by_row() {
        let net = DenseNet::new(4, &[(6, Activation::Silu), (3, Activation::Linear)], 11);
        let rows = [[0.1, 0.2, 0.3, 0.4], [-1.0, 0.5, 0.0, 2.0]];
        let batch = net.forward(&Matrix::from_rows(&rows)).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(batch.row(i), net.forward_vec(r).unwrap().as_slice());
        }
    }

    #[test]
    fn hand_computed_three_four_two_forward() {
        let w1 = Matrix::from_rows(&[
            [0.5, -0.25, 1.0, 0.0],
            [0.125, 0.75, -0.5, 2.0],
            [-1.0, 0.25, 0.375, -0.125],
        ]);
        let w2 = Matrix::from_rows(&[[1.0, -1.0], [0.5, 0.25], [-0.75, 2.0], [0.125, 0.5]]);
        let net = DenseNet::from_layers(
            3,
            vec![
                Layer { weights: w1, bias: vec![0.1, -0.2, 0.0, 0.3], activation: Activation::Tanh },
                Layer { weights: w2, bias: vec![0.05, -0.05], activation: Activation::Linear },
            ],
            0,
        )
        .unwrap();
        let x = [0.2, -0.4, 0.6];
        // hidden pre-activations worked out term by term
        let z = [
            0.1 + 0.2 * 0.5 + -0.4 * 0.125 + -0.6,
            -0.2 + 0.2 * -0.25 + -0.4 * 0.75 + 0.6 * 0.25,
            0.0 + 0.2 * 1.0 + -0.4 * -0.5 + 0.6 * 0.375,
            0.3 + 0.2 * 0.0 + -0.4 * 2.0 + 0.6 * -0.125,
        ];
        for (a, b) in z.iter().zip([-0.45f64, -0.4, 0.625, -0.575]) {
            assert!((a - b).abs() < 1e-15);
        }
        let h = z.map(f64::tanh);
        let y0 = 0.05 + h[0] * 1.0 + h[1] * 0.5 + h[2] * -0.75 + h[3] * 0.125;
        let y1 = -0.05 + -h[0] + h[1] * 0.25 + h[2] * 2.0 + h[3] * 0.5;
        let out = net.forward_vec(&x).unwrap();
        assert!((out[0] - y0).abs() < 1e-12 && (out[1] - y1).abs() < 1e-12, "{out:?}");
    }

    fn loss(net: &DenseNet, x: &Matrix, v: &Matrix) -> f64 {
        let y = net.forward(x).unwrap();
        y.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(20))]

        #[test]
        fn gradients_match_central_differences(seed in 0u64..1_000_000, act in 0usize..3) {
            let hidden = [Activation::Tanh, Activation::Silu, Activation::Linear][act];
            let net = DenseNet::new(3, &[(5, hidden), (4, Activation::Tanh), (2, Activation::Linear)], seed);
            let mut r = rng::seeded(seed ^ 0xfeed);
            let x = Matrix::from_vec(2, 3, (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
            let v = Matrix::from_vec(2, 2, (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
            let mut tape = GradientTape::for_net(&net);
            net.forward_recorded(&x, &mut tape).unwrap();
            let dx = net.backward(&mut tape, &v).unwrap();
            let analytic = tape.flat();
            let base = net.params();
            let h = 1e-5;
            for (i, &g) in analytic.iter().enumerate() {
                let mut probe = net.clone();
                let mut p = base.clone();
                p[i] += h;
                probe.set_params(&p).unwrap();
                let up = loss(&probe, &x, &v);
                p[i] -= 2.0 * h;
                probe.set_params(&p).unwrap();
                let fd = (up - loss(&probe, &x, &v)) / (2.0 * h);
                let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
                proptest::prop_assert!(rel < 1e-4, "param {}: fd {} analytic {}", i, fd, g);
            }
            for i in 0..6 {
                let mut xp = x.clone();
                xp.as_mut_slice()[i] += h;
                let up = loss(&net, &xp, &v);
                xp.as_mut_slice()[i] -= 2.0 * h;
                let fd = (up - loss(&net, &xp, &v)) / (2.0 * h);
                let g = dx.as_slice()[i];
                proptest::prop_assert!((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6) < 1e-4);
            }
        }

        #[test]
        fn forward_is_pure(seed in 0u64..1000, x in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let net = DenseNet::new(4, &[(6, Activation::Silu), (3, Activation::Relu)], seed);
            proptest::prop_assert_eq!(net.forward_vec(&x).unwrap(), net.forward_vec(&x).unwrap());
        }
    }
}
