use std::hash::Hasher;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Matrix};
use super::Parameters;
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative given the pre-activation `z` and output `y`. ReLU uses 0 at the kink.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `y = act(x W^T + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Values saved by [`AffineLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Matrix,
    pre: Matrix,
    output: Matrix,
    activation: Activation,
}

impl LayerCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    fn hash_relu_pattern(&self, h: &mut impl Hasher) {
        if self.activation == Activation::Relu {
            for chunk in self.pre.data().chunks(64) {
                let mut bits = 0u64;
                for (k, &z) in chunk.iter().enumerate() {
                    if z > 0.0 {
                        bits |= 1 << k;
                    }
                }
                h.write_u64(bits);
            }
        }
    }
}

impl AffineLayer {
    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weights: Matrix::from_vec(out_dim, in_dim, data).expect("sized above"),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(shape_err("AffineLayer bias", weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: Matrix::zeros(self.out_dim(), self.in_dim()),
            bias: vec![0.0; self.out_dim()],
            activation: self.activation,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerCache)> {
        if x.cols() != self.in_dim() {
            return Err(shape_err("AffineLayer::forward input", self.in_dim(), x.cols()));
        }
        let mut pre = x.matmul_t(&self.weights)?;
        for r in 0..pre.rows() {
            pre.row_mut(r)
                .iter_mut()
                .zip(&self.bias)
                .for_each(|(z, b)| *z += b);
        }
        let mut output = pre.clone();
        if self.activation != Activation::Identity {
            let act = self.activation;
            output.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        let cache = LayerCache {
            input: x.clone(),
            pre,
            output: output.clone(),
            activation: self.activation,
        };
        Ok((output, cache))
    }

    /// Returns `dL/dx` and the parameter gradients packed as a layer.
    pub fn backward(&self, cache: &LayerCache, d_out: &Matrix) -> Result<(Matrix, AffineLayer)> {
        if d_out.shape() != cache.output.shape() {
            return Err(shape_err(
                "AffineLayer::backward dL/dy",
                format!("{:?}", cache.output.shape()),
                format!("{:?}", d_out.shape()),
            ));
        }
        let mut d_pre = d_out.clone();
        if self.activation != Activation::Identity {
            for ((g, &z), &y) in d_pre
                .data_mut()
                .iter_mut()
                .zip(cache.pre.data())
                .zip(cache.output.data())
            {
                *g *= self.activation.derivative(z, y);
            }
        }
        let mut grads = self.zeros_like();
        let mut d_in = Matrix::zeros(d_pre.rows(), self.in_dim());
        for i in 0..d_pre.rows() {
            let x = cache.input.row(i);
            for (o, &g) in d_pre.row(i).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                axpy(g, x, grads.weights.row_mut(o));
                grads.bias[o] += g;
                axpy(g, self.weights.row(o), d_in.row_mut(i));
            }
        }
        Ok((d_in, grads))
    }

    /// Single-row convenience forward without a cache.
    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim())
            .map(|o| self.activation.apply(dot(self.weights.row(o), x) + self.bias[o]))
            .collect()
    }
}

impl Parameters for AffineLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weights.data(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.data_mut(), &mut self.bias]
    }
}

/// Stack of affine layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<AffineLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<LayerCache>,
}

impl MlpCache {
    /// Hashes the on/off pattern of every ReLU unit. Two evaluations with the
    /// same hash took the same linear piece of the network.
    pub fn hash_relu_pattern(&self, h: &mut impl Hasher) {
        for l in &self.layers {
            l.hash_relu_pattern(h);
        }
    }
}

impl Mlp {
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape_err("Mlp::new", "at least one layer", 0));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(shape_err("Mlp::new chaining", pair[0].out_dim(), pair[1].in_dim()));
            }
        }
        Ok(Self { layers })
    }

    /// `dims` has one more entry than `activations`.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() != activations.len() + 1 {
            return Err(shape_err("Mlp::glorot", activations.len() + 1, dims.len()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &a)| AffineLayer::glorot(d[0], d[1], a, rng))
            .collect();
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(AffineLayer::zeros_like).collect(),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&cur)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, MlpCache { layers: caches }))
    }

    pub fn backward(&self, cache: &MlpCache, d_out: &Matrix) -> Result<(Matrix, Mlp)> {
        if cache.layers.len() != self.layers.len() {
            return Err(shape_err("Mlp::backward cache", self.layers.len(), cache.layers.len()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let (d_in, g) = layer.backward(c, &d)?;
            grads.push(g);
            d = d_in;
        }
        grads.reverse();
        Ok((d, Mlp { layers: grads }))
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in &self.layers {
            cur = l.apply_row(&cur);
        }
        cur
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Product rule for `out = a ⊙ b`.
pub fn elementwise_product_backward(
    a: &[f64],
    b: &[f64],
    d_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() || a.len() != d_out.len() {
        return Err(shape_err(
            "elementwise_product_backward",
            a.len(),
            format!("{} / {}", b.len(), d_out.len()),
        ));
    }
    let da = d_out.iter().zip(b).map(|(g, y)| g * y).collect();
    let db = d_out.iter().zip(a).map(|(g, x)| g * x).collect();
    Ok((da, db))
}
