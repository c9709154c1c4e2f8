use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    /// Returns `(s, s', s'', s''')` at pre-activation `z`.
    #[inline]
    pub fn derivatives(self, z: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = 1.0 - t * t;
                let d2 = -2.0 * t * d1;
                let d3 = d1 * (6.0 * t * t - 2.0);
                (t, d1, d2, d3)
            }
            Activation::Identity => (z, 1.0, 0.0, 0.0),
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }
}

/// Fully connected feed-forward network.
///
/// Inputs are mapped through a fixed affine normalisation `(x - shift) / scale`
/// before the first layer; derivatives reported by the jet machinery are always
/// taken with respect to the raw (unnormalised) input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    /// Row-major `[out][in]` weight matrices, one per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid(format!(
            "layer_sizes needs at least an input and an output entry, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Builds a network with fan-in scaled uniform weights and zero biases.
///
/// Weights of a layer with fan-in `n` are drawn from `U(-sqrt(3/n), sqrt(3/n))`
/// using a ChaCha stream seeded by `seed`, so the result is bit-identical per seed.
pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<Mlp> {
    check_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for w in layer_sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let limit = (3.0 / n_in as f64).sqrt();
        let mat: Vec<f64> = (0..n_in * n_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        weights.push(mat);
        biases.push(vec![0.0; n_out]);
    }
    let d = layer_sizes[0];
    Ok(Mlp {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        activation: Activation::Tanh,
        input_shift: vec![0.0; d],
        input_scale: vec![1.0; d],
    })
}

impl Mlp {
    /// Assembles a network from explicit parameters.
    pub fn from_parts(
        layer_sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let n_layers = layer_sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::invalid("weight/bias count does not match layer_sizes"));
        }
        for (l, w) in layer_sizes.windows(2).enumerate() {
            if weights[l].len() != w[0] * w[1] || biases[l].len() != w[1] {
                return Err(Error::invalid(format!("layer {l} has inconsistent shape")));
            }
        }
        let d = layer_sizes[0];
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
            input_shift: vec![0.0; d],
            input_scale: vec![1.0; d],
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Sets the fixed input normalisation `(x - shift) / scale`.
    pub fn with_input_normalization(mut self, shift: &[f64], scale: &[f64]) -> Result<Self> {
        let d = self.input_dim();
        if shift.len() != d || scale.len() != d {
            return Err(Error::invalid("normalisation length differs from input dim"));
        }
        if scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::invalid("normalisation scales must be positive"));
        }
        self.input_shift = shift.to_vec();
        self.input_scale = scale.to_vec();
        Ok(self)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn input_shift(&self) -> &[f64] {
        &self.input_shift
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    /// Number of trainable scalars (all weights and biases).
    pub fn n_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Flattens parameters layer by layer: weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`Mlp::params`].
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Euclidean norm of the flattened parameters.
    pub fn param_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Evaluates the network at a single input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut a: Vec<f64> = x
            .iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((xi, s), c)| (xi - s) / c)
            .collect();
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let n_in = self.layer_sizes[l];
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *zj += row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            if l != last {
                for zj in z.iter_mut() {
                    *zj = self.activation.apply(*zj);
                }
            }
            a = z;
        }
        Ok(a)
    }
}
