//! Fully connected feed-forward network with batched forward and backward
//! passes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::HedgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation. ReLU'(0) = 0.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
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
        }
    }
}

/// Affine map `y = W x + b` with `W` stored as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// `A_l ∘ φ ∘ A_{l-1} ∘ ... ∘ φ ∘ A_0` with scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRecord", into = "MlpRecord")]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    /// Input of every affine map (the network input first).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    preacts: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Smallest `|z|` over all hidden pre-activations; the distance to the
    /// nearest ReLU kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.preacts
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Sign of every hidden pre-activation, in layer then row-major order.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.preacts.iter().flat_map(|z| z.iter().map(|v| *v > 0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    /// Slices in the same order as [`Mlp::parameter_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("gradient arrays are contiguous"));
            out.push(b.as_slice().expect("gradient arrays are contiguous"));
        }
        out
    }
}

impl Mlp {
    /// Layer sizes `[d_in, h_1, ..., h_l, 1]`, uniform He-style fan-in
    /// initialisation for weights and zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self, HedgeError> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self, HedgeError> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self, HedgeError> {
        if layers.is_empty() {
            return Err(HedgeError::InvalidConfig("network needs at least one affine map".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(HedgeError::InvalidConfig(format!(
                    "layer dimensions do not chain: {} outputs feed {} inputs",
                    w[0].outputs(),
                    w[1].inputs()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(HedgeError::InvalidConfig("bias length differs from layer width".into()));
            }
        }
        if layers.last().map(Dense::outputs) != Some(1) {
            return Err(HedgeError::InvalidConfig("network output must be scalar".into()));
        }
        Ok(Self { layers, activation })
    }

    fn check_sizes(sizes: &[usize]) -> Result<(), HedgeError> {
        if sizes.len() < 2 {
            return Err(HedgeError::InvalidConfig("need at least input and output sizes".into()));
        }
        if sizes.iter().any(|s| *s == 0) {
            return Err(HedgeError::InvalidConfig(format!("layer sizes must be positive: {sizes:?}")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(HedgeError::InvalidConfig("network output must be scalar".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    /// Number of hidden activations, `l` in `A_l ∘ ... ∘ A_0`.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Weight then bias of every layer, in layer order.
    pub fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("parameter arrays are contiguous"));
            out.push(l.bias.as_slice_mut().expect("parameter arrays are contiguous"));
        }
        out
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64, HedgeError> {
        if input.len() != self.input_dim() {
            return Err(HedgeError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut a = ArrayView1::from(input).to_owned();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.dot(&a) + &l.bias;
            if k < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            a = z;
        }
        Ok(a[0])
    }

    /// Evaluates every row of `inputs` (`rows × d_in`).
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<(Array1<f64>, ForwardCache), HedgeError> {
        if inputs.ncols() != self.input_dim() {
            return Err(HedgeError::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(last),
        };
        let mut a = inputs.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weight.t());
            z += &l.bias;
            cache.inputs.push(a);
            if k < last {
                let act = self.activation;
                let out = z.mapv(|v| act.apply(v));
                cache.preacts.push(z);
                a = out;
            } else {
                a = z;
            }
        }
        let out = a.index_axis_move(Axis(1), 0);
        Ok((out, cache))
    }

    /// Forward pass without a cache, processed in fixed row blocks to bound
    /// memory on large evaluation sets.
    pub fn predict_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>, HedgeError> {
        const BLOCK: usize = 4096;
        if inputs.ncols() != self.input_dim() {
            return Err(HedgeError::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut out = Vec::with_capacity(inputs.nrows());
        for block in inputs.axis_chunks_iter(Axis(0), BLOCK) {
            let mut a = block.to_owned();
            for (k, l) in self.layers.iter().enumerate() {
                let mut z = a.dot(&l.weight.t());
                z += &l.bias;
                if k < last {
                    z.mapv_inplace(|v| self.activation.apply(v));
                }
                a = z;
            }
            out.extend(a.column(0).iter().copied());
        }
        Ok(Array1::from(out))
    }

    /// Gradient of `Σ_r upstream[r] · net(inputs[r])` with respect to all
    /// weights and biases.
    pub fn backward_batch(&self, cache: &ForwardCache, upstream: ArrayView1<'_, f64>) -> MlpGradient {
        let mut grad = MlpGradient::zeros_like(self);
        let mut delta = upstream.to_owned().insert_axis(Axis(1));
        for k in (0..self.layers.len()).rev() {
            grad.weights[k] = delta.t().dot(&cache.inputs[k]);
            grad.biases[k] = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].weight);
                let act = self.activation;
                back.zip_mut_with(&cache.preacts[k - 1], |d, z| *d *= act.derivative(*z));
                delta = back;
            }
        }
        grad
    }
}

/// Flat serialisation form: row-major weights per layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpRecord {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<Mlp> for MlpRecord {
    fn from(net: Mlp) -> Self {
        Self {
            sizes: net.sizes(),
            activation: net.activation,
            weights: net.layers.iter().map(|l| l.weight.iter().copied().collect()).collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = HedgeError;

    fn try_from(r: MlpRecord) -> Result<Self, Self::Error> {
        Mlp::check_sizes(&r.sizes)?;
        let maps = r.sizes.len() - 1;
        if r.weights.len() != maps || r.biases.len() != maps {
            return Err(HedgeError::InvalidConfig("record layer count does not match sizes".into()));
        }
        let mut layers = Vec::with_capacity(maps);
        for (k, (w, b)) in r.weights.into_iter().zip(r.biases).enumerate() {
            let shape = (r.sizes[k + 1], r.sizes[k]);
            let weight = Array2::from_shape_vec(shape, w)
                .map_err(|e| HedgeError::InvalidConfig(format!("layer {k} weights: {e}")))?;
            layers.push(Dense {
                weight,
                bias: Array1::from(b),
            });
        }
        Mlp::from_layers(layers, r.activation)
    }
}
