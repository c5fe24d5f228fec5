//! Small dense networks with hand-written backpropagation.
//!
//! Every network stores its weights in one flat `Vec<f64>` so that optimizers,
//! Polyak averaging, hashing and serialization all operate on plain slices.
//! Layer `l` occupies `W_l` (row-major, `in x out`) followed by `b_l`.

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    #[default]
    Mish,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Mish => x * tanh_softplus(x),
        }
    }

    /// `(f(x), f'(x))`, sharing the transcendental work.
    fn apply_with_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Mish => {
                if x > 20.0 {
                    return (x, 1.0);
                }
                let n = x.exp();
                let w = n * (n + 2.0);
                let t = w / (w + 2.0);
                let sigmoid = n / (1.0 + n);
                (x * t, t + x * (1.0 - t * t) * sigmoid)
            }
        }
    }
}

/// `tanh(ln(1 + e^x))`, rewritten as `w / (w + 2)` with `w = e^x (e^x + 2)`.
fn tanh_softplus(x: f64) -> f64 {
    if x > 20.0 {
        return 1.0;
    }
    let n = x.exp();
    let w = n * (n + 2.0);
    w / (w + 2.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }
}

/// Multilayer perceptron with a linear output layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<LayerShape>,
    activation: Activation,
    params: Vec<f64>,
}

/// Activations retained by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    // inputs[l] is the input to layer l; slopes[l] the activation derivative
    // at hidden layer l.
    inputs: Vec<Array2<f64>>,
    slopes: Vec<Array2<f64>>,
}

impl Mlp {
    /// Builds a network `input -> hidden... -> output`, initialized like a
    /// PyTorch `Linear` (uniform in `±1/sqrt(fan_in)`).
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || output == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "mlp dimensions must be positive: {input} -> {hidden:?} -> {output}"
            )));
        }
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);

        let mut layers = Vec::with_capacity(sizes.len() - 1);
        let mut offset = 0;
        for pair in sizes.windows(2) {
            let shape = LayerShape {
                fan_in: pair[0],
                fan_out: pair[1],
                offset,
            };
            offset += shape.len();
            layers.push(shape);
        }

        let mut params = vec![0.0; offset];
        for layer in &layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for p in &mut params[layer.offset..layer.offset + layer.len()] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(Self {
            layers,
            activation,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Sets the output layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers[self.layers.len() - 1];
        self.params[last.offset..last.offset + last.len()].fill(0.0);
    }

    fn weight(&self, layer: &LayerShape) -> ArrayView2<'_, f64> {
        let w = &self.params[layer.offset..layer.offset + layer.weight_len()];
        ArrayView2::from_shape((layer.fan_in, layer.fan_out), w).expect("layer layout")
    }

    fn bias(&self, layer: &LayerShape) -> &[f64] {
        let start = layer.offset + layer.weight_len();
        &self.params[start..start + layer.fan_out]
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "mlp input",
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    fn affine(&self, layer: &LayerShape, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight(layer));
        let b = self.bias(layer);
        for mut row in z.rows_mut() {
            for (v, &bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
        z
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let act = self.activation;
        let mut h = self.affine(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            h.mapv_inplace(|v| act.apply(v));
            h = self.affine(layer, &h.view());
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut slopes = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = self.affine(layer, &h.view());
            inputs.push(h);
            if l + 1 < self.layers.len() {
                let act = self.activation;
                let mut slope = Array2::zeros(z.raw_dim());
                ndarray::Zip::from(&mut z).and(&mut slope).for_each(|v, d| {
                    let (f, df) = act.apply_with_derivative(*v);
                    *v = f;
                    *d = df;
                });
                slopes.push(slope);
            }
            h = z;
        }
        Ok((h, MlpCache { inputs, slopes }))
    }

    /// Backpropagates `grad_out` (d loss / d output), accumulating parameter
    /// gradients into `grad_params` and returning d loss / d input.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: ArrayView2<'_, f64>,
        grad_params: &mut [f64],
    ) -> Array2<f64> {
        assert_eq!(grad_params.len(), self.params.len(), "gradient buffer size");
        let mut grad = grad_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let input = &cache.inputs[l];
            {
                let (w_grad, rest) =
                    grad_params[layer.offset..layer.offset + layer.len()].split_at_mut(layer.weight_len());
                let mut w_grad =
                    ArrayViewMut2::from_shape((layer.fan_in, layer.fan_out), w_grad).expect("layer layout");
                general_mat_mul(1.0, &input.t(), &grad, 1.0, &mut w_grad);
                for (b, s) in rest.iter_mut().zip(grad.sum_axis(Axis(0)).iter()) {
                    *b += s;
                }
            }
            let mut grad_in = grad.dot(&self.weight(&layer).t());
            if l > 0 {
                grad_in *= &cache.slopes[l - 1];
            }
            grad = grad_in;
        }
        grad
    }
}

/// Sinusoidal embedding of a diffusion step index.
pub fn time_embedding(step: usize, dim: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), dim);
    let half = dim / 2;
    let t = step as f64;
    let scale = if half > 1 {
        (10_000f64).ln() / (half as f64 - 1.0)
    } else {
        0.0
    };
    for j in 0..half {
        let freq = (-(j as f64) * scale).exp();
        out[j] = (t * freq).sin();
        out[half + j] = (t * freq).cos();
    }
    if dim % 2 == 1 {
        out[dim - 1] = 0.0;
    }
}

/// Adam optimizer over a flat parameter slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. A zero learning rate leaves `params` bit-identical.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        if self.lr == 0.0 {
            return;
        }
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn polyak(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len());
    if tau == 1.0 {
        target.copy_from_slice(online);
        return;
    }
    for (t, &o) in target.iter_mut().zip(online) {
        // increment form leaves the target bit-identical when it equals the online value
        *t += tau * (o - *t);
    }
}
