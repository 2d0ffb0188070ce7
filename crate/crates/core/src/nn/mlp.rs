//! Fully connected networks with a cached forward pass and manual backprop.
//!
//! Each layer computes `y = act(x W + b)` with `W` stored `(in, out)` row-major,
//! so a minibatch of row vectors maps to a minibatch of row vectors with a
//! single matrix product.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed in terms of the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Weights and bias of one dense layer. Also used as the gradient and
/// optimizer-moment container, which therefore always mirrors the net.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Tensor2::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }
}

/// Parameter-shaped storage: one [`Dense`] per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<Dense>,
}

impl Parameters {
    pub fn zeros_like(other: &Parameters) -> Self {
        Self {
            layers: other
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter slices in declaration order: layer 0 weights, layer 0 bias, ...
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }

    pub fn same_shape(&self, other: &Parameters) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.shape() == b.weights.shape() && a.bias.len() == b.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.slices().flatten().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    /// `outputs[0]` is the input batch, `outputs[i + 1]` the output of layer `i`.
    outputs: Vec<Tensor2>,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub params: Parameters,
    /// Loss gradient with respect to the network input.
    pub input: Tensor2,
}

#[derive(Debug, Clone)]
pub struct MlpNet {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Parameters,
    cache: Option<ForwardCache>,
}

impl MlpNet {
    /// Glorot-uniform weights, zero biases. `hidden` applies to every layer
    /// but the last, which uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        for layer in &mut net.params.layers {
            let (fan_in, fan_out) = layer.weights.shape();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            for w in layer.weights.data_mut() {
                *w = dist.sample(rng);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must have at least two nonzero entries, got {sizes:?}"
            )));
        }
        let n = sizes.len() - 1;
        let mut activations = vec![hidden; n];
        activations[n - 1] = output;
        Self::from_parts(
            sizes.to_vec(),
            activations,
            Parameters {
                layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            },
        )
    }

    pub fn from_parts(
        sizes: Vec<usize>,
        activations: Vec<Activation>,
        params: Parameters,
    ) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Shape(format!(
                "{} layer sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        if params.layers.len() != activations.len() {
            return Err(Error::Shape("parameter layer count".into()));
        }
        for (i, l) in params.layers.iter().enumerate() {
            if l.weights.shape() != (sizes[i], sizes[i + 1]) || l.bias.len() != sizes[i + 1] {
                return Err(Error::Shape(format!("layer {i} parameters do not match sizes")));
            }
        }
        Ok(Self {
            sizes,
            activations,
            params,
            cache: None,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn run(&self, x: &Tensor2, keep: bool) -> Result<(Tensor2, Option<ForwardCache>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "MlpNet::forward",
                expected: self.input_dim(),
                actual: x.cols(),
            });
        }
        let mut outputs = Vec::with_capacity(if keep { self.sizes.len() } else { 0 });
        let mut current = x.clone();
        for (layer, &act) in self.params.layers.iter().zip(&self.activations) {
            let mut z = Tensor2::zeros(current.rows(), layer.weights.cols());
            for r in 0..z.rows() {
                z.row_mut(r).copy_from_slice(&layer.bias);
            }
            gemm(1.0, &current, false, &layer.weights, false, 1.0, &mut z);
            z.map_inplace(|v| act.apply(v));
            if keep {
                outputs.push(std::mem::replace(&mut current, z));
            } else {
                current = z;
            }
        }
        if !current.is_finite() {
            return Err(Error::NonFinite("MlpNet::forward output".into()));
        }
        let cache = keep.then(|| {
            outputs.push(current.clone());
            ForwardCache { outputs }
        });
        Ok((current, cache))
    }

    /// Forward pass that caches activations for a following [`MlpNet::backward`].
    pub fn forward(&mut self, x: &Tensor2) -> Result<Tensor2> {
        let (y, cache) = self.run(x, true)?;
        self.cache = cache;
        Ok(y)
    }

    /// Forward pass without touching the cache.
    pub fn predict(&self, x: &Tensor2) -> Result<Tensor2> {
        self.run(x, false).map(|(y, _)| y)
    }

    /// Backpropagates `grad_output` (dL/dy for the cached batch). The cache is
    /// kept, so several output gradients can be pushed through one forward.
    pub fn backward(&self, grad_output: &Tensor2) -> Result<Backprop> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache)?;
        let batch = cache.outputs[0].rows();
        if grad_output.shape() != (batch, self.output_dim()) {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match cached output ({batch}, {})",
                grad_output.shape(),
                self.output_dim()
            )));
        }

        let mut grads = Parameters::zeros_like(&self.params);
        let mut delta = grad_output.clone();
        for i in (0..self.params.layers.len()).rev() {
            let y = &cache.outputs[i + 1];
            let act = self.activations[i];
            if act != Activation::Identity {
                for (d, &yv) in delta.data_mut().iter_mut().zip(y.data()) {
                    *d *= act.derivative_from_output(yv);
                }
            }
            let x = &cache.outputs[i];
            let g = &mut grads.layers[i];
            gemm(1.0, x, true, &delta, false, 0.0, &mut g.weights);
            for r in 0..delta.rows() {
                for (b, d) in g.bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            let w = &self.params.layers[i].weights;
            let mut prev = Tensor2::zeros(delta.rows(), w.rows());
            gemm(1.0, &delta, false, w, true, 0.0, &mut prev);
            delta = prev;
        }
        Ok(Backprop {
            params: grads,
            input: delta,
        })
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// `self <- tau * source + (1 - tau) * self`, elementwise.
    pub fn soft_update(&mut self, source: &MlpNet, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
        }
        if self.sizes != source.sizes || !self.params.same_shape(&source.params) {
            return Err(Error::Shape("soft_update between differently shaped nets".into()));
        }
        for (t, s) in self.params.slices_mut().zip(source.params.slices()) {
            for (tv, sv) in t.iter_mut().zip(s) {
                *tv = tau * sv + (1.0 - tau) * *tv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = MlpNet::zeros(&[2, 2], Activation::Identity, Activation::Identity).unwrap();
        net.params_mut().layers[0].weights = Tensor2::new(2, 2, vec![1., 0., 0., 1.]).unwrap();
        let y = net.forward(&Tensor2::row_vector(&[1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = MlpNet::zeros(&[3, 5, 2], Activation::Tanh, Activation::Identity).unwrap();
        let y = net.predict(&Tensor2::row_vector(&[0.3, -7.0, 2.0])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tanh_2_3_1_matches_hand_unrolled_pass() {
        let mut rng = substream(11, "test", 0);
        let net = MlpNet::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = [0.5, -0.5];

        let l0 = &net.params().layers[0];
        let l1 = &net.params().layers[1];
        let mut expected = l1.bias[0];
        for j in 0..3 {
            let z = l0.bias[j] + x[0] * l0.weights.get(0, j) + x[1] * l0.weights.get(1, j);
            expected += z.tanh() * l1.weights.get(j, 0);
        }
        let y = net.predict(&Tensor2::row_vector(&x)).unwrap();
        assert!((y.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut net = MlpNet::zeros(&[3, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert!(matches!(
            net.forward(&Tensor2::zeros(1, 4)),
            Err(Error::Dimension { expected: 3, actual: 4, .. })
        ));
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let net = MlpNet::zeros(&[2, 1], Activation::Tanh, Activation::Identity).unwrap();
        assert!(matches!(
            net.backward(&Tensor2::zeros(1, 1)),
            Err(Error::NoForwardCache)
        ));
    }

    #[test]
    fn scalar_linear_gradient_is_input() {
        let mut net = MlpNet::zeros(&[1, 1], Activation::Identity, Activation::Identity).unwrap();
        net.params_mut().layers[0].weights.set(0, 0, 3.0);
        net.forward(&Tensor2::row_vector(&[1.7])).unwrap();
        let bp = net.backward(&Tensor2::row_vector(&[1.0])).unwrap();
        assert_eq!(bp.params.layers[0].weights.get(0, 0), 1.7);
        assert_eq!(bp.params.layers[0].bias[0], 1.0);
        assert_eq!(bp.input.get(0, 0), 3.0);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = substream(3, "test", 0);
        let mut net = MlpNet::new(&[4, 8, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        net.forward(&Tensor2::filled(5, 4, 0.3)).unwrap();
        let bp = net.backward(&Tensor2::zeros(5, 2)).unwrap();
        assert!(bp.params.is_zero());
        assert!(bp.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn soft_update_limits() {
        let mut rng = substream(5, "test", 0);
        let src = MlpNet::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let orig = MlpNet::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();

        let mut t = orig.clone();
        t.soft_update(&src, 0.0).unwrap();
        assert_eq!(t.params(), orig.params());

        t.soft_update(&src, 1.0).unwrap();
        assert_eq!(t.params(), src.params());

        let mut scalar = MlpNet::zeros(&[1, 1], Activation::Identity, Activation::Identity).unwrap();
        let mut one = scalar.clone();
        one.params_mut().layers[0].weights.set(0, 0, 1.0);
        scalar.soft_update(&one, 0.005).unwrap();
        assert_eq!(scalar.params().layers[0].weights.get(0, 0), 0.005);
    }

    #[test]
    fn soft_update_rejects_mismatch() {
        let a = MlpNet::zeros(&[3, 2], Activation::Tanh, Activation::Identity).unwrap();
        let mut b = MlpNet::zeros(&[3, 3], Activation::Tanh, Activation::Identity).unwrap();
        assert!(b.soft_update(&a, 0.5).is_err());
        let mut c = a.clone();
        assert!(c.soft_update(&a, 1.5).is_err());
    }
}
