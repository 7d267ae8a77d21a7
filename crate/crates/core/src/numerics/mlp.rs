//! Dense feed-forward networks with hand-written backpropagation.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, Scalar, Vector};
use crate::error::{ensure_dim, Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Relu => z.max(S::zero()),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Relu if z > S::zero() => S::one(),
            Activation::Relu => S::zero(),
            Activation::Identity => S::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DenseLayer<S: Scalar> {
    /// `out × in`
    pub weights: Matrix<S>,
    pub bias: Vector<S>,
    pub activation: Activation,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(weights: Matrix<S>, bias: Vector<S>, activation: Activation) -> Result<Self> {
        ensure_dim("layer bias", weights.rows(), bias.dim())?;
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Multilayer perceptron parameters.
///
/// Layer `i` maps `layers[i].input_dim()` to `layers[i].output_dim()`; the
/// last layer is always linear. Each mutation assigns a new version, which
/// forward caches record so a stale cache cannot be fed to `backward`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr<S>", into = "MlpRepr<S>")]
#[serde(bound = "S: Scalar")]
pub struct Mlp<S: Scalar> {
    layers: Vec<DenseLayer<S>>,
    version: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct MlpRepr<S: Scalar> {
    layers: Vec<DenseLayer<S>>,
}

impl<S: Scalar> TryFrom<MlpRepr<S>> for Mlp<S> {
    type Error = Error;

    fn try_from(repr: MlpRepr<S>) -> Result<Self> {
        Mlp::new(repr.layers)
    }
}

impl<S: Scalar> From<Mlp<S>> for MlpRepr<S> {
    fn from(m: Mlp<S>) -> Self {
        MlpRepr { layers: m.layers }
    }
}

impl<S: Scalar> PartialEq for Mlp<S> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl<S: Scalar> Mlp<S> {
    pub fn new(layers: Vec<DenseLayer<S>>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::contract("an MLP needs at least one layer"))?;
        if last.activation != Activation::Identity {
            return Err(Error::contract("the last MLP layer must be linear"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::contract(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for l in &layers {
            ensure_dim("layer bias", l.output_dim(), l.bias.dim())?;
        }
        Ok(Mlp {
            layers,
            version: fresh_version(),
        })
    }

    /// ReLU hidden layers, linear output; weights uniform in
    /// `±sqrt(6 / fan_in)`, biases zero.
    pub fn he_uniform<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::contract(
                "need at least input and output widths, all positive",
            ));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weights = Matrix::from_fn(fan_out, fan_in, |_, _| {
                    S::lit(rng.random_range(-bound..bound))
                });
                let activation = if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::new(weights, Vector::zeros(fan_out), activation)
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::new(layers)
    }

    /// Square network whose every layer has identity weights and zero bias.
    pub fn identity(dim: usize, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::contract("depth must be positive"));
        }
        let layers = (0..depth)
            .map(|i| {
                let act = if i + 1 == depth {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::new(Matrix::identity(dim), Vector::zeros(dim), act)
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.dim())
            .sum()
    }

    /// Parameter by flat index: layer by layer, weights row-major then bias.
    pub fn param(&self, index: usize) -> S {
        let (l, off) = self.locate(index);
        let layer = &self.layers[l];
        let nw = layer.weights.as_slice().len();
        if off < nw {
            layer.weights.as_slice()[off]
        } else {
            layer.bias[off - nw]
        }
    }

    pub fn set_param(&mut self, index: usize, value: S) {
        let (l, off) = self.locate(index);
        let layer = &mut self.layers[l];
        let nw = layer.weights.as_slice().len();
        if off < nw {
            layer.weights.as_mut_slice()[off] = value;
        } else {
            layer.bias.as_mut_slice()[off - nw] = value;
        }
        self.version = fresh_version();
    }

    /// All parameters in flat-index order as little-endian `f64` bytes.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * self.param_count());
        for l in &self.layers {
            for v in l.weights.as_slice().iter().chain(l.bias.iter()) {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (i, l) in self.layers.iter().enumerate() {
            let n = l.weights.as_slice().len() + l.bias.dim();
            if index < n {
                return (i, index);
            }
            index -= n;
        }
        panic!("parameter index out of range");
    }

    pub fn forward(&self, x: &Vector<S>) -> Result<(Vector<S>, ForwardCache<S>)> {
        ensure_dim("mlp input", self.input_dim(), x.dim())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = layer.weights.matvec(&a)?;
            for (zi, &bi) in z.as_mut_slice().iter_mut().zip(layer.bias.iter()) {
                *zi += bi;
            }
            let out = Vector::from_raw(z.iter().map(|&v| layer.activation.apply(v)).collect());
            inputs.push(a);
            pre.push(z);
            a = out;
        }
        let cache = ForwardCache {
            version: self.version,
            inputs,
            pre_activations: pre,
        };
        Ok((a, cache))
    }

    pub fn predict(&self, x: &Vector<S>) -> Result<Vector<S>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Gradients of `⟨output, upstream⟩` with respect to every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache<S>, upstream: &Vector<S>) -> Result<MlpGradients<S>> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::contract(
                "forward cache does not belong to these parameters (stale cache)",
            ));
        }
        ensure_dim("mlp upstream gradient", self.output_dim(), upstream.dim())?;
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut delta_out = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[i];
            let delta = Vector::from_raw(
                delta_out
                    .iter()
                    .zip(z.iter())
                    .map(|(&g, &zi)| g * layer.activation.derivative(zi))
                    .collect(),
            );
            let mut gw = Matrix::zeros(layer.output_dim(), layer.input_dim());
            gw.add_outer(S::one(), &delta, &cache.inputs[i])?;
            delta_out = layer.weights.matvec_transposed(&delta)?;
            layer_grads.push(LayerGradient {
                weights: gw,
                bias: delta,
            });
        }
        layer_grads.reverse();
        Ok(MlpGradients {
            layers: layer_grads,
            input: delta_out,
        })
    }

    /// `param ← param − lr · grad`. Non-finite gradients abort the step
    /// without touching any parameter.
    pub fn sgd_step(&mut self, grads: &MlpGradients<S>, lr: S) -> Result<()> {
        if !(lr >= S::zero()) || !lr.is_finite() {
            return Err(Error::contract(format!(
                "learning rate must be finite and non-negative, got {lr}"
            )));
        }
        self.check_shape(grads)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient; SGD step aborted".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, &gw) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(g.weights.as_slice())
            {
                *w -= lr * gw;
            }
            for (b, &gb) in layer.bias.as_mut_slice().iter_mut().zip(g.bias.iter()) {
                *b -= lr * gb;
            }
        }
        self.version = fresh_version();
        Ok(())
    }

    fn check_shape(&self, grads: &MlpGradients<S>) -> Result<()> {
        ensure_dim("gradient layer count", self.layers.len(), grads.layers.len())?;
        for (l, g) in self.layers.iter().zip(&grads.layers) {
            ensure_dim("gradient rows", l.weights.rows(), g.weights.rows())?;
            ensure_dim("gradient cols", l.weights.cols(), g.weights.cols())?;
        }
        Ok(())
    }
}

/// Layer inputs and pre-activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<S: Scalar> {
    version: u64,
    inputs: Vec<Vector<S>>,
    pre_activations: Vec<Vector<S>>,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn pre_activations(&self) -> &[Vector<S>] {
        &self.pre_activations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient<S: Scalar> {
    pub weights: Matrix<S>,
    pub bias: Vector<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients<S: Scalar> {
    pub layers: Vec<LayerGradient<S>>,
    /// Gradient with respect to the network input.
    pub input: Vector<S>,
}

impl<S: Scalar> MlpGradients<S> {
    pub fn zeros_like(mlp: &Mlp<S>) -> Self {
        MlpGradients {
            layers: mlp
                .layers()
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: Vector::zeros(l.output_dim()),
                })
                .collect(),
            input: Vector::zeros(mlp.input_dim()),
        }
    }

    /// `self += alpha · other`
    pub fn accumulate(&mut self, alpha: S, other: &Self) -> Result<()> {
        ensure_dim("gradient accumulate", self.layers.len(), other.layers.len())?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            ensure_dim(
                "gradient accumulate",
                a.weights.as_slice().len(),
                b.weights.as_slice().len(),
            )?;
            for (x, &y) in a
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(b.weights.as_slice())
            {
                *x += alpha * y;
            }
            a.bias.axpy(alpha, &b.bias)?;
        }
        self.input.axpy(alpha, &other.input)
    }

    pub fn scale(&mut self, factor: S) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
            l.bias.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
        self.input.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.is_finite())
    }

    /// True when every parameter gradient is exactly zero (the input gradient is ignored).
    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.as_slice().iter().all(|v| *v == S::zero())
                && l.bias.iter().all(|v| *v == S::zero())
        })
    }

    /// Parameter gradient by the same flat index as [`Mlp::param`].
    pub fn param(&self, mut index: usize) -> S {
        for l in &self.layers {
            let nw = l.weights.as_slice().len();
            if index < nw {
                return l.weights.as_slice()[index];
            }
            index -= nw;
            if index < l.bias.dim() {
                return l.bias[index];
            }
            index -= l.bias.dim();
        }
        panic!("gradient index out of range");
    }
}

/// SGD with optional heavy-ball momentum. With momentum 0 every step is
/// exactly [`Mlp::sgd_step`].
#[derive(Debug, Clone)]
pub struct MomentumSgd<S: Scalar> {
    momentum: S,
    velocity: Option<MlpGradients<S>>,
}

impl<S: Scalar> MomentumSgd<S> {
    pub fn new(momentum: S) -> Result<Self> {
        if !(momentum >= S::zero() && momentum < S::one()) {
            return Err(Error::contract("momentum must lie in [0, 1)"));
        }
        Ok(MomentumSgd {
            momentum,
            velocity: None,
        })
    }

    pub fn step(&mut self, mlp: &mut Mlp<S>, grads: &MlpGradients<S>, lr: S) -> Result<()> {
        if self.momentum == S::zero() {
            return mlp.sgd_step(grads, lr);
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient; SGD step aborted".into()));
        }
        let velocity = match self.velocity.take() {
            Some(mut v) => {
                v.scale(self.momentum);
                v.accumulate(S::one(), grads)?;
                v
            }
            None => grads.clone(),
        };
        mlp.sgd_step(&velocity, lr)?;
        self.velocity = Some(velocity);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector<f64> {
        Vector::new(x.to_vec()).unwrap()
    }

    fn single(weights: Matrix<f64>, act: Activation) -> DenseLayer<f64> {
        let out = weights.rows();
        DenseLayer::new(weights, Vector::zeros(out), act).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::new(vec![
            single(Matrix::zeros(3, 2), Activation::Relu),
            single(Matrix::zeros(2, 3), Activation::Identity),
        ])
        .unwrap();
        assert_eq!(mlp.predict(&v(&[4.0, -7.0])).unwrap(), Vector::zeros(2));
    }

    #[test]
    fn relu_clips_negative_entries() {
        // relu then an identity layer is the only way to observe the relu at the output
        let mlp = Mlp::new(vec![
            single(Matrix::identity(2), Activation::Relu),
            single(Matrix::identity(2), Activation::Identity),
        ])
        .unwrap();
        assert_eq!(mlp.predict(&v(&[1.0, -1.0])).unwrap().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn last_layer_must_be_linear() {
        let r = Mlp::new(vec![single(Matrix::identity(2), Activation::Relu)]);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn chain_mismatch_rejected() {
        let r = Mlp::new(vec![
            single(Matrix::zeros(3, 2), Activation::Relu),
            single(Matrix::zeros(2, 4), Activation::Identity),
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn linear_case_weight_gradient_is_input() {
        let mlp = Mlp::new(vec![single(
            Matrix::new(1, 3, vec![0.2, -0.4, 0.9]).unwrap(),
            Activation::Identity,
        )])
        .unwrap();
        let x = v(&[1.5, -2.0, 0.25]);
        let (_, cache) = mlp.forward(&x).unwrap();
        let g = mlp.backward(&cache, &v(&[1.0])).unwrap();
        assert_eq!(g.layers[0].weights.as_slice(), x.as_slice());
        assert_eq!(g.layers[0].bias.as_slice(), &[1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::<f64>::he_uniform(&[4, 5, 3], &mut rng).unwrap();
        let (_, cache) = mlp.forward(&v(&[0.1, 0.2, -0.3, 0.4])).unwrap();
        let g = mlp.backward(&cache, &Vector::zeros(3)).unwrap();
        assert!(g.is_zero());
        assert!(g.input.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mlp = Mlp::<f64>::he_uniform(&[2, 3, 1], &mut rng).unwrap();
        let (_, cache) = mlp.forward(&v(&[1.0, 1.0])).unwrap();
        let g = mlp.backward(&cache, &v(&[1.0])).unwrap();
        mlp.sgd_step(&g, 0.1).unwrap();
        assert!(matches!(
            mlp.backward(&cache, &v(&[1.0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn sgd_scalar_example() {
        let mut mlp = Mlp::new(vec![single(
            Matrix::new(1, 1, vec![1.0]).unwrap(),
            Activation::Identity,
        )])
        .unwrap();
        let mut g = MlpGradients::zeros_like(&mlp);
        g.layers[0].weights.set(0, 0, 0.5);
        mlp.sgd_step(&g, 0.1).unwrap();
        assert!((mlp.layers()[0].weights.get(0, 0) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_without_mutating() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mlp = Mlp::<f64>::he_uniform(&[2, 2], &mut rng).unwrap();
        let before = mlp.clone();
        let mut g = MlpGradients::zeros_like(&mlp);
        g.layers[0].bias.as_mut_slice()[1] = f64::NAN;
        assert!(matches!(mlp.sgd_step(&g, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(mlp, before);
    }

    #[test]
    fn serde_round_trip_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mlp = Mlp::<f64>::he_uniform(&[3, 4, 2], &mut rng).unwrap();
        let json = serde_json::to_string(&mlp).unwrap();
        let back: Mlp<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, mlp);
    }

    #[test]
    fn momentum_zero_matches_plain_sgd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut a = Mlp::<f64>::he_uniform(&[3, 3, 2], &mut rng).unwrap();
        let mut b = a.clone();
        let x = v(&[0.3, -0.1, 0.8]);
        let (_, cache) = a.forward(&x).unwrap();
        let g = a.backward(&cache, &v(&[1.0, -2.0])).unwrap();
        a.sgd_step(&g, 0.05).unwrap();
        MomentumSgd::new(0.0).unwrap().step(&mut b, &g, 0.05).unwrap();
        assert_eq!(a, b);
    }
}
