//! Heteroscedastic regression network with Monte-Carlo dropout.
//!
//! A dense ReLU network maps a downsampled grayscale image to `2P` outputs:
//! the first `P` are the predicted parameter mean `mu`, the last `P` the
//! log-variance `s`. Training minimizes the Gaussian negative log-likelihood
//! with inverted dropout after each hidden layer. At prediction time `T`
//! dropout passes are combined into a diagonal Gaussian whose variance is the
//! spread of the sampled means (epistemic) plus the mean predicted variance
//! (aleatoric).

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::render::Image;
use crate::rng::Rng;

/// Input side length expected by [`preprocess`].
pub const INPUT_SIDE: usize = 64;
pub const FEATURE_SIDE: usize = INPUT_SIDE / 2;
pub const FEATURE_DIM: usize = FEATURE_SIDE * FEATURE_SIDE;

/// Luminance, 2x2 average pooling, row-major flatten.
pub fn preprocess(x: &Image) -> Result<Vec<f64>> {
    if x.width() != INPUT_SIDE || x.height() != INPUT_SIDE {
        return Err(Error::contract(format!(
            "network input must be {INPUT_SIDE}x{INPUT_SIDE}, got {}x{}",
            x.width(),
            x.height()
        )));
    }
    let lum: Vec<f64> = x
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let mut out = Vec::with_capacity(FEATURE_DIM);
    for y in 0..FEATURE_SIDE {
        for x in 0..FEATURE_SIDE {
            let i = 2 * y * INPUT_SIDE + 2 * x;
            out.push(0.25 * (lum[i] + lum[i + 1] + lum[i + INPUT_SIDE] + lum[i + INPUT_SIDE + 1]));
        }
    }
    Ok(out)
}

/// Diagonal Gaussian over the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }

    /// One draw per coordinate, no flooring.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| m + v.sqrt() * rng.normal())
            .collect()
    }
}

/// `sum_j 0.5 (y_j - mu_j)^2 exp(-s_j) + 0.5 s_j`, without the `0.5 ln(2 pi)`
/// constant.
pub fn hetero_nll(mu: &[f64], s: &[f64], y: &[f64]) -> f64 {
    mu.iter()
        .zip(s)
        .zip(y)
        .map(|((m, s), y)| 0.5 * (y - m) * (y - m) * (-s).exp() + 0.5 * s)
        .sum()
}

/// Combines dropout passes: mean of the means, and per coordinate the
/// population variance of the means plus the mean of `exp(s)`.
pub fn combine_passes(mus: &[Vec<f64>], log_vars: &[Vec<f64>]) -> Result<PredictiveDistribution> {
    let t = mus.len();
    if t < 2 || log_vars.len() != t {
        return Err(Error::contract(format!("need at least two passes, got {t}")));
    }
    let p = mus[0].len();
    let tf = t as f64;
    let mut mean = vec![0.0; p];
    for mu in mus {
        mean.iter_mut().zip(mu).for_each(|(m, x)| *m += x / tf);
    }
    let mut variance = vec![0.0; p];
    for j in 0..p {
        let epistemic = mus.iter().map(|mu| (mu[j] - mean[j]).powi(2)).sum::<f64>() / tf;
        let aleatoric = log_vars.iter().map(|s| s[j].exp()).sum::<f64>() / tf;
        variance[j] = epistemic.max(0.0) + aleatoric;
    }
    Ok(PredictiveDistribution { mean, variance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub dropout: f64,
}

/// Per-hidden-layer keep indicators (`1.0` keep, `0.0` drop), one row per example.
pub type DropoutMasks = Vec<Array2<f64>>;

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the batch itself for layer 0).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl ForwardCache {
    pub fn mu(&self) -> ArrayView2<'_, f64> {
        let p = self.output.ncols() / 2;
        self.output.slice(s![.., ..p])
    }

    pub fn log_var(&self) -> ArrayView2<'_, f64> {
        let p = self.output.ncols() / 2;
        self.output.slice(s![.., p..])
    }
}

impl Network {
    /// He-initialized weights (`N(0, 2 / fan_in)`), zero biases.
    pub fn init(sizes: &[usize], dropout: f64, rng: &mut Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || std * rng.normal()),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Network { layers, dropout }
    }

    pub fn zeros(sizes: &[usize], dropout: f64) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Network { layers, dropout }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    /// Number of predicted parameters (half the output width).
    pub fn param_dim(&self) -> usize {
        self.output_dim() / 2
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.ncols())
            .collect()
    }

    pub fn keep_prob(&self) -> f64 {
        1.0 - self.dropout
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Fresh Bernoulli(keep) masks for a batch of `rows` examples.
    pub fn sample_masks(&self, rows: usize, rng: &mut Rng) -> DropoutMasks {
        let keep = self.keep_prob();
        self.hidden_sizes()
            .into_iter()
            .map(|h| Array2::from_shape_simple_fn((rows, h), || if rng.bernoulli(keep) { 1.0 } else { 0.0 }))
            .collect()
    }

    /// Batched forward pass. Without masks no dropout is applied.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>, masks: Option<&DropoutMasks>) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::contract(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let hidden = self.layers.len() - 1;
        if let Some(m) = masks {
            if m.len() != hidden
                || m.iter()
                    .zip(&self.layers)
                    .any(|(m, l)| m.dim() != (input.nrows(), l.weights.ncols()))
            {
                return Err(Error::contract("dropout mask shape mismatch"));
            }
        }
        let scale = 1.0 / self.keep_prob();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(hidden);
        let mut a = input.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weights) + &layer.bias;
            inputs.push(a);
            if l == hidden {
                return Ok(ForwardCache {
                    inputs,
                    pre,
                    output: z,
                });
            }
            let mut h = z.mapv(|v| v.max(0.0));
            if let Some(m) = masks {
                h.zip_mut_with(&m[l], |v, k| *v *= k * scale);
            }
            pre.push(z);
            a = h;
        }
        unreachable!("network has at least one layer")
    }

    /// Single-example forward pass returning `(mu, s)`.
    pub fn forward(&self, input: &[f64], masks: Option<&DropoutMasks>) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let cache = self.forward_batch(x, masks)?;
        Ok((cache.mu().row(0).to_vec(), cache.log_var().row(0).to_vec()))
    }

    /// Mean heteroscedastic NLL over the batch and its exact gradient.
    pub fn loss_and_gradient(
        &self,
        input: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, Gradients)> {
        let cache = self.forward_batch(input, masks)?;
        let p = self.param_dim();
        if targets.dim() != (input.nrows(), p) {
            return Err(Error::contract("target shape mismatch"));
        }
        let b = input.nrows() as f64;
        let mut loss = 0.0;
        let mut d_out = Array2::zeros(cache.output.raw_dim());
        for (i, (out, y)) in cache.output.outer_iter().zip(targets.outer_iter()).enumerate() {
            for j in 0..p {
                let mu = out[j];
                let s = out[p + j];
                let r = y[j] - mu;
                let inv_var = (-s).exp();
                loss += 0.5 * r * r * inv_var + 0.5 * s;
                d_out[[i, j]] = -r * inv_var / b;
                d_out[[i, p + j]] = (0.5 - 0.5 * r * r * inv_var) / b;
            }
        }
        loss /= b;
        Ok((loss, self.backward(&cache, d_out, masks)))
    }

    fn backward(&self, cache: &ForwardCache, mut delta: Array2<f64>, masks: Option<&DropoutMasks>) -> Gradients {
        let scale = 1.0 / self.keep_prob();
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let dw = cache.inputs[l].t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            grads.push(Layer { weights: dw, bias: db });
            if l == 0 {
                break;
            }
            let mut d_prev = delta.dot(&self.layers[l].weights.t());
            if let Some(m) = masks {
                d_prev.zip_mut_with(&m[l - 1], |d, k| *d *= k * scale);
            }
            d_prev.zip_mut_with(&cache.pre[l - 1], |d, z| {
                if *z <= 0.0 {
                    *d = 0.0
                }
            });
            delta = d_prev;
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// `T` dropout passes over one image, combined into the predictive Gaussian.
    pub fn predict(&self, x: &Image, passes: usize, rng: &mut Rng) -> Result<PredictiveDistribution> {
        self.predict_features(&preprocess(x)?, passes, rng)
    }

    pub fn predict_features(&self, features: &[f64], passes: usize, rng: &mut Rng) -> Result<PredictiveDistribution> {
        if passes < 2 {
            return Err(Error::contract(format!("need at least two dropout passes, got {passes}")));
        }
        let row = ArrayView2::from_shape((1, features.len()), features).expect("row vector");
        let batch = row.broadcast((passes, features.len())).expect("broadcast").to_owned();
        let masks = self.sample_masks(passes, rng);
        let cache = self.forward_batch(batch.view(), Some(&masks))?;
        let mus: Vec<Vec<f64>> = cache.mu().outer_iter().map(|r| r.to_vec()).collect();
        let log_vars: Vec<Vec<f64>> = cache.log_var().outer_iter().map(|r| r.to_vec()).collect();
        combine_passes(&mus, &log_vars)
    }

    /// Deterministic (no dropout) predicted mean.
    pub fn predict_mean(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(features, None)?.0)
    }
}

/// Same layout as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.1,
            weight_decay: 0.0,
            hidden: vec![256, 256],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout rate must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::contract("batch size and epochs must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::contract("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

/// Preprocessed inputs and their parameter-vector targets, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `range` as a new set.
    pub fn slice(&self, range: std::ops::Range<usize>) -> TrainingSet {
        TrainingSet {
            inputs: self.inputs.slice(s![range.clone(), ..]).to_owned(),
            targets: self.targets.slice(s![range, ..]).to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    fn new(net: &Network) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.learning_rate;
        let eps = cfg.epsilon;
        let wd = cfg.weight_decay;
        for (((layer, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                let g = g + wd * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, g, m, v| update(p, *g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, g, m, v| update(p, *g, m, v));
        }
    }
}

/// Result of [`train`]: final weights and the mean loss of each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub epoch_losses: Vec<f64>,
}

/// Adam over shuffled minibatches with fresh dropout masks every step.
/// `on_epoch` receives `(epoch, mean_loss)` after each epoch (1-based).
pub fn train(
    data: &TrainingSet,
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    let mut sizes = vec![data.inputs.ncols()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(2 * data.targets.ncols());
    let mut net = Network::init(&sizes, cfg.dropout, rng);
    let mut adam = Adam::new(&net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let (mut total, mut seen) = (0.0, 0usize);
        for (batch_no, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.inputs.select(Axis(0), idx);
            let y = data.targets.select(Axis(0), idx);
            let masks = net.sample_masks(idx.len(), rng);
            let (loss, grads) = net.loss_and_gradient(x.view(), y.view(), Some(&masks))?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {batch_no}"
                )));
            }
            total += loss * idx.len() as f64;
            seen += idx.len();
            adam.step(&mut net, &grads, cfg);
        }
        let mean = total / seen as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainOutcome {
        network: net,
        epoch_losses,
    })
}
