//! Small fully connected classifier trained with plain SGD.
//!
//! Hidden layers use ReLU and the output layer is linear. The training loss
//! is temperature-scaled softmax cross-entropy, averaged over the samples
//! left unmasked in a batch.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::controllers::ClipMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

/// One affine layer, `y = x W^T + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
    activation: Activation,
}

/// Layer outputs kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, the last entry holds the logits.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("at least the input").view()
    }
}

/// Gradients of the masked mean loss for every parameter, plus the losses.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub per_sample_loss: Vec<f64>,
    /// Mean over unmasked samples; zero when every sample is masked.
    pub mean_loss: f64,
    /// Number of unmasked samples.
    pub contributing: usize,
}

impl GradientBundle {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.biases.len()))
                .collect(),
            per_sample_loss: Vec::new(),
            mean_loss: 0.0,
            contributing: 0,
        }
    }

    pub fn components(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
    }

    fn components_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .chain(self.biases.iter_mut().flat_map(|b| b.iter_mut()))
    }

    pub fn global_norm(&self) -> f64 {
        self.components().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.components().fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::invalid(
            "temperature",
            format!("{temperature} must be finite and > 0"),
        ));
    }
    Ok(())
}

/// `log softmax(z / T)` for one row, via max subtraction.
fn log_softmax_into<'a>(
    logits: impl Iterator<Item = &'a f64> + Clone,
    temperature: f64,
    out: &mut Vec<f64>,
) {
    out.clear();
    out.extend(logits.map(|z| z / temperature));
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = out.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    for s in out.iter_mut() {
        *s -= max + log_sum;
    }
}

/// Temperature softmax `exp(z_i / T) / sum_j exp(z_j / T)`.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if logits.is_empty() {
        return Err(Error::invalid("logits", "must not be empty"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite {
            context: "logits passed to softmax".into(),
        });
    }
    let mut out = Vec::with_capacity(logits.len());
    log_softmax_into(logits.iter(), temperature, &mut out);
    for v in out.iter_mut() {
        *v = v.exp();
    }
    Ok(out)
}

fn check_targets(targets: &[usize], rows: usize, classes: usize) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::invalid(
            "targets",
            format!("{} targets for {rows} samples", targets.len()),
        ));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::invalid(
            "targets",
            format!("class {t} out of range for {classes} classes"),
        ));
    }
    Ok(())
}

/// Per-sample `-log softmax(z / T)[target]`.
pub fn cross_entropy_t(
    logits: ArrayView2<'_, f64>,
    targets: &[usize],
    temperature: f64,
) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    check_targets(targets, logits.nrows(), logits.ncols())?;
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite {
            context: "logits".into(),
        });
    }
    let mut scratch = Vec::with_capacity(logits.ncols());
    Ok(logits
        .outer_iter()
        .zip(targets)
        .map(|(row, &t)| {
            log_softmax_into(row.iter(), temperature, &mut scratch);
            -scratch[t]
        })
        .collect())
}

/// Mean of the unmasked entries and their count. Empty selections give `(0, 0)`.
pub fn masked_mean(losses: &[f64], mask: &[bool]) -> (f64, usize) {
    let (sum, count) = losses
        .iter()
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .fold((0.0, 0usize), |(s, c), (l, _)| (s + l, c + 1));
    if count == 0 {
        (0.0, 0)
    } else {
        (sum / count as f64, count)
    }
}

/// Keep samples whose loss does not exceed `threshold`.
pub fn mask_high_loss(per_sample_losses: &[f64], threshold: f64) -> Vec<bool> {
    per_sample_losses.iter().map(|&l| l <= threshold).collect()
}

/// Clip in place. `threshold = +inf` leaves the gradients untouched.
pub fn clip_gradients(grads: &mut GradientBundle, threshold: f64, mode: ClipMode) -> Result<()> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::invalid("clip", format!("{threshold} must be > 0")));
    }
    if threshold.is_infinite() {
        return Ok(());
    }
    match mode {
        ClipMode::Value => {
            for g in grads.components_mut() {
                *g = g.clamp(-threshold, threshold);
            }
        }
        ClipMode::Norm => {
            let norm = grads.global_norm();
            if norm > threshold {
                let scale = threshold / norm;
                for g in grads.components_mut() {
                    *g *= scale;
                }
            }
        }
    }
    Ok(())
}

impl DenseNet {
    /// He-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid(
                "layer_sizes",
                "need at least an input and an output layer",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid(
                "layer_sizes",
                "every layer needs at least one unit",
            ));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(rng)),
                    biases: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            activation: Activation::Relu,
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::invalid("layers", "need at least one layer"))?;
        let mut sizes = vec![first.weights.ncols()];
        for (i, l) in layers.iter().enumerate() {
            if l.weights.ncols() != *sizes.last().unwrap() {
                return Err(Error::invalid(
                    "layers",
                    format!("layer {i} input width does not match the previous output"),
                ));
            }
            if l.biases.len() != l.weights.nrows() {
                return Err(Error::invalid(
                    "layers",
                    format!("layer {i} bias length mismatch"),
                ));
            }
            sizes.push(l.weights.nrows());
        }
        let net = Self {
            layer_sizes: sizes,
            layers,
            activation: Activation::Relu,
        };
        if !net.is_finite() {
            return Err(Error::NonFinite {
                context: "initial parameters".into(),
            });
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights
                .iter()
                .chain(l.biases.iter())
                .all(|v| v.is_finite())
        })
    }

    pub fn forward_cached(&self, input: ArrayView2<'_, f64>) -> ForwardCache {
        assert_eq!(input.ncols(), self.input_dim(), "input width mismatch");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&layer.weights.t());
            z += &layer.biases;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        ForwardCache { activations }
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_cached(input).activations.pop().unwrap()
    }

    pub fn predict(&self, input: ArrayView2<'_, f64>) -> Vec<usize> {
        self.forward(input)
            .outer_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    /// Fraction of samples whose argmax logit equals the label.
    pub fn accuracy(&self, input: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = self
            .predict(input)
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / labels.len() as f64
    }

    /// Exact gradients of the masked mean temperature cross-entropy.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        targets: &[usize],
        temperature: f64,
        mask: &[bool],
    ) -> Result<GradientBundle> {
        let logits = cache.logits();
        if mask.len() != logits.nrows() {
            return Err(Error::invalid(
                "mask",
                format!("{} entries for {} samples", mask.len(), logits.nrows()),
            ));
        }
        let per_sample_loss = cross_entropy_t(logits, targets, temperature)?;
        let (mean_loss, contributing) = masked_mean(&per_sample_loss, mask);

        let mut grads = GradientBundle::zeros_like(self);
        grads.per_sample_loss = per_sample_loss;
        grads.mean_loss = mean_loss;
        grads.contributing = contributing;
        if contributing == 0 {
            return Ok(grads);
        }

        // dL/dz = (softmax(z/T) - onehot) / (T * count) for kept samples
        let scale = 1.0 / (temperature * contributing as f64);
        let mut delta = Array2::<f64>::zeros(logits.raw_dim());
        let mut scratch = Vec::with_capacity(logits.ncols());
        for (i, (row, mut out)) in logits.outer_iter().zip(delta.outer_iter_mut()).enumerate() {
            if !mask[i] {
                continue;
            }
            log_softmax_into(row.iter(), temperature, &mut scratch);
            for (o, lp) in out.iter_mut().zip(&scratch) {
                *o = lp.exp() * scale;
            }
            out[targets[i]] -= scale;
        }

        for l in (0..self.layers.len()).rev() {
            let prev = &cache.activations[l];
            grads.weights[l] = delta.t().dot(prev);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&self.layers[l].weights);
                Zip::from(&mut next).and(prev).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
        }
        Ok(grads)
    }
}

/// Forward then backward in one call.
pub fn backward(
    net: &DenseNet,
    input: ArrayView2<'_, f64>,
    targets: &[usize],
    temperature: f64,
    mask: &[bool],
) -> Result<GradientBundle> {
    let cache = net.forward_cached(input);
    net.backward(&cache, targets, temperature, mask)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSettings {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// SGD with heavy-ball momentum and coupled L2 weight decay:
///
/// ```text
/// v <- m * v + (g + wd * w)
/// w <- w - lr * v
/// ```
///
/// Decay is applied to weight matrices only; biases are not decayed.
#[derive(Debug, Clone)]
pub struct Sgd {
    weight_velocity: Vec<Array2<f64>>,
    bias_velocity: Vec<Array1<f64>>,
}

impl Sgd {
    pub fn new(net: &DenseNet) -> Self {
        let zeros = GradientBundle::zeros_like(net);
        Self {
            weight_velocity: zeros.weights,
            bias_velocity: zeros.biases,
        }
    }

    pub fn step(
        &mut self,
        net: &mut DenseNet,
        grads: &GradientBundle,
        settings: SgdSettings,
    ) -> Result<()> {
        let SgdSettings {
            lr,
            momentum,
            weight_decay,
        } = settings;
        if !(lr.is_finite() && momentum.is_finite() && weight_decay.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("optimizer settings {settings:?}"),
            });
        }
        for (l, layer) in net.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.weights)
                .and(&mut self.weight_velocity[l])
                .and(&grads.weights[l])
                .for_each(|w, v, &g| {
                    *v = momentum * *v + (g + weight_decay * *w);
                    *w -= lr * *v;
                });
            Zip::from(&mut layer.biases)
                .and(&mut self.bias_velocity[l])
                .and(&grads.biases[l])
                .for_each(|b, v, &g| {
                    *v = momentum * *v + g;
                    *b -= lr * *v;
                });
        }
        if !net.is_finite() {
            return Err(Error::NonFinite {
                context: "parameters after optimizer step".into(),
            });
        }
        Ok(())
    }
}
