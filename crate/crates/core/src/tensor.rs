//! Dense float tensors and the training machinery for the stage-1 network:
//! two convolutional layers (ReLU, 2×2 max pooling) followed by a linear
//! two-unit readout, trained with momentum gradient descent on a
//! class-weighted softmax cross-entropy loss.
//!
//! Convolutions use zero (`same`) padding with stride 1; pooling uses
//! 2×2 windows with stride 2 and floor semantics. All forward and backward
//! passes are written as contiguous row operations so the hot loops
//! vectorize.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("data length {got} does not match shape {shape:?} (expected {expected})")]
    DataLength { shape: Vec<usize>, expected: usize, got: usize },
    #[error("non-finite element at index {0}")]
    NonFinite(usize),
    #[error("input shape {got:?} does not match model input shape {expected:?}")]
    ShapeMismatch { expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("expected {expected} logits, got {got}")]
    LogitCount { expected: usize, got: usize },
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("class weights must be positive")]
    NonPositiveWeight,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged: non-finite values in layer {0}")]
    Diverged(&'static str),
    #[error("input shape {0:?} does not chain through the network (zero-sized {1} output)")]
    ShapeChain((usize, usize, usize), &'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

/// Dense row-major tensor of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength { shape, expected, got: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(pos));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Channel-height-width accessor for 3-d tensors.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a 3-d tensor");
        (self.shape[0], self.shape[1], self.shape[2])
    }
}

/// Convolution layer parameters. Weights are `[out_c, in_c, kh, kw]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    fn glorot(out_c: usize, in_c: usize, kh: usize, kw: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_c * kh * kw) as f64;
        let fan_out = (out_c * kh * kw) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        let weights = (0..out_c * in_c * kh * kw)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { out_channels: out_c, in_channels: in_c, kernel_h: kh, kernel_w: kw, weights, bias: vec![0.0; out_c] }
    }

    fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel_h + ky) * self.kernel_w + kx
    }
}

/// Linear readout. Weights are `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn glorot(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..out_dim * in_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { out_dim, in_dim, weights, bias: vec![0.0; out_dim] }
    }
}

/// The stage-1 network: conv(12, 5×5) → ReLU → pool → conv(64, 3×3) → ReLU
/// → pool → flatten → linear(2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub input_shape: (usize, usize, usize),
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub dense: Dense,
}

/// Spatial sizes of every stage for a given input shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShapes {
    pub input: (usize, usize, usize),
    pub conv1_out: (usize, usize, usize),
    pub pool1_out: (usize, usize, usize),
    pub conv2_out: (usize, usize, usize),
    pub pool2_out: (usize, usize, usize),
    pub flat_dim: usize,
}

impl LayerShapes {
    pub fn for_input(input: (usize, usize, usize)) -> Result<Self, TensorError> {
        let (c, h, w) = input;
        if c == 0 || h == 0 || w == 0 {
            return Err(TensorError::ShapeChain(input, "input"));
        }
        let conv1_out = (12, h, w);
        let pool1_out = (12, h / 2, w / 2);
        if pool1_out.1 == 0 || pool1_out.2 == 0 {
            return Err(TensorError::ShapeChain(input, "pool1"));
        }
        let conv2_out = (64, pool1_out.1, pool1_out.2);
        let pool2_out = (64, pool1_out.1 / 2, pool1_out.2 / 2);
        if pool2_out.1 == 0 || pool2_out.2 == 0 {
            return Err(TensorError::ShapeChain(input, "pool2"));
        }
        Ok(Self {
            input,
            conv1_out,
            pool1_out,
            conv2_out,
            pool2_out,
            flat_dim: pool2_out.0 * pool2_out.1 * pool2_out.2,
        })
    }
}

impl CnnModel {
    /// Build a seeded Glorot-initialized model for the given input shape.
    pub fn new(input_shape: (usize, usize, usize), seed: u64) -> Result<Self, TensorError> {
        let shapes = LayerShapes::for_input(input_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv2d::glorot(12, input_shape.0, 5, 5, &mut rng);
        let conv2 = Conv2d::glorot(64, 12, 3, 3, &mut rng);
        let dense = Dense::glorot(2, shapes.flat_dim, &mut rng);
        Ok(Self { input_shape, conv1, conv2, dense })
    }

    pub fn shapes(&self) -> LayerShapes {
        LayerShapes::for_input(self.input_shape).expect("validated at construction")
    }

    /// Forward pass returning the two logits.
    pub fn forward(&self, input: &Tensor) -> Result<[f64; 2], TensorError> {
        Ok(self.forward_cached(input)?.logits)
    }

    /// Forward pass retaining the intermediates needed for backprop.
    pub fn forward_cached(&self, input: &Tensor) -> Result<ForwardCache, TensorError> {
        let dims = input.dims3();
        if dims != self.input_shape {
            return Err(TensorError::ShapeMismatch { expected: self.input_shape, got: dims });
        }
        let shapes = self.shapes();

        let preact1 = conv2d_forward(input.data(), dims, &self.conv1);
        let act1: Vec<f64> = preact1.iter().map(|&v| v.max(0.0)).collect();
        let (pool1, argmax1) = maxpool2_forward(&act1, shapes.conv1_out);
        let preact2 = conv2d_forward(&pool1, shapes.pool1_out, &self.conv2);
        let act2: Vec<f64> = preact2.iter().map(|&v| v.max(0.0)).collect();
        let (pool2, argmax2) = maxpool2_forward(&act2, shapes.conv2_out);
        let logits = dense_forward(&pool2, &self.dense);
        Ok(ForwardCache {
            preact1,
            pool1,
            argmax1,
            preact2,
            pool2,
            argmax2,
            logits: [logits[0], logits[1]],
        })
    }
}

/// Intermediates of one forward pass.
pub struct ForwardCache {
    pub preact1: Vec<f64>,
    pub pool1: Vec<f64>,
    pub argmax1: Vec<u32>,
    pub preact2: Vec<f64>,
    pub pool2: Vec<f64>,
    pub argmax2: Vec<u32>,
    pub logits: [f64; 2],
}

/// One labelled training sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Tensor,
    pub label: u8,
}

/// Training hyper-parameters for stage 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Per-class loss weights, index = class id.
    pub class_weights: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 125,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
            class_weights: [1.0, 1.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.epochs < 1 {
            return Err(TensorError::InvalidConfig("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(TensorError::InvalidConfig("batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TensorError::InvalidConfig("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TensorError::InvalidConfig("momentum must be in [0, 1)"));
        }
        if self.class_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(TensorError::NonPositiveWeight);
        }
        Ok(())
    }
}

/// Flat gradient / velocity buffers matching a [`CnnModel`].
#[derive(Debug, Clone)]
pub struct CnnGrads {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
}

impl CnnGrads {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Self {
            conv1_w: vec![0.0; model.conv1.weights.len()],
            conv1_b: vec![0.0; model.conv1.bias.len()],
            conv2_w: vec![0.0; model.conv2.weights.len()],
            conv2_b: vec![0.0; model.conv2.bias.len()],
            dense_w: vec![0.0; model.dense.weights.len()],
            dense_b: vec![0.0; model.dense.bias.len()],
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in [
            (&mut self.conv1_w, &other.conv1_w),
            (&mut self.conv1_b, &other.conv1_b),
            (&mut self.conv2_w, &other.conv2_w),
            (&mut self.conv2_b, &other.conv2_b),
            (&mut self.dense_w, &other.dense_w),
            (&mut self.dense_b, &other.dense_b),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for buf in [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense_w,
            &mut self.dense_b,
        ] {
            for x in buf.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Weighted softmax cross-entropy over two logits.
///
/// Returns `weights[label] × (−ln softmax(logits)[label])`.
pub fn weighted_cross_entropy(
    logits: &[f64],
    label: usize,
    weights: &[f64],
) -> Result<f64, TensorError> {
    if logits.len() != 2 {
        return Err(TensorError::LogitCount { expected: 2, got: logits.len() });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFiniteLogits);
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(TensorError::NonPositiveWeight);
    }
    if label >= weights.len() || label >= 2 {
        return Err(TensorError::LabelOutOfRange { label, classes: weights.len().min(2) });
    }
    let max = logits[0].max(logits[1]);
    let lse = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
    Ok(weights[label] * (lse - logits[label]))
}

/// Gradient of [`weighted_cross_entropy`] with respect to the logits.
pub fn weighted_cross_entropy_grad(logits: &[f64; 2], label: usize, weights: &[f64; 2]) -> [f64; 2] {
    let max = logits[0].max(logits[1]);
    let e0 = (logits[0] - max).exp();
    let e1 = (logits[1] - max).exp();
    let z = e0 + e1;
    let p = [e0 / z, e1 / z];
    let w = weights[label];
    let mut g = [w * p[0], w * p[1]];
    g[label] -= w;
    g
}

/// Per-sample loss and parameter gradients.
pub fn sample_gradients(
    model: &CnnModel,
    sample: &Sample,
    class_weights: &[f64; 2],
) -> Result<(f64, CnnGrads), TensorError> {
    let cache = model.forward_cached(&sample.input)?;
    if !cache.logits.iter().all(|v| v.is_finite()) {
        return Err(diverged_layer(model, &cache));
    }
    let loss = weighted_cross_entropy(&cache.logits, sample.label as usize, class_weights)?;
    let dlogits = weighted_cross_entropy_grad(&cache.logits, sample.label as usize, class_weights);

    let shapes = model.shapes();
    let mut grads = CnnGrads::zeros_like(model);

    // Dense backward.
    let mut dpool2 = vec![0.0; cache.pool2.len()];
    for j in 0..2 {
        grads.dense_b[j] = dlogits[j];
        let row = &model.dense.weights[j * model.dense.in_dim..(j + 1) * model.dense.in_dim];
        let grow = &mut grads.dense_w[j * model.dense.in_dim..(j + 1) * model.dense.in_dim];
        let dj = dlogits[j];
        for i in 0..model.dense.in_dim {
            grow[i] = dj * cache.pool2[i];
            dpool2[i] += dj * row[i];
        }
    }

    // Pool2 and ReLU2 backward.
    let mut dact2 = vec![0.0; cache.preact2.len()];
    maxpool2_backward(&dpool2, &cache.argmax2, &mut dact2);
    for (d, &p) in dact2.iter_mut().zip(&cache.preact2) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }

    // Conv2 backward.
    let mut dpool1 = vec![0.0; cache.pool1.len()];
    conv2d_backward(
        &cache.pool1,
        shapes.pool1_out,
        &model.conv2,
        &dact2,
        &mut grads.conv2_w,
        &mut grads.conv2_b,
        Some(&mut dpool1),
    );

    // Pool1 and ReLU1 backward.
    let mut dact1 = vec![0.0; cache.preact1.len()];
    maxpool2_backward(&dpool1, &cache.argmax1, &mut dact1);
    for (d, &p) in dact1.iter_mut().zip(&cache.preact1) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }

    // Conv1 backward (no input gradient needed).
    conv2d_backward(
        sample.input.data(),
        shapes.input,
        &model.conv1,
        &dact1,
        &mut grads.conv1_w,
        &mut grads.conv1_b,
        None,
    );

    Ok((loss, grads))
}

fn diverged_layer(model: &CnnModel, cache: &ForwardCache) -> TensorError {
    for (name, values) in [
        ("conv1", &cache.preact1),
        ("conv2", &cache.preact2),
    ] {
        if values.iter().any(|v| !v.is_finite()) {
            return TensorError::Diverged(name);
        }
    }
    let _ = model;
    TensorError::Diverged("dense")
}

/// One momentum-SGD step over a batch. Gradients are averaged over the
/// batch; per-sample gradients may be computed in parallel but are summed
/// in index order so results do not depend on thread scheduling.
///
/// Returns the pre-update mean loss.
pub fn train_step(
    model: &mut CnnModel,
    velocity: &mut CnnGrads,
    batch: &[Sample],
    config: &TrainConfig,
) -> Result<f64, TensorError> {
    if batch.is_empty() {
        return Err(TensorError::EmptyBatch);
    }
    let results: Vec<Result<(f64, CnnGrads), TensorError>> = batch
        .par_iter()
        .map(|s| sample_gradients(model, s, &config.class_weights))
        .collect();

    let mut total = CnnGrads::zeros_like(model);
    let mut loss_sum = 0.0;
    for r in results {
        let (loss, g) = r?;
        loss_sum += loss;
        total.add_assign(&g);
    }
    let mean_loss = loss_sum / batch.len() as f64;
    if !mean_loss.is_finite() {
        return Err(TensorError::Diverged("loss"));
    }
    total.scale(1.0 / batch.len() as f64);

    let lr = config.learning_rate;
    let mu = config.momentum;
    for (param, (vel, grad)) in [
        (&mut model.conv1.weights, (&mut velocity.conv1_w, &total.conv1_w)),
        (&mut model.conv1.bias, (&mut velocity.conv1_b, &total.conv1_b)),
        (&mut model.conv2.weights, (&mut velocity.conv2_w, &total.conv2_w)),
        (&mut model.conv2.bias, (&mut velocity.conv2_b, &total.conv2_b)),
        (&mut model.dense.weights, (&mut velocity.dense_w, &total.dense_w)),
        (&mut model.dense.bias, (&mut velocity.dense_b, &total.dense_b)),
    ] {
        for ((w, v), g) in param.iter_mut().zip(vel.iter_mut()).zip(grad) {
            *v = mu * *v + *g;
            *w -= lr * *v;
        }
    }
    Ok(mean_loss)
}

/// Outcome of stage-1 training.
pub struct FitOutcome {
    /// Parameter snapshot of the epoch with the lowest mean training loss.
    pub best_model: CnnModel,
    /// Mean training loss per epoch, `config.epochs` entries.
    pub epoch_losses: Vec<f64>,
}

/// Train for `config.epochs` epochs and keep the snapshot with minimum
/// epoch training loss.
pub fn fit_stage1(
    mut model: CnnModel,
    data: &[Sample],
    config: &TrainConfig,
) -> Result<FitOutcome, TensorError> {
    if data.is_empty() {
        return Err(TensorError::EmptyDataset);
    }
    if data.iter().any(|s| s.label > 1) {
        return Err(TensorError::LabelOutOfRange { label: 2, classes: 2 });
    }
    config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = CnnGrads::zeros_like(&model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, CnnModel)> = None;

    for _ in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let loss = train_step(&mut model, &mut velocity, &batch, config)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let epoch_loss = loss_sum / seen as f64;
        epoch_losses.push(epoch_loss);
        let better = match &best {
            Some((b, _)) => epoch_loss < *b,
            None => true,
        };
        if better {
            best = Some((epoch_loss, model.clone()));
        }
    }
    let (_, best_model) = best.expect("at least one epoch");
    Ok(FitOutcome { best_model, epoch_losses })
}

/// Classify with the float model: argmax logit, ties to class 0.
pub fn predict(model: &CnnModel, input: &Tensor) -> Result<u8, TensorError> {
    let logits = model.forward(input)?;
    Ok(u8::from(logits[1] > logits[0]))
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// Layer primitives
// ---------------------------------------------------------------------------

/// Same-padding stride-1 convolution. Output is `[out_c, h, w]`.
pub fn conv2d_forward(input: &[f64], in_shape: (usize, usize, usize), layer: &Conv2d) -> Vec<f64> {
    let (in_c, h, w) = in_shape;
    debug_assert_eq!(in_c, layer.in_channels);
    let pad_h = (layer.kernel_h - 1) / 2;
    let pad_w = (layer.kernel_w - 1) / 2;
    let mut out = vec![0.0; layer.out_channels * h * w];

    for oc in 0..layer.out_channels {
        let out_map = &mut out[oc * h * w..(oc + 1) * h * w];
        let b = layer.bias[oc];
        for v in out_map.iter_mut() {
            *v = b;
        }
        for ic in 0..in_c {
            let in_map = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..layer.kernel_h {
                // oy + ky - pad_h must land in [0, h).
                let oy_lo = pad_h.saturating_sub(ky);
                let oy_hi = (h + pad_h).saturating_sub(ky).min(h);
                for kx in 0..layer.kernel_w {
                    let weight = layer.weights[layer.weight_index(oc, ic, ky, kx)];
                    if weight == 0.0 {
                        continue;
                    }
                    let ox_lo = pad_w.saturating_sub(kx);
                    let ox_hi = (w + pad_w).saturating_sub(kx).min(w);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - pad_h;
                        let in_row = &in_map[iy * w + (ox_lo + kx - pad_w)..iy * w + (ox_hi - 1 + kx - pad_w) + 1];
                        let out_row = &mut out_map[oy * w + ox_lo..oy * w + ox_hi];
                        for (o, i) in out_row.iter_mut().zip(in_row) {
                            *o += weight * *i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv2d_forward`]: accumulates weight and bias
/// gradients and, when requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f64],
    in_shape: (usize, usize, usize),
    layer: &Conv2d,
    dout: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut Vec<f64>>,
) {
    let (in_c, h, w) = in_shape;
    let pad_h = (layer.kernel_h - 1) / 2;
    let pad_w = (layer.kernel_w - 1) / 2;

    for oc in 0..layer.out_channels {
        let dout_map = &dout[oc * h * w..(oc + 1) * h * w];
        dbias[oc] += dout_map.iter().sum::<f64>();
        for ic in 0..in_c {
            let in_map = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..layer.kernel_h {
                let oy_lo = pad_h.saturating_sub(ky);
                let oy_hi = (h + pad_h).saturating_sub(ky).min(h);
                for kx in 0..layer.kernel_w {
                    let ox_lo = pad_w.saturating_sub(kx);
                    let ox_hi = (w + pad_w).saturating_sub(kx).min(w);
                    if ox_lo >= ox_hi || oy_lo >= oy_hi {
                        continue;
                    }
                    let widx = layer.weight_index(oc, ic, ky, kx);
                    let mut wgrad = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - pad_h;
                        let in_row = &in_map[iy * w + (ox_lo + kx - pad_w)..iy * w + (ox_hi + kx - pad_w)];
                        let dout_row = &dout_map[oy * w + ox_lo..oy * w + ox_hi];
                        let mut acc = 0.0;
                        for (i, d) in in_row.iter().zip(dout_row) {
                            acc += *i * *d;
                        }
                        wgrad += acc;
                    }
                    dweights[widx] += wgrad;

                    if let Some(dinp) = dinput.as_deref_mut() {
                        let weight = layer.weights[widx];
                        if weight != 0.0 {
                            let dinp_map = &mut dinp[ic * h * w..(ic + 1) * h * w];
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - pad_h;
                                let din_row = &mut dinp_map
                                    [iy * w + (ox_lo + kx - pad_w)..iy * w + (ox_hi + kx - pad_w)];
                                let dout_row = &dout_map[oy * w + ox_lo..oy * w + ox_hi];
                                for (di, d) in din_row.iter_mut().zip(dout_row) {
                                    *di += weight * *d;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 max pooling with stride 2 (floor semantics). Returns the pooled map
/// and, per output cell, the flat input index that supplied the maximum
/// (ties resolved to the first element in row-major window order).
pub fn maxpool2_forward(input: &[f64], in_shape: (usize, usize, usize)) -> (Vec<f64>, Vec<u32>) {
    let (c, h, w) = in_shape;
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let in_map = &input[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (2 * oy) * w + 2 * ox;
                let mut best = in_map[base];
                let mut best_idx = base;
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = base + dy * w + dx;
                    if in_map[idx] > best {
                        best = in_map[idx];
                        best_idx = idx;
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
                arg[(ch * oh + oy) * ow + ox] = (ch * h * w + best_idx) as u32;
            }
        }
    }
    (out, arg)
}

/// Routes each pooled gradient to the recorded argmax position.
pub fn maxpool2_backward(dout: &[f64], argmax: &[u32], dinput: &mut [f64]) {
    for (d, &idx) in dout.iter().zip(argmax) {
        dinput[idx as usize] += *d;
    }
}

/// Linear layer forward.
pub fn dense_forward(input: &[f64], layer: &Dense) -> Vec<f64> {
    let mut out = Vec::with_capacity(layer.out_dim);
    for j in 0..layer.out_dim {
        let row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
        let mut acc = layer.bias[j];
        for (w, x) in row.iter().zip(input) {
            acc += *w * *x;
        }
        out.push(acc);
    }
    out
}

// ---------------------------------------------------------------------------
// Numeric gradient checking
// ---------------------------------------------------------------------------

/// Central-difference numeric gradient of `f` at `params`.
pub fn numeric_gradient<F>(mut f: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = f(&work);
        work[i] = orig - step;
        let down = f(&work);
        work[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// Largest relative error between analytic and numeric gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs()).max(1e-6);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor3(c: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor {
        let data = (0..c * h * w).map(f).collect();
        Tensor::new(vec![c, h, w], data).unwrap()
    }

    #[test]
    fn tensor_invariants() {
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn zero_model_zero_input_gives_zero_logits() {
        let mut model = CnnModel::new((1, 8, 8), 0).unwrap();
        model.conv1.weights.iter_mut().for_each(|w| *w = 0.0);
        model.conv2.weights.iter_mut().for_each(|w| *w = 0.0);
        model.dense.weights.iter_mut().for_each(|w| *w = 0.0);
        let input = tensor3(1, 8, 8, |_| 0.0);
        let logits = model.forward(&input).unwrap();
        assert_eq!(logits, [0.0, 0.0]);
    }

    #[test]
    fn identity_kernel_feature_map() {
        // 1×1 unit-weight conv over an all-ones input reproduces the input.
        let layer = Conv2d {
            out_channels: 1,
            in_channels: 1,
            kernel_h: 1,
            kernel_w: 1,
            weights: vec![1.0],
            bias: vec![0.0],
        };
        let input = vec![1.0; 16];
        let out = conv2d_forward(&input, (1, 4, 4), &layer);
        assert_eq!(out, input);
    }

    #[test]
    fn shape_mismatch_is_diagnostic() {
        let model = CnnModel::new((1, 8, 8), 0).unwrap();
        let input = tensor3(1, 6, 8, |_| 0.0);
        match model.forward(&input) {
            Err(TensorError::ShapeMismatch { expected, got }) => {
                assert_eq!(expected, (1, 8, 8));
                assert_eq!(got, (1, 6, 8));
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn input_shape_must_chain() {
        // 3×3 input collapses to nothing after the second pool.
        assert!(matches!(CnnModel::new((1, 3, 3), 0), Err(TensorError::ShapeChain(_, "pool2"))));
    }

    #[test]
    fn cross_entropy_uniform_and_weighted() {
        let ln2 = std::f64::consts::LN_2;
        let l = weighted_cross_entropy(&[0.0, 0.0], 0, &[1.0, 1.0]).unwrap();
        assert!((l - ln2).abs() < 1e-12);
        // Weight for the labelled class scales the loss.
        let l = weighted_cross_entropy(&[0.0, 0.0], 1, &[0.625, 2.5]).unwrap();
        assert!((l - 2.5 * ln2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct() {
        // softmax(10, -10)[0] = 1/(1+e^-20); loss = ln(1+e^-20) ≈ 2.06e-9.
        let l = weighted_cross_entropy(&[10.0, -10.0], 0, &[1.0, 1.0]).unwrap();
        assert!((l - 2.0611536e-9).abs() < 1e-13, "loss {l}");
    }

    #[test]
    fn cross_entropy_rejects_bad_input() {
        assert!(weighted_cross_entropy(&[f64::NAN, 0.0], 0, &[1.0, 1.0]).is_err());
        assert!(weighted_cross_entropy(&[0.0, 0.0, 0.0], 0, &[1.0, 1.0]).is_err());
        assert!(weighted_cross_entropy(&[0.0, 0.0], 0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let mut model = CnnModel::new((1, 8, 8), 3).unwrap();
        let before = model.clone();
        let mut velocity = CnnGrads::zeros_like(&model);
        let config = TrainConfig { learning_rate: f64::MIN_POSITIVE, ..Default::default() };
        // A literal zero rate is rejected by validate(); emulate by checking
        // the update math directly: with lr = 0 the step leaves params alone.
        let batch = vec![Sample { input: tensor3(1, 8, 8, |i| (i % 7) as f64 - 3.0), label: 1 }];
        let mut zero_cfg = config.clone();
        zero_cfg.learning_rate = 1e-300;
        train_step(&mut model, &mut velocity, &batch, &zero_cfg).unwrap();
        for (a, b) in model.conv1.weights.iter().zip(&before.conv1.weights) {
            assert!((a - b).abs() < 1e-290);
        }
    }

    #[test]
    fn single_step_reduces_convex_loss() {
        // Single linear unit trained on one sample: loss must not increase.
        let mut model = CnnModel::new((1, 8, 8), 9).unwrap();
        let mut velocity = CnnGrads::zeros_like(&model);
        let sample = Sample { input: tensor3(1, 8, 8, |i| ((i * 37) % 11) as f64 / 11.0 - 0.5), label: 0 };
        let config = TrainConfig { learning_rate: 1e-4, momentum: 0.0, ..Default::default() };
        let before = train_step(&mut model, &mut velocity, &[sample.clone()], &config).unwrap();
        let cache = model.forward_cached(&sample.input).unwrap();
        let after =
            weighted_cross_entropy(&cache.logits, sample.label as usize, &config.class_weights)
                .unwrap();
        assert!(after <= before + 1e-12, "loss went {before} -> {after}");
    }

    #[test]
    fn fit_returns_one_loss_per_epoch() {
        let data: Vec<Sample> = (0..8)
            .map(|i| Sample {
                input: tensor3(1, 8, 8, |j| ((i * 13 + j * 7) % 5) as f64 - 2.0),
                label: (i % 2) as u8,
            })
            .collect();
        let model = CnnModel::new((1, 8, 8), 1).unwrap();
        let config = TrainConfig { epochs: 4, learning_rate: 1e-5, ..Default::default() };
        let fit = fit_stage1(model, &data, &config).unwrap();
        assert_eq!(fit.epoch_losses.len(), 4);
    }

    #[test]
    fn fit_single_epoch_returns_that_snapshot() {
        let data = vec![Sample { input: tensor3(1, 8, 8, |i| (i % 3) as f64), label: 0 }];
        let model = CnnModel::new((1, 8, 8), 2).unwrap();
        let config = TrainConfig { epochs: 1, learning_rate: 1e-6, ..Default::default() };
        let fit = fit_stage1(model.clone(), &data, &config).unwrap();
        // After one epoch the best model is whatever that epoch produced;
        // it must differ from the untrained model only via that one step.
        assert_eq!(fit.epoch_losses.len(), 1);
        assert_ne!(fit.best_model.conv1.weights, model.conv1.weights);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data: Vec<Sample> = (0..6)
            .map(|i| Sample {
                input: tensor3(1, 8, 8, |j| ((i + j * 3) % 9) as f64 / 4.0 - 1.0),
                label: (i % 2) as u8,
            })
            .collect();
        let config = TrainConfig { epochs: 3, learning_rate: 1e-4, ..Default::default() };
        let run = |seed| {
            let model = CnnModel::new((1, 8, 8), seed).unwrap();
            fit_stage1(model, &data, &config).unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a.best_model, b.best_model);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn maxpool_tie_routes_to_first_index() {
        let input = vec![1.0, 1.0, 1.0, 1.0];
        let (out, arg) = maxpool2_forward(&input, (1, 2, 2));
        assert_eq!(out, vec![1.0]);
        assert_eq!(arg, vec![0]);
        let mut dinput = vec![0.0; 4];
        maxpool2_backward(&[2.0], &arg, &mut dinput);
        assert_eq!(dinput, vec![2.0, 0.0, 0.0, 0.0]);
    }
}
