//! 8-bit weight quantization, firing-threshold calibration, single-bit
//! activation conversion and quantization-aware retraining.
//!
//! Weights quantize with symmetric max-abs scaling to int8. Activations
//! become spikes by strict threshold comparison of the integer
//! pre-activations; thresholds come from a percentile of positive
//! pre-activations over a calibration set. Retraining keeps float shadow
//! parameters, runs the quantized integer forward pass, and passes
//! gradients straight through the rounding, with a rectangular surrogate
//! window standing in for the spike nonlinearity's derivative.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::{binarize_grid, conv2d_int_forward, or_pool2, OpCount, SpikePattern};
use crate::stats::{compute_metrics, MetricsReport, StatsError};
use crate::tensor::{
    conv2d_backward, weighted_cross_entropy, weighted_cross_entropy_grad, CnnGrads, CnnModel,
    Conv2d, Dense, LayerShapes, TensorError,
};

/// Integer biases are clamped to this magnitude so i32 accumulators cannot
/// overflow on any layer of the fixed architecture.
const BIAS_LIMIT: i64 = 1 << 24;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("percentile must lie in (0, 100], got {0}")]
    BadPercentile(f64),
    #[error("input length {got} does not match input shape {shape:?}")]
    InputShape { shape: (usize, usize, usize), got: usize },
    #[error("invalid retrain config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Integer tensor with the scale that maps values back to floats
/// (`value × scale ≈ original`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub values: Vec<i8>,
    pub scale: f64,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v) * self.scale).collect()
    }
}

/// Symmetric max-abs int8 quantization; all-zero input keeps scale 1.
/// Rounding is half away from zero.
pub fn quantize_weights(shape: Vec<usize>, values: &[f64]) -> QuantizedTensor {
    let (ints, scale) = quantize_slice(values);
    QuantizedTensor { shape, values: ints, scale }
}

pub(crate) fn quantize_slice(values: &[f64]) -> (Vec<i8>, f64) {
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max_abs == 0.0 { 1.0 } else { max_abs / 127.0 };
    let ints = values
        .iter()
        .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    (ints, scale)
}

/// Per-segment symmetric int8 quantization of measurement data:
/// `v → round(127 v / max|v|)`, all-zero input maps to zeros.
pub fn quantize_data(values: &[f64]) -> Vec<i8> {
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| (127.0 * v / max_abs).round().clamp(-127.0, 127.0) as i8)
        .collect()
}

/// Per-layer firing thresholds in integer pre-activation units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub conv1: i32,
    pub conv2: i32,
}

impl Default for ThresholdSet {
    fn default() -> Self {
        Self { conv1: 0, conv2: 0 }
    }
}

/// Quantized convolution: int8 weights with one scale, biases kept as i32
/// in weight-scale units so they add directly into the integer
/// pre-activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedConv {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weights: QuantizedTensor,
    pub bias: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedDense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: QuantizedTensor,
    pub bias: Vec<i32>,
}

/// Integer mirror of the float network, plus firing thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedCnn {
    pub input_shape: (usize, usize, usize),
    pub conv1: QuantizedConv,
    pub conv2: QuantizedConv,
    pub dense: QuantizedDense,
    pub thresholds: ThresholdSet,
}

impl QuantizedCnn {
    pub fn shapes(&self) -> LayerShapes {
        LayerShapes::for_input(self.input_shape).expect("validated at construction")
    }
}

fn quantize_bias(bias: &[f64], scale: f64) -> Vec<i32> {
    bias.iter()
        .map(|&b| {
            let v = (b / scale).round() as i64;
            v.clamp(-BIAS_LIMIT, BIAS_LIMIT) as i32
        })
        .collect()
}

/// Quantize every parameter tensor of a float model. Thresholds start at
/// zero; calibrate them before inference.
pub fn quantize_cnn(model: &CnnModel) -> QuantizedCnn {
    let conv = |c: &Conv2d| {
        let weights = quantize_weights(
            vec![c.out_channels, c.in_channels, c.kernel_h, c.kernel_w],
            &c.weights,
        );
        let bias = quantize_bias(&c.bias, weights.scale);
        QuantizedConv {
            out_channels: c.out_channels,
            in_channels: c.in_channels,
            kernel_h: c.kernel_h,
            kernel_w: c.kernel_w,
            weights,
            bias,
        }
    };
    let dense = {
        let weights = quantize_weights(vec![model.dense.out_dim, model.dense.in_dim], &model.dense.weights);
        let bias = quantize_bias(&model.dense.bias, weights.scale);
        QuantizedDense { out_dim: model.dense.out_dim, in_dim: model.dense.in_dim, weights, bias }
    };
    QuantizedCnn {
        input_shape: model.input_shape,
        conv1: conv(&model.conv1),
        conv2: conv(&model.conv2),
        dense,
        thresholds: ThresholdSet::default(),
    }
}

/// Strict-threshold binarization of integer pre-activations into a spike
/// pattern: position `i` fires iff `preact[i] > threshold`.
pub fn binarize(preact: &[i32], dims: Vec<usize>, threshold: i32) -> SpikePattern {
    let grid = binarize_grid(preact, threshold);
    SpikePattern::from_grid(&grid, dims)
}

// ---------------------------------------------------------------------------
// Threshold calibration
// ---------------------------------------------------------------------------

/// Growable exact histogram of positive i32 values.
struct PositiveHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl PositiveHistogram {
    fn new() -> Self {
        Self { counts: Vec::new(), total: 0 }
    }

    fn record(&mut self, value: i32) {
        if value <= 0 {
            return;
        }
        let idx = value as usize;
        if idx >= self.counts.len() {
            self.counts.resize(idx + 1, 0);
        }
        self.counts[idx] += 1;
        self.total += 1;
    }

    /// Nearest-rank percentile: the k-th smallest with k = ceil(p/100 · n).
    fn percentile(&self, p: f64) -> Option<i32> {
        if self.total == 0 {
            return None;
        }
        let k = ((p / 100.0) * self.total as f64).ceil().max(1.0) as u64;
        let mut cum = 0u64;
        for (value, &count) in self.counts.iter().enumerate() {
            cum += count;
            if cum >= k {
                return Some(value as i32);
            }
        }
        Some((self.counts.len() - 1) as i32)
    }
}

/// Calibrate per-layer firing thresholds: the p-th percentile (default
/// p = 50) of positive integer pre-activations observed over the
/// calibration inputs. Layers that never go positive get threshold 0.
pub fn calibrate_thresholds(
    model: &QuantizedCnn,
    calibration: &[&[i8]],
    percentile: f64,
) -> Result<ThresholdSet, QuantError> {
    if calibration.is_empty() {
        return Err(QuantError::EmptyCalibration);
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(QuantError::BadPercentile(percentile));
    }
    let shapes = model.shapes();
    let (c, h, w) = model.input_shape;
    let mut ops = OpCount::default();

    let mut hist1 = PositiveHistogram::new();
    for input in calibration {
        if input.len() != c * h * w {
            return Err(QuantError::InputShape { shape: model.input_shape, got: input.len() });
        }
        let input_i32: Vec<i32> = input.iter().map(|&v| i32::from(v)).collect();
        let preact1 = conv2d_int_forward(&input_i32, (c, h, w), &model.conv1, &mut ops);
        for v in preact1 {
            hist1.record(v);
        }
    }
    let conv1 = hist1.percentile(percentile).unwrap_or(0);

    let mut hist2 = PositiveHistogram::new();
    for input in calibration {
        let input_i32: Vec<i32> = input.iter().map(|&v| i32::from(v)).collect();
        let preact1 = conv2d_int_forward(&input_i32, (c, h, w), &model.conv1, &mut ops);
        let grid1 = binarize_grid(&preact1, conv1);
        let (pool1, _) = or_pool2(&grid1, shapes.conv1_out);
        let pool1_i32: Vec<i32> = pool1.iter().map(|&v| i32::from(v)).collect();
        let preact2 = conv2d_int_forward(&pool1_i32, shapes.pool1_out, &model.conv2, &mut ops);
        for v in preact2 {
            hist2.record(v);
        }
    }
    let conv2 = hist2.percentile(percentile).unwrap_or(0);

    Ok(ThresholdSet { conv1, conv2 })
}

// ---------------------------------------------------------------------------
// Quantized forward / evaluation
// ---------------------------------------------------------------------------

struct QuantCache {
    input_f: Vec<f64>,
    preact1: Vec<i32>,
    pool1: Vec<u8>,
    argmax1: Vec<u32>,
    preact2: Vec<i32>,
    pool2: Vec<u8>,
    argmax2: Vec<u32>,
    logits_int: [i32; 2],
}

fn quantized_forward(q: &QuantizedCnn, input: &[i8]) -> Result<QuantCache, QuantError> {
    let shapes = q.shapes();
    let (c, h, w) = q.input_shape;
    if input.len() != c * h * w {
        return Err(QuantError::InputShape { shape: q.input_shape, got: input.len() });
    }
    let mut ops = OpCount::default();
    let input_i32: Vec<i32> = input.iter().map(|&v| i32::from(v)).collect();
    let preact1 = conv2d_int_forward(&input_i32, (c, h, w), &q.conv1, &mut ops);
    let grid1 = binarize_grid(&preact1, q.thresholds.conv1);
    let (pool1, argmax1) = or_pool2(&grid1, shapes.conv1_out);
    let pool1_i32: Vec<i32> = pool1.iter().map(|&v| i32::from(v)).collect();
    let preact2 = conv2d_int_forward(&pool1_i32, shapes.pool1_out, &q.conv2, &mut ops);
    let grid2 = binarize_grid(&preact2, q.thresholds.conv2);
    let (pool2, argmax2) = or_pool2(&grid2, shapes.conv2_out);

    let mut logits_int = [0i32; 2];
    for j in 0..2 {
        let row = &q.dense.weights.values[j * q.dense.in_dim..(j + 1) * q.dense.in_dim];
        let mut acc = q.dense.bias[j];
        for (&wv, &s) in row.iter().zip(&pool2) {
            acc += i32::from(wv) * i32::from(s);
        }
        logits_int[j] = acc;
    }
    Ok(QuantCache {
        input_f: input.iter().map(|&v| f64::from(v)).collect(),
        preact1,
        pool1,
        argmax1,
        preact2,
        pool2,
        argmax2,
        logits_int,
    })
}

/// Integer logits of the quantized network (feature stages + dense readout).
pub fn quantized_logits(q: &QuantizedCnn, input: &[i8]) -> Result<[i32; 2], QuantError> {
    Ok(quantized_forward(q, input)?.logits_int)
}

/// Argmax class of the integer logits; ties go to class 0.
pub fn predict_quantized(q: &QuantizedCnn, input: &[i8]) -> Result<u8, QuantError> {
    let logits = quantized_logits(q, input)?;
    Ok(u8::from(logits[1] > logits[0]))
}

/// Evaluate the quantized model over labelled int8 inputs.
pub fn evaluate_quantized(
    q: &QuantizedCnn,
    samples: &[(&[i8], u8)],
) -> Result<(Vec<u8>, MetricsReport), QuantError> {
    if samples.is_empty() {
        return Err(QuantError::EmptyDataset);
    }
    let predictions: Vec<u8> = samples
        .par_iter()
        .map(|(input, _)| predict_quantized(q, input))
        .collect::<Result<_, _>>()?;
    let labels: Vec<u8> = samples.iter().map(|(_, l)| *l).collect();
    let metrics = compute_metrics(&predictions, &labels)?;
    Ok((predictions, metrics))
}

// ---------------------------------------------------------------------------
// Quantization-aware retraining
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QatConfig {
    /// Epoch cap for retraining.
    pub max_epochs: usize,
    /// Stop once accuracy, TPR and TNR all exceed this on the training
    /// partition.
    pub target: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub class_weights: [f64; 2],
}

impl Default for QatConfig {
    fn default() -> Self {
        Self {
            max_epochs: 150,
            target: 0.90,
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
            class_weights: [1.0, 1.0],
        }
    }
}

#[derive(Debug)]
pub struct QatOutcome {
    pub model: QuantizedCnn,
    /// Training epochs actually run before the stop rule fired (0 when the
    /// incoming model already passed).
    pub epochs_trained: usize,
    /// Metrics on the training partition at exit.
    pub train_metrics: MetricsReport,
}

/// Float shadow parameters tracked during retraining.
struct Shadow {
    conv1_w: Vec<f64>,
    conv1_b: Vec<f64>,
    conv2_w: Vec<f64>,
    conv2_b: Vec<f64>,
    dense_w: Vec<f64>,
    dense_b: Vec<f64>,
}

impl Shadow {
    fn from_quantized(q: &QuantizedCnn) -> Self {
        let debias = |b: &[i32], s: f64| b.iter().map(|&v| f64::from(v) * s).collect();
        Self {
            conv1_w: q.conv1.weights.dequantize(),
            conv1_b: debias(&q.conv1.bias, q.conv1.weights.scale),
            conv2_w: q.conv2.weights.dequantize(),
            conv2_b: debias(&q.conv2.bias, q.conv2.weights.scale),
            dense_w: q.dense.weights.dequantize(),
            dense_b: debias(&q.dense.bias, q.dense.weights.scale),
        }
    }

    /// Requantize with fresh max-abs scales, so the returned integers are
    /// exactly `quantize(shadow)`.
    fn quantize(&self, template: &QuantizedCnn) -> QuantizedCnn {
        let conv = |src: &QuantizedConv, w: &[f64], b: &[f64]| {
            let weights = quantize_weights(src.weights.shape.clone(), w);
            let bias = quantize_bias(b, weights.scale);
            QuantizedConv { weights, bias, ..*src }
        };
        let dense = {
            let weights = quantize_weights(template.dense.weights.shape.clone(), &self.dense_w);
            let bias = quantize_bias(&self.dense_b, weights.scale);
            QuantizedDense {
                out_dim: template.dense.out_dim,
                in_dim: template.dense.in_dim,
                weights,
                bias,
            }
        };
        QuantizedCnn {
            input_shape: template.input_shape,
            conv1: conv(&template.conv1, &self.conv1_w, &self.conv1_b),
            conv2: conv(&template.conv2, &self.conv2_w, &self.conv2_b),
            dense,
            thresholds: template.thresholds,
        }
    }
}

/// Dequantized layer views for the backward pass of one epoch.
struct EpochContext {
    q: QuantizedCnn,
    deq_conv2: Conv2d,
    deq_dense: Dense,
    pool1_shape: (usize, usize, usize),
}

impl EpochContext {
    fn build(shadow: &Shadow, template: &QuantizedCnn) -> Self {
        let q = shadow.quantize(template);
        let shapes = q.shapes();
        let deq_conv2 = Conv2d {
            out_channels: q.conv2.out_channels,
            in_channels: q.conv2.in_channels,
            kernel_h: q.conv2.kernel_h,
            kernel_w: q.conv2.kernel_w,
            weights: q.conv2.weights.dequantize(),
            bias: q.conv2.bias.iter().map(|&b| f64::from(b) * q.conv2.weights.scale).collect(),
        };
        let deq_dense = Dense {
            out_dim: q.dense.out_dim,
            in_dim: q.dense.in_dim,
            weights: q.dense.weights.dequantize(),
            bias: q.dense.bias.iter().map(|&b| f64::from(b) * q.dense.weights.scale).collect(),
        };
        Self {
            q,
            deq_conv2,
            deq_dense,
            pool1_shape: shapes.pool1_out,
        }
    }
}

/// Rectangular surrogate derivative of the spike nonlinearity: unit mass
/// over the window `0 < preact ≤ 2·max(θ, 1)` in integer units.
fn surrogate_window(preact: i32, theta: i32, scale: f64) -> f64 {
    let t = i64::from(theta.max(1));
    if preact > 0 && i64::from(preact) <= 2 * t {
        1.0 / (2.0 * t as f64 * scale)
    } else {
        0.0
    }
}

fn qat_sample_gradients(
    ctx: &EpochContext,
    input: &[i8],
    label: u8,
    class_weights: &[f64; 2],
) -> Result<(f64, CnnGrads), QuantError> {
    let cache = quantized_forward(&ctx.q, input)?;
    let s1 = ctx.q.conv1.weights.scale;
    let s2 = ctx.q.conv2.weights.scale;
    let s3 = ctx.q.dense.weights.scale;

    let logits_f = [f64::from(cache.logits_int[0]) * s3, f64::from(cache.logits_int[1]) * s3];
    let loss = weighted_cross_entropy(&logits_f, label as usize, class_weights)?;
    let dlogits = weighted_cross_entropy_grad(&logits_f, label as usize, class_weights);

    let mut grads = CnnGrads {
        conv1_w: vec![0.0; ctx.q.conv1.weights.values.len()],
        conv1_b: vec![0.0; ctx.q.conv1.bias.len()],
        conv2_w: vec![0.0; ctx.q.conv2.weights.values.len()],
        conv2_b: vec![0.0; ctx.q.conv2.bias.len()],
        dense_w: vec![0.0; ctx.q.dense.weights.values.len()],
        dense_b: vec![0.0; ctx.q.dense.bias.len()],
    };

    // Dense backward over the binary feature vector.
    let in_dim = ctx.q.dense.in_dim;
    let mut dflat = vec![0.0; in_dim];
    for j in 0..2 {
        grads.dense_b[j] = dlogits[j];
        let row = &ctx.deq_dense.weights[j * in_dim..(j + 1) * in_dim];
        let grow = &mut grads.dense_w[j * in_dim..(j + 1) * in_dim];
        for i in 0..in_dim {
            grow[i] = dlogits[j] * f64::from(cache.pool2[i]);
            dflat[i] += dlogits[j] * row[i];
        }
    }

    // Pool2 routing, then the spike surrogate for conv2.
    let mut dspike2 = vec![0.0; cache.preact2.len()];
    for (d, &idx) in dflat.iter().zip(&cache.argmax2) {
        dspike2[idx as usize] += *d;
    }
    let theta2 = ctx.q.thresholds.conv2;
    let mut dpreact2 = dspike2;
    for (d, &p) in dpreact2.iter_mut().zip(&cache.preact2) {
        *d *= surrogate_window(p, theta2, s2);
    }

    let pool1_f: Vec<f64> = cache.pool1.iter().map(|&v| f64::from(v)).collect();
    let mut dpool1 = vec![0.0; pool1_f.len()];
    conv2d_backward(
        &pool1_f,
        ctx.pool1_shape,
        &ctx.deq_conv2,
        &dpreact2,
        &mut grads.conv2_w,
        &mut grads.conv2_b,
        Some(&mut dpool1),
    );

    // Pool1 routing and the conv1 surrogate.
    let mut dspike1 = vec![0.0; cache.preact1.len()];
    for (d, &idx) in dpool1.iter().zip(&cache.argmax1) {
        dspike1[idx as usize] += *d;
    }
    let theta1 = ctx.q.thresholds.conv1;
    let mut dpreact1 = dspike1;
    for (d, &p) in dpreact1.iter_mut().zip(&cache.preact1) {
        *d *= surrogate_window(p, theta1, s1);
    }

    let conv1_view = Conv2d {
        out_channels: ctx.q.conv1.out_channels,
        in_channels: ctx.q.conv1.in_channels,
        kernel_h: ctx.q.conv1.kernel_h,
        kernel_w: ctx.q.conv1.kernel_w,
        weights: Vec::new(), // input gradient not needed
        bias: Vec::new(),
    };
    conv2d_backward(
        &cache.input_f,
        ctx.q.input_shape,
        &conv1_view,
        &dpreact1,
        &mut grads.conv1_w,
        &mut grads.conv1_b,
        None,
    );

    Ok((loss, grads))
}

fn metrics_pass(m: &MetricsReport, target: f64) -> bool {
    m.accuracy > target
        && m.tpr.is_some_and(|v| v > target)
        && m.tnr.is_some_and(|v| v > target)
}

/// Retrain the quantized model until accuracy, TPR and TNR all exceed the
/// target on the training partition, or the epoch cap is reached.
pub fn qat_retrain(
    start: &QuantizedCnn,
    data: &[(&[i8], u8)],
    config: &QatConfig,
) -> Result<QatOutcome, QuantError> {
    if data.is_empty() {
        return Err(QuantError::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(QuantError::InvalidConfig("batch size must be >= 1"));
    }
    if !(config.learning_rate > 0.0) {
        return Err(QuantError::InvalidConfig("learning rate must be positive"));
    }

    let mut shadow = Shadow::from_quantized(start);
    let mut velocity = CnnGrads {
        conv1_w: vec![0.0; shadow.conv1_w.len()],
        conv1_b: vec![0.0; shadow.conv1_b.len()],
        conv2_w: vec![0.0; shadow.conv2_w.len()],
        conv2_b: vec![0.0; shadow.conv2_b.len()],
        dense_w: vec![0.0; shadow.dense_w.len()],
        dense_b: vec![0.0; shadow.dense_b.len()],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..=config.max_epochs {
        let ctx = EpochContext::build(&shadow, start);
        let (_, metrics) = evaluate_quantized(&ctx.q, data)?;
        if metrics_pass(&metrics, config.target) || epoch == config.max_epochs {
            return Ok(QatOutcome { model: ctx.q, epochs_trained: epoch, train_metrics: metrics });
        }

        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, CnnGrads), QuantError>> = chunk
                .par_iter()
                .map(|&i| qat_sample_gradients(&ctx, data[i].0, data[i].1, &config.class_weights))
                .collect();
            let mut total: Option<CnnGrads> = None;
            for r in results {
                let (_, g) = r?;
                match &mut total {
                    Some(t) => {
                        for (a, b) in [
                            (&mut t.conv1_w, &g.conv1_w),
                            (&mut t.conv1_b, &g.conv1_b),
                            (&mut t.conv2_w, &g.conv2_w),
                            (&mut t.conv2_b, &g.conv2_b),
                            (&mut t.dense_w, &g.dense_w),
                            (&mut t.dense_b, &g.dense_b),
                        ] {
                            for (x, y) in a.iter_mut().zip(b) {
                                *x += *y;
                            }
                        }
                    }
                    None => total = Some(g),
                }
            }
            let total = total.expect("nonempty chunk");
            let inv = 1.0 / chunk.len() as f64;
            let lr = config.learning_rate;
            let mu = config.momentum;
            let clamp1 = 127.0 * ctx.q.conv1.weights.scale;
            let clamp2 = 127.0 * ctx.q.conv2.weights.scale;
            let clamp3 = 127.0 * ctx.q.dense.weights.scale;
            let updates: [(&mut Vec<f64>, &mut Vec<f64>, &Vec<f64>, Option<f64>); 6] = [
                (&mut shadow.conv1_w, &mut velocity.conv1_w, &total.conv1_w, Some(clamp1)),
                (&mut shadow.conv1_b, &mut velocity.conv1_b, &total.conv1_b, None),
                (&mut shadow.conv2_w, &mut velocity.conv2_w, &total.conv2_w, Some(clamp2)),
                (&mut shadow.conv2_b, &mut velocity.conv2_b, &total.conv2_b, None),
                (&mut shadow.dense_w, &mut velocity.dense_w, &total.dense_w, Some(clamp3)),
                (&mut shadow.dense_b, &mut velocity.dense_b, &total.dense_b, None),
            ];
            for (param, vel, grad, clamp) in updates {
                for ((w, v), g) in param.iter_mut().zip(vel.iter_mut()).zip(grad) {
                    *v = mu * *v + *g * inv;
                    *w -= lr * *v;
                    if let Some(limit) = clamp {
                        *w = w.clamp(-limit, limit);
                    }
                }
            }
        }
    }
    unreachable!("loop returns at the epoch cap");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quantize_weights_zero_case() {
        let q = quantize_weights(vec![3], &[0.0, 0.0, 0.0]);
        assert_eq!(q.values, vec![0, 0, 0]);
        assert_eq!(q.scale, 1.0);
    }

    #[test]
    fn quantize_weights_hand_case() {
        let q = quantize_weights(vec![3], &[-1.0, 0.5, 1.0]);
        assert!((q.scale - 1.0 / 127.0).abs() < 1e-15);
        assert_eq!(q.values, vec![-127, 64, 127]);
    }

    #[test]
    fn quantize_roundtrip_bound() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64 - 50.0) * 0.037).collect();
        let q = quantize_weights(vec![100], &values);
        for (&v, &orig) in q.values.iter().zip(&values) {
            assert!((f64::from(v) * q.scale - orig).abs() <= q.scale / 2.0 + 1e-12);
        }
        assert!(q.values.iter().all(|v| (-127..=127).contains(v)));
    }

    #[test]
    fn quantize_data_endpoints() {
        let out = quantize_data(&[-100.0, 0.0, 100.0]);
        assert_eq!(out, vec![-127, 0, 127]);
        assert_eq!(quantize_data(&[0.0, 0.0]), vec![0, 0]);
    }

    #[test]
    fn quantize_data_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..500).map(|_| rng.random_range(-80.0..80.0)).collect();
        let out = quantize_data(&values);
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (&o, &v) in out.iter().zip(&values) {
            let expect = (127.0 * v / max_abs).round().clamp(-127.0, 127.0) as i8;
            assert_eq!(o, expect);
        }
    }

    #[test]
    fn binarize_strict_and_monotone() {
        let p = binarize(&[-1, 0, 3], vec![3], 1);
        assert_eq!(p.active, vec![2]);
        // Threshold at the maximum silences everything.
        let p = binarize(&[5, 2, 5], vec![3], 5);
        assert!(p.active.is_empty());
        // Raising inputs elementwise can only add spikes.
        let lo = binarize(&[1, 4, -2, 7], vec![4], 3);
        let hi = binarize(&[2, 6, 0, 9], vec![4], 3);
        for a in &lo.active {
            assert!(hi.active.contains(a));
        }
        // Re-binarizing a 0/1 pattern at threshold 0 is the identity.
        let grid: Vec<i32> = vec![0, 1, 1, 0];
        let once = binarize(&grid, vec![4], 0);
        let as_grid: Vec<i32> = (0..4).map(|i| i32::from(once.active.contains(&i))).collect();
        let twice = binarize(&as_grid, vec![4], 0);
        assert_eq!(once.active, twice.active);
    }

    #[test]
    fn histogram_percentile_constant_and_negative() {
        let mut h = PositiveHistogram::new();
        for _ in 0..7 {
            h.record(10);
        }
        assert_eq!(h.percentile(50.0), Some(10));
        let mut h = PositiveHistogram::new();
        h.record(-5);
        h.record(0);
        assert_eq!(h.percentile(50.0), None);
    }

    #[test]
    fn histogram_percentile_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(1..200usize);
            let values: Vec<i32> = (0..n).map(|_| rng.random_range(1..500)).collect();
            let p = rng.random_range(1.0..100.0f64);
            let mut h = PositiveHistogram::new();
            for &v in &values {
                h.record(v);
            }
            let mut sorted = values.clone();
            sorted.sort_unstable();
            let k = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
            assert_eq!(h.percentile(p), Some(sorted[k - 1]), "n={n} p={p}");
        }
    }

    #[test]
    fn calibration_constant_preactivation() {
        // One input channel of ones, a single 1×1 identity-ish conv is not
        // expressible in the fixed net; instead check via a small net whose
        // conv1 bias dominates: preacts equal the bias everywhere.
        let model = CnnModel::new((1, 8, 12), 0).unwrap();
        let mut q = quantize_cnn(&model);
        for v in q.conv1.weights.values.iter_mut() {
            *v = 0;
        }
        for b in q.conv1.bias.iter_mut() {
            *b = 10;
        }
        let input = vec![0i8; 96];
        let t = calibrate_thresholds(&q, &[&input], 50.0).unwrap();
        assert_eq!(t.conv1, 10);
    }

    #[test]
    fn calibration_all_negative_floors_to_zero() {
        let model = CnnModel::new((1, 8, 12), 0).unwrap();
        let mut q = quantize_cnn(&model);
        for v in q.conv1.weights.values.iter_mut() {
            *v = 0;
        }
        for b in q.conv1.bias.iter_mut() {
            *b = -3;
        }
        for v in q.conv2.weights.values.iter_mut() {
            *v = 0;
        }
        for b in q.conv2.bias.iter_mut() {
            *b = -3;
        }
        let input = vec![1i8; 96];
        let t = calibrate_thresholds(&q, &[&input], 50.0).unwrap();
        assert_eq!(t, ThresholdSet { conv1: 0, conv2: 0 });
        assert!(calibrate_thresholds(&q, &[], 50.0).is_err());
    }

    #[test]
    fn shadow_roundtrip_is_exact() {
        let model = CnnModel::new((1, 8, 12), 5).unwrap();
        let q = quantize_cnn(&model);
        let shadow = Shadow::from_quantized(&q);
        let again = shadow.quantize(&q);
        // Requantizing the dequantized model reproduces the integers.
        assert_eq!(again.conv1.weights.values, q.conv1.weights.values);
        assert_eq!(again.conv2.weights.values, q.conv2.weights.values);
        assert_eq!(again.dense.weights.values, q.dense.weights.values);
    }

    #[test]
    fn qat_early_stop_on_passing_model() {
        // A model that classifies the toy set perfectly stops at epoch 0.
        let model = CnnModel::new((1, 8, 12), 7).unwrap();
        let mut q = quantize_cnn(&model);
        q.thresholds = ThresholdSet { conv1: 0, conv2: 0 };
        // Build inputs labelled by the model's own predictions, so the
        // epoch-0 metric check passes by construction (both classes
        // required for defined rates; skew the search until we get both).
        let mut samples: Vec<(Vec<i8>, u8)> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        while samples.len() < 12
            || !samples.iter().any(|(_, l)| *l == 0)
            || !samples.iter().any(|(_, l)| *l == 1)
        {
            let input: Vec<i8> = (0..96).map(|_| rng.random_range(-90..90i32) as i8).collect();
            let label = predict_quantized(&q, &input).unwrap();
            samples.push((input, label));
        }
        let views: Vec<(&[i8], u8)> = samples.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        let out = qat_retrain(&q, &views, &QatConfig::default()).unwrap();
        assert_eq!(out.epochs_trained, 0);
        assert_eq!(out.model.conv1.weights.values, q.conv1.weights.values);
    }

    #[test]
    fn tensor_quantize_helper_agrees_with_struct_path() {
        let t = Tensor::new(vec![4], vec![0.3, -0.9, 0.1, 0.9]).unwrap();
        let q = quantize_weights(vec![4], t.data());
        let (vals, scale) = quantize_slice(t.data());
        assert_eq!(q.values, vals);
        assert_eq!(q.scale, scale);
    }
}
