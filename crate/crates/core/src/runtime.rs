//! Integer inference over the converted spiking network.
//!
//! Two execution paths share one semantics: [`infer_dense`] runs every layer
//! as full dense integer arithmetic and is the correctness oracle;
//! [`infer_event`] propagates only active spikes after the first
//! binarization. Potentials and spike traces are exactly equal between the
//! two; only the operation counts differ, which is what makes the counts a
//! usable energy proxy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge::EdgeLayer;
use crate::quant::{QuantizedCnn, QuantizedConv};

#[derive(Debug, Error, PartialEq)]
pub enum RuntimeError {
    #[error("input length {got} does not match input shape {shape:?}")]
    InputShape { shape: (usize, usize, usize), got: usize },
    #[error("edge layer input dimension {actual} does not match flattened feature size {expected}")]
    EdgeDimension { expected: usize, actual: usize },
    #[error("spike pattern invalid: {0}")]
    BadPattern(&'static str),
}

/// Sparse set of firing units over a dense extent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikePattern {
    pub dims: Vec<usize>,
    /// Strictly increasing flat indices of active units.
    pub active: Vec<u32>,
}

impl SpikePattern {
    pub fn from_grid(grid: &[u8], dims: Vec<usize>) -> Self {
        let active = grid
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0)
            .map(|(i, _)| i as u32)
            .collect();
        Self { dims, active }
    }

    pub fn empty(dims: Vec<usize>) -> Self {
        Self { dims, active: Vec::new() }
    }

    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn count(&self) -> usize {
        self.active.len()
    }

    pub fn density(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.count() as f64 / self.total() as f64
        }
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let total = self.total();
        let mut prev: Option<u32> = None;
        for &i in &self.active {
            if (i as usize) >= total {
                return Err(RuntimeError::BadPattern("index out of range"));
            }
            if let Some(p) = prev {
                if i <= p {
                    return Err(RuntimeError::BadPattern("indices not strictly increasing"));
                }
            }
            prev = Some(i);
        }
        Ok(())
    }

    /// Bit-packed view, one u64 per 64 flat positions.
    pub fn to_words(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.total().div_ceil(64)];
        for &i in &self.active {
            words[(i / 64) as usize] |= 1u64 << (i % 64);
        }
        words
    }

    /// The same pattern viewed as a flat vector.
    pub fn flattened(&self) -> SpikePattern {
        SpikePattern { dims: vec![self.total()], active: self.active.clone() }
    }
}

/// Multiply-accumulate and event bookkeeping for one inference.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    /// Dense multiply-accumulates, counted over the full kernel windows
    /// (zero-padded positions included).
    pub dense_macs: u64,
    /// Accumulations actually performed on the event path.
    pub event_accumulates: u64,
    /// Weight fetches performed on the event path.
    pub weight_fetches: u64,
}

impl OpCount {
    pub fn add(&mut self, other: &OpCount) {
        self.dense_macs += other.dense_macs;
        self.event_accumulates += other.event_accumulates;
        self.weight_fetches += other.weight_fetches;
    }
}

/// Network stages for per-layer count reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerStage {
    Conv1,
    Conv2,
    Readout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOps {
    pub stage: LayerStage,
    pub ops: OpCount,
}

/// Spike patterns recorded at every binarization and pooling stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrace {
    pub conv1: SpikePattern,
    pub pool1: SpikePattern,
    pub conv2: SpikePattern,
    pub pool2: SpikePattern,
}

impl SpikeTrace {
    /// The flattened feature pattern feeding the readout.
    pub fn flat(&self) -> SpikePattern {
        self.pool2.flattened()
    }
}

/// Result of one inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Readout potentials: one per edge neuron, empty for headless models.
    pub potentials: Vec<i32>,
    pub trace: SpikeTrace,
    pub ops: OpCount,
    pub layer_ops: Vec<LayerOps>,
}

/// The converted network: quantized feature stages plus an optional
/// attached edge readout. Immutable once constructed; inference is
/// reentrant.
#[derive(Debug, Clone)]
pub struct CsnnModel {
    pub net: QuantizedCnn,
    pub edge: Option<EdgeLayer>,
    /// conv2 weights transposed to `[in_c, ky, kx, out_c]` for the event path.
    conv2_by_input: Vec<i32>,
    /// Edge weights in column-major bit order for the event path.
    edge_columns: Vec<u64>,
    edge_words_per_col: usize,
}

/// Attach (or omit) an edge readout and prepare event-path layouts.
pub fn convert_to_csnn(
    net: QuantizedCnn,
    edge: Option<EdgeLayer>,
) -> Result<CsnnModel, RuntimeError> {
    let flat = net.shapes().flat_dim;
    if let Some(layer) = &edge {
        if layer.input_dim() != flat {
            return Err(RuntimeError::EdgeDimension { expected: flat, actual: layer.input_dim() });
        }
    }
    let conv2_by_input = transpose_conv_weights(&net.conv2);
    let (edge_columns, edge_words_per_col) = match &edge {
        Some(layer) => build_columns(layer),
        None => (Vec::new(), 0),
    };
    Ok(CsnnModel { net, edge, conv2_by_input, edge_columns, edge_words_per_col })
}

fn transpose_conv_weights(conv: &QuantizedConv) -> Vec<i32> {
    let (oc_n, ic_n, kh, kw) = (conv.out_channels, conv.in_channels, conv.kernel_h, conv.kernel_w);
    let mut out = vec![0i32; oc_n * ic_n * kh * kw];
    for oc in 0..oc_n {
        for ic in 0..ic_n {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = ((oc * ic_n + ic) * kh + ky) * kw + kx;
                    let dst = ((ic * kh + ky) * kw + kx) * oc_n + oc;
                    out[dst] = i32::from(conv.weights.values[src]);
                }
            }
        }
    }
    out
}

fn build_columns(layer: &EdgeLayer) -> (Vec<u64>, usize) {
    let words_per_col = layer.neurons().div_ceil(64);
    let mut cols = vec![0u64; layer.input_dim() * words_per_col];
    for n in 0..layer.neurons() {
        let row = layer.row_words(n);
        for (w, &bits) in row.iter().enumerate() {
            let mut rest = bits;
            while rest != 0 {
                let b = rest.trailing_zeros() as usize;
                let input = w * 64 + b;
                if input < layer.input_dim() {
                    cols[input * words_per_col + n / 64] |= 1u64 << (n % 64);
                }
                rest &= rest - 1;
            }
        }
    }
    (cols, words_per_col)
}

impl CsnnModel {
    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.net.input_shape
    }

    pub fn flat_dim(&self) -> usize {
        self.net.shapes().flat_dim
    }
}

/// Full dense integer inference; the reference semantics and MAC counter.
pub fn infer_dense(model: &CsnnModel, input: &[i8]) -> Result<Inference, RuntimeError> {
    let shapes = model.net.shapes();
    let (c, h, w) = model.net.input_shape;
    if input.len() != c * h * w {
        return Err(RuntimeError::InputShape { shape: model.net.input_shape, got: input.len() });
    }

    let input_i32: Vec<i32> = input.iter().map(|&v| i32::from(v)).collect();
    let mut conv1_ops = OpCount::default();
    let preact1 = conv2d_int_forward(&input_i32, (c, h, w), &model.net.conv1, &mut conv1_ops);
    let grid1 = binarize_grid(&preact1, model.net.thresholds.conv1);
    let conv1_dims = vec![shapes.conv1_out.0, shapes.conv1_out.1, shapes.conv1_out.2];
    let conv1_pat = SpikePattern::from_grid(&grid1, conv1_dims);

    let (pool1, _) = or_pool2(&grid1, shapes.conv1_out);
    let pool1_dims = vec![shapes.pool1_out.0, shapes.pool1_out.1, shapes.pool1_out.2];
    let pool1_pat = SpikePattern::from_grid(&pool1, pool1_dims);

    let pool1_i32: Vec<i32> = pool1.iter().map(|&v| i32::from(v)).collect();
    let mut conv2_ops = OpCount::default();
    let preact2 = conv2d_int_forward(&pool1_i32, shapes.pool1_out, &model.net.conv2, &mut conv2_ops);
    let grid2 = binarize_grid(&preact2, model.net.thresholds.conv2);
    let conv2_dims = vec![shapes.conv2_out.0, shapes.conv2_out.1, shapes.conv2_out.2];
    let conv2_pat = SpikePattern::from_grid(&grid2, conv2_dims);

    let (pool2, _) = or_pool2(&grid2, shapes.conv2_out);
    let pool2_dims = vec![shapes.pool2_out.0, shapes.pool2_out.1, shapes.pool2_out.2];
    let pool2_pat = SpikePattern::from_grid(&pool2, pool2_dims);

    let mut readout_ops = OpCount::default();
    let potentials = match &model.edge {
        Some(layer) => {
            let words = pool2_pat.flattened().to_words();
            readout_ops.dense_macs += (layer.neurons() * layer.input_dim()) as u64;
            layer.potentials(&words)
        }
        None => Vec::new(),
    };

    let mut ops = OpCount::default();
    ops.add(&conv1_ops);
    ops.add(&conv2_ops);
    ops.add(&readout_ops);
    Ok(Inference {
        potentials,
        trace: SpikeTrace { conv1: conv1_pat, pool1: pool1_pat, conv2: conv2_pat, pool2: pool2_pat },
        ops,
        layer_ops: vec![
            LayerOps { stage: LayerStage::Conv1, ops: conv1_ops },
            LayerOps { stage: LayerStage::Conv2, ops: conv2_ops },
            LayerOps { stage: LayerStage::Readout, ops: readout_ops },
        ],
    })
}

/// Event-driven inference. The first convolution sees non-binary input and
/// runs dense; every later stage accumulates only over active spikes.
/// Potentials and traces equal [`infer_dense`] exactly.
pub fn infer_event(model: &CsnnModel, input: &[i8]) -> Result<Inference, RuntimeError> {
    let shapes = model.net.shapes();
    let (c, h, w) = model.net.input_shape;
    if input.len() != c * h * w {
        return Err(RuntimeError::InputShape { shape: model.net.input_shape, got: input.len() });
    }

    let input_i32: Vec<i32> = input.iter().map(|&v| i32::from(v)).collect();
    let mut conv1_ops = OpCount::default();
    let preact1 = conv2d_int_forward(&input_i32, (c, h, w), &model.net.conv1, &mut conv1_ops);
    let grid1 = binarize_grid(&preact1, model.net.thresholds.conv1);
    let conv1_dims = vec![shapes.conv1_out.0, shapes.conv1_out.1, shapes.conv1_out.2];
    let conv1_pat = SpikePattern::from_grid(&grid1, conv1_dims);

    let (pool1, _) = or_pool2(&grid1, shapes.conv1_out);
    let pool1_dims = vec![shapes.pool1_out.0, shapes.pool1_out.1, shapes.pool1_out.2];
    let pool1_pat = SpikePattern::from_grid(&pool1, pool1_dims);

    // conv2, spike by spike. Accumulation grid is [oy][ox][oc] so the inner
    // filter loop is contiguous.
    let conv2 = &model.net.conv2;
    let (oc_n, kh, kw) = (conv2.out_channels, conv2.kernel_h, conv2.kernel_w);
    let (_, h2, w2) = shapes.pool1_out;
    let pad_h = (kh - 1) / 2;
    let pad_w = (kw - 1) / 2;
    let mut acc = vec![0i32; h2 * w2 * oc_n];
    for (pos, slot) in acc.chunks_exact_mut(oc_n).enumerate() {
        let _ = pos;
        for (s, b) in slot.iter_mut().zip(&conv2.bias) {
            *s = *b;
        }
    }
    let mut conv2_ops = OpCount::default();
    for &flat in &pool1_pat.active {
        let flat = flat as usize;
        let ci = flat / (h2 * w2);
        let iy = (flat / w2) % h2;
        let ix = flat % w2;
        for ky in 0..kh {
            let oy = iy + pad_h;
            if oy < ky || oy - ky >= h2 {
                continue;
            }
            let oy = oy - ky;
            for kx in 0..kw {
                let ox = ix + pad_w;
                if ox < kx || ox - kx >= w2 {
                    continue;
                }
                let ox = ox - kx;
                let wrow = &model.conv2_by_input[((ci * kh + ky) * kw + kx) * oc_n..][..oc_n];
                let slot = &mut acc[(oy * w2 + ox) * oc_n..][..oc_n];
                for (s, &wv) in slot.iter_mut().zip(wrow) {
                    *s += wv;
                }
                conv2_ops.event_accumulates += oc_n as u64;
                conv2_ops.weight_fetches += oc_n as u64;
            }
        }
    }

    // Binarize reading the transposed grid in canonical [oc][oy][ox] order.
    let theta2 = model.net.thresholds.conv2;
    let mut grid2 = vec![0u8; oc_n * h2 * w2];
    for oc in 0..oc_n {
        for oy in 0..h2 {
            for ox in 0..w2 {
                if acc[(oy * w2 + ox) * oc_n + oc] > theta2 {
                    grid2[(oc * h2 + oy) * w2 + ox] = 1;
                }
            }
        }
    }
    let conv2_dims = vec![shapes.conv2_out.0, shapes.conv2_out.1, shapes.conv2_out.2];
    let conv2_pat = SpikePattern::from_grid(&grid2, conv2_dims);

    let (pool2, _) = or_pool2(&grid2, shapes.conv2_out);
    let pool2_dims = vec![shapes.pool2_out.0, shapes.pool2_out.1, shapes.pool2_out.2];
    let pool2_pat = SpikePattern::from_grid(&pool2, pool2_dims);

    // Edge readout, column scan over active inputs only.
    let mut readout_ops = OpCount::default();
    let potentials = match &model.edge {
        Some(layer) => {
            let mut pots = vec![0i32; layer.neurons()];
            let wpc = model.edge_words_per_col;
            for &i in &pool2_pat.flattened().active {
                let col = &model.edge_columns[i as usize * wpc..(i as usize + 1) * wpc];
                for (word_idx, &word) in col.iter().enumerate() {
                    let mut rest = word;
                    while rest != 0 {
                        let b = rest.trailing_zeros() as usize;
                        pots[word_idx * 64 + b] += 1;
                        rest &= rest - 1;
                        readout_ops.event_accumulates += 1;
                        readout_ops.weight_fetches += 1;
                    }
                }
            }
            pots
        }
        None => Vec::new(),
    };

    let mut ops = OpCount::default();
    ops.add(&conv1_ops);
    ops.add(&conv2_ops);
    ops.add(&readout_ops);
    Ok(Inference {
        potentials,
        trace: SpikeTrace { conv1: conv1_pat, pool1: pool1_pat, conv2: conv2_pat, pool2: pool2_pat },
        ops,
        layer_ops: vec![
            LayerOps { stage: LayerStage::Conv1, ops: conv1_ops },
            LayerOps { stage: LayerStage::Conv2, ops: conv2_ops },
            LayerOps { stage: LayerStage::Readout, ops: readout_ops },
        ],
    })
}

/// Feature extraction only: the flattened spike pattern feeding the
/// readout. Runs the second convolution event-driven, so repeated feature
/// extraction over a dataset costs close to the sparse path.
pub fn flat_pattern(net: &QuantizedCnn, input: &[i8]) -> Result<SpikePattern, RuntimeError> {
    let shapes = net.shapes();
    let (c, h, w) = net.input_shape;
    if input.len() != c * h * w {
        return Err(RuntimeError::InputShape { shape: net.input_shape, got: input.len() });
    }
    let input_i32: Vec<i32> = input.iter().map(|&v| i32::from(v)).collect();
    let mut ops = OpCount::default();
    let preact1 = conv2d_int_forward(&input_i32, (c, h, w), &net.conv1, &mut ops);
    let grid1 = binarize_grid(&preact1, net.thresholds.conv1);
    let (pool1, _) = or_pool2(&grid1, shapes.conv1_out);
    let conv2_by_input = transpose_conv_weights(&net.conv2);

    let conv2 = &net.conv2;
    let (oc_n, kh, kw) = (conv2.out_channels, conv2.kernel_h, conv2.kernel_w);
    let (_, h2, w2) = shapes.pool1_out;
    let pad_h = (kh - 1) / 2;
    let pad_w = (kw - 1) / 2;
    let mut acc = vec![0i32; h2 * w2 * oc_n];
    for slot in acc.chunks_exact_mut(oc_n) {
        for (s, b) in slot.iter_mut().zip(&conv2.bias) {
            *s = *b;
        }
    }
    for (flat, _) in pool1.iter().enumerate().filter(|(_, v)| **v != 0) {
        let ci = flat / (h2 * w2);
        let iy = (flat / w2) % h2;
        let ix = flat % w2;
        for ky in 0..kh {
            if iy + pad_h < ky || iy + pad_h - ky >= h2 {
                continue;
            }
            let oy = iy + pad_h - ky;
            for kx in 0..kw {
                if ix + pad_w < kx || ix + pad_w - kx >= w2 {
                    continue;
                }
                let ox = ix + pad_w - kx;
                let wrow = &conv2_by_input[((ci * kh + ky) * kw + kx) * oc_n..][..oc_n];
                let slot = &mut acc[(oy * w2 + ox) * oc_n..][..oc_n];
                for (s, &wv) in slot.iter_mut().zip(wrow) {
                    *s += wv;
                }
            }
        }
    }
    let theta2 = net.thresholds.conv2;
    let mut grid2 = vec![0u8; oc_n * h2 * w2];
    for oc in 0..oc_n {
        for oy in 0..h2 {
            for ox in 0..w2 {
                if acc[(oy * w2 + ox) * oc_n + oc] > theta2 {
                    grid2[(oc * h2 + oy) * w2 + ox] = 1;
                }
            }
        }
    }
    let (pool2, _) = or_pool2(&grid2, shapes.conv2_out);
    Ok(SpikePattern::from_grid(&pool2, vec![shapes.flat_dim]))
}

// ---------------------------------------------------------------------------
// Integer layer primitives
// ---------------------------------------------------------------------------

/// Dense integer convolution with zero (`same`) padding, stride 1, i32
/// accumulators. Counts the full closed-form MAC total
/// `out_c × h × w × kh × kw × in_c` into `ops.dense_macs`.
pub fn conv2d_int_forward(
    input: &[i32],
    in_shape: (usize, usize, usize),
    conv: &QuantizedConv,
    ops: &mut OpCount,
) -> Vec<i32> {
    let (in_c, h, w) = in_shape;
    debug_assert_eq!(in_c, conv.in_channels);
    let (kh, kw) = (conv.kernel_h, conv.kernel_w);
    let pad_h = (kh - 1) / 2;
    let pad_w = (kw - 1) / 2;
    let pw = w + kw - 1;

    // Zero-padded copies make every kernel tap a full-width row operation.
    let mut padded = vec![0i32; in_c * (h + kh - 1) * pw];
    for ic in 0..in_c {
        for y in 0..h {
            let src = &input[(ic * h + y) * w..(ic * h + y + 1) * w];
            let dst_base = ic * (h + kh - 1) * pw + (y + pad_h) * pw + pad_w;
            padded[dst_base..dst_base + w].copy_from_slice(src);
        }
    }

    let mut out = vec![0i32; conv.out_channels * h * w];
    for oc in 0..conv.out_channels {
        let out_map = &mut out[oc * h * w..(oc + 1) * h * w];
        let b = conv.bias[oc];
        for v in out_map.iter_mut() {
            *v = b;
        }
        for ic in 0..in_c {
            let pmap = &padded[ic * (h + kh - 1) * pw..(ic + 1) * (h + kh - 1) * pw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let weight =
                        i32::from(conv.weights.values[((oc * in_c + ic) * kh + ky) * kw + kx]);
                    for oy in 0..h {
                        let prow = &pmap[(oy + ky) * pw + kx..(oy + ky) * pw + kx + w];
                        let orow = &mut out_map[oy * w..(oy + 1) * w];
                        for (o, &p) in orow.iter_mut().zip(prow) {
                            *o += weight * p;
                        }
                    }
                }
            }
        }
    }
    ops.dense_macs += (conv.out_channels * h * w * kh * kw * in_c) as u64;
    out
}

/// Strict threshold comparison into a 0/1 grid.
pub fn binarize_grid(preact: &[i32], threshold: i32) -> Vec<u8> {
    preact.iter().map(|&v| u8::from(v > threshold)).collect()
}

/// 2×2 stride-2 pooling on a binary grid: logical OR over each window,
/// equivalent to max pooling on {0, 1} values. Also returns, per output
/// cell, the flat input index a max-pool would route gradient to (first
/// spiking position in row-major window order, or the window origin).
pub fn or_pool2(grid: &[u8], in_shape: (usize, usize, usize)) -> (Vec<u8>, Vec<u32>) {
    let (c, h, w) = in_shape;
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![0u8; c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let map = &grid[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (2 * oy) * w + 2 * ox;
                let mut val = 0u8;
                let mut idx = base;
                for (dy, dx) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)] {
                    let i = base + dy * w + dx;
                    if map[i] != 0 {
                        val = 1;
                        idx = i;
                        break;
                    }
                }
                out[(ch * oh + oy) * ow + ox] = val;
                arg[(ch * oh + oy) * ow + ox] = (ch * h * w + idx) as u32;
            }
        }
    }
    (out, arg)
}
