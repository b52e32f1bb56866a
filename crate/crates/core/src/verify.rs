//! Self-contained invariant checks runnable from the command line and the
//! acceptance suite: event/dense oracle equivalence, layer gradient checks
//! against central finite differences, randomized edge-layer invariants,
//! and preprocessing pipeline invariants.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::edge::{edge_learn_step, init_edge_layer, EdgeLearnConfig};
use crate::eeg::{
    generate_participant, segment_countdown, segment_stoplight, split_participants,
    ExperimentKind, GeneratorConfig,
};
use crate::quant::{quantize_cnn, QuantizedCnn, QuantizedConv, QuantizedDense, QuantizedTensor, ThresholdSet};
use crate::runtime::{convert_to_csnn, infer_dense, infer_event, SpikePattern};
use crate::tensor::{
    conv2d_backward, conv2d_forward, dense_forward, max_relative_error, maxpool2_backward,
    maxpool2_forward, numeric_gradient, sample_gradients, weighted_cross_entropy,
    weighted_cross_entropy_grad, CnnModel, Conv2d, Dense, Sample, Tensor,
};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn pass(name: &'static str, detail: String) -> Self {
        Self { name, passed: true, detail }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        Self { name, passed: false, detail }
    }
}

fn random_quantized(rng: &mut ChaCha8Rng) -> (QuantizedCnn, Vec<i8>) {
    let in_c = rng.random_range(1..=2usize);
    let h = rng.random_range(8..=14usize);
    let w = rng.random_range(8..=20usize);
    let rand_tensor = |rng: &mut ChaCha8Rng, shape: Vec<usize>| {
        let len = shape.iter().product();
        QuantizedTensor {
            shape,
            values: (0..len).map(|_| rng.random_range(-127..=127i32) as i8).collect(),
            scale: 0.01,
        }
    };
    let conv1 = QuantizedConv {
        out_channels: 12,
        in_channels: in_c,
        kernel_h: 5,
        kernel_w: 5,
        weights: rand_tensor(rng, vec![12, in_c, 5, 5]),
        bias: (0..12).map(|_| rng.random_range(-500..=500)).collect(),
    };
    let conv2 = QuantizedConv {
        out_channels: 64,
        in_channels: 12,
        kernel_h: 3,
        kernel_w: 3,
        weights: rand_tensor(rng, vec![64, 12, 3, 3]),
        bias: (0..64).map(|_| rng.random_range(-200..=200)).collect(),
    };
    let flat = 64 * (h / 2 / 2) * (w / 2 / 2);
    let dense = QuantizedDense {
        out_dim: 2,
        in_dim: flat,
        weights: rand_tensor(rng, vec![2, flat]),
        bias: vec![0, 0],
    };
    let net = QuantizedCnn {
        input_shape: (in_c, h, w),
        conv1,
        conv2,
        dense,
        thresholds: ThresholdSet {
            conv1: rng.random_range(0..=3000),
            conv2: rng.random_range(0..=1500),
        },
    };
    let input: Vec<i8> =
        (0..in_c * h * w).map(|_| rng.random_range(-127..=127i32) as i8).collect();
    (net, input)
}

/// Event path equals the dense oracle exactly (potentials and traces) on
/// `pairs` random model/input pairs.
pub fn check_oracle_equivalence(pairs: usize, seed: u64) -> CheckReport {
    const NAME: &str = "oracle-equivalence";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..pairs {
        let (net, input) = random_quantized(&mut rng);
        let edge = if i % 2 == 0 {
            let flat = net.shapes().flat_dim;
            let cfg = EdgeLearnConfig {
                neurons_per_class: rng.random_range(2..=40),
                seed: rng.random(),
                ..Default::default()
            };
            let nw = rng.random_range(1..=flat.min(64));
            Some(init_edge_layer(flat, nw, &cfg).expect("valid edge dims"))
        } else {
            None
        };
        let model = match convert_to_csnn(net, edge) {
            Ok(m) => m,
            Err(e) => return CheckReport::fail(NAME, format!("pair {i}: conversion failed: {e}")),
        };
        let dense = infer_dense(&model, &input).expect("dense path");
        let event = infer_event(&model, &input).expect("event path");
        if dense.potentials != event.potentials {
            return CheckReport::fail(NAME, format!("pair {i}: potentials diverged"));
        }
        if dense.trace != event.trace {
            return CheckReport::fail(NAME, format!("pair {i}: spike traces diverged"));
        }
        for (d, e) in dense.layer_ops.iter().zip(&event.layer_ops) {
            if e.ops.event_accumulates > d.ops.dense_macs && d.ops.dense_macs > 0 {
                return CheckReport::fail(
                    NAME,
                    format!("pair {i}: {:?} event work exceeds dense MACs", d.stage),
                );
            }
        }
    }
    CheckReport::pass(NAME, format!("{pairs} random model/input pairs, exact integer equality"))
}

/// Analytic gradients of every layer type against central finite
/// differences (step 1e-4, relative error ≤ 1e-3, `instances` random
/// micro-instances each).
pub fn check_gradients(instances: usize, seed: u64) -> CheckReport {
    const NAME: &str = "gradient-suite";
    const STEP: f64 = 1e-4;
    const TOL: f64 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Convolution: weights, bias and input gradients.
    for i in 0..instances {
        let in_c = rng.random_range(1..=3usize);
        let out_c = rng.random_range(1..=3usize);
        let k = [1usize, 3, 5][rng.random_range(0..3usize)];
        let h = rng.random_range(3..=6usize);
        let w = rng.random_range(3..=6usize);
        let layer = Conv2d {
            out_channels: out_c,
            in_channels: in_c,
            kernel_h: k,
            kernel_w: k,
            weights: (0..out_c * in_c * k * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..out_c).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        let input: Vec<f64> = (0..in_c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coeffs: Vec<f64> = (0..out_c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();

        let loss_of_weights = |ws: &[f64]| {
            let mut l = layer.clone();
            l.weights = ws.to_vec();
            conv2d_forward(&input, (in_c, h, w), &l).iter().zip(&coeffs).map(|(o, c)| o * c).sum()
        };
        let numeric_w = numeric_gradient(loss_of_weights, &layer.weights, STEP);
        let loss_of_input = |xs: &[f64]| {
            conv2d_forward(xs, (in_c, h, w), &layer).iter().zip(&coeffs).map(|(o, c)| o * c).sum()
        };
        let numeric_x = numeric_gradient(loss_of_input, &input, STEP);

        let mut dw = vec![0.0; layer.weights.len()];
        let mut db = vec![0.0; layer.bias.len()];
        let mut dx = vec![0.0; input.len()];
        conv2d_backward(&input, (in_c, h, w), &layer, &coeffs, &mut dw, &mut db, Some(&mut dx));
        let err_w = max_relative_error(&dw, &numeric_w);
        let err_x = max_relative_error(&dx, &numeric_x);
        if err_w > TOL || err_x > TOL {
            return CheckReport::fail(
                NAME,
                format!("conv instance {i}: weight err {err_w:.2e}, input err {err_x:.2e}"),
            );
        }
    }

    // Max pooling: input gradient through the argmax routing.
    for i in 0..instances {
        let c = rng.random_range(1..=3usize);
        let h = 2 * rng.random_range(1..=3usize);
        let w = 2 * rng.random_range(1..=3usize);
        let input: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coeffs: Vec<f64> = (0..c * (h / 2) * (w / 2)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |xs: &[f64]| {
            let (out, _) = maxpool2_forward(xs, (c, h, w));
            out.iter().zip(&coeffs).map(|(o, k)| o * k).sum()
        };
        let numeric = numeric_gradient(loss, &input, STEP);
        let (_, arg) = maxpool2_forward(&input, (c, h, w));
        let mut analytic = vec![0.0; input.len()];
        maxpool2_backward(&coeffs, &arg, &mut analytic);
        let err = max_relative_error(&analytic, &numeric);
        if err > TOL {
            return CheckReport::fail(NAME, format!("pool instance {i}: err {err:.2e}"));
        }
    }

    // Dense layer and the weighted cross-entropy head.
    for i in 0..instances {
        let in_dim = rng.random_range(2..=10usize);
        let layer = Dense {
            out_dim: 2,
            in_dim,
            weights: (0..2 * in_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
        };
        let input: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = rng.random_range(0..2usize);
        let weights = [rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)];

        let loss_of_weights = |ws: &[f64]| {
            let mut l = layer.clone();
            l.weights = ws.to_vec();
            let logits = dense_forward(&input, &l);
            weighted_cross_entropy(&logits, label, &weights).unwrap()
        };
        let numeric_w = numeric_gradient(loss_of_weights, &layer.weights, STEP);
        let logits = dense_forward(&input, &layer);
        let dlogits =
            weighted_cross_entropy_grad(&[logits[0], logits[1]], label, &weights);
        let mut analytic_w = vec![0.0; layer.weights.len()];
        for j in 0..2 {
            for k in 0..in_dim {
                analytic_w[j * in_dim + k] = dlogits[j] * input[k];
            }
        }
        let err = max_relative_error(&analytic_w, &numeric_w);
        if err > TOL {
            return CheckReport::fail(NAME, format!("dense instance {i}: err {err:.2e}"));
        }
    }

    // Composed micro-model: every parameter of the full network. The double
    // max-pool chain makes the loss piecewise smooth with argmax flips
    // roughly 1e-4 away from generic points, so this check uses a smaller
    // step than the single-layer checks to stay inside one smooth piece.
    const STEP_MICRO: f64 = 1e-6;
    for i in 0..instances.min(5) {
        let model = CnnModel::new((1, 8, 8), seed.wrapping_add(i as u64)).unwrap();
        let input: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sample =
            Sample { input: Tensor::new(vec![1, 8, 8], input).unwrap(), label: (i % 2) as u8 };
        let weights = [1.3, 0.7];
        let (_, analytic) = sample_gradients(&model, &sample, &weights).unwrap();
        let flatten = |m: &CnnModel| {
            let mut v = m.conv1.weights.clone();
            v.extend_from_slice(&m.conv1.bias);
            v.extend_from_slice(&m.conv2.weights);
            v.extend_from_slice(&m.conv2.bias);
            v.extend_from_slice(&m.dense.weights);
            v.extend_from_slice(&m.dense.bias);
            v
        };
        let params = flatten(&model);
        let loss_of = |ps: &[f64]| {
            let mut m = model.clone();
            let mut at = 0usize;
            let mut take = |buf: &mut Vec<f64>| {
                let n = buf.len();
                buf.copy_from_slice(&ps[at..at + n]);
                at += n;
            };
            take(&mut m.conv1.weights);
            take(&mut m.conv1.bias);
            take(&mut m.conv2.weights);
            take(&mut m.conv2.bias);
            take(&mut m.dense.weights);
            take(&mut m.dense.bias);
            let cache = m.forward_cached(&sample.input).unwrap();
            weighted_cross_entropy(&cache.logits, sample.label as usize, &weights).unwrap()
        };
        let numeric = numeric_gradient(loss_of, &params, STEP_MICRO);
        let mut flat_analytic = analytic.conv1_w.clone();
        flat_analytic.extend_from_slice(&analytic.conv1_b);
        flat_analytic.extend_from_slice(&analytic.conv2_w);
        flat_analytic.extend_from_slice(&analytic.conv2_b);
        flat_analytic.extend_from_slice(&analytic.dense_w);
        flat_analytic.extend_from_slice(&analytic.dense_b);
        let err = max_relative_error(&flat_analytic, &numeric);
        if err > TOL {
            return CheckReport::fail(NAME, format!("micro-model {i}: err {err:.2e}"));
        }
    }

    CheckReport::pass(
        NAME,
        format!("conv/pool/dense/micro-model gradients within 1e-3 over {instances} instances each"),
    )
}

/// Randomized edge-layer invariants: popcount conservation, bounded
/// monotone plasticity, winner-only mutation at zero competition, and new
/// connections drawn from the active pattern.
pub fn check_edge_invariants(steps: usize, seed: u64) -> CheckReport {
    const NAME: &str = "edge-invariants";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0usize;
    while done < steps {
        let dim = rng.random_range(64..=512usize);
        let nw = rng.random_range(1..=dim.min(96));
        let cfg = EdgeLearnConfig {
            neurons_per_class: rng.random_range(1..=12),
            seed: rng.random(),
            ..Default::default()
        };
        let mut layer = init_edge_layer(dim, nw, &cfg).expect("valid dims");
        let batch = rng.random_range(1..=40usize).min(steps - done);
        for s in 0..batch {
            let label = rng.random_range(0..2u8);
            let count = rng.random_range(0..=dim / 3);
            let mut active: Vec<u32> = Vec::with_capacity(count);
            let mut pool: Vec<u32> = (0..dim as u32).collect();
            for j in 0..count {
                let k = rng.random_range(j..dim);
                pool.swap(j, k);
                active.push(pool[j]);
            }
            active.sort_unstable();
            let pattern = SpikePattern { dims: vec![dim], active };

            let rows_before: Vec<Vec<u64>> =
                (0..layer.neurons()).map(|n| layer.row_words(n).to_vec()).collect();
            let plast_before = layer.plasticity().to_vec();

            if edge_learn_step(&mut layer, &pattern, label).is_err() {
                return CheckReport::fail(NAME, format!("step {s}: learn step errored"));
            }

            let pattern_words = pattern.to_words();
            let mut mutated = Vec::new();
            for n in 0..layer.neurons() {
                if layer.row_popcount(n) != nw {
                    return CheckReport::fail(
                        NAME,
                        format!("popcount violated on neuron {n}: {} != {nw}", layer.row_popcount(n)),
                    );
                }
                if layer.plasticity()[n] > plast_before[n] + 1e-15
                    || layer.plasticity()[n] < cfg.min_plasticity - 1e-15
                {
                    return CheckReport::fail(NAME, format!("plasticity bound violated on {n}"));
                }
                if layer.row_words(n) != rows_before[n].as_slice() {
                    mutated.push(n);
                    // Newly set bits must come from the active pattern.
                    for (w, (&now, &was)) in
                        layer.row_words(n).iter().zip(&rows_before[n]).enumerate()
                    {
                        let gained = now & !was;
                        if gained & !pattern_words[w] != 0 {
                            return CheckReport::fail(
                                NAME,
                                format!("neuron {n} gained a connection outside the pattern"),
                            );
                        }
                    }
                }
            }
            if mutated.len() > 1 {
                return CheckReport::fail(
                    NAME,
                    format!("competition 0 mutated {} rows", mutated.len()),
                );
            }
            if let Some(&n) = mutated.first() {
                if layer.class_of_neuron(n) != label {
                    return CheckReport::fail(NAME, format!("non-winner class row {n} mutated"));
                }
            }
        }
        done += batch;
    }
    CheckReport::pass(NAME, format!("{steps} randomized steps, zero violations"))
}

/// Segmentation, padding, balancing, augmentation and split invariants over
/// a full synthetic corpus.
pub fn check_pipeline_invariants(seed: u64) -> CheckReport {
    const NAME: &str = "pipeline-invariants";
    let config = GeneratorConfig {
        trials_nominal: 4,
        trials_stressed: 3,
        trials_stoplight: 3,
        seed,
        ..Default::default()
    };
    for kind in [
        ExperimentKind::CountdownNominal,
        ExperimentKind::CountdownStressed,
        ExperimentKind::Stoplight,
    ] {
        for participant in 0..config.participants as u32 {
            let trials = match generate_participant(&config, participant, kind) {
                Ok(t) => t,
                Err(e) => return CheckReport::fail(NAME, format!("generator failed: {e}")),
            };
            for trial in &trials {
                let segments = match kind {
                    ExperimentKind::Stoplight => segment_stoplight(trial),
                    _ => segment_countdown(trial),
                };
                let segments = match segments {
                    Ok(s) => s,
                    Err(e) => return CheckReport::fail(NAME, format!("segmentation failed: {e}")),
                };
                let mut labels: Vec<u8> = segments.iter().map(|s| s.label).collect();
                labels.sort_unstable();
                let (want_labels, want_width): (Vec<u8>, usize) = match kind {
                    ExperimentKind::Stoplight => (vec![0, 1], 1074),
                    _ => (vec![0, 0, 0, 0, 1], 996),
                };
                if labels != want_labels {
                    return CheckReport::fail(NAME, format!("label multiset {labels:?}"));
                }
                for s in &segments {
                    if s.width != want_width || s.channels != 19 {
                        return CheckReport::fail(
                            NAME,
                            format!("segment shape {}x{}", s.channels, s.width),
                        );
                    }
                    if kind != ExperimentKind::Stoplight && s.data.len() != 18_924 {
                        return CheckReport::fail(NAME, format!("flat size {}", s.data.len()));
                    }
                }
            }
        }
    }

    // Balancing and augmentation arithmetic on one participant's data.
    let trials = generate_participant(&config, 0, ExperimentKind::CountdownNominal).unwrap();
    let mut ds = crate::eeg::LabeledDataset::new(
        crate::eeg::ChannelSet::full().names().to_vec(),
        996,
    );
    for t in &trials {
        for s in segment_countdown(t).unwrap() {
            ds.push(s).unwrap();
        }
    }
    let [neg, pos] = ds.class_counts();
    let dup = crate::eeg::duplicate_positives(&ds, 3);
    if dup.class_counts() != [neg, 4 * pos] {
        return CheckReport::fail(NAME, format!("duplication counts {:?}", dup.class_counts()));
    }
    let aug = crate::eeg::augment_noise(&dup, 4, seed);
    if aug.len() != 5 * dup.len() {
        return CheckReport::fail(NAME, format!("augmentation size {}", aug.len()));
    }

    // Participant splits: sizes, disjointness, coverage over ten repeats.
    let ids: Vec<u32> = (0..11).collect();
    let splits = split_participants(&ids, seed, 10).unwrap();
    let mut covered = std::collections::BTreeSet::new();
    for s in &splits {
        if s.group.len() != 8 || s.individual.len() != 3 {
            return CheckReport::fail(NAME, "split sizes wrong".to_string());
        }
        if s.individual.iter().any(|i| s.group.contains(i)) {
            return CheckReport::fail(NAME, "split not disjoint".to_string());
        }
        covered.extend(s.individual.iter().copied());
    }
    if covered.len() != 11 {
        return CheckReport::fail(NAME, format!("coverage {} of 11", covered.len()));
    }

    CheckReport::pass(
        NAME,
        "labels, widths, flat sizes, balancing, augmentation and splits all hold".to_string(),
    )
}

/// Quantize-then-binarize consistency on a freshly trained micro-model, as
/// a cheap smoke check that conversion preserves parameters.
pub fn check_conversion_roundtrip(seed: u64) -> CheckReport {
    const NAME: &str = "conversion-roundtrip";
    let model = CnnModel::new((1, 8, 12), seed).unwrap();
    let q = quantize_cnn(&model);
    let model2 = convert_to_csnn(q.clone(), None).expect("headless conversion");
    if model2.net != q {
        return CheckReport::fail(NAME, "conversion changed parameters".to_string());
    }
    CheckReport::pass(NAME, "parameters preserved bit-exactly through conversion".to_string())
}
