//! The production forward pass against a naive nested-loop convolution
//! oracle written independently of the layer code.

use csnn_core::tensor::{CnnModel, Conv2d, Tensor};

/// Direct six-loop convolution with zero padding, no reuse of the
/// production routine's structure.
fn naive_conv(input: &[f64], (c_in, h, w): (usize, usize, usize), layer: &Conv2d) -> Vec<f64> {
    let pad_h = (layer.kernel_h - 1) / 2;
    let pad_w = (layer.kernel_w - 1) / 2;
    let mut out = vec![0.0; layer.out_channels * h * w];
    for oc in 0..layer.out_channels {
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = layer.bias[oc];
                for ic in 0..c_in {
                    for ky in 0..layer.kernel_h {
                        for kx in 0..layer.kernel_w {
                            let iy = oy + ky;
                            let ix = ox + kx;
                            if iy < pad_h || ix < pad_w {
                                continue;
                            }
                            let (iy, ix) = (iy - pad_h, ix - pad_w);
                            if iy >= h || ix >= w {
                                continue;
                            }
                            let weight = layer.weights
                                [((oc * c_in + ic) * layer.kernel_h + ky) * layer.kernel_w + kx];
                            acc += weight * input[(ic * h + iy) * w + ix];
                        }
                    }
                }
                out[(oc * h + oy) * w + ox] = acc;
            }
        }
    }
    out
}

fn naive_relu_pool(map: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(map[(ch * h + 2 * oy + dy) * w + 2 * ox + dx].max(0.0));
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    out
}

#[test]
fn forward_matches_naive_oracle_end_to_end() {
    for seed in [0u64, 1, 2] {
        let shape = (1usize, 10usize, 16usize);
        let model = CnnModel::new(shape, seed).unwrap();
        let data: Vec<f64> = (0..shape.0 * shape.1 * shape.2)
            .map(|i| ((i as u64).wrapping_mul(2_654_435_761) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        let input = Tensor::new(vec![shape.0, shape.1, shape.2], data.clone()).unwrap();

        // Oracle path: naive conv → relu+pool → naive conv → relu+pool →
        // naive dense.
        let shapes = model.shapes();
        let map1 = naive_conv(&data, shape, &model.conv1);
        let pool1 = naive_relu_pool(&map1, shapes.conv1_out);
        let map2 = naive_conv(&pool1, shapes.pool1_out, &model.conv2);
        let pool2 = naive_relu_pool(&map2, shapes.conv2_out);
        let mut oracle_logits = [0.0f64; 2];
        for j in 0..2 {
            let mut acc = model.dense.bias[j];
            for (i, v) in pool2.iter().enumerate() {
                acc += model.dense.weights[j * model.dense.in_dim + i] * v;
            }
            oracle_logits[j] = acc;
        }

        let logits = model.forward(&input).unwrap();
        for (a, b) in logits.iter().zip(&oracle_logits) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-9);
            assert!(rel < 1e-5, "seed {seed}: {a} vs oracle {b}");
        }
    }
}

#[test]
fn zero_learning_rate_step_is_exact_noop() {
    use csnn_core::tensor::{train_step, CnnGrads, Sample, TrainConfig};
    let mut model = CnnModel::new((1, 8, 8), 5).unwrap();
    let before = model.clone();
    let mut velocity = CnnGrads::zeros_like(&model);
    let batch = vec![Sample {
        input: Tensor::new(vec![1, 8, 8], (0..64).map(|i| (i % 9) as f64 - 4.0).collect())
            .unwrap(),
        label: 1,
    }];
    let config = TrainConfig { learning_rate: 0.0, ..Default::default() };
    train_step(&mut model, &mut velocity, &batch, &config).unwrap();
    assert_eq!(model, before);
}
