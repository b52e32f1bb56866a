//! Layer-by-layer gradient verification against central finite differences,
//! plus determinism of the training loop.

use csnn_core::tensor::{fit_stage1, CnnModel, Sample, Tensor, TrainConfig};
use csnn_core::verify::check_gradients;

#[test]
fn gradient_suite_twenty_instances() {
    let report = check_gradients(20, 42);
    assert!(report.passed, "{}", report.detail);
}

#[test]
fn training_trajectory_is_bit_identical_under_fixed_seed() {
    let data: Vec<Sample> = (0..10)
        .map(|i| {
            let values: Vec<f64> =
                (0..64).map(|j| (((i * 31 + j * 7) % 17) as f64 - 8.0) / 4.0).collect();
            Sample {
                input: Tensor::new(vec![1, 8, 8], values).unwrap(),
                label: (i % 2) as u8,
            }
        })
        .collect();
    let config = TrainConfig {
        epochs: 5,
        learning_rate: 1e-4,
        batch_size: 4,
        seed: 99,
        ..Default::default()
    };
    let run = || {
        let model = CnnModel::new((1, 8, 8), 7).unwrap();
        fit_stage1(model, &data, &config).unwrap()
    };
    let a = run();
    let b = run();
    // Bit-identical parameters and losses, not merely close.
    assert_eq!(a.best_model, b.best_model);
    assert_eq!(a.epoch_losses, b.epoch_losses);
}

#[test]
fn separable_toy_set_reaches_high_training_accuracy() {
    // Two classes split by the sign of a fixed spatial template.
    let template: Vec<f64> = (0..64).map(|i| if i % 3 == 0 { 1.0 } else { -0.5 }).collect();
    let data: Vec<Sample> = (0..200)
        .map(|i| {
            let label = (i % 2) as u8;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let values: Vec<f64> = template
                .iter()
                .enumerate()
                .map(|(j, t)| sign * t * 3.0 + (((i * 13 + j * 29) % 11) as f64 - 5.0) * 0.1)
                .collect();
            Sample { input: Tensor::new(vec![1, 8, 8], values).unwrap(), label }
        })
        .collect();
    let config = TrainConfig {
        epochs: 20,
        learning_rate: 1e-3,
        batch_size: 16,
        seed: 3,
        ..Default::default()
    };
    let model = CnnModel::new((1, 8, 8), 11).unwrap();
    let fit = fit_stage1(model, &data, &config).unwrap();
    let correct = data
        .iter()
        .filter(|s| csnn_core::tensor::predict(&fit.best_model, &s.input).unwrap() == s.label)
        .count();
    let accuracy = correct as f64 / data.len() as f64;
    assert!(accuracy >= 0.99, "training accuracy {accuracy}");
}
