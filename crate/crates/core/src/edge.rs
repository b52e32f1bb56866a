//! The binary-weight, class-partitioned readout layer and its few-shot
//! plasticity rule.
//!
//! Each neuron carries exactly `num_weights` active synapses over the
//! flattened feature dimension and a plasticity scalar that decays linearly
//! toward a floor with every learning event. A learning step finds the
//! best-matching neuron of the sample's class and moves a
//! plasticity-proportional share of its connections onto the active inputs
//! it was missing, so neurons specialize into cluster centers. Classification
//! reads out the class of the globally best-matching neuron.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::SpikePattern;
use crate::stats::{compute_metrics, MetricsReport, StatsError};

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("num_weights {num_weights} exceeds input dimension {input_dim}")]
    TooManyWeights { num_weights: usize, input_dim: usize },
    #[error("num_weights must be at least 1")]
    ZeroWeights,
    #[error("pattern dimension {got} does not match layer input dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown class label {label}, layer has {classes} classes")]
    UnknownClass { label: u8, classes: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid edge config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Hyper-parameters of the plasticity rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLearnConfig {
    pub initial_plasticity: f64,
    pub learning_competition: f64,
    pub min_plasticity: f64,
    pub plasticity_decay: f64,
    pub neurons_per_class: usize,
    pub seed: u64,
}

impl Default for EdgeLearnConfig {
    fn default() -> Self {
        Self {
            initial_plasticity: 1.0,
            learning_competition: 0.0,
            min_plasticity: 0.1,
            plasticity_decay: 0.25,
            neurons_per_class: 1000,
            seed: 0,
        }
    }
}

impl EdgeLearnConfig {
    pub fn validate(&self) -> Result<(), EdgeError> {
        if !(0.0..=1.0).contains(&self.min_plasticity)
            || !(0.0..=1.0).contains(&self.initial_plasticity)
            || self.min_plasticity > self.initial_plasticity
        {
            return Err(EdgeError::InvalidConfig(
                "plasticity must satisfy 0 <= min <= initial <= 1",
            ));
        }
        if self.plasticity_decay < 0.0 {
            return Err(EdgeError::InvalidConfig("plasticity decay must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.learning_competition) {
            return Err(EdgeError::InvalidConfig("learning competition must lie in [0, 1]"));
        }
        if self.neurons_per_class == 0 {
            return Err(EdgeError::InvalidConfig("neurons per class must be positive"));
        }
        Ok(())
    }
}

/// Binary weight matrix with per-neuron plasticity state. Rows are
/// bit-packed, 64 inputs per word; every row holds exactly `num_weights`
/// ones.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLayer {
    input_dim: usize,
    num_classes: usize,
    neurons_per_class: usize,
    num_weights: usize,
    words_per_row: usize,
    rows: Vec<u64>,
    plasticity: Vec<f64>,
    config: EdgeLearnConfig,
    rng: ChaCha8Rng,
}

impl EdgeLayer {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn neurons(&self) -> usize {
        self.num_classes * self.neurons_per_class
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_weights(&self) -> usize {
        self.num_weights
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn class_of_neuron(&self, neuron: usize) -> u8 {
        (neuron / self.neurons_per_class) as u8
    }

    pub fn plasticity(&self) -> &[f64] {
        &self.plasticity
    }

    pub fn learn_config(&self) -> EdgeLearnConfig {
        self.config
    }

    pub fn row_words(&self, neuron: usize) -> &[u64] {
        &self.rows[neuron * self.words_per_row..(neuron + 1) * self.words_per_row]
    }

    fn row_words_mut(&mut self, neuron: usize) -> &mut [u64] {
        &mut self.rows[neuron * self.words_per_row..(neuron + 1) * self.words_per_row]
    }

    pub fn row_popcount(&self, neuron: usize) -> usize {
        self.row_words(neuron).iter().map(|w| w.count_ones() as usize).sum()
    }

    fn bit(&self, neuron: usize, input: usize) -> bool {
        self.row_words(neuron)[input / 64] & (1u64 << (input % 64)) != 0
    }

    /// Integer dot products of every row with a bit-packed pattern.
    pub fn potentials(&self, pattern_words: &[u64]) -> Vec<i32> {
        debug_assert_eq!(pattern_words.len(), self.words_per_row);
        (0..self.neurons()).map(|n| self.row_potential(n, pattern_words)).collect()
    }

    fn row_potential(&self, neuron: usize, pattern_words: &[u64]) -> i32 {
        self.row_words(neuron)
            .iter()
            .zip(pattern_words)
            .map(|(r, p)| (r & p).count_ones() as i32)
            .sum()
    }

    /// Best-matching neuron within `[lo, hi)`, ties to the lowest index.
    fn argmax_in(&self, lo: usize, hi: usize, pattern_words: &[u64]) -> usize {
        let mut best = lo;
        let mut best_pot = self.row_potential(lo, pattern_words);
        for n in lo + 1..hi {
            let p = self.row_potential(n, pattern_words);
            if p > best_pot {
                best = n;
                best_pot = p;
            }
        }
        best
    }

    /// Rebuild a layer from stored state (rows are bit-packed row-major).
    /// The learning RNG restarts from the config seed.
    pub fn from_parts(
        input_dim: usize,
        num_classes: usize,
        neurons_per_class: usize,
        num_weights: usize,
        rows: Vec<u64>,
        plasticity: Vec<f64>,
        config: EdgeLearnConfig,
    ) -> Self {
        let words_per_row = input_dim.div_ceil(64);
        debug_assert_eq!(rows.len(), num_classes * neurons_per_class * words_per_row);
        Self {
            input_dim,
            num_classes,
            neurons_per_class,
            num_weights,
            words_per_row,
            rows,
            plasticity,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        }
    }
}

/// Estimate the per-neuron synapse count from mean upstream spike activity:
/// `max(1, round(1.2 × mean total spikes))`.
pub fn estimate_num_weights(spike_counts: &[usize]) -> Result<usize, EdgeError> {
    if spike_counts.is_empty() {
        return Err(EdgeError::EmptyDataset);
    }
    let mean = spike_counts.iter().sum::<usize>() as f64 / spike_counts.len() as f64;
    Ok(((1.2 * mean).round() as usize).max(1))
}

/// Build a fresh layer: two classes of `neurons_per_class` neurons, every
/// row holding `num_weights` ones at seeded-uniform distinct positions,
/// plasticity at its initial value.
pub fn init_edge_layer(
    input_dim: usize,
    num_weights: usize,
    config: &EdgeLearnConfig,
) -> Result<EdgeLayer, EdgeError> {
    config.validate()?;
    if num_weights == 0 {
        return Err(EdgeError::ZeroWeights);
    }
    if num_weights > input_dim {
        return Err(EdgeError::TooManyWeights { num_weights, input_dim });
    }
    let num_classes = 2;
    let neurons = num_classes * config.neurons_per_class;
    let words_per_row = input_dim.div_ceil(64);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = vec![0u64; neurons * words_per_row];

    // Partial Fisher-Yates over a reused index pool; any starting
    // permutation yields uniform distinct draws.
    let mut pool: Vec<u32> = (0..input_dim as u32).collect();
    for n in 0..neurons {
        for j in 0..num_weights {
            let k = rng.random_range(j..input_dim);
            pool.swap(j, k);
            let idx = pool[j] as usize;
            rows[n * words_per_row + idx / 64] |= 1u64 << (idx % 64);
        }
    }
    Ok(EdgeLayer {
        input_dim,
        num_classes,
        neurons_per_class: config.neurons_per_class,
        num_weights,
        words_per_row,
        rows,
        plasticity: vec![config.initial_plasticity; neurons],
        config: *config,
        rng,
    })
}

fn check_pattern(layer: &EdgeLayer, pattern: &SpikePattern) -> Result<(), EdgeError> {
    if pattern.total() != layer.input_dim {
        return Err(EdgeError::DimensionMismatch {
            expected: layer.input_dim,
            got: pattern.total(),
        });
    }
    Ok(())
}

/// Classify a pattern: the class of the highest-potential neuron, ties
/// resolved to the lowest neuron index.
pub fn classify(layer: &EdgeLayer, pattern: &SpikePattern) -> Result<(u8, Vec<i32>), EdgeError> {
    check_pattern(layer, pattern)?;
    let potentials = layer.potentials(&pattern.to_words());
    let mut best = 0usize;
    for (n, &p) in potentials.iter().enumerate() {
        if p > potentials[best] {
            best = n;
        }
    }
    Ok((layer.class_of_neuron(best), potentials))
}

/// Sample `take` distinct elements from `pool` by partial Fisher-Yates.
fn sample_distinct(pool: &mut Vec<u32>, take: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    debug_assert!(take <= pool.len());
    for j in 0..take {
        let k = rng.random_range(j..pool.len());
        pool.swap(j, k);
    }
    pool[..take].to_vec()
}

/// One winner-take-all learning event.
///
/// The winner is the highest-potential neuron of the sample's class. With
/// `m = round(plasticity × |missing active inputs|)` (capped at the row
/// popcount), `m` connections move from positions outside the pattern
/// (falling back to overlapping positions when too few exist) onto
/// seeded-uniform missing active inputs. The winner's plasticity then
/// decays by `plasticity_decay`, floored at `min_plasticity`. With positive
/// `learning_competition`, the globally best wrong-class neuron loses a
/// share of its pattern overlap to inactive positions. Row popcounts are
/// preserved exactly.
pub fn edge_learn_step(
    layer: &mut EdgeLayer,
    pattern: &SpikePattern,
    label: u8,
) -> Result<(), EdgeError> {
    check_pattern(layer, pattern)?;
    if usize::from(label) >= layer.num_classes {
        return Err(EdgeError::UnknownClass { label, classes: layer.num_classes });
    }

    let pattern_words = pattern.to_words();
    let class_base = usize::from(label) * layer.neurons_per_class;
    // The rival scan is needed only when competition is on; skipping it
    // halves the work of the common default.
    let winner = layer.argmax_in(class_base, class_base + layer.neurons_per_class, &pattern_words);

    // Active inputs the winner is not connected to.
    let mut miss: Vec<u32> = pattern
        .active
        .iter()
        .copied()
        .filter(|&i| !layer.bit(winner, i as usize))
        .collect();

    let plasticity = layer.plasticity[winner];
    let m = ((plasticity * miss.len() as f64).round() as usize)
        .min(layer.num_weights)
        .min(miss.len());

    if m > 0 {
        // Clear side: prefer connections outside the pattern.
        let mut outside: Vec<u32> = Vec::new();
        let mut overlap: Vec<u32> = Vec::new();
        for w in 0..layer.words_per_row {
            let mut bits = layer.row_words(winner)[w];
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                let idx = (w * 64 + b) as u32;
                if pattern_words[w] & (1u64 << b) != 0 {
                    overlap.push(idx);
                } else {
                    outside.push(idx);
                }
                bits &= bits - 1;
            }
        }
        let from_outside = m.min(outside.len());
        let mut cleared = sample_distinct(&mut outside, from_outside, &mut layer.rng);
        if from_outside < m {
            let shortfall = m - from_outside;
            cleared.extend(sample_distinct(&mut overlap, shortfall, &mut layer.rng));
        }
        let added = sample_distinct(&mut miss, m, &mut layer.rng);
        let row = layer.row_words_mut(winner);
        for idx in cleared {
            row[idx as usize / 64] &= !(1u64 << (idx % 64));
        }
        for idx in added {
            row[idx as usize / 64] |= 1u64 << (idx % 64);
        }
    }

    layer.plasticity[winner] =
        (layer.plasticity[winner] - layer.config.plasticity_decay).max(layer.config.min_plasticity);

    if layer.config.learning_competition > 0.0 {
        // Globally best neuron of any other class sheds part of its overlap.
        let mut rival: Option<(usize, i32)> = None;
        for class in 0..layer.num_classes {
            if class == usize::from(label) {
                continue;
            }
            let lo = class * layer.neurons_per_class;
            let n = layer.argmax_in(lo, lo + layer.neurons_per_class, &pattern_words);
            let p = layer.row_potential(n, &pattern_words);
            if rival.is_none_or(|(_, best)| p > best) {
                rival = Some((n, p));
            }
        }
        if let Some((rival, _)) = rival {
            let mut overlap: Vec<u32> = Vec::new();
            let mut inactive_zeros: Vec<u32> = Vec::new();
            let mut active_zeros: Vec<u32> = Vec::new();
            for w in 0..layer.words_per_row {
                let row_word = layer.row_words(rival)[w];
                let pat_word = pattern_words[w];
                for b in 0..64usize {
                    let idx = w * 64 + b;
                    if idx >= layer.input_dim {
                        break;
                    }
                    let bit = 1u64 << b;
                    match (row_word & bit != 0, pat_word & bit != 0) {
                        (true, true) => overlap.push(idx as u32),
                        (false, false) => inactive_zeros.push(idx as u32),
                        (false, true) => active_zeros.push(idx as u32),
                        (true, false) => {}
                    }
                }
            }
            let c = ((layer.config.learning_competition * overlap.len() as f64).round() as usize)
                .min(overlap.len());
            if c > 0 {
                let cleared = sample_distinct(&mut overlap, c, &mut layer.rng);
                let from_inactive = c.min(inactive_zeros.len());
                let mut added = sample_distinct(&mut inactive_zeros, from_inactive, &mut layer.rng);
                if from_inactive < c {
                    added.extend(sample_distinct(
                        &mut active_zeros,
                        c - from_inactive,
                        &mut layer.rng,
                    ));
                }
                let row = layer.row_words_mut(rival);
                for idx in cleared {
                    row[idx as usize / 64] &= !(1u64 << (idx % 64));
                }
                for idx in added {
                    row[idx as usize / 64] |= 1u64 << (idx % 64);
                }
            }
        }
    }
    Ok(())
}

/// Train over the labelled spike dataset for `epochs` epochs in
/// seeded-shuffled order, recording metrics on the evaluation partition
/// after each epoch.
pub fn edge_train(
    layer: &mut EdgeLayer,
    train: &[(SpikePattern, u8)],
    eval: &[(SpikePattern, u8)],
    epochs: usize,
) -> Result<Vec<MetricsReport>, EdgeError> {
    if train.is_empty() {
        return Err(EdgeError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut reports = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        for i in (1..order.len()).rev() {
            let j = layer.rng.random_range(0..=i);
            order.swap(i, j);
        }
        for &i in &order {
            let (pattern, label) = &train[i];
            edge_learn_step(layer, pattern, *label)?;
        }
        reports.push(evaluate_edge(layer, eval)?);
    }
    Ok(reports)
}

/// Predicted class per labelled pattern, in input order.
pub fn predictions(
    layer: &EdgeLayer,
    samples: &[(SpikePattern, u8)],
) -> Result<Vec<u8>, EdgeError> {
    samples.iter().map(|(pattern, _)| classify(layer, pattern).map(|(c, _)| c)).collect()
}

/// Metrics of the layer's predictions over labelled patterns.
pub fn evaluate_edge(
    layer: &EdgeLayer,
    samples: &[(SpikePattern, u8)],
) -> Result<MetricsReport, EdgeError> {
    if samples.is_empty() {
        return Err(EdgeError::EmptyDataset);
    }
    let preds = predictions(layer, samples)?;
    let labels: Vec<u8> = samples.iter().map(|(_, l)| *l).collect();
    Ok(compute_metrics(&preds, &labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(dim: usize, active: &[u32]) -> SpikePattern {
        SpikePattern { dims: vec![dim], active: active.to_vec() }
    }

    fn small_config(npc: usize, seed: u64) -> EdgeLearnConfig {
        EdgeLearnConfig { neurons_per_class: npc, seed, ..Default::default() }
    }

    #[test]
    fn num_weights_estimation() {
        assert_eq!(estimate_num_weights(&[0, 0, 0]).unwrap(), 1);
        assert_eq!(estimate_num_weights(&[100, 100]).unwrap(), 120);
        // Mean 417.4 → 1.2 × 417.4 = 500.88 → 501.
        assert_eq!(estimate_num_weights(&[417, 418, 417, 418, 417]).unwrap(), 501);
        assert!(estimate_num_weights(&[]).is_err());
    }

    #[test]
    fn init_saturated_rows_are_all_ones() {
        let layer = init_edge_layer(16, 16, &small_config(3, 0)).unwrap();
        for n in 0..layer.neurons() {
            assert_eq!(layer.row_popcount(n), 16);
        }
    }

    #[test]
    fn init_is_deterministic_and_popcounts_hold() {
        let a = init_edge_layer(200, 17, &small_config(5, 42)).unwrap();
        let b = init_edge_layer(200, 17, &small_config(5, 42)).unwrap();
        assert_eq!(a.rows, b.rows);
        for n in 0..a.neurons() {
            assert_eq!(a.row_popcount(n), 17);
        }
        assert!(init_edge_layer(10, 11, &small_config(2, 0)).is_err());
        assert!(init_edge_layer(10, 0, &small_config(2, 0)).is_err());
    }

    #[test]
    fn classify_perfect_match_wins() {
        let mut layer = init_edge_layer(64, 4, &small_config(2, 1)).unwrap();
        // Hand-place: neuron 0 (class 0) exactly matches the pattern, all
        // other rows are disjoint from it.
        let target = [0u32, 5, 9, 13];
        for n in 0..layer.neurons() {
            let words = layer.row_words_mut(n);
            words.iter_mut().for_each(|w| *w = 0);
        }
        for n in 0..layer.neurons() {
            let base = if n == 0 { target.to_vec() } else { vec![20 + n as u32, 30 + n as u32, 40 + n as u32, 50 + n as u32] };
            for idx in base {
                layer.row_words_mut(n)[idx as usize / 64] |= 1 << (idx % 64);
            }
        }
        let (class, pots) = classify(&layer, &pattern(64, &target)).unwrap();
        assert_eq!(class, 0);
        assert_eq!(pots[0], 4);
    }

    #[test]
    fn classify_all_zero_pattern_ties_to_neuron_zero() {
        let layer = init_edge_layer(64, 4, &small_config(2, 3)).unwrap();
        let (class, pots) = classify(&layer, &pattern(64, &[])).unwrap();
        assert_eq!(class, 0);
        assert!(pots.iter().all(|&p| p == 0));
    }

    #[test]
    fn classify_matches_linear_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..500 {
            let dim = rng.random_range(16..128usize);
            let nw = rng.random_range(1..=dim.min(24));
            let layer = init_edge_layer(dim, nw, &small_config(rng.random_range(1..5), trial)).unwrap();
            let mut active: Vec<u32> =
                (0..dim as u32).filter(|_| rng.random_range(0..4u8) == 0).collect();
            active.dedup();
            let p = pattern(dim, &active);
            let (class, pots) = classify(&layer, &p).unwrap();
            // Oracle: brute-force dot products and max scan.
            let mut best = 0usize;
            for n in 0..layer.neurons() {
                let dot = active.iter().filter(|&&i| layer.bit(n, i as usize)).count() as i32;
                assert_eq!(dot, pots[n]);
                if dot > pots[best] {
                    best = n;
                }
            }
            assert_eq!(class, layer.class_of_neuron(best));
        }
    }

    #[test]
    fn learn_step_with_subset_pattern_only_decays() {
        let mut layer = init_edge_layer(64, 6, &small_config(2, 5)).unwrap();
        // Pattern = a subset of neuron 2's connections, and strictly more
        // of them than any other class-0 row can match.
        let class0_best = 0usize;
        let row: Vec<u32> = (0..64u32).filter(|&i| layer.bit(class0_best, i as usize)).collect();
        let p = pattern(64, &row);
        let before = layer.rows.clone();
        let plast_before = layer.plasticity[class0_best];
        edge_learn_step(&mut layer, &p, 0).unwrap();
        // Winner is whichever class-0 row matched best; if the full-overlap
        // row won, nothing moves, but plasticity decays regardless.
        let potentials = layer.potentials(&p.to_words());
        let mut winner = 0usize;
        for n in 0..layer.neurons_per_class {
            if potentials[n] > potentials[winner] {
                winner = n;
            }
        }
        if winner == class0_best {
            assert_eq!(layer.rows, before);
            assert!(layer.plasticity[class0_best] < plast_before);
        }
    }

    #[test]
    fn learn_step_full_swap_adopts_pattern() {
        let mut layer = init_edge_layer(128, 5, &small_config(1, 9)).unwrap();
        // Class-1 neuron is neurons_per_class.. take its index.
        let neuron = 1usize; // class 1 with neurons_per_class = 1
        // Build a pattern of size num_weights fully disjoint from the row.
        let mut disjoint = Vec::new();
        let mut idx = 0u32;
        while disjoint.len() < 5 {
            if !layer.bit(neuron, idx as usize) {
                disjoint.push(idx);
            }
            idx += 1;
        }
        let p = pattern(128, &disjoint);
        edge_learn_step(&mut layer, &p, 1).unwrap();
        let now: Vec<u32> = (0..128u32).filter(|&i| layer.bit(neuron, i as usize)).collect();
        assert_eq!(now, disjoint);
        assert_eq!(layer.row_popcount(neuron), 5);
        assert!((layer.plasticity[neuron] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn competition_zero_leaves_losers_untouched() {
        let mut layer = init_edge_layer(256, 12, &small_config(8, 13)).unwrap();
        let p = pattern(256, &[1, 3, 50, 99, 180, 230]);
        let before: Vec<Vec<u64>> = (0..layer.neurons()).map(|n| layer.row_words(n).to_vec()).collect();
        edge_learn_step(&mut layer, &p, 1).unwrap();
        let potentials_changed: Vec<usize> = (0..layer.neurons())
            .filter(|&n| layer.row_words(n) != before[n].as_slice())
            .collect();
        assert!(potentials_changed.len() <= 1);
        for n in potentials_changed {
            assert_eq!(layer.class_of_neuron(n), 1);
        }
    }

    #[test]
    fn unknown_label_rejected() {
        let mut layer = init_edge_layer(64, 4, &small_config(2, 0)).unwrap();
        let p = pattern(64, &[1, 2]);
        assert!(matches!(
            edge_learn_step(&mut layer, &p, 2),
            Err(EdgeError::UnknownClass { label: 2, classes: 2 })
        ));
        let wrong_dim = pattern(63, &[1]);
        assert!(classify(&layer, &wrong_dim).is_err());
    }

    #[test]
    fn plasticity_trajectory_with_defaults() {
        let mut layer = init_edge_layer(64, 4, &small_config(1, 2)).unwrap();
        // Class 0 has a single neuron, so it always wins for label 0.
        let mut seen = vec![layer.plasticity[0]];
        for step in 0..6 {
            let p = pattern(64, &[step as u32, step as u32 + 10]);
            edge_learn_step(&mut layer, &p, 0).unwrap();
            seen.push(layer.plasticity[0]);
        }
        let expect = [1.0, 0.75, 0.5, 0.25, 0.1, 0.1, 0.1];
        for (s, e) in seen.iter().zip(expect) {
            assert!((s - e).abs() < 1e-12, "trajectory {seen:?}");
        }
    }

    #[test]
    fn train_on_separated_clusters_reaches_ninety_percent() {
        // Two spike clusters with inter-cluster Hamming distance far above
        // the intra-cluster spread.
        let dim = 512usize;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let center0: Vec<u32> = (0..60u32).collect();
        let center1: Vec<u32> = (200..260u32).collect();
        let mut noisy = |center: &[u32]| -> SpikePattern {
            let mut active: Vec<u32> = center
                .iter()
                .copied()
                .filter(|_| rng.random_range(0..10u8) < 9)
                .collect();
            for _ in 0..6 {
                let extra = rng.random_range(300..dim as u32);
                if !active.contains(&extra) {
                    active.push(extra);
                }
            }
            active.sort_unstable();
            SpikePattern { dims: vec![dim], active }
        };
        let train: Vec<(SpikePattern, u8)> = (0..40)
            .map(|i| {
                let label = (i % 2) as u8;
                (noisy(if label == 0 { &center0 } else { &center1 }), label)
            })
            .collect();
        let eval: Vec<(SpikePattern, u8)> = (0..20)
            .map(|i| {
                let label = (i % 2) as u8;
                (noisy(if label == 0 { &center0 } else { &center1 }), label)
            })
            .collect();
        let mut layer = init_edge_layer(dim, 72, &small_config(50, 7)).unwrap();
        let reports = edge_train(&mut layer, &train, &eval, 3).unwrap();
        assert_eq!(reports.len(), 3);
        assert!(
            reports[2].accuracy >= 0.90,
            "cluster accuracy {:?}",
            reports.iter().map(|r| r.accuracy).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let mut layer = init_edge_layer(64, 4, &small_config(2, 8)).unwrap();
        let before = layer.clone();
        let data = vec![(pattern(64, &[1, 2, 3]), 0u8)];
        let reports = edge_train(&mut layer, &data, &data, 0).unwrap();
        assert!(reports.is_empty());
        assert_eq!(layer.rows, before.rows);
        assert_eq!(layer.plasticity, before.plasticity);
    }
}
