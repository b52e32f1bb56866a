//! Synthetic EEG-like trial generation and the preprocessing pipeline:
//! marker-based segmentation, per-segment int8 quantization, right
//! zero-padding, class balancing, noise augmentation, channel selection
//! and participant splits.
//!
//! The generator is a desk-scale stand-in for recorded data. Positive-class
//! windows carry a slow negative ramp (the anticipation signature) on
//! centro-medial channels, strongest at Cz, attenuated on C3/C4/Pz/Fz and
//! weaker still on a surrounding ring, over Gaussian background noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::quant::quantize_data;

/// Sampling rate of the synthetic recordings, samples per second.
pub const SAMPLE_RATE_HZ: f64 = 500.0;

/// Segment width for countdown experiments, columns.
pub const COUNTDOWN_WIDTH: usize = 996;

/// Segment width for the stoplight experiment, columns.
pub const STOPLIGHT_WIDTH: usize = 1074;

/// The 19-channel measurement montage, in fixed order.
pub const MONTAGE: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T7", "C3", "Cz", "C4", "T8", "P7", "P3", "Pz",
    "P4", "P8", "O1", "O2",
];

/// The five centro-medial channels of the ablation study.
pub const FCAS_CHANNELS: [&str; 5] = ["Cz", "Pz", "C3", "C4", "Fz"];

/// Relative ramp amplitude per channel for positive-class windows.
/// Channels outside this list carry background noise only.
const CNV_GAINS: [(&str, f64); 9] = [
    ("Cz", 1.0),
    ("C3", 0.6),
    ("C4", 0.6),
    ("Pz", 0.6),
    ("Fz", 0.6),
    ("F3", 0.3),
    ("F4", 0.3),
    ("P3", 0.3),
    ("P4", 0.3),
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("trial rejected: {0}")]
    TrialRejected(String),
    #[error("segment width {got} exceeds target width {target}")]
    WidthOverflow { got: usize, target: usize },
    #[error("class {0} absent from dataset")]
    ClassAbsent(u8),
    #[error("expected exactly {expected} participant ids, got {got}")]
    ParticipantCount { expected: usize, got: usize },
    #[error("unknown channel name: {0}")]
    UnknownChannel(String),
    #[error("channel set must be nonempty")]
    EmptyChannelSet,
    #[error("empty trial list")]
    EmptyTrials,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid generator config: {0}")]
    InvalidConfig(&'static str),
    #[error("marker {0:?} missing from trial")]
    MissingMarker(MarkerKind),
    #[error("dataset widths are not homogeneous ({0} vs {1})")]
    MixedWidths(usize, usize),
}

/// The three recording scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// Auditory countdown, stress-free baseline.
    CountdownNominal,
    /// Auditory countdown with fatigue and distraction stressors.
    CountdownStressed,
    /// Visual stoplight cue with one stop and one pass-through window.
    Stoplight,
}

impl ExperimentKind {
    pub fn index(self) -> u64 {
        match self {
            ExperimentKind::CountdownNominal => 1,
            ExperimentKind::CountdownStressed => 2,
            ExperimentKind::Stoplight => 3,
        }
    }

    pub fn from_index(idx: u64) -> Option<Self> {
        match idx {
            1 => Some(ExperimentKind::CountdownNominal),
            2 => Some(ExperimentKind::CountdownStressed),
            3 => Some(ExperimentKind::Stoplight),
            _ => None,
        }
    }

    pub fn segment_width(self) -> usize {
        match self {
            ExperimentKind::Stoplight => STOPLIGHT_WIDTH,
            _ => COUNTDOWN_WIDTH,
        }
    }

    pub fn is_countdown(self) -> bool {
        !matches!(self, ExperimentKind::Stoplight)
    }
}

/// Event annotations within a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkerKind {
    /// Countdown cue, 5 down to 1.
    Count(u8),
    /// The stop command ending a countdown.
    Stop,
    /// Stoplight turning yellow; `stop` tells which of the two lights.
    Yellow { stop: bool },
    /// Stoplight turning red.
    Red { stop: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub kind: MarkerKind,
    pub sample: usize,
}

/// A multichannel float recording with event markers, microvolt units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub participant: u32,
    pub trial: u32,
    pub kind: ExperimentKind,
    pub channel_names: Vec<String>,
    /// One row per channel, equal lengths.
    pub channels: Vec<Vec<f64>>,
    /// Strictly increasing sample positions.
    pub markers: Vec<Marker>,
}

impl TrialRecording {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn marker(&self, kind: MarkerKind) -> Option<usize> {
        self.markers.iter().find(|m| m.kind == kind).map(|m| m.sample)
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        let idx = self.channel_names.iter().position(|c| c == name)?;
        Some(&self.channels[idx])
    }

    /// Restrict to a channel subset, rows ordered as in the montage.
    pub fn select_channels(&self, set: &ChannelSet) -> Result<TrialRecording, PipelineError> {
        let indices = set.indices_in(&self.channel_names)?;
        Ok(TrialRecording {
            participant: self.participant,
            trial: self.trial,
            kind: self.kind,
            channel_names: indices.iter().map(|&i| self.channel_names[i].clone()).collect(),
            channels: indices.iter().map(|&i| self.channels[i].clone()).collect(),
            markers: self.markers.clone(),
        })
    }
}

/// A named, validated subset of the montage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSet(Vec<String>);

impl ChannelSet {
    /// Build from names, reordered to montage order. Rejects unknown names
    /// and the empty set.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self, PipelineError> {
        if names.is_empty() {
            return Err(PipelineError::EmptyChannelSet);
        }
        for n in names {
            if !MONTAGE.contains(&n.as_ref()) {
                return Err(PipelineError::UnknownChannel(n.as_ref().to_string()));
            }
        }
        let ordered: Vec<String> = MONTAGE
            .iter()
            .filter(|m| names.iter().any(|n| n.as_ref() == **m))
            .map(|s| s.to_string())
            .collect();
        Ok(Self(ordered))
    }

    pub fn full() -> Self {
        Self(MONTAGE.iter().map(|s| s.to_string()).collect())
    }

    pub fn fcas() -> Self {
        Self::new(&FCAS_CHANNELS).expect("montage contains the ablation channels")
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn indices_in(&self, names: &[String]) -> Result<Vec<usize>, PipelineError> {
        self.0
            .iter()
            .map(|want| {
                names
                    .iter()
                    .position(|have| have == want)
                    .ok_or_else(|| PipelineError::UnknownChannel(want.clone()))
            })
            .collect()
    }
}

/// One labelled int8 training slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub participant: u32,
    pub trial: u32,
    pub label: u8,
    pub channels: usize,
    pub width: usize,
    /// Row-major `channels × width`.
    pub data: Vec<i8>,
}

impl Segment {
    pub fn row(&self, channel: usize) -> &[i8] {
        &self.data[channel * self.width..(channel + 1) * self.width]
    }
}

/// A homogeneous collection of segments with channel naming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub channel_names: Vec<String>,
    pub width: usize,
    pub segments: Vec<Segment>,
}

impl LabeledDataset {
    pub fn new(channel_names: Vec<String>, width: usize) -> Self {
        Self { channel_names, width, segments: Vec::new() }
    }

    pub fn push(&mut self, segment: Segment) -> Result<(), PipelineError> {
        if segment.width != self.width {
            return Err(PipelineError::MixedWidths(self.width, segment.width));
        }
        self.segments.push(segment);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0usize; 2];
        for s in &self.segments {
            counts[usize::from(s.label != 0)] += 1;
        }
        counts
    }

    /// Distinct participant ids present, ascending.
    pub fn participants(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.segments.iter().map(|s| s.participant).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Parameters of the synthetic recording generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub participants: usize,
    pub trials_nominal: usize,
    pub trials_stressed: usize,
    pub trials_stoplight: usize,
    /// Per-participant ramp amplitude, microvolts, drawn uniformly.
    pub cnv_amplitude_range: (f64, f64),
    /// Ramp onset jitter, milliseconds, drawn uniformly per trial.
    pub cnv_onset_jitter_ms: f64,
    /// Background noise standard deviation, microvolts.
    pub noise_sigma: f64,
    /// Amplitude of an optional ongoing background rhythm, microvolts.
    /// Zero (the default) leaves the background purely Gaussian. When
    /// positive, every channel carries a 10 Hz oscillation with a
    /// per-participant spatial profile and a per-trial phase, giving
    /// negative-class windows repeatable structure.
    #[serde(default)]
    pub rhythm_amplitude: f64,
    /// Variance and ramp inflation for the stressed scenario, >= 1.
    pub stress_multiplier: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            participants: 11,
            trials_nominal: 240,
            trials_stressed: 150,
            trials_stoplight: 90,
            cnv_amplitude_range: (8.0, 14.0),
            cnv_onset_jitter_ms: 120.0,
            noise_sigma: 5.0,
            rhythm_amplitude: 0.0,
            stress_multiplier: 1.5,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.participants == 0 {
            return Err(PipelineError::InvalidConfig("participants must be positive"));
        }
        if self.trials_nominal == 0 || self.trials_stressed == 0 || self.trials_stoplight == 0 {
            return Err(PipelineError::InvalidConfig("trial counts must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(PipelineError::InvalidConfig("noise sigma must be nonnegative"));
        }
        if !(self.rhythm_amplitude >= 0.0) {
            return Err(PipelineError::InvalidConfig("rhythm amplitude must be nonnegative"));
        }
        if self.cnv_amplitude_range.0 > self.cnv_amplitude_range.1
            || self.cnv_amplitude_range.0 < 0.0
        {
            return Err(PipelineError::InvalidConfig("bad amplitude range"));
        }
        if self.stress_multiplier < 1.0 {
            return Err(PipelineError::InvalidConfig("stress multiplier must be >= 1"));
        }
        Ok(())
    }

    pub fn trials_for(&self, kind: ExperimentKind) -> usize {
        match kind {
            ExperimentKind::CountdownNominal => self.trials_nominal,
            ExperimentKind::CountdownStressed => self.trials_stressed,
            ExperimentKind::Stoplight => self.trials_stoplight,
        }
    }
}

/// Generate every trial of one participant for one scenario.
///
/// Randomness derives from `(seed, participant, kind, trial)`, so trials can
/// be generated in any order or in parallel with identical results.
pub fn generate_participant(
    config: &GeneratorConfig,
    participant: u32,
    kind: ExperimentKind,
) -> Result<Vec<TrialRecording>, PipelineError> {
    config.validate()?;
    let mut participant_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        "participant",
        &[u64::from(participant), kind.index()],
    ));
    let (lo, hi) = config.cnv_amplitude_range;
    let amplitude = if hi > lo { participant_rng.random_range(lo..=hi) } else { lo };
    // Per-participant spatial profile of the background rhythm.
    let rhythm_gains: Vec<f64> =
        (0..MONTAGE.len()).map(|_| participant_rng.random_range(0.5..=1.0)).collect();

    let stress = if kind == ExperimentKind::CountdownStressed { config.stress_multiplier } else { 1.0 };
    let sigma = config.noise_sigma * stress;
    let amplitude = amplitude * stress;
    let rhythm = config.rhythm_amplitude * stress;

    let trials = (0..config.trials_for(kind))
        .map(|t| {
            let seed =
                derive_seed(config.seed, "trial", &[u64::from(participant), kind.index(), t as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match kind {
                ExperimentKind::Stoplight => stoplight_trial(
                    config,
                    participant,
                    t as u32,
                    amplitude,
                    sigma,
                    rhythm,
                    &rhythm_gains,
                    &mut rng,
                ),
                _ => countdown_trial(
                    config,
                    participant,
                    t as u32,
                    kind,
                    amplitude,
                    sigma,
                    rhythm,
                    &rhythm_gains,
                    &mut rng,
                ),
            }
        })
        .collect();
    Ok(trials)
}

fn gaussian_background(rng: &mut ChaCha8Rng, sigma: f64, channels: usize, len: usize) -> Vec<Vec<f64>> {
    if sigma == 0.0 {
        return vec![vec![0.0; len]; channels];
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    (0..channels).map(|_| (0..len).map(|_| normal.sample(rng)).collect()).collect()
}

fn add_rhythm(
    channels: &mut [Vec<f64>],
    amplitude: f64,
    gains: &[f64],
    rng: &mut ChaCha8Rng,
) {
    if amplitude == 0.0 {
        return;
    }
    const FREQ_HZ: f64 = 10.0;
    let omega = 2.0 * std::f64::consts::PI * FREQ_HZ / SAMPLE_RATE_HZ;
    let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    for (row, gain) in channels.iter_mut().zip(gains) {
        for (t, v) in row.iter_mut().enumerate() {
            *v += amplitude * gain * (omega * t as f64 + phase).sin();
        }
    }
}

fn add_ramp(channels: &mut [Vec<f64>], names: &[String], onset: usize, end: usize, amplitude: f64) {
    if end <= onset {
        return;
    }
    let span = (end - onset) as f64;
    for (name, gain) in CNV_GAINS {
        if let Some(idx) = names.iter().position(|c| c == name) {
            let row = &mut channels[idx];
            for s in onset..end.min(row.len()) {
                let progress = (s - onset) as f64 / span;
                row[s] -= gain * amplitude * progress;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn countdown_trial(
    config: &GeneratorConfig,
    participant: u32,
    trial: u32,
    kind: ExperimentKind,
    amplitude: f64,
    sigma: f64,
    rhythm: f64,
    rhythm_gains: &[f64],
    rng: &mut ChaCha8Rng,
) -> TrialRecording {
    const LEAD: usize = 250;
    const TAIL: usize = 250;
    // Inter-marker gaps stay below the padded segment width.
    let gaps: Vec<usize> = (0..5).map(|_| rng.random_range(450..=950)).collect();
    let mut markers = Vec::with_capacity(6);
    let mut pos = LEAD;
    for (i, gap) in gaps.iter().enumerate() {
        markers.push(Marker { kind: MarkerKind::Count(5 - i as u8), sample: pos });
        pos += gap;
    }
    markers.push(Marker { kind: MarkerKind::Stop, sample: pos });
    let len = pos + TAIL;

    let names: Vec<String> = MONTAGE.iter().map(|s| s.to_string()).collect();
    let mut channels = gaussian_background(rng, sigma, names.len(), len);
    add_rhythm(&mut channels, rhythm, rhythm_gains, rng);

    // Anticipation ramp inside the final (count-1 to stop) window.
    let count1 = markers[4].sample;
    let stop = markers[5].sample;
    let jitter = (rng.random_range(0.0..=config.cnv_onset_jitter_ms.max(0.0))
        * SAMPLE_RATE_HZ
        / 1000.0) as usize;
    let onset = (count1 + jitter).min(stop.saturating_sub(1));
    add_ramp(&mut channels, &names, onset, stop, amplitude);

    TrialRecording { participant, trial, kind, channel_names: names, channels, markers }
}

#[allow(clippy::too_many_arguments)]
fn stoplight_trial(
    config: &GeneratorConfig,
    participant: u32,
    trial: u32,
    amplitude: f64,
    sigma: f64,
    rhythm: f64,
    rhythm_gains: &[f64],
    rng: &mut ChaCha8Rng,
) -> TrialRecording {
    const LEAD: usize = 250;
    const TAIL: usize = 250;
    // Yellow precedes red by 1.6 s (800 samples).
    let yellow_stop = LEAD;
    let red_stop = yellow_stop + 800;
    let yellow_pass = yellow_stop + STOPLIGHT_WIDTH + rng.random_range(300..=700);
    let red_pass = yellow_pass + 800;
    let len = yellow_pass + STOPLIGHT_WIDTH + TAIL;

    let names: Vec<String> = MONTAGE.iter().map(|s| s.to_string()).collect();
    let mut channels = gaussian_background(rng, sigma, names.len(), len);
    add_rhythm(&mut channels, rhythm, rhythm_gains, rng);

    // Ramp only around the stop light, peaking at the window end.
    let jitter = (rng.random_range(0.0..=config.cnv_onset_jitter_ms.max(0.0))
        * SAMPLE_RATE_HZ
        / 1000.0) as usize;
    let onset = (red_stop - 200 + jitter).min(yellow_stop + STOPLIGHT_WIDTH - 1);
    add_ramp(&mut channels, &names, onset, yellow_stop + STOPLIGHT_WIDTH, amplitude);

    let markers = vec![
        Marker { kind: MarkerKind::Yellow { stop: true }, sample: yellow_stop },
        Marker { kind: MarkerKind::Red { stop: true }, sample: red_stop },
        Marker { kind: MarkerKind::Yellow { stop: false }, sample: yellow_pass },
        Marker { kind: MarkerKind::Red { stop: false }, sample: red_pass },
    ];
    TrialRecording {
        participant,
        trial,
        kind: ExperimentKind::Stoplight,
        channel_names: names,
        channels,
        markers,
    }
}

/// Slice a float window out of a trial and quantize it to int8.
fn quantized_window(trial: &TrialRecording, start: usize, end: usize, label: u8) -> Segment {
    let width = end - start;
    let mut float = Vec::with_capacity(trial.channels.len() * width);
    for row in &trial.channels {
        float.extend_from_slice(&row[start..end]);
    }
    Segment {
        participant: trial.participant,
        trial: trial.trial,
        label,
        channels: trial.channels.len(),
        width,
        data: quantize_data(&float),
    }
}

/// Split a countdown trial into its five labelled segments, padded to
/// [`COUNTDOWN_WIDTH`]. The four inter-count windows are negatives; the
/// final count-to-stop window is the positive.
pub fn segment_countdown(trial: &TrialRecording) -> Result<Vec<Segment>, PipelineError> {
    let mut cuts = Vec::with_capacity(6);
    for count in (1..=5).rev() {
        cuts.push(
            trial
                .marker(MarkerKind::Count(count))
                .ok_or(PipelineError::MissingMarker(MarkerKind::Count(count)))?,
        );
    }
    cuts.push(trial.marker(MarkerKind::Stop).ok_or(PipelineError::MissingMarker(MarkerKind::Stop))?);
    if cuts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PipelineError::TrialRejected("markers out of order".into()));
    }
    if cuts[5] > trial.len() {
        return Err(PipelineError::TrialRejected("stop marker beyond recording".into()));
    }

    let mut segments = Vec::with_capacity(5);
    for i in 0..5 {
        let label = u8::from(i == 4);
        let seg = quantized_window(trial, cuts[i], cuts[i + 1], label);
        segments.push(pad_segment(seg, COUNTDOWN_WIDTH)?);
    }
    Ok(segments)
}

/// Extract the stop and pass-through windows of a stoplight trial; both are
/// exactly [`STOPLIGHT_WIDTH`] columns, so no padding applies.
pub fn segment_stoplight(trial: &TrialRecording) -> Result<Vec<Segment>, PipelineError> {
    let stop_at = trial
        .marker(MarkerKind::Yellow { stop: true })
        .ok_or(PipelineError::MissingMarker(MarkerKind::Yellow { stop: true }))?;
    let pass_at = trial
        .marker(MarkerKind::Yellow { stop: false })
        .ok_or(PipelineError::MissingMarker(MarkerKind::Yellow { stop: false }))?;
    for (name, at) in [("stop", stop_at), ("pass", pass_at)] {
        if at + STOPLIGHT_WIDTH > trial.len() {
            return Err(PipelineError::TrialRejected(format!(
                "{name} window exceeds recording length"
            )));
        }
    }
    let mut windows = [(stop_at, 1u8), (pass_at, 0u8)];
    windows.sort_by_key(|(at, _)| *at);
    Ok(windows
        .iter()
        .map(|&(at, label)| quantized_window(trial, at, at + STOPLIGHT_WIDTH, label))
        .collect())
}

/// Right-pad a segment with zero columns to the target width. The original
/// data is preserved bit-exactly as a prefix of each row.
pub fn pad_segment(seg: Segment, target: usize) -> Result<Segment, PipelineError> {
    if seg.width > target {
        return Err(PipelineError::WidthOverflow { got: seg.width, target });
    }
    if seg.width == target {
        return Ok(seg);
    }
    let mut data = Vec::with_capacity(seg.channels * target);
    for ch in 0..seg.channels {
        data.extend_from_slice(seg.row(ch));
        data.resize(data.len() + (target - seg.width), 0);
    }
    Ok(Segment { width: target, data, ..seg })
}

/// Class weights `w_c = N / (2 N_c)` from the dataset's own counts.
pub fn compute_class_weights(dataset: &LabeledDataset) -> Result<[f64; 2], PipelineError> {
    let counts = dataset.class_counts();
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(PipelineError::ClassAbsent(c as u8));
        }
    }
    let total = (counts[0] + counts[1]) as f64;
    Ok([total / (2.0 * counts[0] as f64), total / (2.0 * counts[1] as f64)])
}

/// Append `copies` bit-identical duplicates of every positive segment.
/// Negatives are untouched; originals keep their order and the duplicates
/// follow, round by round.
pub fn duplicate_positives(dataset: &LabeledDataset, copies: usize) -> LabeledDataset {
    let mut out = dataset.clone();
    for _ in 0..copies {
        for seg in &dataset.segments {
            if seg.label == 1 {
                out.segments.push(seg.clone());
            }
        }
    }
    out
}

/// Append `k` noisy copies of every segment: per element, add a rounded
/// standard normal draw and clamp to [−127, 127]. Labels are preserved and
/// the result holds `(1 + k) ×` the input count.
pub fn augment_noise(dataset: &LabeledDataset, k: usize, seed: u64) -> LabeledDataset {
    let mut out = dataset.clone();
    let normal = Normal::new(0.0f64, 1.0).expect("unit sigma");
    for round in 0..k {
        for (idx, seg) in dataset.segments.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                "augment",
                &[round as u64, idx as u64],
            ));
            let mut copy = seg.clone();
            for v in copy.data.iter_mut() {
                let noisy = f64::from(*v) + normal.sample(&mut rng).round();
                *v = noisy.clamp(-127.0, 127.0) as i8;
            }
            out.segments.push(copy);
        }
    }
    out
}

/// One group/individual participant split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantSplit {
    pub group: Vec<u32>,
    pub individual: Vec<u32>,
}

/// Produce `repeats` splits of 11 participants into 8 group + 3 individual,
/// guaranteeing every participant lands in the individual set at least once.
pub fn split_participants(
    ids: &[u32],
    seed: u64,
    repeats: usize,
) -> Result<Vec<ParticipantSplit>, PipelineError> {
    if ids.len() != 11 {
        return Err(PipelineError::ParticipantCount { expected: 11, got: ids.len() });
    }
    let mut order: Vec<u32> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "splits", &[]));
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    // Walking the shuffled ring in consecutive triples covers every id within
    // ceil(11 / 3) splits, so ten repeats always satisfy the coverage rule.
    let splits = (0..repeats)
        .map(|k| {
            let individual: Vec<u32> =
                (0..3).map(|j| order[(3 * k + j) % order.len()]).collect();
            let group: Vec<u32> =
                ids.iter().copied().filter(|id| !individual.contains(id)).collect();
            ParticipantSplit { group, individual }
        })
        .collect();
    Ok(splits)
}

/// Restrict every segment to a channel subset, rows in montage order.
pub fn select_channels(
    dataset: &LabeledDataset,
    set: &ChannelSet,
) -> Result<LabeledDataset, PipelineError> {
    let indices = set.indices_in(&dataset.channel_names)?;
    let mut out = LabeledDataset::new(set.names().to_vec(), dataset.width);
    for seg in &dataset.segments {
        let mut data = Vec::with_capacity(indices.len() * seg.width);
        for &i in &indices {
            data.extend_from_slice(seg.row(i));
        }
        out.segments.push(Segment {
            channels: indices.len(),
            data,
            ..seg.clone()
        });
    }
    Ok(out)
}

/// Marker-aligned pointwise mean of one channel over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct GrandAverage {
    /// Averaged waveform over the common support around the marker.
    pub values: Vec<f64>,
    /// Index of the alignment marker within `values`.
    pub marker_index: usize,
}

pub fn grand_average(
    trials: &[TrialRecording],
    channel: &str,
    alignment: MarkerKind,
) -> Result<GrandAverage, PipelineError> {
    if trials.is_empty() {
        return Err(PipelineError::EmptyTrials);
    }
    let mut pre = usize::MAX;
    let mut post = usize::MAX;
    for t in trials {
        let at = t.marker(alignment).ok_or(PipelineError::MissingMarker(alignment))?;
        if t.channel(channel).is_none() {
            return Err(PipelineError::UnknownChannel(channel.to_string()));
        }
        pre = pre.min(at);
        post = post.min(t.len() - at);
    }
    let mut values = vec![0.0; pre + post];
    for t in trials {
        let at = t.marker(alignment).expect("checked above");
        let row = t.channel(channel).expect("checked above");
        for (i, v) in values.iter_mut().enumerate() {
            *v += row[at - pre + i];
        }
    }
    for v in values.iter_mut() {
        *v /= trials.len() as f64;
    }
    Ok(GrandAverage { values, marker_index: pre })
}

/// Seeded stratified split into train and evaluation partitions.
///
/// Per class, `eval_fraction` of the segments (rounded, clamped so both
/// partitions stay nonempty when the class has at least two members) go to
/// the evaluation set.
pub fn stratified_split(
    dataset: &LabeledDataset,
    eval_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "strata", &[]));
    let mut train = LabeledDataset::new(dataset.channel_names.clone(), dataset.width);
    let mut eval = LabeledDataset::new(dataset.channel_names.clone(), dataset.width);
    let mut eval_mask = vec![false; dataset.segments.len()];
    for class in 0..2u8 {
        let mut idx: Vec<usize> = dataset
            .segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            continue; // too few to hold any out
        }
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_eval = ((eval_fraction * idx.len() as f64).round() as usize)
            .clamp(1, idx.len() - 1);
        for &i in idx.iter().take(n_eval) {
            eval_mask[i] = true;
        }
    }
    for (i, seg) in dataset.segments.iter().enumerate() {
        if eval_mask[i] {
            eval.segments.push(seg.clone());
        } else {
            train.segments.push(seg.clone());
        }
    }
    Ok((train, eval))
}
