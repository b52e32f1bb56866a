//! Run configuration: JSON-loadable, with desk-scale defaults sized so the
//! default ten-repeat, two-study run finishes within the time budget on a
//! small desktop while still reproducing the stage patterns.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use csnn_core::eeg::GeneratorConfig;
use csnn_core::stats::CostModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyChoice {
    /// All 19 channels.
    Acs,
    /// The five centro-medial channels.
    Fcas,
    Both,
}

impl StudyChoice {
    pub fn studies(self) -> Vec<Study> {
        match self {
            StudyChoice::Acs => vec![Study::Acs],
            StudyChoice::Fcas => vec![Study::Fcas],
            StudyChoice::Both => vec![Study::Acs, Study::Fcas],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Acs,
    Fcas,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Acs => "acs",
            Study::Fcas => "fcas",
        }
    }

    pub fn channel_set(self) -> csnn_core::eeg::ChannelSet {
        match self {
            Study::Acs => csnn_core::eeg::ChannelSet::full(),
            Study::Fcas => csnn_core::eeg::ChannelSet::fcas(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage1Config {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QatRunConfig {
    pub max_epochs: usize,
    pub target: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Threshold calibration: percentile of positive pre-activations.
    pub percentile: f64,
    /// Cap on calibration inputs drawn from the training partition.
    pub calibration_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRunConfig {
    pub initial_plasticity: f64,
    pub learning_competition: f64,
    pub min_plasticity: f64,
    pub plasticity_decay: f64,
    pub neurons_per_class: usize,
    pub epochs: usize,
}

impl Default for EdgeRunConfig {
    fn default() -> Self {
        Self {
            initial_plasticity: 1.0,
            learning_competition: 0.0,
            min_plasticity: 0.1,
            plasticity_decay: 0.25,
            neurons_per_class: 1000,
            epochs: 25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Scenario: 1 nominal countdown, 2 stressed countdown, 3 stoplight.
    pub experiment: u64,
    pub study: StudyChoice,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Repeated analyses over reshuffled participant splits.
    pub repeats: usize,
    pub generator: GeneratorConfig,
    /// Trials per group participant entering stage-1/2 training. Individual
    /// datasets always use every generated trial.
    pub group_trials: usize,
    pub stage1: Stage1Config,
    pub qat: QatRunConfig,
    pub edge: EdgeRunConfig,
    pub eval_fraction: f64,
    /// Extra copies appended per positive segment (countdown scenarios).
    pub duplicate_copies: usize,
    /// Noisy copies appended per segment (five-fold growth at 4).
    pub augment_copies: usize,
    /// Also duplicate positives in the individual evaluation partition.
    pub duplicate_eval_positives: bool,
    pub cost_model: CostModel,
    /// Persist stage-1/stage-2/edge checkpoints into the bundle.
    pub save_models: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: 1,
            study: StudyChoice::Both,
            seed: 7,
            out_dir: PathBuf::from("out"),
            repeats: 10,
            generator: GeneratorConfig {
                participants: 11,
                trials_nominal: 18,
                trials_stressed: 14,
                trials_stoplight: 16,
                cnv_amplitude_range: (8.0, 14.0),
                cnv_onset_jitter_ms: 120.0,
                noise_sigma: 5.0,
                rhythm_amplitude: 0.0,
                stress_multiplier: 1.5,
                seed: 0,
            },
            group_trials: 5,
            stage1: Stage1Config {
                epochs: 6,
                learning_rate: 2e-4,
                momentum: 0.9,
                batch_size: 16,
            },
            qat: QatRunConfig {
                max_epochs: 150,
                target: 0.90,
                learning_rate: 2e-4,
                momentum: 0.9,
                batch_size: 16,
                percentile: 99.0,
                calibration_samples: 64,
            },
            edge: EdgeRunConfig::default(),
            eval_fraction: 0.2,
            duplicate_copies: 3,
            augment_copies: 4,
            duplicate_eval_positives: false,
            cost_model: CostModel::default(),
            save_models: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=3).contains(&self.experiment) {
            return Err(format!("experiment must be 1, 2 or 3, got {}", self.experiment));
        }
        if self.repeats == 0 {
            return Err("repeats must be positive".into());
        }
        self.generator.validate().map_err(|e| e.to_string())?;
        if self.group_trials == 0
            || self.group_trials > self.generator.trials_for(self.kind())
        {
            return Err(format!(
                "group_trials must lie in 1..={}",
                self.generator.trials_for(self.kind())
            ));
        }
        if self.stage1.epochs == 0 || self.stage1.batch_size == 0 {
            return Err("stage1 epochs and batch size must be positive".into());
        }
        if !(self.stage1.learning_rate > 0.0) || !(self.qat.learning_rate > 0.0) {
            return Err("learning rates must be positive".into());
        }
        if !(0.0 < self.eval_fraction && self.eval_fraction < 1.0) {
            return Err("eval_fraction must lie in (0, 1)".into());
        }
        if !(self.qat.percentile > 0.0 && self.qat.percentile <= 100.0) {
            return Err("qat.percentile must lie in (0, 100]".into());
        }
        if self.qat.calibration_samples == 0 {
            return Err("qat.calibration_samples must be positive".into());
        }
        if self.edge.neurons_per_class == 0 {
            return Err("edge.neurons_per_class must be positive".into());
        }
        Ok(())
    }

    pub fn kind(&self) -> csnn_core::eeg::ExperimentKind {
        csnn_core::eeg::ExperimentKind::from_index(self.experiment)
            .expect("validated experiment index")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("cannot parse config {}: {e}", path.display()))?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_experiment_rejected() {
        let config = RunConfig { experiment: 4, ..Default::default() };
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let config = RunConfig::default();
        let json = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let back: RunConfig = serde_json::from_str(r#"{"experiment": 3, "seed": 11}"#).unwrap();
        assert_eq!(back.experiment, 3);
        assert_eq!(back.seed, 11);
        assert_eq!(back.repeats, 10);
    }
}
