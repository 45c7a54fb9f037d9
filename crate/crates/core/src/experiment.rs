//! End-to-end pipeline over the synthetic benchmark: generate, train, detect, score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZsdError};
use crate::eval::{build_report, EvalReport, GroundTruthSet};
use crate::inference::{detect_all, detect_random, InferenceConfig, Mode};
use crate::model::{ModelConfig, ModelParams};
use crate::semantics::{build_similarity_matrix, ClassVocabulary, SemanticTable, SimilarityMatrix};
use crate::synthdata::{mix_seed, Split, SynthBenchmark, SynthConfig, SynthDataset};
use crate::trainer::{train, TrainObserver, TrainSummary, TrainerConfig};

/// IoU thresholds reported by default.
pub const DEFAULT_IOU_THRESHOLDS: [f64; 3] = [0.4, 0.5, 0.6];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub inference: InferenceConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.trainer.validate()?;
        if self.model.region_dim != self.synth.region_dim || self.model.semantic_dim != self.synth.semantic_dim {
            return Err(ZsdError::InvalidConfig(format!(
                "model dims ({}, {}) must match data dims ({}, {})",
                self.model.region_dim, self.model.semantic_dim, self.synth.region_dim, self.synth.semantic_dim
            )));
        }
        if !(self.inference.similarity_temperature > 0.0) {
            return Err(ZsdError::InvalidTemperature(self.inference.similarity_temperature));
        }
        Ok(())
    }
}

pub fn eval_split(mode: Mode) -> Split {
    match mode {
        Mode::Seen => Split::TestSeen,
        Mode::Zsd => Split::TestZsd,
        Mode::Gzsd => Split::TestGzsd,
    }
}

/// Seeded initial weights; the stream depends only on the trainer seed.
pub fn initial_params(
    config: &ModelConfig,
    trainer: &TrainerConfig,
    table: &SemanticTable,
    vocab: &ClassVocabulary,
) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(trainer.seed, 0x1417));
    ModelParams::init(config, table, vocab, &mut rng)
}

pub fn similarity_for(exp: &ExperimentConfig, table: &SemanticTable, vocab: &ClassVocabulary) -> Result<SimilarityMatrix> {
    build_similarity_matrix(table, vocab, exp.inference.similarity_temperature)
}

/// Trains from scratch on `train`.
pub fn train_model(
    exp: &ExperimentConfig,
    table: &SemanticTable,
    train_set: &SynthDataset,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelParams, TrainSummary)> {
    exp.validate()?;
    let vocab = &train_set.vocabulary;
    let sim = similarity_for(exp, table, vocab)?;
    let mut params = initial_params(&exp.model, &exp.trainer, table, vocab)?;
    let regions = train_set.regions()?;
    let summary = train(&mut params, &exp.model, &exp.trainer, &regions, table, &sim, vocab, observer)?;
    Ok((params, summary))
}

pub fn evaluate_model(
    exp: &ExperimentConfig,
    params: &ModelParams,
    table: &SemanticTable,
    dataset: &SynthDataset,
    mode: Mode,
    iou_thresholds: &[f64],
) -> Result<EvalReport> {
    let vocab = &dataset.vocabulary;
    let sim = similarity_for(exp, table, vocab)?;
    let dets = detect_all(params, &exp.model, &dataset.images, table, &sim, vocab, mode, &exp.inference)?;
    build_report(&dets, &GroundTruthSet::from_dataset(dataset), vocab, iou_thresholds, mode)
}

pub fn evaluate_random(exp: &ExperimentConfig, dataset: &SynthDataset, mode: Mode, iou_thresholds: &[f64]) -> Result<EvalReport> {
    let dets = detect_random(&dataset.images, &dataset.vocabulary, mode, &exp.inference, mix_seed(exp.trainer.seed, 0x7A4D));
    build_report(&dets, &GroundTruthSet::from_dataset(dataset), &dataset.vocabulary, iou_thresholds, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub seen: EvalReport,
    pub zsd: EvalReport,
    pub gzsd: EvalReport,
    pub final_epoch_loss: f64,
}

impl PipelineResult {
    pub fn report(&self, mode: Mode) -> &EvalReport {
        match mode {
            Mode::Seen => &self.seen,
            Mode::Zsd => &self.zsd,
            Mode::Gzsd => &self.gzsd,
        }
    }
}

/// Trains once and evaluates every mode on the matching test split.
pub fn run_pipeline(exp: &ExperimentConfig, bench: &SynthBenchmark, iou_thresholds: &[f64]) -> Result<PipelineResult> {
    let table = &bench.embeddings.table;
    let (params, summary) = train_model(exp, table, &bench.train, &mut crate::trainer::Silent)?;
    let eval = |mode| evaluate_model(exp, &params, table, bench.split(eval_split(mode)), mode, iou_thresholds);
    Ok(PipelineResult {
        seen: eval(Mode::Seen)?,
        zsd: eval(Mode::Zsd)?,
        gzsd: eval(Mode::Gzsd)?,
        final_epoch_loss: summary.final_epoch_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_must_agree() {
        let mut e = ExperimentConfig::default();
        assert!(e.validate().is_ok());
        e.model.region_dim = 7;
        assert!(matches!(e.validate(), Err(ZsdError::InvalidConfig(_))));
    }

    #[test]
    fn config_round_trips_through_json_with_defaults() {
        let e: ExperimentConfig = serde_json::from_str(r#"{"trainer": {"epochs": 3}}"#).unwrap();
        assert_eq!(e.trainer.epochs, 3);
        assert_eq!(e.model, ModelConfig::default());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"trainer": {"epoch": 3}}"#).is_err());
    }

    #[test]
    fn tiny_pipeline_runs() {
        let mut e = ExperimentConfig::default();
        e.synth.train_images = 10;
        e.synth.test_images = 4;
        e.trainer.epochs = 2;
        let b = SynthBenchmark::generate(&e.synth).unwrap();
        let r = run_pipeline(&e, &b, &[0.5]).unwrap();
        assert!(r.final_epoch_loss.is_finite());
        assert_eq!(r.gzsd.mode, Mode::Gzsd);
        assert!(r.gzsd.primary().harmonic_mean.is_some());
    }
}
