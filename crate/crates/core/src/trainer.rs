//! Minibatch training: multi-task loss, backpropagation and momentum SGD.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZsdError};
use crate::losses::{
    box_regression_loss, region_contrastive_loss, seen_classification_loss, total_loss,
    unseen_alignment_loss, LossBreakdown,
};
use crate::model::{assemble_class_matrix, backward, forward_train, ModelConfig, ModelParams, OutputGradients};
use crate::numerics::{Matrix, SgdState};
use crate::semantics::{ClassVocabulary, SemanticTable, SimilarityMatrix};
use crate::synthdata::{batch_iterator, RegionBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    /// Proposals per minibatch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            checkpoint_every: 10,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ZsdError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(ZsdError::InvalidConfig(
                "learning_rate must be positive and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Multipliers applied to each loss term when forming the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub reg: f64,
    pub cls_seen: f64,
    pub cls_unseen: f64,
    pub contrastive: f64,
}

impl LossWeights {
    /// The training objective for `config`.
    pub fn objective(config: &ModelConfig) -> Self {
        Self {
            reg: 1.0,
            cls_seen: 1.0,
            cls_unseen: config.lambda,
            contrastive: config.beta,
        }
    }

    pub fn only_reg() -> Self {
        Self { reg: 1.0, ..Self::zero() }
    }

    pub fn only_cls_seen() -> Self {
        Self { cls_seen: 1.0, ..Self::zero() }
    }

    pub fn only_cls_unseen() -> Self {
        Self { cls_unseen: 1.0, ..Self::zero() }
    }

    pub fn only_contrastive() -> Self {
        Self { contrastive: 1.0, ..Self::zero() }
    }

    fn zero() -> Self {
        Self {
            reg: 0.0,
            cls_seen: 0.0,
            cls_unseen: 0.0,
            contrastive: 0.0,
        }
    }
}

/// Loss terms, the weighted objective and its parameter gradient for one batch.
pub struct BatchEvaluation {
    pub breakdown: LossBreakdown,
    pub objective: f64,
    pub gradients: ModelParams,
    /// Hash of every ReLU on/off state in the forward pass.
    pub activation_pattern: u64,
}

fn scaled(m: &Matrix, s: f64) -> Matrix {
    let mut out = m.clone();
    out.data_mut().iter_mut().for_each(|v| *v *= s);
    out
}

pub fn evaluate_batch(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &RegionBatch,
    table: &SemanticTable,
    similarity: &SimilarityMatrix,
    vocab: &ClassVocabulary,
    weights: LossWeights,
) -> Result<BatchEvaluation> {
    if let Some(&bad) = batch.labels.iter().find(|&&l| l > vocab.n_seen()) {
        return Err(ZsdError::LabelOutOfRange {
            label: bad,
            max: vocab.n_seen(),
        });
    }
    let classes = assemble_class_matrix(table, &params.background)?;
    let out = forward_train(params, config, &batch.features, &classes, vocab)?;
    let (reg, d_off) = box_regression_loss(&out.offsets, &batch.targets, &batch.labels)?;
    let (cls_s, d_seen) = seen_classification_loss(&out.seen_logits, &batch.labels)?;
    let (cls_u, d_unseen) = unseen_alignment_loss(&out.unseen_probs, &batch.labels, similarity)?;
    let (con, d_z) = region_contrastive_loss(
        &out.embeddings,
        &batch.labels,
        config.temperature,
        config.include_background_in_contrastive,
    )?;
    let breakdown = total_loss(reg, cls_s, cls_u, con, config.lambda, config.beta);
    let objective =
        weights.reg * reg + weights.cls_seen * cls_s + weights.cls_unseen * cls_u + weights.contrastive * con;

    let (d_seen, d_unseen, d_z, d_off) = (
        scaled(&d_seen, weights.cls_seen),
        scaled(&d_unseen, weights.cls_unseen),
        scaled(&d_z, weights.contrastive),
        scaled(&d_off, weights.reg),
    );
    let gradients = backward(
        params,
        &out,
        OutputGradients {
            seen_logits: &d_seen,
            unseen_probs: &d_unseen,
            embeddings: &d_z,
            offsets: &d_off,
        },
        vocab,
    )?;
    Ok(BatchEvaluation {
        breakdown,
        objective,
        gradients,
        activation_pattern: out.cache.activation_pattern(),
    })
}

/// Training-objective loss and gradient for one batch.
pub fn loss_and_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &RegionBatch,
    table: &SemanticTable,
    similarity: &SimilarityMatrix,
    vocab: &ClassVocabulary,
) -> Result<(LossBreakdown, ModelParams)> {
    let e = evaluate_batch(params, config, batch, table, similarity, vocab, LossWeights::objective(config))?;
    Ok((e.breakdown, e.gradients))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub batch_size: usize,
    pub reg: f64,
    pub cls_seen: f64,
    pub cls_unseen: f64,
    pub contrastive: f64,
    pub total: f64,
}

impl StepRecord {
    fn new(epoch: usize, step: u64, batch_size: usize, l: &LossBreakdown) -> Self {
        Self {
            epoch,
            step,
            batch_size,
            reg: l.reg,
            cls_seen: l.cls_seen,
            cls_unseen: l.cls_unseen,
            contrastive: l.contrastive,
            total: l.total,
        }
    }
}

/// Observer for training progress. Both hooks may abort training by returning an error.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    /// Called after each completed epoch (1-based) with the current weights.
    fn on_epoch_end(&mut self, _epoch: usize, _step: u64, _params: &ModelParams) -> Result<()> {
        Ok(())
    }
}

/// Discards all progress events.
pub struct Silent;

impl TrainObserver for Silent {}

/// Collects every step record in memory.
#[derive(Default)]
pub struct Recorder {
    pub steps: Vec<StepRecord>,
}

impl TrainObserver for Recorder {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        self.steps.push(record.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: usize,
    /// Mean objective over the final epoch's batches.
    pub final_epoch_loss: f64,
}

/// Runs `trainer.epochs` epochs over `regions`. On a non-finite loss,
/// gradient or update the error is returned and `params` keeps the last
/// finite weights.
#[allow(clippy::too_many_arguments)]
pub fn train(
    params: &mut ModelParams,
    config: &ModelConfig,
    trainer: &TrainerConfig,
    regions: &RegionBatch,
    table: &SemanticTable,
    similarity: &SimilarityMatrix,
    vocab: &ClassVocabulary,
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary> {
    config.validate()?;
    trainer.validate()?;
    let mut sgd = SgdState::new(trainer.learning_rate, trainer.momentum);
    let mut step = 0u64;
    let mut final_epoch_loss = f64::NAN;
    for epoch in 0..trainer.epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in batch_iterator(regions, trainer.batch_size, trainer.seed, epoch as u64) {
            let (loss, grads) = loss_and_gradients(params, config, &batch, table, similarity, vocab)?;
            if !loss.is_finite() {
                return Err(ZsdError::NonFinite("training loss"));
            }
            let previous = params.clone();
            sgd.step(params, &grads)?;
            if !params.is_finite() {
                *params = previous;
                return Err(ZsdError::NonFinite("parameters after update"));
            }
            step += 1;
            sum += loss.total;
            count += 1;
            observer.on_step(&StepRecord::new(epoch, step, batch.len(), &loss))?;
        }
        final_epoch_loss = sum / count.max(1) as f64;
        observer.on_epoch_end(epoch + 1, step, params)?;
    }
    Ok(TrainSummary {
        steps: step,
        epochs: trainer.epochs,
        final_epoch_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::build_similarity_matrix;
    use crate::synthdata::{SynthBenchmark, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        bench: SynthBenchmark,
        config: ModelConfig,
        sim: SimilarityMatrix,
        params: ModelParams,
        regions: RegionBatch,
    }

    fn setup() -> Setup {
        let synth = SynthConfig {
            n_seen: 5,
            n_unseen: 2,
            train_images: 30,
            test_images: 5,
            ..SynthConfig::default()
        };
        let bench = SynthBenchmark::generate(&synth).unwrap();
        let vocab = &bench.embeddings.vocabulary;
        let config = ModelConfig {
            embed_dim: 16,
            head_hidden: 16,
            contrastive_dim: 8,
            ..ModelConfig::default()
        };
        let sim = build_similarity_matrix(&bench.embeddings.table, vocab, 1.0).unwrap();
        let params =
            ModelParams::init(&config, &bench.embeddings.table, vocab, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let regions = bench.train.regions().unwrap();
        Setup {
            bench,
            config,
            sim,
            params,
            regions,
        }
    }

    #[test]
    fn weighted_objective_matches_breakdown_total() {
        let s = setup();
        let e = evaluate_batch(
            &s.params,
            &s.config,
            &s.regions,
            &s.bench.embeddings.table,
            &s.sim,
            &s.bench.embeddings.vocabulary,
            LossWeights::objective(&s.config),
        )
        .unwrap();
        assert!((e.objective - e.breakdown.total).abs() < 1e-12);
        let b = &e.breakdown;
        assert!(b.reg >= 0.0 && b.cls_seen >= 0.0 && b.cls_unseen >= 0.0 && b.contrastive >= 0.0);
    }

    #[test]
    fn rejects_unseen_training_labels() {
        let s = setup();
        let mut batch = s.regions.select(&[0, 1]);
        batch.labels[0] = s.bench.embeddings.vocabulary.n_seen() + 1;
        let r = loss_and_gradients(
            &s.params,
            &s.config,
            &batch,
            &s.bench.embeddings.table,
            &s.sim,
            &s.bench.embeddings.vocabulary,
        );
        assert!(matches!(r, Err(ZsdError::LabelOutOfRange { .. })));
    }

    fn run(s: &Setup, trainer: &TrainerConfig) -> (ModelParams, Recorder) {
        let mut p = s.params.clone();
        let mut rec = Recorder::default();
        train(
            &mut p,
            &s.config,
            trainer,
            &s.regions,
            &s.bench.embeddings.table,
            &s.sim,
            &s.bench.embeddings.vocabulary,
            &mut rec,
        )
        .unwrap();
        (p, rec)
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let s = setup();
        let t = TrainerConfig {
            epochs: 5,
            batch_size: 32,
            ..TrainerConfig::default()
        };
        let (p1, r1) = run(&s, &t);
        let (p2, r2) = run(&s, &t);
        assert_eq!(p1, p2);
        assert_eq!(r1.steps, r2.steps);
        let per_epoch = s.regions.len().div_ceil(32);
        assert_eq!(r1.steps.len(), 5 * per_epoch);
        let mean = |e: usize| {
            let xs: Vec<f64> = r1.steps.iter().filter(|r| r.epoch == e).map(|r| r.total).collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        assert!(mean(4) < mean(0), "{} !< {}", mean(4), mean(0));
    }

    #[test]
    fn non_finite_update_keeps_last_good_params() {
        let s = setup();
        let t = TrainerConfig {
            epochs: 3,
            learning_rate: 1e300,
            momentum: 0.0,
            ..TrainerConfig::default()
        };
        let mut p = s.params.clone();
        let r = train(
            &mut p,
            &s.config,
            &t,
            &s.regions,
            &s.bench.embeddings.table,
            &s.sim,
            &s.bench.embeddings.vocabulary,
            &mut Silent,
        );
        assert!(r.is_err());
        assert!(p.is_finite());
    }
}
