//! Training and prediction: NER over packed span groups, RE over
//! subject-oriented pair layouts, and entity-type refinement.

mod ner;
mod output;
mod re;
mod refine;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{expand_context, ContextWindow, CorpusError, Document};
use crate::encoder::{loss_and_grad_with, EncoderConfig, EncoderError, EncoderParams, Example};
use crate::heads::{HeadError, HeadParams, NerMode};
use crate::layout::LayoutError;
use crate::optim::{Adam, LinearSchedule};
use crate::spanspace::{LabelSpaceError, PackingStrategy};

pub use ner::{predict_ner, train_ner, NerModel, NerPrediction, ScoredEntity};
pub use output::{
    assemble, load_model, predictions_to_corpus, run_end_to_end, save_model, write_predictions, DocPrediction, SavedModel,
};
pub use re::{directed_supervision, predict_re, train_re, RePrediction, ReModel, ScoredRelation};
pub use refine::{refine_entity_types, relation_type_statistic, DEFAULT_REFINE_THRESHOLD};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("data: {0}")]
    Data(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Labels(#[from] LabelSpaceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] crate::encoder::checkpoint::CheckpointError),
}

/// Every knob of a training run. Missing keys in a config file fall back to
/// these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Maximum number of levitated pairs per layout (K).
    pub group_size: usize,
    /// Maximum candidate span length (L).
    pub max_span_len: usize,
    /// Maximum context window length in tokens (C).
    pub context_window: usize,
    pub packing: PackingStrategy,
    pub aux_weight: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub ner_mode: NerMode,
    /// Train the T-Concat first-stage head alongside the NER head.
    pub stage1_head: bool,
    /// Initialise span markers from the `[MASK]` and `entity` embeddings.
    pub prompt_init: bool,
    pub max_slots: usize,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            epochs: 10,
            batch_size: 8,
            group_size: 256,
            max_span_len: 8,
            context_window: 512,
            packing: PackingStrategy::Neighborhood,
            aux_weight: 1.0,
            seed: 42,
            hidden_dim: 32,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 64,
            ner_mode: NerMode::MarkerPlusTconcat,
            stage1_head: true,
            prompt_init: true,
            max_slots: 4096,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let checks = [
            (self.learning_rate > 0.0, "learning_rate must be positive"),
            ((0.0..1.0).contains(&self.warmup_fraction), "warmup_fraction must be in [0, 1)"),
            (self.epochs > 0, "epochs must be positive"),
            (self.batch_size > 0, "batch_size must be positive"),
            (self.group_size > 0, "group_size must be positive"),
            (self.max_span_len > 0, "max_span_len must be positive"),
            (self.context_window > 0, "context_window must be positive"),
            (self.aux_weight >= 0.0, "aux_weight must be non-negative"),
            (self.max_slots > 0, "max_slots must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(PipelineError::Config(msg.into()));
            }
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_position: self.context_window + 2,
            seed: self.seed,
        }
    }
}

/// Inference-time knobs. Predictions do not depend on `group_size`,
/// `packing` or `parallel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub group_size: usize,
    pub packing: PackingStrategy,
    pub seed: u64,
    /// Keep only the top-M first-stage candidates per sentence.
    pub two_stage: Option<usize>,
    pub max_slots: usize,
    pub parallel: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            group_size: 256,
            packing: PackingStrategy::Neighborhood,
            seed: 0,
            two_stage: None,
            max_slots: 4096,
            parallel: true,
        }
    }
}

impl PredictOptions {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.group_size == 0 {
            return Err(PipelineError::Config("group size must be positive".into()));
        }
        if self.two_stage == Some(0) {
            return Err(PipelineError::Config("two-stage candidate count must be positive".into()));
        }
        Ok(())
    }
}

/// Counters collected while predicting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InferenceStats {
    pub sentences: usize,
    pub layouts: usize,
    pub slots: usize,
}

impl InferenceStats {
    pub(crate) fn merge(&mut self, other: &InferenceStats) {
        self.sentences += other.sentences;
        self.layouts += other.layouts;
        self.slots += other.slots;
    }

    pub fn mean_slots(&self) -> f64 {
        if self.layouts == 0 {
            0.0
        } else {
            self.slots as f64 / self.layouts as f64
        }
    }

    pub fn layouts_per_sentence(&self) -> f64 {
        if self.sentences == 0 {
            0.0
        } else {
            self.layouts as f64 / self.sentences as f64
        }
    }
}

/// `(document index, sentence index)` for every sentence, with its window.
pub(crate) fn windows(
    docs: &[Document],
    context: usize,
) -> Result<Vec<(usize, usize, ContextWindow)>, PipelineError> {
    let mut out = Vec::new();
    for (di, doc) in docs.iter().enumerate() {
        for si in 1..=doc.num_sentences() {
            out.push((di, si, expand_context(doc, si, context)?));
        }
    }
    Ok(out)
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Mini-batch Adam over examples rebuilt each epoch by `examples_for`.
pub(crate) fn fit(
    encoder: &mut EncoderParams,
    heads: &mut HeadParams,
    cfg: &TrainConfig,
    mut examples_for: impl FnMut(usize) -> Result<Vec<Example>, PipelineError>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport, PipelineError> {
    let mut examples = examples_for(0)?;
    if examples.is_empty() {
        return Err(PipelineError::Data("no training examples".into()));
    }
    let per_epoch = examples.len().div_ceil(cfg.batch_size);
    let schedule = LinearSchedule::new(per_epoch * cfg.epochs, cfg.warmup_fraction);
    let mut adam = Adam::new(cfg.learning_rate, encoder, heads);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        if epoch > 0 {
            examples = examples_for(epoch)?;
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grads) = loss_and_grad_with(encoder, heads, &batch, cfg.aux_weight, cfg.parallel)?;
            adam.step(encoder, heads, &grads, schedule.factor(report.steps));
            report.steps += 1;
            loss_sum += loss;
            batches += 1;
        }
        let mean = loss_sum / batches as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(report)
}

/// Seed for a sentence's random packing, independent of processing order.
pub(crate) fn sentence_seed(seed: u64, doc: usize, sent: usize) -> u64 {
    seed ^ (doc as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (sent as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}
