//! The type-aware question generator: vocabulary, transformer encoder and
//! decoder, graph attention and focus prediction, training, decoding, type
//! classifiers and the controlled-generation variants.

pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod controlled;
pub mod decode;
pub mod error;
pub mod generator;
pub mod layers;
pub mod train;
pub mod vocab;

pub use checkpoint::{Checkpoint, CheckpointHeader, CheckpointKind};
pub use classifier::{
    select_exemplar, self_train_filter, ClassifierExample, ClassifierRole, SelectionMode, SequenceClassifier,
    TypePrediction,
};
pub use config::{DecodeOptions, ModelConfig, SamplingOptions, TrainConfig};
pub use controlled::{generate_controlled, ControlledModels, ControlledOutput, GenerationRequest, Strategy, Variant};
pub use decode::{beam_decode, beam_search, greedy_decode, nucleus_sample, BeamHypothesis};
pub use error::{ModelError, Result};
pub use generator::{Generator, GeneratorInput, StepModel};
pub use train::{evaluate, train, EvalStats, TrainLog, Trainer, TrainingExample};
pub use vocab::{OutputKind, Vocabulary};
