//! Streaming spectrum-model inference with multi-rate attention over
//! word, syllable and phone contexts.
//!
//! The pipeline is `ContextTree -> FrameFeatureTrack -> encodings ->
//! frame-by-frame decoding -> SpectrumFrame sink`. Baselines, a scalar
//! reference implementation and an RTF benchmark live alongside.

pub mod baselines;
pub mod benchmark;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod features;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod rng;
pub mod validate;
pub mod weights;

pub use config::ModelConfig;
pub use decoder::{decode_step, decode_stream, DecoderState, DecoderWeights, FrameSink, StreamingDecoder};
pub use encoder::{Encodings, MultiRateEncoder};
pub use error::{Error, Result};
pub use features::{
    parse_context_tree, synth_corpus, synth_utterance, unroll_frames, ContextTree, FrameFeatureTrack,
    Level, SpectrumFrame,
};
pub use model::{Model, ModelKind, SynthCost};
pub use numerics::{MacCounter, Matrix};
pub use weights::{weights_init, ModelWeights};
