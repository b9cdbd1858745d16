//! Model selection and the end-to-end `tree -> frames` entry point shared by
//! the CLI and the benchmark.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    plain_recurrent_stream, self_attention_stream, PlainRecurrentWeights, SelfAttnCost,
    SelfAttnWeights,
};
use crate::config::ModelConfig;
use crate::decoder::{decode_stream, DecoderWeights, FrameBuffer, FrameSink};
use crate::encoder::MultiRateEncoder;
use crate::error::{Error, Result};
use crate::features::{unroll_frames, ContextTree, SpectrumFrame};
use crate::numerics::MacCounter;
use crate::weights::ModelWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    MultiRate,
    /// Multi-rate attention over the full, unpooled context.
    MultiRateNoPool,
    PlainRecurrent,
    FrameSelfAttention,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::MultiRate,
        ModelKind::MultiRateNoPool,
        ModelKind::PlainRecurrent,
        ModelKind::FrameSelfAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MultiRate => "multirate",
            ModelKind::MultiRateNoPool => "multirate-nopool",
            ModelKind::PlainRecurrent => "lstm",
            ModelKind::FrameSelfAttention => "selfattn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown model {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// MACs of one synthesis, split into the per-utterance part (source
/// encoders, or the whole transformer stack) and the per-frame part.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SynthCost {
    pub encoder: MacCounter,
    pub decoder: MacCounter,
    pub frames: usize,
}

impl SynthCost {
    pub fn per_frame_macs(&self) -> u64 {
        if self.frames == 0 {
            0
        } else {
            self.decoder.macs / self.frames as u64
        }
    }

    /// MACs spent before the first frame leaves: the per-utterance part
    /// plus one frame.
    pub fn first_frame_macs(&self) -> u64 {
        self.encoder.macs + self.per_frame_macs()
    }

    pub fn total(&self) -> MacCounter {
        let mut t = self.encoder;
        t.merge(&self.decoder);
        t
    }
}

#[derive(Debug, Clone)]
enum Net {
    MultiRate {
        encoder: MultiRateEncoder,
        decoder: DecoderWeights,
    },
    Plain(PlainRecurrentWeights),
    SelfAttn(SelfAttnWeights),
}

/// A ready-to-run model.
#[derive(Debug, Clone)]
pub struct Model {
    kind: ModelKind,
    config: ModelConfig,
    net: Net,
}

impl Model {
    /// Builds `kind` from a weight set. `MultiRate` always pools and
    /// `MultiRateNoPool` never does, regardless of the stored flag.
    pub fn build(kind: ModelKind, weights: &ModelWeights) -> Result<Self> {
        weights.config.validate()?;
        weights.require(kind)?;
        let mut config = weights.config.clone();
        let net = match kind {
            ModelKind::MultiRate | ModelKind::MultiRateNoPool => {
                config.pooling = kind == ModelKind::MultiRate;
                Net::MultiRate {
                    encoder: MultiRateEncoder::from_model(weights)?,
                    decoder: DecoderWeights::from_model(weights)?,
                }
            }
            ModelKind::PlainRecurrent => Net::Plain(PlainRecurrentWeights::from_model(weights)?),
            ModelKind::FrameSelfAttention => Net::SelfAttn(SelfAttnWeights::from_model(weights)?),
        };
        Ok(Self { kind, config, net })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Unrolls `tree`, runs the model and streams every frame to `sink`.
    pub fn synthesize(
        &self,
        tree: &ContextTree,
        sink: &mut impl FrameSink,
        cost: Option<&mut SynthCost>,
    ) -> Result<usize> {
        self.config.check_tree_dims(&tree.dims())?;
        let track = unroll_frames(tree);
        let mut scratch = SynthCost::default();
        let counting = cost.is_some();
        let c = &mut scratch;
        let emitted = match &self.net {
            Net::MultiRate { encoder, decoder } => {
                let enc = encoder.encode(tree, &self.config, counting.then_some(&mut c.encoder))?;
                decode_stream(&track, &enc, decoder, sink, counting.then_some(&mut c.decoder))?
            }
            Net::Plain(w) => plain_recurrent_stream(&track, w, sink, counting.then_some(&mut c.decoder))?,
            Net::SelfAttn(w) => {
                let mut sa = SelfAttnCost::default();
                let n = self_attention_stream(&track, w, sink, counting.then_some(&mut sa))?;
                if counting {
                    // The output head is the only per-frame work.
                    let head = (w.out_weight.rows() * w.out_weight.cols() * n) as u64;
                    let total = sa.total();
                    c.decoder.add_macs(head);
                    c.encoder.add_macs(total.macs - head);
                    c.encoder.add_exps(total.exps);
                }
                n
            }
        };
        c.frames = emitted;
        if let Some(out) = cost {
            *out = scratch;
        }
        Ok(emitted)
    }

    pub fn synthesize_frames(&self, tree: &ContextTree) -> Result<Vec<SpectrumFrame>> {
        let mut buf = FrameBuffer::default();
        self.synthesize(tree, &mut buf, None)?;
        Ok(buf.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::synth_utterance;
    use crate::weights::weights_init;

    #[test]
    fn names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!(matches!("rnn".parse::<ModelKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn every_model_emits_one_frame_per_frame() {
        let w = weights_init(3, &ModelConfig::default()).unwrap();
        let tree = synth_utterance(4, 0.5).unwrap();
        for k in ModelKind::ALL {
            let m = Model::build(k, &w).unwrap();
            let mut cost = SynthCost::default();
            let mut buf = FrameBuffer::default();
            let n = m.synthesize(&tree, &mut buf, Some(&mut cost)).unwrap();
            assert_eq!(n, tree.frame_count(), "{k}");
            assert_eq!(cost.frames, n);
            assert!(buf.0.iter().all(SpectrumFrame::is_finite));
            assert!(cost.decoder.macs > 0);
        }
    }

    #[test]
    fn pooling_switch_changes_only_long_inputs() {
        let w = weights_init(3, &ModelConfig::default()).unwrap();
        // Fewer than 50 units per level: pooling is the identity.
        let short = synth_utterance(5, 0.3).unwrap();
        let a = Model::build(ModelKind::MultiRate, &w).unwrap();
        let b = Model::build(ModelKind::MultiRateNoPool, &w).unwrap();
        assert!(short.phones().rows() <= 50);
        assert_eq!(a.synthesize_frames(&short).unwrap(), b.synthesize_frames(&short).unwrap());
    }
}
