use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Level, TreeDims, FRAME_FIXED_DIM};

/// Dimensions and switches shared by every model variant.
///
/// `d_f` is derived from the sentence and phrase widths plus the fixed
/// frame-level columns; it is stored so weight files are self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_sent: usize,
    pub d_phrase: usize,
    pub d_w: usize,
    pub d_s: usize,
    pub d_p: usize,
    pub d_f: usize,
    pub d_model: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Conv kernel width; must be odd.
    pub kernel: usize,
    /// Pooled context cap per level, ordered word, syllable, phone.
    pub l_max: [usize; 3],
    /// Feed the previous output frame back into the first LSTM layer.
    pub feedback: bool,
    /// Dynamic max-pooling of the source encodings.
    pub pooling: bool,
    pub selfattn: SelfAttnConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfAttnConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff: usize,
}

impl Default for SelfAttnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            dim: 128,
            ff: 256,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let dims = TreeDims::default();
        Self {
            d_sent: dims.sentence,
            d_phrase: dims.phrase,
            d_w: dims.word,
            d_s: dims.syllable,
            d_p: dims.phone,
            d_f: dims.sentence + dims.phrase + FRAME_FIXED_DIM,
            d_model: 128,
            hidden1: 256,
            hidden2: 128,
            kernel: 5,
            l_max: [50; 3],
            feedback: true,
            pooling: true,
            selfattn: SelfAttnConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let dims = [
            ("d_w", self.d_w),
            ("d_s", self.d_s),
            ("d_p", self.d_p),
            ("d_f", self.d_f),
            ("d_model", self.d_model),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("selfattn.layers", self.selfattn.layers),
            ("selfattn.heads", self.selfattn.heads),
            ("selfattn.dim", self.selfattn.dim),
            ("selfattn.ff", self.selfattn.ff),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel size {} must be odd", self.kernel));
        }
        if self.d_f != self.d_sent + self.d_phrase + FRAME_FIXED_DIM {
            return bad(format!(
                "d_f = {} but sentence {} + phrase {} + {FRAME_FIXED_DIM} fixed columns = {}",
                self.d_f,
                self.d_sent,
                self.d_phrase,
                self.d_sent + self.d_phrase + FRAME_FIXED_DIM
            ));
        }
        if self.l_max.contains(&0) {
            return bad("l_max must be at least 1".into());
        }
        if self.selfattn.dim % self.selfattn.heads != 0 {
            return bad(format!(
                "self-attention dim {} not divisible by {} heads",
                self.selfattn.dim, self.selfattn.heads
            ));
        }
        Ok(())
    }

    pub fn level_dim(&self, level: Level) -> usize {
        match level {
            Level::Word => self.d_w,
            Level::Syllable => self.d_s,
            Level::Phone => self.d_p,
        }
    }

    pub fn l_max_for(&self, level: Level) -> usize {
        self.l_max[level.index()]
    }

    /// Pooling cap in effect for a level, `None` when pooling is disabled.
    pub fn pool_limit(&self, level: Level) -> Option<usize> {
        self.pooling.then(|| self.l_max_for(level))
    }

    pub fn tree_dims(&self) -> TreeDims {
        TreeDims {
            sentence: self.d_sent,
            phrase: self.d_phrase,
            word: self.d_w,
            syllable: self.d_s,
            phone: self.d_p,
        }
    }

    /// Checks that a tree's feature widths match this configuration.
    pub fn check_tree_dims(&self, dims: &TreeDims) -> Result<()> {
        let want = self.tree_dims();
        if *dims != want {
            return Err(Error::shape(
                "ModelConfig::check_tree_dims",
                format!("tree has dims {dims:?}, model expects {want:?}"),
            ));
        }
        Ok(())
    }
}
