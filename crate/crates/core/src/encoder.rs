//! Per-level source encoding: two same-length 1-D convolutions with ReLU,
//! dynamic max-pooling to a hard length cap, then key/value projections.
//!
//! Encoder cost is linear in the source length; the pooled output, and so
//! every per-frame attention read, is bounded by `l_max` rows.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{ContextTree, Level};
use crate::numerics::{self, accumulate_rows, relu_in_place, tally, MacCounter, Matrix};
use crate::weights::ModelWeights;

/// 1-D convolution filters. `filters` is laid out `[out][in][tap]`; `taps`
/// holds the same values regrouped as one `in x out` matrix per tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dWeights {
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    filters: Vec<f32>,
    bias: Vec<f32>,
    taps: Vec<Matrix>,
}

impl Conv1dWeights {
    pub fn new(
        out_ch: usize,
        in_ch: usize,
        kernel: usize,
        filters: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("conv kernel {kernel} must be odd")));
        }
        if filters.len() != out_ch * in_ch * kernel || bias.len() != out_ch {
            return Err(Error::shape(
                "Conv1dWeights",
                format!(
                    "{} filter values and {} biases for {out_ch}x{in_ch}x{kernel}",
                    filters.len(),
                    bias.len()
                ),
            ));
        }
        let taps = (0..kernel)
            .map(|k| {
                let mut m = Matrix::zeros(in_ch, out_ch);
                for o in 0..out_ch {
                    for c in 0..in_ch {
                        m.set(c, o, filters[(o * in_ch + c) * kernel + k]);
                    }
                }
                m
            })
            .collect();
        Ok(Self {
            out_ch,
            in_ch,
            kernel,
            filters,
            bias,
            taps,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// Raw `[out][in][tap]` filter values.
    pub fn filters(&self) -> &[f32] {
        &self.filters
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
}

/// Same-length convolution with symmetric zero padding:
/// `y[n, m] = b[m] + sum_c sum_k W[m, c, k] * x[n + k - K/2, c]`.
///
/// Adds `L * out * in * K` MACs (padding taps included).
pub fn conv1d_same(
    x: &Matrix,
    w: &Conv1dWeights,
    counter: Option<&mut MacCounter>,
) -> Result<Matrix> {
    let len = x.rows();
    if len == 0 || x.cols() != w.in_ch {
        return Err(Error::shape(
            "conv1d_same",
            format!("input {}x{} for {} input channels", len, x.cols(), w.in_ch),
        ));
    }
    let half = w.kernel / 2;
    let mut out = Matrix::zeros(len, w.out_ch);
    let mut parts: Vec<(&[f32], &Matrix)> = Vec::with_capacity(w.kernel);
    for n in 0..len {
        parts.clear();
        for (k, tap) in w.taps.iter().enumerate() {
            let src = n + k;
            if src >= half && src - half < len {
                parts.push((x.row(src - half), tap));
            }
        }
        accumulate_rows(&parts, Some(&w.bias), out.row_mut(n));
    }
    tally(
        counter,
        (len * w.out_ch * w.in_ch * w.kernel) as u64,
        0,
    );
    Ok(out)
}

/// Pooled length and stride for a source of `len` rows under cap `l_max`.
pub fn pooled_shape(len: usize, l_max: usize) -> (usize, usize) {
    (len.min(l_max), len.div_ceil(l_max))
}

/// Columnwise max over consecutive windows of `S = ceil(L / l_max)` rows.
/// The input is zero-padded to `S * min(L, l_max)` rows first, so windows
/// past the end see zeros. Returns the pooled matrix and `S`.
pub fn dynamic_max_pool(x_hat: &Matrix, l_max: usize) -> Result<(Matrix, usize)> {
    let len = x_hat.rows();
    if len == 0 {
        return Err(Error::shape("dynamic_max_pool", "empty input"));
    }
    if l_max == 0 {
        return Err(Error::Config("l_max must be at least 1".into()));
    }
    let (pooled, stride) = pooled_shape(len, l_max);
    if stride == 1 {
        return Ok((x_hat.clone(), 1));
    }
    let d = x_hat.cols();
    let mut out = Matrix::zeros(pooled, d);
    for n in 0..pooled {
        let start = n * stride;
        let end = (start + stride).min(len);
        let row = out.row_mut(n);
        if end.saturating_sub(start) < stride {
            // Window reaches into the zero padding.
            row.fill(0.0);
        } else {
            row.fill(f32::NEG_INFINITY);
        }
        for a in start..end {
            for (o, &v) in row.iter_mut().zip(x_hat.row(a)) {
                if v > *o {
                    *o = v;
                }
            }
        }
    }
    Ok((out, stride))
}

/// Weights for one source level.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub conv1: Conv1dWeights,
    pub conv2: Conv1dWeights,
    pub key: Matrix,
    pub value: Matrix,
}

impl EncoderWeights {
    pub fn from_model(weights: &ModelWeights, level: Level) -> Result<Self> {
        let p = format!("enc.{}", level.name());
        let conv = |name: &str| -> Result<Conv1dWeights> {
            let t = weights.get(&format!("{p}.{name}.weight"))?;
            let [o, i, k] = t.shape[..] else {
                return Err(Error::Integrity(format!(
                    "{p}.{name}.weight has shape {:?}",
                    t.shape
                )));
            };
            Conv1dWeights::new(o, i, k, t.data.clone(), weights.vector(&format!("{p}.{name}.bias"))?)
        };
        Ok(Self {
            conv1: conv("conv1")?,
            conv2: conv("conv2")?,
            key: weights.matrix(&format!("{p}.key"))?,
            value: weights.matrix(&format!("{p}.value"))?,
        })
    }

    pub fn key_dim(&self) -> usize {
        self.key.cols()
    }
}

/// Pooled keys and values for one level of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEncoding {
    pub level: Level,
    /// `pooled_len x d_k`
    pub keys: Matrix,
    /// `pooled_len x d_k`
    pub values: Matrix,
    pub pooled_len: usize,
    pub stride: usize,
    /// Source length before pooling.
    pub source_len: usize,
}

impl SourceEncoding {
    pub fn key_dim(&self) -> usize {
        self.keys.cols()
    }
}

/// Encodes one level. `l_max = None` disables pooling, leaving the context
/// as long as the source.
pub fn encode_source(
    level: Level,
    x: &Matrix,
    w: &EncoderWeights,
    l_max: Option<usize>,
    mut counter: Option<&mut MacCounter>,
) -> Result<SourceEncoding> {
    if x.rows() == 0 {
        return Err(Error::shape("encode_source", format!("empty {} source", level.name())));
    }
    let mut h = conv1d_same(x, &w.conv1, counter.as_deref_mut())?;
    relu_in_place(h.data_mut());
    let mut h = conv1d_same(&h, &w.conv2, counter.as_deref_mut())?;
    relu_in_place(h.data_mut());
    let (pooled, stride) = match l_max {
        Some(cap) => dynamic_max_pool(&h, cap)?,
        None => (h, 1),
    };
    let keys = numerics::matmul(&pooled, &w.key, counter.as_deref_mut())?;
    let values = numerics::matmul(&pooled, &w.value, counter)?;
    Ok(SourceEncoding {
        level,
        pooled_len: keys.rows(),
        keys,
        values,
        stride,
        source_len: x.rows(),
    })
}

/// Encoders for all three levels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRateEncoder {
    pub levels: [EncoderWeights; 3],
}

/// Encodings indexed by [`Level::index`].
pub type Encodings = [SourceEncoding; 3];

impl MultiRateEncoder {
    pub fn from_model(weights: &ModelWeights) -> Result<Self> {
        Ok(Self {
            levels: [
                EncoderWeights::from_model(weights, Level::Word)?,
                EncoderWeights::from_model(weights, Level::Syllable)?,
                EncoderWeights::from_model(weights, Level::Phone)?,
            ],
        })
    }

    pub fn encode(
        &self,
        tree: &ContextTree,
        config: &ModelConfig,
        mut counter: Option<&mut MacCounter>,
    ) -> Result<Encodings> {
        let enc = |level: Level, counter: Option<&mut MacCounter>| {
            encode_source(
                level,
                tree.level(level),
                &self.levels[level.index()],
                config.pool_limit(level),
                counter,
            )
        };
        Ok([
            enc(Level::Word, counter.as_deref_mut())?,
            enc(Level::Syllable, counter.as_deref_mut())?,
            enc(Level::Phone, counter)?,
        ])
    }
}
