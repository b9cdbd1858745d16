//! Comparison models for the RTF study.
//!
//! * [`BaselineKind::PlainRecurrent`]: the decoder's two LSTM layers and an
//!   output head, no attention. Constant cost per frame.
//! * [`BaselineKind::FrameSelfAttention`]: a non-causal transformer encoder
//!   over all frame-rate features followed by a per-frame output head. Its
//!   attention terms cost `2 * L^2 * D` MACs per layer.

use serde::{Deserialize, Serialize};

use crate::decoder::{FrameBuffer, FrameSink};
use crate::error::{Error, Result};
use crate::features::{FrameFeatureTrack, SpectrumFrame, SPECTRUM_DIM};
use crate::numerics::{
    linear_into, lstm_cell_step_in_place, matmul, relu_in_place, softmax_in_place, LstmWeights,
    MacCounter, Matrix,
};
use crate::weights::ModelWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    PlainRecurrent,
    FrameSelfAttention,
}

// ---------------------------------------------------------------------------
// Plain recurrent

#[derive(Debug, Clone, PartialEq)]
pub struct PlainRecurrentWeights {
    pub lstm1: LstmWeights,
    pub lstm2: LstmWeights,
    /// `hidden2 x 19`
    pub out_weight: Matrix,
    pub out_bias: Vec<f32>,
    pub feedback: bool,
}

impl PlainRecurrentWeights {
    pub fn from_model(weights: &ModelWeights) -> Result<Self> {
        let w = Self {
            lstm1: weights.lstm("lstm.lstm1")?,
            lstm2: weights.lstm("lstm.lstm2")?,
            out_weight: weights.matrix("lstm.out.weight")?,
            out_bias: weights.vector("lstm.out.bias")?,
            feedback: weights.config.feedback,
        };
        if w.out_weight.rows() != w.lstm2.hidden()
            || w.out_weight.cols() != SPECTRUM_DIM
            || w.lstm2.input_dim() != w.lstm1.hidden()
            || w.lstm1.input_dim() < SPECTRUM_DIM
        {
            return Err(Error::Integrity("plain recurrent weights are inconsistent".into()));
        }
        Ok(w)
    }

    pub fn frame_dim(&self) -> usize {
        self.lstm1.input_dim() - SPECTRUM_DIM
    }

    pub fn step_macs(&self) -> u64 {
        self.lstm1.step_macs()
            + self.lstm2.step_macs()
            + (self.out_weight.rows() * self.out_weight.cols()) as u64
    }
}

/// Streams the plain recurrent baseline over `track`.
pub fn plain_recurrent_stream(
    track: &FrameFeatureTrack,
    w: &PlainRecurrentWeights,
    sink: &mut impl FrameSink,
    mut counter: Option<&mut MacCounter>,
) -> Result<usize> {
    let d_f = w.frame_dim();
    if track.dim() != d_f {
        return Err(Error::shape(
            "plain_recurrent_decode",
            format!("track has {} features, model expects {d_f}", track.dim()),
        ));
    }
    let (h1n, h2n) = (w.lstm1.hidden(), w.lstm2.hidden());
    let mut input = vec![0.0; w.lstm1.input_dim()];
    let (mut h1, mut c1, mut g1) = (vec![0.0; h1n], vec![0.0; h1n], vec![0.0; 4 * h1n]);
    let (mut h2, mut c2, mut g2) = (vec![0.0; h2n], vec![0.0; h2n], vec![0.0; 4 * h2n]);
    let mut y = SpectrumFrame::zero();
    for t in 0..track.len() {
        input[..d_f].copy_from_slice(track.frame(t));
        if w.feedback {
            input[d_f..].copy_from_slice(y.as_slice());
        }
        lstm_cell_step_in_place(&input, &mut h1, &mut c1, &mut g1, &w.lstm1, counter.as_deref_mut())?;
        lstm_cell_step_in_place(&h1, &mut h2, &mut c2, &mut g2, &w.lstm2, counter.as_deref_mut())?;
        linear_into(&h2, &w.out_weight, Some(&w.out_bias), &mut y.0, counter.as_deref_mut())?;
        sink.accept(t, &y)
            .map_err(|source| Error::SinkAborted { emitted: t, source })?;
    }
    Ok(track.len())
}

pub fn plain_recurrent_decode(
    track: &FrameFeatureTrack,
    w: &PlainRecurrentWeights,
    counter: Option<&mut MacCounter>,
) -> Result<Vec<SpectrumFrame>> {
    let mut out = FrameBuffer::default();
    plain_recurrent_stream(track, w, &mut out, counter)?;
    Ok(out.0)
}

// ---------------------------------------------------------------------------
// Frame-rate self-attention

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttnLayer {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub bq: Vec<f32>,
    pub bk: Vec<f32>,
    pub bv: Vec<f32>,
    pub bo: Vec<f32>,
    pub ff1_weight: Matrix,
    pub ff1_bias: Vec<f32>,
    pub ff2_weight: Matrix,
    pub ff2_bias: Vec<f32>,
    pub ln1_gain: Vec<f32>,
    pub ln1_bias: Vec<f32>,
    pub ln2_gain: Vec<f32>,
    pub ln2_bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttnWeights {
    pub input_weight: Matrix,
    pub input_bias: Vec<f32>,
    pub layers: Vec<SelfAttnLayer>,
    pub out_weight: Matrix,
    pub out_bias: Vec<f32>,
    pub heads: usize,
}

impl SelfAttnWeights {
    pub fn from_model(weights: &ModelWeights) -> Result<Self> {
        let sa = &weights.config.selfattn;
        let layers = (0..sa.layers)
            .map(|i| {
                let p = format!("sa.layer{i}");
                let m = |n: &str| weights.matrix(&format!("{p}.{n}"));
                let v = |n: &str| weights.vector(&format!("{p}.{n}"));
                Ok(SelfAttnLayer {
                    wq: m("wq")?,
                    wk: m("wk")?,
                    wv: m("wv")?,
                    wo: m("wo")?,
                    bq: v("bq")?,
                    bk: v("bk")?,
                    bv: v("bv")?,
                    bo: v("bo")?,
                    ff1_weight: m("ff1.weight")?,
                    ff1_bias: v("ff1.bias")?,
                    ff2_weight: m("ff2.weight")?,
                    ff2_bias: v("ff2.bias")?,
                    ln1_gain: v("ln1.gain")?,
                    ln1_bias: v("ln1.bias")?,
                    ln2_gain: v("ln2.gain")?,
                    ln2_bias: v("ln2.bias")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let w = Self {
            input_weight: weights.matrix("sa.input.weight")?,
            input_bias: weights.vector("sa.input.bias")?,
            layers,
            out_weight: weights.matrix("sa.out.weight")?,
            out_bias: weights.vector("sa.out.bias")?,
            heads: sa.heads,
        };
        if w.model_dim() % w.heads != 0 || w.out_weight.rows() != w.model_dim() {
            return Err(Error::Integrity("self-attention weights are inconsistent".into()));
        }
        Ok(w)
    }

    pub fn model_dim(&self) -> usize {
        self.input_weight.cols()
    }

    pub fn frame_dim(&self) -> usize {
        self.input_weight.rows()
    }
}

/// MACs split into the score/context attention terms and everything else.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelfAttnCost {
    pub attention: MacCounter,
    pub other: MacCounter,
}

impl SelfAttnCost {
    pub fn total(&self) -> MacCounter {
        let mut t = self.attention;
        t.merge(&self.other);
        t
    }
}

fn affine(x: &Matrix, w: &Matrix, b: &[f32], counter: Option<&mut MacCounter>) -> Result<Matrix> {
    let mut y = matmul(x, w, counter)?;
    for r in 0..y.rows() {
        for (v, &bv) in y.row_mut(r).iter_mut().zip(b) {
            *v += bv;
        }
    }
    Ok(y)
}

fn layer_norm_rows(x: &mut Matrix, gain: &[f32], bias: &[f32]) {
    let d = x.cols() as f64;
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for (i, v) in row.iter_mut().enumerate() {
            *v = ((*v as f64 - mean) * inv * gain[i] as f64 + bias[i] as f64) as f32;
        }
    }
}

fn add_positional_encoding(x: &mut Matrix) {
    let d = x.cols();
    for t in 0..x.rows() {
        let row = x.row_mut(t);
        for i in (0..d).step_by(2) {
            let angle = t as f64 / 10000f64.powf(i as f64 / d as f64);
            row[i] += angle.sin() as f32;
            if i + 1 < d {
                row[i + 1] += angle.cos() as f32;
            }
        }
    }
}

/// Full-context multi-head attention over all rows of `x`; adds the score
/// and context MACs (`2 * L^2 * D`) to `attn`, projections to `other`.
fn self_attention_block(
    x: &Matrix,
    layer: &SelfAttnLayer,
    heads: usize,
    mut attn: Option<&mut MacCounter>,
    mut other: Option<&mut MacCounter>,
) -> Result<Matrix> {
    let len = x.rows();
    let dim = x.cols();
    let dh = dim / heads;
    let q = affine(x, &layer.wq, &layer.bq, other.as_deref_mut())?;
    let k = affine(x, &layer.wk, &layer.bk, other.as_deref_mut())?;
    let v = affine(x, &layer.wv, &layer.bv, other.as_deref_mut())?;
    let scale = (1.0 / (dh as f64).sqrt()) as f32;

    let mut ctx = Matrix::zeros(len, dim);
    let mut scores = vec![0.0f32; len];
    let mut head_out = vec![0.0f32; dh];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        // Per-head keys transposed (dh x L) and values (L x dh).
        let mut kt = Matrix::zeros(dh, len);
        let mut vh = Matrix::zeros(len, dh);
        for j in 0..len {
            for (c, col) in cols.clone().enumerate() {
                kt.set(c, j, k.get(j, col));
            }
            vh.row_mut(j).copy_from_slice(&v.row(j)[cols.clone()]);
        }
        for i in 0..len {
            linear_into(&q.row(i)[cols.clone()], &kt, None, &mut scores, attn.as_deref_mut())?;
            for s in scores.iter_mut() {
                *s *= scale;
            }
            softmax_in_place(&mut scores, attn.as_deref_mut())?;
            linear_into(&scores, &vh, None, &mut head_out, attn.as_deref_mut())?;
            ctx.row_mut(i)[cols.clone()].copy_from_slice(&head_out);
        }
    }
    affine(&ctx, &layer.wo, &layer.bo, other)
}

/// Runs the transformer stack over the whole track. Returns `L x D` hidden
/// states.
pub fn self_attention_encode(
    track: &FrameFeatureTrack,
    w: &SelfAttnWeights,
    mut cost: Option<&mut SelfAttnCost>,
) -> Result<Matrix> {
    if track.dim() != w.frame_dim() {
        return Err(Error::shape(
            "self_attention_decode",
            format!("track has {} features, model expects {}", track.dim(), w.frame_dim()),
        ));
    }
    if track.is_empty() {
        return Err(Error::shape("self_attention_decode", "empty track"));
    }
    let (mut attn_c, mut other_c) = match cost.as_deref_mut() {
        Some(c) => (Some(&mut c.attention), Some(&mut c.other)),
        None => (None, None),
    };

    let mut x = affine(&track.frames, &w.input_weight, &w.input_bias, other_c.as_deref_mut())?;
    add_positional_encoding(&mut x);
    for layer in &w.layers {
        let a = self_attention_block(&x, layer, w.heads, attn_c.as_deref_mut(), other_c.as_deref_mut())?;
        for (xv, av) in x.data_mut().iter_mut().zip(a.data()) {
            *xv += av;
        }
        layer_norm_rows(&mut x, &layer.ln1_gain, &layer.ln1_bias);
        let mut f = affine(&x, &layer.ff1_weight, &layer.ff1_bias, other_c.as_deref_mut())?;
        relu_in_place(f.data_mut());
        let f = affine(&f, &layer.ff2_weight, &layer.ff2_bias, other_c.as_deref_mut())?;
        for (xv, fv) in x.data_mut().iter_mut().zip(f.data()) {
            *xv += fv;
        }
        layer_norm_rows(&mut x, &layer.ln2_gain, &layer.ln2_bias);
    }
    Ok(x)
}

/// Encodes the full track, then emits one frame per position.
pub fn self_attention_stream(
    track: &FrameFeatureTrack,
    w: &SelfAttnWeights,
    sink: &mut impl FrameSink,
    mut cost: Option<&mut SelfAttnCost>,
) -> Result<usize> {
    let hidden = self_attention_encode(track, w, cost.as_deref_mut())?;
    let mut y = SpectrumFrame::zero();
    for t in 0..hidden.rows() {
        linear_into(
            hidden.row(t),
            &w.out_weight,
            Some(&w.out_bias),
            &mut y.0,
            cost.as_deref_mut().map(|c| &mut c.other),
        )?;
        sink.accept(t, &y)
            .map_err(|source| Error::SinkAborted { emitted: t, source })?;
    }
    Ok(hidden.rows())
}

pub fn self_attention_decode(
    track: &FrameFeatureTrack,
    w: &SelfAttnWeights,
    counter: Option<&mut MacCounter>,
) -> Result<Vec<SpectrumFrame>> {
    let mut out = FrameBuffer::default();
    let mut cost = SelfAttnCost::default();
    self_attention_stream(track, w, &mut out, Some(&mut cost))?;
    if let Some(c) = counter {
        c.merge(&cost.total());
    }
    Ok(out.0)
}

/// Exact score + context MACs of the encoder for `len` frames.
pub fn selfattn_attention_macs(w: &SelfAttnWeights, len: usize) -> u64 {
    (w.layers.len() * 2 * len * len * w.model_dim()) as u64
}
