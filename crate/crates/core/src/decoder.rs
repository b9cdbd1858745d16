//! Streaming decoder: one recurrent step per frame, one dot-product
//! attention read per level over its pooled keys/values, a linear merge of
//! the three contexts, and a linear output head.
//!
//! Per frame:
//!
//! ```text
//! u      = [x_f(t), y(t-1)]
//! h1, c1 = lstm1(u)
//! h2, c2 = lstm2(h1)                 h(t) = h2 is the query source
//! c_i    = softmax(q_i K_i^T / sqrt(d_k_i)) V_i,   q_i = h(t) W_q_i
//! c(t)   = [c_w, c_s, c_p] W
//! y(t)   = [c(t), h(t)] W_out + b
//! ```
//!
//! A [`StreamingDecoder`] owns all scratch buffers, so stepping does not
//! allocate. Its [`DecoderState`] is the whole recurrence and can be saved
//! and resumed.

use crate::encoder::{Encodings, SourceEncoding};
use crate::error::{Error, Result};
use crate::features::{FrameFeatureTrack, Level, SpectrumFrame, SPECTRUM_DIM};
use crate::numerics::{
    accumulate_rows, dot, linear, linear_into, lstm_cell_step_in_place, softmax_in_place, tally,
    LstmWeights, MacCounter, Matrix,
};
use crate::weights::ModelWeights;

/// Boxed error a frame sink may return.
pub type SinkError = Box<dyn std::error::Error + Send + Sync>;

/// Receives frames in order as they are produced.
pub trait FrameSink {
    fn accept(&mut self, index: usize, frame: &SpectrumFrame) -> std::result::Result<(), SinkError>;
}

impl<F> FrameSink for F
where
    F: FnMut(usize, &SpectrumFrame) -> std::result::Result<(), SinkError>,
{
    fn accept(&mut self, index: usize, frame: &SpectrumFrame) -> std::result::Result<(), SinkError> {
        self(index, frame)
    }
}

/// Sink that keeps every frame.
#[derive(Debug, Default, Clone)]
pub struct FrameBuffer(pub Vec<SpectrumFrame>);

impl FrameSink for FrameBuffer {
    fn accept(&mut self, _: usize, frame: &SpectrumFrame) -> std::result::Result<(), SinkError> {
        self.0.push(*frame);
        Ok(())
    }
}

/// Sink that drops frames.
#[derive(Debug, Default, Clone, Copy)]
pub struct DiscardFrames;

impl FrameSink for DiscardFrames {
    fn accept(&mut self, _: usize, frame: &SpectrumFrame) -> std::result::Result<(), SinkError> {
        std::hint::black_box(frame);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub lstm1: LstmWeights,
    pub lstm2: LstmWeights,
    /// `hidden2 x d_k_i`, indexed by [`Level::index`].
    pub query: [Matrix; 3],
    /// `(d_w + d_s + d_p) x d_model`
    pub combine: Matrix,
    /// `(d_model + hidden2) x 19`
    pub out_weight: Matrix,
    pub out_bias: Vec<f32>,
    /// Feed `y(t-1)` into the first layer; when off a zero frame is fed.
    pub feedback: bool,
}

impl DecoderWeights {
    pub fn from_model(weights: &ModelWeights) -> Result<Self> {
        let q = |l: Level| weights.matrix(&format!("dec.query.{}", l.name()));
        let w = Self {
            lstm1: weights.lstm("dec.lstm1")?,
            lstm2: weights.lstm("dec.lstm2")?,
            query: [q(Level::Word)?, q(Level::Syllable)?, q(Level::Phone)?],
            combine: weights.matrix("dec.combine")?,
            out_weight: weights.matrix("dec.out.weight")?,
            out_bias: weights.vector("dec.out.bias")?,
            feedback: weights.config.feedback,
        };
        w.check().map_err(|e| Error::Integrity(e.to_string()))?;
        Ok(w)
    }

    pub fn frame_dim(&self) -> usize {
        self.lstm1.input_dim().saturating_sub(SPECTRUM_DIM)
    }

    pub fn hidden1(&self) -> usize {
        self.lstm1.hidden()
    }

    pub fn hidden2(&self) -> usize {
        self.lstm2.hidden()
    }

    pub fn d_model(&self) -> usize {
        self.combine.cols()
    }

    /// Internal shape consistency, independent of any utterance.
    pub fn check(&self) -> Result<()> {
        self.lstm1.check()?;
        self.lstm2.check()?;
        let h2 = self.hidden2();
        let mismatch = |detail: String| Err(Error::shape("DecoderWeights", detail));
        if self.lstm1.input_dim() < SPECTRUM_DIM {
            return mismatch(format!("lstm1 input {} < {SPECTRUM_DIM}", self.lstm1.input_dim()));
        }
        if self.lstm2.input_dim() != self.hidden1() {
            return mismatch(format!(
                "lstm2 input {} != lstm1 hidden {}",
                self.lstm2.input_dim(),
                self.hidden1()
            ));
        }
        if let Some(q) = self.query.iter().find(|q| q.rows() != h2) {
            return mismatch(format!("query has {} rows, hidden2 is {h2}", q.rows()));
        }
        let concat: usize = self.query.iter().map(Matrix::cols).sum();
        if self.combine.rows() != concat {
            return mismatch(format!(
                "combine has {} rows, heads concatenate to {concat}",
                self.combine.rows()
            ));
        }
        if self.out_weight.rows() != self.d_model() + h2
            || self.out_weight.cols() != SPECTRUM_DIM
            || self.out_bias.len() != SPECTRUM_DIM
        {
            return mismatch(format!(
                "output head {}x{} + bias {}",
                self.out_weight.rows(),
                self.out_weight.cols(),
                self.out_bias.len()
            ));
        }
        Ok(())
    }

    /// Shape checks against a concrete set of encodings.
    pub fn check_encodings(&self, encodings: &Encodings) -> Result<()> {
        for (i, e) in encodings.iter().enumerate() {
            if e.level.index() != i {
                return Err(Error::shape(
                    "decoder",
                    format!("encoding slot {i} holds {} level", e.level.name()),
                ));
            }
            if e.key_dim() != self.query[i].cols() || e.values.cols() != e.key_dim() {
                return Err(Error::shape(
                    "decoder",
                    format!(
                        "{} encoding has d_k {}, query projects to {}",
                        e.level.name(),
                        e.key_dim(),
                        self.query[i].cols()
                    ),
                ));
            }
            if e.pooled_len == 0 || e.keys.rows() != e.pooled_len || e.values.rows() != e.pooled_len {
                return Err(Error::shape("decoder", format!("{} encoding is empty", e.level.name())));
            }
        }
        Ok(())
    }

    /// Exact MACs of one [`decode_step`] against contexts of the given
    /// pooled lengths.
    pub fn step_macs(&self, pooled_lens: [usize; 3]) -> u64 {
        let h2 = self.hidden2() as u64;
        let mut macs = self.lstm1.step_macs() + self.lstm2.step_macs();
        for (q, &len) in self.query.iter().zip(&pooled_lens) {
            let dk = q.cols() as u64;
            macs += h2 * dk + 2 * dk * len as u64;
        }
        macs += (self.combine.rows() * self.combine.cols()) as u64;
        macs += (self.out_weight.rows() * self.out_weight.cols()) as u64;
        macs
    }
}

/// Everything carried from one frame to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h1: Vec<f32>,
    pub c1: Vec<f32>,
    pub h2: Vec<f32>,
    pub c2: Vec<f32>,
    pub y_prev: SpectrumFrame,
    pub t: usize,
}

const STATE_MAGIC: &[u8; 4] = b"SDS1";

impl DecoderState {
    pub fn initial(hidden1: usize, hidden2: usize) -> Self {
        Self {
            h1: vec![0.0; hidden1],
            c1: vec![0.0; hidden1],
            h2: vec![0.0; hidden2],
            c2: vec![0.0; hidden2],
            y_prev: SpectrumFrame::zero(),
            t: 0,
        }
    }

    /// `"SDS1"`, `t` as u64, both widths as u32, then `h1 c1 h2 c2 y_prev`
    /// as little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&(self.t as u64).to_le_bytes());
        out.extend_from_slice(&(self.h1.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.h2.len() as u32).to_le_bytes());
        for part in [&self.h1[..], &self.c1, &self.h2, &self.c2, self.y_prev.as_slice()] {
            for v in part {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != STATE_MAGIC {
            return Err(Error::Format("not a decoder state".into()));
        }
        let t = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let n1 = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let n2 = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let want = 20 + 4 * (2 * n1 + 2 * n2 + SPECTRUM_DIM);
        if bytes.len() != want {
            return Err(Error::Integrity(format!(
                "decoder state has {} bytes, expected {want}",
                bytes.len()
            )));
        }
        let mut values = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<_>>();
        let h1 = take(n1);
        let c1 = take(n1);
        let h2 = take(n2);
        let c2 = take(n2);
        let y_prev = SpectrumFrame::from_slice(&take(SPECTRUM_DIM))?;
        Ok(Self {
            h1,
            c1,
            h2,
            c2,
            y_prev,
            t,
        })
    }
}

/// `softmax(q K^T / sqrt(d_k)) V` for one level.
///
/// Adds `2 * d_k * L` MACs and `L` exponentials.
pub fn attend_head(
    q: &[f32],
    enc: &SourceEncoding,
    counter: Option<&mut MacCounter>,
) -> Result<Vec<f32>> {
    let mut weights = vec![0.0; enc.pooled_len];
    let mut out = vec![0.0; enc.key_dim()];
    attend_head_into(q, enc, &mut weights, &mut out, counter)?;
    Ok(out)
}

/// Allocation-free [`attend_head`]; `weights` receives the attention
/// distribution.
pub fn attend_head_into(
    q: &[f32],
    enc: &SourceEncoding,
    weights: &mut [f32],
    out: &mut [f32],
    counter: Option<&mut MacCounter>,
) -> Result<()> {
    let dk = enc.key_dim();
    let len = enc.pooled_len;
    if q.len() != dk || out.len() != dk || weights.len() != len || len == 0 {
        return Err(Error::shape(
            "attend_head",
            format!("q[{}] against {len}x{dk} keys", q.len()),
        ));
    }
    let scale = 1.0 / (dk as f64).sqrt();
    for (j, s) in weights.iter_mut().enumerate() {
        *s = (dot(q, enc.keys.row(j)) * scale) as f32;
    }
    softmax_in_place(weights, None)?;
    accumulate_rows(&[(&*weights, &enc.values)], None, out);
    tally(counter, (2 * dk * len) as u64, len as u64);
    Ok(())
}

/// `[c_w, c_s, c_p] . W`.
pub fn combine_heads(
    c_w: &[f32],
    c_s: &[f32],
    c_p: &[f32],
    w: &Matrix,
    counter: Option<&mut MacCounter>,
) -> Result<Vec<f32>> {
    let concat = [c_w, c_s, c_p].concat();
    if concat.len() != w.rows() {
        return Err(Error::shape(
            "combine_heads",
            format!("heads concatenate to {}, W has {} rows", concat.len(), w.rows()),
        ));
    }
    linear(&concat, w, None, counter)
}

#[derive(Debug, Clone)]
struct Scratch {
    input: Vec<f32>,
    gates1: Vec<f32>,
    gates2: Vec<f32>,
    query: [Vec<f32>; 3],
    attention: [Vec<f32>; 3],
    /// Concatenated head contexts.
    contexts: Vec<f32>,
    /// `[c(t), h(t)]`
    head_in: Vec<f32>,
    y: Vec<f32>,
}

/// One utterance's decoding session.
#[derive(Debug, Clone)]
pub struct StreamingDecoder<'a> {
    weights: &'a DecoderWeights,
    encodings: &'a Encodings,
    state: DecoderState,
    scratch: Scratch,
}

impl<'a> StreamingDecoder<'a> {
    pub fn new(weights: &'a DecoderWeights, encodings: &'a Encodings) -> Result<Self> {
        let state = DecoderState::initial(weights.hidden1(), weights.hidden2());
        Self::resume(weights, encodings, state)
    }

    /// Continues from a previously captured state.
    pub fn resume(
        weights: &'a DecoderWeights,
        encodings: &'a Encodings,
        state: DecoderState,
    ) -> Result<Self> {
        weights.check()?;
        weights.check_encodings(encodings)?;
        if state.h1.len() != weights.hidden1()
            || state.c1.len() != weights.hidden1()
            || state.h2.len() != weights.hidden2()
            || state.c2.len() != weights.hidden2()
        {
            return Err(Error::shape(
                "StreamingDecoder::resume",
                format!(
                    "state widths {}/{} for hidden {}/{}",
                    state.h1.len(),
                    state.h2.len(),
                    weights.hidden1(),
                    weights.hidden2()
                ),
            ));
        }
        let dk = |i: usize| weights.query[i].cols();
        let scratch = Scratch {
            input: vec![0.0; weights.lstm1.input_dim()],
            gates1: vec![0.0; 4 * weights.hidden1()],
            gates2: vec![0.0; 4 * weights.hidden2()],
            query: [vec![0.0; dk(0)], vec![0.0; dk(1)], vec![0.0; dk(2)]],
            attention: [
                vec![0.0; encodings[0].pooled_len],
                vec![0.0; encodings[1].pooled_len],
                vec![0.0; encodings[2].pooled_len],
            ],
            contexts: vec![0.0; weights.combine.rows()],
            head_in: vec![0.0; weights.d_model() + weights.hidden2()],
            y: vec![0.0; SPECTRUM_DIM],
        };
        Ok(Self {
            weights,
            encodings,
            state,
            scratch,
        })
    }

    pub fn state(&self) -> &DecoderState {
        &self.state
    }

    pub fn into_state(self) -> DecoderState {
        self.state
    }

    /// Attention distribution of the last step for one level.
    pub fn attention(&self, level: Level) -> &[f32] {
        &self.scratch.attention[level.index()]
    }

    /// Produces frame `state.t` and advances the state.
    pub fn step(&mut self, x_f: &[f32], mut counter: Option<&mut MacCounter>) -> Result<SpectrumFrame> {
        let w = self.weights;
        let s = &mut self.scratch;
        let st = &mut self.state;
        let d_f = w.frame_dim();
        if x_f.len() != d_f {
            return Err(Error::shape(
                "decode_step",
                format!("frame features have {} values, decoder expects {d_f}", x_f.len()),
            ));
        }

        s.input[..d_f].copy_from_slice(x_f);
        if w.feedback {
            s.input[d_f..].copy_from_slice(st.y_prev.as_slice());
        } else {
            s.input[d_f..].fill(0.0);
        }
        lstm_cell_step_in_place(
            &s.input,
            &mut st.h1,
            &mut st.c1,
            &mut s.gates1,
            &w.lstm1,
            counter.as_deref_mut(),
        )?;
        lstm_cell_step_in_place(
            &st.h1,
            &mut st.h2,
            &mut st.c2,
            &mut s.gates2,
            &w.lstm2,
            counter.as_deref_mut(),
        )?;

        let mut offset = 0;
        for (i, enc) in self.encodings.iter().enumerate() {
            linear_into(&st.h2, &w.query[i], None, &mut s.query[i], counter.as_deref_mut())?;
            let dk = enc.key_dim();
            attend_head_into(
                &s.query[i],
                enc,
                &mut s.attention[i],
                &mut s.contexts[offset..offset + dk],
                counter.as_deref_mut(),
            )?;
            offset += dk;
        }

        let d_model = w.d_model();
        linear_into(
            &s.contexts,
            &w.combine,
            None,
            &mut s.head_in[..d_model],
            counter.as_deref_mut(),
        )?;
        s.head_in[d_model..].copy_from_slice(&st.h2);
        linear_into(&s.head_in, &w.out_weight, Some(&w.out_bias), &mut s.y, counter)?;

        let y = SpectrumFrame::from_slice(&s.y)?;
        st.y_prev = y;
        st.t += 1;
        Ok(y)
    }
}

/// Pure single-step form: returns the frame and the successor state.
pub fn decode_step(
    x_f: &[f32],
    state: &DecoderState,
    encodings: &Encodings,
    w: &DecoderWeights,
    counter: Option<&mut MacCounter>,
) -> Result<(SpectrumFrame, DecoderState)> {
    let mut session = StreamingDecoder::resume(w, encodings, state.clone())?;
    let y = session.step(x_f, counter)?;
    Ok((y, session.into_state()))
}

/// Decodes every frame of `track` in order, handing each to `sink`.
/// Returns the number of frames emitted.
pub fn decode_stream(
    track: &FrameFeatureTrack,
    encodings: &Encodings,
    w: &DecoderWeights,
    sink: &mut impl FrameSink,
    counter: Option<&mut MacCounter>,
) -> Result<usize> {
    let session = StreamingDecoder::new(w, encodings)?;
    continue_stream(session, track, sink, counter)
}

/// Runs `session` from its current frame index to the end of `track`.
/// Frames are passed to the sink with their absolute index.
pub fn continue_stream(
    mut session: StreamingDecoder<'_>,
    track: &FrameFeatureTrack,
    sink: &mut impl FrameSink,
    mut counter: Option<&mut MacCounter>,
) -> Result<usize> {
    let start = session.state().t;
    for t in start..track.len() {
        let y = session.step(track.frame(t), counter.as_deref_mut())?;
        sink.accept(t, &y).map_err(|source| Error::SinkAborted {
            emitted: t - start,
            source,
        })?;
    }
    Ok(track.len().saturating_sub(start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::encoder::MultiRateEncoder;
    use crate::features::{synth_utterance, unroll_frames};
    use crate::weights::weights_init;

    fn enc_from(keys: Matrix, values: Matrix) -> SourceEncoding {
        SourceEncoding {
            level: Level::Word,
            pooled_len: keys.rows(),
            source_len: keys.rows(),
            stride: 1,
            keys,
            values,
        }
    }

    #[test]
    fn singleton_context_returns_value_row() {
        let e = enc_from(
            Matrix::from_vec(1, 2, vec![3.0, -1.0]).unwrap(),
            Matrix::from_vec(1, 2, vec![0.25, 7.0]).unwrap(),
        );
        for q in [[0.0, 0.0], [100.0, -4.0]] {
            assert_eq!(attend_head(&q, &e, None).unwrap(), vec![0.25, 7.0]);
        }
    }

    #[test]
    fn orthogonal_query_averages_values() {
        let keys = Matrix::from_vec(3, 2, vec![0.0, 1.0, 0.0, -2.0, 0.0, 5.0]).unwrap();
        let values = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
        let out = attend_head(&[1.0, 0.0], &enc_from(keys, values), None).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-6 && (out[1] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn attention_mac_count() {
        let e = enc_from(Matrix::zeros(50, 24), Matrix::zeros(50, 24));
        let mut c = MacCounter::new();
        attend_head(&[0.0; 24], &e, Some(&mut c)).unwrap();
        assert_eq!(c.macs, 2400);
        assert_eq!(c.exps, 50);
        assert!(attend_head(&[0.0; 23], &e, None).is_err());
    }

    #[test]
    fn combine_examples() {
        let c_w = [1.0, 2.0];
        let mut w = Matrix::zeros(5, 2);
        w.set(0, 0, 1.0);
        w.set(1, 1, 1.0);
        assert_eq!(combine_heads(&c_w, &[3.0], &[4.0, 5.0], &w, None).unwrap(), c_w.to_vec());
        let zero = combine_heads(&c_w, &[3.0], &[4.0, 5.0], &Matrix::zeros(5, 2), None).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        assert!(combine_heads(&c_w, &[3.0], &[4.0], &w, None).is_err());
    }

    fn small_setup(seed: u64) -> (ModelConfig, DecoderWeights, Encodings, FrameFeatureTrack) {
        let config = ModelConfig::default();
        let weights = weights_init(seed, &config).unwrap();
        let tree = synth_utterance(seed, 1.0).unwrap();
        let encodings = MultiRateEncoder::from_model(&weights)
            .unwrap()
            .encode(&tree, &config, None)
            .unwrap();
        let dec = DecoderWeights::from_model(&weights).unwrap();
        (config, dec, encodings, unroll_frames(&tree))
    }

    #[test]
    fn zero_weights_emit_bias() {
        let config = ModelConfig::default();
        let mut weights = weights_init(0, &config).unwrap().zeroed();
        let bias: Vec<f32> = (0..SPECTRUM_DIM).map(|i| i as f32 * 0.5 - 2.0).collect();
        weights.get_mut("dec.out.bias").unwrap().data = bias.clone();
        let tree = synth_utterance(1, 0.5).unwrap();
        let enc = MultiRateEncoder::from_model(&weights).unwrap().encode(&tree, &config, None).unwrap();
        let dec = DecoderWeights::from_model(&weights).unwrap();
        let mut out = FrameBuffer::default();
        let n = decode_stream(&unroll_frames(&tree), &enc, &dec, &mut out, None).unwrap();
        assert_eq!(n, tree.frame_count());
        assert!(out.0.iter().all(|f| f.as_slice() == bias.as_slice()));
    }

    #[test]
    fn per_frame_macs_are_constant_and_match_formula() {
        let (_, dec, enc, track) = small_setup(3);
        let lens = [enc[0].pooled_len, enc[1].pooled_len, enc[2].pooled_len];
        let mut session = StreamingDecoder::new(&dec, &enc).unwrap();
        let mut first = None;
        for t in 0..track.len() {
            let mut c = MacCounter::new();
            session.step(track.frame(t), Some(&mut c)).unwrap();
            assert_eq!(c.macs, dec.step_macs(lens));
            assert_eq!(*first.get_or_insert(c), c);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let (_, dec, enc, track) = small_setup(4);
        let mut session = StreamingDecoder::new(&dec, &enc).unwrap();
        for t in 0..track.len().min(20) {
            session.step(track.frame(t), None).unwrap();
            for level in Level::ALL {
                let a = session.attention(level);
                let sum: f64 = a.iter().map(|&v| v as f64).sum();
                assert!(a.iter().all(|&v| v >= 0.0));
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pure_step_matches_session() {
        let (_, dec, enc, track) = small_setup(5);
        let mut session = StreamingDecoder::new(&dec, &enc).unwrap();
        let mut state = DecoderState::initial(dec.hidden1(), dec.hidden2());
        for t in 0..5 {
            let a = session.step(track.frame(t), None).unwrap();
            let (b, next) = decode_step(track.frame(t), &state, &enc, &dec, None).unwrap();
            assert_eq!(a, b);
            state = next;
            assert_eq!(&state, session.state());
        }
        assert_eq!(state.t, 5);
    }

    #[test]
    fn failing_sink_reports_emitted_count() {
        let (_, dec, enc, track) = small_setup(6);
        assert!(track.len() > 4);
        let mut sink = |t: usize, _: &SpectrumFrame| -> std::result::Result<(), SinkError> {
            if t == 3 {
                Err("disk full".into())
            } else {
                Ok(())
            }
        };
        match decode_stream(&track, &enc, &dec, &mut sink, None) {
            Err(Error::SinkAborted { emitted, .. }) => assert_eq!(emitted, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn state_bytes_round_trip() {
        let (_, dec, enc, track) = small_setup(7);
        let mut session = StreamingDecoder::new(&dec, &enc).unwrap();
        for t in 0..3 {
            session.step(track.frame(t), None).unwrap();
        }
        let bytes = session.state().to_bytes();
        assert_eq!(&DecoderState::from_bytes(&bytes).unwrap(), session.state());
        assert!(DecoderState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(DecoderState::from_bytes(b"nope").is_err());
    }

    #[test]
    fn wrong_frame_width_is_shape_error() {
        let (_, dec, enc, _) = small_setup(8);
        let mut session = StreamingDecoder::new(&dec, &enc).unwrap();
        assert!(matches!(session.step(&[0.0; 3], None), Err(Error::Shape { .. })));
    }
}
