//! Brute-force reference implementations.
//!
//! Every function here is a direct loop transcription with `f64`
//! accumulation. Nothing is shared with the fast kernels beyond the plain
//! data containers, so a disagreement points at one side or the other.
//! Values are rounded to `f32` wherever the fast path stores them
//! (layer outputs, recurrent state, emitted frames).

use crate::decoder::DecoderWeights;
use crate::encoder::{Conv1dWeights, EncoderWeights, Encodings};
use crate::error::{Error, Result};
use crate::features::{FrameFeatureTrack, SpectrumFrame, SPECTRUM_DIM};
use crate::numerics::{LstmWeights, Matrix};

/// Magnitudes below this are compared on an absolute scale in
/// [`OracleReport::max_rel_err`], so `rel <= tol` reads
/// `|a - r| <= tol * max(|r|, 1)`.
pub const REL_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub compared: usize,
}

impl Default for OracleReport {
    fn default() -> Self {
        Self {
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            compared: 0,
        }
    }
}

impl OracleReport {
    /// Element-wise comparison of `fast` against `reference`.
    ///
    /// Relative error is `|a - r| / max(|r|, REL_FLOOR)`; a non-finite value
    /// on either side counts as infinite error.
    pub fn compare(fast: &[f32], reference: &[f32]) -> Result<Self> {
        if fast.len() != reference.len() || fast.is_empty() {
            return Err(Error::shape(
                "OracleReport::compare",
                format!("{} values against {}", fast.len(), reference.len()),
            ));
        }
        let mut r = Self::default();
        for (&a, &b) in fast.iter().zip(reference) {
            let (a, b) = (a as f64, b as f64);
            let (abs, rel) = if a.is_finite() && b.is_finite() {
                let abs = (a - b).abs();
                (abs, abs / b.abs().max(REL_FLOOR))
            } else if a.to_bits() == b.to_bits() {
                (0.0, 0.0)
            } else {
                (f64::INFINITY, f64::INFINITY)
            };
            r.max_abs_err = r.max_abs_err.max(abs);
            r.max_rel_err = r.max_rel_err.max(rel);
        }
        r.compared = fast.len();
        Ok(r)
    }

    pub fn compare_frames(fast: &[SpectrumFrame], reference: &[SpectrumFrame]) -> Result<Self> {
        let a: Vec<f32> = fast.iter().flat_map(|f| f.0).collect();
        let b: Vec<f32> = reference.iter().flat_map(|f| f.0).collect();
        Self::compare(&a, &b)
    }

    pub fn merge(&mut self, other: &OracleReport) {
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.compared += other.compared;
    }

    pub fn within(&self, rel_tol: f64) -> bool {
        self.compared >= 1 && self.max_rel_err <= rel_tol
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

/// `a . b` by the textbook triple loop.
pub fn oracle_matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let (n, m, p) = (a.rows(), a.cols(), b.cols());
    if b.rows() != m {
        return Err(shape_err(
            "oracle_matmul",
            format!("{n}x{m} . {}x{p}", b.rows()),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; n * p];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0f64;
            for k in 0..m {
                s += ad[i * m + k] as f64 * bd[k * p + j] as f64;
            }
            out[i * p + j] = s as f32;
        }
    }
    Matrix::from_vec(n, p, out)
}

/// `x . W + b` for a single row vector.
pub fn oracle_linear(x: &[f32], w: &Matrix, b: Option<&[f32]>) -> Result<Vec<f32>> {
    let (m, p) = (w.rows(), w.cols());
    if x.len() != m || b.is_some_and(|b| b.len() != p) {
        return Err(shape_err(
            "oracle_linear",
            format!("x[{}] . {m}x{p}", x.len()),
        ));
    }
    let wd = w.data();
    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let mut s = b.map_or(0.0, |b| b[j] as f64);
        for k in 0..m {
            s += x[k] as f64 * wd[k * p + j] as f64;
        }
        out.push(s as f32);
    }
    Ok(out)
}

/// `softmax(q K^T / sqrt(d_k)) V` with every score and weight kept in
/// `f64`.
pub fn oracle_attention(q: &[f32], k: &Matrix, v: &Matrix) -> Result<Vec<f32>> {
    let (len, dk) = (k.rows(), k.cols());
    if len == 0 || q.len() != dk || v.rows() != len {
        return Err(shape_err(
            "oracle_attention",
            format!("q[{}] against K {len}x{dk}, V {}x{}", q.len(), v.rows(), v.cols()),
        ));
    }
    let (kd, vd, dv) = (k.data(), v.data(), v.cols());
    let scale = 1.0 / (dk as f64).sqrt();
    let mut scores = vec![0.0f64; len];
    for j in 0..len {
        let mut s = 0.0f64;
        for d in 0..dk {
            s += q[d] as f64 * kd[j * dk + d] as f64;
        }
        scores[j] = s * scale;
    }
    let mut max = f64::NEG_INFINITY;
    for &s in &scores {
        if s > max {
            max = s;
        }
    }
    let mut total = 0.0f64;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    let mut out = vec![0.0f32; dv];
    for d in 0..dv {
        let mut acc = 0.0f64;
        for j in 0..len {
            acc += scores[j] / total * vd[j * dv + d] as f64;
        }
        out[d] = acc as f32;
    }
    Ok(out)
}

/// Same-padded 1-D convolution straight from the filter tensor
/// `[out][in][k]`.
pub fn oracle_conv1d(x: &Matrix, w: &Conv1dWeights) -> Result<Matrix> {
    let (len, cin) = (x.rows(), x.cols());
    let (cout, kw) = (w.out_channels(), w.kernel());
    if len == 0 || cin != w.in_channels() {
        return Err(shape_err(
            "oracle_conv1d",
            format!("input {len}x{cin} for {} input channels", w.in_channels()),
        ));
    }
    let filters = w.filters();
    let bias = w.bias();
    let half = (kw / 2) as isize;
    let xd = x.data();
    let mut out = vec![0.0f32; len * cout];
    for n in 0..len {
        for m in 0..cout {
            let mut s = bias[m] as f64;
            for c in 0..cin {
                for k in 0..kw {
                    let src = n as isize + k as isize - half;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let xv = xd[src as usize * cin + c] as f64;
                    s += filters[(m * cin + c) * kw + k] as f64 * xv;
                }
            }
            out[n * cout + m] = s as f32;
        }
    }
    Matrix::from_vec(len, cout, out)
}

/// Dynamic max-pooling: zero-pad to `S * L~` rows, then take each
/// window's maximum. Returns the pooled matrix and the stride.
pub fn oracle_maxpool(x: &Matrix, l_max: usize) -> Result<(Matrix, usize)> {
    let (len, d) = (x.rows(), x.cols());
    if len == 0 || l_max == 0 {
        return Err(shape_err(
            "oracle_maxpool",
            format!("{len} rows with l_max {l_max}"),
        ));
    }
    let stride = (len + l_max - 1) / l_max;
    let pooled = if len < l_max { len } else { l_max };
    let mut padded = vec![0.0f32; stride * pooled * d];
    padded[..len * d].copy_from_slice(x.data());
    let mut out = vec![0.0f32; pooled * d];
    for n in 0..pooled {
        for c in 0..d {
            let mut best = padded[n * stride * d + c];
            for a in 1..stride {
                let v = padded[(n * stride + a) * d + c];
                if v > best {
                    best = v;
                }
            }
            out[n * d + c] = best;
        }
    }
    Ok((Matrix::from_vec(pooled, d, out)?, stride))
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One LSTM step, gate order (input, forget, candidate, output).
pub fn oracle_lstm_cell(
    x: &[f32],
    h: &[f32],
    c: &[f32],
    w: &LstmWeights,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let hid = w.bias.len() / 4;
    let nin = w.w_ih.rows();
    if x.len() != nin
        || h.len() != hid
        || c.len() != hid
        || w.w_ih.cols() != 4 * hid
        || w.w_hh.rows() != hid
        || w.w_hh.cols() != 4 * hid
    {
        return Err(shape_err(
            "oracle_lstm_cell",
            format!("x[{}] h[{}] c[{}] for input {nin} hidden {hid}", x.len(), h.len(), c.len()),
        ));
    }
    let (wi, wh) = (w.w_ih.data(), w.w_hh.data());
    let g4 = 4 * hid;
    // Loop over inputs outermost so rows of W are read contiguously.
    let mut z: Vec<f64> = w.bias.iter().map(|&b| b as f64).collect();
    for k in 0..nin {
        let xk = x[k] as f64;
        for j in 0..g4 {
            z[j] += xk * wi[k * g4 + j] as f64;
        }
    }
    for k in 0..hid {
        let hk = h[k] as f64;
        for j in 0..g4 {
            z[j] += hk * wh[k * g4 + j] as f64;
        }
    }
    let mut h_new = vec![0.0f32; hid];
    let mut c_new = vec![0.0f32; hid];
    for j in 0..hid {
        let i_g = logistic(z[j] as f32 as f64);
        let f_g = logistic(z[hid + j] as f32 as f64);
        let g_g = (z[2 * hid + j] as f32 as f64).tanh();
        let o_g = logistic(z[3 * hid + j] as f32 as f64);
        let cj = f_g * c[j] as f64 + i_g * g_g;
        c_new[j] = cj as f32;
        h_new[j] = (o_g * (cj as f32 as f64).tanh()) as f32;
    }
    Ok((h_new, c_new))
}

/// Encoder for one level: two ReLU convolutions, optional pooling, then
/// key and value projections. Returns `(keys, values)`.
pub fn oracle_encode(x: &Matrix, w: &EncoderWeights, l_max: Option<usize>) -> Result<(Matrix, Matrix)> {
    let mut h = oracle_conv1d(x, &w.conv1)?;
    for v in h.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut h = oracle_conv1d(&h, &w.conv2)?;
    for v in h.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let pooled = match l_max {
        Some(cap) => oracle_maxpool(&h, cap)?.0,
        None => h,
    };
    Ok((oracle_matmul(&pooled, &w.key)?, oracle_matmul(&pooled, &w.value)?))
}

/// All frames of `track`, computed left to right with the reference
/// kernels. Starts from zero state and a zero previous frame.
pub fn oracle_batch_decode(
    track: &FrameFeatureTrack,
    encodings: &Encodings,
    w: &DecoderWeights,
) -> Result<Vec<SpectrumFrame>> {
    let d_f = track.dim();
    if w.lstm1.w_ih.rows() != d_f + SPECTRUM_DIM {
        return Err(shape_err(
            "oracle_batch_decode",
            format!("track has {d_f} features, lstm1 takes {}", w.lstm1.w_ih.rows()),
        ));
    }
    let h1n = w.lstm1.bias.len() / 4;
    let h2n = w.lstm2.bias.len() / 4;
    let (mut h1, mut c1) = (vec![0.0f32; h1n], vec![0.0f32; h1n]);
    let (mut h2, mut c2) = (vec![0.0f32; h2n], vec![0.0f32; h2n]);
    let mut y_prev = vec![0.0f32; SPECTRUM_DIM];
    let mut frames = Vec::with_capacity(track.len());
    for t in 0..track.len() {
        let mut u: Vec<f32> = track.frames.data()[t * d_f..(t + 1) * d_f].to_vec();
        if w.feedback {
            u.extend_from_slice(&y_prev);
        } else {
            u.extend(std::iter::repeat(0.0).take(SPECTRUM_DIM));
        }
        (h1, c1) = oracle_lstm_cell(&u, &h1, &c1, &w.lstm1)?;
        (h2, c2) = oracle_lstm_cell(&h1, &h2, &c2, &w.lstm2)?;

        let mut heads = Vec::new();
        for (i, enc) in encodings.iter().enumerate() {
            let q = oracle_linear(&h2, &w.query[i], None)?;
            heads.extend(oracle_attention(&q, &enc.keys, &enc.values)?);
        }
        let mut head_in = oracle_linear(&heads, &w.combine, None)?;
        head_in.extend_from_slice(&h2);
        let y = oracle_linear(&head_in, &w.out_weight, Some(&w.out_bias))?;
        let mut frame = SpectrumFrame::zero();
        frame.0.copy_from_slice(&y);
        frames.push(frame);
        y_prev = y;
    }
    Ok(frames)
}

/// Mean over frames and dimensions of the squared difference.
pub fn mse_loss(pred: &[SpectrumFrame], target: &[SpectrumFrame]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(shape_err(
            "mse_loss",
            format!("{} frames against {}", pred.len(), target.len()),
        ));
    }
    let mut total = 0.0f64;
    for (p, t) in pred.iter().zip(target) {
        for d in 0..SPECTRUM_DIM {
            let e = p.0[d] as f64 - t.0[d] as f64;
            total += e * e;
        }
    }
    Ok(total / (pred.len() * SPECTRUM_DIM) as f64)
}
