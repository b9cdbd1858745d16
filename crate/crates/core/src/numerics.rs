//! Dense kernels used by the encoder, decoder and baselines.
//!
//! Storage is `f32`; every reduction (dot products, softmax normaliser)
//! accumulates in `f64` before rounding back. Each kernel takes an optional
//! [`MacCounter`]; passing `None` leaves the hot path untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column block used by the matrix-vector kernels so the `f64` accumulator
/// lives on the stack.
const COL_BLOCK: usize = 256;

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty row list yields a
    /// `0 x cols` matrix.
    pub fn from_rows(rows: &[Vec<f32>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} values, expected {cols}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Multiply-accumulate and exponential tallies for one measured scope.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacCounter {
    pub macs: u64,
    pub exps: u64,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    #[inline]
    pub fn add_exps(&mut self, n: u64) {
        self.exps += n;
    }

    pub fn merge(&mut self, other: &MacCounter) {
        self.macs += other.macs;
        self.exps += other.exps;
    }
}

#[inline]
pub(crate) fn tally(counter: Option<&mut MacCounter>, macs: u64, exps: u64) {
    if let Some(c) = counter {
        c.macs += macs;
        c.exps += exps;
    }
}

/// `a x b`. Adds `a.rows * a.cols * b.cols` MACs.
pub fn matmul(a: &Matrix, b: &Matrix, counter: Option<&mut MacCounter>) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for r in 0..a.rows {
        let (src, dst) = (a.row(r), &mut out.data[r * b.cols..(r + 1) * b.cols]);
        accumulate_rows(&[(src, b)], None, dst);
    }
    tally(counter, (a.rows * a.cols * b.cols) as u64, 0);
    Ok(out)
}

/// `x . w + b` for a row vector `x`. Adds `len(x) * cols(w)` MACs.
pub fn linear(
    x: &[f32],
    w: &Matrix,
    b: Option<&[f32]>,
    counter: Option<&mut MacCounter>,
) -> Result<Vec<f32>> {
    let mut out = vec![0.0; w.cols];
    linear_into(x, w, b, &mut out, counter)?;
    Ok(out)
}

/// Allocation-free form of [`linear`].
pub fn linear_into(
    x: &[f32],
    w: &Matrix,
    b: Option<&[f32]>,
    out: &mut [f32],
    counter: Option<&mut MacCounter>,
) -> Result<()> {
    if x.len() != w.rows || out.len() != w.cols || b.is_some_and(|b| b.len() != w.cols) {
        return Err(Error::shape(
            "linear",
            format!(
                "x[{}] . w[{}x{}] (+ b[{}]) -> out[{}]",
                x.len(),
                w.rows,
                w.cols,
                b.map_or(0, <[f32]>::len),
                out.len()
            ),
        ));
    }
    accumulate_rows(&[(x, w)], b, out);
    tally(counter, (x.len() * w.cols) as u64, 0);
    Ok(())
}

/// `out = bias + sum_p x_p . w_p` with one `f64` accumulator per output
/// column. All `w_p` must share `cols == out.len()`; shapes are the caller's
/// responsibility.
pub(crate) fn accumulate_rows(parts: &[(&[f32], &Matrix)], bias: Option<&[f32]>, out: &mut [f32]) {
    let cols = out.len();
    let mut acc = [0.0f64; COL_BLOCK];
    let mut j0 = 0;
    while j0 < cols {
        let j1 = (j0 + COL_BLOCK).min(cols);
        let acc = &mut acc[..j1 - j0];
        match bias {
            Some(b) => acc
                .iter_mut()
                .zip(&b[j0..j1])
                .for_each(|(a, &bv)| *a = bv as f64),
            None => acc.fill(0.0),
        }
        for &(x, w) in parts {
            for (k, &xk) in x.iter().enumerate() {
                let xk = xk as f64;
                let wrow = &w.data[k * cols + j0..k * cols + j1];
                for (a, &wv) in acc.iter_mut().zip(wrow) {
                    *a += xk * wv as f64;
                }
            }
        }
        for (o, &a) in out[j0..j1].iter_mut().zip(acc.iter()) {
            *o = a as f32;
        }
        j0 = j1;
    }
}

/// Dot product with an `f64` accumulator.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

pub fn softmax(v: &[f32]) -> Result<Vec<f32>> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out, None)?;
    Ok(out)
}

/// Max-subtracted softmax. Adds `len(v)` exponentials.
pub fn softmax_in_place(v: &mut [f32], counter: Option<&mut MacCounter>) -> Result<()> {
    if v.is_empty() {
        return Err(Error::shape("softmax", "empty input"));
    }
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0f64;
    for x in v.iter_mut() {
        let e = (*x as f64 - max).exp();
        sum += e;
        *x = e as f32;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x = (*x as f64 * inv) as f32;
    }
    tally(counter, 0, v.len() as u64);
    Ok(())
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-(x as f64)).exp())) as f32
}

#[inline]
pub fn tanh(x: f32) -> f32 {
    (x as f64).tanh() as f32
}

pub fn relu_in_place(v: &mut [f32]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Weights of one LSTM cell. Gate columns are laid out as
/// `[input | forget | candidate | output]`, each `hidden` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `input_dim x 4*hidden`
    pub w_ih: Matrix,
    /// `hidden x 4*hidden`
    pub w_hh: Matrix,
    /// `4*hidden`
    pub bias: Vec<f32>,
}

impl LstmWeights {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: Matrix::zeros(input_dim, 4 * hidden),
            w_hh: Matrix::zeros(hidden, 4 * hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.rows
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.rows
    }

    pub fn check(&self) -> Result<()> {
        let h = self.w_hh.rows;
        if self.w_hh.cols != 4 * h || self.w_ih.cols != 4 * h || self.bias.len() != 4 * h {
            return Err(Error::shape(
                "LstmWeights",
                format!(
                    "w_ih {}x{}, w_hh {}x{}, bias {}",
                    self.w_ih.rows,
                    self.w_ih.cols,
                    self.w_hh.rows,
                    self.w_hh.cols,
                    self.bias.len()
                ),
            ));
        }
        Ok(())
    }

    /// MACs for one step: `(input + hidden) * 4 * hidden`.
    pub fn step_macs(&self) -> u64 {
        ((self.input_dim() + self.hidden()) * 4 * self.hidden()) as u64
    }
}

/// One LSTM time step; returns the new `(h, c)`.
pub fn lstm_cell_step(
    x: &[f32],
    h_prev: &[f32],
    c_prev: &[f32],
    w: &LstmWeights,
    counter: Option<&mut MacCounter>,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut h = h_prev.to_vec();
    let mut c = c_prev.to_vec();
    let mut gates = vec![0.0; 4 * w.hidden()];
    lstm_cell_step_in_place(x, &mut h, &mut c, &mut gates, w, counter)?;
    Ok((h, c))
}

/// Updates `h` and `c` in place. `gates` is scratch of length `4*hidden`.
pub fn lstm_cell_step_in_place(
    x: &[f32],
    h: &mut [f32],
    c: &mut [f32],
    gates: &mut [f32],
    w: &LstmWeights,
    counter: Option<&mut MacCounter>,
) -> Result<()> {
    w.check()?;
    let hid = w.hidden();
    if x.len() != w.input_dim() || h.len() != hid || c.len() != hid || gates.len() != 4 * hid {
        return Err(Error::shape(
            "lstm_cell_step",
            format!(
                "x[{}] h[{}] c[{}] for input {} hidden {hid}",
                x.len(),
                h.len(),
                c.len(),
                w.input_dim()
            ),
        ));
    }
    accumulate_rows(&[(x, &w.w_ih), (&*h, &w.w_hh)], Some(&w.bias), gates);
    let (ig, rest) = gates.split_at(hid);
    let (fg, rest) = rest.split_at(hid);
    let (gg, og) = rest.split_at(hid);
    for j in 0..hid {
        let i = sigmoid(ig[j]);
        let f = sigmoid(fg[j]);
        let g = tanh(gg[j]);
        let o = sigmoid(og[j]);
        let cj = f * c[j] + i * g;
        c[j] = cj;
        h[j] = o * tanh(cj);
    }
    tally(counter, w.step_macs(), 5 * hid as u64);
    Ok(())
}
