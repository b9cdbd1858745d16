//! The oracle suite: random fast-path vs reference comparisons, one
//! [`CheckOutcome`] per kernel.

use std::fmt;
use std::str::FromStr;

use crate::config::ModelConfig;
use crate::decoder::{attend_head, combine_heads, decode_stream, DecoderWeights, FrameBuffer};
use crate::encoder::{
    conv1d_same, dynamic_max_pool, encode_source, pooled_shape, Conv1dWeights, EncoderWeights,
    MultiRateEncoder, SourceEncoding,
};
use crate::error::{Error, Result};
use crate::features::{synth_corpus, unroll_frames, CorpusSpec, Level, UtteranceLength};
use crate::numerics::{lstm_cell_step, matmul, LstmWeights, Matrix};
use crate::oracle::{
    oracle_attention, oracle_batch_decode, oracle_conv1d, oracle_encode, oracle_linear,
    oracle_lstm_cell, oracle_matmul, oracle_maxpool, OracleReport,
};
use crate::rng::Rng;
use crate::weights::weights_init;

/// Tolerance for single kernels.
pub const KERNEL_TOL: f64 = 1e-5;
/// Tolerance for full decodes, where error accumulates over many steps.
pub const DECODE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Check {
    Matmul,
    Conv1d,
    MaxPool,
    Attention,
    Combine,
    LstmCell,
    Encoder,
    StreamDecode,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Matmul,
        Check::Conv1d,
        Check::MaxPool,
        Check::Attention,
        Check::Combine,
        Check::LstmCell,
        Check::Encoder,
        Check::StreamDecode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Matmul => "matmul",
            Check::Conv1d => "conv1d_same",
            Check::MaxPool => "dynamic_max_pool",
            Check::Attention => "attend_head",
            Check::Combine => "combine_heads",
            Check::LstmCell => "lstm_cell_step",
            Check::Encoder => "encode_source",
            Check::StreamDecode => "decode_stream",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Check::MaxPool => 0.0,
            Check::StreamDecode => DECODE_TOL,
            _ => KERNEL_TOL,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Random cases per kernel check.
    pub cases: usize,
    /// Utterances for the decode check.
    pub decode_cases: usize,
    /// Frame-count range for decode utterances, sampled log-uniformly.
    pub decode_frames: (usize, usize),
    /// Test hook: nudge the fast-path result of one check so it must fail.
    pub perturb: Option<Check>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 1000,
            decode_cases: 8,
            decode_frames: (80, 400),
            perturb: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub check: Check,
    pub cases: usize,
    pub tolerance: f64,
    pub report: OracleReport,
    pub passed: bool,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<18} {} cases={} compared={} max_abs_err={:.3e} max_rel_err={:.3e} tol={:.0e}",
            self.check.name(),
            if self.passed { "PASS" } else { "FAIL" },
            self.cases,
            self.report.compared,
            self.report.max_abs_err,
            self.report.max_rel_err,
            self.tolerance
        )
    }
}

fn rand_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f32) -> Matrix {
    let data = rng.normal_vec(rows * cols).into_iter().map(|v| v * scale).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn rand_vec(rng: &mut Rng, n: usize, scale: f32) -> Vec<f32> {
    rng.normal_vec(n).into_iter().map(|v| v * scale).collect()
}

fn rand_conv(rng: &mut Rng, out: usize, inp: usize, kernel: usize) -> Result<Conv1dWeights> {
    let scale = (1.0 / (inp * kernel) as f64).sqrt() as f32;
    Conv1dWeights::new(
        out,
        inp,
        kernel,
        rand_vec(rng, out * inp * kernel, scale),
        rand_vec(rng, out, 0.1),
    )
}

fn perturbed(mut v: Vec<f32>, on: bool) -> Vec<f32> {
    if on {
        v[0] += 1e-2 * (1.0 + v[0].abs());
    }
    v
}

fn run_kernel(check: Check, rng: &mut Rng, perturb: bool) -> Result<OracleReport> {
    let r = |lo, hi, rng: &mut Rng| rng.range_inclusive(lo, hi);
    match check {
        Check::Matmul => {
            let (n, m, p) = (r(1, 32, rng), r(1, 32, rng), r(1, 32, rng));
            let a = rand_matrix(rng, n, m, 1.0);
            let b = rand_matrix(rng, m, p, 1.0);
            let fast = matmul(&a, &b, None)?.into_data();
            OracleReport::compare(&perturbed(fast, perturb), oracle_matmul(&a, &b)?.data())
        }
        Check::Conv1d => {
            let (len, cin, cout) = (r(1, 64, rng), r(1, 32, rng), r(1, 32, rng));
            let kernel = 2 * r(0, 3, rng) + 1;
            let x = rand_matrix(rng, len, cin, 1.0);
            let w = rand_conv(rng, cout, cin, kernel)?;
            let fast = conv1d_same(&x, &w, None)?.into_data();
            OracleReport::compare(&perturbed(fast, perturb), oracle_conv1d(&x, &w)?.data())
        }
        Check::MaxPool => {
            let len = r(1, 500, rng);
            let l_max = match r(0, 4, rng) {
                0 => 1,
                1 => 2,
                2 => 50,
                3 => 500,
                _ => r(1, 100, rng),
            };
            let width = r(1, 8, rng);
            let x = rand_matrix(rng, len, width, 1.0);
            pool_report(&x, l_max, perturb)
        }
        Check::Attention => {
            let (len, dk) = (r(1, 64, rng), r(1, 32, rng));
            let keys = rand_matrix(rng, len, dk, 1.0);
            let values = rand_matrix(rng, len, dk, 1.0);
            let q = rand_vec(rng, dk, 1.0);
            let enc = SourceEncoding {
                level: Level::Phone,
                keys: keys.clone(),
                values: values.clone(),
                pooled_len: len,
                stride: 1,
                source_len: len,
            };
            let fast = attend_head(&q, &enc, None)?;
            OracleReport::compare(&perturbed(fast, perturb), &oracle_attention(&q, &keys, &values)?)
        }
        Check::Combine => {
            let dims = [r(1, 32, rng), r(1, 32, rng), r(1, 32, rng)];
            let d_model = r(1, 64, rng);
            let heads: Vec<Vec<f32>> = dims.iter().map(|&d| rand_vec(rng, d, 1.0)).collect();
            let w = rand_matrix(rng, dims.iter().sum(), d_model, 0.2);
            let fast = combine_heads(&heads[0], &heads[1], &heads[2], &w, None)?;
            let concat = heads.concat();
            OracleReport::compare(&perturbed(fast, perturb), &oracle_linear(&concat, &w, None)?)
        }
        Check::LstmCell => {
            let (nin, hid) = (r(1, 40, rng), r(1, 64, rng));
            let w = LstmWeights {
                w_ih: rand_matrix(rng, nin, 4 * hid, 0.3),
                w_hh: rand_matrix(rng, hid, 4 * hid, 0.3),
                bias: rand_vec(rng, 4 * hid, 0.3),
            };
            let x = rand_vec(rng, nin, 1.0);
            let h = rand_vec(rng, hid, 0.5);
            let c = rand_vec(rng, hid, 1.0);
            let (fh, fc) = lstm_cell_step(&x, &h, &c, &w, None)?;
            let (oh, oc) = oracle_lstm_cell(&x, &h, &c, &w)?;
            let mut rep = OracleReport::compare(&perturbed(fh, perturb), &oh)?;
            rep.merge(&OracleReport::compare(&fc, &oc)?);
            Ok(rep)
        }
        Check::Encoder => {
            let (len, d) = (r(1, 200, rng), r(1, 24, rng));
            let w = EncoderWeights {
                conv1: rand_conv(rng, d, d, 5)?,
                conv2: rand_conv(rng, d, d, 5)?,
                key: rand_matrix(rng, d, d, 0.3),
                value: rand_matrix(rng, d, d, 0.3),
            };
            let l_max = (r(0, 3, rng) > 0).then(|| r(1, 60, rng));
            let x = rand_matrix(rng, len, d, 1.0);
            let fast = encode_source(Level::Word, &x, &w, l_max, None)?;
            let (k, v) = oracle_encode(&x, &w, l_max)?;
            let mut rep = OracleReport::compare(&perturbed(fast.keys.into_data(), perturb), k.data())?;
            rep.merge(&OracleReport::compare(fast.values.data(), v.data())?);
            Ok(rep)
        }
        Check::StreamDecode => unreachable!("handled by decode_check"),
    }
}

/// Pooling against the oracle, including shape and stride. Exact match.
pub fn pool_report(x: &Matrix, l_max: usize, perturb: bool) -> Result<OracleReport> {
    let (fast, stride) = dynamic_max_pool(x, l_max)?;
    let (slow, oracle_stride) = oracle_maxpool(x, l_max)?;
    let (want_len, want_stride) = (x.rows().min(l_max), x.rows().div_ceil(l_max));
    if fast.rows() != want_len
        || stride != want_stride
        || oracle_stride != want_stride
        || pooled_shape(x.rows(), l_max) != (want_len, want_stride)
    {
        return Err(Error::Validation {
            level: "pool",
            message: format!(
                "L={} l_max={l_max}: got {} rows stride {stride}, want {want_len} stride {want_stride}",
                x.rows(),
                fast.rows()
            ),
        });
    }
    OracleReport::compare(&perturbed(fast.into_data(), perturb), slow.data())
}

/// Every `(L, l_max)` with `L in 1..=max_len`, `l_max in caps`.
pub fn pool_grid(seed: u64, max_len: usize, caps: &[usize], width: usize) -> Result<OracleReport> {
    let mut rng = Rng::new(seed);
    let mut total = OracleReport::default();
    for len in 1..=max_len {
        let x = rand_matrix(&mut rng, len, width, 1.0);
        for &cap in caps {
            total.merge(&pool_report(&x, cap, false)?);
        }
    }
    Ok(total)
}

/// Streaming decode against the batch oracle over seeded (weights,
/// utterance) pairs.
pub fn decode_check(
    seed: u64,
    cases: usize,
    frames: (usize, usize),
    config: &ModelConfig,
    perturb: bool,
) -> Result<OracleReport> {
    let (lo, hi) = frames;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("bad frame range {lo}..={hi}")));
    }
    let mut rng = Rng::new(seed);
    let mut total = OracleReport::default();
    for i in 0..cases {
        // Log-uniform length; the first two cases pin the range ends.
        let target = match i {
            0 => lo,
            1 => hi,
            _ => ((lo as f64).ln() + rng.uniform() * ((hi as f64).ln() - (lo as f64).ln()))
                .exp()
                .round() as usize,
        };
        let pair_seed = rng.next_u64();
        let weights = weights_init(pair_seed, config)?;
        let spec = CorpusSpec {
            dims: config.tree_dims(),
            ..CorpusSpec::with_length(UtteranceLength::Frames(target.clamp(lo, hi)))
        };
        let tree = synth_corpus(pair_seed ^ 0x5eed, &spec)?.remove(0);
        let enc = MultiRateEncoder::from_model(&weights)?.encode(&tree, config, None)?;
        let dw = DecoderWeights::from_model(&weights)?;
        let track = unroll_frames(&tree);
        let mut fast = FrameBuffer::default();
        decode_stream(&track, &enc, &dw, &mut fast, None)?;
        let reference = oracle_batch_decode(&track, &enc, &dw)?;
        let mut flat: Vec<f32> = fast.0.iter().flat_map(|f| f.0).collect();
        flat = perturbed(flat, perturb && i == 0);
        let slow: Vec<f32> = reference.iter().flat_map(|f| f.0).collect();
        total.merge(&OracleReport::compare(&flat, &slow)?);
    }
    Ok(total)
}

pub fn run_check(check: Check, opts: &SuiteOptions) -> Result<CheckOutcome> {
    let perturb = opts.perturb == Some(check);
    let seed = opts.seed.wrapping_add(check as u64 * 0x9e37_79b9);
    let (report, cases) = match check {
        Check::StreamDecode => (
            decode_check(seed, opts.decode_cases, opts.decode_frames, &ModelConfig::default(), perturb)?,
            opts.decode_cases,
        ),
        _ => {
            let mut rng = Rng::new(seed);
            let mut total = OracleReport::default();
            for i in 0..opts.cases {
                total.merge(&run_kernel(check, &mut rng, perturb && i == 0)?);
            }
            (total, opts.cases)
        }
    };
    let tolerance = check.tolerance();
    Ok(CheckOutcome {
        check,
        cases,
        tolerance,
        passed: cases > 0 && report.within(tolerance),
        report,
    })
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    Check::ALL.into_iter().map(|c| run_check(c, opts)).collect()
}
