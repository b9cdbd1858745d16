//! Named-tensor weight container and its on-disk format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "SMW1"            4 bytes magic, the trailing digit is the format version
//! manifest_len      u32
//! manifest          manifest_len bytes of JSON:
//!                   {"config": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
//! payload           f32 values, tensors back to back in manifest order
//! ```
//!
//! Tensors are sorted by name, offsets are bytes from the payload start, and
//! the payload length must equal the sum of all tensor sizes.
//!
//! Tensor names and shapes (`H1`, `H2` = LSTM widths, `d` = level width):
//!
//! | name                               | shape                  |
//! |------------------------------------|------------------------|
//! | `enc.<level>.conv{1,2}.weight`     | `[d, d, K]` (out, in, tap) |
//! | `enc.<level>.conv{1,2}.bias`       | `[d]`                  |
//! | `enc.<level>.key`, `.value`        | `[d, d]`               |
//! | `dec.lstm1.{w_ih,w_hh,bias}`       | `[d_f+19, 4H1]`, `[H1, 4H1]`, `[4H1]` |
//! | `dec.lstm2.{w_ih,w_hh,bias}`       | `[H1, 4H2]`, `[H2, 4H2]`, `[4H2]` |
//! | `dec.query.<level>`                | `[H2, d]`              |
//! | `dec.combine`                      | `[d_w+d_s+d_p, d_model]` |
//! | `dec.out.weight`, `dec.out.bias`   | `[d_model+H2, 19]`, `[19]` |
//! | `lstm.lstm{1,2}.*`                 | as `dec.lstm{1,2}.*`   |
//! | `lstm.out.weight`, `.bias`         | `[H2, 19]`, `[19]`     |
//! | `sa.input.weight`, `.bias`         | `[d_f, D]`, `[D]`      |
//! | `sa.layer<i>.{wq,wk,wv,wo}`        | `[D, D]`               |
//! | `sa.layer<i>.{bq,bk,bv,bo}`        | `[D]`                  |
//! | `sa.layer<i>.ff1.weight`, `.bias`  | `[D, F]`, `[F]`        |
//! | `sa.layer<i>.ff2.weight`, `.bias`  | `[F, D]`, `[D]`        |
//! | `sa.layer<i>.ln{1,2}.gain`, `.bias`| `[D]`                  |
//! | `sa.out.weight`, `.bias`           | `[D, 19]`, `[19]`      |
//!
//! LSTM gate columns are ordered input, forget, candidate, output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{Level, SPECTRUM_DIM};
use crate::model::ModelKind;
use crate::numerics::{LstmWeights, Matrix};
use crate::rng::Rng;

pub const MAGIC: &[u8; 4] = b"SMW1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// How a tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
    Scaled { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

struct TensorSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn matrix_spec(name: String, rows: usize, cols: usize) -> TensorSpec {
    TensorSpec {
        name,
        shape: vec![rows, cols],
        init: Init::Scaled {
            fan_in: rows,
            fan_out: cols,
        },
    }
}

fn vector_spec(name: String, len: usize, init: Init) -> TensorSpec {
    TensorSpec {
        name,
        shape: vec![len],
        init,
    }
}

fn lstm_specs(prefix: &str, input: usize, hidden: usize) -> Vec<TensorSpec> {
    vec![
        matrix_spec(format!("{prefix}.w_ih"), input, 4 * hidden),
        matrix_spec(format!("{prefix}.w_hh"), hidden, 4 * hidden),
        vector_spec(format!("{prefix}.bias"), 4 * hidden, Init::Zeros),
    ]
}

fn multirate_specs(c: &ModelConfig) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    for level in Level::ALL {
        let d = c.level_dim(level);
        let p = format!("enc.{}", level.name());
        for conv in ["conv1", "conv2"] {
            specs.push(TensorSpec {
                name: format!("{p}.{conv}.weight"),
                shape: vec![d, d, c.kernel],
                init: Init::Scaled {
                    fan_in: d * c.kernel,
                    fan_out: d * c.kernel,
                },
            });
            specs.push(vector_spec(format!("{p}.{conv}.bias"), d, Init::Zeros));
        }
        specs.push(matrix_spec(format!("{p}.key"), d, d));
        specs.push(matrix_spec(format!("{p}.value"), d, d));
        specs.push(matrix_spec(
            format!("dec.query.{}", level.name()),
            c.hidden2,
            d,
        ));
    }
    specs.extend(lstm_specs("dec.lstm1", c.d_f + SPECTRUM_DIM, c.hidden1));
    specs.extend(lstm_specs("dec.lstm2", c.hidden1, c.hidden2));
    specs.push(matrix_spec(
        "dec.combine".into(),
        c.d_w + c.d_s + c.d_p,
        c.d_model,
    ));
    specs.push(matrix_spec(
        "dec.out.weight".into(),
        c.d_model + c.hidden2,
        SPECTRUM_DIM,
    ));
    specs.push(vector_spec("dec.out.bias".into(), SPECTRUM_DIM, Init::Zeros));
    specs
}

fn plain_specs(c: &ModelConfig) -> Vec<TensorSpec> {
    let mut specs = lstm_specs("lstm.lstm1", c.d_f + SPECTRUM_DIM, c.hidden1);
    specs.extend(lstm_specs("lstm.lstm2", c.hidden1, c.hidden2));
    specs.push(matrix_spec("lstm.out.weight".into(), c.hidden2, SPECTRUM_DIM));
    specs.push(vector_spec("lstm.out.bias".into(), SPECTRUM_DIM, Init::Zeros));
    specs
}

fn selfattn_specs(c: &ModelConfig) -> Vec<TensorSpec> {
    let sa = &c.selfattn;
    let mut specs = vec![
        matrix_spec("sa.input.weight".into(), c.d_f, sa.dim),
        vector_spec("sa.input.bias".into(), sa.dim, Init::Zeros),
        matrix_spec("sa.out.weight".into(), sa.dim, SPECTRUM_DIM),
        vector_spec("sa.out.bias".into(), SPECTRUM_DIM, Init::Zeros),
    ];
    for i in 0..sa.layers {
        let p = format!("sa.layer{i}");
        for m in ["wq", "wk", "wv", "wo"] {
            specs.push(matrix_spec(format!("{p}.{m}"), sa.dim, sa.dim));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            specs.push(vector_spec(format!("{p}.{b}"), sa.dim, Init::Zeros));
        }
        specs.push(matrix_spec(format!("{p}.ff1.weight"), sa.dim, sa.ff));
        specs.push(vector_spec(format!("{p}.ff1.bias"), sa.ff, Init::Zeros));
        specs.push(matrix_spec(format!("{p}.ff2.weight"), sa.ff, sa.dim));
        specs.push(vector_spec(format!("{p}.ff2.bias"), sa.dim, Init::Zeros));
        for ln in ["ln1", "ln2"] {
            specs.push(vector_spec(format!("{p}.{ln}.gain"), sa.dim, Init::Ones));
            specs.push(vector_spec(format!("{p}.{ln}.bias"), sa.dim, Init::Zeros));
        }
    }
    specs
}

fn specs_for(kind: ModelKind, c: &ModelConfig) -> Vec<TensorSpec> {
    match kind {
        ModelKind::MultiRate | ModelKind::MultiRateNoPool => multirate_specs(c),
        ModelKind::PlainRecurrent => plain_specs(c),
        ModelKind::FrameSelfAttention => selfattn_specs(c),
    }
}

fn all_specs(c: &ModelConfig) -> Vec<TensorSpec> {
    let mut specs = multirate_specs(c);
    specs.extend(plain_specs(c));
    specs.extend(selfattn_specs(c));
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    specs
}

/// Scaled-uniform bound for a `fan_in x fan_out` tensor.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Deterministic initialisation of every tensor of every model variant.
///
/// Tensors are visited in name order and filled from one stream; each scaled
/// tensor value is `bound * (2u - 1)` with `u` from [`Rng::uniform`].
pub fn weights_init(seed: u64, config: &ModelConfig) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let mut tensors = BTreeMap::new();
    for spec in all_specs(config) {
        let n: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Scaled { fan_in, fan_out } => {
                let bound = init_bound(fan_in, fan_out);
                (0..n)
                    .map(|_| (bound * (2.0 * rng.uniform() - 1.0)) as f32)
                    .collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        tensors.insert(spec.name, Tensor { shape: spec.shape, data });
    }
    Ok(ModelWeights {
        config: config.clone(),
        tensors,
    })
}

impl ModelWeights {
    pub fn new(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, tensors })
    }

    /// Same tensors and config, every value set to zero.
    pub fn zeroed(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    Tensor {
                        shape: t.shape.clone(),
                        data: vec![0.0; t.len()],
                    },
                )
            })
            .collect();
        Self {
            config: self.config.clone(),
            tensors,
        }
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Integrity(format!("missing tensor `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Integrity(format!("missing tensor `{name}`")))
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    /// Checks that every tensor the model needs is present with the shape the
    /// config implies.
    pub fn require(&self, kind: ModelKind) -> Result<()> {
        self.config.validate()?;
        for spec in specs_for(kind, &self.config) {
            let t = self.get(&spec.name)?;
            if t.shape != spec.shape {
                return Err(Error::Integrity(format!(
                    "tensor `{}` has shape {:?}, config implies {:?}",
                    spec.name, t.shape, spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let t = self.get(name)?;
        match t.shape[..] {
            [r, c] => Matrix::from_vec(r, c, t.data.clone()),
            _ => Err(Error::Integrity(format!(
                "tensor `{name}` has shape {:?}, expected a matrix",
                t.shape
            ))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f32>> {
        let t = self.get(name)?;
        if t.shape.len() != 1 {
            return Err(Error::Integrity(format!(
                "tensor `{name}` has shape {:?}, expected a vector",
                t.shape
            )));
        }
        Ok(t.data.clone())
    }

    pub fn lstm(&self, prefix: &str) -> Result<LstmWeights> {
        let w = LstmWeights {
            w_ih: self.matrix(&format!("{prefix}.w_ih"))?,
            w_hh: self.matrix(&format!("{prefix}.w_hh"))?,
            bias: self.vector(&format!("{prefix}.bias"))?,
        };
        w.check()
            .map_err(|e| Error::Integrity(format!("{prefix}: {e}")))?;
        Ok(w)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        let manifest = Manifest {
            config: self.config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("file shorter than header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                std::str::from_utf8(MAGIC).unwrap()
            )));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let manifest_bytes = bytes
            .get(8..8 + len)
            .ok_or_else(|| Error::Integrity("manifest extends past end of file".into()))?;
        let manifest: Manifest = serde_json::from_slice(manifest_bytes)
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let payload = &bytes[8 + len..];

        let mut tensors = BTreeMap::new();
        let mut expected_offset = 0u64;
        let mut prev: Option<&str> = None;
        for entry in &manifest.tensors {
            if prev.is_some_and(|p| p >= entry.name.as_str()) {
                return Err(Error::Integrity(format!(
                    "tensor `{}` out of canonical order",
                    entry.name
                )));
            }
            prev = Some(&entry.name);
            if entry.offset != expected_offset {
                return Err(Error::Integrity(format!(
                    "tensor `{}` at offset {}, expected {expected_offset}",
                    entry.name, entry.offset
                )));
            }
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let raw = payload.get(start..start + 4 * n).ok_or_else(|| {
                Error::Integrity(format!("payload truncated inside tensor `{}`", entry.name))
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            expected_offset += 4 * n as u64;
            tensors.insert(
                entry.name.clone(),
                Tensor {
                    shape: entry.shape.clone(),
                    data,
                },
            );
        }
        if payload.len() as u64 != expected_offset {
            return Err(Error::Integrity(format!(
                "payload has {} bytes, manifest describes {expected_offset}",
                payload.len()
            )));
        }
        manifest
            .config
            .validate()
            .map_err(|e| Error::Integrity(e.to_string()))?;
        Ok(Self {
            config: manifest.config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_w: 3,
            d_s: 2,
            d_p: 4,
            d_model: 6,
            hidden1: 8,
            hidden2: 5,
            kernel: 3,
            selfattn: crate::config::SelfAttnConfig {
                layers: 1,
                heads: 2,
                dim: 4,
                ff: 6,
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = weights_init(0, &small_config()).unwrap().to_bytes();
        let b = weights_init(0, &small_config()).unwrap().to_bytes();
        assert_eq!(a, b);
        assert_ne!(a, weights_init(1, &small_config()).unwrap().to_bytes());
    }

    #[test]
    fn values_respect_fan_bound() {
        let c = small_config();
        let w = weights_init(3, &c).unwrap();
        for spec in all_specs(&c) {
            let t = w.get(&spec.name).unwrap();
            assert_eq!(t.shape, spec.shape);
            match spec.init {
                Init::Scaled { fan_in, fan_out } => {
                    let b = init_bound(fan_in, fan_out) as f32;
                    assert!(t.data.iter().all(|v| v.abs() <= b), "{}", spec.name);
                }
                Init::Zeros => assert!(t.data.iter().all(|&v| v == 0.0)),
                Init::Ones => assert!(t.data.iter().all(|&v| v == 1.0)),
            }
        }
    }

    #[test]
    fn bytes_round_trip() {
        let w = weights_init(2, &small_config()).unwrap();
        let bytes = w.to_bytes();
        let back = ModelWeights::from_bytes(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = weights_init(2, &small_config()).unwrap().to_bytes();

        let mut bad_magic = bytes.clone();
        bad_magic[3] = b'2';
        assert!(matches!(ModelWeights::from_bytes(&bad_magic), Err(Error::Format(_))));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(ModelWeights::from_bytes(truncated), Err(Error::Integrity(_))));

        let mut extended = bytes.clone();
        extended.extend_from_slice(&[0; 4]);
        assert!(matches!(ModelWeights::from_bytes(&extended), Err(Error::Integrity(_))));

        assert!(matches!(ModelWeights::from_bytes(b"SMW"), Err(Error::Format(_))));
    }

    #[test]
    fn require_checks_presence_and_shape() {
        let mut w = weights_init(0, &small_config()).unwrap();
        for kind in ModelKind::ALL {
            w.require(kind).unwrap();
        }
        w.insert("dec.combine", Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        assert!(matches!(w.require(ModelKind::MultiRate), Err(Error::Integrity(_))));
        w.require(ModelKind::PlainRecurrent).unwrap();
        w.remove("lstm.out.bias");
        assert!(matches!(w.require(ModelKind::PlainRecurrent), Err(Error::Integrity(_))));
    }
}
