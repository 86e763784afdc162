//! Parameter storage, seeded initialization and the weight file format.
//!
//! # File layout
//!
//! ```text
//! b"SPWEIGHT"                  8 bytes
//! manifest length             u64 little-endian
//! manifest                    UTF-8 JSON
//! payload                     f32 little-endian, tensors back to back
//! ```
//!
//! The manifest is
//!
//! ```text
//! {"format_version":1,
//!  "config":{...},
//!  "parameters":[{"name":"embed.h.pos.weight","shape":[64,3],"offset":0,"numel":192}, ...],
//!  "payload_bytes":47588176}
//! ```
//!
//! `offset` is in bytes from the start of the payload. Matrices are
//! row-major `[out, in]`.
//!
//! # Parameter names
//!
//! | name | shape |
//! |---|---|
//! | `embed.{c}.{q}.weight` / `.bias` | `[width, quantity dim]` / `[width]` |
//! | `token_pos_embedding` | `[8, d]` |
//! | `block.{b}.lstm.{c}.weight_ih` / `weight_hh` | `[4d, d]`, gate rows i, f, g, o |
//! | `block.{b}.lstm.{c}.bias_ih` / `bias_hh` | `[4d]` |
//! | `block.{b}.encoder.{l}.attn.in_proj_weight` / `in_proj_bias` | `[3d, d]` / `[3d]`, rows q, k, v |
//! | `block.{b}.encoder.{l}.attn.out_proj.weight` / `.bias` | `[d, d]` / `[d]` |
//! | `block.{b}.encoder.{l}.ff1.*`, `ff2.*` | `[ff, d]`, `[d, ff]` |
//! | `block.{b}.encoder.{l}.norm1.*`, `norm2.*` | `[d]` |
//! | `pose_head.{0,1}.*`, `shape_head.{0,1}.*` | `[hidden, 8d]`, `[out, hidden]` |
//!
//! `{c}` is the component name (`h`, `lh`, `rh`, `pel`, `lf`, `rf`,
//! `lh_h`, `rh_h`) and `{q}` the quantity (`pos`, `vel`, `rot`, `angvel`,
//! `acc`).

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::sensing::{Component, NUM_COMPONENTS};

pub const WEIGHT_MAGIC: &[u8; 8] = b"SPWEIGHT";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;
const TOKEN_EMBED_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    pub weight_ih: Vec<f32>,
    pub weight_hh: Vec<f32>,
    pub bias_ih: Vec<f32>,
    pub bias_hh: Vec<f32>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            input,
            hidden,
            weight_ih: vec![0.0; 4 * hidden * input],
            weight_hh: vec![0.0; 4 * hidden * hidden],
            bias_ih: vec![0.0; 4 * hidden],
            bias_hh: vec![0.0; 4 * hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub in_proj: Linear,
    pub out_proj: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub lstm: Vec<LstmParams>,
    pub encoder: Vec<EncoderLayer>,
}

/// All learnable parameters. Immutable once built; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub config: ModelConfig,
    /// Per component, one affine map per quantity in layout order.
    pub embed: Vec<Vec<Linear>>,
    /// `[8, d]`, row per component.
    pub token_pos_embedding: Vec<f32>,
    pub blocks: Vec<Block>,
    pub pose_head: [Linear; 2],
    pub shape_head: [Linear; 2],
}

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TensorKind {
    LinearWeight { fan_in: usize },
    LinearBias { fan_in: usize },
    LstmWeight { hidden: usize },
    LstmBias { hidden: usize },
    NormWeight,
    NormBias,
    TokenEmbedding,
}

macro_rules! visit_tensors {
    ($w:expr, $f:expr, $($m:tt)?) => {{
        let w = $w;
        let f = $f;
        let d = w.config.d_model;
        let linear = |f: &mut dyn FnMut(String, Vec<usize>, TensorKind, &$($m)? Vec<f32>), prefix: &str, l: &$($m)? Linear| {
            let (i, o) = (l.in_dim, l.out_dim);
            f(format!("{prefix}.weight"), vec![o, i], TensorKind::LinearWeight { fan_in: i }, &$($m)? l.weight);
            f(format!("{prefix}.bias"), vec![o], TensorKind::LinearBias { fan_in: i }, &$($m)? l.bias);
        };
        let norm = |f: &mut dyn FnMut(String, Vec<usize>, TensorKind, &$($m)? Vec<f32>), prefix: &str, n: &$($m)? LayerNorm| {
            f(format!("{prefix}.weight"), vec![d], TensorKind::NormWeight, &$($m)? n.weight);
            f(format!("{prefix}.bias"), vec![d], TensorKind::NormBias, &$($m)? n.bias);
        };
        for (comp, maps) in Component::ALL.iter().zip(&$($m)? w.embed) {
            for (q, l) in comp.layout().iter().zip(maps) {
                linear(f, &format!("embed.{}.{}", comp.name(), q.name()), l);
            }
        }
        f("token_pos_embedding".into(), vec![NUM_COMPONENTS, d], TensorKind::TokenEmbedding, &$($m)? w.token_pos_embedding);
        for (b, block) in (&$($m)? w.blocks).into_iter().enumerate() {
            for (comp, p) in Component::ALL.iter().zip(&$($m)? block.lstm) {
                let pre = format!("block.{b}.lstm.{}", comp.name());
                let (inp, h) = (p.input, p.hidden);
                f(format!("{pre}.weight_ih"), vec![4 * h, inp], TensorKind::LstmWeight { hidden: h }, &$($m)? p.weight_ih);
                f(format!("{pre}.weight_hh"), vec![4 * h, h], TensorKind::LstmWeight { hidden: h }, &$($m)? p.weight_hh);
                f(format!("{pre}.bias_ih"), vec![4 * h], TensorKind::LstmBias { hidden: h }, &$($m)? p.bias_ih);
                f(format!("{pre}.bias_hh"), vec![4 * h], TensorKind::LstmBias { hidden: h }, &$($m)? p.bias_hh);
            }
            for (l, layer) in (&$($m)? block.encoder).into_iter().enumerate() {
                let pre = format!("block.{b}.encoder.{l}");
                f(format!("{pre}.attn.in_proj_weight"), vec![3 * d, d], TensorKind::LinearWeight { fan_in: d }, &$($m)? layer.in_proj.weight);
                f(format!("{pre}.attn.in_proj_bias"), vec![3 * d], TensorKind::LinearBias { fan_in: d }, &$($m)? layer.in_proj.bias);
                linear(f, &format!("{pre}.attn.out_proj"), &$($m)? layer.out_proj);
                linear(f, &format!("{pre}.ff1"), &$($m)? layer.ff1);
                linear(f, &format!("{pre}.ff2"), &$($m)? layer.ff2);
                norm(f, &format!("{pre}.norm1"), &$($m)? layer.norm1);
                norm(f, &format!("{pre}.norm2"), &$($m)? layer.norm2);
            }
        }
        for (i, l) in (&$($m)? w.pose_head).into_iter().enumerate() {
            linear(f, &format!("pose_head.{i}"), l);
        }
        for (i, l) in (&$($m)? w.shape_head).into_iter().enumerate() {
            linear(f, &format!("shape_head.{i}"), l);
        }
    }};
}

impl NetworkWeights {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let embed = Component::ALL
            .iter()
            .map(|c| {
                c.layout()
                    .iter()
                    .zip(config.embed_widths(*c))
                    .map(|(q, w)| Linear::zeros(q.width(), *w))
                    .collect()
            })
            .collect();
        let layer = || EncoderLayer {
            in_proj: Linear::zeros(d, 3 * d),
            out_proj: Linear::zeros(d, d),
            ff1: Linear::zeros(d, config.feedforward_dim),
            ff2: Linear::zeros(config.feedforward_dim, d),
            norm1: LayerNorm {
                weight: vec![0.0; d],
                bias: vec![0.0; d],
            },
            norm2: LayerNorm {
                weight: vec![0.0; d],
                bias: vec![0.0; d],
            },
        };
        let blocks = (0..config.n_blocks)
            .map(|_| Block {
                lstm: (0..NUM_COMPONENTS).map(|_| LstmParams::zeros(d, d)).collect(),
                encoder: (0..config.transformer_layers_per_block).map(|_| layer()).collect(),
            })
            .collect();
        let head_in = NUM_COMPONENTS * d;
        Ok(NetworkWeights {
            config: config.clone(),
            embed,
            token_pos_embedding: vec![0.0; NUM_COMPONENTS * d],
            blocks,
            pose_head: [
                Linear::zeros(head_in, config.head_hidden),
                Linear::zeros(config.head_hidden, config.pose_out),
            ],
            shape_head: [
                Linear::zeros(head_in, config.head_hidden),
                Linear::zeros(config.head_hidden, config.shape_out),
            ],
        })
    }

    /// Visits every tensor in canonical order.
    pub fn for_each_tensor(&self, f: &mut dyn FnMut(String, Vec<usize>, TensorKind, &Vec<f32>)) {
        visit_tensors!(self, f,)
    }

    pub fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(String, Vec<usize>, TensorKind, &mut Vec<f32>)) {
        visit_tensors!(self, f, mut)
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(&mut |_, _, _, t| n += t.len());
        n
    }

    pub fn tensor(&self, name: &str) -> Option<Vec<f32>> {
        let mut found = None;
        self.for_each_tensor(&mut |n, _, _, t| {
            if n == name {
                found = Some(t.clone());
            }
        });
        found
    }

    pub fn tensor_names(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.for_each_tensor(&mut |n, s, _, _| out.push((n, s)));
        out
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(&mut |_, _, _, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }
}

/// `n × n` orthogonal matrix from the QR factorization of a Gaussian draw,
/// with column signs fixed so that `R` has a positive diagonal.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Deterministic parameter initialization.
///
/// Recurrent matrices get one orthogonal block per gate, affine maps are
/// uniform in `±√(1/fan_in)`, recurrent biases uniform in `±1/√hidden`,
/// normalization layers start at identity and the token embedding is
/// Gaussian with standard deviation 0.02.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<NetworkWeights> {
    let mut w = NetworkWeights::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    w.for_each_tensor_mut(&mut |_, shape, kind, t| match kind {
        TensorKind::LinearWeight { fan_in } | TensorKind::LinearBias { fan_in } => {
            let b = (1.0 / fan_in as f64).sqrt() as f32;
            t.iter_mut().for_each(|v| *v = rng.random_range(-b..=b));
        }
        TensorKind::LstmWeight { hidden } => {
            let cols = shape[1];
            for gate in 0..4 {
                let q = orthogonal(hidden.max(cols), &mut rng);
                for r in 0..hidden {
                    for c in 0..cols {
                        t[(gate * hidden + r) * cols + c] = q[(r, c)] as f32;
                    }
                }
            }
        }
        TensorKind::LstmBias { hidden } => {
            let b = 1.0 / (hidden as f32).sqrt();
            t.iter_mut().for_each(|v| *v = rng.random_range(-b..=b));
        }
        TensorKind::NormWeight => t.fill(1.0),
        TensorKind::NormBias => t.fill(0.0),
        TensorKind::TokenEmbedding => t
            .iter_mut()
            .for_each(|v| *v = (rng.sample::<f64, _>(StandardNormal) * TOKEN_EMBED_STD) as f32),
    });
    Ok(w)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub numel: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub parameters: Vec<ParameterEntry>,
    pub payload_bytes: u64,
}

impl NetworkWeights {
    pub fn manifest(&self) -> Manifest {
        let mut parameters = Vec::new();
        let mut offset = 0u64;
        self.for_each_tensor(&mut |name, shape, _, t| {
            let numel = t.len() as u64;
            parameters.push(ParameterEntry {
                name,
                shape,
                offset,
                numel,
            });
            offset += 4 * numel;
        });
        Manifest {
            format_version: WEIGHT_FORMAT_VERSION,
            config: self.config.clone(),
            parameters,
            payload_bytes: offset,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + manifest.len() + 4 * self.parameter_count());
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        self.for_each_tensor(&mut |_, _, _, t| {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != WEIGHT_MAGIC {
            return Err(Error::Parse("not a weight file (bad magic)".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let mend = 16u64
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| Error::Parse("truncated manifest".into()))? as usize;
        let value: serde_json::Value = serde_json::from_slice(&bytes[16..mend])?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse("manifest has no format_version".into()))?;
        if version != WEIGHT_FORMAT_VERSION as u64 {
            return Err(Error::VersionMismatch {
                found: version as u32,
                expected: WEIGHT_FORMAT_VERSION,
            });
        }
        let manifest: Manifest = serde_json::from_value(value)?;
        let payload = &bytes[mend..];
        if payload.len() as u64 != manifest.payload_bytes {
            return Err(Error::Parse(format!(
                "payload is {} bytes, manifest declares {}",
                payload.len(),
                manifest.payload_bytes
            )));
        }
        let mut w = NetworkWeights::zeros(&manifest.config)
            .map_err(|e| Error::ShapeMismatch(format!("manifest config: {e}")))?;
        let mut entries: HashMap<&str, &ParameterEntry> = HashMap::new();
        for e in &manifest.parameters {
            if entries.insert(e.name.as_str(), e).is_some() {
                return Err(Error::Parse(format!("duplicate parameter `{}`", e.name)));
            }
        }
        let mut err = None;
        let mut seen = 0;
        w.for_each_tensor_mut(&mut |name, shape, _, t| {
            if err.is_some() {
                return;
            }
            let Some(e) = entries.get(name.as_str()) else {
                err = Some(Error::ShapeMismatch(format!("missing parameter `{name}`")));
                return;
            };
            seen += 1;
            if e.shape != shape || e.numel != t.len() as u64 {
                err = Some(Error::ShapeMismatch(format!(
                    "`{name}` has shape {:?} in file, config implies {shape:?}",
                    e.shape
                )));
                return;
            }
            let end = e.offset.checked_add(4 * e.numel);
            match end {
                Some(end) if end <= payload.len() as u64 => {
                    let src = &payload[e.offset as usize..end as usize];
                    for (v, b) in t.iter_mut().zip(src.chunks_exact(4)) {
                        *v = f32::from_le_bytes(b.try_into().unwrap());
                    }
                }
                _ => err = Some(Error::Parse(format!("`{name}` lies outside the payload"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != manifest.parameters.len() {
            let known: Vec<String> = w.tensor_names().into_iter().map(|(n, _)| n).collect();
            let extra = manifest
                .parameters
                .iter()
                .find(|e| !known.contains(&e.name))
                .map(|e| e.name.clone())
                .unwrap_or_default();
            return Err(Error::ShapeMismatch(format!("unexpected parameter `{extra}`")));
        }
        if !w.all_finite() {
            return Err(Error::Parse("non-finite parameter value".into()));
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 of the serialized file.
    pub fn checksum(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
