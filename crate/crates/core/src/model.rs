//! Compact encoder: factorized embeddings (V×E lookup projected E→H) and
//! optional cross-layer parameter sharing, with span-extraction and MLM
//! heads. One `Model` owns a named parameter store; forward passes insert
//! parameters into a fresh tape as leaves.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::mathx;
use crate::seeds;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Additive bias for masked attention keys. Large enough that exp underflows
/// to exactly zero after max subtraction.
const MASK_BIAS: f64 = -1e30;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    InvalidConfig(String),
    Tensor(TensorError),
    Corrupt(String),
    VersionMismatch { got: u32, expected: u32 },
    ShapeDisagreement { name: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::Corrupt(msg) => write!(f, "corrupt checkpoint: {msg}"),
            ModelError::VersionMismatch { got, expected } => {
                write!(f, "checkpoint version {got}, expected {expected}")
            }
            ModelError::ShapeDisagreement { name } => {
                write!(f, "parameter {name} disagrees with the embedded config")
            }
        }
    }
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

/// Architecture hyperparameters. Defaults are the compact French
/// configuration: 32005-piece vocabulary, 128-d embeddings factorized into a
/// 768-d encoder, 12 shared layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate_size: usize,
    pub max_positions: usize,
    pub share_layers: bool,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 32005,
            embedding_size: 128,
            hidden_size: 768,
            layers: 12,
            heads: 12,
            intermediate_size: 3072,
            max_positions: 512,
            share_layers: true,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Validate fields; returns non-fatal warnings (e.g. an unfactorized
    /// E > H configuration).
    pub fn validate(&self) -> Result<Vec<String>, ModelError> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("layers", self.layers),
            ("heads", self.heads),
            ("intermediate_size", self.intermediate_size),
            ("max_positions", self.max_positions),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.hidden_size.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!(
                "hidden_size {} not divisible by heads {}",
                self.hidden_size, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        let mut warnings = Vec::new();
        if self.embedding_size > self.hidden_size {
            warnings.push(format!(
                "embedding_size {} exceeds hidden_size {}; factorization will inflate, not shrink",
                self.embedding_size, self.hidden_size
            ));
        }
        Ok(warnings)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.heads
    }
}

/// Shapes of every parameter, keyed by canonical name. The store, the
/// checkpoint format, and the closed-form count all agree on this map.
pub fn parameter_shapes(config: &EncoderConfig) -> BTreeMap<String, Vec<usize>> {
    let (v, e, h, f) = (
        config.vocab_size,
        config.embedding_size,
        config.hidden_size,
        config.intermediate_size,
    );
    let mut shapes = BTreeMap::new();
    shapes.insert("embeddings.token".to_string(), vec![v, e]);
    shapes.insert(
        "embeddings.position".to_string(),
        vec![config.max_positions, e],
    );
    shapes.insert("embeddings.type".to_string(), vec![2, e]);
    shapes.insert("embeddings.norm.gain".to_string(), vec![e]);
    shapes.insert("embeddings.norm.bias".to_string(), vec![e]);
    shapes.insert("embeddings.projection.weight".to_string(), vec![e, h]);
    shapes.insert("embeddings.projection.bias".to_string(), vec![h]);
    let physical_layers: Vec<String> = if config.share_layers {
        vec!["layer.shared".to_string()]
    } else {
        (0..config.layers).map(|i| format!("layer.{i}")).collect()
    };
    for p in physical_layers {
        for name in ["query", "key", "value", "output"] {
            shapes.insert(format!("{p}.attn.{name}.weight"), vec![h, h]);
            shapes.insert(format!("{p}.attn.{name}.bias"), vec![h]);
        }
        shapes.insert(format!("{p}.attn.norm.gain"), vec![h]);
        shapes.insert(format!("{p}.attn.norm.bias"), vec![h]);
        shapes.insert(format!("{p}.ffn.in.weight"), vec![h, f]);
        shapes.insert(format!("{p}.ffn.in.bias"), vec![f]);
        shapes.insert(format!("{p}.ffn.out.weight"), vec![f, h]);
        shapes.insert(format!("{p}.ffn.out.bias"), vec![h]);
        shapes.insert(format!("{p}.ffn.norm.gain"), vec![h]);
        shapes.insert(format!("{p}.ffn.norm.bias"), vec![h]);
    }
    shapes.insert("mlm.dense.weight".to_string(), vec![h, e]);
    shapes.insert("mlm.dense.bias".to_string(), vec![e]);
    shapes.insert("mlm.norm.gain".to_string(), vec![e]);
    shapes.insert("mlm.norm.bias".to_string(), vec![e]);
    // decoder weight is tied to embeddings.token; only the bias is extra
    shapes.insert("mlm.output.bias".to_string(), vec![v]);
    shapes.insert("qa.start".to_string(), vec![h]);
    shapes.insert("qa.end".to_string(), vec![h]);
    shapes
}

/// Closed-form parameter count. With layer sharing the layer block is
/// counted once, independent of depth.
pub fn count_parameters(config: &EncoderConfig) -> usize {
    let (v, e, h, f, p) = (
        config.vocab_size,
        config.embedding_size,
        config.hidden_size,
        config.intermediate_size,
        config.max_positions,
    );
    let embeddings = v * e + p * e + 2 * e + 2 * e;
    let projection = e * h + h;
    let layer = 4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h) + 2 * h;
    let layer_total = if config.share_layers {
        layer
    } else {
        config.layers * layer
    };
    let mlm = h * e + e + 2 * e + v;
    let qa = 2 * h;
    embeddings + projection + layer_total + mlm + qa
}

/// Standard normal truncated at two standard deviations, via Box-Muller.
fn truncated_normal(rng: &mut ChaCha12Rng, std: f64) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let z = mathx::sqrt(-2.0 * mathx::ln(1.0 - u1))
            * mathx::cos(2.0 * core::f64::consts::PI * u2);
        if mathx::abs(z) <= 2.0 {
            return z * std;
        }
    }
}

/// Graph handles for one forward pass's parameters.
pub type ParamVars = BTreeMap<String, Var>;

#[derive(Debug, Clone)]
pub struct Model {
    config: EncoderConfig,
    params: BTreeMap<String, Tensor>,
}

impl Model {
    /// Deterministic initialization: parameters are drawn name by name in
    /// sorted order from a stream derived from `seed`. Norm gains start at
    /// one, norm biases at zero; everything else is truncated normal.
    pub fn build(config: EncoderConfig, seed: u64) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = seeds::stream(seed, "init");
        let mut params = BTreeMap::new();
        for (name, shape) in parameter_shapes(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".norm.gain") {
                vec![1.0; n]
            } else if name.ends_with(".norm.bias") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| truncated_normal(&mut rng, INIT_STD)).collect()
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Dropout is a training-time behavior, not architecture; tuning may
    /// adjust it on a built model.
    pub fn set_dropout(&mut self, dropout: f64) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {dropout} outside [0, 1)"
            )));
        }
        self.config.dropout = dropout;
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Total stored values; must equal `count_parameters(config)`.
    pub fn stored_parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Insert every parameter into `g` as a leaf and return the handles.
    pub fn insert_params(&self, g: &mut Graph, requires_grad: bool) -> ParamVars {
        self.params
            .iter()
            .map(|(name, t)| (name.clone(), g.leaf(t.clone(), requires_grad)))
            .collect()
    }

    fn layer_prefix(&self, layer: usize) -> String {
        if self.config.share_layers {
            "layer.shared".to_string()
        } else {
            format!("layer.{layer}")
        }
    }

    /// Token + position + type lookup in E space, layer norm, then the E→H
    /// projection. One sequence; batches map over sequences.
    pub fn embed(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        token_ids: &[usize],
        positions: &[usize],
        type_ids: &[usize],
    ) -> Result<Var, ModelError> {
        let t = token_ids.len();
        if positions.len() != t || type_ids.len() != t {
            return Err(ModelError::InvalidConfig(
                "token/position/type id sequences must have equal length".into(),
            ));
        }
        if t > self.config.max_positions {
            return Err(ModelError::InvalidConfig(format!(
                "sequence length {t} exceeds max_positions {}",
                self.config.max_positions
            )));
        }
        for &p in positions {
            if p >= self.config.max_positions {
                return Err(TensorError::IdOutOfRange {
                    id: p,
                    table: self.config.max_positions,
                }
                .into());
            }
        }
        for &ty in type_ids {
            if ty >= 2 {
                return Err(TensorError::IdOutOfRange { id: ty, table: 2 }.into());
            }
        }
        let tok = g.gather(pv["embeddings.token"], token_ids)?;
        let pos = g.gather(pv["embeddings.position"], positions)?;
        let typ = g.gather(pv["embeddings.type"], type_ids)?;
        let sum = g.add(tok, pos)?;
        let sum = g.add(sum, typ)?;
        let normed = g.layer_norm(
            sum,
            pv["embeddings.norm.gain"],
            pv["embeddings.norm.bias"],
            1e-12,
        )?;
        let proj = g.matmul(normed, pv["embeddings.projection.weight"])?;
        Ok(g.add_row(proj, pv["embeddings.projection.bias"])?)
    }

    /// L post-norm encoder layers over a `[T×H]` sequence. With layer
    /// sharing the same physical weights are applied every time. `mask[t]`
    /// is 1 for real tokens; masked keys receive a large negative logit
    /// bias. `dropout_rng` enables the configured dropout (training only).
    pub fn encode(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        hidden: Var,
        mask: &[u8],
        mut dropout_rng: Option<&mut ChaCha12Rng>,
    ) -> Result<Var, ModelError> {
        let t = g.value(hidden).shape()[0];
        if mask.len() != t {
            return Err(TensorError::ShapeMismatch {
                op: "encode",
                left: g.value(hidden).shape().to_vec(),
                right: vec![mask.len()],
            }
            .into());
        }
        let dh = self.config.head_dim();
        let scale = 1.0 / mathx::sqrt(dh as f64);
        // column j of every attention row gets the bias when key j is masked
        let mask_bias: Vec<f64> = (0..t * t)
            .map(|i| if mask[i % t] == 0 { MASK_BIAS } else { 0.0 })
            .collect();

        let mut x = hidden;
        for layer in 0..self.config.layers {
            let p = self.layer_prefix(layer);
            let q = self.linear(g, pv, x, &p, "attn.query")?;
            let k = self.linear(g, pv, x, &p, "attn.key")?;
            let v = self.linear(g, pv, x, &p, "attn.value")?;

            let mut heads = Vec::with_capacity(self.config.heads);
            for head in 0..self.config.heads {
                let qh = g.col_slice(q, head * dh, dh)?;
                let kh = g.col_slice(k, head * dh, dh)?;
                let vh = g.col_slice(v, head * dh, dh)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, scale)?;
                let scores = g.add_const(scores, &mask_bias)?;
                let mut probs = g.softmax(scores, 1)?;
                probs = self.apply_dropout(g, probs, dropout_rng.as_deref_mut())?;
                heads.push(g.matmul(probs, vh)?);
            }
            let ctx = g.col_concat(&heads)?;
            let attn_out = self.linear(g, pv, ctx, &p, "attn.output")?;
            let attn_out = self.apply_dropout(g, attn_out, dropout_rng.as_deref_mut())?;
            let res = g.add(x, attn_out)?;
            x = g.layer_norm(
                res,
                pv[&format!("{p}.attn.norm.gain")],
                pv[&format!("{p}.attn.norm.bias")],
                1e-12,
            )?;

            let inner = self.linear(g, pv, x, &p, "ffn.in")?;
            let inner = g.gelu(inner)?;
            let out = self.linear(g, pv, inner, &p, "ffn.out")?;
            let out = self.apply_dropout(g, out, dropout_rng.as_deref_mut())?;
            let res = g.add(x, out)?;
            x = g.layer_norm(
                res,
                pv[&format!("{p}.ffn.norm.gain")],
                pv[&format!("{p}.ffn.norm.bias")],
                1e-12,
            )?;
        }
        Ok(x)
    }

    fn linear(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        x: Var,
        prefix: &str,
        name: &str,
    ) -> Result<Var, ModelError> {
        let w = g.matmul(x, pv[&format!("{prefix}.{name}.weight")])?;
        Ok(g.add_row(w, pv[&format!("{prefix}.{name}.bias")])?)
    }

    fn apply_dropout(
        &self,
        g: &mut Graph,
        x: Var,
        rng: Option<&mut ChaCha12Rng>,
    ) -> Result<Var, ModelError> {
        let p = self.config.dropout;
        let Some(rng) = rng else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..g.value(x).numel())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        Ok(g.mul_const(x, &mask)?)
    }

    /// Dot every token representation against the learned start/end vectors.
    pub fn qa_span_logits(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        hidden: Var,
    ) -> Result<(Var, Var), ModelError> {
        let t = g.value(hidden).shape()[0];
        let h = self.config.hidden_size;
        let start = g.reshape(pv["qa.start"], vec![h, 1])?;
        let end = g.reshape(pv["qa.end"], vec![h, 1])?;
        let s = g.matmul(hidden, start)?;
        let e = g.matmul(hidden, end)?;
        Ok((g.reshape(s, vec![t])?, g.reshape(e, vec![t])?))
    }

    /// H→E transform (dense + GELU + norm), then scores against the tied
    /// token embedding table plus an output bias.
    pub fn mlm_logits(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        hidden: Var,
    ) -> Result<Var, ModelError> {
        let dense = g.matmul(hidden, pv["mlm.dense.weight"])?;
        let dense = g.add_row(dense, pv["mlm.dense.bias"])?;
        let act = g.gelu(dense)?;
        let normed = g.layer_norm(act, pv["mlm.norm.gain"], pv["mlm.norm.bias"], 1e-12)?;
        let table_t = g.transpose(pv["embeddings.token"])?;
        let scores = g.matmul(normed, table_t)?;
        Ok(g.add_row(scores, pv["mlm.output.bias"])?)
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "LRQA1", u32 version, length-prefixed canonical
// JSON config, then (name, dtype tag, shape, raw little-endian values) per
// parameter in sorted-name order.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 5] = b"LRQA1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        }
    }
}

impl Model {
    /// Serialize to the checkpoint byte format. `Dtype::F64` round-trips
    /// parameters bitwise; `Dtype::F32` halves the file for deployment-size
    /// reporting.
    pub fn to_bytes(&self, dtype: Dtype) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, tensor) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dtype.tag());
            out.push(tensor.shape().len() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match dtype {
                Dtype::F64 => {
                    for v in tensor.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Dtype::F32 => {
                    for v in tensor.data() {
                        out.extend_from_slice(&(*v as f32).to_le_bytes());
                    }
                }
            }
        }
        out
    }

    /// Parse and validate checkpoint bytes. Truncation, version skew, or a
    /// shape that disagrees with the embedded config all fail without
    /// yielding a partial model.
    pub fn from_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(ModelError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::VersionMismatch {
                got: version,
                expected: VERSION,
            });
        }
        let cfg_len = r.u32()? as usize;
        let cfg_bytes = r.take(cfg_len)?;
        let config: EncoderConfig = serde_json::from_slice(cfg_bytes)
            .map_err(|e| ModelError::Corrupt(format!("config: {e}")))?;
        config.validate()?;
        let expected = parameter_shapes(&config);
        let n_params = r.u32()? as usize;
        if n_params != expected.len() {
            return Err(ModelError::Corrupt(format!(
                "{n_params} parameters, config implies {}",
                expected.len()
            )));
        }
        let mut params = BTreeMap::new();
        for _ in 0..n_params {
            let name_len = r.u32()? as usize;
            let name = core::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ModelError::Corrupt("non-utf8 parameter name".into()))?
                .to_string();
            let dtype = match r.u8()? {
                0 => Dtype::F64,
                1 => Dtype::F32,
                t => return Err(ModelError::Corrupt(format!("unknown dtype tag {t}"))),
            };
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            match expected.get(&name) {
                Some(s) if *s == shape => {}
                _ => return Err(ModelError::ShapeDisagreement { name }),
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            match dtype {
                Dtype::F64 => {
                    for _ in 0..n {
                        data.push(f64::from_le_bytes(r.array8()?));
                    }
                }
                Dtype::F32 => {
                    for _ in 0..n {
                        data.push(f32::from_le_bytes(r.array4()?) as f64);
                    }
                }
            }
            let tensor = Tensor::new(shape, data)?;
            tensor.validate_finite("checkpoint parameter")?;
            params.insert(name, tensor);
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Corrupt("trailing bytes".into()));
        }
        Ok(Model { config, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Corrupt("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn array4(&mut self) -> Result<[u8; 4], ModelError> {
        let b = self.take(4)?;
        Ok([b[0], b[1], b[2], b[3]])
    }

    fn array8(&mut self) -> Result<[u8; 8], ModelError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(a)
    }
}

/// Decimal megabytes, for the model-size column of reports.
pub fn checkpoint_size_mb(bytes: usize) -> f64 {
    bytes as f64 / 1e6
}
