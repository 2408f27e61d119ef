//! DLRM-lite ranking network.
//!
//! Pathways: a dense-feature MLP, mean-pooled sparse embeddings, and one
//! co-trained projection head per content channel (user and item heads are
//! distinct parameters). Every pathway ends at the shared interaction
//! dimension `d_int`; the interaction stage takes all pairwise dot products
//! and the top MLP maps `concat(dense, dots)` to a single logit.
//!
//! Masked channels are absent from the parameter set entirely, so the
//! output is exactly invariant to their raw embeddings and the top-MLP
//! input width is fixed per mask at config time.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, NodeId, Tape};
use crate::dataio::{ContentEmbeddingStore, InteractionRecord, Schema, Side};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub type ChannelStores = HashMap<String, ContentEmbeddingStore>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub name: String,
    pub side: Side,
    pub d_raw: usize,
    #[serde(default = "default_proj_hidden")]
    pub hidden: Vec<usize>,
}

fn default_proj_hidden() -> Vec<usize> {
    vec![64]
}

fn default_d_int() -> usize {
    32
}

fn default_dense_hidden() -> Vec<usize> {
    vec![64]
}

fn default_top_hidden() -> Vec<usize> {
    vec![64, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_d_int")]
    pub d_int: usize,
    pub dense_dim: usize,
    #[serde(default = "default_dense_hidden")]
    pub dense_hidden: Vec<usize>,
    #[serde(default = "default_top_hidden")]
    pub top_hidden: Vec<usize>,
    pub sparse_vocab: usize,
    pub pad_id: usize,
    pub sparse_len: usize,
    pub channels: Vec<ProjectionSpec>,
    /// The channel mask: names of channels that participate. Must be a
    /// subset of `channels`.
    pub active_channels: Vec<String>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Default architecture for a dataset schema, all channels active.
    pub fn for_schema(schema: &Schema) -> Self {
        ModelConfig {
            d_int: default_d_int(),
            dense_dim: schema.dense_dim,
            dense_hidden: default_dense_hidden(),
            top_hidden: default_top_hidden(),
            sparse_vocab: schema.sparse_vocab,
            pad_id: schema.pad_id,
            sparse_len: schema.sparse_len,
            channels: schema
                .channels
                .iter()
                .map(|c| ProjectionSpec {
                    name: c.name.clone(),
                    side: c.side,
                    d_raw: c.d_raw,
                    hidden: default_proj_hidden(),
                })
                .collect(),
            active_channels: schema.channels.iter().map(|c| c.name.clone()).collect(),
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_int == 0 {
            return Err(Error::Config("d_int must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if self.pad_id >= self.sparse_vocab {
            return Err(Error::Config(format!(
                "pad id {} >= vocab {}",
                self.pad_id, self.sparse_vocab
            )));
        }
        for name in &self.active_channels {
            if self.channel(name).is_none() {
                return Err(Error::Config(format!(
                    "active channel {name:?} not declared in channels"
                )));
            }
        }
        Ok(())
    }

    pub fn channel(&self, name: &str) -> Option<&ProjectionSpec> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn is_active(&self, name: &str) -> bool {
        self.active_channels.iter().any(|c| c == name)
    }

    /// Active channels in declaration order.
    pub fn active_specs(&self) -> Vec<&ProjectionSpec> {
        self.channels
            .iter()
            .filter(|c| self.is_active(&c.name))
            .collect()
    }

    pub fn active_specs_for_side(&self, side: Side) -> Vec<&ProjectionSpec> {
        self.active_specs()
            .into_iter()
            .filter(|c| c.side == side)
            .collect()
    }

    /// Collected interaction vectors: dense, pooled sparse, active channels.
    pub fn n_interaction_vectors(&self) -> usize {
        2 + self.active_specs().len()
    }

    pub fn n_interaction_pairs(&self) -> usize {
        let n = self.n_interaction_vectors();
        n * (n - 1) / 2
    }

    pub fn top_input_dim(&self) -> usize {
        self.d_int + self.n_interaction_pairs()
    }

    fn dense_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.dense_dim];
        dims.extend(&self.dense_hidden);
        dims.push(self.d_int);
        dims
    }

    fn top_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.top_input_dim()];
        dims.extend(&self.top_hidden);
        dims.push(1);
        dims
    }

    fn proj_dims(&self, spec: &ProjectionSpec) -> Vec<usize> {
        let mut dims = vec![spec.d_raw];
        dims.extend(&spec.hidden);
        dims.push(self.d_int);
        dims
    }

    /// Parameter names and shapes, in a fixed order shared by init,
    /// checkpoints, and the optimizer.
    fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut layout = vec![(
            "embed.table".to_string(),
            vec![self.sparse_vocab, self.d_int],
        )];
        let mlp = |prefix: &str, dims: &[usize], layout: &mut Vec<(String, Vec<usize>)>| {
            for l in 0..dims.len() - 1 {
                layout.push((format!("{prefix}.{l}.w"), vec![dims[l + 1], dims[l]]));
                layout.push((format!("{prefix}.{l}.b"), vec![dims[l + 1]]));
            }
        };
        mlp("dense", &self.dense_dims(), &mut layout);
        for spec in self.active_specs() {
            mlp(
                &format!("proj.{}", spec.name),
                &self.proj_dims(spec),
                &mut layout,
            );
        }
        mlp("top", &self.top_dims(), &mut layout);
        layout
    }
}

/// All trainable tensors, keyed by name.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn tensor(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    pub fn bitwise_eq(&self, other: &ModelParams) -> bool {
        if self.tensors.len() != other.tensors.len() {
            return false;
        }
        self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
            a.0 == b.0
                && a.1.shape() == b.1.shape()
                && a.1
                    .values()
                    .iter()
                    .zip(b.1.values())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

/// Glorot-uniform weights, zero biases, embedding rows ~ U(±1/sqrt(d_int)).
/// Deterministic by seed.
pub fn init(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = Rng::derive(config.seed, &[0x696e_6974]);
    let mut tensors = BTreeMap::new();
    for (name, shape) in config.tensor_layout() {
        let tensor = if name == "embed.table" {
            let bound = 1.0 / (config.d_int as f64).sqrt();
            random_tensor(&mut rng, &shape, bound)
        } else if name.ends_with(".w") {
            let (fan_out, fan_in) = (shape[0], shape[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            random_tensor(&mut rng, &shape, bound)
        } else {
            Tensor::zeros(shape)
        };
        tensors.insert(name, tensor);
    }
    Ok(ModelParams {
        config: config.clone(),
        tensors,
    })
}

fn random_tensor(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), values).expect("shape/values consistent")
}

/// Parameter leaves registered on a tape, keyed by tensor name.
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn node(&self, name: &str) -> NodeId {
        self.ids[name]
    }

    pub fn names(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }
}

pub fn bind(tape: &mut Tape, params: &ModelParams) -> BoundParams {
    let ids = params
        .tensors
        .iter()
        .map(|(name, tensor)| (name.clone(), tape.leaf(tensor.clone())))
        .collect();
    BoundParams { ids }
}

#[allow(clippy::too_many_arguments)]
fn mlp_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    prefix: &str,
    n_layers: usize,
    input: NodeId,
    dropout: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<NodeId> {
    let mut x = input;
    for l in 0..n_layers {
        let w = bound.node(&format!("{prefix}.{l}.w"));
        let b = bound.node(&format!("{prefix}.{l}.b"));
        x = tape.affine(w, x, b)?;
        if l + 1 < n_layers {
            x = tape.relu(x);
            x = tape.dropout(x, dropout, mode, rng)?;
        }
    }
    Ok(x)
}

/// Projects one raw channel vector to `d_int`. Relu hidden layers with
/// dropout in train mode, linear output.
pub fn project_tape(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    channel: &str,
    raw: &[f32],
    mode: Mode,
    rng: &mut Rng,
) -> Result<NodeId> {
    let spec = params.config.channel(channel).ok_or_else(|| {
        Error::Config(format!("unknown channel {channel:?}"))
    })?;
    if raw.len() != spec.d_raw {
        return Err(Error::ShapeMismatch {
            op: "project",
            lhs: vec![raw.len()],
            rhs: vec![spec.d_raw],
        });
    }
    let input = tape.vector(raw.iter().map(|&v| v as f64).collect());
    let n_layers = params.config.proj_dims(spec).len() - 1;
    mlp_tape(
        tape,
        bound,
        &format!("proj.{channel}"),
        n_layers,
        input,
        params.config.dropout,
        mode,
        rng,
    )
}

/// Mean of embedding rows for non-pad ids; an all-pad list pools to zero.
pub fn pool_sparse_tape(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    ids: &[usize],
) -> Result<NodeId> {
    let cfg = &params.config;
    for &id in ids {
        if id >= cfg.sparse_vocab {
            return Err(Error::IndexOutOfRange {
                index: id,
                bound: cfg.sparse_vocab,
            });
        }
    }
    let real: Vec<usize> = ids.iter().copied().filter(|&id| id != cfg.pad_id).collect();
    if real.is_empty() {
        return Ok(tape.leaf(Tensor::zeros(vec![cfg.d_int])));
    }
    let rows = tape.gather_rows(bound.node("embed.table"), &real)?;
    let pooled = tape.mean(rows, Some(0))?;
    Ok(pooled)
}

/// Forward outputs as tape nodes: the logit and, per active channel, the
/// dropout-free reduced vector used by the contrastive losses.
pub struct ForwardNodes {
    pub logit: NodeId,
    pub reduced: BTreeMap<String, NodeId>,
}

impl ForwardNodes {
    pub fn probability(&self, tape: &Tape) -> f64 {
        sigmoid_val(tape.scalar_value(self.logit))
    }
}

fn channel_key<'r>(spec: &ProjectionSpec, record: &'r InteractionRecord) -> &'r str {
    match spec.side {
        Side::User => &record.user_id,
        Side::Item => &record.item_id,
    }
}

fn raw_for<'s>(
    stores: &'s ChannelStores,
    spec: &ProjectionSpec,
    id: &str,
) -> Result<&'s [f32]> {
    stores
        .get(&spec.name)
        .and_then(|s| s.get(id))
        .ok_or_else(|| Error::MissingEmbedding {
            channel: spec.name.clone(),
            id: id.to_string(),
        })
}

/// Full forward pass for one record on the tape.
///
/// In train mode the interaction path sees dropout-regularized projections
/// while `reduced` carries dropout-free projections of the same weights:
/// the contrastive terms must see the similarity structure, not the
/// dropout noise. In eval mode the two coincide.
pub fn forward_tape(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    record: &InteractionRecord,
    stores: &ChannelStores,
    mode: Mode,
    rng: &mut Rng,
) -> Result<ForwardNodes> {
    forward_tape_with(tape, params, bound, record, stores, mode, rng, true)
}

/// `forward_tape` with control over whether the dropout-free `reduced`
/// projections are materialized; the training loop skips them because
/// contrastive vectors are resolved per entity, not per record.
#[allow(clippy::too_many_arguments)]
pub fn forward_tape_with(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    record: &InteractionRecord,
    stores: &ChannelStores,
    mode: Mode,
    rng: &mut Rng,
    want_reduced: bool,
) -> Result<ForwardNodes> {
    let cfg = &params.config;
    if record.dense.len() != cfg.dense_dim {
        return Err(Error::ShapeMismatch {
            op: "forward.dense",
            lhs: vec![record.dense.len()],
            rhs: vec![cfg.dense_dim],
        });
    }

    let dense_in = tape.vector(record.dense.clone());
    let n_dense_layers = cfg.dense_dims().len() - 1;
    let z_dense = mlp_tape(
        tape, bound, "dense", n_dense_layers, dense_in, cfg.dropout, mode, rng,
    )?;

    let z_sparse = pool_sparse_tape(tape, params, bound, &record.sparse)?;

    let mut interaction_vecs = vec![z_dense, z_sparse];
    let mut reduced = BTreeMap::new();
    let needs_dropout = mode == Mode::Train && cfg.dropout > 0.0;
    for spec in cfg.active_specs() {
        let id = channel_key(spec, record);
        let raw = raw_for(stores, spec, id)?;
        let z_path = project_tape(tape, params, bound, &spec.name, raw, mode, rng)?;
        if want_reduced {
            let z_eval = if needs_dropout {
                let mut no_dropout_rng = Rng::new(0);
                project_tape(
                    tape,
                    params,
                    bound,
                    &spec.name,
                    raw,
                    Mode::Eval,
                    &mut no_dropout_rng,
                )?
            } else {
                z_path
            };
            reduced.insert(spec.name.clone(), z_eval);
        }
        interaction_vecs.push(z_path);
    }

    // pairwise dot products, fixed (a, b) order with a < b
    let mut dots = Vec::with_capacity(cfg.n_interaction_pairs());
    for a in 0..interaction_vecs.len() {
        for b in a + 1..interaction_vecs.len() {
            dots.push(tape.dot(interaction_vecs[a], interaction_vecs[b])?);
        }
    }
    let mut top_parts = vec![z_dense];
    top_parts.extend(dots);
    let top_in = tape.concat(&top_parts)?;
    let n_top_layers = cfg.top_dims().len() - 1;
    let logit_vec = mlp_tape(
        tape, bound, "top", n_top_layers, top_in, cfg.dropout, mode, rng,
    )?;
    let logit = tape.sum(logit_vec, None)?; // [1] -> scalar node

    Ok(ForwardNodes { logit, reduced })
}

/// Dropout-free entity representation for contrastive learning: the mean
/// of the entity's active-channel projections on that side. `None` when the
/// mask leaves the side without channels.
pub fn project_entity(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    side: Side,
    id: &str,
    stores: &ChannelStores,
) -> Result<Option<NodeId>> {
    let specs = params.config.active_specs_for_side(side);
    if specs.is_empty() {
        return Ok(None);
    }
    let mut rng = Rng::new(0);
    let mut acc: Option<NodeId> = None;
    for spec in &specs {
        let raw = raw_for(stores, spec, id)?;
        let z = project_tape(tape, params, bound, &spec.name, raw, Mode::Eval, &mut rng)?;
        acc = Some(match acc {
            None => z,
            Some(prev) => tape.add(prev, z)?,
        });
    }
    let sum = acc.expect("non-empty specs");
    Ok(Some(if specs.len() > 1 {
        tape.scale(sum, 1.0 / specs.len() as f64)
    } else {
        sum
    }))
}

// ── fast evaluation path (no tape) ───────────────────────────────────

/// Forward output for evaluation: plain values, no gradient bookkeeping.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logit: f64,
    pub probability: f64,
    pub reduced: BTreeMap<String, Vec<f64>>,
}

/// Sigmoid clamped to the open unit interval: raw f64 sigmoid rounds to
/// exactly 1.0 once the logit exceeds ~36.7, and the probability contract
/// is strict.
fn sigmoid_val(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn matvec_add(w: &Tensor, x: &[f64], b: &Tensor) -> Vec<f64> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(in_dim, x.len());
    let wv = w.values();
    let bv = b.values();
    (0..out_dim)
        .map(|o| {
            let row = &wv[o * in_dim..(o + 1) * in_dim];
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bv[o]
        })
        .collect()
}

fn mlp_val(params: &ModelParams, prefix: &str, n_layers: usize, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for l in 0..n_layers {
        let w = params.tensor(&format!("{prefix}.{l}.w"));
        let b = params.tensor(&format!("{prefix}.{l}.b"));
        x = matvec_add(w, &x, b);
        if l + 1 < n_layers {
            for v in &mut x {
                *v = v.max(0.0);
            }
        }
    }
    x
}

pub fn project_value(params: &ModelParams, channel: &str, raw: &[f32]) -> Result<Vec<f64>> {
    let spec = params
        .config
        .channel(channel)
        .ok_or_else(|| Error::Config(format!("unknown channel {channel:?}")))?;
    if raw.len() != spec.d_raw {
        return Err(Error::ShapeMismatch {
            op: "project",
            lhs: vec![raw.len()],
            rhs: vec![spec.d_raw],
        });
    }
    let input: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
    let n_layers = params.config.proj_dims(spec).len() - 1;
    Ok(mlp_val(params, &format!("proj.{channel}"), n_layers, &input))
}

pub fn pool_sparse_value(params: &ModelParams, ids: &[usize]) -> Result<Vec<f64>> {
    let cfg = &params.config;
    for &id in ids {
        if id >= cfg.sparse_vocab {
            return Err(Error::IndexOutOfRange {
                index: id,
                bound: cfg.sparse_vocab,
            });
        }
    }
    let table = params.tensor("embed.table");
    let tv = table.values();
    let d = cfg.d_int;
    let mut acc = vec![0.0; d];
    let mut n = 0usize;
    for &id in ids.iter().filter(|&&id| id != cfg.pad_id) {
        for (a, v) in acc.iter_mut().zip(&tv[id * d..(id + 1) * d]) {
            *a += v;
        }
        n += 1;
    }
    if n > 0 {
        for a in &mut acc {
            *a /= n as f64;
        }
    }
    Ok(acc)
}

/// Deterministic eval-mode forward pass (dropout is the identity).
pub fn forward_eval(
    params: &ModelParams,
    record: &InteractionRecord,
    stores: &ChannelStores,
) -> Result<ForwardOutput> {
    let cfg = &params.config;
    if record.dense.len() != cfg.dense_dim {
        return Err(Error::ShapeMismatch {
            op: "forward.dense",
            lhs: vec![record.dense.len()],
            rhs: vec![cfg.dense_dim],
        });
    }
    let n_dense_layers = cfg.dense_dims().len() - 1;
    let z_dense = mlp_val(params, "dense", n_dense_layers, &record.dense);
    let z_sparse = pool_sparse_value(params, &record.sparse)?;

    let mut vecs = vec![z_dense.clone(), z_sparse];
    let mut reduced = BTreeMap::new();
    for spec in cfg.active_specs() {
        let id = channel_key(spec, record);
        let raw = raw_for(stores, spec, id)?;
        let z = project_value(params, &spec.name, raw)?;
        vecs.push(z.clone());
        reduced.insert(spec.name.clone(), z);
    }

    let mut top_in = z_dense;
    for a in 0..vecs.len() {
        for b in a + 1..vecs.len() {
            top_in.push(vecs[a].iter().zip(&vecs[b]).map(|(x, y)| x * y).sum());
        }
    }
    let n_top_layers = cfg.top_dims().len() - 1;
    let logit = mlp_val(params, "top", n_top_layers, &top_in)[0];
    Ok(ForwardOutput {
        logit,
        probability: sigmoid_val(logit),
        reduced,
    })
}

/// Entity representation on the value path; mirrors `project_entity`.
pub fn project_entity_value(
    params: &ModelParams,
    side: Side,
    id: &str,
    stores: &ChannelStores,
) -> Result<Option<Vec<f64>>> {
    let specs = params.config.active_specs_for_side(side);
    if specs.is_empty() {
        return Ok(None);
    }
    let mut acc = vec![0.0; params.config.d_int];
    for spec in &specs {
        let raw = raw_for(stores, spec, id)?;
        let z = project_value(params, &spec.name, raw)?;
        for (a, v) in acc.iter_mut().zip(&z) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= specs.len() as f64;
    }
    Ok(Some(acc))
}

// ── checkpoints ──────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// JSON map name -> {shape, values}. serde_json emits shortest-roundtrip
/// decimal for f64, so load restores exact bits.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let map: BTreeMap<&String, CheckpointTensor> = params
        .tensors
        .iter()
        .map(|(name, t)| {
            (
                name,
                CheckpointTensor {
                    shape: t.shape().to_vec(),
                    values: t.values().to_vec(),
                },
            )
        })
        .collect();
    fs::write(path, serde_json::to_string(&map)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<ModelParams> {
    let text = fs::read_to_string(path)?;
    let map: BTreeMap<String, CheckpointTensor> = serde_json::from_str(&text)?;
    let mut tensors = BTreeMap::new();
    for (name, shape) in config.tensor_layout() {
        let entry = map.get(&name).ok_or_else(|| {
            Error::Checkpoint(format!("missing tensor {name:?} for this config"))
        })?;
        if entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, config expects {:?}",
                entry.shape, shape
            )));
        }
        tensors.insert(name, Tensor::new(entry.shape.clone(), entry.values.clone())?);
    }
    if map.len() != tensors.len() {
        let extra: Vec<&String> = map.keys().filter(|k| !tensors.contains_key(*k)).collect();
        return Err(Error::Checkpoint(format!(
            "checkpoint holds tensors unknown to this config: {extra:?}"
        )));
    }
    Ok(ModelParams {
        config: config.clone(),
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ChannelSpec;

    fn tiny_schema() -> Schema {
        Schema {
            dense_dim: 3,
            sparse_vocab: 8,
            pad_id: 7,
            sparse_len: 3,
            channels: vec![
                ChannelSpec {
                    name: "user-summary".into(),
                    side: Side::User,
                    d_raw: 6,
                },
                ChannelSpec {
                    name: "item-summary".into(),
                    side: Side::Item,
                    d_raw: 6,
                },
            ],
        }
    }

    fn tiny_config() -> ModelConfig {
        let mut cfg = ModelConfig::for_schema(&tiny_schema());
        cfg.d_int = 4;
        cfg.dense_hidden = vec![5];
        cfg.top_hidden = vec![6];
        for ch in &mut cfg.channels {
            ch.hidden = vec![5];
        }
        cfg.seed = 42;
        cfg
    }

    fn tiny_stores(cfg: &ModelConfig) -> ChannelStores {
        let mut stores = HashMap::new();
        let mut rng = Rng::new(1);
        for spec in &cfg.channels {
            let mut store = ContentEmbeddingStore::new(spec.name.clone(), spec.d_raw);
            for id in ["u1", "u2", "i1", "i2"] {
                let v: Vec<f32> = (0..spec.d_raw)
                    .map(|_| rng.uniform(-1.0, 1.0) as f32)
                    .collect();
                store.insert(id, v).unwrap();
            }
            stores.insert(spec.name.clone(), store);
        }
        stores
    }

    fn tiny_record() -> InteractionRecord {
        InteractionRecord {
            user_id: "u1".into(),
            item_id: "i1".into(),
            rating: 5,
            label: 1,
            dense: vec![0.5, -1.0, 0.25],
            sparse: vec![2, 3, 7],
        }
    }

    #[test]
    fn init_deterministic_and_bounded() {
        let cfg = tiny_config();
        let a = init(&cfg).unwrap();
        let b = init(&cfg).unwrap();
        assert!(a.bitwise_eq(&b));
        for (name, t) in &a.tensors {
            if name.ends_with(".b") {
                assert!(t.values().iter().all(|&v| v == 0.0), "{name} biases nonzero");
            } else if name.ends_with(".w") {
                let (fan_out, fan_in) = (t.shape()[0], t.shape()[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                assert!(
                    t.values().iter().all(|&v| v.abs() <= bound),
                    "{name} exceeds glorot bound"
                );
            } else if name == "embed.table" {
                let bound = 1.0 / (cfg.d_int as f64).sqrt();
                assert!(t.values().iter().all(|&v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn different_seed_different_params() {
        let cfg = tiny_config();
        let a = init(&cfg).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.seed = 43;
        let b = init(&cfg2).unwrap();
        assert!(!a.bitwise_eq(&b));
    }

    #[test]
    fn pool_sparse_pad_conventions() {
        let cfg = tiny_config();
        let params = init(&cfg).unwrap();
        // single non-pad id pools to exactly that row
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params);
        let z = pool_sparse_tape(&mut tape, &params, &bound, &[3, 7, 7]).unwrap();
        let table = params.tensor("embed.table");
        let row3 = &table.values()[3 * cfg.d_int..4 * cfg.d_int];
        assert_eq!(tape.value(z).values(), row3);
        // all-pad pools to zero
        let z0 = pool_sparse_tape(&mut tape, &params, &bound, &[7, 7, 7]).unwrap();
        assert!(tape.value(z0).values().iter().all(|&v| v == 0.0));
        // duplicates average to the row itself
        let z2 = pool_sparse_tape(&mut tape, &params, &bound, &[2, 2, 7]).unwrap();
        let row2 = &table.values()[2 * cfg.d_int..3 * cfg.d_int];
        for (a, b) in tape.value(z2).values().iter().zip(row2) {
            assert!((a - b).abs() < 1e-15);
        }
        // out-of-vocab id is rejected
        assert!(pool_sparse_tape(&mut tape, &params, &bound, &[9]).is_err());
        // value path agrees
        assert_eq!(
            pool_sparse_value(&params, &[3, 7, 7]).unwrap(),
            row3.to_vec()
        );
    }

    #[test]
    fn projection_identity_block_copies_prefix() {
        let mut cfg = tiny_config();
        // single linear layer 6 -> 4
        for ch in &mut cfg.channels {
            ch.hidden = vec![];
        }
        let mut params = init(&cfg).unwrap();
        let name = "proj.user-summary.0.w";
        let w = params.tensors.get_mut(name).unwrap();
        let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
        for (i, v) in w.values_mut().iter_mut().enumerate() {
            let (r, c) = (i / in_dim, i % in_dim);
            *v = if r == c { 1.0 } else { 0.0 };
        }
        assert_eq!(out_dim, 4);
        let raw: Vec<f32> = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let z = project_value(&params, "user-summary", &raw).unwrap();
        for (i, v) in z.iter().enumerate() {
            assert!((v - raw[i] as f64).abs() < 1e-7);
        }
    }

    #[test]
    fn project_dimension_mismatch() {
        let cfg = tiny_config();
        let params = init(&cfg).unwrap();
        let err = project_value(&params, "user-summary", &[0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn zero_params_give_half_probability() {
        let cfg = tiny_config();
        let mut params = init(&cfg).unwrap();
        for t in params.tensors.values_mut() {
            for v in t.values_mut() {
                *v = 0.0;
            }
        }
        let stores = tiny_stores(&cfg);
        let out = forward_eval(&params, &tiny_record(), &stores).unwrap();
        assert_eq!(out.logit, 0.0);
        assert_eq!(out.probability, 0.5);
    }

    #[test]
    fn tape_and_value_paths_agree() {
        let cfg = tiny_config();
        let params = init(&cfg).unwrap();
        let stores = tiny_stores(&cfg);
        let record = tiny_record();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params);
        let mut rng = Rng::new(5);
        let nodes = forward_tape(
            &mut tape, &params, &bound, &record, &stores, Mode::Eval, &mut rng,
        )
        .unwrap();
        let out = forward_eval(&params, &record, &stores).unwrap();
        assert!((tape.scalar_value(nodes.logit) - out.logit).abs() < 1e-12);
        for (name, id) in &nodes.reduced {
            let tv = tape.value(*id).values();
            let ev = &out.reduced[name];
            for (a, b) in tv.iter().zip(ev) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_channel_invariance() {
        let mut cfg = tiny_config();
        cfg.active_channels = vec!["user-summary".into()];
        let params = init(&cfg).unwrap();
        let mut stores = tiny_stores(&cfg);
        let record = tiny_record();
        let out1 = forward_eval(&params, &record, &stores).unwrap();
        // rewrite the masked channel's embeddings entirely
        let mut store = ContentEmbeddingStore::new("item-summary", 6);
        for id in ["u1", "u2", "i1", "i2"] {
            store.insert(id, vec![99.0; 6]).unwrap();
        }
        stores.insert("item-summary".into(), store);
        let out2 = forward_eval(&params, &record, &stores).unwrap();
        assert_eq!(out1.logit.to_bits(), out2.logit.to_bits());
        assert!(!out1.reduced.contains_key("item-summary"));
    }

    #[test]
    fn missing_embedding_names_channel_and_id() {
        let cfg = tiny_config();
        let params = init(&cfg).unwrap();
        let stores = tiny_stores(&cfg);
        let mut record = tiny_record();
        record.user_id = "u999".into();
        let err = forward_eval(&params, &record, &stores).unwrap_err();
        match err {
            Error::MissingEmbedding { channel, id } => {
                assert_eq!(channel, "user-summary");
                assert_eq!(id, "u999");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_exact() {
        let cfg = tiny_config();
        let params = init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path, &cfg).unwrap();
        assert!(params.bitwise_eq(&loaded));
        let stores = tiny_stores(&cfg);
        let a = forward_eval(&params, &tiny_record(), &stores).unwrap();
        let b = forward_eval(&loaded, &tiny_record(), &stores).unwrap();
        assert!((a.logit - b.logit).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_config_mismatch_rejected() {
        let cfg = tiny_config();
        let params = init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let mut other = cfg.clone();
        other.d_int = 8;
        let err = load_checkpoint(&path, &other).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn checkpoint_of_zero_params_is_all_zero() {
        let mut cfg = tiny_config();
        cfg.seed = 9;
        let mut params = init(&cfg).unwrap();
        for t in params.tensors.values_mut() {
            for v in t.values_mut() {
                *v = 0.0;
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        for (_, t) in json.as_object().unwrap() {
            for v in t["values"].as_array().unwrap() {
                assert_eq!(v.as_f64().unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn probability_strictly_inside_unit_interval() {
        for logit in [-700.0, -30.0, -1e-9, 0.0, 1e-9, 30.0, 700.0] {
            let p = sigmoid_val(logit);
            assert!(p > 0.0 && p < 1.0, "sigmoid({logit}) = {p}");
        }
    }

    #[test]
    fn project_entity_mean_of_side_channels() {
        let cfg = tiny_config();
        let params = init(&cfg).unwrap();
        let stores = tiny_stores(&cfg);
        // item side has one active channel here: equals its projection
        let v = project_entity_value(&params, Side::Item, "i1", &stores)
            .unwrap()
            .unwrap();
        let direct =
            project_value(&params, "item-summary", stores["item-summary"].get("i1").unwrap())
                .unwrap();
        assert_eq!(v, direct);
        // masking away user channels yields None for the user side
        let mut cfg2 = cfg.clone();
        cfg2.active_channels = vec!["item-summary".into()];
        let params2 = init(&cfg2).unwrap();
        assert!(project_entity_value(&params2, Side::User, "u1", &stores)
            .unwrap()
            .is_none());
    }
}

