//! Record schemas, file formats, splits, and batching.
//!
//! Interactions live in JSONL (one record per line, unknown keys ignored).
//! Bulk content embeddings use a little-endian binary format:
//!
//! ```text
//! "DLRE" (4 bytes) | version u32 = 1 | count u64 | dim u32
//! | id table: count x (len u16, utf-8 bytes)
//! | payload: count x dim x f32, row order matching the id table
//! ```
//!
//! A JSONL fallback (`{"id": ..., "vector": [...]}` per line) is accepted
//! for embeddings when the magic bytes are absent.

pub mod synth;

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"DLRE";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::User => write!(f, "user"),
            Side::Item => write!(f, "item"),
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(Side::User),
            "item" => Ok(Side::Item),
            other => Err(Error::Config(format!("unknown side {other:?}"))),
        }
    }
}

/// One labeled user-item event. `label` is the indicator `rating >= 4`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    pub label: u8,
    pub dense: Vec<f64>,
    pub sparse: Vec<usize>,
}

#[derive(Deserialize)]
struct RawRecord {
    user_id: String,
    item_id: String,
    rating: i64,
    #[serde(default)]
    label: Option<i64>,
    #[serde(default)]
    dense: Vec<f64>,
    #[serde(default)]
    sparse: Vec<usize>,
}

impl InteractionRecord {
    fn from_raw(raw: RawRecord) -> std::result::Result<Self, String> {
        if !(1..=5).contains(&raw.rating) {
            return Err(format!("rating {} outside 1-5", raw.rating));
        }
        let derived = u8::from(raw.rating >= 4);
        if let Some(given) = raw.label {
            if given != i64::from(derived) {
                return Err(format!(
                    "label {} inconsistent with rating {} (expected {})",
                    given, raw.rating, derived
                ));
            }
        }
        Ok(InteractionRecord {
            user_id: raw.user_id,
            item_id: raw.item_id,
            rating: raw.rating as u8,
            label: derived,
            dense: raw.dense,
            sparse: raw.sparse,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub side: Side,
    pub d_raw: usize,
}

/// Dataset-level shape information shared by the loader and the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub dense_dim: usize,
    pub sparse_vocab: usize,
    pub pad_id: usize,
    pub sparse_len: usize,
    pub channels: Vec<ChannelSpec>,
}

impl Schema {
    pub fn channel(&self, name: &str) -> Option<&ChannelSpec> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn validate_record(&self, rec: &InteractionRecord) -> Result<()> {
        if rec.dense.len() != self.dense_dim {
            return Err(Error::Validation(format!(
                "record ({}, {}): dense length {} does not match schema {}",
                rec.user_id,
                rec.item_id,
                rec.dense.len(),
                self.dense_dim
            )));
        }
        if rec.sparse.len() != self.sparse_len {
            return Err(Error::Validation(format!(
                "record ({}, {}): sparse length {} does not match schema {}",
                rec.user_id,
                rec.item_id,
                rec.sparse.len(),
                self.sparse_len
            )));
        }
        for &id in &rec.sparse {
            if id >= self.sparse_vocab {
                return Err(Error::Validation(format!(
                    "record ({}, {}): sparse id {} >= vocab {}",
                    rec.user_id, rec.item_id, id, self.sparse_vocab
                )));
            }
        }
        Ok(())
    }
}

/// Per-channel map from entity id to a raw f32 vector. Insertion order is
/// preserved so write -> read -> write round-trips bitwise.
#[derive(Debug, Clone)]
pub struct ContentEmbeddingStore {
    channel: String,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f32>>,
}

impl ContentEmbeddingStore {
    pub fn new(channel: impl Into<String>, dim: usize) -> Self {
        ContentEmbeddingStore {
            channel: channel.into(),
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        }
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Validation(format!(
                "channel {:?}: vector for {:?} has dim {}, expected {}",
                self.channel,
                id,
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId {
                channel: self.channel.clone(),
                id,
            });
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }
}

/// Train/test partition plus the schema both halves obey.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub schema: Schema,
}

// ── interactions jsonl ───────────────────────────────────────────────

pub fn load_interactions(path: &Path) -> Result<Vec<InteractionRecord>> {
    let text = fs::read_to_string(path)?;
    parse_interactions(&text)
}

pub fn parse_interactions(text: &str) -> Result<Vec<InteractionRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let rec = InteractionRecord::from_raw(raw)
            .map_err(|msg| Error::Validation(format!("line {lineno}: {msg}")))?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_interactions(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ── embedding files ──────────────────────────────────────────────────

pub fn write_embeddings(path: &Path, store: &ContentEmbeddingStore) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    for id in store.ids() {
        let bytes = id.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Validation(format!("id too long: {id:?}")));
        }
        buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    for id in store.ids() {
        for &v in store.get(id).expect("id listed in store") {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.offset as u64,
                msg: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_embeddings(path: &Path, channel: &str) -> Result<ContentEmbeddingStore> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() >= 4 && &bytes[..4] == EMBEDDING_MAGIC {
        parse_embeddings_binary(&bytes, channel)
    } else {
        parse_embeddings_jsonl(&bytes, channel)
    }
}

fn parse_embeddings_binary(bytes: &[u8], channel: &str) -> Result<ContentEmbeddingStore> {
    let mut cur = Cursor { bytes, offset: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != EMBEDDING_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected {EMBEDDING_MAGIC:?}"),
        });
    }
    let version = cur.u32_le("version")?;
    if version != EMBEDDING_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = cur.u64_le("count")? as usize;
    let dim = cur.u32_le("dim")? as usize;
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u16_le("id length")? as usize;
        let at = cur.offset;
        let raw = cur.take(len, "id bytes")?;
        let id = std::str::from_utf8(raw).map_err(|e| Error::Format {
            offset: at as u64,
            msg: format!("invalid utf-8 id: {e}"),
        })?;
        ids.push(id.to_string());
    }
    let mut store = ContentEmbeddingStore::new(channel, dim);
    for id in ids {
        let at = cur.offset;
        let raw = cur.take(dim * 4, "embedding row")?;
        let mut vec = Vec::with_capacity(dim);
        for c in raw.chunks_exact(4) {
            vec.push(f32::from_le_bytes(c.try_into().unwrap()));
        }
        store.insert(id, vec).map_err(|e| match e {
            dup @ Error::DuplicateId { .. } => dup,
            other => Error::Format {
                offset: at as u64,
                msg: other.to_string(),
            },
        })?;
    }
    if cur.offset != bytes.len() {
        return Err(Error::Format {
            offset: cur.offset as u64,
            msg: format!("{} trailing bytes", bytes.len() - cur.offset),
        });
    }
    Ok(store)
}

#[derive(Deserialize)]
struct JsonEmbeddingRow {
    id: String,
    vector: Vec<f32>,
}

fn parse_embeddings_jsonl(bytes: &[u8], channel: &str) -> Result<ContentEmbeddingStore> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format {
        offset: e.valid_up_to() as u64,
        msg: "embedding file is neither DLRE binary nor utf-8 jsonl".to_string(),
    })?;
    let mut store: Option<ContentEmbeddingStore> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonEmbeddingRow = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let store =
            store.get_or_insert_with(|| ContentEmbeddingStore::new(channel, row.vector.len()));
        store.insert(row.id, row.vector)?;
    }
    store.ok_or_else(|| Error::Validation(format!("channel {channel:?}: empty embedding file")))
}

// ── splits and batches ───────────────────────────────────────────────

pub fn split(
    records: &[InteractionRecord],
    schema: &Schema,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    let n = records.len();
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} records")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut indices);
    let test_count = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut test_idx: Vec<usize> = indices[..test_count].to_vec();
    let mut train_idx: Vec<usize> = indices[test_count..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok(DatasetSplit {
        train: train_idx.iter().map(|&i| records[i].clone()).collect(),
        test: test_idx.iter().map(|&i| records[i].clone()).collect(),
        schema: schema.clone(),
    })
}

/// Index batches for one epoch, reshuffled per (seed, epoch). The final
/// partial batch is kept.
pub fn make_batches(
    n_records: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n_records).collect();
    Rng::derive(seed, &[0x0062_6174_6368, epoch as u64]).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

// ── dataset directory layout ─────────────────────────────────────────

pub fn schema_path(dir: &Path) -> std::path::PathBuf {
    dir.join("schema.json")
}

pub fn interactions_path(dir: &Path) -> std::path::PathBuf {
    dir.join("interactions.jsonl")
}

pub fn embeddings_path(dir: &Path, channel: &str) -> std::path::PathBuf {
    dir.join(format!("{channel}.emb"))
}

pub fn load_schema(dir: &Path) -> Result<Schema> {
    let text = fs::read_to_string(schema_path(dir))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a dataset directory: schema.json, interactions.jsonl, and one
/// embedding file per channel named in the schema.
pub fn load_dataset(
    dir: &Path,
) -> Result<(
    Vec<InteractionRecord>,
    Schema,
    HashMap<String, ContentEmbeddingStore>,
)> {
    let schema = load_schema(dir)?;
    let records = load_interactions(&interactions_path(dir))?;
    for rec in &records {
        schema.validate_record(rec)?;
    }
    let mut stores = HashMap::new();
    for ch in &schema.channels {
        let store = load_embeddings(&embeddings_path(dir, &ch.name), &ch.name)?;
        if store.dim() != ch.d_raw {
            return Err(Error::Validation(format!(
                "channel {:?}: file dim {} does not match schema d_raw {}",
                ch.name,
                store.dim(),
                ch.d_raw
            )));
        }
        stores.insert(ch.name.clone(), store);
    }
    Ok((records, schema, stores))
}
