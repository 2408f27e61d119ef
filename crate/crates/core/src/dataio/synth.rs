//! Synthetic planted-cluster datasets.
//!
//! Users and items are assigned to latent clusters; cluster-pair affinities
//! decide ratings, and per-channel raw embeddings are cluster centroids
//! (random unit vectors, near-orthogonal in high dimension) plus Gaussian
//! noise. The clusters give the similarity graph a recoverable signal, so
//! contrastive gains are measurable at desk scale.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    embeddings_path, interactions_path, schema_path, write_embeddings, write_interactions,
    ChannelSpec, ContentEmbeddingStore, InteractionRecord, Schema, Side,
};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHANNEL_USER_SUMMARY: &str = "user-summary";
pub const CHANNEL_ITEM_SUMMARY: &str = "item-summary";
pub const CHANNEL_ITEM_IMAGE: &str = "item-image";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthChannel {
    pub name: String,
    pub side: Side,
    /// Multiplier applied to the global noise sigma for this channel;
    /// > 1 makes the channel a weaker cluster signal.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn one() -> f64 {
    1.0
}

fn default_channels() -> Vec<SynthChannel> {
    vec![
        SynthChannel {
            name: CHANNEL_USER_SUMMARY.into(),
            side: Side::User,
            noise_scale: 1.0,
        },
        SynthChannel {
            name: CHANNEL_ITEM_SUMMARY.into(),
            side: Side::Item,
            noise_scale: 1.0,
        },
        SynthChannel {
            name: CHANNEL_ITEM_IMAGE.into(),
            side: Side::Item,
            noise_scale: 3.0,
        },
    ]
}

fn default_dense_dim() -> usize {
    4
}

fn default_sparse_vocab() -> usize {
    180
}

fn default_sparse_len() -> usize {
    11
}

fn default_sparse_ids_per_item() -> usize {
    3
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub user_clusters: usize,
    pub item_clusters: usize,
    pub users: usize,
    pub items: usize,
    /// affinity[user_cluster][item_cluster] = probability of a positive rating
    pub affinity: Vec<Vec<f64>>,
    /// per-coordinate Gaussian noise sigma added to cluster centroids
    pub noise: f64,
    pub d_raw: usize,
    pub interactions_per_user: usize,
    pub seed: u64,
    #[serde(default = "default_channels")]
    pub channels: Vec<SynthChannel>,
    #[serde(default = "default_dense_dim")]
    pub dense_dim: usize,
    #[serde(default = "default_sparse_vocab")]
    pub sparse_vocab: usize,
    #[serde(default = "default_sparse_len")]
    pub sparse_len: usize,
    #[serde(default = "default_sparse_ids_per_item")]
    pub sparse_ids_per_item: usize,
    /// draw item category ids from a per-cluster pool instead of uniformly
    #[serde(default = "default_true")]
    pub cluster_correlated_sparse: bool,
    /// Optional [user_cluster][item_cluster] sampling weights for which
    /// items a user interacts with at all (uniform when absent). Biasing
    /// exposure toward compatible clusters concentrates positive sets and
    /// gives the similarity graph a presence-based signal.
    #[serde(default)]
    pub exposure_bias: Option<Vec<Vec<f64>>>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.user_clusters == 0
            || self.item_clusters == 0
            || self.users == 0
            || self.items == 0
            || self.d_raw == 0
            || self.interactions_per_user == 0
        {
            return Err(Error::Config("synth counts must be positive".into()));
        }
        if self.affinity.len() != self.user_clusters
            || self.affinity.iter().any(|row| row.len() != self.item_clusters)
        {
            return Err(Error::Config(format!(
                "affinity must be {}x{}",
                self.user_clusters, self.item_clusters
            )));
        }
        for row in &self.affinity {
            for &p in row {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("affinity {p} outside [0, 1]")));
                }
            }
        }
        if self.noise < 0.0 {
            return Err(Error::Config(format!("noise {} must be >= 0", self.noise)));
        }
        if self.interactions_per_user > self.items {
            return Err(Error::Config(format!(
                "interactions_per_user {} exceeds item count {}",
                self.interactions_per_user, self.items
            )));
        }
        if self.sparse_ids_per_item + 1 > self.sparse_len {
            return Err(Error::Config(
                "sparse_ids_per_item must leave room for padding".into(),
            ));
        }
        if self.sparse_vocab < 2 {
            return Err(Error::Config("sparse vocab must be >= 2".into()));
        }
        if let Some(bias) = &self.exposure_bias {
            if bias.len() != self.user_clusters
                || bias.iter().any(|row| row.len() != self.item_clusters)
            {
                return Err(Error::Config(format!(
                    "exposure_bias must be {}x{}",
                    self.user_clusters, self.item_clusters
                )));
            }
            if bias.iter().flatten().any(|&w| w <= 0.0 || !w.is_finite()) {
                return Err(Error::Config("exposure weights must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        Schema {
            dense_dim: self.dense_dim,
            sparse_vocab: self.sparse_vocab,
            pad_id: self.sparse_vocab - 1,
            sparse_len: self.sparse_len,
            channels: self
                .channels
                .iter()
                .map(|c| ChannelSpec {
                    name: c.name.clone(),
                    side: c.side,
                    d_raw: self.d_raw,
                })
                .collect(),
        }
    }

    /// Closed-form expected positive rate under uniform cluster assignment
    /// (item-cluster sizes approximated as equal when exposure is biased).
    pub fn expected_positive_rate(&self) -> f64 {
        match &self.exposure_bias {
            None => {
                let total: f64 = self.affinity.iter().flatten().sum();
                total / (self.user_clusters * self.item_clusters) as f64
            }
            Some(bias) => {
                let per_user_cluster: f64 = bias
                    .iter()
                    .zip(&self.affinity)
                    .map(|(w_row, a_row)| {
                        let z: f64 = w_row.iter().sum();
                        w_row
                            .iter()
                            .zip(a_row)
                            .map(|(w, a)| w / z * a)
                            .sum::<f64>()
                    })
                    .sum();
                per_user_cluster / self.user_clusters as f64
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterAssignment {
    pub users: BTreeMap<String, usize>,
    pub items: BTreeMap<String, usize>,
}

#[derive(Debug)]
pub struct SynthOutput {
    pub records: Vec<InteractionRecord>,
    pub stores: Vec<ContentEmbeddingStore>,
    pub clusters: ClusterAssignment,
    pub schema: Schema,
}

fn unit_vector(rng: &mut Rng, d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Draws `k` distinct indices with probability proportional to `weights`,
/// by rejection against the maximum weight.
fn weighted_distinct(rng: &mut Rng, weights: &[f64], k: usize) -> Vec<usize> {
    let max_w = weights.iter().cloned().fold(0.0, f64::max);
    let mut taken = vec![false; weights.len()];
    let mut picks = Vec::with_capacity(k);
    while picks.len() < k {
        let cand = rng.below(weights.len());
        if taken[cand] {
            continue;
        }
        if rng.next_f64() * max_w < weights[cand] {
            taken[cand] = true;
            picks.push(cand);
        }
    }
    picks
}

pub fn synthesize(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let schema = cfg.schema();
    let pad = schema.pad_id;

    let mut assign_rng = Rng::derive(cfg.seed, &[1]);
    let user_cluster: Vec<usize> = (0..cfg.users)
        .map(|_| assign_rng.below(cfg.user_clusters))
        .collect();
    let item_cluster: Vec<usize> = (0..cfg.items)
        .map(|_| assign_rng.below(cfg.item_clusters))
        .collect();

    let user_ids: Vec<String> = (0..cfg.users).map(|i| format!("u{i}")).collect();
    let item_ids: Vec<String> = (0..cfg.items).map(|i| format!("i{i}")).collect();

    // per-channel centroids and entity embeddings
    let mut stores = Vec::new();
    for (ci, ch) in cfg.channels.iter().enumerate() {
        let mut rng = Rng::derive(cfg.seed, &[2, ci as u64]);
        let n_clusters = match ch.side {
            Side::User => cfg.user_clusters,
            Side::Item => cfg.item_clusters,
        };
        let centroids: Vec<Vec<f64>> =
            (0..n_clusters).map(|_| unit_vector(&mut rng, cfg.d_raw)).collect();
        let sigma = cfg.noise * ch.noise_scale;
        let (ids, clusters): (&[String], &[usize]) = match ch.side {
            Side::User => (&user_ids, &user_cluster),
            Side::Item => (&item_ids, &item_cluster),
        };
        let mut store = ContentEmbeddingStore::new(ch.name.clone(), cfg.d_raw);
        for (id, &cl) in ids.iter().zip(clusters) {
            let vec: Vec<f32> = centroids[cl]
                .iter()
                .map(|&c| (c + sigma * rng.normal()) as f32)
                .collect();
            store.insert(id.clone(), vec)?;
        }
        stores.push(store);
    }

    // per-item static features: price one-hot and category ids
    let mut feat_rng = Rng::derive(cfg.seed, &[3]);
    let item_dense: Vec<Vec<f64>> = (0..cfg.items)
        .map(|_| {
            let mut v = vec![0.0; cfg.dense_dim];
            if cfg.dense_dim > 0 {
                v[feat_rng.below(cfg.dense_dim)] = 1.0;
            }
            v
        })
        .collect();
    let usable_vocab = cfg.sparse_vocab - 1; // last id is the pad
    let item_sparse: Vec<Vec<usize>> = (0..cfg.items)
        .map(|ix| {
            let mut ids: Vec<usize> = if cfg.cluster_correlated_sparse {
                let pool = usable_vocab / cfg.item_clusters.max(1);
                let base = item_cluster[ix] * pool;
                feat_rng
                    .sample_distinct(pool.max(cfg.sparse_ids_per_item), cfg.sparse_ids_per_item)
                    .into_iter()
                    .map(|k| (base + k).min(usable_vocab - 1))
                    .collect()
            } else {
                feat_rng
                    .sample_distinct(usable_vocab, cfg.sparse_ids_per_item)
                    .into_iter()
                    .collect()
            };
            ids.resize(cfg.sparse_len, pad);
            ids
        })
        .collect();

    // interactions: each user draws distinct items, rating 5 with the
    // affinity probability, else 2
    let mut inter_rng = Rng::derive(cfg.seed, &[4]);
    let mut records = Vec::with_capacity(cfg.users * cfg.interactions_per_user);
    for u in 0..cfg.users {
        let picks = match &cfg.exposure_bias {
            None => inter_rng.sample_distinct(cfg.items, cfg.interactions_per_user),
            Some(bias) => {
                let weights: Vec<f64> = item_cluster
                    .iter()
                    .map(|&ci| bias[user_cluster[u]][ci])
                    .collect();
                weighted_distinct(&mut inter_rng, &weights, cfg.interactions_per_user)
            }
        };
        for i in picks {
            let p = cfg.affinity[user_cluster[u]][item_cluster[i]];
            let positive = inter_rng.bernoulli(p);
            let rating = if positive { 5 } else { 2 };
            records.push(InteractionRecord {
                user_id: user_ids[u].clone(),
                item_id: item_ids[i].clone(),
                rating,
                label: u8::from(positive),
                dense: item_dense[i].clone(),
                sparse: item_sparse[i].clone(),
            });
        }
    }

    let clusters = ClusterAssignment {
        users: user_ids
            .iter()
            .cloned()
            .zip(user_cluster.iter().copied())
            .collect(),
        items: item_ids
            .iter()
            .cloned()
            .zip(item_cluster.iter().copied())
            .collect(),
    };

    Ok(SynthOutput {
        records,
        stores,
        clusters,
        schema,
    })
}

/// Writes interactions.jsonl, one embedding file per channel, clusters.json
/// and schema.json into `dir`.
pub fn write_dataset(dir: &Path, out: &SynthOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_interactions(&interactions_path(dir), &out.records)?;
    for store in &out.stores {
        write_embeddings(&embeddings_path(dir, store.channel()), store)?;
    }
    fs::write(
        dir.join("clusters.json"),
        serde_json::to_string_pretty(&out.clusters)?,
    )?;
    fs::write(
        schema_path(dir),
        serde_json::to_string_pretty(&out.schema)?,
    )?;
    Ok(())
}
