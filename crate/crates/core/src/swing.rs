//! SWING similarity over the user-item interaction bipartite graph.
//!
//! Two items are similar when many user *pairs* co-interacted with both,
//! each pair weighted by the inverse of how much those two users overlap
//! overall: s(i,j) = sum over unordered {u,v} in U_i ∩ U_j of
//! 1 / (alpha + |I_u ∩ I_v|). The user-user score is the role-swapped
//! analogue. Top-k neighbor lists drive contrastive positive sampling.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataio::{InteractionRecord, Side};
use crate::error::{Error, Result};

/// Mirrored adjacency built from (by default) positive interactions only.
/// Ids are interned; adjacency lists are sorted and deduplicated.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
    user_items: Vec<Vec<u32>>,
    item_users: Vec<Vec<u32>>,
}

impl BipartiteGraph {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn items_of(&self, user: &str) -> Option<&[u32]> {
        self.user_index
            .get(user)
            .map(|&u| self.user_items[u as usize].as_slice())
    }

    pub fn users_of(&self, item: &str) -> Option<&[u32]> {
        self.item_index
            .get(item)
            .map(|&i| self.item_users[i as usize].as_slice())
    }

    fn adjacency(&self, side: Side) -> (&[String], &Vec<Vec<u32>>, &Vec<Vec<u32>>) {
        match side {
            Side::Item => (&self.item_ids, &self.item_users, &self.user_items),
            Side::User => (&self.user_ids, &self.user_items, &self.item_users),
        }
    }
}

/// Builds the mirrored adjacency. Entities are indexed in sorted-id order
/// and edges are deduplicated. With `positive_only`, label-0 records
/// contribute no edge (entities seen only in negatives are absent).
pub fn build_graph(records: &[InteractionRecord], positive_only: bool) -> BipartiteGraph {
    let mut edges: BTreeMap<&str, std::collections::BTreeSet<&str>> = BTreeMap::new();
    let mut items: std::collections::BTreeSet<&str> = Default::default();
    for rec in records {
        if positive_only && rec.label == 0 {
            continue;
        }
        edges
            .entry(rec.user_id.as_str())
            .or_default()
            .insert(rec.item_id.as_str());
        items.insert(rec.item_id.as_str());
    }
    let user_ids: Vec<String> = edges.keys().map(|s| s.to_string()).collect();
    let item_ids: Vec<String> = items.iter().map(|s| s.to_string()).collect();
    let user_index: HashMap<String, u32> = user_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    let item_index: HashMap<String, u32> = item_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    let mut user_items = vec![Vec::new(); user_ids.len()];
    let mut item_users = vec![Vec::new(); item_ids.len()];
    for (user, its) in &edges {
        let u = user_index[*user];
        for item in its {
            let i = item_index[*item];
            user_items[u as usize].push(i);
            item_users[i as usize].push(u);
        }
    }
    for l in user_items.iter_mut().chain(item_users.iter_mut()) {
        l.sort_unstable();
        l.dedup();
    }
    BipartiteGraph {
        user_ids,
        item_ids,
        user_index,
        item_index,
        user_items,
        item_users,
    }
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn intersection(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha <= 0.0 {
        return Err(Error::Config(format!("alpha {alpha} must be > 0")));
    }
    Ok(())
}

/// Memoizes counterpart-pair overlap sizes; the same user pair recurs
/// across many item pairs (and vice versa).
struct PairOverlapCache<'a> {
    lists: &'a [Vec<u32>],
    cache: HashMap<(u32, u32), usize>,
}

impl<'a> PairOverlapCache<'a> {
    fn new(lists: &'a [Vec<u32>]) -> Self {
        PairOverlapCache {
            lists,
            cache: HashMap::new(),
        }
    }

    fn overlap(&mut self, a: u32, b: u32) -> usize {
        let key = if a < b { (a, b) } else { (b, a) };
        if let Some(&n) = self.cache.get(&key) {
            return n;
        }
        let n = intersection_size(
            &self.lists[key.0 as usize],
            &self.lists[key.1 as usize],
        );
        self.cache.insert(key, n);
        n
    }
}

fn pair_score(common: &[u32], alpha: f64, cache: &mut PairOverlapCache<'_>) -> f64 {
    let mut s = 0.0;
    for a in 0..common.len() {
        for b in a + 1..common.len() {
            s += 1.0 / (alpha + cache.overlap(common[a], common[b]) as f64);
        }
    }
    s
}

/// SWING score between two items.
pub fn swing_item_similarity(
    g: &BipartiteGraph,
    i: &str,
    j: &str,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    if i == j {
        return Err(Error::Contract("swing similarity of an item with itself".into()));
    }
    let (ua, ub) = match (g.users_of(i), g.users_of(j)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Ok(0.0),
    };
    let common = intersection(ua, ub);
    let mut cache = PairOverlapCache::new(&g.user_items);
    Ok(pair_score(&common, alpha, &mut cache))
}

/// SWING score between two users (role-swapped analogue).
pub fn swing_user_similarity(
    g: &BipartiteGraph,
    u: &str,
    v: &str,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    if u == v {
        return Err(Error::Contract("swing similarity of a user with itself".into()));
    }
    let (ia, ib) = match (g.items_of(u), g.items_of(v)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Ok(0.0),
    };
    let common = intersection(ia, ib);
    let mut cache = PairOverlapCache::new(&g.item_users);
    Ok(pair_score(&common, alpha, &mut cache))
}

/// Per-entity top-k neighbor lists with scores, descending, ties broken by
/// ascending neighbor id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub side: Side,
    pub alpha: f64,
    pub k: usize,
    pub neighbors: BTreeMap<String, Vec<(String, f64)>>,
}

impl SimilarityGraph {
    pub fn neighbors_of(&self, id: &str) -> &[(String, f64)] {
        self.neighbors.get(id).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Scores each entity against candidates sharing at least two common
/// counterparts (fewer yield score zero: no unordered pair exists), sorts
/// and truncates to k. Anchors are processed in sorted-id order.
pub fn top_k_neighbors(
    g: &BipartiteGraph,
    side: Side,
    k: usize,
    alpha: f64,
) -> Result<SimilarityGraph> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::Config("top-k requires k >= 1".into()));
    }
    let (ids, adj, counterpart_adj) = g.adjacency(side);
    let mut cache = PairOverlapCache::new(counterpart_adj);
    let mut neighbors = BTreeMap::new();
    for (ei, id) in ids.iter().enumerate() {
        let mine = &adj[ei];
        // co-occurrence counting through the inverted index
        let mut co_counts: HashMap<u32, u32> = HashMap::new();
        for &c in mine {
            for &other in &counterpart_adj[c as usize] {
                if other as usize != ei {
                    *co_counts.entry(other).or_insert(0) += 1;
                }
            }
        }
        let mut candidates: Vec<u32> = co_counts
            .iter()
            .filter(|(_, &n)| n >= 2)
            .map(|(&e, _)| e)
            .collect();
        candidates.sort_unstable();
        let mut scored: Vec<(String, f64)> = Vec::with_capacity(candidates.len());
        for cand in candidates {
            let common = intersection(mine, &adj[cand as usize]);
            let s = pair_score(&common, alpha, &mut cache);
            if s > 0.0 {
                scored.push((ids[cand as usize].clone(), s));
            }
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        neighbors.insert(id.clone(), scored);
    }
    Ok(SimilarityGraph {
        side,
        alpha,
        k,
        neighbors,
    })
}
