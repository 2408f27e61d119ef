//! Training objectives: class-weighted recommendation BCE, user-user and
//! item-item InfoNCE with SWING-guided positives, and the composite loss
//! L = L_rec + w1 * L_ii + w2 * L_uu.
//!
//! Contrastive similarities are raw dot products by default; an optional
//! normalize flag applies L2 normalization first. Anchors without SWING
//! neighbors are skipped, and the per-side mean divides by usable anchors
//! only.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::dataio::{InteractionRecord, Side};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::swing::SimilarityGraph;

fn default_tau() -> f64 {
    0.2
}

fn default_weight() -> f64 {
    0.1
}

fn default_pos_weight() -> f64 {
    1.0
}

fn default_k() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    /// InfoNCE temperature.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Weight of the item-item contrastive term.
    #[serde(default = "default_weight")]
    pub w1: f64,
    /// Weight of the user-user contrastive term.
    #[serde(default = "default_weight")]
    pub w2: f64,
    #[serde(default = "default_pos_weight")]
    pub pos_class_weight: f64,
    /// `None` means derive #pos/#neg from the training split.
    #[serde(default)]
    pub neg_class_weight: Option<f64>,
    /// Negatives per anchor.
    #[serde(default = "default_k")]
    pub k_negatives: usize,
    #[serde(default)]
    pub normalize_embeddings: bool,
    /// Sample positives proportionally to SWING score instead of uniformly.
    #[serde(default)]
    pub score_proportional_positives: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: default_tau(),
            w1: default_weight(),
            w2: default_weight(),
            pos_class_weight: default_pos_weight(),
            neg_class_weight: None,
            k_negatives: default_k(),
            normalize_embeddings: false,
            score_proportional_positives: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau {} must be > 0", self.tau)));
        }
        if self.k_negatives == 0 {
            return Err(Error::Config("k_negatives must be >= 1".into()));
        }
        if self.w1 < 0.0 || self.w2 < 0.0 {
            return Err(Error::Config("contrastive weights must be >= 0".into()));
        }
        if self.pos_class_weight <= 0.0 {
            return Err(Error::Config("pos_class_weight must be > 0".into()));
        }
        if let Some(w) = self.neg_class_weight {
            if w <= 0.0 {
                return Err(Error::Config("neg_class_weight must be > 0".into()));
            }
        }
        Ok(())
    }

    /// (pos, neg) class weights; the negative default is the train-split
    /// imbalance ratio #pos/#neg.
    pub fn resolve_class_weights(&self, train: &[InteractionRecord]) -> (f64, f64) {
        let neg = match self.neg_class_weight {
            Some(w) => w,
            None => {
                let pos = train.iter().filter(|r| r.label == 1).count();
                let negs = train.len() - pos;
                if negs == 0 || pos == 0 {
                    1.0
                } else {
                    pos as f64 / negs as f64
                }
            }
        };
        (self.pos_class_weight, neg)
    }
}

// ── weighted BCE ─────────────────────────────────────────────────────

/// Mean over the batch of -w(y) * [y ln p + (1-y) ln(1-p)], computed from
/// logits through softplus so confident predictions stay finite:
/// y=1 contributes w_pos * softplus(-z), y=0 contributes w_neg * softplus(z).
pub fn weighted_bce_from_logits(
    tape: &mut Tape,
    logits: &[NodeId],
    labels: &[u8],
    pos_weight: f64,
    neg_weight: f64,
) -> Result<NodeId> {
    if logits.is_empty() {
        return Err(Error::Contract("weighted_bce over an empty batch".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::Contract(format!(
            "weighted_bce: {} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let term = if y == 1 {
            let nz = tape.neg(z);
            let sp = tape.softplus(nz);
            tape.scale(sp, pos_weight)
        } else {
            let sp = tape.softplus(z);
            tape.scale(sp, neg_weight)
        };
        terms.push(term);
    }
    let all = tape.concat(&terms)?;
    tape.mean(all, None)
}

// ── contrastive sampling ─────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveAnchor {
    pub anchor: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

/// Sampled ids for one side of the contrastive objective. Vectors are
/// resolved later against the current projection outputs.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub side: Side,
    pub anchors: Vec<ContrastiveAnchor>,
    /// Entities without SWING neighbors, excluded from the loss mean.
    pub skipped: usize,
}

/// For each batch entity with a nonempty neighbor list: one positive drawn
/// from its top-k list and `k_negatives` distinct negatives drawn uniformly
/// from the corpus excluding the anchor and its whole neighbor list.
/// Deterministic given the rng state.
pub fn sample_contrastive(
    side: Side,
    entity_ids: &[String],
    sims: &SimilarityGraph,
    corpus: &[String],
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<ContrastiveBatch> {
    if sims.side != side {
        return Err(Error::Contract(format!(
            "similarity graph side {} does not match requested {side}",
            sims.side
        )));
    }
    let mut anchors = Vec::new();
    let mut skipped = 0usize;
    for entity in entity_ids {
        let neighbors = sims.neighbors_of(entity);
        if neighbors.is_empty() {
            skipped += 1;
            continue;
        }
        let positive = if cfg.score_proportional_positives {
            let total: f64 = neighbors.iter().map(|(_, s)| s).sum();
            let mut target = rng.next_f64() * total;
            let mut chosen = neighbors.len() - 1;
            for (ix, (_, s)) in neighbors.iter().enumerate() {
                target -= s;
                if target <= 0.0 {
                    chosen = ix;
                    break;
                }
            }
            neighbors[chosen].0.clone()
        } else {
            neighbors[rng.below(neighbors.len())].0.clone()
        };

        let mut excluded: HashSet<&str> = HashSet::with_capacity(neighbors.len() + 1);
        excluded.insert(entity.as_str());
        for (n, _) in neighbors {
            excluded.insert(n.as_str());
        }
        let eligible = corpus.iter().filter(|c| !excluded.contains(c.as_str())).count();
        if eligible < cfg.k_negatives {
            return Err(Error::Config(format!(
                "corpus of {} leaves {} eligible negatives for {entity:?}, need {}",
                corpus.len(),
                eligible,
                cfg.k_negatives
            )));
        }
        let mut negatives = Vec::with_capacity(cfg.k_negatives);
        let mut taken: HashSet<&str> = HashSet::with_capacity(cfg.k_negatives);
        while negatives.len() < cfg.k_negatives {
            let cand = &corpus[rng.below(corpus.len())];
            if excluded.contains(cand.as_str()) || taken.contains(cand.as_str()) {
                continue;
            }
            taken.insert(cand.as_str());
            negatives.push(cand.clone());
        }
        anchors.push(ContrastiveAnchor {
            anchor: entity.clone(),
            positive,
            negatives,
        });
    }
    Ok(ContrastiveBatch {
        side,
        anchors,
        skipped,
    })
}

// ── InfoNCE ──────────────────────────────────────────────────────────

/// One anchor's vectors, already resolved to tape nodes.
pub struct AnchorVectors {
    pub anchor: NodeId,
    pub positive: NodeId,
    pub negatives: Vec<NodeId>,
}

/// Mean over anchors of
/// -ln( exp(u·u_p/tau) / (exp(u·u_p/tau) + sum_k exp(u·u_k/tau)) ),
/// evaluated through logsumexp. Returns `None` (an absent term) when no
/// anchor is usable.
pub fn infonce(
    tape: &mut Tape,
    anchors: &[AnchorVectors],
    tau: f64,
    normalize: bool,
) -> Result<Option<NodeId>> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("tau {tau} must be > 0")));
    }
    if anchors.is_empty() {
        return Ok(None);
    }
    let mut losses = Vec::with_capacity(anchors.len());
    for a in anchors {
        let (u, p) = if normalize {
            (tape.l2_normalize(a.anchor)?, tape.l2_normalize(a.positive)?)
        } else {
            (a.anchor, a.positive)
        };
        let s_pos = tape.dot(u, p)?;
        let mut logits = Vec::with_capacity(1 + a.negatives.len());
        logits.push(s_pos);
        for &n in &a.negatives {
            let n = if normalize { tape.l2_normalize(n)? } else { n };
            logits.push(tape.dot(u, n)?);
        }
        let stacked = tape.concat(&logits)?;
        let scaled = tape.scale(stacked, 1.0 / tau);
        let lse = tape.logsumexp(scaled, None)?;
        let pos_scaled = tape.scale(s_pos, 1.0 / tau);
        let neg_pos = tape.neg(pos_scaled);
        losses.push(tape.add(lse, neg_pos)?);
    }
    let all = tape.concat(&losses)?;
    Ok(Some(tape.mean(all, None)?))
}

// ── composite loss ───────────────────────────────────────────────────

/// Scalar values of each loss term for reporting.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct LossBreakdown {
    pub l_rec: f64,
    pub l_ii: f64,
    pub l_uu: f64,
    pub l_total: f64,
    pub items_used: usize,
    pub users_used: usize,
}

/// L = L_rec + w1 * L_ii + w2 * L_uu as a tape node; absent contrastive
/// terms contribute nothing. Gradients flow through all present terms.
pub fn composite_loss(
    tape: &mut Tape,
    l_rec: NodeId,
    l_ii: Option<(NodeId, usize)>,
    l_uu: Option<(NodeId, usize)>,
    cfg: &LossConfig,
) -> Result<(NodeId, LossBreakdown)> {
    let mut breakdown = LossBreakdown {
        l_rec: tape.scalar_value(l_rec),
        ..Default::default()
    };
    let mut total = l_rec;
    if let Some((ii, used)) = l_ii {
        breakdown.l_ii = tape.scalar_value(ii);
        breakdown.items_used = used;
        let weighted = tape.scale(ii, cfg.w1);
        total = tape.add(total, weighted)?;
    }
    if let Some((uu, used)) = l_uu {
        breakdown.l_uu = tape.scalar_value(uu);
        breakdown.users_used = used;
        let weighted = tape.scale(uu, cfg.w2);
        total = tape.add(total, weighted)?;
    }
    breakdown.l_total = tape.scalar_value(total);
    Ok((total, breakdown))
}
