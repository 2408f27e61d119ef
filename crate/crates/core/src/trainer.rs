//! End-to-end co-training loop.
//!
//! Per batch: forward every record, weighted BCE on the logits, user and
//! item contrastive batches sampled from the entities present in the batch
//! (same entities, shared parameters: that is the co-training), backward on
//! the composite loss, one Adam step. Per epoch: evaluate train and test,
//! track the best checkpoint by test false-positive rate, apply early
//! stopping.
//!
//! Random streams (batch shuffle, dropout, contrastive sampling) are forked
//! independently from the run seed, so disabling one consumer never
//! perturbs the others and identical configs reproduce bitwise-identical
//! reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, NodeId, Tape};
use crate::dataio::{DatasetSplit, InteractionRecord, Side};
use crate::error::{Error, Result};
use crate::model::{
    bind, forward_eval, init, project_entity, save_checkpoint, BoundParams, ChannelStores,
    ModelConfig, ModelParams,
};
use crate::objectives::{
    composite_loss, infonce, sample_contrastive, weighted_bce_from_logits, AnchorVectors,
    ContrastiveBatch, LossBreakdown, LossConfig,
};
use crate::rng::Rng;
use crate::swing::SimilarityGraph;
use crate::tensor::Tensor;

const TAG_DROPOUT: u64 = 0x64726f70;
const TAG_SAMPLE_USER: u64 = 0x7375;
const TAG_SAMPLE_ITEM: u64 = 0x7369;

fn default_lr() -> f64 {
    0.01
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_batch_size() -> usize {
    64
}
fn default_max_epochs() -> usize {
    1000
}
fn default_min_epochs() -> usize {
    300
}
fn default_patience() -> usize {
    50
}
fn default_repeats() -> usize {
    5
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Bce,
    #[default]
    BceContrastive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Early stopping is considered only after this many epochs.
    #[serde(default = "default_min_epochs")]
    pub min_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub loss_mode: LossMode,
    #[serde(default)]
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {} not in (0, 1)",
                self.threshold
            )));
        }
        self.loss.validate()?;
        self.model.validate()
    }
}

// ── Adam ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
}

pub fn adam_init(params: &ModelParams) -> AdamState {
    let zeros = |p: &ModelParams| -> BTreeMap<String, Tensor> {
        p.tensors
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect()
    };
    AdamState {
        m: zeros(params),
        v: zeros(params),
        t: 0,
    }
}

/// One Adam update with bias correction. Tensors missing from `grads`
/// carry zero gradient.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (name, theta) in params.tensors.iter_mut() {
        if let Some(g) = grads.get(name) {
            if g.shape() != theta.shape() {
                return Err(Error::Contract(format!(
                    "gradient for {name:?} has shape {:?}, parameter is {:?}",
                    g.shape(),
                    theta.shape()
                )));
            }
        }
        let m = state.m.get_mut(name).expect("state mirrors params");
        let v = state.v.get_mut(name).expect("state mirrors params");
        let zero = [];
        let gv: &[f64] = grads.get(name).map(|g| g.values()).unwrap_or(&zero);
        let tv = theta.values_mut();
        let mv = m.values_mut();
        let vv = v.values_mut();
        for i in 0..tv.len() {
            let g = if gv.is_empty() { 0.0 } else { gv[i] };
            mv[i] = cfg.beta1 * mv[i] + (1.0 - cfg.beta1) * g;
            vv[i] = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = mv[i] / bc1;
            let v_hat = vv[i] / bc2;
            tv[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

// ── evaluation ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub fp_rate: f64,
    pub confusion: Confusion,
    /// FP rate is defined as 0 when the set has no actual negatives.
    pub no_negatives: bool,
}

/// Accuracy and false-positive rate at `threshold` (prediction is
/// probability >= threshold). FP rate is FP / (FP + TN).
pub fn evaluate(
    params: &ModelParams,
    records: &[InteractionRecord],
    stores: &ChannelStores,
    threshold: f64,
) -> Result<EvalMetrics> {
    if records.is_empty() {
        return Err(Error::Contract("evaluate over an empty record set".into()));
    }
    let mut c = Confusion::default();
    for rec in records {
        let out = forward_eval(params, rec, stores)?;
        let predicted = out.probability >= threshold;
        match (rec.label == 1, predicted) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    let n = records.len() as f64;
    let negatives = c.fp + c.tn;
    Ok(EvalMetrics {
        accuracy: (c.tp + c.tn) as f64 / n,
        fp_rate: if negatives == 0 {
            0.0
        } else {
            c.fp as f64 / negatives as f64
        },
        confusion: c,
        no_negatives: negatives == 0,
    })
}

// ── early stopping ───────────────────────────────────────────────────

/// Best-FP tracker implementing: update the best on strict improvement,
/// stop after epoch e when e >= min_epochs + patience and no best-update
/// happened in the last `patience` epochs. Epochs are 1-indexed.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    min_epochs: usize,
    patience: usize,
    best_fp: f64,
    best_epoch: usize,
}

impl EarlyStopper {
    pub fn new(min_epochs: usize, patience: usize) -> Self {
        EarlyStopper {
            min_epochs,
            patience,
            best_fp: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Feed the test FP rate for `epoch`; returns (improved, stop_now).
    pub fn observe(&mut self, epoch: usize, fp_rate: f64) -> (bool, bool) {
        let improved = fp_rate < self.best_fp;
        if improved {
            self.best_fp = fp_rate;
            self.best_epoch = epoch;
        }
        let stop = epoch >= self.min_epochs + self.patience
            && epoch - self.best_epoch >= self.patience;
        (improved, stop)
    }
}

// ── reports ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_fp_rate: f64,
    /// Wall time is logged, never serialized: reports stay byte-identical
    /// across invocations.
    #[serde(skip)]
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_test_fp_rate: f64,
    pub best_test_accuracy: f64,
    /// File name of the best checkpoint inside the run directory.
    pub checkpoint: Option<String>,
    pub stop_reason: StopReason,
}

// ── the training loop ────────────────────────────────────────────────

pub struct TrainInputs<'a> {
    pub split: &'a DatasetSplit,
    pub stores: &'a ChannelStores,
    pub sims_user: &'a SimilarityGraph,
    pub sims_item: &'a SimilarityGraph,
}

fn distinct_ids<'a>(
    records: impl IntoIterator<Item = &'a InteractionRecord>,
    side: Side,
) -> Vec<String> {
    let set: BTreeSet<&str> = records
        .into_iter()
        .map(|r| match side {
            Side::User => r.user_id.as_str(),
            Side::Item => r.item_id.as_str(),
        })
        .collect();
    set.into_iter().map(str::to_string).collect()
}

/// Resolves a sampled contrastive batch against the current projection
/// outputs, caching one node per entity. Returns `None` when the channel
/// mask leaves this side without a representation.
pub fn resolve_contrastive(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    batch: &ContrastiveBatch,
    stores: &ChannelStores,
) -> Result<Option<Vec<AnchorVectors>>> {
    if params.config.active_specs_for_side(batch.side).is_empty() {
        return Ok(None);
    }
    let mut cache: BTreeMap<&str, NodeId> = BTreeMap::new();
    let resolve = |tape: &mut Tape, cache: &mut BTreeMap<&str, NodeId>, id: &'_ str| {
        if let Some(&n) = cache.get(id) {
            return Ok::<NodeId, Error>(n);
        }
        let node = project_entity(tape, params, bound, batch.side, id, stores)?
            .expect("side has active channels");
        Ok(node)
    };
    let mut out = Vec::with_capacity(batch.anchors.len());
    for anchor in &batch.anchors {
        let a = resolve(tape, &mut cache, &anchor.anchor)?;
        cache.insert(&anchor.anchor, a);
        let p = resolve(tape, &mut cache, &anchor.positive)?;
        cache.insert(&anchor.positive, p);
        let mut negatives = Vec::with_capacity(anchor.negatives.len());
        for n in &anchor.negatives {
            let node = resolve(tape, &mut cache, n)?;
            cache.insert(n, node);
            negatives.push(node);
        }
        out.push(AnchorVectors {
            anchor: a,
            positive: p,
            negatives,
        });
    }
    Ok(Some(out))
}

struct BatchOutcome {
    breakdown: LossBreakdown,
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    cfg: &TrainConfig,
    params: &mut ModelParams,
    adam: &mut AdamState,
    inputs: &TrainInputs<'_>,
    batch_records: &[&InteractionRecord],
    user_corpus: &[String],
    item_corpus: &[String],
    epoch: usize,
    batch_ix: usize,
) -> Result<BatchOutcome> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let mut dropout_rng = Rng::derive(cfg.seed, &[TAG_DROPOUT, epoch as u64, batch_ix as u64]);

    let mut logits = Vec::with_capacity(batch_records.len());
    let mut labels = Vec::with_capacity(batch_records.len());
    for rec in batch_records {
        let nodes = crate::model::forward_tape_with(
            &mut tape,
            params,
            &bound,
            rec,
            inputs.stores,
            Mode::Train,
            &mut dropout_rng,
            false,
        )?;
        logits.push(nodes.logit);
        labels.push(rec.label);
    }
    let (pos_w, neg_w) = cfg.loss.resolve_class_weights(&inputs.split.train);
    let l_rec = weighted_bce_from_logits(&mut tape, &logits, &labels, pos_w, neg_w)?;

    let (mut l_ii, mut l_uu) = (None, None);
    if cfg.loss_mode == LossMode::BceContrastive {
        for (side, sims, corpus, tag, slot) in [
            (
                Side::Item,
                inputs.sims_item,
                item_corpus,
                TAG_SAMPLE_ITEM,
                &mut l_ii,
            ),
            (
                Side::User,
                inputs.sims_user,
                user_corpus,
                TAG_SAMPLE_USER,
                &mut l_uu,
            ),
        ] {
            let entities = distinct_ids(batch_records.iter().copied(), side);
            let mut rng = Rng::derive(cfg.seed, &[tag, epoch as u64, batch_ix as u64]);
            let cb = sample_contrastive(side, &entities, sims, corpus, &cfg.loss, &mut rng)?;
            if let Some(anchors) =
                resolve_contrastive(&mut tape, params, &bound, &cb, inputs.stores)?
            {
                if let Some(node) =
                    infonce(&mut tape, &anchors, cfg.loss.tau, cfg.loss.normalize_embeddings)?
                {
                    *slot = Some((node, anchors.len()));
                }
            }
        }
    }

    let (total, breakdown) = composite_loss(&mut tape, l_rec, l_ii, l_uu, &cfg.loss)?;
    if !breakdown.l_total.is_finite() {
        let term = if !breakdown.l_rec.is_finite() {
            "l_rec"
        } else if !breakdown.l_ii.is_finite() {
            "l_ii"
        } else if !breakdown.l_uu.is_finite() {
            "l_uu"
        } else {
            "l_total"
        };
        return Err(Error::NonFinite(format!(
            "epoch {epoch} batch {batch_ix}: term {term} is not finite \
             (rec={}, ii={}, uu={})",
            breakdown.l_rec, breakdown.l_ii, breakdown.l_uu
        )));
    }

    let gm = tape.backward(total)?;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, &node) in bound.names() {
        if let Some(g) = gm.get(node) {
            grads.insert(name.clone(), g.clone());
        }
    }
    adam_step(params, &grads, adam, cfg)?;
    Ok(BatchOutcome { breakdown })
}

/// Runs one full training job. When `checkpoint_dir` is given, the best
/// parameters are written to `<dir>/best.ckpt`.
pub fn train(
    cfg: &TrainConfig,
    inputs: &TrainInputs<'_>,
    checkpoint_dir: Option<&Path>,
) -> Result<RunReport> {
    train_observed(cfg, inputs, checkpoint_dir, &mut |_, _, _| {})
}

/// `train` with a per-batch observer: (epoch, batch index, loss breakdown).
pub fn train_observed(
    cfg: &TrainConfig,
    inputs: &TrainInputs<'_>,
    checkpoint_dir: Option<&Path>,
    on_batch: &mut dyn FnMut(usize, usize, &LossBreakdown),
) -> Result<RunReport> {
    cfg.validate()?;
    if inputs.split.train.is_empty() || inputs.split.test.is_empty() {
        return Err(Error::Contract("train and test sets must be non-empty".into()));
    }
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = cfg.seed;
    let mut params = init(&model_cfg)?;
    let mut adam = adam_init(&params);
    let mut stopper = EarlyStopper::new(cfg.min_epochs, cfg.patience);

    let user_corpus = distinct_ids(&inputs.split.train, Side::User);
    let item_corpus = distinct_ids(&inputs.split.train, Side::Item);

    let mut epochs: Vec<EpochMetrics> = Vec::new();
    let mut best_params: Option<ModelParams> = None;
    let mut best_metrics: Option<EvalMetrics> = None;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let batches =
            crate::dataio::make_batches(inputs.split.train.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut sum = LossBreakdown::default();
        let n_batches = batches.len();
        for (batch_ix, batch) in batches.iter().enumerate() {
            let batch_records: Vec<&InteractionRecord> =
                batch.iter().map(|&i| &inputs.split.train[i]).collect();
            let outcome = train_batch(
                cfg,
                &mut params,
                &mut adam,
                inputs,
                &batch_records,
                &user_corpus,
                &item_corpus,
                epoch,
                batch_ix,
            )?;
            on_batch(epoch, batch_ix, &outcome.breakdown);
            sum.l_rec += outcome.breakdown.l_rec;
            sum.l_ii += outcome.breakdown.l_ii;
            sum.l_uu += outcome.breakdown.l_uu;
            sum.l_total += outcome.breakdown.l_total;
            sum.items_used += outcome.breakdown.items_used;
            sum.users_used += outcome.breakdown.users_used;
        }
        let mean_loss = LossBreakdown {
            l_rec: sum.l_rec / n_batches as f64,
            l_ii: sum.l_ii / n_batches as f64,
            l_uu: sum.l_uu / n_batches as f64,
            l_total: sum.l_total / n_batches as f64,
            items_used: sum.items_used,
            users_used: sum.users_used,
        };

        let train_eval = evaluate(&params, &inputs.split.train, inputs.stores, cfg.threshold)?;
        let test_eval = evaluate(&params, &inputs.split.test, inputs.stores, cfg.threshold)?;
        epochs.push(EpochMetrics {
            epoch,
            loss: mean_loss,
            train_accuracy: train_eval.accuracy,
            test_accuracy: test_eval.accuracy,
            test_fp_rate: test_eval.fp_rate,
            wall_secs: start.elapsed().as_secs_f64(),
        });

        let (improved, stop) = stopper.observe(epoch, test_eval.fp_rate);
        if improved {
            best_params = Some(params.clone());
            best_metrics = Some(test_eval);
        }
        if stop {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }

    let best_params = best_params.expect("at least one epoch ran");
    let best_metrics = best_metrics.expect("at least one epoch ran");
    let checkpoint = match checkpoint_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            save_checkpoint(&best_params, &dir.join("best.ckpt"))?;
            Some("best.ckpt".to_string())
        }
        None => None,
    };

    let mut config_snapshot = cfg.clone();
    config_snapshot.model = model_cfg;
    Ok(RunReport {
        config: config_snapshot,
        epochs,
        best_epoch: stopper.best_epoch(),
        best_test_fp_rate: best_metrics.fp_rate,
        best_test_accuracy: best_metrics.accuracy,
        checkpoint,
        stop_reason,
    })
}

// ── repeated runs and the comparison table ───────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub best_test_fp_rate: f64,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: Vec<RunSummary>,
    pub mean_best_accuracy: f64,
    pub min_best_accuracy: f64,
    pub max_best_accuracy: f64,
    pub mean_best_fp_rate: f64,
    pub min_best_fp_rate: f64,
    pub max_best_fp_rate: f64,
}

impl AggregateReport {
    pub fn from_reports(reports: &[RunReport]) -> Self {
        let accs: Vec<f64> = reports.iter().map(|r| r.best_test_accuracy).collect();
        let fps: Vec<f64> = reports.iter().map(|r| r.best_test_fp_rate).collect();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let min = |xs: &[f64]| xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = |xs: &[f64]| xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        AggregateReport {
            runs: reports
                .iter()
                .map(|r| RunSummary {
                    seed: r.config.seed,
                    best_epoch: r.best_epoch,
                    best_test_accuracy: r.best_test_accuracy,
                    best_test_fp_rate: r.best_test_fp_rate,
                    epochs_run: r.epochs.len(),
                    stop_reason: r.stop_reason,
                })
                .collect(),
            mean_best_accuracy: mean(&accs),
            min_best_accuracy: min(&accs),
            max_best_accuracy: max(&accs),
            mean_best_fp_rate: mean(&fps),
            min_best_fp_rate: min(&fps),
            max_best_fp_rate: max(&fps),
        }
    }
}

/// Runs the config `n` times with seeds seed+0..seed+n-1. When `out_dir`
/// is given, each run writes `run_<i>/report.json` and `run_<i>/best.ckpt`.
pub fn repeat_runs(
    cfg: &TrainConfig,
    inputs: &TrainInputs<'_>,
    n: usize,
    out_dir: Option<&Path>,
) -> Result<(AggregateReport, Vec<RunReport>)> {
    if n == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let mut reports = Vec::with_capacity(n);
    for r in 0..n {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + r as u64;
        let run_dir = out_dir.map(|d| d.join(format!("run_{r}")));
        let report = train(&run_cfg, inputs, run_dir.as_deref())?;
        if let Some(dir) = &run_dir {
            std::fs::write(
                dir.join("report.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
        }
        reports.push(report);
    }
    let aggregate = AggregateReport::from_reports(&reports);
    Ok((aggregate, reports))
}

/// One row of the comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct TableArm {
    pub model: String,
    pub loss: String,
    pub accuracy: f64,
    pub fp_rate: f64,
    pub runs: usize,
}

/// Renders arms as aligned markdown and machine-readable JSON, percentages
/// with two decimals. Arms without runs are omitted with a warning on
/// stderr.
pub fn emit_table(arms: &[TableArm]) -> (String, serde_json::Value) {
    let mut rows = Vec::new();
    for arm in arms {
        if arm.runs == 0 {
            eprintln!("warning: arm ({}, {}) has no runs, omitted", arm.model, arm.loss);
            continue;
        }
        rows.push(serde_json::json!({
            "model": arm.model,
            "loss": arm.loss,
            "accuracy_pct": format!("{:.2}", arm.accuracy * 100.0),
            "fp_pct": format!("{:.2}", arm.fp_rate * 100.0),
            "accuracy": arm.accuracy,
            "fp_rate": arm.fp_rate,
            "runs": arm.runs,
        }));
    }
    let mut md = String::from("| Model | Loss | Acc. | FP |\n|---|---|---|---|\n");
    for row in &rows {
        md.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            row["model"].as_str().unwrap(),
            row["loss"].as_str().unwrap(),
            row["accuracy_pct"].as_str().unwrap(),
            row["fp_pct"].as_str().unwrap(),
        ));
    }
    (md, serde_json::json!({ "rows": rows }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Schema;
    use crate::model::ModelConfig;

    fn scalar_config() -> TrainConfig {
        let schema = Schema {
            dense_dim: 1,
            sparse_vocab: 2,
            pad_id: 1,
            sparse_len: 1,
            channels: vec![],
        };
        TrainConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            max_epochs: 10,
            min_epochs: 0,
            patience: 5,
            repeats: 1,
            seed: 0,
            test_fraction: 0.2,
            split_seed: 0,
            threshold: 0.5,
            loss_mode: LossMode::Bce,
            loss: LossConfig::default(),
            model: ModelConfig::for_schema(&schema),
        }
    }

    fn one_param(value: f64) -> ModelParams {
        let schema = Schema {
            dense_dim: 1,
            sparse_vocab: 2,
            pad_id: 1,
            sparse_len: 1,
            channels: vec![],
        };
        let mut cfg = ModelConfig::for_schema(&schema);
        cfg.d_int = 1;
        cfg.dense_hidden = vec![];
        cfg.top_hidden = vec![];
        let mut params = init(&cfg).unwrap();
        // collapse to a single scalar-valued tensor view for the test
        for t in params.tensors.values_mut() {
            for v in t.values_mut() {
                *v = value;
            }
        }
        params
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let cfg = scalar_config();
        let mut params = one_param(0.5);
        let before = params.clone();
        let mut state = adam_init(&params);
        adam_step(&mut params, &BTreeMap::new(), &mut state, &cfg).unwrap();
        assert!(params.bitwise_eq(&before));
    }

    #[test]
    fn adam_first_step_closed_form() {
        let cfg = scalar_config();
        let mut params = one_param(0.0);
        let mut state = adam_init(&params);
        let name = params.tensors.keys().next().unwrap().clone();
        let shape = params.tensor(&name).shape().to_vec();
        let n = params.tensor(&name).numel();
        let mut grads = BTreeMap::new();
        grads.insert(name.clone(), Tensor::new(shape, vec![2.0; n]).unwrap());
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        // first step: m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        let expected = -0.01 * 2.0 / (2.0 + 1e-8);
        let got = params.tensor(&name).values()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got + 0.009999999).abs() < 1e-8);
    }

    #[test]
    fn adam_equal_gradients_update_identically() {
        let cfg = scalar_config();
        let mut params = one_param(0.3);
        let mut state = adam_init(&params);
        let mut grads = BTreeMap::new();
        for (name, t) in &params.tensors {
            grads.insert(
                name.clone(),
                Tensor::new(t.shape().to_vec(), vec![0.7; t.numel()]).unwrap(),
            );
        }
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let values: Vec<f64> = params
            .tensors
            .values()
            .flat_map(|t| t.values().to_vec())
            .collect();
        for v in &values {
            assert_eq!(*v, values[0]);
        }
    }

    #[test]
    fn adam_shape_mismatch_rejected() {
        let cfg = scalar_config();
        let mut params = one_param(0.0);
        let mut state = adam_init(&params);
        let name = params.tensors.keys().next().unwrap().clone();
        let mut grads = BTreeMap::new();
        grads.insert(name, Tensor::vector(vec![0.0; 999]));
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn early_stopper_constant_trace() {
        // constant FP from the first epoch, 300/50 -> stops after epoch 350
        let mut stopper = EarlyStopper::new(300, 50);
        let mut stopped_at = None;
        for epoch in 1..=400 {
            let (_, stop) = stopper.observe(epoch, 0.25);
            if stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(350));
    }

    #[test]
    fn early_stopper_improvement_resets_window() {
        let mut stopper = EarlyStopper::new(300, 50);
        let mut stopped_at = None;
        for epoch in 1..=500 {
            let fp = if epoch <= 320 {
                1.0 - epoch as f64 / 1000.0 // improving until epoch 320
            } else {
                1.0 // flat afterwards
            };
            let (_, stop) = stopper.observe(epoch, fp);
            if stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(370));
    }

    #[test]
    fn early_stopper_never_stops_before_min_plus_patience() {
        let mut stopper = EarlyStopper::new(10, 3);
        for epoch in 1..=12 {
            let (_, stop) = stopper.observe(epoch, 0.5);
            assert!(!stop, "stopped at {epoch}");
        }
        let (_, stop) = stopper.observe(13, 0.5);
        assert!(stop);
    }

    #[test]
    fn early_stopper_late_improvement() {
        let mut stopper = EarlyStopper::new(5, 4);
        let mut stopped_at = None;
        for epoch in 1..=40 {
            let fp = match epoch {
                7 => 0.1,
                _ => 0.5,
            };
            let (_, stop) = stopper.observe(epoch, fp);
            if stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        // improvement at 7 resets the window to 7 + 4
        assert_eq!(stopped_at, Some(11));
        assert_eq!(stopper.best_epoch(), 7);
    }

    #[test]
    fn confusion_arithmetic_examples() {
        // labels [1x7, 0], all predicted positive: accuracy 7/8, FP rate 1
        let c = Confusion {
            tp: 7,
            fp: 1,
            tn: 0,
            fn_: 0,
        };
        let acc = (c.tp + c.tn) as f64 / 8.0;
        assert_eq!(acc, 0.875);
        let fp_rate = c.fp as f64 / (c.fp + c.tn) as f64;
        assert_eq!(fp_rate, 1.0);
    }

    #[test]
    fn table_formatting() {
        let arms = vec![
            TableArm {
                model: "Text + Image".into(),
                loss: "BCE + Contr.".into(),
                accuracy: 0.9971,
                fp_rate: 0.0015,
                runs: 5,
            },
            TableArm {
                model: "Text Only".into(),
                loss: "BCE".into(),
                accuracy: 0.977,
                fp_rate: 0.0107,
                runs: 5,
            },
            TableArm {
                model: "Empty".into(),
                loss: "BCE".into(),
                accuracy: 0.0,
                fp_rate: 0.0,
                runs: 0,
            },
        ];
        let (md, json) = emit_table(&arms);
        assert!(md.contains("| Text + Image | BCE + Contr. | 99.71 | 0.15 |"), "{md}");
        assert!(md.contains("| Text Only | BCE | 97.70 | 1.07 |"), "{md}");
        assert!(!md.contains("Empty"));
        assert_eq!(json["rows"].as_array().unwrap().len(), 2);
        assert_eq!(json["rows"][0]["fp_pct"], "0.15");
    }
}
