use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde::Deserialize;

use dlrrec_core::dataio::{self, synth, DatasetSplit, Schema, Side};
use dlrrec_core::gradcheck;
use dlrrec_core::model::{load_checkpoint, ChannelStores, ModelConfig};
use dlrrec_core::swing::{build_graph, top_k_neighbors, SimilarityGraph};
use dlrrec_core::trainer::{
    emit_table, evaluate, repeat_runs, AggregateReport, LossMode, RunReport, TableArm,
    TrainConfig, TrainInputs,
};
use dlrrec_core::{Error, Result};

use crate::logging::{debug, info};

// ── synth ────────────────────────────────────────────────────────────

pub fn cmd_synth(config: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(config)?;
    let cfg: synth::SynthConfig = serde_json::from_str(&text)?;
    let started = Instant::now();
    let output = synth::synthesize(&cfg)?;
    synth::write_dataset(out, &output)?;
    let positives = output.records.iter().filter(|r| r.label == 1).count();
    info!(
        "synth: {} records ({} positive, rate {:.3}), {} channels, wrote {} in {:.2}s",
        output.records.len(),
        positives,
        positives as f64 / output.records.len() as f64,
        output.stores.len(),
        out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

// ── swing ────────────────────────────────────────────────────────────

pub fn cmd_swing(data: &Path, side: &str, alpha: f64, topk: usize, out: &Path) -> Result<()> {
    let side: Side = side.parse()?;
    let records = dataio::load_interactions(&dataio::interactions_path(data))?;
    let graph = build_graph(&records, true);
    let started = Instant::now();
    let sims = top_k_neighbors(&graph, side, topk, alpha)?;
    let non_empty = sims.neighbors.values().filter(|l| !l.is_empty()).count();
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, serde_json::to_string_pretty(&sims)?)?;
    info!(
        "swing: side {side}, {} entities ({non_empty} with neighbors), alpha {alpha}, k {topk}, {:.2}s",
        sims.neighbors.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

/// Channel mask: a named arm or an explicit channel list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Alias(String),
    List(Vec<String>),
}

pub fn resolve_mask(spec: &MaskSpec, schema: &Schema) -> Result<Vec<String>> {
    let all: Vec<String> = schema.channels.iter().map(|c| c.name.clone()).collect();
    let names: Vec<String> = match spec {
        MaskSpec::Alias(alias) => match alias.as_str() {
            "all" | "text_image" | "text+image" => all.clone(),
            "text" => all
                .iter()
                .filter(|n| !n.contains("image"))
                .cloned()
                .collect(),
            "image" => all.iter().filter(|n| n.contains("image")).cloned().collect(),
            other => {
                if other.contains(',') {
                    other.split(',').map(|s| s.trim().to_string()).collect()
                } else {
                    return Err(Error::Config(format!("unknown mask name {other:?}")));
                }
            }
        },
        MaskSpec::List(list) => list.clone(),
    };
    if names.is_empty() {
        return Err(Error::Config("mask selects no channels".into()));
    }
    for n in &names {
        if schema.channel(n).is_none() {
            return Err(Error::Config(format!(
                "mask channel {n:?} not present in schema (has {all:?})"
            )));
        }
    }
    Ok(names)
}

/// Composes the effective TrainConfig: model defaults from the dataset
/// schema, overlaid with the file's `model` section, `mask`, and any
/// command-line overrides.
fn compose_train_config(
    config_path: &Path,
    schema: &Schema,
    mask_flag: Option<&str>,
    seed_flag: Option<u64>,
    repeats_flag: Option<usize>,
) -> Result<TrainConfig> {
    let text = fs::read_to_string(config_path)?;
    let mut file: serde_json::Value = serde_json::from_str(&text)?;
    let obj = file
        .as_object_mut()
        .ok_or_else(|| Error::Config("run config must be a JSON object".into()))?;

    let mut model_value = serde_json::to_value(ModelConfig::for_schema(schema))?;
    if let Some(overrides) = obj.remove("model") {
        let section = overrides
            .as_object()
            .ok_or_else(|| Error::Config("model section must be an object".into()))?
            .clone();
        let model_obj = model_value.as_object_mut().expect("model is an object");
        for (key, value) in section {
            if key == "proj_hidden" {
                // uniform projection hidden sizes across channels
                let channels = model_obj
                    .get_mut("channels")
                    .and_then(|c| c.as_array_mut())
                    .expect("channels array");
                for ch in channels {
                    ch["hidden"] = value.clone();
                }
            } else {
                model_obj.insert(key, value);
            }
        }
    }

    let mask = match mask_flag {
        Some(flag) => Some(MaskSpec::Alias(flag.to_string())),
        None => obj
            .remove("mask")
            .map(serde_json::from_value::<MaskSpec>)
            .transpose()?,
    };
    if let Some(spec) = &mask {
        model_value["active_channels"] = serde_json::to_value(resolve_mask(spec, schema)?)?;
    }
    obj.insert("model".to_string(), model_value);

    let mut cfg: TrainConfig = serde_json::from_value(file)?;
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    if let Some(repeats) = repeats_flag {
        cfg.repeats = repeats;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_sims(path: &Path, expected: Side) -> Result<SimilarityGraph> {
    let text = fs::read_to_string(path)?;
    let sims: SimilarityGraph = serde_json::from_str(&text)?;
    if sims.side != expected {
        return Err(Error::Config(format!(
            "{} holds {}-side similarities, expected {expected}",
            path.display(),
            sims.side
        )));
    }
    Ok(sims)
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub user_sims: &'a Path,
    pub item_sims: &'a Path,
    pub out: &'a Path,
    pub repeats: Option<usize>,
    pub mask: Option<String>,
    pub seed: Option<u64>,
}

/// Loads a dataset directory and rebuilds the train/test split a config
/// describes.
pub fn load_split(data: &Path, cfg: &TrainConfig) -> Result<(DatasetSplit, ChannelStores)> {
    let (records, schema, stores) = dataio::load_dataset(data)?;
    let split = dataio::split(&records, &schema, cfg.test_fraction, cfg.split_seed)?;
    Ok((split, stores))
}

pub fn cmd_train(args: TrainArgs<'_>) -> Result<()> {
    let schema = dataio::load_schema(args.data)?;
    let cfg = compose_train_config(
        args.config,
        &schema,
        args.mask.as_deref(),
        args.seed,
        args.repeats,
    )?;
    let (split, stores) = load_split(args.data, &cfg)?;
    let sims_user = load_sims(args.user_sims, Side::User)?;
    let sims_item = load_sims(args.item_sims, Side::Item)?;
    debug!(
        "train: {} train / {} test records, mask {:?}",
        split.train.len(),
        split.test.len(),
        cfg.model.active_channels
    );

    fs::create_dir_all(args.out)?;
    fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    let inputs = TrainInputs {
        split: &split,
        stores: &stores,
        sims_user: &sims_user,
        sims_item: &sims_item,
    };
    let started = Instant::now();
    let (aggregate, reports) = repeat_runs(&cfg, &inputs, cfg.repeats, Some(args.out))?;
    for report in &reports {
        info!(
            "run seed {}: best epoch {} acc {:.4} fp {:.4} ({} epochs, {:?})",
            report.config.seed,
            report.best_epoch,
            report.best_test_accuracy,
            report.best_test_fp_rate,
            report.epochs.len(),
            report.stop_reason
        );
    }
    fs::write(
        args.out.join("aggregate.json"),
        serde_json::to_string_pretty(&aggregate)?,
    )?;
    info!(
        "train: {} repeats, mean best acc {:.4}, mean best fp {:.4}, {:.1}s -> {}",
        aggregate.runs.len(),
        aggregate.mean_best_accuracy,
        aggregate.mean_best_fp_rate,
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────

pub fn cmd_eval(
    ckpt: &Path,
    data: &Path,
    split_name: &str,
    mask: Option<&str>,
    threshold: Option<f64>,
) -> Result<()> {
    let run_dir = ckpt
        .parent()
        .ok_or_else(|| Error::Config("checkpoint path has no parent directory".into()))?;
    let report_text = fs::read_to_string(run_dir.join("report.json")).map_err(|e| {
        Error::Config(format!(
            "cannot read report.json next to the checkpoint: {e}"
        ))
    })?;
    let report: RunReport = serde_json::from_str(&report_text)?;
    let cfg = report.config;

    let schema = dataio::load_schema(data)?;
    if let Some(flag) = mask {
        let requested = resolve_mask(&MaskSpec::Alias(flag.to_string()), &schema)?;
        let trained: BTreeSet<&String> = cfg.model.active_channels.iter().collect();
        let requested_set: BTreeSet<&String> = requested.iter().collect();
        if trained != requested_set {
            return Err(Error::Config(format!(
                "mask {flag:?} selects {requested:?} but the checkpoint was trained with {:?}",
                cfg.model.active_channels
            )));
        }
    }

    let (split, stores) = load_split(data, &cfg)?;
    let records = match split_name {
        "test" => &split.test,
        "train" => &split.train,
        other => {
            return Err(Error::Config(format!(
                "unknown split {other:?} (expected train or test)"
            )))
        }
    };
    let params = load_checkpoint(ckpt, &cfg.model)?;
    let metrics = evaluate(
        &params,
        records,
        &stores,
        threshold.unwrap_or(cfg.threshold),
    )?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

// ── gradcheck ────────────────────────────────────────────────────────

pub fn cmd_gradcheck(seed: u64, seeds: usize, corrupt: Option<&str>) -> ExitCode {
    let started = Instant::now();
    let report = match gradcheck::run_suite_with_corruption(seed, seeds, corrupt) {
        Ok(r) => r,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };
    for r in &report.reports {
        println!(
            "{:<18} worst rel err {:>12.3e}  (tolerance {:.0e})  {}",
            r.op,
            r.worst_rel_err,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    info!(
        "gradcheck: {} ops x {} seeds in {:.1}s",
        report.reports.len(),
        seeds,
        started.elapsed().as_secs_f64()
    );
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

// ── report ───────────────────────────────────────────────────────────

/// Display name of a channel mask, mirroring the ablation arm names.
pub fn arm_label(model: &ModelConfig) -> String {
    let active: BTreeSet<&str> = model.active_channels.iter().map(String::as_str).collect();
    let all: BTreeSet<&str> = model.channels.iter().map(|c| c.name.as_str()).collect();
    let has_image = active.iter().any(|n| n.contains("image"));
    let has_text = active.iter().any(|n| !n.contains("image"));
    if active == all && has_image && has_text {
        "Text + Image".to_string()
    } else if has_text && !has_image {
        "Text Only".to_string()
    } else if has_image && !has_text {
        "Image Only".to_string()
    } else {
        model.active_channels.join("+")
    }
}

pub fn loss_label(mode: LossMode) -> &'static str {
    match mode {
        LossMode::Bce => "BCE",
        LossMode::BceContrastive => "BCE + Contr.",
    }
}

pub fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut arms = Vec::new();
    for dir in runs {
        let cfg_text = fs::read_to_string(dir.join("config.json")).map_err(|e| {
            Error::Config(format!("cannot read {}/config.json: {e}", dir.display()))
        })?;
        let cfg: TrainConfig = serde_json::from_str(&cfg_text)?;
        let agg_text = fs::read_to_string(dir.join("aggregate.json")).map_err(|e| {
            Error::Config(format!("cannot read {}/aggregate.json: {e}", dir.display()))
        })?;
        let agg: AggregateReport = serde_json::from_str(&agg_text)?;
        arms.push(TableArm {
            model: arm_label(&cfg.model),
            loss: loss_label(cfg.loss_mode).to_string(),
            accuracy: agg.mean_best_accuracy,
            fp_rate: agg.mean_best_fp_rate,
            runs: agg.runs.len(),
        });
    }
    let (markdown, json) = emit_table(&arms);
    fs::create_dir_all(out)?;
    fs::write(out.join("table.md"), &markdown)?;
    fs::write(out.join("table.json"), serde_json::to_string_pretty(&json)?)?;
    info!("report: {} arms -> {}", arms.len(), out.display());
    print!("{markdown}");
    Ok(())
}
