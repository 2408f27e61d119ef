//! Finite-difference gradient checking.
//!
//! Central differences (h = 1e-5) against the tape's analytic gradients,
//! for every registered op and for the full composite loss on a toy
//! co-training fixture. The checker is the independent oracle: it only
//! ever calls the forward path.

use std::collections::{BTreeMap, HashMap};

use crate::autodiff::{Mode, NodeId, ReduceKind, Tape};
use crate::dataio::{ChannelSpec, ContentEmbeddingStore, InteractionRecord, Schema, Side};
use crate::error::{Error, Result};
use crate::model::{bind, forward_tape, init, ChannelStores, ModelConfig, ModelParams};
use crate::objectives::{
    composite_loss, infonce, sample_contrastive, weighted_bce_from_logits, ContrastiveBatch,
    LossConfig,
};
use crate::rng::Rng;
use crate::swing::{build_graph, top_k_neighbors};
use crate::tensor::Tensor;
use crate::trainer::resolve_contrastive;

pub const DEFAULT_H: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-6;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

/// Central finite differences of a scalar function.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// max over components of |a - n| / max(1, |a|, |n|).
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / 1.0_f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: String,
    pub worst_rel_err: f64,
    pub tolerance: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub reports: Vec<OpReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(OpReport::passed)
    }
}

type BuildFn<'a> = Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId> + 'a>;

/// One gradcheck case: input tensors plus a builder that maps their leaf
/// nodes to a scalar root.
struct Case<'a> {
    inputs: Vec<Tensor>,
    build: BuildFn<'a>,
}

fn run_case(case: &Case<'_>) -> Result<f64> {
    // analytic gradients
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = case.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = (case.build)(&mut tape, &ids)?;
    let gm = tape.backward(root)?;
    let mut worst = 0.0f64;
    for (k, input) in case.inputs.iter().enumerate() {
        let analytic = gm
            .get(ids[k])
            .map(|t| t.values().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut f = |x: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = case
                .inputs
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    if j == k {
                        tape.leaf(Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap())
                    } else {
                        tape.leaf(t.clone())
                    }
                })
                .collect();
            let root = (case.build)(&mut tape, &ids).expect("forward succeeds");
            tape.scalar_value(root)
        };
        let numeric = central_diff(&mut f, input.values(), DEFAULT_H);
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    Ok(worst)
}

fn rand_values(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

/// Random values in [-2, 2] kept away from relu's kink so the central
/// difference is valid.
fn rand_values_away_from_zero(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mut v = rng.uniform(-2.0, 2.0);
            while v.abs() < 1e-3 {
                v = rng.uniform(-2.0, 2.0);
            }
            v
        })
        .collect()
}

/// Projects a node against a fixed direction so the scalar root is
/// sensitive to every output component.
fn contract(tape: &mut Tape, out: NodeId, weights: &[f64]) -> Result<NodeId> {
    let n = tape.value(out).numel();
    let flat = tape.reshape(out, vec![n])?;
    let w = tape.vector(weights.to_vec());
    tape.dot(flat, w)
}

fn op_cases(seed: u64) -> Vec<(&'static str, Case<'static>)> {
    let mut rng = Rng::derive(seed, &[0x6f70]);
    let mut cases: Vec<(&'static str, Case<'static>)> = Vec::new();

    let w12: Vec<f64> = rand_values(&mut rng, 12, -1.0, 1.0);
    let a = Tensor::matrix(3, 4, rand_values(&mut rng, 12, -2.0, 2.0)).unwrap();
    let b = Tensor::matrix(4, 2, rand_values(&mut rng, 8, -2.0, 2.0)).unwrap();
    let w6 = w12[..6].to_vec();
    cases.push((
        "matmul",
        Case {
            inputs: vec![a, b],
            build: Box::new(move |t, ids| {
                let c = t.matmul(ids[0], ids[1])?;
                contract(t, c, &w6)
            }),
        },
    ));

    let w = Tensor::matrix(3, 5, rand_values(&mut rng, 15, -2.0, 2.0)).unwrap();
    let x = Tensor::vector(rand_values(&mut rng, 5, -2.0, 2.0));
    let bias = Tensor::vector(rand_values(&mut rng, 3, -2.0, 2.0));
    let d3: Vec<f64> = rand_values(&mut rng, 3, -1.0, 1.0);
    cases.push((
        "affine",
        Case {
            inputs: vec![w, x, bias],
            build: Box::new(move |t, ids| {
                let y = t.affine(ids[0], ids[1], ids[2])?;
                contract(t, y, &d3)
            }),
        },
    ));

    let mk_vec = |rng: &mut Rng| Tensor::vector(rand_values(rng, 7, -2.0, 2.0));
    let dir: Vec<f64> = rand_values(&mut rng, 7, -1.0, 1.0);

    let d = dir.clone();
    cases.push((
        "add",
        Case {
            inputs: vec![mk_vec(&mut rng), mk_vec(&mut rng)],
            build: Box::new(move |t, ids| {
                let y = t.add(ids[0], ids[1])?;
                contract(t, y, &d)
            }),
        },
    ));

    let d = dir.clone();
    cases.push((
        "mul",
        Case {
            inputs: vec![mk_vec(&mut rng), mk_vec(&mut rng)],
            build: Box::new(move |t, ids| {
                let y = t.mul(ids[0], ids[1])?;
                contract(t, y, &d)
            }),
        },
    ));

    let unary =
        |name: &'static str,
         input: Tensor,
         dir: Vec<f64>,
         f: fn(&mut Tape, NodeId) -> Result<NodeId>| {
            (
                name,
                Case {
                    inputs: vec![input],
                    build: Box::new(move |t: &mut Tape, ids: &[NodeId]| {
                        let y = f(t, ids[0])?;
                        contract(t, y, &dir)
                    }),
                },
            )
        };

    cases.push(unary("neg", mk_vec(&mut rng), dir.clone(), |t, x| {
        Ok(t.neg(x))
    }));
    cases.push(unary(
        "relu",
        Tensor::vector(rand_values_away_from_zero(&mut rng, 7)),
        dir.clone(),
        |t, x| Ok(t.relu(x)),
    ));
    cases.push(unary("sigmoid", mk_vec(&mut rng), dir.clone(), |t, x| {
        Ok(t.sigmoid(x))
    }));
    cases.push(unary("exp", mk_vec(&mut rng), dir.clone(), |t, x| {
        Ok(t.exp(x))
    }));
    cases.push(unary(
        "log",
        Tensor::vector(rand_values(&mut rng, 7, 0.1, 2.5)),
        dir.clone(),
        |t, x| t.log(x),
    ));
    cases.push(unary("softplus", mk_vec(&mut rng), dir.clone(), |t, x| {
        Ok(t.softplus(x))
    }));
    cases.push(unary("scale", mk_vec(&mut rng), dir.clone(), |t, x| {
        Ok(t.scale(x, 1.7))
    }));
    cases.push(unary("add_const", mk_vec(&mut rng), dir.clone(), |t, x| {
        Ok(t.add_const(x, -0.4))
    }));

    let d = dir.clone();
    cases.push((
        "scale_by_scalar",
        Case {
            inputs: vec![mk_vec(&mut rng), Tensor::scalar(rng.uniform(-2.0, 2.0))],
            build: Box::new(move |t, ids| {
                let y = t.scale_by(ids[0], ids[1])?;
                contract(t, y, &d)
            }),
        },
    ));

    for (name, kind) in [
        ("reduce.sum", ReduceKind::Sum),
        ("reduce.mean", ReduceKind::Mean),
        ("reduce.logsumexp", ReduceKind::LogSumExp),
    ] {
        let mat = Tensor::matrix(3, 4, rand_values(&mut rng, 12, -2.0, 2.0)).unwrap();
        let d3: Vec<f64> = rand_values(&mut rng, 4, -1.0, 1.0);
        cases.push((
            name,
            Case {
                inputs: vec![mat],
                build: Box::new(move |t, ids| {
                    // axis reduction then full reduction of the remainder
                    let along = t.reduce(kind, ids[0], Some(0))?;
                    let c = contract(t, along, &d3)?;
                    let full = t.reduce(kind, ids[0], None)?;
                    t.add(c, full)
                }),
            },
        ));
    }

    let table = Tensor::matrix(5, 3, rand_values(&mut rng, 15, -2.0, 2.0)).unwrap();
    let dg: Vec<f64> = rand_values(&mut rng, 12, -1.0, 1.0);
    cases.push((
        "gather_rows",
        Case {
            inputs: vec![table],
            build: Box::new(move |t, ids| {
                // repeated index exercises scatter-add accumulation
                let g = t.gather_rows(ids[0], &[0, 2, 2, 4])?;
                contract(t, g, &dg)
            }),
        },
    ));

    let d9: Vec<f64> = rand_values(&mut rng, 9, -1.0, 1.0);
    cases.push((
        "concat",
        Case {
            inputs: vec![
                Tensor::vector(rand_values(&mut rng, 2, -2.0, 2.0)),
                Tensor::vector(rand_values(&mut rng, 3, -2.0, 2.0)),
                Tensor::vector(rand_values(&mut rng, 4, -2.0, 2.0)),
            ],
            build: Box::new(move |t, ids| {
                let y = t.concat(ids)?;
                contract(t, y, &d9)
            }),
        },
    ));

    let d6: Vec<f64> = rand_values(&mut rng, 6, -1.0, 1.0);
    cases.push((
        "reshape",
        Case {
            inputs: vec![Tensor::vector(rand_values(&mut rng, 6, -2.0, 2.0))],
            build: Box::new(move |t, ids| {
                let y = t.reshape(ids[0], vec![2, 3])?;
                contract(t, y, &d6)
            }),
        },
    ));

    let dd: Vec<f64> = rand_values(&mut rng, 20, -1.0, 1.0);
    let dropout_seed = rng.next_u64();
    cases.push((
        "dropout",
        Case {
            inputs: vec![Tensor::vector(rand_values(&mut rng, 20, -2.0, 2.0))],
            build: Box::new(move |t, ids| {
                // fixed rng seed: the mask is identical across rebuilds
                let mut rng = Rng::new(dropout_seed);
                let y = t.dropout(ids[0], 0.4, Mode::Train, &mut rng)?;
                contract(t, y, &dd)
            }),
        },
    ));

    let d7: Vec<f64> = rand_values(&mut rng, 7, -1.0, 1.0);
    cases.push((
        "l2_normalize",
        Case {
            inputs: vec![mk_vec(&mut rng)],
            build: Box::new(move |t, ids| {
                let y = t.l2_normalize(ids[0])?;
                contract(t, y, &d7)
            }),
        },
    ));

    cases
}

// ── toy co-training fixture ──────────────────────────────────────────

/// A miniature dataset, model config, and pre-sampled contrastive batches
/// for end-to-end gradient checks.
pub struct ToyFixture {
    pub records: Vec<InteractionRecord>,
    pub stores: ChannelStores,
    pub config: ModelConfig,
    pub loss: LossConfig,
    pub user_batch: ContrastiveBatch,
    pub item_batch: ContrastiveBatch,
    pub pos_weight: f64,
    pub neg_weight: f64,
}

/// Builds an n_users x n_items toy problem with both contrastive sides
/// populated. Dropout is zero: finite differences need a deterministic
/// forward.
pub fn toy_fixture(n_users: usize, n_items: usize, seed: u64) -> Result<ToyFixture> {
    let mut rng = Rng::derive(seed, &[0x746f79]);
    let d_raw = 5;
    let schema = Schema {
        dense_dim: 2,
        sparse_vocab: 6,
        pad_id: 5,
        sparse_len: 3,
        channels: vec![
            ChannelSpec {
                name: "user-summary".into(),
                side: Side::User,
                d_raw,
            },
            ChannelSpec {
                name: "item-summary".into(),
                side: Side::Item,
                d_raw,
            },
        ],
    };
    let mut config = ModelConfig::for_schema(&schema);
    config.d_int = 4;
    config.dense_hidden = vec![3];
    config.top_hidden = vec![5];
    for ch in &mut config.channels {
        ch.hidden = vec![4];
    }
    config.dropout = 0.0;
    config.seed = seed;

    let mut stores: ChannelStores = HashMap::new();
    for (name, side, count) in [
        ("user-summary", Side::User, n_users),
        ("item-summary", Side::Item, n_items),
    ] {
        let mut store = ContentEmbeddingStore::new(name, d_raw);
        for e in 0..count {
            let prefix = match side {
                Side::User => "u",
                Side::Item => "i",
            };
            let v: Vec<f32> = (0..d_raw).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            store.insert(format!("{prefix}{e}"), v)?;
        }
        stores.insert(name.to_string(), store);
    }

    // each user interacts with a contiguous window of items: dense overlap
    // guarantees SWING neighbors on both sides
    let mut records = Vec::new();
    for u in 0..n_users {
        for w in 0..4.min(n_items) {
            let i = (u + w) % n_items;
            let label = u8::from(rng.bernoulli(0.7));
            records.push(InteractionRecord {
                user_id: format!("u{u}"),
                item_id: format!("i{i}"),
                rating: if label == 1 { 5 } else { 2 },
                label,
                dense: rand_values(&mut rng, 2, -1.0, 1.0),
                sparse: vec![rng.below(5), rng.below(5), 5],
            });
        }
    }

    // short neighbor lists keep negatives drawable from a tiny corpus
    let graph = build_graph(&records, true);
    let sims_user = top_k_neighbors(&graph, Side::User, 2, 1.0)?;
    let sims_item = top_k_neighbors(&graph, Side::Item, 2, 1.0)?;

    let loss = LossConfig {
        tau: 0.5,
        w1: 0.3,
        w2: 0.3,
        pos_class_weight: 1.0,
        neg_class_weight: Some(2.0),
        k_negatives: 2,
        normalize_embeddings: false,
        score_proportional_positives: false,
    };

    let users: Vec<String> = (0..n_users).map(|u| format!("u{u}")).collect();
    let items: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
    let user_batch = sample_contrastive(
        Side::User,
        &users,
        &sims_user,
        &users,
        &loss,
        &mut Rng::derive(seed, &[0x6375]),
    )?;
    let item_batch = sample_contrastive(
        Side::Item,
        &items,
        &sims_item,
        &items,
        &loss,
        &mut Rng::derive(seed, &[0x6369]),
    )?;
    if user_batch.anchors.is_empty() || item_batch.anchors.is_empty() {
        return Err(Error::Contract(
            "toy fixture produced no contrastive anchors".into(),
        ));
    }

    Ok(ToyFixture {
        records,
        stores,
        config,
        loss,
        user_batch,
        item_batch,
        pos_weight: 1.0,
        neg_weight: 2.0,
    })
}

/// Composite loss (Eq. 2 shape: rec + w1*ii + w2*uu) of the fixture under
/// the given parameters, as a tape root.
pub fn build_composite_loss(
    tape: &mut Tape,
    params: &ModelParams,
    fixture: &ToyFixture,
) -> Result<NodeId> {
    let bound = bind(tape, params);
    let mut rng = Rng::new(0); // dropout is zero in the fixture
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for rec in &fixture.records {
        let nodes = forward_tape(
            tape,
            params,
            &bound,
            rec,
            &fixture.stores,
            Mode::Train,
            &mut rng,
        )?;
        logits.push(nodes.logit);
        labels.push(rec.label);
    }
    let l_rec =
        weighted_bce_from_logits(tape, &logits, &labels, fixture.pos_weight, fixture.neg_weight)?;
    let anchors_item =
        resolve_contrastive(tape, params, &bound, &fixture.item_batch, &fixture.stores)?
            .expect("item side active");
    let anchors_user =
        resolve_contrastive(tape, params, &bound, &fixture.user_batch, &fixture.stores)?
            .expect("user side active");
    let l_ii = infonce(tape, &anchors_item, fixture.loss.tau, false)?
        .map(|n| (n, anchors_item.len()));
    let l_uu = infonce(tape, &anchors_user, fixture.loss.tau, false)?
        .map(|n| (n, anchors_user.len()));
    let (total, _) = composite_loss(tape, l_rec, l_ii, l_uu, &fixture.loss)?;
    Ok(total)
}

/// Checks every parameter tensor of the toy model against central finite
/// differences of the composite loss. Returns the worst relative error.
pub fn check_composite_loss(n_users: usize, n_items: usize, seed: u64) -> Result<f64> {
    let fixture = toy_fixture(n_users, n_items, seed)?;
    let params = init(&fixture.config)?;

    let mut tape = Tape::new();
    // node ids: bind() registers leaves in name order starting at 0
    let root = build_composite_loss(&mut tape, &params, &fixture)?;
    let gm = tape.backward(root)?;
    let names: Vec<&String> = params.tensors.keys().collect();

    let mut worst = 0.0f64;
    for (ix, name) in names.iter().enumerate() {
        let analytic = gm
            .get(ix)
            .map(|t| t.values().to_vec())
            .unwrap_or_else(|| vec![0.0; params.tensor(name).numel()]);
        let mut f = |x: &[f64]| -> f64 {
            let mut probe = params.clone();
            let t = probe.tensors.get_mut(*name).unwrap();
            t.values_mut().copy_from_slice(x);
            let mut tape = Tape::new();
            let root = build_composite_loss(&mut tape, &probe, &fixture).expect("forward");
            tape.scalar_value(root)
        };
        let numeric = central_diff(&mut f, params.tensor(name).values(), DEFAULT_H);
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    Ok(worst)
}

// ── the suite ────────────────────────────────────────────────────────

/// Runs every op check over `n_seeds` seeds plus the composite-loss check,
/// reporting the worst relative error per op. `corrupt` perturbs the
/// analytic gradient of the named op (a negative-control fixture for the
/// checker itself).
pub fn run_suite_with_corruption(
    base_seed: u64,
    n_seeds: usize,
    corrupt: Option<&str>,
) -> Result<SuiteReport> {
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for s in 0..n_seeds {
        for (name, case) in op_cases(base_seed + s as u64) {
            let err = run_case(&case)?;
            let w = worst.entry(name.to_string()).or_insert(0.0);
            *w = w.max(err);
        }
    }
    // composite loss over a few init seeds; 5x5 mirrors the smallest toy
    let composite_seeds = 3.min(n_seeds).max(1);
    let mut composite_worst = 0.0f64;
    for s in 0..composite_seeds {
        composite_worst = composite_worst.max(check_composite_loss(5, 5, base_seed + s as u64)?);
    }
    worst.insert("composite_loss".to_string(), composite_worst);

    let mut reports: Vec<OpReport> = worst
        .into_iter()
        .map(|(op, mut err)| {
            if corrupt == Some(op.as_str()) {
                err += 0.1;
            }
            let tolerance = if op == "composite_loss" {
                COMPOSITE_TOLERANCE
            } else {
                OP_TOLERANCE
            };
            OpReport {
                op,
                worst_rel_err: err,
                tolerance,
            }
        })
        .collect();
    reports.sort_by(|a, b| a.op.cmp(&b.op));
    Ok(SuiteReport { reports })
}

pub fn run_suite(base_seed: u64, n_seeds: usize) -> Result<SuiteReport> {
    run_suite_with_corruption(base_seed, n_seeds, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_of_quadratic() {
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [1.0, -2.0, 0.5];
        let g = central_diff(&mut f, &x, DEFAULT_H);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-9);
        }
    }

    #[test]
    fn each_op_passes_one_seed() {
        for (name, case) in op_cases(99) {
            let err = run_case(&case).unwrap();
            assert!(err < OP_TOLERANCE, "{name}: rel err {err}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let report = run_suite_with_corruption(1, 1, Some("matmul")).unwrap();
        assert!(!report.passed());
        let bad = report.reports.iter().find(|r| r.op == "matmul").unwrap();
        assert!(!bad.passed());
        let good = report.reports.iter().find(|r| r.op == "add").unwrap();
        assert!(good.passed());
    }

    #[test]
    fn suite_lists_every_op() {
        let report = run_suite(5, 1).unwrap();
        let names: Vec<&str> = report.reports.iter().map(|r| r.op.as_str()).collect();
        for expected in [
            "matmul",
            "affine",
            "add",
            "mul",
            "neg",
            "relu",
            "sigmoid",
            "exp",
            "log",
            "softplus",
            "scale",
            "add_const",
            "scale_by_scalar",
            "reduce.sum",
            "reduce.mean",
            "reduce.logsumexp",
            "gather_rows",
            "concat",
            "reshape",
            "dropout",
            "l2_normalize",
            "composite_loss",
        ] {
            assert!(names.contains(&expected), "missing {expected}");
        }
        assert!(report.passed());
    }

    #[test]
    fn composite_loss_matches_finite_differences_5x5() {
        let worst = check_composite_loss(5, 5, 7).unwrap();
        assert!(worst < COMPOSITE_TOLERANCE, "worst rel err {worst}");
    }

    #[test]
    fn single_record_logit_gradient_matches_finite_differences() {
        let fixture = toy_fixture(6, 6, 21).unwrap();
        let params = init(&fixture.config).unwrap();
        let record = fixture.records[0].clone();

        let logit_of = |p: &ModelParams| -> f64 {
            let mut tape = Tape::new();
            let bound = bind(&mut tape, p);
            let mut rng = Rng::new(0);
            let nodes = forward_tape(
                &mut tape,
                p,
                &bound,
                &record,
                &fixture.stores,
                Mode::Train,
                &mut rng,
            )
            .unwrap();
            tape.scalar_value(nodes.logit)
        };

        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params);
        let mut rng = Rng::new(0);
        let nodes = forward_tape(
            &mut tape,
            &params,
            &bound,
            &record,
            &fixture.stores,
            Mode::Train,
            &mut rng,
        )
        .unwrap();
        let gm = tape.backward(nodes.logit).unwrap();
        let names: Vec<&String> = params.tensors.keys().collect();
        let mut worst = 0.0f64;
        for (ix, name) in names.iter().enumerate() {
            let analytic = gm
                .get(ix)
                .map(|t| t.values().to_vec())
                .unwrap_or_else(|| vec![0.0; params.tensor(name).numel()]);
            let mut f = |x: &[f64]| {
                let mut probe = params.clone();
                probe.tensors.get_mut(*name).unwrap().values_mut().copy_from_slice(x);
                logit_of(&probe)
            };
            let numeric = central_diff(&mut f, params.tensor(name).values(), DEFAULT_H);
            worst = worst.max(max_rel_err(&analytic, &numeric));
        }
        assert!(worst < 1e-4, "worst rel err {worst}");
    }
}
