//! Property suites for the tape: finite-difference agreement over many
//! seeds, bitwise-deterministic accumulation, logsumexp stability, and
//! dropout identities.

use dlrrec_core::autodiff::{Mode, Tape};
use dlrrec_core::gradcheck::{run_suite, OP_TOLERANCE};
use dlrrec_core::rng::Rng;
use dlrrec_core::tensor::Tensor;
use proptest::prelude::*;

#[test]
fn every_op_matches_finite_differences_over_100_seeds() {
    let report = run_suite(0, 100).unwrap();
    for r in &report.reports {
        assert!(
            r.passed(),
            "{}: worst rel err {} over tolerance {}",
            r.op,
            r.worst_rel_err,
            r.tolerance
        );
        if r.op != "composite_loss" {
            assert!(r.worst_rel_err < OP_TOLERANCE);
        }
    }
}

#[test]
fn gradient_maps_are_bitwise_identical() {
    let mut rng = Rng::new(5);
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(4, 4, (0..16).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap());
    let b = tape.leaf(Tensor::matrix(4, 4, (0..16).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap());
    let c = tape.matmul(a, b).unwrap();
    let s = tape.sigmoid(c);
    let l = tape.logsumexp(s, None).unwrap();
    let g1 = tape.backward(l).unwrap();
    let g2 = tape.backward(l).unwrap();
    for id in [a, b] {
        let v1 = g1.get(id).unwrap().values();
        let v2 = g2.get(id).unwrap().values();
        assert!(v1.iter().zip(v2).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logsumexp_shift_identity(values in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut tape = Tape::new();
        let x = tape.vector(values.clone());
        let lse = tape.logsumexp(x, None).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| v - m).collect();
        let y = tape.vector(shifted);
        let lse_shifted = tape.logsumexp(y, None).unwrap();
        let lhs = tape.scalar_value(lse);
        let rhs = tape.scalar_value(lse_shifted) + m;
        prop_assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn dropout_eval_is_bitwise_identity(
        values in prop::collection::vec(-100.0f64..100.0, 1..40),
        rate in 0.0f64..0.99,
        seed in any::<u64>(),
    ) {
        let mut tape = Tape::new();
        let mut rng = Rng::new(seed);
        let x = tape.vector(values.clone());
        let y = tape.dropout(x, rate, Mode::Eval, &mut rng).unwrap();
        prop_assert_eq!(x, y); // the very same node
        let out = tape.value(y).values();
        prop_assert!(out.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn dropout_train_scales_survivors(
        values in prop::collection::vec(0.5f64..2.0, 8..32),
        seed in any::<u64>(),
    ) {
        let rate = 0.5;
        let mut tape = Tape::new();
        let mut rng = Rng::new(seed);
        let x = tape.vector(values.clone());
        let y = tape.dropout(x, rate, Mode::Train, &mut rng).unwrap();
        for (xin, xout) in values.iter().zip(tape.value(y).values()) {
            let kept = *xout != 0.0;
            if kept {
                prop_assert!((xout - xin / (1.0 - rate)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exp_log_roundtrip(values in prop::collection::vec(0.01f64..100.0, 1..10)) {
        let mut tape = Tape::new();
        let x = tape.vector(values.clone());
        let l = tape.log(x).unwrap();
        let e = tape.exp(l);
        for (a, b) in tape.value(e).values().iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn matmul_matches_reference(
        m in 1usize..5, k in 1usize..5, n in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let av: Vec<f64> = (0..m * k).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let bv: Vec<f64> = (0..k * n).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(m, k, av.clone()).unwrap());
        let b = tape.leaf(Tensor::matrix(k, n, bv.clone()).unwrap());
        let c = tape.matmul(a, b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let expected: f64 = (0..k).map(|p| av[i * k + p] * bv[p * n + j]).sum();
                let got = tape.value(c).values()[i * n + j];
                prop_assert!((got - expected).abs() < 1e-9);
            }
        }
    }
}
