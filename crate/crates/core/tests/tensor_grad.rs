use armot::tensor::{finite_diff_check, FdOptions, OpKind, Tape, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn composite(tape: &mut Tape, p: &[Tensor]) -> armot::Result<Tensor> {
    let h = tape.matmul(&p[0], &p[1])?;
    let s = tape.softmax(&h, 1)?;
    let n = tape.layer_norm(&s, &p[2], &p[3], 1e-5)?;
    let m = tape.mean(&n, 0)?;
    let sq = tape.mul(&m, &m)?;
    Ok(tape.sum(&sq))
}

fn composite_params(a: Tensor, b: Tensor) -> Vec<(String, Tensor)> {
    let c = b.cols();
    let gain = Tensor::vector((0..c).map(|i| 0.5 + 0.1 * i as f64).collect());
    let bias = Tensor::vector((0..c).map(|i| 0.05 * i as f64 - 0.1).collect());
    vec![("a".into(), a), ("b".into(), b), ("gain".into(), gain), ("bias".into(), bias)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn composite_graph_matches_central_differences(a in matrix(3, 4), b in matrix(4, 5)) {
        let params = composite_params(a, b);
        let r = finite_diff_check(&params, composite, &FdOptions::default()).unwrap();
        prop_assert!(r.passed(1e-4), "max rel err {}", r.max_rel_err);
    }

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(4, 6)) {
        let mut tape = Tape::new();
        let s = tape.softmax(&x, 1).unwrap();
        for i in 0..4 {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_an_involution(x in matrix(3, 5)) {
        let mut tape = Tape::new();
        let t = tape.transpose(&x).unwrap();
        let tt = tape.transpose(&t).unwrap();
        prop_assert_eq!(tt.data(), x.data());
    }

    #[test]
    fn gradients_accumulate_at_fan_in(x in matrix(2, 3)) {
        // d/dx Σ(x + x) = 2
        let mut tape = Tape::new();
        let p = tape.param(&x);
        let y = tape.add(&p, &p).unwrap();
        let loss = tape.sum(&y);
        let g = tape.backward(&loss).unwrap();
        prop_assert!(g.get(&p).unwrap().data().iter().all(|&v| v == 2.0));
    }
}

#[test]
fn fault_injection_breaks_the_composite_check() {
    let a = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let b = Tensor::new(vec![4, 5], (0..20).map(|i| (i as f64 * 0.53).cos()).collect()).unwrap();
    let params = composite_params(a, b);
    for kind in [OpKind::MatMul, OpKind::Softmax, OpKind::LayerNorm, OpKind::Mean, OpKind::Mul, OpKind::Sum] {
        let opts = FdOptions { fault: Some(kind), ..FdOptions::default() };
        let r = finite_diff_check(&params, composite, &opts).unwrap();
        assert!(!r.passed(1e-4), "{} fault went unnoticed", kind.name());
    }
    assert!(finite_diff_check(&params, composite, &FdOptions::default()).unwrap().passed(1e-4));
}

#[test]
fn op_names_round_trip() {
    for k in OpKind::ALL {
        assert_eq!(OpKind::from_name(k.name()), Some(k));
    }
    assert_eq!(OpKind::from_name("nope"), None);
    assert_eq!(OpKind::differentiable().count(), OpKind::ALL.len() - 1);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let p = tape.param(&Tensor::vector(vec![1.0, 2.0]));
    assert!(tape.backward(&p).is_err());
}

#[test]
fn suite_detects_a_fault_in_every_backward_rule() {
    for kind in OpKind::differentiable() {
        let r = armot::verify::gradient_suite(1, Some(kind)).unwrap();
        assert!(!r.passed(), "{} fault went unnoticed", kind.name());
    }
}
