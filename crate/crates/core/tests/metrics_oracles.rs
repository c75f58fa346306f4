mod common;

use armot::metrics::{
    aggregate_report, compute_hota, compute_idf1, compute_mota, evaluate_all, evaluate_expression, format_mot,
    load_eval_dir, match_frames, parse_mot, write_mot, ExpressionEval,
};
use common::record;
use proptest::prelude::*;

#[test]
fn single_switch_scenario_values() {
    let s = common::single_switch_scenario();
    let h = compute_hota(&s);
    assert!((h.det_a - 1.0).abs() < 1e-12);
    assert!((h.ass_a - 0.5).abs() < 1e-12);
    assert!((h.hota - 0.5f64.sqrt()).abs() < 1e-9);
    assert!((compute_mota(&s).unwrap() - 0.9).abs() < 1e-12);
    assert!((compute_idf1(&s).unwrap() - 0.5).abs() < 1e-12);
    let r = evaluate_expression(&s).unwrap();
    assert_eq!((r.counts.idsw, r.counts.idtp, r.counts.idfp, r.counts.idfn), (1, 5, 5, 5));
}

#[test]
fn hota_matches_brute_force() {
    for seed in 0..40 {
        let e = common::random_scenario(seed);
        let h = compute_hota(&e);
        let (bh, bd, ba) = common::brute_force_hota(&e);
        assert!((h.hota - bh).abs() < 1e-9, "seed {seed}: {} vs {bh}", h.hota);
        assert!((h.det_a - bd).abs() < 1e-9);
        assert!((h.ass_a - ba).abs() < 1e-9);
    }
}

#[test]
fn empty_cases() {
    let gt: Vec<_> = (1..=4).map(|f| record(f, 1, 0.0, 0.0, 10.0, 10.0)).collect();
    let none = ExpressionEval::new("none", gt.clone(), Vec::new()).unwrap();
    assert_eq!(compute_hota(&none).hota, 0.0);
    assert_eq!(compute_mota(&none).unwrap(), 0.0);
    assert_eq!(compute_idf1(&none).unwrap(), 0.0);
    let vacuous = ExpressionEval::new("vacuous", Vec::new(), Vec::new()).unwrap();
    assert_eq!(compute_hota(&vacuous).hota, 1.0);
    let ghost = ExpressionEval::new("ghost", Vec::new(), gt).unwrap();
    assert!(compute_mota(&ghost).is_err());
    assert!(compute_idf1(&ghost).is_err());
    let r = evaluate_expression(&ghost).unwrap();
    assert_eq!((r.mota, r.idf1, r.hota), (None, None, 0.0));
}

#[test]
fn match_frames_threshold_and_ambiguity() {
    let g = [record(1, 1, 0.0, 0.0, 10.0, 10.0)];
    // IoU 0.3 style overlap: shifted box
    let p = [record(1, 9, 5.4, 0.0, 10.0, 10.0)];
    let iou = 4.6 / 15.4;
    assert!(match_frames(&g, &p, iou + 1e-9).is_empty());
    assert_eq!(match_frames(&g, &p, iou - 1e-9), vec![(0, 0)]);
    // greedy would pair gt0 with pred0 (IoU 0.8); the optimum crosses
    let g = [record(1, 1, 0.0, 0.0, 10.0, 10.0), record(1, 2, 2.0, 0.0, 10.0, 10.0)];
    let p = [record(1, 1, 1.0, 0.0, 10.0, 10.0), record(1, 2, -1.5, 0.0, 10.0, 10.0)];
    assert_eq!(match_frames(&g, &p, 0.05), vec![(0, 1), (1, 0)]);
}

#[test]
fn aggregate_is_the_arithmetic_mean() {
    let a = evaluate_expression(&common::single_switch_scenario()).unwrap();
    let b = evaluate_expression(&common::perfect_scenario(1)).unwrap();
    let r = aggregate_report(vec![a.clone(), b.clone()]).unwrap();
    assert!((r.hota - (a.hota + b.hota) / 2.0).abs() < 1e-15);
    let swapped = aggregate_report(vec![b, a]).unwrap();
    assert!((r.hota - swapped.hota).abs() < 1e-15);
    assert!(aggregate_report(Vec::new()).is_err());
    assert!(r.to_csv().lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn eval_dir_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::single_switch_scenario();
    let sub = dir.path().join("switch");
    std::fs::create_dir_all(&sub).unwrap();
    write_mot(&sub.join("gt.txt"), &s.gt).unwrap();
    write_mot(&sub.join("pred.txt"), &s.pred).unwrap();
    let loaded = load_eval_dir(dir.path()).unwrap();
    assert_eq!(loaded.len(), 1);
    let r = aggregate_report(evaluate_all(&loaded).unwrap()).unwrap();
    assert!((r.hota - 0.5f64.sqrt()).abs() < 1e-9);
    assert!(load_eval_dir(&dir.path().join("missing")).is_err());
}

#[test]
fn parse_errors_name_the_line() {
    let err = parse_mot("1,1,0,0,10,10,1\n2,x,0,0,10,10,1\n", "pred.txt").unwrap_err();
    assert!(err.to_string().contains("pred.txt:2"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perfect_tracking_scores_one(seed in any::<u64>()) {
        let e = common::perfect_scenario(seed);
        let h = compute_hota(&e);
        prop_assert!((h.hota - 1.0).abs() < 1e-12);
        prop_assert!((compute_mota(&e).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((compute_idf1(&e).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rates_stay_in_unit_interval(seed in any::<u64>()) {
        let e = common::random_scenario(seed);
        let h = compute_hota(&e);
        for v in [h.hota, h.det_a, h.ass_a] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let idf1 = compute_idf1(&e).unwrap();
        prop_assert!((0.0..=1.0).contains(&idf1));
        prop_assert!(compute_mota(&e).unwrap() <= 1.0);
    }

    #[test]
    fn removing_a_correct_prediction_never_raises_deta(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let e = common::perfect_scenario(seed);
        let mut pred = e.pred.clone();
        pred.remove(pick.index(pred.len()));
        let fewer = ExpressionEval::new("fewer", e.gt.clone(), pred).unwrap();
        prop_assert!(compute_hota(&fewer).det_a <= compute_hota(&e).det_a + 1e-15);
    }

    #[test]
    fn mot_text_round_trips(seed in any::<u64>()) {
        let e = common::random_scenario(seed);
        let text = format_mot(&e.pred);
        prop_assert_eq!(parse_mot(&text, "x").unwrap(), e.pred);
    }
}
