//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Built with `harness = false`; exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use armot::actl::{actl_loss_value, ReferenceLabels};
use armot::harness::{generate_scene, sample_expression, train_toy, TrainConfig};
use armot::matching::{
    focal_cls_loss, hungarian, select_referred, track_loss, BBox, FocalParams, LossWeights, Prediction,
    ReferThresholds,
};
use armot::metrics::{compute_hota, compute_idf1, compute_mota};
use armot::spectral::{gaussian_kernel, GaussianKernelSpec};
use armot::verify::{gradient_suite, spectral_suite, GRAD_SEEDS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn spectral_oracle() -> Outcome {
    let start = Instant::now();
    let r = match spectral_suite(0) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let t = start.elapsed();
    outcome(
        r.passed() && within(t, 10.0),
        format!(
            "fft vs naive {:.2e}, idft∘dft {:.2e}, convolution theorem {:.2e} (< 1e-9), {:.2}s (< 10s)",
            r.max_err("fft_vs_naive"),
            r.max_err("inverse_roundtrip"),
            r.max_err("convolution_theorem"),
            t.as_secs_f64()
        ),
    )
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let r = match gradient_suite(GRAD_SEEDS, None) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let t = start.elapsed();
    let failed = r.failures().count();
    outcome(
        r.passed() && within(t, 60.0),
        format!(
            "{} cases x {} seeds, {} failed, {} ops uncovered, max rel err {:.2e} (< 1e-4), {:.2}s (< 60s)",
            r.cases.len() as u64 / GRAD_SEEDS,
            GRAD_SEEDS,
            failed,
            r.uncovered.len(),
            r.max_rel_err,
            t.as_secs_f64()
        ),
    )
}

fn scalar_anchors() -> Outcome {
    let k = gaussian_kernel(
        &GaussianKernelSpec {
            mu: 0.0,
            sigma: 1.0,
            epsilon: 1.0,
        },
        8,
    )
    .map(|k| k[0])
    .unwrap_or(f64::NAN);
    let k_err = (k - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs();
    let neg = ReferenceLabels::new(1, 1, vec![false]).unwrap();
    let actl = actl_loss_value(&[0.5], &neg, 2.0).unwrap_or(f64::NAN);
    let actl_err = (actl - 0.173287).abs();
    let focal = focal_cls_loss(0.5, true, FocalParams { alpha: 0.25, gamma: 2.0 }).unwrap_or(f64::NAN);
    let focal_err = (focal - 0.043322).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bce_err = 0.0f64;
    for _ in 0..20 {
        let (n, m) = (rng.random_range(1..6), rng.random_range(1..4));
        let chi: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.01..0.99)).collect();
        let flags: Vec<bool> = (0..n * m).map(|_| rng.random_bool(0.4)).collect();
        let bce = chi
            .iter()
            .zip(&flags)
            .map(|(&c, &y)| if y { -c.ln() } else { -(1.0 - c).ln() })
            .sum::<f64>()
            / (n * m) as f64;
        let labels = ReferenceLabels::new(n, m, flags).unwrap();
        let v = actl_loss_value(&chi, &labels, 0.0).unwrap_or(f64::NAN);
        bce_err = bce_err.max((v - bce).abs());
    }
    outcome(
        k_err <= 1e-12 && actl_err <= 1e-6 && focal_err <= 1e-6 && bce_err <= 1e-12,
        format!(
            "kernel[0] err {k_err:.1e} (≤ 1e-12), actl {actl:.6} err {actl_err:.1e}, focal {focal:.6} err {focal_err:.1e} (≤ 1e-6), γ=0 vs BCE {bce_err:.1e} (≤ 1e-12)"
        ),
    )
}

fn matching_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut valid = true;
    for _ in 0..200 {
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let Ok(a) = hungarian(&cost) else {
            valid = false;
            continue;
        };
        let mut rows: Vec<usize> = a.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        let sum: f64 = a.pairs.iter().map(|&(i, j)| cost[i][j]).sum();
        valid &= a.pairs.len() == n.min(m) && rows.len() == a.pairs.len() && cols.len() == a.pairs.len();
        valid &= (sum - a.total).abs() < 1e-9;
        worst = worst.max((a.total - common::brute_force_min_cost(&cost)).abs());
    }
    let t = start.elapsed();
    outcome(
        valid && worst < 1e-9 && within(t, 5.0),
        format!("200 matrices up to 6x6, max |hungarian - brute force| {worst:.1e}, {:.3}s (< 5s)", t.as_secs_f64()),
    )
}

fn metric_oracles() -> Outcome {
    let mut perfect = true;
    for seed in 0..20 {
        let e = common::perfect_scenario(seed);
        let h = compute_hota(&e);
        perfect &= [h.hota, h.det_a, h.ass_a].iter().all(|&v| (v - 1.0).abs() < 1e-12);
        perfect &= compute_mota(&e).is_ok_and(|v| (v - 1.0).abs() < 1e-12);
        perfect &= compute_idf1(&e).is_ok_and(|v| (v - 1.0).abs() < 1e-12);
    }
    let s = common::single_switch_scenario();
    let h = compute_hota(&s);
    let mota = compute_mota(&s).unwrap_or(f64::NAN);
    let idf1 = compute_idf1(&s).unwrap_or(f64::NAN);
    let switch_ok = (h.hota - 0.5f64.sqrt()).abs() <= 1e-9 && (mota - 0.9).abs() <= 1e-12 && (idf1 - 0.5).abs() <= 1e-12;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let e = common::random_scenario(seed);
        let h = compute_hota(&e);
        let (bh, bd, ba) = common::brute_force_hota(&e);
        worst = worst.max((h.hota - bh).abs()).max((h.det_a - bd).abs()).max((h.ass_a - ba).abs());
    }
    outcome(
        perfect && switch_ok && worst <= 1e-9,
        format!(
            "perfect ⇒ 1.0: {perfect}; switch HOTA {:.12} MOTA {mota} IDF1 {idf1}; brute-force HOTA max diff {worst:.1e} (≤ 1e-9)",
            h.hota
        ),
    )
}

fn fixed_constants() -> Outcome {
    let w = LossWeights::default();
    let weights_ok = (w.cls, w.l1, w.iou, w.act) == (2.0, 5.0, 2.0, 2.0) && TrainConfig::default().lambdas == w;
    // total = Σ λ·term on a concrete one-pair problem
    let pred = Prediction {
        class_score: 0.6,
        referring_score: 0.7,
        bbox: BBox::new(0.5, 0.5, 0.2, 0.3),
    };
    let target = BBox::new(0.55, 0.45, 0.25, 0.3);
    let assignment = hungarian(&[vec![0.0]]).unwrap();
    let total_ok = match track_loss(&[pred], &[target], &assignment, &w, FocalParams::default(), 0.3) {
        Ok(l) => {
            let t = &l.terms;
            let manual = 2.0 * t.cls + 5.0 * t.l1 + 2.0 * t.iou + 2.0 * t.act;
            (l.total - manual).abs() < 1e-12
        }
        Err(_) => false,
    };
    let th = ReferThresholds::default();
    let p = |c: f64, r: f64| Prediction {
        class_score: c,
        referring_score: r,
        bbox: BBox::new(0.5, 0.5, 0.1, 0.1),
    };
    let rule_ok = (th.class, th.refer) == (0.7, 0.5)
        && select_referred(&p(0.71, 0.51), &th)
        && !select_referred(&p(0.7, 0.9), &th)
        && !select_referred(&p(0.9, 0.5), &th)
        && !select_referred(&p(0.69, 0.99), &th);
    outcome(
        weights_ok && total_ok && rule_ok,
        format!("λ = (2, 5, 2, 2): {weights_ok}; total = Σλ·term: {total_ok}; strict 0.7/0.5 rule: {rule_ok}"),
    )
}

fn learning_signal() -> Outcome {
    let start = Instant::now();
    let (mut acc, mut pos, mut neg) = (0.0, 0.0, 0.0);
    let seeds = 5;
    for seed in 0..seeds {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let scene = match generate_scene(&cfg.scene_spec()) {
            Ok(s) => s,
            Err(e) => return outcome(false, e.to_string()),
        };
        let expression = sample_expression(&scene, seed);
        match train_toy(&cfg, &scene, &expression) {
            Ok(out) => {
                acc += out.eval.referring_accuracy / seeds as f64;
                pos += out.eval.mean_chi_positive / seeds as f64;
                neg += out.eval.mean_chi_negative / seeds as f64;
            }
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let t = start.elapsed();
    outcome(
        pos > neg && acc >= 0.9 && within(t, 300.0),
        format!(
            "5 seeds x 300 steps, noise 0.05: mean χ+ {pos:.4} > χ- {neg:.4}, referring accuracy {acc:.4} (≥ 0.9), {:.1}s (< 300s)",
            t.as_secs_f64()
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_armot"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Every file under `root`, relative path and bytes, sorted by path.
fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let Ok(entries) = std::fs::read_dir(dir) else {
            return;
        };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(&p, root, out);
            } else if let Ok(bytes) = std::fs::read(&p) {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), bytes));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"seed": 2, "steps": 60}"#).unwrap();
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        let sim = root.join("sim");
        let train = root.join("train");
        let ok = run_cli(&["simulate", "--seed", "5", "--out", sim.to_str().unwrap()])
            && run_cli(&["train-toy", config.to_str().unwrap(), "--out", train.to_str().unwrap()])
            && run_cli(&["eval", train.to_str().unwrap()])
            && run_cli(&["eval", sim.to_str().unwrap()]);
        if !ok {
            return outcome(false, format!("a CLI run failed in pass `{run}`"));
        }
        runs.push(snapshot(&root));
    }
    let files = runs[0].len();
    let same = runs[0] == runs[1];
    outcome(
        same && files > 0,
        format!("simulate + train-toy + eval twice: {files} files, byte-identical: {same}"),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("spectral oracle", spectral_oracle),
        ("gradient suite", gradient_checks),
        ("scalar anchors", scalar_anchors),
        ("matching oracle", matching_oracle),
        ("metric oracles", metric_oracles),
        ("fixed constants", fixed_constants),
        ("learning signal", learning_signal),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.passed {
            failures += 1;
        }
        println!(
            "{} criterion {} ({name}): {}",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
