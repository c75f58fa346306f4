//! Independent oracles and scenario builders shared by the integration
//! tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::HashMap;

use armot::metrics::{alpha_levels, ExpressionEval, Rect, TrackRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum total cost over every assignment of `min(n, m)` pairs, by
/// enumeration.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return 0.0;
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        return brute_force_min_cost(&t);
    }
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; m], 0.0, &mut best);
    best
}

fn rect_iou(a: &Rect, b: &Rect) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Best partial matching of one frame: every pair has IoU ≥ α and the
/// summed IoU is maximal, found by enumerating all injections.
fn best_frame_matching(gt: &[TrackRecord], pred: &[TrackRecord], alpha: f64) -> Vec<(usize, usize)> {
    #[allow(clippy::too_many_arguments)]
    fn go(
        gt: &[TrackRecord],
        pred: &[TrackRecord],
        alpha: f64,
        i: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        score: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if i == gt.len() {
            if score > best.0 + 1e-12 {
                *best = (score, cur.clone());
            }
            return;
        }
        go(gt, pred, alpha, i + 1, used, cur, score, best);
        for j in 0..pred.len() {
            let iou = rect_iou(&gt[i].rect, &pred[j].rect);
            if !used[j] && iou >= alpha {
                used[j] = true;
                cur.push((i, j));
                go(gt, pred, alpha, i + 1, used, cur, score + iou, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0.0, Vec::new());
    go(gt, pred, alpha, 0, &mut vec![false; pred.len()], &mut Vec::new(), 0.0, &mut best);
    best.1
}

/// HOTA, DetA and AssA computed literally from their definitions.
pub fn brute_force_hota(eval: &ExpressionEval) -> (f64, f64, f64) {
    if eval.gt.is_empty() && eval.pred.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let mut frames: Vec<u32> = eval.gt.iter().chain(&eval.pred).map(|r| r.frame).collect();
    frames.sort_unstable();
    frames.dedup();
    let levels = alpha_levels();
    let (mut h, mut d, mut a) = (0.0, 0.0, 0.0);
    for &alpha in &levels {
        // every true positive as (gt id, pred id)
        let mut tps: Vec<(u64, u64)> = Vec::new();
        for &f in &frames {
            let g: Vec<TrackRecord> = eval.gt.iter().filter(|r| r.frame == f).copied().collect();
            let p: Vec<TrackRecord> = eval.pred.iter().filter(|r| r.frame == f).copied().collect();
            for (i, j) in best_frame_matching(&g, &p, alpha) {
                tps.push((g[i].track_id, p[j].track_id));
            }
        }
        let tp = tps.len() as f64;
        let fn_ = eval.gt.len() as f64 - tp;
        let fp = eval.pred.len() as f64 - tp;
        let det = tp / (tp + fn_ + fp);
        let ass = if tps.is_empty() {
            0.0
        } else {
            tps.iter()
                .map(|&(g, p)| {
                    let tpa = tps.iter().filter(|&&x| x == (g, p)).count() as f64;
                    let gt_len = eval.gt.iter().filter(|r| r.track_id == g).count() as f64;
                    let pred_len = eval.pred.iter().filter(|r| r.track_id == p).count() as f64;
                    tpa / (tpa + (gt_len - tpa) + (pred_len - tpa))
                })
                .sum::<f64>()
                / tp
        };
        h += (det * ass).sqrt();
        d += det;
        a += ass;
    }
    let n = levels.len() as f64;
    (h / n, d / n, a / n)
}

pub fn record(frame: u32, id: u64, x: f64, y: f64, w: f64, h: f64) -> TrackRecord {
    TrackRecord {
        frame,
        track_id: id,
        rect: Rect { x, y, w, h },
        confidence: 1.0,
    }
}

/// One ground-truth track over 10 frames, exact boxes, predicted id 1 for
/// frames 1–5 and id 2 for frames 6–10.
pub fn single_switch_scenario() -> ExpressionEval {
    let gt = (1..=10).map(|f| record(f, 7, 10.0 * f as f64, 20.0, 40.0, 80.0)).collect();
    let pred = (1..=10)
        .map(|f| record(f, if f <= 5 { 1 } else { 2 }, 10.0 * f as f64, 20.0, 40.0, 80.0))
        .collect();
    ExpressionEval::new("switch", gt, pred).unwrap()
}

/// Up to 3 linearly moving tracks over up to 12 frames.
pub fn random_ground_truth(rng: &mut ChaCha8Rng) -> Vec<TrackRecord> {
    let n_tracks = rng.random_range(1..=3);
    let n_frames = rng.random_range(1..=12);
    let mut gt = Vec::new();
    for id in 0..n_tracks as u64 {
        let (x0, y0) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let (vx, vy) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let (w, h) = (rng.random_range(20.0..60.0), rng.random_range(20.0..60.0));
        let start = rng.random_range(1..=n_frames);
        let end = rng.random_range(start..=n_frames);
        for f in start..=end {
            let t = f as f64;
            gt.push(record(f, id + 1, x0 + vx * t, y0 + vy * t, w, h));
        }
    }
    gt
}

/// Jittered, occasionally dropped, relabelled or spurious predictions.
pub fn random_scenario(seed: u64) -> ExpressionEval {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_ground_truth(&mut rng);
    let mut pred = Vec::new();
    let mut relabel: HashMap<u64, u64> = HashMap::new();
    for g in &gt {
        if rng.random_bool(0.15) {
            continue;
        }
        if rng.random_bool(0.1) {
            relabel.insert(g.track_id, rng.random_range(10..13));
        }
        let id = *relabel.get(&g.track_id).unwrap_or(&g.track_id);
        if pred.iter().any(|p: &TrackRecord| p.frame == g.frame && p.track_id == id) {
            continue;
        }
        let j = |rng: &mut ChaCha8Rng, s: f64| rng.random_range(-s..s);
        pred.push(record(
            g.frame,
            id,
            g.rect.x + j(&mut rng, 12.0),
            g.rect.y + j(&mut rng, 12.0),
            g.rect.w * (1.0 + j(&mut rng, 0.3)),
            g.rect.h * (1.0 + j(&mut rng, 0.3)),
        ));
    }
    let frames: Vec<u32> = gt.iter().map(|r| r.frame).collect();
    for &f in &frames {
        if rng.random_bool(0.1) {
            let id = 20 + rng.random_range(0..2);
            if !pred.iter().any(|p| p.frame == f && p.track_id == id) {
                pred.push(record(f, id, rng.random_range(0.0..200.0), rng.random_range(0.0..200.0), 30.0, 30.0));
            }
        }
    }
    ExpressionEval::new(format!("random-{seed}"), gt, pred).unwrap()
}

/// Random ground truth with predictions equal to it.
pub fn perfect_scenario(seed: u64) -> ExpressionEval {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_ground_truth(&mut rng);
    ExpressionEval::new(format!("perfect-{seed}"), gt.clone(), gt).unwrap()
}
