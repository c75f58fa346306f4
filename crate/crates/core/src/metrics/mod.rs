//! Referring-MOT evaluation: HOTA/DetA/AssA over an IoU sweep, CLEAR MOTA,
//! IDF1, per-expression evaluation and averaging over expressions.

pub mod mot;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{hungarian, iou_giou, BBox};

pub use mot::{format_mot, parse_mot, read_mot, write_mot};

/// IoU threshold of the CLEAR and identity metrics.
pub const CLEAR_THRESHOLD: f64 = 0.5;

/// The 19 HOTA localization thresholds `0.05, 0.10, …, 0.95`.
pub fn alpha_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Box by top-left corner and size (pixels or normalized; IoU does not care).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn iou(&self, other: &Rect) -> f64 {
        iou_giou(
            &BBox::from_xywh(self.x, self.y, self.w, self.h),
            &BBox::from_xywh(other.x, other.y, other.w, other.h),
        )
        .0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: u32,
    pub track_id: u64,
    pub rect: Rect,
    pub confidence: f64,
}

/// Ground truth and predictions of one expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionEval {
    pub expression: String,
    pub gt: Vec<TrackRecord>,
    pub pred: Vec<TrackRecord>,
}

impl ExpressionEval {
    pub fn new(expression: impl Into<String>, gt: Vec<TrackRecord>, pred: Vec<TrackRecord>) -> Result<Self> {
        let e = Self {
            expression: expression.into(),
            gt,
            pred,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        for (side, recs) in [("ground truth", &self.gt), ("predictions", &self.pred)] {
            let mut seen = std::collections::HashSet::new();
            for r in recs {
                if r.frame == 0 {
                    return Err(Error::invalid(format!("{side}: frame 0 (frames are 1-indexed)")));
                }
                if !seen.insert((r.frame, r.track_id)) {
                    return Err(Error::invalid(format!(
                        "{side}: duplicate record for frame {}, id {}",
                        r.frame, r.track_id
                    )));
                }
            }
        }
        Ok(())
    }

    fn is_vacuous(&self) -> bool {
        self.gt.is_empty() && self.pred.is_empty()
    }

    /// Records grouped per frame, each side sorted by id.
    fn frames(&self) -> BTreeMap<u32, (Vec<TrackRecord>, Vec<TrackRecord>)> {
        let mut map: BTreeMap<u32, (Vec<TrackRecord>, Vec<TrackRecord>)> = BTreeMap::new();
        for r in &self.gt {
            map.entry(r.frame).or_default().0.push(*r);
        }
        for r in &self.pred {
            map.entry(r.frame).or_default().1.push(*r);
        }
        for (g, p) in map.values_mut() {
            g.sort_by_key(|r| r.track_id);
            p.sort_by_key(|r| r.track_id);
        }
        map
    }
}

/// Index pairs `(gt, pred)` of one frame maximizing total IoU among pairs
/// with `IoU ≥ alpha`; pairs below `alpha` are never matched.
pub fn match_frames(gt: &[TrackRecord], pred: &[TrackRecord], alpha: f64) -> Vec<(usize, usize)> {
    if gt.is_empty() || pred.is_empty() {
        return Vec::new();
    }
    let iou: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| pred.iter().map(|p| g.rect.iou(&p.rect)).collect())
        .collect();
    let cost: Vec<Vec<f64>> = iou
        .iter()
        .map(|row| row.iter().map(|&v| if v >= alpha { -v } else { 0.0 }).collect())
        .collect();
    let assignment = hungarian(&cost).expect("IoU costs are finite and rectangular");
    assignment
        .pairs
        .into_iter()
        .filter(|&(i, j)| iou[i][j] >= alpha)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hota {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
}

/// HOTA, DetA and AssA, each averaged over [`alpha_levels`].
pub fn compute_hota(eval: &ExpressionEval) -> Hota {
    if eval.is_vacuous() {
        log::warn!(
            "expression `{}` has no ground truth and no predictions; scoring HOTA as 1.0",
            eval.expression
        );
        return Hota {
            hota: 1.0,
            det_a: 1.0,
            ass_a: 1.0,
        };
    }
    let frames = eval.frames();
    let mut gt_count: HashMap<u64, usize> = HashMap::new();
    let mut pred_count: HashMap<u64, usize> = HashMap::new();
    for r in &eval.gt {
        *gt_count.entry(r.track_id).or_default() += 1;
    }
    for r in &eval.pred {
        *pred_count.entry(r.track_id).or_default() += 1;
    }
    let levels = alpha_levels();
    let (mut hota, mut det_a, mut ass_a) = (0.0, 0.0, 0.0);
    for &alpha in &levels {
        let mut pair_tp: HashMap<(u64, u64), usize> = HashMap::new();
        let mut tp = 0usize;
        for (g, p) in frames.values() {
            for (i, j) in match_frames(g, p, alpha) {
                *pair_tp.entry((g[i].track_id, p[j].track_id)).or_default() += 1;
                tp += 1;
            }
        }
        let fn_ = eval.gt.len() - tp;
        let fp = eval.pred.len() - tp;
        let det = tp as f64 / (tp + fn_ + fp) as f64;
        let ass = if tp == 0 {
            0.0
        } else {
            pair_tp
                .iter()
                .map(|(&(g, p), &tpa)| {
                    let fna = gt_count[&g] - tpa;
                    let fpa = pred_count[&p] - tpa;
                    tpa as f64 * tpa as f64 / (tpa + fna + fpa) as f64
                })
                .sum::<f64>()
                / tp as f64
        };
        hota += (det * ass).sqrt();
        det_a += det;
        ass_a += ass;
    }
    let n = levels.len() as f64;
    Hota {
        hota: hota / n,
        det_a: det_a / n,
        ass_a: ass_a / n,
    }
}

/// CLEAR error counts at IoU ≥ 0.5.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClearCounts {
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
}

/// CLEAR matching: last frame's correspondences persist while their IoU
/// stays ≥ 0.5; the rest are matched by Hungarian. An identity switch is a
/// ground-truth track matched to a different id than at its previous match.
pub fn clear_counts(eval: &ExpressionEval) -> ClearCounts {
    let mut counts = ClearCounts {
        gt: eval.gt.len(),
        ..Default::default()
    };
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut prev_frame: HashMap<u64, u64> = HashMap::new();
    for (g, p) in eval.frames().values() {
        let mut gt_used = vec![false; g.len()];
        let mut pred_used = vec![false; p.len()];
        let mut matches: Vec<(usize, usize)> = Vec::new();
        for (i, gr) in g.iter().enumerate() {
            if let Some(&pid) = prev_frame.get(&gr.track_id) {
                if let Some(j) = p.iter().position(|pr| pr.track_id == pid) {
                    if gr.rect.iou(&p[j].rect) >= CLEAR_THRESHOLD {
                        gt_used[i] = true;
                        pred_used[j] = true;
                        matches.push((i, j));
                    }
                }
            }
        }
        let gi: Vec<usize> = (0..g.len()).filter(|&i| !gt_used[i]).collect();
        let pj: Vec<usize> = (0..p.len()).filter(|&j| !pred_used[j]).collect();
        let sub_g: Vec<TrackRecord> = gi.iter().map(|&i| g[i]).collect();
        let sub_p: Vec<TrackRecord> = pj.iter().map(|&j| p[j]).collect();
        for (a, b) in match_frames(&sub_g, &sub_p, CLEAR_THRESHOLD) {
            matches.push((gi[a], pj[b]));
        }
        prev_frame.clear();
        for &(i, j) in &matches {
            let (gid, pid) = (g[i].track_id, p[j].track_id);
            if let Some(&last) = last_match.get(&gid) {
                if last != pid {
                    counts.idsw += 1;
                }
            }
            last_match.insert(gid, pid);
            prev_frame.insert(gid, pid);
        }
        counts.tp += matches.len();
        counts.fn_ += g.len() - matches.len();
        counts.fp += p.len() - matches.len();
    }
    counts
}

/// `1 − (FN + FP + IDSW) / GT`; undefined when there is no ground truth
/// but there are predictions.
pub fn compute_mota(eval: &ExpressionEval) -> Result<f64> {
    mota_from(&clear_counts(eval), eval)
}

fn mota_from(c: &ClearCounts, eval: &ExpressionEval) -> Result<f64> {
    if c.gt == 0 {
        if eval.pred.is_empty() {
            log::warn!(
                "expression `{}` has no ground truth and no predictions; scoring MOTA as 1.0",
                eval.expression
            );
            return Ok(1.0);
        }
        return Err(Error::Undefined(format!(
            "MOTA of `{}`: no ground truth but {} predictions",
            eval.expression,
            eval.pred.len()
        )));
    }
    Ok(1.0 - (c.fn_ + c.fp + c.idsw) as f64 / c.gt as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdCounts {
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// Optimal one-to-one id assignment maximizing the number of frames in
/// which the paired tracks overlap at IoU ≥ 0.5.
pub fn id_counts(eval: &ExpressionEval) -> IdCounts {
    let mut gt_ids: Vec<u64> = eval.gt.iter().map(|r| r.track_id).collect();
    let mut pred_ids: Vec<u64> = eval.pred.iter().map(|r| r.track_id).collect();
    gt_ids.sort_unstable();
    gt_ids.dedup();
    pred_ids.sort_unstable();
    pred_ids.dedup();
    let gpos: HashMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let ppos: HashMap<u64, usize> = pred_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut overlap = vec![vec![0.0; pred_ids.len()]; gt_ids.len()];
    for (g, p) in eval.frames().values() {
        for gr in g {
            for pr in p {
                if gr.rect.iou(&pr.rect) >= CLEAR_THRESHOLD {
                    overlap[gpos[&gr.track_id]][ppos[&pr.track_id]] += 1.0;
                }
            }
        }
    }
    let cost: Vec<Vec<f64>> = overlap
        .iter()
        .map(|row| row.iter().map(|v| -v).collect())
        .collect();
    let idtp = hungarian(&cost)
        .expect("overlap counts are finite")
        .pairs
        .iter()
        .map(|&(i, j)| overlap[i][j] as usize)
        .sum();
    IdCounts {
        idtp,
        idfp: eval.pred.len() - idtp,
        idfn: eval.gt.len() - idtp,
    }
}

/// `2·IDTP / (2·IDTP + IDFP + IDFN)`; undefined like [`compute_mota`].
pub fn compute_idf1(eval: &ExpressionEval) -> Result<f64> {
    idf1_from(&id_counts(eval), eval)
}

fn idf1_from(c: &IdCounts, eval: &ExpressionEval) -> Result<f64> {
    if eval.gt.is_empty() {
        if eval.pred.is_empty() {
            log::warn!(
                "expression `{}` has no ground truth and no predictions; scoring IDF1 as 1.0",
                eval.expression
            );
            return Ok(1.0);
        }
        return Err(Error::Undefined(format!(
            "IDF1 of `{}`: no ground truth but {} predictions",
            eval.expression,
            eval.pred.len()
        )));
    }
    Ok(2.0 * c.idtp as f64 / (2 * c.idtp + c.idfp + c.idfn) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub idsw: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl ErrorCounts {
    fn add(&mut self, o: &ErrorCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
    }
}

/// Metrics of one expression. `mota`/`idf1` are `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionReport {
    pub expression: String,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub mota: Option<f64>,
    pub idf1: Option<f64>,
    pub counts: ErrorCounts,
}

pub fn evaluate_expression(eval: &ExpressionEval) -> Result<ExpressionReport> {
    eval.validate()?;
    let h = compute_hota(eval);
    let clear = clear_counts(eval);
    let ids = id_counts(eval);
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(msg)) => {
            log::warn!("{msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    };
    Ok(ExpressionReport {
        expression: eval.expression.clone(),
        hota: h.hota,
        det_a: h.det_a,
        ass_a: h.ass_a,
        mota: defined(mota_from(&clear, eval))?,
        idf1: defined(idf1_from(&ids, eval))?,
        counts: ErrorCounts {
            tp: clear.tp,
            fp: clear.fp,
            fn_: clear.fn_,
            idsw: clear.idsw,
            idtp: ids.idtp,
            idfp: ids.idfp,
            idfn: ids.idfn,
        },
    })
}

/// Evaluates expressions in parallel; output order follows input order.
pub fn evaluate_all(evals: &[ExpressionEval]) -> Result<Vec<ExpressionReport>> {
    evals.par_iter().map(evaluate_expression).collect()
}

/// Per-expression metrics plus their arithmetic means and summed counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    /// Mean over expressions where MOTA is defined.
    pub mota: Option<f64>,
    pub idf1: Option<f64>,
    pub counts: ErrorCounts,
    pub expressions: Vec<ExpressionReport>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate_report(per_expression: Vec<ExpressionReport>) -> Result<MetricReport> {
    if per_expression.is_empty() {
        return Err(Error::invalid("cannot aggregate zero expressions"));
    }
    let mut counts = ErrorCounts::default();
    for e in &per_expression {
        counts.add(&e.counts);
    }
    let all = |f: fn(&ExpressionReport) -> f64| mean(per_expression.iter().map(f)).unwrap_or(0.0);
    Ok(MetricReport {
        hota: all(|e| e.hota),
        det_a: all(|e| e.det_a),
        ass_a: all(|e| e.ass_a),
        mota: mean(per_expression.iter().filter_map(|e| e.mota)),
        idf1: mean(per_expression.iter().filter_map(|e| e.idf1)),
        counts,
        expressions: per_expression,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per expression followed by a `mean` row; undefined values
    /// are left empty.
    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        let mut s = String::from("expression,hota,deta,assa,mota,idf1,tp,fp,fn,idsw,idtp,idfp,idfn\n");
        let mut row = |name: &str, h: f64, d: f64, a: f64, m: Option<f64>, i: Option<f64>, c: &ErrorCounts| {
            let _ = writeln!(
                s,
                "{name},{h},{d},{a},{},{},{},{},{},{},{},{},{}",
                opt(m),
                opt(i),
                c.tp,
                c.fp,
                c.fn_,
                c.idsw,
                c.idtp,
                c.idfp,
                c.idfn
            );
        };
        for e in &self.expressions {
            row(&e.expression, e.hota, e.det_a, e.ass_a, e.mota, e.idf1, &e.counts);
        }
        row("mean", self.hota, self.det_a, self.ass_a, self.mota, self.idf1, &self.counts);
        s
    }
}

/// Loads every `<root>/<expression>/{gt,pred}.txt` pair, sorted by
/// expression name.
pub fn load_eval_dir(root: &Path) -> Result<Vec<ExpressionEval>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("gt.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!(
            "no `<expression>/gt.txt` found under {}",
            root.display()
        )));
    }
    dirs.iter()
        .map(|d| {
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let pred_path = d.join("pred.txt");
            let pred = if pred_path.is_file() { read_mot(&pred_path)? } else { Vec::new() };
            ExpressionEval::new(name, read_mot(&d.join("gt.txt"))?, pred)
        })
        .collect()
}
