//! Set-prediction matching and the composite tracking loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::focal;

/// Axis-aligned box in normalized center-size form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// From top-left corner plus size.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            cx: x + w / 2.0,
            cy: y + h / 2.0,
            w,
            h,
        }
    }

    /// `(x1, y1, x2, y2)`
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

/// `(IoU, GIoU)`. Boxes with no area give IoU 0.
pub fn iou_giou(a: &BBox, b: &BBox) -> (f64, f64) {
    let p = a.corners();
    let q = b.corners();
    let iw = (p[2].min(q[2]) - p[0].max(q[0])).max(0.0);
    let ih = (p[3].min(q[3]) - p[1].max(q[1])).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let hull = (p[2].max(q[2]) - p[0].min(q[0])) * (p[3].max(q[3]) - p[1].min(q[1]));
    let giou = if hull > 0.0 {
        iou - (hull - union) / hull
    } else {
        iou
    };
    (iou, giou)
}

/// Minimum-cost assignment; `pairs` are `(row, col)` sorted by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

impl Assignment {
    /// Column matched to `row`, if any.
    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|(r, _)| *r == row).map(|(_, c)| *c)
    }

    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|(_, c)| *c == col).map(|(r, _)| *r)
    }
}

/// Hungarian algorithm (shortest augmenting paths with potentials),
/// `O(n²m)`. Assigns `min(N, M)` pairs. Ties are broken by scan order:
/// rows are inserted in increasing order and the lowest column wins
/// among equal reduced costs.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::shape("hungarian", "ragged cost matrix"));
    }
    for (i, row) in cost.iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite cost at ({i}, {j})")));
        }
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total: 0.0,
        });
    }
    let pairs = if rows <= cols {
        solve(rows, cols, |i, j| cost[i][j])
    } else {
        let mut flipped: Vec<(usize, usize)> = solve(cols, rows, |i, j| cost[j][i])
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        flipped.sort_unstable();
        flipped
    };
    let total = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    Ok(Assignment { pairs, total })
}

fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based potentials; column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Weights of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub l1: f64,
    pub iou: f64,
    pub act: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            l1: 5.0,
            iou: 2.0,
            act: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.cls, self.l1, self.iou, self.act].iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Focal loss hyperparameters for classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// `y=1: -α(1-p)^γ ln p`, `y=0: -(1-α)p^γ ln(1-p)`.
pub fn focal_cls_loss(p: f64, y: bool, params: FocalParams) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("focal loss needs p in (0, 1), got {p}")));
    }
    Ok(focal::term(p, y, params.alpha, 1.0 - params.alpha, params.gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_score: f64,
    pub referring_score: f64,
    pub bbox: BBox,
}

/// Decision thresholds for reporting a referred object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferThresholds {
    pub class: f64,
    pub refer: f64,
}

impl Default for ReferThresholds {
    fn default() -> Self {
        Self {
            class: 0.7,
            refer: 0.5,
        }
    }
}

/// Strict `class > 0.7 && refer > 0.5` (with the default thresholds).
pub fn select_referred(pred: &Prediction, thresholds: &ReferThresholds) -> bool {
    pred.class_score > thresholds.class && pred.referring_score > thresholds.refer
}

/// Unweighted loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub cls: f64,
    pub l1: f64,
    pub iou: f64,
    pub act: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.cls * self.cls + w.l1 * self.l1 + w.iou * self.iou + w.act * self.act
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackLoss {
    pub total: f64,
    pub terms: LossTerms,
}

/// Mean absolute coordinate error over the four box coordinates.
pub fn l1_box(a: &BBox, b: &BBox) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / 4.0
}

/// Matching cost between every prediction (rows) and target (columns):
/// `λ_cls·(focal(p,1) - focal(p,0)) + λ_l1·L1 + λ_iou·(1 - GIoU)`.
pub fn matching_cost(
    preds: &[Prediction],
    targets: &[BBox],
    weights: &LossWeights,
    focal_params: FocalParams,
) -> Result<Vec<Vec<f64>>> {
    preds
        .iter()
        .map(|p| {
            let cls = focal_cls_loss(p.class_score, true, focal_params)?
                - focal_cls_loss(p.class_score, false, focal_params)?;
            Ok(targets
                .iter()
                .map(|t| {
                    weights.cls * cls
                        + weights.l1 * l1_box(&p.bbox, t)
                        + weights.iou * (1.0 - iou_giou(&p.bbox, t).1)
                })
                .collect())
        })
        .collect()
}

/// `λ_cls·L_cls + λ_l1·L_l1 + λ_iou·L_iou + λ_act·L_act`.
///
/// `L_cls` averages the focal term over every prediction (matched ones are
/// positives, the rest negatives); `L_l1` and `L_iou` average over matched
/// pairs. `assignment` pairs are `(prediction, target)`.
pub fn track_loss(
    preds: &[Prediction],
    targets: &[BBox],
    assignment: &Assignment,
    weights: &LossWeights,
    focal_params: FocalParams,
    actl: f64,
) -> Result<TrackLoss> {
    weights.validate()?;
    let mut matched = vec![false; preds.len()];
    let mut seen_targets = vec![false; targets.len()];
    for &(p, t) in &assignment.pairs {
        if p >= preds.len() || t >= targets.len() || matched[p] || seen_targets[t] {
            return Err(Error::invalid(format!("invalid assignment pair ({p}, {t})")));
        }
        matched[p] = true;
        seen_targets[t] = true;
    }
    let cls = if preds.is_empty() {
        0.0
    } else {
        preds
            .iter()
            .zip(&matched)
            .map(|(p, &m)| focal_cls_loss(p.class_score, m, focal_params))
            .sum::<Result<f64>>()?
            / preds.len() as f64
    };
    let n_pairs = assignment.pairs.len();
    let (l1, iou) = if n_pairs == 0 {
        (0.0, 0.0)
    } else {
        let l1: f64 = assignment
            .pairs
            .iter()
            .map(|&(p, t)| l1_box(&preds[p].bbox, &targets[t]))
            .sum();
        let iou: f64 = assignment
            .pairs
            .iter()
            .map(|&(p, t)| 1.0 - iou_giou(&preds[p].bbox, &targets[t]).1)
            .sum();
        (l1 / n_pairs as f64, iou / n_pairs as f64)
    };
    let terms = LossTerms {
        cls,
        l1,
        iou,
        act: actl,
    };
    Ok(TrackLoss {
        total: terms.weighted_total(weights),
        terms,
    })
}
