//! Synthetic referring-tracking scenes and a toy tracker trained end to end
//! on the tape.
//!
//! Object tokens encode the object's attributes as one-hot blocks followed
//! by its box; the expression is the multi-hot encoding of its predicate.
//! Token layout (`C ≥ 25`):
//!
//! | dims    | content                         |
//! |---------|---------------------------------|
//! | 0..6    | class                           |
//! | 6..12   | color                           |
//! | 12..17  | motion                          |
//! | 17..21  | side                            |
//! | 21..25  | box `(cx, cy, w, h)` × 4         |
//! | 25..C   | zero                            |
//!
//! Tokens past the last object carry noise only and stand for background.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::actl::{actl_loss, DEFAULT_GAMMA, pool_and_normalize, similarity_matrix, ActlParams, ReferenceLabels};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionInput, FusionParams};
use crate::matching::{
    hungarian, matching_cost, select_referred, BBox, FocalParams, LossTerms, LossWeights, Prediction,
    ReferThresholds,
};
use crate::metrics::{write_mot, Rect, TrackRecord};
use crate::params::{prefixed, prefixed_mut, Parameters};
use crate::tensor::{Gradients, Tape, Tensor};

pub const FRAME_WIDTH: f64 = 1280.0;
pub const FRAME_HEIGHT: f64 = 720.0;

macro_rules! vocabulary {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|v| *v == self).expect("listed variant")
            }
        }
    };
}

vocabulary!(ObjectClass {
    Pedestrian => "pedestrian",
    Car => "car",
    Motorcycle => "motorcycle",
    Truck => "truck",
    Bus => "bus",
    Bicycle => "bicycle",
});

vocabulary!(Color {
    Red => "red",
    Black => "black",
    Blue => "blue",
    Gray => "gray",
    Yellow => "yellow",
    White => "white",
});

vocabulary!(Motion {
    Turning => "turning",
    Driving => "driving",
    Stopping => "stopping",
    Walking => "walking",
    Standing => "standing",
});

vocabulary!(Side {
    Left => "left",
    Right => "right",
    Forward => "forward",
    Opposite => "opposite",
});

const CLASS_OFFSET: usize = 0;
const COLOR_OFFSET: usize = 6;
const MOTION_OFFSET: usize = 12;
const SIDE_OFFSET: usize = 17;
const BOX_OFFSET: usize = 21;
/// Scale of the box dims, so that token noise perturbs positions by
/// `noise / POSITION_GAIN` in normalized units.
pub const POSITION_GAIN: f64 = 4.0;
/// Smallest channel count that fits the token layout.
pub const MIN_CHANNELS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attributes {
    pub class: ObjectClass,
    pub color: Color,
    pub motion: Motion,
    pub side: Side,
}

impl Attributes {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            class: *ObjectClass::ALL.choose(rng).expect("nonempty"),
            color: *Color::ALL.choose(rng).expect("nonempty"),
            motion: *Motion::ALL.choose(rng).expect("nonempty"),
            side: *Side::ALL.choose(rng).expect("nonempty"),
        }
    }
}

/// Object moving linearly in normalized image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// 1-based track id.
    pub id: u64,
    pub attributes: Attributes,
    /// Box at frame 1.
    pub start: BBox,
    /// Center displacement per frame.
    pub velocity: [f64; 2],
}

impl SceneObject {
    /// Normalized box at 1-based `frame`.
    pub fn box_at(&self, frame: u32) -> BBox {
        let dt = f64::from(frame - 1);
        BBox::new(
            self.start.cx + self.velocity[0] * dt,
            self.start.cy + self.velocity[1] * dt,
            self.start.w,
            self.start.h,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_objects: usize,
    pub n_frames: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_objects: 6,
            n_frames: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub layout: SceneSpec,
    pub objects: Vec<SceneObject>,
}

/// Box in pixels, top-left form.
pub fn to_pixels(b: &BBox) -> Rect {
    Rect {
        x: (b.cx - b.w / 2.0) * FRAME_WIDTH,
        y: (b.cy - b.h / 2.0) * FRAME_HEIGHT,
        w: b.w * FRAME_WIDTH,
        h: b.h * FRAME_HEIGHT,
    }
}

impl Scene {
    /// Records of every object in every frame, frame-major, pixel units.
    pub fn ground_truth(&self) -> Vec<TrackRecord> {
        self.records_for(|_| true)
    }

    /// Records of the objects that `expression` refers to.
    pub fn referent_ground_truth(&self, expression: &ExpressionSpec) -> Vec<TrackRecord> {
        self.records_for(|o| expression.matches(&o.attributes))
    }

    fn records_for(&self, keep: impl Fn(&SceneObject) -> bool) -> Vec<TrackRecord> {
        let mut out = Vec::new();
        for frame in 1..=self.layout.n_frames {
            for o in self.objects.iter().filter(|o| keep(o)) {
                out.push(TrackRecord {
                    frame,
                    track_id: o.id,
                    rect: to_pixels(&o.box_at(frame)),
                    confidence: 1.0,
                });
            }
        }
        out
    }

    pub fn referents(&self, expression: &ExpressionSpec) -> Vec<bool> {
        self.objects
            .iter()
            .map(|o| expression.matches(&o.attributes))
            .collect()
    }
}

/// Deterministic scene; objects stay inside the image for all frames.
pub fn generate_scene(layout: &SceneSpec) -> Result<Scene> {
    if layout.n_objects == 0 {
        return Err(Error::invalid("a scene needs at least one object"));
    }
    if layout.n_frames == 0 {
        return Err(Error::invalid("a scene needs at least one frame"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(layout.seed);
    let span = f64::from(layout.n_frames - 1).max(1.0);
    let objects = (0..layout.n_objects)
        .map(|i| {
            let attributes = Attributes::random(&mut rng);
            let w = rng.random_range(0.05..0.15);
            let h = rng.random_range(0.10..0.25);
            let start = BBox::new(rng.random_range(0.2..0.8), rng.random_range(0.25..0.75), w, h);
            // total drift stays below 0.1 so boxes remain in frame
            let velocity = [
                rng.random_range(-0.1..0.1) / span,
                rng.random_range(-0.1..0.1) / span,
            ];
            SceneObject {
                id: i as u64 + 1,
                attributes,
                start,
                velocity,
            }
        })
        .collect();
    Ok(Scene {
        layout: *layout,
        objects,
    })
}

/// Conjunction of attribute equalities; `None` fields are unconstrained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressionSpec {
    pub class: Option<ObjectClass>,
    pub color: Option<Color>,
    pub motion: Option<Motion>,
    pub side: Option<Side>,
}

impl ExpressionSpec {
    pub fn matches(&self, a: &Attributes) -> bool {
        self.class.is_none_or(|c| c == a.class)
            && self.color.is_none_or(|c| c == a.color)
            && self.motion.is_none_or(|m| m == a.motion)
            && self.side.is_none_or(|s| s == a.side)
    }

    /// Words of the predicate joined by `-`, e.g. `red-car`.
    pub fn name(&self) -> String {
        let words: Vec<&str> = [
            self.color.map(Color::name),
            self.class.map(ObjectClass::name),
            self.motion.map(Motion::name),
            self.side.map(Side::name),
        ]
        .into_iter()
        .flatten()
        .collect();
        if words.is_empty() {
            "all".into()
        } else {
            words.join("-")
        }
    }

    /// Active dims of the multi-hot encoding.
    fn hot_dims(&self) -> Vec<usize> {
        [
            self.class.map(|v| CLASS_OFFSET + v.index()),
            self.color.map(|v| COLOR_OFFSET + v.index()),
            self.motion.map(|v| MOTION_OFFSET + v.index()),
            self.side.map(|v| SIDE_OFFSET + v.index()),
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

/// Two attributes of a random anchor object, so the referent set is never
/// empty.
pub fn sample_expression(scene: &Scene, seed: u64) -> ExpressionSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = scene.objects.choose(&mut rng).expect("scenes have objects").attributes;
    let kinds = rand::seq::index::sample(&mut rng, 4, 2);
    let mut e = ExpressionSpec::default();
    for k in kinds.iter() {
        match k {
            0 => e.class = Some(anchor.class),
            1 => e.color = Some(anchor.color),
            2 => e.motion = Some(anchor.motion),
            _ => e.side = Some(anchor.side),
        }
    }
    e
}

/// Object token without noise.
pub fn encode_object(a: &Attributes, b: &BBox, channels: usize) -> Vec<f64> {
    let mut v = vec![0.0; channels];
    v[CLASS_OFFSET + a.class.index()] = 1.0;
    v[COLOR_OFFSET + a.color.index()] = 1.0;
    v[MOTION_OFFSET + a.motion.index()] = 1.0;
    v[SIDE_OFFSET + a.side.index()] = 1.0;
    for (k, x) in b.to_array().into_iter().enumerate() {
        v[BOX_OFFSET + k] = POSITION_GAIN * x;
    }
    v
}

/// Expression token without noise.
pub fn encode_expression(e: &ExpressionSpec, channels: usize) -> Vec<f64> {
    let mut v = vec![0.0; channels];
    for d in e.hot_dims() {
        v[d] = 1.0;
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dims {
    pub t_v: usize,
    pub t_a: usize,
    pub channels: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            t_v: 16,
            t_a: 8,
            channels: 32,
        }
    }
}

impl Dims {
    pub fn validate(&self, n_objects: usize) -> Result<()> {
        if self.channels < MIN_CHANNELS {
            return Err(Error::invalid(format!(
                "channels must be at least {MIN_CHANNELS}, got {}",
                self.channels
            )));
        }
        if self.t_a == 0 {
            return Err(Error::invalid("t_a must be positive"));
        }
        if self.t_v < n_objects {
            return Err(Error::invalid(format!(
                "t_v = {} cannot hold {n_objects} objects",
                self.t_v
            )));
        }
        Ok(())
    }
}

/// Per-frame fusion inputs for one expression.
#[derive(Debug, Clone)]
pub struct SynthFeatures {
    /// One input per frame, frame 1 first.
    pub frames: Vec<FusionInput>,
    /// Noise-free expression token.
    pub expression: Vec<f64>,
}

/// Object tokens in slots `0..n_objects`, background noise after; audio
/// tokens repeat the expression encoding. Zero-mean Gaussian noise with
/// standard deviation `noise` is added everywhere.
pub fn synth_features(
    scene: &Scene,
    expression: &ExpressionSpec,
    dims: &Dims,
    noise: f64,
    seed: u64,
) -> Result<SynthFeatures> {
    dims.validate(scene.objects.len())?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(format!("noise must be a finite non-negative level, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("positive std");
    let mut jitter = |v: &mut [f64]| {
        if noise > 0.0 {
            for x in v {
                *x += normal.sample(&mut rng);
            }
        }
    };
    let c = dims.channels;
    let expr = encode_expression(expression, c);
    let mut frames = Vec::with_capacity(scene.layout.n_frames as usize);
    for frame in 1..=scene.layout.n_frames {
        let mut visual = vec![0.0; dims.t_v * c];
        for (slot, o) in scene.objects.iter().enumerate() {
            visual[slot * c..(slot + 1) * c].copy_from_slice(&encode_object(&o.attributes, &o.box_at(frame), c));
        }
        jitter(&mut visual);
        let mut audio: Vec<f64> = expr.iter().copied().cycle().take(dims.t_a * c).collect();
        jitter(&mut audio);
        frames.push(FusionInput::new(
            Tensor::new(vec![dims.t_v, c], visual)?,
            Tensor::new(vec![dims.t_a, c], audio)?,
        )?);
    }
    Ok(SynthFeatures {
        frames,
        expression: expr,
    })
}

/// Fusion, contrastive head and a linear class/box head over the fused
/// visual tokens (one query per token).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTracker {
    pub fusion: FusionParams,
    pub actl: ActlParams,
    /// `[C, C]`
    pub query_proj: Tensor,
    /// `[C, 1]`
    pub w_cls: Tensor,
    /// `[1]`
    pub b_cls: Tensor,
    /// `[C, 4]`
    pub w_box: Tensor,
    /// `[4]`
    pub b_box: Tensor,
}

impl ToyTracker {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let u = Uniform::new(-0.05, 0.05).expect("valid range");
        let mut small = |n: usize| (0..n).map(|_| u.sample(rng)).collect::<Vec<_>>();
        let w_cls = Tensor::new(vec![channels, 1], small(channels)).expect("shape");
        let w_box = Tensor::new(vec![channels, 4], small(channels * 4)).expect("shape");
        Self {
            fusion: FusionParams::init(channels, rng),
            actl: ActlParams::init(channels, rng),
            query_proj: Tensor::identity(channels),
            w_cls,
            b_cls: Tensor::zeros(&[1]),
            w_box,
            b_box: Tensor::zeros(&[4]),
        }
    }
}

impl Parameters for ToyTracker {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefixed("fusion", self.fusion.tensors());
        out.extend(prefixed("actl", self.actl.tensors()));
        out.push(("query_proj".into(), &self.query_proj));
        out.push(("w_cls".into(), &self.w_cls));
        out.push(("b_cls".into(), &self.b_cls));
        out.push(("w_box".into(), &self.w_box));
        out.push(("b_box".into(), &self.b_box));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = prefixed_mut("fusion", self.fusion.tensors_mut());
        out.extend(prefixed_mut("actl", self.actl.tensors_mut()));
        out.push(("query_proj".into(), &mut self.query_proj));
        out.push(("w_cls".into(), &mut self.w_cls));
        out.push(("b_cls".into(), &mut self.b_cls));
        out.push(("w_box".into(), &mut self.w_box));
        out.push(("b_box".into(), &mut self.b_box));
        out
    }
}

/// Ridge penalty of [`ToyTracker::fit_heads`].
pub const HEAD_RIDGE: f64 = 1e-2;
/// Class logit targeted for object (`+`) and background (`−`) queries.
const CLASS_LOGIT_TARGET: f64 = 3.0;

impl ToyTracker {
    /// Least-squares warm start of the class and box heads on the current
    /// fused queries: object queries regress `logit(box)` and
    /// `+CLASS_LOGIT_TARGET`, background queries `−CLASS_LOGIT_TARGET`.
    /// Without it the bipartite assignment is arbitrary for far longer
    /// than a few hundred plain gradient steps.
    pub fn fit_heads(&mut self, scene: &Scene, features: &SynthFeatures) -> Result<()> {
        let c = self.query_proj.cols();
        let n_obj = scene.objects.len();
        let mut rows = Vec::new();
        let mut box_rows = Vec::new();
        let mut cls_targets = Vec::new();
        let mut box_targets = Vec::new();
        for (fi, input) in features.frames.iter().enumerate() {
            let mut tape = Tape::new();
            let fused = fuse(&mut tape, input, &self.fusion)?;
            let q = tape.matmul(&fused.visual, &self.query_proj)?;
            for i in 0..q.rows() {
                let mut r: Vec<f64> = q.row(i).iter().map(|v| v * head_scale(c)).collect();
                r.push(1.0);
                let is_obj = i < n_obj;
                cls_targets.push(if is_obj { CLASS_LOGIT_TARGET } else { -CLASS_LOGIT_TARGET });
                if is_obj {
                    let b = scene.objects[i].box_at(fi as u32 + 1).to_array();
                    box_targets.extend(b.iter().map(|&x| (x / (1.0 - x)).ln()));
                    box_rows.push(r.clone());
                }
                rows.push(r);
            }
        }
        let solve = |rows: &[Vec<f64>], targets: &[f64], outs: usize| -> Result<Vec<f64>> {
            let x = DMatrix::from_fn(rows.len(), c + 1, |i, j| rows[i][j]);
            let y = DMatrix::from_row_slice(rows.len(), outs, targets);
            let gram = x.transpose() * &x + DMatrix::identity(c + 1, c + 1) * HEAD_RIDGE;
            let rhs = x.transpose() * y;
            let sol = gram
                .cholesky()
                .ok_or_else(|| Error::NonFinite("head warm start: singular Gram matrix".into()))?
                .solve(&rhs);
            // row-major [(c + 1), outs]
            Ok((0..c + 1).flat_map(|i| (0..outs).map(move |j| (i, j))).map(|(i, j)| sol[(i, j)]).collect())
        };
        let cls = solve(&rows, &cls_targets, 1)?;
        let bx = solve(&box_rows, &box_targets, 4)?;
        self.w_cls = Tensor::new(vec![c, 1], cls[..c].to_vec())?;
        self.b_cls = Tensor::new(vec![1], cls[c..].to_vec())?;
        self.w_box = Tensor::new(vec![c, 4], bx[..c * 4].to_vec())?;
        self.b_box = Tensor::new(vec![4], bx[c * 4..].to_vec())?;
        Ok(())
    }
}

/// Gradient descent moves these parameter prefixes; the LayerNorm affine,
/// query projection and the warm-started heads stay fixed. The box/GIoU
/// path through them is stiff enough that any step size large enough for
/// the contrastive head makes plain GD diverge.
pub const TRAINABLE_PREFIXES: [&str; 5] = [
    "actl.",
    "fusion.proj_",
    "fusion.value_",
    "fusion.mlp.",
    "fusion.conv_",
];

impl ToyTracker {
    pub fn is_trainable(name: &str) -> bool {
        TRAINABLE_PREFIXES.iter().any(|p| name.starts_with(p))
    }

    /// [`Parameters::descend`] restricted to [`TRAINABLE_PREFIXES`].
    pub fn descend_trainable(&mut self, bound: &Self, grads: &Gradients, lr: f64) {
        for ((name, t), (_, b)) in self.tensors_mut().into_iter().zip(bound.tensors()) {
            if !Self::is_trainable(&name) {
                continue;
            }
            if let Some(g) = grads.get(b) {
                for (v, d) in t.data_mut().iter_mut().zip(g.data()) {
                    *v -= lr * d;
                }
            }
        }
    }
}

/// The class and box heads read `queries / √C`, keeping their logit
/// step per unit learning rate independent of the width.
fn head_scale(channels: usize) -> f64 {
    1.0 / (channels as f64).sqrt()
}

/// Head outputs for one frame.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `[T_v, 1]`
    pub class: Tensor,
    /// `[T_v, 4]`, normalized center-size.
    pub boxes: Tensor,
    /// `[T_v, 1]`
    pub chi: Tensor,
}

impl HeadOutput {
    pub fn predictions(&self) -> Vec<Prediction> {
        (0..self.class.rows())
            .map(|i| {
                let b = self.boxes.row(i);
                Prediction {
                    class_score: self.class.at(i, 0),
                    referring_score: self.chi.at(i, 0),
                    bbox: BBox::new(b[0], b[1], b[2], b[3]),
                }
            })
            .collect()
    }
}

/// Forward pass; `model` must already be bound to `tape` when gradients
/// are wanted.
pub fn forward(tape: &mut Tape, model: &ToyTracker, input: &FusionInput) -> Result<HeadOutput> {
    let fused = fuse(tape, input, &model.fusion)?;
    let queries = tape.matmul(&fused.visual, &model.query_proj)?;
    let head_in = tape.scale(&queries, head_scale(queries.cols()));
    let logits = tape.matmul(&head_in, &model.w_cls)?;
    let logits = tape.add_row(&logits, &model.b_cls)?;
    let class = tape.sigmoid(&logits);
    let raw = tape.matmul(&head_in, &model.w_box)?;
    let raw = tape.add_row(&raw, &model.b_box)?;
    let boxes = tape.sigmoid(&raw);
    let (z_a, z_t) = pool_and_normalize(tape, std::slice::from_ref(&fused.audio), &queries, &model.actl)?;
    let sim = similarity_matrix(tape, &z_t, &z_a, &model.actl)?;
    Ok(HeadOutput {
        class,
        boxes,
        chi: sim.chi,
    })
}

/// Matched `(query, object)` pairs and per-query referent labels.
pub type MatchedLabels = (Vec<(usize, usize)>, Vec<bool>);

/// Hungarian assignment of queries to the frame's objects, as
/// `(query, object)` pairs, plus per-query referent labels (unmatched
/// queries are negatives).
pub fn assign_queries(
    out: &HeadOutput,
    targets: &[BBox],
    referent: &[bool],
    weights: &LossWeights,
    focal: FocalParams,
) -> Result<MatchedLabels> {
    let cost = matching_cost(&out.predictions(), targets, weights, focal)?;
    let pairs = hungarian(&cost)?.pairs;
    let mut labels = vec![false; out.class.rows()];
    for &(q, o) in &pairs {
        labels[q] = referent[o];
    }
    Ok((pairs, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_objects: usize,
    pub n_frames: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let s = SceneSpec::default();
        Self {
            n_objects: s.n_objects,
            n_frames: s.n_frames,
        }
    }
}

/// Training configuration; every key is optional in JSON.
///
/// ```json
/// {
///   "seed": 0, "steps": 300, "lr": 0.1, "noise": 0.05,
///   "dims": { "t_v": 16, "t_a": 8, "channels": 32 },
///   "scene": { "n_objects": 6, "n_frames": 8 },
///   "lambdas": { "cls": 2.0, "l1": 5.0, "iou": 2.0, "act": 2.0 },
///   "thresholds": { "class": 0.7, "refer": 0.5 }
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub noise: f64,
    pub dims: Dims,
    pub scene: SceneConfig,
    pub lambdas: LossWeights,
    pub thresholds: ReferThresholds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 300,
            lr: 0.1,
            noise: 0.05,
            dims: Dims::default(),
            scene: SceneConfig::default(),
            lambdas: LossWeights::default(),
            thresholds: ReferThresholds::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.scene.n_objects == 0 || self.scene.n_frames == 0 {
            return Err(Error::invalid("scene needs at least one object and one frame"));
        }
        self.lambdas.validate()?;
        self.dims.validate(self.scene.n_objects)
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            n_objects: self.scene.n_objects,
            n_frames: self.scene.n_frames,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub total: f64,
    pub terms: LossTerms,
}

/// Referring quality of a trained model on held-out noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyEval {
    /// Fraction of queries whose `χ > 0.5` decision matches its label.
    pub referring_accuracy: f64,
    pub mean_chi_positive: f64,
    pub mean_chi_negative: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ToyTracker,
    pub loss_trace: Vec<StepLoss>,
    pub eval: ToyEval,
    pub expression: ExpressionSpec,
    /// Ground truth of the referred objects, pixel units.
    pub ground_truth: Vec<TrackRecord>,
    /// Queries passing [`select_referred`], `track_id = query + 1`.
    pub predictions: Vec<TrackRecord>,
}

const EVAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn build_loss(
    tape: &mut Tape,
    out: &HeadOutput,
    targets: &[BBox],
    referent: &[bool],
    cfg: &TrainConfig,
) -> Result<(Tensor, LossTerms)> {
    let focal = FocalParams::default();
    let (pairs, refer_labels) = assign_queries(out, targets, referent, &cfg.lambdas, focal)?;
    let mut matched = vec![false; out.class.rows()];
    for &(q, _) in &pairs {
        matched[q] = true;
    }
    let cls_terms = tape.focal_terms(&out.class, &matched, focal.alpha, 1.0 - focal.alpha, focal.gamma)?;
    let cls = tape.mean_all(&cls_terms);

    let rows: Vec<usize> = pairs.iter().map(|&(q, _)| q).collect();
    let tgt: Vec<[f64; 4]> = pairs.iter().map(|&(_, o)| targets[o].to_array()).collect();
    let picked = tape.select_rows(&out.boxes, &rows)?;
    let tgt_t = Tensor::new(vec![tgt.len(), 4], tgt.iter().flatten().copied().collect())?;
    let diff = tape.sub(&picked, &tgt_t)?;
    let abs = tape.abs(&diff);
    let l1 = tape.mean_all(&abs);
    let giou = tape.giou_loss(&picked, &tgt)?;
    let iou = tape.mean_all(&giou);

    let act = actl_loss(tape, &out.chi, &ReferenceLabels::column(&refer_labels), DEFAULT_GAMMA)?;

    let w = &cfg.lambdas;
    let mut total = tape.scale(&cls, w.cls);
    for (term, weight) in [(&l1, w.l1), (&iou, w.iou), (&act, w.act)] {
        let scaled = tape.scale(term, weight);
        total = tape.add(&total, &scaled)?;
    }
    let terms = LossTerms {
        cls: cls.item()?,
        l1: l1.item()?,
        iou: iou.item()?,
        act: act.item()?,
    };
    Ok((total, terms))
}

fn frame_targets(scene: &Scene, frame: u32) -> Vec<BBox> {
    scene.objects.iter().map(|o| o.box_at(frame)).collect()
}

/// Plain gradient descent (over [`TRAINABLE_PREFIXES`]) on the λ-weighted
/// total loss averaged over every frame of the scene, followed by evaluation on fresh noise.
pub fn train_toy(cfg: &TrainConfig, scene: &Scene, expression: &ExpressionSpec) -> Result<TrainOutput> {
    cfg.validate()?;
    cfg.dims.validate(scene.objects.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyTracker::init(cfg.dims.channels, &mut rng);
    let train = synth_features(scene, expression, &cfg.dims, cfg.noise, cfg.seed.wrapping_add(1))?;
    let referent = scene.referents(expression);
    model.fit_heads(scene, &train)?;

    let mut trace = Vec::with_capacity(cfg.steps);
    let n_frames = train.frames.len() as f64;
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let mut loss: Option<Tensor> = None;
        let mut terms = LossTerms::default();
        for (fi, input) in train.frames.iter().enumerate() {
            let out = forward(&mut tape, &bound, input)?;
            let targets = frame_targets(scene, fi as u32 + 1);
            let (frame_loss, t) = build_loss(&mut tape, &out, &targets, &referent, cfg)?;
            let frame_loss = tape.scale(&frame_loss, 1.0 / n_frames);
            loss = Some(match loss {
                None => frame_loss,
                Some(acc) => tape.add(&acc, &frame_loss)?,
            });
            terms.cls += t.cls / n_frames;
            terms.l1 += t.l1 / n_frames;
            terms.iou += t.iou / n_frames;
            terms.act += t.act / n_frames;
        }
        let loss = loss.expect("scenes have frames");
        let total = loss.item()?;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", step + 1)));
        }
        log::debug!(
            "step {}: total {total:.6} cls {:.4} l1 {:.4} iou {:.4} act {:.4} temp {:.4} b_rho {:.4}",
            step + 1,
            terms.cls,
            terms.l1,
            terms.iou,
            terms.act,
            model.actl.temperature(),
            model.actl.b_rho.data()[0]
        );
        trace.push(StepLoss {
            step: step + 1,
            total,
            terms,
        });
        let grads = tape.backward(&loss)?;
        model.descend_trainable(&bound, &grads, cfg.lr);
    }

    let eval_features = synth_features(scene, expression, &cfg.dims, cfg.noise, cfg.seed ^ EVAL_SEED_SALT)?;
    let (eval, predictions) = evaluate_model(&model, scene, expression, &eval_features, cfg)?;
    Ok(TrainOutput {
        model,
        loss_trace: trace,
        eval,
        expression: *expression,
        ground_truth: scene.referent_ground_truth(expression),
        predictions,
    })
}

/// Referring accuracy, mean `χ` per label, and the selected predictions.
pub fn evaluate_model(
    model: &ToyTracker,
    scene: &Scene,
    expression: &ExpressionSpec,
    features: &SynthFeatures,
    cfg: &TrainConfig,
) -> Result<(ToyEval, Vec<TrackRecord>)> {
    let referent = scene.referents(expression);
    let (mut correct, mut total) = (0usize, 0usize);
    let (mut pos, mut n_pos, mut neg, mut n_neg) = (0.0, 0usize, 0.0, 0usize);
    let mut predictions = Vec::new();
    for (fi, input) in features.frames.iter().enumerate() {
        let frame = fi as u32 + 1;
        let mut tape = Tape::new();
        let out = forward(&mut tape, model, input)?;
        let targets = frame_targets(scene, frame);
        let (_, labels) = assign_queries(&out, &targets, &referent, &cfg.lambdas, FocalParams::default())?;
        for (q, pred) in out.predictions().iter().enumerate() {
            let chi = pred.referring_score;
            total += 1;
            if (chi > 0.5) == labels[q] {
                correct += 1;
            }
            if labels[q] {
                pos += chi;
                n_pos += 1;
            } else {
                neg += chi;
                n_neg += 1;
            }
            if select_referred(pred, &cfg.thresholds) {
                predictions.push(TrackRecord {
                    frame,
                    track_id: q as u64 + 1,
                    rect: to_pixels(&pred.bbox),
                    confidence: pred.class_score,
                });
            }
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok((
        ToyEval {
            referring_accuracy: avg(correct as f64, total),
            mean_chi_positive: avg(pos, n_pos),
            mean_chi_negative: avg(neg, n_neg),
        },
        predictions,
    ))
}

/// Contents of `scene.json` written next to the MOT files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    /// Unit of every box in the sibling CSV files.
    pub units: String,
    pub frame_width: f64,
    pub frame_height: f64,
    pub scene: Scene,
    pub expressions: Vec<ExpressionManifest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpressionManifest {
    pub name: String,
    pub predicate: ExpressionSpec,
    pub referents: Vec<u64>,
}

impl SceneManifest {
    pub fn new(scene: &Scene, expressions: &[ExpressionSpec]) -> Self {
        Self {
            units: "pixels".into(),
            frame_width: FRAME_WIDTH,
            frame_height: FRAME_HEIGHT,
            scene: scene.clone(),
            expressions: expressions
                .iter()
                .map(|e| ExpressionManifest {
                    name: e.name(),
                    predicate: *e,
                    referents: scene
                        .objects
                        .iter()
                        .filter(|o| e.matches(&o.attributes))
                        .map(|o| o.id)
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Writes `<root>/scene.json` and `<root>/<expression>/gt.txt` per
/// expression (deduplicated by name).
pub fn write_scene(root: &Path, scene: &Scene, expressions: &[ExpressionSpec]) -> Result<Vec<String>> {
    std::fs::create_dir_all(root)?;
    let mut names = Vec::new();
    let mut unique = Vec::new();
    for e in expressions {
        if !names.contains(&e.name()) {
            names.push(e.name());
            unique.push(*e);
        }
    }
    SceneManifest::new(scene, &unique).write(&root.join("scene.json"))?;
    for e in &unique {
        let dir = root.join(e.name());
        std::fs::create_dir_all(&dir)?;
        write_mot(&dir.join("gt.txt"), &scene.referent_ground_truth(e))?;
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_counts_and_determinism() {
        let layout = SceneSpec {
            n_objects: 5,
            n_frames: 10,
            seed: 3,
        };
        let a = generate_scene(&layout).unwrap();
        assert_eq!(a.ground_truth().len(), 50);
        assert_eq!(a, generate_scene(&layout).unwrap());
        assert!(generate_scene(&SceneSpec { n_objects: 0, ..layout }).is_err());
        for o in &a.objects {
            for f in 1..=10 {
                let [x1, y1, x2, y2] = o.box_at(f).corners();
                assert!(x1 > 0.0 && y1 > 0.0 && x2 < 1.0 && y2 < 1.0);
            }
        }
    }

    #[test]
    fn sampled_expression_has_referents() {
        let scene = generate_scene(&SceneSpec::default()).unwrap();
        for seed in 0..20 {
            let e = sample_expression(&scene, seed);
            assert_eq!(e.hot_dims().len(), 2);
            assert!(scene.referents(&e).iter().any(|&r| r));
        }
    }

    #[test]
    fn noise_free_features_are_exact() {
        let scene = generate_scene(&SceneSpec::default()).unwrap();
        let e = sample_expression(&scene, 1);
        let dims = Dims::default();
        let f = synth_features(&scene, &e, &dims, 0.0, 0).unwrap();
        assert_eq!(f.frames.len(), 8);
        assert_eq!(f.frames[0].visual.shape(), &[16, 32]);
        assert_eq!(f.frames[0].audio.shape(), &[8, 32]);
        let o = &scene.objects[2];
        assert_eq!(f.frames[3].visual.row(2), encode_object(&o.attributes, &o.box_at(4), 32).as_slice());
        assert!(f.frames[0].visual.row(15).iter().all(|&v| v == 0.0));
        assert_eq!(f.frames[0].audio.row(7), f.expression.as_slice());
        assert_eq!(f.expression.iter().filter(|&&v| v == 1.0).count(), 2);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::from_json("{}").unwrap();
        assert_eq!(c, TrainConfig::default());
        let c = TrainConfig::from_json(r#"{"steps": 3, "lambdas": {"l1": 1.0}}"#).unwrap();
        assert_eq!(c.steps, 3);
        assert_eq!(c.lambdas.l1, 1.0);
        assert!(TrainConfig::from_json(r#"{"lr": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"steps": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"dims": {"channels": 8}}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn short_run_is_finite_and_deterministic() {
        let cfg = TrainConfig {
            steps: 3,
            ..Default::default()
        };
        let scene = generate_scene(&cfg.scene_spec()).unwrap();
        let e = sample_expression(&scene, 0);
        let a = train_toy(&cfg, &scene, &e).unwrap();
        let b = train_toy(&cfg, &scene, &e).unwrap();
        assert_eq!(a.loss_trace.len(), 3);
        assert!(a.loss_trace.iter().all(|s| s.total.is_finite()));
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.predictions, b.predictions);
    }
}
