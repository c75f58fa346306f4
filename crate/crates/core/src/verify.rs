//! Self-check suites behind the `gradcheck` and `spectra-test` subcommands.
//!
//! The gradient suite runs a central-difference check on one small case
//! per differentiable op plus the composed fusion and contrastive
//! pipelines. Every case reads its output through fixed random weights so
//! that no gradient coordinate vanishes by symmetry.

use std::collections::BTreeSet;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::actl::{actl_loss, pool_and_normalize, similarity_matrix, ActlParams, ReferenceLabels};
use crate::error::{Error, Result};
use crate::fusion::{
    bi_cross_attention, cross_gate, fuse, spectral_filter_branch, FilterKernel, FilterMlp, FusionInput, FusionParams,
    KernelShape, CONV_WIDTH, MLP_HIDDEN,
};
use crate::params::Parameters;
use crate::spectral::{circular_convolve, dft_naive, fft_radix2, idft, idft_complex, to_complex, Spectrum};
use crate::tensor::{finite_diff_check, relative_error, FdOptions, OpKind, Tape, Tensor};

/// Relative-error bound of the gradient suite.
pub const GRAD_TOL: f64 = 1e-4;
/// Seeds per gradient case.
pub const GRAD_SEEDS: u64 = 5;
/// Absolute error bound of the spectral suite.
pub const SPECTRAL_TOL: f64 = 1e-9;
/// Random inputs per length in the spectral suite.
pub const SPECTRAL_TRIALS: usize = 50;
/// Lengths checked against the naive DFT.
pub const FFT_LENGTHS: [usize; 9] = [4, 8, 16, 32, 64, 128, 256, 512, 1024];
/// Lengths checked against direct circular convolution.
pub const CONV_LENGTHS: [usize; 4] = [4, 8, 16, 32];

type LossFn = Box<dyn Fn(&mut Tape, &[Tensor]) -> Result<Tensor> + Send + Sync>;

struct Case {
    name: &'static str,
    params: Vec<(String, Tensor)>,
    loss: LossFn,
    /// `(param, coordinate)` pairs the loss provably does not depend on.
    flat: Vec<(usize, usize)>,
}

/// Bound on `|numeric|` at a flat coordinate: a few ulps of an O(10)
/// readout divided by `2h`.
pub const FLAT_NUMERIC_BOUND: f64 = 1e-9;
/// Bound on `|analytic|` at a flat coordinate.
pub const FLAT_ANALYTIC_BOUND: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub name: String,
    pub seed: u64,
    /// Over every coordinate except the flat ones.
    pub max_rel_err: f64,
    /// Coordinates checked against the flat bounds instead.
    pub flat_coords: usize,
    pub worst_param: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradSuiteReport {
    pub tolerance: f64,
    /// Op whose backward rule was corrupted, if any.
    pub fault: Option<String>,
    pub cases: Vec<GradCase>,
    /// Differentiable ops no case recorded.
    pub uncovered: Vec<String>,
    pub max_rel_err: f64,
    pub seconds: f64,
}

impl GradSuiteReport {
    pub fn passed(&self) -> bool {
        self.uncovered.is_empty() && self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCase> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Values with `lo ≤ |v| < hi` and a random sign, away from kinks at zero.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `Σ x ⊙ w` for a constant `w` of the same shape.
fn readout(tape: &mut Tape, x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let prod = tape.mul(x, w)?;
    Ok(tape.sum(&prod))
}

fn named(items: Vec<(&str, Tensor)>) -> Vec<(String, Tensor)> {
    items.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

/// A case whose single output is read through random weights.
fn unary_case(
    name: &'static str,
    rng: &mut ChaCha8Rng,
    params: Vec<(&str, Tensor)>,
    out_shape: &[usize],
    op: impl Fn(&mut Tape, &[Tensor]) -> Result<Tensor> + Send + Sync + 'static,
) -> Case {
    let w = uniform(rng, out_shape, -1.0, 1.0);
    Case {
        name,
        params: named(params),
        loss: Box::new(move |tape, p| {
            let y = op(tape, p)?;
            readout(tape, &y, &w)
        }),
        flat: Vec::new(),
    }
}

/// Prediction/target pairs that overlap partially on both axes, so no box
/// contains the other and GIoU is smooth and non-flat in every coordinate.
fn box_pairs(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 4]>, Vec<[f64; 4]>) {
    let mut pred = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let (w, h) = (rng.random_range(0.1..0.3), rng.random_range(0.1..0.3));
        let (tw, th) = (w * rng.random_range(0.8..1.25), h * rng.random_range(0.8..1.25));
        let mut offset = |a: f64, b: f64| {
            let d = rng.random_range(0.3..0.7) * (a + b) / 2.0;
            if rng.random_bool(0.5) {
                d
            } else {
                -d
            }
        };
        let (dx, dy) = (offset(w, tw), offset(h, th));
        let (cx, cy) = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
        pred.push([cx, cy, w, h]);
        target.push([cx + dx, cy + dy, tw, th]);
    }
    (pred, target)
}

/// Filter MLP with O(1) weights so `ε` responds visibly to its input.
fn live_mlp(rng: &mut ChaCha8Rng) -> FilterMlp {
    FilterMlp {
        w1: uniform(rng, &[1, MLP_HIDDEN], -1.0, 1.0),
        b1: uniform(rng, &[MLP_HIDDEN], -0.5, 0.5),
        w2: uniform(rng, &[MLP_HIDDEN, 1], -1.0, 1.0),
        b2: uniform(rng, &[1], -0.5, 0.5),
    }
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases = Vec::new();
    let a = uniform(rng, &[3, 4], -1.0, 1.0);
    let b = uniform(rng, &[4, 2], -1.0, 1.0);
    cases.push(unary_case("matmul", rng, vec![("a", a.clone()), ("b", b)], &[3, 2], |t, p| {
        t.matmul(&p[0], &p[1])
    }));
    cases.push(unary_case("transpose", rng, vec![("x", a.clone())], &[4, 3], |t, p| t.transpose(&p[0])));
    let c = uniform(rng, &[3, 4], -1.0, 1.0);
    cases.push(unary_case("add", rng, vec![("a", a.clone()), ("b", c.clone())], &[3, 4], |t, p| {
        t.add(&p[0], &p[1])
    }));
    cases.push(unary_case("sub", rng, vec![("a", a.clone()), ("b", c.clone())], &[3, 4], |t, p| {
        t.sub(&p[0], &p[1])
    }));
    cases.push(unary_case("mul", rng, vec![("a", a.clone()), ("b", c)], &[3, 4], |t, p| {
        t.mul(&p[0], &p[1])
    }));
    let row = uniform(rng, &[4], -1.0, 1.0);
    cases.push(unary_case("add_row", rng, vec![("x", a.clone()), ("row", row.clone())], &[3, 4], |t, p| {
        t.add_row(&p[0], &p[1])
    }));
    cases.push(unary_case("mul_row", rng, vec![("x", a.clone()), ("row", row)], &[3, 4], |t, p| {
        t.mul_row(&p[0], &p[1])
    }));
    let s = signed(rng, &[1], 0.3, 1.5);
    cases.push(unary_case("mul_scalar", rng, vec![("x", a.clone()), ("s", s.clone())], &[3, 4], |t, p| {
        t.mul_scalar(&p[0], &p[1])
    }));
    cases.push(unary_case("add_scalar", rng, vec![("x", a.clone()), ("s", s)], &[3, 4], |t, p| {
        t.add_scalar(&p[0], &p[1])
    }));
    let factor = rng.random_range(-2.0..2.0);
    cases.push(unary_case("scale", rng, vec![("x", a.clone())], &[3, 4], move |t, p| {
        Ok(t.scale(&p[0], factor))
    }));
    let wide = uniform(rng, &[3, 4], -2.0, 2.0);
    cases.push(unary_case("sigmoid", rng, vec![("x", wide.clone())], &[3, 4], |t, p| Ok(t.sigmoid(&p[0]))));
    cases.push(unary_case("tanh", rng, vec![("x", wide.clone())], &[3, 4], |t, p| Ok(t.tanh(&p[0]))));
    cases.push(unary_case("exp", rng, vec![("x", wide)], &[3, 4], |t, p| Ok(t.exp(&p[0]))));
    let away = signed(rng, &[3, 4], 0.1, 1.0);
    cases.push(unary_case("abs", rng, vec![("x", away)], &[3, 4], |t, p| Ok(t.abs(&p[0]))));
    cases.push(unary_case("softmax_rows", rng, vec![("x", a.clone())], &[3, 4], |t, p| t.softmax(&p[0], 1)));
    cases.push(unary_case("softmax_cols", rng, vec![("x", a.clone())], &[3, 4], |t, p| t.softmax(&p[0], 0)));
    let gain = uniform(rng, &[4], 0.5, 1.5);
    let bias = uniform(rng, &[4], -0.5, 0.5);
    cases.push(unary_case(
        "layer_norm",
        rng,
        vec![("x", a.clone()), ("gain", gain), ("bias", bias)],
        &[3, 4],
        |t, p| t.layer_norm(&p[0], &p[1], &p[2], 1e-5),
    ));
    cases.push(unary_case("mean_axis0", rng, vec![("x", a.clone())], &[4], |t, p| t.mean(&p[0], 0)));
    cases.push(unary_case("mean_axis1", rng, vec![("x", a.clone())], &[3], |t, p| t.mean(&p[0], 1)));
    // mean_all and sum are linear; square first so the readout is not flat
    let w = rng.random_range(0.5..1.5);
    cases.push(Case {
        name: "mean_all",
        flat: Vec::new(),
        params: named(vec![("x", a.clone())]),
        loss: Box::new(move |t, p| {
            let sq = t.mul(&p[0], &p[0])?;
            let m = t.mean_all(&sq);
            Ok(t.scale(&m, w))
        }),
    });
    cases.push(Case {
        name: "sum",
        flat: Vec::new(),
        params: named(vec![("x", a.clone())]),
        loss: Box::new(move |t, p| {
            let sq = t.mul(&p[0], &p[0])?;
            let m = t.sum(&sq);
            Ok(t.scale(&m, w))
        }),
    });
    cases.push(unary_case("l2_normalize", rng, vec![("x", a.clone())], &[3, 4], |t, p| Ok(t.l2_normalize(&p[0]))));
    let seq = uniform(rng, &[6, 3], -1.0, 1.0);
    let kernel = uniform(rng, &[3, 3], -1.0, 1.0);
    cases.push(unary_case(
        "conv1d",
        rng,
        vec![("x", seq.clone()), ("w", kernel.clone())],
        &[6, 3],
        |t, p| t.conv1d(&p[0], &p[1]),
    ));
    let bins = uniform(rng, &[6], 0.2, 1.2);
    cases.push(unary_case(
        "spectral_chain",
        rng,
        vec![("x", seq.clone()), ("bins", bins), ("w", kernel)],
        &[6, 3],
        |t, p| {
            let z = t.to_complex(&p[0])?;
            let f = t.dft(&z)?;
            let m = t.mul_bins(&f, &p[1])?;
            let c = t.conv1d(&m, &p[2])?;
            let r = t.idft(&c)?;
            t.real_part(&r)
        },
    ));
    // complex outputs read directly, imaginary parts included
    let complex = uniform(rng, &[6, 3, 2], -1.0, 1.0);
    cases.push(unary_case("dft", rng, vec![("z", complex.clone())], &[6, 3, 2], |t, p| t.dft(&p[0])));
    cases.push(unary_case("idft", rng, vec![("z", complex)], &[6, 3, 2], |t, p| t.idft(&p[0])));
    let probs = uniform(rng, &[8], 0.1, 0.9);
    let labels: Vec<bool> = (0..8).map(|i| i % 3 == 0).collect();
    let (alpha, gamma) = (rng.random_range(0.2..0.8), rng.random_range(0.0..3.0));
    cases.push(Case {
        name: "focal_terms",
        flat: Vec::new(),
        params: named(vec![("p", probs)]),
        loss: {
            let w = uniform(rng, &[8], 0.5, 1.5);
            Box::new(move |t, p| {
                let f = t.focal_terms(&p[0], &labels, alpha, 1.0 - alpha, gamma)?;
                readout(t, &f, &w)
            })
        },
    });
    let (pred, target) = box_pairs(rng, 4);
    cases.push(unary_case(
        "giou_loss",
        rng,
        vec![("boxes", Tensor::new(vec![4, 4], pred.iter().flatten().copied().collect()).expect("shape"))],
        &[4],
        move |t, p| t.giou_loss(&p[0], &target),
    ));
    cases.push(unary_case("select_rows", rng, vec![("x", a.clone())], &[4, 4], |t, p| {
        t.select_rows(&p[0], &[2, 0, 2, 1])
    }));
    let r0 = uniform(rng, &[4], -1.0, 1.0);
    let r1 = uniform(rng, &[4], -1.0, 1.0);
    cases.push(unary_case("stack_rows", rng, vec![("r0", r0), ("r1", r1)], &[2, 4], |t, p| {
        t.stack_rows(&[p[0].clone(), p[1].clone()])
    }));
    cases.push(unary_case("reshape", rng, vec![("x", a)], &[2, 6], |t, p| t.reshape(&p[0], &[2, 6])));
    cases
}

const T_V: usize = 4;
const T_A: usize = 3;
const CHANNELS: usize = 4;

fn fusion_case(rng: &mut ChaCha8Rng) -> Case {
    let mut params = FusionParams::init(CHANNELS, rng);
    // move off the identity initialisation so every path carries signal
    params.conv_v2a = uniform(rng, &[CHANNELS, 3], -1.0, 1.0);
    params.conv_a2v = uniform(rng, &[CHANNELS, 3], -1.0, 1.0);
    params.norm_gain = uniform(rng, &[CHANNELS], 0.5, 1.5);
    params.norm_bias = uniform(rng, &[CHANNELS], -0.5, 0.5);
    params.mlp = live_mlp(rng);
    let visual = uniform(rng, &[T_V, CHANNELS], -0.5, 1.5);
    let audio = uniform(rng, &[T_A, CHANNELS], -0.5, 1.5);
    let wv = uniform(rng, &[T_V, CHANNELS], -1.0, 1.0);
    let wa = uniform(rng, &[T_A, CHANNELS], -1.0, 1.0);
    let mut list = vec![("visual".to_string(), visual), ("audio".to_string(), audio)];
    list.extend(params.named());
    // Each branch reaches the output only through its token mean, i.e. its
    // DC bin, and with zero padding the left conv tap never feeds bin 0.
    let flat = list
        .iter()
        .enumerate()
        .filter(|(_, (n, _))| n == "conv_v2a" || n == "conv_a2v")
        .flat_map(|(i, _)| (0..CHANNELS).map(move |c| (i, c * CONV_WIDTH)))
        .collect();
    Case {
        name: "fuse",
        params: list,
        flat,
        loss: Box::new(move |t, p| {
            let input = FusionInput::new(p[0].clone(), p[1].clone())?;
            let bound = params.with_values(&p[2..])?;
            let out = fuse(t, &input, &bound)?;
            let lv = readout(t, &out.visual, &wv)?;
            let la = readout(t, &out.audio, &wa)?;
            t.add(&lv, &la)
        }),
    }
}

fn attention_case(rng: &mut ChaCha8Rng) -> Case {
    let params = FusionParams::init(CHANNELS, rng);
    let visual = uniform(rng, &[T_V, CHANNELS], -1.0, 1.0);
    let audio = uniform(rng, &[T_A, CHANNELS], -1.0, 1.0);
    let wv = uniform(rng, &[T_V, CHANNELS], -1.0, 1.0);
    let wa = uniform(rng, &[T_A, CHANNELS], -1.0, 1.0);
    let list = named(vec![
        ("visual", visual),
        ("audio", audio),
        ("proj_v", params.proj_v.clone()),
        ("proj_a", params.proj_a.clone()),
        ("value_v", params.value_v.clone()),
        ("value_a", params.value_a.clone()),
    ]);
    Case {
        name: "bi_cross_attention",
        flat: Vec::new(),
        params: list,
        loss: Box::new(move |t, p| {
            let input = FusionInput::new(p[0].clone(), p[1].clone())?;
            let mut bound = params.clone();
            bound.proj_v = p[2].clone();
            bound.proj_a = p[3].clone();
            bound.value_v = p[4].clone();
            bound.value_a = p[5].clone();
            let att = bi_cross_attention(t, &input, &bound)?;
            let lv = readout(t, &att.v2a, &wv)?;
            let la = readout(t, &att.a2v, &wa)?;
            t.add(&lv, &la)
        }),
    }
}

fn branch_case(rng: &mut ChaCha8Rng) -> Case {
    let mlp = live_mlp(rng);
    let features = uniform(rng, &[T_V, CHANNELS], -0.5, 1.5);
    let conv = uniform(rng, &[CHANNELS, 3], -1.0, 1.0);
    let w = uniform(rng, &[T_V, CHANNELS], -1.0, 1.0);
    let mut list = named(vec![("features", features), ("conv", conv)]);
    list.extend(mlp.named().into_iter().map(|(n, t)| (format!("mlp.{n}"), t)));
    Case {
        name: "spectral_filter_branch",
        flat: Vec::new(),
        params: list,
        loss: Box::new(move |t, p| {
            let bound = mlp.with_values(&p[2..])?;
            let kernel = FilterKernel::Adaptive(KernelShape::default());
            let out = spectral_filter_branch(t, &p[0], &bound, &p[1], &kernel)?;
            readout(t, &out.output, &w)
        }),
    }
}

fn gate_case(rng: &mut ChaCha8Rng) -> Case {
    let source = uniform(rng, &[T_A, CHANNELS], -1.0, 1.0);
    let target = uniform(rng, &[T_V, CHANNELS], -1.0, 1.0);
    unary_case(
        "cross_gate",
        rng,
        vec![("source", source), ("target", target)],
        &[T_V, CHANNELS],
        |t, p| cross_gate(t, &p[0], &p[1]),
    )
}

fn actl_case(rng: &mut ChaCha8Rng) -> Case {
    let n_queries = 5;
    let n_expr = 2;
    let mut params = ActlParams::init(CHANNELS, rng);
    params.phi = uniform(rng, &[1], -0.5, 0.5);
    params.b_rho = uniform(rng, &[1], -0.5, 0.5);
    params.b_a = uniform(rng, &[CHANNELS], -0.2, 0.2);
    let audio: Vec<Tensor> = (0..n_expr).map(|_| uniform(rng, &[T_A, CHANNELS], -1.0, 1.0)).collect();
    let queries = uniform(rng, &[n_queries, CHANNELS], -1.0, 1.0);
    let flags: Vec<bool> = (0..n_queries * n_expr).map(|i| i % 3 == 1).collect();
    let labels = ReferenceLabels::new(n_queries, n_expr, flags).expect("label shape");
    let gamma = params.gamma;
    let mut list = vec![("queries".to_string(), queries)];
    list.extend(audio.into_iter().enumerate().map(|(i, a)| (format!("audio{i}"), a)));
    list.extend(params.named().into_iter().map(|(n, t)| (format!("actl.{n}"), t)));
    Case {
        name: "actl_pipeline",
        flat: Vec::new(),
        params: list,
        loss: Box::new(move |t, p| {
            let audio = &p[1..1 + n_expr];
            let bound = params.with_values(&p[1 + n_expr..])?;
            let (z_a, z_t) = pool_and_normalize(t, audio, &p[0], &bound)?;
            let sim = similarity_matrix(t, &z_t, &z_a, &bound)?;
            actl_loss(t, &sim.chi, &labels, gamma)
        }),
    }
}

fn all_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = op_cases(&mut rng);
    cases.push(attention_case(&mut rng));
    cases.push(branch_case(&mut rng));
    cases.push(gate_case(&mut rng));
    cases.push(fusion_case(&mut rng));
    cases.push(actl_case(&mut rng));
    cases
}

/// Names of every gradient case, in run order.
pub fn gradient_case_names() -> Vec<&'static str> {
    all_cases(0).iter().map(|c| c.name).collect()
}

/// Runs every gradient case for seeds `0..seeds`, optionally with the
/// backward rule of `fault` corrupted.
pub fn gradient_suite(seeds: u64, fault: Option<OpKind>) -> Result<GradSuiteReport> {
    if seeds == 0 {
        return Err(Error::invalid("gradient suite needs at least one seed"));
    }
    if fault == Some(OpKind::Leaf) {
        return Err(Error::invalid("leaf nodes have no backward rule to corrupt"));
    }
    let start = Instant::now();
    let opts = FdOptions {
        fault,
        ..FdOptions::default()
    };
    let per_seed: Vec<(Vec<GradCase>, BTreeSet<&'static str>)> = (0..seeds)
        .into_par_iter()
        .map(|seed| -> Result<_> {
            let mut covered = BTreeSet::new();
            let mut out = Vec::new();
            for case in all_cases(seed) {
                let mut probe = Tape::new();
                let bound: Vec<Tensor> = case.params.iter().map(|(_, t)| probe.param(t)).collect();
                (case.loss)(&mut probe, &bound)?;
                covered.extend(probe.kinds().into_iter().map(OpKind::name));
                let report = finite_diff_check(&case.params, &case.loss, &opts)?;
                let (mut max_rel_err, mut worst, mut flat_ok) = (0.0f64, String::new(), true);
                for (pi, p) in report.params.iter().enumerate() {
                    for (i, (a, n)) in p.analytic.iter().zip(&p.numeric).enumerate() {
                        if case.flat.contains(&(pi, i)) {
                            flat_ok &= a.abs() <= FLAT_ANALYTIC_BOUND && n.abs() <= FLAT_NUMERIC_BOUND;
                            continue;
                        }
                        let e = relative_error(*a, *n);
                        if e > max_rel_err || worst.is_empty() {
                            max_rel_err = max_rel_err.max(e);
                            worst = p.name.clone();
                        }
                    }
                }
                out.push(GradCase {
                    name: case.name.to_string(),
                    seed,
                    max_rel_err,
                    flat_coords: case.flat.len(),
                    worst_param: worst,
                    passed: flat_ok && max_rel_err < GRAD_TOL,
                });
            }
            Ok((out, covered))
        })
        .collect::<Result<_>>()?;
    let mut cases = Vec::new();
    let mut covered = BTreeSet::new();
    for (c, k) in per_seed {
        cases.extend(c);
        covered.extend(k);
    }
    let uncovered = OpKind::differentiable()
        .map(OpKind::name)
        .filter(|n| !covered.contains(n))
        .map(str::to_string)
        .collect();
    let max_rel_err = cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    Ok(GradSuiteReport {
        tolerance: GRAD_TOL,
        fault: fault.map(|k| k.name().to_string()),
        cases,
        uncovered,
        max_rel_err,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralCheck {
    pub name: String,
    pub length: usize,
    pub trials: usize,
    pub max_abs_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralSuiteReport {
    pub tolerance: f64,
    pub checks: Vec<SpectralCheck>,
    pub seconds: f64,
}

impl SpectralSuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Largest error among checks whose name is `name`.
    pub fn max_err(&self, name: &str) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.name == name)
            .map(|c| c.max_abs_err)
            .fold(0.0, f64::max)
    }
}

fn max_complex_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn random_complex(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn check(name: &str, length: usize, trials: usize, max_abs_err: f64) -> SpectralCheck {
    SpectralCheck {
        name: name.to_string(),
        length,
        trials,
        max_abs_err,
        passed: max_abs_err < SPECTRAL_TOL,
    }
}

/// FFT vs naive DFT, inverse round trip, and the convolution theorem.
pub fn spectral_suite(seed: u64) -> Result<SpectralSuiteReport> {
    let start = Instant::now();
    let mut checks: Vec<SpectralCheck> = FFT_LENGTHS
        .par_iter()
        .map(|&n| -> Result<Vec<SpectralCheck>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64) << 20);
            let (mut fft_err, mut inv_err) = (0.0f64, 0.0f64);
            for _ in 0..SPECTRAL_TRIALS {
                let x = random_complex(&mut rng, n);
                let fast = fft_radix2(&x)?;
                let slow = dft_naive(&x);
                fft_err = fft_err.max(max_complex_err(fast.bins(), slow.bins()));
                let back = idft_complex(&fast);
                inv_err = inv_err.max(max_complex_err(&back, &x));
            }
            Ok(vec![
                check("fft_vs_naive", n, SPECTRAL_TRIALS, fft_err),
                check("inverse_roundtrip", n, SPECTRAL_TRIALS, inv_err),
            ])
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    for &n in &CONV_LENGTHS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64) << 40);
        let mut err = 0.0f64;
        for _ in 0..SPECTRAL_TRIALS {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let direct = circular_convolve(&x, &h)?;
            let fx = fft_radix2(&to_complex(&x))?;
            let fh = fft_radix2(&to_complex(&h))?;
            let product = Spectrum::from_bins(fx.bins().iter().zip(fh.bins()).map(|(a, b)| a * b).collect());
            let via = idft(&product);
            let e = via.values.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            err = err.max(e);
        }
        checks.push(check("convolution_theorem", n, SPECTRAL_TRIALS, err));
    }
    Ok(SpectralSuiteReport {
        tolerance: SPECTRAL_TOL,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_cover_every_differentiable_op() {
        let report = gradient_suite(1, None).unwrap();
        assert!(report.uncovered.is_empty(), "{:?}", report.uncovered);
        let first = report.failures().next();
        assert!(first.is_none(), "{first:?}");
    }

    #[test]
    fn fuse_flat_taps_are_flat() {
        let case = all_cases(2).into_iter().find(|c| c.name == "fuse").unwrap();
        assert_eq!(case.flat.len(), 2 * CHANNELS);
        let r = finite_diff_check(&case.params, &case.loss, &FdOptions::default()).unwrap();
        for &(pi, i) in &case.flat {
            assert!(r.params[pi].analytic[i].abs() <= FLAT_ANALYTIC_BOUND);
            assert!(r.params[pi].numeric[i].abs() <= FLAT_NUMERIC_BOUND);
        }
    }

    #[test]
    fn leaf_fault_rejected() {
        assert!(gradient_suite(1, Some(OpKind::Leaf)).is_err());
        assert!(gradient_suite(0, None).is_err());
    }

    #[test]
    fn spectral_suite_small_seed_passes() {
        let r = spectral_suite(7).unwrap();
        assert!(r.passed(), "{:?}", r.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
        assert_eq!(r.checks.len(), 2 * FFT_LENGTHS.len() + CONV_LENGTHS.len());
    }
}
