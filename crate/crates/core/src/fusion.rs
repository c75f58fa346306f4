//! Bidirectional frequency-domain cross-attention fusion.
//!
//! Pipeline for visual tokens `F_v: [T_v, C]` and audio tokens
//! `F_a: [T_a, C]`:
//!
//! 1. cross-attention in both directions: `F_v2a` (visual queries attending
//!    to audio values) and `F_a2v` (audio queries attending to visual
//!    values);
//! 2. each attended stream is transformed along its token axis, scaled by a
//!    Gaussian kernel whose amplitude `ε` comes from a small MLP on the
//!    stream's global average, convolved across frequency bins, brought
//!    back with the inverse transform and added to its input;
//! 3. the token-mean of each filtered stream gates the opposite attended
//!    stream channel-wise, and the result is added to the layer-normalized
//!    raw stream.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{prefixed, prefixed_mut, Parameters};
use crate::spectral::{gaussian_kernel, GaussianKernelSpec};
use crate::tensor::{Tape, Tensor};

pub const MLP_HIDDEN: usize = 16;
pub const CONV_WIDTH: usize = 3;
pub const NORM_EPS: f64 = 1e-5;

/// Fixed center and width of the frequency kernel, in normalized
/// distance-from-DC units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelShape {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for KernelShape {
    fn default() -> Self {
        Self { mu: 0.0, sigma: 1.0 }
    }
}

/// `1 → hidden → 1` perceptron producing the pre-sigmoid filter logit.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FilterMlp {
    /// Small weights so the initial `ε` sits near 0.5.
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let mut draw = |n: usize| (0..n).map(|_| normal.sample(rng)).collect::<Vec<_>>();
        Self {
            w1: Tensor::new(vec![1, hidden], draw(hidden)).expect("shape"),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::new(vec![hidden, 1], draw(hidden)).expect("shape"),
            b2: Tensor::zeros(&[1]),
        }
    }

    /// `ε = sigmoid(mlp(x))` for a one-element input.
    pub fn epsilon(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        let x = tape.reshape(x, &[1, 1])?;
        let h = tape.matmul(&x, &self.w1)?;
        let h = tape.add_row(&h, &self.b1)?;
        let h = tape.tanh(&h);
        let o = tape.matmul(&h, &self.w2)?;
        let o = tape.add_row(&o, &self.b2)?;
        Ok(tape.sigmoid(&o))
    }
}

impl Parameters for FilterMlp {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w1".into(), &self.w1),
            ("b1".into(), &self.b1),
            ("w2".into(), &self.w2),
            ("b2".into(), &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w1".into(), &mut self.w1),
            ("b1".into(), &mut self.b1),
            ("w2".into(), &mut self.w2),
            ("b2".into(), &mut self.b2),
        ]
    }
}

/// Learnable weights of the fusion module. `d_k` equals the channel width.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// Query/key projection for the visual stream, `[C, C]`.
    pub proj_v: Tensor,
    /// Query/key projection for the audio stream, `[C, C]`.
    pub proj_a: Tensor,
    /// Value projection for visual tokens, `[C, C]`.
    pub value_v: Tensor,
    /// Value projection for audio tokens, `[C, C]`.
    pub value_a: Tensor,
    /// Shared filter-coefficient MLP.
    pub mlp: FilterMlp,
    /// Per-channel frequency-bin kernels, `[C, 3]`.
    pub conv_v2a: Tensor,
    pub conv_a2v: Tensor,
    pub norm_gain: Tensor,
    pub norm_bias: Tensor,
    pub kernel: KernelShape,
}

fn uniform_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let bound = (3.0 / n as f64).sqrt();
    let data = (0..n * n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![n, n], data).expect("square")
}

fn identity_conv(channels: usize) -> Tensor {
    let mut data = vec![0.0; channels * CONV_WIDTH];
    for c in 0..channels {
        data[c * CONV_WIDTH + CONV_WIDTH / 2] = 1.0;
    }
    Tensor::new(vec![channels, CONV_WIDTH], data).expect("shape")
}

impl FusionParams {
    /// Random projections, identity frequency convolutions, unit norm gain.
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            proj_v: uniform_matrix(channels, rng),
            proj_a: uniform_matrix(channels, rng),
            value_v: uniform_matrix(channels, rng),
            value_a: uniform_matrix(channels, rng),
            mlp: FilterMlp::init(MLP_HIDDEN, rng),
            conv_v2a: identity_conv(channels),
            conv_a2v: identity_conv(channels),
            norm_gain: Tensor::filled(&[channels], 1.0),
            norm_bias: Tensor::zeros(&[channels]),
            kernel: KernelShape::default(),
        }
    }

    pub fn channels(&self) -> usize {
        self.proj_v.shape()[0]
    }

    pub fn d_k(&self) -> usize {
        self.channels()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (name, t) in [
            ("proj_v", &self.proj_v),
            ("proj_a", &self.proj_a),
            ("value_v", &self.value_v),
            ("value_a", &self.value_a),
        ] {
            if t.shape() != [c, c] {
                return Err(Error::shape("FusionParams", format!("{name} is {:?}, need [{c}, {c}]", t.shape())));
            }
        }
        for (name, t) in [("conv_v2a", &self.conv_v2a), ("conv_a2v", &self.conv_a2v)] {
            if t.rank() != 2 || t.shape()[0] != c || t.shape()[1] % 2 == 0 {
                return Err(Error::shape("FusionParams", format!("{name} is {:?}, need [{c}, odd]", t.shape())));
            }
        }
        if self.norm_gain.shape() != [c] || self.norm_bias.shape() != [c] {
            return Err(Error::shape("FusionParams", "norm affine terms must be [C]"));
        }
        Ok(())
    }
}

impl Parameters for FusionParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("proj_v".to_string(), &self.proj_v),
            ("proj_a".to_string(), &self.proj_a),
            ("value_v".to_string(), &self.value_v),
            ("value_a".to_string(), &self.value_a),
        ];
        out.extend(prefixed("mlp", self.mlp.tensors()));
        out.push(("conv_v2a".into(), &self.conv_v2a));
        out.push(("conv_a2v".into(), &self.conv_a2v));
        out.push(("norm_gain".into(), &self.norm_gain));
        out.push(("norm_bias".into(), &self.norm_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("proj_v".to_string(), &mut self.proj_v),
            ("proj_a".to_string(), &mut self.proj_a),
            ("value_v".to_string(), &mut self.value_v),
            ("value_a".to_string(), &mut self.value_a),
        ];
        out.extend(prefixed_mut("mlp", self.mlp.tensors_mut()));
        out.push(("conv_v2a".into(), &mut self.conv_v2a));
        out.push(("conv_a2v".into(), &mut self.conv_a2v));
        out.push(("norm_gain".into(), &mut self.norm_gain));
        out.push(("norm_bias".into(), &mut self.norm_bias));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    /// `[T_v, C]`
    pub visual: Tensor,
    /// `[T_a, C]`
    pub audio: Tensor,
}

impl FusionInput {
    pub fn new(visual: Tensor, audio: Tensor) -> Result<Self> {
        let input = Self { visual, audio };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        let (v, a) = (&self.visual, &self.audio);
        if v.rank() != 2 || a.rank() != 2 {
            return Err(Error::shape("FusionInput", "streams must be rank-2 [T, C]"));
        }
        if v.rows() == 0 || a.rows() == 0 {
            return Err(Error::invalid("fusion streams need at least one token"));
        }
        if v.cols() != a.cols() {
            return Err(Error::shape(
                "FusionInput",
                format!("visual width {} vs audio width {}", v.cols(), a.cols()),
            ));
        }
        Ok(())
    }
}

/// Output of [`bi_cross_attention`].
#[derive(Debug, Clone)]
pub struct CrossAttention {
    /// Visual queries over audio values, `[T_v, C]`.
    pub v2a: Tensor,
    /// Audio queries over visual values, `[T_a, C]`.
    pub a2v: Tensor,
    /// `[T_v, T_a]`, rows sum to one.
    pub weights_v2a: Tensor,
    /// `[T_a, T_v]`, rows sum to one.
    pub weights_a2v: Tensor,
}

fn attend(tape: &mut Tape, queries: &Tensor, keys: &Tensor, values: &Tensor, d_k: usize) -> Result<(Tensor, Tensor)> {
    let kt = tape.transpose(keys)?;
    let scores = tape.matmul(queries, &kt)?;
    let scores = tape.scale(&scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax(&scores, 1)?;
    let out = tape.matmul(&weights, values)?;
    Ok((out, weights))
}

pub fn bi_cross_attention(tape: &mut Tape, input: &FusionInput, params: &FusionParams) -> Result<CrossAttention> {
    input.validate()?;
    if input.visual.cols() != params.channels() {
        return Err(Error::shape(
            "bi_cross_attention",
            format!("inputs have {} channels, params {}", input.visual.cols(), params.channels()),
        ));
    }
    let qv = tape.matmul(&input.visual, &params.proj_v)?;
    let qa = tape.matmul(&input.audio, &params.proj_a)?;
    let vv = tape.matmul(&input.visual, &params.value_v)?;
    let va = tape.matmul(&input.audio, &params.value_a)?;
    let (v2a, weights_v2a) = attend(tape, &qv, &qa, &va, params.d_k())?;
    let (a2v, weights_a2v) = attend(tape, &qa, &qv, &vv, params.d_k())?;
    Ok(CrossAttention {
        v2a,
        a2v,
        weights_v2a,
        weights_a2v,
    })
}

/// Frequency kernel used by a spectral branch.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterKernel {
    /// Gaussian with amplitude `ε` from the branch MLP.
    Adaptive(KernelShape),
    /// A fixed real kernel; `ε` is still computed but unused.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct BranchOutput {
    /// `S + F`, `[T, C]`.
    pub output: Tensor,
    pub epsilon: f64,
    pub kernel: Vec<f64>,
    /// Filtered, convolved spectrum before the inverse transform, `[T, C, 2]`.
    pub spectrum: Tensor,
    /// Largest imaginary component dropped after the inverse transform.
    pub max_imag_residue: f64,
}

/// Spectral filtering of one attended stream plus the residual add.
pub fn spectral_filter_branch(
    tape: &mut Tape,
    features: &Tensor,
    mlp: &FilterMlp,
    conv: &Tensor,
    kernel: &FilterKernel,
) -> Result<BranchOutput> {
    if features.rank() != 2 || features.rows() == 0 {
        return Err(Error::shape("spectral_filter_branch", format!("{:?}", features.shape())));
    }
    let t = features.rows();
    let gap = tape.mean_all(features);
    let eps = mlp.epsilon(tape, &gap)?;
    let kernel_t = match kernel {
        FilterKernel::Adaptive(shape) => {
            let base = gaussian_kernel(
                &GaussianKernelSpec {
                    mu: shape.mu,
                    sigma: shape.sigma,
                    epsilon: 1.0,
                },
                t,
            )?;
            tape.mul_scalar(&Tensor::vector(base), &eps)?
        }
        FilterKernel::Fixed(k) => {
            if k.len() != t {
                return Err(Error::shape(
                    "spectral_filter_branch",
                    format!("fixed kernel has {} bins for {t} tokens", k.len()),
                ));
            }
            tape.constant(&Tensor::vector(k.clone()))
        }
    };
    let z = tape.to_complex(features)?;
    let spectrum = tape.dft(&z)?;
    let filtered = tape.mul_bins(&spectrum, &kernel_t)?;
    let convolved = tape.conv1d(&filtered, conv)?;
    let restored = tape.idft(&convolved)?;
    let max_imag_residue = restored
        .data()
        .chunks(2)
        .map(|z| z[1].abs())
        .fold(0.0, f64::max);
    let s = tape.real_part(&restored)?;
    let output = tape.add(&s, features)?;
    Ok(BranchOutput {
        output,
        epsilon: eps.item()?,
        kernel: kernel_t.data().to_vec(),
        spectrum: convolved.detach(),
        max_imag_residue,
    })
}

/// `out[t, c] = mean_l(source[l, c]) · target[t, c]`.
pub fn cross_gate(tape: &mut Tape, source: &Tensor, target: &Tensor) -> Result<Tensor> {
    if source.rank() != 2 || target.rank() != 2 || source.cols() != target.cols() {
        return Err(Error::shape(
            "cross_gate",
            format!("source {:?}, target {:?}", source.shape(), target.shape()),
        ));
    }
    let gate = tape.mean(source, 0)?;
    tape.mul_row(target, &gate)
}

#[derive(Debug, Clone)]
pub struct FusionDiagnostics {
    pub eps_v2a: f64,
    pub eps_a2v: f64,
    pub kernel_v2a: Vec<f64>,
    pub kernel_a2v: Vec<f64>,
    pub spectrum_v2a: Tensor,
    pub spectrum_a2v: Tensor,
    pub max_imag_residue: f64,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    /// `[T_v, C]`
    pub visual: Tensor,
    /// `[T_a, C]`
    pub audio: Tensor,
    pub diagnostics: FusionDiagnostics,
}

/// Full fusion forward pass recorded on `tape`. Bind `params` to the tape
/// first when gradients are wanted.
pub fn fuse(tape: &mut Tape, input: &FusionInput, params: &FusionParams) -> Result<FusionOutput> {
    params.validate()?;
    let att = bi_cross_attention(tape, input, params)?;
    let kernel = FilterKernel::Adaptive(params.kernel);
    let v2a = spectral_filter_branch(tape, &att.v2a, &params.mlp, &params.conv_v2a, &kernel)?;
    let a2v = spectral_filter_branch(tape, &att.a2v, &params.mlp, &params.conv_a2v, &kernel)?;
    let gate_v = cross_gate(tape, &a2v.output, &att.v2a)?;
    let gate_a = cross_gate(tape, &v2a.output, &att.a2v)?;
    let norm_v = tape.layer_norm(&input.visual, &params.norm_gain, &params.norm_bias, NORM_EPS)?;
    let norm_a = tape.layer_norm(&input.audio, &params.norm_gain, &params.norm_bias, NORM_EPS)?;
    let visual = tape.add(&gate_v, &norm_v)?;
    let audio = tape.add(&gate_a, &norm_a)?;
    Ok(FusionOutput {
        visual,
        audio,
        diagnostics: FusionDiagnostics {
            eps_v2a: v2a.epsilon,
            eps_a2v: a2v.epsilon,
            kernel_v2a: v2a.kernel,
            kernel_a2v: a2v.kernel,
            spectrum_v2a: v2a.spectrum,
            spectrum_a2v: a2v.spectrum,
            max_imag_residue: v2a.max_imag_residue.max(a2v.max_imag_residue),
        },
    })
}

/// [`fuse`] on a private tape, for inference.
pub fn fuse_detached(input: &FusionInput, params: &FusionParams) -> Result<FusionOutput> {
    let mut tape = Tape::new();
    fuse(&mut tape, input, params)
}
