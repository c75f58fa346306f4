//! Audio-visual contrastive tracking loss.
//!
//! Fused audio streams are token-averaged, projected and L2-normalized;
//! trajectory queries are L2-normalized; their cosine similarity is divided
//! by a learnable temperature `e^φ`, offset by `b_ρ` and squashed with a
//! sigmoid into `χ ∈ (0, 1)`. The loss is a focal binary cross-entropy over
//! every (query, expression) pair, averaged over all `N·M` pairs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::{focal, Tape, Tensor};

/// Focal exponent used when none is configured.
pub const DEFAULT_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ActlParams {
    /// `[C, C]` projection of the pooled audio vector.
    pub w_q: Tensor,
    /// `[C]`
    pub b_a: Tensor,
    /// Log-temperature, `[1]`.
    pub phi: Tensor,
    /// Similarity offset, `[1]`.
    pub b_rho: Tensor,
    pub gamma: f64,
}

impl ActlParams {
    /// Identity-plus-noise projection, `φ = 0`, `b_ρ = 0`.
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let mut w_q = Tensor::identity(channels);
        for v in w_q.data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        Self {
            w_q,
            b_a: Tensor::zeros(&[channels]),
            phi: Tensor::zeros(&[1]),
            b_rho: Tensor::zeros(&[1]),
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn temperature(&self) -> f64 {
        self.phi.data()[0].exp()
    }
}

impl Parameters for ActlParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_q".into(), &self.w_q),
            ("b_a".into(), &self.b_a),
            ("phi".into(), &self.phi),
            ("b_rho".into(), &self.b_rho),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_q".into(), &mut self.w_q),
            ("b_a".into(), &mut self.b_a),
            ("phi".into(), &mut self.phi),
            ("b_rho".into(), &mut self.b_rho),
        ]
    }
}

/// Positive/negative labels for every (trajectory, expression) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceLabels {
    rows: usize,
    cols: usize,
    labels: Vec<bool>,
}

impl ReferenceLabels {
    pub fn new(rows: usize, cols: usize, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::shape(
                "ReferenceLabels",
                format!("{} labels for {rows}x{cols}", labels.len()),
            ));
        }
        Ok(Self { rows, cols, labels })
    }

    /// Single-expression labels from a per-trajectory flag.
    pub fn column(flags: &[bool]) -> Self {
        Self {
            rows: flags.len(),
            cols: 1,
            labels: flags.to_vec(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.labels[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.labels
    }
}

/// Similarity matrix `χ` (`[N, M]`) and its pre-sigmoid logits.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub chi: Tensor,
    pub logits: Tensor,
}

/// Returns `(Z_a, Z_t)`: `[M, C]` audio embeddings (one per expression)
/// and `[N, C]` trajectory embeddings.
pub fn pool_and_normalize(
    tape: &mut Tape,
    fused_audio: &[Tensor],
    queries: &Tensor,
    params: &ActlParams,
) -> Result<(Tensor, Tensor)> {
    if fused_audio.is_empty() {
        return Err(Error::invalid("need at least one audio expression"));
    }
    if queries.rank() != 2 || queries.rows() == 0 {
        return Err(Error::shape("pool_and_normalize", format!("queries {:?}", queries.shape())));
    }
    let pooled = fused_audio
        .iter()
        .map(|a| {
            if a.rank() != 2 || a.rows() == 0 {
                return Err(Error::shape("pool_and_normalize", format!("audio stream {:?}", a.shape())));
            }
            tape.mean(a, 0)
        })
        .collect::<Result<Vec<_>>>()?;
    let q_a = tape.stack_rows(&pooled)?;
    let proj = tape.matmul(&q_a, &params.w_q)?;
    let proj = tape.add_row(&proj, &params.b_a)?;
    let z_a = tape.l2_normalize(&proj);
    let z_t = tape.l2_normalize(queries);
    Ok((z_a, z_t))
}

/// `χ = sigmoid(Z_t·Z_aᵀ / e^φ + b_ρ)`.
pub fn similarity_matrix(tape: &mut Tape, z_t: &Tensor, z_a: &Tensor, params: &ActlParams) -> Result<SimilarityMatrix> {
    if z_t.cols() != z_a.cols() {
        return Err(Error::shape(
            "similarity_matrix",
            format!("Z_t {:?} vs Z_a {:?}", z_t.shape(), z_a.shape()),
        ));
    }
    let z_at = tape.transpose(z_a)?;
    let cos = tape.matmul(z_t, &z_at)?;
    let neg_phi = tape.scale(&params.phi, -1.0);
    let inv_temp = tape.exp(&neg_phi);
    let scaled = tape.mul_scalar(&cos, &inv_temp)?;
    let logits = tape.add_scalar(&scaled, &params.b_rho)?;
    let chi = tape.sigmoid(&logits);
    Ok(SimilarityMatrix { chi, logits })
}

/// Focal contrastive loss, averaged over all `N·M` pairs.
pub fn actl_loss(tape: &mut Tape, chi: &Tensor, labels: &ReferenceLabels, gamma: f64) -> Result<Tensor> {
    let (n, m) = labels.shape();
    if chi.shape() != [n, m] {
        return Err(Error::shape(
            "actl_loss",
            format!("chi {:?} vs labels {n}x{m}", chi.shape()),
        ));
    }
    let terms = tape.focal_terms(chi, labels.as_slice(), 1.0, 1.0, gamma)?;
    Ok(tape.mean_all(&terms))
}

/// Plain-value evaluation of [`actl_loss`] for a row-major `χ`.
pub fn actl_loss_value(chi: &[f64], labels: &ReferenceLabels, gamma: f64) -> Result<f64> {
    if chi.len() != labels.as_slice().len() {
        return Err(Error::shape("actl_loss_value", "chi and labels differ in size"));
    }
    if let Some(v) = chi.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::invalid(format!("similarity {v} outside (0, 1)")));
    }
    let total: f64 = chi
        .iter()
        .zip(labels.as_slice())
        .map(|(&p, &pos)| focal::term(p, pos, 1.0, 1.0, gamma))
        .sum();
    Ok(total / chi.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_zero(c: usize) -> ActlParams {
        ActlParams {
            w_q: Tensor::identity(c),
            b_a: Tensor::zeros(&[c]),
            phi: Tensor::zeros(&[1]),
            b_rho: Tensor::zeros(&[1]),
            gamma: 2.0,
        }
    }

    #[test]
    fn identical_and_orthogonal_embeddings() {
        let mut tape = Tape::new();
        let p = params_zero(2);
        let z_t = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
        let z_a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let sim = similarity_matrix(&mut tape, &z_t, &z_a, &p).unwrap();
        assert_eq!(sim.chi.shape(), &[3, 2]);
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((sim.chi.at(0, 0) - s1).abs() < 1e-15);
        assert!((sim.chi.at(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_tokens_pool_to_that_row() {
        let mut tape = Tape::new();
        let p = params_zero(3);
        let audio = Tensor::from_rows(&vec![vec![3.0, 0.0, 4.0]; 5]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 1.0, 0.0]]).unwrap();
        let (z_a, z_t) = pool_and_normalize(&mut tape, &[audio], &q, &p).unwrap();
        assert!(z_a.max_abs_diff(&Tensor::from_rows(&[vec![0.6, 0.0, 0.8]]).unwrap()) < 1e-15);
        let r = 1.0 / 2f64.sqrt();
        assert!(z_t.max_abs_diff(&Tensor::from_rows(&[vec![r, r, 0.0]]).unwrap()) < 1e-15);
    }

    #[test]
    fn perfect_alignment_limit() {
        let labels = ReferenceLabels::new(2, 2, vec![true; 4]).unwrap();
        let loss = actl_loss_value(&[1.0 - 1e-12; 4], &labels, 2.0).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn half_probability_is_label_symmetric() {
        let pos = actl_loss_value(&[0.5], &ReferenceLabels::column(&[true]), 2.0).unwrap();
        let neg = actl_loss_value(&[0.5], &ReferenceLabels::column(&[false]), 2.0).unwrap();
        assert_eq!(pos, neg);
    }

    #[test]
    fn out_of_range_chi_rejected() {
        let labels = ReferenceLabels::column(&[true, false]);
        assert!(actl_loss_value(&[0.5, 1.0], &labels, 2.0).is_err());
        let mut tape = Tape::new();
        let chi = Tensor::new(vec![2, 1], vec![0.0, 0.5]).unwrap();
        assert!(actl_loss(&mut tape, &chi, &labels, 2.0).is_err());
    }

    #[test]
    fn empty_expressions_rejected() {
        let mut tape = Tape::new();
        let p = params_zero(2);
        assert!(pool_and_normalize(&mut tape, &[], &Tensor::zeros(&[1, 2]), &p).is_err());
    }
}
