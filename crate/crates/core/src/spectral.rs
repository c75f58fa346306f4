//! Discrete Fourier transforms, the adaptive Gaussian frequency kernel and
//! circular convolution.
//!
//! All forward transforms use the kernel `e^{-j2πkn/N}`; the inverse uses
//! `e^{+j2πkn/N}` with a `1/N` factor so that `idft(dft(x)) == x`.

use std::f64::consts::PI;

pub use num_complex::Complex64;

use crate::error::{Error, Result};

/// Imaginary residue above which [`idft`] reports a non-symmetric spectrum.
pub const IMAG_RESIDUE_WARN: f64 = 1e-6;

/// Frequency-domain view of a length-`N` signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn from_bins(bins: Vec<Complex64>) -> Self {
        Self { bins }
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn into_bins(self) -> Vec<Complex64> {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Largest `|X[k] - conj(X[(N-k) mod N])|` over all bins.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let n = self.bins.len();
        (0..n)
            .map(|k| (self.bins[k] - self.bins[(n - k) % n].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Scales every bin by a real factor, leaving phases untouched.
    pub fn scale_bins(&self, kernel: &[f64]) -> Result<Spectrum> {
        if kernel.len() != self.bins.len() {
            return Err(Error::shape(
                "scale_bins",
                format!("kernel length {} vs {} bins", kernel.len(), self.bins.len()),
            ));
        }
        Ok(Spectrum {
            bins: self.bins.iter().zip(kernel).map(|(b, k)| b * k).collect(),
        })
    }
}

/// Result of an inverse transform whose imaginary part was discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSignal {
    pub values: Vec<f64>,
    /// Largest absolute imaginary component that was dropped.
    pub max_imag_residue: f64,
}

impl RealSignal {
    pub fn is_clean(&self) -> bool {
        self.max_imag_residue < IMAG_RESIDUE_WARN
    }
}

fn twiddle(k: usize, n: usize, len: usize, sign: f64) -> Complex64 {
    // reduce the product first so large N keeps full angular precision
    let idx = ((k as u128 * n as u128) % len as u128) as f64;
    Complex64::from_polar(1.0, sign * 2.0 * PI * idx / len as f64)
}

fn naive_transform(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let len = x.len();
    (0..len)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(n, &v)| v * twiddle(k, n, len, sign))
                .sum()
        })
        .collect()
}

/// Literal `O(N²)` DFT.
pub fn dft_naive(x: &[Complex64]) -> Spectrum {
    Spectrum {
        bins: naive_transform(x, -1.0),
    }
}

/// [`dft_naive`] for a real signal.
pub fn dft_naive_real(x: &[f64]) -> Spectrum {
    dft_naive(&to_complex(x))
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

fn radix2_in_place(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let w: Vec<Complex64> = (0..half).map(|k| twiddle(k, 1, size, sign)).collect();
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let even = buf[start + k];
                let odd = buf[start + k + half] * w[k];
                buf[start + k] = even + odd;
                buf[start + k + half] = even - odd;
            }
        }
        size *= 2;
    }
}

/// Iterative radix-2 Cooley-Tukey FFT. Rejects lengths that are not a
/// power of two; [`dft`] dispatches those to [`dft_naive`].
pub fn fft_radix2(x: &[Complex64]) -> Result<Spectrum> {
    if !x.len().is_power_of_two() {
        return Err(Error::invalid(format!(
            "fft_radix2 needs a power-of-two length, got {}",
            x.len()
        )));
    }
    let mut bins = x.to_vec();
    radix2_in_place(&mut bins, -1.0);
    Ok(Spectrum { bins })
}

fn transform(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    if x.len().is_power_of_two() {
        let mut buf = x.to_vec();
        radix2_in_place(&mut buf, sign);
        buf
    } else {
        naive_transform(x, sign)
    }
}

/// Forward transform of any length: radix-2 for powers of two, the naive
/// sum otherwise.
pub fn dft(x: &[Complex64]) -> Spectrum {
    Spectrum {
        bins: transform(x, -1.0),
    }
}

/// `Σₖ X[k]·e^{+j2πkn/N}` without the `1/N` factor. This is the adjoint of
/// the forward transform.
pub fn inverse_unnormalized(bins: &[Complex64]) -> Vec<Complex64> {
    transform(bins, 1.0)
}

/// Full complex inverse transform, `1/N` included.
pub fn idft_complex(s: &Spectrum) -> Vec<Complex64> {
    let n = s.len().max(1) as f64;
    inverse_unnormalized(&s.bins)
        .into_iter()
        .map(|v| v / n)
        .collect()
}

/// Inverse transform to a real signal. The imaginary part is discarded;
/// if it exceeds [`IMAG_RESIDUE_WARN`] the spectrum was not conjugate
/// symmetric and a warning is logged.
pub fn idft(s: &Spectrum) -> RealSignal {
    let full = idft_complex(s);
    let max_imag_residue = full.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if max_imag_residue >= IMAG_RESIDUE_WARN {
        log::warn!(
            "idft: spectrum of length {} is not conjugate symmetric, discarding imaginary residue {:.3e}",
            s.len(),
            max_imag_residue
        );
    }
    RealSignal {
        values: full.into_iter().map(|v| v.re).collect(),
        max_imag_residue,
    }
}

/// Parameters of the frequency-domain Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernelSpec {
    /// Center in normalized distance-from-DC, `[0, 1]`.
    pub mu: f64,
    pub sigma: f64,
    /// Amplitude coefficient, `[0, 1]`.
    pub epsilon: f64,
}

impl GaussianKernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::invalid(format!(
                "gaussian kernel sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!(
                "gaussian kernel epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("gaussian kernel mu must be finite"));
        }
        Ok(())
    }
}

/// Normalized distance of bin `k` from DC: `min(k, N-k) / (N/2)`.
pub fn bin_coordinate(k: usize, n: usize) -> f64 {
    let d = k.min(n - k) as f64;
    d / (n as f64 / 2.0)
}

/// `K[k] = ε/(σ√(2π)) · exp(-½((x_k-μ)/σ)²)`, symmetric under `k ↔ N-k`.
pub fn gaussian_kernel(params: &GaussianKernelSpec, n: usize) -> Result<Vec<f64>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::invalid("gaussian kernel length must be >= 1"));
    }
    let norm = params.epsilon / (params.sigma * (2.0 * PI).sqrt());
    Ok((0..n)
        .map(|k| {
            let z = (bin_coordinate(k, n) - params.mu) / params.sigma;
            norm * (-0.5 * z * z).exp()
        })
        .collect())
}

/// `y[n] = Σₘ x[m]·h[(n-m) mod N]`, evaluated literally.
pub fn circular_convolve(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.len() != h.len() {
        return Err(Error::shape(
            "circular_convolve",
            format!("lengths {} and {}", x.len(), h.len()),
        ));
    }
    let n = x.len();
    Ok((0..n)
        .map(|i| (0..n).map(|m| x[m] * h[(i + n - m) % n]).sum())
        .collect())
}
