//! Scalar focal binary cross-entropy terms shared by the contrastive loss
//! and the classification loss.

/// `-w_pos·(1-p)^γ·ln p` for a positive, `-w_neg·p^γ·ln(1-p)` for a negative.
pub fn term(p: f64, positive: bool, w_pos: f64, w_neg: f64, gamma: f64) -> f64 {
    if positive {
        -w_pos * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -w_neg * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Derivative of [`term`] with respect to `p`.
pub fn derivative(p: f64, positive: bool, w_pos: f64, w_neg: f64, gamma: f64) -> f64 {
    if positive {
        let q = 1.0 - p;
        let modulating = if gamma == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * p.ln()
        };
        w_pos * (modulating - q.powf(gamma) / p)
    } else {
        let q = 1.0 - p;
        let modulating = if gamma == 0.0 {
            0.0
        } else {
            gamma * p.powf(gamma - 1.0) * q.ln()
        };
        -w_neg * (modulating - p.powf(gamma) / q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_matches_central_difference() {
        let h = 1e-6;
        for &p in &[0.05, 0.3, 0.5, 0.77, 0.95] {
            for &pos in &[true, false] {
                for &g in &[0.0, 1.0, 2.0, 2.5] {
                    let fd = (term(p + h, pos, 0.25, 0.75, g) - term(p - h, pos, 0.25, 0.75, g))
                        / (2.0 * h);
                    let an = derivative(p, pos, 0.25, 0.75, g);
                    assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{p} {pos} {g}");
                }
            }
        }
    }
}
