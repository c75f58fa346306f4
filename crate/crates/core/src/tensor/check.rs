use super::{OpKind, Tape, Tensor};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub step: f64,
    /// Corrupts the backward rule of one op kind on the analytic pass.
    pub fault: Option<OpKind>,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: FD_STEP,
            fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamGrad {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

/// Analytic vs central-difference gradients for every parameter.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub params: Vec<ParamGrad>,
    pub max_rel_err: f64,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    /// Name of the parameter with the largest error.
    pub fn worst(&self) -> Option<&ParamGrad> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let bound: Vec<Tensor> = params.iter().map(|p| tape.constant(p)).collect();
    f(&mut tape, &bound)?.item()
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences `(f(p+h) - f(p-h)) / 2h`, one coordinate at a time.
///
/// `f` receives the parameters already registered on the tape it is given.
pub fn finite_diff_check<F>(params: &[(String, Tensor)], f: F, opts: &FdOptions) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    tape.set_fault(opts.fault);
    let bound: Vec<Tensor> = params.iter().map(|(_, t)| tape.param(t)).collect();
    let loss = f(&mut tape, &bound)?;
    let base = loss.item()?;
    if !base.is_finite() {
        return Err(Error::NonFinite("f at the unperturbed parameters".into()));
    }
    let grads = tape.backward(&loss)?;

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.detach()).collect();
    let h = opts.step;
    let mut report = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let analytic = grads
            .get(&bound[pi])
            .expect("bound parameters require gradients")
            .into_data();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = values[pi].data()[i];
            values[pi].data_mut()[i] = orig + h;
            let plus = evaluate(&f, &values)?;
            values[pi].data_mut()[i] = orig - h;
            let minus = evaluate(&f, &values)?;
            values[pi].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "f(p ± h) at parameter `{name}` coordinate {i}"
                )));
            }
            numeric.push((plus - minus) / (2.0 * h));
        }
        let max_rel_err = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| relative_error(*a, *n))
            .fold(0.0, f64::max);
        report.push(ParamGrad {
            name: name.clone(),
            analytic,
            numeric,
            max_rel_err,
        });
    }
    let max_rel_err = report.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradReport {
        params: report,
        max_rel_err,
    })
}
