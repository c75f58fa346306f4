//! C ABI over `armot`.
//!
//! Every entry point returns an [`ArmotStatus`]; on failure a message is
//! kept per thread and can be read with [`armot_last_error`]. Panics are
//! caught at the boundary and reported as [`ArmotStatus::Panic`]. Array
//! arguments are `(pointer, length)` pairs; a null pointer is accepted
//! only when the length is zero. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use armot::actl::{actl_loss_value, ReferenceLabels};
use armot::matching::{hungarian, iou_giou, select_referred, BBox, Prediction, ReferThresholds};
use armot::metrics::{aggregate_report, evaluate_all, parse_mot, ExpressionEval};
use armot::spectral::{circular_convolve, dft, idft, Complex64, Spectrum};
use armot::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Shape = 3,
    NonFinite = 4,
    Undefined = 5,
    Parse = 6,
    Io = 7,
    Panic = 8,
}

impl From<&Error> for ArmotStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Json(_) => ArmotStatus::InvalidInput,
            Error::Shape { .. } => ArmotStatus::Shape,
            Error::NonFinite(_) => ArmotStatus::NonFinite,
            Error::Undefined(_) => ArmotStatus::Undefined,
            Error::Parse { .. } => ArmotStatus::Parse,
            Error::Io(_) => ArmotStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(ArmotStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(ArmotStatus::from(&e), e.to_string())
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> ArmotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArmotStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ArmotStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ArmotStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts(p, n))
    }
}

unsafe fn output<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        Ok(&mut [])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts_mut(p, n))
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ArmotStatus::InvalidInput, format!("`{what}` is not UTF-8")))
}

fn area(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols)
        .ok_or_else(|| Failure(ArmotStatus::InvalidInput, format!("{rows}x{cols} overflows")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn armot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn armot_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn armot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Forward DFT of `n` complex samples (radix-2 FFT when `n` is a power of
/// two). Outputs may alias the inputs.
///
/// # Safety
/// All four arrays must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn armot_dft(
    re: *const f64,
    im: *const f64,
    n: usize,
    out_re: *mut f64,
    out_im: *mut f64,
) -> ArmotStatus {
    guard(|| {
        let x: Vec<Complex64> = input(re, n, "re")?
            .iter()
            .zip(input(im, n, "im")?)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        let bins = dft(&x).into_bins();
        let (or, oi) = (output(out_re, n, "out_re")?, output(out_im, n, "out_im")?);
        for (k, v) in bins.into_iter().enumerate() {
            or[k] = v.re;
            oi[k] = v.im;
        }
        Ok(())
    })
}

/// Inverse DFT keeping the real part. The largest discarded imaginary
/// magnitude is written to `max_imag_residue` when it is non-null.
///
/// # Safety
/// `re`, `im` and `out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn armot_idft(
    re: *const f64,
    im: *const f64,
    n: usize,
    out: *mut f64,
    max_imag_residue: *mut f64,
) -> ArmotStatus {
    guard(|| {
        let bins: Vec<Complex64> = input(re, n, "re")?
            .iter()
            .zip(input(im, n, "im")?)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        let signal = idft(&Spectrum::from_bins(bins));
        output(out, n, "out")?.copy_from_slice(&signal.values);
        if let Some(r) = max_imag_residue.as_mut() {
            *r = signal.max_imag_residue;
        }
        Ok(())
    })
}

/// Circular convolution of two length-`n` real signals.
///
/// # Safety
/// `x`, `h` and `out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn armot_circular_convolve(
    x: *const f64,
    h: *const f64,
    n: usize,
    out: *mut f64,
) -> ArmotStatus {
    guard(|| {
        let y = circular_convolve(input(x, n, "x")?, input(h, n, "h")?)?;
        output(out, n, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Minimum-cost assignment of a `rows × cols` cost matrix. `col_of_row[i]`
/// receives the column matched to row `i`, or -1.
///
/// # Safety
/// `cost` must hold `rows * cols` values and `col_of_row` `rows` values.
#[no_mangle]
pub unsafe extern "C" fn armot_hungarian(
    cost: *const f64,
    rows: usize,
    cols: usize,
    col_of_row: *mut i64,
    total: *mut f64,
) -> ArmotStatus {
    guard(|| {
        let flat = input(cost, area(rows, cols)?, "cost")?;
        let matrix: Vec<Vec<f64>> = if cols == 0 {
            vec![Vec::new(); rows]
        } else {
            flat.chunks(cols).map(<[f64]>::to_vec).collect()
        };
        let a = hungarian(&matrix)?;
        let out = output(col_of_row, rows, "col_of_row")?;
        out.fill(-1);
        for &(r, c) in &a.pairs {
            out[r] = c as i64;
        }
        if let Some(t) = total.as_mut() {
            *t = a.total;
        }
        Ok(())
    })
}

/// Focal contrastive loss of a `rows × cols` similarity matrix with values
/// in (0, 1); `labels` holds 1 for referred pairs and 0 otherwise.
///
/// # Safety
/// `chi` and `labels` must hold `rows * cols` values.
#[no_mangle]
pub unsafe extern "C" fn armot_actl_loss(
    chi: *const f64,
    labels: *const u8,
    rows: usize,
    cols: usize,
    gamma: f64,
    loss: *mut f64,
) -> ArmotStatus {
    guard(|| {
        let n = area(rows, cols)?;
        let flags: Vec<bool> = input(labels, n, "labels")?.iter().map(|&b| b != 0).collect();
        let labels = ReferenceLabels::new(rows, cols, flags)?;
        let value = actl_loss_value(input(chi, n, "chi")?, &labels, gamma)?;
        *out_ref(loss, "loss")? = value;
        Ok(())
    })
}

/// IoU and generalized IoU of two `(cx, cy, w, h)` boxes.
///
/// # Safety
/// `a` and `b` must point to 4 values.
#[no_mangle]
pub unsafe extern "C" fn armot_iou_giou(a: *const f64, b: *const f64, iou: *mut f64, giou: *mut f64) -> ArmotStatus {
    guard(|| {
        let (a, b) = (input(a, 4, "a")?, input(b, 4, "b")?);
        let (i, g) = iou_giou(&BBox::new(a[0], a[1], a[2], a[3]), &BBox::new(b[0], b[1], b[2], b[3]));
        *out_ref(iou, "iou")? = i;
        *out_ref(giou, "giou")? = g;
        Ok(())
    })
}

/// Strict decision rule with the default thresholds: class score above
/// 0.7 and referring score above 0.5.
#[no_mangle]
pub extern "C" fn armot_select_referred(class_score: f64, referring_score: f64) -> bool {
    let pred = Prediction {
        class_score,
        referring_score,
        bbox: BBox::new(0.0, 0.0, 0.0, 0.0),
    };
    select_referred(&pred, &ReferThresholds::default())
}

/// Accumulates expressions for tracking evaluation.
pub struct ArmotEvaluator {
    expressions: Vec<ExpressionEval>,
}

/// Aggregated tracking metrics. MOTA and IDF1 are only meaningful when the
/// matching `*_defined` flag is set.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArmotMetrics {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub mota: f64,
    pub idf1: f64,
    pub mota_defined: bool,
    pub idf1_defined: bool,
    pub expressions: usize,
}

/// New empty evaluator; release it with [`armot_evaluator_free`].
#[no_mangle]
pub extern "C" fn armot_evaluator_new() -> *mut ArmotEvaluator {
    Box::into_raw(Box::new(ArmotEvaluator {
        expressions: Vec::new(),
    }))
}

/// # Safety
/// `ev` must come from [`armot_evaluator_new`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn armot_evaluator_free(ev: *mut ArmotEvaluator) {
    if !ev.is_null() {
        drop(Box::from_raw(ev));
    }
}

/// Adds one expression given the text of its ground-truth and prediction
/// MOT files.
///
/// # Safety
/// `ev` must be a live evaluator; the strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn armot_evaluator_add(
    ev: *mut ArmotEvaluator,
    name: *const c_char,
    gt_mot: *const c_char,
    pred_mot: *const c_char,
) -> ArmotStatus {
    guard(|| {
        let ev = out_ref(ev, "ev")?;
        let name = c_str(name, "name")?;
        let gt = parse_mot(c_str(gt_mot, "gt_mot")?, &format!("{name}/gt.txt"))?;
        let pred = parse_mot(c_str(pred_mot, "pred_mot")?, &format!("{name}/pred.txt"))?;
        ev.expressions.push(ExpressionEval::new(name, gt, pred)?);
        Ok(())
    })
}

/// Metrics averaged over every added expression.
///
/// # Safety
/// `ev` must be a live evaluator and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn armot_evaluator_compute(ev: *const ArmotEvaluator, out: *mut ArmotMetrics) -> ArmotStatus {
    guard(|| {
        let ev = ev.as_ref().ok_or_else(|| null("ev"))?;
        let out = out_ref(out, "out")?;
        let report = aggregate_report(evaluate_all(&ev.expressions)?)?;
        *out = ArmotMetrics {
            hota: report.hota,
            det_a: report.det_a,
            ass_a: report.ass_a,
            mota: report.mota.unwrap_or(f64::NAN),
            idf1: report.idf1.unwrap_or(f64::NAN),
            mota_defined: report.mota.is_some(),
            idf1_defined: report.idf1.is_some(),
            expressions: report.expressions.len(),
        };
        Ok(())
    })
}
