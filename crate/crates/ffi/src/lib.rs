//! C ABI over the `pucl` library.
//!
//! Every fallible function returns a [`PuclStatus`]; on failure the message is available from
//! [`pucl_last_error_message`] on the same thread. Matrices are row-major `double` buffers.
//! Handles are opaque and must be released with their `*_free` function.

use pucl::classifier_head::{risk_nnpu, risk_upu, train_ce, HeadConfig, LinearHead, RiskBreakdown};
use pucl::contrastive::{loss, LossKind, MultiViewBatch};
use pucl::encoder::{train_encoder, Activation, MlpEncoder, TrainHyper};
use pucl::numerics::Matrix;
use pucl::pu_data::{breakdown_violated, kappa_pu, noise_rates, Observed, PuView};
use pucl::pupl::{pupl, PuplConfig};
use pucl::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuclStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimMismatch = 3,
    NonFinite = 4,
    EmptyInput = 5,
    BufferTooSmall = 6,
    Parse = 7,
    Panic = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuclLossKind {
    Sscl = 0,
    SclPu = 1,
    Pucl = 2,
    Scl = 3,
    Mcl = 4,
    Dcl = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuclActivation {
    Relu = 0,
    Tanh = 1,
    Identity = 2,
}

/// Terms of a PU risk estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PuclRisk {
    pub r_p_plus: f64,
    pub r_p_minus: f64,
    pub r_u_minus: f64,
    pub negative_part: f64,
    pub risk: f64,
    pub clipped: bool,
}

/// Opaque encoder handle.
pub struct PuclEncoder(MlpEncoder);

/// Opaque linear head handle.
pub struct PuclHead(LinearHead);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PuclStatus {
    match e {
        Error::DimMismatch(_) | Error::LengthMismatch(..) => PuclStatus::DimMismatch,
        Error::NonFinite(_) => PuclStatus::NonFinite,
        Error::EmptySet | Error::EmptyPositives | Error::EmptyUnlabeled | Error::EmptyAugmentationSet => PuclStatus::EmptyInput,
        Error::Parse(_) | Error::Json(_) | Error::Csv(_) => PuclStatus::Parse,
        Error::Io(_) => PuclStatus::Internal,
        _ => PuclStatus::InvalidArgument,
    }
}

fn fail(status: PuclStatus, msg: impl Into<String>) -> PuclStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), PuclStatus>) -> PuclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PuclStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(PuclStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, PuclStatus>;
}

impl<T> OrStatus<T> for pucl::Result<T> {
    fn or_status(self) -> Result<T, PuclStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), PuclStatus> {
    if p.is_null() {
        Err(fail(PuclStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null only when `len == 0`, otherwise valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], PuclStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], PuclStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be valid for `rows * cols` reads.
unsafe fn matrix(p: *const f64, rows: usize, cols: usize, name: &str) -> Result<Matrix, PuclStatus> {
    let n = rows.checked_mul(cols).ok_or_else(|| fail(PuclStatus::InvalidArgument, format!("{name}: size overflow")))?;
    let data = slice(p, n, name)?.to_vec();
    Matrix::new(rows, cols, data).or_status()
}

fn flags(p: &[u8]) -> Vec<bool> {
    p.iter().map(|&b| b != 0).collect()
}

fn loss_kind(kind: PuclLossKind, lambda: f64) -> LossKind {
    match kind {
        PuclLossKind::Sscl => LossKind::Sscl,
        PuclLossKind::SclPu => LossKind::SclPu,
        PuclLossKind::Pucl => LossKind::Pucl,
        PuclLossKind::Scl => LossKind::Scl,
        PuclLossKind::Mcl => LossKind::Mcl { lambda },
        PuclLossKind::Dcl => LossKind::Dcl { lambda },
    }
}

fn risk_out(r: RiskBreakdown) -> PuclRisk {
    PuclRisk {
        r_p_plus: r.r_p_plus,
        r_p_minus: r.r_p_minus,
        r_u_minus: r.r_u_minus,
        negative_part: r.negative_part,
        risk: r.risk,
        clipped: r.clipped,
    }
}

/// Copies `s` with a NUL terminator into `buf` when it fits. Returns the required size
/// including the terminator.
///
/// # Safety
/// `buf` must be valid for `cap` writes or null with `cap == 0`.
unsafe fn write_cstr(s: &str, buf: *mut c_char, cap: usize) -> usize {
    let need = s.len() + 1;
    if !buf.is_null() && cap >= need {
        std::ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
        *buf.add(s.len()) = 0;
    }
    need
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pucl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread. Returns the buffer size needed,
/// including the terminator; the message is copied only when `cap` is large enough.
///
/// # Safety
/// `buf` must be valid for `cap` writes, or null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn pucl_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| write_cstr(&e.borrow(), buf, cap))
}

/// Scale factor `pi (1 - pi) / (1 + gamma)` of the naive supervised loss bias.
#[no_mangle]
pub extern "C" fn pucl_kappa_pu(pi: f64, gamma: f64) -> f64 {
    kappa_pu(pi, gamma)
}

/// True when `gamma <= 2 pi - 1`.
#[no_mangle]
pub extern "C" fn pucl_breakdown_violated(pi: f64, gamma: f64) -> bool {
    breakdown_violated(pi, gamma)
}

/// Flip rates of treating unlabeled rows as negatives.
///
/// # Safety
/// `xi_p` and `xi_n` must be valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn pucl_noise_rates(pi: f64, gamma: f64, xi_p: *mut f64, xi_n: *mut f64) -> PuclStatus {
    guard(|| {
        non_null(xi_p, "xi_p")?;
        non_null(xi_n, "xi_n")?;
        if !(0.0..=1.0).contains(&pi) || !(gamma >= 0.0) || gamma + pi == 0.0 {
            return Err(fail(PuclStatus::InvalidArgument, format!("pi = {pi}, gamma = {gamma}")));
        }
        let (p, n) = noise_rates(pi, gamma);
        *xi_p = p;
        *xi_n = n;
        Ok(())
    })
}

/// Contrastive loss of a two-view batch. Row `i` of `z1` and row `i` of `z2` are views of
/// source `i`; `labeled[i]` marks labeled positives; `full_labels` may be null except for
/// `SCL`. `grad_out` receives `2 * batch * dim` values: the gradient for `z1` rows, then `z2`.
///
/// # Safety
/// `z1` and `z2` must hold `batch * dim` values, `labeled` and `full_labels` (if non-null)
/// `batch` bytes, `grad_out` room for `2 * batch * dim` values and `value` one write.
#[no_mangle]
pub unsafe extern "C" fn pucl_loss(
    kind: PuclLossKind,
    lambda: f64,
    z1: *const f64,
    z2: *const f64,
    batch: usize,
    dim: usize,
    labeled: *const u8,
    full_labels: *const u8,
    tau: f64,
    value: *mut f64,
    grad_out: *mut f64,
) -> PuclStatus {
    guard(|| {
        non_null(value, "value")?;
        let a = matrix(z1, batch, dim, "z1")?;
        let b = matrix(z2, batch, dim, "z2")?;
        let lab = flags(slice(labeled, batch, "labeled")?);
        let full = if full_labels.is_null() { None } else { Some(flags(slice(full_labels, batch, "full_labels")?)) };
        let mvb = MultiViewBatch::from_views_with_labels(&a, &b, &lab, full.as_deref(), tau).or_status()?;
        let rep = loss(loss_kind(kind, lambda), &mvb).or_status()?;
        slice_mut(grad_out, 2 * batch * dim, "grad_out")?.copy_from_slice(rep.grad.as_slice());
        *value = rep.value;
        Ok(())
    })
}

/// Creates a randomly initialized encoder with layer widths `widths[0..n_widths]`.
///
/// # Safety
/// `widths` must hold `n_widths` values; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pucl_encoder_new(
    widths: *const usize,
    n_widths: usize,
    activation: PuclActivation,
    normalize: bool,
    seed: u64,
    out: *mut *mut PuclEncoder,
) -> PuclStatus {
    guard(|| {
        non_null(out, "out")?;
        let w = slice(widths, n_widths, "widths")?;
        let act = match activation {
            PuclActivation::Relu => Activation::Relu,
            PuclActivation::Tanh => Activation::Tanh,
            PuclActivation::Identity => Activation::Identity,
        };
        let enc = MlpEncoder::new_random(w, act, normalize, seed).or_status()?;
        *out = Box::into_raw(Box::new(PuclEncoder(enc)));
        Ok(())
    })
}

/// Restores an encoder from its JSON checkpoint.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pucl_encoder_from_json(json: *const c_char, out: *mut *mut PuclEncoder) -> PuclStatus {
    guard(|| {
        non_null(json, "json")?;
        non_null(out, "out")?;
        let s = CStr::from_ptr(json).to_str().map_err(|e| fail(PuclStatus::Parse, e.to_string()))?;
        let enc = MlpEncoder::from_json(s).or_status()?;
        *out = Box::into_raw(Box::new(PuclEncoder(enc)));
        Ok(())
    })
}

/// Writes the JSON checkpoint into `buf` and the required size (with terminator) into
/// `needed`. Returns `BUFFER_TOO_SMALL` without writing when `cap` is insufficient.
///
/// # Safety
/// `enc` must come from this library; `buf` valid for `cap` writes; `needed` for one write.
#[no_mangle]
pub unsafe extern "C" fn pucl_encoder_to_json(enc: *const PuclEncoder, buf: *mut c_char, cap: usize, needed: *mut usize) -> PuclStatus {
    guard(|| {
        non_null(enc, "enc")?;
        non_null(needed, "needed")?;
        let s = (*enc).0.to_json().or_status()?;
        let need = write_cstr(&s, buf, cap);
        *needed = need;
        if cap < need || buf.is_null() {
            return Err(fail(PuclStatus::BufferTooSmall, format!("need {need} bytes")));
        }
        Ok(())
    })
}

/// # Safety
/// `enc` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn pucl_encoder_input_dim(enc: *const PuclEncoder) -> usize {
    if enc.is_null() {
        0
    } else {
        (*enc).0.input_dim()
    }
}

/// # Safety
/// `enc` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn pucl_encoder_output_dim(enc: *const PuclEncoder) -> usize {
    if enc.is_null() {
        0
    } else {
        (*enc).0.output_dim()
    }
}

/// Embeds `rows` inputs of the encoder's input width into `out` (`rows * output_dim` values).
///
/// # Safety
/// `enc` must come from this library; `x` must hold `rows * input_dim` values; `out`
/// room for `rows * output_dim` values.
#[no_mangle]
pub unsafe extern "C" fn pucl_encoder_encode(enc: *const PuclEncoder, x: *const f64, rows: usize, out: *mut f64) -> PuclStatus {
    guard(|| {
        non_null(enc, "enc")?;
        let e = &(*enc).0;
        let z = e.encode(&matrix(x, rows, e.input_dim(), "x")?).or_status()?;
        slice_mut(out, z.as_slice().len(), "out")?.copy_from_slice(z.as_slice());
        Ok(())
    })
}

/// Trains the encoder in place on PU rows; `labeled[i] != 0` marks labeled positives.
/// `final_loss` (may be null) receives the last epoch's mean loss.
///
/// # Safety
/// `enc` must come from this library; `x` must hold `rows * input_dim` values; `labeled`
/// `rows` bytes.
#[no_mangle]
pub unsafe extern "C" fn pucl_encoder_train(
    enc: *mut PuclEncoder,
    x: *const f64,
    rows: usize,
    labeled: *const u8,
    kind: PuclLossKind,
    lambda: f64,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    tau: f64,
    aug_sigma: f64,
    seed: u64,
    final_loss: *mut f64,
) -> PuclStatus {
    guard(|| {
        non_null(enc, "enc")?;
        let e = &mut (*enc).0;
        let feats = matrix(x, rows, e.input_dim(), "x")?;
        let obs: Vec<Observed> = slice(labeled, rows, "labeled")?.iter().map(|&b| if b != 0 { Observed::P } else { Observed::U }).collect();
        let hyper = TrainHyper { lr, epochs, batch_size, tau, aug_sigma, seed };
        let hist = train_encoder(e, PuView { features: &feats, observed: &obs }, loss_kind(kind, lambda), &hyper).or_status()?;
        if !final_loss.is_null() {
            *final_loss = hist.loss.last().copied().unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// # Safety
/// `enc` must come from this library and not be used afterwards, or be null.
#[no_mangle]
pub unsafe extern "C" fn pucl_encoder_free(enc: *mut PuclEncoder) {
    if !enc.is_null() {
        drop(Box::from_raw(enc));
    }
}

/// PU pseudo-labeling of embeddings. Writes one 0/1 label per row, both centroids
/// (`dim` values each, may be null) and the final potential (may be null).
///
/// # Safety
/// `z` must hold `rows * dim` values, `labeled` and `labels_out` `rows` bytes; centroid
/// buffers room for `dim` values.
#[no_mangle]
pub unsafe extern "C" fn pucl_pupl(
    z: *const f64,
    rows: usize,
    dim: usize,
    labeled: *const u8,
    seed: u64,
    max_iter: usize,
    tol: f64,
    labels_out: *mut u8,
    mu_p_out: *mut f64,
    mu_n_out: *mut f64,
    potential_out: *mut f64,
) -> PuclStatus {
    guard(|| {
        let zm = matrix(z, rows, dim, "z")?;
        let lab = flags(slice(labeled, rows, "labeled")?);
        let out = slice_mut(labels_out, rows, "labels_out")?;
        let res = pupl(&zm, &lab, &PuplConfig { max_iter, tol, seed }).or_status()?;
        out.copy_from_slice(&res.pseudo_labels);
        if !mu_p_out.is_null() {
            slice_mut(mu_p_out, dim, "mu_p_out")?.copy_from_slice(&res.clustering.mu_p);
        }
        if !mu_n_out.is_null() {
            slice_mut(mu_n_out, dim, "mu_n_out")?.copy_from_slice(&res.clustering.mu_n);
        }
        if !potential_out.is_null() {
            *potential_out = res.clustering.potential;
        }
        Ok(())
    })
}

/// Creates a head with weights `w[0..dim]` and bias `b`.
///
/// # Safety
/// `w` must hold `dim` values; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pucl_head_new(w: *const f64, dim: usize, b: f64, out: *mut *mut PuclHead) -> PuclStatus {
    guard(|| {
        non_null(out, "out")?;
        let w = slice(w, dim, "w")?.to_vec();
        *out = Box::into_raw(Box::new(PuclHead(LinearHead { w, b })));
        Ok(())
    })
}

/// Trains a logistic head on 0/1 labels by full-batch gradient descent.
///
/// # Safety
/// `z` must hold `rows * dim` values, `labels` `rows` bytes; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pucl_head_train_ce(
    z: *const f64,
    rows: usize,
    dim: usize,
    labels: *const u8,
    lr: f64,
    epochs: usize,
    l2: f64,
    seed: u64,
    out: *mut *mut PuclHead,
) -> PuclStatus {
    guard(|| {
        non_null(out, "out")?;
        let zm = matrix(z, rows, dim, "z")?;
        let y = slice(labels, rows, "labels")?;
        let (head, _) = train_ce(&zm, y, &HeadConfig { lr, epochs, l2, seed }).or_status()?;
        *out = Box::into_raw(Box::new(PuclHead(head)));
        Ok(())
    })
}

/// Copies the weights (`dim` values) and bias.
///
/// # Safety
/// `head` must come from this library; `w` room for `dim` values; `b` one write.
#[no_mangle]
pub unsafe extern "C" fn pucl_head_params(head: *const PuclHead, w: *mut f64, dim: usize, b: *mut f64) -> PuclStatus {
    guard(|| {
        non_null(head, "head")?;
        non_null(b, "b")?;
        let h = &(*head).0;
        if dim != h.w.len() {
            return Err(fail(PuclStatus::DimMismatch, format!("head width {} but dim {dim}", h.w.len())));
        }
        slice_mut(w, dim, "w")?.copy_from_slice(&h.w);
        *b = h.b;
        Ok(())
    })
}

/// Writes one 0/1 prediction per row.
///
/// # Safety
/// `head` must come from this library; `z` must hold `rows * dim` values; `out` `rows` bytes.
#[no_mangle]
pub unsafe extern "C" fn pucl_head_predict(head: *const PuclHead, z: *const f64, rows: usize, dim: usize, out: *mut u8) -> PuclStatus {
    guard(|| {
        non_null(head, "head")?;
        let pred = (*head).0.predict(&matrix(z, rows, dim, "z")?).or_status()?;
        slice_mut(out, rows, "out")?.copy_from_slice(&pred);
        Ok(())
    })
}

/// Unbiased (`non_negative == false`) or non-negative PU risk of `head` with logistic loss.
///
/// # Safety
/// `head` must come from this library; `z_p` must hold `n_p * dim` values, `z_u`
/// `n_u * dim`; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pucl_head_pu_risk(
    head: *const PuclHead,
    z_p: *const f64,
    n_p: usize,
    z_u: *const f64,
    n_u: usize,
    dim: usize,
    pi: f64,
    non_negative: bool,
    out: *mut PuclRisk,
) -> PuclStatus {
    guard(|| {
        non_null(head, "head")?;
        non_null(out, "out")?;
        let p = matrix(z_p, n_p, dim, "z_p")?;
        let u = matrix(z_u, n_u, dim, "z_u")?;
        let h = &(*head).0;
        let r = if non_negative { risk_nnpu(h, &p, &u, pi) } else { risk_upu(h, &p, &u, pi) }.or_status()?;
        *out = risk_out(r);
        Ok(())
    })
}

/// # Safety
/// `head` must come from this library and not be used afterwards, or be null.
#[no_mangle]
pub unsafe extern "C" fn pucl_head_free(head: *mut PuclHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}
