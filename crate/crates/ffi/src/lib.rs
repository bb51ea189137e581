//! C ABI over the question-answering library.
//!
//! Every fallible function returns a [`ClinqaStatus`]. On failure the message
//! is available from [`clinqa_last_error`] on the same thread. Strings
//! returned to the caller are owned by the caller and must be released with
//! [`clinqa_string_free`]; predictors with [`clinqa_predictor_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use clinqa_core::metrics::{span_em, token_f1};
use clinqa_core::synth::lf_tokenize;
use clinqa_core::trainer::Predictor;
use clinqa_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClinqaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Integrity = 5,
    Invariant = 6,
    Encoding = 7,
    Decode = 8,
    Internal = 9,
}

/// Opaque handle to a loaded model directory.
pub struct ClinqaPredictor {
    inner: Predictor,
}

/// Answer span returned by [`clinqa_predictor_answer`]. `text` is owned by
/// the caller; release it with [`clinqa_answer_clear`].
#[repr(C)]
pub struct ClinqaAnswer {
    pub text: *mut c_char,
    /// Byte offsets into the context.
    pub char_start: usize,
    pub char_end: usize,
    pub lf_id: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ClinqaStatus {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Dataset { .. } => ClinqaStatus::Config,
        Error::Io { .. } => ClinqaStatus::Io,
        Error::Integrity(_) => ClinqaStatus::Integrity,
        Error::Invariant(_) | Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => ClinqaStatus::Invariant,
        Error::Encoding(_) | Error::Dimension(_) | Error::Index(_) => ClinqaStatus::Encoding,
        Error::Decode(_) => ClinqaStatus::Decode,
        Error::Internal(_) => ClinqaStatus::Internal,
    }
}

enum Failure {
    Status(ClinqaStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> ClinqaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClinqaStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(&msg);
            s
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            ClinqaStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Status(ClinqaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(ClinqaStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn null_out(what: &str) -> Failure {
    Failure::Status(ClinqaStatus::NullPointer, format!("{what} is null"))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn clinqa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn clinqa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a saved model directory into `*out`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clinqa_predictor_load(dir: *const c_char, out: *mut *mut ClinqaPredictor) -> ClinqaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        *out = ptr::null_mut();
        let dir = read_str(dir, "dir")?;
        let inner = Predictor::load(Path::new(dir))?;
        *out = Box::into_raw(Box::new(ClinqaPredictor { inner }));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`clinqa_predictor_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clinqa_predictor_free(p: *mut ClinqaPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Extracts the answer to `question` from `context`.
///
/// # Safety
/// `p` must be a live handle, the strings NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn clinqa_predictor_answer(
    p: *const ClinqaPredictor,
    question: *const c_char,
    context: *const c_char,
    out: *mut ClinqaAnswer,
) -> ClinqaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        (*out).text = ptr::null_mut();
        let p = p.as_ref().ok_or_else(|| null_out("predictor"))?;
        let q = read_str(question, "question")?;
        let c = read_str(context, "context")?;
        let a = p.inner.answer(q, c)?;
        *out = ClinqaAnswer {
            text: into_c_string(a.text),
            char_start: a.char_start,
            char_end: a.char_end,
            lf_id: a.lf_id as u32,
        };
        Ok(())
    })
}

/// Frees the answer text and nulls the pointer.
///
/// # Safety
/// `a` must be null or point to an answer filled by this library.
#[no_mangle]
pub unsafe extern "C" fn clinqa_answer_clear(a: *mut ClinqaAnswer) {
    if let Some(a) = a.as_mut() {
        clinqa_string_free(a.text);
        a.text = ptr::null_mut();
    }
}

/// Token-overlap F1 between two answers after normalization.
///
/// # Safety
/// Strings must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn clinqa_token_f1(pred: *const c_char, gold: *const c_char, out: *mut f64) -> ClinqaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        *out = token_f1(read_str(pred, "pred")?, read_str(gold, "gold")?);
        Ok(())
    })
}

/// 1.0 when the normalized answers are identical, else 0.0.
///
/// # Safety
/// Strings must be NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn clinqa_exact_match(pred: *const c_char, gold: *const c_char, out: *mut f64) -> ClinqaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        *out = span_em(read_str(pred, "pred")?, read_str(gold, "gold")?);
        Ok(())
    })
}

/// Tokens of a logical form as a JSON array string in `*out`.
///
/// # Safety
/// `lf` must be NUL-terminated; `out` valid. Free `*out` with
/// [`clinqa_string_free`].
#[no_mangle]
pub unsafe extern "C" fn clinqa_lf_tokenize(lf: *const c_char, out: *mut *mut c_char) -> ClinqaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_out("out"));
        }
        *out = ptr::null_mut();
        let tokens = lf_tokenize(read_str(lf, "lf")?);
        *out = into_c_string(serde_json::to_string(&tokens).map_err(Error::from)?);
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn clinqa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
