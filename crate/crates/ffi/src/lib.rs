//! C ABI over `srnn-core`.
//!
//! Every function returns an [`SrnnStatus`]; results go through out-pointers.
//! On failure a message is kept per thread and can be read with
//! [`srnn_last_error_message`]. Handles are opaque and must be released with
//! the matching `*_free` function. Strings returned to the caller are released
//! with [`srnn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use srnn_core::automata::{equivalent, minimize, to_dot, Dfa};
use srnn_core::checkpoint::Checkpoint;
use srnn_core::extract::extract_dfa;
use srnn_core::langs::{read_dataset, tomita_dfa};
use srnn_core::model::SrRnn;
use srnn_core::Error;

/// Status code returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Parse = 5,
    UnknownToken = 6,
    AlphabetMismatch = 7,
    Internal = 8,
    Panic = 9,
}

/// Trained model handle.
pub struct SrnnModel {
    inner: SrRnn,
}

/// Automaton handle.
pub struct SrnnDfa {
    inner: Dfa,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SrnnStatus {
    match e {
        Error::Io { .. } => SrnnStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => SrnnStatus::Checkpoint,
        Error::Parse { .. } => SrnnStatus::Parse,
        Error::UnknownToken { .. } | Error::UnknownSymbol(_) => SrnnStatus::UnknownToken,
        Error::AlphabetMismatch { .. } => SrnnStatus::AlphabetMismatch,
        Error::InvalidArgument(_) | Error::EmptyDataset | Error::Unsatisfiable(_) => {
            SrnnStatus::InvalidArgument
        }
        _ => SrnnStatus::Internal,
    }
}

struct Fail(SrnnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SrnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SrnnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside srnn");
            SrnnStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SrnnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SrnnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn tokens<'a>(p: *const usize, len: usize) -> Result<&'a [usize], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null("tokens"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed_dfa(dfa: Dfa) -> *mut SrnnDfa {
    Box::into_raw(Box::new(SrnnDfa { inner: dfa }))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn srnn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srnn_model_load(
    path: *const c_char,
    out_model: *mut *mut SrnnModel,
) -> SrnnStatus {
    guard(|| {
        let path = string(path, "path")?;
        let slot = out(out_model, "out_model")?;
        let model = Checkpoint::load(Path::new(path))?.to_model()?;
        *slot = Box::into_raw(Box::new(SrnnModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`srnn_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn srnn_model_free(model: *mut SrnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of alphabet symbols (token ids `0..n`).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn srnn_model_num_symbols(
    model: *const SrnnModel,
    out_n: *mut usize,
) -> SrnnStatus {
    guard(|| {
        let m = deref(model, "model")?;
        *out(out_n, "out_n")? = m.inner.vocabulary().alphabet().len();
        Ok(())
    })
}

/// Token id of an alphabet symbol.
///
/// # Safety
/// Pointers must be valid; `symbol` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn srnn_model_token_id(
    model: *const SrnnModel,
    symbol: *const c_char,
    out_id: *mut usize,
) -> SrnnStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let sym = string(symbol, "symbol")?;
        let slot = out(out_id, "out_id")?;
        let vocab = m.inner.vocabulary();
        match vocab.id(sym) {
            Some(id) if !vocab.is_reserved(id) => {
                *slot = id;
                Ok(())
            }
            _ => Err(Error::UnknownSymbol(sym.to_string()).into()),
        }
    })
}

/// Classifies one sequence. Writes the reject/accept logits to
/// `out_logits[0..2]` and whether the accept logit wins to `out_accept`
/// (either pointer may be null).
///
/// # Safety
/// `tokens` must hold `len` ids; `out_logits`, if non-null, two doubles.
#[no_mangle]
pub unsafe extern "C" fn srnn_model_classify(
    model: *const SrnnModel,
    tokens_ptr: *const usize,
    len: usize,
    out_logits: *mut f64,
    out_accept: *mut bool,
) -> SrnnStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let seq = tokens(tokens_ptr, len)?;
        let l = m.inner.predict(&[seq])?[0];
        if !out_logits.is_null() {
            *out_logits = l[0];
            *out_logits.add(1) = l[1];
        }
        if !out_accept.is_null() {
            *out_accept = l[1] > l[0];
        }
        Ok(())
    })
}

/// Extracts a complete DFA from `model` using the dataset file at `path`.
///
/// # Safety
/// Pointers must be valid; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn srnn_extract_dfa(
    model: *const SrnnModel,
    dataset_path: *const c_char,
    out_dfa: *mut *mut SrnnDfa,
) -> SrnnStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let path = string(dataset_path, "dataset_path")?;
        let slot = out(out_dfa, "out_dfa")?;
        let ds = read_dataset(path, Some(m.inner.vocabulary().alphabet()))?;
        let ex = extract_dfa(&m.inner, &ds)?;
        *slot = boxed_dfa(ex.complete.dfa);
        Ok(())
    })
}

/// Ground-truth automaton of Tomita grammar 1-7.
///
/// # Safety
/// `out_dfa` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srnn_tomita_dfa(grammar: u8, out_dfa: *mut *mut SrnnDfa) -> SrnnStatus {
    guard(|| {
        let slot = out(out_dfa, "out_dfa")?;
        *slot = boxed_dfa(tomita_dfa(grammar)?);
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn srnn_dfa_minimize(
    dfa: *const SrnnDfa,
    out_dfa: *mut *mut SrnnDfa,
) -> SrnnStatus {
    guard(|| {
        let d = deref(dfa, "dfa")?;
        *out(out_dfa, "out_dfa")? = boxed_dfa(minimize(&d.inner));
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn srnn_dfa_num_states(dfa: *const SrnnDfa, out_n: *mut usize) -> SrnnStatus {
    guard(|| {
        let d = deref(dfa, "dfa")?;
        *out(out_n, "out_n")? = d.inner.num_states();
        Ok(())
    })
}

/// # Safety
/// `tokens` must hold `len` symbol indices.
#[no_mangle]
pub unsafe extern "C" fn srnn_dfa_accepts(
    dfa: *const SrnnDfa,
    tokens_ptr: *const usize,
    len: usize,
    out_accept: *mut bool,
) -> SrnnStatus {
    guard(|| {
        let d = deref(dfa, "dfa")?;
        let seq = tokens(tokens_ptr, len)?;
        *out(out_accept, "out_accept")? = d.inner.accepts(seq)?;
        Ok(())
    })
}

/// Graphviz rendering; free the result with [`srnn_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn srnn_dfa_to_dot(
    dfa: *const SrnnDfa,
    out_dot: *mut *mut c_char,
) -> SrnnStatus {
    guard(|| {
        let d = deref(dfa, "dfa")?;
        let slot = out(out_dot, "out_dot")?;
        let text = CString::new(to_dot(&d.inner, None))
            .map_err(|_| Fail(SrnnStatus::Internal, "DOT text contains a nul byte".into()))?;
        *slot = text.into_raw();
        Ok(())
    })
}

/// Language equivalence of two automata over the same alphabet.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn srnn_dfa_equivalent(
    a: *const SrnnDfa,
    b: *const SrnnDfa,
    out_equal: *mut bool,
) -> SrnnStatus {
    guard(|| {
        let a = deref(a, "a")?;
        let b = deref(b, "b")?;
        *out(out_equal, "out_equal")? = equivalent(&a.inner, &b.inner)?.equivalent;
        Ok(())
    })
}

/// # Safety
/// `dfa` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn srnn_dfa_free(dfa: *mut SrnnDfa) {
    if !dfa.is_null() {
        drop(Box::from_raw(dfa));
    }
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn srnn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
