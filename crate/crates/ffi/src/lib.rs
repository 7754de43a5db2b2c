//! C ABI over model loading, sentence embedding and similarity.
//!
//! Functions return 0 on success and -1 on failure; the message of the last
//! failure on the calling thread is available from [`sentvec_last_error`].
//! A handle may be shared by concurrent readers, but `sentvec_free` must not
//! race with other calls on the same handle.
//!
//! Preprocessing uses the defaults of the command-line tool, so vectors are
//! identical to what `sentvec embed` prints.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sentvec::prep::{prepare_sentence, PrepConfig};
use sentvec::{similarity, EmbeddingModel};

/// Opaque model handle.
pub struct SentvecModel {
    model: EmbeddingModel,
    prep: PrepConfig,
}

impl SentvecModel {
    fn embed(&self, sentence: &str) -> Vec<f32> {
        self.model.sentence_vector(&prepare_sentence(sentence, &self.prep))
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Run `f`, turning errors and panics into -1 plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), String>) -> i32 {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => 0,
        Ok(Err(msg)) => {
            set_error(msg);
            -1
        }
        Err(_) => {
            set_error("internal error");
            -1
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, String> {
    if p.is_null() {
        return Err(format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| format!("{what} is not valid UTF-8"))
}

unsafe fn handle<'a>(h: *const SentvecModel) -> Result<&'a SentvecModel, String> {
    h.as_ref().ok_or_else(|| "model handle is null".to_string())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn sentvec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Load a model file. Returns null on failure.
///
/// # Safety
/// `path` must be null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sentvec_load(path: *const c_char) -> *mut SentvecModel {
    let mut out = ptr::null_mut();
    guard(|| {
        let path = str_arg(path, "path")?;
        let model = EmbeddingModel::load(path).map_err(|e| format!("cannot load {path}: {e}"))?;
        out = Box::into_raw(Box::new(SentvecModel {
            model,
            prep: PrepConfig::default(),
        }));
        Ok(())
    });
    out
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `h` must be null or a handle from [`sentvec_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sentvec_free(h: *mut SentvecModel) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Vector dimension, 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sentvec_dim(h: *const SentvecModel) -> u32 {
    h.as_ref().map_or(0, |m| m.model.dim() as u32)
}

/// Number of vocabulary words, 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sentvec_vocab_size(h: *const SentvecModel) -> u32 {
    h.as_ref().map_or(0, |m| m.model.vocab().len() as u32)
}

/// Write the vector of `sentence` to `out`, which holds `len` floats;
/// `len` must equal the model dimension.
///
/// # Safety
/// `h` must be a live handle, `sentence` a NUL-terminated string and `out`
/// valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sentvec_embed(
    h: *const SentvecModel,
    sentence: *const c_char,
    out: *mut f32,
    len: usize,
) -> i32 {
    guard(|| {
        let m = handle(h)?;
        let s = str_arg(sentence, "sentence")?;
        if len != m.model.dim() {
            return Err(format!("output length {len} does not match dimension {}", m.model.dim()));
        }
        if out.is_null() {
            return Err("output buffer is null".into());
        }
        let v = m.embed(s);
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&v);
        Ok(())
    })
}

/// Embed `n` sentences into `out` (row-major, `n * dim` floats).
///
/// # Safety
/// `sentences` must point to `n` NUL-terminated strings and `out` must be
/// valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sentvec_embed_batch(
    h: *const SentvecModel,
    sentences: *const *const c_char,
    n: usize,
    out: *mut f32,
    len: usize,
) -> i32 {
    guard(|| {
        let m = handle(h)?;
        let d = m.model.dim();
        if n.checked_mul(d) != Some(len) {
            return Err(format!("output length {len} is not {n} x {d}"));
        }
        if n == 0 {
            return Ok(());
        }
        if sentences.is_null() || out.is_null() {
            return Err("null pointer argument".into());
        }
        let items = std::slice::from_raw_parts(sentences, n);
        let texts = items
            .iter()
            .enumerate()
            .map(|(i, &p)| str_arg(p, &format!("sentence {i}")))
            .collect::<Result<Vec<_>, _>>()?;
        let out = std::slice::from_raw_parts_mut(out, len);
        for (row, s) in out.chunks_exact_mut(d).zip(texts) {
            row.copy_from_slice(&m.embed(s));
        }
        Ok(())
    })
}

/// Cosine similarity of two sentences, written to `out`.
///
/// # Safety
/// `h` must be a live handle, `s1`/`s2` NUL-terminated strings and `out`
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sentvec_similarity(
    h: *const SentvecModel,
    s1: *const c_char,
    s2: *const c_char,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let m = handle(h)?;
        let (a, b) = (str_arg(s1, "s1")?, str_arg(s2, "s2")?);
        if out.is_null() {
            return Err("output pointer is null".into());
        }
        *out = similarity(&m.embed(a), &m.embed(b));
        Ok(())
    })
}
