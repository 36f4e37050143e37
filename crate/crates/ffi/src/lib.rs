//! C ABI over graftbench.
//!
//! Every fallible call returns a [`GbStatus`]. On failure the message is kept
//! per thread and read back with [`gb_last_error`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use graftbench::corpus::{Corpus, Origin};
use graftbench::eval::{sentence_features, weighted_f1};
use graftbench::linalg::Matrix;
use graftbench::mlm::Checkpoint;
use graftbench::ofa::{factorize, EmbeddingMatrix};
use graftbench::pipeline::load_model;
use graftbench::tokenizer::{train_bpe, BpeTokenizer};
use graftbench::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Data = 6,
    Shape = 7,
    Config = 8,
    Numeric = 9,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 10,
    Panic = 11,
}

/// Opaque BPE tokenizer.
pub struct GbTokenizer(BpeTokenizer);

/// Opaque encoder checkpoint together with its tokenizer.
pub struct GbModel {
    ckpt: Checkpoint,
    tok: BpeTokenizer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GbStatus {
    match e {
        Error::Io { .. } => GbStatus::Io,
        Error::Decode { .. } => GbStatus::InvalidUtf8,
        Error::Parse { .. } | Error::Json(_) => GbStatus::Parse,
        Error::Argument(_) => GbStatus::InvalidArgument,
        Error::Config(_) | Error::Validation(_) => GbStatus::Config,
        Error::Data(_) => GbStatus::Data,
        Error::Numeric(_) => GbStatus::Numeric,
        Error::Shape(_) => GbStatus::Shape,
        Error::Stage { source, .. } => status_of(source),
    }
}

struct Fail(GbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GbStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GbStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            GbStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(GbStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    match (p.is_null(), n) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, _) => Ok(std::slice::from_raw_parts(p, n)),
    }
}

/// Copies `src` into a caller buffer of `cap` elements, always storing the full length.
unsafe fn fill<T: Copy>(src: &[T], out: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = src.len();
    if src.len() > cap {
        return Err(Fail(
            GbStatus::BufferTooSmall,
            format!("need {} elements, buffer holds {cap}", src.len()),
        ));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn gb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a tokenizer from `vocab.txt` and `merges.txt` files.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gb_tokenizer_load(
    vocab_path: *const c_char,
    merges_path: *const c_char,
    out: *mut *mut GbTokenizer,
) -> GbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let tok = BpeTokenizer::load(text(vocab_path, "vocab_path")?, text(merges_path, "merges_path")?)?;
        *out = Box::into_raw(Box::new(GbTokenizer(tok)));
        Ok(())
    })
}

/// Trains a BPE tokenizer on `n` sentences.
///
/// # Safety
/// `lines` must hold `n` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gb_tokenizer_train(
    lines: *const *const c_char,
    n: usize,
    vocab_size: usize,
    out: *mut *mut GbTokenizer,
) -> GbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ptrs = slice(lines, n, "lines")?;
        let texts = ptrs.iter().map(|&p| text(p, "lines[i]")).collect::<Result<Vec<_>, _>>()?;
        let corpus = Corpus::from_lines("und", Origin::Natural, texts);
        *out = Box::into_raw(Box::new(GbTokenizer(train_bpe(&corpus, vocab_size)?)));
        Ok(())
    })
}

/// Writes vocab and merges files.
///
/// # Safety
/// `tok` must come from this library; paths must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gb_tokenizer_save(
    tok: *const GbTokenizer,
    vocab_path: *const c_char,
    merges_path: *const c_char,
) -> GbStatus {
    guard(|| {
        let tok = tok.as_ref().ok_or_else(|| null("tok"))?;
        tok.0.save(text(vocab_path, "vocab_path")?, text(merges_path, "merges_path")?)?;
        Ok(())
    })
}

/// Number of tokens in the vocabulary, or 0 for a null handle.
///
/// # Safety
/// `tok` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gb_tokenizer_vocab_size(tok: *const GbTokenizer) -> usize {
    tok.as_ref().map_or(0, |t| t.0.vocab().len())
}

/// Token ids of `text`. If `cap` is too small, returns `BufferTooSmall` and
/// sets `*out_len` to the needed length.
///
/// # Safety
/// `ids` must hold `cap` elements; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gb_tokenizer_encode(
    tok: *const GbTokenizer,
    input: *const c_char,
    ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> GbStatus {
    guard(|| {
        let tok = tok.as_ref().ok_or_else(|| null("tok"))?;
        let encoded = tok.0.tokenize(text(input, "text")?);
        fill(&encoded, ids, cap, out_len)
    })
}

/// Text of `n` ids as UTF-8 plus a trailing NUL. `*out_len` counts the bytes
/// without the NUL; `cap` must exceed it.
///
/// # Safety
/// `ids` must hold `n` elements and `buf` `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn gb_tokenizer_decode(
    tok: *const GbTokenizer,
    ids: *const u32,
    n: usize,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> GbStatus {
    guard(|| {
        let tok = tok.as_ref().ok_or_else(|| null("tok"))?;
        let s = tok.0.detokenize(slice(ids, n, "ids")?)?;
        let mut bytes = s.into_bytes();
        bytes.push(0);
        let r = fill(&bytes, buf.cast::<u8>(), cap, out_len);
        if !out_len.is_null() {
            *out_len = bytes.len() - 1;
        }
        r
    })
}

/// # Safety
/// `tok` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gb_tokenizer_free(tok: *mut GbTokenizer) {
    if !tok.is_null() {
        drop(Box::from_raw(tok));
    }
}

/// Loads a model directory: checkpoint files plus `vocab.txt` and `merges.txt`.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gb_model_load(dir: *const c_char, out: *mut *mut GbModel) -> GbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (ckpt, tok) = load_model(Path::new(text(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(GbModel { ckpt, tok }));
        Ok(())
    })
}

/// Hidden size of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gb_model_dim(model: *const GbModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.config.dim)
}

/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gb_model_num_parameters(model: *const GbModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.num_parameters())
}

/// Mean-pooled final hidden state of `text`, `dim` values.
///
/// # Safety
/// `out` must hold `cap` doubles; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gb_model_embed(
    model: *const GbModel,
    input: *const c_char,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> GbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let features = sentence_features(&m.ckpt, &m.tok, &[text(input, "text")?])?;
        fill(features.row(0), out, cap, out_len)
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gb_model_free(model: *mut GbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Support-weighted F1 over class ids `0..num_classes`.
///
/// # Safety
/// `preds` and `golds` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gb_weighted_f1(
    preds: *const u32,
    golds: *const u32,
    n: usize,
    num_classes: u32,
    out: *mut f64,
) -> GbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let labels: Vec<u32> = (0..num_classes).collect();
        *out = weighted_f1(slice(preds, n, "preds")?, slice(golds, n, "golds")?, &labels)?.weighted_f1;
        Ok(())
    })
}

/// Truncated SVD of a row-major `rows`×`cols` matrix: `coords` receives
/// `rows`×`d` values, `primitives` `d`×`cols`. `singular_values` may be null,
/// otherwise it receives `min(rows, cols)` values.
///
/// # Safety
/// All non-null buffers must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn gb_factorize(
    values: *const f64,
    rows: usize,
    cols: usize,
    d: usize,
    coords: *mut f64,
    primitives: *mut f64,
    singular_values: *mut f64,
) -> GbStatus {
    guard(|| {
        if coords.is_null() || primitives.is_null() {
            return Err(null("coords/primitives"));
        }
        let n = rows.checked_mul(cols).ok_or_else(|| Fail(GbStatus::InvalidArgument, "matrix too large".into()))?;
        let m = Matrix::from_vec(rows, cols, slice(values, n, "values")?.to_vec())?;
        let fe = factorize(&EmbeddingMatrix::new(m)?, d)?;
        ptr::copy_nonoverlapping(fe.coords.data().as_ptr(), coords, rows * d);
        ptr::copy_nonoverlapping(fe.primitives.data().as_ptr(), primitives, d * cols);
        if !singular_values.is_null() {
            let k = rows.min(cols).min(fe.singular_values.len());
            ptr::copy_nonoverlapping(fe.singular_values.as_ptr(), singular_values, k);
        }
        Ok(())
    })
}
