use std::ffi::{CStr, CString};
use std::ptr;

use graftbench_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = gb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn trained() -> *mut GbTokenizer {
    let lines: Vec<CString> = ["the cat sat on the mat", "the dog sat on the log", "a cat and a dog"]
        .iter()
        .map(|s| c(s))
        .collect();
    let ptrs: Vec<_> = lines.iter().map(|l| l.as_ptr()).collect();
    let mut tok = ptr::null_mut();
    let st = unsafe { gb_tokenizer_train(ptrs.as_ptr(), ptrs.len(), 40, &mut tok) };
    assert_eq!(st, GbStatus::Ok);
    tok
}

#[test]
fn encode_decode_roundtrip_with_buffer_sizing() {
    let tok = trained();
    let text = c("the cat sat on the log");
    let mut len = 0usize;
    let st = unsafe { gb_tokenizer_encode(tok, text.as_ptr(), ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, GbStatus::BufferTooSmall);
    assert!(len > 0);
    let mut ids = vec![0u32; len];
    let st = unsafe { gb_tokenizer_encode(tok, text.as_ptr(), ids.as_mut_ptr(), ids.len(), &mut len) };
    assert_eq!(st, GbStatus::Ok);

    let mut buf = vec![0 as std::ffi::c_char; 64];
    let mut n = 0usize;
    let st = unsafe { gb_tokenizer_decode(tok, ids.as_ptr(), ids.len(), buf.as_mut_ptr(), buf.len(), &mut n) };
    assert_eq!(st, GbStatus::Ok);
    let back = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert_eq!(back, "the cat sat on the log");
    assert_eq!(n, back.len());
    assert!(unsafe { gb_tokenizer_vocab_size(tok) } <= 40);
    unsafe { gb_tokenizer_free(tok) };
}

#[test]
fn tokenizer_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let (v, m) = (c(dir.path().join("vocab.txt").to_str().unwrap()), c(dir.path().join("merges.txt").to_str().unwrap()));
    let tok = trained();
    assert_eq!(unsafe { gb_tokenizer_save(tok, v.as_ptr(), m.as_ptr()) }, GbStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { gb_tokenizer_load(v.as_ptr(), m.as_ptr(), &mut loaded) }, GbStatus::Ok);
    assert_eq!(unsafe { gb_tokenizer_vocab_size(loaded) }, unsafe { gb_tokenizer_vocab_size(tok) });
    unsafe {
        gb_tokenizer_free(tok);
        gb_tokenizer_free(loaded);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut tok = ptr::null_mut();
    let missing = c("/nonexistent/vocab.txt");
    let st = unsafe { gb_tokenizer_load(missing.as_ptr(), missing.as_ptr(), &mut tok) };
    assert_eq!(st, GbStatus::Io);
    assert!(last_error().contains("/nonexistent/vocab.txt"));
    assert!(tok.is_null());

    let st = unsafe { gb_tokenizer_load(ptr::null(), missing.as_ptr(), &mut tok) };
    assert_eq!(st, GbStatus::NullPointer);
    assert!(last_error().contains("vocab_path"));

    let mut out = 0.0;
    let st = unsafe { gb_weighted_f1([0u32].as_ptr(), [5u32].as_ptr(), 1, 2, &mut out) };
    assert_eq!(st, GbStatus::InvalidArgument);

    let lines = [c("ab")];
    let ptrs = [lines[0].as_ptr()];
    let st = unsafe { gb_tokenizer_train(ptrs.as_ptr(), 1, 3, &mut tok) };
    assert_eq!(st, GbStatus::InvalidArgument);
    assert!(last_error().contains("vocab_size"));

    assert_eq!(unsafe { gb_weighted_f1([0u32].as_ptr(), [0u32].as_ptr(), 1, 1, &mut out) }, GbStatus::Ok);
    assert!(gb_last_error().is_null());
    unsafe {
        gb_tokenizer_free(ptr::null_mut());
        gb_model_free(ptr::null_mut());
    }
}

#[test]
fn weighted_f1_worked_example() {
    let mut out = 0.0;
    let st = unsafe { gb_weighted_f1([0u32, 1, 1, 1].as_ptr(), [0u32, 0, 1, 1].as_ptr(), 4, 2, &mut out) };
    assert_eq!(st, GbStatus::Ok);
    assert!((out - 11.0 / 15.0).abs() < 1e-15);
}

#[test]
fn factorize_reconstructs_at_full_rank() {
    let (rows, cols) = (6, 3);
    let values: Vec<f64> = (0..rows * cols).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
    let mut coords = vec![0.0; rows * cols];
    let mut prims = vec![0.0; cols * cols];
    let mut sv = vec![0.0; cols];
    let st = unsafe {
        gb_factorize(values.as_ptr(), rows, cols, cols, coords.as_mut_ptr(), prims.as_mut_ptr(), sv.as_mut_ptr())
    };
    assert_eq!(st, GbStatus::Ok);
    for i in 0..rows {
        for j in 0..cols {
            let r: f64 = (0..cols).map(|k| coords[i * cols + k] * prims[k * cols + j]).sum();
            assert!((r - values[i * cols + j]).abs() < 1e-9);
        }
    }
    assert!(sv.windows(2).all(|w| w[0] >= w[1]));

    let st = unsafe { gb_factorize(values.as_ptr(), rows, cols, 4, coords.as_mut_ptr(), prims.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, GbStatus::InvalidArgument);
    assert!(last_error().contains("latent dimension"));
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(gb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
