//! C ABI over `divret`.
//!
//! Conventions: every function returns a [`DivretStatus`]; results come back
//! through out-pointers. Strings handed out by the library are NUL-terminated
//! UTF-8 and must be released with [`divret_string_free`]. After a non-OK
//! status, [`divret_last_error_message`] describes the failure on the calling
//! thread. Handles are opaque and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use divret::corpus::{load_corpus, segment_document, CorpusScope};
use divret::expansion::round_robin_merge;
use divret::metrics::{mrecall_at_k, precision_at_k, CoverageMatrix};
use divret::sparse::{Bm25Params, InvertedIndex};
use divret::{Error, RankedList};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivretStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Invalid = 5,
    Panic = 6,
}

/// Opaque BM25 index.
pub struct DivretIndex {
    inner: InvertedIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DivretStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => DivretStatus::Io,
            Error::Parse { .. } | Error::Json(_) => DivretStatus::Parse,
            _ => DivretStatus::Invalid,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(DivretStatus::Parse, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DivretStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DivretStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DivretStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(DivretStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DivretStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(DivretStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(DivretStatus::Invalid, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// owned by the library and valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn divret_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn divret_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a BM25 index over a passage JSONL file.
///
/// # Safety
/// `corpus_path` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn divret_index_build(
    corpus_path: *const c_char,
    k1: f64,
    b: f64,
    out: *mut *mut DivretIndex,
) -> DivretStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(corpus_path, "corpus_path")?;
        let corpus = load_corpus(Path::new(path), CorpusScope::Shared)?;
        let inner = InvertedIndex::build(&corpus, Bm25Params { k1, b });
        *out = Box::into_raw(Box::new(DivretIndex { inner }));
        Ok(())
    })
}

/// Loads an index written by `divret index build` or [`divret_index_save`].
///
/// # Safety
/// `path` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn divret_index_load(path: *const c_char, out: *mut *mut DivretIndex) -> DivretStatus {
    guard(|| {
        out_arg(out, "out")?;
        let inner = InvertedIndex::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(DivretIndex { inner }));
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn divret_index_save(index: *const DivretIndex, path: *const c_char) -> DivretStatus {
    guard(|| {
        let idx = index.as_ref().ok_or(Failure(DivretStatus::NullPointer, "index is null".into()))?;
        idx.inner.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Number of indexed passages.
///
/// # Safety
/// `index` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn divret_index_len(index: *const DivretIndex, out: *mut usize) -> DivretStatus {
    guard(|| {
        out_arg(out, "out")?;
        let idx = index.as_ref().ok_or(Failure(DivretStatus::NullPointer, "index is null".into()))?;
        *out = idx.inner.n();
        Ok(())
    })
}

/// Top-`k` search. `out_json` receives a ranked-list object
/// `{"question_id", "retriever_id", "entries": [{"doc_id", "score"}]}`.
///
/// # Safety
/// `index` must be a live handle; strings valid; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn divret_index_search(
    index: *const DivretIndex,
    question_id: *const c_char,
    query: *const c_char,
    k: usize,
    out_json: *mut *mut c_char,
) -> DivretStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let idx = index.as_ref().ok_or(Failure(DivretStatus::NullPointer, "index is null".into()))?;
        let list = idx.inner.search(str_arg(question_id, "question_id")?, str_arg(query, "query")?, k);
        write_string(out_json, serde_json::to_string(&list)?)
    })
}

/// # Safety
/// `index` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn divret_index_free(index: *mut DivretIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

unsafe fn matrix(cells: *const u8, n_docs: usize, m: usize) -> Result<CoverageMatrix, Failure> {
    if cells.is_null() && n_docs * m > 0 {
        return Err(Failure(DivretStatus::NullPointer, "cells is null".into()));
    }
    let flat: &[u8] = if n_docs * m == 0 { &[] } else { std::slice::from_raw_parts(cells, n_docs * m) };
    let rows = (0..n_docs).map(|d| flat[d * m..(d + 1) * m].iter().map(|&c| c != 0).collect()).collect();
    Ok(CoverageMatrix::from_cells(rows, m))
}

/// MRecall@k of a row-major `n_docs × m` 0/1 matrix in rank order.
///
/// # Safety
/// `cells` must point to `n_docs * m` bytes; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn divret_mrecall_at_k(cells: *const u8, n_docs: usize, m: usize, k: usize, out: *mut u8) -> DivretStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = mrecall_at_k(&matrix(cells, n_docs, m)?, k)?;
        Ok(())
    })
}

/// Precision@k of a row-major `n_docs × m` 0/1 matrix in rank order.
///
/// # Safety
/// `cells` must point to `n_docs * m` bytes; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn divret_precision_at_k(cells: *const u8, n_docs: usize, m: usize, k: usize, out: *mut f64) -> DivretStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = precision_at_k(&matrix(cells, n_docs, m)?, k)?;
        Ok(())
    })
}

/// Splits `text` into `window`-word passages; `out_json` receives a passage array.
///
/// # Safety
/// Strings must be valid C strings; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn divret_segment(
    text: *const c_char,
    parent_id: *const c_char,
    window: usize,
    out_json: *mut *mut c_char,
) -> DivretStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let passages = segment_document(str_arg(text, "text")?, str_arg(parent_id, "parent_id")?, window)?;
        write_string(out_json, serde_json::to_string(&passages)?)
    })
}

/// Round-robin merge with dedup of a JSON array of ranked lists.
///
/// # Safety
/// `lists_json` must be a valid C string; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn divret_round_robin_merge(lists_json: *const c_char, k: usize, out_json: *mut *mut c_char) -> DivretStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let lists: Vec<RankedList> = serde_json::from_str(str_arg(lists_json, "lists_json")?)?;
        write_string(out_json, serde_json::to_string(&round_robin_merge(&lists, k))?)
    })
}
