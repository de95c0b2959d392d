use std::ffi::{CStr, CString};
use std::ptr;

use divret_ffi::*;

fn take(s: *mut std::ffi::c_char) -> serde_json::Value {
    assert!(!s.is_null());
    let v = serde_json::from_str(unsafe { CStr::from_ptr(s) }.to_str().unwrap()).unwrap();
    unsafe { divret_string_free(s) };
    v
}

fn last_error() -> String {
    let p = divret_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn index_roundtrip_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    std::fs::write(
        &corpus,
        concat!(
            "{\"doc_id\":\"d1#0\",\"text\":\"solar power is cheap\",\"parent_doc\":\"d1\",\"offset\":0}\n",
            "{\"doc_id\":\"d2#0\",\"text\":\"wind power and solar power\",\"parent_doc\":\"d2\",\"offset\":0}\n",
            "{\"doc_id\":\"d3#0\",\"text\":\"coal\",\"parent_doc\":\"d3\",\"offset\":0}\n",
        ),
    )
    .unwrap();
    let path = CString::new(corpus.to_str().unwrap()).unwrap();
    let mut idx = ptr::null_mut();
    assert_eq!(unsafe { divret_index_build(path.as_ptr(), 0.9, 0.4, &mut idx) }, DivretStatus::Ok);
    let mut n = 0usize;
    assert_eq!(unsafe { divret_index_len(idx, &mut n) }, DivretStatus::Ok);
    assert_eq!(n, 3);

    let saved = CString::new(dir.path().join("i.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { divret_index_save(idx, saved.as_ptr()) }, DivretStatus::Ok);
    let mut idx2 = ptr::null_mut();
    assert_eq!(unsafe { divret_index_load(saved.as_ptr(), &mut idx2) }, DivretStatus::Ok);

    let qid = CString::new("q").unwrap();
    let query = CString::new("solar power").unwrap();
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { divret_index_search(idx, qid.as_ptr(), query.as_ptr(), 5, &mut a) }, DivretStatus::Ok);
    assert_eq!(unsafe { divret_index_search(idx2, qid.as_ptr(), query.as_ptr(), 5, &mut b) }, DivretStatus::Ok);
    let (a, b) = (take(a), take(b));
    assert_eq!(a, b);
    let ids: Vec<&str> = a["entries"].as_array().unwrap().iter().map(|e| e["doc_id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 2);
    assert!(!ids.contains(&"d3#0"));
    unsafe {
        divret_index_free(idx);
        divret_index_free(idx2);
        divret_index_free(ptr::null_mut());
    }
}

#[test]
fn missing_corpus_reports_io() {
    let path = CString::new("/nonexistent/corpus.jsonl").unwrap();
    let mut idx = ptr::null_mut();
    assert_eq!(unsafe { divret_index_build(path.as_ptr(), 0.9, 0.4, &mut idx) }, DivretStatus::Io);
    assert!(idx.is_null());
    assert!(last_error().contains("/nonexistent/corpus.jsonl"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { divret_index_load(ptr::null(), &mut out) }, DivretStatus::NullPointer);
    let mut n = 0;
    assert_eq!(unsafe { divret_index_len(ptr::null(), &mut n) }, DivretStatus::NullPointer);
    let mut r = 0u8;
    assert_eq!(unsafe { divret_mrecall_at_k(ptr::null(), 2, 2, 1, &mut r) }, DivretStatus::NullPointer);
}

#[test]
fn metrics_over_flat_matrix() {
    // m=3, k=2: two distinct perspectives in the top two docs
    let cells: [u8; 9] = [1, 0, 0, 0, 1, 0, 0, 0, 1];
    let mut r = 9u8;
    assert_eq!(unsafe { divret_mrecall_at_k(cells.as_ptr(), 3, 3, 2, &mut r) }, DivretStatus::Ok);
    assert_eq!(r, 1);
    let cells: [u8; 6] = [1, 0, 0, 0, 1, 1];
    assert_eq!(unsafe { divret_mrecall_at_k(cells.as_ptr(), 2, 3, 5, &mut r) }, DivretStatus::Ok);
    assert_eq!(r, 1);
    let mut p = 0.0;
    assert_eq!(unsafe { divret_precision_at_k(cells.as_ptr(), 2, 3, 4, &mut p) }, DivretStatus::Ok);
    assert_eq!(p, 0.5);
    assert_eq!(unsafe { divret_precision_at_k(cells.as_ptr(), 2, 3, 0, &mut p) }, DivretStatus::Invalid);
    assert!(!last_error().is_empty());
}

#[test]
fn segment_and_merge() {
    let text = CString::new((0..250).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")).unwrap();
    let parent = CString::new("doc").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { divret_segment(text.as_ptr(), parent.as_ptr(), 100, &mut out) }, DivretStatus::Ok);
    let passages = take(out);
    let ids: Vec<&str> = passages.as_array().unwrap().iter().map(|p| p["doc_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["doc#0", "doc#1", "doc#2"]);

    let lists = serde_json::json!([
        {"question_id": "q", "retriever_id": "r", "entries": [{"doc_id": "a", "score": 3.0}, {"doc_id": "b", "score": 2.0}, {"doc_id": "c", "score": 1.0}]},
        {"question_id": "q", "retriever_id": "r", "entries": [{"doc_id": "c", "score": 5.0}, {"doc_id": "d", "score": 4.0}, {"doc_id": "e", "score": 3.0}]}
    ]);
    let lists = CString::new(lists.to_string()).unwrap();
    assert_eq!(unsafe { divret_round_robin_merge(lists.as_ptr(), 2, &mut out) }, DivretStatus::Ok);
    let merged = take(out);
    let ids: Vec<&str> = merged["entries"].as_array().unwrap().iter().map(|e| e["doc_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "c"]);

    let bad = CString::new("not json").unwrap();
    assert_eq!(unsafe { divret_round_robin_merge(bad.as_ptr(), 2, &mut out) }, DivretStatus::Parse);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/divret.h")).unwrap();
    for name in [
        "divret_last_error_message",
        "divret_string_free",
        "divret_index_build",
        "divret_index_load",
        "divret_index_save",
        "divret_index_len",
        "divret_index_search",
        "divret_index_free",
        "divret_mrecall_at_k",
        "divret_precision_at_k",
        "divret_segment",
        "divret_round_robin_merge",
        "typedef struct DivretIndex DivretIndex",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
