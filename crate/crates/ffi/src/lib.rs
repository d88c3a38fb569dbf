//! C ABI over the trajgraph library.
//!
//! Every fallible function returns a [`TgStatus`]; on failure the message is
//! available from [`tg_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles released with their `_free` function. Strings
//! returned by the library are released with [`tg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use trajgraph::eval::{dpd, eod, roc_auc_scores, PredictionEntry};
use trajgraph::ingest::{build_visit_graph, DateLocale, NoteExtraction};
use trajgraph::knowledge::{augment_graph, link_concepts, KnowledgeBase, Lexicon};
use trajgraph::model::checkpoint::load_ensemble;
use trajgraph::model::{predict_ensemble, Ensemble};
use trajgraph::pipeline::load_samples;
use trajgraph::reveal::{aggregate, ReasoningPath, VerifierJudgment};
use trajgraph::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgStatus {
    Ok = 0,
    /// Null pointer, bad length or non-UTF-8 string.
    InvalidArgument = 1,
    InvalidInput = 2,
    Config = 3,
    /// The statistic is undefined for the data, e.g. AUC with one class.
    Undefined = 4,
    Backend = 5,
    Io = 6,
    Parse = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// Sentinel written by [`tg_greedy_match`] for unmatched treated units.
pub const TG_UNMATCHED: usize = !0;

/// Loaded knowledge base.
pub struct TgKnowledgeBase {
    kb: KnowledgeBase,
    lexicon: Lexicon,
}

/// Trained fold ensemble.
pub struct TgEnsemble {
    ensemble: Ensemble,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(TgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) => TgStatus::InvalidInput,
            Error::Config(_) => TgStatus::Config,
            Error::Undefined(_) => TgStatus::Undefined,
            Error::Backend(_) => TgStatus::Backend,
            Error::Io { .. } => TgStatus::Io,
            Error::Parse { .. } => TgStatus::Parse,
        };
        Failure(status, e.to_string())
    }
}

fn bad(msg: &str) -> Failure {
    Failure(TgStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            TgStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(bad(&format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| bad(&format!("{name} is null")))
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(bad(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| bad(&format!("{name} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Area under the ROC curve, ties counted half.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn tg_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> TgStatus {
    guard(|| {
        let s = input(scores, n, "scores")?;
        let y = input(labels, n, "labels")?;
        *output(out, "out")? = roc_auc_scores(s, y)?;
        Ok(())
    })
}

unsafe fn group_entries(
    y_true: *const u8,
    y_pred: *const u8,
    in_group: *const u8,
    n: usize,
) -> Result<Vec<PredictionEntry>, Failure> {
    let t = input(y_true, n, "y_true")?;
    let p = input(y_pred, n, "y_pred")?;
    let g = input(in_group, n, "in_group")?;
    Ok((0..n)
        .map(|i| {
            let mut e = PredictionEntry::new(i.to_string(), t[i], f64::from(p[i]), 0.5);
            e.y_pred = p[i];
            e.groups
                .insert("z".into(), if g[i] != 0 { "in" } else { "out" }.into());
            e
        })
        .collect())
}

/// Demographic parity difference between members (`in_group != 0`) and the rest.
///
/// # Safety
/// The three arrays must hold `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn tg_dpd(
    y_true: *const u8,
    y_pred: *const u8,
    in_group: *const u8,
    n: usize,
    out: *mut f64,
) -> TgStatus {
    guard(|| {
        let entries = group_entries(y_true, y_pred, in_group, n)?;
        *output(out, "out")? = dpd(&entries, "z", "in")?;
        Ok(())
    })
}

/// Equal opportunity difference between members and the rest.
///
/// # Safety
/// The three arrays must hold `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn tg_eod(
    y_true: *const u8,
    y_pred: *const u8,
    in_group: *const u8,
    n: usize,
    out: *mut f64,
) -> TgStatus {
    guard(|| {
        let entries = group_entries(y_true, y_pred, in_group, n)?;
        *output(out, "out")? = eod(&entries, "z", "in")?;
        Ok(())
    })
}

/// Greedy 1:1 nearest-neighbour matching without replacement.
/// `out_control[i]` receives the control index for treated `i`, or
/// `TG_UNMATCHED`. A nonzero `descending` processes treated units by
/// decreasing score instead of input order.
///
/// # Safety
/// `treated` has `n_treated` elements, `controls` has `n_controls`, and
/// `out_control` has room for `n_treated`.
#[no_mangle]
pub unsafe extern "C" fn tg_greedy_match(
    treated: *const f64,
    n_treated: usize,
    controls: *const f64,
    n_controls: usize,
    descending: i32,
    out_control: *mut usize,
) -> TgStatus {
    guard(|| {
        let t = input(treated, n_treated, "treated")?;
        let c = input(controls, n_controls, "controls")?;
        if n_treated > 0 && out_control.is_null() {
            return Err(bad("out_control is null"));
        }
        let order = if descending != 0 {
            trajgraph::cohort::MatchOrder::DescendingScore
        } else {
            trajgraph::cohort::MatchOrder::Input
        };
        let out = slice::from_raw_parts_mut(out_control, n_treated);
        out.fill(TG_UNMATCHED);
        for (ti, ci) in trajgraph::cohort::greedy_match(t, c, order) {
            out[ti] = ci;
        }
        Ok(())
    })
}

/// Standardized mean difference with the pooled sample standard deviation.
///
/// # Safety
/// `treated` has `n_treated` elements and `controls` has `n_controls`.
#[no_mangle]
pub unsafe extern "C" fn tg_smd(
    treated: *const f64,
    n_treated: usize,
    controls: *const f64,
    n_controls: usize,
    out: *mut f64,
) -> TgStatus {
    guard(|| {
        let t = input(treated, n_treated, "treated")?;
        let c = input(controls, n_controls, "controls")?;
        *output(out, "out")? = trajgraph::cohort::smd(t, c);
        Ok(())
    })
}

/// Top-k confidence-weighted vote over `n` reasoning paths. `predictions[i]`
/// is nonzero for a positive path and `confidences[i]` is its verifier score.
///
/// # Safety
/// Both arrays hold `n` elements; the outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn tg_aggregate(
    predictions: *const u8,
    confidences: *const f64,
    n: usize,
    k: usize,
    out_label: *mut u8,
    out_confidence: *mut f64,
) -> TgStatus {
    guard(|| {
        let p = input(predictions, n, "predictions")?;
        let c = input(confidences, n, "confidences")?;
        let paths: Vec<ReasoningPath> = p
            .iter()
            .enumerate()
            .map(|(i, &x)| ReasoningPath {
                path_id: i,
                prediction: x != 0,
                explanation: String::new(),
                l_true: None,
                l_false: None,
            })
            .collect();
        let judgments: Vec<VerifierJudgment> = c
            .iter()
            .enumerate()
            .map(|(i, &confidence)| VerifierJudgment { path_id: i, confidence })
            .collect();
        let a = aggregate(&paths, &judgments, k)?;
        *output(out_label, "out_label")? = u8::from(a.label);
        *output(out_confidence, "out_confidence")? = a.confidence;
        Ok(())
    })
}

/// The bundled toy knowledge base and lexicon.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tg_kb_toy(out: *mut *mut TgKnowledgeBase) -> TgStatus {
    guard(|| {
        let slot = output(out, "out")?;
        *slot = Box::into_raw(Box::new(TgKnowledgeBase {
            kb: KnowledgeBase::toy(),
            lexicon: Lexicon::toy(),
        }));
        Ok(())
    })
}

/// Load a knowledge base JSON bundle and a lexicon TSV. A null
/// `lexicon_path` selects the bundled toy lexicon.
///
/// # Safety
/// Paths are NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tg_kb_load(
    kb_path: *const c_char,
    lexicon_path: *const c_char,
    out: *mut *mut TgKnowledgeBase,
) -> TgStatus {
    guard(|| {
        let slot = output(out, "out")?;
        let kb = KnowledgeBase::load(Path::new(string(kb_path, "kb_path")?))?;
        let lexicon = if lexicon_path.is_null() {
            Lexicon::toy()
        } else {
            Lexicon::load(Path::new(string(lexicon_path, "lexicon_path")?))?
        };
        *slot = Box::into_raw(Box::new(TgKnowledgeBase { kb, lexicon }));
        Ok(())
    })
}

/// # Safety
/// `kb` must come from `tg_kb_toy` or `tg_kb_load`, or be null.
#[no_mangle]
pub unsafe extern "C" fn tg_kb_free(kb: *mut TgKnowledgeBase) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// # Safety
/// `kb` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tg_kb_concept_count(kb: *const TgKnowledgeBase, out: *mut usize) -> TgStatus {
    guard(|| {
        let kb = kb.as_ref().ok_or_else(|| bad("kb is null"))?;
        *output(out, "out")? = kb.kb.concepts.len();
        Ok(())
    })
}

/// Reduce one note extraction (JSON) into an augmented visit graph (JSON).
/// A nonzero `international` reads numeric dates as day/month/year. The
/// result is released with `tg_string_free`.
///
/// # Safety
/// `kb` must be a live handle, `note_json` a NUL-terminated string and
/// `out_graph_json` writable.
#[no_mangle]
pub unsafe extern "C" fn tg_note_to_graph(
    kb: *const TgKnowledgeBase,
    note_json: *const c_char,
    international: i32,
    out_graph_json: *mut *mut c_char,
) -> TgStatus {
    guard(|| {
        let kb = kb.as_ref().ok_or_else(|| bad("kb is null"))?;
        let slot = output(out_graph_json, "out_graph_json")?;
        let note = NoteExtraction::from_json(string(note_json, "note_json")?)?;
        let locale = if international != 0 {
            DateLocale::International
        } else {
            DateLocale::Us
        };
        let links = link_concepts(&note, &kb.kb, &kb.lexicon)?;
        let graph = augment_graph(&build_visit_graph(&note, &links, locale, 0)?, &kb.kb);
        let json = serde_json::to_string(&graph).expect("graph serializes");
        *slot = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Load a trained ensemble directory.
///
/// # Safety
/// `dir` is a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tg_ensemble_load(dir: *const c_char, out: *mut *mut TgEnsemble) -> TgStatus {
    guard(|| {
        let slot = output(out, "out")?;
        let ensemble = load_ensemble(Path::new(string(dir, "dir")?))?;
        *slot = Box::into_raw(Box::new(TgEnsemble { ensemble }));
        Ok(())
    })
}

/// # Safety
/// `e` must come from `tg_ensemble_load`, or be null.
#[no_mangle]
pub unsafe extern "C" fn tg_ensemble_free(e: *mut TgEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// # Safety
/// `e` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tg_ensemble_member_count(e: *const TgEnsemble, out: *mut usize) -> TgStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| bad("ensemble is null"))?;
        *output(out, "out")? = e.ensemble.members.len();
        Ok(())
    })
}

/// Score every patient of a feature file, in file order. `out_n` receives
/// the patient count; when it exceeds `capacity` nothing is written to
/// `out_scores` and `InvalidArgument` is returned, so callers can size a
/// buffer by calling once with `capacity = 0`.
///
/// # Safety
/// `e` is a live handle, `features_path` NUL-terminated, `out_scores` has
/// room for `capacity` doubles and `out_n` is writable.
#[no_mangle]
pub unsafe extern "C" fn tg_ensemble_predict(
    e: *const TgEnsemble,
    features_path: *const c_char,
    out_scores: *mut f64,
    capacity: usize,
    out_n: *mut usize,
) -> TgStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| bad("ensemble is null"))?;
        let samples = load_samples(Path::new(string(features_path, "features_path")?))?;
        *output(out_n, "out_n")? = samples.len();
        if samples.len() > capacity {
            return Err(bad(&format!("{} patients exceed capacity {capacity}", samples.len())));
        }
        let refs: Vec<_> = samples.iter().collect();
        let scores = predict_ensemble(&refs, &e.ensemble)?;
        if !scores.is_empty() {
            if out_scores.is_null() {
                return Err(bad("out_scores is null"));
            }
            ptr::copy_nonoverlapping(scores.as_ptr(), out_scores, scores.len());
        }
        Ok(())
    })
}
