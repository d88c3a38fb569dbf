use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use trajgraph_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tg_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn auc_and_status_codes() {
    let scores = [0.9, 0.8, 0.3, 0.1];
    let labels = [1u8, 0, 1, 0];
    let mut auc = 0.0;
    assert_eq!(unsafe { tg_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut auc) }, TgStatus::Ok);
    assert_eq!(auc, 0.75);
    assert!(last_error().is_empty());

    let one_class = [1u8, 1, 1, 1];
    assert_eq!(
        unsafe { tg_roc_auc(scores.as_ptr(), one_class.as_ptr(), 4, &mut auc) },
        TgStatus::Undefined
    );
    assert!(!last_error().is_empty());

    assert_eq!(
        unsafe { tg_roc_auc(ptr::null(), labels.as_ptr(), 4, &mut auc) },
        TgStatus::InvalidArgument
    );
    assert!(last_error().contains("scores"));
}

#[test]
fn fairness_gaps() {
    let y_true = [1u8, 1, 0, 1, 1, 0];
    let y_pred = [1u8, 1, 1, 1, 0, 0];
    let group = [1u8, 1, 1, 0, 0, 0];
    let mut out = 0.0;
    assert_eq!(
        unsafe { tg_dpd(y_true.as_ptr(), y_pred.as_ptr(), group.as_ptr(), 6, &mut out) },
        TgStatus::Ok
    );
    assert!((out - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
    assert_eq!(
        unsafe { tg_eod(y_true.as_ptr(), y_pred.as_ptr(), group.as_ptr(), 6, &mut out) },
        TgStatus::Ok
    );
    assert_eq!(out, 0.5);
}

#[test]
fn matching_and_balance() {
    let treated = [0.80, 0.30, 0.5];
    let controls = [0.90, 0.75, 0.35];
    let mut out = [0usize; 3];
    let status = unsafe { tg_greedy_match(treated.as_ptr(), 3, controls.as_ptr(), 3, 0, out.as_mut_ptr()) };
    assert_eq!(status, TgStatus::Ok);
    assert_eq!(out, [1, 2, 0]);
    let mut short = [0usize; 3];
    unsafe { tg_greedy_match(treated.as_ptr(), 3, controls.as_ptr(), 1, 0, short.as_mut_ptr()) };
    assert_eq!(short, [0, TG_UNMATCHED, TG_UNMATCHED]);

    let mut smd = 0.0;
    let t = [1.0, 2.0, 3.0];
    assert_eq!(unsafe { tg_smd(t.as_ptr(), 3, t.as_ptr(), 3, &mut smd) }, TgStatus::Ok);
    assert_eq!(smd, 0.0);
}

#[test]
fn aggregation() {
    let preds = [1u8, 0, 0, 1, 1];
    let conf = [0.9, 0.8, 0.7, 0.2, 0.1];
    let (mut label, mut c) = (9u8, 0.0);
    assert_eq!(
        unsafe { tg_aggregate(preds.as_ptr(), conf.as_ptr(), 5, 3, &mut label, &mut c) },
        TgStatus::Ok
    );
    assert_eq!(label, 0);
    assert!((c - 0.75).abs() < 1e-15);
    assert_eq!(
        unsafe { tg_aggregate(preds.as_ptr(), conf.as_ptr(), 5, 6, &mut label, &mut c) },
        TgStatus::Config
    );
}

#[test]
fn knowledge_handle_and_graph() {
    let mut kb = ptr::null_mut();
    assert_eq!(unsafe { tg_kb_toy(&mut kb) }, TgStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { tg_kb_concept_count(kb, &mut n) }, TgStatus::Ok);
    assert!(n >= 40);

    let note = CString::new(
        r#"{"note_id":"n1","visit_date":"2015-03-02","note_type":"progress",
            "mentions":[{"id":"m0","start":0,"end":0,"text":"prednisone","class":"Treatment"},
                        {"id":"m1","start":2,"end":2,"text":"hyperglycemia","class":"Problem"}],
            "relations":[{"src":"m0","tgt":"m1","rel":"Before","conf":0.9}],"dct":null}"#,
    )
    .unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { tg_note_to_graph(kb, note.as_ptr(), 0, &mut json) }, TgStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { tg_string_free(json) };
    let graph: serde_json::Value = serde_json::from_str(&text).unwrap();
    let kinds: Vec<&str> = graph["edges"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap())
        .collect();
    assert!(kinds.contains(&"Before"));
    assert!(kinds.contains(&"IsA"));

    let broken = CString::new("{not json").unwrap();
    assert_ne!(unsafe { tg_note_to_graph(kb, broken.as_ptr(), 0, &mut json) }, TgStatus::Ok);
    unsafe { tg_kb_free(kb) };

    let missing = CString::new("/nonexistent/kb.json").unwrap();
    let mut other = ptr::null_mut();
    assert_eq!(unsafe { tg_kb_load(missing.as_ptr(), ptr::null(), &mut other) }, TgStatus::Io);
    assert!(other.is_null());
}

#[test]
fn ensemble_handle_scores_feature_file() {
    use trajgraph::cli::{run, Outcome};
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().to_str().unwrap();
    let stages: [&[&str]; 5] = [
        &["synth", "--n", "60"],
        &["curate"],
        &["build-graphs"],
        &["featurize", "--d-tok", "8"],
        &["train", "--epochs", "2", "--gnn-dim", "8", "--hidden", "8"],
    ];
    for args in stages {
        let mut argv = vec!["trajgraph", "--workdir", w, "--seed", "3"];
        argv.extend_from_slice(args);
        assert_eq!(run(argv), Outcome::Success, "{args:?}");
    }
    let model = CString::new(dir.path().join("train").to_str().unwrap()).unwrap();
    let features = CString::new(dir.path().join("features").join("features.bin").to_str().unwrap()).unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { tg_ensemble_load(model.as_ptr(), &mut e) }, TgStatus::Ok);
    let mut members = 0;
    unsafe { tg_ensemble_member_count(e, &mut members) };
    assert_eq!(members, 3);
    let mut n = 0;
    let status = unsafe { tg_ensemble_predict(e, features.as_ptr(), ptr::null_mut(), 0, &mut n) };
    assert_eq!(status, TgStatus::InvalidArgument);
    assert!(n > 0);
    let mut scores = vec![-1.0; n];
    assert_eq!(
        unsafe { tg_ensemble_predict(e, features.as_ptr(), scores.as_mut_ptr(), n, &mut n) },
        TgStatus::Ok
    );
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    unsafe { tg_ensemble_free(e) };
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(tg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include").join("trajgraph.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for f in [
        "tg_version",
        "tg_last_error",
        "tg_string_free",
        "tg_roc_auc",
        "tg_dpd",
        "tg_eod",
        "tg_greedy_match",
        "tg_smd",
        "tg_aggregate",
        "tg_kb_toy",
        "tg_kb_load",
        "tg_kb_free",
        "tg_kb_concept_count",
        "tg_note_to_graph",
        "tg_ensemble_load",
        "tg_ensemble_free",
        "tg_ensemble_member_count",
        "tg_ensemble_predict",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(text.contains("typedef struct TgKnowledgeBase TgKnowledgeBase;"));
}

/// Compile and run a C program against the static library when a C
/// compiler is available.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libtrajgraph_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "trajgraph.h"
int main(void) {
    double scores[4] = {0.9, 0.8, 0.3, 0.1};
    uint8_t labels[4] = {1, 0, 1, 0};
    double auc = 0.0;
    if (tg_roc_auc(scores, labels, 4, &auc) != TG_STATUS_OK) return 1;
    if (auc != 0.75) return 2;
    if (tg_roc_auc(NULL, labels, 4, &auc) != TG_STATUS_INVALID_ARGUMENT) return 3;
    if (tg_last_error()[0] == '\0') return 4;
    TgKnowledgeBase *kb = NULL;
    if (tg_kb_toy(&kb) != TG_STATUS_OK) return 5;
    size_t n = 0;
    tg_kb_concept_count(kb, &n);
    tg_kb_free(kb);
    double t[2] = {0.8, 0.3}, c[1] = {0.75};
    size_t out[2];
    tg_greedy_match(t, 2, c, 1, 0, out);
    if (out[0] != 0 || out[1] != (size_t)TG_UNMATCHED) return 6;
    printf("%s %zu\n", tg_version(), n);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(env!("CARGO_PKG_VERSION")));
}
