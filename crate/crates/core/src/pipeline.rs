//! Pipeline stages shared by the command line and the tests: curation,
//! graph construction, featurization, prediction and report writing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    covariate_balance, filter_leakage, filter_note_quality, fit_propensity, greedy_match, BalanceRow, Covariate, Label,
    MatchOrder, NoteQualityFilter, PatientRecord, PropensityConfig, DEFAULT_BUFFER_DAYS,
};
use crate::error::{Error, Result};
use crate::eval::{FairnessRow, HorizonCurve, PredictionEntry, PredictionSet};
use crate::features::{
    featurize_visit, hash_fallback_store, EmbeddingStore, FeatureContext, FeatureSwitches, VisitFeatures,
    WidthEmbeddingTable, DEFAULT_D_TOK, DEFAULT_WIDTH_BOUNDS,
};
use crate::ingest::{build_visit_graph, order_notes, DateLocale, EdgeKind, NodeKind, NoteExtraction, VisitGraph};
use crate::knowledge::{augment_graph, link_concepts, KnowledgeBase, Lexicon};
use crate::model::{predict_ensemble, Ensemble, PatientSample};

pub const SNAPSHOT_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot<T> {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub config: T,
}

/// Write `config.json` for a stage directory, creating the directory.
pub fn write_snapshot<T: Serialize>(dir: &Path, stage: &str, config: &T) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let snap = Snapshot {
        tool: "trajgraph".to_string(),
        version: crate::VERSION.to_string(),
        stage: stage.to_string(),
        config,
    };
    write_json(&dir.join(SNAPSHOT_FILE), &snap)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurateConfig {
    pub seed: u64,
    pub buffer_days: i64,
    pub quality: NoteQualityFilter,
    /// Share of each class held out for testing.
    pub test_fraction: f64,
    pub covariates: Vec<Covariate>,
    pub match_order: MatchOrder,
    pub propensity: PropensityConfig,
}

impl Default for CurateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            buffer_days: DEFAULT_BUFFER_DAYS,
            quality: NoteQualityFilter::default(),
            test_fraction: 0.2,
            covariates: Covariate::ALL.to_vec(),
            match_order: MatchOrder::Input,
            propensity: PropensityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    /// Matched test patients, treated then control per pair.
    pub test: Vec<String>,
    /// Held-out patients left without a partner.
    pub test_unmatched: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurateOutput {
    pub records: Vec<PatientRecord>,
    pub split: Split,
    pub pairs: Vec<(String, String)>,
    pub propensity: BTreeMap<String, f64>,
    pub balance: Vec<BalanceRow>,
}

/// Leakage and quality filters, a stratified train/test split, propensity
/// scores fit on every curated patient and 1:1 matching inside the test
/// split.
pub fn curate(records: &[PatientRecord], config: &CurateConfig) -> Result<CurateOutput> {
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(Error::config("test_fraction must lie in (0,1)"));
    }
    let mut kept = Vec::new();
    for r in records {
        r.validate()?;
        let Some(r) = filter_leakage(r, config.buffer_days)? else {
            continue;
        };
        let r = filter_note_quality(&r, &config.quality);
        if r.visits.is_empty() {
            log::info!("{}: no notes pass the quality filter, record removed", r.patient_id);
            continue;
        }
        kept.push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut train, mut test) = (BTreeSet::new(), BTreeSet::new());
    for label in [Label::T2D, Label::NoD] {
        let mut ids: Vec<&str> = kept
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.patient_id.as_str())
            .collect();
        ids.shuffle(&mut rng);
        let n_test = (ids.len() as f64 * config.test_fraction).round() as usize;
        test.extend(ids[..n_test].iter().map(|s| s.to_string()));
        train.extend(ids[n_test..].iter().map(|s| s.to_string()));
    }
    let (_, propensity) = fit_propensity(&kept, &config.covariates, config.propensity)?;
    let test_records: Vec<PatientRecord> = kept.iter().filter(|r| test.contains(&r.patient_id)).cloned().collect();
    let treated: Vec<&PatientRecord> = test_records.iter().filter(|r| r.label == Label::T2D).collect();
    let controls: Vec<&PatientRecord> = test_records.iter().filter(|r| r.label == Label::NoD).collect();
    let ts: Vec<f64> = treated.iter().map(|r| propensity[&r.patient_id]).collect();
    let cs: Vec<f64> = controls.iter().map(|r| propensity[&r.patient_id]).collect();
    let pairs: Vec<(String, String)> = greedy_match(&ts, &cs, config.match_order)
        .into_iter()
        .map(|(t, c)| (treated[t].patient_id.clone(), controls[c].patient_id.clone()))
        .collect();
    let balance = covariate_balance(&test_records, &pairs, &config.covariates)?;
    let matched: BTreeSet<&String> = pairs.iter().flat_map(|(t, c)| [t, c]).collect();
    let split = Split {
        train: train.into_iter().collect(),
        test: pairs.iter().flat_map(|(t, c)| [t.clone(), c.clone()]).collect(),
        test_unmatched: test.iter().filter(|id| !matched.contains(id)).cloned().collect(),
    };
    Ok(CurateOutput {
        records: kept,
        split,
        pairs,
        propensity,
        balance,
    })
}

/// One patient's augmented visit graphs in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientGraphs {
    pub patient_id: String,
    pub label: Label,
    pub graphs: Vec<VisitGraph>,
}

/// Reduce and augment every note referenced by `records`.
pub fn build_graphs(
    records: &[PatientRecord],
    notes: &BTreeMap<String, NoteExtraction>,
    kb: &KnowledgeBase,
    lexicon: &Lexicon,
    locale: DateLocale,
) -> Result<Vec<PatientGraphs>> {
    records
        .iter()
        .map(|r| {
            let mut own = r
                .visits
                .iter()
                .map(|v| {
                    notes.get(&v.note_id).cloned().ok_or_else(|| {
                        Error::invalid(format!("{}: note {} not found", r.patient_id, v.note_id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            order_notes(&mut own);
            let graphs = own
                .iter()
                .enumerate()
                .map(|(t, note)| {
                    let links = link_concepts(note, kb, lexicon)?;
                    let g = build_visit_graph(note, &links, locale, t)?;
                    Ok(augment_graph(&g, kb))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PatientGraphs {
                patient_id: r.patient_id.clone(),
                label: r.label,
                graphs,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeConfig {
    pub d_tok: usize,
    pub seed: u64,
    pub width_bounds: Vec<usize>,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        Self {
            d_tok: DEFAULT_D_TOK,
            seed: 0,
            width_bounds: DEFAULT_WIDTH_BOUNDS.to_vec(),
        }
    }
}

/// Node inputs for every visit. Precomputed token embeddings are read from
/// `embeddings/<note_id>.emb` when that directory is given; other notes fall
/// back to hashed token vectors.
pub fn featurize(
    patients: &[PatientGraphs],
    notes: &BTreeMap<String, NoteExtraction>,
    kb: &KnowledgeBase,
    embeddings: Option<&Path>,
    config: &FeaturizeConfig,
) -> Result<Vec<PatientSample>> {
    let widths = WidthEmbeddingTable::seeded(config.width_bounds.clone(), 1, config.seed)?;
    patients
        .iter()
        .map(|p| {
            let visits = p
                .graphs
                .iter()
                .map(|g| {
                    let note = notes
                        .get(&g.note_id)
                        .ok_or_else(|| Error::invalid(format!("graph {} has no source note", g.note_id)))?;
                    let store = match embeddings.map(|d| d.join(format!("{}.emb", g.note_id))) {
                        Some(path) if path.exists() => {
                            let s = EmbeddingStore::read(&path)?;
                            if s.d_tok != config.d_tok {
                                return Err(Error::parse(&path, format!("d_tok {} differs from {}", s.d_tok, config.d_tok)));
                            }
                            s
                        }
                        _ => hash_fallback_store(note, config.d_tok, config.seed),
                    };
                    let ctx = FeatureContext {
                        note,
                        store: &store,
                        widths: &widths,
                        kb,
                        switches: FeatureSwitches::default(),
                        label_seed: config.seed,
                    };
                    featurize_visit(g, &ctx)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PatientSample {
                patient_id: p.patient_id.clone(),
                label: p.label.as_u8(),
                visits,
            })
        })
        .collect()
}

pub const FEATURE_MAGIC: &[u8; 8] = b"TGFEAT01";

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    format_version: u32,
    d_text: usize,
    n_buckets: usize,
    d_kg: usize,
    patients: Vec<PatientHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PatientHeader {
    patient_id: String,
    label: u8,
    visits: Vec<VisitHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VisitHeader {
    note_id: String,
    visit_index: usize,
    kinds: Vec<NodeKind>,
    edges: Vec<(usize, usize, EdgeKind)>,
}

/// Magic, u32 LE header length, JSON header, then per visit the text,
/// width-mix and concept matrices as f64 LE in row-major order.
pub fn encode_samples(samples: &[PatientSample]) -> Result<Vec<u8>> {
    let first = samples
        .iter()
        .flat_map(|s| s.visits.first())
        .next()
        .ok_or_else(|| Error::invalid("no visits to store"))?;
    let (d_text, n_buckets, d_kg) = (first.text.ncols(), first.width_mix.ncols(), first.kg.ncols());
    let mut body = Vec::new();
    let mut patients = Vec::with_capacity(samples.len());
    for s in samples {
        let mut visits = Vec::with_capacity(s.visits.len());
        for v in &s.visits {
            if (v.text.ncols(), v.width_mix.ncols(), v.kg.ncols()) != (d_text, n_buckets, d_kg) {
                return Err(Error::invalid(format!("visit {} has inconsistent feature widths", v.note_id)));
            }
            for m in [&v.text, &v.width_mix, &v.kg] {
                for x in m.iter() {
                    body.extend_from_slice(&x.to_le_bytes());
                }
            }
            visits.push(VisitHeader {
                note_id: v.note_id.clone(),
                visit_index: v.visit_index,
                kinds: v.kinds.clone(),
                edges: v.edges.clone(),
            });
        }
        patients.push(PatientHeader {
            patient_id: s.patient_id.clone(),
            label: s.label,
            visits,
        });
    }
    let header = serde_json::to_vec(&FeatureHeader {
        format_version: 1,
        d_text,
        n_buckets,
        d_kg,
        patients,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + body.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<PatientSample>> {
    if bytes.len() < 12 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::invalid("not a feature file (bad magic)"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header: FeatureHeader = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::invalid("feature header truncated"))
        .and_then(|h| serde_json::from_slice(h).map_err(|e| Error::invalid(format!("feature header: {e}"))))?;
    let mut values = bytes[12 + hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |rows: usize, cols: usize| -> Result<ndarray::Array2<f64>> {
        let data: Vec<f64> = values.by_ref().take(rows * cols).collect();
        if data.len() != rows * cols {
            return Err(Error::invalid("feature body truncated"));
        }
        Ok(ndarray::Array2::from_shape_vec((rows, cols), data).expect("sized"))
    };
    let mut samples = Vec::with_capacity(header.patients.len());
    for p in header.patients {
        let mut visits = Vec::with_capacity(p.visits.len());
        for v in p.visits {
            let n = v.kinds.len();
            if v.edges.iter().any(|&(s, t, _)| s >= n || t >= n) {
                return Err(Error::invalid(format!("visit {}: edge endpoint out of range", v.note_id)));
            }
            visits.push(VisitFeatures {
                text: take(n, header.d_text)?,
                width_mix: take(n, header.n_buckets)?,
                kg: take(n, header.d_kg)?,
                note_id: v.note_id,
                visit_index: v.visit_index,
                kinds: v.kinds,
                edges: v.edges,
            });
        }
        samples.push(PatientSample {
            patient_id: p.patient_id,
            label: p.label,
            visits,
        });
    }
    if values.next().is_some() {
        return Err(Error::invalid("feature body has trailing data"));
    }
    Ok(samples)
}

pub fn save_samples(path: &Path, samples: &[PatientSample]) -> Result<()> {
    fs::write(path, encode_samples(samples)?).map_err(|e| Error::io(path, e))
}

pub fn load_samples(path: &Path) -> Result<Vec<PatientSample>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_samples(&bytes).map_err(|e| e.in_file(path))
}

/// Samples whose ids are in `ids`, in the order of `ids`.
pub fn select<'a>(samples: &'a [PatientSample], ids: &[String]) -> Result<Vec<&'a PatientSample>> {
    let index: BTreeMap<&str, &PatientSample> = samples.iter().map(|s| (s.patient_id.as_str(), s)).collect();
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("patient {id} has no features")))
        })
        .collect()
}

pub fn age_group(age: f64) -> &'static str {
    if age < 50.0 {
        "<50"
    } else if age < 65.0 {
        "50-64"
    } else {
        "65+"
    }
}

/// Ensemble scores with demographic groups and prediction horizons attached.
pub fn predict(
    samples: &[&PatientSample],
    ensemble: &Ensemble,
    records: &[PatientRecord],
    threshold: f64,
) -> Result<PredictionSet> {
    let scores = predict_ensemble(samples, ensemble)?;
    let by_id: BTreeMap<&str, &PatientRecord> = records.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let entries = samples
        .iter()
        .zip(scores)
        .map(|(s, score)| {
            let mut e = PredictionEntry::new(s.patient_id.clone(), s.label, score, threshold);
            if let Some(r) = by_id.get(s.patient_id.as_str()) {
                let d = &r.demographics;
                e.groups.insert("age_group".into(), age_group(d.age).into());
                e.groups.insert("gender".into(), d.gender.clone());
                e.groups.insert("race".into(), d.race.clone());
                e.groups.insert("ethnicity".into(), d.ethnicity.clone().unwrap_or_else(|| "unknown".into()));
                if r.label == Label::T2D {
                    e.horizon_days = r.horizon_days();
                }
            }
            e
        })
        .collect();
    Ok(PredictionSet::new(entries, threshold))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_fairness_csv(path: &Path, rows: &[FairnessRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    w.write_record(["attribute", "group", "n", "positive_rate", "dpd", "eod"])
        .map_err(|e| Error::parse(path, e))?;
    for r in rows {
        w.write_record([
            r.attribute.clone(),
            r.group.clone(),
            r.n.to_string(),
            format!("{:.6}", r.positive_rate),
            opt(r.dpd),
            opt(r.eod),
        ])
        .map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_horizon_csv(path: &Path, curve: &HorizonCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    w.write_record(["window", "lower_days", "upper_days", "n_t2d", "n_controls", "auc", "t2d_recall"])
        .map_err(|e| Error::parse(path, e))?;
    for r in &curve.rows {
        w.write_record([
            r.window.to_string(),
            r.lower_days.to_string(),
            r.upper_days.map(|u| u.to_string()).unwrap_or_default(),
            r.n_t2d.to_string(),
            r.n_controls.to_string(),
            opt(r.auc),
            opt(r.t2d_recall),
        ])
        .map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
