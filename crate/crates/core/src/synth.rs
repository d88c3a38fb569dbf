//! Deterministic synthetic cohorts with a planted temporal motif.
//!
//! Every patient has one note in which event A and event B co-occur with a
//! high-confidence ordering between them, and the later of the two overlaps
//! the visit date. The label depends only on which event came first, so the
//! signal is visible through temporal edges and invisible without them.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{save_manifest, Demographics, Label, PatientRecord, Visit};
use crate::error::{Error, Result};
use crate::ingest::{EntityClass, EntityMention, NoteExtraction, TemporalRelation, TemporalRelationCandidate};
use crate::knowledge::{KnowledgeBase, Lexicon};

pub const MOTIF_CONFIDENCE: f64 = 0.99;
pub const ANCHOR_CONFIDENCE: f64 = 0.95;
const DIAGNOSIS_SURFACE: &str = "type 2 diabetes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub age_mean: f64,
    pub age_sd: f64,
    pub gender: Vec<(String, f64)>,
    pub race: Vec<(String, f64)>,
    pub ethnicity: Vec<(String, f64)>,
}

impl DemographicProfile {
    /// Case-cohort mixture, shifted about 0.3 SMD from [`Self::controls`]
    /// on age, gender, race and ethnicity.
    pub fn cases() -> Self {
        Self {
            age_mean: 58.0,
            age_sd: 12.0,
            gender: weights(&[("M", 0.55), ("F", 0.45)]),
            race: weights(&[("white", 0.45), ("black", 0.40), ("other", 0.15)]),
            ethnicity: weights(&[("hispanic", 0.25), ("non-hispanic", 0.75)]),
        }
    }

    pub fn controls() -> Self {
        Self {
            age_mean: 54.4,
            age_sd: 12.0,
            gender: weights(&[("M", 0.40), ("F", 0.60)]),
            race: weights(&[("white", 0.60), ("black", 0.25), ("other", 0.15)]),
            ethnicity: weights(&[("hispanic", 0.13), ("non-hispanic", 0.87)]),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.age_sd >= 0.0 && self.age_mean.is_finite()) {
            return Err(Error::config("age distribution must have finite mean and non-negative sd"));
        }
        for (name, w) in [("gender", &self.gender), ("race", &self.race), ("ethnicity", &self.ethnicity)] {
            if w.is_empty() || w.iter().any(|(_, p)| !(*p >= 0.0)) || w.iter().map(|(_, p)| p).sum::<f64>() <= 0.0 {
                return Err(Error::config(format!("{name} weights must be non-negative with a positive sum")));
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Demographics {
        let age = Normal::new(self.age_mean, self.age_sd).expect("validated").sample(rng);
        Demographics {
            age: age.clamp(18.0, 95.0).round(),
            gender: pick(&self.gender, rng),
            race: pick(&self.race, rng),
            ethnicity: Some(pick(&self.ethnicity, rng)),
        }
    }
}

fn weights(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(k, w)| (k.to_string(), *w)).collect()
}

fn pick(options: &[(String, f64)], rng: &mut ChaCha8Rng) -> String {
    let total: f64 = options.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in options {
        if u < *w {
            return k.clone();
        }
        u -= w;
    }
    options.last().expect("non-empty").0.clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub visits_min: usize,
    pub visits_max: usize,
    pub event_a: String,
    pub event_b: String,
    /// P(T2D | A before B); the reverse order gives `1 - p`.
    pub p_label_given_order: f64,
    /// P(A before B).
    pub p_motif_order: f64,
    pub cases: DemographicProfile,
    pub controls: DemographicProfile,
    pub noise_entities_min: usize,
    pub noise_entities_max: usize,
    pub noise_relations_min: usize,
    pub noise_relations_max: usize,
    /// Chance a T2D patient has a post-diagnosis note naming the diagnosis.
    pub p_leak_note: f64,
    /// Chance a T2D patient has an adjusted (earlier) diagnosis date, with a
    /// note between the two dates that already names the diagnosis.
    pub p_adjusted_date: f64,
    /// Chance a plain note is shorter than the quality filter's minimum.
    pub p_short_note: f64,
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            n_patients: 500,
            visits_min: 2,
            visits_max: 4,
            event_a: "prednisone".into(),
            event_b: "hyperglycemia".into(),
            p_label_given_order: 0.9,
            p_motif_order: 0.5,
            cases: DemographicProfile::cases(),
            controls: DemographicProfile::controls(),
            noise_entities_min: 3,
            noise_entities_max: 7,
            noise_relations_min: 2,
            noise_relations_max: 6,
            p_leak_note: 0.5,
            p_adjusted_date: 0.2,
            p_short_note: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_label_given_order", self.p_label_given_order),
            ("p_motif_order", self.p_motif_order),
            ("p_leak_note", self.p_leak_note),
            ("p_adjusted_date", self.p_adjusted_date),
            ("p_short_note", self.p_short_note),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.visits_min == 0 || self.visits_min > self.visits_max {
            return Err(Error::config("visit range must satisfy 1 <= min <= max"));
        }
        if self.noise_entities_min > self.noise_entities_max || self.noise_relations_min > self.noise_relations_max {
            return Err(Error::config("noise ranges must satisfy min <= max"));
        }
        if self.event_a.trim().is_empty() || self.event_b.trim().is_empty() || self.event_a == self.event_b {
            return Err(Error::config("motif events must be two distinct non-empty surfaces"));
        }
        self.cases.validate()?;
        self.controls.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub patient_id: String,
    pub label: Label,
    /// Event A precedes event B.
    pub a_before_b: bool,
    pub motif_note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub manifest: Vec<PatientRecord>,
    pub notes: Vec<NoteExtraction>,
    pub gold: Vec<GoldLabel>,
}

impl SynthOutput {
    /// `manifest.jsonl`, `notes/<note_id>.json` and `gold_labels.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let notes_dir = dir.join("notes");
        fs::create_dir_all(&notes_dir).map_err(|e| Error::io(&notes_dir, e))?;
        save_manifest(&dir.join("manifest.jsonl"), &self.manifest)?;
        for n in &self.notes {
            n.save(&notes_dir.join(format!("{}.json", n.note_id)))?;
        }
        let path = dir.join("gold_labels.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
        w.write_record(["patient_id", "label", "a_before_b", "motif_note"])
            .map_err(|e| Error::parse(&path, e))?;
        for g in &self.gold {
            let label = if g.label == Label::T2D { "T2D" } else { "NoD" };
            w.write_record([g.patient_id.as_str(), label, if g.a_before_b { "1" } else { "0" }, &g.motif_note])
                .map_err(|e| Error::parse(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

fn class_for(kb: &KnowledgeBase, concept: Option<&str>) -> EntityClass {
    let Some(c) = concept.and_then(|c| kb.concepts.get(c)) else {
        return EntityClass::Problem;
    };
    match c.types.first().map(String::as_str) {
        Some("T121" | "T109" | "T116" | "T061") => EntityClass::Treatment,
        Some("T059") => EntityClass::Test,
        Some("T093") => EntityClass::ClinicalDepartment,
        _ => EntityClass::Problem,
    }
}

struct NoteBuilder {
    note: NoteExtraction,
    pos: usize,
}

impl NoteBuilder {
    fn new(note_id: String, date: NaiveDate, note_type: &str) -> Self {
        let mut b = Self {
            note: NoteExtraction {
                note_id,
                visit_date: Some(date),
                note_type: note_type.to_string(),
                mentions: Vec::new(),
                relations: Vec::new(),
                dct: None,
            },
            pos: 0,
        };
        let d = b.mention(&date.format("%Y-%m-%d").to_string(), EntityClass::Date, 0);
        b.note.dct = Some(d);
        b
    }

    fn mention(&mut self, text: &str, class: EntityClass, gap: usize) -> String {
        let id = format!("m{}", self.note.mentions.len());
        let start = self.pos + gap;
        let end = start + text.split_whitespace().count().max(1) - 1;
        self.pos = end + 1;
        self.note.mentions.push(EntityMention {
            id: id.clone(),
            start,
            end,
            text: text.to_string(),
            class,
        });
        id
    }

    fn relate(&mut self, src: &str, tgt: &str, rel: TemporalRelation, conf: f64) {
        self.note.relations.push(TemporalRelationCandidate {
            src: src.to_string(),
            tgt: tgt.to_string(),
            rel,
            conf,
        });
    }
}

struct Vocabulary {
    a: (String, EntityClass),
    b: (String, EntityClass),
    noise: Vec<(String, EntityClass)>,
}

impl Vocabulary {
    fn new(config: &SynthConfig, kb: &KnowledgeBase, lexicon: &Lexicon) -> Self {
        let concept_a = lexicon.get(&config.event_a);
        let concept_b = lexicon.get(&config.event_b);
        let excluded: BTreeSet<&str> = [concept_a, concept_b, lexicon.get(DIAGNOSIS_SURFACE)]
            .into_iter()
            .flatten()
            .collect();
        let noise = lexicon
            .iter()
            .filter(|(_, c)| !excluded.contains(c))
            .map(|(s, c)| (s.to_string(), class_for(kb, Some(c))))
            .collect();
        Self {
            a: (config.event_a.to_lowercase(), class_for(kb, concept_a)),
            b: (config.event_b.to_lowercase(), class_for(kb, concept_b)),
            noise,
        }
    }
}

const NOTE_TYPES: [&str; 3] = ["progress", "consult", "discharge"];
const RELATIVE_TIMEX: [&str; 4] = ["two weeks ago", "three months ago", "yesterday", "one week ago"];

fn noise_block(b: &mut NoteBuilder, vocab: &Vocabulary, config: &SynthConfig, rng: &mut ChaCha8Rng) {
    let anchor = b.note.dct.clone().expect("builder sets dct");
    let n_ent = rng.gen_range(config.noise_entities_min..=config.noise_entities_max);
    let mut ids = vec![anchor];
    for (surface, class) in vocab.noise.choose_multiple(rng, n_ent) {
        let gap = rng.gen_range(1..5);
        ids.push(b.mention(surface, *class, gap));
    }
    if rng.gen_bool(0.3) {
        let text = RELATIVE_TIMEX.choose(rng).expect("non-empty");
        let gap = rng.gen_range(1..5);
        ids.push(b.mention(text, EntityClass::Date, gap));
    }
    if ids.len() < 2 {
        return;
    }
    let n_rel = rng.gen_range(config.noise_relations_min..=config.noise_relations_max);
    for _ in 0..n_rel {
        let i = rng.gen_range(0..ids.len());
        let mut j = rng.gen_range(0..ids.len() - 1);
        if j >= i {
            j += 1;
        }
        let rel = [TemporalRelation::Before, TemporalRelation::After, TemporalRelation::Overlap]
            .choose(rng)
            .copied()
            .expect("non-empty");
        let conf = rng.gen_range(0.3..0.9);
        let (src, tgt) = (ids[i].clone(), ids[j].clone());
        b.relate(&src, &tgt, rel, conf);
    }
}

/// Plant the ordered pair. The earlier event precedes the later one and the
/// later one overlaps the visit date; surface order and relation direction
/// are randomized independently of the label.
fn motif_block(b: &mut NoteBuilder, vocab: &Vocabulary, a_before_b: bool, rng: &mut ChaCha8Rng) {
    let anchor = b.note.dct.clone().expect("builder sets dct");
    let (first, second) = if rng.gen_bool(0.5) { (&vocab.a, &vocab.b) } else { (&vocab.b, &vocab.a) };
    let gap = rng.gen_range(1..5);
    let id_first = b.mention(&first.0, first.1, gap);
    let gap = rng.gen_range(1..5);
    let id_second = b.mention(&second.0, second.1, gap);
    let (id_a, id_b) = if std::ptr::eq(first, &vocab.a) {
        (id_first, id_second)
    } else {
        (id_second, id_first)
    };
    let (earlier, later) = if a_before_b { (id_a, id_b) } else { (id_b, id_a) };
    if rng.gen_bool(0.5) {
        b.relate(&earlier, &later, TemporalRelation::Before, MOTIF_CONFIDENCE);
    } else {
        b.relate(&later, &earlier, TemporalRelation::After, MOTIF_CONFIDENCE);
    }
    if rng.gen_bool(0.5) {
        b.relate(&later, &anchor, TemporalRelation::Overlap, ANCHOR_CONFIDENCE);
    } else {
        b.relate(&anchor, &later, TemporalRelation::Overlap, ANCHOR_CONFIDENCE);
    }
}

fn diagnosis_block(b: &mut NoteBuilder) {
    let anchor = b.note.dct.clone().expect("builder sets dct");
    let dx = b.mention(DIAGNOSIS_SURFACE, EntityClass::Problem, 2);
    let rx = b.mention("metformin", EntityClass::Treatment, 3);
    b.relate(&dx, &anchor, TemporalRelation::Overlap, 0.9);
    b.relate(&dx, &rx, TemporalRelation::Before, 0.8);
}

fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn visit(note: &NoteExtraction, word_count: usize) -> Visit {
    Visit {
        date: note.visit_date,
        note_id: note.note_id.clone(),
        word_count,
        note_type: Some(note.note_type.clone()),
        author: None,
    }
}

/// Generate a cohort with the given KB and lexicon (motif surfaces should be
/// in the lexicon to be linked).
pub fn generate_with(config: &SynthConfig, kb: &KnowledgeBase, lexicon: &Lexicon) -> Result<SynthOutput> {
    config.validate()?;
    let vocab = Vocabulary::new(config, kb, lexicon);
    if vocab.noise.len() < config.noise_entities_max {
        return Err(Error::config("lexicon too small for the requested noise entities"));
    }
    let base = NaiveDate::from_ymd_opt(2012, 1, 1).expect("valid date");
    let mut out = SynthOutput {
        manifest: Vec::with_capacity(config.n_patients),
        notes: Vec::new(),
        gold: Vec::with_capacity(config.n_patients),
    };
    for idx in 0..config.n_patients {
        let mut rng = patient_rng(config.seed, idx);
        let pid = format!("P{idx:05}");
        let a_before_b = rng.gen_bool(config.p_motif_order);
        let p_t2d = if a_before_b {
            config.p_label_given_order
        } else {
            1.0 - config.p_label_given_order
        };
        let label = if rng.gen_bool(p_t2d) { Label::T2D } else { Label::NoD };
        let profile = if label == Label::T2D { &config.cases } else { &config.controls };
        let demographics = profile.sample(&mut rng);

        let n_visits = rng.gen_range(config.visits_min..=config.visits_max);
        let motif_at = rng.gen_range(0..n_visits);
        let mut date = base + Duration::days(rng.gen_range(0..1500));
        let mut visits = Vec::new();
        let mut motif_note = String::new();
        for v in 0..n_visits {
            if v > 0 {
                date += Duration::days(rng.gen_range(30..=180));
            }
            let note_type = NOTE_TYPES.choose(&mut rng).expect("non-empty");
            let mut b = NoteBuilder::new(format!("{pid}_v{v}"), date, note_type);
            noise_block(&mut b, &vocab, config, &mut rng);
            let words = if v == motif_at {
                motif_block(&mut b, &vocab, a_before_b, &mut rng);
                motif_note = b.note.note_id.clone();
                rng.gen_range(120..=600)
            } else if rng.gen_bool(config.p_short_note) {
                rng.gen_range(40..100)
            } else {
                rng.gen_range(100..=600)
            };
            visits.push(visit(&b.note, words));
            out.notes.push(b.note);
        }

        let (mut diagnosis_date, mut adjusted) = (None, None);
        if label == Label::T2D {
            let dx = date + Duration::days(rng.gen_range(30..=720));
            diagnosis_date = Some(dx);
            if rng.gen_bool(config.p_adjusted_date) {
                let adj = dx - Duration::days(rng.gen_range(10..=25));
                adjusted = Some(adj);
                let mut b = NoteBuilder::new(format!("{pid}_early"), adj + Duration::days(rng.gen_range(0..=5)), "progress");
                diagnosis_block(&mut b);
                visits.push(visit(&b.note, rng.gen_range(150..=400)));
                out.notes.push(b.note);
            }
            if rng.gen_bool(config.p_leak_note) {
                let mut b = NoteBuilder::new(format!("{pid}_leak"), dx + Duration::days(rng.gen_range(5..=60)), "progress");
                noise_block(&mut b, &vocab, config, &mut rng);
                diagnosis_block(&mut b);
                visits.push(visit(&b.note, rng.gen_range(150..=400)));
                out.notes.push(b.note);
            }
        }
        out.manifest.push(PatientRecord {
            patient_id: pid.clone(),
            demographics,
            label,
            diagnosis_date,
            adjusted_diagnosis_date: adjusted,
            visits,
        });
        out.gold.push(GoldLabel {
            patient_id: pid,
            label,
            a_before_b,
            motif_note,
        });
    }
    Ok(out)
}

/// [`generate_with`] on the bundled toy knowledge base and lexicon.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    generate_with(config, &KnowledgeBase::toy(), &Lexicon::toy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_visit_graph, DateLocale, EdgeKind};
    use crate::knowledge::link_concepts;

    fn small(seed: u64, n: usize) -> SynthConfig {
        SynthConfig {
            n_patients: n,
            ..SynthConfig::new(seed)
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(3, 20)).unwrap();
        let b = generate(&small(3, 20)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(4, 20)).unwrap();
        assert_ne!(a.manifest, c.manifest);
    }

    #[test]
    fn certain_order_determines_label() {
        let cfg = SynthConfig {
            p_label_given_order: 1.0,
            noise_relations_min: 0,
            noise_relations_max: 0,
            ..small(1, 200)
        };
        let out = generate(&cfg).unwrap();
        for g in &out.gold {
            assert_eq!(g.label == Label::T2D, g.a_before_b);
        }
    }

    #[test]
    fn fair_coin_decorrelates() {
        let cfg = SynthConfig {
            p_label_given_order: 0.5,
            ..small(9, 1000)
        };
        let out = generate(&cfg).unwrap();
        let n = out.gold.len() as f64;
        let agree = out.gold.iter().filter(|g| (g.label == Label::T2D) == g.a_before_b).count() as f64;
        // agreement ~ Binomial(n, 1/2); 3 sigma = 1.5 sqrt(n)
        assert!((agree - n / 2.0).abs() <= 1.5 * n.sqrt(), "agree {agree}");
    }

    #[test]
    fn notes_validate_and_motif_survives_reduction() {
        let out = generate(&small(5, 60)).unwrap();
        let kb = KnowledgeBase::toy();
        let lex = Lexicon::toy();
        let mut survived = 0;
        for g in &out.gold {
            let note = out.notes.iter().find(|n| n.note_id == g.motif_note).unwrap();
            note.validate().unwrap();
            let links = link_concepts(note, &kb, &lex).unwrap();
            let graph = build_visit_graph(note, &links, DateLocale::Us, 0).unwrap();
            let node_of = |concept: &str| graph.nodes.iter().find(|n| n.concept.as_deref() == Some(concept)).unwrap().id.clone();
            let (a, b) = (node_of("C0032952"), node_of("C0020456"));
            let (src, tgt) = if g.a_before_b { (a, b) } else { (b, a) };
            if graph.has_edge(&src, &tgt, EdgeKind::Before) {
                survived += 1;
            }
        }
        assert_eq!(survived, out.gold.len());
        for n in &out.notes {
            n.validate().unwrap();
        }
    }

    #[test]
    fn diagnosis_dates_follow_visits() {
        let out = generate(&small(2, 100)).unwrap();
        for r in &out.manifest {
            r.validate().unwrap();
            if let Some(dx) = r.diagnosis_date {
                let regular = r.visits.iter().filter(|v| v.note_id.contains("_v")).filter_map(|v| v.date).max().unwrap();
                assert!(r.effective_date().unwrap() - regular >= Duration::days(5));
                assert!(dx >= r.effective_date().unwrap());
            }
        }
    }

    #[test]
    fn rejects_bad_probability() {
        let cfg = SynthConfig {
            p_label_given_order: 1.5,
            ..small(1, 5)
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }
}
