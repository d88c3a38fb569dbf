//! Command-line front end. One subcommand per pipeline stage; every stage
//! reads from and writes to directories under the work directory and leaves
//! a `config.json` snapshot beside its outputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cohort::{load_manifest, save_manifest, write_balance_csv, MatchOrder, NoteQualityFilter};
use crate::error::{Error, Result};
use crate::eval::{
    bootstrap_compare, evaluate, fairness_table, horizon_curve, BootstrapResult, Metric, PredictionSet,
    DEFAULT_REPLICATES, DEFAULT_THRESHOLD, DEFAULT_WINDOW_DAYS,
};
use crate::ingest::{load_note_dir, DateLocale, NoteExtraction, VisitGraph, DEFAULT_MAX_NOTES};
use crate::knowledge::{KnowledgeBase, Lexicon};
use crate::model::checkpoint::{load_ensemble, save_ensemble};
use crate::model::{train, ClassWeight, TrainConfig};
use crate::pipeline::{
    build_graphs, curate, featurize, load_samples, predict, read_json, save_samples, select, write_fairness_csv,
    write_horizon_csv, write_json, write_snapshot, CurateConfig, FeaturizeConfig, PatientGraphs, Split,
};
use crate::reveal::{load_cases, run_reveal, Backend, Recorder, RevealConfig, DEFAULT_K, DEFAULT_N};
use crate::synth::{generate, SynthConfig};

pub const WORKDIR_ENV: &str = "TRAJGRAPH_WORKDIR";

#[derive(Debug, Parser)]
#[command(name = "trajgraph", version, about = "Temporal knowledge-graph risk prediction pipeline")]
pub struct Cli {
    /// Root directory for stage inputs and outputs.
    #[arg(long, global = true, env = WORKDIR_ENV, default_value = ".")]
    pub workdir: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with a planted temporal motif.
    Synth(SynthArgs),
    /// Filter notes, split train/test and match the test cohort.
    Curate(CurateArgs),
    /// Reduce and augment one graph per curated note.
    BuildGraphs(BuildGraphsArgs),
    /// Compute node inputs for every visit graph.
    Featurize(FeaturizeArgs),
    /// Cross-validated training of the trajectory model.
    Train(TrainArgs),
    /// Score the matched test patients.
    Predict(PredictArgs),
    /// Discrimination, classification and fairness report.
    Evaluate(EvaluateArgs),
    /// Metrics by prediction-horizon window.
    Horizon(HorizonArgs),
    /// Group fairness gaps.
    Fairness(PredictionsArg),
    /// Paired bootstrap comparison of two prediction files.
    Compare(CompareArgs),
    /// Verifier-aided labeling through external or replayed backends.
    RevealRun(RevealArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long = "n", default_value_t = 500)]
    pub n_patients: usize,
    #[arg(long, default_value_t = 0.9)]
    pub p_label_given_order: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p_motif_order: f64,
    #[arg(long, default_value_t = 2)]
    pub visits_min: usize,
    #[arg(long, default_value_t = 4)]
    pub visits_max: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderArg {
    Input,
    DescendingScore,
}

#[derive(Debug, Args, Serialize)]
pub struct CurateArgs {
    /// Cohort manifest (JSON lines). Defaults to the synth output.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = crate::cohort::DEFAULT_BUFFER_DAYS)]
    pub buffer_days: i64,
    #[arg(long, default_value_t = crate::cohort::DEFAULT_MIN_WORDS)]
    pub min_words: usize,
    /// Allowed note types (repeatable); all types when absent.
    #[arg(long = "note-type")]
    pub note_types: Vec<String>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, value_enum, default_value_t = OrderArg::Input)]
    pub match_order: OrderArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocaleArg {
    Us,
    International,
}

#[derive(Debug, Args, Serialize)]
pub struct KnowledgeArgs {
    /// Knowledge-base JSON bundle; the bundled toy KB when absent.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Surface-to-concept TSV; the bundled toy lexicon when absent.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildGraphsArgs {
    /// Directory of per-note extraction JSON files.
    #[arg(long)]
    pub notes: Option<PathBuf>,
    #[command(flatten)]
    pub knowledge: KnowledgeArgs,
    #[arg(long, value_enum, default_value_t = LocaleArg::Us)]
    pub locale: LocaleArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub notes: Option<PathBuf>,
    /// Directory of `<note_id>.emb` token embedding files.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long, default_value_t = crate::features::DEFAULT_D_TOK)]
    pub d_tok: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeightArg {
    None,
    Balanced,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = DEFAULT_MAX_NOTES)]
    pub max_notes: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    pub gnn_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value_t = ClassWeightArg::None)]
    pub class_weight: ClassWeightArg,
    /// Keep Before/Overlap edges.
    #[arg(long, overrides_with = "no_use_temporal")]
    pub use_temporal: bool,
    #[arg(long)]
    pub no_use_temporal: bool,
    /// Keep semantic-type nodes and their edges.
    #[arg(long, overrides_with = "no_use_kg")]
    pub use_kg: bool,
    #[arg(long)]
    pub no_use_kg: bool,
    /// Token and width embeddings in node inputs.
    #[arg(long, overrides_with = "no_use_text_emb")]
    pub use_text_emb: bool,
    #[arg(long)]
    pub no_use_text_emb: bool,
    /// Concept vectors in node inputs.
    #[arg(long, overrides_with = "no_use_kg_emb")]
    pub use_kg_emb: bool,
    #[arg(long)]
    pub no_use_kg_emb: bool,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Trained ensemble directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictionsArg {
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: PredictionsArg,
    #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS)]
    pub window_days: i64,
    /// Also run a paired bootstrap between two prediction files.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub compare: Option<Vec<PathBuf>>,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    pub replicates: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct HorizonArgs {
    #[command(flatten)]
    pub input: PredictionsArg,
    #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS)]
    pub window_days: i64,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    pub replicates: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RevealArgs {
    /// Cases as JSON lines.
    #[arg(long)]
    pub cases: PathBuf,
    /// Replay file answering both reasoner and verifier requests.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub reasoner_cmd: Option<String>,
    #[arg(long = "reasoner-arg", allow_hyphen_values = true)]
    pub reasoner_args: Vec<String>,
    #[arg(long)]
    pub verifier_cmd: Option<String>,
    #[arg(long = "verifier-arg", allow_hyphen_values = true)]
    pub verifier_args: Vec<String>,
    /// Write every backend exchange to this replay file.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Reasoning paths sampled per case.
    #[arg(long, default_value_t = DEFAULT_N)]
    pub n_paths: usize,
    /// Highest-confidence paths that vote.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success = 0,
    Invalid = 1,
    Partial = 2,
}

/// Parse `argv` (program name first) and run. Messages go to stderr.
pub fn run<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Outcome::Invalid } else { Outcome::Success };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    match dispatch(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            Outcome::Invalid
        }
    }
}

struct Layout<'a> {
    root: &'a Path,
}

impl Layout<'_> {
    fn stage(&self, name: &str, out: &Option<PathBuf>) -> PathBuf {
        out.clone().unwrap_or_else(|| self.root.join(name))
    }

    fn input(&self, given: &Option<PathBuf>, default: &[&str]) -> PathBuf {
        given.clone().unwrap_or_else(|| default.iter().fold(self.root.to_path_buf(), |p, s| p.join(s)))
    }
}

#[derive(Serialize)]
struct StageConfig<'a, A: Serialize, C: Serialize> {
    seed: u64,
    args: &'a A,
    resolved: C,
}

fn snapshot<A: Serialize, C: Serialize>(dir: &Path, stage: &str, seed: u64, args: &A, resolved: C) -> Result<()> {
    write_snapshot(dir, stage, &StageConfig { seed, args, resolved })
}

fn load_kb(path: &Option<PathBuf>) -> Result<KnowledgeBase> {
    path.as_deref().map_or_else(|| Ok(KnowledgeBase::toy()), KnowledgeBase::load)
}

fn load_notes(dir: &Path) -> Result<BTreeMap<String, NoteExtraction>> {
    Ok(load_note_dir(dir)?.into_iter().map(|n| (n.note_id.clone(), n)).collect())
}

fn switch(on: bool, off: bool) -> bool {
    on || !off
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let w = Layout { root: &cli.workdir };
    let seed = cli.seed;
    match &cli.command {
        Command::Synth(a) => {
            let dir = w.stage("synth", &a.out);
            let config = SynthConfig {
                n_patients: a.n_patients,
                p_label_given_order: a.p_label_given_order,
                p_motif_order: a.p_motif_order,
                visits_min: a.visits_min,
                visits_max: a.visits_max,
                ..SynthConfig::new(seed)
            };
            let out = generate(&config)?;
            if dir.join("notes").exists() {
                fs::remove_dir_all(dir.join("notes")).map_err(|e| Error::io(dir.join("notes"), e))?;
            }
            out.write(&dir)?;
            snapshot(&dir, "synth", seed, a, &config)?;
            println!("{} patients, {} notes -> {}", out.manifest.len(), out.notes.len(), dir.display());
        }
        Command::Curate(a) => {
            let manifest = w.input(&a.manifest, &["synth", "manifest.jsonl"]);
            let records = load_manifest(&manifest)?;
            let config = CurateConfig {
                seed,
                buffer_days: a.buffer_days,
                quality: NoteQualityFilter {
                    min_words: a.min_words,
                    note_types: (!a.note_types.is_empty()).then(|| a.note_types.iter().cloned().collect()),
                    authors: None,
                },
                test_fraction: a.test_fraction,
                match_order: match a.match_order {
                    OrderArg::Input => MatchOrder::Input,
                    OrderArg::DescendingScore => MatchOrder::DescendingScore,
                },
                ..CurateConfig::default()
            };
            let out = curate(&records, &config).map_err(|e| e.in_file(&manifest))?;
            let dir = w.stage("curate", &a.out);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            save_manifest(&dir.join("cohort.jsonl"), &out.records)?;
            write_json(&dir.join("split.json"), &out.split)?;
            write_json(&dir.join("propensity.json"), &out.propensity)?;
            write_balance_csv(&dir.join("balance.csv"), &out.balance)?;
            snapshot(&dir, "curate", seed, a, (&manifest, &config))?;
            println!(
                "{} patients kept; train {}, matched test pairs {}",
                out.records.len(),
                out.split.train.len(),
                out.pairs.len()
            );
        }
        Command::BuildGraphs(a) => {
            let notes_dir = w.input(&a.notes, &["synth", "notes"]);
            let cohort = w.root.join("curate").join("cohort.jsonl");
            let records = load_manifest(&cohort)?;
            let notes = load_notes(&notes_dir)?;
            let kb = load_kb(&a.knowledge.kb)?;
            let lexicon = a
                .knowledge
                .lexicon
                .as_deref()
                .map_or_else(|| Ok(Lexicon::toy()), Lexicon::load)?;
            let locale = match a.locale {
                LocaleArg::Us => DateLocale::Us,
                LocaleArg::International => DateLocale::International,
            };
            let patients = build_graphs(&records, &notes, &kb, &lexicon, locale)?;
            let dir = w.stage("graphs", &a.out);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut index: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for p in &patients {
                for g in &p.graphs {
                    g.save(&dir.join(format!("{}.json", g.note_id)))?;
                    index.entry(&p.patient_id).or_default().push(&g.note_id);
                }
            }
            write_json(&dir.join("index.json"), &index)?;
            snapshot(&dir, "build-graphs", seed, a, (&notes_dir, &cohort))?;
            println!("{} graphs -> {}", index.values().map(Vec::len).sum::<usize>(), dir.display());
        }
        Command::Featurize(a) => {
            let graphs_dir = w.root.join("graphs");
            let notes_dir = w.input(&a.notes, &["synth", "notes"]);
            let index: BTreeMap<String, Vec<String>> = read_json(&graphs_dir.join("index.json"))?;
            let records = load_manifest(&w.root.join("curate").join("cohort.jsonl"))?;
            let notes = load_notes(&notes_dir)?;
            let kb = load_kb(&a.kb)?;
            let patients = records
                .iter()
                .filter_map(|r| index.get(&r.patient_id).map(|ids| (r, ids)))
                .map(|(r, ids)| {
                    let graphs = ids
                        .iter()
                        .map(|id| VisitGraph::load(&graphs_dir.join(format!("{id}.json"))))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(PatientGraphs {
                        patient_id: r.patient_id.clone(),
                        label: r.label,
                        graphs,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let config = FeaturizeConfig {
                d_tok: a.d_tok,
                seed,
                ..FeaturizeConfig::default()
            };
            let samples = featurize(&patients, &notes, &kb, a.embeddings.as_deref(), &config)?;
            let dir = w.stage("features", &a.out);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            save_samples(&dir.join("features.bin"), &samples)?;
            snapshot(&dir, "featurize", seed, a, &config)?;
            println!("{} patients featurized -> {}", samples.len(), dir.display());
        }
        Command::Train(a) => {
            let mut config = TrainConfig {
                learning_rate: a.learning_rate,
                epochs: a.epochs,
                folds: a.folds,
                seed,
                class_weight: match a.class_weight {
                    ClassWeightArg::None => ClassWeight::None,
                    ClassWeightArg::Balanced => ClassWeight::Balanced,
                },
                max_notes: a.max_notes,
                layers: a.layers,
                gnn_dim: a.gnn_dim,
                hidden: a.hidden,
                dropout: a.dropout,
                ..TrainConfig::default()
            };
            config.graph.use_temporal_edges = switch(a.use_temporal, a.no_use_temporal);
            config.graph.use_kg_subgraph = switch(a.use_kg, a.no_use_kg);
            config.features.use_text = switch(a.use_text_emb, a.no_use_text_emb);
            config.features.use_kg = switch(a.use_kg_emb, a.no_use_kg_emb);
            config.validate()?;
            let cohort = w.root.join("curate").join("cohort.jsonl");
            let split: Split = read_json(&w.root.join("curate").join("split.json"))?;
            let features = w.input(&a.features, &["features", "features.bin"]);
            let samples = load_samples(&features)?;
            let train_set: Vec<_> = select(&samples, &split.train)?.into_iter().cloned().collect();
            for label in [0u8, 1] {
                if !train_set.iter().any(|s| s.label == label) {
                    return Err(Error::invalid(format!(
                        "{}: training split has no {} patients; both classes are required",
                        cohort.display(),
                        if label == 1 { "T2D" } else { "NoD" }
                    )));
                }
            }
            let out = train(&train_set, &config).map_err(|e| e.in_file(&cohort))?;
            let dir = w.stage("train", &a.out);
            save_ensemble(&dir, &out.ensemble)?;
            let mut log = String::new();
            for entry in &out.log {
                log.push_str(&serde_json::to_string(entry).expect("log serializes"));
                log.push('\n');
            }
            let log_path = dir.join("train_log.jsonl");
            fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
            snapshot(&dir, "train", seed, a, &config)?;
            for m in &out.ensemble.members {
                println!("fold {}: best epoch {}, val AUC {:?}", m.fold, m.best_epoch, m.best_val_auc);
            }
        }
        Command::Predict(a) => {
            let model_dir = w.input(&a.model, &["train"]);
            let ensemble = load_ensemble(&model_dir)?;
            let split: Split = read_json(&w.root.join("curate").join("split.json"))?;
            let records = load_manifest(&w.root.join("curate").join("cohort.jsonl"))?;
            let samples = load_samples(&w.input(&a.features, &["features", "features.bin"]))?;
            let test = select(&samples, &split.test)?;
            let set = predict(&test, &ensemble, &records, a.threshold)?;
            let dir = w.stage("predict", &a.out);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            set.write_csv(&dir.join("predictions.csv"))?;
            snapshot(&dir, "predict", seed, a, &model_dir)?;
            println!("{} predictions -> {}", set.entries.len(), dir.display());
        }
        Command::Evaluate(a) => {
            let (path, set) = read_predictions(&w, &a.input)?;
            let report = evaluate(&set).map_err(|e| e.in_file(&path))?;
            let dir = w.stage("evaluate", &a.input.out);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_json(&dir.join("report.json"), &report)?;
            write_fairness_csv(&dir.join("fairness.csv"), &report.fairness)?;
            match horizon_curve(&set.entries, a.window_days) {
                Ok(curve) => {
                    write_json(&dir.join("horizon.json"), &curve)?;
                    write_horizon_csv(&dir.join("horizon.csv"), &curve)?;
                }
                Err(e) => log::warn!("horizon curve skipped: {e}"),
            }
            if let Some(pair) = &a.compare {
                let results = compare_files(&pair[0], &pair[1], a.input.threshold, a.replicates, seed)?;
                write_significance(&dir, &results)?;
            }
            snapshot(&dir, "evaluate", seed, a, &path)?;
            println!("AUC {}", report.auc.map_or("undefined".into(), |v| format!("{v:.4}")));
        }
        Command::Horizon(a) => {
            let (path, set) = read_predictions(&w, &a.input)?;
            let curve = horizon_curve(&set.entries, a.window_days).map_err(|e| e.in_file(&path))?;
            let dir = w.stage("horizon", &a.input.out);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_json(&dir.join("horizon.json"), &curve)?;
            write_horizon_csv(&dir.join("horizon.csv"), &curve)?;
            snapshot(&dir, "horizon", seed, a, &path)?;
        }
        Command::Fairness(a) => {
            let (path, set) = read_predictions(&w, a)?;
            let rows: Vec<_> = set
                .group_columns()
                .iter()
                .flat_map(|attr| fairness_table(&set.entries, attr))
                .collect();
            let dir = w.stage("fairness", &a.out);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_json(&dir.join("fairness.json"), &rows)?;
            write_fairness_csv(&dir.join("fairness.csv"), &rows)?;
            snapshot(&dir, "fairness", seed, a, &path)?;
        }
        Command::Compare(a) => {
            let results = compare_files(&a.a, &a.b, a.threshold, a.replicates, seed)?;
            let dir = w.stage("compare", &a.out);
            write_significance(&dir, &results)?;
            snapshot(&dir, "compare", seed, a, ())?;
            for r in &results {
                println!(
                    "{:<14} diff {:+.4}  95% CI [{:+.4}, {:+.4}]  p {:.4} {}",
                    r.metric.name(),
                    r.observed_diff,
                    r.ci_low,
                    r.ci_high,
                    r.p_value,
                    r.stars()
                );
            }
        }
        Command::RevealRun(a) => return reveal(&w, seed, a),
    }
    Ok(Outcome::Success)
}

fn read_predictions(w: &Layout, a: &PredictionsArg) -> Result<(PathBuf, PredictionSet)> {
    let path = w.input(&a.predictions, &["predict", "predictions.csv"]);
    let set = PredictionSet::read_csv(&path, a.threshold)?;
    Ok((path, set))
}

fn compare_files(a: &Path, b: &Path, threshold: f64, replicates: usize, seed: u64) -> Result<Vec<BootstrapResult>> {
    let sa = PredictionSet::read_csv(a, threshold)?;
    let sb = PredictionSet::read_csv(b, threshold)?;
    Metric::ALL
        .iter()
        .map(|&m| bootstrap_compare(&sa.entries, &sb.entries, m, replicates, seed))
        .collect()
}

fn write_significance(dir: &Path, results: &[BootstrapResult]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("significance.json"), &results)?;
    let path = dir.join("significance.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
    w.write_record([
        "metric",
        "observed_diff",
        "mean_diff",
        "sd",
        "ci_low",
        "ci_high",
        "p_value",
        "stars",
        "replicates",
    ])
    .map_err(|e| Error::parse(&path, e))?;
    for r in results {
        w.write_record([
            r.metric.name().to_string(),
            format!("{:.6}", r.observed_diff),
            format!("{:.6}", r.mean_diff),
            format!("{:.6}", r.sd),
            format!("{:.6}", r.ci_low),
            format!("{:.6}", r.ci_high),
            format!("{:.6}", r.p_value),
            r.stars().to_string(),
            r.replicates.to_string(),
        ])
        .map_err(|e| Error::parse(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn reveal(w: &Layout, seed: u64, a: &RevealArgs) -> Result<Outcome> {
    let config = RevealConfig {
        n_samples: a.n_paths,
        k: a.k,
    };
    config.validate()?;
    let cases = load_cases(&a.cases)?;
    let pick = |cmd: &Option<String>, args: &[String]| -> Result<Backend> {
        match (cmd, &a.replay) {
            (Some(program), _) => Ok(Backend::ExternalCommand {
                program: program.clone(),
                args: args.to_vec(),
            }),
            (None, Some(path)) => Backend::load_replay(path),
            (None, None) => Err(Error::config("each backend needs --replay or a --reasoner-cmd/--verifier-cmd")),
        }
    };
    let mut reasoner = pick(&a.reasoner_cmd, &a.reasoner_args)?;
    let mut verifier = pick(&a.verifier_cmd, &a.verifier_args)?;
    if a.record.is_some() {
        reasoner = Backend::Recording(Recorder::new(reasoner));
        verifier = Backend::Recording(Recorder::new(verifier));
    }
    let run = run_reveal(&cases, &reasoner, &verifier, config)?;
    let dir = w.stage("reveal", &a.out);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    run.write_audit(&dir.join("audit.jsonl"))?;
    let preds = run.predictions(&cases);
    if !preds.entries.is_empty() {
        preds.write_csv(&dir.join("predictions.csv"))?;
    }
    if let (Some(path), Backend::Recording(r), Backend::Recording(v)) = (&a.record, &reasoner, &verifier) {
        let mut entries = r.entries();
        entries.extend(v.entries());
        let mut text = String::new();
        for e in &entries {
            text.push_str(&serde_json::to_string(e).expect("entry serializes"));
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    snapshot(&dir, "reveal-run", seed, a, config)?;
    let failed = run.failed();
    println!("{} cases, {} failed", cases.len(), failed);
    Ok(if failed > 0 { Outcome::Partial } else { Outcome::Success })
}
