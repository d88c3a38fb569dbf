use std::rc::Rc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adjacency::{build_adjacency_raw, GraphSwitches};
use super::encoder::{forward, Batch, Dropout, ModelDims, ParamVars, TrajectoryEncoderParams};
use super::tensor::{Mat, Tape};
use crate::error::{Error, Result};
use crate::eval::roc_auc_scores;
use crate::features::{FeatureSwitches, VisitFeatures, DEFAULT_D_WIDTH};
use crate::ingest::{truncate_visits, DEFAULT_MAX_NOTES};

/// One patient's ordered visit features and label (1 = T2D).
#[derive(Debug, Clone)]
pub struct PatientSample {
    pub patient_id: String,
    pub label: u8,
    pub visits: Vec<VisitFeatures>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClassWeight {
    #[default]
    None,
    /// `n / (2 n_c)` from the training portion of each fold.
    Balanced,
    Manual { t2d: f64, nod: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub class_weight: ClassWeight,
    pub max_notes: usize,
    pub graph: GraphSwitches,
    pub features: FeatureSwitches,
    pub layers: usize,
    pub gnn_dim: usize,
    pub hidden: usize,
    pub d_width: usize,
    pub dropout: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            folds: 3,
            seed: 0,
            class_weight: ClassWeight::None,
            max_notes: DEFAULT_MAX_NOTES,
            graph: GraphSwitches::default(),
            features: FeatureSwitches::default(),
            layers: 2,
            gnn_dim: 128,
            hidden: 128,
            d_width: DEFAULT_D_WIDTH,
            dropout: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0,1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.max_notes == 0 {
            return Err(Error::config("max_notes must be at least 1"));
        }
        if let ClassWeight::Manual { t2d, nod } = self.class_weight {
            if !(t2d > 0.0 && nod > 0.0) {
                return Err(Error::config("manual class weights must be positive"));
            }
        }
        self.graph.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub fold: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldModel {
    pub fold: usize,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub params: TrajectoryEncoderParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub members: Vec<FoldModel>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub ensemble: Ensemble,
    pub log: Vec<TrainLogEntry>,
}

/// Adam with optional L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Mat>, grads: Vec<Option<Mat>>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Mat::zeros(p.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let mut g = g.unwrap_or_else(|| Mat::zeros(p.raw_dim()));
            if self.weight_decay > 0.0 {
                g.scaled_add(self.weight_decay, p);
            }
            let (b1, b2) = (self.beta1, self.beta2);
            self.m[i].zip_mut_with(&g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            self.v[i].zip_mut_with(&g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (lr, eps) = (self.lr, self.eps);
            ndarray::Zip::from(&mut **p)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
        }
    }
}

/// Stratified assignment of sample positions to `k` folds: each class is
/// shuffled with `seed` and dealt round-robin.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::config("folds must be at least 2"));
    }
    let mut folds = vec![Vec::new(); k];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = 0;
    for class in [1u8, 0u8] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(Error::invalid("training data must contain both classes"));
        }
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {class} has {} patients, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (j, i) in members.into_iter().enumerate() {
            folds[(j + offset) % k].push(i);
        }
        offset += 1;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Flatten patients into one padded batch, applying the graph and feature
/// switches and the visit cap. Visits left without nodes are skipped.
pub fn build_batch(samples: &[&PatientSample], config: &TrainConfig) -> Result<Batch> {
    config.graph.validate()?;
    let first = samples
        .iter()
        .flat_map(|s| s.visits.first())
        .next()
        .ok_or_else(|| Error::invalid("no visits to batch"))?;
    let (d_text, n_buckets, d_kg) = (first.text.ncols(), first.width_mix.ncols(), first.kg.ncols());
    let (mut text, mut mix, mut kg) = (Vec::new(), Vec::new(), Vec::new());
    let mut neighbors = Vec::new();
    let mut visit_nodes = Vec::new();
    let mut patient_visits = Vec::with_capacity(samples.len());
    for s in samples {
        let visits = truncate_visits(&s.visits, config.max_notes)
            .map_err(|_| Error::invalid(format!("patient {} has no visits", s.patient_id)))?;
        let mut own = Vec::new();
        for v in &visits {
            if (v.text.ncols(), v.width_mix.ncols(), v.kg.ncols()) != (d_text, n_buckets, d_kg) {
                return Err(Error::invalid(format!(
                    "visit {} has feature widths inconsistent with the batch",
                    v.note_id
                )));
            }
            let adj = build_adjacency_raw(&v.kinds, &v.edges, config.graph)?;
            if adj.kept.is_empty() {
                log::warn!("patient {}: visit {} has no nodes, skipped", s.patient_id, v.note_id);
                continue;
            }
            let base = neighbors.len();
            let mut nodes = Vec::with_capacity(adj.kept.len());
            for (slot, &i) in adj.kept.iter().enumerate() {
                if config.features.use_text {
                    text.extend(v.text.row(i).iter());
                    mix.extend(v.width_mix.row(i).iter());
                } else {
                    text.extend(std::iter::repeat(0.0).take(d_text));
                    mix.extend(std::iter::repeat(0.0).take(n_buckets));
                }
                if config.features.use_kg {
                    kg.extend(v.kg.row(i).iter());
                } else {
                    kg.extend(std::iter::repeat(0.0).take(d_kg));
                }
                neighbors.push(adj.neighbors[slot].iter().map(|j| base + j).collect());
                nodes.push(base + slot);
            }
            own.push(visit_nodes.len());
            visit_nodes.push(nodes);
        }
        if own.is_empty() {
            return Err(Error::invalid(format!("patient {} has no usable visits", s.patient_id)));
        }
        patient_visits.push(own);
    }
    let n = neighbors.len();
    let mat = |data: Vec<f64>, cols: usize| Array2::from_shape_vec((n, cols), data).expect("row-major fill");
    Ok(Batch {
        text: mat(text, d_text),
        width_mix: mat(mix, n_buckets),
        kg: mat(kg, d_kg),
        neighbors: Rc::new(neighbors),
        visit_nodes: Rc::new(visit_nodes),
        patient_visits,
    })
}

/// Probabilities for every patient in `batch` under one parameter set.
pub fn predict_params(params: &TrajectoryEncoderParams, batch: &Batch) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let out = forward(&mut tape, &vars, batch, params.forward.hidden(), None);
    tape.value(out.probability).column(0).to_vec()
}

/// Mean of member probabilities per patient.
pub fn predict_ensemble(samples: &[&PatientSample], ensemble: &Ensemble) -> Result<Vec<f64>> {
    if ensemble.members.is_empty() {
        return Err(Error::invalid("ensemble has no members"));
    }
    let batch = build_batch(samples, &ensemble.config)?;
    let mut total = vec![0.0; samples.len()];
    for m in &ensemble.members {
        for (t, p) in total.iter_mut().zip(predict_params(&m.params, &batch)) {
            *t += p;
        }
    }
    let k = ensemble.members.len() as f64;
    Ok(total.into_iter().map(|t| t / k).collect())
}

fn dims_for(samples: &[PatientSample], config: &TrainConfig) -> Result<ModelDims> {
    let v = samples
        .iter()
        .flat_map(|s| s.visits.first())
        .next()
        .ok_or_else(|| Error::invalid("dataset has no visits"))?;
    let dims = ModelDims {
        d_text: v.text.ncols(),
        n_buckets: v.width_mix.ncols(),
        d_width: config.d_width,
        d_kg: v.kg.ncols(),
        gnn_dim: config.gnn_dim,
        hidden: config.hidden,
        layers: config.layers,
    };
    dims.validate()?;
    Ok(dims)
}

fn initial_width_table(dims: &ModelDims, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5749_4454_4853);
    Array2::from_shape_fn((dims.n_buckets, dims.d_width), |_| rng.gen_range(-0.1..0.1))
}

fn class_weights(labels: &[u8], scheme: ClassWeight) -> [f64; 2] {
    match scheme {
        ClassWeight::None => [1.0, 1.0],
        ClassWeight::Manual { t2d, nod } => [nod, t2d],
        ClassWeight::Balanced => {
            let n = labels.len() as f64;
            let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
            let neg = n - pos;
            [n / (2.0 * neg.max(1.0)), n / (2.0 * pos.max(1.0))]
        }
    }
}

/// Derived seed for a named stream inside one fold.
fn fold_seed(seed: u64, fold: usize, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((fold as u64) << 8) | stream);
    rng.gen()
}

/// K-fold stratified training. Each fold keeps the parameters of its best
/// epoch by validation AUC (earliest epoch on ties).
pub fn train(samples: &[PatientSample], config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let folds = stratified_folds(&labels, config.folds, config.seed)?;
    let dims = dims_for(samples, config)?;
    let mut log = Vec::new();
    let mut members = Vec::with_capacity(folds.len());
    for (k, val_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = (0..samples.len()).filter(|i| val_idx.binary_search(i).is_err()).collect();
        let train_set: Vec<&PatientSample> = train_idx.iter().map(|&i| &samples[i]).collect();
        let val_set: Vec<&PatientSample> = val_idx.iter().map(|&i| &samples[i]).collect();
        let train_batch = build_batch(&train_set, config)?;
        let val_batch = build_batch(&val_set, config)?;
        let train_y: Vec<f64> = train_set.iter().map(|s| f64::from(s.label)).collect();
        let val_y: Vec<u8> = val_set.iter().map(|s| s.label).collect();
        let w = class_weights(&train_set.iter().map(|s| s.label).collect::<Vec<_>>(), config.class_weight);
        let weights: Rc<Vec<f64>> = Rc::new(train_y.iter().map(|&y| w[y as usize]).collect());
        let targets = Rc::new(train_y);

        let init_seed = fold_seed(config.seed, k, 1);
        let mut params =
            TrajectoryEncoderParams::init(&dims, initial_width_table(&dims, init_seed), init_seed)?;
        let mut best = FoldModel {
            fold: k,
            best_epoch: 0,
            best_val_auc: None,
            params: params.clone(),
        };
        let mut adam = Adam::new(config.learning_rate, config.weight_decay);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(fold_seed(config.seed, k, 2));
        for epoch in 1..=config.epochs {
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, &params);
            let drop = (config.dropout > 0.0).then(|| Dropout {
                rate: config.dropout,
                rng: &mut dropout_rng,
            });
            let out = forward(&mut tape, &vars, &train_batch, dims.hidden, drop);
            let loss = tape.bce(out.probability, targets.clone(), weights.clone());
            let train_loss = tape.value(loss)[[0, 0]];
            if !train_loss.is_finite() {
                return Err(Error::invalid(format!("fold {k} epoch {epoch}: loss is not finite")));
            }
            let mut grads = tape.backward(loss);
            let g: Vec<Option<Mat>> = vars.all.iter().map(|&v| grads.take(v)).collect();
            adam.step(params.tensors_mut(), g);

            let val_auc = roc_auc_scores(&predict_params(&params, &val_batch), &val_y).ok();
            log::debug!("fold {k} epoch {epoch} loss {train_loss:.5} val_auc {val_auc:?}");
            log.push(TrainLogEntry {
                fold: k,
                epoch,
                train_loss,
                val_auc,
            });
            let improved = match (val_auc, best.best_val_auc) {
                (Some(a), Some(b)) => a > b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if improved {
                best.best_epoch = epoch;
                best.best_val_auc = val_auc;
                best.params = params.clone();
            }
        }
        members.push(best);
    }
    Ok(TrainOutput {
        ensemble: Ensemble {
            config: config.clone(),
            dims,
            members,
        },
        log,
    })
}
