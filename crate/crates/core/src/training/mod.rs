//! Splitting, triplet mining, the training step and loop, checkpoints.

mod checkpoint;
mod loss;
mod model;
mod optim;
mod split;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::FrozenPlans;
use crate::error::{Error, Result};
use crate::graph::ModalGraph;
use crate::imaging::Modality;
use crate::numcore::Rng;
use crate::retrieval::{evaluate, graph_view, Relevance, ScoreMode};

pub use checkpoint::{
    ensure_config, load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry,
    FORMAT_VERSION, MANIFEST_FILE, WEIGHTS_FILE,
};
pub use loss::{mine_negatives, triplet_loss, triplet_loss_grad, TripletBatch};
pub use model::{Model, ModelConfig, PairPass};
pub use optim::{OptimizerState, ADAM_EPS, BETA1, BETA2};
pub use split::{largest_remainder, split_dataset, Split, SplitAssignment};

/// RNG streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_BATCHES: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    /// Scoring used for the per-epoch validation Recall@1.
    pub val_mode: ScoreMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 16,
            margin: 0.3,
            seed: 0,
            split_ratios: [0.7, 0.2, 0.1],
            val_mode: ScoreMode::Paired,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be ≥ 0, got {}", self.margin)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate and weight_decay must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// A query graph with the face graph it should match.
#[derive(Clone, Copy, Debug)]
pub struct TrainPair<'a> {
    pub query: &'a ModalGraph,
    pub face: &'a ModalGraph,
}

/// Pairs every non-face graph with its subject's face of the same view, or the
/// subject's first face when no view matches. Subjects without a face are
/// skipped.
pub fn make_pairs<'a>(graphs: &[&'a ModalGraph]) -> Vec<TrainPair<'a>> {
    let mut out = Vec::new();
    for q in graphs.iter().filter(|g| g.modality.is_query()) {
        let faces: Vec<&&ModalGraph> = graphs
            .iter()
            .filter(|g| g.modality == Modality::Face && g.subject_id == q.subject_id)
            .collect();
        let face = faces
            .iter()
            .find(|f| graph_view(f) == graph_view(q))
            .or(faces.first());
        if let Some(f) = face {
            out.push(TrainPair { query: q, face: f });
        }
    }
    out
}

/// Mining choices and plans to reuse when re-evaluating a batch objective.
#[derive(Clone, Debug)]
pub struct FrozenBatch {
    pub negatives: Vec<usize>,
    pub plans: Vec<FrozenPlans>,
}

#[derive(Clone, Debug)]
pub struct BatchObjective {
    pub loss: f64,
    /// Triplets with a positive hinge.
    pub active: usize,
    pub frozen: FrozenBatch,
}

/// Mean triplet loss over the batch (plus `w_ot` times the mean transport
/// cost), with gradients accumulated into `model` from zero. Plans are held
/// constant in the backward pass; `frozen` also fixes them (and the mined
/// negatives) in the forward pass.
pub fn batch_objective(
    model: &mut Model,
    pairs: &[TrainPair],
    margin: f64,
    frozen: Option<&FrozenBatch>,
) -> Result<BatchObjective> {
    if pairs.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    model.zero_grad();
    let shared: &Model = model;
    let passes: Vec<PairPass> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            shared.forward_pair_frozen(p.query, p.face, frozen.map(|f| &f.plans[i]))
        })
        .collect::<Result<_>>()?;
    let anchors: Vec<_> = passes.iter().map(|p| p.z_query().clone()).collect();
    let positives: Vec<_> = passes.iter().map(|p| p.z_face().clone()).collect();
    let negatives = match frozen {
        Some(f) => f.negatives.clone(),
        None => {
            let subjects: Vec<&str> = pairs.iter().map(|p| p.query.subject_id.as_str()).collect();
            mine_negatives(&anchors, &positives, &subjects)?.negatives
        }
    };
    let b = pairs.len() as f64;
    let d = anchors[0].0.len();
    let mut dz_a = vec![vec![0.0; d]; pairs.len()];
    let mut dz_p = vec![vec![0.0; d]; pairs.len()];
    let mut loss = 0.0;
    let mut active = 0;
    for i in 0..pairs.len() {
        let n = negatives[i];
        let (l, da, dp, dn) = triplet_loss_grad(&anchors[i], &positives[i], &positives[n], margin);
        if l > 0.0 {
            active += 1;
        }
        loss += l / b;
        for k in 0..d {
            dz_a[i][k] += da[k] / b;
            dz_p[i][k] += dp[k] / b;
            dz_p[n][k] += dn[k] / b;
        }
    }
    let w_ot = model.cfg.align.w_ot;
    if w_ot != 0.0 {
        loss += w_ot * passes.iter().map(|p| p.align.aux_cost()).sum::<f64>() / b;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    for (i, pass) in passes.iter().enumerate() {
        model.backward_pair(pass, &dz_a[i], &dz_p[i], w_ot / b);
    }
    if model.params().iter().any(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    let plans = passes.iter().map(|p| p.align.plans().clone()).collect();
    Ok(BatchObjective {
        loss,
        active,
        frozen: FrozenBatch { negatives, plans },
    })
}

/// One optimization step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut OptimizerState,
    pairs: &[TrainPair],
    cfg: &TrainConfig,
) -> Result<f64> {
    let obj = batch_objective(model, pairs, cfg.margin, None)?;
    opt.update(&mut model.params_mut(), cfg.learning_rate, cfg.weight_decay)?;
    Ok(obj.loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_recall_at_1: Option<f64>,
}

pub fn write_epoch_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_recall_at_1\n");
    for e in log {
        let val = e.val_recall_at_1.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{}", e.epoch, e.train_loss, val).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: Model,
    pub manifest: CheckpointManifest,
    pub log: Vec<EpochLog>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
}

/// Shuffled index batches; a trailing batch with fewer than two identities is
/// folded into the one before it.
fn epoch_batches(pairs: &[TrainPair], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    rng.shuffle(&mut order);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 {
        let last = batches.last().unwrap();
        let first_subject = &pairs[last[0]].query.subject_id;
        if last.iter().all(|&i| &pairs[i].query.subject_id == first_subject) {
            let tail = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(tail);
        }
    }
    batches
}

fn subjects_in<'a>(graphs: &'a [ModalGraph], split: &SplitAssignment, which: Split) -> Vec<&'a ModalGraph> {
    graphs
        .iter()
        .filter(|g| split.get(&g.subject_id) == Some(&which))
        .collect()
}

/// Query graphs and face gallery of one split.
pub fn split_queries_gallery<'a>(
    graphs: &'a [ModalGraph],
    split: &SplitAssignment,
    which: Split,
) -> (Vec<&'a ModalGraph>, Vec<&'a ModalGraph>) {
    let members = subjects_in(graphs, split, which);
    let queries = members.iter().copied().filter(|g| g.modality.is_query()).collect();
    let gallery = members.iter().copied().filter(|g| g.modality == Modality::Face).collect();
    (queries, gallery)
}

/// Query modalities present in a graph collection.
pub fn query_modalities(graphs: &[ModalGraph]) -> Vec<Modality> {
    let mut m: Vec<Modality> = graphs.iter().map(|g| g.modality).filter(|m| m.is_query()).collect();
    m.sort();
    m.dedup();
    m
}

/// Full training run. Deterministic given `cfg.seed`.
pub fn train_loop(
    graphs: &[ModalGraph],
    split: &SplitAssignment,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_graphs = subjects_in(graphs, split, Split::Train);
    let pairs = make_pairs(&train_graphs);
    if pairs.is_empty() {
        return Err(Error::Argument(
            "training split holds no query/face pairs".into(),
        ));
    }
    let (val_q, val_g) = split_queries_gallery(graphs, split, Split::Val);
    let mut model = Model::new(
        model_cfg.clone(),
        &query_modalities(graphs),
        &mut Rng::derive(cfg.seed, STREAM_INIT),
    )?;
    let mut opt = OptimizerState::new(model.params());
    let mut batch_rng = Rng::derive(cfg.seed, STREAM_BATCHES);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val: Option<f64> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let batches = epoch_batches(&pairs, cfg.batch_size, &mut batch_rng);
        for batch in &batches {
            let chosen: Vec<TrainPair> = batch.iter().map(|&i| pairs[i]).collect();
            total += train_step(&mut model, &mut opt, &chosen, cfg)?;
        }
        let val = if val_q.is_empty() || val_g.is_empty() {
            None
        } else {
            let (r, _) = evaluate(&val_q, &val_g, &model, &[1], cfg.val_mode, Relevance::Subject)?;
            Some(r.recall_at[&1])
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / batches.len() as f64,
            val_recall_at_1: val,
        };
        if let Some(cb) = progress.as_mut() {
            cb(&entry);
        }
        log.push(entry);
        // Later epochs win ties; without validation the last epoch is kept.
        let better = match (val, best_val) {
            (Some(v), Some(b)) => v >= b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if better {
            best = model.clone();
            best_epoch = epoch;
            best_val = val;
        }
    }
    let mut manifest = CheckpointManifest::describe(&best);
    manifest.train = Some(cfg.clone());
    manifest.metrics.insert("best_epoch".into(), Some(best_epoch as f64));
    manifest.metrics.insert("val_recall_at_1".into(), best_val);
    Ok(TrainOutcome {
        model: best,
        manifest,
        log,
        best_epoch,
    })
}
