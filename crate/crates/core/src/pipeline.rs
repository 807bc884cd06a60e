//! Run configuration and the end-to-end steps shared by the CLI and tests.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{Ablation, AlignConfig};
use crate::dataset::DatasetManifest;
use crate::encoders::{Backbone, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{graph_from_image, GraphParams, ModalGraph, NODE_FEATURES};
use crate::imaging::{load_image, Modality, SlicParams};
use crate::retrieval::{evaluate, MetricsReport, Relevance, ScoreMatrix, ScoreMode};
use crate::training::{
    split_dataset, split_queries_gallery, train_loop, EpochLog, Model, ModelConfig, Split,
    SplitAssignment, TrainConfig, TrainOutcome,
};

/// Default KNN k for skull–face data.
pub const SKULL_K: usize = 6;
/// Default KNN k for sketch–face data.
pub const SKETCH_K: usize = 12;

/// Every tunable, with flat keys matching the CLI flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub image_size: usize,
    pub n_segments: usize,
    pub compactness: f64,
    pub slic_iterations: usize,
    /// KNN neighbours; unset means 12 for datasets with sketches, else 6.
    pub k: Option<usize>,
    pub contour_blend: f64,
    pub backbone: Backbone,
    pub layers: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub edge_bias: f64,
    pub query_extra_layers: usize,
    pub shared_encoder: bool,
    pub epsilon: f64,
    pub sinkhorn_iterations: usize,
    pub lambda_blend: f64,
    pub bidirectional: bool,
    pub w_ot: f64,
    pub ca: bool,
    pub ot: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub split_ratios: [f64; 3],
    pub val_mode: ScoreMode,
    pub score_mode: ScoreMode,
    pub relevance: Relevance,
    pub ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let slic = SlicParams::default();
        let graph = GraphParams::default();
        let enc = EncoderConfig::default();
        let align = AlignConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: train.seed,
            threads: 1,
            image_size: 200,
            n_segments: slic.n_segments,
            compactness: slic.compactness,
            slic_iterations: slic.iterations,
            k: None,
            contour_blend: graph.contour_blend,
            backbone: enc.backbone,
            layers: enc.layers,
            hidden_dim: enc.hidden_dim,
            out_dim: enc.out_dim,
            heads: enc.heads,
            edge_bias: enc.edge_bias,
            query_extra_layers: 0,
            shared_encoder: false,
            epsilon: align.epsilon,
            sinkhorn_iterations: align.iterations,
            lambda_blend: align.lambda_blend,
            bidirectional: align.bidirectional,
            w_ot: align.w_ot,
            ca: true,
            ot: true,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            weight_decay: train.weight_decay,
            batch_size: train.batch_size,
            margin: train.margin,
            split_ratios: train.split_ratios,
            val_mode: train.val_mode,
            score_mode: ScoreMode::Paired,
            relevance: Relevance::Subject,
            ks: vec![1, 5, 10],
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with a JSON file's keys.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Neighbour count for a dataset, with or without sketch images.
    pub fn effective_k(&self, has_sketch: bool) -> usize {
        self.k.unwrap_or(if has_sketch { SKETCH_K } else { SKULL_K })
    }

    pub fn graph_params(&self, has_sketch: bool) -> GraphParams {
        GraphParams {
            slic: SlicParams {
                n_segments: self.n_segments,
                compactness: self.compactness,
                iterations: self.slic_iterations,
            },
            k: self.effective_k(has_sketch),
            contour_blend: self.contour_blend,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                backbone: self.backbone,
                layers: self.layers,
                hidden_dim: self.hidden_dim,
                out_dim: self.out_dim,
                heads: self.heads,
                edge_bias: self.edge_bias,
            },
            in_dim: NODE_FEATURES,
            query_extra_layers: self.query_extra_layers,
            shared_encoder: self.shared_encoder,
            align: AlignConfig {
                epsilon: self.epsilon,
                iterations: self.sinkhorn_iterations,
                lambda_blend: self.lambda_blend,
                bidirectional: self.bidirectional,
                w_ot: self.w_ot,
            },
            ablation: Ablation {
                ca: self.ca,
                ot: self.ot,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            margin: self.margin,
            seed: self.seed,
            split_ratios: self.split_ratios,
            val_mode: self.val_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("image-size must be at least 8".into()));
        }
        if self.n_segments == 0 || self.k == Some(0) {
            return Err(Error::Config("n-segments and k must be positive".into()));
        }
        if !(self.compactness > 0.0) {
            return Err(Error::Config("compactness must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.contour_blend) {
            return Err(Error::Config("contour-blend must lie in [0, 1]".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be a nonempty list of positive values".into()));
        }
        self.model_config().validate()?;
        self.train_config().validate()
    }

    /// Writes the effective configuration as `run_config.json` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run_config.json");
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }
}

/// Loads every manifest image and turns it into a graph with id
/// `subject:modality:view`. Order follows the manifest.
pub fn build_graphs(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<Vec<ModalGraph>> {
    let has_sketch = manifest.rows.iter().any(|r| r.modality == Modality::Sketch);
    let params = cfg.graph_params(has_sketch);
    let size = (cfg.image_size, cfg.image_size);
    manifest
        .rows
        .par_iter()
        .map(|row| {
            let img = load_image(&row.path, size)?.with_labels(row.modality, &row.subject_id);
            let mut g = graph_from_image(&img, &params)?;
            g.graph_id = row.graph_id();
            Ok(g)
        })
        .collect()
}

/// Declared splits when given, else a seeded split over the graphs' subjects.
pub fn resolve_split(
    graphs: &[ModalGraph],
    declared: Option<SplitAssignment>,
    cfg: &RunConfig,
) -> Result<SplitAssignment> {
    match declared {
        Some(s) => {
            if let Some(g) = graphs.iter().find(|g| !s.contains_key(&g.subject_id)) {
                return Err(Error::Argument(format!(
                    "subject `{}` has no split assignment",
                    g.subject_id
                )));
            }
            Ok(s)
        }
        None => {
            let subjects: Vec<&str> = graphs.iter().map(|g| g.subject_id.as_str()).collect();
            split_dataset(&subjects, cfg.split_ratios, cfg.seed)
        }
    }
}

pub fn train(
    graphs: &[ModalGraph],
    split: &SplitAssignment,
    cfg: &RunConfig,
    progress: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_loop(graphs, split, &cfg.model_config(), &cfg.train_config(), progress)
}

/// Evaluates one split's queries against that split's face gallery.
pub fn evaluate_split(
    graphs: &[ModalGraph],
    split: &SplitAssignment,
    which: Split,
    model: &Model,
    cfg: &RunConfig,
) -> Result<(MetricsReport, ScoreMatrix)> {
    let (queries, gallery) = split_queries_gallery(graphs, split, which);
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::Argument(format!(
            "the {which} split has {} queries and {} gallery faces",
            queries.len(),
            gallery.len()
        )));
    }
    evaluate(&queries, &gallery, model, &cfg.ks, cfg.score_mode, cfg.relevance)
}
