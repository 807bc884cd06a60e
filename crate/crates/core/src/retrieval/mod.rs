//! Query-vs-gallery scoring and ranking metrics.

mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_pair, pool_embed, GraphEmbedding};
use crate::error::{Error, Result};
use crate::graph::ModalGraph;
use crate::numcore::ops::{layer_norm_rows, LAYER_NORM_EPS};
use crate::numcore::Matrix;
use crate::training::Model;

pub use metrics::{
    average_precision_at_k, map_at_k, rank_relevants, ranking, recall_at_k, roc_auc, roc_points,
    RocPoint,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// `−‖z_q − z_g‖²` with both embeddings from the pair's own alignment.
    Paired,
    /// Cosine similarity of encoder-only embeddings.
    Independent,
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(ScoreMode::Paired),
            "independent" => Ok(ScoreMode::Independent),
            other => Err(Error::Argument(format!("unknown score mode `{other}`"))),
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Paired => "paired",
            ScoreMode::Independent => "independent",
        })
    }
}

/// Which gallery items count as matches for a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    /// Any gallery image of the query's subject.
    Subject,
    /// Only the gallery image of the same subject and view.
    Image,
}

impl FromStr for Relevance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subject" => Ok(Relevance::Subject),
            "image" => Ok(Relevance::Image),
            other => Err(Error::Argument(format!("unknown relevance `{other}`"))),
        }
    }
}

impl fmt::Display for Relevance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relevance::Subject => "subject",
            Relevance::Image => "image",
        })
    }
}

/// View tag of a graph: the last `:`-separated field of ids shaped
/// `subject:modality:view`, else empty.
pub fn graph_view(g: &ModalGraph) -> &str {
    let parts: Vec<&str> = g.graph_id.rsplitn(3, ':').collect();
    if parts.len() == 3 {
        parts[0]
    } else {
        ""
    }
}

/// `Q × G` similarity scores with row and column labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Matrix,
    pub query_ids: Vec<String>,
    pub query_subjects: Vec<String>,
    pub gallery_ids: Vec<String>,
    pub gallery_subjects: Vec<String>,
}

impl ScoreMatrix {
    fn labelled(scores: Matrix, queries: &[&ModalGraph], gallery: &[&ModalGraph]) -> Self {
        ScoreMatrix {
            scores,
            query_ids: queries.iter().map(|g| g.graph_id.clone()).collect(),
            query_subjects: queries.iter().map(|g| g.subject_id.clone()).collect(),
            gallery_ids: gallery.iter().map(|g| g.graph_id.clone()).collect(),
            gallery_subjects: gallery.iter().map(|g| g.subject_id.clone()).collect(),
        }
    }

    pub fn row(&self, q: usize) -> &[f64] {
        self.scores.row(q)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.scores.to_rows()
    }
}

/// Aggregate transport diagnostics over all scored pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornSummary {
    pub pairs: usize,
    pub iterations: usize,
    pub epsilon: f64,
    pub max_marginal_err: f64,
    pub mean_transport_cost: f64,
}

/// Paired scoring: every `(q, g)` runs the alignment module on that pair.
/// Node embeddings are computed once per graph.
pub fn score_paired(
    queries: &[&ModalGraph],
    gallery: &[&ModalGraph],
    model: &Model,
) -> Result<(ScoreMatrix, SinkhornSummary)> {
    let hq = encode_all(queries, model)?;
    let hg = encode_all(gallery, model)?;
    let ng = gallery.len();
    let cells: Vec<(f64, f64, f64)> = (0..queries.len() * ng)
        .into_par_iter()
        .map(|idx| {
            let (q, g) = (idx / ng, idx % ng);
            let out = align_pair(&hq[q], &hg[g], &model.ca, &model.cfg.align, model.cfg.ablation)?;
            Ok((
                -out.z_m.sq_dist(&out.z_n),
                out.plan.marginal_err,
                out.transport_cost,
            ))
        })
        .collect::<Result<_>>()?;
    let scores = Matrix::from_fn(queries.len(), ng, |q, g| cells[q * ng + g].0);
    let summary = SinkhornSummary {
        pairs: cells.len(),
        iterations: model.cfg.align.iterations,
        epsilon: model.cfg.align.epsilon,
        max_marginal_err: cells.iter().map(|c| c.1).fold(0.0, f64::max),
        mean_transport_cost: if cells.is_empty() {
            0.0
        } else {
            cells.iter().map(|c| c.2).sum::<f64>() / cells.len() as f64
        },
    };
    Ok((ScoreMatrix::labelled(scores, queries, gallery), summary))
}

fn encode_all(graphs: &[&ModalGraph], model: &Model) -> Result<Vec<Matrix>> {
    graphs.par_iter().map(|g| model.encode(g)).collect()
}

/// `pool(LN(encode(g)))` with the alignment module's affine, bypassing
/// cross-attention and transport.
pub fn independent_embedding(g: &ModalGraph, model: &Model) -> Result<GraphEmbedding> {
    let h = model.encode(g)?;
    Ok(pool_embed(&layer_norm_rows(
        &h,
        model.ca.gamma.value.as_slice(),
        model.ca.beta.value.as_slice(),
        LAYER_NORM_EPS,
    )))
}

/// Cosine similarity of independently computed embeddings.
pub fn score_independent(
    queries: &[&ModalGraph],
    gallery: &[&ModalGraph],
    model: &Model,
) -> Result<ScoreMatrix> {
    let zq: Vec<GraphEmbedding> = queries
        .par_iter()
        .map(|g| independent_embedding(g, model))
        .collect::<Result<_>>()?;
    let zg: Vec<GraphEmbedding> = gallery
        .par_iter()
        .map(|g| independent_embedding(g, model))
        .collect::<Result<_>>()?;
    let scores = Matrix::from_fn(zq.len(), zg.len(), |q, g| cosine(&zq[q], &zg[g]));
    Ok(ScoreMatrix::labelled(scores, queries, gallery))
}

fn cosine(a: &GraphEmbedding, b: &GraphEmbedding) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

/// Relevant gallery indices per query.
pub fn relevance_sets(
    queries: &[&ModalGraph],
    gallery: &[&ModalGraph],
    relevance: Relevance,
) -> Vec<Vec<usize>> {
    queries
        .iter()
        .map(|q| {
            gallery
                .iter()
                .enumerate()
                .filter(|(_, g)| {
                    g.subject_id == q.subject_id
                        && (relevance == Relevance::Subject || graph_view(g) == graph_view(q))
                })
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub query_id: String,
    pub subject_id: String,
    /// Best rank of a relevant gallery item; absent when none exists.
    pub rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: ScoreMode,
    pub relevance: Relevance,
    pub n_queries: usize,
    pub n_gallery: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub map_at: BTreeMap<usize, f64>,
    /// Absent when there are no genuine or no impostor pairs.
    pub roc_auc: Option<f64>,
    pub per_query: Vec<QueryRank>,
    pub sinkhorn: Option<SinkhornSummary>,
}

/// Genuine (relevant) and impostor scores over the whole matrix.
pub fn split_scores(scores: &ScoreMatrix, relevant: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (q, rel) in relevant.iter().enumerate() {
        for (g, &s) in scores.row(q).iter().enumerate() {
            if rel.contains(&g) {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
    }
    (genuine, impostor)
}

/// Metrics from a finished score matrix.
pub fn report_from_scores(
    scores: &ScoreMatrix,
    relevant: &[Vec<usize>],
    ks: &[usize],
    mode: ScoreMode,
    relevance: Relevance,
    sinkhorn: Option<SinkhornSummary>,
) -> MetricsReport {
    let ranks: Vec<Option<usize>> = relevant
        .iter()
        .enumerate()
        .map(|(q, rel)| rank_relevants(scores.row(q), rel))
        .collect();
    let rows = scores.rows();
    let (genuine, impostor) = split_scores(scores, relevant);
    MetricsReport {
        mode,
        relevance,
        n_queries: scores.query_ids.len(),
        n_gallery: scores.gallery_ids.len(),
        recall_at: ks.iter().map(|&k| (k, recall_at_k(&ranks, k))).collect(),
        map_at: ks.iter().map(|&k| (k, map_at_k(&rows, relevant, k))).collect(),
        roc_auc: roc_auc(&genuine, &impostor).ok(),
        per_query: ranks
            .iter()
            .enumerate()
            .map(|(q, &rank)| QueryRank {
                query_id: scores.query_ids[q].clone(),
                subject_id: scores.query_subjects[q].clone(),
                rank,
            })
            .collect(),
        sinkhorn,
    }
}

/// Scores queries against the gallery and computes every metric.
pub fn evaluate(
    queries: &[&ModalGraph],
    gallery: &[&ModalGraph],
    model: &Model,
    ks: &[usize],
    mode: ScoreMode,
    relevance: Relevance,
) -> Result<(MetricsReport, ScoreMatrix)> {
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    let (scores, summary) = match mode {
        ScoreMode::Paired => {
            let (s, summary) = score_paired(queries, gallery, model)?;
            (s, Some(summary))
        }
        ScoreMode::Independent => (score_independent(queries, gallery, model)?, None),
    };
    let relevant = relevance_sets(queries, gallery, relevance);
    let report = report_from_scores(&scores, &relevant, ks, mode, relevance, summary);
    Ok((report, scores))
}

/// Top-`k` gallery entries for one query: `(rank, gallery index, score)`.
pub fn ranked_list(scores: &[f64], k: usize) -> Vec<(usize, usize, f64)> {
    ranking(scores)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| (i + 1, g, scores[g]))
        .collect()
}
