//! Message-passing graph encoders: GCN, GAT, GraphSAGE and a graph
//! transformer, each with an analytic backward pass.

mod layers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ModalGraph;
use crate::numcore::{ops, Matrix, Param, Rng};

pub use layers::{
    gat_layer, gcn_layer, graph_transformer_layer, sage_layer, GatHead, GatLayer, GcnLayer, Layer,
    LayerCache, SageLayer, TransformerHead, TransformerLayer,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Gcn,
    Gat,
    Sage,
    GraphTransformer,
}

impl Backbone {
    pub const ALL: [Backbone; 4] = [
        Backbone::Gcn,
        Backbone::Gat,
        Backbone::Sage,
        Backbone::GraphTransformer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::Gcn => "gcn",
            Backbone::Gat => "gat",
            Backbone::Sage => "sage",
            Backbone::GraphTransformer => "graph_transformer",
        }
    }

    pub fn uses_heads(self) -> bool {
        matches!(self, Backbone::Gat | Backbone::GraphTransformer)
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Backbone::Gcn),
            "gat" => Ok(Backbone::Gat),
            "sage" | "graphsage" => Ok(Backbone::Sage),
            "graph_transformer" | "graph-transformer" | "transformer" => {
                Ok(Backbone::GraphTransformer)
            }
            other => Err(Error::Argument(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    /// Scale of the `−λ·edge_dist` attention bias in the graph transformer;
    /// `0` disables it.
    pub edge_bias: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backbone: Backbone::GraphTransformer,
            layers: 2,
            hidden_dim: 64,
            out_dim: 64,
            heads: 4,
            edge_bias: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.hidden_dim == 0 || self.out_dim == 0 || self.heads == 0 {
            return Err(Error::Config("encoder widths and heads must be positive".into()));
        }
        if self.backbone.uses_heads()
            && (self.hidden_dim % self.heads != 0 || self.out_dim % self.heads != 0)
        {
            return Err(Error::Config(format!(
                "hidden_dim {} and out_dim {} must be divisible by {} heads",
                self.hidden_dim, self.out_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Neighbor lists of a graph; `hood[i]` is `i` itself followed by its
/// neighbors in ascending order, with the normalized edge length of each.
#[derive(Clone, Debug)]
pub struct Adjacency {
    pub hood: Vec<Vec<(usize, f64)>>,
}

impl Adjacency {
    pub fn from_edges(n: usize, edges: &[(usize, usize)], dist: &[f64]) -> Self {
        let mut nb: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (e, &(a, b)) in edges.iter().enumerate() {
            let d = dist.get(e).copied().unwrap_or(0.0);
            nb[a].push((b, d));
            nb[b].push((a, d));
        }
        let hood = nb
            .into_iter()
            .enumerate()
            .map(|(i, mut v)| {
                v.sort_by(|x, y| x.0.cmp(&y.0));
                v.dedup_by(|x, y| x.0 == y.0);
                let mut h = Vec::with_capacity(v.len() + 1);
                h.push((i, 0.0));
                h.extend(v);
                h
            })
            .collect();
        Adjacency { hood }
    }

    pub fn from_graph(g: &ModalGraph) -> Self {
        Adjacency::from_edges(g.n_nodes(), &g.edges, &g.edge_dist)
    }

    pub fn n_nodes(&self) -> usize {
        self.hood.len()
    }

    /// Neighbors of `i`, excluding `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.hood[i][1..]
    }
}

/// Node-level embeddings `H` (`n × out_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings(pub Matrix);

/// Stacked layers for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub in_dim: usize,
    pub layers: Vec<Layer>,
}

/// Per-layer values retained by [`Encoder::forward`].
pub struct EncodeCache {
    adj: Adjacency,
    pre_activations: Vec<Matrix>,
    layer_caches: Vec<LayerCache>,
}

impl Encoder {
    /// `extra_layers` hidden layers are appended before the output layer.
    pub fn new(
        cfg: EncoderConfig,
        in_dim: usize,
        extra_layers: usize,
        prefix: &str,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.layers + extra_layers;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let d_in = if l == 0 { in_dim } else { cfg.hidden_dim };
            let d_out = if l + 1 == depth { cfg.out_dim } else { cfg.hidden_dim };
            let name = format!("{prefix}.layer{l}");
            layers.push(Layer::init(&cfg, d_in, d_out, &name, rng));
        }
        Ok(Encoder {
            cfg,
            in_dim,
            layers,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn forward(&self, graph: &ModalGraph) -> Result<(NodeEmbeddings, EncodeCache)> {
        if graph.node_features.cols() != self.in_dim {
            return Err(Error::Shape {
                op: "encode",
                left: graph.node_features.shape(),
                right: (self.in_dim, self.cfg.hidden_dim),
            });
        }
        let adj = Adjacency::from_graph(graph);
        let mut x = graph.node_features.clone();
        let mut pre_activations = Vec::new();
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&x, &adj);
            layer_caches.push(cache);
            if l + 1 < self.layers.len() {
                x = ops::relu(&y);
                pre_activations.push(y);
            } else {
                x = y;
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFinite(format!(
                "encoder output for graph `{}`",
                graph.graph_id
            )));
        }
        Ok((
            NodeEmbeddings(x),
            EncodeCache {
                adj,
                pre_activations,
                layer_caches,
            },
        ))
    }

    /// Accumulates parameter gradients from `d_out = ∂L/∂H`; returns
    /// `∂L/∂X` for the input node features.
    pub fn backward(&mut self, cache: &EncodeCache, d_out: &Matrix) -> Matrix {
        let mut d = d_out.clone();
        let n_layers = self.layers.len();
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                d = ops::relu_backward(&cache.pre_activations[l], &d);
            }
            d = self.layers[l].backward(&cache.layer_caches[l], &cache.adj, &d);
        }
        d
    }
}

/// Runs the encoder forward only.
pub fn encode(graph: &ModalGraph, encoder: &Encoder) -> Result<NodeEmbeddings> {
    encoder.forward(graph).map(|(h, _)| h)
}
