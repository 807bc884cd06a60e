use serde::{Deserialize, Serialize};

use crate::align::{Ablation, AlignConfig, AlignPass, CrossAttention, FrozenPlans, GraphEmbedding};
use crate::encoders::{EncodeCache, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{ModalGraph, NODE_FEATURES};
use crate::imaging::Modality;
use crate::numcore::{Matrix, Param, Rng};

/// Architecture of the full matcher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub in_dim: usize,
    /// Extra hidden layers for the query-modality encoders.
    pub query_extra_layers: usize,
    /// One encoder for every modality instead of one per modality.
    pub shared_encoder: bool,
    pub align: AlignConfig,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            in_dim: NODE_FEATURES,
            query_extra_layers: 0,
            shared_encoder: false,
            align: AlignConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.in_dim == 0 {
            return Err(Error::Config("in_dim must be positive".into()));
        }
        if self.encoder.out_dim % self.encoder.heads != 0 {
            return Err(Error::Config(format!(
                "{} cross-attention heads do not divide out_dim {}",
                self.encoder.heads, self.encoder.out_dim
            )));
        }
        if !(self.align.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.shared_encoder && self.query_extra_layers > 0 {
            return Err(Error::Config(
                "query_extra_layers needs separate encoders".into(),
            ));
        }
        Ok(())
    }
}

/// Per-modality encoders plus the shared cross-attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    /// Sorted by modality; a shared encoder is stored once under `Face`.
    pub encoders: Vec<(Modality, Encoder)>,
    pub ca: CrossAttention,
}

/// Forward state for one query↔face pair.
pub struct PairPass {
    query_cache: EncodeCache,
    face_cache: EncodeCache,
    query_modality: Modality,
    pub align: AlignPass,
}

impl PairPass {
    pub fn z_query(&self) -> &GraphEmbedding {
        &self.align.output.z_m
    }

    pub fn z_face(&self) -> &GraphEmbedding {
        &self.align.output.z_n
    }
}

impl Model {
    /// Fresh parameters for the face encoder, every listed query modality and
    /// the cross-attention module, drawn in that order.
    pub fn new(cfg: ModelConfig, query_modalities: &[Modality], rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut mods: Vec<Modality> = vec![Modality::Face];
        if !cfg.shared_encoder {
            for &m in query_modalities {
                if m.is_query() && !mods.contains(&m) {
                    mods.push(m);
                }
            }
        }
        mods.sort();
        let mut encoders = Vec::new();
        for m in mods {
            let extra = if m.is_query() { cfg.query_extra_layers } else { 0 };
            let prefix = if cfg.shared_encoder { "shared" } else { m.as_str() };
            encoders.push((m, Encoder::new(cfg.encoder, cfg.in_dim, extra, prefix, rng)?));
        }
        let ca = CrossAttention::new(cfg.encoder.out_dim, cfg.encoder.heads, rng)?;
        Ok(Model { cfg, encoders, ca })
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.encoders.iter().map(|(m, _)| *m).collect()
    }

    fn slot(&self, m: Modality) -> Result<usize> {
        let key = if self.cfg.shared_encoder { Modality::Face } else { m };
        self.encoders
            .iter()
            .position(|(k, _)| *k == key)
            .ok_or_else(|| Error::Config(format!("model has no encoder for modality `{m}`")))
    }

    pub fn encoder(&self, m: Modality) -> Result<&Encoder> {
        Ok(&self.encoders[self.slot(m)?].1)
    }

    /// All parameters in checkpoint order.
    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.encoders.iter().flat_map(|(_, e)| e.params()).collect();
        v.extend(self.ca.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self
            .encoders
            .iter_mut()
            .flat_map(|(_, e)| e.params_mut())
            .collect();
        v.extend(self.ca.params_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn n_weights(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    fn check_input(&self, g: &ModalGraph) -> Result<()> {
        if g.node_features.cols() != self.cfg.in_dim {
            return Err(Error::Config(format!(
                "graph `{}` has {} node features but the model expects {}",
                g.graph_id,
                g.node_features.cols(),
                self.cfg.in_dim
            )));
        }
        Ok(())
    }

    /// Node embeddings of one graph from its modality's encoder.
    pub fn encode(&self, g: &ModalGraph) -> Result<Matrix> {
        self.check_input(g)?;
        Ok(self.encoder(g.modality)?.forward(g)?.0 .0)
    }

    /// Forward through both encoders and the alignment module.
    pub fn forward_pair(&self, query: &ModalGraph, face: &ModalGraph) -> Result<PairPass> {
        self.forward_pair_frozen(query, face, None)
    }

    pub(crate) fn forward_pair_frozen(
        &self,
        query: &ModalGraph,
        face: &ModalGraph,
        frozen: Option<&FrozenPlans>,
    ) -> Result<PairPass> {
        self.check_input(query)?;
        self.check_input(face)?;
        let (hq, query_cache) = self.encoder(query.modality)?.forward(query)?;
        let (hf, face_cache) = self.encoder(face.modality)?.forward(face)?;
        let align = AlignPass::forward_frozen(
            &hq.0,
            &hf.0,
            &self.ca,
            &self.cfg.align,
            self.cfg.ablation,
            frozen,
        )?;
        Ok(PairPass {
            query_cache,
            face_cache,
            query_modality: query.modality,
            align,
        })
    }

    /// Accumulates gradients of one pair pass.
    pub fn backward_pair(&mut self, pass: &PairPass, dz_query: &[f64], dz_face: &[f64], w_cost: f64) {
        let (dq, df) = pass.align.backward(&mut self.ca, dz_query, dz_face, w_cost);
        let qs = self.slot(pass.query_modality).expect("encoder existed in forward");
        self.encoders[qs].1.backward(&pass.query_cache, &dq);
        let fs = self.slot(Modality::Face).expect("face encoder always exists");
        self.encoders[fs].1.backward(&pass.face_cache, &df);
    }
}
