use super::{Adjacency, Backbone, EncoderConfig};
use crate::error::{Error, Result};
use crate::numcore::ops::{leaky_relu, leaky_relu_grad, softmax_in_place, softmax_slice_backward};
use crate::numcore::{dot, Matrix, Param, Rng};

/// `H' = D̂^{-1/2} (A + I) D̂^{-1/2} H W`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer {
    pub w: Param,
}

/// One GAT head: projection `w` and attention vector `attn` (row 0 scores the
/// center node, row 1 the neighbor).
#[derive(Clone, Debug, PartialEq)]
pub struct GatHead {
    pub w: Param,
    pub attn: Param,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
}

/// `H'_i = W_self x_i + W_neigh · mean_{j∈N(i)} x_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SageLayer {
    pub w_self: Param,
    pub w_neigh: Param,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerHead {
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
}

/// Neighborhood-restricted multi-head attention with an output projection
/// and a residual connection when widths match.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer {
    pub heads: Vec<TransformerHead>,
    pub wo: Param,
    pub edge_bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Gcn(GcnLayer),
    Gat(GatLayer),
    Sage(SageLayer),
    Transformer(TransformerLayer),
}

pub enum LayerCache {
    Gcn {
        agg: Matrix,
    },
    Gat {
        input: Matrix,
        z: Vec<Matrix>,
        pre: Vec<Vec<Vec<f64>>>,
        alpha: Vec<Vec<Vec<f64>>>,
    },
    Sage {
        input: Matrix,
        mean: Matrix,
    },
    Transformer {
        input: Matrix,
        q: Vec<Matrix>,
        k: Vec<Matrix>,
        v: Vec<Matrix>,
        alpha: Vec<Vec<Vec<f64>>>,
        cat: Matrix,
    },
}

fn gcn_coeffs(adj: &Adjacency) -> Vec<Vec<f64>> {
    let deg: Vec<f64> = adj.hood.iter().map(|h| h.len() as f64).collect();
    adj.hood
        .iter()
        .enumerate()
        .map(|(i, h)| h.iter().map(|&(j, _)| 1.0 / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

impl GcnLayer {
    fn forward(&self, h: &Matrix, adj: &Adjacency) -> (Matrix, LayerCache) {
        let coeffs = gcn_coeffs(adj);
        let mut agg = Matrix::zeros(h.rows(), h.cols());
        for (i, hood) in adj.hood.iter().enumerate() {
            for (&(j, _), &c) in hood.iter().zip(&coeffs[i]) {
                let src = h.row(j).to_vec();
                for (a, s) in agg.row_mut(i).iter_mut().zip(src) {
                    *a += c * s;
                }
            }
        }
        let out = agg.mm(&self.w.value);
        (out, LayerCache::Gcn { agg })
    }

    fn backward(&mut self, agg: &Matrix, adj: &Adjacency, d_out: &Matrix) -> Matrix {
        self.w.accumulate(&agg.t_mm(d_out));
        let d_agg = d_out.mm_t(&self.w.value);
        let coeffs = gcn_coeffs(adj);
        let mut dh = Matrix::zeros(d_agg.rows(), d_agg.cols());
        for (i, hood) in adj.hood.iter().enumerate() {
            let g = d_agg.row(i);
            for (&(j, _), &c) in hood.iter().zip(&coeffs[i]) {
                for (d, gv) in dh.row_mut(j).iter_mut().zip(g) {
                    *d += c * gv;
                }
            }
        }
        dh
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

impl GatLayer {
    fn head_dim(&self) -> usize {
        self.heads[0].w.value.cols()
    }

    fn forward(&self, h: &Matrix, adj: &Adjacency) -> (Matrix, LayerCache) {
        let n = h.rows();
        let dh = self.head_dim();
        let mut out = Matrix::zeros(n, dh * self.heads.len());
        let mut zs = Vec::new();
        let mut pres = Vec::new();
        let mut alphas = Vec::new();
        for (hi, head) in self.heads.iter().enumerate() {
            let z = h.mm(&head.w.value);
            let a_c = head.attn.value.row(0);
            let a_n = head.attn.value.row(1);
            let s: Vec<f64> = (0..n).map(|i| dot(z.row(i), a_c)).collect();
            let t: Vec<f64> = (0..n).map(|j| dot(z.row(j), a_n)).collect();
            let mut pre_h = Vec::with_capacity(n);
            let mut alpha_h = Vec::with_capacity(n);
            for (i, hood) in adj.hood.iter().enumerate() {
                let pre: Vec<f64> = hood.iter().map(|&(j, _)| s[i] + t[j]).collect();
                let mut alpha: Vec<f64> = pre.iter().map(|&p| leaky_relu(p)).collect();
                softmax_in_place(&mut alpha);
                let row = &mut out.row_mut(i)[hi * dh..(hi + 1) * dh];
                for (&(j, _), &a) in hood.iter().zip(&alpha) {
                    axpy(row, a, z.row(j));
                }
                pre_h.push(pre);
                alpha_h.push(alpha);
            }
            zs.push(z);
            pres.push(pre_h);
            alphas.push(alpha_h);
        }
        (
            out,
            LayerCache::Gat {
                input: h.clone(),
                z: zs,
                pre: pres,
                alpha: alphas,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &mut self,
        input: &Matrix,
        zs: &[Matrix],
        pres: &[Vec<Vec<f64>>],
        alphas: &[Vec<Vec<f64>>],
        adj: &Adjacency,
        d_out: &Matrix,
    ) -> Matrix {
        let n = input.rows();
        let dh = self.head_dim();
        let mut d_input = Matrix::zeros(n, input.cols());
        for (hi, head) in self.heads.iter_mut().enumerate() {
            let z = &zs[hi];
            let mut dz = Matrix::zeros(n, dh);
            let mut ds = vec![0.0; n];
            let mut dt = vec![0.0; n];
            for (i, hood) in adj.hood.iter().enumerate() {
                let g = &d_out.row(i)[hi * dh..(hi + 1) * dh];
                let alpha = &alphas[hi][i];
                let d_alpha: Vec<f64> = hood.iter().map(|&(j, _)| dot(g, z.row(j))).collect();
                for (&(j, _), &a) in hood.iter().zip(alpha) {
                    axpy(dz.row_mut(j), a, g);
                }
                let mut de = vec![0.0; hood.len()];
                softmax_slice_backward(alpha, &d_alpha, &mut de);
                for ((&(j, _), &p), e) in hood.iter().zip(&pres[hi][i]).zip(de) {
                    let dp = e * leaky_relu_grad(p);
                    ds[i] += dp;
                    dt[j] += dp;
                }
            }
            let a_c = head.attn.value.row(0).to_vec();
            let a_n = head.attn.value.row(1).to_vec();
            let mut d_attn = Matrix::zeros(2, dh);
            for v in 0..n {
                let zr = z.row(v).to_vec();
                axpy(d_attn.row_mut(0), ds[v], &zr);
                axpy(d_attn.row_mut(1), dt[v], &zr);
                let row = dz.row_mut(v);
                axpy(row, ds[v], &a_c);
                axpy(row, dt[v], &a_n);
            }
            head.attn.accumulate(&d_attn);
            head.w.accumulate(&input.t_mm(&dz));
            d_input.add_assign(&dz.mm_t(&head.w.value));
        }
        d_input
    }
}

fn neighbor_mean(h: &Matrix, adj: &Adjacency) -> Matrix {
    let mut mean = Matrix::zeros(h.rows(), h.cols());
    for i in 0..h.rows() {
        let nb = adj.neighbors(i);
        if nb.is_empty() {
            continue;
        }
        let inv = 1.0 / nb.len() as f64;
        let row = mean.row_mut(i);
        for &(j, _) in nb {
            axpy(row, inv, h.row(j));
        }
    }
    mean
}

impl SageLayer {
    fn forward(&self, h: &Matrix, adj: &Adjacency) -> (Matrix, LayerCache) {
        let mean = neighbor_mean(h, adj);
        let out = h.mm(&self.w_self.value).add(&mean.mm(&self.w_neigh.value));
        (
            out,
            LayerCache::Sage {
                input: h.clone(),
                mean,
            },
        )
    }

    fn backward(&mut self, input: &Matrix, mean: &Matrix, adj: &Adjacency, d_out: &Matrix) -> Matrix {
        self.w_self.accumulate(&input.t_mm(d_out));
        self.w_neigh.accumulate(&mean.t_mm(d_out));
        let mut dh = d_out.mm_t(&self.w_self.value);
        let d_mean = d_out.mm_t(&self.w_neigh.value);
        for i in 0..input.rows() {
            let nb = adj.neighbors(i);
            if nb.is_empty() {
                continue;
            }
            let inv = 1.0 / nb.len() as f64;
            let g = d_mean.row(i).to_vec();
            for &(j, _) in nb {
                axpy(dh.row_mut(j), inv, &g);
            }
        }
        dh
    }
}

impl TransformerLayer {
    fn head_dim(&self) -> usize {
        self.heads[0].wq.value.cols()
    }

    fn residual(&self, d_in: usize) -> bool {
        d_in == self.wo.value.cols()
    }

    fn forward(&self, h: &Matrix, adj: &Adjacency) -> (Matrix, LayerCache) {
        let n = h.rows();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut cat = Matrix::zeros(n, dh * self.heads.len());
        let (mut qs, mut ks, mut vs, mut alphas) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (hi, head) in self.heads.iter().enumerate() {
            let q = h.mm(&head.wq.value);
            let k = h.mm(&head.wk.value);
            let v = h.mm(&head.wv.value);
            let mut alpha_h = Vec::with_capacity(n);
            for (i, hood) in adj.hood.iter().enumerate() {
                let mut a: Vec<f64> = hood
                    .iter()
                    .map(|&(j, d)| dot(q.row(i), k.row(j)) * scale - self.edge_bias * d)
                    .collect();
                softmax_in_place(&mut a);
                let row = &mut cat.row_mut(i)[hi * dh..(hi + 1) * dh];
                for (&(j, _), &w) in hood.iter().zip(&a) {
                    axpy(row, w, v.row(j));
                }
                alpha_h.push(a);
            }
            qs.push(q);
            ks.push(k);
            vs.push(v);
            alphas.push(alpha_h);
        }
        let mut out = cat.mm(&self.wo.value);
        if self.residual(h.cols()) {
            out.add_assign(h);
        }
        (
            out,
            LayerCache::Transformer {
                input: h.clone(),
                q: qs,
                k: ks,
                v: vs,
                alpha: alphas,
                cat,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &mut self,
        input: &Matrix,
        qs: &[Matrix],
        ks: &[Matrix],
        vs: &[Matrix],
        alphas: &[Vec<Vec<f64>>],
        cat: &Matrix,
        adj: &Adjacency,
        d_out: &Matrix,
    ) -> Matrix {
        let n = input.rows();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        self.wo.accumulate(&cat.t_mm(d_out));
        let d_cat = d_out.mm_t(&self.wo.value);
        let mut d_input = if self.residual(input.cols()) {
            d_out.clone()
        } else {
            Matrix::zeros(n, input.cols())
        };
        for (hi, head) in self.heads.iter_mut().enumerate() {
            let (q, k, v) = (&qs[hi], &ks[hi], &vs[hi]);
            let mut dq = Matrix::zeros(n, dh);
            let mut dk = Matrix::zeros(n, dh);
            let mut dv = Matrix::zeros(n, dh);
            for (i, hood) in adj.hood.iter().enumerate() {
                let g = &d_cat.row(i)[hi * dh..(hi + 1) * dh];
                let alpha = &alphas[hi][i];
                let d_alpha: Vec<f64> = hood.iter().map(|&(j, _)| dot(g, v.row(j))).collect();
                for (&(j, _), &a) in hood.iter().zip(alpha) {
                    axpy(dv.row_mut(j), a, g);
                }
                let mut dscore = vec![0.0; hood.len()];
                softmax_slice_backward(alpha, &d_alpha, &mut dscore);
                for (&(j, _), &s) in hood.iter().zip(&dscore) {
                    let s = s * scale;
                    axpy(dq.row_mut(i), s, k.row(j));
                    axpy(dk.row_mut(j), s, q.row(i));
                }
            }
            head.wq.accumulate(&input.t_mm(&dq));
            head.wk.accumulate(&input.t_mm(&dk));
            head.wv.accumulate(&input.t_mm(&dv));
            d_input.add_assign(&dq.mm_t(&head.wq.value));
            d_input.add_assign(&dk.mm_t(&head.wk.value));
            d_input.add_assign(&dv.mm_t(&head.wv.value));
        }
        d_input
    }
}

impl Layer {
    pub fn init(cfg: &EncoderConfig, d_in: usize, d_out: usize, name: &str, rng: &mut Rng) -> Layer {
        match cfg.backbone {
            Backbone::Gcn => Layer::Gcn(GcnLayer {
                w: Param::glorot(format!("{name}.w"), d_in, d_out, rng),
            }),
            Backbone::Sage => Layer::Sage(SageLayer {
                w_self: Param::glorot(format!("{name}.w_self"), d_in, d_out, rng),
                w_neigh: Param::glorot(format!("{name}.w_neigh"), d_in, d_out, rng),
            }),
            Backbone::Gat => {
                let dh = d_out / cfg.heads;
                Layer::Gat(GatLayer {
                    heads: (0..cfg.heads)
                        .map(|h| GatHead {
                            w: Param::glorot(format!("{name}.head{h}.w"), d_in, dh, rng),
                            attn: Param::glorot(format!("{name}.head{h}.attn"), 2, dh, rng),
                        })
                        .collect(),
                })
            }
            Backbone::GraphTransformer => {
                let dh = d_out / cfg.heads;
                Layer::Transformer(TransformerLayer {
                    heads: (0..cfg.heads)
                        .map(|h| TransformerHead {
                            wq: Param::glorot(format!("{name}.head{h}.wq"), d_in, dh, rng),
                            wk: Param::glorot(format!("{name}.head{h}.wk"), d_in, dh, rng),
                            wv: Param::glorot(format!("{name}.head{h}.wv"), d_in, dh, rng),
                        })
                        .collect(),
                    wo: Param::glorot(format!("{name}.wo"), dh * cfg.heads, d_out, rng),
                    edge_bias: cfg.edge_bias,
                })
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Gcn(l) => vec![&l.w],
            Layer::Sage(l) => vec![&l.w_self, &l.w_neigh],
            Layer::Gat(l) => l.heads.iter().flat_map(|h| [&h.w, &h.attn]).collect(),
            Layer::Transformer(l) => {
                let mut v: Vec<&Param> = l.heads.iter().flat_map(|h| [&h.wq, &h.wk, &h.wv]).collect();
                v.push(&l.wo);
                v
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Gcn(l) => vec![&mut l.w],
            Layer::Sage(l) => vec![&mut l.w_self, &mut l.w_neigh],
            Layer::Gat(l) => l
                .heads
                .iter_mut()
                .flat_map(|h| [&mut h.w, &mut h.attn])
                .collect(),
            Layer::Transformer(l) => {
                let mut v: Vec<&mut Param> = l
                    .heads
                    .iter_mut()
                    .flat_map(|h| [&mut h.wq, &mut h.wk, &mut h.wv])
                    .collect();
                v.push(&mut l.wo);
                v
            }
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Gcn(l) => l.w.value.rows(),
            Layer::Sage(l) => l.w_self.value.rows(),
            Layer::Gat(l) => l.heads[0].w.value.rows(),
            Layer::Transformer(l) => l.heads[0].wq.value.rows(),
        }
    }

    pub fn forward(&self, h: &Matrix, adj: &Adjacency) -> (Matrix, LayerCache) {
        assert_eq!(h.cols(), self.in_dim(), "layer input width");
        assert_eq!(h.rows(), adj.n_nodes(), "layer node count");
        match self {
            Layer::Gcn(l) => l.forward(h, adj),
            Layer::Gat(l) => l.forward(h, adj),
            Layer::Sage(l) => l.forward(h, adj),
            Layer::Transformer(l) => l.forward(h, adj),
        }
    }

    /// Accumulates parameter gradients and returns `∂L/∂H`.
    pub fn backward(&mut self, cache: &LayerCache, adj: &Adjacency, d_out: &Matrix) -> Matrix {
        match (self, cache) {
            (Layer::Gcn(l), LayerCache::Gcn { agg }) => l.backward(agg, adj, d_out),
            (Layer::Gat(l), LayerCache::Gat { input, z, pre, alpha }) => {
                l.backward(input, z, pre, alpha, adj, d_out)
            }
            (Layer::Sage(l), LayerCache::Sage { input, mean }) => l.backward(input, mean, adj, d_out),
            (
                Layer::Transformer(l),
                LayerCache::Transformer {
                    input,
                    q,
                    k,
                    v,
                    alpha,
                    cat,
                },
            ) => l.backward(input, q, k, v, alpha, cat, adj, d_out),
            _ => panic!("layer cache does not match layer kind"),
        }
    }

    /// Attention rows `α_i·` per head, for the attention backbones.
    pub fn attention(&self, h: &Matrix, adj: &Adjacency) -> Option<Vec<Vec<Vec<f64>>>> {
        match self.forward(h, adj).1 {
            LayerCache::Gat { alpha, .. } | LayerCache::Transformer { alpha, .. } => Some(alpha),
            _ => None,
        }
    }
}

fn check_width(op: &'static str, h: &Matrix, w: &Matrix) -> Result<()> {
    if h.cols() != w.rows() {
        return Err(Error::Shape {
            op,
            left: h.shape(),
            right: w.shape(),
        });
    }
    Ok(())
}

fn check_nodes(op: &'static str, h: &Matrix, adj: &Adjacency) -> Result<()> {
    if h.rows() != adj.n_nodes() {
        return Err(Error::Shape {
            op,
            left: h.shape(),
            right: (adj.n_nodes(), 0),
        });
    }
    Ok(())
}

pub fn gcn_layer(h: &Matrix, adj: &Adjacency, w: &Matrix) -> Result<Matrix> {
    check_width("gcn_layer", h, w)?;
    check_nodes("gcn_layer", h, adj)?;
    let layer = GcnLayer {
        w: Param::new("w", w.clone()),
    };
    Ok(layer.forward(h, adj).0)
}

pub fn gat_layer(h: &Matrix, adj: &Adjacency, layer: &GatLayer) -> Result<Matrix> {
    check_width("gat_layer", h, &layer.heads[0].w.value)?;
    check_nodes("gat_layer", h, adj)?;
    Ok(layer.forward(h, adj).0)
}

pub fn sage_layer(h: &Matrix, adj: &Adjacency, w_self: &Matrix, w_neigh: &Matrix) -> Result<Matrix> {
    check_width("sage_layer", h, w_self)?;
    check_width("sage_layer", h, w_neigh)?;
    check_nodes("sage_layer", h, adj)?;
    let layer = SageLayer {
        w_self: Param::new("w_self", w_self.clone()),
        w_neigh: Param::new("w_neigh", w_neigh.clone()),
    };
    Ok(layer.forward(h, adj).0)
}

pub fn graph_transformer_layer(h: &Matrix, adj: &Adjacency, layer: &TransformerLayer) -> Result<Matrix> {
    check_width("graph_transformer_layer", h, &layer.heads[0].wq.value)?;
    check_nodes("graph_transformer_layer", h, adj)?;
    Ok(layer.forward(h, adj).0)
}
