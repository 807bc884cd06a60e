//! Cross-attention refinement, cosine transport cost, entropic OT, barycentric
//! fusion and mean pooling into unit-norm graph embeddings.

mod sinkhorn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::ops::{
    l2_normalize, l2_normalize_backward, layer_norm_rows_backward, layer_norm_rows_fwd,
    softmax_rows, softmax_rows_backward, LayerNormCache, L2_NORM_EPS, LAYER_NORM_EPS,
};
use crate::numcore::{Matrix, Param, Rng};

pub use sinkhorn::{regularized_objective, sinkhorn, TransportPlan, TransportProblem};

/// Row norms below this are treated as zero vectors by [`cosine_cost`].
pub const COSINE_ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttentionHead {
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
}

/// Multi-head cross-attention plus the layer-norm affine shared by the
/// residual and fusion steps.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttention {
    pub heads: Vec<CrossAttentionHead>,
    pub wo: Param,
    pub gamma: Param,
    pub beta: Param,
}

pub struct CrossAttentionCache {
    hm: Matrix,
    hn: Matrix,
    q: Vec<Matrix>,
    k: Vec<Matrix>,
    v: Vec<Matrix>,
    attn: Vec<Matrix>,
    cat: Matrix,
}

impl CrossAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} attention heads do not divide width {dim}"
            )));
        }
        let dh = dim / heads;
        Ok(CrossAttention {
            heads: (0..heads)
                .map(|h| CrossAttentionHead {
                    wq: Param::glorot(format!("align.head{h}.wq"), dim, dh, rng),
                    wk: Param::glorot(format!("align.head{h}.wk"), dim, dh, rng),
                    wv: Param::glorot(format!("align.head{h}.wv"), dim, dh, rng),
                })
                .collect(),
            wo: Param::glorot("align.wo", dim, dim, rng),
            gamma: Param::ones("align.ln.gamma", dim),
            beta: Param::zeros("align.ln.beta", 1, dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.wo.value.cols()
    }

    fn head_dim(&self) -> usize {
        self.heads[0].wq.value.cols()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.heads.iter().flat_map(|h| [&h.wq, &h.wk, &h.wv]).collect();
        v.extend([&self.wo, &self.gamma, &self.beta]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self
            .heads
            .iter_mut()
            .flat_map(|h| [&mut h.wq, &mut h.wk, &mut h.wv])
            .collect();
        v.extend([&mut self.wo, &mut self.gamma, &mut self.beta]);
        v
    }

    /// Queries from `hm`, keys and values from `hn`.
    pub fn forward(&self, hm: &Matrix, hn: &Matrix) -> Result<(Matrix, CrossAttentionCache)> {
        let d = self.dim();
        if hm.cols() != d || hn.cols() != d {
            return Err(Error::Shape {
                op: "cross_attend",
                left: hm.shape(),
                right: hn.shape(),
            });
        }
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut cat = Matrix::zeros(hm.rows(), dh * self.heads.len());
        let (mut qs, mut ks, mut vs, mut attns) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (h, head) in self.heads.iter().enumerate() {
            let q = hm.mm(&head.wq.value);
            let k = hn.mm(&head.wk.value);
            let v = hn.mm(&head.wv.value);
            let attn = softmax_rows(&q.mm_t(&k).scale(scale));
            cat.set_col_block(h * dh, &attn.mm(&v));
            qs.push(q);
            ks.push(k);
            vs.push(v);
            attns.push(attn);
        }
        let out = cat.mm(&self.wo.value);
        Ok((
            out,
            CrossAttentionCache {
                hm: hm.clone(),
                hn: hn.clone(),
                q: qs,
                k: ks,
                v: vs,
                attn: attns,
                cat,
            },
        ))
    }

    /// Accumulates parameter gradients; returns `(∂L/∂H_m, ∂L/∂H_n)`.
    pub fn backward(&mut self, cache: &CrossAttentionCache, d_out: &Matrix) -> (Matrix, Matrix) {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        self.wo.accumulate(&cache.cat.t_mm(d_out));
        let d_cat = d_out.mm_t(&self.wo.value);
        let mut dhm = Matrix::zeros(cache.hm.rows(), cache.hm.cols());
        let mut dhn = Matrix::zeros(cache.hn.rows(), cache.hn.cols());
        for (h, head) in self.heads.iter_mut().enumerate() {
            let d_o = d_cat.col_block(h * dh, dh);
            let attn = &cache.attn[h];
            let d_attn = d_o.mm_t(&cache.v[h]);
            let dv = attn.t_mm(&d_o);
            let ds = softmax_rows_backward(attn, &d_attn).scale(scale);
            let dq = ds.mm(&cache.k[h]);
            let dk = ds.t_mm(&cache.q[h]);
            head.wq.accumulate(&cache.hm.t_mm(&dq));
            head.wk.accumulate(&cache.hn.t_mm(&dk));
            head.wv.accumulate(&cache.hn.t_mm(&dv));
            dhm.add_assign(&dq.mm_t(&head.wq.value));
            dhn.add_assign(&dk.mm_t(&head.wk.value));
            dhn.add_assign(&dv.mm_t(&head.wv.value));
        }
        (dhm, dhn)
    }
}

/// `H̃_m = concat_h softmax(Q_h K_hᵀ / √d_h) V_h · W_O`.
pub fn cross_attend(hm: &Matrix, hn: &Matrix, params: &CrossAttention) -> Result<Matrix> {
    params.forward(hm, hn).map(|(o, _)| o)
}

/// `LN(H + H̃)`.
pub fn residual_norm(h: &Matrix, h_tilde: &Matrix, gamma: &[f64], beta: &[f64]) -> Matrix {
    layer_norm_rows_fwd(&h.add(h_tilde), gamma, beta, LAYER_NORM_EPS).0
}

pub struct CosineCache {
    a_unit: Matrix,
    b_unit: Matrix,
    a: Matrix,
    b: Matrix,
}

fn unit_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let r = m.row(i);
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n >= COSINE_ZERO_NORM {
            for (o, x) in out.row_mut(i).iter_mut().zip(r) {
                *o = x / n;
            }
        }
    }
    out
}

/// `C_ij = 1 − cos(a_i, b_j)`, clamped to `[0, 2]`; near-zero rows cost 1.
pub fn cosine_cost(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    cosine_cost_fwd(a, b).map(|(c, _)| c)
}

pub fn cosine_cost_fwd(a: &Matrix, b: &Matrix) -> Result<(Matrix, CosineCache)> {
    if a.cols() != b.cols() {
        return Err(Error::Shape {
            op: "cosine_cost",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let a_unit = unit_rows(a);
    let b_unit = unit_rows(b);
    let cost = a_unit.mm_t(&b_unit).map(|s| (1.0 - s).clamp(0.0, 2.0));
    Ok((
        cost,
        CosineCache {
            a_unit,
            b_unit,
            a: a.clone(),
            b: b.clone(),
        },
    ))
}

fn unit_rows_backward(x: &Matrix, d_unit: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let r = x.row(i);
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n >= COSINE_ZERO_NORM {
            let g = l2_normalize_backward(r, d_unit.row(i), 0.0);
            dx.row_mut(i).copy_from_slice(&g);
        }
    }
    dx
}

/// `(∂L/∂a, ∂L/∂b)` from `∂L/∂C`.
pub fn cosine_cost_backward(cache: &CosineCache, d_cost: &Matrix) -> (Matrix, Matrix) {
    let d_au = d_cost.mm(&cache.b_unit).scale(-1.0);
    let d_bu = d_cost.t_mm(&cache.a_unit).scale(-1.0);
    (
        unit_rows_backward(&cache.a, &d_au),
        unit_rows_backward(&cache.b, &d_bu),
    )
}

pub struct FuseCache {
    ln: LayerNormCache,
    weighted_plan: Matrix,
}

/// `diag(1/μ) · T`; rows with zero mass stay zero.
fn barycentric_weights(plan: &Matrix, mu: &[f64]) -> Matrix {
    let mut w = plan.clone();
    for (i, &m) in mu.iter().enumerate() {
        let inv = if m > 0.0 { 1.0 / m } else { 0.0 };
        w.row_mut(i).iter_mut().for_each(|x| *x *= inv);
    }
    w
}

/// `LN(Ĥ_m + λ · diag(1/μ) T Ĥ_n)`.
pub fn ot_fuse(
    hm: &Matrix,
    hn: &Matrix,
    plan: &Matrix,
    mu: &[f64],
    lambda: f64,
    gamma: &[f64],
    beta: &[f64],
) -> Result<Matrix> {
    ot_fuse_fwd(hm, hn, plan, mu, lambda, gamma, beta).map(|(m, _)| m)
}

#[allow(clippy::too_many_arguments)]
pub fn ot_fuse_fwd(
    hm: &Matrix,
    hn: &Matrix,
    plan: &Matrix,
    mu: &[f64],
    lambda: f64,
    gamma: &[f64],
    beta: &[f64],
) -> Result<(Matrix, FuseCache)> {
    if plan.shape() != (hm.rows(), hn.rows()) || hm.cols() != hn.cols() || mu.len() != hm.rows() {
        return Err(Error::Shape {
            op: "ot_fuse",
            left: hm.shape(),
            right: plan.shape(),
        });
    }
    let weighted_plan = barycentric_weights(plan, mu);
    let mut x = hm.clone();
    if lambda != 0.0 {
        x.add_scaled(&weighted_plan.mm(hn), lambda);
    }
    let (y, ln) = layer_norm_rows_fwd(&x, gamma, beta, LAYER_NORM_EPS);
    Ok((y, FuseCache { ln, weighted_plan }))
}

/// Barycentric projection `diag(1/μ) T Ĥ_n` on its own.
pub fn barycentric_projection(plan: &Matrix, mu: &[f64], hn: &Matrix) -> Matrix {
    barycentric_weights(plan, mu).mm(hn)
}

/// Returns `(∂L/∂Ĥ_m, ∂L/∂Ĥ_n, ∂L/∂γ, ∂L/∂β)` with the plan held fixed.
pub fn ot_fuse_backward(
    cache: &FuseCache,
    lambda: f64,
    gamma: &[f64],
    d_out: &Matrix,
) -> (Matrix, Matrix, Vec<f64>, Vec<f64>) {
    let (dx, dg, db) = layer_norm_rows_backward(&cache.ln, gamma, d_out);
    let dhn = cache.weighted_plan.t_mm(&dx).scale(lambda);
    (dx, dhn, dg, db)
}

/// Unit-norm graph-level embedding (zero vector when the mean is zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEmbedding(pub Vec<f64>);

impl GraphEmbedding {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sq_dist(&self, other: &GraphEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn dot(&self, other: &GraphEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// `z = normalize(mean_i ĥ_i)`.
pub fn pool_embed(h: &Matrix) -> GraphEmbedding {
    GraphEmbedding(l2_normalize(&h.mean_rows(), L2_NORM_EPS))
}

/// `∂L/∂Ĥ` from `∂L/∂z`.
pub fn pool_embed_backward(h: &Matrix, dz: &[f64]) -> Matrix {
    let mean = h.mean_rows();
    let dmean = l2_normalize_backward(&mean, dz, L2_NORM_EPS);
    let inv = 1.0 / h.rows() as f64;
    let mut dh = Matrix::zeros(h.rows(), h.cols());
    for i in 0..h.rows() {
        for (d, g) in dh.row_mut(i).iter_mut().zip(&dmean) {
            *d = g * inv;
        }
    }
    dh
}

/// Transport settings for [`align_pair`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub epsilon: f64,
    pub iterations: usize,
    pub lambda_blend: f64,
    /// When false only the query side receives cross-attention.
    pub bidirectional: bool,
    /// Weight of the auxiliary `⟨T, C⟩` term (T held fixed).
    pub w_ot: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            epsilon: 0.1,
            iterations: 80,
            lambda_blend: 0.5,
            bidirectional: true,
            w_ot: 0.0,
        }
    }
}

/// Module switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub ca: bool,
    pub ot: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { ca: true, ot: true }
    }
}

/// Output of [`align_pair`].
#[derive(Clone, Debug)]
pub struct AlignOutput {
    pub z_m: GraphEmbedding,
    pub z_n: GraphEmbedding,
    pub plan: TransportPlan,
    pub transport_cost: f64,
}

struct SideCache {
    ca: Option<CrossAttentionCache>,
    norm: LayerNormCache,
    hat: Matrix,
    fuse: Option<FuseCache>,
    fused: Matrix,
}

/// Everything [`AlignPass::backward`] needs.
pub struct AlignPass {
    pub output: AlignOutput,
    m: SideCache,
    n: SideCache,
    cosine: CosineCache,
    lambda: f64,
    plans: FrozenPlans,
    /// `⟨T, C⟩` with the plan actually used.
    aux_cost: f64,
}

/// Plans fixed ahead of a forward pass: the `m → n` plan and, when fusion
/// runs, the `n → m` plan.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenPlans {
    pub forward: Matrix,
    pub backward: Option<Matrix>,
}

fn enhance(
    h: &Matrix,
    other: &Matrix,
    params: &CrossAttention,
    use_ca: bool,
) -> Result<(Option<CrossAttentionCache>, Matrix, LayerNormCache)> {
    let (ca, x) = if use_ca {
        let (t, cache) = params.forward(h, other)?;
        (Some(cache), h.add(&t))
    } else {
        (None, h.clone())
    };
    let (hat, norm) = layer_norm_rows_fwd(
        &x,
        params.gamma.value.as_slice(),
        params.beta.value.as_slice(),
        LAYER_NORM_EPS,
    );
    Ok((ca, hat, norm))
}

impl AlignPass {
    /// Forward pass over one `(m, n)` pair of node-embedding matrices.
    pub fn forward(
        hm: &Matrix,
        hn: &Matrix,
        params: &CrossAttention,
        cfg: &AlignConfig,
        ablation: Ablation,
    ) -> Result<AlignPass> {
        AlignPass::forward_frozen(hm, hn, params, cfg, ablation, None)
    }

    /// Like [`AlignPass::forward`], but with the plans supplied instead of
    /// solved (the reported plan is still the solved one). Used to check
    /// gradients with the transport held fixed.
    pub fn forward_frozen(
        hm: &Matrix,
        hn: &Matrix,
        params: &CrossAttention,
        cfg: &AlignConfig,
        ablation: Ablation,
        frozen: Option<&FrozenPlans>,
    ) -> Result<AlignPass> {
        if hm.rows() == 0 || hn.rows() == 0 {
            return Err(Error::Argument("cannot align an empty graph".into()));
        }
        let (ca_m, hat_m, norm_m) = enhance(hm, hn, params, ablation.ca)?;
        let (ca_n, hat_n, norm_n) = enhance(hn, hm, params, ablation.ca && cfg.bidirectional)?;
        let (cost, cosine) = cosine_cost_fwd(&hat_m, &hat_n)?;
        let problem = TransportProblem::uniform(cost, cfg.epsilon, cfg.iterations);
        let plan = sinkhorn(&problem)?;
        let gamma = params.gamma.value.as_slice();
        let beta = params.beta.value.as_slice();
        let lambda = if ablation.ot { cfg.lambda_blend } else { 0.0 };
        let (fuse_m, fused_m, fuse_n, fused_n, back_plan) = if ablation.ot {
            // Each side solves its own (transposed) problem so that swapping
            // the inputs swaps the outputs exactly.
            let back = match frozen.and_then(|f| f.backward.as_ref()) {
                Some(b) => b.clone(),
                None => {
                    sinkhorn(&TransportProblem::uniform(
                        problem.cost.transpose(),
                        cfg.epsilon,
                        cfg.iterations,
                    ))?
                    .plan
                }
            };
            let fwd = frozen.map_or(&plan.plan, |f| &f.forward);
            let (fm, cm) = ot_fuse_fwd(&hat_m, &hat_n, fwd, &problem.mu, lambda, gamma, beta)?;
            let (fn_, cn) = ot_fuse_fwd(&hat_n, &hat_m, &back, &problem.nu, lambda, gamma, beta)?;
            (Some(cm), fm, Some(cn), fn_, Some(back))
        } else {
            (None, hat_m.clone(), None, hat_n.clone(), None)
        };
        let z_m = pool_embed(&fused_m);
        let z_n = pool_embed(&fused_n);
        if !(z_m.0.iter().chain(&z_n.0).all(|v| v.is_finite())) {
            return Err(Error::NonFinite("pooled embedding".into()));
        }
        let transport_cost = plan.transport_cost;
        let used = frozen.map_or_else(|| plan.plan.clone(), |f| f.forward.clone());
        let aux_cost = used.dot(&problem.cost);
        Ok(AlignPass {
            output: AlignOutput {
                z_m,
                z_n,
                plan,
                transport_cost,
            },
            m: SideCache {
                ca: ca_m,
                norm: norm_m,
                hat: hat_m,
                fuse: fuse_m,
                fused: fused_m,
            },
            n: SideCache {
                ca: ca_n,
                norm: norm_n,
                hat: hat_n,
                fuse: fuse_n,
                fused: fused_n,
            },
            cosine,
            lambda,
            plans: FrozenPlans {
                forward: used,
                backward: back_plan,
            },
            aux_cost,
        })
    }

    /// The plans this pass used.
    pub fn plans(&self) -> &FrozenPlans {
        &self.plans
    }

    /// `⟨T, C⟩` for the plan this pass used; equals the reported transport
    /// cost unless the plan was frozen.
    pub fn aux_cost(&self) -> f64 {
        self.aux_cost
    }

    /// Enhanced node embeddings `(Ĥ_m, Ĥ_n)` before fusion.
    pub fn enhanced(&self) -> (&Matrix, &Matrix) {
        (&self.m.hat, &self.n.hat)
    }

    /// Backpropagates `∂L/∂z_m`, `∂L/∂z_n` and an optional weight on the
    /// transport cost, with both transport plans held fixed. Accumulates
    /// cross-attention gradients and returns `(∂L/∂H_m, ∂L/∂H_n)`.
    pub fn backward(
        &self,
        params: &mut CrossAttention,
        dz_m: &[f64],
        dz_n: &[f64],
        w_cost: f64,
    ) -> (Matrix, Matrix) {
        let gamma = params.gamma.value.as_slice().to_vec();
        let mut d_hat_m = Matrix::zeros(self.m.hat.rows(), self.m.hat.cols());
        let mut d_hat_n = Matrix::zeros(self.n.hat.rows(), self.n.hat.cols());
        let mut dgamma = vec![0.0; gamma.len()];
        let mut dbeta = vec![0.0; gamma.len()];

        let d_fused_m = pool_embed_backward(&self.m.fused, dz_m);
        let d_fused_n = pool_embed_backward(&self.n.fused, dz_n);
        match (&self.m.fuse, &self.n.fuse) {
            (Some(fm), Some(fnc)) => {
                let (a, b, g, be) = ot_fuse_backward(fm, self.lambda, &gamma, &d_fused_m);
                d_hat_m.add_assign(&a);
                d_hat_n.add_assign(&b);
                add_vec(&mut dgamma, &g);
                add_vec(&mut dbeta, &be);
                let (a, b, g, be) = ot_fuse_backward(fnc, self.lambda, &gamma, &d_fused_n);
                d_hat_n.add_assign(&a);
                d_hat_m.add_assign(&b);
                add_vec(&mut dgamma, &g);
                add_vec(&mut dbeta, &be);
            }
            _ => {
                d_hat_m.add_assign(&d_fused_m);
                d_hat_n.add_assign(&d_fused_n);
            }
        }
        if w_cost != 0.0 {
            let d_cost = self.plans.forward.scale(w_cost);
            let (a, b) = cosine_cost_backward(&self.cosine, &d_cost);
            d_hat_m.add_assign(&a);
            d_hat_n.add_assign(&b);
        }

        let (dx_m, g, be) = layer_norm_rows_backward(&self.m.norm, &gamma, &d_hat_m);
        add_vec(&mut dgamma, &g);
        add_vec(&mut dbeta, &be);
        let (dx_n, g, be) = layer_norm_rows_backward(&self.n.norm, &gamma, &d_hat_n);
        add_vec(&mut dgamma, &g);
        add_vec(&mut dbeta, &be);
        params.gamma.accumulate_slice(&dgamma);
        params.beta.accumulate_slice(&dbeta);

        let mut dhm = dx_m.clone();
        let mut dhn = dx_n.clone();
        if let Some(c) = &self.m.ca {
            let (a, b) = params.backward(c, &dx_m);
            dhm.add_assign(&a);
            dhn.add_assign(&b);
        }
        if let Some(c) = &self.n.ca {
            let (a, b) = params.backward(c, &dx_n);
            dhn.add_assign(&a);
            dhm.add_assign(&b);
        }
        (dhm, dhn)
    }
}

fn add_vec(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Full refinement of one pair: cross-attention (optional), transport plan,
/// fusion (optional) and pooling on both sides.
pub fn align_pair(
    hm: &Matrix,
    hn: &Matrix,
    params: &CrossAttention,
    cfg: &AlignConfig,
    ablation: Ablation,
) -> Result<AlignOutput> {
    AlignPass::forward(hm, hn, params, cfg, ablation).map(|p| p.output)
}
