//! Shared fixtures and oracles for the integration tests.
#![allow(dead_code)]

use xmatch::align::{
    cosine_cost_backward, cosine_cost_fwd, ot_fuse_backward, ot_fuse_fwd, pool_embed,
    pool_embed_backward, sinkhorn, Ablation, AlignConfig, AlignPass, CrossAttention, FrozenPlans,
    GraphEmbedding, TransportProblem,
};
use xmatch::encoders::{Adjacency, Backbone, Encoder, EncoderConfig, Layer, LayerCache};
use xmatch::graph::{knn_graph, ModalGraph};
use xmatch::imaging::Modality;
use xmatch::numcore::ops::{layer_norm_rows_backward, layer_norm_rows_fwd, LAYER_NORM_EPS};
use xmatch::numcore::{finite_diff_check, GradCheckReport, Matrix, Param, Rng};
use xmatch::training::{batch_objective, make_pairs, triplet_loss_grad, Model, ModelConfig};

pub const FD_STEP: f64 = 1e-4;

pub fn rand_matrix(r: usize, c: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0))
}

/// Random points in a unit square joined by their `k` nearest neighbours,
/// with node features in `[0, 1]`.
pub fn random_graph(n: usize, d0: usize, k: usize, m: Modality, rng: &mut Rng) -> ModalGraph {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0))).collect();
    let knn = knn_graph(&pts, k, 2f64.sqrt());
    ModalGraph {
        graph_id: String::new(),
        subject_id: String::new(),
        modality: m,
        node_features: Matrix::from_fn(n, d0, |_, _| rng.uniform(0.0, 1.0)),
        edges: knn.edges,
        edge_dist: knn.edge_dist,
    }
}

pub fn encoder_cfg(backbone: Backbone, width: usize, heads: usize) -> EncoderConfig {
    EncoderConfig {
        backbone,
        layers: 2,
        hidden_dim: width,
        out_dim: width,
        heads,
        edge_bias: if backbone == Backbone::GraphTransformer { 0.7 } else { 0.0 },
    }
}

/// Instances whose relu inputs or GAT scores lie this close to a kink are
/// redrawn: a central difference straddling a kink measures neither side's
/// derivative. Parameter steps of `FD_STEP` move these values by far less.
pub const KINK_MARGIN: f64 = 5e-3;

/// Smallest distance of any GAT LeakyReLU input in a layer cache to zero.
fn score_margin(cache: &LayerCache) -> f64 {
    match cache {
        LayerCache::Gat { pre, .. } => pre
            .iter()
            .flatten()
            .flatten()
            .fold(f64::INFINITY, |m, x| m.min(x.abs())),
        _ => f64::INFINITY,
    }
}

/// Smallest distance to a kink over every layer of an encoder forward pass.
fn encoder_margin(enc: &Encoder, g: &ModalGraph) -> f64 {
    let adj = Adjacency::from_graph(g);
    let mut x = g.node_features.clone();
    let mut margin = f64::INFINITY;
    for (l, layer) in enc.layers.iter().enumerate() {
        let (y, cache) = layer.forward(&x, &adj);
        margin = margin.min(score_margin(&cache));
        if l + 1 < enc.layers.len() {
            margin = y.as_slice().iter().fold(margin, |m, v| m.min(v.abs()));
            x = y.map(|v| v.max(0.0));
        }
    }
    margin
}

/// Rows with norm at least 0.5, away from cosine's zero-norm singularity.
fn rand_rows_away_from_zero(r: usize, c: usize, rng: &mut Rng) -> Matrix {
    let mut m = rand_matrix(r, c, rng);
    for i in 0..r {
        while m.row(i).iter().map(|x| x * x).sum::<f64>() < 0.25 {
            for v in m.row_mut(i) {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
    }
    m
}

fn values_of(params: &[&Param]) -> Vec<Matrix> {
    params.iter().map(|p| p.value.clone()).collect()
}

fn grads_of(params: &[&Param]) -> Vec<Matrix> {
    params.iter().map(|p| p.grad.clone()).collect()
}

fn load_values(params: Vec<&mut Param>, values: &[Matrix]) {
    for (p, v) in params.into_iter().zip(values) {
        p.value = v.clone();
    }
}

/// Worst relative error over one random instance of a single encoder layer
/// under the loss `⟨R, layer(H)⟩`, covering the input and every parameter.
pub fn layer_grad_error(backbone: Backbone, rng: &mut Rng) -> GradCheckReport {
    let n = rng.int_inclusive(5, 10);
    let cfg = encoder_cfg(backbone, 4, 2);
    let g = random_graph(n, 4, 3, Modality::Face, rng);
    let adj = Adjacency::from_graph(&g);
    let (mut layer, h, cache) = loop {
        let layer = Layer::init(&cfg, 4, 4, "l", rng);
        let h = rand_matrix(n, 4, rng);
        let (_, cache) = layer.forward(&h, &adj);
        if score_margin(&cache) >= KINK_MARGIN {
            break (layer, h, cache);
        }
    };
    // See encoder_grad_error on the loss scale.
    let r = rand_matrix(n, 4, rng).scale(0.01);
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dh = layer.backward(&cache, &adj, &r);
    let mut values = vec![h];
    values.extend(values_of(&layer.params()));
    let mut analytic = vec![dh];
    analytic.extend(grads_of(&layer.params()));
    let probe = layer.clone();
    finite_diff_check(&mut values, &analytic, FD_STEP, |v| {
        let mut l = probe.clone();
        load_values(l.params_mut(), &v[1..]);
        l.forward(&v[0], &adj).0.dot(&r)
    })
}

/// Full two-layer encoder (relu between layers) under `⟨R, encode(G)⟩`.
pub fn encoder_grad_error(backbone: Backbone, rng: &mut Rng) -> GradCheckReport {
    let n = rng.int_inclusive(5, 10);
    let cfg = encoder_cfg(backbone, 4, 2);
    let (g, mut enc) = loop {
        let g = random_graph(n, 5, 3, Modality::Face, rng);
        let enc = Encoder::new(cfg, 5, 0, "e", rng).unwrap();
        if encoder_margin(&enc, &g) >= KINK_MARGIN {
            break (g, enc);
        }
    };
    let (h, cache) = enc.forward(&g).unwrap();
    // Small loss weights keep central-difference round-off (∝ |f|/h) under
    // the checker's 1e-8 floor on structurally zero entries, e.g. GAT
    // centre-node attention weights when a neighbourhood's scores share a
    // sign.
    let r = rand_matrix(h.0.rows(), h.0.cols(), rng).scale(0.01);
    for p in enc.params_mut() {
        p.zero_grad();
    }
    enc.backward(&cache, &r);
    let mut values = values_of(&enc.params());
    let analytic = grads_of(&enc.params());
    let probe = enc.clone();
    finite_diff_check(&mut values, &analytic, FD_STEP, |v| {
        let mut e = probe.clone();
        load_values(e.params_mut(), v);
        e.forward(&g).unwrap().0 .0.dot(&r)
    })
}

fn random_ca(d: usize, heads: usize, rng: &mut Rng) -> CrossAttention {
    let mut ca = CrossAttention::new(d, heads, rng).unwrap();
    // Off-default affine parameters so their gradients are exercised.
    ca.gamma.value = Matrix::from_fn(1, d, |_, _| rng.uniform(0.5, 1.5));
    ca.beta.value = Matrix::from_fn(1, d, |_, _| rng.uniform(-0.5, 0.5));
    ca
}

/// `⟨R, cross_attend(H_m, H_n)⟩` over both inputs and all attention weights.
pub fn cross_attend_grad_error(rng: &mut Rng) -> GradCheckReport {
    let (nm, nn) = (rng.int_inclusive(5, 10), rng.int_inclusive(5, 10));
    let mut ca = random_ca(4, 2, rng);
    let hm = rand_matrix(nm, 4, rng);
    let hn = rand_matrix(nn, 4, rng);
    let r = rand_matrix(nm, 4, rng);
    let (_, cache) = ca.forward(&hm, &hn).unwrap();
    for p in ca.params_mut() {
        p.zero_grad();
    }
    let (dm, dn) = ca.backward(&cache, &r);
    // gamma/beta are not used by cross_attend itself; skip them.
    let attn: Vec<&Param> = ca.params().into_iter().filter(|p| !p.name.contains(".ln.")).collect();
    let mut values = vec![hm, hn];
    values.extend(values_of(&attn));
    let mut analytic = vec![dm, dn];
    analytic.extend(grads_of(&attn));
    let probe = ca.clone();
    finite_diff_check(&mut values, &analytic, FD_STEP, |v| {
        let mut c = probe.clone();
        let ps: Vec<&mut Param> = c.params_mut().into_iter().filter(|p| !p.name.contains(".ln.")).collect();
        load_values(ps, &v[2..]);
        c.forward(&v[0], &v[1]).unwrap().0.dot(&r)
    })
}

/// `⟨R, LN(H + H̃)⟩` over both inputs, gamma and beta.
pub fn residual_norm_grad_error(rng: &mut Rng) -> GradCheckReport {
    let n = rng.int_inclusive(5, 10);
    let d = 6;
    let h = rand_matrix(n, d, rng);
    let ht = rand_matrix(n, d, rng);
    let gamma = Matrix::from_fn(1, d, |_, _| rng.uniform(0.5, 1.5));
    let beta = rand_matrix(1, d, rng);
    let r = rand_matrix(n, d, rng);
    let (_, cache) = layer_norm_rows_fwd(&h.add(&ht), gamma.as_slice(), beta.as_slice(), LAYER_NORM_EPS);
    let (dx, dg, db) = layer_norm_rows_backward(&cache, gamma.as_slice(), &r);
    let mut values = vec![h, ht, gamma, beta];
    let analytic = vec![
        dx.clone(),
        dx,
        Matrix::row_vector(&dg),
        Matrix::row_vector(&db),
    ];
    finite_diff_check(&mut values, &analytic, FD_STEP, |v| {
        xmatch::align::residual_norm(&v[0], &v[1], v[2].as_slice(), v[3].as_slice()).dot(&r)
    })
}

/// `⟨R, cosine_cost(A, B)⟩` over both inputs.
pub fn cosine_grad_error(rng: &mut Rng) -> GradCheckReport {
    let (na, nb) = (rng.int_inclusive(5, 10), rng.int_inclusive(5, 10));
    let a = rand_rows_away_from_zero(na, 4, rng);
    let b = rand_rows_away_from_zero(nb, 4, rng);
    let r = rand_matrix(na, nb, rng);
    let (_, cache) = cosine_cost_fwd(&a, &b).unwrap();
    let (da, db) = cosine_cost_backward(&cache, &r);
    let mut values = vec![a, b];
    finite_diff_check(&mut values, &[da, db], FD_STEP, |v| {
        xmatch::align::cosine_cost(&v[0], &v[1]).unwrap().dot(&r)
    })
}

/// `⟨R, ot_fuse(Ĥ_m, Ĥ_n, T)⟩` with `T` solved once and then held fixed.
pub fn ot_fuse_grad_error(rng: &mut Rng) -> GradCheckReport {
    let (nm, nn) = (rng.int_inclusive(5, 10), rng.int_inclusive(5, 10));
    let d = 4;
    let hm = rand_matrix(nm, d, rng);
    let hn = rand_matrix(nn, d, rng);
    let cost = xmatch::align::cosine_cost(&hm, &hn).unwrap();
    let plan = sinkhorn(&TransportProblem::uniform(cost, 0.1, 80)).unwrap().plan;
    let mu = vec![1.0 / nm as f64; nm];
    let lambda = 0.5;
    let gamma = Matrix::from_fn(1, d, |_, _| rng.uniform(0.5, 1.5));
    let beta = rand_matrix(1, d, rng);
    let r = rand_matrix(nm, d, rng);
    let (_, cache) = ot_fuse_fwd(&hm, &hn, &plan, &mu, lambda, gamma.as_slice(), beta.as_slice()).unwrap();
    let (dm, dn, dg, db) = ot_fuse_backward(&cache, lambda, gamma.as_slice(), &r);
    let mut values = vec![hm, hn, gamma, beta];
    let analytic = vec![dm, dn, Matrix::row_vector(&dg), Matrix::row_vector(&db)];
    finite_diff_check(&mut values, &analytic, FD_STEP, |v| {
        xmatch::align::ot_fuse(&v[0], &v[1], &plan, &mu, lambda, v[2].as_slice(), v[3].as_slice())
            .unwrap()
            .dot(&r)
    })
}

/// `⟨r, pool_embed(H)⟩`.
pub fn pool_grad_error(rng: &mut Rng) -> GradCheckReport {
    let n = rng.int_inclusive(5, 10);
    let h = rand_matrix(n, 6, rng);
    let r: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let dh = pool_embed_backward(&h, &r);
    let dot = |z: &GraphEmbedding| z.0.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let mut values = vec![h];
    finite_diff_check(&mut values, &[dh], FD_STEP, |v| dot(&pool_embed(&v[0])))
    }

/// Triplet loss over raw vectors, with an active hinge.
pub fn triplet_grad_error(rng: &mut Rng) -> GradCheckReport {
    let d = rng.int_inclusive(5, 10);
    let v = |rng: &mut Rng| GraphEmbedding((0..d).map(|_| rng.uniform(-1.0, 1.0)).collect());
    let (a, p, n) = (v(rng), v(rng), v(rng));
    // A margin large enough to keep the hinge open under any perturbation.
    let margin = 20.0;
    let (_, da, dp, dn) = triplet_loss_grad(&a, &p, &n, margin);
    let mut values = vec![
        Matrix::row_vector(&a.0),
        Matrix::row_vector(&p.0),
        Matrix::row_vector(&n.0),
    ];
    let analytic = vec![Matrix::row_vector(&da), Matrix::row_vector(&dp), Matrix::row_vector(&dn)];
    finite_diff_check(&mut values, &analytic, FD_STEP, |v| {
        let e = |m: &Matrix| GraphEmbedding(m.as_slice().to_vec());
        xmatch::training::triplet_loss(&e(&v[0]), &e(&v[1]), &e(&v[2]), margin)
    })
}

/// The full bidirectional CA → transport → fusion → pooling path with the
/// plans frozen, under `⟨r_m, z_m⟩ + ⟨r_n, z_n⟩ + w·⟨T, C⟩`.
pub fn align_path_grad_error(rng: &mut Rng) -> GradCheckReport {
    let (nm, nn) = (rng.int_inclusive(5, 10), rng.int_inclusive(5, 10));
    let d = 4;
    let mut ca = random_ca(d, 2, rng);
    let hm = rand_matrix(nm, d, rng);
    let hn = rand_matrix(nn, d, rng);
    let cfg = AlignConfig {
        w_ot: 0.3,
        ..AlignConfig::default()
    };
    let rm: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let rn: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let pass = AlignPass::forward(&hm, &hn, &ca, &cfg, Ablation::default()).unwrap();
    let frozen: FrozenPlans = pass.plans().clone();
    for p in ca.params_mut() {
        p.zero_grad();
    }
    let (dm, dn) = pass.backward(&mut ca, &rm, &rn, cfg.w_ot);
    let mut values = vec![hm, hn];
    values.extend(values_of(&ca.params()));
    let mut analytic = vec![dm, dn];
    analytic.extend(grads_of(&ca.params()));
    let probe = ca.clone();
    let dot = |z: &GraphEmbedding, r: &[f64]| z.0.iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
    finite_diff_check(&mut values, &analytic, FD_STEP, |v| {
        let mut c = probe.clone();
        load_values(c.params_mut(), &v[2..]);
        let p = AlignPass::forward_frozen(&v[0], &v[1], &c, &cfg, Ablation::default(), Some(&frozen)).unwrap();
        dot(&p.output.z_m, &rm) + dot(&p.output.z_n, &rn) + cfg.w_ot * p.aux_cost()
    })
}

/// The whole training objective (encoders, alignment, mined triplets, plus
/// the auxiliary transport term) on a 2-identity batch of 5-node graphs,
/// with plans and negatives frozen at their forward values.
pub fn batch_grad_error(rng: &mut Rng) -> GradCheckReport {
    let cfg = ModelConfig {
        encoder: encoder_cfg(Backbone::GraphTransformer, 8, 2),
        align: AlignConfig {
            w_ot: 0.2,
            ..AlignConfig::default()
        },
        ..ModelConfig::default()
    };
    let (graphs, mut model) = loop {
        let graphs: Vec<ModalGraph> = (0..4)
            .map(|i| {
                let m = if i % 2 == 0 { Modality::Skull } else { Modality::Face };
                let mut g = random_graph(5, 5, 2, m, rng);
                g.subject_id = format!("s{}", i / 2);
                g
            })
            .collect();
        let model = Model::new(cfg.clone(), &[Modality::Skull], rng).unwrap();
        let margin = graphs
            .iter()
            .map(|g| encoder_margin(model.encoder(g.modality).unwrap(), g))
            .fold(f64::INFINITY, f64::min);
        if margin >= KINK_MARGIN {
            break (graphs, model);
        }
    };
    let refs: Vec<&ModalGraph> = graphs.iter().collect();
    let pairs = make_pairs(&refs);
    // A margin beyond the squared diameter of the unit sphere keeps every
    // hinge open.
    let margin = 5.0;
    // Weighted by 0.01 for the same reason as in encoder_grad_error: some
    // attention-logit gradients are ~1e-9, where round-off in an O(1) loss
    // (~5e-12 after dividing by 2h) would dominate a relative comparison.
    let w = 0.01;
    let obj = batch_objective(&mut model, &pairs, margin, None).unwrap();
    let mut values = values_of(&model.params());
    let analytic: Vec<Matrix> = grads_of(&model.params()).iter().map(|g| g.scale(w)).collect();
    let probe = model.clone();
    finite_diff_check(&mut values, &analytic, FD_STEP, |v| {
        let mut m = probe.clone();
        load_values(m.params_mut(), v);
        w * batch_objective(&mut m, &pairs, margin, Some(&obj.frozen)).unwrap().loss
    })
}

/// Brute-force metric oracles, written from the textbook definitions with
/// an explicit full sort.
pub mod oracle {
    /// Gallery indices sorted best-first (descending score, lower index on ties).
    pub fn sorted(scores: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        // Insertion sort keeps this independent of the library's sort.
        for i in 1..idx.len() {
            let mut j = i;
            while j > 0 {
                let (a, b) = (idx[j - 1], idx[j]);
                let better = scores[b] > scores[a] || (scores[b] == scores[a] && b < a);
                if !better {
                    break;
                }
                idx.swap(j - 1, j);
                j -= 1;
            }
        }
        idx
    }

    pub fn recall(scores: &[Vec<f64>], relevant: &[Vec<usize>], k: usize) -> f64 {
        let hits = scores
            .iter()
            .zip(relevant)
            .filter(|(row, rel)| sorted(row).iter().take(k).any(|g| rel.contains(g)))
            .count();
        hits as f64 / scores.len() as f64
    }

    pub fn map(scores: &[Vec<f64>], relevant: &[Vec<usize>], k: usize) -> f64 {
        let mut total = 0.0;
        for (row, rel) in scores.iter().zip(relevant) {
            let order = sorted(row);
            let mut ap = 0.0;
            for i in 1..=k.min(order.len()) {
                if rel.contains(&order[i - 1]) {
                    let prec = order[..i].iter().filter(|g| rel.contains(g)).count() as f64 / i as f64;
                    ap += prec;
                }
            }
            let denom = rel.len().min(k);
            total += if denom == 0 { 0.0 } else { ap / denom as f64 };
        }
        total / scores.len() as f64
    }

    /// Exhaustive pair counting.
    pub fn auc(genuine: &[f64], impostor: &[f64]) -> f64 {
        let mut s = 0.0;
        for &g in genuine {
            for &i in impostor {
                s += if g > i {
                    1.0
                } else if g == i {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (genuine.len() * impostor.len()) as f64
    }
}

/// Random score matrix with coarse values (so ties occur) and one or more
/// relevant gallery items per query.
pub fn random_scores(rng: &mut Rng, multi: bool) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let q = rng.int_inclusive(1, 12);
    let g = rng.int_inclusive(2, 15);
    let scores = (0..q)
        .map(|_| (0..g).map(|_| (rng.uniform(0.0, 1.0) * 8.0).floor() / 8.0).collect())
        .collect();
    let relevant = (0..q)
        .map(|_| {
            if multi {
                let mut r: Vec<usize> = (0..g).filter(|_| rng.uniform(0.0, 1.0) < 0.3).collect();
                if r.is_empty() {
                    r.push(rng.below(g));
                }
                r
            } else {
                vec![rng.below(g)]
            }
        })
        .collect();
    (scores, relevant)
}

/// Direct (non-log) Sinkhorn from the same zero-potential start:
/// `u ← μ / (K v)`, `v ← ν / (Kᵀ u)` with `K = exp(−C/ε)`.
pub fn direct_sinkhorn(cost: &Matrix, eps: f64, iterations: usize) -> Matrix {
    let (n, m) = cost.shape();
    let k = cost.map(|c| (-c / eps).exp());
    let mu = 1.0 / n as f64;
    let nu = 1.0 / m as f64;
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    for _ in 0..iterations {
        for i in 0..n {
            let s: f64 = (0..m).map(|j| k.get(i, j) * v[j]).sum();
            u[i] = mu / s;
        }
        for j in 0..m {
            let s: f64 = (0..n).map(|i| k.get(i, j) * u[i]).sum();
            v[j] = nu / s;
        }
    }
    Matrix::from_fn(n, m, |i, j| u[i] * k.get(i, j) * v[j])
}

/// A random feasible plan for uniform marginals: a random convex mixture of
/// permutation-like couplings (Birkhoff) for square problems, else the
/// north-west-corner rule on a random row/column order blended with the
/// independent coupling.
pub fn random_feasible_plan(n: usize, m: usize, rng: &mut Rng) -> Matrix {
    let mu = vec![1.0 / n as f64; n];
    let nu = vec![1.0 / m as f64; m];
    let mut total = Matrix::zeros(n, m);
    let parts = rng.int_inclusive(1, 4);
    let mut weights: Vec<f64> = (0..=parts).map(|_| rng.uniform(0.0, 1.0).powi(3)).collect();
    let ws: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= ws);
    // Independent coupling μνᵀ.
    total.add_scaled(&Matrix::from_fn(n, m, |i, j| mu[i] * nu[j]), weights[0]);
    for &w in &weights[1..] {
        let mut rows: Vec<usize> = (0..n).collect();
        let mut cols: Vec<usize> = (0..m).collect();
        rng.shuffle(&mut rows);
        rng.shuffle(&mut cols);
        let mut a = mu.clone();
        let mut b = nu.clone();
        let (mut i, mut j) = (0, 0);
        let mut nw = Matrix::zeros(n, m);
        while i < n && j < m {
            let (r, c) = (rows[i], cols[j]);
            let t = a[r].min(b[c]);
            nw.set(r, c, nw.get(r, c) + t);
            a[r] -= t;
            b[c] -= t;
            if a[r] <= 1e-15 {
                i += 1;
            }
            if b[c] <= 1e-15 {
                j += 1;
            }
        }
        total.add_scaled(&nw, w);
    }
    total
}

/// Compares `actual` with the recorded fixture `tests/golden/<name>`. Set
/// `XMATCH_BLESS=1` to (re)record it.
pub fn golden(name: &str, actual: &str) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("XMATCH_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden {}: {e}; run with XMATCH_BLESS=1", path.display()));
    assert!(expected == actual, "{name} differs from its recorded golden");
}
