mod support;

use support::{encoder_cfg, golden, random_graph};
use xmatch::align::{align_pair, Ablation, AlignConfig};
use xmatch::encoders::{encode, Backbone, Encoder};
use xmatch::graph::ModalGraph;
use xmatch::imaging::Modality;
use xmatch::numcore::{Matrix, Rng};
use xmatch::retrieval::{score_independent, score_paired};
use xmatch::training::{
    batch_objective, make_pairs, train_step, Model, ModelConfig, OptimizerState, TrainConfig, ADAM_EPS, BETA1,
    BETA2,
};

fn small_cfg() -> ModelConfig {
    ModelConfig {
        encoder: encoder_cfg(Backbone::GraphTransformer, 16, 4),
        ..ModelConfig::default()
    }
}

/// Query/face graph pairs for `n` subjects, ids `q{i}` / `f{i}`.
fn subjects(n: usize, rng: &mut Rng) -> Vec<ModalGraph> {
    let mut out = Vec::new();
    for i in 0..n {
        for (m, tag) in [(Modality::Skull, "q"), (Modality::Face, "f")] {
            let mut g = random_graph(rng.int_inclusive(6, 12), 5, 3, m, rng);
            g.subject_id = format!("s{i}");
            g.graph_id = format!("{tag}{i}");
            out.push(g);
        }
    }
    out
}

fn split(graphs: &[ModalGraph]) -> (Vec<&ModalGraph>, Vec<&ModalGraph>) {
    let q = graphs.iter().filter(|g| g.modality != Modality::Face).collect();
    let f = graphs.iter().filter(|g| g.modality == Modality::Face).collect();
    (q, f)
}

fn fmt(m: &Matrix) -> String {
    let rows: Vec<String> = m
        .to_rows()
        .iter()
        .map(|r| r.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(" "))
        .collect();
    rows.join("\n") + "\n"
}

#[test]
fn identical_graph_with_shared_encoder_scores_zero() {
    let mut rng = Rng::seed(700);
    let cfg = ModelConfig {
        shared_encoder: true,
        ..small_cfg()
    };
    let model = Model::new(cfg, &[Modality::Skull], &mut rng).unwrap();
    let face = random_graph(9, 5, 3, Modality::Face, &mut rng);
    let query = ModalGraph {
        modality: Modality::Skull,
        ..face.clone()
    };
    let others: Vec<ModalGraph> = (0..3).map(|_| random_graph(9, 5, 3, Modality::Face, &mut rng)).collect();
    let mut gallery: Vec<&ModalGraph> = others.iter().collect();
    gallery.insert(1, &face);
    let (s, _) = score_paired(&[&query], &gallery, &model).unwrap();
    assert_eq!(s.scores.get(0, 1), 0.0);
    for g in 0..4 {
        assert!(s.scores.get(0, g) <= 0.0);
    }
    let ind = score_independent(&[&query], &[&face], &model).unwrap();
    assert!((ind.scores.get(0, 0) - 1.0).abs() < 1e-12);
}

#[test]
fn paired_scores_are_bounded() {
    let mut rng = Rng::seed(701);
    let graphs = subjects(5, &mut rng);
    let (q, f) = split(&graphs);
    for ablation in [Ablation { ca: true, ot: true }, Ablation { ca: false, ot: true }] {
        let cfg = ModelConfig { ablation, ..small_cfg() };
        let model = Model::new(cfg, &[Modality::Skull], &mut rng).unwrap();
        let (s, summary) = score_paired(&q, &f, &model).unwrap();
        assert!(s.scores.as_slice().iter().all(|&x| (-4.0..=0.0).contains(&x)));
        assert_eq!(summary.pairs, 25);
        assert!(summary.max_marginal_err < 1e-3);
    }
}

#[test]
fn without_ca_and_ot_paired_mode_is_a_monotone_map_of_independent_mode() {
    // Unit-norm embeddings: −‖a − b‖² = 2 cos(a, b) − 2.
    let mut rng = Rng::seed(702);
    let graphs = subjects(6, &mut rng);
    let (q, f) = split(&graphs);
    for trial in 0..5 {
        let cfg = ModelConfig {
            ablation: Ablation { ca: false, ot: false },
            encoder: encoder_cfg(Backbone::ALL[trial % 4], 16, 4),
            ..small_cfg()
        };
        let model = Model::new(cfg, &[Modality::Skull], &mut rng).unwrap();
        let (paired, _) = score_paired(&q, &f, &model).unwrap();
        let ind = score_independent(&q, &f, &model).unwrap();
        let mapped = ind.scores.map(|c| 2.0 * c - 2.0);
        assert!(paired.scores.max_abs_diff(&mapped) < 1e-12);
        for r in 0..q.len() {
            assert_eq!(
                xmatch::retrieval::ranking(paired.row(r)),
                xmatch::retrieval::ranking(ind.row(r))
            );
        }
    }
}

#[test]
fn recorded_outputs() {
    let mut rng = Rng::seed(703);
    let g = random_graph(7, 5, 3, Modality::Face, &mut rng);
    let mut out = String::new();
    for b in Backbone::ALL {
        let enc = Encoder::new(encoder_cfg(b, 8, 2), 5, 0, "e", &mut rng).unwrap();
        out += &format!("# {b:?}\n{}", fmt(&encode(&g, &enc).unwrap().0));
    }
    golden("encoder_outputs.txt", &out);

    let model = Model::new(small_cfg(), &[Modality::Skull], &mut rng).unwrap();
    let hm = Matrix::from_fn(5, 16, |_, _| rng.normal());
    let hn = Matrix::from_fn(6, 16, |_, _| rng.normal());
    let a = align_pair(&hm, &hn, &model.ca, &AlignConfig::default(), Ablation::default()).unwrap();
    let out = format!(
        "# z_m\n{}# z_n\n{}# plan\n{}",
        fmt(&Matrix::row_vector(&a.z_m.0)),
        fmt(&Matrix::row_vector(&a.z_n.0)),
        fmt(&a.plan.plan)
    );
    golden("align_pair.txt", &out);

    let graphs = subjects(3, &mut rng);
    let (q, f) = split(&graphs);
    let (s, _) = score_paired(&q, &f, &model).unwrap();
    golden("score_paired_3x3.txt", &fmt(&s.scores));
}

#[test]
fn optimizer_step_matches_hand_update() {
    let mut rng = Rng::seed(704);
    let graphs = subjects(3, &mut rng);
    let refs: Vec<&ModalGraph> = graphs.iter().collect();
    let pairs = make_pairs(&refs);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        weight_decay: 1e-2,
        margin: 2.0,
        ..TrainConfig::default()
    };
    let mut model = Model::new(small_cfg(), &[Modality::Skull], &mut rng).unwrap();
    let mut oracle = model.clone();
    let mut opt = OptimizerState::new(model.params());
    let n = oracle.params().len();
    let (mut m, mut v): (Vec<Vec<f64>>, Vec<Vec<f64>>) = oracle
        .params()
        .iter()
        .map(|p| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]))
        .unzip();
    for t in 1..=3 {
        train_step(&mut model, &mut opt, &pairs, &cfg).unwrap();

        batch_objective(&mut oracle, &pairs, cfg.margin, None).unwrap();
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        let mut params = oracle.params_mut();
        for i in 0..n {
            let grad = params[i].grad.as_slice().to_vec();
            for (e, w) in params[i].value.as_mut_slice().iter_mut().enumerate() {
                m[i][e] = BETA1 * m[i][e] + (1.0 - BETA1) * grad[e];
                v[i][e] = BETA2 * v[i][e] + (1.0 - BETA2) * grad[e] * grad[e];
                let step = (m[i][e] / c1) / ((v[i][e] / c2).sqrt() + ADAM_EPS);
                *w = *w - cfg.learning_rate * step - cfg.learning_rate * cfg.weight_decay * *w;
            }
        }
        for (a, b) in model.params().iter().zip(oracle.params()) {
            assert!(a.value.max_abs_diff(&b.value) <= 1e-10, "step {t}: {}", a.name);
        }
    }
}

#[test]
fn inactive_hinge_leaves_only_weight_decay() {
    // Each query is its face graph under a shared encoder, so ‖z_a − z_p‖ = 0
    // and no triplet is violated at margin 0.
    let mut rng = Rng::seed(705);
    let mut graphs = Vec::new();
    for i in 0..3 {
        let mut face = random_graph(8, 5, 3, Modality::Face, &mut rng);
        face.subject_id = format!("s{i}");
        graphs.push(ModalGraph {
            modality: Modality::Skull,
            ..face.clone()
        });
        graphs.push(face);
    }
    let refs: Vec<&ModalGraph> = graphs.iter().collect();
    let pairs = make_pairs(&refs);
    let cfg = TrainConfig {
        margin: 0.0,
        learning_rate: 1e-3,
        weight_decay: 0.5,
        ..TrainConfig::default()
    };
    let mcfg = ModelConfig {
        shared_encoder: true,
        ..small_cfg()
    };
    let mut model = Model::new(mcfg, &[Modality::Skull], &mut rng).unwrap();
    let before = model.clone();
    let mut opt = OptimizerState::new(model.params());
    let loss = train_step(&mut model, &mut opt, &pairs, &cfg).unwrap();
    assert_eq!(loss, 0.0);
    for (a, b) in model.params().iter().zip(before.params()) {
        assert!(a.grad.as_slice().iter().all(|&g| g == 0.0), "{}", a.name);
        let expect = b.value.scale(1.0 - cfg.learning_rate * cfg.weight_decay);
        assert!(a.value.max_abs_diff(&expect) <= 1e-15, "{}", a.name);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let mut rng = Rng::seed(706);
    let graphs = subjects(5, &mut rng);
    let (q, f) = split(&graphs);
    let refs: Vec<&ModalGraph> = graphs.iter().collect();
    let pairs = make_pairs(&refs);
    let model = Model::new(small_cfg(), &[Modality::Skull], &mut rng).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let scores = score_paired(&q, &f, &model).unwrap().0.scores;
            let mut m = model.clone();
            let loss = batch_objective(&mut m, &pairs, 0.3, None).unwrap().loss;
            let grads: Vec<Matrix> = m.params().iter().map(|p| p.grad.clone()).collect();
            (scores, loss, grads)
        })
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.to_bits(), b.1.to_bits());
    assert_eq!(a.2, b.2);
}
