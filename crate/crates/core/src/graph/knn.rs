use std::collections::BTreeSet;

/// Undirected KNN edges with their normalized lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnEdges {
    pub edges: Vec<(usize, usize)>,
    pub edge_dist: Vec<f64>,
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Each point picks its `min(k, n−1)` nearest others (ties to the lower
/// index); the picks are symmetrized and deduplicated. Distances are divided
/// by `diagonal`.
pub fn knn_graph(points: &[(f64, f64)], k: usize, diagonal: f64) -> KnnEdges {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    let mut set = BTreeSet::new();
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (distance(points[i], points[j]), j)),
        );
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(k) {
            set.insert((i.min(j), i.max(j)));
        }
    }
    let edges: Vec<(usize, usize)> = set.into_iter().collect();
    let scale = if diagonal > 0.0 { 1.0 / diagonal } else { 1.0 };
    let edge_dist = edges
        .iter()
        .map(|&(a, b)| (distance(points[a], points[b]) * scale).min(1.0))
        .collect();
    KnnEdges { edges, edge_dist }
}
