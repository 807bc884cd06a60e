use crate::align::GraphEmbedding;
use crate::error::{Error, Result};

/// `max(0, ‖a − p‖² − ‖a − n‖² + margin)`.
pub fn triplet_loss(a: &GraphEmbedding, p: &GraphEmbedding, n: &GraphEmbedding, margin: f64) -> f64 {
    (a.sq_dist(p) - a.sq_dist(n) + margin).max(0.0)
}

/// Loss with gradients `(∂/∂a, ∂/∂p, ∂/∂n)`; zero gradients when the hinge is
/// inactive (including exactly at the boundary).
pub fn triplet_loss_grad(
    a: &GraphEmbedding,
    p: &GraphEmbedding,
    n: &GraphEmbedding,
    margin: f64,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = a.0.len();
    let loss = triplet_loss(a, p, n, margin);
    if loss <= 0.0 {
        return (0.0, vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    }
    let mut da = vec![0.0; d];
    let mut dp = vec![0.0; d];
    let mut dn = vec![0.0; d];
    for k in 0..d {
        let (ak, pk, nk) = (a.0[k], p.0[k], n.0[k]);
        da[k] = 2.0 * (nk - pk);
        dp[k] = -2.0 * (ak - pk);
        dn[k] = 2.0 * (ak - nk);
    }
    (loss, da, dp, dn)
}

/// Index triplets into one batch of per-identity `(anchor, positive)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Batch-hard mining: anchor `i`'s negative is the positive (face) embedding
/// of another subject in the batch closest to it, lower index on ties.
pub fn mine_negatives<S: AsRef<str>>(
    anchors: &[GraphEmbedding],
    positives: &[GraphEmbedding],
    subjects: &[S],
) -> Result<TripletBatch> {
    if anchors.len() != positives.len() || anchors.len() != subjects.len() {
        return Err(Error::Argument("mining inputs differ in length".into()));
    }
    let mut negatives = Vec::with_capacity(anchors.len());
    for (i, a) in anchors.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, p) in positives.iter().enumerate() {
            if subjects[j].as_ref() == subjects[i].as_ref() {
                continue;
            }
            let d = a.sq_dist(p);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, _)) => negatives.push(j),
            None => {
                return Err(Error::Mining(format!(
                    "no negative for subject `{}`: batch holds a single identity",
                    subjects[i].as_ref()
                )))
            }
        }
    }
    let idx: Vec<usize> = (0..anchors.len()).collect();
    Ok(TripletBatch {
        anchors: idx.clone(),
        positives: idx,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn e(v: &[f64]) -> GraphEmbedding {
        GraphEmbedding(v.to_vec())
    }

    #[test]
    fn loss_cases() {
        assert_eq!(triplet_loss(&e(&[1.0, 0.0]), &e(&[1.0, 0.0]), &e(&[0.0, 1.0]), 0.3), 0.0);
        let l = triplet_loss(&e(&[1.0, 0.0]), &e(&[0.0, 1.0]), &e(&[1.0, 0.0]), 0.3);
        assert!((l - 2.3).abs() < 1e-15);
        // ‖a−n‖² − ‖a−p‖² = 0.25 = margin.
        let l = triplet_loss(&e(&[0.0]), &e(&[0.0]), &e(&[0.5]), 0.25);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn two_identities_swap() {
        let a = [e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let p = a.clone();
        let b = mine_negatives(&a, &p, &["x", "y"]).unwrap();
        assert_eq!(b.negatives, vec![1, 0]);
        assert!(matches!(
            mine_negatives(&a, &p, &["x", "x"]),
            Err(Error::Mining(_))
        ));
    }

    #[test]
    fn nearest_face_wins_with_low_index_ties() {
        let a = [e(&[1.0, 0.0]), e(&[0.0, 1.0]), e(&[-1.0, 0.0])];
        let p = [e(&[1.0, 0.0]), e(&[0.9, 0.1]), e(&[0.9, 0.1])];
        let b = mine_negatives(&a, &p, &["a", "b", "c"]).unwrap();
        assert_eq!(b.negatives[0], 1);
    }

    #[test]
    fn random_batches_match_exhaustive_search() {
        let mut rng = Rng::seed(17);
        for _ in 0..50 {
            let n = 8;
            let mk = |rng: &mut Rng| e(&(0..4).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>());
            let a: Vec<_> = (0..n).map(|_| mk(&mut rng)).collect();
            let p: Vec<_> = (0..n).map(|_| mk(&mut rng)).collect();
            let subj: Vec<String> = (0..n).map(|_| format!("s{}", rng.below(5))).collect();
            if subj.iter().all(|s| s == &subj[0]) {
                continue;
            }
            let b = mine_negatives(&a, &p, &subj).unwrap();
            for i in 0..n {
                let mut cands: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| subj[j] != subj[i])
                    .map(|j| {
                        let d: f64 = a[i].0.iter().zip(&p[j].0).map(|(x, y)| (x - y).powi(2)).sum();
                        (d.sqrt(), j)
                    })
                    .collect();
                cands.sort_by(|x, y| x.partial_cmp(y).unwrap());
                assert_eq!(b.negatives[i], cands[0].1);
            }
        }
    }
}
