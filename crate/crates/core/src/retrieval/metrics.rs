use crate::error::{Error, Result};

/// Gallery order for one score row: descending score, lower index first on
/// ties.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Best 1-based rank reached by any relevant index; `None` without relevants.
pub fn rank_relevants(scores: &[f64], relevant: &[usize]) -> Option<usize> {
    // Rank of g = 1 + #{h : s_h > s_g or (s_h = s_g and h < g)}.
    relevant
        .iter()
        .map(|&g| {
            1 + scores
                .iter()
                .enumerate()
                .filter(|&(h, &s)| s > scores[g] || (s == scores[g] && h < g))
                .count()
        })
        .min()
}

/// Fraction of queries whose best relevant rank is at most `k`.
pub fn recall_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count() as f64 / ranks.len() as f64
}

/// Truncated average precision of one ranked list:
/// `Σ_{i≤K} P@i · rel(i) / min(|R|, K)`.
pub fn average_precision_at_k(order: &[usize], relevant: &[usize], k: usize) -> f64 {
    let denom = relevant.len().min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, g) in order.iter().take(k).enumerate() {
        if relevant.contains(g) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Mean of [`average_precision_at_k`] over score rows.
pub fn map_at_k(scores: &[Vec<f64>], relevant: &[Vec<usize>], k: usize) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let total: f64 = scores
        .iter()
        .zip(relevant)
        .map(|(row, rel)| average_precision_at_k(&ranking(row), rel, k))
        .sum();
    total / scores.len() as f64
}

/// Mann–Whitney AUC: `(#{g > i} + ½ #{g = i}) / (|G|·|I|)`.
pub fn roc_auc(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "ROC-AUC needs genuine and impostor scores (got {} and {})",
            genuine.len(),
            impostor.len()
        )));
    }
    let mut imp = impostor.to_vec();
    imp.sort_by(f64::total_cmp);
    // Count via binary search: below = #{i < g}, equal = #{i = g}.
    let mut twice: u128 = 0;
    for &g in genuine {
        let below = imp.partition_point(|&x| x < g);
        let upto = imp.partition_point(|&x| x <= g);
        twice += 2 * below as u128 + (upto - below) as u128;
    }
    Ok(twice as f64 / (2.0 * genuine.len() as f64 * impostor.len() as f64))
}

/// One ROC operating point: scores `≥ threshold` count as accepted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Operating points at every distinct score, highest first, preceded by the
/// `+∞` point `(0, 0)`.
pub fn roc_points(genuine: &[f64], impostor: &[f64]) -> Vec<RocPoint> {
    let mut all: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    all.sort_by(|a, b| b.total_cmp(a));
    all.dedup();
    let rate = |set: &[f64], t: f64| {
        if set.is_empty() {
            0.0
        } else {
            set.iter().filter(|&&s| s >= t).count() as f64 / set.len() as f64
        }
    };
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    out.extend(all.into_iter().map(|t| RocPoint {
        threshold: t,
        tpr: rate(genuine, t),
        fpr: rate(impostor, t),
    }));
    out
}
