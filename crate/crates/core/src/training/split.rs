use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

/// Subject → split.
pub type SplitAssignment = BTreeMap<String, Split>;

/// Split sizes for `n` items: floors of `ratio · n`, with the leftover handed
/// out by largest fractional part (earlier split on ties).
pub fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    // The nudge keeps exact products like 0.7 · 10 from flooring to 6.
    let mut counts = quotas.map(|q| (q + 1e-9).floor() as usize);
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Identity-disjoint split: distinct subjects are sorted, shuffled with the
/// seed and cut by [`largest_remainder`] into train, val, test.
pub fn split_dataset<S: AsRef<str>>(
    subject_ids: &[S],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split ratios {ratios:?} must be nonnegative and sum to 1"
        )));
    }
    let mut subjects: Vec<&str> = subject_ids.iter().map(|s| s.as_ref()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 3 {
        return Err(Error::Argument(format!(
            "need at least 3 subjects to split, got {}",
            subjects.len()
        )));
    }
    let mut rng = Rng::seed(seed);
    rng.shuffle(&mut subjects);
    let counts = largest_remainder(subjects.len(), ratios);
    let mut out = SplitAssignment::new();
    let mut it = subjects.into_iter();
    for (split, &c) in Split::ALL.iter().zip(&counts) {
        for s in it.by_ref().take(c) {
            out.insert(s.to_string(), *split);
        }
    }
    Ok(out)
}
