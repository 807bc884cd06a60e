use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::ops::logsumexp;
use crate::numcore::dot;
use crate::numcore::Matrix;

/// Entropic transport problem `min ⟨T, C⟩ − ε H(T)` over `Π(μ, ν)`.
#[derive(Clone, Debug)]
pub struct TransportProblem {
    pub cost: Matrix,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
}

impl TransportProblem {
    /// Uniform marginals `1/n`, `1/m`.
    pub fn uniform(cost: Matrix, epsilon: f64, iterations: usize) -> Self {
        let (n, m) = cost.shape();
        TransportProblem {
            cost,
            mu: vec![1.0 / n as f64; n],
            nu: vec![1.0 / m as f64; m],
            epsilon,
            iterations,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Argument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        let (n, m) = self.cost.shape();
        if self.mu.len() != n || self.nu.len() != m {
            return Err(Error::Shape {
                op: "sinkhorn",
                left: (n, m),
                right: (self.mu.len(), self.nu.len()),
            });
        }
        for (name, w) in [("mu", &self.mu), ("nu", &self.nu)] {
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Argument(format!("{name} has a negative entry")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Argument(format!("{name} sums to {s}, not 1")));
            }
        }
        if !self.cost.is_finite() {
            return Err(Error::NonFinite("transport cost".into()));
        }
        Ok(())
    }
}

/// Solved plan with diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub plan: Matrix,
    /// Largest deviation of any row or column sum from its marginal.
    pub marginal_err: f64,
    /// `⟨T, C⟩`.
    pub transport_cost: f64,
    pub iterations: usize,
}

/// `lse_i = log Σ_j exp(a_j − C_ij/ε)` for every row `i`, using the
/// precomputed kernel `K = exp(−C/ε)`. Rows whose kernel sum underflows are
/// recomputed with a direct log-sum-exp.
fn row_lse(kernel: &Matrix, scaled_cost: &Matrix, a: &[f64], out: &mut [f64]) {
    let amax = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b: Vec<f64> = a.iter().map(|x| (x - amax).exp()).collect();
    for (i, o) in out.iter_mut().enumerate() {
        let s = dot(kernel.row(i), &b);
        *o = if s > 1e-250 {
            amax + s.ln()
        } else {
            let c = scaled_cost.row(i);
            logsumexp(a.iter().zip(c).map(|(aj, cij)| aj - cij))
        };
    }
}

/// Column counterpart of [`row_lse`].
fn col_lse(kernel: &Matrix, scaled_cost: &Matrix, a: &[f64], out: &mut [f64]) {
    let amax = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b: Vec<f64> = a.iter().map(|x| (x - amax).exp()).collect();
    let m = kernel.cols();
    let mut sums = vec![0.0; m];
    for (i, &bi) in b.iter().enumerate() {
        if bi == 0.0 {
            continue;
        }
        for (s, k) in sums.iter_mut().zip(kernel.row(i)) {
            *s += k * bi;
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        *o = if sums[j] > 1e-250 {
            amax + sums[j].ln()
        } else {
            logsumexp((0..a.len()).map(|i| a[i] - scaled_cost.get(i, j)))
        };
    }
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log-domain Sinkhorn: potentials start at zero and alternate
/// `f ← ε log μ − ε LSE_j((g − C)/ε)`, `g ← ε log ν − ε LSE_i((f − C)/ε)` for a
/// fixed number of sweeps; `T = exp((f ⊕ g − C)/ε)`.
pub fn sinkhorn(problem: &TransportProblem) -> Result<TransportPlan> {
    problem.validate()?;
    let eps = problem.epsilon;
    let (n, m) = problem.cost.shape();
    let scaled_cost = problem.cost.scale(1.0 / eps);
    let kernel = scaled_cost.map(|c| (-c).exp());
    let log_mu: Vec<f64> = problem.mu.iter().map(|&x| ln_or_neg_inf(x)).collect();
    let log_nu: Vec<f64> = problem.nu.iter().map(|&x| ln_or_neg_inf(x)).collect();
    // Potentials are kept divided by ε.
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut lse_f = vec![0.0; n];
    let mut lse_g = vec![0.0; m];
    for _ in 0..problem.iterations {
        row_lse(&kernel, &scaled_cost, &g, &mut lse_f);
        for i in 0..n {
            f[i] = log_mu[i] - lse_f[i];
        }
        col_lse(&kernel, &scaled_cost, &f, &mut lse_g);
        for j in 0..m {
            g[j] = log_nu[j] - lse_g[j];
        }
    }
    let mut plan = Matrix::zeros(n, m);
    for i in 0..n {
        let c = scaled_cost.row(i);
        for (j, t) in plan.row_mut(i).iter_mut().enumerate() {
            let v = (f[i] + g[j] - c[j]).exp();
            *t = if v.is_nan() { 0.0 } else { v };
        }
    }
    let mut marginal_err: f64 = 0.0;
    let mut col_sums = vec![0.0; m];
    for i in 0..n {
        let row = plan.row(i);
        marginal_err = marginal_err.max((row.iter().sum::<f64>() - problem.mu[i]).abs());
        for (s, t) in col_sums.iter_mut().zip(row) {
            *s += t;
        }
    }
    for (s, v) in col_sums.iter().zip(&problem.nu) {
        marginal_err = marginal_err.max((s - v).abs());
    }
    let transport_cost = plan.dot(&problem.cost);
    Ok(TransportPlan {
        plan,
        marginal_err,
        transport_cost,
        iterations: problem.iterations,
    })
}

/// `⟨T, C⟩ − ε H(T)` with `H(T) = −Σ T log T` (`0 log 0 = 0`).
pub fn regularized_objective(plan: &Matrix, cost: &Matrix, epsilon: f64) -> f64 {
    let neg_entropy: f64 = plan
        .as_slice()
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| t * t.ln())
        .sum();
    plan.dot(cost) + epsilon * neg_entropy
}
