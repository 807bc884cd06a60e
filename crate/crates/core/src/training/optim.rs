use crate::error::{Error, Result};
use crate::numcore::{Matrix, Param};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adaptive-moment state with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Param>) -> Self {
        let m: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        OptimizerState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    /// `p ← p − lr·m̂/(√v̂ + eps) − lr·wd·p` using each parameter's gradient.
    pub fn update(&mut self, params: &mut [&mut Param], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Argument(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.value.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "optimizer",
                    left: p.value.shape(),
                    right: m.shape(),
                });
            }
            let g = p.grad.as_slice();
            let w = p.value.as_mut_slice();
            for (((wi, &gi), mi), vi) in w
                .iter_mut()
                .zip(g)
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *wi -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS)) + lr * weight_decay * *wi;
            }
        }
        Ok(())
    }
}
