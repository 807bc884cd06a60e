use super::{Matrix, Rng};

/// A trainable tensor with its gradient accumulator.
///
/// Gradients add up across backward calls until [`Param::zero_grad`].
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    /// Uniform in `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform(-s, s));
        Param::new(name, value)
    }

    pub fn ones(name: impl Into<String>, width: usize) -> Self {
        Param::new(name, Matrix::filled(1, width, 1.0))
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Param::new(name, Matrix::zeros(rows, cols))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn accumulate(&mut self, g: &Matrix) {
        self.grad.add_assign(g);
    }

    pub fn accumulate_slice(&mut self, g: &[f64]) {
        for (a, b) in self.grad.as_mut_slice().iter_mut().zip(g) {
            *a += b;
        }
    }
}
