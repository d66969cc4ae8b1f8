use crate::error::{Error, Result};

/// A persistent, shaped block of reals with a gradient accumulator.
///
/// Model parameters live in `DiffValue`s; a [`Tape`](super::Tape) borrows
/// them for the duration of one forward/backward pass and the resulting
/// gradients are folded back in with [`DiffValue::accumulate_grad`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiffValue {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

impl DiffValue {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != data.len() {
            return Err(Error::shape("DiffValue::new", &shape, &[data.len()]));
        }
        let grad = vec![0.0; data.len()];
        Ok(Self {
            shape,
            data,
            grad,
            requires_grad,
        })
    }

    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, data, true)
    }

    pub fn constant(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, data, false)
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n], requires_grad).expect("zeros: positive shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `g` into the accumulator. Ignored when `requires_grad` is false.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.grad.len() {
            return Err(Error::shape("accumulate_grad", &self.shape, &[g.len()]));
        }
        if self.requires_grad {
            for (acc, v) in self.grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
