use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Dense row-major `f64` array with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(skip))]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                expected: alloc::format!("{expected} elements for {shape:?}"),
                found: alloc::format!("{} elements", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }

    /// Adds `g` into the gradient slot, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(shape_err("accumulate_grad", &[self.data.len()], &[g.len()]));
        }
        let slot = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
        Ok(())
    }

    /// Same tensor viewed under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err("reshape", shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(shape_err(op, shape, &self.shape));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Channel `c` of a `[C, H, W]` tensor as a flat slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }
}
