//! Dense 4-D tensors and reverse-mode differentiation.
//!
//! Every value is laid out as `(N, C, H, W)` in row-major order. Lower-rank
//! data is embedded with size-1 axes: a per-channel vector is `(1, C, 1, 1)`,
//! a scalar `(1, 1, 1, 1)`.

mod gradcheck;
mod moments;
mod ops;
mod tape;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use gradcheck::{gradcheck, gradcheck_many, GradCheck};
pub use moments::{moments, Moments, Partition};
pub use ops::{elementwise, sigmoid, ElementwiseOp, Operand};
pub use tape::{Backward, BackwardCtx, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { n: 1, c: 1, h: 1, w: 1 };

    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    /// `(1, C, 1, 1)`, the layout of per-channel parameters.
    pub const fn channels(c: usize) -> Self {
        Self { n: 1, c, h: 1, w: 1 }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn to_array(self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_array(a: [usize; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self { shape, data: vec![value; shape.numel()], requires_grad: false, grad: None }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    /// Per-channel vector, shape `(1, C, 1, 1)`.
    pub fn channel_vector(values: Vec<f64>) -> Self {
        let shape = Shape::channels(values.len());
        Self { shape, data: values, requires_grad: false, grad: None }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { shape, data, requires_grad: false, grad: None }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Option<Vec<f64>> {
        &mut self.grad
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(n, c, h, w)]
    }

    /// Value of a `(1, 1, 1, 1)` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape != Shape::SCALAR {
            return Err(Error::NotScalar(self.shape));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    /// Copy of sample `n`, shape `(1, C, H, W)`.
    pub fn sample(&self, n: usize) -> Tensor {
        let per = self.shape.c * self.shape.plane();
        let data = self.data[n * per..(n + 1) * per].to_vec();
        Tensor { shape: Shape { n: 1, ..self.shape }, data, requires_grad: false, grad: None }
    }

    /// Stack tensors along the batch axis. All parts must share `(C, H, W)`.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("tensor stack"))?;
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::numel).sum());
        let mut n = 0;
        for p in parts {
            if (p.shape.c, p.shape.h, p.shape.w) != (first.shape.c, first.shape.h, first.shape.w) {
                return Err(Error::ShapeMismatch { left: first.shape, right: p.shape });
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(Shape { n, ..first.shape }, data)
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { left: self.shape, right: other.shape });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(Shape::new(1, 2, 2, 2), vec![0.0; 8]).is_ok());
        let err = Tensor::new(Shape::new(1, 2, 2, 2), vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, Error::DataLength { len: 7, .. }));
    }

    #[test]
    fn row_major_index() {
        let t = Tensor::from_fn(Shape::new(2, 3, 4, 5), |n, c, h, w| (n * 1000 + c * 100 + h * 10 + w) as f64);
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.shape().index(1, 2, 3, 4)], 1234.0);
    }

    #[test]
    fn stack_and_sample_invert() {
        let a = Tensor::from_fn(Shape::new(1, 2, 2, 2), |_, c, h, w| (c * 4 + h * 2 + w) as f64);
        let b = Tensor::full(Shape::new(1, 2, 2, 2), -1.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 2, 2));
        assert_eq!(s.sample(0), a);
        assert_eq!(s.sample(1), b);
    }
}
