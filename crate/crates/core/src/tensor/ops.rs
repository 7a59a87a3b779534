//! Elementwise arithmetic and reductions.

use super::{Backward, BackwardCtx, Shape, Tape, Tensor, Var};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// Multiply by a scalar operand.
    Scale,
    /// Unary negation; the right-hand operand is ignored.
    Neg,
}

/// Right-hand side of an elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

/// Evaluate an elementwise operation outside of any tape.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Operand<'_>) -> Result<Tensor> {
    let mut tape = Tape::with_exec(crate::Exec::Sequential);
    let av = tape.constant(a.clone());
    let out = match (op, b) {
        (ElementwiseOp::Neg, _) => tape.neg(av),
        (ElementwiseOp::Scale, Operand::Scalar(s)) | (ElementwiseOp::Mul, Operand::Scalar(s)) => {
            tape.scale(av, s)
        }
        (ElementwiseOp::Add, Operand::Scalar(s)) => tape.add_scalar(av, s),
        (ElementwiseOp::Sub, Operand::Scalar(s)) => tape.add_scalar(av, -s),
        (ElementwiseOp::Scale, Operand::Tensor(t)) | (ElementwiseOp::Mul, Operand::Tensor(t)) => {
            let bv = tape.constant(t.clone());
            tape.mul(av, bv)?
        }
        (ElementwiseOp::Add, Operand::Tensor(t)) => {
            let bv = tape.constant(t.clone());
            tape.add(av, bv)?
        }
        (ElementwiseOp::Sub, Operand::Tensor(t)) => {
            let bv = tape.constant(t.clone());
            tape.sub(av, bv)?
        }
    };
    Ok(tape.take(out))
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    a.check_same_shape(b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data)
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.shape(), data).expect("same length")
}

struct AddRule {
    sign_b: f64,
}

impl Backward for AddRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let ga = ctx.needs[0].then(|| ctx.grad.to_vec());
        let gb = ctx.needs[1].then(|| ctx.grad.iter().map(|g| g * self.sign_b).collect());
        vec![ga, gb]
    }
}

struct MulRule;

impl Backward for MulRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let ga = ctx.needs[0].then(|| ctx.grad.iter().zip(b).map(|(g, y)| g * y).collect());
        let gb = ctx.needs[1].then(|| ctx.grad.iter().zip(a).map(|(g, x)| g * x).collect());
        vec![ga, gb]
    }
}

struct ScaleRule(f64);

impl Backward for ScaleRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        vec![Some(ctx.grad.iter().map(|g| g * self.0).collect())]
    }
}

struct PassRule;

impl Backward for PassRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        vec![Some(ctx.grad.to_vec())]
    }
}

struct MulConstRule(Vec<f64>);

impl Backward for MulConstRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        vec![Some(ctx.grad.iter().zip(&self.0).map(|(g, m)| g * m).collect())]
    }
}

struct SumRule {
    scale: f64,
}

impl Backward for SumRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![ctx.grad[0] * self.scale; ctx.inputs[0].numel()])]
    }
}

struct SigmoidRule;

impl Backward for SigmoidRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let y = ctx.output.data();
        vec![Some(ctx.grad.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect())]
    }
}

/// Numerically safe logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_with(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.record(&[a, b], out, AddRule { sign_b: 1.0 }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_with(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.record(&[a, b], out, AddRule { sign_b: -1.0 }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_with(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.record(&[a, b], out, MulRule))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = map(self.value(a), |x| x * s);
        self.record(&[a], out, ScaleRule(s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| -x);
        self.record(&[a], out, ScaleRule(-1.0))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = map(self.value(a), |x| x + s);
        self.record(&[a], out, PassRule)
    }

    /// Multiply by a fixed tensor that is not itself differentiated.
    pub fn mul_const(&mut self, a: Var, k: &Tensor) -> Result<Var> {
        let out = zip_with(self.value(a), k, |x, y| x * y)?;
        Ok(self.record(&[a], out, MulConstRule(k.data().to_vec())))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.record(&[a], Tensor::scalar(s), SumRule { scale: 1.0 })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.numel().max(1) as f64;
        let s = t.data().iter().sum::<f64>() / n;
        self.record(&[a], Tensor::scalar(s), SumRule { scale: 1.0 / n })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = map(self.value(a), sigmoid);
        self.record(&[a], out, SigmoidRule)
    }

    /// Reshape-free reinterpretation: the same data under a new shape.
    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var> {
        let out = Tensor::new(shape, self.value(a).data().to_vec())?;
        Ok(self.record(&[a], out, PassRule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use crate::Error;

    fn t(values: &[f64]) -> Tensor {
        Tensor::new(Shape::new(1, 1, 1, values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn scalar_add() {
        let one = Tensor::scalar(1.0);
        let two = Tensor::scalar(2.0);
        let out = elementwise(ElementwiseOp::Add, &one, Operand::Tensor(&two)).unwrap();
        assert_eq!(out.data(), &[3.0]);
    }

    #[test]
    fn scale_by_zero_annihilates() {
        let x = t(&[1.0, -2.0, 3.5]);
        let out = elementwise(ElementwiseOp::Scale, &x, Operand::Scalar(0.0)).unwrap();
        assert_eq!(out, Tensor::zeros(x.shape()));
    }

    #[test]
    fn sub_and_neg() {
        let a = t(&[5.0, 1.0]);
        let b = t(&[2.0, 4.0]);
        assert_eq!(elementwise(ElementwiseOp::Sub, &a, Operand::Tensor(&b)).unwrap().data(), &[3.0, -3.0]);
        assert_eq!(elementwise(ElementwiseOp::Neg, &a, Operand::Scalar(0.0)).unwrap().data(), &[-5.0, -1.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[1.0, 2.0, 3.0]);
        match elementwise(ElementwiseOp::Add, &a, Operand::Tensor(&b)) {
            Err(Error::ShapeMismatch { left, right }) => {
                assert_eq!(left, a.shape());
                assert_eq!(right, b.shape());
                let msg = Error::ShapeMismatch { left, right }.to_string();
                assert!(msg.contains("(1, 1, 1, 2)") && msg.contains("(1, 1, 1, 3)"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mul_gradient_matches_finite_differences() {
        let a = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| (c as f64 - 0.5) * (h as f64 + 1.3) - w as f64 * 0.7);
        let b = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| ((c * 9 + h * 3 + w) as f64 * 0.61).sin());
        let err = gradcheck::gradcheck_many(
            |tape, v| {
                let p = tape.mul(v[0], v[1])?;
                Ok(tape.sum(p))
            },
            &[a, b],
            1e-6,
        )
        .unwrap();
        assert!(err.max_rel_error <= 1e-6, "{err:?}");
    }

    #[test]
    fn sigmoid_is_stable_and_differentiable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) == 1.0);
        let x = t(&[-3.0, -0.2, 0.4, 2.5]);
        let r = gradcheck::gradcheck(|tape, v| Ok(tape.sigmoid(v)), &x, 1e-6).unwrap();
        assert!(r.max_rel_error <= 1e-7);
    }
}
