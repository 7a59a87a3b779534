use crate::tensor::{Backward, BackwardCtx, Tape, Tensor, Var};

/// `x` for `x > 0`, `alpha·(eˣ − 1)` otherwise.
#[inline]
fn elu_scalar(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

/// Derivative of ELU; at `x = 0` the left branch (`alpha`) is used.
#[inline]
pub fn elu_derivative(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

pub fn elu(x: &Tensor, alpha: f64) -> Tensor {
    let data = x.data().iter().map(|&v| elu_scalar(v, alpha)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

struct EluRule(f64);

impl Backward for EluRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let x = ctx.inputs[0].data();
        vec![Some(ctx.grad.iter().zip(x).map(|(g, &v)| g * elu_derivative(v, self.0)).collect())]
    }
}

struct ReluRule;

impl Backward for ReluRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let x = ctx.inputs[0].data();
        vec![Some(ctx.grad.iter().zip(x).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect())]
    }
}

impl Tape {
    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        let out = elu(self.value(x), alpha);
        self.record(&[x], out, EluRule(alpha))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = relu(self.value(x));
        self.record(&[x], out, ReluRule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, Shape};

    #[test]
    fn elu_values() {
        let x = Tensor::new(Shape::new(1, 1, 1, 3), vec![1.0, 0.0, -1.0]).unwrap();
        let y = elu(&x, 1.0);
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[1], 0.0);
        assert!((y.data()[2] - (-1.0f64).exp_m1()).abs() < 1e-15);
        assert!((y.data()[2] + 0.63212).abs() < 1e-5);
    }

    #[test]
    fn relu_values() {
        let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![2.0, -3.0]).unwrap();
        assert_eq!(relu(&x).data(), &[2.0, 0.0]);
    }

    #[test]
    fn elu_is_c1_at_zero_for_unit_alpha() {
        for eps in [1e-4, 1e-5, 1e-6, 1e-8] {
            assert!((elu_derivative(-eps, 1.0) - 1.0).abs() <= 2.0 * eps);
            assert_eq!(elu_derivative(eps, 1.0), 1.0);
        }
    }

    fn away_from_zero() -> Tensor {
        Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| {
            let v = (c * 9 + h * 3 + w) as f64 * 0.37 - 3.1;
            if v.abs() < 0.05 { v + 0.1 } else { v }
        })
    }

    #[test]
    fn elu_gradcheck() {
        for alpha in [1.0, 0.5] {
            let r = gradcheck(|t, v| Ok(t.elu(v, alpha)), &away_from_zero(), 1e-6).unwrap();
            assert!(r.max_rel_error <= 1e-6, "{r:?}");
        }
    }

    #[test]
    fn relu_gradcheck() {
        let r = gradcheck(|t, v| Ok(t.relu(v)), &away_from_zero(), 1e-6).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }
}
