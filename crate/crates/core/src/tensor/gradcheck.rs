//! Central-difference gradient checking.

use rand::Rng;

use super::{Shape, Tape, Tensor, Var};
use crate::{Error, Exec, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

const ABS_FLOOR: f64 = 1e-8;

/// Scalar objective: the output itself when scalar, otherwise its inner
/// product with a fixed pseudo-random projection.
fn objective<F>(f: &F, tape: &mut Tape, vars: &[Var]) -> Result<Var>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let y = f(tape, vars)?;
    let shape = tape.shape(y);
    if shape == Shape::SCALAR {
        return Ok(y);
    }
    let mut rng = crate::rng::stream(0x6772_6164, &[shape.numel() as u64]);
    let proj = Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0));
    let p = tape.mul_const(y, &proj)?;
    Ok(tape.sum(p))
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::with_exec(Exec::Sequential);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = objective(f, &mut tape, &vars)?;
    tape.value(y).item()
}

/// Compare the tape gradient of `f` against central differences with step `h`,
/// over every coordinate of every input.
///
/// Non-finite values anywhere along the way are reported with the flat
/// coordinate index (counted across all inputs).
pub fn gradcheck_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::with_exec(Exec::Sequential);
    let vars: Vec<Var> =
        inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let y = objective(&f, &mut tape, &vars)?;
    if !tape.value(y).is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    tape.backward(y)?;
    let analytic: Vec<Vec<f64>> =
        vars.iter().map(|&v| tape.grad(v).expect("leaf gradient").to_vec()).collect();

    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), coordinates: 0 };
    let mut offset = 0;
    let mut probe = inputs.to_vec();
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &analytic) in grads.iter().enumerate() {
            let index = offset + i;
            if !analytic.is_finite() {
                return Err(Error::NonFinite { index });
            }
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let plus = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = orig - h;
            let minus = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { index });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic - numeric).abs() / f64::max(ABS_FLOOR, analytic.abs() + numeric.abs());
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (k, i);
            }
            report.coordinates += 1;
        }
        offset += grads.len();
    }
    Ok(report)
}

/// Single-input form of [`gradcheck_many`].
pub fn gradcheck<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    gradcheck_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exact() {
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| (c * 9 + h * 3 + w) as f64 * 0.1 - 0.8);
        // Central differences are exact for linear maps at any step; a larger
        // step keeps the rounding in f(x ± h) small relative to 2h.
        let r = gradcheck(|_, v| Ok(v), &x, 1e-3).unwrap();
        assert!(r.max_rel_error <= 1e-10, "{r:?}");
        assert_eq!(r.coordinates, 18);
    }

    #[test]
    fn non_finite_is_reported_with_index() {
        let x = Tensor::new(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 1e308]).unwrap();
        let err = gradcheck(|tape, v| Ok(tape.scale(v, 10.0)), &x, 1e-6).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn catches_a_wrong_gradient() {
        struct Wrong;
        impl crate::tensor::Backward for Wrong {
            fn backward(&self, ctx: &crate::tensor::BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
                vec![Some(ctx.grad.iter().map(|g| 2.0 * g).collect())]
            }
        }
        let x = Tensor::full(Shape::new(1, 1, 1, 2), 0.3);
        let r = gradcheck(
            |tape, v| {
                let out = tape.value(v).clone();
                Ok(tape.record(&[v], out, Wrong))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.3);
    }
}
