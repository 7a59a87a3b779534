use crate::tensor::{Backward, BackwardCtx, Shape, Tape, Tensor, Var};
use crate::{Error, Result};

/// 2×2 max pooling with stride 2.
///
/// Returns the pooled tensor and, for every output element, the flat input
/// index it came from. Ties go to the first element in row-major scan order.
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::InvalidSize(format!("maxpool2 needs even H and W, got {s}")));
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let data = x.data();
    for n in 0..s.n {
        for c in 0..s.c {
            for oh in 0..out_shape.h {
                for ow in 0..out_shape.w {
                    let mut best = s.index(n, c, 2 * oh, 2 * ow);
                    for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                        let i = s.index(n, c, 2 * oh + dh, 2 * ow + dw);
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(out_shape, out)?, argmax))
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let out = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    Tensor::from_fn(out, |n, c, h, w| x.at(n, c, h / 2, w / 2))
}

struct MaxPoolRule {
    argmax: Vec<usize>,
}

impl Backward for MaxPoolRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let mut dx = vec![0.0; ctx.inputs[0].numel()];
        for (g, &i) in ctx.grad.iter().zip(&self.argmax) {
            dx[i] += g;
        }
        vec![Some(dx)]
    }
}

struct UpsampleRule;

impl Backward for UpsampleRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let s = ctx.inputs[0].shape();
        let os = ctx.output.shape();
        let mut dx = vec![0.0; s.numel()];
        for n in 0..os.n {
            for c in 0..os.c {
                for h in 0..os.h {
                    for w in 0..os.w {
                        dx[s.index(n, c, h / 2, w / 2)] += ctx.grad[os.index(n, c, h, w)];
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

impl Tape {
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = maxpool2(self.value(x))?;
        Ok(self.record(&[x], out, MaxPoolRule { argmax }))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let out = upsample2(self.value(x));
        self.record(&[x], out, UpsampleRule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(h: usize, w: usize, vals: &[f64]) -> Tensor {
        Tensor::new(Shape::new(1, 1, h, w), vals.to_vec()).unwrap()
    }

    #[test]
    fn single_window() {
        let (y, arg) = maxpool2(&grid(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::full(Shape::new(1, 1, 4, 4), 2.0);
        let mut tape = Tape::new();
        let v = tape.leaf(x.with_requires_grad(true));
        let y = tape.maxpool2(v).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 2.0));
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let g = tape.grad(v).unwrap();
        let expected: Vec<f64> = (0..16).map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(g, expected.as_slice());
    }

    #[test]
    fn odd_sizes_rejected() {
        assert!(maxpool2(&Tensor::zeros(Shape::new(1, 1, 3, 4))).is_err());
        assert!(maxpool2(&Tensor::zeros(Shape::new(1, 1, 4, 5))).is_err());
    }

    #[test]
    fn upsample_replicates() {
        let y = upsample2(&grid(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn pool_inverts_upsample_exhaustively() {
        // every 2x2 grid with entries from {-1, 0, 1, 2}, two channels
        for code in 0..256usize {
            let vals: Vec<f64> = (0..4).map(|k| ((code >> (2 * k)) & 3) as f64 - 1.0).collect();
            let x = Tensor::new(Shape::new(1, 2, 1, 2), vals).unwrap();
            let (y, _) = maxpool2(&upsample2(&x)).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn gradchecks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // distinct values, so no ties within any window
        let mut vals: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor::new(Shape::new(1, 2, 4, 4), vals).unwrap();
        assert!(gradcheck(|t, v| t.maxpool2(v), &x, 1e-6).unwrap().max_rel_error <= 1e-6);
        assert!(gradcheck(|t, v| Ok(t.upsample2(v)), &x, 1e-6).unwrap().max_rel_error <= 1e-6);
    }
}
