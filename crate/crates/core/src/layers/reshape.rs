use crate::tensor::{Backward, BackwardCtx, Shape, Tape, Tensor, Var};
use crate::{Error, Result};

/// `(top, left)` rows/columns removed when center-cropping `(h, w)` to
/// `(th, tw)`. The odd leftover row/column comes off the bottom/right.
pub fn crop_offsets(h: usize, w: usize, th: usize, tw: usize) -> Result<(usize, usize)> {
    if th > h || tw > w {
        return Err(Error::InvalidSize(format!("cannot crop {h}x{w} to {th}x{tw}")));
    }
    Ok(((h - th) / 2, (w - tw) / 2))
}

pub fn crop_center(x: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let s = x.shape();
    let (top, left) = crop_offsets(s.h, s.w, target_h, target_w)?;
    Ok(Tensor::from_fn(Shape::new(s.n, s.c, target_h, target_w), |n, c, h, w| x.at(n, c, h + top, w + left)))
}

/// Stack `a`'s channels, then `b`'s. `N`, `H` and `W` must agree.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::ShapeMismatch { left: sa, right: sb });
    }
    let (pa, pb) = (sa.c * sa.plane(), sb.c * sb.plane());
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * pa..(n + 1) * pa]);
        data.extend_from_slice(&b.data()[n * pb..(n + 1) * pb]);
    }
    Tensor::new(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data)
}

struct CropRule {
    top: usize,
    left: usize,
}

impl Backward for CropRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let s = ctx.inputs[0].shape();
        let os = ctx.output.shape();
        let mut dx = vec![0.0; s.numel()];
        for n in 0..os.n {
            for c in 0..os.c {
                for h in 0..os.h {
                    let src = os.index(n, c, h, 0);
                    let dst = s.index(n, c, h + self.top, self.left);
                    dx[dst..dst + os.w].copy_from_slice(&ctx.grad[src..src + os.w]);
                }
            }
        }
        vec![Some(dx)]
    }
}

struct ConcatRule;

impl Backward for ConcatRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (sa, sb) = (ctx.inputs[0].shape(), ctx.inputs[1].shape());
        let (pa, pb) = (sa.c * sa.plane(), sb.c * sb.plane());
        let mut ga = Vec::with_capacity(sa.numel());
        let mut gb = Vec::with_capacity(sb.numel());
        for chunk in ctx.grad.chunks(pa + pb) {
            ga.extend_from_slice(&chunk[..pa]);
            gb.extend_from_slice(&chunk[pa..]);
        }
        vec![ctx.needs[0].then_some(ga), ctx.needs[1].then_some(gb)]
    }
}

impl Tape {
    pub fn crop_center(&mut self, x: Var, target_h: usize, target_w: usize) -> Result<Var> {
        let s = self.shape(x);
        if (s.h, s.w) == (target_h, target_w) {
            return Ok(x);
        }
        let (top, left) = crop_offsets(s.h, s.w, target_h, target_w)?;
        let out = crop_center(self.value(x), target_h, target_w)?;
        Ok(self.record(&[x], out, CropRule { top, left }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_channels(self.value(a), self.value(b))?;
        Ok(self.record(&[a, b], out, ConcatRule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;

    fn iota(shape: Shape) -> Tensor {
        Tensor::new(shape, (1..=shape.numel()).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn crop_identity_and_center() {
        let x = iota(Shape::new(1, 1, 4, 4));
        assert_eq!(crop_center(&x, 4, 4).unwrap(), x);
        assert_eq!(crop_center(&x, 2, 2).unwrap().data(), &[6.0, 7.0, 10.0, 11.0]);
    }

    #[test]
    fn odd_margin_comes_off_the_bottom_right() {
        let x = iota(Shape::new(1, 1, 5, 5));
        // one row/col off the top/left, two off the bottom/right
        assert_eq!(crop_center(&x, 2, 2).unwrap().data(), &[7.0, 8.0, 12.0, 13.0]);
        assert_eq!(crop_offsets(5, 5, 2, 2).unwrap(), (1, 1));
    }

    #[test]
    fn crop_rejects_growth() {
        assert!(crop_center(&iota(Shape::new(1, 1, 3, 3)), 4, 2).is_err());
    }

    #[test]
    fn crop_backward_zero_pads_exactly() {
        let x = iota(Shape::new(2, 2, 5, 6));
        let mut tape = Tape::new();
        let v = tape.leaf(x.with_requires_grad(true));
        let y = tape.crop_center(v, 3, 2).unwrap();
        let g = Tensor::from_fn(tape.shape(y), |n, c, h, w| (n * 100 + c * 10 + h * 3 + w) as f64 + 0.5);
        let p = tape.mul_const(y, &g).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        let dx = Tensor::new(Shape::new(2, 2, 5, 6), tape.grad(v).unwrap().to_vec()).unwrap();
        assert_eq!(crop_center(&dx, 3, 2).unwrap(), g);
        assert_eq!(dx.data().iter().sum::<f64>(), g.data().iter().sum::<f64>());
        assert!(gradcheck(|t, v| t.crop_center(v, 3, 2), &iota(Shape::new(1, 2, 5, 6)), 1e-3).unwrap().max_rel_error <= 1e-10);
    }

    #[test]
    fn concat_shapes_and_empty() {
        let a = iota(Shape::new(1, 2, 4, 4));
        let b = iota(Shape::new(1, 3, 4, 4));
        assert_eq!(concat_channels(&a, &b).unwrap().shape(), Shape::new(1, 5, 4, 4));
        let empty = Tensor::zeros(Shape::new(1, 0, 4, 4));
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        assert!(concat_channels(&a, &iota(Shape::new(1, 1, 3, 4))).is_err());
    }

    #[test]
    fn concat_backward_splits_like_slicing() {
        let a = iota(Shape::new(2, 2, 3, 3));
        let b = iota(Shape::new(2, 1, 3, 3));
        let mut tape = Tape::new();
        let (va, vb) = (tape.leaf(a.with_requires_grad(true)), tape.leaf(b.with_requires_grad(true)));
        let y = tape.concat_channels(va, vb).unwrap();
        let g = Tensor::from_fn(tape.shape(y), |n, c, h, w| (n * 27 + c * 9 + h * 3 + w) as f64);
        let p = tape.mul_const(y, &g).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        // slicing oracle: channel c of sample n in the gradient map
        let slice = |n: usize, cs: std::ops::Range<usize>| -> Vec<f64> {
            let mut v = Vec::new();
            for c in cs {
                for h in 0..3 {
                    for w in 0..3 {
                        v.push(g.at(n, c, h, w));
                    }
                }
            }
            v
        };
        let ga: Vec<f64> = [slice(0, 0..2), slice(1, 0..2)].concat();
        let gb: Vec<f64> = [slice(0, 2..3), slice(1, 2..3)].concat();
        assert_eq!(tape.grad(va).unwrap(), ga.as_slice());
        assert_eq!(tape.grad(vb).unwrap(), gb.as_slice());
    }
}
