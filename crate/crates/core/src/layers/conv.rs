//! Stride-1 2-D cross-correlation via im2col and GEMM.

use serde::{Deserialize, Serialize};

use crate::tensor::{Backward, BackwardCtx, Shape, Tape, Tensor, Var};
use crate::{Error, Exec, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    /// Output keeps `H, W`. Even kernels pad `⌊(k-1)/2⌋` on top/left and the
    /// rest on bottom/right.
    Same,
    /// No padding; output is `H - k + 1`.
    Valid,
}

impl PaddingMode {
    /// `(before, after)` padding for kernel size `k`.
    pub fn pads(self, k: usize) -> (usize, usize) {
        match self {
            PaddingMode::Same => {
                let before = (k - 1) / 2;
                (before, k - 1 - before)
            }
            PaddingMode::Valid => (0, 0),
        }
    }
}

/// Output extent along one axis, or `None` when the input is too small.
pub fn conv_output_size(size: usize, k: usize, padding: PaddingMode) -> Option<usize> {
    let (a, b) = padding.pads(k);
    (size + a + b).checked_sub(k).map(|s| s + 1).filter(|_| size > 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    /// `(C_out, C_in, k, k)`.
    pub weight: Tensor,
    /// `(1, C_out, 1, 1)`; absent for convolutions feeding a normalization.
    pub bias: Option<Tensor>,
    pub kernel_size: usize,
    pub padding: PaddingMode,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn new(x: Shape, weight: Shape, bias: Option<Shape>, padding: PaddingMode) -> Result<Self> {
        let k = weight.h;
        if k == 0 || weight.w != k {
            return Err(Error::InvalidSize(format!("kernel must be square and non-empty, got {weight}")));
        }
        if x.c != weight.c {
            return Err(Error::ChannelMismatch { expected: weight.c, got: x.c });
        }
        if let Some(b) = bias {
            if b != Shape::channels(weight.n) {
                return Err(Error::ShapeMismatch { left: Shape::channels(weight.n), right: b });
            }
        }
        let (ho, wo) = match (conv_output_size(x.h, k, padding), conv_output_size(x.w, k, padding)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(Error::InvalidSize(format!(
                    "input {}x{} is smaller than kernel {k} in {padding:?} mode",
                    x.h, x.w
                )))
            }
        };
        let (pad_top, _) = padding.pads(k);
        Ok(Self { c_in: x.c, c_out: weight.n, k, h: x.h, w: x.w, ho, wo, pad_top, pad_left: pad_top })
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold one sample `(C_in, H, W)` into `(C_in·k·k, Ho·Wo)`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n = self.cols();
        for ci in 0..self.c_in {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oh in 0..self.ho {
                        let ih = (oh + ki) as isize - self.pad_top as isize;
                        let out = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        if ih < 0 || ih >= self.h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for (ow, o) in out.iter_mut().enumerate() {
                            let iw = (ow + kj) as isize - self.pad_left as isize;
                            *o = if iw < 0 || iw >= self.w as isize { 0.0 } else { src[iw as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatter-add columns back into `dx`.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let n = self.cols();
        for ci in 0..self.c_in {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oh in 0..self.ho {
                        let ih = (oh + ki) as isize - self.pad_top as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for ow in 0..self.wo {
                            let iw = (ow + kj) as isize - self.pad_left as isize;
                            if iw >= 0 && iw < self.w as isize {
                                dst[iw as usize] += src[oh * self.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c (m×n) = alpha · op(a) (m×k) · op(b) (k×n) + beta · c`, all row-major with
/// explicit strides so transposes are free.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn forward(exec: Exec, g: Geometry, batch: usize, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let in_per = g.c_in * g.h * g.w;
    let out_per = g.c_out * g.cols();
    let mut out = vec![0.0; batch * out_per];
    exec.for_chunks_mut(&mut out, out_per, |n, y| {
        let mut cols = vec![0.0; g.rows() * g.cols()];
        g.im2col(&x[n * in_per..(n + 1) * in_per], &mut cols);
        if let Some(b) = b {
            for (co, plane) in y.chunks_mut(g.cols()).enumerate() {
                plane.fill(b[co]);
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(g.c_out, g.rows(), g.cols(), w, (g.rows(), 1), &cols, (g.cols(), 1), beta, y);
    });
    out
}

struct ConvRule {
    geometry: Geometry,
    has_bias: bool,
}

impl Backward for ConvRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let g = self.geometry;
        let x = ctx.inputs[0].data();
        let w = ctx.inputs[1].data();
        let batch = ctx.inputs[0].shape().n;
        let in_per = g.c_in * g.h * g.w;
        let out_per = g.c_out * g.cols();
        let need_x = ctx.needs[0];
        let need_w = ctx.needs[1];

        // Per-sample partials, reduced afterwards in sample order.
        let partials = ctx.exec.map(batch, |n| {
            let gy = &ctx.grad[n * out_per..(n + 1) * out_per];
            let mut cols = vec![0.0; g.rows() * g.cols()];
            let dw = need_w.then(|| {
                g.im2col(&x[n * in_per..(n + 1) * in_per], &mut cols);
                let mut dw = vec![0.0; g.c_out * g.rows()];
                gemm(g.c_out, g.cols(), g.rows(), gy, (g.cols(), 1), &cols, (1, g.cols()), 0.0, &mut dw);
                dw
            });
            let dx = need_x.then(|| {
                gemm(g.rows(), g.c_out, g.cols(), w, (1, g.rows()), gy, (g.cols(), 1), 0.0, &mut cols);
                let mut dx = vec![0.0; in_per];
                g.col2im(&cols, &mut dx);
                dx
            });
            (dx, dw)
        });

        let mut dx = need_x.then(|| Vec::with_capacity(batch * in_per));
        let mut dw = need_w.then(|| vec![0.0; g.c_out * g.rows()]);
        for (px, pw) in partials {
            if let (Some(dx), Some(px)) = (dx.as_mut(), px) {
                dx.extend_from_slice(&px);
            }
            if let (Some(dw), Some(pw)) = (dw.as_mut(), pw) {
                dw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
            }
        }
        let mut out = vec![dx, dw];
        if self.has_bias {
            let db = (ctx.needs[2]).then(|| {
                let mut db = vec![0.0; g.c_out];
                for n in 0..batch {
                    for (co, plane) in ctx.grad[n * out_per..(n + 1) * out_per].chunks(g.cols()).enumerate() {
                        db[co] += plane.iter().sum::<f64>();
                    }
                }
                db
            });
            out.push(db);
        }
        out
    }
}

/// Pure convolution with an explicit execution strategy.
pub fn conv2d_with(exec: Exec, x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    if p.weight.shape().h != p.kernel_size {
        return Err(Error::InvalidSize(format!(
            "declared kernel size {} but weight is {}",
            p.kernel_size,
            p.weight.shape()
        )));
    }
    let g = Geometry::new(x.shape(), p.weight.shape(), p.bias.as_ref().map(Tensor::shape), p.padding)?;
    let out = forward(exec, g, x.shape().n, x.data(), p.weight.data(), p.bias.as_ref().map(Tensor::data));
    Tensor::new(Shape::new(x.shape().n, g.c_out, g.ho, g.wo), out)
}

/// Cross-correlation (no kernel flip) plus bias, stride 1.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv2d_with(Exec::default(), x, p)
}

impl Tape {
    /// Differentiable convolution. `weight` is `(C_out, C_in, k, k)`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, padding: PaddingMode) -> Result<Var> {
        let g = Geometry::new(self.shape(x), self.shape(weight), bias.map(|b| self.shape(b)), padding)?;
        let out = forward(
            self.exec(),
            g,
            self.shape(x).n,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(Shape::new(self.shape(x).n, g.c_out, g.ho, g.wo), out)?;
        let rule = ConvRule { geometry: g, has_bias: bias.is_some() };
        Ok(match bias {
            Some(b) => self.record(&[x, weight, b], out, rule),
            None => self.record(&[x, weight], out, rule),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck_many;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop cross-correlation.
    fn naive(x: &Tensor, p: &ConvParams) -> Tensor {
        let (xs, ws) = (x.shape(), p.weight.shape());
        let k = ws.h;
        let (pt, pb) = p.padding.pads(k);
        let ho = xs.h + pt + pb + 1 - k;
        let wo = xs.w + pt + pb + 1 - k;
        Tensor::from_fn(Shape::new(xs.n, ws.n, ho, wo), |n, co, oh, ow| {
            let mut acc = p.bias.as_ref().map_or(0.0, |b| b.data()[co]);
            for ci in 0..xs.c {
                for ki in 0..k {
                    for kj in 0..k {
                        let ih = oh as isize + ki as isize - pt as isize;
                        let iw = ow as isize + kj as isize - pt as isize;
                        if ih >= 0 && iw >= 0 && (ih as usize) < xs.h && (iw as usize) < xs.w {
                            acc += p.weight.at(co, ci, ki, kj) * x.at(n, ci, ih as usize, iw as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(Shape::new(2, 1, 5, 4), &mut rng);
        let p = ConvParams {
            weight: Tensor::full(Shape::new(1, 1, 1, 1), 1.0),
            bias: Some(Tensor::zeros(Shape::channels(1))),
            kernel_size: 1,
            padding: PaddingMode::Same,
        };
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let c = 1.75;
        let x = Tensor::full(Shape::new(1, 1, 6, 5), c);
        let p = ConvParams {
            weight: Tensor::full(Shape::new(1, 1, 3, 3), 1.0),
            bias: None,
            kernel_size: 3,
            padding: PaddingMode::Valid,
        };
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 3));
        assert!(y.data().iter().all(|&v| v == 9.0 * c));
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (k, padding) in [(1, PaddingMode::Same), (2, PaddingMode::Same), (3, PaddingMode::Same), (2, PaddingMode::Valid), (3, PaddingMode::Valid)] {
            let x = random(Shape::new(2, 3, 6, 7), &mut rng);
            let p = ConvParams {
                weight: random(Shape::new(4, 3, k, k), &mut rng),
                bias: Some(random(Shape::channels(4), &mut rng)),
                kernel_size: k,
                padding,
            };
            let d = conv2d(&x, &p).unwrap().max_abs_diff(&naive(&x, &p)).unwrap();
            assert!(d < 1e-12, "k={k} {padding:?}: {d}");
        }
    }

    #[test]
    fn same_padding_preserves_size() {
        for k in [2, 3] {
            for (h, w) in [(5, 5), (4, 7), (8, 8)] {
                let x = Tensor::zeros(Shape::new(1, 1, h, w));
                let p = ConvParams { weight: Tensor::zeros(Shape::new(2, 1, k, k)), bias: None, kernel_size: k, padding: PaddingMode::Same };
                let y = conv2d(&x, &p).unwrap();
                assert_eq!((y.shape().h, y.shape().w), (h, w));
            }
        }
    }

    #[test]
    fn linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x1 = random(Shape::new(1, 2, 6, 6), &mut rng);
        let x2 = random(Shape::new(1, 2, 6, 6), &mut rng);
        let p = ConvParams { weight: random(Shape::new(3, 2, 3, 3), &mut rng), bias: None, kernel_size: 3, padding: PaddingMode::Same };
        let (a, b) = (1.7, -0.4);
        let mix = Tensor::new(x1.shape(), x1.data().iter().zip(x2.data()).map(|(u, v)| a * u + b * v).collect()).unwrap();
        let lhs = conv2d(&mix, &p).unwrap();
        let (y1, y2) = (conv2d(&x1, &p).unwrap(), conv2d(&x2, &p).unwrap());
        let rhs = Tensor::new(y1.shape(), y1.data().iter().zip(y2.data()).map(|(u, v)| a * u + b * v).collect()).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-9);
    }

    #[test]
    fn errors() {
        let x = Tensor::zeros(Shape::new(1, 2, 2, 2));
        let p = ConvParams { weight: Tensor::zeros(Shape::new(1, 3, 3, 3)), bias: None, kernel_size: 3, padding: PaddingMode::Same };
        assert!(matches!(conv2d(&x, &p), Err(Error::ChannelMismatch { expected: 3, got: 2 })));
        let p = ConvParams { weight: Tensor::zeros(Shape::new(1, 2, 3, 3)), bias: None, kernel_size: 3, padding: PaddingMode::Valid };
        assert!(matches!(conv2d(&x, &p), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (k, padding) in [(3, PaddingMode::Same), (2, PaddingMode::Same), (3, PaddingMode::Valid)] {
            let x = random(Shape::new(1, 2, 5, 5), &mut rng);
            let w = random(Shape::new(3, 2, k, k), &mut rng);
            let b = random(Shape::channels(3), &mut rng);
            let r = gradcheck_many(|t, v| t.conv2d(v[0], v[1], Some(v[2]), padding), &[x, w, b], 1e-6).unwrap();
            assert!(r.max_rel_error <= 1e-4, "k={k} {padding:?}: {r:?}");
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(Shape::new(4, 3, 8, 8), &mut rng);
        let w = random(Shape::new(5, 3, 3, 3), &mut rng);
        let run = |exec: Exec| {
            let mut tape = Tape::with_exec(exec);
            let xv = tape.leaf(x.clone().with_requires_grad(true));
            let wv = tape.leaf(w.clone().with_requires_grad(true));
            let y = tape.conv2d(xv, wv, None, PaddingMode::Same).unwrap();
            let y2 = tape.mul(y, y).unwrap();
            let s = tape.sum(y2);
            tape.backward(s).unwrap();
            (tape.value(y).clone(), tape.grad(xv).unwrap().to_vec(), tape.grad(wv).unwrap().to_vec())
        };
        assert_eq!(run(Exec::Sequential), run(Exec::default()));
    }
}
