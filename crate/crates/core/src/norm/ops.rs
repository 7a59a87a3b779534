//! Differentiable building blocks of the normalization layers.

use crate::tensor::{moments, Backward, BackwardCtx, Partition, Shape, Tape, Tensor, Var};
use crate::{Error, Result};

/// Per-cell statistics of one standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct CellStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

struct StandardizeRule {
    partition: Partition,
    inv_std: Vec<f64>,
}

impl Backward for StandardizeRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let shape = ctx.output.shape();
        let plane = shape.plane();
        let xhat = ctx.output.data();
        let g = ctx.grad;
        let count = self.partition.cell_len(shape) as f64;
        let cells = self.inv_std.len();

        let mut mean_g = vec![0.0; cells];
        let mut mean_gx = vec![0.0; cells];
        for p in 0..shape.n * shape.c {
            let cell = self.partition.cell_of(shape, p / shape.c, p % shape.c);
            let r = p * plane..(p + 1) * plane;
            mean_g[cell] += g[r.clone()].iter().sum::<f64>();
            mean_gx[cell] += g[r.clone()].iter().zip(&xhat[r]).map(|(a, b)| a * b).sum::<f64>();
        }
        mean_g.iter_mut().for_each(|v| *v /= count);
        mean_gx.iter_mut().for_each(|v| *v /= count);

        let mut dx = vec![0.0; g.len()];
        for p in 0..shape.n * shape.c {
            let cell = self.partition.cell_of(shape, p / shape.c, p % shape.c);
            let (s, mg, mgx) = (self.inv_std[cell], mean_g[cell], mean_gx[cell]);
            for i in p * plane..(p + 1) * plane {
                dx[i] = s * (g[i] - mg - xhat[i] * mgx);
            }
        }
        vec![Some(dx)]
    }
}

struct ChannelAffineRule {
    has_shift: bool,
}

impl Backward for ChannelAffineRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let x = ctx.inputs[0];
        let scale = ctx.inputs[1].data();
        let shape = x.shape();
        let plane = shape.plane();
        let g = ctx.grad;
        let dx = ctx.needs[0].then(|| {
            let mut dx = vec![0.0; g.len()];
            for p in 0..shape.n * shape.c {
                let s = scale[p % shape.c];
                for i in p * plane..(p + 1) * plane {
                    dx[i] = g[i] * s;
                }
            }
            dx
        });
        let dscale = ctx.needs[1].then(|| {
            let mut d = vec![0.0; shape.c];
            for p in 0..shape.n * shape.c {
                let r = p * plane..(p + 1) * plane;
                d[p % shape.c] += g[r.clone()].iter().zip(&x.data()[r]).map(|(a, b)| a * b).sum::<f64>();
            }
            d
        });
        let mut out = vec![dx, dscale];
        if self.has_shift {
            out.push(ctx.needs[2].then(|| {
                let mut d = vec![0.0; shape.c];
                for p in 0..shape.n * shape.c {
                    d[p % shape.c] += g[p * plane..(p + 1) * plane].iter().sum::<f64>();
                }
                d
            }));
        }
        out
    }
}

struct BlendRule;

impl Backward for BlendRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let (a, b, rho) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
        let shape = ctx.output.shape();
        let plane = shape.plane();
        let g = ctx.grad;
        let ratio: Vec<f64> = rho.iter().map(|&r| crate::tensor::sigmoid(r)).collect();
        let mut da = vec![0.0; g.len()];
        let mut db = vec![0.0; g.len()];
        let mut drho = vec![0.0; shape.c];
        for p in 0..shape.n * shape.c {
            let c = p % shape.c;
            let r = ratio[c];
            let mut acc = 0.0;
            for i in p * plane..(p + 1) * plane {
                da[i] = g[i] * r;
                db[i] = g[i] * (1.0 - r);
                acc += g[i] * (a[i] - b[i]);
            }
            drho[c] += acc * r * (1.0 - r);
        }
        vec![ctx.needs[0].then_some(da), ctx.needs[1].then_some(db), ctx.needs[2].then_some(drho)]
    }
}

fn check_channel_vector(x: Shape, v: Shape) -> Result<()> {
    if v != Shape::channels(x.c) {
        return Err(Error::ShapeMismatch { left: Shape::channels(x.c), right: v });
    }
    Ok(())
}

impl Tape {
    /// `(x − μ) / sqrt(σ² + eps)` with statistics from the partition cells.
    pub fn standardize(&mut self, x: Var, partition: Partition, eps: f64) -> Result<(Var, CellStats)> {
        let xt = self.value(x);
        let m = moments(xt, partition)?;
        let (mean, var) = (m.mean.into_data(), m.var.into_data());
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let shape = xt.shape();
        let plane = shape.plane();
        let mut out = xt.data().to_vec();
        for p in 0..shape.n * shape.c {
            let cell = partition.cell_of(shape, p / shape.c, p % shape.c);
            let (mu, s) = (mean[cell], inv_std[cell]);
            out[p * plane..(p + 1) * plane].iter_mut().for_each(|v| *v = (*v - mu) * s);
        }
        let out = Tensor::new(shape, out)?;
        let var_out = self.record(&[x], out, StandardizeRule { partition, inv_std });
        Ok((var_out, CellStats { mean, var }))
    }

    /// Per-channel `x · scale + shift`; `scale` and `shift` are `(1, C, 1, 1)`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Option<Var>) -> Result<Var> {
        let shape = self.shape(x);
        check_channel_vector(shape, self.shape(scale))?;
        if let Some(s) = shift {
            check_channel_vector(shape, self.shape(s))?;
        }
        let plane = shape.plane();
        let sc = self.value(scale).data();
        let sh = shift.map(|s| self.value(s).data());
        let mut out = self.value(x).data().to_vec();
        for p in 0..shape.n * shape.c {
            let c = p % shape.c;
            let (a, b) = (sc[c], sh.map_or(0.0, |s| s[c]));
            out[p * plane..(p + 1) * plane].iter_mut().for_each(|v| *v = *v * a + b);
        }
        let out = Tensor::new(shape, out)?;
        let rule = ChannelAffineRule { has_shift: shift.is_some() };
        Ok(match shift {
            Some(s) => self.record(&[x, scale, s], out, rule),
            None => self.record(&[x, scale], out, rule),
        })
    }

    /// Per-channel convex blend `r·a + (1 − r)·b` with `r = sigmoid(rho)`.
    pub fn blend(&mut self, a: Var, b: Var, rho: Var) -> Result<Var> {
        let shape = self.shape(a);
        if self.shape(b) != shape {
            return Err(Error::ShapeMismatch { left: shape, right: self.shape(b) });
        }
        check_channel_vector(shape, self.shape(rho))?;
        let plane = shape.plane();
        let ratio: Vec<f64> = self.value(rho).data().iter().map(|&r| crate::tensor::sigmoid(r)).collect();
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; ad.len()];
        for p in 0..shape.n * shape.c {
            let r = ratio[p % shape.c];
            for i in p * plane..(p + 1) * plane {
                out[i] = r * ad[i] + (1.0 - r) * bd[i];
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.record(&[a, b, rho], out, BlendRule))
    }
}
