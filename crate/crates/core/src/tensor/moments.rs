//! Per-partition mean and population variance.

use super::{Shape, Tensor};
use crate::{Error, Result};

/// Which elements share a statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    /// One cell per channel, over `(N, H, W)`.
    Batch,
    /// One cell per sample, over `(C, H, W)`.
    Layer,
    /// One cell per `(sample, channel)`, over `(H, W)`.
    Instance,
    /// One cell per `(sample, group)` of `C / G` consecutive channels.
    Group(usize),
}

impl Partition {
    /// Validate against `shape` and return the shape of the statistics tensor:
    /// `(1, C, 1, 1)`, `(N, 1, 1, 1)`, `(N, C, 1, 1)` or `(N, G, 1, 1)`.
    pub fn stats_shape(self, shape: Shape) -> Result<Shape> {
        if shape.numel() == 0 {
            return Err(Error::EmptyPartition);
        }
        Ok(match self {
            Partition::Batch => Shape::new(1, shape.c, 1, 1),
            Partition::Layer => Shape::new(shape.n, 1, 1, 1),
            Partition::Instance => Shape::new(shape.n, shape.c, 1, 1),
            Partition::Group(g) => {
                if g == 0 || !shape.c.is_multiple_of(g) {
                    return Err(Error::GroupsDoNotDivide { groups: g, channels: shape.c });
                }
                Shape::new(shape.n, g, 1, 1)
            }
        })
    }

    /// Cell that the `(n, c)` plane belongs to.
    #[inline]
    pub(crate) fn cell_of(self, shape: Shape, n: usize, c: usize) -> usize {
        match self {
            Partition::Batch => c,
            Partition::Layer => n,
            Partition::Instance => n * shape.c + c,
            Partition::Group(g) => n * g + c / (shape.c / g),
        }
    }

    /// Number of elements per cell.
    pub(crate) fn cell_len(self, shape: Shape) -> usize {
        let plane = shape.plane();
        match self {
            Partition::Batch => shape.n * plane,
            Partition::Layer => shape.c * plane,
            Partition::Instance => plane,
            Partition::Group(g) => (shape.c / g) * plane,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Tensor,
    pub var: Tensor,
}

impl Moments {
    /// Expand per-cell statistics back onto `shape`.
    pub fn broadcast(&self, partition: Partition, shape: Shape) -> (Tensor, Tensor) {
        let plane = shape.plane();
        let mut mean = Vec::with_capacity(shape.numel());
        let mut var = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                let cell = partition.cell_of(shape, n, c);
                mean.extend(std::iter::repeat_n(self.mean.data()[cell], plane));
                var.extend(std::iter::repeat_n(self.var.data()[cell], plane));
            }
        }
        (Tensor::new(shape, mean).unwrap(), Tensor::new(shape, var).unwrap())
    }
}

/// Raw per-cell `(mean, variance)` vectors; two-pass, population variance.
pub(crate) fn cell_moments(x: &Tensor, partition: Partition) -> Result<(Vec<f64>, Vec<f64>)> {
    let shape = x.shape();
    let cells = partition.stats_shape(shape)?.numel();
    let plane = shape.plane();
    let count = partition.cell_len(shape) as f64;
    let data = x.data();

    let mut mean = vec![0.0; cells];
    for (p, chunk) in data.chunks_exact(plane).enumerate() {
        let cell = partition.cell_of(shape, p / shape.c, p % shape.c);
        mean[cell] += chunk.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let mut var = vec![0.0; cells];
    for (p, chunk) in data.chunks_exact(plane).enumerate() {
        let cell = partition.cell_of(shape, p / shape.c, p % shape.c);
        let m = mean[cell];
        var[cell] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= count);
    Ok((mean, var))
}

/// Mean and population variance (divide by count) of every partition cell.
pub fn moments(x: &Tensor, partition: Partition) -> Result<Moments> {
    let stats = partition.stats_shape(x.shape())?;
    let (mean, var) = cell_moments(x, partition)?;
    Ok(Moments { mean: Tensor::new(stats, mean)?, var: Tensor::new(stats, var)? })
}
