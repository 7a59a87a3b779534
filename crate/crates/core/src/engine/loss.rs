//! Segmentation losses on logits.

use serde::{Deserialize, Serialize};

use crate::tensor::{sigmoid, Backward, BackwardCtx, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftDice,
    Bce,
    /// `soft_dice + bce`.
    Sum,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft_dice" => Ok(LossKind::SoftDice),
            "bce" => Ok(LossKind::Bce),
            "sum" => Ok(LossKind::Sum),
            _ => Err(Error::InvalidConfig(format!("unknown loss {s:?} (expected soft_dice, bce or sum)"))),
        }
    }
}

fn check(tape: &Tape, logits: Var, truth: &Tensor) -> Result<()> {
    let shape = tape.shape(logits);
    if shape != truth.shape() {
        return Err(Error::ShapeMismatch { left: shape, right: truth.shape() });
    }
    Ok(())
}

/// Per-sample sums `(Σ p·t, Σ p, Σ t)`.
fn dice_sums(p: &[f64], t: &[f64], plane: usize) -> Vec<(f64, f64, f64)> {
    p.chunks(plane)
        .zip(t.chunks(plane))
        .map(|(p, t)| {
            p.iter().zip(t).fold((0.0, 0.0, 0.0), |(i, sp, st), (&p, &t)| (i + p * t, sp + p, st + t))
        })
        .collect()
}

struct SoftDiceRule {
    truth: Vec<f64>,
    probs: Vec<f64>,
    plane: usize,
}

impl Backward for SoftDiceRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let g = ctx.grad[0];
        let sums = dice_sums(&self.probs, &self.truth, self.plane);
        let n = sums.len() as f64;
        let mut dz = vec![0.0; self.probs.len()];
        for (s, &(i, sp, st)) in sums.iter().enumerate() {
            let den = sp + st + 1.0;
            let num = 2.0 * i + 1.0;
            let cell = s * self.plane..(s + 1) * self.plane;
            for ((d, &p), &t) in dz[cell.clone()].iter_mut().zip(&self.probs[cell.clone()]).zip(&self.truth[cell]) {
                let dl_dp = -(2.0 * t * den - num) / (den * den) / n;
                *d = g * dl_dp * p * (1.0 - p);
            }
        }
        vec![Some(dz)]
    }
}

struct BceRule {
    truth: Vec<f64>,
}

impl Backward for BceRule {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> {
        let scale = ctx.grad[0] / self.truth.len() as f64;
        let z = ctx.inputs[0].data();
        vec![Some(z.iter().zip(&self.truth).map(|(&z, &t)| scale * (sigmoid(z) - t)).collect())]
    }
}

/// `1 − (2Σσ(z)t + 1) / (Σσ(z) + Σt + 1)` per sample, averaged over the batch.
pub fn soft_dice_value(logits: &Tensor, truth: &Tensor) -> f64 {
    let probs: Vec<f64> = logits.data().iter().map(|&z| sigmoid(z)).collect();
    let sums = dice_sums(&probs, truth.data(), logits.shape().plane() * logits.shape().c);
    sums.iter().map(|&(i, p, t)| 1.0 - (2.0 * i + 1.0) / (p + t + 1.0)).sum::<f64>() / sums.len() as f64
}

/// Mean of `max(z, 0) − z·t + ln(1 + e^{−|z|})`.
pub fn bce_value(logits: &Tensor, truth: &Tensor) -> f64 {
    let total: f64 = logits
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum();
    total / logits.numel() as f64
}

impl Tape {
    pub fn soft_dice_loss(&mut self, logits: Var, truth: &Tensor) -> Result<Var> {
        check(self, logits, truth)?;
        let z = self.value(logits);
        let value = soft_dice_value(z, truth);
        let shape = z.shape();
        let probs = z.data().iter().map(|&v| sigmoid(v)).collect();
        let rule = SoftDiceRule { truth: truth.data().to_vec(), probs, plane: shape.c * shape.plane() };
        Ok(self.record(&[logits], Tensor::scalar(value), rule))
    }

    pub fn bce_loss(&mut self, logits: Var, truth: &Tensor) -> Result<Var> {
        check(self, logits, truth)?;
        let value = bce_value(self.value(logits), truth);
        Ok(self.record(&[logits], Tensor::scalar(value), BceRule { truth: truth.data().to_vec() }))
    }

    pub fn loss(&mut self, kind: LossKind, logits: Var, truth: &Tensor) -> Result<Var> {
        match kind {
            LossKind::SoftDice => self.soft_dice_loss(logits, truth),
            LossKind::Bce => self.bce_loss(logits, truth),
            LossKind::Sum => {
                let d = self.soft_dice_loss(logits, truth)?;
                let b = self.bce_loss(logits, truth)?;
                self.add(d, b)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use crate::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth(shape: Shape, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.random_bool(0.4) as u8 as f64)
    }

    #[test]
    fn soft_dice_limits() {
        let t = truth(Shape::new(2, 1, 4, 4), 1);
        let perfect = Tensor::new(t.shape(), t.data().iter().map(|&v| if v > 0.0 { 60.0 } else { -60.0 }).collect()).unwrap();
        assert!(soft_dice_value(&perfect, &t) < 1e-12);
        let empty = Tensor::zeros(t.shape());
        assert!(soft_dice_value(&Tensor::full(t.shape(), -60.0), &empty) < 1e-12);
    }

    #[test]
    fn bce_values() {
        let t = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        assert!((bce_value(&Tensor::zeros(t.shape()), &t) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_value(&Tensor::full(t.shape(), 800.0), &t) < 1e-300);
        assert!(bce_value(&Tensor::full(t.shape(), -800.0), &Tensor::zeros(t.shape())) < 1e-300);
    }

    #[test]
    fn bce_gradient_is_sigmoid_minus_truth() {
        let shape = Shape::new(2, 1, 3, 3);
        let t = truth(shape, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-4.0..4.0));
        let mut tape = Tape::new();
        let zv = tape.leaf(z.clone().with_requires_grad(true));
        let l = tape.bce_loss(zv, &t).unwrap();
        tape.backward(l).unwrap();
        for ((g, &z), &t) in tape.grad(zv).unwrap().iter().zip(z.data()).zip(t.data()) {
            assert!((g - (sigmoid(z) - t) / 18.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gradchecks() {
        let shape = Shape::new(3, 1, 4, 4);
        let t = truth(shape, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-3.0..3.0));
        for kind in [LossKind::SoftDice, LossKind::Bce, LossKind::Sum] {
            let r = gradcheck(|tape, x| tape.loss(kind, x, &t), &z, 1e-6).unwrap();
            assert!(r.max_rel_error <= 1e-5, "{kind:?}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        assert!(tape.soft_dice_loss(z, &Tensor::zeros(Shape::new(1, 1, 2, 3))).is_err());
        assert!(tape.bce_loss(z, &Tensor::zeros(Shape::new(2, 1, 2, 2))).is_err());
    }
}
