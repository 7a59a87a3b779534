//! Finite-difference checks over every differentiable op and a small model of
//! each variant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{Mode, PaddingMode};
use crate::model::{build, UNetSpec, Variant};
use crate::norm::{self, NormKind, NormSpec, NormVars};
use crate::tensor::{gradcheck, gradcheck_many, Shape, Tensor};
use crate::Result;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;
/// Pass threshold on the relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

impl GradEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn random(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let v: f64 = rng.random_range(0.1..2.0);
        if rng.random_bool(0.5) { v } else { -v }
    })
}

/// Distinct values with gaps well above the step, so no pooling window has a near tie.
fn distinct(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let mut values: Vec<f64> = (0..shape.numel()).map(|i| i as f64 * 0.05 - 1.0).collect();
    for i in (1..values.len()).rev() {
        values.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape, values).expect("length matches")
}

fn entry(name: impl Into<String>, r: crate::tensor::GradCheck) -> GradEntry {
    GradEntry { name: name.into(), max_rel_error: r.max_rel_error, coordinates: r.coordinates }
}

/// Run the whole suite with step `h`.
pub fn run(h: f64) -> Result<Vec<GradEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut out = Vec::new();

    for (k, padding) in [(2, PaddingMode::Same), (3, PaddingMode::Same), (3, PaddingMode::Valid)] {
        let x = random(Shape::new(1, 2, 5, 5), &mut rng, -1.0, 1.0);
        let w = random(Shape::new(3, 2, k, k), &mut rng, -1.0, 1.0);
        let b = random(Shape::channels(3), &mut rng, -1.0, 1.0);
        let r = gradcheck_many(|t, v| t.conv2d(v[0], v[1], Some(v[2]), padding), &[x, w, b], h)?;
        out.push(entry(format!("conv2d k={k} {padding:?}").to_lowercase(), r));
    }

    let x = away_from_zero(Shape::new(2, 2, 3, 3), &mut rng);
    out.push(entry("elu", gradcheck(|t, v| Ok(t.elu(v, 1.0)), &x, h)?));
    out.push(entry("relu", gradcheck(|t, v| Ok(t.relu(v)), &x, h)?));

    let x = distinct(Shape::new(2, 2, 4, 6), &mut rng);
    out.push(entry("maxpool2", gradcheck(|t, v| t.maxpool2(v), &x, h)?));
    let x = random(Shape::new(1, 2, 3, 3), &mut rng, -1.0, 1.0);
    out.push(entry("upsample2", gradcheck(|t, v| Ok(t.upsample2(v)), &x, h)?));
    let x = random(Shape::new(1, 2, 6, 5), &mut rng, -1.0, 1.0);
    out.push(entry("crop_center", gradcheck(|t, v| t.crop_center(v, 3, 2), &x, h)?));
    let a = random(Shape::new(2, 2, 3, 3), &mut rng, -1.0, 1.0);
    let b = random(Shape::new(2, 3, 3, 3), &mut rng, -1.0, 1.0);
    out.push(entry("concat_channels", gradcheck_many(|t, v| t.concat_channels(v[0], v[1]), &[a, b], h)?));

    for kind in NormKind::ALL {
        let c = 4;
        let spec = NormSpec::new(kind, c).with_groups(2);
        let x = random(Shape::new(3, c, 3, 3), &mut rng, -2.0, 2.0);
        let gamma = random(Shape::channels(c), &mut rng, 0.5, 1.5);
        let beta = random(Shape::channels(c), &mut rng, -0.5, 0.5);
        let rho = random(Shape::channels(c), &mut rng, -1.0, 1.0);
        let mut inputs = vec![x, gamma, beta];
        if kind.is_blend() {
            inputs.push(rho);
        }
        let r = gradcheck_many(
            |t, v| {
                let vars = NormVars { gamma: v[1], beta: v[2], rho: v.get(3).copied() };
                Ok(norm::forward(t, v[0], &spec, &vars, None, Mode::Train)?.output)
            },
            &inputs,
            h,
        )?;
        out.push(entry(format!("norm {kind:?}").to_lowercase(), r));
    }

    let shape = Shape::new(2, 1, 4, 4);
    let z = random(shape, &mut rng, -3.0, 3.0);
    let truth = Tensor::from_fn(shape, |_, _, _, _| rng.random_bool(0.4) as u8 as f64);
    out.push(entry("soft_dice_loss", gradcheck(|t, v| t.soft_dice_loss(v, &truth), &z, h)?));
    out.push(entry("bce_loss", gradcheck(|t, v| t.bce_loss(v, &truth), &z, h)?));

    for variant in Variant::ALL {
        let spec = UNetSpec { depth: 1, base_channels: 2, groups: 2, variant, ..UNetSpec::default() };
        let model = build(&spec, 0x3A + variant as u64)?;
        let x = random(Shape::new(2, 1, 8, 8), &mut rng, -1.0, 1.0);
        let mut inputs = vec![x];
        inputs.extend(model.params().iter().map(|(_, t)| t.clone()));
        let r = gradcheck_many(
            |t, v| Ok(model.forward_vars(t, v[0], &v[1..], Mode::Train, 0)?.0),
            &inputs,
            h,
        )?;
        out.push(entry(format!("model {variant} depth=1"), r));
    }
    Ok(out)
}
