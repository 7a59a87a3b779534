//! Property tests over randomly generated inputs.

use proptest::prelude::*;

use lvseg::augment::{self, affine_with, elastic, rotate_by, AffineParams, AugmentConfig};
use lvseg::data::{parse_contour, serialize_contour, split_patients, CineSample, Subset};
use lvseg::grid::Mask;
use lvseg::layers::{conv2d_with, drop_connect, ConvParams, DropConnectState, Mode, PaddingMode};
use lvseg::metrics::{self, apd, ApdMode, ContourPolyline};
use lvseg::norm::{normalize, NormKind, NormSpec, NormState};
use lvseg::tensor::{moments, Partition};
use lvseg::{Exec, Grid, Shape, Tape, Tensor};

fn mask(rows: usize, cols: usize) -> impl Strategy<Value = Mask> {
    (0.0..1.0f64, any::<u64>()).prop_map(move |(density, seed)| {
        use rand::Rng;
        let mut rng = lvseg::rng::stream(seed, &[]);
        Grid::from_fn(rows, cols, |_, _| rng.random_bool(density) as u8)
    })
}

fn tensor(shape: Shape, range: std::ops::Range<f64>) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(range, shape.numel()).prop_map(move |v| Tensor::new(shape, v).unwrap())
}

/// Closed star-shaped polygon with distinct, well-separated vertices.
fn polygon() -> impl Strategy<Value = ContourPolyline> {
    (3usize..24, any::<u64>(), -20.0..20.0f64, -20.0..20.0f64).prop_map(|(n, seed, cx, cy)| {
        use rand::Rng;
        let mut rng = lvseg::rng::stream(seed, &[]);
        let points = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * (i as f64 + rng.random_range(0.0..0.5)) / n as f64;
                let r = rng.random_range(1.0..10.0);
                (cx + r * t.cos(), cy + r * t.sin())
            })
            .collect();
        ContourPolyline::closed(points).unwrap()
    })
}

fn counts(p: &Mask, t: &Mask) -> (usize, usize, usize) {
    let tp = p.as_slice().iter().zip(t.as_slice()).filter(|(a, b)| **a == 1 && **b == 1).count();
    (tp, p.count_foreground(), t.count_foreground())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dice_is_symmetric(p in mask(12, 9), t in mask(12, 9)) {
        prop_assert_eq!(metrics::dice(&p, &t).unwrap(), metrics::dice(&t, &p).unwrap());
    }

    #[test]
    fn dice_and_sensitivity_share_the_overlap_count(p in mask(16, 16), t in mask(16, 16)) {
        let (tp, np, nt) = counts(&p, &t);
        prop_assume!(nt > 0);
        let dice = metrics::dice(&p, &t).unwrap();
        let sens = metrics::sensitivity(&p, &t).unwrap().unwrap();
        // Both metrics recover the same integer overlap.
        prop_assert_eq!((dice * (np + nt) as f64 / 2.0).round() as usize, tp);
        prop_assert_eq!((sens * nt as f64).round() as usize, tp);
        prop_assert!((dice - sens * 2.0 * nt as f64 / (np + nt) as f64).abs() <= 1e-12);
    }

    #[test]
    fn apd_translation_invariant_and_linear_in_spacing(
        a in polygon(), b in polygon(), dx in -50.0..50.0f64, dy in -50.0..50.0f64, s in 0.25..4.0f64,
    ) {
        let base = apd(&a, &b, (1.0, 1.0), ApdMode::Directed).unwrap();
        let moved = apd(&a.translated(dx, dy), &b.translated(dx, dy), (1.0, 1.0), ApdMode::Directed).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9);
        let scaled = apd(&a, &b, (s, s), ApdMode::Directed).unwrap();
        prop_assert!((scaled - s * base).abs() <= 1e-12 * (1.0 + scaled));
        let sym = apd(&a, &b, (1.0, 1.0), ApdMode::Symmetric).unwrap();
        prop_assert!((sym - 0.5 * (base + apd(&b, &a, (1.0, 1.0), ApdMode::Directed).unwrap())).abs() <= 1e-12);
    }

    #[test]
    fn contour_text_round_trips(c in polygon()) {
        let text = serialize_contour(&c);
        prop_assert_eq!(parse_contour(&text).unwrap(), c);
    }

    #[test]
    fn moments_match_expected_squared_deviation(x in tensor(Shape::new(3, 4, 3, 5), -5.0..5.0)) {
        for p in [Partition::Batch, Partition::Layer, Partition::Instance, Partition::Group(2)] {
            let m = moments(&x, p).unwrap();
            let (mean, var) = m.broadcast(p, x.shape());
            // Each cell's variance equals the mean squared deviation of its members.
            let sq: Vec<f64> = x.data().iter().zip(mean.data()).map(|(v, mu)| (v - mu).powi(2)).collect();
            let sq = Tensor::new(x.shape(), sq).unwrap();
            let again = moments(&sq, p).unwrap();
            for (a, b) in again.mean.data().iter().zip(m.var.data()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
            prop_assert_eq!(var.shape(), x.shape());
        }
    }

    #[test]
    fn sum_backward_is_ones(x in tensor(Shape::new(2, 3, 2, 4), -3.0..3.0)) {
        let mut tape = Tape::new();
        let v = tape.leaf(x.with_requires_grad(true));
        let s = tape.sum(v);
        tape.backward(s).unwrap();
        prop_assert!(tape.grad(v).unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn conv_is_linear_in_input(
        x1 in tensor(Shape::new(1, 2, 6, 5), -1.0..1.0),
        x2 in tensor(Shape::new(1, 2, 6, 5), -1.0..1.0),
        w in tensor(Shape::new(3, 2, 3, 3), -1.0..1.0),
        a in -2.0..2.0f64, b in -2.0..2.0f64, k in 2usize..4,
    ) {
        let w = Tensor::new(Shape::new(3, 2, k, k), w.data()[..3 * 2 * k * k].to_vec()).unwrap();
        let p = ConvParams { weight: w, bias: None, kernel_size: k, padding: PaddingMode::Same };
        let mix: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(u, v)| a * u + b * v).collect();
        let lhs = conv2d_with(Exec::Sequential, &Tensor::new(x1.shape(), mix).unwrap(), &p).unwrap();
        let (y1, y2) = (conv2d_with(Exec::Sequential, &x1, &p).unwrap(), conv2d_with(Exec::Sequential, &x2, &p).unwrap());
        prop_assert_eq!(lhs.shape(), Shape::new(1, 3, 6, 5));
        for ((l, u), v) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
            prop_assert!((l - (a * u + b * v)).abs() <= 1e-9);
        }
    }

    #[test]
    fn drop_connect_replays_from_seed(seed in any::<u64>(), rate in 0.0..0.9f64) {
        let w = Tensor::from_fn(Shape::new(4, 3, 3, 3), |o, i, h, k| (o + i + h + k) as f64 + 1.0);
        let p = ConvParams { weight: w, bias: None, kernel_size: 3, padding: PaddingMode::Same };
        let s = DropConnectState { rate, mode: Mode::Train, rng_seed: seed };
        let (a, b) = (drop_connect(&p, &s).unwrap(), drop_connect(&p, &s).unwrap());
        prop_assert_eq!(a.weight.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.weight.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn blend_at_ratio_zero_is_the_partner_kind(x in tensor(Shape::new(3, 4, 3, 3), -2.0..2.0)) {
        for (blend, partner) in [(NormKind::BlendGroupBatch, NormKind::Group), (NormKind::BlendInstanceBatch, NormKind::Instance)] {
            let spec = NormSpec::new(blend, 4).with_groups(2);
            let mut state = NormState::new(&spec);
            state.rho = Some(Tensor::full(Shape::channels(4), -50.0));
            let partner_spec = NormSpec::new(partner, 4).with_groups(2);
            let got = normalize(&x, &spec, &state, Mode::Train).unwrap();
            let want = normalize(&x, &partner_spec, &NormState::new(&partner_spec), Mode::Train).unwrap();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn geometric_transforms_keep_masks_binary_and_dims(
        m in mask(20, 17), degrees in -180.0..180.0f64, scale in 0.5..1.5f64, shear in -0.3..0.3f64,
        tx in -5.0..5.0f64, ty in -5.0..5.0f64, alpha in 0.0..40.0f64, sigma in 0.5..6.0f64, seed in any::<u64>(),
    ) {
        let image = m.map(|&v| v as f64 * 0.7 + 0.1);
        let (i1, m1) = rotate_by(&image, &m, degrees).unwrap();
        let (i2, m2) = affine_with(&image, &m, AffineParams { scale, shear, translate: (tx, ty) }).unwrap();
        let (i3, m3) = elastic(&image, &m, alpha, sigma, &mut lvseg::rng::stream(seed, &[])).unwrap();
        for (i, o) in [(i1, m1), (i2, m2), (i3, m3)] {
            prop_assert!(o.is_binary());
            prop_assert_eq!(o.dims(), m.dims());
            prop_assert_eq!(i.dims(), m.dims());
        }
    }

    #[test]
    fn pipeline_replays_bit_identically(m in mask(24, 24), seed in any::<u64>(), index in any::<u64>()) {
        let image = m.map(|&v| v as f64);
        let sample = CineSample::new(image, m, (1.2, 1.2), "c", "0").unwrap();
        let cfg = AugmentConfig { seed, ..AugmentConfig::default() };
        prop_assert_eq!(augment::pipeline(&sample, &cfg, index).unwrap(), augment::pipeline(&sample, &cfg, index).unwrap());
    }

    #[test]
    fn split_never_separates_slices_of_a_case(n in 3usize..60, slices in 1usize..4, seed in any::<u64>(), r in (1usize..4, 0usize..3, 1usize..4)) {
        let ids: Vec<String> = (0..n).map(|i| format!("case{i}")).collect();
        let split = split_patients(&ids, r, seed).unwrap();
        let samples: Vec<CineSample> = ids.iter().flat_map(|id| (0..slices).map(move |k| {
            CineSample::new(Grid::filled(2, 2, 0.0), Grid::filled(2, 2, 0), (1.0, 1.0), id.clone(), k.to_string()).unwrap()
        })).collect();
        let mut seen = 0;
        for subset in [Subset::Train, Subset::Validation, Subset::Test] {
            for s in split.select(&samples, subset) {
                prop_assert_eq!(split.subset_of(&s.case_id), Some(subset));
                seen += 1;
            }
        }
        prop_assert_eq!(seen, samples.len());
    }
}
