//! Training-loop behaviour on small phantom runs.

use lvseg::data::{synth_phantom, CineSample};
use lvseg::engine::{evaluate, train, TrainConfig};
use lvseg::metrics::ApdMode;
use lvseg::model::{build, UNetSpec, Variant};
use lvseg::Exec;

fn small_config(seed: u64, epochs: usize) -> TrainConfig {
    let model = UNetSpec { depth: 2, base_channels: 4, groups: 2, variant: Variant::Gbu, ..UNetSpec::default() };
    TrainConfig { epochs, batch_size: 8, learning_rate: 3e-3, seed, model, ..TrainConfig::default() }
}

#[test]
fn loss_decreases_over_first_ten_epochs_for_most_seeds() {
    let mut decreasing = 0;
    for seed in 0..3 {
        let data = synth_phantom(16, 32, seed).unwrap();
        let cfg = small_config(seed, 10);
        let out = train(build(&cfg.model, seed).unwrap(), &data, &[], &cfg, Exec::default()).unwrap();
        let (first, last) = (out.history[0].train_loss, out.history[9].train_loss);
        decreasing += (last < first) as usize;
    }
    assert!(decreasing >= 2, "loss decreased for only {decreasing} of 3 seeds");
}

#[test]
fn evaluation_is_side_effect_free() {
    let data = synth_phantom(8, 32, 4).unwrap();
    let cfg = small_config(4, 2);
    let model = train(build(&cfg.model, 4).unwrap(), &data, &[], &cfg, Exec::default()).unwrap().model;
    let refs: Vec<&CineSample> = data.iter().collect();
    let snapshot = model.clone();
    let a = evaluate(&model, &refs, ApdMode::Directed, Exec::default()).unwrap();
    let b = evaluate(&model, &refs, ApdMode::Directed, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(model, snapshot);
}
