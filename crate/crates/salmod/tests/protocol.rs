//! Protocol-level integration checks: the synthetic task must be genuinely
//! learnable when class separation is maximal, and the scarce-data grid must
//! be fully reproducible at the library level.

use salmod::data::{self, DatasetSpec};
use salmod::model::{NetworkConfig, Variant};
use salmod::train::{
    evaluate, scarce_protocol, train, Hyperparams, ProtocolOptions, TrainOptions,
};

/// With maximally distinct classes (delta = 1) and the full training pool,
/// the plain RGB classifier must solve the 10-class task nearly perfectly.
/// This is the advertised sanity bar for the generator and training loop.
/// Light clutter keeps the check about the pipeline; heavy clutter is the
/// designed difficulty axis and is exercised by the accuracy-gap checks.
#[test]
fn easy_task_full_pool_exceeds_90_percent() {
    let spec = DatasetSpec {
        num_classes: 10,
        samples_per_class: 40,
        image_size: (64, 64),
        subtlety: 1.0,
        clutter: 0.15,
        seed: 33,
        ..DatasetSpec::default()
    };
    let dataset = data::generate(&spec).unwrap();
    let plan = data::split(&dataset).unwrap();
    let subset = data::subset(&plan, plan.min_pool(), 0).unwrap();
    let cfg = NetworkConfig {
        variant: Variant::BaselineRgb,
        num_classes: 10,
        pool_position: None,
        ..NetworkConfig::default()
    };
    let state = salmod::model::init_model(&cfg, (64, 64), 1).unwrap();
    let (trained, _) = train(
        state,
        &dataset,
        &subset,
        &Hyperparams::default(),
        0,
        &TrainOptions::default(),
    )
    .unwrap();
    let test_acc = evaluate(&trained, &dataset, &plan.test).unwrap();
    assert!(
        test_acc > 90.0,
        "easy task should be nearly solved, got {test_acc:.1}% on the test split"
    );
}

/// Two independent executions of the same grid must agree in every cell and
/// in every logged loss, without any filesystem involvement.
#[test]
fn scarce_grid_is_deterministic_in_memory() {
    let spec = DatasetSpec {
        num_classes: 4,
        samples_per_class: 14,
        image_size: (32, 32),
        subtlety: 0.8,
        clutter: 0.2,
        seed: 5,
        ..DatasetSpec::default()
    };
    let dataset = data::generate(&spec).unwrap();
    let plan = data::split(&dataset).unwrap();
    let cfg = NetworkConfig {
        variant: Variant::BaselineRgb,
        num_classes: 4,
        pool_position: None,
        ..NetworkConfig::default()
    };
    let hyper = Hyperparams {
        epochs: 3,
        ..Hyperparams::default()
    };
    let run = || {
        scarce_protocol(
            &dataset,
            &plan,
            &cfg,
            &hyper,
            &[1, 3],
            2,
            &ProtocolOptions::default(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.results_csv(), b.results_csv());
    assert_eq!(a.summary_csv(), b.summary_csv());
    for (ca, cb) in a.cells.iter().zip(&b.cells) {
        assert_eq!(ca.accuracy.to_bits(), cb.accuracy.to_bits());
        let la: Vec<u64> = ca.epoch_losses.iter().map(|l| l.to_bits()).collect();
        let lb: Vec<u64> = cb.epoch_losses.iter().map(|l| l.to_bits()).collect();
        assert_eq!(la, lb);
    }
}
