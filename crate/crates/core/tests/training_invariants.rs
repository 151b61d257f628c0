mod common;

use common::{canonical_2x2, linear_dataset};
use rtsnet::rtsnet::RtsNetModel;
use rtsnet::ssmodel::{canonical_linear, generate_trajectories, NoiseConfig, StateSpaceModel};
use rtsnet::training::{evaluate, train, TrainConfig, Trainer};

#[test]
fn loss_decreases_over_five_epochs_for_most_seeds() {
    let ss = canonical_2x2(0.0);
    let data = linear_dataset(&ss, 100, 1000, 20, 40);
    let mut decreasing = 0;
    for seed in 0..10 {
        let mut net = RtsNetModel::for_model(&ss, seed).unwrap();
        let config = TrainConfig {
            epochs: 5,
            seed,
            ..TrainConfig::default()
        };
        let trainer = train(&mut net, &data, &config).unwrap();
        let losses: Vec<f64> = trainer.history.iter().map(|r| r.train_loss).collect();
        if losses.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 9, "only {decreasing} of 10 seeds decreased monotonically");
}

#[test]
fn validation_error_drops_ten_db_from_the_untrained_model() {
    let ss = canonical_2x2(0.0);
    let data = linear_dataset(&ss, 100, 1000, 100, 41);
    let mut net = RtsNetModel::for_model(&ss, 0).unwrap();
    let untrained = evaluate(&net, &data.validation).unwrap().mse_db;
    let config = TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&net, config).unwrap();
    let mut best = f64::INFINITY;
    for _ in 0..100 {
        best = best.min(trainer.run_epoch(&mut net, &data).unwrap().val_mse_db);
        if untrained - best >= 10.0 {
            break;
        }
    }
    assert!(
        untrained - best >= 10.0,
        "untrained {untrained:.3} dB, best {best:.3} dB after {} epochs",
        trainer.epoch
    );
}

#[test]
fn trained_on_short_sequences_evaluates_on_long_ones() {
    let (f, h) = canonical_linear(5, 5, 0.9);
    let ss = StateSpaceModel::linear(f, h, NoiseConfig::from_db(0.0, -20.0)).unwrap();
    let data = linear_dataset(&ss, 20, 200, 50, 42);
    let mut net = RtsNetModel::for_model(&ss, 0).unwrap();
    let config = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    train(&mut net, &data, &config).unwrap();
    let short = evaluate(&net, &data.test).unwrap().mse_db;
    let long_set = generate_trajectories(&ss, &[0.0; 5], 0.0, 1000, 5, 43).unwrap();
    let long = evaluate(&net, &long_set).unwrap();
    assert_eq!(long.per_trajectory.len(), 5);
    assert!(
        (long.mse_db - short).abs() < 1.0,
        "T=20: {short:.3} dB, T=1000: {:.3} dB",
        long.mse_db
    );
}
