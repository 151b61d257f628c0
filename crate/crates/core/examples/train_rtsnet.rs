//! Trains RTSNet on a linear system whose observation matrix is known only
//! up to a 10 degree rotation, and compares it with the model-based smoother.

use nalgebra::{DMatrix, DVector};
use rtsnet::classic::rts_smooth;
use rtsnet::rtsnet::RtsNetModel;
use rtsnet::ssmodel::{canonical_linear, generate_trajectories, rotate_observation, NoiseConfig, StateSpaceModel};
use rtsnet::training::{evaluate, score, train, Dataset, TrainConfig};

fn smoother_db(model: &StateSpaceModel, data: &Dataset) -> rtsnet::Result<f64> {
    let sigma0 = DMatrix::zeros(model.m(), model.m());
    let estimates = data
        .test
        .iter()
        .map(|t| {
            rts_smooth(model, &t.initial_state(), &sigma0, &t.observation_vectors())
                .map(|steps| steps.into_iter().map(|s| s.x_smooth).collect::<Vec<DVector<f64>>>())
        })
        .collect::<rtsnet::Result<Vec<_>>>()?;
    Ok(score(&data.test, &estimates)?.mse_db)
}

fn main() -> rtsnet::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let (f, h) = canonical_linear(2, 2, 0.9);
    let noise = NoiseConfig::from_db(10.0, 0.0);
    let truth = StateSpaceModel::linear(f.clone(), h.clone(), noise)?;
    let assumed = StateSpaceModel::linear(f, rotate_observation(&h, 10.0)?, noise)?;

    let train_set = generate_trajectories(&truth, &[0.0, 0.0], 0.0, 100, 500, 1)?;
    let test_set = generate_trajectories(&truth, &[0.0, 0.0], 0.0, 100, 100, 2)?;
    let data = Dataset::with_validation_split(train_set, 0.1, test_set)?;

    let mut net = RtsNetModel::for_model(&assumed, 7)?;
    println!("parameters: {}", net.params.total_count());
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let trainer = train(&mut net, &data, &config)?;
    for r in &trainer.history {
        println!(
            "epoch {:>3}  loss {:.4}  validation {:.3} dB",
            r.epoch, r.train_loss, r.val_mse_db
        );
    }

    println!("smoother, true H      {:.3} dB", smoother_db(&truth, &data)?);
    println!("smoother, rotated H   {:.3} dB", smoother_db(&assumed, &data)?);
    println!("RTSNet, rotated H     {:.3} dB", evaluate(&net, &data.test)?.mse_db);
    Ok(())
}
