//! Interrupted training: run a few epochs with a checkpoint, reload it into a
//! fresh model and continue, then save and reload the final parameters.

use rtsnet::rtsnet::RtsNetModel;
use rtsnet::ssmodel::{canonical_linear, generate_trajectories, NoiseConfig, StateSpaceModel};
use rtsnet::training::{evaluate, load_checkpoint, load_model, save_model, Dataset, TrainConfig, Trainer};

fn main() -> rtsnet::Result<()> {
    let dir = std::env::temp_dir().join("rtsnet-checkpoint-example");
    let checkpoint = dir.join("checkpoint.rtsa");
    let model_path = dir.join("model.rtsa");

    let (f, h) = canonical_linear(2, 2, 0.9);
    let ss = StateSpaceModel::linear(f, h, NoiseConfig::from_db(0.0, 0.0))?;
    let train_set = generate_trajectories(&ss, &[0.0, 0.0], 0.0, 50, 200, 1)?;
    let test_set = generate_trajectories(&ss, &[0.0, 0.0], 0.0, 50, 50, 2)?;
    let data = Dataset::with_validation_split(train_set, 0.1, test_set)?;

    let config = TrainConfig {
        epochs: 6,
        checkpoint_path: Some(checkpoint.clone()),
        ..TrainConfig::default()
    };
    let mut net = RtsNetModel::for_model(&ss, 3)?;
    let mut trainer = Trainer::new(&net, config)?;
    for _ in 0..3 {
        let r = trainer.run_epoch(&mut net, &data)?;
        println!("epoch {}  validation {:.3} dB", r.epoch, r.val_mse_db);
    }
    println!("stopped; checkpoint at {}", checkpoint.display());

    let (mut resumed, mut trainer) = load_checkpoint(&checkpoint, RtsNetModel::for_model(&ss, 3)?)?;
    println!("resuming after epoch {}", trainer.epoch);
    trainer.run(&mut resumed, &data)?;
    for r in &trainer.history[3..] {
        println!("epoch {}  validation {:.3} dB", r.epoch, r.val_mse_db);
    }

    save_model(&model_path, &resumed, serde_json::json!({ "epochs": trainer.epoch }))?;
    let reloaded = load_model(&model_path, RtsNetModel::for_model(&ss, 0)?)?;
    println!(
        "test {:.3} dB (trained), {:.3} dB (reloaded)",
        evaluate(&resumed, &data.test)?.mse_db,
        evaluate(&reloaded, &data.test)?.mse_db
    );
    Ok(())
}
