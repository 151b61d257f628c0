//! A scaled-down decimated Lorenz experiment through the harness: tuned EKS
//! against RTSNet, with curves, timing and a summary written to disk.

use rtsnet::harness::{run_experiment, ExperimentConfig, ExperimentId};

fn main() -> rtsnet::Result<()> {
    let mut cfg = ExperimentConfig::preset(ExperimentId::Decimation);
    cfg.train_count = 60;
    cfg.test_count = 20;
    cfg.train.epochs = 5;
    cfg.out = std::env::temp_dir().join("rtsnet-runs");
    let report = run_experiment(&cfg)?;
    print!("{}", report.render());
    println!("written to {}", cfg.run_dir().display());
    Ok(())
}
