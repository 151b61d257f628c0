mod common;

use nalgebra::DMatrix;
use rtsnet::harness::{assess, run_experiment, ExperimentConfig, ExperimentId, ModelBasedSmoother};
use rtsnet::ssmodel::{generate_trajectories, rotate_observation, LorenzConfig, NoiseConfig, StateSpaceModel};

#[test]
fn rotating_the_observation_model_hurts_the_extended_smoother() {
    let lorenz = LorenzConfig::default();
    let h0 = DMatrix::identity(3, 3);
    let h1 = rotate_observation(&h0, 1.0).unwrap();
    for db in [-10.0, 0.0, 10.0, 20.0] {
        let noise = NoiseConfig::from_db(db, -20.0);
        let truth = StateSpaceModel::lorenz(lorenz, h0.clone(), noise).unwrap();
        let data = generate_trajectories(&truth, &[1.0, 1.0, 1.0], 1.0, 100, 50, 9).unwrap();
        let eks = |h: &DMatrix<f64>| {
            let model = StateSpaceModel::lorenz(lorenz, h.clone(), noise).unwrap();
            assess(&ModelBasedSmoother { model }, &data).unwrap().mse_db
        };
        let (e0, e1) = (eks(&h0), eks(&h1));
        assert!(e1 > e0, "1/r² = {db} dB: H0 {e0:.4} dB, H1 {e1:.4} dB");
    }
}

#[test]
#[ignore = "long: trains eight networks (several minutes)"]
fn lorenz_mismatch_preset() {
    let mut cfg = ExperimentConfig::preset(ExperimentId::LorenzMismatch);
    cfg.out = tempfile::tempdir().unwrap().keep();
    let report = run_experiment(&cfg).unwrap();
    print!("{}", report.render());
    let h0 = report.gaps("rtsnet-h0", "eks-h0").unwrap();
    let h1 = report.gaps("rtsnet-h1", "eks-h1").unwrap();
    let degradation = report.gaps("eks-h1", "eks-h0").unwrap();
    assert!(h0.iter().all(|g| g.abs() <= 1.0), "H0 gaps {h0:?}");
    assert!(degradation.iter().all(|d| *d > 0.0), "EKS degradation {degradation:?}");
    assert!(h1.iter().all(|g| *g < 0.0), "H1 gaps {h1:?}");
}
