//! Extended Kalman filter and smoother on noisy observations of the Lorenz
//! attractor, sweeping the assumed process noise.

use nalgebra::{DMatrix, DVector};
use rtsnet::classic::{kalman_filter, rts_smooth};
use rtsnet::ssmodel::{generate_trajectories, LorenzConfig, NoiseConfig, StateSpaceModel};
use rtsnet::training::score;

fn main() -> rtsnet::Result<()> {
    let lorenz = LorenzConfig::default();
    let h = DMatrix::identity(3, 3);
    let truth = StateSpaceModel::lorenz(lorenz, h.clone(), NoiseConfig::from_db(0.0, -20.0))?;
    let data = generate_trajectories(&truth, &[1.0, 1.0, 1.0], 1.0, 100, 20, 3)?;
    let sigma0 = DMatrix::zeros(3, 3);

    println!("{:>8} {:>10} {:>10}", "q2", "EKF", "EKS");
    for q2 in [1e-3, 1e-2, 0.1, 1.0] {
        let assumed = StateSpaceModel::lorenz(lorenz, h.clone(), NoiseConfig::new(q2, 1.0)?)?;
        let mut filtered = Vec::new();
        let mut smoothed = Vec::new();
        for traj in &data {
            let (x0, ys) = (traj.initial_state(), traj.observation_vectors());
            let kf: Vec<DVector<f64>> = kalman_filter(&assumed, &x0, &sigma0, &ys)?
                .into_iter()
                .map(|s| s.x_post)
                .collect();
            let ks: Vec<DVector<f64>> = rts_smooth(&assumed, &x0, &sigma0, &ys)?
                .into_iter()
                .map(|s| s.x_smooth)
                .collect();
            filtered.push(kf);
            smoothed.push(ks);
        }
        println!(
            "{q2:>8} {:>7.3} dB {:>7.3} dB",
            score(&data, &filtered)?.mse_db,
            score(&data, &smoothed)?.mse_db
        );
    }
    Ok(())
}
