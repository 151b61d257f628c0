//! Kalman filter and RTS smoother on a linear system, checked against the
//! joint MAP estimate over the whole trajectory.

use nalgebra::{DMatrix, DVector};
use rtsnet::classic::{batch_map_oracle, kalman_filter, rts_smooth};
use rtsnet::ssmodel::{canonical_linear, generate_trajectories, NoiseConfig, StateSpaceModel};
use rtsnet::training::score;

fn main() -> rtsnet::Result<()> {
    let (f, h) = canonical_linear(2, 2, 0.9);
    let model = StateSpaceModel::linear(f.clone(), h.clone(), NoiseConfig::from_db(10.0, 0.0))?;
    let data = generate_trajectories(&model, &[0.0, 0.0], 0.0, 100, 50, 1)?;
    let sigma0 = DMatrix::zeros(2, 2);

    let mut filtered = Vec::new();
    let mut smoothed = Vec::new();
    let mut worst_gap = 0.0_f64;
    for traj in &data {
        let x0 = traj.initial_state();
        let ys = traj.observation_vectors();
        let kf: Vec<DVector<f64>> = kalman_filter(&model, &x0, &sigma0, &ys)?
            .into_iter()
            .map(|s| s.x_post)
            .collect();
        let ks: Vec<DVector<f64>> = rts_smooth(&model, &x0, &sigma0, &ys)?
            .into_iter()
            .map(|s| s.x_smooth)
            .collect();
        let map = batch_map_oracle(&f, &h, &model.q, &model.r, &x0, &sigma0, &ys)?;
        for (a, b) in ks.iter().zip(&map) {
            worst_gap = worst_gap.max((a - b).amax());
        }
        filtered.push(kf);
        smoothed.push(ks);
    }

    println!("filter   {:.3} dB", score(&data, &filtered)?.mse_db);
    println!("smoother {:.3} dB", score(&data, &smoothed)?.mse_db);
    println!("max |RTS - MAP| = {worst_gap:.2e}");
    Ok(())
}
