mod common;

use std::time::Instant;

use common::{min_eig, random_instance};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rtsnet::classic::{batch_map_oracle, kalman_filter, rts_smooth};
use rtsnet::ssmodel::{generate_trajectories, LorenzConfig, NoiseConfig, StateSpaceModel};

fn max_oracle_gap(seed: u64) -> f64 {
    let inst = random_instance(seed);
    let ks = rts_smooth(&inst.model(), &inst.x0, &inst.sigma0, &inst.ys).unwrap();
    let map = batch_map_oracle(&inst.f, &inst.h, &inst.q, &inst.r, &inst.x0, &inst.sigma0, &inst.ys).unwrap();
    ks.iter()
        .zip(&map)
        .map(|(a, b)| (&a.x_smooth - b).amax())
        .fold(0.0, f64::max)
}

#[test]
fn twenty_random_instances_match_the_map_oracle() {
    let start = Instant::now();
    for seed in 0..20 {
        let gap = max_oracle_gap(seed);
        assert!(gap < 1e-6, "instance {seed}: max component gap {gap:e}");
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoother_equals_map_estimate(seed in any::<u64>()) {
        prop_assert!(max_oracle_gap(seed) < 1e-6);
    }

    #[test]
    fn covariances_stay_psd_and_shrink(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let model = inst.model();
        let filtered = kalman_filter(&model, &inst.x0, &inst.sigma0, &inst.ys).unwrap();
        let smoothed = rts_smooth(&model, &inst.x0, &inst.sigma0, &inst.ys).unwrap();
        let tol = 1e-9;
        for (f, s) in filtered.iter().zip(&smoothed) {
            prop_assert!((&f.sigma_post - f.sigma_post.transpose()).amax() < tol);
            prop_assert!(min_eig(&f.sigma_post) > -tol);
            prop_assert!(min_eig(&s.sigma_smooth) > -tol);
            // Conditioning on more data never increases uncertainty.
            prop_assert!(min_eig(&(&f.sigma_prior - &f.sigma_post)) > -tol);
            prop_assert!(min_eig(&(&f.sigma_post - &s.sigma_smooth)) > -tol);
        }
    }
}

#[test]
fn extended_smoother_covariances_stay_psd_on_lorenz() {
    let h = DMatrix::identity(3, 3);
    let ss = StateSpaceModel::lorenz(LorenzConfig::default(), h, NoiseConfig::from_db(0.0, -20.0)).unwrap();
    let data = generate_trajectories(&ss, &[1.0, 1.0, 1.0], 1.0, 100, 5, 2).unwrap();
    for traj in &data {
        let (x0, ys) = (traj.initial_state(), traj.observation_vectors());
        let filtered = kalman_filter(&ss, &x0, &DMatrix::zeros(3, 3), &ys).unwrap();
        let smoothed = rts_smooth(&ss, &x0, &DMatrix::zeros(3, 3), &ys).unwrap();
        for (f, s) in filtered.iter().zip(&smoothed) {
            assert!(min_eig(&f.sigma_post) > -1e-9);
            assert!(min_eig(&(&f.sigma_post - &s.sigma_smooth)) > -1e-9);
        }
    }
}
