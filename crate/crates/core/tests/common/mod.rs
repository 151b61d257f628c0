#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtsnet::classic::rts_smooth;
use rtsnet::rtsnet::RtsNetModel;
use rtsnet::ssmodel::{canonical_linear, generate_trajectories, NoiseConfig, StateSpaceModel, Trajectory};
use rtsnet::training::Dataset;

/// A random linear-Gaussian smoothing problem.
pub struct Instance {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub ys: Vec<DVector<f64>>,
}

impl Instance {
    pub fn model(&self) -> StateSpaceModel {
        let noise = NoiseConfig::new(1.0, 1.0).unwrap();
        StateSpaceModel::linear(self.f.clone(), self.h.clone(), noise)
            .unwrap()
            .with_noise(self.q.clone(), self.r.clone())
            .unwrap()
    }
}

fn random_spd(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / k as f64 + DMatrix::identity(k, k) * floor
}

/// `m, n ≤ 5`, `T ≤ 50`; observations are arbitrary (the smoother is exact for any `y`).
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=5);
    let n = rng.random_range(1..=5);
    let horizon = rng.random_range(1..=50);
    let f = DMatrix::from_fn(m, m, |_, _| rng.random_range(-0.6..0.6));
    let h = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let q = random_spd(&mut rng, m, 0.05);
    let r = random_spd(&mut rng, n, 0.05);
    let x0 = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
    let sigma0 = if rng.random_bool(0.5) {
        DMatrix::zeros(m, m)
    } else {
        random_spd(&mut rng, m, 0.0)
    };
    let ys = (0..horizon)
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0)))
        .collect();
    Instance {
        f,
        h,
        q,
        r,
        x0,
        sigma0,
        ys,
    }
}

/// Canonical 2×2 system at `1/r² = inv_r2_db`, `ν = 0 dB`.
pub fn canonical_2x2(inv_r2_db: f64) -> StateSpaceModel {
    let (f, h) = canonical_linear(2, 2, 0.9);
    StateSpaceModel::linear(f, h, NoiseConfig::from_db(inv_r2_db, 0.0)).unwrap()
}

pub fn linear_dataset(ss: &StateSpaceModel, horizon: usize, train: usize, test: usize, seed: u64) -> Dataset {
    let x0 = vec![0.0; ss.m()];
    let train_set = generate_trajectories(ss, &x0, 0.0, horizon, train, seed).unwrap();
    let test_set = generate_trajectories(ss, &x0, 0.0, horizon, test, seed + 1).unwrap();
    Dataset::with_validation_split(train_set, 0.1, test_set).unwrap()
}

/// Model-based smoother estimates with the true initial state.
pub fn smoothed(ss: &StateSpaceModel, trajs: &[Trajectory]) -> Vec<Vec<DVector<f64>>> {
    let sigma0 = DMatrix::zeros(ss.m(), ss.m());
    trajs
        .iter()
        .map(|t| {
            rts_smooth(ss, &t.initial_state(), &sigma0, &t.observation_vectors())
                .unwrap()
                .into_iter()
                .map(|s| s.x_smooth)
                .collect()
        })
        .collect()
}

/// Output layers start at zero; fill them so the gains depend on the inputs.
pub fn activate(model: &mut RtsNetModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let t = model.params.get_mut(id);
        if t.data().iter().all(|v| *v == 0.0) {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.05..0.05));
        }
    }
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eig(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}
