use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classic::{batch_map_oracle, rts_smooth};
use crate::error::{Error, Result};
use crate::rtsnet::RtsNetModel;
use crate::ssmodel::{StateSpaceModel, Trajectory};
use crate::training::{score, smooth_all, Evaluation};

/// Anything that turns observation blocks into smoothed state sequences `x̂_1..x̂_T`.
///
/// Every method receives the true initial state of each trajectory.
pub trait Smoother: Sync {
    fn smooth(&self, data: &[Trajectory]) -> Result<Vec<Vec<DVector<f64>>>>;
}

/// The (extended) RTS smoother run with a fixed model.
#[derive(Clone, Debug)]
pub struct ModelBasedSmoother {
    pub model: StateSpaceModel,
}

impl Smoother for ModelBasedSmoother {
    fn smooth(&self, data: &[Trajectory]) -> Result<Vec<Vec<DVector<f64>>>> {
        let m = self.model.m();
        let sigma0 = DMatrix::zeros(m, m);
        data.iter()
            .map(|t| {
                let steps = rts_smooth(&self.model, &t.initial_state(), &sigma0, &t.observation_vectors())?;
                Ok(steps.into_iter().map(|s| s.x_smooth).collect())
            })
            .collect()
    }
}

/// Joint MAP solution over the whole block; linear models only.
#[derive(Clone, Debug)]
pub struct OracleSmoother {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl Smoother for OracleSmoother {
    fn smooth(&self, data: &[Trajectory]) -> Result<Vec<Vec<DVector<f64>>>> {
        let m = self.f.nrows();
        let sigma0 = DMatrix::zeros(m, m);
        data.iter()
            .map(|t| {
                batch_map_oracle(
                    &self.f,
                    &self.h,
                    &self.q,
                    &self.r,
                    &t.initial_state(),
                    &sigma0,
                    &t.observation_vectors(),
                )
            })
            .collect()
    }
}

impl Smoother for RtsNetModel {
    fn smooth(&self, data: &[Trajectory]) -> Result<Vec<Vec<DVector<f64>>>> {
        smooth_all(self, data, 256)
    }
}

/// Smooths `data` with `method` and scores the result.
pub fn assess(method: &dyn Smoother, data: &[Trajectory]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("no trajectories to assess".into()));
    }
    score(data, &method.smooth(data)?)
}

/// Wall-clock seconds of repeated end-to-end smoothing runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub raw: Vec<f64>,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl TimingStats {
    fn from_raw(raw: Vec<f64>) -> Self {
        let mut sorted = raw.clone();
        sorted.sort_by(f64::total_cmp);
        let k = sorted.len();
        let median = if k % 2 == 1 {
            sorted[k / 2]
        } else {
            0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
        };
        Self {
            median,
            min: sorted[0],
            max: sorted[k - 1],
            raw,
        }
    }

    /// `max - min`.
    pub fn spread(&self) -> f64 {
        self.max - self.min
    }
}

/// Times `repeats` full smoothing passes over `data`; data loading is not included.
pub fn benchmark_inference(method: &dyn Smoother, data: &[Trajectory], repeats: usize) -> Result<TimingStats> {
    if repeats < 3 {
        return Err(Error::Config(format!("need at least 3 timing repeats, got {repeats}")));
    }
    if data.is_empty() || data.iter().all(Trajectory::is_empty) {
        return Err(Error::Empty("cannot time inference on an empty dataset".into()));
    }
    let mut raw = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = method.smooth(data)?;
        raw.push(start.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    Ok(TimingStats::from_raw(raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssmodel::{canonical_linear, generate_trajectories, NoiseConfig};

    fn linear() -> (StateSpaceModel, Vec<Trajectory>) {
        let (f, h) = canonical_linear(2, 2, 0.9);
        let ss = StateSpaceModel::linear(f, h, NoiseConfig::new(0.5, 0.5).unwrap()).unwrap();
        let data = generate_trajectories(&ss, &[0.0, 0.0], 0.0, 12, 4, 3).unwrap();
        (ss, data)
    }

    #[test]
    fn median_of_odd_and_even_counts() {
        let s = TimingStats::from_raw(vec![3.0, 1.0, 2.0]);
        assert_eq!((s.median, s.min, s.max), (2.0, 1.0, 3.0));
        assert_eq!(s.raw, vec![3.0, 1.0, 2.0]);
        assert_eq!(TimingStats::from_raw(vec![4.0, 1.0, 2.0, 3.0]).median, 2.5);
    }

    #[test]
    fn benchmark_records_every_repeat() {
        let (ss, data) = linear();
        let stats = benchmark_inference(&ModelBasedSmoother { model: ss }, &data, 3).unwrap();
        assert_eq!(stats.raw.len(), 3);
        assert!(stats.min <= stats.median && stats.median <= stats.max);
        assert!(stats.raw.iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn benchmark_rejects_bad_input() {
        let (ss, data) = linear();
        let method = ModelBasedSmoother { model: ss };
        assert!(matches!(benchmark_inference(&method, &[], 3), Err(Error::Empty(_))));
        assert!(matches!(benchmark_inference(&method, &data, 2), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_and_smoother_agree_on_linear_data() {
        let (ss, data) = linear();
        let oracle = OracleSmoother {
            f: canonical_linear(2, 2, 0.9).0,
            h: canonical_linear(2, 2, 0.9).1,
            q: ss.q.clone(),
            r: ss.r.clone(),
        };
        let a = assess(&ModelBasedSmoother { model: ss }, &data).unwrap();
        let b = assess(&oracle, &data).unwrap();
        assert!((a.mse - b.mse).abs() < 1e-9 * a.mse.max(1.0));
    }
}
