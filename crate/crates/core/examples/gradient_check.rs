//! Reverse-mode gradients of the unrolled RTSNet smoother compared with
//! central finite differences.
//!
//! A ReLU whose pre-activation lies within one step of zero makes the central
//! difference straddle the kink; shrinking the step resolves such entries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtsnet::neural::{gradient_check, Graph, ScalarProgram};
use rtsnet::rtsnet::{GainOverrides, RtsNetModel, SequenceBatch};
use rtsnet::ssmodel::{canonical_linear, simulate_trajectory, NoiseConfig, StateSpaceModel};

struct SmoothingLoss {
    model: RtsNetModel,
    batch: SequenceBatch,
    targets: Vec<Vec<f64>>,
}

impl ScalarProgram for SmoothingLoss {
    fn build<G: Graph>(&self, g: &mut G) -> rtsnet::Result<G::Var> {
        let out = self.model.unroll(g, &self.batch, &GainOverrides::default(), true)?;
        let terms: Vec<_> = out
            .x_smooth
            .iter()
            .zip(&self.targets)
            .map(|(x, target)| g.sq_error(x, target))
            .collect();
        Ok(g.sum(&terms))
    }
}

fn main() -> rtsnet::Result<()> {
    let (f, h) = canonical_linear(2, 2, 0.9);
    let ss = StateSpaceModel::linear(f, h, NoiseConfig::from_db(0.0, 0.0))?;
    let mut model = RtsNetModel::for_model(&ss, 21)?;
    // Output layers start at zero; perturb them so every path carries gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let data = model.params.get_mut(id).data_mut();
        if data.iter().all(|v| *v == 0.0) {
            data.iter_mut().for_each(|v| *v = rng.random_range(-0.05..0.05));
        }
    }

    let traj = simulate_trajectory(&ss, &[0.3, -0.2], 4, 23)?;
    let batch = SequenceBatch::from_trajectories(&[&traj])?;
    let targets = (1..=traj.len()).map(|t| traj.state(t).to_vec()).collect();
    let mut params = model.params.clone();
    let program = SmoothingLoss { model, batch, targets };
    let report = gradient_check(&mut params, &program, 1e-5, 1e-6)?;
    println!("checked {} entries", report.checked);
    println!(
        "max relative error {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
        report.max_rel_error, report.worst, report.analytic, report.numeric
    );
    Ok(())
}
