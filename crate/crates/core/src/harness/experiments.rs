use std::sync::Arc;
use std::thread;

use nalgebra::DMatrix;
use serde_json::json;

use super::methods::{assess, benchmark_inference, ModelBasedSmoother, OracleSmoother, Smoother};
use super::report::{CurveRow, ExperimentReport, TimingRow, Track, TrainingRow};
use super::{rotated_identity, ExperimentConfig, ExperimentId, PointSeeds, SystemSpec};
use crate::error::{Error, Result};
use crate::rtsnet::{count_params, ArchConfig, RtsNetModel};
use crate::ssmodel::{
    canonical_linear, generate_decimated_dataset, generate_trajectories, rotate_observation, DecimationConfig,
    NoiseConfig, StateSpaceModel, Trajectory,
};
use crate::training::{train, Dataset, TrainConfig};

/// Runs the experiment named by `cfg.id`, checks the report and writes it to `cfg.run_dir()`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let report = match cfg.id {
        ExperimentId::LinearMismatch => experiment_linear_mismatch(cfg)?,
        ExperimentId::Scaling => experiment_scaling(cfg)?,
        ExperimentId::LorenzMismatch => experiment_lorenz_mismatch(cfg)?,
        ExperimentId::Decimation => experiment_decimation(cfg)?,
    };
    report.check_complete()?;
    report.write(&cfg.run_dir())?;
    Ok(report)
}

#[derive(Default)]
struct PointResult {
    label: String,
    curves: Vec<CurveRow>,
    training: Vec<TrainingRow>,
    timing: Vec<TimingRow>,
    params: Vec<(String, usize)>,
    notes: Vec<(String, serde_json::Value)>,
    track: Option<Track>,
}

impl PointResult {
    fn new(label: String) -> Self {
        Self {
            label,
            ..Self::default()
        }
    }

    fn assess(&mut self, inv_r2_db: f64, method: &str, smoother: &dyn Smoother, data: &[Trajectory]) -> Result<()> {
        let eval = assess(smoother, data)?;
        self.curves.push(CurveRow::new(&self.label, inv_r2_db, method, &eval));
        Ok(())
    }

    fn time(
        &mut self,
        cfg: &ExperimentConfig,
        method: &str,
        smoother: &dyn Smoother,
        data: &[Trajectory],
    ) -> Result<()> {
        let stats = benchmark_inference(smoother, data, cfg.timing_repeats)?;
        self.timing.push(TimingRow {
            point: self.label.clone(),
            method: method.into(),
            trajectories: data.len(),
            horizon: data.first().map_or(0, Trajectory::len),
            stats,
        });
        Ok(())
    }

    /// Trains `net` on `data` and records the training summary under `method`.
    fn train(
        &mut self,
        cfg: &ExperimentConfig,
        method: &str,
        mut net: RtsNetModel,
        data: &Dataset,
        seeds: PointSeeds,
    ) -> Result<RtsNetModel> {
        let file = format!("metrics-{}-{method}.tsv", self.label.replace([' ', '@'], "_"));
        let train_cfg = TrainConfig {
            seed: seeds.shuffle,
            metrics_path: Some(cfg.run_dir().join(file)),
            checkpoint_path: None,
            ..cfg.train.clone()
        };
        let trainer = train(&mut net, data, &train_cfg)?;
        let epochs = trainer.history.len().max(1) as f64;
        self.training.push(TrainingRow {
            point: self.label.clone(),
            method: method.into(),
            epochs: trainer.epoch,
            best_epoch: trainer.best_epoch,
            best_val_db: trainer.best_val_db,
            seconds_per_epoch: trainer.history.iter().map(|r| r.wall_time_s).sum::<f64>() / epochs,
        });
        self.params.push((method.into(), count_params(&net)));
        Ok(net)
    }
}

fn collect(cfg: &ExperimentConfig, methods: &[&str], results: Vec<PointResult>) -> ExperimentReport {
    let mut report = ExperimentReport::new(cfg, methods);
    for r in results {
        report.points.push(r.label.clone());
        report.curves.extend(r.curves);
        report.training.extend(r.training);
        report.timing.extend(r.timing);
        for (method, count) in r.params {
            report.param_counts.insert(method, count);
        }
        for (k, v) in r.notes {
            report.notes.insert(format!("{} {k}", r.label), v);
        }
        if report.track.is_none() {
            report.track = r.track;
        }
    }
    report
}

/// Evaluates `f(0..count)`, on scoped threads when `parallel` is set. Results keep index order.
fn map_points<T: Send>(parallel: bool, count: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if !parallel {
        return (0..count).map(&f).collect();
    }
    thread::scope(|s| {
        let handles: Vec<_> = (0..count)
            .map(|i| {
                let f = &f;
                s.spawn(move || f(i))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

fn point_label(inv_r2_db: f64) -> String {
    format!("{inv_r2_db}dB")
}

pub(crate) fn new_net(model: &StateSpaceModel, out_mult: Option<usize>, seed: u64) -> Result<RtsNetModel> {
    let mut arch = ArchConfig::new(model.m(), model.n());
    if let Some(k) = out_mult {
        arch.out_mult = k;
    }
    RtsNetModel::new(Arc::clone(&model.f), Arc::clone(&model.h), arch, seed)
}

/// Canonical `(F, H)` and the true model of `sys` at noise level `noise`.
pub(crate) fn linear_truth(
    cfg: &ExperimentConfig,
    sys: &SystemSpec,
    noise: NoiseConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>, StateSpaceModel)> {
    let (f, h) = canonical_linear(sys.m, sys.n, cfg.rho);
    let truth = StateSpaceModel::linear(f.clone(), h.clone(), noise)?;
    Ok((f, h, truth))
}

/// Train/validation/test trajectories drawn from `truth`.
pub(crate) fn simulated_dataset(
    cfg: &ExperimentConfig,
    truth: &StateSpaceModel,
    train_horizon: usize,
    train_count: usize,
    seeds: PointSeeds,
) -> Result<Dataset> {
    let x0 = cfg.initial_state(truth.m())?;
    let train = generate_trajectories(truth, &x0, cfg.init_std, train_horizon, train_count, seeds.train_data)?;
    let test = generate_trajectories(
        truth,
        &x0,
        cfg.init_std,
        cfg.test_horizon,
        cfg.test_count,
        seeds.test_data,
    )?;
    Dataset::with_validation_split(train, cfg.train.val_fraction, test)
}

/// Lorenz dynamics at the configured `Δτ` observed directly.
pub(crate) fn lorenz_truth(cfg: &ExperimentConfig, noise: NoiseConfig) -> Result<StateSpaceModel> {
    StateSpaceModel::lorenz(cfg.lorenz, DMatrix::identity(3, 3), noise)
}

/// Generation settings for the decimated training and test sets.
pub(crate) fn decimation_configs(
    cfg: &ExperimentConfig,
    r2: f64,
    seeds: PointSeeds,
) -> Result<(DecimationConfig, DecimationConfig)> {
    let train = DecimationConfig {
        lorenz: cfg.lorenz,
        ratio: cfg.decimation_ratio,
        horizon: cfg.train_horizon,
        r2,
        count: cfg.train_count,
        seed: seeds.train_data,
        x0: cfg.initial_state(3)?,
        init_std: cfg.init_std,
    };
    let test = DecimationConfig {
        horizon: cfg.test_horizon,
        count: cfg.test_count,
        seed: seeds.test_data,
        ..train.clone()
    };
    Ok((train, test))
}

pub(crate) fn decimated_dataset(cfg: &ExperimentConfig, r2: f64, seeds: PointSeeds) -> Result<Dataset> {
    let (train, test) = decimation_configs(cfg, r2, seeds)?;
    Dataset::with_validation_split(
        generate_decimated_dataset(&train)?,
        cfg.train.val_fraction,
        generate_decimated_dataset(&test)?,
    )
}

/// Linear canonical system with a rotated observation model: the smoother
/// with the true `H`, the smoother with `H_α`, RTSNet given `H_α`, and the
/// batch-MAP oracle.
pub fn experiment_linear_mismatch(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    const METHODS: [&str; 4] = ["ks-true", "ks-mismatched", "rtsnet", "oracle"];
    let sys = &cfg.systems[0];
    let results = map_points(cfg.parallel, cfg.sweep_db.len(), |k| {
        let db = cfg.sweep_db[k];
        let seeds = PointSeeds::new(cfg.seed, k);
        let noise = cfg.noise_at(db);
        let (f, h, truth) = linear_truth(cfg, sys, noise)?;
        let assumed = StateSpaceModel::linear(f.clone(), rotate_observation(&h, cfg.alpha_deg)?, noise)?;
        let data = simulated_dataset(cfg, &truth, cfg.train_horizon, cfg.train_count, seeds)?;

        let mut out = PointResult::new(point_label(db));
        let ks_true = ModelBasedSmoother { model: truth.clone() };
        let ks_mismatched = ModelBasedSmoother { model: assumed.clone() };
        let oracle = OracleSmoother {
            f,
            h,
            q: truth.q.clone(),
            r: truth.r.clone(),
        };
        let net = out.train(
            cfg,
            "rtsnet",
            new_net(&assumed, sys.out_mult, seeds.init)?,
            &data,
            seeds,
        )?;
        out.assess(db, "ks-true", &ks_true, &data.test)?;
        out.assess(db, "ks-mismatched", &ks_mismatched, &data.test)?;
        out.assess(db, "rtsnet", &net, &data.test)?;
        out.assess(db, "oracle", &oracle, &data.test)?;
        out.time(cfg, "ks-true", &ks_true, &data.test)?;
        out.time(cfg, "rtsnet", &net, &data.test)?;
        Ok(out)
    })?;
    let mut report = collect(cfg, &METHODS, results);
    report.notes.insert("alpha_deg".into(), json!(cfg.alpha_deg));
    report.notes.insert("nu_db".into(), json!(cfg.nu_db));
    Ok(report)
}

/// Trains each configured system on short sequences and tests on long ones.
pub fn experiment_scaling(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    const METHODS: [&str; 3] = ["ks", "rtsnet", "oracle"];
    let grid: Vec<(usize, usize)> = (0..cfg.systems.len())
        .flat_map(|s| (0..cfg.sweep_db.len()).map(move |k| (s, k)))
        .collect();
    let results = map_points(cfg.parallel, grid.len(), |i| {
        let (s, k) = grid[i];
        let sys = &cfg.systems[s];
        let db = cfg.sweep_db[k];
        let seeds = PointSeeds::new(cfg.seed, i);
        let (f, h, truth) = linear_truth(cfg, sys, cfg.noise_at(db))?;
        let train_horizon = sys.train_horizon.unwrap_or(cfg.train_horizon);
        let data = simulated_dataset(
            cfg,
            &truth,
            train_horizon,
            sys.train_count.unwrap_or(cfg.train_count),
            seeds,
        )?;

        let label = if cfg.sweep_db.len() == 1 {
            sys.label()
        } else {
            format!("{}@{}", sys.label(), point_label(db))
        };
        let mut out = PointResult::new(label);
        let ks = ModelBasedSmoother { model: truth.clone() };
        let oracle = OracleSmoother {
            f,
            h,
            q: truth.q.clone(),
            r: truth.r.clone(),
        };
        let net = out.train(cfg, "rtsnet", new_net(&truth, sys.out_mult, seeds.init)?, &data, seeds)?;
        // One parameter count per system size.
        let (_, count) = out.params.pop().expect("training records a count");
        out.params.push((format!("rtsnet {}", sys.label()), count));
        out.assess(db, "ks", &ks, &data.test)?;
        out.assess(db, "rtsnet", &net, &data.test)?;
        out.assess(db, "oracle", &oracle, &data.test)?;
        out.time(cfg, "ks", &ks, &data.test)?;
        out.time(cfg, "rtsnet", &net, &data.test)?;
        out.notes.push(("train_horizon".into(), json!(train_horizon)));
        Ok(out)
    })?;
    let mut report = collect(cfg, &METHODS, results);
    report.notes.insert("test_horizon".into(), json!(cfg.test_horizon));
    report.notes.insert("nu_db".into(), json!(cfg.nu_db));
    Ok(report)
}

/// Lorenz data observed through the identity; each method is run once with
/// the identity (`h0`) and once with the identity rotated by `alpha_deg` (`h1`).
pub fn experiment_lorenz_mismatch(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    const METHODS: [&str; 4] = ["eks-h0", "rtsnet-h0", "eks-h1", "rtsnet-h1"];
    let results = map_points(cfg.parallel, cfg.sweep_db.len(), |k| {
        let db = cfg.sweep_db[k];
        let seeds = PointSeeds::new(cfg.seed, k);
        let noise = cfg.noise_at(db);
        let truth = lorenz_truth(cfg, noise)?;
        let rotated = StateSpaceModel::lorenz(cfg.lorenz, rotated_identity(cfg.alpha_deg)?, noise)?;
        let data = simulated_dataset(cfg, &truth, cfg.train_horizon, cfg.train_count, seeds)?;

        let mut out = PointResult::new(point_label(db));
        let out_mult = cfg.systems.first().and_then(|s| s.out_mult);
        for (suffix, model) in [("h0", &truth), ("h1", &rotated)] {
            let eks = ModelBasedSmoother { model: model.clone() };
            let net_name = format!("rtsnet-{suffix}");
            let net = out.train(cfg, &net_name, new_net(model, out_mult, seeds.init)?, &data, seeds)?;
            out.assess(db, &format!("eks-{suffix}"), &eks, &data.test)?;
            out.assess(db, &net_name, &net, &data.test)?;
            if suffix == "h0" {
                out.time(cfg, "eks-h0", &eks, &data.test)?;
                out.time(cfg, "rtsnet-h0", &net, &data.test)?;
            }
        }
        out.params.truncate(1);
        out.params[0].0 = "rtsnet".into();
        Ok(out)
    })?;
    let mut report = collect(cfg, &METHODS, results);
    report.notes.insert("alpha_deg".into(), json!(cfg.alpha_deg));
    report.notes.insert("dtau".into(), json!(cfg.lorenz.dtau));
    report.notes.insert("nu_db".into(), json!(cfg.nu_db));
    Ok(report)
}

/// Process-noise level for the extended smoother picked on the validation split.
pub(crate) fn select_eks_q2(cfg: &ExperimentConfig, r2: f64, validation: &[Trajectory]) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &q2 in &cfg.eks_q2_grid {
        let eks = ModelBasedSmoother {
            model: lorenz_truth(cfg, NoiseConfig::new(q2, r2)?)?,
        };
        // A candidate that cannot run on this data is skipped, not fatal.
        let Ok(eval) = assess(&eks, validation) else {
            continue;
        };
        if best.is_none_or(|(_, db)| eval.mse_db < db) {
            best = Some((q2, eval.mse_db));
        }
    }
    best.ok_or_else(|| Error::Config("no q² candidate produced a finite extended smoother".into()))
}

/// Finely integrated Lorenz data sampled every `decimation_ratio` steps,
/// smoothed by the extended smoother and RTSNet with the coarse model.
pub fn experiment_decimation(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    const METHODS: [&str; 2] = ["eks", "rtsnet"];
    let results = map_points(cfg.parallel, cfg.sweep_db.len(), |k| {
        let db = cfg.sweep_db[k];
        let seeds = PointSeeds::new(cfg.seed, k);
        let r2 = cfg.noise_at(db).r2;
        let data = decimated_dataset(cfg, r2, seeds)?;
        let (q2, val_db) = select_eks_q2(cfg, r2, &data.validation)?;
        let model = lorenz_truth(cfg, NoiseConfig::new(q2, r2)?)?;

        let mut out = PointResult::new(point_label(db));
        let eks = ModelBasedSmoother { model: model.clone() };
        let out_mult = cfg.systems.first().and_then(|s| s.out_mult);
        let net = out.train(cfg, "rtsnet", new_net(&model, out_mult, seeds.init)?, &data, seeds)?;
        out.assess(db, "eks", &eks, &data.test)?;
        out.assess(db, "rtsnet", &net, &data.test)?;
        out.time(cfg, "eks", &eks, &data.test)?;
        out.time(cfg, "rtsnet", &net, &data.test)?;
        out.notes.push(("eks_q2".into(), json!(q2)));
        out.notes.push(("eks_q2_validation_db".into(), json!(val_db)));

        let first = &data.test[..1];
        let rows = |t: &Trajectory, obs: bool| -> Vec<Vec<f64>> {
            if obs {
                (1..=t.len()).map(|i| t.observation(i).to_vec()).collect()
            } else {
                (0..=t.len()).map(|i| t.state(i).to_vec()).collect()
            }
        };
        let as_rows = |est: Vec<Vec<nalgebra::DVector<f64>>>| -> Vec<Vec<f64>> {
            est[0].iter().map(|x| x.as_slice().to_vec()).collect()
        };
        out.track = Some(Track {
            states: rows(&first[0], false),
            observations: rows(&first[0], true),
            estimates: vec![
                ("eks".into(), as_rows(eks.smooth(first)?)),
                ("rtsnet".into(), as_rows(net.smooth(first)?)),
            ],
        });
        Ok(out)
    })?;
    let mut report = collect(cfg, &METHODS, results);
    report
        .notes
        .insert("decimation_ratio".into(), json!(cfg.decimation_ratio));
    report.notes.insert("dtau_d".into(), json!(cfg.lorenz.dtau));
    report
        .notes
        .insert("fine_step".into(), json!(cfg.lorenz.dtau / cfg.decimation_ratio as f64));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(id: ExperimentId, out: &std::path::Path) -> ExperimentConfig {
        let base = ExperimentConfig::preset(id);
        ExperimentConfig {
            sweep_db: vec![0.0, 10.0],
            train_horizon: 6,
            test_horizon: 8,
            train_count: 6,
            test_count: 3,
            systems: vec![SystemSpec {
                out_mult: Some(2),
                ..SystemSpec::new(2, 2)
            }],
            decimation_ratio: 5,
            eks_q2_grid: vec![0.01, 0.1],
            train: TrainConfig {
                epochs: 2,
                batch_size: 4,
                ..base.train.clone()
            },
            out: out.to_path_buf(),
            seed: 11,
            ..base
        }
    }

    #[test]
    fn every_experiment_fills_its_grid() {
        let dir = tempfile::tempdir().unwrap();
        for id in ExperimentId::ALL {
            let cfg = tiny(id, dir.path());
            let report = run_experiment(&cfg).unwrap();
            report.check_complete().unwrap();
            assert_eq!(report.methods.iter().any(|m| m == "oracle"), id.is_linear(), "{id}");
            assert!(!report.param_counts.is_empty());
            assert!(cfg.run_dir().join("curves.csv").exists());
            let rows = std::fs::read_to_string(cfg.run_dir().join("curves.csv")).unwrap();
            assert_eq!(rows.lines().count(), 1 + report.points.len() * report.methods.len());
        }
    }

    #[test]
    fn runs_are_bit_reproducible_and_parallel_matches_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(ExperimentId::LinearMismatch, dir.path());
        let a = experiment_linear_mismatch(&cfg).unwrap();
        let b = experiment_linear_mismatch(&ExperimentConfig {
            parallel: true,
            ..cfg.clone()
        })
        .unwrap();
        let bits = |r: &ExperimentReport| r.curves.iter().map(|c| c.mse_db.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn decimation_report_names_its_sampling() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            sweep_db: vec![0.0],
            ..tiny(ExperimentId::Decimation, dir.path())
        };
        let report = experiment_decimation(&cfg).unwrap();
        assert_eq!(report.notes["decimation_ratio"], json!(5));
        assert!(report.render().contains("parameters rtsnet:"));
        let track = report.track.unwrap();
        assert_eq!(track.states.len(), cfg.test_horizon + 1);
        assert_eq!(track.estimates.len(), 2);
    }
}
