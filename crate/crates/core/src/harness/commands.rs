use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value as Json};

use super::experiments::{
    decimated_dataset, decimation_configs, linear_truth, lorenz_truth, new_net, select_eks_q2, simulated_dataset,
};
use super::methods::{assess, ModelBasedSmoother, OracleSmoother};
use super::report::{CurveRow, ExperimentReport};
use super::{rotated_identity, ExperimentConfig, ExperimentId, PointSeeds};
use crate::error::{Error, Result};
use crate::rtsnet::{count_params, RtsNetModel};
use crate::ssmodel::{rotate_observation, NoiseConfig, StateSpaceModel};
use crate::training::{evaluate, load_model, save_model, train, Dataset, Evaluation, TrainConfig};

#[derive(Clone, Debug)]
pub struct SimulateOutput {
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub data: Dataset,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub test: Evaluation,
    pub params: usize,
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Json {
    json!((0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

/// Unsplit training trajectories plus the test set, drawn at the first sweep point.
fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let seeds = PointSeeds::new(cfg.seed, 0);
    let db = cfg.sweep_db[0];
    let mut data = match cfg.id {
        ExperimentId::LinearMismatch | ExperimentId::Scaling => {
            let sys = &cfg.systems[0];
            let (_, _, truth) = linear_truth(cfg, sys, cfg.noise_at(db))?;
            let horizon = sys.train_horizon.unwrap_or(cfg.train_horizon);
            let count = sys.train_count.unwrap_or(cfg.train_count);
            simulated_dataset(cfg, &truth, horizon, count, seeds)?
        }
        ExperimentId::LorenzMismatch => {
            let truth = lorenz_truth(cfg, cfg.noise_at(db))?;
            simulated_dataset(cfg, &truth, cfg.train_horizon, cfg.train_count, seeds)?
        }
        ExperimentId::Decimation => decimated_dataset(cfg, cfg.noise_at(db).r2, seeds)?,
    };
    // Validation is re-split at training time.
    let validation = std::mem::take(&mut data.validation);
    data.train.extend(validation);
    Ok(data)
}

fn manifest(cfg: &ExperimentConfig) -> Result<Json> {
    let db = cfg.sweep_db[0];
    let noise = cfg.noise_at(db);
    let sys = &cfg.systems[0];
    let mut m = json!({
        "experiment": cfg.id,
        "seed": cfg.seed,
        "inv_r2_db": db,
        "nu_db": cfg.nu_db,
        "train_count": cfg.train_count,
        "train_horizon": cfg.train_horizon,
        "test_count": cfg.test_count,
        "test_horizon": cfg.test_horizon,
        "init_std": cfg.init_std,
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    let extra = match cfg.id {
        ExperimentId::LinearMismatch | ExperimentId::Scaling => {
            let (f, h, _) = linear_truth(cfg, sys, noise)?;
            json!({
                "model": "linear",
                "q2": noise.q2,
                "r2": noise.r2,
                "F": matrix_rows(&f),
                "H": matrix_rows(&h),
                "x0": cfg.initial_state(sys.m)?,
                "train_count": sys.train_count.unwrap_or(cfg.train_count),
                "train_horizon": sys.train_horizon.unwrap_or(cfg.train_horizon),
            })
        }
        ExperimentId::LorenzMismatch => json!({
            "model": "lorenz",
            "q2": noise.q2,
            "r2": noise.r2,
            "dtau": cfg.lorenz.dtau,
            "taylor_order": cfg.lorenz.order,
            "x0": cfg.initial_state(3)?,
        }),
        ExperimentId::Decimation => {
            let (train, _) = decimation_configs(cfg, noise.r2, PointSeeds::new(cfg.seed, 0))?;
            json!({
                "model": "lorenz-decimated",
                "r2": noise.r2,
                "ratio": train.ratio,
                "dtau_d": train.lorenz.dtau,
                "fine_step": train.fine_step(),
                "taylor_order": train.lorenz.order,
                "x0": train.x0,
            })
        }
    };
    for (k, v) in extra.as_object().expect("object") {
        m[k] = v.clone();
    }
    Ok(m)
}

/// Generates a dataset and writes `dataset.rtsa` and `manifest.json` into `cfg.out`.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulateOutput> {
    cfg.validate()?;
    let data = generate(cfg)?;
    let meta = manifest(cfg)?;
    let dataset = cfg.out.join("dataset.rtsa");
    let manifest_path = cfg.out.join("manifest.json");
    data.save(&dataset, meta.clone())?;
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&meta).expect("manifest serializes"),
    )
    .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(SimulateOutput {
        dataset,
        manifest: manifest_path,
        data,
    })
}

/// Rebuilds the dataset described by a manifest written by [`cmd_simulate`].
pub fn regenerate_dataset(manifest: &Json) -> Result<Dataset> {
    let cfg: ExperimentConfig = serde_json::from_value(manifest["config"].clone())
        .map_err(|e| Error::Corrupt(format!("manifest has no usable config: {e}")))?;
    generate(&cfg)
}

/// The dataset named by `cfg.dataset` (with the config it was generated from),
/// or a freshly simulated one.
fn load_or_simulate(cfg: &ExperimentConfig) -> Result<(Dataset, ExperimentConfig)> {
    match &cfg.dataset {
        Some(path) => {
            let (data, meta) = Dataset::load(path)?;
            let data_cfg = serde_json::from_value(meta["config"].clone())
                .map_err(|e| Error::Corrupt(format!("{}: manifest has no usable config: {e}", path.display())))?;
            Ok((data, data_cfg))
        }
        None => Ok((generate(cfg)?, cfg.clone())),
    }
}

fn with_validation(data: Dataset, val_fraction: f64) -> Result<Dataset> {
    if !data.validation.is_empty() {
        return Ok(data);
    }
    Dataset::with_validation_split(data.train, val_fraction, data.test)
}

/// Model handed to RTSNet and to the model-based smoother: `H` rotated by
/// `alpha_deg`, noise from the first sweep point (decimation: `q²` chosen on validation).
fn assumed_model(data_cfg: &ExperimentConfig, data: &Dataset) -> Result<StateSpaceModel> {
    let noise = data_cfg.noise_at(data_cfg.sweep_db[0]);
    match data_cfg.id {
        ExperimentId::LinearMismatch | ExperimentId::Scaling => {
            let (f, h, _) = linear_truth(data_cfg, &data_cfg.systems[0], noise)?;
            StateSpaceModel::linear(f, rotate_observation(&h, data_cfg.alpha_deg)?, noise)
        }
        ExperimentId::LorenzMismatch => {
            StateSpaceModel::lorenz(data_cfg.lorenz, rotated_identity(data_cfg.alpha_deg)?, noise)
        }
        ExperimentId::Decimation => {
            let (q2, _) = select_eks_q2(data_cfg, noise.r2, &data.validation)?;
            lorenz_truth(data_cfg, NoiseConfig::new(q2, noise.r2)?)
        }
    }
}

fn out_mult(cfg: &ExperimentConfig) -> Option<usize> {
    cfg.systems.first().and_then(|s| s.out_mult)
}

/// Trains RTSNet on the configured (or simulated) dataset and writes
/// `model.rtsa`, `checkpoint.rtsa` and `metrics.tsv` into `cfg.out`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let (data, data_cfg) = load_or_simulate(cfg)?;
    let data = with_validation(data, cfg.train.val_fraction)?;
    let assumed = assumed_model(&data_cfg, &data)?;
    let seeds = PointSeeds::new(cfg.seed, 0);
    let mut net = new_net(&assumed, out_mult(cfg), seeds.init)?;
    let metrics = cfg.out.join("metrics.tsv");
    let checkpoint = cfg.out.join("checkpoint.rtsa");
    let train_cfg = TrainConfig {
        seed: seeds.shuffle,
        metrics_path: Some(metrics.clone()),
        checkpoint_path: Some(checkpoint.clone()),
        ..cfg.train.clone()
    };
    let trainer = train(&mut net, &data, &train_cfg)?;
    let model = cfg.out.join("model.rtsa");
    save_model(
        &model,
        &net,
        json!({
            "data_config": data_cfg,
            "best_epoch": trainer.best_epoch,
            "best_val_db": trainer.best_val_db,
            "init_seed": seeds.init,
        }),
    )?;
    let test = evaluate(&net, &data.test)?;
    Ok(TrainOutput {
        model,
        metrics,
        checkpoint,
        test,
        params: count_params(&net),
    })
}

fn model_info(path: &Path) -> Result<Json> {
    let c = crate::container::Container::read(path)?;
    c.expect_kind("model")?;
    Ok(c.meta["info"].clone())
}

/// Scores a trained model (`cfg.model`) against the model-based smoother (and,
/// for linear systems, the true-model smoother and the oracle) on the test split.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let path = cfg
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("evaluate needs `model = <path>` in the config".into()))?;
    let (data, data_cfg) = load_or_simulate(cfg)?;
    let data = with_validation(data, cfg.train.val_fraction)?;
    let assumed = assumed_model(&data_cfg, &data)?;
    let info = model_info(path)?;
    let seed = info["init_seed"].as_u64().unwrap_or(0);
    let template = new_net(&assumed, out_mult(cfg), seed)?;
    let net: RtsNetModel = load_model(path, template)?;

    let db = data_cfg.sweep_db[0];
    let label = format!("{db}dB");
    let mut methods = vec!["model-based", "rtsnet"];
    let mut rows = vec![
        CurveRow::new(
            &label,
            db,
            "model-based",
            &assess(&ModelBasedSmoother { model: assumed }, &data.test)?,
        ),
        CurveRow::new(&label, db, "rtsnet", &assess(&net, &data.test)?),
    ];
    if data_cfg.id.is_linear() {
        let (f, h, truth) = linear_truth(&data_cfg, &data_cfg.systems[0], data_cfg.noise_at(db))?;
        let oracle = OracleSmoother {
            f,
            h,
            q: truth.q.clone(),
            r: truth.r.clone(),
        };
        rows.push(CurveRow::new(
            &label,
            db,
            "ks-true",
            &assess(&ModelBasedSmoother { model: truth }, &data.test)?,
        ));
        rows.push(CurveRow::new(&label, db, "oracle", &assess(&oracle, &data.test)?));
        methods.extend(["ks-true", "oracle"]);
    }
    let mut report = ExperimentReport::new(cfg, &methods);
    report.points.push(label);
    report.curves = rows;
    report.param_counts.insert("rtsnet".into(), count_params(&net));
    report.notes.insert("model".into(), json!(path));
    report.check_complete()?;
    report.write(&cfg.out.join("evaluate"))?;
    Ok(report)
}
