//! Supervised training of the gain networks by backpropagation through both passes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::neural::{adam_step, AdamConfig, AdamState, Gradients, Graph, ParamStore, Tape, Tensor};
use crate::rtsnet::{GainOverrides, RtsNetModel, SequenceBatch};
use crate::ssmodel::Trajectory;

/// dB value reported for an exactly zero error.
pub const DB_FLOOR: f64 = -300.0;

pub fn to_db(mse: f64) -> f64 {
    if mse <= 0.0 {
        DB_FLOOR
    } else {
        (10.0 * mse.log10()).max(DB_FLOOR)
    }
}

/// Labeled trajectories split for training, model selection and testing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    /// Moves the last `ceil(val_fraction · N)` training trajectories (at least one) to validation.
    pub fn with_validation_split(mut train: Vec<Trajectory>, val_fraction: f64, test: Vec<Trajectory>) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {val_fraction} not in [0, 1)"
            )));
        }
        let n_val = ((train.len() as f64) * val_fraction).ceil() as usize;
        let n_val = n_val.max(1);
        if train.len() <= n_val {
            return Err(Error::Empty(format!(
                "{} trajectories cannot be split into train and validation",
                train.len()
            )));
        }
        let validation = train.split_off(train.len() - n_val);
        Ok(Self {
            train,
            validation,
            test,
        })
    }

    fn splits(&self) -> [(&'static str, &Vec<Trajectory>); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }

    pub fn to_container(&self, manifest: serde_json::Value) -> Result<Container> {
        let mut c = Container::new("dataset", manifest);
        for (name, trajs) in self.splits() {
            let Some(first) = trajs.first() else {
                continue;
            };
            let (m, n, horizon) = (first.m(), first.n(), first.len());
            if trajs.iter().any(|t| t.m() != m || t.n() != n || t.len() != horizon) {
                return Err(Error::Dimension(format!(
                    "all {name} trajectories must share dimensions and horizon to be stored"
                )));
            }
            let states = trajs.iter().flat_map(|t| t.states().iter().copied()).collect();
            let obs = trajs.iter().flat_map(|t| t.observations().iter().copied()).collect();
            c.push(
                format!("{name}.states"),
                Tensor::new(vec![trajs.len(), horizon + 1, m], states)?,
            );
            c.push(
                format!("{name}.observations"),
                Tensor::new(vec![trajs.len(), horizon, n], obs)?,
            );
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("dataset")?;
        let mut out = Dataset::default();
        for (name, slot) in [
            ("train", &mut out.train),
            ("validation", &mut out.validation),
            ("test", &mut out.test),
        ] {
            let (Ok(states), Ok(obs)) = (c.get(&format!("{name}.states")), c.get(&format!("{name}.observations")))
            else {
                continue;
            };
            let (ss, os) = (states.shape(), obs.shape());
            if ss.len() != 3 || os.len() != 3 || ss[0] != os[0] || ss[1] != os[1] + 1 {
                return Err(Error::Corrupt(format!(
                    "inconsistent {name} array shapes {ss:?} / {os:?}"
                )));
            }
            let (count, horizon, m, n) = (ss[0], os[1], ss[2], os[2]);
            for i in 0..count {
                let s = states.data()[i * (horizon + 1) * m..(i + 1) * (horizon + 1) * m].to_vec();
                let o = obs.data()[i * horizon * n..(i + 1) * horizon * n].to_vec();
                slot.push(Trajectory::new(m, n, s, o)?);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, manifest: serde_json::Value) -> Result<()> {
        self.to_container(manifest)?.write(path)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let c = Container::read(path)?;
        Ok((Self::from_container(&c)?, c.meta))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// `γ` in `γ‖Θ‖²`.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Rescale the gradient when its global norm exceeds this value.
    pub grad_clip: Option<f64>,
    pub val_fraction: f64,
    /// Per-epoch metrics file (tab separated).
    pub metrics_path: Option<PathBuf>,
    /// Checkpoint rewritten after every epoch.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            grad_clip: None,
            val_fraction: 0.1,
            metrics_path: None,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0 && self.batch_size > 0;
        if !positive || self.weight_decay < 0.0 || self.grad_clip.is_some_and(|c| c <= 0.0) {
            return Err(Error::Config(format!("invalid training configuration: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse_db: f64,
    pub wall_time_s: f64,
    pub param_norm: f64,
}

/// Error statistics over a set of trajectories, normalized per state entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mse: f64,
    pub mse_db: f64,
    pub per_trajectory: Vec<f64>,
    pub per_trajectory_db: Vec<f64>,
    /// Same error normalized per state vector instead of per entry.
    pub mse_per_vector_db: f64,
}

/// Scores estimates `x̂_1..x̂_T` against the true states of each trajectory.
pub fn score(trajs: &[Trajectory], estimates: &[Vec<DVector<f64>>]) -> Result<Evaluation> {
    if trajs.len() != estimates.len() {
        return Err(Error::Dimension(format!(
            "{} trajectories but {} estimate sequences",
            trajs.len(),
            estimates.len()
        )));
    }
    let mut sums = Vec::with_capacity(trajs.len());
    let mut per_trajectory = Vec::with_capacity(trajs.len());
    let mut entries = 0usize;
    let mut vectors = 0usize;
    for (i, (traj, est)) in trajs.iter().zip(estimates).enumerate() {
        if est.len() != traj.len() {
            return Err(Error::Dimension(format!(
                "trajectory {i} has {} steps but {} estimates",
                traj.len(),
                est.len()
            )));
        }
        let sq: f64 = est
            .iter()
            .enumerate()
            .map(|(t, x)| {
                x.iter()
                    .zip(traj.state(t + 1))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        sums.push(sq);
        per_trajectory.push(sq / (traj.len() * traj.m()) as f64);
        entries += traj.len() * traj.m();
        vectors += traj.len();
    }
    if entries == 0 {
        return Err(Error::Empty("no trajectories to evaluate".into()));
    }
    // Summing in sorted order keeps the result independent of dataset ordering.
    sums.sort_by(f64::total_cmp);
    let total: f64 = sums.iter().sum();
    let mse = total / entries as f64;
    Ok(Evaluation {
        mse,
        mse_db: to_db(mse),
        per_trajectory_db: per_trajectory.iter().map(|v| to_db(*v)).collect(),
        per_trajectory,
        mse_per_vector_db: to_db(total / vectors as f64),
    })
}

/// Groups trajectory indices into batches of equal horizon, preserving order within each group.
fn batches_by_horizon(trajs: &[Trajectory], order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut open: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut out = Vec::new();
    for &i in order {
        let bucket = open.entry(trajs[i].len()).or_default();
        bucket.push(i);
        if bucket.len() == size {
            out.push(std::mem::take(bucket));
        }
    }
    out.extend(open.into_values().filter(|b| !b.is_empty()));
    out
}

fn batch_of(trajs: &[Trajectory], idx: &[usize]) -> Result<SequenceBatch> {
    let refs: Vec<&Trajectory> = idx.iter().map(|i| &trajs[*i]).collect();
    SequenceBatch::from_trajectories(&refs)
}

/// Smoothed estimates for every trajectory, run in batches.
pub fn smooth_all(model: &RtsNetModel, trajs: &[Trajectory], batch_size: usize) -> Result<Vec<Vec<DVector<f64>>>> {
    let order: Vec<usize> = (0..trajs.len()).collect();
    let mut out: Vec<Option<Vec<DVector<f64>>>> = vec![None; trajs.len()];
    for idx in batches_by_horizon(trajs, &order, batch_size.max(1)) {
        let est = model.smooth_batch(&batch_of(trajs, &idx)?, &GainOverrides::default())?;
        for (row, i) in idx.iter().enumerate() {
            out[*i] = Some(est.sequence(&est.x_smooth, row));
        }
    }
    Ok(out.into_iter().map(|e| e.expect("every trajectory batched")).collect())
}

/// MSE of the smoothed estimates over `trajs`.
pub fn evaluate(model: &RtsNetModel, trajs: &[Trajectory]) -> Result<Evaluation> {
    if trajs.is_empty() {
        return Err(Error::Empty("no trajectories to evaluate".into()));
    }
    score(trajs, &smooth_all(model, trajs, 256)?)
}

/// Sum of the per-sequence data terms `(1/T_i) Σ_t ‖x̂_t - x_t‖²` recorded on `g`.
fn data_term<G: Graph>(model: &RtsNetModel, g: &mut G, trajs: &[&Trajectory]) -> Result<G::Var> {
    let batch = SequenceBatch::from_trajectories(trajs)?;
    let horizon = batch.horizon();
    let out = model.unroll(g, &batch, &GainOverrides::default(), true)?;
    let terms: Vec<G::Var> = out
        .x_smooth
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let target: Vec<f64> = trajs.iter().flat_map(|tr| tr.state(i + 1).iter().copied()).collect();
            g.sq_error(x, &target)
        })
        .collect();
    let total = g.sum(&terms);
    Ok(g.scale(&total, 1.0 / horizon as f64))
}

/// `Σ_i (1/T_i) Σ_t ‖x̂_t - x_t‖² + γ‖Θ‖²` over `batch`.
pub fn loss(model: &RtsNetModel, batch: &[Trajectory], gamma: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("loss needs at least one trajectory".into()));
    }
    let order: Vec<usize> = (0..batch.len()).collect();
    let mut total = 0.0;
    for idx in batches_by_horizon(batch, &order, batch.len()) {
        let refs: Vec<&Trajectory> = idx.iter().map(|i| &batch[*i]).collect();
        let mut g = crate::neural::Eval::new(&model.params);
        let v = data_term(model, &mut g, &refs)?;
        total += v.data[0];
    }
    let value = total + gamma * model.params.squared_norm();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss evaluated to {value}")));
    }
    Ok(value)
}

/// Mini-batch objective `(1/B) Σ_i (1/T) Σ_t ‖·‖² + γ‖Θ‖²` and its gradient.
pub fn objective_and_gradient(model: &RtsNetModel, trajs: &[&Trajectory], gamma: f64) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(&model.params);
    let data = data_term(model, &mut tape, trajs)?;
    let scaled = tape.scale(&data, 1.0 / trajs.len() as f64);
    let mut grads = tape.backward(&scaled)?;
    let value = tape.value(&scaled)[0] + gamma * model.params.squared_norm();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "mini-batch objective evaluated to {value}"
        )));
    }
    if gamma > 0.0 {
        for ((_, t), g) in model.params.iter().zip(grads.as_slices_mut()) {
            for (gi, p) in g.iter_mut().zip(t.data()) {
                *gi += 2.0 * gamma * p;
            }
        }
    }
    Ok((value, grads))
}

/// Resumable training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: AdamState,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub best_params: ParamStore,
    pub best_val_db: f64,
    pub best_epoch: usize,
}

impl Trainer {
    pub fn new(model: &RtsNetModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: AdamState::new(&model.params),
            epoch: 0,
            history: Vec::new(),
            best_params: model.params.clone(),
            best_val_db: f64::INFINITY,
            best_epoch: 0,
            config,
        })
    }

    fn epoch_order(&self, count: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs one epoch over `data.train`, then scores `data.validation`.
    pub fn run_epoch(&mut self, model: &mut RtsNetModel, data: &Dataset) -> Result<EpochRecord> {
        if data.train.is_empty() || data.validation.is_empty() {
            return Err(Error::Empty(
                "training needs non-empty train and validation splits".into(),
            ));
        }
        let start = Instant::now();
        let adam = AdamConfig {
            lr: self.config.learning_rate,
            ..AdamConfig::default()
        };
        let order = self.epoch_order(data.train.len());
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for idx in batches_by_horizon(&data.train, &order, self.config.batch_size) {
            let refs: Vec<&Trajectory> = idx.iter().map(|i| &data.train[*i]).collect();
            let (value, mut grads) = objective_and_gradient(model, &refs, self.config.weight_decay)
                .map_err(|e| annotate(e, self.epoch + 1))?;
            if let Some(limit) = self.config.grad_clip {
                let norm = grads.global_norm();
                if norm > limit {
                    grads.scale(limit / norm);
                }
            }
            adam_step(&mut model.params, &grads, &mut self.optimizer, &adam)?;
            loss_sum += value * refs.len() as f64;
            seen += refs.len();
        }
        self.epoch += 1;
        let val = evaluate(model, &data.validation)?;
        if val.mse_db < self.best_val_db {
            self.best_val_db = val.mse_db;
            self.best_epoch = self.epoch;
            self.best_params = model.params.clone();
        }
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss: loss_sum / seen as f64,
            val_mse_db: val.mse_db,
            wall_time_s: start.elapsed().as_secs_f64(),
            param_norm: model.params.squared_norm().sqrt(),
        };
        self.history.push(record.clone());
        if let Some(path) = &self.config.metrics_path {
            append_metrics(path, &record)?;
        }
        if let Some(path) = &self.config.checkpoint_path {
            save_checkpoint(path, model, self)?;
        }
        Ok(record)
    }

    /// Continues until `config.epochs` epochs are done, then installs the best parameters.
    pub fn run(&mut self, model: &mut RtsNetModel, data: &Dataset) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(model, data)?;
        }
        if self.best_val_db.is_finite() {
            model.params = self.best_params.clone();
        }
        Ok(())
    }
}

fn annotate(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFiniteLoss(msg) => Error::NonFiniteLoss(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

/// Trains from scratch; returns the trainer holding the per-epoch history.
pub fn train(model: &mut RtsNetModel, data: &Dataset, config: &TrainConfig) -> Result<Trainer> {
    if let Some(path) = &config.metrics_path {
        if path.exists() {
            fs::remove_file(path).map_err(|e| Error::io(path, e))?;
        }
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.run(model, data)?;
    Ok(trainer)
}

fn append_metrics(path: &Path, r: &EpochRecord) -> Result<()> {
    let fresh = !path.exists();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str("epoch\ttrain_loss\tval_mse_db\twall_time_s\tparam_norm\n");
    }
    text.push_str(&format!(
        "{}\t{:.10e}\t{:.6}\t{:.4}\t{:.6e}\n",
        r.epoch, r.train_loss, r.val_mse_db, r.wall_time_s, r.param_norm
    ));
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn push_store(c: &mut Container, prefix: &str, store: &ParamStore) {
    for (name, t) in store.iter() {
        c.push(format!("{prefix}/{name}"), t.clone());
    }
}

fn read_store(c: &Container, prefix: &str, template: &ParamStore) -> Result<ParamStore> {
    let mut out = template.clone();
    for id in template.ids() {
        let t = c.get(&format!("{prefix}/{}", template.name(id)))?;
        if t.shape() != template.get(id).shape() {
            return Err(Error::Incompatible(format!(
                "{prefix}/{} has shape {:?}, model expects {:?}",
                template.name(id),
                t.shape(),
                template.get(id).shape()
            )));
        }
        *out.get_mut(id) = t.clone();
    }
    Ok(out)
}

fn moments_store(template: &ParamStore, buffers: &[Vec<f64>]) -> Result<ParamStore> {
    let mut out = template.clone();
    for (id, buf) in template.ids().zip(buffers) {
        *out.get_mut(id) = Tensor::new(template.get(id).shape().to_vec(), buf.clone())?;
    }
    Ok(out)
}

/// Saves parameters, optimizer state and training progress.
pub fn save_checkpoint(path: &Path, model: &RtsNetModel, trainer: &Trainer) -> Result<()> {
    let meta = json!({
        "arch": model.arch,
        "arch_hash": model.arch_hash(),
        "epoch": trainer.epoch,
        "adam_step": trainer.optimizer.step,
        "best_val_db": if trainer.best_val_db.is_finite() { json!(trainer.best_val_db) } else { json!(null) },
        "best_epoch": trainer.best_epoch,
        "config": trainer.config,
        "history": trainer.history,
    });
    let mut c = Container::new("checkpoint", meta);
    push_store(&mut c, "param", &model.params);
    push_store(&mut c, "best", &trainer.best_params);
    push_store(&mut c, "adam.m", &moments_store(&model.params, &trainer.optimizer.m)?);
    push_store(&mut c, "adam.v", &moments_store(&model.params, &trainer.optimizer.v)?);
    c.write(path)
}

fn parse<T: serde::de::DeserializeOwned>(key: &str, v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Corrupt(format!("checkpoint `{key}`: {e}")))
}

/// Loads a checkpoint into a freshly constructed model of the same architecture.
pub fn load_checkpoint(path: &Path, mut model: RtsNetModel) -> Result<(RtsNetModel, Trainer)> {
    let c = Container::read(path)?;
    c.expect_kind("checkpoint")?;
    let meta = &c.meta;
    let stored_hash = meta["arch_hash"].as_str().unwrap_or_default();
    if stored_hash != model.arch_hash() {
        return Err(Error::Incompatible(format!(
            "checkpoint architecture {stored_hash} does not match model {}",
            model.arch_hash()
        )));
    }
    let field = |key: &str| -> Result<serde_json::Value> {
        meta.get(key)
            .cloned()
            .ok_or_else(|| Error::Corrupt(format!("checkpoint metadata lacks `{key}`")))
    };
    let config: TrainConfig = parse("config", field("config")?)?;
    let history: Vec<EpochRecord> = parse("history", field("history")?)?;
    let epoch: usize = parse("epoch", field("epoch")?)?;
    let step: u64 = parse("adam_step", field("adam_step")?)?;
    let best_epoch: usize = parse("best_epoch", field("best_epoch")?)?;
    let best_val_db = field("best_val_db")?.as_f64().unwrap_or(f64::INFINITY);

    let template = model.params.clone();
    model.params = read_store(&c, "param", &template)?;
    let best_params = read_store(&c, "best", &template)?;
    let to_buffers = |s: ParamStore| s.iter().map(|(_, t)| t.data().to_vec()).collect::<Vec<_>>();
    let optimizer = AdamState {
        step,
        m: to_buffers(read_store(&c, "adam.m", &template)?),
        v: to_buffers(read_store(&c, "adam.v", &template)?),
    };
    let trainer = Trainer {
        config,
        optimizer,
        epoch,
        history,
        best_params,
        best_val_db,
        best_epoch,
    };
    Ok((model, trainer))
}

/// Stores only the trained parameters (no optimizer state).
pub fn save_model(path: &Path, model: &RtsNetModel, meta: serde_json::Value) -> Result<()> {
    let mut c = Container::new(
        "model",
        json!({ "arch": model.arch, "arch_hash": model.arch_hash(), "info": meta }),
    );
    push_store(&mut c, "param", &model.params);
    c.write(path)
}

pub fn load_model(path: &Path, mut model: RtsNetModel) -> Result<RtsNetModel> {
    let c = Container::read(path)?;
    c.expect_kind("model")?;
    if c.meta["arch_hash"].as_str() != Some(model.arch_hash().as_str()) {
        return Err(Error::Incompatible("model file architecture does not match".into()));
    }
    model.params = read_store(&c, "param", &model.params)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssmodel::{canonical_linear, generate_trajectories, NoiseConfig, StateSpaceModel};

    fn linear() -> StateSpaceModel {
        let (f, h) = canonical_linear(2, 2, 0.9);
        StateSpaceModel::linear(f, h, NoiseConfig::from_db(0.0, 0.0)).unwrap()
    }

    fn data(n: usize, horizon: usize, seed: u64) -> Dataset {
        let ss = linear();
        let train = generate_trajectories(&ss, &[0.0, 0.0], 0.0, horizon, n, seed).unwrap();
        let test = generate_trajectories(&ss, &[0.0, 0.0], 0.0, horizon, 4, seed + 1).unwrap();
        Dataset::with_validation_split(train, 0.25, test).unwrap()
    }

    #[test]
    fn db_conventions() {
        assert_eq!(to_db(0.0), DB_FLOOR);
        assert!((to_db(0.1) + 10.0).abs() < 1e-12);
        assert_eq!(to_db(1.0), 0.0);
    }

    #[test]
    fn score_is_per_entry() {
        let traj = Trajectory::new(2, 1, vec![0.0; 6], vec![0.0; 2]).unwrap();
        let c = 0.1_f64.sqrt();
        let est = vec![vec![DVector::from_element(2, c); 2]];
        let e = score(std::slice::from_ref(&traj), &est).unwrap();
        assert!((e.mse_db + 10.0).abs() < 1e-12);
        assert!((e.mse_per_vector_db - to_db(0.2)).abs() < 1e-12);
        let exact = vec![vec![DVector::zeros(2); 2]];
        assert_eq!(score(&[traj], &exact).unwrap().mse_db, DB_FLOOR);
        assert!(matches!(score(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn loss_arithmetic() {
        let ss = linear();
        let mut model = RtsNetModel::for_model(&ss, 0).unwrap();
        model.params.fill(0.0);
        // Zero networks predict f(x0) = 0 from x0 = 0; a true state of (2, 0) gives error 4.
        let traj = Trajectory::new(2, 2, vec![0.0, 0.0, 2.0, 0.0], vec![0.3, -0.1]).unwrap();
        assert_eq!(loss(&model, std::slice::from_ref(&traj), 0.0).unwrap(), 4.0);
        let perfect = Trajectory::new(2, 2, vec![0.0; 4], vec![0.3, -0.1]).unwrap();
        assert_eq!(loss(&model, std::slice::from_ref(&perfect), 0.0).unwrap(), 0.0);

        let model = RtsNetModel::for_model(&ss, 0).unwrap();
        let gamma = 0.01;
        let zeroed = {
            let mut m = model.clone();
            m.params.fill(0.0);
            m
        };
        assert_eq!(loss(&zeroed, std::slice::from_ref(&perfect), gamma).unwrap(), 0.0);
        let mut shifted = model.clone();
        for id in shifted.params.clone().ids() {
            if shifted.params.name(id).ends_with("out.w") {
                shifted.params.get_mut(id).data_mut().fill(0.0);
            }
            if shifted.params.name(id).ends_with("out.b") {
                shifted.params.get_mut(id).data_mut().fill(0.0);
            }
        }
        let expected = gamma * shifted.params.squared_norm();
        assert_eq!(loss(&shifted, &[perfect], gamma).unwrap(), expected);
    }

    #[test]
    fn evaluate_ignores_dataset_order() {
        let d = data(12, 10, 3);
        let model = RtsNetModel::for_model(&linear(), 1).unwrap();
        let a = evaluate(&model, &d.train).unwrap();
        let mut rev = d.train.clone();
        rev.reverse();
        let b = evaluate(&model, &rev).unwrap();
        assert_eq!(a.mse, b.mse);
        let mut per = b.per_trajectory.clone();
        per.reverse();
        assert_eq!(per, a.per_trajectory);
    }

    #[test]
    fn same_seed_same_history() {
        let d = data(16, 8, 5);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = RtsNetModel::for_model(&linear(), 2).unwrap();
            let t = train(&mut model, &d, &cfg).unwrap();
            (
                t.history
                    .iter()
                    .map(|r| (r.train_loss, r.val_mse_db))
                    .collect::<Vec<_>>(),
                model.params,
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn heavy_weight_decay_shrinks_parameters() {
        let d = data(8, 5, 7);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 6,
            weight_decay: 1e6,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut model = RtsNetModel::for_model(&linear(), 3).unwrap();
        let start = model.params.squared_norm().sqrt();
        let t = train(&mut model, &d, &cfg).unwrap();
        let mut prev = start;
        for r in &t.history {
            assert!(r.param_norm < prev, "{} !< {prev}", r.param_norm);
            prev = r.param_norm;
        }
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let d = data(12, 6, 9);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let fresh = || RtsNetModel::for_model(&linear(), 4).unwrap();

        let mut straight = fresh();
        let full = train(&mut straight, &d, &cfg).unwrap();

        let path = dir.path().join("ck.rtsa");
        let mut live = fresh();
        let mut t = Trainer::new(&live, cfg.clone()).unwrap();
        t.run_epoch(&mut live, &d).unwrap();
        t.run_epoch(&mut live, &d).unwrap();
        save_checkpoint(&path, &live, &t).unwrap();
        let before = evaluate(&live, &d.test).unwrap();

        let (mut resumed, mut trainer) = load_checkpoint(&path, fresh()).unwrap();
        assert_eq!(resumed.params, live.params);
        assert_eq!(evaluate(&resumed, &d.test).unwrap(), before);
        trainer.run(&mut resumed, &d).unwrap();
        assert_eq!(resumed.params, straight.params);
        assert_eq!(trainer.history.len(), full.history.len());
    }

    #[test]
    fn damaged_or_foreign_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.rtsa");
        let model = RtsNetModel::for_model(&linear(), 4).unwrap();
        let t = Trainer::new(&model, TrainConfig::default()).unwrap();
        save_checkpoint(&path, &model, &t).unwrap();

        let bytes = fs::read(&path).unwrap();
        let cut = dir.path().join("cut.rtsa");
        fs::write(&cut, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(load_checkpoint(&cut, model.clone()), Err(Error::Corrupt(_))));

        let (f, h) = canonical_linear(3, 3, 0.9);
        let other = StateSpaceModel::linear(f, h, NoiseConfig::from_db(0.0, 0.0)).unwrap();
        let wrong = RtsNetModel::for_model(&other, 4).unwrap();
        assert!(matches!(load_checkpoint(&path, wrong), Err(Error::Incompatible(_))));
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = data(8, 5, 1);
        let path = dir.path().join("d.rtsa");
        d.save(&path, json!({"seed": 1})).unwrap();
        let (back, meta) = Dataset::load(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(meta["seed"], 1);
    }

    #[test]
    fn metrics_file_has_one_row_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = dir.path().join("m.tsv");
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            metrics_path: Some(metrics.clone()),
            ..TrainConfig::default()
        };
        let mut model = RtsNetModel::for_model(&linear(), 0).unwrap();
        train(&mut model, &data(10, 4, 2), &cfg).unwrap();
        let text = fs::read_to_string(metrics).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("epoch\ttrain_loss"));
    }
}
