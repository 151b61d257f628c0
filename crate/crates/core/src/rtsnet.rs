//! RTSNet: the RTS recursion with forward and backward gains produced by GRU networks.
//!
//! The model only needs the (possibly approximate) functions `f` and `h`; it
//! never sees `Q` or `R`. All passes are batched: every sequence in a
//! [`SequenceBatch`] shares the same horizon and is processed in lockstep, one
//! row per sequence.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::{Activation, DenseLayer, Eval, Graph, GruLayer, ParamBuilder, ParamStore};
use crate::ssmodel::{StateSpaceModel, Trajectory, VectorFunction};

/// Layer sizes of both gain networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub m: usize,
    pub n: usize,
    /// Embedding width as a multiple of each feature's length.
    pub in_mult: usize,
    /// Hidden width of each output head as a multiple of its input width.
    pub out_mult: usize,
}

impl ArchConfig {
    pub fn new(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            in_mult: 5,
            out_mult: 40,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.in_mult == 0 || self.out_mult == 0 {
            return Err(Error::Config(format!(
                "all architecture sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the architecture and its parameter layout.
    pub fn hash(&self, params: &ParamStore) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(self).expect("arch serializes").as_bytes());
        for (name, t) in params.iter() {
            hasher.update(name.as_bytes());
            hasher.update(format!("{:?}", t.shape()).as_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Computes `𝒦_t` (row-major `m x n`) from the four forward features.
#[derive(Clone, Debug)]
pub struct ForwardGainNet {
    pub emb: [DenseLayer; 4],
    pub gru_q: GruLayer,
    pub gru_sigma: GruLayer,
    pub gru_s: GruLayer,
    pub head: DenseLayer,
    pub out: DenseLayer,
}

/// Recurrent state of [`ForwardGainNet`].
#[derive(Clone, Debug)]
pub struct ForwardHidden<V> {
    pub q: V,
    pub sigma: V,
    pub s: V,
}

impl ForwardGainNet {
    fn new(b: &mut ParamBuilder<'_>, arch: &ArchConfig) -> Self {
        let (m, n, k) = (arch.m, arch.n, arch.in_mult);
        let relu = Activation::Relu;
        let emb = [
            DenseLayer::new(b, "fwd.emb1", n, k * n, relu),
            DenseLayer::new(b, "fwd.emb2", n, k * n, relu),
            DenseLayer::new(b, "fwd.emb3", m, k * m, relu),
            DenseLayer::new(b, "fwd.emb4", m, k * m, relu),
        ];
        let gru_q = GruLayer::new(b, "fwd.gru_q", 2 * k * m, m * m);
        let gru_sigma = GruLayer::new(b, "fwd.gru_sigma", m * m + k * n, m * m);
        let gru_s = GruLayer::new(b, "fwd.gru_s", m * m + k * n, n * n);
        let head_in = m * m + n * n;
        let head = DenseLayer::new(b, "fwd.head", head_in, arch.out_mult * head_in, relu);
        let out = DenseLayer::zeroed(b, "fwd.out", arch.out_mult * head_in, m * n, Activation::Identity);
        Self {
            emb,
            gru_q,
            gru_sigma,
            gru_s,
            head,
            out,
        }
    }

    pub fn param_count(&self) -> usize {
        self.emb.iter().map(DenseLayer::param_count).sum::<usize>()
            + self.gru_q.param_count()
            + self.gru_sigma.param_count()
            + self.gru_s.param_count()
            + self.head.param_count()
            + self.out.param_count()
    }

    pub fn zero_hidden<G: Graph>(&self, g: &mut G, batch: usize) -> ForwardHidden<G::Var> {
        ForwardHidden {
            q: g.input(self.gru_q.hidden, vec![0.0; batch * self.gru_q.hidden]),
            sigma: g.input(self.gru_sigma.hidden, vec![0.0; batch * self.gru_sigma.hidden]),
            s: g.input(self.gru_s.hidden, vec![0.0; batch * self.gru_s.hidden]),
        }
    }

    /// One step: updates `hidden` and returns the gain rows (`batch x m·n`).
    pub fn step<G: Graph>(&self, g: &mut G, features: [&G::Var; 4], hidden: &mut ForwardHidden<G::Var>) -> G::Var {
        let e: Vec<G::Var> = self
            .emb
            .iter()
            .zip(features)
            .map(|(layer, f)| layer.forward(g, f))
            .collect();
        let q_in = g.concat(&[&e[2], &e[3]]);
        hidden.q = self.gru_q.step(g, &q_in, &hidden.q);
        let sigma_in = g.concat(&[&hidden.q, &e[0]]);
        hidden.sigma = self.gru_sigma.step(g, &sigma_in, &hidden.sigma);
        let s_in = g.concat(&[&hidden.sigma, &e[1]]);
        hidden.s = self.gru_s.step(g, &s_in, &hidden.s);
        let head_in = g.concat(&[&hidden.sigma, &hidden.s]);
        let z = self.head.forward(g, &head_in);
        self.out.forward(g, &z)
    }
}

/// Computes `𝒢_t` (row-major `m x m`) from the three backward features.
#[derive(Clone, Debug)]
pub struct BackwardGainNet {
    pub emb: DenseLayer,
    pub gru1: GruLayer,
    pub gru2: GruLayer,
    pub head: DenseLayer,
    pub out: DenseLayer,
}

/// Recurrent state of [`BackwardGainNet`].
#[derive(Clone, Debug)]
pub struct BackwardHidden<V> {
    pub h1: V,
    pub h2: V,
}

impl BackwardGainNet {
    fn new(b: &mut ParamBuilder<'_>, arch: &ArchConfig) -> Self {
        let m = arch.m;
        let m2 = m * m;
        let emb_w = arch.in_mult * 3 * m;
        Self {
            emb: DenseLayer::new(b, "bwd.emb", 3 * m, emb_w, Activation::Relu),
            gru1: GruLayer::new(b, "bwd.gru1", emb_w, m2),
            gru2: GruLayer::new(b, "bwd.gru2", m2, m2),
            head: DenseLayer::new(b, "bwd.head", m2, arch.out_mult * m2, Activation::Relu),
            out: DenseLayer::zeroed(b, "bwd.out", arch.out_mult * m2, m2, Activation::Identity),
        }
    }

    pub fn param_count(&self) -> usize {
        self.emb.param_count()
            + self.gru1.param_count()
            + self.gru2.param_count()
            + self.head.param_count()
            + self.out.param_count()
    }

    pub fn zero_hidden<G: Graph>(&self, g: &mut G, batch: usize) -> BackwardHidden<G::Var> {
        let w = self.gru1.hidden;
        BackwardHidden {
            h1: g.input(w, vec![0.0; batch * w]),
            h2: g.input(w, vec![0.0; batch * w]),
        }
    }

    pub fn step<G: Graph>(
        &self,
        g: &mut G,
        features: &BackwardFeatures<G::Var>,
        hidden: &mut BackwardHidden<G::Var>,
    ) -> G::Var {
        let x = g.concat(&[&features.d1, &features.d2, &features.d3]);
        let e = self.emb.forward(g, &x);
        hidden.h1 = self.gru1.step(g, &e, &hidden.h1);
        hidden.h2 = self.gru2.step(g, &hidden.h1, &hidden.h2);
        let z = self.head.forward(g, &hidden.h2);
        self.out.forward(g, &z)
    }
}

/// Forward features at step `t`, each a `batch x len` block.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardFeatures<V> {
    /// `y_t - y_{t-1}`
    pub f1: V,
    /// `y_t - ŷ_{t|t-1}`
    pub f2: V,
    /// `x̂_{t-1|t-1} - x̂_{t-1|t-2}`
    pub f3: V,
    /// `x̂_{t-1|t-1} - x̂_{t-2|t-2}`
    pub f4: V,
}

/// Backward features at step `t`, each a `batch x m` block.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardFeatures<V> {
    /// `x̂_{t+1} - x̂_{t+1|t}`
    pub d1: V,
    /// `x̂_{t+1} - x̂_{t+1|t+1}`
    pub d2: V,
    /// `x̂_{t+2} - x̂_{t+1}`, zero when `t = T-1`.
    pub d3: V,
}

/// Forward features for one sequence. At `t = 1` pass `y_prev = y_t` and
/// `x0` for every previous state estimate so that `f1 = f3 = f4 = 0`.
pub fn forward_features(
    y_t: &DVector<f64>,
    y_prev: &DVector<f64>,
    y_pred: &DVector<f64>,
    x_post_prev: &DVector<f64>,
    x_prior_prev: &DVector<f64>,
    x_post_prev2: &DVector<f64>,
) -> ForwardFeatures<DVector<f64>> {
    ForwardFeatures {
        f1: y_t - y_prev,
        f2: y_t - y_pred,
        f3: x_post_prev - x_prior_prev,
        f4: x_post_prev - x_post_prev2,
    }
}

/// Backward features for one sequence; `x_smooth_next2` is `None` at `t = T-1`.
pub fn backward_features(
    x_smooth_next: &DVector<f64>,
    x_prior_next: &DVector<f64>,
    x_post_next: &DVector<f64>,
    x_smooth_next2: Option<&DVector<f64>>,
) -> BackwardFeatures<DVector<f64>> {
    BackwardFeatures {
        d1: x_smooth_next - x_prior_next,
        d2: x_smooth_next - x_post_next,
        d3: x_smooth_next2
            .map(|x| x - x_smooth_next)
            .unwrap_or_else(|| DVector::zeros(x_smooth_next.len())),
    }
}

/// Sequences of equal horizon stored time-major: `y[t-1]` holds `y_t` for every sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub m: usize,
    pub n: usize,
    pub size: usize,
    /// `size x m`
    pub x0: Vec<f64>,
    /// `T` blocks of `size x n`
    pub y: Vec<Vec<f64>>,
}

impl SequenceBatch {
    pub fn new(m: usize, n: usize, x0: Vec<f64>, y: Vec<Vec<f64>>) -> Result<Self> {
        if m == 0 || n == 0 || x0.is_empty() || !x0.len().is_multiple_of(m) {
            return Err(Error::Dimension(format!(
                "batch needs a non-empty x0 with a multiple of {m} values"
            )));
        }
        let size = x0.len() / m;
        if y.is_empty() {
            return Err(Error::Empty("batch has no observations".into()));
        }
        if let Some(bad) = y.iter().position(|b| b.len() != size * n) {
            return Err(Error::Dimension(format!(
                "observation block {bad} has {} values, expected {}",
                y[bad].len(),
                size * n
            )));
        }
        Ok(Self { m, n, size, x0, y })
    }

    pub fn from_trajectories(trajs: &[&Trajectory]) -> Result<Self> {
        let first = trajs
            .first()
            .ok_or_else(|| Error::Empty("no trajectories in batch".into()))?;
        let (m, n, horizon) = (first.m(), first.n(), first.len());
        if let Some(bad) = trajs
            .iter()
            .position(|t| t.m() != m || t.n() != n || t.len() != horizon)
        {
            return Err(Error::Dimension(format!(
                "trajectory {bad} differs in shape from the first one in its batch"
            )));
        }
        let x0 = trajs.iter().flat_map(|t| t.state(0).iter().copied()).collect();
        let y = (1..=horizon)
            .map(|t| trajs.iter().flat_map(|tr| tr.observation(t).iter().copied()).collect())
            .collect();
        Self::new(m, n, x0, y)
    }

    pub fn single(x0: &DVector<f64>, ys: &[DVector<f64>]) -> Result<Self> {
        let n = ys.first().map(|y| y.len()).unwrap_or(0);
        Self::new(
            x0.len(),
            n,
            x0.as_slice().to_vec(),
            ys.iter().map(|y| y.as_slice().to_vec()).collect(),
        )
    }

    pub fn horizon(&self) -> usize {
        self.y.len()
    }
}

/// Fixed gains that replace the network outputs, mainly for testing.
#[derive(Clone, Debug, Default)]
pub struct GainOverrides {
    /// `𝒦_t` for `t = 1..T` (`m x n` each).
    pub forward: Option<Vec<DMatrix<f64>>>,
    /// `𝒢_t` for `t = 1..T-1` (`m x m` each).
    pub backward: Option<Vec<DMatrix<f64>>>,
}

impl GainOverrides {
    pub fn zero(m: usize, n: usize, horizon: usize) -> Self {
        Self {
            forward: Some(vec![DMatrix::zeros(m, n); horizon]),
            backward: Some(vec![DMatrix::zeros(m, m); horizon.saturating_sub(1)]),
        }
    }
}

/// Graph handles for every estimate of an unrolled batch; entry `t-1` is step `t`.
pub struct Unrolled<V> {
    pub x_prior: Vec<V>,
    pub x_post: Vec<V>,
    /// Empty after a forward-only run.
    pub x_smooth: Vec<V>,
}

/// Plain-value estimates; each entry is a `size x m` block, entry `t-1` is step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEstimates {
    pub m: usize,
    pub size: usize,
    pub x_prior: Vec<Vec<f64>>,
    pub x_post: Vec<Vec<f64>>,
    pub x_smooth: Vec<Vec<f64>>,
}

impl BatchEstimates {
    /// States `x̂_1..x̂_T` of sequence `i` from one of the blocks above.
    pub fn sequence(&self, blocks: &[Vec<f64>], i: usize) -> Vec<DVector<f64>> {
        blocks
            .iter()
            .map(|b| DVector::from_column_slice(&b[i * self.m..(i + 1) * self.m]))
            .collect()
    }
}

/// Learned-gain smoother.
#[derive(Clone)]
pub struct RtsNetModel {
    pub f: Arc<dyn VectorFunction>,
    pub h: Arc<dyn VectorFunction>,
    pub arch: ArchConfig,
    pub params: ParamStore,
    pub forward_net: ForwardGainNet,
    pub backward_net: BackwardGainNet,
}

impl std::fmt::Debug for RtsNetModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RtsNetModel")
            .field("arch", &self.arch)
            .field("params", &self.params.total_count())
            .finish()
    }
}

impl RtsNetModel {
    pub fn new(f: Arc<dyn VectorFunction>, h: Arc<dyn VectorFunction>, arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        if f.input_dim() != arch.m || f.output_dim() != arch.m {
            return Err(Error::Dimension(format!(
                "f maps {} -> {}, architecture expects {m} -> {m}",
                f.input_dim(),
                f.output_dim(),
                m = arch.m
            )));
        }
        if h.input_dim() != arch.m || h.output_dim() != arch.n {
            return Err(Error::Dimension(format!(
                "h maps {} -> {}, architecture expects {} -> {}",
                h.input_dim(),
                h.output_dim(),
                arch.m,
                arch.n
            )));
        }
        let mut params = ParamStore::new();
        let (forward_net, backward_net) = {
            let mut b = ParamBuilder::new(&mut params, seed);
            (ForwardGainNet::new(&mut b, &arch), BackwardGainNet::new(&mut b, &arch))
        };
        Ok(Self {
            f,
            h,
            arch,
            params,
            forward_net,
            backward_net,
        })
    }

    /// Model that uses the dynamics and observation functions of `model` (but not its noise).
    pub fn for_model(model: &StateSpaceModel, seed: u64) -> Result<Self> {
        Self::new(
            Arc::clone(&model.f),
            Arc::clone(&model.h),
            ArchConfig::new(model.m(), model.n()),
            seed,
        )
    }

    pub fn arch_hash(&self) -> String {
        self.arch.hash(&self.params)
    }

    /// Records both passes on `g`. With `smooth = false` only the forward pass runs.
    pub fn unroll<G: Graph>(
        &self,
        g: &mut G,
        batch: &SequenceBatch,
        overrides: &GainOverrides,
        smooth: bool,
    ) -> Result<Unrolled<G::Var>> {
        let (m, n, size) = (self.arch.m, self.arch.n, batch.size);
        if batch.m != m || batch.n != n {
            return Err(Error::Dimension(format!(
                "batch is {}x{}, model is {m}x{n}",
                batch.m, batch.n
            )));
        }
        let horizon = batch.horizon();
        check_overrides(overrides, m, n, horizon)?;

        let x0 = g.input(m, batch.x0.clone());
        let mut hidden = self.forward_net.zero_hidden(g, size);
        let mut x_prior: Vec<G::Var> = Vec::with_capacity(horizon);
        let mut x_post: Vec<G::Var> = Vec::with_capacity(horizon);

        for t in 1..=horizon {
            let y = g.input(n, batch.y[t - 1].clone());
            let y_prev = if t == 1 {
                y.clone()
            } else {
                g.input(n, batch.y[t - 2].clone())
            };
            let post_prev = if t == 1 { x0.clone() } else { x_post[t - 2].clone() };
            let prior_prev = if t == 1 { x0.clone() } else { x_prior[t - 2].clone() };
            let post_prev2 = match t {
                1 | 2 => x0.clone(),
                _ => x_post[t - 3].clone(),
            };

            let prior = g.map_fn(self.f.as_ref(), &post_prev);
            let y_pred = g.map_fn(self.h.as_ref(), &prior);
            let innovation = g.sub(&y, &y_pred);

            let gain = match &overrides.forward {
                Some(gains) => repeat_rows(g, &gains[t - 1], size),
                None => {
                    let f1 = g.sub(&y, &y_prev);
                    let f3 = g.sub(&post_prev, &prior_prev);
                    let f4 = g.sub(&post_prev, &post_prev2);
                    self.forward_net.step(g, [&f1, &innovation, &f3, &f4], &mut hidden)
                }
            };
            let correction = g.batch_matvec(&gain, m, n, &innovation);
            let post = g.add(&prior, &correction);
            if g.value(&post).iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { t });
            }
            x_prior.push(prior);
            x_post.push(post);
        }

        let mut x_smooth: Vec<G::Var> = Vec::new();
        if smooth {
            // Built back to front, reversed at the end.
            let mut rev: Vec<G::Var> = vec![x_post[horizon - 1].clone()];
            let mut hidden = self.backward_net.zero_hidden(g, size);
            let zeros = g.input(m, vec![0.0; size * m]);
            for t in (1..horizon).rev() {
                let next = rev.last().expect("non-empty").clone();
                let d1 = g.sub(&next, &x_prior[t]);
                let gain = match &overrides.backward {
                    Some(gains) => repeat_rows(g, &gains[t - 1], size),
                    None => {
                        let d2 = g.sub(&next, &x_post[t]);
                        let d3 = if rev.len() >= 2 {
                            g.sub(&rev[rev.len() - 2], &next)
                        } else {
                            zeros.clone()
                        };
                        let feats = BackwardFeatures { d1: d1.clone(), d2, d3 };
                        self.backward_net.step(g, &feats, &mut hidden)
                    }
                };
                let correction = g.batch_matvec(&gain, m, m, &d1);
                let smoothed = g.add(&x_post[t - 1], &correction);
                if g.value(&smoothed).iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence { t });
                }
                rev.push(smoothed);
            }
            rev.reverse();
            x_smooth = rev;
        }
        Ok(Unrolled {
            x_prior,
            x_post,
            x_smooth,
        })
    }

    fn run(&self, batch: &SequenceBatch, overrides: &GainOverrides, smooth: bool) -> Result<BatchEstimates> {
        let mut g = Eval::new(&self.params);
        let out = self.unroll(&mut g, batch, overrides, smooth)?;
        let take = |vs: Vec<crate::neural::Value>| vs.into_iter().map(|v| v.data).collect();
        Ok(BatchEstimates {
            m: self.arch.m,
            size: batch.size,
            x_prior: take(out.x_prior),
            x_post: take(out.x_post),
            x_smooth: take(out.x_smooth),
        })
    }

    /// Forward pass only: priors and posteriors.
    pub fn forward_batch(&self, batch: &SequenceBatch, overrides: &GainOverrides) -> Result<BatchEstimates> {
        self.run(batch, overrides, false)
    }

    /// Both passes; `x_smooth[T-1]` is the forward posterior at `T`.
    pub fn smooth_batch(&self, batch: &SequenceBatch, overrides: &GainOverrides) -> Result<BatchEstimates> {
        self.run(batch, overrides, true)
    }
}

fn check_overrides(ov: &GainOverrides, m: usize, n: usize, horizon: usize) -> Result<()> {
    if let Some(k) = &ov.forward {
        if k.len() != horizon || k.iter().any(|g| g.shape() != (m, n)) {
            return Err(Error::Dimension(format!(
                "forward gain override needs {horizon} matrices of {m}x{n}"
            )));
        }
    }
    if let Some(gs) = &ov.backward {
        if gs.len() != horizon.saturating_sub(1) || gs.iter().any(|g| g.shape() != (m, m)) {
            return Err(Error::Dimension(format!(
                "backward gain override needs {} matrices of {m}x{m}",
                horizon.saturating_sub(1)
            )));
        }
    }
    Ok(())
}

fn repeat_rows<G: Graph>(g: &mut G, mat: &DMatrix<f64>, size: usize) -> G::Var {
    let (r, c) = mat.shape();
    let mut row = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            row.push(mat[(i, j)]);
        }
    }
    let data = row.iter().copied().cycle().take(size * r * c).collect();
    g.input(r * c, data)
}

/// Forward pass on one sequence: `(x̂_{t|t-1}, x̂_{t|t})` for `t = 1..T`.
#[allow(clippy::type_complexity)]
pub fn rtsnet_forward(
    model: &RtsNetModel,
    x0: &DVector<f64>,
    ys: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let out = model.forward_batch(&SequenceBatch::single(x0, ys)?, &GainOverrides::default())?;
    Ok((out.sequence(&out.x_prior, 0), out.sequence(&out.x_post, 0)))
}

/// Smoothed states `x̂_1..x̂_T` of one sequence.
pub fn rtsnet_smooth(model: &RtsNetModel, x0: &DVector<f64>, ys: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let out = model.smooth_batch(&SequenceBatch::single(x0, ys)?, &GainOverrides::default())?;
    Ok(out.sequence(&out.x_smooth, 0))
}

/// Applies the backward network once to a single feature set.
pub fn backward_gain_net(
    model: &RtsNetModel,
    feats: &BackwardFeatures<DVector<f64>>,
    hidden: Option<BackwardHidden<Vec<f64>>>,
) -> Result<(DMatrix<f64>, BackwardHidden<Vec<f64>>)> {
    let m = model.arch.m;
    for (name, d) in [("d1", &feats.d1), ("d2", &feats.d2), ("d3", &feats.d3)] {
        if d.len() != m {
            return Err(Error::Dimension(format!("{name} has length {}, expected {m}", d.len())));
        }
    }
    let mut g = Eval::new(&model.params);
    let mut h = match hidden {
        Some(h) => {
            if h.h1.len() != m * m || h.h2.len() != m * m {
                return Err(Error::Dimension(format!("hidden states must have length {}", m * m)));
            }
            BackwardHidden {
                h1: g.input(m * m, h.h1),
                h2: g.input(m * m, h.h2),
            }
        }
        None => model.backward_net.zero_hidden(&mut g, 1),
    };
    let f = BackwardFeatures {
        d1: g.input(m, feats.d1.as_slice().to_vec()),
        d2: g.input(m, feats.d2.as_slice().to_vec()),
        d3: g.input(m, feats.d3.as_slice().to_vec()),
    };
    let out = model.backward_net.step(&mut g, &f, &mut h);
    Ok((
        DMatrix::from_row_slice(m, m, &out.data),
        BackwardHidden {
            h1: h.h1.data,
            h2: h.h2.data,
        },
    ))
}

/// Trainable parameters across both gain networks.
pub fn count_params(model: &RtsNetModel) -> usize {
    model.params.total_count()
}
