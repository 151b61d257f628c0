//! Model-based Kalman filter and RTS smoother (extended when `f` or `h` is
//! nonlinear), plus a batch MAP solver used as ground truth for linear models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{solve, solve_right, symmetrize};
use crate::ssmodel::StateSpaceModel;

/// Prediction half of a filter step.
#[derive(Clone, Debug)]
pub struct Prior {
    /// `x̂_{t|t-1}`
    pub x_prior: DVector<f64>,
    /// `Σ̂_{t|t-1}`
    pub sigma_prior: DMatrix<f64>,
    /// `ŷ_{t|t-1}`
    pub y_pred: DVector<f64>,
    /// Innovation covariance `Ŝ_t`.
    pub s: DMatrix<f64>,
    /// Jacobian of `f` at `x̂_{t-1|t-1}`.
    pub f_jac: DMatrix<f64>,
    /// Jacobian of `h` at `x̂_{t|t-1}`.
    pub h_jac: DMatrix<f64>,
}

/// One complete forward (filter) step.
#[derive(Clone, Debug)]
pub struct FilterStep {
    pub x_prior: DVector<f64>,
    pub sigma_prior: DMatrix<f64>,
    pub y_pred: DVector<f64>,
    pub s: DMatrix<f64>,
    pub f_jac: DMatrix<f64>,
    pub h_jac: DMatrix<f64>,
    /// Forward gain `𝒦_t`.
    pub gain: DMatrix<f64>,
    /// `Δy_t = y_t - ŷ_{t|t-1}`
    pub innovation: DVector<f64>,
    /// `x̂_{t|t}`
    pub x_post: DVector<f64>,
    /// `Σ̂_{t|t}`
    pub sigma_post: DMatrix<f64>,
}

/// One backward (smoother) step.
#[derive(Clone, Debug)]
pub struct SmoothedStep {
    /// `x̂_t`
    pub x_smooth: DVector<f64>,
    /// `Σ̂_t`
    pub sigma_smooth: DMatrix<f64>,
    /// Backward gain `𝒢_t` (zero at the final step).
    pub gain: DMatrix<f64>,
    /// `x̂_{t+1} - f(x̂_{t|t})`
    pub bw_innovation: DVector<f64>,
    /// `Σ̂_{t+1} - Σ̂_{t+1|t}`
    pub d_sigma: DMatrix<f64>,
}

/// Knobs for [`rts_smooth_with`].
#[derive(Clone, Debug, Default)]
pub struct SmootherOptions {
    /// When set, the backward recursion starts from this known `x_T` (with
    /// zero covariance) instead of the filter posterior.
    pub final_state: Option<DVector<f64>>,
}

/// Propagates the posterior `(x̂_{t-1|t-1}, Σ̂_{t-1|t-1})` through the model.
pub fn kf_predict(model: &StateSpaceModel, x_post: &DVector<f64>, sigma_post: &DMatrix<f64>) -> Prior {
    let f_jac = model.f.jacobian(x_post.as_slice());
    let x_prior = model.f.apply(x_post);
    let mut sigma_prior = &f_jac * sigma_post * f_jac.transpose() + &model.q;
    symmetrize(&mut sigma_prior);

    let h_jac = model.h.jacobian(x_prior.as_slice());
    let y_pred = model.h.apply(&x_prior);
    let mut s = &h_jac * &sigma_prior * h_jac.transpose() + &model.r;
    symmetrize(&mut s);

    Prior {
        x_prior,
        sigma_prior,
        y_pred,
        s,
        f_jac,
        h_jac,
    }
}

/// `𝒦_t = Σ̂_{t|t-1} Ĥᵀ Ŝ_t⁻¹`, via a linear solve.
pub fn forward_gain(
    sigma_prior: &DMatrix<f64>,
    h_jac: &DMatrix<f64>,
    s: &DMatrix<f64>,
    t: usize,
) -> Result<DMatrix<f64>> {
    let rhs = sigma_prior * h_jac.transpose();
    solve_right(&rhs, s).ok_or(Error::Singular {
        what: "innovation covariance S",
        t,
    })
}

/// Applies the measurement `y` to a prediction with gain `gain`.
pub fn kf_update(prior: Prior, gain: DMatrix<f64>, y: &DVector<f64>) -> FilterStep {
    let innovation = y - &prior.y_pred;
    let x_post = &prior.x_prior + &gain * &innovation;
    let mut sigma_post = &prior.sigma_prior - &gain * &prior.s * gain.transpose();
    symmetrize(&mut sigma_post);
    FilterStep {
        x_prior: prior.x_prior,
        sigma_prior: prior.sigma_prior,
        y_pred: prior.y_pred,
        s: prior.s,
        f_jac: prior.f_jac,
        h_jac: prior.h_jac,
        gain,
        innovation,
        x_post,
        sigma_post,
    }
}

/// Runs the (extended) Kalman filter over `y_1..y_T`; entry `t-1` holds step `t`.
pub fn kalman_filter(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    observations: &[DVector<f64>],
) -> Result<Vec<FilterStep>> {
    check_inputs(model, x0, sigma0, observations)?;
    let mut steps: Vec<FilterStep> = Vec::with_capacity(observations.len());
    for (i, y) in observations.iter().enumerate() {
        let t = i + 1;
        let prior = match steps.last() {
            Some(prev) => kf_predict(model, &prev.x_post, &prev.sigma_post),
            None => kf_predict(model, x0, sigma0),
        };
        let gain = forward_gain(&prior.sigma_prior, &prior.h_jac, &prior.s, t)?;
        let step = kf_update(prior, gain, y);
        if step.x_post.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t });
        }
        steps.push(step);
    }
    Ok(steps)
}

/// `𝒢_t = Σ̂_{t|t} F̂ᵀ Σ̂_{t+1|t}⁻¹`, via a linear solve.
pub fn backward_gain(
    sigma_post: &DMatrix<f64>,
    f_jac: &DMatrix<f64>,
    sigma_prior_next: &DMatrix<f64>,
    t: usize,
) -> Result<DMatrix<f64>> {
    let rhs = sigma_post * f_jac.transpose();
    // A certain posterior needs no correction, even when the prediction is also certain.
    if rhs.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(rhs.nrows(), rhs.ncols()));
    }
    solve_right(&rhs, sigma_prior_next).ok_or(Error::Singular {
        what: "predicted covariance",
        t,
    })
}

/// One backward step at time `t`, fusing `filter_t` with the smoothed `t+1`.
///
/// `filter_next` is the forward step `t+1`; its prior already holds
/// `f(x̂_{t|t})`, `Σ̂_{t+1|t}` and the Jacobian of `f` at `x̂_{t|t}`.
pub fn rts_backward_step(
    filter_t: &FilterStep,
    filter_next: &FilterStep,
    smoothed_next: &SmoothedStep,
    t: usize,
) -> Result<SmoothedStep> {
    let gain = backward_gain(&filter_t.sigma_post, &filter_next.f_jac, &filter_next.sigma_prior, t)?;
    let bw_innovation = &smoothed_next.x_smooth - &filter_next.x_prior;
    let x_smooth = &filter_t.x_post + &gain * &bw_innovation;
    let d_sigma = &smoothed_next.sigma_smooth - &filter_next.sigma_prior;
    // Σ̂_t = Σ̂_{t|t} + 𝒢 (Σ̂_{t+1} - Σ̂_{t+1|t}) 𝒢ᵀ
    let mut sigma_smooth = &filter_t.sigma_post + &gain * &d_sigma * gain.transpose();
    symmetrize(&mut sigma_smooth);
    Ok(SmoothedStep {
        x_smooth,
        sigma_smooth,
        gain,
        bw_innovation,
        d_sigma,
    })
}

/// Smooths a completed forward pass; entry `t-1` holds time `t`.
pub fn smooth_filtered(steps: &[FilterStep], options: &SmootherOptions) -> Result<Vec<SmoothedStep>> {
    let Some(last) = steps.last() else {
        return Ok(Vec::new());
    };
    let m = last.x_post.len();
    let terminal = match &options.final_state {
        Some(x_t) => SmoothedStep {
            x_smooth: x_t.clone(),
            sigma_smooth: DMatrix::zeros(m, m),
            gain: DMatrix::zeros(m, m),
            bw_innovation: DVector::zeros(m),
            d_sigma: DMatrix::zeros(m, m),
        },
        None => SmoothedStep {
            x_smooth: last.x_post.clone(),
            sigma_smooth: last.sigma_post.clone(),
            gain: DMatrix::zeros(m, m),
            bw_innovation: DVector::zeros(m),
            d_sigma: DMatrix::zeros(m, m),
        },
    };
    let horizon = steps.len();
    let mut out = vec![terminal];
    for t in (1..horizon).rev() {
        let next = out.last().expect("non-empty");
        let step = rts_backward_step(&steps[t - 1], &steps[t], next, t)?;
        out.push(step);
    }
    out.reverse();
    Ok(out)
}

/// Forward filter followed by the backward RTS recursion.
pub fn rts_smooth(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    observations: &[DVector<f64>],
) -> Result<Vec<SmoothedStep>> {
    rts_smooth_with(model, x0, sigma0, observations, &SmootherOptions::default())
}

pub fn rts_smooth_with(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    observations: &[DVector<f64>],
    options: &SmootherOptions,
) -> Result<Vec<SmoothedStep>> {
    let steps = kalman_filter(model, x0, sigma0, observations)?;
    smooth_filtered(&steps, options)
}

fn check_inputs(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    observations: &[DVector<f64>],
) -> Result<()> {
    let (m, n) = (model.m(), model.n());
    if observations.is_empty() {
        return Err(Error::Empty("no observations to filter".into()));
    }
    if x0.len() != m || sigma0.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "initial state must be R^{m} with an {m}x{m} covariance"
        )));
    }
    if let Some(bad) = observations.iter().position(|y| y.len() != n) {
        return Err(Error::Dimension(format!(
            "observation {} has length {}, expected {n}",
            bad + 1,
            observations[bad].len()
        )));
    }
    Ok(())
}

/// Joint MAP estimate of `x_1..x_T` for a linear-Gaussian model.
///
/// Minimizes `‖x_1 - F x0‖²_{P1⁻¹} + Σ ‖x_t - F x_{t-1}‖²_{Q⁻¹} + Σ ‖y_t - H x_t‖²_{R⁻¹}`
/// with `P1 = F Σ0 Fᵀ + Q` by solving the stacked normal equations over all
/// `T` states at once (block-tridiagonal Cholesky, `O(T m³)`).
#[allow(clippy::too_many_arguments)]
pub fn batch_map_oracle(
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    observations: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let m = f.nrows();
    let horizon = observations.len();
    if horizon == 0 {
        return Err(Error::Empty("no observations".into()));
    }
    let singular = |what| Error::Singular { what, t: 0 };
    let eye = DMatrix::identity(m, m);
    let q_inv = solve(q, &eye).ok_or(singular("process covariance Q"))?;
    let p1 = f * sigma0 * f.transpose() + q;
    let p1_inv = solve(&p1, &eye).ok_or(singular("initial prior covariance"))?;
    let r_inv = solve(r, &DMatrix::identity(r.nrows(), r.nrows())).ok_or(singular("observation covariance R"))?;

    let ht_rinv = h.transpose() * &r_inv;
    let obs_block = &ht_rinv * h;
    let ft_qinv = f.transpose() * &q_inv;
    let trans_block = &ft_qinv * f;
    // Below-diagonal block coupling x_{t+1} to x_t.
    let coupling = -ft_qinv.transpose();

    // Block-tridiagonal Cholesky: A = L Lᵀ with diagonal blocks L_t and
    // sub-diagonal blocks C_t, then forward and back substitution.
    let mut chol: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    let mut z: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut diag = obs_block.clone();
        diag += if t == 0 { &p1_inv } else { &q_inv };
        if t + 1 < horizon {
            diag += &trans_block;
        }
        let mut b = &ht_rinv * &observations[t];
        if t == 0 {
            b += &p1_inv * (f * x0);
        }
        if t > 0 {
            let prev = &chol[t - 1];
            let c = prev
                .solve_lower_triangular(&coupling.transpose())
                .ok_or(Error::Singular {
                    what: "normal matrix (unobservable)",
                    t,
                })?
                .transpose();
            diag -= &c * c.transpose();
            b -= &c * &z[t - 1];
            sub.push(c);
        } else {
            sub.push(DMatrix::zeros(m, m));
        }
        let l = diag
            .cholesky()
            .ok_or(Error::Singular {
                what: "normal matrix (unobservable)",
                t: t + 1,
            })?
            .unpack();
        let zt = l.solve_lower_triangular(&b).ok_or(Error::Singular {
            what: "normal matrix (unobservable)",
            t: t + 1,
        })?;
        chol.push(l);
        z.push(zt);
    }
    let mut x = vec![DVector::zeros(m); horizon];
    for t in (0..horizon).rev() {
        let mut rhs = z[t].clone();
        if t + 1 < horizon {
            rhs -= sub[t + 1].transpose() * &x[t + 1];
        }
        x[t] = chol[t].tr_solve_lower_triangular(&rhs).ok_or(Error::Singular {
            what: "normal matrix (unobservable)",
            t: t + 1,
        })?;
    }
    Ok(x)
}
