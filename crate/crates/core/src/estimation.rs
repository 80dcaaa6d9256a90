//! Local Kalman filter, remote estimator over the lossy uplink, and the
//! error-covariance recursions of both.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ValidatedModel;

/// Stopping rule for the covariance fixed-point iterations.
pub const FIXED_POINT_TOL: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITER: usize = 100_000;

/// Conditional means held by the two controllers at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub xhat_local: DVector<f64>,
    pub xhat_local_pred: DVector<f64>,
    pub xhat_remote: DVector<f64>,
    pub xhat_remote_pred: DVector<f64>,
    pub k: usize,
}

impl EstimatorState {
    /// State before the first measurement: both predictions equal the prior mean.
    pub fn prior(model: &ValidatedModel) -> Self {
        EstimatorState {
            xhat_local: model.x0_mean.clone(),
            xhat_local_pred: model.x0_mean.clone(),
            xhat_remote: model.x0_mean.clone(),
            xhat_remote_pred: model.x0_mean.clone(),
            k: 0,
        }
    }
}

/// Local error covariances and Kalman gains for steps `0..=N+1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceSchedule {
    pub sigma_pred: Vec<DMatrix<f64>>,
    pub sigma_filt: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
}

impl CovarianceSchedule {
    /// Number of stored steps (`N + 2`).
    pub fn len(&self) -> usize {
        self.sigma_filt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_filt.is_empty()
    }

    /// Covariance of the filter correction at step `k`:
    /// `Π_0 = Σ_init − Σ_{0|0}`, `Π_k = Σ_{k|k−1} − Σ_{k|k}`.
    pub fn innovation_cov(&self, k: usize) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.sigma_pred[k] - &self.sigma_filt[k]))
    }
}

fn measurement_update(
    model: &ValidatedModel,
    sigma_pred: &DMatrix<f64>,
    step: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = model.n();
    let c = &model.c;
    let innov = linalg::symmetrize(&(c * sigma_pred * c.transpose() + &model.q_v));
    if !linalg::is_finite(&innov) {
        return Err(Error::SingularInnovation { step });
    }
    let inv = match linalg::spd_inverse(&innov) {
        Some(inv) => inv,
        None => linalg::psd_pinv(&innov),
    };
    let w = sigma_pred * c.transpose() * inv;
    let i_wc = DMatrix::identity(n, n) - &w * c;
    let filt = &i_wc * sigma_pred * i_wc.transpose() + &w * &model.q_v * w.transpose();
    Ok((w, linalg::symmetrize(&filt)))
}

/// Forward pass of the filter covariance from `Σ_{0|−1} = Σ_init`.
///
/// Does not depend on the controls, so it is computed once per model.
pub fn covariance_schedule(model: &ValidatedModel, horizon: usize) -> Result<CovarianceSchedule> {
    let mut sigma_pred = Vec::with_capacity(horizon + 2);
    let mut sigma_filt = Vec::with_capacity(horizon + 2);
    let mut gains = Vec::with_capacity(horizon + 2);
    let mut pred = model.sigma_init.clone();
    for k in 0..horizon + 2 {
        let (w, filt) = measurement_update(model, &pred, k)?;
        let next = linalg::symmetrize(&(&model.a * &filt * model.a.transpose() + &model.q_w));
        sigma_pred.push(pred);
        sigma_filt.push(filt);
        gains.push(w);
        pred = next;
    }
    Ok(CovarianceSchedule { sigma_pred, sigma_filt, w: gains })
}

/// Fixed point of the filter covariance recursion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryFilter {
    pub sigma_pred: DMatrix<f64>,
    pub sigma_filt: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn stationary_filter(model: &ValidatedModel) -> Result<StationaryFilter> {
    let mut pred = model.sigma_init.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < FIXED_POINT_MAX_ITER {
        let (_, filt) = measurement_update(model, &pred, iterations)?;
        let next = linalg::symmetrize(&(&model.a * &filt * model.a.transpose() + &model.q_w));
        iterations += 1;
        let delta = linalg::max_abs_diff(&next, &pred);
        pred = next;
        if !linalg::is_finite(&pred) {
            return Err(Error::Diverged { iterations });
        }
        if delta < FIXED_POINT_TOL * linalg::max_abs(&pred).max(1.0) {
            converged = true;
            break;
        }
    }
    let (w, filt) = measurement_update(model, &pred, iterations)?;
    Ok(StationaryFilter { sigma_pred: pred, sigma_filt: filt, w, converged, iterations })
}

/// Local prediction and measurement update for step `state.k` (or `state.k + 1`).
///
/// With `inputs = Some((U_{k−1}, ũ_{k−1}))` the filtered local mean in `state`
/// is propagated one step first; with `None` the stored prediction is used
/// as is (the first measurement). The remote fields are left untouched.
pub fn local_filter_step(
    model: &ValidatedModel,
    state: &EstimatorState,
    schedule: &CovarianceSchedule,
    y: &DVector<f64>,
    inputs: Option<(&DVector<f64>, &DVector<f64>)>,
) -> EstimatorState {
    let (k, pred) = match inputs {
        Some((u, u_tilde)) => (state.k + 1, &model.a * &state.xhat_local + model.b() * u + &model.b_local * u_tilde),
        None => (state.k, state.xhat_local_pred.clone()),
    };
    let filt = &pred + &schedule.w[k] * (y - &model.c * &pred);
    EstimatorState {
        xhat_local: filt,
        xhat_local_pred: pred,
        xhat_remote: state.xhat_remote.clone(),
        xhat_remote_pred: state.xhat_remote_pred.clone(),
        k,
    }
}

/// Remote update after the local step: a delivered packet (`eta = true`)
/// overwrites the remote mean with the local one.
///
/// The remote predictor uses only the stacked input `U_{k−1}`; the local
/// correction `ũ` is not known to the remote side.
pub fn remote_estimator_step(
    model: &ValidatedModel,
    state: &EstimatorState,
    eta: bool,
    u_prev: Option<&DVector<f64>>,
) -> EstimatorState {
    let pred = match u_prev {
        Some(u) => &model.a * &state.xhat_remote + model.b() * u,
        None => state.xhat_remote_pred.clone(),
    };
    let remote = if eta { state.xhat_local.clone() } else { pred.clone() };
    EstimatorState { xhat_remote: remote, xhat_remote_pred: pred, ..state.clone() }
}

/// `A − B_local·Λ⁻¹L`: the remote error dynamics after a lost packet.
pub fn remote_error_dynamics(model: &ValidatedModel, local_gain: &DMatrix<f64>) -> DMatrix<f64> {
    &model.a - &model.b_local * local_gain
}

/// `√p · ρ(A − B_local·Λ⁻¹L)`.
pub fn remote_spectral_value(model: &ValidatedModel, local_gain: &DMatrix<f64>) -> f64 {
    model.p.sqrt() * linalg::spectral_radius(&remote_error_dynamics(model, local_gain))
}

/// One step of the remote error covariance:
/// `Σ^R_k = (1−p)Σ^L_{k|k} + p[FΣ^R_{k−1}F' + AΣ^L_{k−1}A' − FΣ^L_{k−1}F' + Q_w]`,
/// where `Σ^L_{k−1}` is the previous filtered local covariance.
pub fn remote_covariance_step(
    model: &ValidatedModel,
    f: &DMatrix<f64>,
    sigma_r_prev: &DMatrix<f64>,
    sigma_l_prev: &DMatrix<f64>,
    sigma_l_now: &DMatrix<f64>,
) -> DMatrix<f64> {
    let p = model.p;
    let lost = f * sigma_r_prev * f.transpose() + &model.a * sigma_l_prev * model.a.transpose()
        - f * sigma_l_prev * f.transpose()
        + &model.q_w;
    linalg::symmetrize(&(sigma_l_now * (1.0 - p) + lost * p))
}

/// Remote error covariance along a finite horizon for given per-step local gains.
pub fn remote_covariance_schedule(
    model: &ValidatedModel,
    schedule: &CovarianceSchedule,
    local_gains: &[DMatrix<f64>],
) -> Vec<DMatrix<f64>> {
    let p = model.p;
    let mut out = Vec::with_capacity(schedule.len());
    out.push(linalg::symmetrize(&(&schedule.sigma_filt[0] * (1.0 - p) + &model.sigma_init * p)));
    for k in 1..schedule.len() {
        let f = remote_error_dynamics(model, &local_gains[(k - 1).min(local_gains.len() - 1)]);
        let next = remote_covariance_step(model, &f, &out[k - 1], &schedule.sigma_filt[k - 1], &schedule.sigma_filt[k]);
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemoteCovarianceAssessment {
    pub converges: bool,
    pub spectral_value: f64,
    pub sigma_r_limit: Option<DMatrix<f64>>,
    pub sigma_l_limit: DMatrix<f64>,
    pub iterations: usize,
}

/// Mean-square convergence test for the remote error covariance under a
/// stationary local gain, plus its limit when it exists.
pub fn remote_covariance_assessment(
    model: &ValidatedModel,
    local_gain: &DMatrix<f64>,
) -> Result<RemoteCovarianceAssessment> {
    let filter = stationary_filter(model)?;
    let spectral_value = remote_spectral_value(model, local_gain);
    let converges = spectral_value < 1.0;
    let mut iterations = 0;
    let sigma_r_limit = if converges {
        let f = remote_error_dynamics(model, local_gain);
        let sl = &filter.sigma_filt;
        let mut sr = sl.clone();
        let mut done = false;
        while iterations < FIXED_POINT_MAX_ITER {
            let next = remote_covariance_step(model, &f, &sr, sl, sl);
            iterations += 1;
            let delta = linalg::max_abs_diff(&next, &sr);
            sr = next;
            if delta < FIXED_POINT_TOL * linalg::max_abs(&sr).max(1.0) {
                done = true;
                break;
            }
        }
        done.then_some(sr)
    } else {
        None
    };
    Ok(RemoteCovarianceAssessment {
        converges,
        spectral_value,
        sigma_r_limit,
        sigma_l_limit: filter.sigma_filt,
        iterations,
    })
}
