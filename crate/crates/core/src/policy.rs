//! Local and remote control laws built from the Riccati gains.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::estimation::EstimatorState;
use crate::model::ValidatedModel;
use crate::riccati::{GainSet, RiccatiSolution, StationarySolution};

/// Deterministic mean path: `Ex_k` and `EU_k = −(K_k + K̄_k)Ex_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanState {
    pub ex: DVector<f64>,
    pub eu: DVector<f64>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlAction {
    pub u_local: DVector<f64>,
    pub u_remote: DVector<f64>,
    /// Stacked `[û_local; u_remote]`.
    pub u: DVector<f64>,
    pub u_tilde: DVector<f64>,
}

/// Per-step gains over a horizon `0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySchedule {
    pub gains: Vec<GainSet>,
    pub mu: f64,
}

impl PolicySchedule {
    pub fn from_finite(sol: &RiccatiSolution) -> Self {
        PolicySchedule { gains: sol.gains.clone(), mu: sol.mu }
    }

    /// Stationary gains repeated for steps `0..=horizon`.
    pub fn from_stationary(sol: &StationarySolution, horizon: usize) -> Self {
        PolicySchedule { gains: vec![sol.gains.clone(); horizon + 1], mu: sol.mu }
    }

    pub fn horizon(&self) -> usize {
        self.gains.len() - 1
    }
}

/// `U = −K x̂^R − K̄ Ex`, `ũ = −Λ⁻¹L(x̂^L − x̂^R)`; the local input is the top
/// block of `U` plus `ũ`, the remote input the bottom block.
pub fn control_action(gains: &GainSet, est: &EstimatorState, mean: &MeanState) -> ControlAction {
    let m1 = gains.lambda.nrows();
    let u = -(&gains.k * &est.xhat_remote) - &gains.kbar * &mean.ex;
    let u_tilde = -(&gains.local_gain * (&est.xhat_local - &est.xhat_remote));
    let m = u.len();
    let u_local = u.rows(0, m1) + &u_tilde;
    let u_remote = u.rows(m1, m - m1).into_owned();
    ControlAction { u_local, u_remote, u, u_tilde }
}

/// Mean path of length `N + 2` from `Ex_0 = x̄₀`. The last entry has `EU = 0`
/// because no input is applied at `N + 1`.
pub fn mean_propagate(model: &ValidatedModel, policy: &PolicySchedule, x0_mean: &DVector<f64>) -> Vec<MeanState> {
    let mut out = Vec::with_capacity(policy.gains.len() + 1);
    let mut ex = x0_mean.clone();
    for (k, g) in policy.gains.iter().enumerate() {
        let eu = -((&g.k + &g.kbar) * &ex);
        let next = &model.a * &ex + model.b() * &eu;
        out.push(MeanState { ex, eu, k });
        ex = next;
    }
    out.push(MeanState { ex, eu: DVector::zeros(model.m()), k: policy.gains.len() });
    out
}

/// Closed-loop mean dynamics `A − B(K + K̄)`.
pub fn mean_dynamics(model: &ValidatedModel, gains: &GainSet) -> DMatrix<f64> {
    &model.a - model.b() * (&gains.k + &gains.kbar)
}

/// Largest entries of the three completed-square residuals
/// `U − EU + K(x̂^R − Ex)`, `EU + (K + K̄)Ex`, `ũ + Λ⁻¹L(x̂^L − x̂^R)`.
/// All three vanish for the optimal policy.
pub fn penalty_residuals(gains: &GainSet, est: &EstimatorState, mean: &MeanState, action: &ControlAction) -> [f64; 3] {
    let max = |v: DVector<f64>| v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    [
        max(&action.u - &mean.eu + &gains.k * (&est.xhat_remote - &mean.ex)),
        max(&mean.eu + (&gains.k + &gains.kbar) * &mean.ex),
        max(&action.u_tilde + &gains.local_gain * (&est.xhat_local - &est.xhat_remote)),
    ]
}
