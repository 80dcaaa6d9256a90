//! Coupled backward Riccati recursions for the remote gain `K`, the
//! mean-field correction `K̄` and the local correction `Λ⁻¹L`, finite and
//! stationary.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, GainMatrix, Result};
use crate::estimation;
use crate::linalg;
use crate::model::ValidatedModel;

pub const STATIONARY_TOL: f64 = 1e-10;
pub const STATIONARY_MAX_ITER: usize = 100_000;

/// Iterates are declared divergent past this multiple of the terminal size.
const DIVERGENCE_FACTOR: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSet {
    pub upsilon: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub kbar: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub nmat: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub l: DMatrix<f64>,
    /// `Λ⁻¹L`.
    pub local_gain: DMatrix<f64>,
}

impl GainSet {
    /// Re-test `Υ > 0`, `M > 0`, `Λ > 0`.
    pub fn is_positive(&self) -> bool {
        linalg::is_pd(&self.upsilon) && linalg::is_pd(&self.m) && linalg::is_pd(&self.lambda)
    }
}

/// Weights with the multiplier folded in: `Q_μ = Q + μQ_r`, `G_μ = G + μQ_r`.
pub fn weighted(model: &ValidatedModel, mu: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (&model.q + &model.q_risk * mu, &model.g + &model.q_risk * mu)
}

/// Terminal values `Z = X = G_μ`, `S = −μQ_r`.
pub fn terminal(model: &ValidatedModel, mu: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (_, g_mu) = weighted(model, mu);
    (g_mu.clone(), g_mu, &model.q_risk * -mu)
}

pub struct StepOutput {
    pub gains: GainSet,
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub theta: DMatrix<f64>,
}

fn inverse(m: &DMatrix<f64>, step: usize, which: GainMatrix) -> Result<DMatrix<f64>> {
    linalg::spd_inverse(m).ok_or(Error::NotSolvable { step, which })
}

/// One backward step from `(Z, X, S)_{k+1}` to the gains at `k` and `(Z, X, S, Θ)_k`.
pub fn riccati_step(
    model: &ValidatedModel,
    mu: f64,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    s: &DMatrix<f64>,
    step: usize,
) -> Result<StepOutput> {
    let a = &model.a;
    let at = a.transpose();
    let b = model.b();
    let bt = b.transpose();
    let bl = &model.b_local;
    let p = model.p;
    let (q_mu, _) = weighted(model, mu);
    let theta_next = z * (1.0 - p) + x * p;

    let upsilon = linalg::symmetrize(&(&bt * z * b + model.r()));
    let upsilon_inv = inverse(&upsilon, step, GainMatrix::Upsilon)?;
    let k = &upsilon_inv * (&bt * z * a);

    let m = linalg::symmetrize(&(&upsilon + &bt * s * b));
    let m_inv = inverse(&m, step, GainMatrix::M)?;
    let nmat = &bt * (z + s) * a;
    let k_full = &m_inv * &nmat;
    let kbar = &k_full - &k;

    let lambda = linalg::symmetrize(&(bl.transpose() * &theta_next * bl + &model.r_local));
    let lambda_inv = inverse(&lambda, step, GainMatrix::Lambda)?;
    let l = bl.transpose() * &theta_next * a;
    let local_gain = &lambda_inv * &l;

    let kuk = k.transpose() * &upsilon * &k;
    let z_new = linalg::symmetrize(&(&at * z * a + &q_mu - &kuk));
    let x_new = linalg::symmetrize(&(&at * &theta_next * a + &q_mu - l.transpose() * &lambda_inv * &l));
    let s_new = linalg::symmetrize(&(&at * s * a - &model.q_risk * mu + &kuk - k_full.transpose() * &m * &k_full));
    let theta = &z_new * (1.0 - p) + &x_new * p;

    Ok(StepOutput {
        gains: GainSet { upsilon, k, kbar, m, nmat, lambda, l, local_gain },
        z: z_new,
        x: x_new,
        s: s_new,
        theta,
    })
}

/// Finite-horizon solution; `Z, X, S, Θ` are indexed `0..=N+1`, gains `0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiSolution {
    pub z: Vec<DMatrix<f64>>,
    pub x: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    pub theta: Vec<DMatrix<f64>>,
    pub gains: Vec<GainSet>,
    pub mu: f64,
    pub horizon: usize,
    pub solvable: bool,
}

impl RiccatiSolution {
    /// Recheck positivity of every `Υ_k, M_k, Λ_k`.
    pub fn verify_positivity(&self) -> bool {
        self.gains.iter().all(GainSet::is_positive)
    }
}

pub fn solve_finite(model: &ValidatedModel, mu: f64, horizon: usize) -> Result<RiccatiSolution> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("multiplier must be finite and >= 0, got {mu}")));
    }
    let p = model.p;
    let (z_t, x_t, s_t) = terminal(model, mu);
    let theta_t = &z_t * (1.0 - p) + &x_t * p;
    let len = horizon + 2;
    let mut z = vec![z_t; len];
    let mut x = vec![x_t; len];
    let mut s = vec![s_t; len];
    let mut theta = vec![theta_t; len];
    let mut gains = Vec::with_capacity(horizon + 1);
    for k in (0..=horizon).rev() {
        let out = riccati_step(model, mu, &z[k + 1], &x[k + 1], &s[k + 1], k)?;
        z[k] = out.z;
        x[k] = out.x;
        s[k] = out.s;
        theta[k] = out.theta;
        gains.push(out.gains);
    }
    gains.reverse();
    Ok(RiccatiSolution { z, x, s, theta, gains, mu, horizon, solvable: true })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityFlags {
    pub z_pd: bool,
    pub z_plus_s_pd: bool,
    pub theta_pd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySolution {
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub gains: GainSet,
    pub mu: f64,
    pub converged: bool,
    pub iterations: usize,
    pub positivity: PositivityFlags,
    pub spectral_value: f64,
    pub ms_bounded: bool,
    /// Largest change of `(Z, X, S)` under one more step at the returned point.
    pub residual: f64,
}

/// Value iteration of the finite-horizon recursion from the terminal data
/// until successive `(Z, X, S)` agree to `tol·max(1, ‖Z‖_max)`.
pub fn solve_stationary(model: &ValidatedModel, mu: f64, tol: f64, max_iter: usize) -> Result<StationarySolution> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("multiplier must be finite and >= 0, got {mu}")));
    }
    let (mut z, mut x, mut s) = terminal(model, mu);
    let limit = DIVERGENCE_FACTOR * (1.0 + linalg::max_abs(&z).max(linalg::max_abs(&s)));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let out = riccati_step(model, mu, &z, &x, &s, iterations)?;
        iterations += 1;
        let delta = linalg::max_abs_diff(&out.z, &z)
            .max(linalg::max_abs_diff(&out.x, &x))
            .max(linalg::max_abs_diff(&out.s, &s));
        z = out.z;
        x = out.x;
        s = out.s;
        let size = linalg::max_abs(&z).max(linalg::max_abs(&x)).max(linalg::max_abs(&s));
        if !size.is_finite() || size > limit {
            return Err(Error::Diverged { iterations });
        }
        if delta < tol * linalg::max_abs(&z).max(1.0) {
            converged = true;
            break;
        }
    }
    let last = riccati_step(model, mu, &z, &x, &s, iterations)?;
    let residual =
        linalg::max_abs_diff(&last.z, &z).max(linalg::max_abs_diff(&last.x, &x)).max(linalg::max_abs_diff(&last.s, &s));
    let theta = &z * (1.0 - model.p) + &x * model.p;
    let positivity = PositivityFlags {
        z_pd: linalg::is_pd(&z),
        z_plus_s_pd: linalg::is_pd(&(&z + &s)),
        theta_pd: linalg::is_pd(&theta),
    };
    let spectral_value = estimation::remote_spectral_value(model, &last.gains.local_gain);
    let ms_bounded =
        converged && positivity.z_pd && positivity.z_plus_s_pd && positivity.theta_pd && spectral_value < 1.0;
    Ok(StationarySolution {
        z,
        x,
        s,
        theta,
        gains: last.gains,
        mu,
        converged,
        iterations,
        positivity,
        spectral_value,
        ms_bounded,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::validate;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn scalar_single_step() {
        let v = validate(&fixtures::scalar(1.0)).unwrap();
        let sol = solve_finite(&v, 0.0, 0).unwrap();
        let g = &sol.gains[0];
        assert_relative_eq!(g.upsilon, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), epsilon = 1e-14);
        assert_relative_eq!(g.k, DMatrix::from_row_slice(2, 1, &[1.0 / 3.0, 1.0 / 3.0]), epsilon = 1e-14);
        assert_relative_eq!(sol.z[0][(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_multiplier_has_no_mean_field_term() {
        let v = validate(&fixtures::example1()).unwrap();
        let sol = solve_finite(&v, 0.0, 20).unwrap();
        for k in 0..=20 {
            assert!(linalg::max_abs(&sol.s[k]) < 1e-9 * (1.0 + linalg::max_abs(&sol.z[k])));
            assert!(linalg::max_abs(&sol.gains[k].kbar) < 1e-9);
        }
    }

    #[test]
    fn z_ignores_channel_probability() {
        let v = validate(&fixtures::example2()).unwrap();
        let a = solve_finite(&v.with_p(0.3).unwrap(), 2.0, 5).unwrap();
        let b = solve_finite(&v.with_p(0.9).unwrap(), 2.0, 5).unwrap();
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn example2_solvable_at_reported_multiplier() {
        let v = validate(&fixtures::example2()).unwrap();
        let sol = solve_finite(&v, 6.25, 5).unwrap();
        assert!(sol.solvable && sol.verify_positivity());
        for k in 0..=6 {
            assert_relative_eq!(sol.theta[k], &sol.z[k] * 0.5 + &sol.x[k] * 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn stable_scalar_matches_long_horizon() {
        let mut m = fixtures::scalar(0.5);
        m.p = 0.0;
        let v = validate(&m).unwrap();
        let st = solve_stationary(&v, 0.0, STATIONARY_TOL, STATIONARY_MAX_ITER).unwrap();
        assert!(st.converged && st.ms_bounded);
        let fin = solve_finite(&v, 0.0, 500).unwrap();
        assert_relative_eq!(st.z, fin.z[0], epsilon = 1e-9);
    }

    #[test]
    fn uncontrolled_unstable_plant_diverges() {
        let mut m = fixtures::example1();
        m.b_local = DMatrix::zeros(2, 2);
        m.b_remote = DMatrix::zeros(2, 2);
        let v = validate(&m).unwrap();
        let err = solve_stationary(&v, 0.0, STATIONARY_TOL, STATIONARY_MAX_ITER).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn indefinite_remote_weight_surfaces_step() {
        let v = validate(&fixtures::example2()).unwrap();
        let mut bad = v.clone();
        bad.stacked.r = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 1.0, -50.0, -50.0]));
        let err = solve_finite(&bad, 0.0, 3).unwrap_err();
        assert!(matches!(err, Error::NotSolvable { step: 3, which: GainMatrix::Upsilon }));
    }

    #[test]
    fn printed_forms_agree_with_generic_lqr_form() {
        let v = validate(&fixtures::example2()).unwrap();
        let sol = solve_finite(&v, 1.5, 4).unwrap();
        let b = v.b();
        for k in 0..=4 {
            let z = &sol.z[k + 1];
            let g = &sol.gains[k];
            let generic =
                v.a.transpose() * z * b * &g.upsilon.clone().try_inverse().unwrap() * b.transpose() * z * &v.a;
            assert_relative_eq!(g.k.transpose() * &g.upsilon * &g.k, generic, max_relative = 1e-9);
            let th = &sol.theta[k + 1];
            let bl = &v.b_local;
            let generic_x =
                v.a.transpose() * th * bl * &g.lambda.clone().try_inverse().unwrap() * bl.transpose() * th * &v.a;
            assert_relative_eq!(
                g.l.transpose() * g.lambda.clone().try_inverse().unwrap() * &g.l,
                generic_x,
                max_relative = 1e-9
            );
        }
    }
}
