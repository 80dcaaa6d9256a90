//! Closed-form optimal cost and risk of the optimal policy, and the Monte
//! Carlo estimators used to check them.
//!
//! Both closed forms are built from the filter-correction covariances
//! `Π_0 = Σ_init − Σ_{0|0}` and `Π_k = Σ_{k|k−1} − Σ_{k|k}`: the correction
//! `x̂^L_{k|k} − x̂^L_{k|k−1}` reaches the remote side with probability `1−p`
//! and otherwise persists in the local/remote gap.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{self, CovarianceSchedule};
use crate::exec::{self, Execution};
use crate::linalg;
use crate::model::ValidatedModel;
use crate::policy::{self, PolicySchedule};
use crate::riccati::{self, RiccatiSolution};
use crate::simulate::{Estimate, Moments, Simulator};

/// Relative analytic/Monte Carlo gap above which the analytic risk is flagged.
pub const CROSS_CHECK_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    /// `x̄'(Z_0 + S_0)x̄ + tr(Θ_0 Π_0)`.
    pub initial_term: f64,
    /// `C_k = tr(Q_μ Σ_{k|k}) + tr(Θ_{k+1} Π_{k+1})` for `k = 0..=N`, then the
    /// terminal `tr(G_μ Σ_{N+1|N+1})`.
    pub trace_terms: Vec<f64>,
    /// `J̄*(μ)`.
    pub total: f64,
    /// `D(μ) = J̄*(μ) − με`.
    pub dual_value: f64,
    pub mu: f64,
}

fn check_horizon(sol: &RiccatiSolution, schedule: &CovarianceSchedule) -> Result<()> {
    if schedule.len() != sol.horizon + 2 {
        return Err(Error::HorizonMismatch { expected: sol.horizon + 2, found: schedule.len() });
    }
    Ok(())
}

pub fn optimal_cost(
    model: &ValidatedModel,
    sol: &RiccatiSolution,
    schedule: &CovarianceSchedule,
) -> Result<CostBreakdown> {
    check_horizon(sol, schedule)?;
    let mu = sol.mu;
    let horizon = sol.horizon;
    let (q_mu, g_mu) = riccati::weighted(model, mu);
    let x0 = &model.x0_mean;
    let initial_term = linalg::quad_form(&(&sol.z[0] + &sol.s[0]), x0)
        + linalg::trace_product(&sol.theta[0], &schedule.innovation_cov(0));
    let mut trace_terms = Vec::with_capacity(horizon + 2);
    for k in 0..=horizon {
        trace_terms.push(
            linalg::trace_product(&q_mu, &schedule.sigma_filt[k])
                + linalg::trace_product(&sol.theta[k + 1], &schedule.innovation_cov(k + 1)),
        );
    }
    trace_terms.push(linalg::trace_product(&g_mu, &schedule.sigma_filt[horizon + 1]));
    let total = initial_term + trace_terms.iter().sum::<f64>();
    Ok(CostBreakdown { initial_term, trace_terms, total, dual_value: total - mu * model.epsilon, mu })
}

/// Backward recursions for the risk of the optimal policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRecursion {
    pub o: Vec<DMatrix<f64>>,
    pub p: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub q: Vec<f64>,
    pub j_r_analytic: f64,
}

/// `J_R(u*(μ))` in closed form.
///
/// With `A_cl = A − BK_k`, `F_k = A − B_local Λ_k⁻¹L_k`, `Φ_k = A − B(K_k + K̄_k)`:
/// `O_k = Q_r + A_cl'O_{k+1}A_cl`,
/// `P_k = Q_r + F_k'((1−p)O_{k+1} + pP_{k+1})F_k`,
/// `(O + W)_k = Φ_k'(O + W)_{k+1}Φ_k`,
/// `q_k = tr(Q_r Σ_{k|k}) + tr(((1−p)O_{k+1} + pP_{k+1})Π_{k+1}) + q_{k+1}`,
/// from `O = P = Q_r`, `W = −Q_r`, `q = tr(Q_r Σ_{N+1|N+1})`.
pub fn risk_value(
    model: &ValidatedModel,
    sol: &RiccatiSolution,
    schedule: &CovarianceSchedule,
) -> Result<RiskRecursion> {
    check_horizon(sol, schedule)?;
    let horizon = sol.horizon;
    let p = model.p;
    let qr = &model.q_risk;
    let b = model.b();
    let len = horizon + 2;
    let mut o = vec![qr.clone(); len];
    let mut pm = vec![qr.clone(); len];
    let mut ow = vec![DMatrix::zeros(model.n(), model.n()); len];
    let mut q = vec![0.0; len];
    q[horizon + 1] = linalg::trace_product(qr, &schedule.sigma_filt[horizon + 1]);
    for k in (0..=horizon).rev() {
        let g = &sol.gains[k];
        let acl = &model.a - b * &g.k;
        let f = estimation::remote_error_dynamics(model, &g.local_gain);
        let phi = policy::mean_dynamics(model, g);
        let mix = &o[k + 1] * (1.0 - p) + &pm[k + 1] * p;
        o[k] = linalg::symmetrize(&(qr + acl.transpose() * &o[k + 1] * &acl));
        pm[k] = linalg::symmetrize(&(qr + f.transpose() * &mix * &f));
        ow[k] = linalg::symmetrize(&(phi.transpose() * &ow[k + 1] * &phi));
        q[k] = linalg::trace_product(qr, &schedule.sigma_filt[k])
            + linalg::trace_product(&mix, &schedule.innovation_cov(k + 1))
            + q[k + 1];
    }
    let w: Vec<DMatrix<f64>> = ow.iter().zip(&o).map(|(s, o)| s - o).collect();
    let pi0 = schedule.innovation_cov(0);
    let j_r_analytic = (1.0 - p) * linalg::trace_product(&o[0], &pi0)
        + p * linalg::trace_product(&pm[0], &pi0)
        + linalg::quad_form(&(&o[0] + &w[0]), &model.x0_mean)
        + q[0];
    Ok(RiskRecursion { o, p: pm, w, q, j_r_analytic })
}

/// Lower bound on the risk of any policy: `Σ_k tr(Q_r Σ_{k|k})`.
pub fn risk_floor(model: &ValidatedModel, schedule: &CovarianceSchedule) -> f64 {
    schedule.sigma_filt.iter().map(|s| linalg::trace_product(&model.q_risk, s)).sum()
}

/// Everything known in closed form at one multiplier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub solution: RiccatiSolution,
    pub schedule: CovarianceSchedule,
    pub cost: CostBreakdown,
    pub risk: RiskRecursion,
}

impl Evaluation {
    /// `J(u*) = J̄*(μ) − μ J_R(u*)`.
    pub fn primal_cost(&self) -> f64 {
        self.cost.total - self.solution.mu * self.risk.j_r_analytic
    }
}

pub fn evaluate_analytic(model: &ValidatedModel, mu: f64, horizon: usize) -> Result<Evaluation> {
    let solution = riccati::solve_finite(model, mu, horizon)?;
    let schedule = estimation::covariance_schedule(model, horizon)?;
    let cost = optimal_cost(model, &solution, &schedule)?;
    let risk = risk_value(model, &solution, &schedule)?;
    Ok(Evaluation { solution, schedule, cost, risk })
}

/// Where the Monte Carlo risk estimator takes `Ex_k` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    /// The policy's analytic mean path (exact for the optimal policy).
    Analytic,
    /// The ensemble mean, with the `n/(n−1)` correction.
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub samples: usize,
    pub seed: u64,
    pub mean_mode: MeanMode,
    /// Quadratic cost `J`.
    pub j: Estimate,
    /// Cumulative weighted variance `J_R`.
    pub j_r: Estimate,
    /// `J + μ J_R`.
    pub j_bar: Estimate,
}

#[derive(Debug, Clone, Default)]
struct McAcc {
    j: Moments,
    j_r: Moments,
    j_bar: Moments,
}

impl McAcc {
    fn merge(&mut self, o: McAcc) {
        self.j.merge(&o.j);
        self.j_r.merge(&o.j_r);
        self.j_bar.merge(&o.j_bar);
    }
}

/// Sample estimates of `J`, `J_R` and `J̄ = J + μJ_R` over `samples`
/// trajectories of `sim`.
pub fn mc_evaluate(
    sim: &Simulator,
    samples: usize,
    seed: u64,
    mean_mode: MeanMode,
    exec: Execution,
) -> Result<McEstimate> {
    if samples < 2 {
        return Err(Error::InvalidArgument("Monte Carlo evaluation needs at least two samples".into()));
    }
    let mu = sim.policy.mu;
    let means = match mean_mode {
        MeanMode::Analytic => sim.analytic_means(),
        MeanMode::Ensemble => {
            let n = sim.model.n();
            let steps = sim.horizon() + 2;
            let sums = exec::fold_chunks(
                exec,
                samples,
                || vec![nalgebra::DVector::zeros(n); steps],
                |acc, i| {
                    for (s, x) in acc.iter_mut().zip(&sim.trajectory(seed, i as u64).x) {
                        *s += x;
                    }
                },
                |acc, part| {
                    for (s, x) in acc.iter_mut().zip(&part) {
                        *s += x;
                    }
                },
            );
            sums.iter().map(|s| s / samples as f64).collect()
        }
    };
    let unbias = match mean_mode {
        MeanMode::Analytic => 1.0,
        MeanMode::Ensemble => samples as f64 / (samples as f64 - 1.0),
    };
    let acc = exec::fold_chunks(
        exec,
        samples,
        McAcc::default,
        |acc, i| {
            let t = sim.trajectory(seed, i as u64);
            let cost = t.cost(&sim.model);
            let risk: f64 = t.weighted_deviation(&sim.model.q_risk, &means).iter().sum::<f64>() * unbias;
            acc.j.push(cost);
            acc.j_r.push(risk);
            acc.j_bar.push(cost + mu * risk);
        },
        McAcc::merge,
    );
    Ok(McEstimate {
        samples,
        seed,
        mean_mode,
        j: acc.j.estimate(1.0),
        j_r: acc.j_r.estimate(1.0),
        j_bar: acc.j_bar.estimate(1.0),
    })
}

/// Comparison of the closed-form risk with its Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCrossCheck {
    pub analytic: f64,
    pub monte_carlo: f64,
    pub stderr: f64,
    pub rel_discrepancy: f64,
    /// The closed form falls outside the tolerance; the sampled value should
    /// be treated as authoritative.
    pub flagged: bool,
}

impl RiskCrossCheck {
    pub fn authoritative(&self) -> f64 {
        if self.flagged {
            self.monte_carlo
        } else {
            self.analytic
        }
    }
}

pub fn cross_check_risk(analytic: f64, mc: &Estimate) -> RiskCrossCheck {
    let rel = (analytic - mc.value).abs() / mc.value.abs().max(f64::MIN_POSITIVE);
    RiskCrossCheck {
        analytic,
        monte_carlo: mc.value,
        stderr: mc.stderr,
        rel_discrepancy: rel,
        flagged: rel > CROSS_CHECK_TOL,
    }
}

/// Optimal policy at `mu` wrapped as a ready-to-run simulator.
pub fn optimal_simulator(
    model: &ValidatedModel,
    solution: &RiccatiSolution,
    noise: crate::simulate::NoiseModel,
) -> Result<Simulator> {
    Simulator::new(model, &PolicySchedule::from_finite(solution), noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::validate;
    use crate::simulate::NoiseModel;
    use approx::assert_relative_eq;

    fn deterministic() -> ValidatedModel {
        let mut m = fixtures::example1();
        m.q_w = DMatrix::zeros(2, 2);
        m.q_v = DMatrix::zeros(2, 2);
        m.sigma_init = DMatrix::zeros(2, 2);
        m.c = DMatrix::identity(2, 2);
        validate(&m).unwrap()
    }

    #[test]
    fn deterministic_cost_is_initial_quadratic() {
        let v = deterministic();
        let e = evaluate_analytic(&v, 3.0, 6).unwrap();
        assert!(e.cost.trace_terms.iter().all(|c| c.abs() < 1e-9));
        let expected = linalg::quad_form(&(&e.solution.z[0] + &e.solution.s[0]), &v.x0_mean);
        assert_relative_eq!(e.cost.total, expected, max_relative = 1e-12);
        assert!(e.risk.j_r_analytic.abs() < 1e-9);
    }

    #[test]
    fn perfect_observation_random_start() {
        let mut m = fixtures::example2();
        m.c = DMatrix::identity(2, 2);
        m.q_v = DMatrix::zeros(2, 2);
        m.q_w = DMatrix::zeros(2, 2);
        m.sigma_init = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = validate(&m).unwrap();
        let e = evaluate_analytic(&v, 1.0, 5).unwrap();
        assert_relative_eq!(
            e.cost.total,
            linalg::trace_product(&v.sigma_init, &e.solution.theta[0]),
            max_relative = 1e-9
        );
    }

    #[test]
    fn dual_value_subtracts_budget() {
        let v = validate(&fixtures::example2()).unwrap();
        let e = evaluate_analytic(&v, 6.25, 5).unwrap();
        assert_relative_eq!(e.cost.dual_value, e.cost.total - 6.25 * 40.0);
    }

    #[test]
    fn horizon_mismatch_is_reported() {
        let v = validate(&fixtures::example2()).unwrap();
        let sol = riccati::solve_finite(&v, 0.0, 5).unwrap();
        let sched = estimation::covariance_schedule(&v, 4).unwrap();
        assert_eq!(optimal_cost(&v, &sol, &sched).unwrap_err(), Error::HorizonMismatch { expected: 7, found: 6 });
    }

    #[test]
    fn w_is_minus_o() {
        let v = validate(&fixtures::example2()).unwrap();
        let e = evaluate_analytic(&v, 6.25, 5).unwrap();
        for k in 0..e.risk.o.len() {
            assert_relative_eq!(&e.risk.w[k], &(-&e.risk.o[k]), epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_noise_mc_has_zero_spread() {
        let v = deterministic();
        let e = evaluate_analytic(&v, 0.0, 6).unwrap();
        let sim = optimal_simulator(&v, &e.solution, NoiseModel::gaussian(&v)).unwrap();
        let mc = mc_evaluate(&sim, 10, 1, MeanMode::Analytic, Execution::Sequential).unwrap();
        assert_eq!(mc.j.stderr, 0.0);
        assert_relative_eq!(mc.j.value, e.cost.total, max_relative = 1e-9);
    }

    #[test]
    fn doubling_risk_weight_doubles_sampled_risk() {
        let v = validate(&fixtures::example2()).unwrap();
        let e = evaluate_analytic(&v, 0.0, 5).unwrap();
        let policy = PolicySchedule::from_finite(&e.solution);
        let mut v2 = v.clone();
        v2.q_risk = &v.q_risk * 2.0;
        let s1 = Simulator::new(&v, &policy, NoiseModel::gaussian(&v)).unwrap();
        let s2 = Simulator::new(&v2, &policy, NoiseModel::gaussian(&v2)).unwrap();
        let a = mc_evaluate(&s1, 500, 4, MeanMode::Ensemble, Execution::Sequential).unwrap();
        let b = mc_evaluate(&s2, 500, 4, MeanMode::Ensemble, Execution::Sequential).unwrap();
        assert_relative_eq!(b.j_r.value, 2.0 * a.j_r.value, max_relative = 1e-12);
    }

    #[test]
    fn cross_check_flags_large_gaps() {
        let est = Estimate { value: 10.0, stderr: 0.1, ci_low: 9.8, ci_high: 10.2 };
        assert!(!cross_check_risk(10.3, &est).flagged);
        let c = cross_check_risk(12.0, &est);
        assert!(c.flagged);
        assert_eq!(c.authoritative(), 10.0);
    }
}
