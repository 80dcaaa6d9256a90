//! Seeded closed-loop Monte Carlo: plant, noises, Bernoulli uplink, both
//! estimators and the policy.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{self, CovarianceSchedule, EstimatorState};
use crate::evaluation::{self, McEstimate, MeanMode};
use crate::exec::{self, Execution};
use crate::linalg;
use crate::model::ValidatedModel;
use crate::policy::{self, MeanState, PolicySchedule};
use crate::riccati;

/// Shape of a zero-mean noise source; samples are scaled to unit variance
/// per coordinate before the covariance factor is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// Student-t with `dof > 2`, scaled by `√((ν−2)/ν)`.
    ScaledStudentT {
        dof: f64,
    },
    /// `Exp(1) − 1`.
    ShiftedExponential,
}

impl NoiseKind {
    pub fn label(&self) -> String {
        match self {
            NoiseKind::Gaussian => "gaussian".into(),
            NoiseKind::ScaledStudentT { dof } => format!("student_t({dof})"),
            NoiseKind::ShiftedExponential => "shifted_exponential".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub covariance: DMatrix<f64>,
}

/// Noise sources for the initial state, the plant and the sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub initial: NoiseSpec,
    pub process: NoiseSpec,
    pub measurement: NoiseSpec,
}

impl NoiseModel {
    pub fn gaussian(model: &ValidatedModel) -> Self {
        Self::with_kind(model, NoiseKind::Gaussian)
    }

    /// Same kind for every source, covariances from the model.
    pub fn with_kind(model: &ValidatedModel, kind: NoiseKind) -> Self {
        NoiseModel {
            initial: NoiseSpec { kind, covariance: model.sigma_init.clone() },
            process: NoiseSpec { kind, covariance: model.q_w.clone() },
            measurement: NoiseSpec { kind, covariance: model.q_v.clone() },
        }
    }
}

#[derive(Debug, Clone)]
struct Sampler {
    factor: DMatrix<f64>,
    kind: NoiseKind,
    t: Option<StudentT<f64>>,
    zero: bool,
}

impl Sampler {
    fn new(spec: &NoiseSpec) -> Result<Self> {
        let t = match spec.kind {
            NoiseKind::ScaledStudentT { dof } => {
                if dof.is_nan() || dof <= 2.0 {
                    return Err(Error::InvalidArgument(format!("student-t needs dof > 2, got {dof}")));
                }
                Some(StudentT::new(dof).map_err(|e| Error::InvalidArgument(e.to_string()))?)
            }
            _ => None,
        };
        if !linalg::is_psd(&spec.covariance) {
            return Err(Error::NotPsd("noise covariance".into()));
        }
        Ok(Sampler {
            factor: linalg::psd_sqrt(&spec.covariance),
            kind: spec.kind,
            t,
            zero: linalg::max_abs(&spec.covariance) == 0.0,
        })
    }

    fn unit<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => StandardNormal.sample(rng),
            NoiseKind::ScaledStudentT { dof } => {
                let t = self.t.as_ref().expect("student-t sampler");
                t.sample(rng) * ((dof - 2.0) / dof).sqrt()
            }
            NoiseKind::ShiftedExponential => {
                let e: f64 = Exp1.sample(rng);
                e - 1.0
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.factor.nrows();
        // draws are consumed even for zero covariance so streams stay aligned
        let z = DVector::from_fn(n, |_, _| self.unit(rng));
        if self.zero {
            DVector::zeros(n)
        } else {
            &self.factor * z
        }
    }
}

/// One simulated closed-loop path. States, observations, estimates and
/// channel bits cover `0..=N+1`; inputs and process noise cover `0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    /// `true` when the packet was delivered.
    pub eta: Vec<bool>,
    pub u_local: Vec<DVector<f64>>,
    pub u_remote: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub u_tilde: Vec<DVector<f64>>,
    pub xhat_local: Vec<DVector<f64>>,
    pub xhat_remote: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub seed: u64,
    pub stream: u64,
}

impl Trajectory {
    /// Quadratic cost `Σ_{k≤N} (x'Qx + u_L'R_L u_L + u_R'R_R u_R) + x_{N+1}'G x_{N+1}`.
    pub fn cost(&self, model: &ValidatedModel) -> f64 {
        let n_inputs = self.u.len();
        let mut total = 0.0;
        for k in 0..n_inputs {
            total += linalg::quad_form(&model.q, &self.x[k])
                + linalg::quad_form(&model.r_local, &self.u_local[k])
                + linalg::quad_form(&model.r_remote, &self.u_remote[k]);
        }
        total + linalg::quad_form(&model.g, &self.x[n_inputs])
    }

    /// `(x_k − m_k)'Q_r(x_k − m_k)` per step.
    pub fn weighted_deviation(&self, q_risk: &DMatrix<f64>, means: &[DVector<f64>]) -> Vec<f64> {
        self.x.iter().zip(means).map(|(x, m)| linalg::quad_form(q_risk, &(x - m))).collect()
    }
}

/// A closed loop ready to be sampled: model, policy, filter schedule, analytic
/// mean path and noise samplers.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: ValidatedModel,
    pub policy: PolicySchedule,
    pub schedule: CovarianceSchedule,
    pub means: Vec<MeanState>,
    pub noise: NoiseModel,
    initial: Sampler,
    process: Sampler,
    measurement: Sampler,
}

impl Simulator {
    pub fn new(model: &ValidatedModel, policy: &PolicySchedule, noise: NoiseModel) -> Result<Self> {
        let horizon = policy.horizon();
        Ok(Simulator {
            schedule: estimation::covariance_schedule(model, horizon)?,
            means: policy::mean_propagate(model, policy, &model.x0_mean),
            initial: Sampler::new(&noise.initial)?,
            process: Sampler::new(&noise.process)?,
            measurement: Sampler::new(&noise.measurement)?,
            model: model.clone(),
            policy: policy.clone(),
            noise,
        })
    }

    pub fn horizon(&self) -> usize {
        self.policy.horizon()
    }

    /// Trajectory number `stream` of the family seeded by `seed`.
    pub fn trajectory(&self, seed: u64, stream: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let m = &self.model;
        let horizon = self.horizon();
        let steps = horizon + 2;
        let mut t = Trajectory {
            x: Vec::with_capacity(steps),
            y: Vec::with_capacity(steps),
            eta: Vec::with_capacity(steps),
            u_local: Vec::with_capacity(steps - 1),
            u_remote: Vec::with_capacity(steps - 1),
            u: Vec::with_capacity(steps - 1),
            u_tilde: Vec::with_capacity(steps - 1),
            xhat_local: Vec::with_capacity(steps),
            xhat_remote: Vec::with_capacity(steps),
            w: Vec::with_capacity(steps - 1),
            v: Vec::with_capacity(steps),
            seed,
            stream,
        };
        let mut x = &m.x0_mean + self.initial.sample(&mut rng);
        let mut est = EstimatorState::prior(m);
        for k in 0..steps {
            let v = self.measurement.sample(&mut rng);
            let y = &m.c * &x + &v;
            let delivered = rng.random::<f64>() >= m.p;
            let (prev_u, prev_tilde) = match k {
                0 => (None, None),
                _ => (Some(&t.u[k - 1]), Some(&t.u_tilde[k - 1])),
            };
            est = estimation::local_filter_step(m, &est, &self.schedule, &y, prev_u.zip(prev_tilde));
            est = estimation::remote_estimator_step(m, &est, delivered, prev_u);
            t.xhat_local.push(est.xhat_local.clone());
            t.xhat_remote.push(est.xhat_remote.clone());
            t.eta.push(delivered);
            t.y.push(y);
            t.v.push(v);
            if k <= horizon {
                let action = policy::control_action(&self.policy.gains[k], &est, &self.means[k]);
                let w = self.process.sample(&mut rng);
                let next = &m.a * &x + &m.b_local * &action.u_local + &m.b_remote * &action.u_remote + &w;
                t.x.push(std::mem::replace(&mut x, next));
                t.u_local.push(action.u_local);
                t.u_remote.push(action.u_remote);
                t.u.push(action.u);
                t.u_tilde.push(action.u_tilde);
                t.w.push(w);
            }
        }
        t.x.push(x);
        t
    }

    pub fn analytic_means(&self) -> Vec<DVector<f64>> {
        self.means.iter().map(|m| m.ex.clone()).collect()
    }
}

pub fn simulate_trajectory(
    model: &ValidatedModel,
    policy: &PolicySchedule,
    noise: NoiseModel,
    seed: u64,
) -> Result<Trajectory> {
    Ok(Simulator::new(model, policy, noise)?.trajectory(seed, 0))
}

/// Recompute states from `x_0`, the recorded inputs and the recorded process noise.
pub fn replay(model: &ValidatedModel, traj: &Trajectory) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(traj.x.len());
    let mut x = traj.x[0].clone();
    for k in 0..traj.u.len() {
        let next = &model.a * &x + &model.b_local * &traj.u_local[k] + &model.b_remote * &traj.u_remote[k] + &traj.w[k];
        out.push(std::mem::replace(&mut x, next));
    }
    out.push(x);
    out
}

/// Sample mean with its standard error and a 95% normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Running sums for a scalar sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    /// Mean and 95% interval, all multiplied by `scale`.
    pub fn estimate(&self, scale: f64) -> Estimate {
        let value = self.mean() * scale;
        let stderr = self.stderr() * scale;
        Estimate { value, stderr, ci_low: value - 1.96 * stderr, ci_high: value + 1.96 * stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub samples: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Ensemble mean of `x_k`.
    pub mean: Vec<DVector<f64>>,
    /// `E(x_k − Ex_k)'Q_r(x_k − Ex_k)` with the ensemble mean plugged in.
    pub weighted_variance: Vec<Estimate>,
    /// Sum of the per-step weighted variances over `0..=N+1`.
    pub cumulative_variance: Estimate,
    /// Trace of the sample second moment of `x_k − x̂^R_k`.
    pub remote_error_trace: Vec<f64>,
    /// Trace of the sample second moment of `x_k − x̂^L_k`.
    pub local_error_trace: Vec<f64>,
    pub remote_error_cov: Vec<DMatrix<f64>>,
    pub failure_rate: f64,
    /// Fewer than two samples: variances are reported as zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
struct FirstPass {
    sum_x: Vec<DVector<f64>>,
    remote: Vec<DMatrix<f64>>,
    local: Vec<DMatrix<f64>>,
    failures: usize,
    slots: usize,
}

impl FirstPass {
    fn new(n: usize, steps: usize) -> Self {
        FirstPass {
            sum_x: vec![DVector::zeros(n); steps],
            remote: vec![DMatrix::zeros(n, n); steps],
            local: vec![DMatrix::zeros(n, n); steps],
            failures: 0,
            slots: 0,
        }
    }

    fn add(&mut self, t: &Trajectory) {
        for k in 0..t.x.len() {
            self.sum_x[k] += &t.x[k];
            let er = &t.x[k] - &t.xhat_remote[k];
            let el = &t.x[k] - &t.xhat_local[k];
            self.remote[k] += &er * er.transpose();
            self.local[k] += &el * el.transpose();
        }
        self.failures += t.eta.iter().filter(|d| !**d).count();
        self.slots += t.eta.len();
    }

    fn merge(&mut self, o: FirstPass) {
        for k in 0..self.sum_x.len() {
            self.sum_x[k] += &o.sum_x[k];
            self.remote[k] += &o.remote[k];
            self.local[k] += &o.local[k];
        }
        self.failures += o.failures;
        self.slots += o.slots;
    }
}

#[derive(Debug, Clone)]
struct SecondPass {
    per_step: Vec<Moments>,
    cumulative: Moments,
}

/// Run `samples` trajectories (streams `0..samples` of `seed`) and reduce them
/// to per-step statistics. Deterministic for a given seed regardless of
/// execution mode.
pub fn ensemble(sim: &Simulator, samples: usize, seed: u64, exec: Execution) -> Result<EnsembleStats> {
    if samples == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one sample".into()));
    }
    let n = sim.model.n();
    let steps = sim.horizon() + 2;
    let first = exec::fold_chunks(
        exec,
        samples,
        || FirstPass::new(n, steps),
        |acc, i| acc.add(&sim.trajectory(seed, i as u64)),
        |acc, part| acc.merge(part),
    );
    let inv = 1.0 / samples as f64;
    let mean: Vec<DVector<f64>> = first.sum_x.iter().map(|s| s * inv).collect();
    let q_risk = &sim.model.q_risk;
    let second = exec::fold_chunks(
        exec,
        samples,
        || SecondPass { per_step: vec![Moments::default(); steps], cumulative: Moments::default() },
        |acc, i| {
            let d = sim.trajectory(seed, i as u64).weighted_deviation(q_risk, &mean);
            for (m, v) in acc.per_step.iter_mut().zip(&d) {
                m.push(*v);
            }
            acc.cumulative.push(d.iter().sum());
        },
        |acc, part| {
            for (a, b) in acc.per_step.iter_mut().zip(&part.per_step) {
                a.merge(b);
            }
            acc.cumulative.merge(&part.cumulative);
        },
    );
    let degenerate = samples < 2;
    // n/(n−1) removes the bias of centring on the sample mean
    let unbias = if degenerate { 0.0 } else { samples as f64 / (samples as f64 - 1.0) };
    Ok(EnsembleStats {
        samples,
        horizon: sim.horizon(),
        seed,
        mean,
        weighted_variance: second.per_step.iter().map(|m| m.estimate(unbias)).collect(),
        cumulative_variance: second.cumulative.estimate(unbias),
        remote_error_trace: first.remote.iter().map(|c| c.trace() * inv).collect(),
        local_error_trace: first.local.iter().map(|c| c.trace() * inv).collect(),
        remote_error_cov: first.remote.iter().map(|c| c * inv).collect(),
        failure_rate: first.failures as f64 / first.slots as f64,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindReport {
    pub kind: NoiseKind,
    pub estimate: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub gains_identical: bool,
    pub reports: Vec<KindReport>,
}

/// Solve and simulate once per noise kind (all at the model covariances) and
/// confirm the gains never change.
pub fn non_gaussian_invariance_check(
    model: &ValidatedModel,
    horizon: usize,
    mu: f64,
    kinds: &[NoiseKind],
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<InvarianceReport> {
    let mut reference: Option<PolicySchedule> = None;
    let mut gains_identical = true;
    let mut reports = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let policy = PolicySchedule::from_finite(&riccati::solve_finite(model, mu, horizon)?);
        match &reference {
            Some(r) => gains_identical &= *r == policy,
            None => reference = Some(policy.clone()),
        }
        let sim = Simulator::new(model, &policy, NoiseModel::with_kind(model, kind))?;
        let estimate = evaluation::mc_evaluate(&sim, samples, seed, MeanMode::Analytic, exec)?;
        reports.push(KindReport { kind, estimate });
    }
    Ok(InvarianceReport { gains_identical, reports })
}
