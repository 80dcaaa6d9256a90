use std::path::Path;

use nalgebra::DMatrix;
use risklq::dual::{self, BisectOptions, RiskEval};
use risklq::estimation;
use risklq::evaluation::{self, MeanMode};
use risklq::export::{self, Preamble};
use risklq::policy::PolicySchedule;
use risklq::riccati::{self, GainSet, STATIONARY_MAX_ITER, STATIONARY_TOL};
use risklq::simulate::{self, NoiseModel, Simulator};
use risklq::{fixtures, validate, Execution, SystemModel, ValidatedModel};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, ExperimentConfig, RiskEvalMode, DEFAULT_HORIZON};

/// Horizon of the remote covariance traces in Example 1.
pub const TRACE_HORIZON: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

fn check(name: &str, passed: bool) -> Check {
    Check { name: name.to_string(), passed }
}

/// What a command produced besides its CSV files.
pub struct Outcome {
    pub summary: Value,
    pub checks: Vec<Check>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn gain_json(g: &GainSet) -> Value {
    json!({
        "K": rows(&g.k),
        "Kbar": rows(&g.kbar),
        "local_gain": rows(&g.local_gain),
        "Upsilon": rows(&g.upsilon),
        "M": rows(&g.m),
        "Lambda": rows(&g.lambda),
    })
}

/// Long format `k, matrix, row, col, value` for K, K̄ and the local gain.
fn write_gains(path: &Path, pre: &Preamble, gains: &[GainSet]) -> risklq::Result<()> {
    let header = ["k", "matrix", "row", "col", "value"].map(String::from);
    let mut table = Vec::new();
    for (k, g) in gains.iter().enumerate() {
        for (name, m) in [("K", &g.k), ("Kbar", &g.kbar), ("local_gain", &g.local_gain)] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    table.push(vec![
                        k.to_string(),
                        name.to_string(),
                        i.to_string(),
                        j.to_string(),
                        format!("{}", m[(i, j)]),
                    ]);
                }
            }
        }
    }
    export::write_table(path, pre, &header, &table)
}

fn preamble(cfg: &ExperimentConfig) -> Preamble {
    Preamble::new().with("command", cfg.command.name()).with("seed", cfg.seed).with("config", cfg.to_json_line())
}

fn load(cfg: &ExperimentConfig) -> anyhow::Result<ValidatedModel> {
    let model = SystemModel::from_path(cfg.model_path())?;
    Ok(validate(&model)?)
}

fn risk_eval(cfg: &ExperimentConfig) -> RiskEval {
    match cfg.risk_eval {
        RiskEvalMode::Analytic => RiskEval::Analytic,
        RiskEvalMode::Mc => RiskEval::MonteCarlo { samples: cfg.samples, seed: cfg.seed },
    }
}

/// Fill in the command-specific defaults so artifacts record what actually ran.
pub fn finalize(cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
    match cfg.command {
        Command::Solve | Command::Simulate => {
            cfg.horizon.get_or_insert(DEFAULT_HORIZON);
            cfg.mu.get_or_insert(0.0);
        }
        Command::Stationary => {
            cfg.horizon = None;
            cfg.mu.get_or_insert(0.0);
        }
        Command::Bisect => {
            cfg.horizon.get_or_insert(DEFAULT_HORIZON);
            if cfg.epsilon.is_none() {
                cfg.epsilon = Some(load(cfg)?.epsilon);
            }
        }
        Command::Example1 => {
            cfg.horizon.get_or_insert(fixtures::EXAMPLE1_HORIZON);
        }
        Command::Example2 => {
            cfg.horizon.get_or_insert(fixtures::EXAMPLE2_HORIZON);
            cfg.epsilon.get_or_insert(fixtures::example2().epsilon);
        }
    }
    Ok(())
}

pub fn run(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Outcome> {
    match cfg.command {
        Command::Solve => solve(cfg, dir),
        Command::Stationary => stationary(cfg, dir),
        Command::Bisect => bisect(cfg, dir, &load(cfg)?),
        Command::Simulate => simulate_cmd(cfg, dir),
        Command::Example1 => example1(cfg, dir),
        Command::Example2 => bisect(cfg, dir, &validate(&fixtures::example2())?),
    }
}

fn solve(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Outcome> {
    let model = load(cfg)?;
    let horizon = cfg.horizon();
    let ev = evaluation::evaluate_analytic(&model, cfg.mu(), horizon)?;
    let pre = preamble(cfg);
    write_gains(&dir.join("gains.csv"), &pre, &ev.solution.gains)?;
    let positive = ev.solution.verify_positivity();
    Ok(Outcome {
        summary: json!({
            "mu": ev.solution.mu,
            "horizon": horizon,
            "solvable": ev.solution.solvable,
            "gains": ev.solution.gains.iter().map(gain_json).collect::<Vec<_>>(),
            "cost": ev.cost,
            "primal_cost": ev.primal_cost(),
            "risk": ev.risk.j_r_analytic,
        }),
        checks: vec![check("inner_solvable", ev.solution.solvable && positive)],
    })
}

fn stationary(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Outcome> {
    let model = load(cfg)?;
    let st = riccati::solve_stationary(&model, cfg.mu(), STATIONARY_TOL, STATIONARY_MAX_ITER)?;
    let assess = estimation::remote_covariance_assessment(&model, &st.gains.local_gain)?;
    let pre = preamble(cfg);
    write_gains(&dir.join("gains.csv"), &pre, std::slice::from_ref(&st.gains))?;
    let positive = st.gains.is_positive() && st.positivity.z_pd && st.positivity.z_plus_s_pd && st.positivity.theta_pd;
    Ok(Outcome {
        summary: json!({
            "mu": st.mu,
            "converged": st.converged,
            "iterations": st.iterations,
            "residual": st.residual,
            "positivity": st.positivity,
            "spectral_value": st.spectral_value,
            "ms_bounded": st.ms_bounded,
            "gains": gain_json(&st.gains),
            "Z": rows(&st.z),
            "X": rows(&st.x),
            "S": rows(&st.s),
            "remote_covariance": {
                "converges": assess.converges,
                "spectral_value": assess.spectral_value,
                "limit": assess.sigma_r_limit.as_ref().map(rows),
            },
        }),
        checks: vec![
            check("converged", st.converged),
            check("positivity", positive),
            check("ms_bounded", st.ms_bounded),
        ],
    })
}

fn bisect(cfg: &ExperimentConfig, dir: &Path, model: &ValidatedModel) -> anyhow::Result<Outcome> {
    let horizon = cfg.horizon();
    let epsilon = cfg.epsilon.unwrap_or(model.epsilon);
    let opts = BisectOptions { risk_eval: risk_eval(cfg), exec: Execution::default(), ..BisectOptions::default() };
    let result = dual::bisect_multiplier(model, horizon, epsilon, opts)?;
    let cert = dual::duality_report(&result, dual::DEFAULT_SLACK_TOL)?;
    let pre = preamble(cfg);
    export::write_bisection_trail(&dir.join("bisection_trail.csv"), &pre, &result)?;
    Ok(Outcome {
        summary: json!({
            "mu_star": result.mu_star,
            "j_r": result.j_r_at_star,
            "j_r_stderr": result.j_r_stderr,
            "result": result,
            "certificate": cert,
        }),
        checks: vec![check("inner_solvable", cert.inner_solvable), check("feasible", cert.feasible)],
    })
}

fn simulate_cmd(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Outcome> {
    let model = load(cfg)?;
    let horizon = cfg.horizon();
    let ev = evaluation::evaluate_analytic(&model, cfg.mu(), horizon)?;
    let sim = evaluation::optimal_simulator(&model, &ev.solution, NoiseModel::gaussian(&model))?;
    let stats = simulate::ensemble(&sim, cfg.samples, cfg.seed, Execution::default())?;
    let mc = evaluation::mc_evaluate(&sim, cfg.samples, cfg.seed, MeanMode::Analytic, Execution::default())?;
    let cross = evaluation::cross_check_risk(ev.risk.j_r_analytic, &mc.j_r);
    let pre = preamble(cfg);
    export::write_ensemble_stats(&dir.join("ensemble_stats.csv"), &pre, &stats)?;
    export::write_variance_profile(&dir.join("variance_profile.csv"), &pre, &stats)?;
    Ok(Outcome {
        summary: json!({
            "mu": cfg.mu(),
            "horizon": horizon,
            "samples": cfg.samples,
            "cumulative_variance": stats.cumulative_variance,
            "failure_rate": stats.failure_rate,
            "monte_carlo": mc,
            "risk_cross_check": cross,
        }),
        checks: Vec::new(),
    })
}

fn example1(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Outcome> {
    let model = validate(&fixtures::example1())?;
    let horizon = cfg.horizon();
    let exec = Execution::default();
    let base = preamble(cfg);

    let mut cumulative = Vec::new();
    for (mu, file) in [(10.0, "variance_profile_mu10.csv"), (0.0, "variance_profile_mu0.csv")] {
        let sol = riccati::solve_finite(&model, mu, horizon)?;
        let sim = Simulator::new(&model, &PolicySchedule::from_finite(&sol), NoiseModel::gaussian(&model))?;
        let stats = simulate::ensemble(&sim, cfg.samples, cfg.seed, exec)?;
        export::write_variance_profile(&dir.join(file), &base.clone().with("mu", mu), &stats)?;
        cumulative.push(json!({ "mu": mu, "cumulative_variance": stats.cumulative_variance }));
    }

    let mut limits = Vec::new();
    for (p, file) in [(0.2, "remote_cov_trace_p0.2.csv"), (0.8, "remote_cov_trace_p0.8.csv")] {
        let v = model.with_p(p)?;
        let st = riccati::solve_stationary(&v, 0.0, STATIONARY_TOL, STATIONARY_MAX_ITER)?;
        let assess = estimation::remote_covariance_assessment(&v, &st.gains.local_gain)?;
        let schedule = estimation::covariance_schedule(&v, TRACE_HORIZON)?;
        let analytic =
            estimation::remote_covariance_schedule(&v, &schedule, std::slice::from_ref(&st.gains.local_gain));
        let sim = Simulator::new(&v, &PolicySchedule::from_stationary(&st, TRACE_HORIZON), NoiseModel::gaussian(&v))?;
        let stats = simulate::ensemble(&sim, cfg.samples, cfg.seed, exec)?;
        let k: Vec<f64> = (0..analytic.len()).map(|k| k as f64).collect();
        let trace: Vec<f64> = analytic.iter().map(|s| s.trace()).collect();
        let pre = preamble(cfg).with("p", p).with("mu", 0.0).with("trace_horizon", TRACE_HORIZON);
        export::write_series(
            &dir.join(file),
            &pre,
            &[("k", &k), ("trace_analytic", &trace), ("trace_mc", &stats.remote_error_trace)],
        )?;
        limits.push(json!({
            "p": p,
            "converges": assess.converges,
            "spectral_value": assess.spectral_value,
            "limit_trace": assess.sigma_r_limit.as_ref().map(|s| s.trace()),
        }));
    }

    let cum = |i: usize| cumulative[i]["cumulative_variance"]["value"].as_f64().unwrap_or(f64::NAN);
    let lim = |i: usize| limits[i]["limit_trace"].as_f64().unwrap_or(f64::INFINITY);
    let reduction = cum(0) < cum(1);
    let ordering = lim(0) < lim(1);
    Ok(Outcome {
        summary: json!({ "variance": cumulative, "remote_covariance": limits }),
        checks: vec![check("variance_reduction", reduction), check("remote_covariance_ordering", ordering)],
    })
}
