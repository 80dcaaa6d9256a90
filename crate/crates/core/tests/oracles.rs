//! Closed forms checked against independent computations: forward moment
//! propagation and Monte Carlo.

mod common;

use nalgebra::{DMatrix, DVector};
use risklq::estimation;
use risklq::evaluation::{self, MeanMode};
use risklq::policy::PolicySchedule;
use risklq::riccati::{self, GainSet};
use risklq::simulate::{self, NoiseKind, NoiseModel, Simulator};
use risklq::{fixtures, linalg, validate, Error, Execution, ValidatedModel};

fn optimal_sim(model: &ValidatedModel, mu: f64, horizon: usize) -> Simulator {
    let sol = riccati::solve_finite(model, mu, horizon).unwrap();
    Simulator::new(model, &PolicySchedule::from_finite(&sol), NoiseModel::gaussian(model)).unwrap()
}

#[test]
fn analytic_risk_matches_forward_moments() {
    let mut checked = 0;
    for seed in 0..80 {
        let v = common::random_validated(seed);
        let mu = (seed % 7) as f64 * 1.5;
        let e = match evaluation::evaluate_analytic(&v, mu, 6) {
            Ok(e) => e,
            Err(Error::NotSolvable { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        let oracle = common::forward_risk(&v, &e.solution, &e.schedule);
        assert!(common::close(e.risk.j_r_analytic, oracle, 1e-9), "seed {seed}: {} vs {oracle}", e.risk.j_r_analytic);
        checked += 1;
    }
    assert!(checked >= 50, "only {checked} solvable instances");
}

#[test]
fn example2_cost_and_risk_match_monte_carlo() {
    let v = validate(&fixtures::example2()).unwrap();
    for mu in [0.0, 6.25] {
        let e = evaluation::evaluate_analytic(&v, mu, 5).unwrap();
        let sim = optimal_sim(&v, mu, 5);
        let mc = evaluation::mc_evaluate(&sim, 100_000, 2024, MeanMode::Analytic, Execution::default()).unwrap();
        let z_cost = (e.cost.total - mc.j_bar.value) / mc.j_bar.stderr;
        let z_risk = (e.risk.j_r_analytic - mc.j_r.value) / mc.j_r.stderr;
        assert!(z_cost.abs() < 3.0, "mu={mu}: J̄* {} vs {} ± {}", e.cost.total, mc.j_bar.value, mc.j_bar.stderr);
        assert!(z_risk.abs() < 3.0, "mu={mu}: J_R {} vs {} ± {}", e.risk.j_r_analytic, mc.j_r.value, mc.j_r.stderr);
    }
}

#[test]
fn example1_risk_matches_monte_carlo() {
    let v = validate(&fixtures::example1()).unwrap();
    let mut risks = Vec::new();
    for mu in [0.0, 10.0] {
        let e = evaluation::evaluate_analytic(&v, mu, 50).unwrap();
        let sim = optimal_sim(&v, mu, 50);
        let mc = evaluation::mc_evaluate(&sim, 10_000, 99, MeanMode::Analytic, Execution::default()).unwrap();
        let z = (e.risk.j_r_analytic - mc.j_r.value) / mc.j_r.stderr;
        assert!(z.abs() < 3.5, "mu={mu}: {} vs {} ± {}", e.risk.j_r_analytic, mc.j_r.value, mc.j_r.stderr);
        risks.push(e.risk.j_r_analytic);
    }
    assert!(risks[1] < risks[0]);
}

#[test]
fn local_error_covariance_matches_filter() {
    let v = validate(&fixtures::example1()).unwrap();
    let sim = optimal_sim(&v, 10.0, 20);
    let samples = 10_000;
    let steps = [0usize, 1, 5, 20];
    let mut acc = vec![DMatrix::<f64>::zeros(2, 2); steps.len()];
    for i in 0..samples {
        let t = sim.trajectory(7, i);
        for (slot, &k) in steps.iter().enumerate() {
            let e = &t.x[k] - &t.xhat_local[k];
            acc[slot] += &e * e.transpose();
        }
    }
    for (slot, &k) in steps.iter().enumerate() {
        let emp = &acc[slot] / samples as f64;
        let exact = &sim.schedule.sigma_filt[k];
        let rel = (&emp - exact).norm() / exact.norm();
        assert!(rel < 0.05, "k={k}: relative Frobenius gap {rel}");
    }
}

#[test]
fn mean_path_matches_ensemble_mean() {
    let v = validate(&fixtures::example1()).unwrap();
    let sim = optimal_sim(&v, 10.0, 50);
    let stats = simulate::ensemble(&sim, 10_000, 31, Execution::default()).unwrap();
    // per-component spread from the same ensemble
    let mut sq = vec![DVector::<f64>::zeros(2); 52];
    for i in 0..10_000 {
        let t = sim.trajectory(31, i);
        for ((s, x), m) in sq.iter_mut().zip(&t.x).zip(&stats.mean) {
            *s += (x - m).map(|d| d * d);
        }
    }
    // 104 simultaneous 3σ comparisons: about 0.3 exceedances expected by chance
    let mut outside = 0;
    for (k, s) in sq.iter().enumerate() {
        for (j, sj) in s.iter().enumerate() {
            let se = (sj / 9_999.0).sqrt() / 100.0 + 1e-12;
            let gap = (stats.mean[k][j] - sim.means[k].ex[j]).abs();
            assert!(gap <= 4.0 * se, "k={k} j={j}: gap {gap} se {se}");
            outside += usize::from(gap > 3.0 * se);
        }
    }
    assert!(outside <= 2, "{outside} of 104 components outside 3σ");
}

#[test]
fn remote_covariance_schedule_matches_monte_carlo() {
    let v = validate(&fixtures::example1()).unwrap();
    let sol = riccati::solve_finite(&v, 10.0, 30).unwrap();
    let sched = estimation::covariance_schedule(&v, 30).unwrap();
    let local: Vec<DMatrix<f64>> = sol.gains.iter().map(|g| g.local_gain.clone()).collect();
    let exact = estimation::remote_covariance_schedule(&v, &sched, &local);
    let sim = Simulator::new(&v, &PolicySchedule::from_finite(&sol), NoiseModel::gaussian(&v)).unwrap();
    let stats = simulate::ensemble(&sim, 20_000, 5, Execution::default()).unwrap();
    for k in [0usize, 1, 2, 10, 30] {
        let rel = (stats.remote_error_trace[k] - exact[k].trace()).abs() / exact[k].trace();
        assert!(rel < 0.05, "k={k}: {} vs {}", stats.remote_error_trace[k], exact[k].trace());
    }
}

#[test]
fn local_mean_averages_to_remote_when_channel_is_down() {
    let mut m = fixtures::example2();
    m.p = 1.0;
    m.x0_mean = DVector::from_row_slice(&[1.0, -2.0]);
    let v = validate(&m).unwrap();
    let sim = optimal_sim(&v, 3.0, 5);
    let samples = 20_000;
    let reference = sim.trajectory(1, 0).xhat_remote;
    let mut sum = vec![DVector::<f64>::zeros(2); 7];
    let mut sq = vec![DVector::<f64>::zeros(2); 7];
    for i in 0..samples {
        let t = sim.trajectory(1, i);
        assert_eq!(t.xhat_remote, reference);
        for k in 0..7 {
            sum[k] += &t.xhat_local[k];
            sq[k] += t.xhat_local[k].map(|x| x * x);
        }
    }
    let n = samples as f64;
    for k in 0..7 {
        for j in 0..2 {
            let mean = sum[k][j] / n;
            let sd = (sq[k][j] / n - mean * mean).max(0.0).sqrt();
            assert!((mean - reference[k][j]).abs() <= 4.0 * sd / n.sqrt() + 1e-12, "k={k} j={j}");
        }
    }
}

fn perturbed(sol: &riccati::RiccatiSolution, f: impl Fn(&GainSet) -> GainSet) -> PolicySchedule {
    PolicySchedule { gains: sol.gains.iter().map(f).collect(), mu: sol.mu }
}

#[test]
fn optimal_policy_beats_perturbed_policies() {
    let mut m = fixtures::example2();
    m.x0_mean = DVector::from_row_slice(&[1.0, 0.5]);
    let v = validate(&m).unwrap();
    let mu = 2.0;
    let sol = riccati::solve_finite(&v, mu, 5).unwrap();
    let e = evaluation::evaluate_analytic(&v, mu, 5).unwrap();
    let run = |policy: &PolicySchedule| {
        let sim = Simulator::new(&v, policy, NoiseModel::gaussian(&v)).unwrap();
        evaluation::mc_evaluate(&sim, 40_000, 8, MeanMode::Analytic, Execution::default()).unwrap()
    };
    let at_opt = run(&PolicySchedule::from_finite(&sol));
    assert!((at_opt.j_bar.value - e.cost.total).abs() < 3.0 * at_opt.j_bar.stderr);
    let variants = [
        perturbed(&sol, |g| GainSet { k: &g.k * 1.15, ..g.clone() }),
        perturbed(&sol, |g| GainSet { kbar: &g.kbar + DMatrix::from_element(4, 2, 0.2), ..g.clone() }),
        perturbed(&sol, |g| GainSet { local_gain: &g.local_gain * 0.8, ..g.clone() }),
    ];
    for policy in &variants {
        let mc = run(policy);
        assert!(e.cost.total <= mc.j_bar.value + 3.0 * mc.j_bar.stderr);
        // common random numbers make the paired gap sharper than the marginal interval
        assert!(mc.j_bar.value > at_opt.j_bar.value, "{} vs {}", mc.j_bar.value, at_opt.j_bar.value);
    }
}

#[test]
fn dual_function_is_concave_on_a_grid() {
    let v = validate(&fixtures::example2()).unwrap();
    let grid: Vec<f64> = (0..=16).map(|i| i as f64 * 0.75).collect();
    let d: Vec<f64> =
        grid.iter().map(|&mu| evaluation::evaluate_analytic(&v, mu, 5).unwrap().cost.dual_value).collect();
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            for k in j + 1..grid.len() {
                let t = (grid[j] - grid[i]) / (grid[k] - grid[i]);
                let interp = (1.0 - t) * d[i] + t * d[k];
                assert!(d[j] >= interp - 1e-6, "({i},{j},{k})");
            }
        }
    }
}

#[test]
fn value_grows_with_horizon() {
    for model in [fixtures::example2(), common::random_model(3), common::random_model(11)] {
        let v = validate(&model).unwrap();
        let probes: Vec<DVector<f64>> =
            (0..5).map(|i| DVector::from_fn(v.n(), |j, _| ((i * 7 + j * 3) as f64).sin())).collect();
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        for horizon in [0usize, 1, 2, 4, 8, 16] {
            let Ok(sol) = riccati::solve_finite(&v, 1.0, horizon) else { break };
            let theta: Vec<f64> = probes.iter().map(|x| linalg::quad_form(&sol.theta[0], x)).collect();
            let zs: Vec<f64> = probes.iter().map(|x| linalg::quad_form(&(&sol.z[0] + &sol.s[0]), x)).collect();
            if let Some((pt, pz)) = &prev {
                for i in 0..probes.len() {
                    assert!(theta[i] >= pt[i] - 1e-9 * (1.0 + pt[i].abs()));
                    assert!(zs[i] >= pz[i] - 1e-9 * (1.0 + pz[i].abs()));
                }
            }
            prev = Some((theta, zs));
        }
    }
}

#[test]
fn risk_ignores_initial_mean_without_multiplier() {
    let v = validate(&fixtures::example2()).unwrap();
    let mut shifted = v.clone();
    shifted.x0_mean = DVector::from_row_slice(&[3.0, -2.0]);
    let a =
        evaluation::mc_evaluate(&optimal_sim(&v, 0.0, 5), 20_000, 3, MeanMode::Ensemble, Execution::default()).unwrap();
    let b =
        evaluation::mc_evaluate(&optimal_sim(&shifted, 0.0, 5), 20_000, 3, MeanMode::Ensemble, Execution::default())
            .unwrap();
    assert!((a.j_r.value - b.j_r.value).abs() < 3.0 * (a.j_r.stderr + b.j_r.stderr));
    assert!(b.j.value > a.j.value);
}

#[test]
fn non_gaussian_noise_keeps_gains() {
    let v = validate(&fixtures::example2()).unwrap();
    let kinds = [NoiseKind::Gaussian, NoiseKind::ScaledStudentT { dof: 5.0 }, NoiseKind::ShiftedExponential];
    let report =
        simulate::non_gaussian_invariance_check(&v, 5, 6.25, &kinds, 20_000, 12, Execution::default()).unwrap();
    assert!(report.gains_identical);
    let analytic = evaluation::evaluate_analytic(&v, 6.25, 5).unwrap().risk.j_r_analytic;
    for r in &report.reports {
        // the closed form only uses second moments
        let z = (r.estimate.j_r.value - analytic) / r.estimate.j_r.stderr;
        assert!(z.abs() < 4.0, "{}: {} vs {analytic}", r.kind.label(), r.estimate.j_r.value);
    }

    let sol = riccati::solve_finite(&v, 6.25, 5).unwrap();
    let sim = Simulator::new(
        &v,
        &PolicySchedule::from_finite(&sol),
        NoiseModel::with_kind(&v, NoiseKind::ShiftedExponential),
    )
    .unwrap();
    let stats = simulate::ensemble(&sim, 20_000, 4, Execution::default()).unwrap();
    for (k, m) in stats.mean.iter().enumerate() {
        let sd = stats.weighted_variance[k].value.sqrt();
        assert!(m.norm() < 4.0 * sd / (20_000f64).sqrt() + 1e-12, "k={k}");
    }
}
