#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use risklq::estimation::CovarianceSchedule;
use risklq::linalg;
use risklq::riccati::RiccatiSolution;
use risklq::{SystemModel, ValidatedModel};

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// `L Lᵀ + floor·I` with random `L`.
fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = uniform(rng, n, n, 1.0);
    &l * l.transpose() + DMatrix::identity(n, n) * floor
}

/// Small random instance: n ≤ 3, up to two inputs per controller, dense
/// weights and noises.
pub fn random_model(seed: u64) -> SystemModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let m1 = rng.random_range(0..=2);
    let m2 = rng.random_range(1..=2);
    let q = rng.random_range(1..=2);
    SystemModel {
        a: uniform(&mut rng, n, n, 1.5),
        b_local: uniform(&mut rng, n, m1, 1.0),
        b_remote: uniform(&mut rng, n, m2, 1.0),
        c: uniform(&mut rng, q, n, 1.0),
        q_w: spd(&mut rng, n, 0.05),
        q_v: spd(&mut rng, q, 0.1),
        q: spd(&mut rng, n, 0.1),
        q_risk: Some(spd(&mut rng, n, 0.1)),
        r_local: spd(&mut rng, m1, 0.2),
        r_remote: spd(&mut rng, m2, 0.2),
        g: spd(&mut rng, n, 0.0),
        p: rng.random_range(0.0..1.0),
        x0_mean: DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)),
        sigma_init: spd(&mut rng, n, 0.0),
        epsilon: 10.0,
    }
}

pub fn random_validated(seed: u64) -> ValidatedModel {
    risklq::validate(&random_model(seed)).expect("random instance is valid")
}

/// Risk of the optimal policy by forward propagation of second moments.
///
/// Splits `x_k − Ex_k = e^L_k + r_k + d_k`, where `r_k = x̂^R − Ex` is the
/// part already known remotely and `d_k = x̂^L − x̂^R` the undelivered gap.
/// `P^r` and `P^d` are their covariances: a fresh correction `Π_{k+1}` joins
/// `r` with probability `1−p` and `d` otherwise, and a delivered gap moves
/// from `d` to `r`.
pub fn forward_risk(model: &ValidatedModel, sol: &RiccatiSolution, sched: &CovarianceSchedule) -> f64 {
    let p = model.p;
    let b = model.b();
    let pi0 = sched.innovation_cov(0);
    let mut pr = &pi0 * (1.0 - p);
    let mut pd = &pi0 * p;
    let mut total = 0.0;
    for k in 0..=sol.horizon + 1 {
        total += linalg::trace_product(&model.q_risk, &(&pr + &pd + &sched.sigma_filt[k]));
        if k == sol.horizon + 1 {
            break;
        }
        let g = &sol.gains[k];
        let acl = &model.a - b * &g.k;
        let f = &model.a - &model.b_local * &g.local_gain;
        let pi = sched.innovation_cov(k + 1);
        let gap = &f * &pd * f.transpose() + &pi;
        pr = &acl * &pr * acl.transpose() + &gap * (1.0 - p);
        pd = gap * p;
    }
    total
}

/// `|a − b| ≤ rel·max(1, |a|, |b|)`.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * 1f64.max(a.abs()).max(b.abs())
}
