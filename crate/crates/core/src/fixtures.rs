//! Built-in problem instances.

use nalgebra::{DMatrix, DVector};

use crate::model::SystemModel;

fn m2(rows: [[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
}

fn two_state(a: [[f64; 2]; 2], noise: f64, x0: [f64; 2], p: f64, epsilon: f64) -> SystemModel {
    let eye = DMatrix::identity(2, 2);
    SystemModel {
        a: m2(a),
        b_local: m2([[1.0, 1.0], [0.0, 1.0]]),
        b_remote: m2([[1.0, 0.0], [1.0, 1.0]]),
        c: m2([[1.0, 1.0], [0.0, -1.0]]),
        q_w: &eye * noise,
        q_v: &eye * noise,
        q: eye.clone(),
        q_risk: None,
        r_local: eye.clone(),
        r_remote: eye.clone(),
        g: eye.clone(),
        p,
        x0_mean: DVector::from_row_slice(&x0),
        sigma_init: eye,
        epsilon,
    }
}

/// Unstable two-state plant with heavy noise, horizon 50.
///
/// No budget is attached to this instance; `epsilon` is a placeholder.
pub fn example1() -> SystemModel {
    two_state([[4.0, 1.0], [1.0, 0.1]], 10.0, [1.0, 1.0], 0.5, 1e4)
}

pub const EXAMPLE1_HORIZON: usize = 50;

/// Two-state plant with unit noise and budget 40, horizon 5.
pub fn example2() -> SystemModel {
    two_state([[2.0, 0.1], [1.0, 0.1]], 1.0, [0.0, 0.0], 0.5, 40.0)
}

pub const EXAMPLE2_HORIZON: usize = 5;

/// Scalar plant `x' = a·x + u_L + u_R + w` with every weight and noise equal to one.
pub fn scalar(a: f64) -> SystemModel {
    let one = DMatrix::from_element(1, 1, 1.0);
    SystemModel {
        a: DMatrix::from_element(1, 1, a),
        b_local: one.clone(),
        b_remote: one.clone(),
        c: one.clone(),
        q_w: one.clone(),
        q_v: one.clone(),
        q: one.clone(),
        q_risk: None,
        r_local: one.clone(),
        r_remote: one.clone(),
        g: one.clone(),
        p: 0.5,
        x0_mean: DVector::zeros(1),
        sigma_init: one,
        epsilon: 1.0,
    }
}
