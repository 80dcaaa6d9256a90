//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Every tolerance used for definiteness and symmetry decisions lives here so
//! the solvers agree on what "positive definite" means.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

/// Relative tolerance for eigenvalue sign tests.
pub const DEFINITENESS_TOL: f64 = 1e-9;

/// Relative tolerance for accepting (and then removing) input asymmetry.
pub const SYMMETRY_TOL: f64 = 1e-9;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry; zero for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `‖M − Mᵀ‖_max ≤ tol·(1 + ‖M‖_max)`.
pub fn is_nearly_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    max_abs_diff(m, &m.transpose()) <= SYMMETRY_TOL * (1.0 + max_abs(m))
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue ≥ −tol·(1 + largest eigenvalue).
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let ev = sym_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => lo >= -DEFINITENESS_TOL * (1.0 + hi.max(0.0)),
        _ => true,
    }
}

/// Smallest eigenvalue > tol·(1 + largest eigenvalue). Empty matrices are PD.
pub fn is_pd(m: &DMatrix<f64>) -> bool {
    let ev = sym_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => lo > DEFINITENESS_TOL * (1.0 + hi.max(0.0)),
        _ => true,
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
///
/// Returns `None` when the matrix fails the definiteness test or the
/// factorization breaks down; there is no pseudo-inverse fallback.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if !is_finite(m) || !is_pd(m) {
        return None;
    }
    let chol = symmetrize(m).cholesky()?;
    Some(symmetrize(&chol.inverse()))
}

/// Symmetric PSD square root `V·diag(√max(λ,0))·Vᵀ`.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let roots = DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Moore–Penrose inverse of a symmetric PSD matrix; eigenvalues below
/// `1e-12·max(1, λ_max)` are treated as zero.
pub fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l));
    let cut = 1e-12 * top.max(1.0);
    let inv = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| if l > cut { 1.0 / l } else { 0.0 }));
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Eigenvalues of a general real square matrix (complex spectrum allowed).
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Numerical rank via SVD.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let eps = 1e-10 * max_abs(m).max(1.0);
    m.rank(eps)
}

/// Rank test on the observability matrix `[H; HA; …; HA^{n−1}]`.
pub fn is_observable(a: &DMatrix<f64>, h: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    let mut blocks = Vec::with_capacity(n);
    let mut cur = h.clone();
    for _ in 0..n {
        blocks.push(cur.clone());
        cur = &cur * a;
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut obs = DMatrix::zeros(rows, n);
    let mut r = 0;
    for b in &blocks {
        obs.view_mut((r, 0), (b.nrows(), n)).copy_from(b);
        r += b.nrows();
    }
    rank(&obs) == n
}

/// PBH test: every eigenvalue with |λ| ≥ 1 must be observable through `c`.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let q = c.nrows();
    let ac = a.map(|v| Complex::new(v, 0.0));
    let cc = c.map(|v| Complex::new(v, 0.0));
    for lambda in eigenvalues(a) {
        if lambda.norm() < 1.0 - 1e-12 {
            continue;
        }
        let mut pbh = DMatrix::<Complex<f64>>::zeros(n + q, n);
        let shifted = DMatrix::<Complex<f64>>::identity(n, n) * lambda - &ac;
        pbh.view_mut((0, 0), (n, n)).copy_from(&shifted);
        if q > 0 {
            pbh.view_mut((n, 0), (q, n)).copy_from(&cc);
        }
        let scale = pbh.iter().fold(1.0_f64, |acc, z| acc.max(z.norm()));
        if pbh.rank(1e-10 * scale) < n {
            return false;
        }
    }
    true
}

/// Horizontal concatenation `[left | right]`.
pub fn hcat(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(left.nrows(), right.nrows());
    let rows = left.nrows();
    let mut out = DMatrix::zeros(rows, left.ncols() + right.ncols());
    out.view_mut((0, 0), (rows, left.ncols())).copy_from(left);
    out.view_mut((0, left.ncols()), (rows, right.ncols())).copy_from(right);
    out
}

/// Vertical concatenation.
pub fn vcat(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(top.ncols(), bottom.ncols());
    let cols = top.ncols();
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), cols);
    out.view_mut((0, 0), (top.nrows(), cols)).copy_from(top);
    out.view_mut((top.nrows(), 0), (bottom.nrows(), cols)).copy_from(bottom);
    out
}

/// Block-diagonal `diag(a, b)`.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() + b.nrows();
    let m = a.ncols() + b.ncols();
    let mut out = DMatrix::zeros(n, m);
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// `tr(A·B)` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// `xᵀ·M·x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn definiteness_tests() {
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let psd = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(is_pd(&pd) && is_psd(&pd));
        assert!(!is_pd(&psd) && is_psd(&psd));
        assert!(!is_psd(&indef));
        assert!(is_pd(&DMatrix::zeros(0, 0)));
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let psd = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_inverse(&psd).is_none());
        let pd = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&pd).unwrap();
        assert_relative_eq!(&pd * &inv, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn pinv_and_sqrt() {
        let psd = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = psd_pinv(&psd);
        assert_relative_eq!(&psd * &p * &psd, psd, epsilon = 1e-12);
        let s = psd_sqrt(&psd);
        assert_relative_eq!(&s * &s, psd, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_handles_complex_spectrum() {
        // rotation scaled by 1.2
        let c = 1.2 * (0.3_f64).cos();
        let s = 1.2 * (0.3_f64).sin();
        let m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert_relative_eq!(spectral_radius(&m), 1.2, epsilon = 1e-12);
    }

    #[test]
    fn detectability_and_observability() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let c_first = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let c_second = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(is_detectable(&a, &c_first));
        assert!(!is_detectable(&a, &c_second));
        assert!(!is_observable(&a, &c_first));
        let c_both = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(is_observable(&a, &c_both));
    }

    #[test]
    fn trace_product_matches_naive() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
        assert_relative_eq!(trace_product(&a, &b), (&a * &b).trace(), epsilon = 1e-12);
    }
}
