//! Problem instance: plant, observation, lossy uplink, quadratic cost and the
//! variance budget.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Raw problem data as read from a config file.
///
/// Matrices are stored row-major in the JSON form. An empty `B_local` (`[]`)
/// means there is no local input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b_local: DMatrix<f64>,
    pub b_remote: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q_w: DMatrix<f64>,
    pub q_v: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Risk weight; `None` means "same as `q`".
    pub q_risk: Option<DMatrix<f64>>,
    pub r_local: DMatrix<f64>,
    pub r_remote: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub p: f64,
    pub x0_mean: DVector<f64>,
    pub sigma_init: DMatrix<f64>,
    pub epsilon: f64,
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B_local", default)]
    b_local: Rows,
    #[serde(rename = "B_remote")]
    b_remote: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "Q_w")]
    q_w: Rows,
    #[serde(rename = "Q_v")]
    q_v: Rows,
    #[serde(rename = "Q")]
    q: Rows,
    #[serde(rename = "Q_risk", default, skip_serializing_if = "Option::is_none")]
    q_risk: Option<Rows>,
    #[serde(rename = "R_local", default)]
    r_local: Rows,
    #[serde(rename = "R_remote")]
    r_remote: Rows,
    #[serde(rename = "G")]
    g: Rows,
    p: f64,
    x0_mean: Vec<f64>,
    #[serde(rename = "Sigma_init")]
    sigma_init: Rows,
    epsilon: f64,
}

fn from_rows(name: &str, rows: &Rows, empty_rows: usize) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(empty_rows, 0));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!("{name}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl TryFrom<ModelFile> for SystemModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let a = from_rows("A", &f.a, 0)?;
        let n = a.nrows();
        Ok(SystemModel {
            b_local: from_rows("B_local", &f.b_local, n)?,
            b_remote: from_rows("B_remote", &f.b_remote, n)?,
            c: from_rows("C", &f.c, 0)?,
            q_w: from_rows("Q_w", &f.q_w, 0)?,
            q_v: from_rows("Q_v", &f.q_v, 0)?,
            q: from_rows("Q", &f.q, 0)?,
            q_risk: f.q_risk.as_ref().map(|r| from_rows("Q_risk", r, 0)).transpose()?,
            r_local: from_rows("R_local", &f.r_local, 0)?,
            r_remote: from_rows("R_remote", &f.r_remote, 0)?,
            g: from_rows("G", &f.g, 0)?,
            p: f.p,
            x0_mean: DVector::from_vec(f.x0_mean),
            sigma_init: from_rows("Sigma_init", &f.sigma_init, 0)?,
            epsilon: f.epsilon,
            a,
        })
    }
}

impl From<SystemModel> for ModelFile {
    fn from(m: SystemModel) -> Self {
        ModelFile {
            a: to_rows(&m.a),
            b_local: if m.b_local.ncols() == 0 { Vec::new() } else { to_rows(&m.b_local) },
            b_remote: to_rows(&m.b_remote),
            c: to_rows(&m.c),
            q_w: to_rows(&m.q_w),
            q_v: to_rows(&m.q_v),
            q: to_rows(&m.q),
            q_risk: m.q_risk.as_ref().map(to_rows),
            r_local: to_rows(&m.r_local),
            r_remote: to_rows(&m.r_remote),
            g: to_rows(&m.g),
            p: m.p,
            x0_mean: m.x0_mean.iter().copied().collect(),
            sigma_init: to_rows(&m.sigma_init),
            epsilon: m.epsilon,
        }
    }
}

impl SystemModel {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization is infallible")
    }
}

/// Stacked input `B = [B_local | B_remote]`, `R = diag(R_local, R_remote)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedInputModel {
    pub b: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// A model that passed all checks, with symmetric weights and the stacked
/// input forms cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    pub a: DMatrix<f64>,
    pub b_local: DMatrix<f64>,
    pub b_remote: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q_w: DMatrix<f64>,
    pub q_v: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_risk: DMatrix<f64>,
    pub r_local: DMatrix<f64>,
    pub r_remote: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub p: f64,
    pub x0_mean: DVector<f64>,
    pub sigma_init: DMatrix<f64>,
    pub epsilon: f64,
    pub stacked: StackedInputModel,
    /// `(A, C)` detectable.
    pub detectable: bool,
    /// `(A, [Q^{1/2}; Q_risk^{1/2}])` observable.
    pub observable: bool,
}

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!("{name} is {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols())));
    }
    if !linalg::is_finite(m) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

fn symmetric(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !linalg::is_nearly_symmetric(m) {
        return Err(Error::NotSymmetric(name.to_string()));
    }
    Ok(linalg::symmetrize(m))
}

fn psd(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = symmetric(name, m)?;
    if !linalg::is_psd(&s) {
        return Err(Error::NotPsd(name.to_string()));
    }
    Ok(s)
}

fn pd(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = symmetric(name, m)?;
    if !linalg::is_pd(&s) {
        return Err(Error::NotPd(name.to_string()));
    }
    Ok(s)
}

/// Check dimensions, symmetry and definiteness, and precompute stacked forms.
///
/// `Q_v` only needs to be PSD: a singular measurement covariance (perfect
/// observation) is handled by the filter through a pseudo-inverse.
pub fn validate(model: &SystemModel) -> Result<ValidatedModel> {
    let n = model.a.nrows();
    check_shape("A", &model.a, n, n)?;
    let m1 = model.b_local.ncols();
    let m2 = model.b_remote.ncols();
    check_shape("B_local", &model.b_local, n, m1)?;
    check_shape("B_remote", &model.b_remote, n, m2)?;
    let nq = model.c.nrows();
    check_shape("C", &model.c, nq, n)?;
    check_shape("Q_w", &model.q_w, n, n)?;
    check_shape("Q_v", &model.q_v, nq, nq)?;
    check_shape("Q", &model.q, n, n)?;
    if let Some(qr) = &model.q_risk {
        check_shape("Q_risk", qr, n, n)?;
    }
    check_shape("R_local", &model.r_local, m1, m1)?;
    check_shape("R_remote", &model.r_remote, m2, m2)?;
    check_shape("G", &model.g, n, n)?;
    check_shape("Sigma_init", &model.sigma_init, n, n)?;
    if model.x0_mean.len() != n {
        return Err(Error::DimensionMismatch(format!("x0_mean has length {}, expected {n}", model.x0_mean.len())));
    }
    if model.x0_mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("x0_mean".into()));
    }
    if !(0.0..=1.0).contains(&model.p) {
        return Err(Error::ProbabilityOutOfRange(model.p));
    }
    if !(model.epsilon.is_finite() && model.epsilon >= 0.0) {
        return Err(Error::NegativeBudget(model.epsilon));
    }

    let q = psd("Q", &model.q)?;
    let q_risk = match &model.q_risk {
        Some(qr) => psd("Q_risk", qr)?,
        None => q.clone(),
    };
    let g = psd("G", &model.g)?;
    let q_w = psd("Q_w", &model.q_w)?;
    let q_v = psd("Q_v", &model.q_v)?;
    let sigma_init = psd("Sigma_init", &model.sigma_init)?;
    let r_local = pd("R_local", &model.r_local)?;
    let r_remote = pd("R_remote", &model.r_remote)?;

    let stacked = StackedInputModel {
        b: linalg::hcat(&model.b_local, &model.b_remote),
        r: linalg::block_diag(&r_local, &r_remote),
    };
    let weight_sqrt = linalg::vcat(&linalg::psd_sqrt(&q), &linalg::psd_sqrt(&q_risk));

    Ok(ValidatedModel {
        detectable: linalg::is_detectable(&model.a, &model.c),
        observable: linalg::is_observable(&model.a, &weight_sqrt),
        a: model.a.clone(),
        b_local: model.b_local.clone(),
        b_remote: model.b_remote.clone(),
        c: model.c.clone(),
        q_w,
        q_v,
        q,
        q_risk,
        r_local,
        r_remote,
        g,
        p: model.p,
        x0_mean: model.x0_mean.clone(),
        sigma_init,
        epsilon: model.epsilon,
        stacked,
    })
}

pub fn stack_inputs(model: &ValidatedModel) -> StackedInputModel {
    model.stacked.clone()
}

impl ValidatedModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m_local(&self) -> usize {
        self.b_local.ncols()
    }

    pub fn m_remote(&self) -> usize {
        self.b_remote.ncols()
    }

    pub fn m(&self) -> usize {
        self.m_local() + self.m_remote()
    }

    pub fn n_obs(&self) -> usize {
        self.c.nrows()
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.stacked.b
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.stacked.r
    }

    /// Back to plain data with the resolved risk weight made explicit.
    pub fn to_model(&self) -> SystemModel {
        SystemModel {
            a: self.a.clone(),
            b_local: self.b_local.clone(),
            b_remote: self.b_remote.clone(),
            c: self.c.clone(),
            q_w: self.q_w.clone(),
            q_v: self.q_v.clone(),
            q: self.q.clone(),
            q_risk: Some(self.q_risk.clone()),
            r_local: self.r_local.clone(),
            r_remote: self.r_remote.clone(),
            g: self.g.clone(),
            p: self.p,
            x0_mean: self.x0_mean.clone(),
            sigma_init: self.sigma_init.clone(),
            epsilon: self.epsilon,
        }
    }

    /// Same instance with a different failure probability.
    pub fn with_p(&self, p: f64) -> Result<ValidatedModel> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
        Ok(ValidatedModel { p, ..self.clone() })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<ValidatedModel> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::NegativeBudget(epsilon));
        }
        Ok(ValidatedModel { epsilon, ..self.clone() })
    }
}
