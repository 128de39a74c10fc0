//! Random feature spectral estimators and their risk.
//!
//! Coefficients live in `R^{M p}` (the stacked formulation). The closed form
//! is `theta = phi_lambda(Sigma) S^* v` with `Sigma = Z^T Z / n`; the
//! iterative form runs `T` gradient steps on the empirical risk from zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::features::{DesignMatrix, FeatureSet};
use crate::spectral::{apply_filter_eigen, Landweber, SpectralFilter};

#[derive(Debug, Clone)]
pub struct RFModel {
    features: FeatureSet,
    kappa_scale: f64,
    theta: DVector<f64>,
    filter: String,
    lambda: f64,
}

impl RFModel {
    /// Wraps explicit coefficients, e.g. to evaluate a hand-built model.
    pub fn from_parts(
        design: &DesignMatrix,
        theta: DVector<f64>,
        filter: &str,
        lambda: f64,
    ) -> Result<Self> {
        ensure!(
            theta.len() == design.feature_dim(),
            Error::domain(format!(
                "coefficients have length {}, design has {}",
                theta.len(),
                design.feature_dim()
            ))
        );
        ensure!(
            lambda > 0.0 && lambda <= 1.0,
            Error::domain(format!("lambda = {lambda} is outside (0, 1]"))
        );
        Ok(Self {
            features: design.features().clone(),
            kappa_scale: design.kappa_scale(),
            theta,
            filter: filter.to_owned(),
            lambda,
        })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn filter_name(&self) -> &str {
        &self.filter
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn kappa_scale(&self) -> f64 {
        self.kappa_scale
    }

    pub fn output_dim(&self) -> usize {
        self.features.map().output_dim()
    }

    /// `(1/sqrt(M)) sum_{m,i} theta_{m,i} phi_i(u, omega_m)`, in the units
    /// of the training outputs.
    pub fn predict(&self, u: &[f64]) -> Result<DVector<f64>> {
        Ok(self.features.stacked(u)? * &self.theta / self.kappa_scale)
    }

    /// One row of predictions per row of `inputs`.
    pub fn predict_many(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dv = self.output_dim();
        let mut out = DMatrix::zeros(inputs.nrows(), dv);
        for j in 0..inputs.nrows() {
            let u: Vec<f64> = inputs.row(j).iter().copied().collect();
            out.row_mut(j).copy_from(&self.predict(&u)?.transpose());
        }
        Ok(out)
    }
}

/// `theta = phi_lambda(Sigma) S^* v` through the design's cached
/// eigendecomposition.
pub fn fit_closed(
    design: &DesignMatrix,
    v: &DVector<f64>,
    filter: &dyn SpectralFilter,
    lambda: f64,
) -> Result<RFModel> {
    ensure!(
        lambda > 0.0 && lambda <= 1.0,
        Error::domain(format!("lambda = {lambda} is outside (0, 1]"))
    );
    filter.check_lambda(lambda)?;
    let rhs = design.embed_adjoint(v)?;
    let rhs = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let theta = apply_filter_eigen(filter, lambda, design.eigen()?, &rhs)?;
    RFModel::from_parts(design, theta.column(0).into_owned(), filter.name(), lambda)
}

fn check_gd(alpha: f64, steps: u64) -> Result<()> {
    ensure!(
        alpha > 0.0 && alpha <= 1.0,
        Error::domain(format!("step size {alpha} is outside (0, 1]"))
    );
    ensure!(steps >= 1, Error::domain("gradient descent needs T >= 1"));
    ensure!(
        alpha * steps as f64 >= 1.0,
        Error::domain(format!(
            "alpha T = {} < 1 gives lambda = 1/(alpha T) > 1",
            alpha * steps as f64
        ))
    );
    Ok(())
}

/// `T` steps of `theta <- theta - alpha (Sigma theta - S^* v)` from zero;
/// the model records `lambda = 1/(alpha T)`.
pub fn fit_gd(design: &DesignMatrix, v: &DVector<f64>, alpha: f64, steps: u64) -> Result<RFModel> {
    Ok(fit_gd_path(design, v, alpha, &[steps])?.remove(0))
}

/// Runs gradient descent once and snapshots the iterate at each requested
/// step count (ascending order not required).
pub fn fit_gd_path(
    design: &DesignMatrix,
    v: &DVector<f64>,
    alpha: f64,
    checkpoints: &[u64],
) -> Result<Vec<RFModel>> {
    ensure!(
        !checkpoints.is_empty(),
        Error::domain("no checkpoints requested")
    );
    for &t in checkpoints {
        check_gd(alpha, t)?;
    }
    let rhs = design.embed_adjoint(v)?;
    let last = *checkpoints.iter().max().expect("nonempty");
    let mut theta = DVector::zeros(design.feature_dim());
    let mut snaps = vec![None; checkpoints.len()];
    for t in 1..=last {
        let grad = design.cov_apply(&theta) - &rhs;
        theta.axpy(-alpha, &grad, 1.0);
        for (k, &c) in checkpoints.iter().enumerate() {
            if c == t {
                snaps[k] = Some(theta.clone());
            }
        }
    }
    snaps
        .into_iter()
        .zip(checkpoints)
        .map(|(th, &t)| {
            let lambda = Landweber::new(alpha)?.lambda_for_steps(t);
            RFModel::from_parts(
                design,
                th.expect("every checkpoint visited"),
                "landweber",
                lambda,
            )
        })
        .collect()
}

/// Like [`fit_gd`], also returning the empirical risk before each step and
/// after the last one (`T + 1` values).
pub fn fit_gd_trace(
    design: &DesignMatrix,
    v: &DVector<f64>,
    alpha: f64,
    steps: u64,
) -> Result<(RFModel, Vec<f64>)> {
    check_gd(alpha, steps)?;
    let rhs = design.embed_adjoint(v)?;
    let mut theta = DVector::zeros(design.feature_dim());
    let mut risks = Vec::with_capacity(steps as usize + 1);
    let risk = |theta: &DVector<f64>| -> Result<f64> {
        Ok(weighted_risk(&design.predict_rows(theta)?, v, design)?)
    };
    risks.push(risk(&theta)?);
    for _ in 0..steps {
        let grad = design.cov_apply(&theta) - &rhs;
        theta.axpy(-alpha, &grad, 1.0);
        risks.push(risk(&theta)?);
    }
    let lambda = Landweber::new(alpha)?.lambda_for_steps(steps);
    Ok((
        RFModel::from_parts(design, theta, "landweber", lambda)?,
        risks,
    ))
}

fn weighted_risk(pred: &DVector<f64>, v: &DVector<f64>, design: &DesignMatrix) -> Result<f64> {
    let w = design.features().map().output_weight();
    Ok(0.5 * w * (pred - v).norm_squared() / design.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// `(1/n) sum_j ||F(u_j) - v_j||^2 / 2` in the output norm.
    pub empirical_risk: f64,
    /// Root mean squared distance to the regression function, when known.
    pub excess_l2: Option<f64>,
    pub n_test: usize,
}

/// Evaluates on held-out data; `oracle` maps an input to the regression
/// function's value there.
pub fn evaluate(
    model: &RFModel,
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    oracle: Option<&dyn Fn(&[f64]) -> DVector<f64>>,
) -> Result<RiskReport> {
    let n = inputs.nrows();
    ensure!(n >= 1, Error::domain("test set is empty"));
    ensure!(
        outputs.nrows() == n && outputs.ncols() == model.output_dim(),
        Error::domain("test outputs do not match inputs or output dimension")
    );
    let w = model.features.map().output_weight();
    let pred = model.predict_many(inputs)?;
    let empirical_risk = 0.5 * w * (&pred - outputs).norm_squared() / n as f64;
    let excess_l2 = match oracle {
        None => None,
        Some(g) => {
            let mut acc = 0.0;
            for j in 0..n {
                let u: Vec<f64> = inputs.row(j).iter().copied().collect();
                let target = g(&u);
                ensure!(
                    target.len() == model.output_dim(),
                    Error::domain("oracle output has the wrong dimension")
                );
                acc += w * (pred.row(j).transpose() - target).norm_squared();
            }
            Some((acc / n as f64).sqrt())
        }
    };
    ensure!(
        empirical_risk.is_finite() && excess_l2.map_or(true, f64::is_finite),
        Error::Internal("risk evaluation produced a non-finite value".into())
    );
    Ok(RiskReport {
        empirical_risk,
        excess_l2,
        n_test: n,
    })
}
