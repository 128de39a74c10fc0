//! Design matrices carrying the empirical sampling operator, its adjoint and
//! the empirical covariance in random feature coordinates.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::FeatureSet;
use crate::error::{ensure, Error, Result};
use crate::linalg::EigenSystem;

/// How the feature columns are normalized so that the covariance has
/// spectral norm at most one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaScale {
    /// Divide by the map's declared almost-sure bound.
    Declared,
    /// Divide by the largest per-input feature energy seen in the data.
    Empirical,
    /// Divide by a caller-supplied constant (e.g. to share a scale across
    /// training and test designs).
    Fixed(f64),
}

/// `Z` has shape `(n d_v) x (M p)`; row `j d_v + k` holds output coordinate
/// `k` of the stacked features at input `u_j`, scaled by
/// `sqrt(w) / (sqrt(M) kappa_scale)`.
#[derive(Debug)]
pub struct DesignMatrix {
    features: FeatureSet,
    z: DMatrix<f64>,
    n: usize,
    kappa_scale: f64,
    cov: OnceLock<DMatrix<f64>>,
    eigen: OnceLock<EigenSystem>,
}

/// Builds the design with the default normalization: the declared `kappa`
/// when the map has one, the empirical bound otherwise.
pub fn build_design(fs: &FeatureSet, inputs: &DMatrix<f64>) -> Result<DesignMatrix> {
    let policy = if fs.map().kappa().is_some() {
        KappaScale::Declared
    } else {
        KappaScale::Empirical
    };
    build_design_scaled(fs, inputs, policy)
}

pub fn build_design_scaled(
    fs: &FeatureSet,
    inputs: &DMatrix<f64>,
    policy: KappaScale,
) -> Result<DesignMatrix> {
    let n = inputs.nrows();
    ensure!(n >= 1, Error::domain("design needs at least one input"));
    let map = fs.map();
    ensure!(
        inputs.ncols() == map.input_dim(),
        Error::domain(format!(
            "inputs have {} columns, {} expects {}",
            inputs.ncols(),
            map.name(),
            map.input_dim()
        ))
    );
    let dv = map.output_dim();
    let cols = fs.feature_dim();
    let sqrt_w = map.output_weight().sqrt();

    let blocks: Vec<DMatrix<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let u: Vec<f64> = inputs.row(j).iter().copied().collect();
            fs.stacked(&u).map(|b| b * sqrt_w)
        })
        .collect::<Result<_>>()?;

    let kappa_scale = match policy {
        KappaScale::Declared => map.kappa().ok_or_else(|| {
            Error::config(format!(
                "{} declares no kappa; use an empirical scale",
                map.name()
            ))
        })?,
        KappaScale::Empirical => blocks
            .iter()
            .map(|b| b.norm_squared())
            .fold(0.0, f64::max)
            .sqrt(),
        KappaScale::Fixed(k) => k,
    };
    ensure!(
        kappa_scale.is_finite() && kappa_scale > 0.0,
        Error::domain("design is identically zero; nothing to regularize")
    );

    let mut z = DMatrix::zeros(n * dv, cols);
    for (j, block) in blocks.iter().enumerate() {
        z.rows_mut(j * dv, dv).copy_from(&(block / kappa_scale));
    }
    ensure!(
        z.iter().any(|&x| x != 0.0),
        Error::domain("design is identically zero; nothing to regularize")
    );
    Ok(DesignMatrix {
        features: fs.clone(),
        z,
        n,
        kappa_scale,
        cov: OnceLock::new(),
        eigen: OnceLock::new(),
    })
}

impl DesignMatrix {
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn output_dim(&self) -> usize {
        self.features.map().output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn kappa_scale(&self) -> f64 {
        self.kappa_scale
    }

    fn sqrt_w(&self) -> f64 {
        self.features.map().output_weight().sqrt()
    }

    /// `(1/n) Z^T Z`, computed once.
    pub fn cov(&self) -> &DMatrix<f64> {
        self.cov
            .get_or_init(|| self.z.transpose() * &self.z / self.n as f64)
    }

    /// Eigendecomposition of [`cov`](Self::cov), computed once and reused
    /// across regularization parameters.
    pub fn eigen(&self) -> Result<&EigenSystem> {
        if let Some(e) = self.eigen.get() {
            return Ok(e);
        }
        let e = EigenSystem::new(self.cov())?;
        Ok(self.eigen.get_or_init(|| e))
    }

    fn check_outputs(&self, v: &DVector<f64>) -> Result<()> {
        ensure!(
            v.len() == self.z.nrows(),
            Error::domain(format!(
                "output vector has length {}, design expects n d_v = {}",
                v.len(),
                self.z.nrows()
            ))
        );
        Ok(())
    }

    /// Adjoint of the sampling operator applied to raw stacked outputs `v`
    /// (entry `j d_v + k`).
    pub fn embed_adjoint(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_outputs(v)?;
        Ok(self.z.tr_mul(&(v * self.sqrt_w())) / self.n as f64)
    }

    /// `(1/n) Z^T (Z theta)` without forming the covariance.
    pub fn cov_apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self.cov.get() {
            Some(c) => c * theta,
            None => self.z.tr_mul(&(&self.z * theta)) / self.n as f64,
        }
    }

    /// Raw predictions at the training inputs, stacked like the outputs.
    pub fn predict_rows(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        Ok(&self.z * theta / self.sqrt_w())
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        ensure!(
            theta.len() == self.z.ncols(),
            Error::domain(format!(
                "coefficients have length {}, design has M p = {}",
                theta.len(),
                self.z.ncols()
            ))
        );
        Ok(())
    }

    /// Raw prediction at a new input, consistent with [`predict_rows`](Self::predict_rows).
    pub fn predict(&self, theta: &DVector<f64>, u: &[f64]) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        Ok(self.features.stacked(u)? * theta / self.kappa_scale)
    }

    /// Raw predictions at every row of `inputs`, stacked `j d_v + k`.
    pub fn predict_many(
        &self,
        theta: &DVector<f64>,
        inputs: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let dv = self.output_dim();
        let rows: Vec<DVector<f64>> = (0..inputs.nrows())
            .into_par_iter()
            .map(|j| {
                let u: Vec<f64> = inputs.row(j).iter().copied().collect();
                self.predict(theta, &u)
            })
            .collect::<Result<_>>()?;
        let mut out = DVector::zeros(inputs.nrows() * dv);
        for (j, r) in rows.iter().enumerate() {
            out.rows_mut(j * dv, dv).copy_from(r);
        }
        Ok(out)
    }
}
