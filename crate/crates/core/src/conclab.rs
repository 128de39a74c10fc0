//! Concentration bounds and Monte Carlo checks of the events they control.
//!
//! Every event is checked on a finite-rank synthetic problem, where the
//! population operators are explicit: in the cosine basis `L = diag(mu_i)`
//! and, for a feature draw `omega_1..omega_M`, `L_M = diag(c_i^2 k_i / M)`
//! with `k_i` the number of draws equal to `i`. Operators on the feature
//! space `H_M = R^M` are reached through `A` (`d x M`), `A_{i m} =
//! c_i 1{omega_m = i} / sqrt(M)`, with `Sigma_M = A^T A` and
//! `Sigma_hat_M = A^T E_n A`, `E_n = (1/n) sum_j e(u_j) e(u_j)^T`.
//!
//! Each left-hand side has two implementations: one in basis coefficients
//! using the structure above, and one that evaluates the sampled features
//! directly (design matrices and quadrature).

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Cell, Table};
use crate::error::{ensure, Error, Result};
use crate::features::{sample_features, FeatureSet};
use crate::linalg::{hs_norm, spectral_norm, EigenSystem};
use crate::registry::Registry;
use crate::rng::{derive_seed, rng_from_seed};
use crate::synthetic::{
    cosine_basis, effective_dimension_of, quadrature_grid, NoiseModel, SyntheticProblem,
};

/// `2 B beta / (3 m) + sqrt(2 ||V|| beta / m)` with
/// `beta = log(4 tr V / (||V|| delta))`.
pub fn bernstein_bound(b: f64, v_opnorm: f64, v_trace: f64, m: f64, delta: f64) -> Result<f64> {
    ensure!(
        b > 0.0 && v_opnorm > 0.0 && v_trace > 0.0 && m > 0.0,
        Error::domain("Bernstein bound needs positive B, ||V||, tr V and m")
    );
    check_delta(delta)?;
    ensure!(
        v_trace >= v_opnorm,
        Error::domain(format!("tr V = {v_trace} is below ||V|| = {v_opnorm}"))
    );
    let beta = (4.0 * v_trace / (v_opnorm * delta)).ln();
    Ok(2.0 * b * beta / (3.0 * m) + (2.0 * v_opnorm * beta / m).sqrt())
}

/// `(2B/n + 2V/sqrt(n)) log(2/delta)`, valid for `delta < 1/2`.
pub fn pinelis_bound(b: f64, v: f64, n: f64, delta: f64) -> Result<f64> {
    ensure!(
        b > 0.0 && v >= 0.0 && n > 0.0,
        Error::domain("Pinelis bound needs positive B and n, nonnegative V")
    );
    ensure!(
        delta > 0.0 && delta < 0.5,
        Error::domain(format!("delta = {delta} must lie in (0, 1/2)"))
    );
    Ok((2.0 * b / n + 2.0 * v / n.sqrt()) * (2.0 / delta).ln())
}

fn check_delta(delta: f64) -> Result<()> {
    ensure!(
        delta > 0.0 && delta < 1.0,
        Error::domain(format!("delta = {delta} must lie in (0, 1)"))
    );
    Ok(())
}

/// Inputs of the right-hand sides. Fields an event does not use may stay
/// empty; a missing field an event needs is a configuration error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub delta: f64,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    pub n: Option<f64>,
    pub m: Option<f64>,
    pub p: Option<f64>,
    /// `N_L(lambda)`
    pub eff_dim: Option<f64>,
    /// `N_{L_M}(lambda)`
    pub eff_dim_m: Option<f64>,
    /// `||L||`
    pub norm_l: Option<f64>,
    /// `||L_M||`
    pub norm_lm: Option<f64>,
    pub q: Option<f64>,
    pub z: Option<f64>,
    pub r: Option<f64>,
    pub radius: Option<f64>,
    /// Filter constant `D`.
    pub d_const: Option<f64>,
    /// `||G - S_M F*_lambda||_{L^2}`
    pub residual_l2: Option<f64>,
    /// Generic bound inputs for the Bernstein and Pinelis formulas.
    pub b: Option<f64>,
    pub v: Option<f64>,
    pub v_trace: Option<f64>,
}

fn need(v: Option<f64>, name: &str, id: &str) -> Result<f64> {
    v.ok_or_else(|| Error::config(format!("event {id} needs parameter {name}")))
}

/// Which randomness a trial resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Randomness {
    Data,
    Features,
    /// A bound formula without an associated sampler.
    None,
}

/// Population and sampled quantities of one trial.
#[derive(Debug, Clone)]
pub struct TrialState {
    pub lambda: f64,
    /// `L` eigenvalues (basis `e_1..e_d`).
    pub mu: Vec<f64>,
    /// `L_M` diagonal.
    pub lm: Vec<f64>,
    pub features: FeatureSet,
    /// Inputs and noise of the data sample, when drawn.
    pub inputs: Vec<f64>,
    pub noise: Vec<f64>,
    /// `g_i`.
    pub target: Vec<f64>,
}

impl TrialState {
    fn d(&self) -> usize {
        self.mu.len()
    }

    fn n(&self) -> usize {
        self.inputs.len()
    }

    /// `n x d`, entry `(j, i)` is `e_{i+1}(u_j)`.
    fn basis_at_inputs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.d(), |j, i| {
            cosine_basis(i + 1, self.inputs[j])
        })
    }

    /// `E_n - I`.
    fn gram_deviation(&self) -> DMatrix<f64> {
        let e = self.basis_at_inputs();
        let mut x = e.transpose() * &e / self.n() as f64;
        for i in 0..self.d() {
            x[(i, i)] -= 1.0;
        }
        x
    }

    /// `P = L_M (L_M + lambda)^{-1}`.
    fn projector(&self) -> Vec<f64> {
        self.lm.iter().map(|&l| l / (l + self.lambda)).collect()
    }

    /// `Z` with entries `phi(u_j, omega_m) / sqrt(M)`, evaluated through the
    /// feature map.
    fn design(&self) -> DMatrix<f64> {
        let m = self.features.len();
        let mut z = DMatrix::zeros(self.n(), m);
        for j in 0..self.n() {
            z.row_mut(j).copy_from(
                &self
                    .features
                    .stacked(&[self.inputs[j]])
                    .expect("scalar input")
                    .row(0),
            );
        }
        z
    }

    /// `A` recovered by exact quadrature of the sampled features against the
    /// basis.
    fn quadrature_embedding(&self) -> DMatrix<f64> {
        let points = 4 * self.d().max(8);
        let grid = quadrature_grid(points);
        let m = self.features.len();
        let mut phi = DMatrix::zeros(points, m);
        for q in 0..points {
            phi.row_mut(q).copy_from(
                &self
                    .features
                    .stacked(&[grid[(q, 0)]])
                    .expect("scalar input")
                    .row(0),
            );
        }
        let basis = DMatrix::from_fn(points, self.d(), |q, i| cosine_basis(i + 1, grid[(q, 0)]));
        basis.transpose() * phi / points as f64
    }

    fn sigma_m_inv_sqrt(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let sigma = a.transpose() * a;
        let lambda = self.lambda;
        Ok(EigenSystem::new(&sigma)?.matrix_function(|t| 1.0 / (t.max(0.0) + lambda).sqrt()))
    }
}

/// One of the events checked by simulation.
pub trait ConcentrationEvent: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn randomness(&self) -> Randomness;
    fn rhs(&self, p: &EventParams) -> Result<f64>;
    /// Left-hand side in basis coefficients.
    fn lhs_basis(&self, _t: &TrialState) -> Result<f64> {
        Err(Error::config(format!("event {} has no sampler", self.id())))
    }
    /// Left-hand side from direct feature evaluations.
    fn lhs_features(&self, _t: &TrialState) -> Result<f64> {
        Err(Error::config(format!("event {} has no sampler", self.id())))
    }
}

fn log2d(delta: f64) -> f64 {
    (2.0 / delta).ln()
}

macro_rules! event {
    ($name:ident, $id:literal) => {
        #[derive(Debug, Clone, Copy, Default)]
        pub struct $name;
        impl $name {
            pub const ID: &'static str = $id;
        }
    };
}

event!(E1, "E1");
event!(E2, "E2");
event!(E3, "E3");
event!(E4, "E4");
event!(E5, "E5");
event!(E6, "E6");
event!(E7, "E7");
event!(E8, "E8");
event!(E9, "E9");
event!(Bernstein, "bernstein");
event!(Pinelis, "pinelis");

/// `||L_lambda^{-1/2} (L_M - L) L_lambda^{-1/2}||` style quantities need the
/// dense `L_M` from quadrature on the feature route.
fn dense_lm(t: &TrialState) -> DMatrix<f64> {
    let a = t.quadrature_embedding();
    &a * a.transpose()
}

fn l_minus_lm_scaled(t: &TrialState, left: f64, right: f64) -> DMatrix<f64> {
    let lm = dense_lm(t);
    let d = t.d();
    DMatrix::from_fn(d, d, |i, k| {
        let diff = lm[(i, k)] - if i == k { t.mu[i] } else { 0.0 };
        diff * (t.mu[i] + t.lambda).powf(-left) * (t.mu[k] + t.lambda).powf(-right)
    })
}

impl ConcentrationEvent for E1 {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::Data
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        let (k, l, n) = (
            need(p.kappa, "kappa", id)?,
            need(p.lambda, "lambda", id)?,
            need(p.n, "n", id)?,
        );
        let nm = need(p.eff_dim_m, "eff_dim_m", id)?;
        let norm = need(p.norm_lm, "norm_lm", id)?;
        let beta = (4.0 * k * k * (nm + 1.0) / (p.delta * norm)).ln();
        Ok(4.0 * k * k * beta / (3.0 * n * l) + (2.0 * k * k * beta / (n * l)).sqrt())
    }
    fn lhs_basis(&self, t: &TrialState) -> Result<f64> {
        let x = t.gram_deviation();
        let s: Vec<f64> = t.projector().iter().map(|p| p.sqrt()).collect();
        let d = t.d();
        Ok(spectral_norm(&DMatrix::from_fn(d, d, |i, k| {
            s[i] * x[(i, k)] * s[k]
        })))
    }
    fn lhs_features(&self, t: &TrialState) -> Result<f64> {
        let a = t.quadrature_embedding();
        let z = t.design();
        let diff = z.transpose() * &z / t.n() as f64 - a.transpose() * &a;
        let w = t.sigma_m_inv_sqrt(&a)?;
        Ok(spectral_norm(&(&w * diff * &w)))
    }
}

impl ConcentrationEvent for E2 {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::Features
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        let (k, l, m) = (
            need(p.kappa, "kappa", id)?,
            need(p.lambda, "lambda", id)?,
            need(p.m, "m", id)?,
        );
        let pp = need(p.p, "p", id)?;
        let nl = need(p.eff_dim, "eff_dim", id)?;
        let norm = need(p.norm_l, "norm_l", id)?;
        let beta = (4.0 * k * k * (nl + 1.0) / (p.delta * norm)).ln();
        Ok(4.0 * k * k * beta / (3.0 * m * l) + (2.0 * pp * k * k * beta / (m * l)).sqrt())
    }
    fn lhs_basis(&self, t: &TrialState) -> Result<f64> {
        Ok(t.mu
            .iter()
            .zip(&t.lm)
            .map(|(mu, lm)| (lm - mu).abs() / (mu + t.lambda))
            .fold(0.0, f64::max))
    }
    fn lhs_features(&self, t: &TrialState) -> Result<f64> {
        Ok(spectral_norm(&l_minus_lm_scaled(t, 0.5, 0.5)))
    }
}

impl ConcentrationEvent for E3 {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::Data
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        let (k, l, n) = (
            need(p.kappa, "kappa", id)?,
            need(p.lambda, "lambda", id)?,
            need(p.n, "n", id)?,
        );
        let nm = need(p.eff_dim_m, "eff_dim_m", id)?;
        Ok((2.0 * k / (l.sqrt() * n) + (4.0 * k * k * nm / n).sqrt()) * log2d(p.delta))
    }
    fn lhs_basis(&self, t: &TrialState) -> Result<f64> {
        // tr(X P X L_M)
        let x = t.gram_deviation();
        let p = t.projector();
        let d = t.d();
        let mut acc = 0.0;
        for i in 0..d {
            for k in 0..d {
                acc += x[(i, k)] * x[(i, k)] * p[k] * t.lm[i];
            }
        }
        Ok(acc.max(0.0).sqrt())
    }
    fn lhs_features(&self, t: &TrialState) -> Result<f64> {
        let a = t.quadrature_embedding();
        let z = t.design();
        let diff = z.transpose() * &z / t.n() as f64 - a.transpose() * &a;
        Ok(hs_norm(&(t.sigma_m_inv_sqrt(&a)? * diff)))
    }
}

impl ConcentrationEvent for E4 {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::Features
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        let (k, l, m) = (
            need(p.kappa, "kappa", id)?,
            need(p.lambda, "lambda", id)?,
            need(p.m, "m", id)?,
        );
        let nl = need(p.eff_dim, "eff_dim", id)?;
        Ok((4.0 * k * k / (l * m) + (4.0 * k * k * nl / (l * m)).sqrt()) * log2d(p.delta))
    }
    fn lhs_basis(&self, t: &TrialState) -> Result<f64> {
        Ok(t.mu
            .iter()
            .zip(&t.lm)
            .map(|(mu, lm)| ((lm - mu) / (mu + t.lambda)).powi(2))
            .sum::<f64>()
            .sqrt())
    }
    fn lhs_features(&self, t: &TrialState) -> Result<f64> {
        Ok(hs_norm(&l_minus_lm_scaled(t, 0.5, 0.5)))
    }
}

impl ConcentrationEvent for E5 {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::Features
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        let (k, l, m) = (
            need(p.kappa, "kappa", id)?,
            need(p.lambda, "lambda", id)?,
            need(p.m, "m", id)?,
        );
        let nl = need(p.eff_dim, "eff_dim", id)?;
        Ok((2.0 * k / (l.sqrt() * m) + (4.0 * k * k * nl / m).sqrt()) * log2d(p.delta))
    }
    fn lhs_basis(&self, t: &TrialState) -> Result<f64> {
        Ok(t.mu
            .iter()
            .zip(&t.lm)
            .map(|(mu, lm)| (lm - mu).abs() / (mu + t.lambda).sqrt())
            .fold(0.0, f64::max))
    }
    fn lhs_features(&self, t: &TrialState) -> Result<f64> {
        Ok(spectral_norm(&l_minus_lm_scaled(t, 0.5, 0.0)))
    }
}

impl ConcentrationEvent for E6 {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::Features
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        let (k, m) = (need(p.kappa, "kappa", id)?, need(p.m, "m", id)?);
        Ok((2.0 * k * k / m + 2.0 * k * k / m.sqrt()) * log2d(p.delta))
    }
    fn lhs_basis(&self, t: &TrialState) -> Result<f64> {
        Ok(t.mu
            .iter()
            .zip(&t.lm)
            .map(|(mu, lm)| (lm - mu).powi(2))
            .sum::<f64>()
            .sqrt())
    }
    fn lhs_features(&self, t: &TrialState) -> Result<f64> {
        Ok(hs_norm(&l_minus_lm_scaled(t, 0.0, 0.0)))
    }
}

impl ConcentrationEvent for E7 {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::Data
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        let (k, n) = (need(p.kappa, "kappa", id)?, need(p.n, "n", id)?);
        Ok((2.0 * k * k / n + 2.0 * k * k / n.sqrt()) * log2d(p.delta))
    }
    fn lhs_basis(&self, t: &TrialState) -> Result<f64> {
        // tr(X L_M X L_M)
        let x = t.gram_deviation();
        let d = t.d();
        let mut acc = 0.0;
        for i in 0..d {
            for k in 0..d {
                acc += x[(i, k)] * x[(i, k)] * t.lm[i] * t.lm[k];
            }
        }
        Ok(acc.max(0.0).sqrt())
    }
    fn lhs_features(&self, t: &TrialState) -> Result<f64> {
        let a = t.quadrature_embedding();
        let z = t.design();
        Ok(hs_norm(
            &(z.transpose() * &z / t.n() as f64 - a.transpose() * &a),
        ))
    }
}

impl ConcentrationEvent for E8 {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::Data
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        let (k, l, n) = (
            need(p.kappa, "kappa", id)?,
            need(p.lambda, "lambda", id)?,
            need(p.n, "n", id)?,
        );
        let (q, z) = (need(p.q, "q", id)?, need(p.z, "z", id)?);
        let nm = need(p.eff_dim_m, "eff_dim_m", id)?;
        Ok((4.0 * q * z * k / (l.sqrt() * n) + 4.0 * q * nm.sqrt() / n.sqrt()) * log2d(p.delta))
    }
    fn lhs_basis(&self, t: &TrialState) -> Result<f64> {
        // eta = (1/n) E^T eps; ||Sigma_{M,lambda}^{-1/2} A^T eta||^2 = eta^T P eta
        let e = t.basis_at_inputs();
        let eta = e.tr_mul(&DVector::from_column_slice(&t.noise)) / t.n() as f64;
        let p = t.projector();
        Ok(eta
            .iter()
            .zip(&p)
            .map(|(x, p)| p * x * x)
            .sum::<f64>()
            .sqrt())
    }
    fn lhs_features(&self, t: &TrialState) -> Result<f64> {
        let a = t.quadrature_embedding();
        let z = t.design();
        let s = z.tr_mul(&DVector::from_column_slice(&t.noise)) / t.n() as f64;
        Ok((t.sigma_m_inv_sqrt(&a)? * s).norm())
    }
}

/// `F*_lambda = S_M^* phi_lambda(L_M) G` with the Tikhonov filter; its
/// residual `G - S_M F*` has coefficients `lambda / (l_i + lambda) g_i`.
fn e9_residual(t: &TrialState) -> Vec<f64> {
    t.lm.iter()
        .zip(&t.target)
        .map(|(l, g)| t.lambda / (l + t.lambda) * g)
        .collect()
}

fn e9_lhs(values: &[f64], residual: &[f64]) -> f64 {
    let emp = values.iter().map(|x| x * x).sum::<f64>() / values.len() as f64;
    let pop: f64 = residual.iter().map(|x| x * x).sum();
    (emp - pop).abs()
}

impl ConcentrationEvent for E9 {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::Data
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        let (k, l, n) = (
            need(p.kappa, "kappa", id)?,
            need(p.lambda, "lambda", id)?,
            need(p.n, "n", id)?,
        );
        let (q, r) = (need(p.q, "q", id)?, need(p.r, "r", id)?);
        let radius = need(p.radius, "radius", id)?;
        let d = need(p.d_const, "d_const", id)?;
        let res = need(p.residual_l2, "residual_l2", id)?;
        let c = 2.0 * k.powf(2.0 * r + 1.0) * radius * d;
        let ex = (0.5 - r).max(0.0);
        let b = 4.0 * (q * q + c * c * l.powf(-2.0 * ex));
        let v = 2f64.sqrt() * (q + c * l.powf(-ex)) * res;
        Ok(2.0 * (b / n + v / n.sqrt()) * log2d(p.delta))
    }
    fn lhs_basis(&self, t: &TrialState) -> Result<f64> {
        let res = e9_residual(t);
        let e = t.basis_at_inputs();
        let vals = e * DVector::from_column_slice(&res);
        Ok(e9_lhs(vals.as_slice(), &res))
    }
    fn lhs_features(&self, t: &TrialState) -> Result<f64> {
        // theta* = A^T phi(L_M) g evaluated through the sampled features
        let a = t.quadrature_embedding();
        let lm = &a * a.transpose();
        let g = DVector::from_column_slice(&t.target);
        let lambda = t.lambda;
        let filtered = EigenSystem::new(&lm)?
            .apply(&DMatrix::from_column_slice(g.len(), 1, g.as_slice()), |x| {
                1.0 / (x.max(0.0) + lambda)
            });
        let theta = a.tr_mul(&filtered);
        let z = t.design();
        let pred = z * theta;
        let vals: Vec<f64> = (0..t.n())
            .map(|j| {
                let gu: f64 = t
                    .target
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * cosine_basis(i + 1, t.inputs[j]))
                    .sum();
                gu - pred[(j, 0)]
            })
            .collect();
        // population residual from the dense operator
        let res_dense = EigenSystem::new(&lm)?
            .apply(&DMatrix::from_column_slice(g.len(), 1, g.as_slice()), |x| {
                lambda / (x.max(0.0) + lambda)
            });
        Ok(e9_lhs(&vals, res_dense.as_slice()))
    }
}

impl ConcentrationEvent for Bernstein {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::None
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        bernstein_bound(
            need(p.b, "b", id)?,
            need(p.v, "v", id)?,
            need(p.v_trace, "v_trace", id)?,
            need(p.m, "m", id)?,
            p.delta,
        )
    }
}

impl ConcentrationEvent for Pinelis {
    fn id(&self) -> &str {
        Self::ID
    }
    fn randomness(&self) -> Randomness {
        Randomness::None
    }
    fn rhs(&self, p: &EventParams) -> Result<f64> {
        let id = self.id();
        pinelis_bound(
            need(p.b, "b", id)?,
            need(p.v, "v", id)?,
            need(p.n, "n", id)?,
            p.delta,
        )
    }
}

pub fn event_registry() -> &'static Registry<dyn ConcentrationEvent> {
    static REGISTRY: OnceLock<Registry<dyn ConcentrationEvent>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn ConcentrationEvent> = Registry::new("event");
        reg.register(E1::ID, |_| Ok(Box::new(E1)));
        reg.register(E2::ID, |_| Ok(Box::new(E2)));
        reg.register(E3::ID, |_| Ok(Box::new(E3)));
        reg.register(E4::ID, |_| Ok(Box::new(E4)));
        reg.register(E5::ID, |_| Ok(Box::new(E5)));
        reg.register(E6::ID, |_| Ok(Box::new(E6)));
        reg.register(E7::ID, |_| Ok(Box::new(E7)));
        reg.register(E8::ID, |_| Ok(Box::new(E8)));
        reg.register(E9::ID, |_| Ok(Box::new(E9)));
        reg.register(Bernstein::ID, |_| Ok(Box::new(Bernstein)));
        reg.register(Pinelis::ID, |_| Ok(Box::new(Pinelis)));
        reg
    })
}

pub fn build_event(id: &str) -> Result<Arc<dyn ConcentrationEvent>> {
    Ok(event_registry().build(id, &serde_json::Value::Null)?.into())
}

/// Closed-form right-hand side of the named event.
pub fn event_rhs(id: &str, params: &EventParams) -> Result<f64> {
    check_delta(params.delta)?;
    build_event(id)?.rhs(params)
}

/// A parameter point for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub id: String,
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub id: String,
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub rhs: f64,
    /// Quantiles 0.5, 0.9, 0.99 and the maximum of the left-hand side.
    pub lhs_quantiles: [f64; 4],
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Diagonal of `L_M` for a feature draw, with the draw counts.
fn lm_diagonal(problem: &SyntheticProblem, fs: &FeatureSet) -> Vec<f64> {
    let d = problem.rank();
    let mut counts = vec![0usize; d];
    for w in fs.samples() {
        counts[w[0] as usize - 1] += 1;
    }
    let m = fs.len() as f64;
    (0..d)
        .map(|i| problem.feature_weight(i + 1) * (counts[i] as f64 / m))
        .collect()
}

/// Deterministic population parameters for `spec` given a feature draw.
pub fn event_params(
    spec: &EventSpec,
    problem: &SyntheticProblem,
    noise: &NoiseModel,
    features: &FeatureSet,
) -> Result<EventParams> {
    let mu = problem.spectrum.eigenvalues();
    let lm = lm_diagonal(problem, features);
    let (q, z) = noise.constants(problem.target_sup());
    let residual: f64 = lm
        .iter()
        .zip(&problem.target.g)
        .map(|(l, g)| (spec.lambda / (l + spec.lambda) * g).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(EventParams {
        delta: spec.delta,
        kappa: Some(problem.kappa()),
        lambda: Some(spec.lambda),
        n: Some(spec.n as f64),
        m: Some(spec.m as f64),
        p: Some(1.0),
        eff_dim: Some(effective_dimension_of(&mu, spec.lambda)?),
        eff_dim_m: Some(effective_dimension_of(&lm, spec.lambda)?),
        norm_l: Some(mu.iter().copied().fold(0.0, f64::max)),
        norm_lm: Some(lm.iter().copied().fold(0.0, f64::max)),
        q: Some(q),
        z: Some(z),
        r: Some(problem.target.r),
        radius: Some(problem.target.radius),
        d_const: Some(1.0),
        residual_l2: Some(residual),
        ..EventParams::default()
    })
}

/// Draws the state of trial `k`. Data events keep the feature draw fixed
/// (the bounds hold conditionally on it) and resample the data.
pub fn trial_state(
    spec: &EventSpec,
    event: &dyn ConcentrationEvent,
    problem: &SyntheticProblem,
    noise: &NoiseModel,
    seed: u64,
    k: u64,
) -> Result<TrialState> {
    let feature_seed = match event.randomness() {
        Randomness::Features => derive_seed(seed, &[1, k]),
        _ => derive_seed(seed, &[1]),
    };
    let features = sample_features(problem.feature_map(), spec.m, feature_seed)?;
    let (inputs, noise_draws) = if event.randomness() == Randomness::Data {
        let mut rng = rng_from_seed(derive_seed(seed, &[2, k]));
        let mut u = Vec::with_capacity(spec.n);
        let mut e = Vec::with_capacity(spec.n);
        for _ in 0..spec.n {
            u.push(rng.gen::<f64>());
            e.push(noise.sample(&mut rng));
        }
        (u, e)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(TrialState {
        lambda: spec.lambda,
        mu: problem.spectrum.eigenvalues(),
        lm: lm_diagonal(problem, &features),
        features,
        inputs,
        noise: noise_draws,
        target: problem.target.g.clone(),
    })
}

/// Monte Carlo violation rate of the event at `spec`.
pub fn simulate_event(
    spec: &EventSpec,
    problem: &SyntheticProblem,
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
) -> Result<TrialReport> {
    ensure!(
        trials >= 50,
        Error::config(format!("need at least 50 trials, got {trials}"))
    );
    check_delta(spec.delta)?;
    ensure!(
        spec.lambda > 0.0 && spec.n >= 1 && spec.m >= 1,
        Error::config("event needs lambda > 0, n >= 1 and M >= 1")
    );
    let event = build_event(&spec.id)?;
    ensure!(
        event.randomness() != Randomness::None,
        Error::config(format!(
            "event {} is a bound formula without a sampler",
            spec.id
        ))
    );
    // feature-side bounds only involve L; data-side bounds use the fixed draw
    let fixed = sample_features(problem.feature_map(), spec.m, derive_seed(seed, &[1]))?;
    let rhs_fixed = event.rhs(&event_params(spec, problem, noise, &fixed)?)?;
    let outcomes: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let state = trial_state(spec, event.as_ref(), problem, noise, seed, k)?;
            Ok((event.lhs_basis(&state)?, rhs_fixed))
        })
        .collect::<Result<_>>()?;
    let violations = outcomes.iter().filter(|(l, r)| l > r).count();
    let mut lhs: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    lhs.sort_by(f64::total_cmp);
    Ok(TrialReport {
        id: spec.id.clone(),
        lambda: spec.lambda,
        n: spec.n,
        m: spec.m,
        delta: spec.delta,
        trials,
        violations,
        violation_rate: violations as f64 / trials as f64,
        rhs: rhs_fixed,
        lhs_quantiles: [
            quantile(&lhs, 0.5),
            quantile(&lhs, 0.9),
            quantile(&lhs, 0.99),
            *lhs.last().expect("trials >= 50"),
        ],
    })
}

pub fn reports_table(reports: &[TrialReport]) -> Table {
    let mut t = Table::new([
        "event",
        "lambda",
        "n",
        "m",
        "delta",
        "trials",
        "violations",
        "violation_rate",
        "rhs",
        "lhs_q50",
        "lhs_q90",
        "lhs_q99",
        "lhs_max",
    ]);
    for r in reports {
        let mut row: Vec<Cell> = vec![
            r.id.as_str().into(),
            r.lambda.into(),
            r.n.into(),
            r.m.into(),
            r.delta.into(),
            r.trials.into(),
            r.violations.into(),
            r.violation_rate.into(),
            r.rhs.into(),
        ];
        row.extend(r.lhs_quantiles.iter().map(|&q| Cell::Float(q)));
        t.push(row);
    }
    t
}
