//! Neural tangent feature map of a shallow neural operator.
//!
//! For an input function `u` sampled on `n_X` grid points with `d_y`
//! channels, the lifted input at grid point `x_k` is
//! `J(u)(x_k) = (A(u)(x_k), u(x_k), c(x_k))` in `R^{d_tilde}`. A feature
//! draw is an initial hidden weight vector `b` and the summands are
//!
//! * `psi(u)_k = sigma(<b, J(u)(x_k)>)`
//! * `psi'_j(u)_k = sigma'(<b, J(u)(x_k)>) J(u)(x_k)_j` for `j < d_tilde`
//!
//! so `p = 1 + d_tilde`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureMap, FeatureSet, Omega};
use crate::activation::{activation_registry, Activation};
use crate::error::{ensure, Error, Result};
use crate::rng::SeededRng;

/// The lift `A` applied to the input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Lift {
    /// `d_k = 0`
    None,
    /// `A(u)(x) = u(x)`, so `d_k = d_y`
    #[default]
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BiasChannel {
    None,
    Constant { value: f64 },
}

impl Default for BiasChannel {
    fn default() -> Self {
        BiasChannel::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtkConfig {
    pub activation: String,
    #[serde(default)]
    pub lift: Lift,
    #[serde(default)]
    pub bias: BiasChannel,
    /// Number of grid points `n_X`.
    pub grid_points: usize,
    /// Channels `d_y` of the input function.
    pub input_channels: usize,
    /// Include the `psi` summand (output-layer gradient).
    #[serde(default = "yes")]
    pub include_value: bool,
    /// Include the `psi'` summands (hidden-layer gradients).
    #[serde(default = "yes")]
    pub include_gradient: bool,
    /// Multiplier on the `psi'` summands; the output weight magnitude `tau`
    /// when matching a network's tangent features.
    #[serde(default = "one")]
    pub gradient_scale: f64,
    /// Bound on `||u(x_k)||` for every admissible input, if any.
    #[serde(default)]
    pub input_bound: Option<f64>,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

impl NtkConfig {
    pub fn new(activation: &str, grid_points: usize, input_channels: usize) -> Self {
        Self {
            activation: activation.to_owned(),
            lift: Lift::default(),
            bias: BiasChannel::default(),
            grid_points,
            input_channels,
            include_value: true,
            include_gradient: true,
            gradient_scale: 1.0,
            input_bound: None,
        }
    }

    pub fn lift_dim(&self) -> usize {
        match self.lift {
            Lift::None => 0,
            Lift::Identity => self.input_channels,
        }
    }

    pub fn bias_dim(&self) -> usize {
        match self.bias {
            BiasChannel::None => 0,
            BiasChannel::Constant { .. } => 1,
        }
    }

    /// `d_tilde = d_k + d_y + d_b`.
    pub fn feature_dim(&self) -> usize {
        self.lift_dim() + self.input_channels + self.bias_dim()
    }

    /// Writes `J(u)(x_k)` for every grid point, point-major.
    pub fn lifted(&self, u: &[f64], out: &mut [f64]) {
        let dy = self.input_channels;
        let dt = self.feature_dim();
        for k in 0..self.grid_points {
            let uk = &u[k * dy..(k + 1) * dy];
            let row = &mut out[k * dt..(k + 1) * dt];
            let mut c = 0;
            if self.lift == Lift::Identity {
                row[..dy].copy_from_slice(uk);
                c = dy;
            }
            row[c..c + dy].copy_from_slice(uk);
            c += dy;
            if let BiasChannel::Constant { value } = self.bias {
                row[c] = value;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct NtkMap {
    config: NtkConfig,
    activation: Arc<dyn Activation>,
}

/// Builds the tangent feature map for the given architecture.
pub fn ntk_feature_map(config: NtkConfig) -> Result<NtkMap> {
    ensure!(
        config.grid_points >= 1,
        Error::domain("grid must be nonempty")
    );
    ensure!(
        config.input_channels >= 1,
        Error::domain("input functions need at least one channel")
    );
    ensure!(
        config.include_value || config.include_gradient,
        Error::config("tangent map needs at least one summand group")
    );
    let activation: Arc<dyn Activation> = activation_registry()
        .build(&config.activation, &serde_json::Value::Null)
        .map_err(|e| Error::config(format!("activation without derivative: {e}")))?
        .into();
    Ok(NtkMap { config, activation })
}

impl NtkMap {
    pub fn config(&self) -> &NtkConfig {
        &self.config
    }

    pub fn activation(&self) -> &Arc<dyn Activation> {
        &self.activation
    }

    /// Feature set whose samples are the rows of `weights` (`M x d_tilde`).
    pub fn feature_set(self: &Arc<Self>, weights: &DMatrix<f64>) -> Result<FeatureSet> {
        ensure!(
            weights.ncols() == self.config.feature_dim(),
            Error::Consistency(format!(
                "weights have {} columns, map expects d_tilde = {}",
                weights.ncols(),
                self.config.feature_dim()
            ))
        );
        let samples = weights
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        FeatureSet::from_samples(self.clone() as Arc<dyn FeatureMap>, samples)
    }
}

impl FeatureMap for NtkMap {
    fn name(&self) -> &str {
        "ntk"
    }

    fn input_dim(&self) -> usize {
        self.config.grid_points * self.config.input_channels
    }

    fn output_dim(&self) -> usize {
        self.config.grid_points
    }

    fn summands(&self) -> usize {
        usize::from(self.config.include_value)
            + if self.config.include_gradient {
                self.config.feature_dim()
            } else {
                0
            }
    }

    fn output_weight(&self) -> f64 {
        1.0 / self.config.grid_points as f64
    }

    fn kappa(&self) -> Option<f64> {
        let (s, ds) = self.activation.bounds()?;
        let bound = self.config.input_bound?;
        let c = match self.config.bias {
            BiasChannel::None => 0.0,
            BiasChannel::Constant { value } => value,
        };
        let lift = if self.config.lift == Lift::Identity {
            1.0
        } else {
            0.0
        };
        let j_sq = (1.0 + lift) * bound * bound + c * c;
        let mut total = 0.0;
        if self.config.include_value {
            total += s * s;
        }
        if self.config.include_gradient {
            total += self.config.gradient_scale.powi(2) * ds * ds * j_sq;
        }
        Some(total.sqrt())
    }

    fn sample(&self, rng: &mut SeededRng) -> Omega {
        (0..self.config.feature_dim())
            .map(|_| StandardNormal.sample(rng))
            .collect()
    }

    fn eval_into(&self, u: &[f64], omega: &[f64], out: &mut [f64]) {
        let cfg = &self.config;
        let nx = cfg.grid_points;
        let dt = cfg.feature_dim();
        let mut lifted = vec![0.0; nx * dt];
        cfg.lifted(u, &mut lifted);
        let offset = usize::from(cfg.include_value);
        for k in 0..nx {
            let jk = &lifted[k * dt..(k + 1) * dt];
            let z: f64 = jk.iter().zip(omega).map(|(a, b)| a * b).sum();
            if cfg.include_value {
                out[k] = self.activation.value(z);
            }
            if cfg.include_gradient {
                let ds = cfg.gradient_scale * self.activation.derivative(z);
                for (j, &x) in jk.iter().enumerate() {
                    out[(offset + j) * nx + k] = ds * x;
                }
            }
        }
    }
}
