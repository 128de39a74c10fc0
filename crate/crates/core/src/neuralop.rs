//! Shallow neural operators trained by full-batch gradient descent, their
//! tangent kernel at initialization, and the comparison with kernel gradient
//! descent on the frozen tangent features.
//!
//! `G_theta(u)(x_k) = (1/sqrt(M)) sum_m a_m sigma(<b_m, J(u)(x_k)>)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{ensure, Error, Result};
use crate::estimator::fit_gd;
use crate::features::{
    build_design_scaled, ntk_feature_map, FeatureSet, KappaScale, NtkConfig, NtkMap,
};
use crate::rng::{derive_seed, rng_from_seed};

/// Which parameter groups gradient descent updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Trainable {
    #[default]
    All,
    /// Output weights `a` only.
    OutputOnly,
    /// Hidden weights `B` only; the network is then linear in its
    /// parameters whenever `sigma` is linear.
    InputOnly,
}

impl Trainable {
    fn output(self) -> bool {
        matches!(self, Trainable::All | Trainable::OutputOnly)
    }

    fn input(self) -> bool {
        matches!(self, Trainable::All | Trainable::InputOnly)
    }
}

#[derive(Debug, Clone)]
pub struct ShallowNO {
    arch: NtkConfig,
    activation: Arc<dyn Activation>,
    tau: f64,
    a: DVector<f64>,
    /// `M x d_tilde`, row `m` is `b_m`.
    b: DMatrix<f64>,
}

/// Paired initialization: `a_m = tau`, `a_{m + M/2} = -tau` and
/// `b_{m + M/2} = b_m` with the first half standard normal, so the network
/// is identically zero.
pub fn init_symmetric(arch: &NtkConfig, width: usize, tau: f64, seed: u64) -> Result<ShallowNO> {
    ensure!(
        width >= 2 && width % 2 == 0,
        Error::domain(format!(
            "symmetric initialization needs an even width, got {width}"
        ))
    );
    let map = ntk_feature_map(arch.clone())?;
    let dt = arch.feature_dim();
    let half = width / 2;
    let mut rng = rng_from_seed(seed);
    let mut b = DMatrix::zeros(width, dt);
    for m in 0..half {
        for j in 0..dt {
            let x: f64 = rng.sample(StandardNormal);
            b[(m, j)] = x;
            b[(m + half, j)] = x;
        }
    }
    let a = DVector::from_fn(width, |m, _| if m < half { tau } else { -tau });
    Ok(ShallowNO {
        arch: arch.clone(),
        activation: map.activation().clone(),
        tau,
        a,
        b,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
}

impl ShallowNO {
    /// Builds a network from explicit weights.
    pub fn from_weights(
        arch: &NtkConfig,
        tau: f64,
        a: DVector<f64>,
        b: DMatrix<f64>,
    ) -> Result<Self> {
        ensure!(
            a.len() == b.nrows() && b.ncols() == arch.feature_dim(),
            Error::Consistency(format!(
                "weights {}x{} with {} output weights do not match d_tilde = {}",
                b.nrows(),
                b.ncols(),
                a.len(),
                arch.feature_dim()
            ))
        );
        let map = ntk_feature_map(arch.clone())?;
        Ok(Self {
            arch: arch.clone(),
            activation: map.activation().clone(),
            tau,
            a,
            b,
        })
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn arch(&self) -> &NtkConfig {
        &self.arch
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut DVector<f64> {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.b
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        let want = self.arch.grid_points * self.arch.input_channels;
        ensure!(
            u.len() == want,
            Error::domain(format!(
                "input has {} grid values, network expects {want}",
                u.len()
            ))
        );
        Ok(())
    }

    /// `J(u)` as an `n_X x d_tilde` matrix.
    fn lifted(&self, u: &[f64]) -> DMatrix<f64> {
        let dt = self.arch.feature_dim();
        let mut buf = vec![0.0; self.arch.grid_points * dt];
        self.arch.lifted(u, &mut buf);
        DMatrix::from_row_slice(self.arch.grid_points, dt, &buf)
    }

    /// Pre-activations `<b_m, J(u)(x_k)>` as an `M x n_X` matrix.
    fn preactivations(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        &self.b * j.transpose()
    }

    pub fn forward(&self, u: &[f64]) -> Result<DVector<f64>> {
        self.check_input(u)?;
        let z = self.preactivations(&self.lifted(u));
        let scale = 1.0 / (self.width() as f64).sqrt();
        let s = z.map(|x| self.activation.value(x));
        Ok(s.tr_mul(&self.a) * scale)
    }

    /// `(1/n) sum_i (1/2) ||G(u_i) - v_i||^2_{n_X}`; rows of `inputs` are
    /// grid-encoded functions and rows of `outputs` their targets.
    pub fn loss(&self, inputs: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<f64> {
        self.check_data(inputs, outputs)?;
        let nx = self.arch.grid_points as f64;
        let mut acc = 0.0;
        for i in 0..inputs.nrows() {
            let u: Vec<f64> = inputs.row(i).iter().copied().collect();
            let r = self.forward(&u)? - outputs.row(i).transpose();
            acc += 0.5 * r.norm_squared() / nx;
        }
        Ok(acc / inputs.nrows() as f64)
    }

    fn check_data(&self, inputs: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<()> {
        ensure!(inputs.nrows() >= 1, Error::domain("dataset is empty"));
        ensure!(
            inputs.nrows() == outputs.nrows() && outputs.ncols() == self.arch.grid_points,
            Error::domain(format!(
                "outputs must be {} x n_X = {} x {}",
                inputs.nrows(),
                inputs.nrows(),
                self.arch.grid_points
            ))
        );
        Ok(())
    }

    /// Gradient of [`loss`](Self::loss) with respect to `a` and `B`.
    pub fn gradients(&self, inputs: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<Gradients> {
        self.check_data(inputs, outputs)?;
        let (mw, dt) = (self.width(), self.arch.feature_dim());
        let nx = self.arch.grid_points as f64;
        let n = inputs.nrows() as f64;
        let scale = 1.0 / (mw as f64).sqrt();
        let mut ga = DVector::zeros(mw);
        let mut gb = DMatrix::zeros(mw, dt);
        for i in 0..inputs.nrows() {
            let u: Vec<f64> = inputs.row(i).iter().copied().collect();
            self.check_input(&u)?;
            let j = self.lifted(&u);
            let z = self.preactivations(&j);
            let s = z.map(|x| self.activation.value(x));
            let ds = z.map(|x| self.activation.derivative(x));
            let g = s.tr_mul(&self.a) * scale;
            // residual weighted by the grid inner product and the sample mean
            let r = (g - outputs.row(i).transpose()) / (nx * n);
            ga += &s * &r * scale;
            // dL/db_m = scale a_m sum_k r_k sigma'(z_mk) J_k
            let mut w = ds;
            for (k, rk) in r.iter().enumerate() {
                w.column_mut(k).scale_mut(*rk);
            }
            let mut contrib = w * &j;
            for m in 0..mw {
                contrib.row_mut(m).scale_mut(self.a[m] * scale);
            }
            gb += contrib;
        }
        Ok(Gradients { a: ga, b: gb })
    }

    /// `sqrt(||a - a0||^2 + ||B - B0||_F^2)`.
    pub fn distance(&self, other: &ShallowNO) -> f64 {
        ((&self.a - &other.a).norm_squared() + (&self.b - &other.b).norm_squared()).sqrt()
    }

    /// Tangent feature map of this architecture, scaled to match the
    /// trainable groups, and the feature set given by the current hidden
    /// weights.
    pub fn tangent_features(&self, groups: Trainable) -> Result<(Arc<NtkMap>, FeatureSet)> {
        let mut cfg = self.arch.clone();
        cfg.include_value = groups.output();
        cfg.include_gradient = groups.input();
        cfg.gradient_scale = self.tau;
        let map = Arc::new(ntk_feature_map(cfg)?);
        let fs = map.feature_set(&self.b)?;
        Ok((map, fs))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SavedNO::from(self))?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SavedNO {
    arch: NtkConfig,
    width: usize,
    tau: f64,
    a: Vec<f64>,
    /// Row-major `M x d_tilde`.
    b: Vec<f64>,
}

impl From<&ShallowNO> for SavedNO {
    fn from(no: &ShallowNO) -> Self {
        Self {
            arch: no.arch.clone(),
            width: no.width(),
            tau: no.tau,
            a: no.a.iter().copied().collect(),
            b: no.b.transpose().iter().copied().collect(),
        }
    }
}

/// Reads a network written by [`ShallowNO::to_json`].
pub fn no_from_json(s: &str) -> Result<ShallowNO> {
    let saved: SavedNO = serde_json::from_str(s)?;
    let dt = saved.arch.feature_dim();
    ensure!(
        saved.b.len() == saved.width * dt && saved.a.len() == saved.width,
        Error::Consistency("saved weights do not match the recorded width".into())
    );
    ShallowNO::from_weights(
        &saved.arch,
        saved.tau,
        DVector::from_vec(saved.a),
        DMatrix::from_row_slice(saved.width, dt, &saved.b),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Empirical risk before each step and after the last (`T + 1` values).
    pub risk: Vec<f64>,
    /// `||theta_t - theta_0||` at the same times.
    pub drift: Vec<f64>,
    pub step_size: f64,
    pub steps: u64,
    pub groups: Trainable,
    #[serde(skip)]
    pub network: Option<ShallowNO>,
}

/// Full-batch gradient descent `theta <- theta - alpha grad L(theta)`.
pub fn train_gd(
    no: &ShallowNO,
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    alpha: f64,
    steps: u64,
    groups: Trainable,
) -> Result<TrainRecord> {
    ensure!(
        alpha > 0.0 && alpha.is_finite(),
        Error::domain(format!("step size {alpha} must be positive"))
    );
    let init = no.clone();
    let mut net = no.clone();
    let mut risk = vec![net.loss(inputs, outputs)?];
    let mut drift = vec![0.0];
    for _ in 0..steps {
        let g = net.gradients(inputs, outputs)?;
        if groups.output() {
            net.a.axpy(-alpha, &g.a, 1.0);
        }
        if groups.input() {
            net.b -= g.b * alpha;
        }
        let l = net.loss(inputs, outputs)?;
        ensure!(
            l.is_finite(),
            Error::Internal("training diverged to a non-finite risk".into())
        );
        risk.push(l);
        drift.push(net.distance(&init));
    }
    Ok(TrainRecord {
        risk,
        drift,
        step_size: alpha,
        steps,
        groups,
        network: Some(net),
    })
}

/// `(1/M) sum_m psi_m(u) psi_m(v)^T + (1/M) sum_{m,j} psi'_{m,j}(u) psi'_{m,j}(v)^T`
/// at the network's current hidden weights.
pub fn empirical_ntk(no: &ShallowNO, u: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
    no.check_input(u)?;
    no.check_input(v)?;
    let (ju, jv) = (no.lifted(u), no.lifted(v));
    let (zu, zv) = (no.preactivations(&ju), no.preactivations(&jv));
    let act = &no.activation;
    let su = zu.map(|x| act.value(x));
    let sv = zv.map(|x| act.value(x));
    let du = zu.map(|x| act.derivative(x));
    let dv = zv.map(|x| act.derivative(x));
    // sum_j J_u(k)_j J_v(l)_j
    let jj = &ju * jv.transpose();
    let value_part = su.tr_mul(&sv);
    let grad_part = du.tr_mul(&dv).component_mul(&jj);
    Ok((value_part + grad_part) / no.width() as f64)
}

/// Grid-encoded operator learning task: inputs are random sine series on a
/// midpoint grid of `[0, 1]` and outputs their antiderivatives
/// `x -> int_0^x u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorTask {
    pub grid_points: usize,
    pub modes: usize,
    pub amplitude: f64,
}

impl Default for OperatorTask {
    fn default() -> Self {
        Self {
            grid_points: 16,
            modes: 4,
            amplitude: 1.0,
        }
    }
}

impl OperatorTask {
    pub fn grid(&self) -> Vec<f64> {
        (0..self.grid_points)
            .map(|k| (k as f64 + 0.5) / self.grid_points as f64)
            .collect()
    }

    /// `n` input functions and their images, each `n x n_X`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        ensure!(
            n >= 1 && self.grid_points >= 1 && self.modes >= 1,
            Error::domain("empty task")
        );
        let mut rng = rng_from_seed(seed);
        let grid = self.grid();
        let pi = std::f64::consts::PI;
        let norm = (1..=self.modes).map(|k| 1.0 / k as f64).sum::<f64>();
        let mut u = DMatrix::zeros(n, self.grid_points);
        let mut v = DMatrix::zeros(n, self.grid_points);
        for i in 0..n {
            let c: Vec<f64> = (0..self.modes)
                .map(|_| self.amplitude * rng.gen_range(-1.0..1.0) / norm)
                .collect();
            for (k, &x) in grid.iter().enumerate() {
                let (mut uu, mut vv) = (0.0, 0.0);
                for (q, ck) in c.iter().enumerate() {
                    let w = (q + 1) as f64;
                    uu += ck * (pi * w * x).sin() / w;
                    vv += ck * (1.0 - (pi * w * x).cos()) / (pi * w * w);
                }
                u[(i, k)] = uu;
                v[(i, k)] = vv;
            }
        }
        Ok((u, v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub arch: NtkConfig,
    pub tau: f64,
    pub step_size: f64,
    pub steps: u64,
    #[serde(default)]
    pub groups: Trainable,
    /// Step size of the kernel path; must equal `step_size` when given.
    #[serde(default)]
    pub kernel_step_size: Option<f64>,
    /// Iterations of the kernel path; must equal `steps` when given.
    #[serde(default)]
    pub kernel_steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthDiscrepancy {
    pub width: usize,
    pub per_seed: Vec<f64>,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains the network and the frozen tangent-feature model with the same
/// step size and iteration count and returns the empirical `L^2` distance
/// between their predictions on `test_inputs`.
pub fn discrepancy_at(
    cfg: &CompareConfig,
    width: usize,
    seed: u64,
    train: (&DMatrix<f64>, &DMatrix<f64>),
    test_inputs: &DMatrix<f64>,
) -> Result<f64> {
    let no = init_symmetric(&cfg.arch, width, cfg.tau, seed)?;
    let record = train_gd(&no, train.0, train.1, cfg.step_size, cfg.steps, cfg.groups)?;
    let trained = record.network.expect("train_gd returns the network");

    let (_, fs) = no.tangent_features(cfg.groups)?;
    let design = build_design_scaled(&fs, train.0, KappaScale::Empirical);
    let nx = cfg.arch.grid_points as f64;
    let kernel_pred = match design {
        Ok(design) => {
            // raw-parameter GD with step alpha equals normalized GD with
            // step alpha kappa_s^2
            let alpha_eff = cfg.step_size * design.kappa_scale().powi(2);
            ensure!(
                alpha_eff <= 1.0,
                Error::config(format!(
                    "step size {} exceeds 1/kappa^2 = {}",
                    cfg.step_size,
                    1.0 / design.kappa_scale().powi(2)
                ))
            );
            let v = DVector::from_iterator(
                train.1.len(),
                (0..train.1.nrows())
                    .flat_map(|i| train.1.row(i).iter().copied().collect::<Vec<_>>()),
            );
            let model = fit_gd(&design, &v, alpha_eff, cfg.steps)?;
            Some(model)
        }
        // all tangent features vanish on the data: the kernel path stays at 0
        Err(Error::Domain(_)) => None,
        Err(e) => return Err(e),
    };

    let mut acc = 0.0;
    for i in 0..test_inputs.nrows() {
        let u: Vec<f64> = test_inputs.row(i).iter().copied().collect();
        let g = trained.forward(&u)?;
        let f = match &kernel_pred {
            Some(m) => m.predict(&u)?,
            None => DVector::zeros(g.len()),
        };
        acc += (g - f).norm_squared() / nx;
    }
    Ok((acc / test_inputs.nrows() as f64).sqrt())
}

/// Width sweep of [`discrepancy_at`], `seeds` independent initializations
/// per width.
pub fn compare_to_kernel_gd(
    cfg: &CompareConfig,
    widths: &[usize],
    seeds: u64,
    base_seed: u64,
    train: (&DMatrix<f64>, &DMatrix<f64>),
    test_inputs: &DMatrix<f64>,
) -> Result<Vec<WidthDiscrepancy>> {
    if let Some(a) = cfg.kernel_step_size {
        ensure!(
            a == cfg.step_size,
            Error::config(format!(
                "kernel step size {a} differs from network step size {}",
                cfg.step_size
            ))
        );
    }
    if let Some(t) = cfg.kernel_steps {
        ensure!(
            t == cfg.steps,
            Error::config(format!(
                "kernel iterations {t} differ from network iterations {}",
                cfg.steps
            ))
        );
    }
    ensure!(
        !widths.is_empty() && seeds >= 1,
        Error::config("empty width grid or no seeds")
    );
    let cells: Vec<(usize, u64)> = widths
        .iter()
        .flat_map(|&w| (0..seeds).map(move |s| (w, s)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(w, s)| {
            discrepancy_at(
                cfg,
                w,
                derive_seed(base_seed, &[w as u64, s]),
                train,
                test_inputs,
            )
        })
        .collect::<Result<_>>()?;
    Ok(widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let per_seed = values[i * seeds as usize..(i + 1) * seeds as usize].to_vec();
            WidthDiscrepancy {
                width: w,
                median: median(&per_seed),
                per_seed,
            }
        })
        .collect())
}
