//! Finite-rank regression problems with prescribed capacity and smoothness.
//!
//! Inputs are uniform on `[0, 1]`, the kernel is
//! `K(u, v) = sum_{i <= d} mu_i e_i(u) e_i(v)` with the orthonormal cosine
//! basis `e_i(u) = sqrt(2) cos(pi i u)` and `mu_i = s i^{-1/b}`, and the
//! regression function is `G = sum_i mu_i^r h_i e_i`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{ensure, Error, Result};
use crate::features::{FeatureMap, Omega};
use crate::rng::{rng_from_seed, SeededRng};

/// Default truncation rank.
pub const DEFAULT_RANK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub b: f64,
    pub d_max: usize,
    /// Multiplier `s` on every eigenvalue; `mu_1 = s`.
    #[serde(default = "unit")]
    pub scale: f64,
    /// Constant with `N(lambda) <= c_b lambda^{-b}` for `lambda` in `(0, 1]`.
    pub c_b: f64,
}

fn unit() -> f64 {
    1.0
}

impl SpectrumSpec {
    pub fn new(b: f64, d_max: usize) -> Result<Self> {
        Self::with_scale(b, d_max, 1.0)
    }

    pub fn with_scale(b: f64, d_max: usize, scale: f64) -> Result<Self> {
        ensure!(
            b > 0.0 && b <= 1.0,
            Error::domain(format!("capacity exponent b = {b} must lie in (0, 1]"))
        );
        ensure!(d_max >= 1, Error::domain("truncation rank must be >= 1"));
        ensure!(
            scale > 0.0 && scale.is_finite(),
            Error::domain(format!("eigenvalue scale {scale} must be positive"))
        );
        Ok(Self {
            b,
            d_max,
            scale,
            c_b: capacity_constant(b, d_max, scale),
        })
    }

    /// `mu_i` for `i >= 1`.
    pub fn eigenvalue(&self, i: usize) -> f64 {
        self.scale * (i as f64).powf(-1.0 / self.b)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.d_max).map(|i| self.eigenvalue(i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (1..=self.d_max).map(|i| self.eigenvalue(i)).sum()
    }
}

/// Integral comparison: the summand is decreasing in `i`, so the sum is
/// bounded by the integral over `(0, d)`.
fn capacity_constant(b: f64, d: usize, s: f64) -> f64 {
    if b >= 1.0 {
        s * (d as f64 / s).ln_1p()
    } else {
        s.powf(b) * PI * b / (PI * b).sin()
    }
}

/// `N(lambda) = sum_i mu_i / (mu_i + lambda)`.
pub fn effective_dimension(spec: &SpectrumSpec, lambda: f64) -> Result<f64> {
    effective_dimension_of(&spec.eigenvalues(), lambda)
}

pub fn effective_dimension_of(eigenvalues: &[f64], lambda: f64) -> Result<f64> {
    ensure!(
        lambda > 0.0,
        Error::domain(format!("lambda = {lambda} must be positive"))
    );
    Ok(eigenvalues.iter().map(|&m| m / (m + lambda)).sum())
}

/// How the coefficient direction `h` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetProfile {
    /// Uniform on the sphere of radius `R`.
    Sphere,
    /// Random signs with magnitudes proportional to `i^{-1/2}`, rescaled to
    /// norm `R`. Every scale of the spectrum carries comparable energy, so
    /// the bias decays like `lambda^r` without saturating at the truncation.
    #[default]
    PowerLaw,
}

/// How the finite-rank feature map draws its index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSampling {
    /// `pi` uniform, `phi(u, i) = sqrt(d mu_i) e_i(u)`.
    #[default]
    Uniform,
    /// `pi(i) = mu_i / tr`, `phi(u, i) = sqrt(tr) e_i(u)`.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTarget {
    pub r: f64,
    pub radius: f64,
    pub profile: TargetProfile,
    pub h: Vec<f64>,
    /// `g_i = mu_i^r h_i`.
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    BoundedUniform { half_width: f64 },
}

impl NoiseModel {
    pub fn uniform(half_width: f64) -> Result<Self> {
        ensure!(
            half_width >= 0.0 && half_width.is_finite(),
            Error::domain(format!("noise half-width {half_width} must be >= 0"))
        );
        Ok(NoiseModel::BoundedUniform { half_width })
    }

    pub fn half_width(&self) -> f64 {
        match *self {
            NoiseModel::BoundedUniform { half_width } => half_width,
        }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> f64 {
        let s = self.half_width();
        if s == 0.0 {
            0.0
        } else {
            rng.gen_range(-s..=s)
        }
    }

    /// `(Q, Z)` for outputs `G(u) + eps` with `|G| <= target_sup`.
    pub fn constants(&self, target_sup: f64) -> (f64, f64) {
        let q = target_sup + self.half_width();
        (q, q)
    }

    /// `E|g + eps|^l` in closed form.
    pub fn conditional_moment(&self, g: f64, l: u32) -> f64 {
        let s = self.half_width();
        let g = g.abs();
        if s == 0.0 {
            return g.powi(l as i32);
        }
        let k = l as i32 + 1;
        let upper = (g + s).powi(k);
        let lower = if g >= s {
            -(g - s).powi(k)
        } else {
            (s - g).powi(k)
        };
        (upper + lower) / (k as f64 * 2.0 * s)
    }

    /// Checks `E|v|^l <= l! Z^{l-2} Q^2 / 2` at the worst-case mean.
    pub fn moment_condition_holds(&self, target_sup: f64, l: u32) -> bool {
        let (q, z) = self.constants(target_sup);
        let factorial: f64 = (1..=l).map(f64::from).product();
        let lhs = self.conditional_moment(target_sup, l);
        lhs <= 0.5 * factorial * z.powi(l as i32 - 2) * q * q * (1.0 + 1e-12)
    }
}

/// `e_i(u) = sqrt(2) cos(pi i u)`.
pub fn cosine_basis(i: usize, u: f64) -> f64 {
    2f64.sqrt() * (PI * i as f64 * u).cos()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub spectrum: SpectrumSpec,
    pub target: SourceTarget,
    pub sampling: FeatureSampling,
    pub seed: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProblemOptions {
    pub profile: TargetProfile,
    pub sampling: FeatureSampling,
}

pub fn make_problem(
    spec: &SpectrumSpec,
    r: f64,
    radius: f64,
    seed: u64,
) -> Result<SyntheticProblem> {
    make_problem_with(spec, r, radius, seed, ProblemOptions::default())
}

pub fn make_problem_with(
    spec: &SpectrumSpec,
    r: f64,
    radius: f64,
    seed: u64,
    opts: ProblemOptions,
) -> Result<SyntheticProblem> {
    ensure!(
        r > 0.0,
        Error::domain(format!("source index r = {r} must be positive"))
    );
    ensure!(
        radius > 0.0,
        Error::domain(format!("radius R = {radius} must be positive"))
    );
    let mut warnings = Vec::new();
    if 2.0 * r + spec.b <= 1.0 {
        warnings.push(format!(
            "2r + b = {} <= 1; rate guarantees do not apply",
            2.0 * r + spec.b
        ));
    }
    let d = spec.d_max;
    let mut rng = rng_from_seed(seed);
    let raw: Vec<f64> = match opts.profile {
        TargetProfile::Sphere => (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect(),
        TargetProfile::PowerLaw => (1..=d)
            .map(|i| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                sign / (i as f64).sqrt()
            })
            .collect(),
    };
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    ensure!(
        norm > 0.0,
        Error::Internal("degenerate coefficient draw".into())
    );
    let h: Vec<f64> = raw.iter().map(|x| radius * x / norm).collect();
    let g = h
        .iter()
        .enumerate()
        .map(|(i, hi)| spec.eigenvalue(i + 1).powf(r) * hi)
        .collect();
    Ok(SyntheticProblem {
        spectrum: spec.clone(),
        target: SourceTarget {
            r,
            radius,
            profile: opts.profile,
            h,
            g,
        },
        sampling: opts.sampling,
        seed,
        warnings,
    })
}

impl SyntheticProblem {
    pub fn rank(&self) -> usize {
        self.spectrum.d_max
    }

    /// `e_i(u)` for `i >= 1`.
    pub fn basis(&self, i: usize, u: f64) -> f64 {
        cosine_basis(i, u)
    }

    pub fn target_value(&self, u: f64) -> f64 {
        self.target
            .g
            .iter()
            .enumerate()
            .map(|(i, g)| g * cosine_basis(i + 1, u))
            .sum()
    }

    pub fn kernel(&self, u: f64, v: f64) -> f64 {
        (1..=self.rank())
            .map(|i| self.spectrum.eigenvalue(i) * cosine_basis(i, u) * cosine_basis(i, v))
            .sum()
    }

    /// `||G||_{L^2}`.
    pub fn target_l2(&self) -> f64 {
        self.target.g.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Upper bound on `sup_u |G(u)|`.
    pub fn target_sup(&self) -> f64 {
        2f64.sqrt() * self.target.g.iter().map(|x| x.abs()).sum::<f64>()
    }

    /// RKHS norm `sqrt(sum_i g_i^2 / mu_i)`.
    pub fn rkhs_norm(&self) -> f64 {
        self.target
            .g
            .iter()
            .enumerate()
            .map(|(i, g)| g * g / self.spectrum.eigenvalue(i + 1))
            .sum::<f64>()
            .sqrt()
    }

    /// `sum_{i > d} mu_i^{2r} h_i^2` for the infinite extension of the
    /// coefficient profile (zero for sphere draws, which have no extension).
    pub fn truncation_error(&self) -> f64 {
        if self.target.profile != TargetProfile::PowerLaw {
            return 0.0;
        }
        let d = self.rank();
        let norm_sq: f64 = (1..=d).map(|i| 1.0 / i as f64).sum();
        let c = self.target.radius * self.target.radius / norm_sq;
        let r = self.target.r;
        (d + 1..=64 * d)
            .map(|i| c * self.spectrum.eigenvalue(i).powf(2.0 * r) / i as f64)
            .sum()
    }

    /// Magnitude `c_i` with `phi(u, i) = c_i e_i(u)`.
    pub fn feature_coefficient(&self, i: usize) -> f64 {
        match self.sampling {
            FeatureSampling::Uniform => (self.rank() as f64 * self.spectrum.eigenvalue(i)).sqrt(),
            FeatureSampling::Proportional => self.spectrum.trace().sqrt(),
        }
    }

    /// `c_i^2`, computed without the square root round trip.
    pub fn feature_weight(&self, i: usize) -> f64 {
        match self.sampling {
            FeatureSampling::Uniform => self.rank() as f64 * self.spectrum.eigenvalue(i),
            FeatureSampling::Proportional => self.spectrum.trace(),
        }
    }

    pub fn feature_probabilities(&self) -> Vec<f64> {
        let d = self.rank();
        match self.sampling {
            FeatureSampling::Uniform => vec![1.0 / d as f64; d],
            FeatureSampling::Proportional => {
                let tr = self.spectrum.trace();
                self.spectrum.eigenvalues().iter().map(|m| m / tr).collect()
            }
        }
    }

    pub fn kappa(&self) -> f64 {
        let d = self.rank();
        (2.0 * (1..=d)
            .map(|i| self.feature_coefficient(i).powi(2))
            .fold(0.0, f64::max))
        .sqrt()
    }

    pub fn feature_map(&self) -> Arc<dyn FeatureMap> {
        let probs = self.feature_probabilities();
        Arc::new(FiniteRankMap {
            coefficients: (1..=self.rank())
                .map(|i| self.feature_coefficient(i))
                .collect(),
            index: WeightedIndex::new(&probs).expect("probabilities are positive"),
            probs,
            kappa: self.kappa(),
        })
    }

    /// Draws `n` noisy pairs; inputs are `n x 1`, outputs `n x 1`.
    pub fn sample_dataset(&self, n: usize, noise: &NoiseModel, seed: u64) -> Result<Dataset> {
        sample_dataset(self, n, noise, seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn sample_dataset(
    problem: &SyntheticProblem,
    n: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Dataset> {
    ensure!(n >= 1, Error::domain("sample size must be >= 1"));
    let mut rng = rng_from_seed(seed);
    let mut inputs = DMatrix::zeros(n, 1);
    let mut outputs = DMatrix::zeros(n, 1);
    for j in 0..n {
        let u: f64 = rng.gen();
        inputs[(j, 0)] = u;
        outputs[(j, 0)] = problem.target_value(u) + noise.sample(&mut rng);
    }
    Ok(Dataset::new(inputs, outputs, "synthetic", Some(seed)))
}

/// Midpoint rule on `[0, 1]`; integrates `cos(pi k u)` exactly for
/// `0 < k < 2 points`.
pub fn quadrature_grid(points: usize) -> DMatrix<f64> {
    DMatrix::from_fn(points, 1, |j, _| (j as f64 + 0.5) / points as f64)
}

/// `phi(u, i) = c_i e_i(u)` with the index drawn from the problem's feature
/// distribution.
#[derive(Debug, Clone)]
struct FiniteRankMap {
    coefficients: Vec<f64>,
    probs: Vec<f64>,
    index: WeightedIndex<f64>,
    kappa: f64,
}

impl FeatureMap for FiniteRankMap {
    fn name(&self) -> &str {
        "finite-rank"
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn summands(&self) -> usize {
        1
    }
    fn kappa(&self) -> Option<f64> {
        Some(self.kappa)
    }
    fn sample(&self, rng: &mut SeededRng) -> Omega {
        vec![(self.index.sample(rng) + 1) as f64]
    }
    fn eval_into(&self, u: &[f64], omega: &[f64], out: &mut [f64]) {
        let i = omega[0] as usize;
        out[0] = self.coefficients[i - 1] * cosine_basis(i, u[0]);
    }
    fn support(&self) -> Option<Vec<(Omega, f64)>> {
        Some(
            self.probs
                .iter()
                .enumerate()
                .map(|(i, &p)| (vec![(i + 1) as f64], p))
                .collect(),
        )
    }
}

/// User constants of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Multipliers {
    /// `C` in `lambda_n`.
    pub lambda: f64,
    /// `C~` in `M_n`.
    pub features: f64,
}

impl Default for Multipliers {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            features: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    pub n: usize,
    pub r: f64,
    pub b: f64,
    pub delta: f64,
    pub p: usize,
    pub multipliers: Multipliers,
    pub lambda: f64,
    pub lambda_clamped: bool,
    pub steps: u64,
    pub features: usize,
    pub feature_exponent: f64,
    pub n0: f64,
    pub above_n0: bool,
    /// `-r / (2r + b)`.
    pub rate_exponent: f64,
    /// Power of `log(1/delta)` in the error bound.
    pub error_log_power: f64,
}

/// Exponent `e(r, b)` of `n` in the feature count.
pub fn feature_exponent(r: f64, b: f64) -> f64 {
    let denom = 2.0 * r + b;
    if r < 0.5 {
        1.0 / denom
    } else if r <= 1.0 {
        (1.0 + b * (2.0 * r - 1.0)) / denom
    } else {
        2.0 * r / denom
    }
}

pub fn rate_schedule(
    n: usize,
    r: f64,
    b: f64,
    delta: f64,
    p: usize,
    multipliers: Multipliers,
) -> Result<RateSchedule> {
    ensure!(n >= 1, Error::domain("n must be >= 1"));
    ensure!(
        r > 0.0 && b > 0.0,
        Error::domain("r and b must be positive")
    );
    ensure!(
        delta > 0.0 && delta < 1.0,
        Error::domain(format!("delta = {delta} must lie in (0, 1)"))
    );
    ensure!(p >= 1, Error::domain("p must be >= 1"));
    ensure!(
        multipliers.lambda > 0.0 && multipliers.features > 0.0,
        Error::domain("schedule multipliers must be positive")
    );
    let denom = 2.0 * r + b;
    ensure!(
        denom > 1.0,
        Error::domain(format!("2r + b = {denom} must exceed 1"))
    );
    let nf = n as f64;
    let raw = multipliers.lambda * nf.powf(-1.0 / denom) * (2.0 / delta).ln().powi(3);
    let lambda = raw.min(1.0);
    let e = feature_exponent(r, b);
    let features = (p as f64 * multipliers.features * nf.ln() * nf.powf(e))
        .ceil()
        .max(1.0) as usize;
    let n0 = (denom / (denom - 1.0)).exp();
    Ok(RateSchedule {
        n,
        r,
        b,
        delta,
        p,
        multipliers,
        lambda,
        lambda_clamped: raw > 1.0,
        steps: (1.0 / lambda).round().max(1.0) as u64,
        features,
        feature_exponent: e,
        n0,
        above_n0: nf >= n0,
        rate_exponent: -r / denom,
        error_log_power: 3.0 * r + 1.0,
    })
}

/// Least-squares slope of `log(error)` against `log(n)`.
pub fn fit_rate(ns: &[f64], errors: &[f64]) -> Result<f64> {
    ensure!(
        ns.len() == errors.len(),
        Error::domain("sizes and errors differ in length")
    );
    ensure!(
        ns.len() >= 3,
        Error::domain("rate fit needs at least 3 points")
    );
    ensure!(
        ns.iter().chain(errors).all(|&x| x > 0.0 && x.is_finite()),
        Error::domain("rate fit needs positive finite entries")
    );
    let x = DVector::from_iterator(ns.len(), ns.iter().map(|v| v.ln()));
    let y = DVector::from_iterator(errors.len(), errors.iter().map(|v| v.ln()));
    let (mx, my) = (x.mean(), y.mean());
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    ensure!(
        sxx > 0.0,
        Error::domain("rate fit needs at least two distinct sizes")
    );
    let sxy: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - mx) * (b - my))
        .sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_dimension_examples() {
        assert_eq!(effective_dimension_of(&[1.0], 1.0).unwrap(), 0.5);
        let v = effective_dimension_of(&[1.0, 0.5, 0.25], 0.5).unwrap();
        assert!((v - 1.5).abs() < 1e-15);
        let spec = SpectrumSpec::new(1.0, 32).unwrap();
        assert!(effective_dimension(&spec, 1e3).unwrap() <= spec.trace() / 1e3);
        assert!(effective_dimension(&spec, 0.0).is_err());
    }

    #[test]
    fn capacity_constant_bounds_effective_dimension() {
        for &b in &[0.3, 0.5, 0.8, 1.0] {
            for &s in &[1.0, 0.2] {
                let spec = SpectrumSpec::with_scale(b, 256, s).unwrap();
                let mut prev = f64::INFINITY;
                for k in 0..=60 {
                    let lambda = 10f64.powf(-3.0 + 3.0 * k as f64 / 60.0);
                    let nl = effective_dimension(&spec, lambda).unwrap();
                    assert!(nl <= spec.c_b * lambda.powf(-b), "b={b} lambda={lambda}");
                    assert!(nl < prev);
                    prev = nl;
                }
            }
        }
    }

    #[test]
    fn schedule_examples() {
        let m = Multipliers::default();
        let s = rate_schedule(1000, 0.5, 1.0, 0.1, 1, m).unwrap();
        assert!((s.feature_exponent - 0.5).abs() < 1e-15);
        assert!((s.n0 - 2f64.exp()).abs() < 1e-12);
        let s = rate_schedule(1000, 0.25, 1.0, 0.1, 1, m).unwrap();
        assert!((s.feature_exponent - 2.0 / 3.0).abs() < 1e-15);
        assert!(rate_schedule(10, 0.1, 0.5, 0.1, 1, m).is_err());
    }

    #[test]
    fn fit_rate_examples() {
        let ns = [100.0, 400.0, 1600.0, 6400.0];
        let e: Vec<f64> = ns.iter().map(|n: &f64| 3.0 * n.powf(-0.5)).collect();
        assert!((fit_rate(&ns, &e).unwrap() + 0.5).abs() < 1e-12);
        assert!(fit_rate(&ns, &[2.0; 4]).unwrap().abs() < 1e-15);
        assert!(fit_rate(&ns, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn uniform_moments_match_closed_form() {
        let noise = NoiseModel::uniform(0.5).unwrap();
        assert!((noise.conditional_moment(0.0, 2) - 0.25 / 3.0).abs() < 1e-15);
        // E(1 + eps)^2 = 1 + s^2/3
        assert!((noise.conditional_moment(1.0, 2) - (1.0 + 0.25 / 3.0)).abs() < 1e-14);
        for l in 2..=5 {
            assert!(noise.moment_condition_holds(1.3, l));
        }
    }
}
