//! Spectral regularization filters.
//!
//! A filter is a family of scalar functions `phi_lambda(t)` on `(0, 1]`,
//! applied to the spectrum of a symmetric positive semidefinite operator.
//! Every filter obeys three uniform bounds with constants `(D, E, c0)`:
//!
//! * `|t phi_lambda(t)| <= D`
//! * `|phi_lambda(t)| <= E / lambda`
//! * `|r_lambda(t)| <= c0`, with residual `r_lambda(t) = 1 - t phi_lambda(t)`
//!
//! and has a qualification `nu`: for `q` in `[0, nu]`,
//! `sup_t |r_lambda(t)| t^q <= c_q lambda^q`.
//!
//! Operator spectra are expected in `[0, 1]`; the design-matrix builder
//! rescales features to honour this.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ensure, Error, Result};
use crate::linalg::EigenSystem;
use crate::registry::{param_f64, Registry};

/// Negative eigenvalues down to this value are treated as round-off.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-10;
/// Eigenvalues up to `1 + UPPER_EIGEN_TOL` are clamped to 1.
pub const UPPER_EIGEN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConstants {
    pub d: f64,
    pub e: f64,
    pub c0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Qualification {
    Finite(f64),
    Unbounded,
}

impl Qualification {
    pub fn admits(&self, q: f64) -> bool {
        match *self {
            Qualification::Finite(nu) => (0.0..=nu).contains(&q),
            Qualification::Unbounded => q >= 0.0,
        }
    }

    pub fn at_least(&self, x: f64) -> bool {
        match *self {
            Qualification::Finite(nu) => nu >= x,
            Qualification::Unbounded => true,
        }
    }
}

/// A family of regularization functions `phi_lambda`.
///
/// Implementors provide the raw formulas; the free functions
/// [`filter_value`], [`residual_value`] and [`apply_filter`] perform the
/// domain checks.
pub trait SpectralFilter: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Rejects regularization parameters the filter cannot realize.
    fn check_lambda(&self, lambda: f64) -> Result<()> {
        ensure!(
            lambda > 0.0 && lambda <= 1.0,
            Error::domain(format!("lambda = {lambda} is outside (0, 1]"))
        );
        Ok(())
    }

    /// `phi_lambda(t)` for `t` in `[0, 1]`; at `t = 0` the right limit.
    fn raw_value(&self, lambda: f64, t: f64) -> f64;

    fn raw_residual(&self, lambda: f64, t: f64) -> f64 {
        1.0 - t * self.raw_value(lambda, t)
    }

    fn constants(&self) -> FilterConstants;

    fn qualification(&self) -> Qualification;

    /// Constant `c_q` of the qualification inequality.
    fn c_q(&self, q: f64) -> f64;

    /// A grid of `n` admissible regularization parameters in `(0, 1]`.
    fn lambda_grid(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|k| k as f64 / n as f64).collect()
    }

    fn spec(&self) -> Option<FilterSpec> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Tikhonov;

impl SpectralFilter for Tikhonov {
    fn name(&self) -> &str {
        "tikhonov"
    }

    fn raw_value(&self, lambda: f64, t: f64) -> f64 {
        1.0 / (t + lambda)
    }

    fn raw_residual(&self, lambda: f64, t: f64) -> f64 {
        lambda / (t + lambda)
    }

    fn constants(&self) -> FilterConstants {
        FilterConstants {
            d: 1.0,
            e: 1.0,
            c0: 1.0,
        }
    }

    fn qualification(&self) -> Qualification {
        Qualification::Finite(1.0)
    }

    fn c_q(&self, _q: f64) -> f64 {
        1.0
    }

    fn spec(&self) -> Option<FilterSpec> {
        Some(FilterSpec::Tikhonov)
    }
}

/// Gradient descent with step `alpha`, stopped after `T` steps; the
/// regularization parameter is `lambda = 1 / (alpha T)`.
#[derive(Debug, Clone, Copy)]
pub struct Landweber {
    step_size: f64,
}

impl Landweber {
    pub fn new(step_size: f64) -> Result<Self> {
        ensure!(
            step_size > 0.0 && step_size <= 1.0,
            Error::domain(format!("landweber step size {step_size} is outside (0, 1]"))
        );
        Ok(Self { step_size })
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    /// Number of iterations encoded by `lambda`.
    pub fn steps(&self, lambda: f64) -> Result<u64> {
        let x = 1.0 / (self.step_size * lambda);
        let t = x.round();
        ensure!(
            (x - t).abs() <= 1e-9 * x.max(1.0) && t >= 1.0,
            Error::Schedule(format!(
                "1/(alpha*lambda) = {x} is not an integer iteration count (alpha = {}, lambda = {lambda})",
                self.step_size
            ))
        );
        Ok(t as u64)
    }

    pub fn lambda_for_steps(&self, steps: u64) -> f64 {
        1.0 / (self.step_size * steps as f64)
    }

    fn log_contraction(&self, lambda: f64, t: f64) -> f64 {
        let steps = (1.0 / (self.step_size * lambda)).round();
        steps * (-self.step_size * t).ln_1p()
    }
}

impl SpectralFilter for Landweber {
    fn name(&self) -> &str {
        "landweber"
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        ensure!(
            lambda > 0.0 && lambda <= 1.0,
            Error::domain(format!("lambda = {lambda} is outside (0, 1]"))
        );
        self.steps(lambda).map(|_| ())
    }

    // alpha * sum_{i<T} (1 - alpha t)^i, written as (1 - (1 - alpha t)^T) / t
    fn raw_value(&self, lambda: f64, t: f64) -> f64 {
        if t == 0.0 {
            return (1.0 / (self.step_size * lambda)).round() * self.step_size;
        }
        -self.log_contraction(lambda, t).exp_m1() / t
    }

    fn raw_residual(&self, lambda: f64, t: f64) -> f64 {
        self.log_contraction(lambda, t).exp()
    }

    fn constants(&self) -> FilterConstants {
        FilterConstants {
            d: 1.0,
            e: 1.0,
            c0: 1.0,
        }
    }

    fn qualification(&self) -> Qualification {
        Qualification::Unbounded
    }

    fn c_q(&self, q: f64) -> f64 {
        if q == 0.0 {
            1.0
        } else {
            (q / self.step_size).powf(q)
        }
    }

    fn lambda_grid(&self, n: usize) -> Vec<f64> {
        let first = (1.0 / self.step_size).ceil() as u64;
        (first..first + n as u64)
            .map(|t| self.lambda_for_steps(t))
            .collect()
    }

    fn spec(&self) -> Option<FilterSpec> {
        Some(FilterSpec::Landweber {
            step_size: self.step_size,
        })
    }
}

/// Spectral cut-off: exact inversion above `lambda`, zero below.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cutoff;

impl SpectralFilter for Cutoff {
    fn name(&self) -> &str {
        "cutoff"
    }

    fn raw_value(&self, lambda: f64, t: f64) -> f64 {
        if t >= lambda {
            1.0 / t
        } else {
            0.0
        }
    }

    fn raw_residual(&self, lambda: f64, t: f64) -> f64 {
        if t >= lambda {
            0.0
        } else {
            1.0
        }
    }

    fn constants(&self) -> FilterConstants {
        FilterConstants {
            d: 1.0,
            e: 1.0,
            c0: 1.0,
        }
    }

    fn qualification(&self) -> Qualification {
        Qualification::Unbounded
    }

    fn c_q(&self, _q: f64) -> f64 {
        1.0
    }

    fn spec(&self) -> Option<FilterSpec> {
        Some(FilterSpec::Cutoff)
    }
}

/// Serializable filter selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FilterSpec {
    Tikhonov,
    Landweber { step_size: f64 },
    Cutoff,
}

impl FilterSpec {
    pub fn build(&self) -> Result<Box<dyn SpectralFilter>> {
        Ok(match *self {
            FilterSpec::Tikhonov => Box::new(Tikhonov),
            FilterSpec::Landweber { step_size } => Box::new(Landweber::new(step_size)?),
            FilterSpec::Cutoff => Box::new(Cutoff),
        })
    }
}

/// The built-in filters, keyed by name.
pub fn filter_registry() -> &'static Registry<dyn SpectralFilter> {
    static REGISTRY: OnceLock<Registry<dyn SpectralFilter>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn SpectralFilter> = Registry::new("filter");
        reg.register("tikhonov", |_| Ok(Box::new(Tikhonov)));
        reg.register("landweber", |p: &Value| {
            let alpha = param_f64(p, "step_size")?.unwrap_or(1.0);
            Ok(Box::new(Landweber::new(alpha)?))
        });
        reg.register("cutoff", |_| Ok(Box::new(Cutoff)));
        reg
    })
}

fn check_t(t: f64) -> Result<()> {
    ensure!(
        t > 0.0 && t <= 1.0,
        Error::domain(format!("t = {t} is outside (0, 1]"))
    );
    Ok(())
}

/// `phi_lambda(t)`.
pub fn filter_value(filter: &dyn SpectralFilter, lambda: f64, t: f64) -> Result<f64> {
    filter.check_lambda(lambda)?;
    check_t(t)?;
    Ok(filter.raw_value(lambda, t))
}

/// `r_lambda(t) = 1 - t phi_lambda(t)`.
pub fn residual_value(filter: &dyn SpectralFilter, lambda: f64, t: f64) -> Result<f64> {
    filter.check_lambda(lambda)?;
    check_t(t)?;
    Ok(filter.raw_residual(lambda, t))
}

fn clamp_eigenvalue(mu: f64) -> Result<f64> {
    ensure!(
        mu >= -NEGATIVE_EIGEN_TOL,
        Error::domain(format!("eigenvalue {mu} is negative beyond round-off"))
    );
    ensure!(
        mu <= 1.0 + UPPER_EIGEN_TOL,
        Error::domain(format!(
            "eigenvalue {mu} exceeds 1; rescale the operator so its spectrum lies in [0, 1]"
        ))
    );
    Ok(mu.clamp(0.0, 1.0))
}

/// `phi_lambda(A) rhs` for an already decomposed `A`, one column per
/// right-hand side.
pub fn apply_filter_eigen(
    filter: &dyn SpectralFilter,
    lambda: f64,
    eig: &EigenSystem,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    filter.check_lambda(lambda)?;
    ensure!(
        rhs.nrows() == eig.dim(),
        Error::domain(format!(
            "right-hand side has {} rows, operator has dimension {}",
            rhs.nrows(),
            eig.dim()
        ))
    );
    let weights = eig
        .eigenvalues
        .iter()
        .map(|&mu| clamp_eigenvalue(mu).map(|t| filter.raw_value(lambda, t)))
        .collect::<Result<Vec<_>>>()?;
    let mut k = 0;
    Ok(eig.apply(rhs, |_| {
        let w = weights[k];
        k += 1;
        w
    }))
}

/// `V diag(phi_lambda(mu_i)) V^T b` for a symmetric PSD `A` with spectrum in
/// `[0, 1]`.
pub fn apply_filter(
    filter: &dyn SpectralFilter,
    lambda: f64,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensure!(
        a.nrows() == b.len(),
        Error::domain(format!(
            "matrix dimension {} does not match vector length {}",
            a.nrows(),
            b.len()
        ))
    );
    filter.check_lambda(lambda)?;
    let eig = EigenSystem::new(a)?;
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let out = apply_filter_eigen(filter, lambda, &eig, &rhs)?;
    Ok(out.column(0).into_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FilterFlag {
    /// `sup |t phi| > D`
    D,
    /// `sup |phi| lambda > E`
    E,
    /// `sup |r| > c0`
    C0,
    /// qualification inequality violated at this `q`
    Cq(f64),
}

impl fmt::Display for FilterFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterFlag::D => write!(f, "D"),
            FilterFlag::E => write!(f, "E"),
            FilterFlag::C0 => write!(f, "c0"),
            FilterFlag::Cq(q) => write!(f, "c_q(q={q})"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaReport {
    pub lambda: f64,
    pub sup_t_phi: f64,
    pub sup_phi_times_lambda: f64,
    pub sup_residual: f64,
    /// `max_q sup_t |r(t)| t^q / lambda^q`
    pub sup_qualification: f64,
    /// `max_q sup_t |r(t)| t^q / (c_q lambda^q)`; above 1 means a violation.
    pub worst_c_q_ratio: f64,
    pub flags: Vec<FilterFlag>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    pub filter: String,
    pub constants: FilterConstants,
    pub per_lambda: Vec<LambdaReport>,
}

impl FilterReport {
    pub fn flagged(&self) -> bool {
        self.per_lambda.iter().any(|r| !r.flags.is_empty())
    }

    /// Distinct flags raised anywhere in the report.
    pub fn flags(&self) -> Vec<FilterFlag> {
        let mut out: Vec<FilterFlag> = Vec::new();
        for f in self.per_lambda.iter().flat_map(|r| r.flags.iter()) {
            if !out.contains(f) {
                out.push(f.clone());
            }
        }
        out
    }
}

fn exceeds(value: f64, bound: f64) -> bool {
    value > bound * (1.0 + 1e-12) + 1e-15
}

/// Grid suprema of the filter axioms and the qualification inequality.
pub fn verify_filter_constants(
    filter: &dyn SpectralFilter,
    t_grid: &[f64],
    lambda_grid: &[f64],
    q_grid: &[f64],
) -> Result<FilterReport> {
    ensure!(
        !t_grid.is_empty() && !lambda_grid.is_empty() && !q_grid.is_empty(),
        Error::domain("verification grids must be nonempty")
    );
    for &x in t_grid.iter().chain(lambda_grid) {
        ensure!(
            x > 0.0 && x <= 1.0,
            Error::domain(format!("grid element {x} is outside (0, 1]"))
        );
    }
    let qual = filter.qualification();
    for &q in q_grid {
        ensure!(
            qual.admits(q),
            Error::domain(format!("q = {q} is outside [0, nu] for {}", filter.name()))
        );
    }
    let constants = filter.constants();
    let mut per_lambda = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        filter.check_lambda(lambda)?;
        let mut sup_t_phi: f64 = 0.0;
        let mut sup_phi: f64 = 0.0;
        let mut sup_r: f64 = 0.0;
        let mut sup_rq = vec![0.0f64; q_grid.len()];
        for &t in t_grid {
            let phi = filter.raw_value(lambda, t);
            let r = filter.raw_residual(lambda, t);
            sup_t_phi = sup_t_phi.max((t * phi).abs());
            sup_phi = sup_phi.max(phi.abs());
            sup_r = sup_r.max(r.abs());
            for (s, &q) in sup_rq.iter_mut().zip(q_grid) {
                *s = s.max(r.abs() * t.powf(q));
            }
        }
        let mut flags = Vec::new();
        if exceeds(sup_t_phi, constants.d) {
            flags.push(FilterFlag::D);
        }
        if exceeds(sup_phi * lambda, constants.e) {
            flags.push(FilterFlag::E);
        }
        if exceeds(sup_r, constants.c0) {
            flags.push(FilterFlag::C0);
        }
        let mut sup_qualification: f64 = 0.0;
        let mut worst_c_q_ratio: f64 = 0.0;
        for (&s, &q) in sup_rq.iter().zip(q_grid) {
            let scaled = s / lambda.powf(q);
            sup_qualification = sup_qualification.max(scaled);
            let c_q = filter.c_q(q);
            worst_c_q_ratio = worst_c_q_ratio.max(scaled / c_q);
            if exceeds(scaled, c_q) {
                flags.push(FilterFlag::Cq(q));
            }
        }
        per_lambda.push(LambdaReport {
            lambda,
            sup_t_phi,
            sup_phi_times_lambda: sup_phi * lambda,
            sup_residual: sup_r,
            sup_qualification,
            worst_c_q_ratio,
            flags,
        });
    }
    Ok(FilterReport {
        filter: filter.name().to_owned(),
        constants,
        per_lambda,
    })
}

/// `k/n` for `k = 1..=n`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / n as f64).collect()
}

/// Evenly spaced `q` values on `[0, q_max]`.
pub fn q_grid(n: usize, q_max: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|k| q_max * k as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = &g * g.transpose();
        let norm = crate::linalg::spectral_norm(&a);
        a / norm
    }

    fn gd_iterations(a: &DMatrix<f64>, b: &DVector<f64>, alpha: f64, steps: usize) -> DVector<f64> {
        let mut theta = DVector::zeros(b.len());
        for _ in 0..steps {
            theta = &theta - alpha * (a * &theta - b);
        }
        theta
    }

    #[test]
    fn tikhonov_values() {
        assert_eq!(filter_value(&Tikhonov, 0.25, 0.75).unwrap(), 1.0);
        assert_eq!(residual_value(&Tikhonov, 0.25, 0.75).unwrap(), 0.25);
    }

    #[test]
    fn landweber_values() {
        let lw = Landweber::new(1.0).unwrap();
        for t in [0.1, 0.5, 1.0] {
            assert_eq!(filter_value(&lw, 1.0, t).unwrap(), 1.0);
        }
        assert!((residual_value(&lw, 0.5, 0.5).unwrap() - 0.25).abs() < 1e-15);
        // lambda = 0.3 is not 1/T for an integer T
        assert!(matches!(
            filter_value(&lw, 0.3, 0.5),
            Err(Error::Schedule(_))
        ));
        assert_eq!(lw.steps(lw.lambda_for_steps(37)).unwrap(), 37);
    }

    #[test]
    fn cutoff_values() {
        assert_eq!(filter_value(&Cutoff, 0.5, 0.25).unwrap(), 0.0);
        assert_eq!(residual_value(&Cutoff, 0.5, 0.75).unwrap(), 0.0);
        assert_eq!(filter_value(&Cutoff, 0.5, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            filter_value(&Tikhonov, 0.0, 0.5),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            filter_value(&Tikhonov, 0.5, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            filter_value(&Tikhonov, 0.5, -1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            filter_value(&Tikhonov, 1.5, 0.5),
            Err(Error::Domain(_))
        ));
        assert!(Landweber::new(1.5).is_err());
    }

    #[test]
    fn apply_filter_diagonal_and_identity() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.25]));
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let x = apply_filter(&Tikhonov, 0.25, &a, &b).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);

        let x = apply_filter(
            &Tikhonov,
            1.0,
            &DMatrix::identity(3, 3),
            &DVector::from_vec(vec![1.0, 2.0, 3.0]),
        )
        .unwrap();
        assert!((x - DVector::from_vec(vec![0.5, 1.0, 1.5])).amax() < 1e-14);
    }

    #[test]
    fn apply_filter_landweber_matches_twenty_gd_steps() {
        let a = random_psd(5, 11);
        let b = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5, 1.5]);
        let lw = Landweber::new(0.5).unwrap();
        let x = apply_filter(&lw, lw.lambda_for_steps(20), &a, &b).unwrap();
        let oracle = gd_iterations(&a, &b, 0.5, 20);
        assert!((x - oracle).amax() <= 1e-10);
    }

    #[test]
    fn apply_filter_rejects_bad_inputs() {
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let mut asym = DMatrix::identity(2, 2) * 0.5;
        asym[(0, 1)] = 0.1;
        assert!(matches!(
            apply_filter(&Tikhonov, 0.5, &asym, &b),
            Err(Error::Domain(_))
        ));
        let big = DMatrix::identity(2, 2) * 2.0;
        assert!(matches!(
            apply_filter(&Tikhonov, 0.5, &big, &b),
            Err(Error::Domain(_))
        ));
        let short = DVector::from_vec(vec![1.0]);
        let ok = DMatrix::identity(2, 2) * 0.5;
        assert!(matches!(
            apply_filter(&Tikhonov, 0.5, &ok, &short),
            Err(Error::Domain(_))
        ));
        // round-off negatives are tolerated
        let mut tiny = DMatrix::identity(2, 2) * 0.5;
        tiny[(1, 1)] = -1e-12;
        assert!(apply_filter(&Tikhonov, 0.5, &tiny, &b).is_ok());
    }

    #[test]
    fn zero_eigenvalue_uses_right_limit() {
        let a = DMatrix::zeros(1, 1);
        let b = DVector::from_vec(vec![1.0]);
        let lw = Landweber::new(0.5).unwrap();
        assert!((apply_filter(&Tikhonov, 0.5, &a, &b).unwrap()[0] - 2.0).abs() < 1e-15);
        assert!(
            (apply_filter(&lw, lw.lambda_for_steps(6), &a, &b).unwrap()[0] - 3.0).abs() < 1e-12
        );
        assert_eq!(apply_filter(&Cutoff, 0.5, &a, &b).unwrap()[0], 0.0);
    }

    #[test]
    fn verify_tikhonov_and_landweber_grids() {
        let t = uniform_grid(100);
        let lambdas = uniform_grid(100);
        let rep = verify_filter_constants(&Tikhonov, &t, &lambdas, &q_grid(11, 1.0)).unwrap();
        assert!(!rep.flagged(), "{:?}", rep.flags());
        assert!(rep
            .per_lambda
            .iter()
            .all(|r| r.sup_t_phi <= 1.0 && r.sup_phi_times_lambda <= 1.0 && r.sup_residual <= 1.0));

        let lw = Landweber::new(1.0).unwrap();
        let rep = verify_filter_constants(&lw, &t, &lw.lambda_grid(100), &q_grid(11, 3.0)).unwrap();
        assert!(!rep.flagged(), "{:?}", rep.flags());
    }

    #[derive(Debug)]
    struct Broken;

    impl SpectralFilter for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn raw_value(&self, lambda: f64, _t: f64) -> f64 {
            2.0 / lambda
        }
        fn constants(&self) -> FilterConstants {
            FilterConstants {
                d: 1.0,
                e: 1.0,
                c0: 1.0,
            }
        }
        fn qualification(&self) -> Qualification {
            Qualification::Finite(1.0)
        }
        fn c_q(&self, _q: f64) -> f64 {
            1.0
        }
    }

    #[test]
    fn broken_filter_raises_e_flag() {
        let rep =
            verify_filter_constants(&Broken, &uniform_grid(10), &uniform_grid(10), &[0.0]).unwrap();
        assert!(rep.flags().contains(&FilterFlag::E));
    }

    #[test]
    fn verify_rejects_grids_outside_unit_interval() {
        assert!(verify_filter_constants(&Tikhonov, &[0.0, 0.5], &[0.5], &[0.0]).is_err());
        assert!(verify_filter_constants(&Tikhonov, &[0.5], &[0.5], &[2.0]).is_err());
    }

    #[test]
    fn registry_builds_all_filters() {
        let reg = filter_registry();
        assert_eq!(reg.names(), vec!["cutoff", "landweber", "tikhonov"]);
        let lw = reg
            .build("landweber", &serde_json::json!({"step_size": 0.5}))
            .unwrap();
        assert_eq!(lw.spec(), Some(FilterSpec::Landweber { step_size: 0.5 }));
        let spec: FilterSpec = serde_json::from_str(r#"{"kind":"cutoff"}"#).unwrap();
        assert_eq!(spec.build().unwrap().name(), "cutoff");
    }

    #[test]
    fn tikhonov_identity() {
        for seed in 0..5 {
            let a = random_psd(6, 100 + seed);
            let b = DVector::from_fn(6, |i, _| i as f64 - 2.0);
            let x = apply_filter(&Tikhonov, 0.1, &a, &b).unwrap();
            let back = (&a + DMatrix::identity(6, 6) * 0.1) * x;
            assert!((back - &b).norm() <= 1e-8 * b.norm());
        }
    }

    #[test]
    fn cutoff_is_a_projection_on_retained_subspace() {
        let a = random_psd(6, 5);
        let b = DVector::from_fn(6, |i, _| (i as f64).sin());
        let lambda = 0.2;
        let once = &a * apply_filter(&Cutoff, lambda, &a, &b).unwrap();
        let twice = &a * apply_filter(&Cutoff, lambda, &a, &once).unwrap();
        assert!((twice - &once).amax() <= 1e-9);
    }

    proptest! {
        #[test]
        fn residual_complements_filter(t in 1e-6f64..=1.0, lambda in 1e-4f64..=1.0, steps in 1u64..500) {
            let lw = Landweber::new(0.7).unwrap();
            let lam_lw = lw.lambda_for_steps(steps);
            let cases: [(&dyn SpectralFilter, f64); 3] =
                [(&Tikhonov, lambda), (&lw, lam_lw), (&Cutoff, lambda)];
            for (f, lam) in cases {
                if lam > 1.0 { continue; }
                let phi = filter_value(f, lam, t).unwrap();
                let r = residual_value(f, lam, t).unwrap();
                prop_assert!((t * phi + r - 1.0).abs() <= 4.0 * f64::EPSILON);
            }
        }

        #[test]
        fn landweber_closed_form_matches_iterations(seed in 0u64..1000, steps in 1usize..1000, alpha in 0.05f64..=1.0) {
            let a = random_psd(4, seed);
            let mut rng = rng_from_seed(seed ^ 0xABCD);
            let b = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            prop_assume!(alpha * steps as f64 >= 1.0);
            let lw = Landweber::new(alpha).unwrap();
            let x = apply_filter(&lw, 1.0 / (alpha * steps as f64), &a, &b).unwrap();
            let oracle = gd_iterations(&a, &b, alpha, steps);
            prop_assert!((&x - &oracle).norm() <= 1e-9 * oracle.norm().max(1e-300));
        }
    }
}
