//! Random feature maps and their Monte Carlo kernels.
//!
//! A [`FeatureMap`] realizes a kernel through the integral representation
//! `K(u, v) = sum_i E_omega[phi_i(u, omega) phi_i(v, omega)^T]` with `p`
//! summands `phi_i(., omega)` valued in `R^{d_v}`. Drawing `M` samples of
//! `omega` gives the approximate kernel `K_M`.
//!
//! Outputs live in `R^{d_v}` equipped with the weighted inner product
//! `<f, g> = w sum_k f_k g_k` (`w = 1` for plain vectors, `w = 1/n_X` for
//! functions sampled on a grid of `n_X` points).

mod design;
mod maps;
mod ntk;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{ensure, Error, Result};
use crate::rng::{rng_from_seed, SeededRng};

pub use design::{build_design, build_design_scaled, DesignMatrix, KappaScale};
pub use maps::{ConstantMap, FiniteLinearMap, RandomFourierMap};
pub use ntk::{ntk_feature_map, BiasChannel, Lift, NtkConfig, NtkMap};

/// One draw from the feature distribution.
pub type Omega = Vec<f64>;

pub trait FeatureMap: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Length of an input vector `u`.
    fn input_dim(&self) -> usize;

    /// Dimension `d_v` of the output space.
    fn output_dim(&self) -> usize;

    /// Number of summands `p`.
    fn summands(&self) -> usize;

    /// Weight `w` of the output inner product.
    fn output_weight(&self) -> f64 {
        1.0
    }

    /// Almost-sure bound `kappa` on `sqrt(sum_i ||phi_i(u, omega)||^2)`,
    /// when one is known for every admissible input.
    fn kappa(&self) -> Option<f64>;

    fn sample(&self, rng: &mut SeededRng) -> Omega;

    /// Writes `phi_i(u, omega)_k` to `out[i * d_v + k]`.
    fn eval_into(&self, u: &[f64], omega: &[f64], out: &mut [f64]);

    /// Atoms and probabilities when the feature distribution is finite.
    fn support(&self) -> Option<Vec<(Omega, f64)>> {
        None
    }
}

/// All summands at `(u, omega)`, summand-major.
pub fn eval_features(map: &dyn FeatureMap, u: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        u.len() == map.input_dim(),
        Error::domain(format!(
            "input has length {}, {} expects {}",
            u.len(),
            map.name(),
            map.input_dim()
        ))
    );
    let mut out = vec![0.0; map.summands() * map.output_dim()];
    map.eval_into(u, omega, &mut out);
    ensure!(
        out.iter().all(|x| x.is_finite()),
        Error::Internal(format!(
            "{} produced a non-finite feature value",
            map.name()
        ))
    );
    Ok(out)
}

/// `sum_i ||phi_i(u, omega)||^2` in the output norm.
pub fn feature_energy(map: &dyn FeatureMap, u: &[f64], omega: &[f64]) -> Result<f64> {
    let w = map.output_weight();
    Ok(eval_features(map, u, omega)?
        .iter()
        .map(|x| w * x * x)
        .sum())
}

/// `M` i.i.d. draws of `omega` together with the map that consumes them.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    map: Arc<dyn FeatureMap>,
    samples: Vec<Omega>,
    seed: Option<u64>,
}

impl FeatureSet {
    /// Wraps explicitly chosen samples, e.g. the initial weights of a network.
    pub fn from_samples(map: Arc<dyn FeatureMap>, samples: Vec<Omega>) -> Result<Self> {
        ensure!(
            !samples.is_empty(),
            Error::domain("a feature set needs M >= 1 samples")
        );
        Ok(Self {
            map,
            samples,
            seed: None,
        })
    }

    pub fn map(&self) -> &Arc<dyn FeatureMap> {
        &self.map
    }

    pub fn samples(&self) -> &[Omega] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Dimension `M * p` of the feature space.
    pub fn feature_dim(&self) -> usize {
        self.samples.len() * self.map.summands()
    }

    /// Stacked features at `u`: a `d_v x (M p)` matrix whose column
    /// `m p + i` is `phi_i(u, omega_m) / sqrt(M)`.
    pub fn stacked(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.map.summands();
        let dv = self.map.output_dim();
        let scale = 1.0 / (self.samples.len() as f64).sqrt();
        let mut out = DMatrix::zeros(dv, self.feature_dim());
        let mut buf = vec![0.0; p * dv];
        ensure!(
            u.len() == self.map.input_dim(),
            Error::domain(format!(
                "input has length {}, expected {}",
                u.len(),
                self.map.input_dim()
            ))
        );
        for (m, omega) in self.samples.iter().enumerate() {
            self.map.eval_into(u, omega, &mut buf);
            for i in 0..p {
                for k in 0..dv {
                    out[(k, m * p + i)] = buf[i * dv + k] * scale;
                }
            }
        }
        Ok(out)
    }
}

/// Draws `M` samples of `omega` from the map's distribution; deterministic in
/// `seed`.
pub fn sample_features(map: Arc<dyn FeatureMap>, m: usize, seed: u64) -> Result<FeatureSet> {
    ensure!(
        m >= 1,
        Error::domain("number of random features M must be >= 1")
    );
    let mut rng = rng_from_seed(seed);
    let samples = (0..m).map(|_| map.sample(&mut rng)).collect();
    Ok(FeatureSet {
        map,
        samples,
        seed: Some(seed),
    })
}

fn accumulate_outer(
    acc: &mut DMatrix<f64>,
    a: &[f64],
    b: &[f64],
    p: usize,
    dv: usize,
    weight: f64,
) {
    for i in 0..p {
        let ai = &a[i * dv..(i + 1) * dv];
        let bi = &b[i * dv..(i + 1) * dv];
        for (r, &x) in ai.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (c, &y) in bi.iter().enumerate() {
                acc[(r, c)] += weight * (x * y);
            }
        }
    }
}

/// `K_M(u, v) = (1/M) sum_m sum_i phi_i(u, omega_m) phi_i(v, omega_m)^T`.
pub fn kernel_approx(fs: &FeatureSet, u: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
    let map = fs.map.as_ref();
    let (p, dv) = (map.summands(), map.output_dim());
    let mut acc = DMatrix::zeros(dv, dv);
    let weight = 1.0 / fs.len() as f64;
    for omega in &fs.samples {
        let a = eval_features(map, u, omega)?;
        let b = eval_features(map, v, omega)?;
        ensure!(
            a.len() == p * dv && b.len() == p * dv,
            Error::Internal("evaluator output has the wrong dimension".into())
        );
        accumulate_outer(&mut acc, &a, &b, p, dv, weight);
    }
    Ok(acc)
}

/// Exact kernel `sum_omega pi(omega) sum_i phi_i(u, omega) phi_i(v, omega)^T`
/// for maps with a finite feature distribution.
pub fn kernel_exact(map: &dyn FeatureMap, u: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
    let support = map.support().ok_or_else(|| {
        Error::UnsupportedOracle(format!("{} has no finite feature distribution", map.name()))
    })?;
    let (p, dv) = (map.summands(), map.output_dim());
    let mut acc = DMatrix::zeros(dv, dv);
    for (omega, prob) in &support {
        let a = eval_features(map, u, omega)?;
        let b = eval_features(map, v, omega)?;
        accumulate_outer(&mut acc, &a, &b, p, dv, *prob);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_seed;
    use crate::synthetic::{make_problem, SpectrumSpec};

    fn sign_map() -> Arc<dyn FeatureMap> {
        Arc::new(FiniteLinearMap::new(vec![vec![1.0], vec![-1.0]], vec![0.5, 0.5], 1.0).unwrap())
    }

    #[test]
    fn singleton_support_gives_identical_samples() {
        let map: Arc<dyn FeatureMap> =
            Arc::new(FiniteLinearMap::new(vec![vec![2.0, -1.0]], vec![1.0], 1.0).unwrap());
        let fs = sample_features(map.clone(), 25, 9).unwrap();
        assert!(fs.samples().iter().all(|w| w == &vec![2.0, -1.0]));
        let u = [0.3, 0.1];
        let v = [-0.2, 0.5];
        let a = kernel_approx(&fs, &u, &v).unwrap();
        let e = kernel_exact(map.as_ref(), &u, &v).unwrap();
        assert!((a - e).amax() < 1e-14);
    }

    #[test]
    fn sampling_is_deterministic_and_rejects_zero() {
        let map: Arc<dyn FeatureMap> = Arc::new(RandomFourierMap::new(3, 0.7).unwrap());
        let a = sample_features(map.clone(), 40, 5).unwrap();
        let b = sample_features(map.clone(), 40, 5).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert!(sample_features(map, 0, 5).is_err());
    }

    #[test]
    fn two_atom_frequency_concentrates() {
        let fs = sample_features(sign_map(), 10_000, 2024).unwrap();
        let freq = fs.samples().iter().filter(|w| w[0] > 0.0).count() as f64 / 1e4;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn sign_map_kernel_is_linear() {
        let map = sign_map();
        let fs = FeatureSet::from_samples(map.clone(), vec![vec![1.0], vec![-1.0]]).unwrap();
        let (u, v) = ([0.6], [-0.3]);
        let k = kernel_approx(&fs, &u, &v).unwrap();
        assert!((k[(0, 0)] - 0.6 * -0.3).abs() < 1e-15);
        let e = kernel_exact(map.as_ref(), &u, &v).unwrap();
        assert!((e[(0, 0)] - 0.6 * -0.3).abs() < 1e-15);
    }

    #[test]
    fn kernel_is_symmetric_and_psd_on_diagonal() {
        let map: Arc<dyn FeatureMap> = Arc::new(RandomFourierMap::new(2, 1.0).unwrap());
        let fs = sample_features(map, 64, 3).unwrap();
        let (u, v) = ([0.1, 0.2], [0.7, -0.4]);
        let kuv = kernel_approx(&fs, &u, &v).unwrap();
        let kvu = kernel_approx(&fs, &v, &u).unwrap();
        assert_eq!(kuv, kvu.transpose());
        assert!(kernel_approx(&fs, &u, &u).unwrap()[(0, 0)] >= 0.0);
    }

    #[test]
    fn kernel_exact_requires_finite_support() {
        let map = RandomFourierMap::new(1, 1.0).unwrap();
        assert!(matches!(
            kernel_exact(&map, &[0.0], &[0.0]),
            Err(Error::UnsupportedOracle(_))
        ));
    }

    #[test]
    fn random_fourier_mean_matches_gaussian_kernel() {
        let ell = 0.8;
        let map: Arc<dyn FeatureMap> = Arc::new(RandomFourierMap::new(2, ell).unwrap());
        let (u, v) = ([0.2, -0.1], [0.6, 0.4]);
        let mean = (0..200)
            .map(|s| {
                kernel_approx(&sample_features(map.clone(), 1000, s).unwrap(), &u, &v).unwrap()
                    [(0, 0)]
            })
            .sum::<f64>()
            / 200.0;
        let d2 = (0.4f64).powi(2) + (0.5f64).powi(2);
        let exact = (-d2 / (2.0 * ell * ell)).exp();
        assert!((mean - exact).abs() <= 0.05, "{mean} vs {exact}");
    }

    #[test]
    fn finite_rank_kernel_matches_basis_expansion() {
        let spec = SpectrumSpec::new(1.0, 6).unwrap();
        let problem = make_problem(&spec, 0.5, 1.0, 1).unwrap();
        let map = problem.feature_map();
        let (u, v) = (0.37, 0.81);
        let k = kernel_exact(map.as_ref(), &[u], &[v]).unwrap()[(0, 0)];
        let direct: f64 = (1..=6)
            .map(|i| spec.eigenvalue(i) * problem.basis(i, u) * problem.basis(i, v))
            .sum();
        assert!((k - direct).abs() < 1e-12);
    }

    #[test]
    fn boundedness_holds_on_random_pairs() {
        let spec = SpectrumSpec::new(1.0, 16).unwrap();
        let problem = make_problem(&spec, 0.5, 1.0, 4).unwrap();
        let maps: Vec<Arc<dyn FeatureMap>> = vec![
            problem.feature_map(),
            Arc::new(RandomFourierMap::new(3, 0.5).unwrap()),
            sign_map(),
        ];
        let mut rng = rng_from_seed(77);
        use rand::Rng;
        for map in maps {
            let kappa = map.kappa().unwrap();
            for _ in 0..1000 {
                let u: Vec<f64> = (0..map.input_dim())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                let u: Vec<f64> = if map.name() == "finite-rank" {
                    vec![rng.gen_range(0.0..1.0)]
                } else {
                    u
                };
                let omega = map.sample(&mut rng);
                let e = feature_energy(map.as_ref(), &u, &omega).unwrap();
                assert!(e <= kappa * kappa + 1e-9, "{} energy {e}", map.name());
            }
        }
    }

    #[test]
    fn kernel_error_decays_like_inverse_sqrt_m() {
        let spec = SpectrumSpec::new(1.0, 8).unwrap();
        let problem = make_problem(&spec, 0.5, 1.0, 3).unwrap();
        let map = problem.feature_map();
        let pairs = [(0.1, 0.2), (0.4, 0.9), (0.75, 0.33)];
        let ms = [16usize, 64, 256, 1024];
        let errs: Vec<f64> = ms
            .iter()
            .map(|&m| {
                (0..100)
                    .map(|s| {
                        let fs =
                            sample_features(map.clone(), m, derive_seed(s, &[m as u64])).unwrap();
                        let sq: f64 = pairs
                            .iter()
                            .map(|&(u, v)| {
                                let d = kernel_approx(&fs, &[u], &[v]).unwrap()
                                    - kernel_exact(map.as_ref(), &[u], &[v]).unwrap();
                                d.norm_squared()
                            })
                            .sum();
                        sq.sqrt()
                    })
                    .sum::<f64>()
                    / 100.0
            })
            .collect();
        let ns: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
        let slope = crate::synthetic::fit_rate(&ns, &errs).unwrap();
        assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
    }
}
