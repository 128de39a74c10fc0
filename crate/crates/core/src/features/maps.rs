use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{FeatureMap, Omega};
use crate::error::{ensure, Error, Result};
use crate::rng::SeededRng;

/// `phi(u, omega) = c` for a single atom; `p = d_v = 1`.
#[derive(Debug, Clone)]
pub struct ConstantMap {
    value: f64,
    input_dim: usize,
}

impl ConstantMap {
    pub fn new(value: f64, input_dim: usize) -> Self {
        Self { value, input_dim }
    }
}

impl FeatureMap for ConstantMap {
    fn name(&self) -> &str {
        "constant"
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn summands(&self) -> usize {
        1
    }
    fn kappa(&self) -> Option<f64> {
        Some(self.value.abs())
    }
    fn sample(&self, _rng: &mut SeededRng) -> Omega {
        Vec::new()
    }
    fn eval_into(&self, _u: &[f64], _omega: &[f64], out: &mut [f64]) {
        out[0] = self.value;
    }
    fn support(&self) -> Option<Vec<(Omega, f64)>> {
        Some(vec![(Vec::new(), 1.0)])
    }
}

/// `phi(u, omega) = <omega, u>` with `omega` drawn from a finite set of
/// atoms. Inputs are assumed to satisfy `||u|| <= input_bound`.
#[derive(Debug, Clone)]
pub struct FiniteLinearMap {
    atoms: Vec<Vec<f64>>,
    probs: Vec<f64>,
    index: WeightedIndex<f64>,
    input_bound: f64,
}

impl FiniteLinearMap {
    pub fn new(atoms: Vec<Vec<f64>>, probs: Vec<f64>, input_bound: f64) -> Result<Self> {
        ensure!(
            !atoms.is_empty() && atoms.len() == probs.len(),
            Error::domain("atoms and probabilities must be nonempty and of equal length")
        );
        let dim = atoms[0].len();
        ensure!(
            atoms.iter().all(|a| a.len() == dim),
            Error::domain("all atoms must share one dimension")
        );
        let total: f64 = probs.iter().sum();
        ensure!(
            probs.iter().all(|&p| p >= 0.0) && (total - 1.0).abs() < 1e-12,
            Error::domain("probabilities must be nonnegative and sum to 1")
        );
        let index = WeightedIndex::new(&probs)
            .map_err(|e| Error::domain(format!("invalid probabilities: {e}")))?;
        Ok(Self {
            atoms,
            probs,
            index,
            input_bound,
        })
    }
}

impl FeatureMap for FiniteLinearMap {
    fn name(&self) -> &str {
        "finite-linear"
    }
    fn input_dim(&self) -> usize {
        self.atoms[0].len()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn summands(&self) -> usize {
        1
    }
    fn kappa(&self) -> Option<f64> {
        let max_norm = self
            .atoms
            .iter()
            .map(|a| a.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Some(max_norm * self.input_bound)
    }
    fn sample(&self, rng: &mut SeededRng) -> Omega {
        self.atoms[self.index.sample(rng)].clone()
    }
    fn eval_into(&self, u: &[f64], omega: &[f64], out: &mut [f64]) {
        out[0] = u.iter().zip(omega).map(|(a, b)| a * b).sum();
    }
    fn support(&self) -> Option<Vec<(Omega, f64)>> {
        Some(
            self.atoms
                .iter()
                .cloned()
                .zip(self.probs.iter().copied())
                .collect(),
        )
    }
}

/// Random Fourier features of the Gaussian kernel
/// `exp(-||u - v||^2 / (2 l^2))`: `phi(u, (w, b)) = sqrt(2) cos(w.u + b)`
/// with `w ~ N(0, l^-2 I)` and `b ~ U[0, 2 pi]`.
#[derive(Debug, Clone)]
pub struct RandomFourierMap {
    dim: usize,
    lengthscale: f64,
}

impl RandomFourierMap {
    pub fn new(dim: usize, lengthscale: f64) -> Result<Self> {
        ensure!(dim >= 1, Error::domain("input dimension must be >= 1"));
        ensure!(
            lengthscale > 0.0,
            Error::domain(format!("lengthscale {lengthscale} must be positive"))
        );
        Ok(Self { dim, lengthscale })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }
}

impl FeatureMap for RandomFourierMap {
    fn name(&self) -> &str {
        "rff"
    }
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn summands(&self) -> usize {
        1
    }
    fn kappa(&self) -> Option<f64> {
        Some(2f64.sqrt())
    }
    fn sample(&self, rng: &mut SeededRng) -> Omega {
        let mut omega: Vec<f64> = (0..self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / self.lengthscale)
            .collect();
        omega.push(rng.gen_range(0.0..2.0 * PI));
        omega
    }
    fn eval_into(&self, u: &[f64], omega: &[f64], out: &mut [f64]) {
        let (w, b) = omega.split_at(self.dim);
        let phase: f64 = u.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b[0];
        out[0] = 2f64.sqrt() * phase.cos();
    }
}
