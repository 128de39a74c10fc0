//! Subcommands as interchangeable experiments, looked up by name.

mod fit;
mod gen;
mod heatmap;
mod ntk;
mod rates;
mod verify;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use specrf::dataio::{load_csv, split, standardize, Dataset, Table};
use specrf::registry::Registry;
use specrf::rng::derive_seed;
use specrf::synthetic::{NoiseModel, SyntheticProblem};
use specrf::{Error, Result};

use crate::config::RunConfig;

pub use fit::Fit;
pub use gen::Gen;
pub use heatmap::SweepHeatmap;
pub use ntk::NtkCompare;
pub use rates::Rates;
pub use verify::{Redeclared, Verify};

/// What a subcommand produces: named tables plus anything the driver must
/// record or act on.
#[derive(Debug, Default)]
pub struct Outcome {
    /// File name (relative to the output directory) and contents.
    pub tables: Vec<(String, Table)>,
    /// Extra non-CSV artifacts such as the SVG heat map.
    pub files: Vec<(String, Vec<u8>)>,
    pub notes: Vec<String>,
    /// Invariant violations; any entry makes the run exit with status 2.
    pub violations: Vec<String>,
    /// Input name to content hash.
    pub inputs: Vec<(String, String)>,
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    /// Runs on a resolved config. Implementations validate everything they
    /// need before the first expensive step.
    fn run(&self, cfg: &RunConfig) -> Result<Outcome>;
}

pub fn experiment_registry() -> &'static Registry<dyn Experiment> {
    static REGISTRY: OnceLock<Registry<dyn Experiment>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn Experiment> = Registry::new("subcommand");
        reg.register("gen", |_| Ok(Box::new(Gen)));
        reg.register("fit", |_| Ok(Box::new(Fit)));
        reg.register("sweep-heatmap", |_| Ok(Box::new(SweepHeatmap)));
        reg.register("rates", |_| Ok(Box::new(Rates)));
        reg.register("verify", |_| Ok(Box::new(Verify)));
        reg.register("ntk-compare", |_| Ok(Box::new(NtkCompare)));
        reg
    })
}

/// Prefixes the message of `e` with `context`, keeping its kind.
pub(crate) fn annotate(e: Error, context: &str) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("{context}: {m}")),
        Error::Schedule(m) => Error::Schedule(format!("{context}: {m}")),
        Error::Config(m) => Error::Config(format!("{context}: {m}")),
        Error::Consistency(m) => Error::Consistency(format!("{context}: {m}")),
        Error::UnsupportedOracle(m) => Error::UnsupportedOracle(format!("{context}: {m}")),
        Error::Internal(m) => Error::Internal(format!("{context}: {m}")),
        other => other,
    }
}

/// Train and test data for one repetition.
pub(crate) struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

pub(crate) enum Source {
    Synthetic {
        problem: SyntheticProblem,
        noise: NoiseModel,
    },
    Csv {
        data: Dataset,
        hash: String,
    },
}

impl Source {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        if let Some((problem, noise)) = cfg.problem.synthetic(derive_seed(cfg.seed, &[0]), false)? {
            return Ok(Source::Synthetic { problem, noise });
        }
        let (path, opts, standardize_inputs) = cfg.problem.csv_options().expect("csv problem");
        let mut data = load_csv(path, &opts)?;
        if standardize_inputs {
            data = standardize(&data)?.0;
        }
        let hash = specrf::dataio::file_hash(path)?;
        Ok(Source::Csv { data, hash })
    }

    pub fn problem(&self) -> Option<&SyntheticProblem> {
        self.synthetic().map(|(p, _)| p)
    }

    pub fn synthetic(&self) -> Option<(&SyntheticProblem, &NoiseModel)> {
        match self {
            Source::Synthetic { problem, noise } => Some((problem, noise)),
            Source::Csv { .. } => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Source::Synthetic { .. } => 1,
            Source::Csv { data, .. } => data.input_dim(),
        }
    }

    pub fn inputs(&self) -> Vec<(String, String)> {
        match self {
            Source::Synthetic { .. } => Vec::new(),
            Source::Csv { hash, .. } => vec![("data".into(), hash.clone())],
        }
    }

    /// Checks that the requested sizes fit the data.
    pub fn check_sizes(&self, n_train: usize, n_test: usize) -> Result<()> {
        if let Source::Csv { data, .. } = self {
            if n_train + n_test > data.len() {
                return Err(Error::Config(format!(
                    "n_train + n_test = {} exceeds the {} rows available",
                    n_train + n_test,
                    data.len()
                )));
            }
        }
        Ok(())
    }

    /// Draws repetition data from `seed`.
    pub fn split(&self, n_train: usize, n_test: usize, seed: u64) -> Result<Split> {
        match self {
            Source::Synthetic { problem, noise } => Ok(Split {
                train: problem.sample_dataset(n_train, noise, derive_seed(seed, &[0]))?,
                test: problem.sample_dataset(n_test, noise, derive_seed(seed, &[1]))?,
            }),
            Source::Csv { data, .. } => {
                let (train, test) = split(data, n_train, n_test, seed)?;
                Ok(Split { train, test })
            }
        }
    }

    /// Oracle for the excess risk, when the regression function is known.
    pub fn oracle(&self) -> Option<impl Fn(&[f64]) -> DVector<f64> + '_> {
        self.problem()
            .map(|p| move |u: &[f64]| DVector::from_element(1, p.target_value(u[0])))
    }
}

/// Mean and sample standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub(crate) fn zeros_like(inputs: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::zeros(inputs.nrows(), 1)
}
