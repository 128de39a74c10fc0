//! Run configuration: a JSON document shared by every subcommand.
//!
//! Every field has a default, so `{}` is a valid config. Values that depend
//! on the scale preset (`n_train`, `repetitions`) stay `None` until
//! [`RunConfig::resolve`] fills them.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use specrf::conclab::EventSpec;
use specrf::dataio::CsvOptions;
use specrf::features::{
    ntk_feature_map, BiasChannel, FeatureMap, Lift, NtkConfig, RandomFourierMap,
};
use specrf::neuralop::{OperatorTask, Trainable};
use specrf::spectral::FilterSpec;
use specrf::synthetic::{
    make_problem_with, FeatureSampling, Multipliers, NoiseModel, ProblemOptions, SpectrumSpec,
    SyntheticProblem, TargetProfile,
};
use specrf::{Error, Result};

/// Sample sizes and repetition counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// `n = 1000`, 10 repetitions.
    Desk,
    /// `n = 5000`, 50 repetitions.
    Paper,
}

impl Preset {
    pub fn n_train(self) -> usize {
        match self {
            Preset::Desk => 1000,
            Preset::Paper => 5000,
        }
    }

    pub fn repetitions(self) -> usize {
        match self {
            Preset::Desk => 10,
            Preset::Paper => 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// When present, must name the subcommand being run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSpec>,
    /// Gradient descent step size after normalization by `kappa^2`.
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureConfig>,
    #[serde(default)]
    pub multipliers: Multipliers,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub ntk: NtkCompareConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Also write an SVG rendering of the heat map.
    #[serde(default)]
    pub svg: bool,
}

fn default_step_size() -> f64 {
    0.5
}

fn default_delta() -> f64 {
    0.1
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields default")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    Synthetic {
        #[serde(default = "half")]
        r: f64,
        #[serde(default = "one")]
        b: f64,
        #[serde(default = "default_rank")]
        d_max: usize,
        #[serde(default = "one")]
        radius: f64,
        /// Half width of the uniform noise.
        #[serde(default = "default_noise")]
        noise: f64,
        /// Eigenvalue multiplier; `None` means 1, or `1/(2 d_max)` where
        /// a unit `kappa` is needed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
        #[serde(default)]
        sampling: FeatureSampling,
        #[serde(default)]
        profile: TargetProfile,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feature_columns: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        row_limit: Option<usize>,
        #[serde(default)]
        has_header: bool,
        #[serde(default = "yes")]
        standardize: bool,
    },
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_rank() -> usize {
    256
}

fn default_noise() -> f64 {
    0.1
}

impl Default for ProblemConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({"kind": "synthetic"})).expect("defaults")
    }
}

impl ProblemConfig {
    /// The synthetic problem; `unit_kappa` picks the scale `1/(2 d_max)`
    /// when none is configured.
    pub fn synthetic(
        &self,
        seed: u64,
        unit_kappa: bool,
    ) -> Result<Option<(SyntheticProblem, NoiseModel)>> {
        match *self {
            ProblemConfig::Synthetic {
                r,
                b,
                d_max,
                radius,
                noise,
                scale,
                sampling,
                profile,
            } => {
                let default_scale = if unit_kappa {
                    0.5 / d_max.max(1) as f64
                } else {
                    1.0
                };
                let spec = SpectrumSpec::with_scale(b, d_max, scale.unwrap_or(default_scale))?;
                let problem = make_problem_with(
                    &spec,
                    r,
                    radius,
                    seed,
                    ProblemOptions { profile, sampling },
                )?;
                Ok(Some((problem, NoiseModel::uniform(noise)?)))
            }
            ProblemConfig::Csv { .. } => Ok(None),
        }
    }

    pub fn csv_options(&self) -> Option<(&Path, CsvOptions, bool)> {
        match self {
            ProblemConfig::Csv {
                path,
                label_column,
                feature_columns,
                row_limit,
                has_header,
                standardize,
            } => Some((
                path,
                CsvOptions {
                    label_column: *label_column,
                    feature_columns: feature_columns.clone(),
                    row_limit: *row_limit,
                    has_header: *has_header,
                },
                *standardize,
            )),
            ProblemConfig::Synthetic { .. } => None,
        }
    }
}

/// Feature map used by `fit` and `sweep-heatmap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeatureConfig {
    /// The synthetic problem's own finite-rank map.
    Problem,
    /// Real-valued tangent features of a two-layer network with `p = d + 2`.
    Ntk {
        #[serde(default = "tanh")]
        activation: String,
        #[serde(default = "one")]
        bias: f64,
    },
    Rff {
        lengthscale: f64,
    },
}

fn tanh() -> String {
    "tanh".into()
}

impl FeatureConfig {
    pub fn default_ntk() -> Self {
        FeatureConfig::Ntk {
            activation: tanh(),
            bias: 1.0,
        }
    }

    pub fn build(
        &self,
        input_dim: usize,
        problem: Option<&SyntheticProblem>,
    ) -> Result<Arc<dyn FeatureMap>> {
        match self {
            FeatureConfig::Problem => problem
                .map(SyntheticProblem::feature_map)
                .ok_or_else(|| Error::Config("problem features need a synthetic problem".into())),
            FeatureConfig::Ntk { activation, bias } => {
                let mut cfg = NtkConfig::new(activation, 1, input_dim);
                cfg.lift = Lift::None;
                cfg.bias = BiasChannel::Constant { value: *bias };
                Ok(Arc::new(ntk_feature_map(cfg)?))
            }
            FeatureConfig::Rff { lengthscale } => {
                Ok(Arc::new(RandomFourierMap::new(input_dim, *lengthscale)?))
            }
        }
    }
}

/// A filter under verification. `declared` overrides the constants the
/// filter advertises, which is how a misdeclared filter is injected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterEntry {
    pub name: String,
    #[serde(default)]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared: Option<DeclaredConstants>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredConstants {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "hundred")]
    pub t_points: usize,
    #[serde(default = "hundred")]
    pub lambda_points: usize,
    #[serde(default = "seven")]
    pub q_points: usize,
    /// Largest `q` checked for filters of unbounded qualification.
    #[serde(default = "three")]
    pub q_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<Vec<FilterEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<EventSpec>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn hundred() -> usize {
    100
}

fn seven() -> usize {
    7
}

fn three() -> f64 {
    3.0
}

fn default_trials() -> usize {
    200
}

impl Default for VerifyConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtkCompareConfig {
    #[serde(default = "tanh")]
    pub activation: String,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default)]
    pub groups: Trainable,
    #[serde(default)]
    pub task: OperatorTask,
    #[serde(default = "twelve")]
    pub n_train: usize,
    #[serde(default = "twenty")]
    pub n_test: usize,
    #[serde(default = "ten")]
    pub seeds: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_steps: Option<u64>,
}

fn default_steps() -> u64 {
    100
}

fn twelve() -> usize {
    12
}

fn twenty() -> usize {
    20
}

fn ten() -> u64 {
    10
}

impl Default for NtkCompareConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        // a manifest carries the resolved config of the run it records
        let value = match value {
            Value::Object(ref m) if m.contains_key("command") && m.contains_key("outputs") => {
                m.get("config").cloned().unwrap_or(Value::Null)
            }
            v => v,
        };
        serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Fills preset-dependent values and checks everything that does not
    /// depend on the subcommand.
    pub fn resolve(mut self, preset: Preset) -> Result<Self> {
        self.n_train.get_or_insert(preset.n_train());
        self.repetitions.get_or_insert(preset.repetitions());
        let n_train = self.n_train.unwrap_or_default();
        self.n_test.get_or_insert(n_train);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.repetitions == Some(0) {
            return bad("repetitions must be >= 1".into());
        }
        if self.n_train == Some(0) || self.n_test == Some(0) {
            return bad("n_train and n_test must be >= 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return bad(format!("step_size = {} must lie in (0, 1]", self.step_size));
        }
        let g = &self.grids;
        let empty = [
            ("m", g.m.as_ref().map(Vec::is_empty)),
            ("t", g.t.as_ref().map(Vec::is_empty)),
            ("n", g.n.as_ref().map(Vec::is_empty)),
            ("lambda", g.lambda.as_ref().map(Vec::is_empty)),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e == Some(true)) {
            return bad(format!("grid '{name}' is empty"));
        }
        if g.m.iter().flatten().any(|&m| m == 0) || g.n.iter().flatten().any(|&n| n < 2) {
            return bad("grid entries must be positive (n >= 2)".into());
        }
        if g.t
            .iter()
            .flatten()
            .any(|&t| (t as f64) * self.step_size < 1.0)
        {
            return bad(format!(
                "every T must satisfy step_size * T >= 1 (step_size = {})",
                self.step_size
            ));
        }
        if g.lambda.iter().flatten().any(|&l| !(l > 0.0 && l <= 1.0)) {
            return bad("lambda grid entries must lie in (0, 1]".into());
        }
        if let ProblemConfig::Synthetic { d_max, noise, .. } = self.problem {
            if d_max == 0 || !(noise >= 0.0 && noise.is_finite()) {
                return bad(
                    "synthetic problem needs d_max >= 1 and a finite noise level >= 0".into(),
                );
            }
        }
        let v = &self.verify;
        if v.t_points == 0 || v.lambda_points == 0 || v.q_points == 0 {
            return bad("verification grids must be nonempty".into());
        }
        if v.events.as_ref().is_some_and(Vec::is_empty)
            || v.filters.as_ref().is_some_and(Vec::is_empty)
        {
            return bad("verify.events and verify.filters must be nonempty when given".into());
        }
        let n = &self.ntk;
        if n.n_train == 0 || n.n_test == 0 || n.seeds == 0 {
            return bad("ntk sample sizes and seeds must be >= 1".into());
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        self.n_train.expect("resolved")
    }

    pub fn n_test(&self) -> usize {
        self.n_test.expect("resolved")
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions.expect("resolved")
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
