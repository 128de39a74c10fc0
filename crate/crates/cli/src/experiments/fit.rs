use rayon::prelude::*;

use specrf::dataio::{Cell, Table};
use specrf::estimator::{evaluate, fit_closed, fit_gd_path, RFModel};
use specrf::features::{build_design, sample_features};
use specrf::rng::derive_seed;
use specrf::spectral::{FilterSpec, Landweber};
use specrf::synthetic::quadrature_grid;
use specrf::Result;

use super::{annotate, zeros_like, Experiment, Outcome, Source};
use crate::config::{FeatureConfig, RunConfig};

/// Fits one model per feature count and regularization level on a single
/// train/test draw.
pub struct Fit;

enum Regularization {
    Lambdas(Vec<f64>),
    Steps { alpha: f64, steps: Vec<u64> },
}

impl Experiment for Fit {
    fn name(&self) -> &'static str {
        "fit"
    }

    fn run(&self, cfg: &RunConfig) -> Result<Outcome> {
        let filter_spec = cfg.filter.unwrap_or(FilterSpec::Tikhonov);
        let filter = filter_spec.build()?;
        let reg = match filter_spec {
            FilterSpec::Landweber { step_size } => {
                let steps = cfg.grids.t.clone().unwrap_or_else(|| vec![10, 100, 1000]);
                for &t in &steps {
                    // rejects step_size * T < 1 before any work
                    filter.check_lambda(Landweber::new(step_size)?.lambda_for_steps(t))?;
                }
                Regularization::Steps {
                    alpha: step_size,
                    steps,
                }
            }
            _ => Regularization::Lambdas(
                cfg.grids
                    .lambda
                    .clone()
                    .unwrap_or_else(|| vec![1e-3, 1e-2, 1e-1]),
            ),
        };
        let ms = cfg.grids.m.clone().unwrap_or_else(|| vec![100]);
        let source = Source::load(cfg)?;
        source.check_sizes(cfg.n_train(), cfg.n_test())?;
        let features = cfg.features.clone().unwrap_or(match source.problem() {
            Some(_) => FeatureConfig::Problem,
            None => FeatureConfig::default_ntk(),
        });
        let map = features.build(source.input_dim(), source.problem())?;

        let split = source.split(cfg.n_train(), cfg.n_test(), derive_seed(cfg.seed, &[1]))?;
        let v = split.train.stacked_outputs();
        let oracle = source.oracle();
        let grid = source.problem().map(|p| quadrature_grid(4 * p.rank()));

        let rows: Vec<Vec<Vec<Cell>>> = ms
            .par_iter()
            .map(|&m| -> Result<Vec<Vec<Cell>>> {
                let ctx = format!("cell (M={m})");
                let fs = sample_features(map.clone(), m, derive_seed(cfg.seed, &[2, m as u64]))
                    .map_err(|e| annotate(e, &ctx))?;
                let design =
                    build_design(&fs, &split.train.inputs).map_err(|e| annotate(e, &ctx))?;
                let models: Vec<(RFModel, Option<u64>)> = match &reg {
                    Regularization::Lambdas(ls) => ls
                        .iter()
                        .map(|&l| fit_closed(&design, &v, filter.as_ref(), l).map(|m| (m, None)))
                        .collect::<Result<_>>(),
                    Regularization::Steps { alpha, steps } => {
                        fit_gd_path(&design, &v, *alpha, steps).map(|ms| {
                            ms.into_iter()
                                .zip(steps)
                                .map(|(m, &t)| (m, Some(t)))
                                .collect()
                        })
                    }
                }
                .map_err(|e| annotate(e, &ctx))?;
                models
                    .iter()
                    .map(|(model, steps)| {
                        let train =
                            evaluate(model, &split.train.inputs, &split.train.outputs, None)?;
                        let test = evaluate(model, &split.test.inputs, &split.test.outputs, None)?;
                        let excess = match (&grid, &oracle) {
                            (Some(g), Some(o)) => {
                                let r = evaluate(model, g, &zeros_like(g), Some(o))?;
                                r.excess_l2.map_or(Cell::from(""), Cell::from)
                            }
                            _ => Cell::from(""),
                        };
                        Ok(vec![
                            Cell::from(m),
                            Cell::from(filter.name()),
                            Cell::from(model.lambda()),
                            steps.map_or(Cell::from(""), Cell::from),
                            Cell::from(train.empirical_risk),
                            Cell::from(test.empirical_risk),
                            excess,
                        ])
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| annotate(e, &ctx))
            })
            .collect::<Result<_>>()?;

        let mut t = Table::new([
            "m",
            "filter",
            "lambda",
            "steps",
            "train_risk",
            "test_risk",
            "excess_l2",
        ]);
        for row in rows.into_iter().flatten() {
            t.push(row);
        }
        Ok(Outcome {
            tables: vec![("fit.csv".into(), t)],
            inputs: source.inputs(),
            notes: vec![format!("feature map {}", map.name())],
            ..Outcome::default()
        })
    }
}
