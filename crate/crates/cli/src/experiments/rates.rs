use rayon::prelude::*;

use specrf::dataio::{Cell, Table};
use specrf::estimator::{evaluate, fit_closed, fit_gd};
use specrf::features::{build_design, sample_features};
use specrf::rng::derive_seed;
use specrf::spectral::{FilterSpec, Landweber};
use specrf::synthetic::{fit_rate, quadrature_grid, rate_schedule, RateSchedule};
use specrf::{Error, Result};

use super::{annotate, mean_std, zeros_like, Experiment, Outcome, Source};
use crate::config::RunConfig;

/// Excess risk along the theoretical schedule `(lambda_n, T_n, M_n)` and the
/// fitted log-log slope.
pub struct Rates;

pub const DEFAULT_N_GRID: [usize; 5] = [500, 1000, 2000, 4000, 8000];

/// Slopes closer to zero than this are reported as degenerate.
const FLAT_SLOPE: f64 = 0.05;

struct Cellplan {
    schedule: RateSchedule,
    lambda: f64,
    steps: Option<u64>,
}

impl Experiment for Rates {
    fn name(&self) -> &'static str {
        "rates"
    }

    fn run(&self, cfg: &RunConfig) -> Result<Outcome> {
        let source = Source::load(cfg)?;
        let (problem, noise) = source.synthetic().ok_or_else(|| {
            Error::Config("rates needs a synthetic problem with a known target".into())
        })?;
        let filter_spec = cfg.filter.unwrap_or(FilterSpec::Landweber {
            step_size: cfg.step_size,
        });
        let filter = filter_spec.build()?;
        let ns = cfg
            .grids
            .n
            .clone()
            .unwrap_or_else(|| DEFAULT_N_GRID.to_vec());
        let reps = cfg.repetitions();
        let map = problem.feature_map();
        let (r, b) = (problem.target.r, problem.spectrum.b);

        let plans: Vec<Cellplan> = ns
            .iter()
            .map(|&n| {
                let schedule = rate_schedule(n, r, b, cfg.delta, map.summands(), cfg.multipliers)?;
                Ok(match filter_spec {
                    FilterSpec::Landweber { step_size } => {
                        let lw = Landweber::new(step_size)?;
                        let steps = (1.0 / (step_size * schedule.lambda)).ceil().max(1.0) as u64;
                        Cellplan {
                            lambda: lw.lambda_for_steps(steps),
                            steps: Some(steps),
                            schedule,
                        }
                    }
                    _ => Cellplan {
                        lambda: schedule.lambda,
                        steps: None,
                        schedule,
                    },
                })
            })
            .collect::<Result<_>>()?;

        // midpoint rule exact for the band-limited squared error
        let grid = quadrature_grid(2 * problem.rank() + 2);
        let zeros = zeros_like(&grid);
        let oracle = source.oracle().expect("synthetic");

        let cells: Vec<(usize, usize)> = (0..plans.len())
            .flat_map(|i| (0..reps).map(move |k| (i, k)))
            .collect();
        let errors: Vec<f64> = cells
            .par_iter()
            .map(|&(i, k)| {
                let plan = &plans[i];
                let n = plan.schedule.n;
                let ctx = format!("cell (n={n}, repetition={k})");
                let seed = derive_seed(cfg.seed, &[1, n as u64, k as u64]);
                let run = || -> Result<f64> {
                    let train = problem.sample_dataset(n, noise, derive_seed(seed, &[0]))?;
                    let fs = sample_features(
                        map.clone(),
                        plan.schedule.features,
                        derive_seed(seed, &[2]),
                    )?;
                    let design = build_design(&fs, &train.inputs)?;
                    let v = train.stacked_outputs();
                    let model = match (filter_spec, plan.steps) {
                        (FilterSpec::Landweber { step_size }, Some(t)) => {
                            fit_gd(&design, &v, step_size, t)?
                        }
                        _ => fit_closed(&design, &v, filter.as_ref(), plan.lambda)?,
                    };
                    let report = evaluate(&model, &grid, &zeros, Some(&oracle))?;
                    Ok(report.excess_l2.expect("oracle given"))
                };
                run().map_err(|e| annotate(e, &ctx))
            })
            .collect::<Result<_>>()?;

        let mut runs = Table::new(["n", "repetition", "lambda", "steps", "m", "excess_l2"]);
        let mut table = Table::new([
            "n",
            "lambda",
            "steps",
            "m",
            "above_n0",
            "mean_excess_l2",
            "std_excess_l2",
        ]);
        let mut means = Vec::with_capacity(plans.len());
        for (i, plan) in plans.iter().enumerate() {
            let vals = &errors[i * reps..(i + 1) * reps];
            let steps = plan.steps.map_or(Cell::from(""), Cell::from);
            for (k, &e) in vals.iter().enumerate() {
                runs.push(vec![
                    Cell::from(plan.schedule.n),
                    Cell::from(k),
                    Cell::from(plan.lambda),
                    steps.clone(),
                    Cell::from(plan.schedule.features),
                    Cell::from(e),
                ]);
            }
            let (mean, std) = mean_std(vals);
            means.push(mean);
            table.push(vec![
                Cell::from(plan.schedule.n),
                Cell::from(plan.lambda),
                steps,
                Cell::from(plan.schedule.features),
                Cell::from(plan.schedule.above_n0),
                Cell::from(mean),
                Cell::from(std),
            ]);
        }

        let sizes: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let slope = fit_rate(&sizes, &means).unwrap_or(f64::NAN);
        let expected = -r / (2.0 * r + b);
        let degenerate = !(slope.abs() >= FLAT_SLOPE);
        let mut summary = Table::new(["r", "b", "expected_slope", "fitted_slope", "degenerate"]);
        summary.push(vec![
            Cell::from(r),
            Cell::from(b),
            Cell::from(expected),
            Cell::from(slope),
            Cell::from(degenerate),
        ]);

        let mut notes = Vec::new();
        if degenerate {
            notes.push(format!(
                "degenerate rate: fitted slope {slope} is indistinguishable from 0"
            ));
        }
        for p in plans.iter().filter(|p| !p.schedule.above_n0) {
            notes.push(format!(
                "n = {} is below n0 = {:.3}",
                p.schedule.n, p.schedule.n0
            ));
        }
        for p in plans.iter().filter(|p| p.schedule.lambda_clamped) {
            notes.push(format!("lambda_n clamped to 1 at n = {}", p.schedule.n));
        }
        Ok(Outcome {
            tables: vec![
                ("rates.csv".into(), table),
                ("rates_runs.csv".into(), runs),
                ("rates_summary.csv".into(), summary),
            ],
            notes,
            ..Outcome::default()
        })
    }
}
