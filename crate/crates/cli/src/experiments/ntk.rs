use specrf::dataio::{Cell, Table};
use specrf::features::NtkConfig;
use specrf::neuralop::{compare_to_kernel_gd, CompareConfig};
use specrf::rng::derive_seed;
use specrf::Result;

use super::{Experiment, Outcome};
use crate::config::RunConfig;

/// Distance between a trained symmetric network and kernel gradient descent
/// with its tangent kernel, per width.
pub struct NtkCompare;

pub const DEFAULT_WIDTHS: [usize; 3] = [64, 256, 1024];

impl Experiment for NtkCompare {
    fn name(&self) -> &'static str {
        "ntk-compare"
    }

    fn run(&self, cfg: &RunConfig) -> Result<Outcome> {
        let n = &cfg.ntk;
        let widths = cfg
            .grids
            .m
            .clone()
            .unwrap_or_else(|| DEFAULT_WIDTHS.to_vec());
        let compare = CompareConfig {
            arch: NtkConfig::new(&n.activation, n.task.grid_points, 1),
            tau: n.tau,
            step_size: n.step_size,
            steps: n.steps,
            groups: n.groups,
            kernel_step_size: n.kernel_step_size,
            kernel_steps: n.kernel_steps,
        };
        let (u, v) = n.task.sample(n.n_train, derive_seed(cfg.seed, &[1]))?;
        let (test, _) = n.task.sample(n.n_test, derive_seed(cfg.seed, &[2]))?;
        let curve = compare_to_kernel_gd(
            &compare,
            &widths,
            n.seeds,
            derive_seed(cfg.seed, &[3]),
            (&u, &v),
            &test,
        )?;

        let mut table = Table::new(["m", "median_discrepancy"]);
        let mut runs = Table::new(["m", "seed", "discrepancy"]);
        for w in &curve {
            table.push(vec![Cell::from(w.width), Cell::from(w.median)]);
            for (s, &d) in w.per_seed.iter().enumerate() {
                runs.push(vec![Cell::from(w.width), Cell::from(s), Cell::from(d)]);
            }
        }
        let decreasing = curve.windows(2).all(|p| p[1].median < p[0].median);
        Ok(Outcome {
            tables: vec![
                ("ntk_compare.csv".into(), table),
                ("ntk_compare_runs.csv".into(), runs),
            ],
            notes: vec![format!(
                "{} network, {} steps of size {}; medians {}strictly decreasing in width",
                n.activation,
                n.steps,
                n.step_size,
                if decreasing { "" } else { "not " }
            )],
            ..Outcome::default()
        })
    }
}
