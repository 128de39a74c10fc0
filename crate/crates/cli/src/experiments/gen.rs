use specrf::dataio::{Cell, Dataset, Table};
use specrf::rng::derive_seed;
use specrf::Result;

use super::{Experiment, Outcome, Source};
use crate::config::RunConfig;

/// Writes one train/test draw and, for synthetic problems, the spectrum and
/// target coefficients.
pub struct Gen;

fn data_table(d: &Dataset) -> Table {
    let mut header: Vec<String> = (0..d.input_dim()).map(|k| format!("x{k}")).collect();
    header.extend((0..d.output_dim()).map(|k| format!("y{k}")));
    let mut t = Table::new(header);
    for j in 0..d.len() {
        let row = d
            .inputs
            .row(j)
            .iter()
            .chain(d.outputs.row(j).iter())
            .map(|&v| Cell::Float(v))
            .collect();
        t.push(row);
    }
    t
}

impl Experiment for Gen {
    fn name(&self) -> &'static str {
        "gen"
    }

    fn run(&self, cfg: &RunConfig) -> Result<Outcome> {
        let source = Source::load(cfg)?;
        source.check_sizes(cfg.n_train(), cfg.n_test())?;
        let split = source.split(cfg.n_train(), cfg.n_test(), derive_seed(cfg.seed, &[1]))?;
        let mut out = Outcome {
            inputs: source.inputs(),
            ..Outcome::default()
        };
        out.tables
            .push(("train.csv".into(), data_table(&split.train)));
        out.tables
            .push(("test.csv".into(), data_table(&split.test)));
        if let Some(p) = source.problem() {
            let mut t = Table::new(["i", "mu", "g", "feature_weight", "feature_probability"]);
            let probs = p.feature_probabilities();
            for i in 1..=p.rank() {
                t.push(vec![
                    Cell::from(i),
                    Cell::from(p.spectrum.eigenvalue(i)),
                    Cell::from(p.target.g[i - 1]),
                    Cell::from(p.feature_weight(i)),
                    Cell::from(probs[i - 1]),
                ]);
            }
            out.tables.push(("spectrum.csv".into(), t));
            out.notes.extend(p.warnings.iter().cloned());
            out.notes.push(format!(
                "target L2 norm {:.6e}, RKHS norm {:.6e}, kappa {:.6e}",
                p.target_l2(),
                p.rkhs_norm(),
                p.kappa()
            ));
        }
        Ok(out)
    }
}
