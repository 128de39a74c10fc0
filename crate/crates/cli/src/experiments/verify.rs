use specrf::conclab::{reports_table, simulate_event, EventSpec, TrialReport};
use specrf::dataio::{Cell, Table};
use specrf::rng::derive_seed;
use specrf::spectral::{
    filter_registry, q_grid, uniform_grid, verify_filter_constants, FilterConstants, FilterSpec,
    Qualification, SpectralFilter,
};
use specrf::{Error, Result};

use super::{annotate, Experiment, Outcome};
use crate::config::{DeclaredConstants, FilterEntry, RunConfig};

/// Filter axioms on `(t, lambda)` grids and concentration events by Monte
/// Carlo. Any flag or event whose violation rate exceeds `delta` is an
/// invariant violation.
pub struct Verify;

/// A filter advertising constants other than its own.
#[derive(Debug)]
pub struct Redeclared {
    inner: Box<dyn SpectralFilter>,
    name: String,
    constants: FilterConstants,
}

impl Redeclared {
    pub fn new(inner: Box<dyn SpectralFilter>, declared: DeclaredConstants) -> Self {
        let own = inner.constants();
        Self {
            name: format!("{}-redeclared", inner.name()),
            constants: FilterConstants {
                d: declared.d.unwrap_or(own.d),
                e: declared.e.unwrap_or(own.e),
                c0: declared.c0.unwrap_or(own.c0),
            },
            inner,
        }
    }
}

impl SpectralFilter for Redeclared {
    fn name(&self) -> &str {
        &self.name
    }
    fn check_lambda(&self, lambda: f64) -> Result<()> {
        self.inner.check_lambda(lambda)
    }
    fn raw_value(&self, lambda: f64, t: f64) -> f64 {
        self.inner.raw_value(lambda, t)
    }
    fn raw_residual(&self, lambda: f64, t: f64) -> f64 {
        self.inner.raw_residual(lambda, t)
    }
    fn constants(&self) -> FilterConstants {
        self.constants
    }
    fn qualification(&self) -> Qualification {
        self.inner.qualification()
    }
    fn c_q(&self, q: f64) -> f64 {
        self.inner.c_q(q)
    }
    fn lambda_grid(&self, n: usize) -> Vec<f64> {
        self.inner.lambda_grid(n)
    }
    fn spec(&self) -> Option<FilterSpec> {
        None
    }
}

fn default_filters(step_size: f64) -> Vec<FilterEntry> {
    let entry = |name: &str, params| FilterEntry {
        name: name.into(),
        params,
        declared: None,
    };
    vec![
        entry("tikhonov", serde_json::Value::Null),
        entry("landweber", serde_json::json!({ "step_size": step_size })),
        entry("cutoff", serde_json::Value::Null),
    ]
}

/// Nine events on a problem small enough for a desk run.
pub fn default_events(delta: f64) -> Vec<EventSpec> {
    (1..=9)
        .map(|k| EventSpec {
            id: format!("E{k}"),
            lambda: 0.05,
            n: 200,
            m: 200,
            delta,
        })
        .collect()
}

fn build_filter(entry: &FilterEntry) -> Result<Box<dyn SpectralFilter>> {
    let f = filter_registry().build(&entry.name, &entry.params)?;
    Ok(match entry.declared {
        Some(d) => Box::new(Redeclared::new(f, d)),
        None => f,
    })
}

impl Experiment for Verify {
    fn name(&self) -> &'static str {
        "verify"
    }

    fn run(&self, cfg: &RunConfig) -> Result<Outcome> {
        let v = &cfg.verify;
        let entries = v
            .filters
            .clone()
            .unwrap_or_else(|| default_filters(cfg.step_size));
        let filters: Vec<Box<dyn SpectralFilter>> =
            entries.iter().map(build_filter).collect::<Result<_>>()?;
        let events = v
            .events
            .clone()
            .unwrap_or_else(|| default_events(cfg.delta));
        if v.trials < 50 {
            return Err(Error::Config(format!(
                "verify.trials = {} must be >= 50",
                v.trials
            )));
        }
        let (problem, noise) = cfg
            .problem
            .synthetic(derive_seed(cfg.seed, &[0]), true)?
            .ok_or_else(|| Error::Config("concentration events need a synthetic problem".into()))?;

        let mut out = Outcome::default();
        let mut filter_table = Table::new([
            "filter",
            "lambda",
            "sup_t_phi",
            "sup_phi_times_lambda",
            "sup_residual",
            "sup_qualification",
            "worst_c_q_ratio",
            "flags",
        ]);
        let t_grid = uniform_grid(v.t_points);
        for f in &filters {
            let q_max = match f.qualification() {
                Qualification::Finite(nu) => nu,
                Qualification::Unbounded => v.q_max,
            };
            let report = verify_filter_constants(
                f.as_ref(),
                &t_grid,
                &f.lambda_grid(v.lambda_points),
                &q_grid(v.q_points, q_max),
            )?;
            for r in &report.per_lambda {
                let flags: Vec<String> = r.flags.iter().map(ToString::to_string).collect();
                filter_table.push(vec![
                    Cell::from(report.filter.as_str()),
                    Cell::from(r.lambda),
                    Cell::from(r.sup_t_phi),
                    Cell::from(r.sup_phi_times_lambda),
                    Cell::from(r.sup_residual),
                    Cell::from(r.sup_qualification),
                    Cell::from(r.worst_c_q_ratio),
                    Cell::from(flags.join(";")),
                ]);
            }
            if report.flagged() {
                let flags: Vec<String> = report.flags().iter().map(ToString::to_string).collect();
                out.violations.push(format!(
                    "filter {} raised {}",
                    report.filter,
                    flags.join(", ")
                ));
            }
        }
        out.tables.push(("filters.csv".into(), filter_table));

        let reports: Vec<TrialReport> = events
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                simulate_event(
                    spec,
                    &problem,
                    &noise,
                    v.trials,
                    derive_seed(cfg.seed, &[3, i as u64]),
                )
                .map_err(|e| {
                    annotate(
                        e,
                        &format!(
                            "event {} (lambda={}, n={}, M={})",
                            spec.id, spec.lambda, spec.n, spec.m
                        ),
                    )
                })
            })
            .collect::<Result<_>>()?;
        for r in &reports {
            if r.violation_rate > r.delta {
                out.violations.push(format!(
                    "event {} violated in {} of {} trials (rate {} > delta {})",
                    r.id, r.violations, r.trials, r.violation_rate, r.delta
                ));
            }
        }
        out.tables
            .push(("events.csv".into(), reports_table(&reports)));
        out.notes.push(format!(
            "{} filters, {} events on a rank {} problem with kappa {:.6}",
            filters.len(),
            reports.len(),
            problem.rank(),
            problem.kappa()
        ));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use specrf::spectral::{FilterFlag, Tikhonov};

    #[test]
    fn lowering_e_raises_the_e_flag() {
        let f = Redeclared::new(
            Box::new(Tikhonov),
            DeclaredConstants {
                e: Some(0.5),
                ..DeclaredConstants::default()
            },
        );
        let rep =
            verify_filter_constants(&f, &uniform_grid(100), &f.lambda_grid(100), &[0.0]).unwrap();
        assert_eq!(rep.flags(), vec![FilterFlag::E]);
        let honest = verify_filter_constants(
            &Tikhonov,
            &uniform_grid(100),
            &Tikhonov.lambda_grid(100),
            &[0.0],
        )
        .unwrap();
        assert!(!honest.flagged());
    }
}
