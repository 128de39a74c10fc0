use rayon::prelude::*;

use specrf::dataio::{Cell, Table};
use specrf::estimator::{evaluate, fit_gd_path};
use specrf::features::{build_design, sample_features};
use specrf::rng::derive_seed;
use specrf::Result;

use super::{annotate, mean_std, Experiment, Outcome, Source};
use crate::config::{FeatureConfig, RunConfig};

/// Mean test error over a grid of feature counts and iteration counts.
pub struct SweepHeatmap;

/// Feature-count multiples of `sqrt(n) p` swept by default.
const M_MULTIPLES: [f64; 7] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

pub fn default_t_grid(step_size: f64) -> Vec<u64> {
    (0..=10)
        .map(|k| 1u64 << k)
        .filter(|&t| t as f64 * step_size >= 1.0)
        .collect()
}

impl Experiment for SweepHeatmap {
    fn name(&self) -> &'static str {
        "sweep-heatmap"
    }

    fn run(&self, cfg: &RunConfig) -> Result<Outcome> {
        let source = Source::load(cfg)?;
        let (n, n_test, reps) = (cfg.n_train(), cfg.n_test(), cfg.repetitions());
        source.check_sizes(n, n_test)?;
        let features = cfg
            .features
            .clone()
            .unwrap_or_else(FeatureConfig::default_ntk);
        let map = features.build(source.input_dim(), source.problem())?;
        let p = map.summands();
        let ms = cfg.grids.m.clone().unwrap_or_else(|| {
            let unit = (n as f64).sqrt() * p as f64;
            M_MULTIPLES
                .iter()
                .map(|c| (c * unit).ceil() as usize)
                .collect()
        });
        let ts = cfg
            .grids
            .t
            .clone()
            .unwrap_or_else(|| default_t_grid(cfg.step_size));
        let oracle = source.oracle();

        let cells: Vec<(usize, usize)> = (0..reps)
            .flat_map(|k| ms.iter().map(move |&m| (k, m)))
            .collect();
        // errors[cell][t]
        let errors: Vec<Vec<f64>> = cells
            .par_iter()
            .map(|&(k, m)| {
                let ctx = format!("cell (M={m}, repetition={k})");
                let rep_seed = derive_seed(cfg.seed, &[1, k as u64]);
                let split = source
                    .split(n, n_test, rep_seed)
                    .map_err(|e| annotate(e, &ctx))?;
                let fs = sample_features(map.clone(), m, derive_seed(rep_seed, &[2, m as u64]))
                    .map_err(|e| annotate(e, &ctx))?;
                let design =
                    build_design(&fs, &split.train.inputs).map_err(|e| annotate(e, &ctx))?;
                let models =
                    fit_gd_path(&design, &split.train.stacked_outputs(), cfg.step_size, &ts)
                        .map_err(|e| annotate(e, &ctx))?;
                models
                    .iter()
                    .zip(&ts)
                    .map(|(model, t)| {
                        let o = oracle.as_ref().map(|f| f as &dyn Fn(&[f64]) -> _);
                        let r = evaluate(model, &split.test.inputs, &split.test.outputs, o)
                            .map_err(|e| {
                                annotate(e, &format!("cell (M={m}, T={t}, repetition={k})"))
                            })?;
                        Ok(r.excess_l2.unwrap_or(r.empirical_risk))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;

        let mut table = Table::new(["m", "t", "mean_error", "std_error"]);
        let mut means = vec![vec![0.0; ts.len()]; ms.len()];
        for (i, &m) in ms.iter().enumerate() {
            for (j, &t) in ts.iter().enumerate() {
                let vals: Vec<f64> = (0..reps).map(|k| errors[k * ms.len() + i][j]).collect();
                let (mean, std) = mean_std(&vals);
                means[i][j] = mean;
                table.push(vec![
                    Cell::from(m),
                    Cell::from(t),
                    Cell::from(mean),
                    Cell::from(std),
                ]);
            }
        }
        let metric = if oracle.is_some() {
            "excess L2 error"
        } else {
            "test risk"
        };
        let mut out = Outcome {
            tables: vec![("heatmap.csv".into(), table)],
            inputs: source.inputs(),
            notes: vec![format!(
                "{metric}; feature map {} with p = {p}; {reps} repetitions",
                map.name()
            )],
            ..Outcome::default()
        };
        if cfg.svg {
            out.files.push((
                "heatmap.svg".into(),
                render_svg(&ms, &ts, &means).into_bytes(),
            ));
        }
        Ok(out)
    }
}

/// Cells colored on a linear ramp of `log10(error)`, rows `M`, columns `T`.
fn render_svg(ms: &[usize], ts: &[u64], means: &[Vec<f64>]) -> String {
    let (cw, ch, left, top) = (48.0, 28.0, 70.0, 20.0);
    let logs: Vec<f64> = means
        .iter()
        .flatten()
        .map(|v| v.max(1e-300).log10())
        .collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let width = left + cw * ts.len() as f64 + 10.0;
    let height = top + ch * ms.len() as f64 + 30.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-size=\"10\">\n"
    );
    for (i, m) in ms.iter().enumerate() {
        let y = top + ch * i as f64;
        s += &format!("<text x=\"4\" y=\"{}\">M={m}</text>\n", y + ch * 0.6);
        for (j, _) in ts.iter().enumerate() {
            let x = left + cw * j as f64;
            let f = (means[i][j].max(1e-300).log10() - lo) / span;
            let (r, b) = ((255.0 * f).round() as u8, (255.0 * (1.0 - f)).round() as u8);
            s += &format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cw}\" height=\"{ch}\" fill=\"rgb({r},64,{b})\"/>\n"
            );
        }
    }
    for (j, t) in ts.iter().enumerate() {
        let x = left + cw * j as f64 + 4.0;
        s += &format!(
            "<text x=\"{x}\" y=\"{}\">T={t}</text>\n",
            top + ch * ms.len() as f64 + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}
