//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status if any criterion fails. Pass criterion numbers as
//! arguments to run a subset.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use specrf::dataio::{Cell, Table};
use specrf::estimator::{fit_closed, fit_gd};
use specrf::features::{
    build_design, kernel_approx, kernel_exact, ntk_feature_map, sample_features, NtkConfig,
    RandomFourierMap,
};
use specrf::neuralop::{empirical_ntk, init_symmetric, ShallowNO};
use specrf::rng::derive_seed;
use specrf::spectral::{
    filter_registry, q_grid, uniform_grid, verify_filter_constants, Landweber, Qualification,
};
use specrf::synthetic::{fit_rate, make_problem, quadrature_grid, NoiseModel, SpectrumSpec};
use specrf_cli::{run_experiment, Preset, RunConfig};

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    check: Check,
}

fn main() {
    let selected: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria = [
        Criterion {
            id: 1,
            name: "filter axioms",
            limit: secs(5),
            check: filter_axioms,
        },
        Criterion {
            id: 2,
            name: "closed form equals gradient descent",
            limit: secs(10),
            check: oracle_equivalence,
        },
        Criterion {
            id: 3,
            name: "rate recovery",
            limit: secs(1200),
            check: rate_recovery,
        },
        Criterion {
            id: 4,
            name: "feature-count plateau",
            limit: secs(300),
            check: feature_plateau,
        },
        Criterion {
            id: 5,
            name: "kernel Monte Carlo rate",
            limit: secs(120),
            check: kernel_mc_rate,
        },
        Criterion {
            id: 6,
            name: "concentration validity",
            limit: secs(600),
            check: concentration,
        },
        Criterion {
            id: 7,
            name: "NTK correctness",
            limit: secs(60),
            check: ntk_correctness,
        },
        Criterion {
            id: 8,
            name: "linearization sanity",
            limit: secs(300),
            check: linearization,
        },
        Criterion {
            id: 9,
            name: "determinism",
            limit: secs(600),
            check: determinism,
        },
    ];
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let start = Instant::now();
        let result = (c.check)();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over the time limit")),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "{} {} {} ({:.1} s of {} s): {}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            detail
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn check(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(json: &str) -> RunConfig {
    RunConfig::from_json(json)
        .expect("valid config")
        .resolve(Preset::Desk)
        .expect("resolves")
}

fn table<'a>(tables: &'a [(String, Table)], name: &str) -> &'a Table {
    &tables
        .iter()
        .find(|(n, _)| n == name)
        .expect("table present")
        .1
}

fn column(t: &Table, name: &str) -> Vec<f64> {
    let k = t
        .header
        .iter()
        .position(|h| h == name)
        .expect("column present");
    t.rows
        .iter()
        .map(|r| match &r[k] {
            Cell::Float(v) => *v,
            Cell::Int(v) => *v as f64,
            Cell::Text(s) => s.parse().unwrap_or(f64::NAN),
        })
        .collect()
}

fn filter_axioms() -> Result<String, String> {
    let t = uniform_grid(100);
    let mut counts = Vec::new();
    for name in ["tikhonov", "landweber", "cutoff"] {
        let f = filter_registry()
            .build(name, &serde_json::Value::Null)
            .map_err(|e| e.to_string())?;
        let q_max = match f.qualification() {
            Qualification::Finite(nu) => nu,
            Qualification::Unbounded => 3.0,
        };
        let rep = verify_filter_constants(f.as_ref(), &t, &f.lambda_grid(100), &q_grid(7, q_max))
            .map_err(|e| e.to_string())?;
        counts.push(format!("{name} {} flags", rep.flags().len()));
        if rep.flagged() {
            return Err(counts.join(", "));
        }
    }
    Ok(counts.join(", "))
}

fn oracle_equivalence() -> Result<String, String> {
    let problem = make_problem(&SpectrumSpec::new(1.0, 32).unwrap(), 0.5, 1.0, 1).unwrap();
    let noise = NoiseModel::uniform(0.2).unwrap();
    let map = Arc::new(RandomFourierMap::new(1, 0.3).unwrap());
    let mut worst: f64 = 0.0;
    for k in 0..50u64 {
        let h = derive_seed(2024, &[k]);
        let n = 10 + (h % 91) as usize;
        let m = 2 + ((h >> 8) % 49) as usize;
        let alpha = [0.25, 0.5, 1.0][((h >> 16) % 3) as usize];
        let steps = (1.0 / alpha) as u64 + (h >> 24) % 500;
        let data = problem.sample_dataset(n, &noise, h).unwrap();
        let fs = sample_features(map.clone(), m, h ^ 1).unwrap();
        let design = build_design(&fs, &data.inputs).unwrap();
        let v = data.stacked_outputs();
        let lw = Landweber::new(alpha).unwrap();
        let closed =
            fit_closed(&design, &v, &lw, lw.lambda_for_steps(steps)).map_err(|e| e.to_string())?;
        let gd = fit_gd(&design, &v, alpha, steps).map_err(|e| e.to_string())?;
        let rel = (closed.theta() - gd.theta()).norm() / gd.theta().norm().max(1e-300);
        worst = worst.max(rel);
    }
    check(
        worst <= 1e-9,
        format!("worst relative error {worst:.3e} over 50 instances"),
    )
}

fn rate_recovery() -> Result<String, String> {
    // lambda_n = n^{-1/(2r+b)}: the log^3(2/delta) factor is absorbed into C
    let c = 1.0 / 20f64.ln().powi(3);
    let mut parts = Vec::new();
    let mut ok = true;
    for (r, b) in [(0.5, 1.0), (1.0, 0.5)] {
        let start = Instant::now();
        let cfg = config(&format!(
            r#"{{"seed": 11, "problem": {{"kind": "synthetic", "r": {r}, "b": {b}, "d_max": 256, "sampling": "proportional"}},
                "multipliers": {{"lambda": {c}, "features": 1.0}}, "repetitions": 20,
                "grids": {{"n": [500, 1000, 2000, 4000, 8000]}}}}"#
        ));
        let out = run_experiment("rates", cfg).map_err(|e| e.to_string())?;
        let slope = column(
            table(&out.outcome.tables, "rates_summary.csv"),
            "fitted_slope",
        )[0];
        let expected = -r / (2.0 * r + b);
        let secs = start.elapsed().as_secs_f64();
        ok &= (slope - expected).abs() <= 0.1 && secs < 600.0;
        parts.push(format!(
            "(r={r}, b={b}) slope {slope:.3} vs {expected:.3} in {secs:.0} s"
        ));
    }
    check(ok, parts.join("; "))
}

fn feature_plateau() -> Result<String, String> {
    let n = 1000usize;
    let p = 3.0;
    let m_small = (4.0 * (n as f64).sqrt() * p).ceil() as usize;
    let m_large = (16.0 * (n as f64).sqrt() * p).ceil() as usize;
    let c = 1.0 / 20f64.ln().powi(3);
    let schedule = specrf::synthetic::rate_schedule(
        n,
        0.5,
        1.0,
        0.1,
        1,
        specrf::synthetic::Multipliers {
            lambda: c,
            features: 1.0,
        },
    )
    .unwrap();
    let steps = (1.0 / (0.5 * schedule.lambda)).ceil() as u64;
    let cfg = config(&format!(
        r#"{{"seed": 5, "problem": {{"kind": "synthetic", "r": 0.5, "b": 1.0}}, "n_train": {n}, "n_test": 1000,
            "repetitions": 20, "grids": {{"m": [{m_small}, {m_large}], "t": [{steps}]}}}}"#
    ));
    let out = run_experiment("sweep-heatmap", cfg).map_err(|e| e.to_string())?;
    let errs = column(table(&out.outcome.tables, "heatmap.csv"), "mean_error");
    let gap = (errs[0] - errs[1]).abs() / errs[1];
    check(
        gap <= 0.05,
        format!(
            "T={steps}: error {:.4} at M={m_small}, {:.4} at M={m_large}, gap {:.2}%",
            errs[0],
            errs[1],
            100.0 * gap
        ),
    )
}

fn kernel_mc_rate() -> Result<String, String> {
    let d = 16;
    let problem = make_problem(&SpectrumSpec::new(1.0, d).unwrap(), 0.5, 1.0, 0).unwrap();
    let map = problem.feature_map();
    // midpoint rule is exact for the squared difference of rank-d kernels
    let grid = quadrature_grid(2 * d);
    let pts: Vec<f64> = grid.iter().copied().collect();
    let exact: Vec<f64> = pts
        .iter()
        .flat_map(|&u| pts.iter().map(move |&v| (u, v)))
        .map(|(u, v)| kernel_exact(map.as_ref(), &[u], &[v]).unwrap()[(0, 0)])
        .collect();
    let ms = [16usize, 64, 256, 1024];
    let mut means = Vec::new();
    for &m in &ms {
        let mut total = 0.0;
        for s in 0..100u64 {
            let fs = sample_features(map.clone(), m, derive_seed(77, &[m as u64, s])).unwrap();
            let mut sq = 0.0;
            for (k, (u, v)) in pts
                .iter()
                .flat_map(|&u| pts.iter().map(move |&v| (u, v)))
                .enumerate()
            {
                let diff = kernel_approx(&fs, &[u], &[v]).unwrap()[(0, 0)] - exact[k];
                sq += diff * diff;
            }
            total += (sq / (pts.len() * pts.len()) as f64).sqrt();
        }
        means.push(total / 100.0);
    }
    let sizes: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    let slope = fit_rate(&sizes, &means).map_err(|e| e.to_string())?;
    check(
        (slope + 0.5).abs() <= 0.15,
        format!("slope {slope:.3}, mean HS errors {means:?}"),
    )
}

fn concentration() -> Result<String, String> {
    let events: Vec<String> = [(0.05, 400, 400), (0.2, 100, 100)]
        .iter()
        .flat_map(|&(l, n, m)| {
            (1..=9).map(move |k| {
                format!(r#"{{"id": "E{k}", "lambda": {l}, "n": {n}, "m": {m}, "delta": 0.1}}"#)
            })
        })
        .collect();
    let cfg = config(&format!(
        r#"{{"seed": 3, "problem": {{"kind": "synthetic", "r": 0.5, "b": 1.0, "d_max": 64}},
            "verify": {{"trials": 200, "events": [{}]}}}}"#,
        events.join(",")
    ));
    let out = run_experiment("verify", cfg).map_err(|e| e.to_string())?;
    let t = table(&out.outcome.tables, "events.csv");
    let rates = column(t, "violation_rate");
    let worst = rates.iter().copied().fold(0.0, f64::max);
    check(
        out.outcome.violations.is_empty() && worst <= 0.1,
        format!(
            "{} event runs at 200 trials, worst violation rate {worst}",
            rates.len()
        ),
    )
}

fn pseudo(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| {
        let h = derive_seed(seed, &[i as u64, j as u64]);
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

fn ntk_correctness() -> Result<String, String> {
    let mut worst_kernel: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let mut worst_init: f64 = 0.0;
    for (k, act) in ["tanh", "softplus", "identity"].iter().enumerate() {
        let seed = k as u64;
        let arch = NtkConfig::new(act, 6, 1);
        let no = init_symmetric(&arch, 32, 1.0, seed).map_err(|e| e.to_string())?;
        let map = Arc::new(ntk_feature_map(arch.clone()).unwrap());
        let fs = map.feature_set(no.b()).unwrap();
        for t in 0..5 {
            let (u, v) = (
                pseudo(1, 6, 10 * seed + t),
                pseudo(1, 6, 100 + 10 * seed + t),
            );
            let a = empirical_ntk(&no, u.as_slice(), v.as_slice()).unwrap();
            let b = kernel_approx(&fs, u.as_slice(), v.as_slice()).unwrap();
            worst_kernel = worst_kernel.max((a - b).amax());
            worst_init = worst_init.max(
                no.forward(&(pseudo(1, 6, 500 + t) * 3.0).as_slice().to_vec())
                    .unwrap()
                    .amax(),
            );
        }

        let width = 6;
        let net = ShallowNO::from_weights(
            &arch,
            1.0,
            pseudo(width, 1, 900 + seed).column(0).into_owned(),
            pseudo(width, arch.feature_dim(), 950 + seed),
        )
        .unwrap();
        let (x, y) = (pseudo(4, 6, 1000 + seed), pseudo(4, 6, 1100 + seed));
        let g = net.gradients(&x, &y).unwrap();
        let h = 1e-6;
        let loss = |n: &ShallowNO| n.loss(&x, &y).unwrap();
        let mut fd_a = DVector::zeros(width);
        let mut fd_b = DMatrix::zeros(width, arch.feature_dim());
        for m in 0..width {
            let (mut p, mut q) = (net.clone(), net.clone());
            p.a_mut()[m] += h;
            q.a_mut()[m] -= h;
            fd_a[m] = (loss(&p) - loss(&q)) / (2.0 * h);
            for j in 0..arch.feature_dim() {
                let (mut p, mut q) = (net.clone(), net.clone());
                p.b_mut()[(m, j)] += h;
                q.b_mut()[(m, j)] -= h;
                fd_b[(m, j)] = (loss(&p) - loss(&q)) / (2.0 * h);
            }
        }
        worst_grad = worst_grad
            .max((&fd_a - &g.a).norm() / g.a.norm())
            .max((&fd_b - &g.b).norm() / g.b.norm());
    }
    check(
        worst_kernel <= 1e-10 && worst_grad <= 1e-5 && worst_init <= 1e-12,
        format!("kernel gap {worst_kernel:.2e}, gradient error {worst_grad:.2e}, init output {worst_init:.2e}"),
    )
}

fn linearization() -> Result<String, String> {
    let identity = config(
        r#"{"seed": 9, "grids": {"m": [4, 16, 64, 256, 1024]},
            "ntk": {"activation": "identity", "groups": "input-only", "step_size": 0.05, "steps": 40,
                    "task": {"grid_points": 8}, "seeds": 3}}"#,
    );
    let out = run_experiment("ntk-compare", identity).map_err(|e| e.to_string())?;
    let worst_identity = column(
        table(&out.outcome.tables, "ntk_compare_runs.csv"),
        "discrepancy",
    )
    .into_iter()
    .fold(0.0, f64::max);

    let tanh = config(r#"{"seed": 9, "grids": {"m": [64, 256, 1024]}, "ntk": {"seeds": 10}}"#);
    let out = run_experiment("ntk-compare", tanh).map_err(|e| e.to_string())?;
    let medians = column(
        table(&out.outcome.tables, "ntk_compare.csv"),
        "median_discrepancy",
    );
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    check(
        worst_identity <= 1e-10 && decreasing,
        format!("identity worst {worst_identity:.2e}; tanh medians {medians:?}"),
    )
}

/// Small configs so every subcommand runs in seconds.
const DETERMINISM_CONFIGS: [(&str, &str); 6] = [
    ("gen", r#"{"n_train": 50, "n_test": 20}"#),
    (
        "fit",
        r#"{"n_train": 80, "n_test": 40, "grids": {"m": [10, 20], "lambda": [0.01, 0.1]}}"#,
    ),
    (
        "sweep-heatmap",
        r#"{"n_train": 60, "n_test": 30, "repetitions": 3, "grids": {"m": [8, 16], "t": [2, 8]}, "svg": true}"#,
    ),
    (
        "rates",
        r#"{"repetitions": 2, "grids": {"n": [100, 200, 400]}, "problem": {"kind": "synthetic", "d_max": 32},
            "multipliers": {"lambda": 0.037}}"#,
    ),
    (
        "verify",
        r#"{"problem": {"kind": "synthetic", "d_max": 16},
            "verify": {"trials": 60, "events": [{"id": "E7", "lambda": 0.1, "n": 50, "m": 50}, {"id": "E4", "lambda": 0.1, "n": 50, "m": 50}]}}"#,
    ),
    (
        "ntk-compare",
        r#"{"grids": {"m": [8, 16]}, "ntk": {"seeds": 3, "steps": 10, "task": {"grid_points": 6}}}"#,
    ),
];

fn run_binary(cmd: &str, config: &Path, out: &Path, jobs: &str) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_specrf"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--seed", "42", "--jobs", jobs])
        .env_remove("SPECRF_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{cmd} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        ))
    }
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (cmd, json) in DETERMINISM_CONFIGS {
        let cfg = dir.path().join(format!("{cmd}.json"));
        std::fs::write(&cfg, json).map_err(|e| e.to_string())?;
        let (a, b) = (
            dir.path().join(format!("{cmd}-a")),
            dir.path().join(format!("{cmd}-b")),
        );
        run_binary(cmd, &cfg, &a, "1")?;
        run_binary(cmd, &cfg, &b, "3")?;
        let mut names: Vec<_> = std::fs::read_dir(&a)
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let (x, y) = (
                std::fs::read(a.join(&name)).unwrap(),
                std::fs::read(b.join(&name)).unwrap(),
            );
            if x != y {
                return Err(format!(
                    "{cmd}: {} differs between runs",
                    name.to_string_lossy()
                ));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} files byte-identical across 6 subcommands, 1 vs 3 threads"
    ))
}
