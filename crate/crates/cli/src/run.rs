//! The driver: resolve a config, run one experiment, write its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use specrf::dataio::{content_hash, write_bytes, Manifest, Table};
use specrf::{Error, Result};

use crate::config::{Preset, RunConfig};
use crate::experiments::{experiment_registry, Outcome};

pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "SPECRF_SEED";

/// Process exit status for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        Error::Consistency(_) => EXIT_VIOLATION,
        Error::Domain(_)
        | Error::Schedule(_)
        | Error::Config(_)
        | Error::UnsupportedOracle(_)
        | Error::Serde(_) => EXIT_CONFIG,
        Error::Internal(_) => 1,
    }
}

/// Seed precedence: command-line flag, then environment, then config.
pub fn effective_seed(config_seed: u64, flag: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| {
            Error::Config(format!(
                "{SEED_ENV}={v:?} is not an unsigned 64-bit integer"
            ))
        }),
        None => Ok(config_seed),
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub command: String,
    pub config: RunConfig,
    pub outcome: Outcome,
}

/// Runs `name` on a config that has already been resolved.
pub fn run_experiment(name: &str, config: RunConfig) -> Result<RunOutput> {
    if let Some(s) = &config.subcommand {
        if s != name {
            return Err(Error::Config(format!("config is for '{s}', not '{name}'")));
        }
    }
    let experiment = experiment_registry().build(name, &serde_json::Value::Null)?;
    let outcome = experiment.run(&config)?;
    Ok(RunOutput {
        command: name.to_owned(),
        config,
        outcome,
    })
}

/// Resolves, runs and writes in one call; returns the output directory.
pub fn run_to_dir(
    name: &str,
    config: RunConfig,
    preset: Preset,
    out: &Path,
) -> Result<(RunOutput, Manifest)> {
    let run = run_experiment(name, config.resolve(preset)?)?;
    let manifest = write_outputs(out, &run)?;
    Ok((run, manifest))
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes every table and file of `run` into `dir` followed by
/// `manifest.json` listing their content hashes.
pub fn write_outputs(dir: &Path, run: &RunOutput) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut outputs = BTreeMap::new();
    let mut write = |name: &str, bytes: &[u8]| -> Result<()> {
        write_bytes(&dir.join(name), bytes)?;
        outputs.insert(name.to_owned(), content_hash(bytes));
        Ok(())
    };
    for (name, table) in &run.outcome.tables {
        write(name, &Table::to_csv_bytes(table)?)?;
    }
    for (name, bytes) in &run.outcome.files {
        write(name, bytes)?;
    }
    let mut config = run.config.clone();
    config.out = None;
    config.subcommand = Some(run.command.clone());
    let mut notes = run.outcome.notes.clone();
    notes.extend(
        run.outcome
            .violations
            .iter()
            .map(|v| format!("violation: {v}")),
    );
    let manifest = Manifest {
        command: run.command.clone(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: run.config.seed,
        config: config.to_value(),
        inputs: run.outcome.inputs.iter().cloned().collect(),
        outputs,
        notes,
    };
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// `--out`, then the config's `out`, then `specrf-out/<command>`.
pub fn output_dir(flag: Option<PathBuf>, config: &RunConfig, command: &str) -> PathBuf {
    flag.or_else(|| config.out.clone())
        .unwrap_or_else(|| Path::new("specrf-out").join(command))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(effective_seed(1, None, None).unwrap(), 1);
        assert_eq!(effective_seed(1, None, Some("7")).unwrap(), 7);
        assert_eq!(effective_seed(1, Some(9), Some("7")).unwrap(), 9);
        assert!(matches!(
            effective_seed(1, None, Some("x")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("c".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Consistency("c".into())), EXIT_VIOLATION);
        let io_err = Error::Io {
            path: "x".into(),
            source: std::io::Error::other("boom"),
        };
        assert_eq!(exit_code(&io_err), EXIT_IO);
    }

    #[test]
    fn mismatched_subcommand_is_rejected() {
        let cfg = RunConfig::from_json(r#"{"subcommand": "rates"}"#)
            .unwrap()
            .resolve(Preset::Desk)
            .unwrap();
        assert!(matches!(run_experiment("gen", cfg), Err(Error::Config(_))));
    }
}
