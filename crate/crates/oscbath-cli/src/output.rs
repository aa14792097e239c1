use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::exit::CliError;

/// Provenance record written next to every output as `<out>.meta.json`, or to stderr when the
/// output goes to stdout.
#[derive(Debug, Serialize)]
pub struct Metadata {
    pub command: String,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub grid_n: usize,
    pub r_max: f64,
    pub threads: usize,
    /// Achieved residuals and errors, keyed by name.
    pub tolerances: BTreeMap<String, f64>,
    pub wall_time_s: f64,
    pub output: Option<PathBuf>,
}

/// sha256 over the canonical JSON of the resolved config, the command and every input file.
pub fn config_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Run {
    pub meta: Metadata,
    started: Instant,
}

impl Run {
    pub fn new(command: &str, config_hash: String, seed: u64, grid: oscbath_core::radial::GridSpec, out: Option<PathBuf>) -> Self {
        Run {
            meta: Metadata {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION"),
                config_hash,
                seed,
                grid_n: grid.n,
                r_max: grid.r_max,
                threads: rayon::current_num_threads(),
                tolerances: BTreeMap::new(),
                wall_time_s: 0.0,
                output: out,
            },
            started: Instant::now(),
        }
    }

    pub fn tolerance(&mut self, name: &str, value: f64) {
        self.meta.tolerances.insert(name.to_string(), value);
    }

    /// Writes `body` to the output path or stdout, then the metadata.
    pub fn finish(mut self, body: &[u8]) -> Result<(), CliError> {
        self.meta.wall_time_s = self.started.elapsed().as_secs_f64();
        let meta = serde_json::to_string_pretty(&self.meta)?;
        match &self.meta.output {
            Some(path) => {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                fs::write(path, body)?;
                fs::write(meta_path(path), meta + "\n")?;
                log::info!("wrote {}", path.display());
            }
            None => {
                io::stdout().write_all(body)?;
                eprintln!("{meta}");
            }
        }
        Ok(())
    }
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

pub fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::config(e.to_string()))
}

pub fn json_bytes<S: Serialize>(value: &S) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}
