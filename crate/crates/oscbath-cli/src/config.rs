use std::fs;
use std::path::{Path, PathBuf};

use oscbath_core::dyson::{AtomicMeasure, DysonConfig};
use oscbath_core::formfactor::{FormFactor, FormFactorSpec, ModelParams};
use oscbath_core::radial::GridSpec;
use oscbath_core::symplectic::ElementSpec;
use serde::{Deserialize, Serialize};

use crate::exit::CliError;

pub const DEFAULT_SEED: u64 = 42;
pub const MIN_GRID: usize = 64;

/// Input files named in the config; relative paths resolve against the config's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub f1: Option<PathBuf>,
    pub f2: Option<PathBuf>,
    pub f3: Option<PathBuf>,
    pub weyl: Option<PathBuf>,
    pub measure: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub form_factor: FormFactorSpec,
    pub beta: f64,
    pub lambda: f64,
    pub grid: GridSpec,
    pub seed: Option<u64>,
    pub inputs: Inputs,
    /// Output path used when `--out` is absent.
    pub out: Option<PathBuf>,
    pub dyson: DysonConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            form_factor: FormFactorSpec::default(),
            beta: 1.0,
            lambda: 0.1,
            grid: GridSpec::default(),
            seed: None,
            inputs: Inputs::default(),
            out: None,
            dyson: DysonConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads and validates a config file; the default config when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = parse_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.inputs.f1, &mut cfg.inputs.f2, &mut cfg.inputs.f3, &mut cfg.inputs.weyl, &mut cfg.inputs.measure]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = &mut cfg.out {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(CliError::config(format!("beta must be positive, got {}", self.beta)));
        }
        if !self.lambda.is_finite() {
            return Err(CliError::config("lambda must be finite"));
        }
        if self.grid.n < MIN_GRID {
            return Err(CliError::config(format!("grid.n must be at least {MIN_GRID}, got {}", self.grid.n)));
        }
        if !(self.grid.r_max > 0.0 && self.grid.r_max.is_finite()) {
            return Err(CliError::config(format!("grid.r_max must be positive, got {}", self.grid.r_max)));
        }
        for p in [&self.inputs.f1, &self.inputs.f2, &self.inputs.f3, &self.inputs.weyl, &self.inputs.measure]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(CliError::config(format!("referenced file {} does not exist", p.display())));
            }
        }
        self.dyson.validate().map_err(|e| CliError::config(format!("dyson: {e}")))
    }

    pub fn form_factor(&self) -> Result<FormFactor, CliError> {
        FormFactor::from_spec(&self.form_factor).map_err(|e| CliError::config(format!("form_factor: {e}")))
    }

    pub fn params(&self, ff: &FormFactor) -> Result<ModelParams, CliError> {
        ModelParams::new(ff, self.beta, self.lambda).map_err(|e| CliError::config(e.to_string()))
    }
}

/// Parses JSON, reporting the line and column of any syntax or schema error.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.rsplit_once(" at line ").map_or(msg.as_str(), |(m, _)| m);
        CliError::config(format!("{}:{}:{}: {msg}", path.display(), e.line(), e.column()))
    })
}

pub fn read_element(path: &Path) -> Result<ElementSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    parse_json(&text, path)
}

pub fn read_measure(path: &Path) -> Result<AtomicMeasure, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    parse_json(&text, path)
}

/// Inclusive range `start:stop:step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl std::str::FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("expected start:stop:step, got {s:?}"));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
        let sweep = Sweep {
            start: num(a)?,
            stop: num(b)?,
            step: num(c)?,
        };
        if !(sweep.step > 0.0 && sweep.start.is_finite() && sweep.stop >= sweep.start) {
            return Err(format!("need a positive step and stop >= start, got {s:?}"));
        }
        Ok(sweep)
    }
}

impl Sweep {
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        // rounded to 12 decimals so 0.05 + 2 * 0.05 reads as 0.15
        (0..count).map(|k| ((self.start + k as f64 * self.step) * 1e12).round() / 1e12).collect()
    }
}
