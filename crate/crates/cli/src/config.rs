//! Optional defaults file; command-line flags take precedence.

use std::path::{Path, PathBuf};

use anyhow::Context;
use richardson_core::{CriticalOptions, StepControl, SweepOptions};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Output directory used when `--dir` is absent.
    pub dir: Option<PathBuf>,
    /// Grid step of the determinant scan.
    pub grid_step: Option<f64>,
    /// Starting coupling magnitude of weak-coupling initialisation.
    pub g_init: Option<f64>,
    pub initial_step: Option<f64>,
    pub min_step: Option<f64>,
    pub max_step: Option<f64>,
    pub newton_max_iter: Option<usize>,
    /// Half-width of the excluded window around each critical coupling.
    pub critical_window: Option<f64>,
    /// Tolerance of `verify`.
    pub verify_tol: Option<f64>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| crate::UsageError(format!("config {}: {}", path.display(), e.message())))?;
        Ok(cfg)
    }

    pub fn critical_options(&self) -> CriticalOptions {
        let mut opts = CriticalOptions::default();
        if let Some(step) = self.grid_step {
            opts.grid_step = step;
        }
        opts.g_init = self.g_init.or(opts.g_init);
        opts
    }

    pub fn sweep_options(&self) -> SweepOptions {
        let d = StepControl::default();
        let step = StepControl {
            initial_step: self.initial_step.unwrap_or(d.initial_step),
            min_step: self.min_step.unwrap_or(d.min_step),
            max_step: self.max_step.unwrap_or(d.max_step),
            newton_max_iter: self.newton_max_iter.unwrap_or(d.newton_max_iter),
        };
        let mut opts =
            SweepOptions { step, critical: self.critical_options(), g_init: self.g_init, ..SweepOptions::default() };
        if let Some(w) = self.critical_window {
            opts.critical_window = w;
        }
        opts
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).or_else(|| self.dir.clone()).unwrap_or_else(|| PathBuf::from("."))
    }
}
