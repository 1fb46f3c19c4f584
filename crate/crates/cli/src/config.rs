use std::path::{Path, PathBuf};

use clap::Args;
use relpose_core::estimator::RefinementConfig;
use relpose_core::evaluation::DEFAULT_MAX_OVERLAP_DEG;
use relpose_core::losses::LossMode;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_ENV: &str = "RELPOSE_CONFIG";

/// Everything a run depends on. Written verbatim into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub estimator: RefinementConfig,
    pub evaluation: EvaluationSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    /// Pairs drawn per object.
    pub pairs: usize,
    pub seed: u64,
    pub max_overlap_deg: f64,
    /// Worker threads; 0 means one per logical core.
    pub workers: usize,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            pairs: 1000,
            seed: 0,
            max_overlap_deg: DEFAULT_MAX_OVERLAP_DEG,
            workers: 0,
        }
    }
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid configuration: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("settings always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        let ev = &self.evaluation;
        if ev.pairs == 0 {
            return Err(CliError::Usage("pair count must be positive".into()));
        }
        if !(ev.max_overlap_deg > 0.0 && ev.max_overlap_deg <= 180.0) {
            return Err(CliError::Usage(format!(
                "overlap threshold must lie in (0, 180], got {}",
                ev.max_overlap_deg
            )));
        }
        Ok(())
    }
}

/// Parses `m,n`.
pub fn parse_lattice(s: &str) -> std::result::Result<(usize, usize), String> {
    let (m, n) = s
        .split_once(',')
        .ok_or_else(|| format!("expected m,n, got {s:?}"))?;
    let m: usize = m.trim().parse().map_err(|e| format!("bad viewpoint count {m:?}: {e}"))?;
    let n: usize = n.trim().parse().map_err(|e| format!("bad in-plane count {n:?}: {e}"))?;
    if m == 0 || n == 0 {
        return Err(format!("lattice must be positive, got {m},{n}"));
    }
    Ok((m, n))
}

/// Flags shared by every command that runs the estimator.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, env = CONFIG_ENV, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Loss terms: rgb+sem, rgb-only or sem-only.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<LossMode>,

    /// Keep back-facing triangles.
    #[arg(long)]
    pub no_culling: bool,

    /// Stop after the lattice search.
    #[arg(long)]
    pub init_only: bool,

    /// Gradient steps after initialization.
    #[arg(long)]
    pub iterations: Option<usize>,

    /// Viewpoints and in-plane angles, as m,n.
    #[arg(long, value_parser = parse_lattice, value_name = "M,N")]
    pub lattice: Option<(usize, usize)>,

    /// Side of the normalized object crop in pixels.
    #[arg(long)]
    pub crop: Option<usize>,

    /// Finite-difference step in radians.
    #[arg(long)]
    pub fd_eps: Option<f64>,

    /// Move the render window onto the query object's box centre.
    #[arg(long)]
    pub recenter: bool,
}

fn parse_mode(s: &str) -> std::result::Result<LossMode, String> {
    s.parse().map_err(|e: relpose_core::Error| e.to_string())
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        self.apply(&mut s.estimator);
        Ok(s)
    }

    pub fn apply(&self, c: &mut RefinementConfig) {
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if self.no_culling {
            c.cull = false;
        }
        if self.init_only {
            c.init_only = true;
        }
        if let Some(n) = self.iterations {
            c.iterations = n;
        }
        if let Some((m, n)) = self.lattice {
            c.viewpoints = m;
            c.inplane = n;
        }
        if let Some(r) = self.crop {
            c.crop = r;
        }
        if let Some(e) = self.fd_eps {
            c.fd_eps = e;
        }
        if self.recenter {
            c.recenter = true;
        }
    }
}
