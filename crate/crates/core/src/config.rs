//! Run configuration shared by the pipeline and the command line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlagError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Example {
    #[serde(rename = "u1-l1")]
    U1L1,
    #[serde(rename = "u1-l2")]
    U1L2,
    #[serde(rename = "so223")]
    So223,
    #[serde(rename = "conormal")]
    Conormal,
}

impl Example {
    pub const ALL: [Example; 4] = [Example::U1L1, Example::U1L2, Example::So223, Example::Conormal];

    pub fn id(self) -> &'static str {
        match self {
            Example::U1L1 => "u1-l1",
            Example::U1L2 => "u1-l2",
            Example::So223 => "so223",
            Example::Conormal => "conormal",
        }
    }

    pub fn n(self) -> usize {
        match self {
            Example::So223 => 6,
            _ => 5,
        }
    }

    /// Number of level components the example takes.
    pub fn level_len(self) -> usize {
        match self {
            Example::U1L1 | Example::U1L2 => 1,
            Example::So223 => 2,
            Example::Conormal => 0,
        }
    }

    fn default_h_grid(self) -> usize {
        match self {
            Example::So223 => 3,
            Example::Conormal => 1,
            _ => 20,
        }
    }

    /// Dimension of the sweep, `dim H/K`.
    pub fn sweep_dim(self) -> usize {
        match self {
            Example::U1L1 | Example::U1L2 => 1,
            Example::So223 => 4,
            Example::Conormal => 0,
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Example {
    type Err = SlagError;

    fn from_str(s: &str) -> Result<Self> {
        Example::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| SlagError::Config(format!("unknown example '{s}' (expected u1-l1, u1-l2, so223 or conormal)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub c: f64,
    pub t_max: f64,
    pub tol: f64,
    pub grid_size: Option<usize>,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig { c: 1.0, t_max: 14.0, tol: 1e-12, grid_size: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub omega: f64,
    pub perp: f64,
    pub angle: f64,
    pub phase: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        use crate::verify::*;
        Tolerances { omega: DEFAULT_TOL_OMEGA, perp: DEFAULT_TOL_PERP, angle: DEFAULT_TOL_ANGLE, phase: DEFAULT_TOL_PHASE }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    /// Grid points per sweep generator.
    pub h_grid: Option<usize>,
    /// Points sampled on the level set.
    pub v_count: Option<usize>,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { h_grid: None, v_count: None, seed: 1 }
    }
}

/// Minimum number of swept samples when `v_count` is left to the default.
pub const DEFAULT_SWEPT_SAMPLES: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: Option<usize>,
    pub ode: OdeConfig,
    pub tolerances: Tolerances,
    pub sampling: Sampling,
    pub example: Example,
    pub levels: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: None,
            ode: OdeConfig::default(),
            tolerances: Tolerances::default(),
            sampling: Sampling::default(),
            example: Example::U1L1,
            levels: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn for_example(example: Example, levels: Vec<f64>) -> Self {
        RunConfig { example, levels, ..RunConfig::default() }
    }

    /// Sets `v_count` so that the sweep has at least `samples` points.
    pub fn with_swept_samples(mut self, samples: usize) -> Self {
        let per_point = self.h_grid().pow(self.example.sweep_dim() as u32).max(1);
        self.sampling.v_count = Some(samples.div_ceil(per_point).max(2));
        self
    }

    pub fn h_grid(&self) -> usize {
        self.sampling.h_grid.unwrap_or(self.example.default_h_grid())
    }

    pub fn v_count(&self) -> usize {
        self.sampling.v_count.unwrap_or_else(|| {
            let per_point = self.h_grid().pow(self.example.sweep_dim() as u32).max(1);
            DEFAULT_SWEPT_SAMPLES.div_ceil(per_point).max(2)
        })
    }

    /// Fills defaults that depend on the example and checks every field.
    pub fn resolved(&self) -> Result<RunConfig> {
        let mut cfg = self.clone();
        let n = *cfg.n.get_or_insert(cfg.example.n());
        if n != cfg.example.n() {
            return Err(SlagError::Config(format!("example {} lives in T*S^{}, but n = {n}", cfg.example, cfg.example.n())));
        }
        cfg.sampling.h_grid = Some(cfg.h_grid());
        cfg.sampling.v_count = Some(cfg.v_count());
        if cfg.levels.is_empty() && cfg.example.level_len() > 0 {
            cfg.levels = vec![0.0; cfg.example.level_len()];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the ODE and tolerance sections only.
    pub fn validate_numerics(&self) -> Result<()> {
        let bad = |msg: String| Err(SlagError::Config(msg));
        if !(self.ode.c > 0.0 && self.ode.c.is_finite()) {
            return bad(format!("ode.c must be positive, got {}", self.ode.c));
        }
        if !(self.ode.t_max > 0.0 && self.ode.t_max.is_finite()) {
            return bad(format!("ode.t_max must be positive, got {}", self.ode.t_max));
        }
        if !(self.ode.tol > 0.0 && self.ode.tol < 1.0) {
            return bad(format!("ode.tol must lie in (0, 1), got {}", self.ode.tol));
        }
        if self.ode.grid_size.is_some_and(|g| g < 2) {
            return bad("ode.grid_size must be at least 2".into());
        }
        let t = &self.tolerances;
        for (name, v) in [("omega", t.omega), ("perp", t.perp), ("angle", t.angle), ("phase", t.phase)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("tolerances.{name} must lie in (0, 1), got {v}"));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_numerics()?;
        let bad = |msg: String| Err(SlagError::Config(msg));
        if self.sampling.h_grid == Some(0) {
            return bad("sampling.h_grid must be positive".into());
        }
        if self.sampling.v_count.is_some_and(|v| v < 2) {
            return bad("sampling.v_count must be at least 2".into());
        }
        if self.example.level_len() > 0 && self.levels.len() != self.example.level_len() {
            return bad(format!(
                "example {} takes {} level component(s), got {}",
                self.example,
                self.example.level_len(),
                self.levels.len()
            ));
        }
        if self.levels.iter().any(|l| !l.is_finite()) {
            return bad("levels must be finite".into());
        }
        Ok(())
    }
}
