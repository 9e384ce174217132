//! Scenario files.
//!
//! A scenario is a TOML document; unknown keys are rejected. Every section but
//! `grid` and `loads` is optional and falls back to the defaults below.
//!
//! ```
//! use plate_duality::config::{ScenarioConfig, LoadSpec};
//! let cfg: ScenarioConfig = r#"
//!     name = "uniform"
//!     [grid]
//!     nx = 9
//!     ny = 9
//!     [loads]
//!     kind = "expression"
//!     p = "1e3 * sin(pi*x)"
//! "#.parse().unwrap();
//! assert!(matches!(cfg.loads, LoadSpec::Expression { .. }));
//! assert_eq!(cfg.seed, 0);
//! ```
//!
//! | section | key | default |
//! |---|---|---|
//! | top | `name`, `seed`, `load_scale` | `"scenario"`, `0`, `1` |
//! | `grid` | `nx`, `ny`, `lx`, `ly` | `lx = ly = 1` |
//! | `material` | `youngs`, `poisson`, `thickness` | steel, `t = 0.01` |
//! | `loads` | `kind` = `zero`, `expression` (`p`, `p1`, `p2`), `csv` (`path`), `manufactured` (`target` = `compressive` or `bump`, `c`, `amplitude`) | |
//! | top | `epsilon` | `"auto"`, or a positive number |
//! | `multidual` | `k`, `k_sweep_len`, `r`, `r1`, `r2` | `k` from the solution, `6`, `1e-3` |
//! | `tolerances` | `newton_tol`, `gap_tol`, `ctol`, `eig_tol`, `weak_tol`, `stationarity_tol`, `concavity_tol`, `sample_tol`, `gradcheck_tol` | see [`Tolerances`] |
//! | `sampling` | `n_samples`, `n_dirs`, `weak_states`, `weak_pairs`, `gradcheck_states` | `200, 50, 50, 10, 20` |
//! | `solver` | `continuation_steps`, `max_iter` | `2, 50` |
//! | `checks` | `gap`, `weak_duality`, `primal_dual`, `multidual`, `extremality` | all `true` |
//! | `sweep` | `epsilon`, `k`, `load_scale`, `grid` | empty lists |
//! | `output` | `dir` | `out/<name>` |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    #[serde(default)]
    pub material: MaterialSpec,
    pub loads: LoadSpec,
    #[serde(default = "default_load_scale")]
    pub load_scale: f64,
    #[serde(default)]
    pub epsilon: EpsilonPolicy,
    #[serde(default)]
    pub multidual: MultiDualSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub sweep: SweepLists,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_load_scale() -> f64 {
    1.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "one")]
    pub lx: f64,
    #[serde(default = "one")]
    pub ly: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSpec {
    pub youngs: f64,
    pub poisson: f64,
    pub thickness: f64,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        MaterialSpec { youngs: 2.1e11, poisson: 0.3, thickness: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// In-plane compression with a superposed bump.
    Compressive,
    /// A clamped deflection bump alone.
    Bump,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LoadSpec {
    Zero {},
    /// Expressions in `x`, `y`; a missing component is zero.
    Expression {
        #[serde(default)]
        p: Option<String>,
        #[serde(default)]
        p1: Option<String>,
        #[serde(default)]
        p2: Option<String>,
    },
    /// Per-node file with header `i,j,p,p1,p2` over interior nodes. Relative
    /// paths resolve against the scenario file.
    Csv { path: PathBuf },
    /// Loads for which a known state is an exact discrete solution.
    Manufactured {
        target: Target,
        #[serde(default)]
        c: f64,
        amplitude: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EpsilonPolicy {
    /// A tenth of the way into the admissible interval.
    #[default]
    Auto,
    Fixed(f64),
}

impl<'de> Deserialize<'de> for EpsilonPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Num(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "auto" => Ok(EpsilonPolicy::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("epsilon must be \"auto\" or a number, got \"{w}\""))),
            Raw::Num(v) => Ok(EpsilonPolicy::Fixed(v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiDualSpec {
    pub k: Option<f64>,
    pub k_sweep_len: usize,
    pub r: f64,
    pub r1: f64,
    pub r2: f64,
}

impl Default for MultiDualSpec {
    fn default() -> Self {
        MultiDualSpec { k: None, k_sweep_len: 6, r: 1e-3, r1: 1e-3, r2: 1e-3 }
    }
}

/// Check tolerances. Relative ones are scaled by `1 + |J(u₀)|` unless stated.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub newton_tol: f64,
    pub gap_tol: f64,
    /// Equilibrium tolerance of `C*`, relative to `1 + ‖f‖`.
    pub ctol: f64,
    /// Eigenvalues below `eig_tol · λ_max` count as zero.
    pub eig_tol: f64,
    pub weak_tol: f64,
    pub stationarity_tol: f64,
    pub concavity_tol: f64,
    pub sample_tol: f64,
    /// Absolute bound on the relative gradient-check errors.
    pub gradcheck_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            newton_tol: 1e-10,
            gap_tol: 1e-8,
            ctol: 1e-8,
            eig_tol: 1e-10,
            weak_tol: 1e-10,
            stationarity_tol: 1e-6,
            concavity_tol: 1e-8,
            sample_tol: 1e-8,
            gradcheck_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    pub n_samples: usize,
    pub n_dirs: usize,
    pub weak_states: usize,
    pub weak_pairs: usize,
    pub gradcheck_states: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { n_samples: 200, n_dirs: 50, weak_states: 50, weak_pairs: 10, gradcheck_states: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub continuation_steps: usize,
    pub max_iter: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec { continuation_steps: 2, max_iter: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Checks {
    pub gap: bool,
    pub weak_duality: bool,
    pub primal_dual: bool,
    pub multidual: bool,
    pub extremality: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Checks { gap: true, weak_duality: true, primal_dual: true, multidual: true, extremality: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepLists {
    pub epsilon: Vec<f64>,
    pub k: Vec<f64>,
    pub load_scale: Vec<f64>,
    /// Node counts per side; the grid stays square in node count.
    pub grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

/// Environment variable that overrides the output root.
pub const OUT_ENV: &str = "PLATE_DUALITY_OUT";

impl FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ScenarioConfig {
    /// Reads and validates a scenario file; relative load paths are resolved
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ScenarioConfig = text.parse()?;
        if let LoadSpec::Csv { path: p } = &mut cfg.loads {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let GridSpec { nx, ny, lx, ly } = self.grid;
        if nx < 5 || ny < 5 {
            return bad(format!("grid needs at least 5 nodes per side, got {nx}x{ny}"));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return bad(format!("grid lengths must be positive, got {lx}, {ly}"));
        }
        let m = self.material;
        crate::material::MaterialTensor::isotropic(m.youngs, m.poisson, m.thickness)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !self.load_scale.is_finite() {
            return bad("load_scale must be finite".into());
        }
        if let EpsilonPolicy::Fixed(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("epsilon must be positive, got {e}"));
            }
        }
        if let Some(k) = self.multidual.k {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("multidual.k must be positive, got {k}"));
            }
        }
        let md = self.multidual;
        if md.k_sweep_len < 2 {
            return bad("multidual.k_sweep_len must be at least 2".into());
        }
        for (name, v) in [("r", md.r), ("r1", md.r1), ("r2", md.r2)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("multidual.{name} must be positive, got {v}"));
            }
        }
        let t = self.tolerances;
        for (name, v) in [
            ("newton_tol", t.newton_tol),
            ("gap_tol", t.gap_tol),
            ("ctol", t.ctol),
            ("eig_tol", t.eig_tol),
            ("weak_tol", t.weak_tol),
            ("stationarity_tol", t.stationarity_tol),
            ("concavity_tol", t.concavity_tol),
            ("sample_tol", t.sample_tol),
            ("gradcheck_tol", t.gradcheck_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("tolerances.{name} must be positive, got {v}"));
            }
        }
        if self.solver.max_iter == 0 || self.solver.continuation_steps == 0 {
            return bad("solver.max_iter and solver.continuation_steps must be positive".into());
        }
        if let LoadSpec::Expression { p, p1, p2 } = &self.loads {
            for e in [p, p1, p2].into_iter().flatten() {
                e.parse::<crate::expr::Expr>().map_err(|err| Error::Config(format!("load expression \"{e}\": {err}")))?;
            }
        }
        if let LoadSpec::Manufactured { c, amplitude, .. } = self.loads {
            if !(c.is_finite() && amplitude.is_finite()) {
                return bad("manufactured target parameters must be finite".into());
            }
        }
        Ok(())
    }

    fn check_paths(&self) -> Result<()> {
        if let LoadSpec::Csv { path } = &self.loads {
            if !path.is_file() {
                return Err(Error::Config(format!("load file {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// Output directory: `$PLATE_DUALITY_OUT/<name>` when the variable is set,
    /// else `output.dir`, else `out/<name>`.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(&self.name),
            _ => self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.name)),
        }
    }
}
