//! Experiment configuration: a single JSON document with a versioned, strict schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::builtins::{Builtins, FlowParams, FunctionalParams};
use crate::error::{Error, Result};
use crate::ldp::FlowSpec;
use crate::model::{CylinderFunctional, Structure, TimeGrid, UncertaintySet};
use crate::paths::ControlPolicy;
use crate::pde::Boundary;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Gexp,
    Varrep,
    Rate,
    Ldp,
    Flow,
    Qv,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Gexp,
        ExperimentKind::Varrep,
        ExperimentKind::Rate,
        ExperimentKind::Ldp,
        ExperimentKind::Flow,
        ExperimentKind::Qv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Gexp => "gexp",
            ExperimentKind::Varrep => "varrep",
            ExperimentKind::Rate => "rate",
            ExperimentKind::Ldp => "ldp",
            ExperimentKind::Flow => "flow",
            ExperimentKind::Qv => "qv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub functional: Option<FunctionalConfig>,
    #[serde(default)]
    pub policies: PolicyConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub gexp: Option<GexpConfig>,
    #[serde(default)]
    pub varrep: Option<VarrepConfig>,
    #[serde(default)]
    pub rate: Option<RateConfig>,
    #[serde(default)]
    pub ldp: Option<LdpConfig>,
    #[serde(default)]
    pub flow: Option<FlowExperimentConfig>,
    #[serde(default)]
    pub qv: Option<QvConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    #[serde(default = "one")]
    pub dim: usize,
    pub sigma_lo2: f64,
    pub sigma_hi2: f64,
    #[serde(default)]
    pub structure: Option<Structure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    /// Monte Carlo and skeleton time steps.
    pub steps: usize,
    /// PDE lattice spacing.
    pub dx: f64,
    pub boundary: Boundary,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 100,
            dx: 0.02,
            boundary: Boundary::LinearExtrapolation,
        }
    }
}

/// Either a named builtin or a scalar table `phi(B_T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default = "default_cap")]
    pub cap: f64,
    #[serde(default)]
    pub table: Option<TableConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Constant volatility policies: the box corners plus `levels - 2` evenly spaced
/// isotropic interior levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub levels: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { levels: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Discretisation tolerance relative to the reference value.
    pub scheme_rel: f64,
    /// Monte Carlo confidence in standard errors.
    pub se_multiplier: f64,
    pub optimizer_grad: f64,
    /// Best constant policy within this fraction of the PDE value.
    pub sandwich_rel: f64,
    pub gap_rel: f64,
    pub pathwise_per_sqrt_dt: f64,
    pub ldp_rel: f64,
    /// Smallest accepted ratio of successive Euler skeleton errors.
    pub min_ratio: f64,
    /// Relative change of the flow-regularity constant under doubled paths.
    pub regularity_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            scheme_rel: 0.01,
            se_multiplier: 3.0,
            optimizer_grad: 1e-6,
            sandwich_rel: 0.02,
            gap_rel: 0.05,
            pathwise_per_sqrt_dt: 10.0,
            ldp_rel: 0.15,
            min_ratio: 1.8,
            regularity_rel: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GexpConfig {
    pub n_paths: usize,
    /// Also solve on the refined lattice.
    pub refine: bool,
    /// Require the best constant policy to reach the PDE value.
    pub check_attainment: bool,
}

impl Default for GexpConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            refine: false,
            check_attainment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarrepConfig {
    pub n_paths_star: usize,
    pub n_paths_samples: usize,
    pub random_controls: usize,
    pub control_bound: f64,
    /// Repeat the constructed drift on the refined grids.
    pub refine: bool,
}

impl Default for VarrepConfig {
    fn default() -> Self {
        Self {
            n_paths_star: 20_000,
            n_paths_samples: 2_000,
            random_controls: 100,
            control_bound: 2.0,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub name: String,
    #[serde(default = "one_f")]
    pub rate: f64,
    #[serde(default = "one_f")]
    pub vol: f64,
}

impl FlowConfig {
    fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            rate: 1.0,
            vol: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    /// `y(t) = y0 + slope t`.
    Linear { y0: Vec<f64>, slope: Vec<f64> },
    /// Terminal state only.
    Terminal { y: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub target: TargetConfig,
    /// Skeleton flow; the integral map when absent.
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_penalties")]
    pub penalties: Vec<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_feasibility")]
    pub feasibility_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdpConfig {
    pub flow: FlowConfig,
    pub eps: Vec<f64>,
    pub threshold: f64,
    pub n_paths: usize,
    pub x0: Vec<f64>,
    /// Reference slope; derived for the identity flow when absent.
    pub expected_slope: Option<f64>,
}

impl Default for LdpConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig::named("identity"),
            eps: vec![0.2, 0.1, 0.05],
            threshold: 1.0,
            n_paths: 1_000_000,
            x0: vec![0.0],
            expected_slope: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowExperimentConfig {
    pub flow: FlowConfig,
    /// Euler skeleton piece counts.
    pub pieces: Vec<usize>,
    /// Steps of the reference skeleton ODE.
    pub reference_steps: usize,
    pub samples: usize,
    pub h_norm: f64,
    pub x0s: Vec<Vec<f64>>,
    pub regularity: RegularityConfig,
}

impl Default for FlowExperimentConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig::named("sine"),
            pieces: vec![64, 256, 1024],
            reference_steps: 4096,
            samples: 12,
            h_norm: 2.0,
            x0s: vec![vec![-1.0], vec![-0.5], vec![0.0], vec![0.5], vec![1.0]],
            regularity: RegularityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularityConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub n_paths: usize,
    pub eps: f64,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        Self {
            x: vec![0.0],
            y: vec![0.1],
            n_paths: 10_000,
            eps: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QvConfig {
    pub functional: String,
    /// Value of the constant functional.
    pub cap: f64,
    pub n_paths: usize,
    pub starts: usize,
}

impl Default for QvConfig {
    fn default() -> Self {
        Self {
            functional: "arctan_terminal".into(),
            cap: 0.0,
            n_paths: 100_000,
            starts: 8,
        }
    }
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_cap() -> f64 {
    4.0
}
fn default_starts() -> usize {
    8
}
fn default_penalties() -> Vec<f64> {
    vec![1e1, 1e2, 1e3, 1e4, 1e5]
}
fn default_max_iter() -> usize {
    4000
}
fn default_feasibility() -> f64 {
    1e-2
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg_err(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(cfg_err(format!("{name} must be at least 1")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| cfg_err(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Shape checks shared by every experiment kind.
    pub fn validate_common(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(cfg_err(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let sections = [
            (ExperimentKind::Gexp, self.gexp.is_some()),
            (ExperimentKind::Varrep, self.varrep.is_some()),
            (ExperimentKind::Rate, self.rate.is_some()),
            (ExperimentKind::Ldp, self.ldp.is_some()),
            (ExperimentKind::Flow, self.flow.is_some()),
            (ExperimentKind::Qv, self.qv.is_some()),
        ];
        for (kind, present) in sections {
            if present && kind != self.experiment {
                return Err(cfg_err(format!(
                    "section '{}' does not apply to experiment '{}'",
                    kind.name(),
                    self.experiment.name()
                )));
            }
        }
        self.uncertainty_set()?;
        positive("grid.horizon", self.grid.horizon)?;
        positive("grid.dx", self.grid.dx)?;
        nonzero("grid.steps", self.grid.steps)?;
        if self.policies.levels < 2 {
            return Err(cfg_err("policies.levels must be at least 2"));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("scheme_rel", t.scheme_rel),
            ("se_multiplier", t.se_multiplier),
            ("optimizer_grad", t.optimizer_grad),
            ("sandwich_rel", t.sandwich_rel),
            ("gap_rel", t.gap_rel),
            ("pathwise_per_sqrt_dt", t.pathwise_per_sqrt_dt),
            ("ldp_rel", t.ldp_rel),
            ("min_ratio", t.min_ratio),
            ("regularity_rel", t.regularity_rel),
        ] {
            positive(&format!("tolerances.{name}"), v)?;
        }
        Ok(())
    }

    pub fn uncertainty_set(&self) -> Result<UncertaintySet> {
        let u = &self.uncertainty;
        let structure = u.structure.unwrap_or(if u.dim == 1 {
            Structure::Scalar1D
        } else {
            Structure::DiagonalBox
        });
        UncertaintySet::new(u.dim, u.sigma_lo2, u.sigma_hi2, structure)
            .map_err(|e| cfg_err(format!("uncertainty: {e}")))
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.steps)
    }

    pub fn functional_params(&self) -> FunctionalParams {
        FunctionalParams {
            horizon: self.grid.horizon,
            dim: self.uncertainty.dim,
            cap: self.functional.as_ref().map_or(default_cap(), |f| f.cap),
        }
    }

    /// Builds the configured functional; required by the PDE-based kinds.
    pub fn functional(&self, builtins: &Builtins) -> Result<CylinderFunctional> {
        let f = self.functional.as_ref().ok_or_else(|| {
            cfg_err(format!(
                "experiment '{}' needs a functional",
                self.experiment.name()
            ))
        })?;
        match (&f.builtin, &f.table) {
            (Some(name), None) => builtins
                .functionals
                .get(name)?
                .build(&self.functional_params())
                .map_err(|e| cfg_err(format!("functional '{name}': {e}"))),
            (None, Some(t)) => {
                if self.uncertainty.dim != 1 {
                    return Err(cfg_err("tabulated functionals are scalar"));
                }
                crate::builtins::tabulated(&t.x, &t.y, self.grid.horizon)
            }
            _ => Err(cfg_err(
                "functional needs exactly one of 'builtin' or 'table'",
            )),
        }
    }

    /// Closed-form value of the configured builtin, when known.
    pub fn functional_reference(&self, builtins: &Builtins) -> Result<Option<f64>> {
        let Some(name) = self.functional.as_ref().and_then(|f| f.builtin.as_ref()) else {
            return Ok(None);
        };
        Ok(builtins
            .functionals
            .get(name)?
            .reference(&self.uncertainty_set()?, &self.functional_params()))
    }

    pub fn flow_spec(&self, builtins: &Builtins, flow: &FlowConfig, eps: f64) -> Result<FlowSpec> {
        let p = FlowParams {
            dim: self.uncertainty.dim,
            rate: flow.rate,
            vol: flow.vol,
            eps,
        };
        builtins
            .flows
            .get(&flow.name)?
            .build(&p)
            .map_err(|e| cfg_err(format!("flow '{}': {e}", flow.name)))
    }

    /// Constant policies: every corner of the box and the interior isotropic levels.
    pub fn constant_policies(&self) -> Result<Vec<ControlPolicy>> {
        let set = self.uncertainty_set()?;
        let mut out = ControlPolicy::extreme_family(&set);
        let (lo, hi) = (set.sigma_lo2(), set.sigma_hi2());
        let m = self.policies.levels;
        if hi > lo {
            for i in 1..m - 1 {
                let v = lo + (hi - lo) * i as f64 / (m - 1) as f64;
                out.push(ControlPolicy::constant_variance(&vec![v; set.dim()]));
            }
        }
        Ok(out)
    }

    pub fn gexp_section(&self) -> GexpConfig {
        self.gexp.clone().unwrap_or_default()
    }
    pub fn varrep_section(&self) -> VarrepConfig {
        self.varrep.clone().unwrap_or_default()
    }
    pub fn ldp_section(&self) -> LdpConfig {
        self.ldp.clone().unwrap_or_default()
    }
    pub fn flow_section(&self) -> FlowExperimentConfig {
        self.flow.clone().unwrap_or_default()
    }
    pub fn qv_section(&self) -> QvConfig {
        self.qv.clone().unwrap_or_default()
    }
    pub fn rate_section(&self) -> Result<RateConfig> {
        self.rate
            .clone()
            .ok_or_else(|| cfg_err("experiment 'rate' needs a 'rate' section with a target"))
    }
}
