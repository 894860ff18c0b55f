//! Experiment kinds behind one trait, selected by name from the config.

use std::collections::BTreeMap;

use crate::builtins::Builtins;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::output::Report;

mod flow;
mod gexp;
mod ldp;
mod qv;
mod rate;
mod varrep;

pub trait Experiment: Send + Sync {
    fn kind(&self) -> ExperimentKind;
    /// Cheap checks that need no simulation; a failure here means a config error.
    fn validate(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<()>;
    fn run(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<Report>;
}

pub struct ExperimentRegistry {
    entries: BTreeMap<&'static str, Box<dyn Experiment>>,
}

impl Default for ExperimentRegistry {
    fn default() -> Self {
        let all: Vec<Box<dyn Experiment>> = vec![
            Box::new(gexp::Gexp),
            Box::new(varrep::Varrep),
            Box::new(rate::Rate),
            Box::new(ldp::Ldp),
            Box::new(flow::Flow),
            Box::new(qv::Qv),
        ];
        let entries = all.into_iter().map(|e| (e.kind().name(), e)).collect();
        Self { entries }
    }
}

impl ExperimentRegistry {
    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Experiment> {
        self.entries
            .get(name)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::Config(format!("unknown experiment '{name}'")))
    }

    /// Full validation: schema, shared sections and the kind-specific part.
    pub fn validate(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<()> {
        cfg.validate_common()?;
        self.get(cfg.experiment.name())?.validate(cfg, builtins)
    }

    pub fn run(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<Report> {
        self.validate(cfg, builtins)?;
        self.get(cfg.experiment.name())?.run(cfg, builtins)
    }
}

pub(crate) fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg.into()))
    }
}

pub(crate) fn positive(name: &str, v: f64) -> Result<()> {
    require(
        v > 0.0 && v.is_finite(),
        format!("{name} must be positive and finite, got {v}"),
    )
}

pub(crate) fn at_least(name: &str, v: usize, min: usize) -> Result<()> {
    require(v >= min, format!("{name} must be at least {min}, got {v}"))
}
