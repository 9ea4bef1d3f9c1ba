use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{training_flops, ArchCost, CostError, FlopsEstimate, HardwareProfile, RecomputePolicy, StageRate};

const BUILTIN: &str = include_str!("../../data/registry.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub layers: u64,
    pub hidden: u64,
    pub seq_len: u64,
    pub vocab: u64,
    pub tokens: f64,
    pub policy: RecomputePolicy,
    #[serde(default)]
    pub source: String,
}

impl ModelEntry {
    pub fn arch(&self) -> ArchCost {
        ArchCost { layers: self.layers, hidden: self.hidden, seq_len: self.seq_len, vocab: self.vocab }
    }

    pub fn training_flops(&self) -> Result<FlopsEstimate, CostError> {
        training_flops(&self.arch(), self.tokens, self.policy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarbonEntry {
    pub name: String,
    pub gpu_hours: f64,
    pub tdp_watts: f64,
    #[serde(default = "super::one")]
    pub pue: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTime {
    pub tokens: f64,
    pub days: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub name: String,
    pub stages: Vec<StageTime>,
}

impl ScheduleEntry {
    pub fn rates(&self) -> Vec<StageRate> {
        self.stages.iter().map(|s| StageRate { tokens: s.tokens, tokens_per_day: s.tokens / s.days }).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    #[serde(default)]
    pub model: Vec<ModelEntry>,
    #[serde(default)]
    pub hardware: Vec<HardwareProfile>,
    #[serde(default)]
    pub carbon: Vec<CarbonEntry>,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
}

fn find<'a, T>(items: &'a [T], name: &str, key: impl Fn(&T) -> &str) -> Result<&'a T, CostError> {
    items.iter().find(|t| key(t) == name).ok_or_else(|| CostError::UnknownEntry(name.to_string()))
}

impl Registry {
    pub fn builtin() -> Self {
        toml::from_str(BUILTIN).expect("built-in registry parses")
    }

    pub fn parse(text: &str) -> Result<Self, CostError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn model(&self, name: &str) -> Result<&ModelEntry, CostError> {
        find(&self.model, name, |e| &e.name)
    }

    pub fn hardware(&self, name: &str) -> Result<&HardwareProfile, CostError> {
        find(&self.hardware, name, |e| &e.name)
    }

    pub fn carbon(&self, name: &str) -> Result<&CarbonEntry, CostError> {
        find(&self.carbon, name, |e| &e.name)
    }

    pub fn schedule(&self, name: &str) -> Result<&ScheduleEntry, CostError> {
        find(&self.schedule, name, |e| &e.name)
    }
}
