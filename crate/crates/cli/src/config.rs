use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use growlab_core::costmodel::{CarbonEntry, ModelEntry, StageTime};
use growlab_core::evalgen::{Family, Matching};
use growlab_core::model::ModelConfig;
use growlab_core::stability::HpGrid;
use growlab_core::trainer::{OptimizerConfig, StageConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    /// Cost registry overriding the built-in one.
    pub registry: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    pub grow: Option<GrowSection>,
    pub verify: Option<VerifySection>,
    pub schedule: Option<ScheduleSection>,
    pub cost: Option<CostSection>,
    pub carbon: Option<CarbonSection>,
    pub hpsearch: Option<HpSearchSection>,
    pub predict: Option<PredictSection>,
    pub coord: Option<CoordSection>,
    #[serde(default)]
    pub eval: EvalSection,
    pub tokenize: Option<TokenizeSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    /// Stream name to weight. Built-in sources: `copy`, `pattern_mining`, `teacher`.
    #[serde(default)]
    pub mix: BTreeMap<String, f64>,
}

fn ten() -> u64 {
    10
}

fn eight() -> usize {
    8
}

fn four() -> usize {
    4
}

fn probes() -> usize {
    16
}

fn tol() -> f64 {
    1e-5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "ten")]
    pub log_every: u64,
    pub checkpoint_every: Option<u64>,
    pub max_steps: Option<u64>,
    /// Continue a single-stage run from this checkpoint.
    pub resume: Option<PathBuf>,
    #[serde(default = "eight")]
    pub heldout_batch_size: usize,
    #[serde(default = "probes")]
    pub preservation_probes: usize,
    #[serde(default = "tol")]
    pub preservation_tol: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            log_every: ten(),
            checkpoint_every: None,
            max_steps: None,
            resume: None,
            heldout_batch_size: eight(),
            preservation_probes: probes(),
            preservation_tol: tol(),
        }
    }
}

fn anneal() -> u64 {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowSection {
    pub checkpoint: PathBuf,
    pub target: ModelConfig,
    #[serde(default = "anneal")]
    pub anneal_tokens: u64,
    #[serde(default = "probes")]
    pub probes: usize,
    #[serde(default = "tol")]
    pub tol: f64,
}

fn hundred() -> usize {
    100
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub before: PathBuf,
    pub after: PathBuf,
    #[serde(default = "hundred")]
    pub probes: usize,
    #[serde(default = "tol")]
    pub tol: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Registry schedule; ignored when `stages` is given.
    pub name: Option<String>,
    #[serde(default)]
    pub stages: Vec<StageTime>,
    pub total_tokens: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    /// Registry model names.
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub entries: Vec<ModelEntry>,
    /// Splits every estimate (and `split_total_zetta`, if given) by these weights.
    #[serde(default)]
    pub languages: BTreeMap<String, f64>,
    pub split_total_zetta: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarbonSection {
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(default)]
    pub entries: Vec<CarbonEntry>,
    pub grid_intensity: Option<f64>,
    /// Registry hardware profiles whose utilisation is reported.
    #[serde(default)]
    pub hardware: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpSearchSection {
    pub grid: HpGrid,
    pub steps: u64,
    #[serde(default = "four")]
    pub batch_size: usize,
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    /// `[width, loss]` pairs measured at one step.
    pub points: Vec<(usize, f64)>,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub widths: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordSection {
    pub widths: Vec<usize>,
    #[serde(default = "ten")]
    pub steps: u64,
    pub lr: f64,
    #[serde(default = "four")]
    pub batch_size: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "all_families")]
    pub families: Vec<Family>,
    #[serde(default = "hundred")]
    pub n: usize,
    pub shots: Option<usize>,
    pub instances: Option<PathBuf>,
    /// One model output per line, aligned with `instances`.
    pub outputs: Option<PathBuf>,
    #[serde(default)]
    pub matching: Matching,
}

fn all_families() -> Vec<Family> {
    Family::ALL.to_vec()
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { families: all_families(), n: hundred(), shots: None, instances: None, outputs: None, matching: Matching::Exact }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizeSection {
    pub inputs: Vec<PathBuf>,
    pub name: Option<String>,
    /// Existing manifest to extend; the updated copy is written under `--out`.
    pub manifest: Option<PathBuf>,
    #[serde(default = "bytes_mode")]
    pub mode: String,
}

fn bytes_mode() -> String {
    "bytes".into()
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let not_found = |p: &str| CliError::Config(format!("`{p}` in `{key}` does not name a table or array element"));
    let (last, path) = parts.split_last().expect("non-empty");
    let mut slot = root
        .entry(path.first().copied().unwrap_or(last).to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if path.is_empty() {
        *slot = parse_value(value.trim());
        return Ok(());
    }
    // Numeric segments index into arrays, e.g. `stages.0.lr_start`.
    for p in path[1..].iter().chain(std::iter::once(last)) {
        slot = match slot {
            toml::Value::Table(t) => t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())),
            toml::Value::Array(a) => p.parse::<usize>().ok().and_then(|i| a.get_mut(i)).ok_or_else(|| not_found(p))?,
            _ => return Err(not_found(p)),
        };
    }
    *slot = parse_value(value.trim());
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_nested_keys() {
        let c = load(None, &["train.log_every=3".into(), "out=\"x\"".into()]).unwrap();
        assert_eq!(c.train.log_every, 3);
        assert_eq!(c.out, Some(PathBuf::from("x")));
    }

    #[test]
    fn bare_strings_are_accepted() {
        let c = load(None, &["out=results".into()]).unwrap();
        assert_eq!(c.out, Some(PathBuf::from("results")));
    }

    #[test]
    fn numeric_segments_index_arrays() {
        let mut root: toml::Table = toml::from_str("a = [{x = 1}, {x = 2}]").unwrap();
        apply_override(&mut root, "a.1.x=5").unwrap();
        assert_eq!(root["a"][1]["x"].as_integer(), Some(5));
        assert!(apply_override(&mut root, "a.2.x=5").is_err());
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = load(None, &["train.log_evry=3".into()]).unwrap_err();
        assert!(e.to_string().contains("log_evry"), "{e}");
    }
}
