//! Training FLOPs, schedule time, throughput and energy accounting.

mod registry;

pub use registry::{CarbonEntry, ModelEntry, Registry, ScheduleEntry, StageTime};

use serde::{Deserialize, Serialize};

/// FLOPs in one zettaFLOP.
pub const ZETTA: f64 = 1e21;

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no registry entry named `{0}`")]
    UnknownEntry(String),
    #[error("registry parse error: {0}")]
    Registry(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shape inputs of the per-token cost formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchCost {
    pub layers: u64,
    pub hidden: u64,
    pub seq_len: u64,
    pub vocab: u64,
}

impl ArchCost {
    pub fn validate(&self) -> Result<(), CostError> {
        if self.layers == 0 || self.hidden == 0 || self.seq_len == 0 || self.vocab == 0 {
            return Err(CostError::InvalidArgument(format!("architecture sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn from_model(config: &crate::model::ModelConfig) -> Self {
        ArchCost {
            layers: config.n_layers as u64,
            hidden: config.hidden_dim as u64,
            seq_len: config.context_len as u64,
            vocab: config.vocab_size as u64,
        }
    }
}

/// Activation recomputation convention; fixes the leading coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecomputePolicy {
    None,
    Full,
    Unknown,
}

impl RecomputePolicy {
    /// `(low, high)` coefficient.
    pub fn coefficients(self) -> (f64, f64) {
        match self {
            RecomputePolicy::None => (72.0, 72.0),
            RecomputePolicy::Full => (96.0, 96.0),
            RecomputePolicy::Unknown => (72.0, 96.0),
        }
    }
}

impl std::str::FromStr for RecomputePolicy {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, CostError> {
        match s {
            "none" => Ok(RecomputePolicy::None),
            "full" => Ok(RecomputePolicy::Full),
            "unknown" => Ok(RecomputePolicy::Unknown),
            _ => Err(CostError::InvalidArgument(format!("unknown recompute policy `{s}` (none|full|unknown)"))),
        }
    }
}

/// FLOPs range; `mid` is the midpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsEstimate {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl FlopsEstimate {
    pub const ZERO: FlopsEstimate = FlopsEstimate { low: 0.0, mid: 0.0, high: 0.0 };

    pub fn new(low: f64, high: f64) -> Self {
        FlopsEstimate { low, mid: (low + high) / 2.0, high }
    }

    pub fn half_range(&self) -> f64 {
        (self.high - self.low) / 2.0
    }

    pub fn mid_zetta(&self) -> f64 {
        self.mid / ZETTA
    }

    pub fn half_range_zetta(&self) -> f64 {
        self.half_range() / ZETTA
    }

    pub fn scale(&self, k: f64) -> Self {
        FlopsEstimate::new(self.low * k, self.high * k)
    }

    pub fn add(&self, other: &FlopsEstimate) -> Self {
        FlopsEstimate::new(self.low + other.low, self.high + other.high)
    }

    /// `mid (±half)` in zettaFLOPs, or just `mid` for an exact value.
    pub fn display_zetta(&self) -> String {
        if self.half_range() == 0.0 {
            format!("{:.2}", self.mid_zetta())
        } else {
            format!("{:.2} (±{:.2})", self.mid_zetta(), self.half_range_zetta())
        }
    }
}

/// `c·l·h²·(1 + s/(6h) + V/(16·l·h))` for the policy's coefficient range.
pub fn flops_per_token(arch: &ArchCost, policy: RecomputePolicy) -> FlopsEstimate {
    let (l, h, s, v) = (arch.layers as f64, arch.hidden as f64, arch.seq_len as f64, arch.vocab as f64);
    let base = l * h * h * (1.0 + s / (6.0 * h) + v / (16.0 * l * h));
    let (lo, hi) = policy.coefficients();
    FlopsEstimate::new(lo * base, hi * base)
}

pub fn training_flops(arch: &ArchCost, tokens: f64, policy: RecomputePolicy) -> Result<FlopsEstimate, CostError> {
    arch.validate()?;
    if !(tokens >= 0.0) {
        return Err(CostError::InvalidArgument(format!("token count must be non-negative, got {tokens}")));
    }
    Ok(flops_per_token(arch, policy).scale(tokens))
}

/// Proportional split of every bound; weights are normalised here.
pub fn split_cost_by_language(
    estimate: &FlopsEstimate,
    ratios: &[(String, f64)],
) -> Result<Vec<(String, FlopsEstimate)>, CostError> {
    if ratios.is_empty() {
        return Err(CostError::InvalidArgument("no languages given".into()));
    }
    if ratios.iter().any(|(_, w)| !(w.is_finite() && *w > 0.0)) {
        return Err(CostError::InvalidArgument("language weights must be positive".into()));
    }
    let total: f64 = ratios.iter().map(|(_, w)| w).sum();
    Ok(ratios.iter().map(|(n, w)| (n.clone(), estimate.scale(w / total))).collect())
}

/// One stage's token budget and throughput.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRate {
    pub tokens: f64,
    pub tokens_per_day: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub stage_days: Vec<f64>,
    pub total_days: f64,
    /// Days to train the final-stage model on all tokens.
    pub scratch_days: f64,
    /// `1 − total/scratch`, in percent.
    pub time_saving_percent: f64,
    pub speedup: f64,
}

/// `total_tokens` defaults to the sum over stages.
pub fn plan_schedule(stages: &[StageRate], total_tokens: Option<f64>) -> Result<ScheduleReport, CostError> {
    let last = stages.last().ok_or_else(|| CostError::InvalidArgument("no stages".into()))?;
    for s in stages {
        if !(s.tokens_per_day.is_finite() && s.tokens_per_day > 0.0) {
            return Err(CostError::InvalidArgument(format!("stage rate must be positive, got {}", s.tokens_per_day)));
        }
        if !(s.tokens >= 0.0) {
            return Err(CostError::InvalidArgument(format!("stage tokens must be non-negative, got {}", s.tokens)));
        }
    }
    let stage_days: Vec<f64> = stages.iter().map(|s| s.tokens / s.tokens_per_day).collect();
    let total_days: f64 = stage_days.iter().sum();
    let total_tokens = total_tokens.unwrap_or_else(|| stages.iter().map(|s| s.tokens).sum());
    let scratch_days = total_tokens / last.tokens_per_day;
    Ok(ScheduleReport {
        stage_days,
        total_days,
        scratch_days,
        time_saving_percent: 100.0 * (1.0 - total_days / scratch_days),
        speedup: scratch_days / total_days,
    })
}

/// Percent of peak throughput achieved.
pub fn utilization(measured_tflops: f64, peak_tflops: f64) -> Result<f64, CostError> {
    if !(peak_tflops > 0.0) || !(measured_tflops >= 0.0) {
        return Err(CostError::InvalidArgument("throughputs must be positive".into()));
    }
    if measured_tflops > peak_tflops {
        return Err(CostError::InvalidArgument(format!("measured {measured_tflops} exceeds peak {peak_tflops}")));
    }
    Ok(100.0 * measured_tflops / peak_tflops)
}

fn one() -> f64 {
    1.0
}

fn one_gpu() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    pub name: String,
    #[serde(default = "one_gpu")]
    pub n_gpus: u64,
    pub peak_tflops_per_gpu: f64,
    pub measured_tflops_per_gpu: f64,
    pub tdp_watts: f64,
    #[serde(default = "one")]
    pub pue: f64,
    /// tCO₂e per MWh; deployment specific, so no default.
    #[serde(default)]
    pub grid_intensity: Option<f64>,
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<(), CostError> {
        utilization(self.measured_tflops_per_gpu, self.peak_tflops_per_gpu)?;
        if !(self.measured_tflops_per_gpu > 0.0) {
            return Err(CostError::InvalidArgument("measured throughput must be positive".into()));
        }
        if !(self.tdp_watts > 0.0) || !(self.pue >= 1.0) || self.n_gpus == 0 {
            return Err(CostError::InvalidArgument(format!("bad hardware profile `{}`", self.name)));
        }
        if self.grid_intensity.is_some_and(|g| !(g >= 0.0)) {
            return Err(CostError::InvalidArgument("grid intensity must be non-negative".into()));
        }
        Ok(())
    }

    pub fn utilization(&self) -> Result<f64, CostError> {
        utilization(self.measured_tflops_per_gpu, self.peak_tflops_per_gpu)
    }

    /// Tokens per day for a per-token cost at the measured throughput.
    pub fn tokens_per_day(&self, flops_per_token: f64) -> f64 {
        self.n_gpus as f64 * self.measured_tflops_per_gpu * 1e12 * 86_400.0 / flops_per_token
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarbonReport {
    pub energy_mwh: f64,
    /// `None` without a grid intensity.
    pub net_tco2e: Option<f64>,
}

/// Energy from accelerator-hours at TDP, scaled by PUE.
pub fn energy_and_carbon(
    gpu_hours: f64,
    tdp_watts: f64,
    pue: f64,
    grid_intensity: Option<f64>,
) -> Result<CarbonReport, CostError> {
    if !(gpu_hours >= 0.0) || !(tdp_watts > 0.0) || !(pue >= 1.0) {
        return Err(CostError::InvalidArgument(format!("gpu_hours {gpu_hours}, tdp {tdp_watts}, pue {pue}")));
    }
    let energy_mwh = gpu_hours * tdp_watts * pue / 1e6;
    Ok(CarbonReport { energy_mwh, net_tco2e: grid_intensity.map(|g| energy_mwh * g) })
}

pub fn profile_energy(gpu_hours: f64, profile: &HardwareProfile) -> Result<CarbonReport, CostError> {
    profile.validate()?;
    energy_and_carbon(gpu_hours, profile.tdp_watts, profile.pue, profile.grid_intensity)
}
