//! Model catalog and device profiles.
//!
//! Everything here is static input to the optimizer: per-layer payload sizes
//! and workloads, per-device GPU characteristics, and per-user requests.
//! Profiles are validated once at load time and immutable afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlideError};

pub type ModelId = u32;
pub type UserId = u32;

/// One layer (or block of layers) of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    /// 1-based position in the model. Renumbered on load.
    #[serde(default)]
    pub index: usize,
    /// Parameter payload in bits.
    pub size_bits: f64,
    /// Forward-pass workload for one sample, in FLOPs.
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub id: ModelId,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(rename = "precision")]
    pub precision_tag: String,
    pub accuracy: f64,
    /// Task types this model can serve. Empty means "any".
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<u32>,
    pub layers: Vec<LayerProfile>,
}

impl ModelProfile {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total payload of the model in bits.
    pub fn size_bits(&self) -> f64 {
        self.layers.iter().map(|l| l.size_bits).sum()
    }

    pub fn total_flops(&self) -> f64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    pub fn serves_task(&self, task: u32) -> bool {
        self.tasks.is_empty() || self.tasks.contains(&task)
    }

    fn validate(&mut self) -> Result<()> {
        let ctx = |field: &str| format!("model {}: {field}", self.id);
        if self.layers.is_empty() {
            return Err(SlideError::invalid(ctx("layers"), "model has no layers"));
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(SlideError::invalid(
                ctx("accuracy"),
                format!("{} not in [0, 1]", self.accuracy),
            ));
        }
        let has_indices = self.layers.iter().any(|l| l.index != 0);
        if has_indices {
            self.layers.sort_by_key(|l| l.index);
            for (pos, layer) in self.layers.iter().enumerate() {
                if layer.index != pos + 1 {
                    return Err(SlideError::invalid(
                        ctx("index"),
                        "layer indices are not a contiguous 1..L sequence",
                    ));
                }
            }
        }
        for (pos, layer) in self.layers.iter_mut().enumerate() {
            layer.index = pos + 1;
            if !(layer.size_bits.is_finite() && layer.size_bits > 0.0) {
                return Err(SlideError::invalid(
                    format!("model {} layer {}: size_bits", self.id, pos + 1),
                    format!("{} must be positive", layer.size_bits),
                ));
            }
            if !(layer.flops.is_finite() && layer.flops > 0.0) {
                return Err(SlideError::invalid(
                    format!("model {} layer {}: flops", self.id, pos + 1),
                    format!("{} must be positive", layer.flops),
                ));
            }
        }
        Ok(())
    }
}

/// Per-model override of the instantiation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstantiationOverride {
    pub latency_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// Maximum GPU clock in cycles/s.
    pub gpu_freq_hz: f64,
    /// Computing intensity in cycles/FLOP.
    pub cycles_per_flop: f64,
    /// Power coefficient in W/(cycle/s)^3.
    pub power_coeff: f64,
    /// System memory to GPU memory transfer rate in bits/s.
    pub mem_to_gpu_rate_bps: f64,
    /// Data movement plus model instantiation latency, overlapped with the first download.
    pub instantiation_latency_s: f64,
    pub instantiation_energy_j: f64,
    /// Nominal device power used to derive energy budgets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rated_power_w: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<ModelId, InstantiationOverride>,
}

impl DeviceProfile {
    pub fn instantiation_latency(&self, model: ModelId) -> f64 {
        self.overrides
            .get(&model)
            .map_or(self.instantiation_latency_s, |o| o.latency_s)
    }

    pub fn instantiation_energy(&self, model: ModelId) -> f64 {
        self.overrides
            .get(&model)
            .map_or(self.instantiation_energy_j, |o| o.energy_j)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gpu_freq_hz", self.gpu_freq_hz),
            ("cycles_per_flop", self.cycles_per_flop),
            ("power_coeff", self.power_coeff),
            ("mem_to_gpu_rate_bps", self.mem_to_gpu_rate_bps),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SlideError::invalid(
                    format!("device {}: {field}", self.name),
                    format!("{v} must be positive"),
                ));
            }
        }
        let non_negative = [
            ("instantiation_latency_s", self.instantiation_latency_s),
            ("instantiation_energy_j", self.instantiation_energy_j),
        ];
        for (field, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SlideError::invalid(
                    format!("device {}: {field}", self.name),
                    format!("{v} must be non-negative"),
                ));
            }
        }
        if let Some(p) = self.rated_power_w {
            if !(p.is_finite() && p > 0.0) {
                return Err(SlideError::invalid(
                    format!("device {}: rated_power_w", self.name),
                    format!("{p} must be positive"),
                ));
            }
        }
        for (model, o) in &self.overrides {
            if !(o.latency_s >= 0.0 && o.energy_j >= 0.0) {
                return Err(SlideError::invalid(
                    format!("device {}: overrides.{model}", self.name),
                    "instantiation constants must be non-negative",
                ));
            }
        }
        Ok(())
    }
}

/// System-memory to GPU transfer time of one layer.
pub fn memcpy_latency(device: &DeviceProfile, layer: &LayerProfile) -> f64 {
    layer.size_bits / device.mem_to_gpu_rate_bps
}

/// One user's inference request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub user_id: UserId,
    pub device: DeviceProfile,
    pub batch_size: u32,
    pub deadline_s: f64,
    pub energy_budget_j: f64,
    pub compatible_models: Vec<ModelId>,
    #[serde(default)]
    pub position_m: [f64; 2],
    #[serde(default)]
    pub speed_mps: f64,
    #[serde(default)]
    pub heading_rad: f64,
}

impl UserSpec {
    /// Validates the request against `catalog` and drops compatible models
    /// whose instantiation energy alone exhausts the budget.
    pub fn validate_and_prune(&mut self, catalog: &Catalog) -> Result<()> {
        let ctx = |field: &str| format!("user {}: {field}", self.user_id);
        self.device.validate()?;
        if !(self.deadline_s.is_finite() && self.deadline_s > 0.0) {
            return Err(SlideError::invalid(ctx("deadline_s"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(SlideError::invalid(ctx("batch_size"), "must be at least 1"));
        }
        if !(self.energy_budget_j.is_finite() && self.energy_budget_j > 0.0) {
            return Err(SlideError::invalid(ctx("energy_budget_j"), "must be positive"));
        }
        for id in &self.compatible_models {
            if catalog.get(*id).is_none() {
                return Err(SlideError::UnknownModel(*id));
            }
        }
        let mut seen = BTreeSet::new();
        let budget = self.energy_budget_j;
        let device = &self.device;
        self.compatible_models
            .retain(|id| seen.insert(*id) && budget > device.instantiation_energy(*id));
        if self.compatible_models.is_empty() {
            return Err(SlideError::invalid(
                ctx("compatible_models"),
                "no compatible model fits the energy budget",
            ));
        }
        Ok(())
    }
}

/// Validated, id-indexed collection of model profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub models: Vec<ModelProfile>,
}

impl Catalog {
    pub fn new(mut models: Vec<ModelProfile>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for m in &mut models {
            m.validate()?;
            if !ids.insert(m.id) {
                return Err(SlideError::invalid(
                    format!("model {}: id", m.id),
                    "duplicate model id",
                ));
            }
        }
        models.sort_by_key(|m| m.id);
        Ok(Catalog { models })
    }

    pub fn get(&self, id: ModelId) -> Option<&ModelProfile> {
        self.models
            .binary_search_by_key(&id, |m| m.id)
            .ok()
            .map(|pos| &self.models[pos])
    }

    pub fn model(&self, id: ModelId) -> Result<&ModelProfile> {
        self.get(id).ok_or(SlideError::UnknownModel(id))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// A catalog restricted to the models accepted by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&ModelProfile) -> bool) -> Catalog {
        Catalog {
            models: self.models.iter().filter(|m| keep(m)).cloned().collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceFile {
    pub devices: BTreeMap<String, DeviceProfile>,
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| SlideError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| SlideError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_catalog(text: &str) -> Result<Catalog> {
    let raw: Catalog = serde_json::from_str(text).map_err(|source| SlideError::Parse {
        path: "<memory>".into(),
        source,
    })?;
    Catalog::new(raw.models)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let raw: Catalog = read_json(path.as_ref())?;
    Catalog::new(raw.models)
}

/// Loads a device file; every device is validated and named after its key.
pub fn load_devices(path: impl AsRef<Path>) -> Result<BTreeMap<String, DeviceProfile>> {
    let raw: DeviceFile = read_json(path.as_ref())?;
    let mut out = BTreeMap::new();
    for (key, mut dev) in raw.devices {
        if dev.name.is_empty() {
            dev.name = key.clone();
        }
        dev.validate()?;
        out.insert(key, dev);
    }
    Ok(out)
}
