#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use slide_core::channel::{BsConfig, ChannelState};
use slide_core::profiles::{load_catalog, load_devices, Catalog, DeviceProfile, LayerProfile, ModelProfile, UserSpec};
use slide_core::timeline::LayerCosts;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn catalog() -> Catalog {
    load_catalog(fixture("catalog.json")).unwrap()
}

pub fn devices() -> BTreeMap<String, DeviceProfile> {
    load_devices(fixture("devices.json")).unwrap()
}

pub fn nano() -> DeviceProfile {
    devices()["orin-nano"].clone()
}

/// Device with round numbers: 1 GHz, 1 cycle/FLOP, no memcpy or
/// instantiation cost worth mentioning.
pub fn unit_device() -> DeviceProfile {
    DeviceProfile {
        name: "unit".into(),
        gpu_freq_hz: 1e9,
        cycles_per_flop: 1.0,
        power_coeff: 1e-27,
        mem_to_gpu_rate_bps: 1e15,
        instantiation_latency_s: 0.0,
        instantiation_energy_j: 0.1,
        rated_power_w: None,
        overrides: BTreeMap::new(),
    }
}

pub fn model(id: u32, layers: &[(f64, f64)]) -> ModelProfile {
    ModelProfile {
        id,
        name: format!("m{id}"),
        precision_tag: "fp32".into(),
        accuracy: 0.9,
        tasks: Vec::new(),
        layers: layers
            .iter()
            .enumerate()
            .map(|(j, &(size_bits, flops))| LayerProfile {
                index: j + 1,
                size_bits,
                flops,
            })
            .collect(),
    }
}

pub fn user(id: u32, device: DeviceProfile, deadline_s: f64, energy_budget_j: f64, models: Vec<u32>) -> UserSpec {
    UserSpec {
        user_id: id,
        device,
        batch_size: 1,
        deadline_s,
        energy_budget_j,
        compatible_models: models,
        position_m: [0.0, 0.0],
        speed_mps: 0.0,
        heading_rad: 0.0,
    }
}

/// Base station with `B` Hz and a channel of exactly `R` bits/s/Hz.
pub fn link(bandwidth_hz: f64, spectral_efficiency: f64) -> (BsConfig, ChannelState) {
    (
        BsConfig {
            total_bandwidth_hz: bandwidth_hz,
            ..BsConfig::default()
        },
        ChannelState {
            gain_linear: 0.0,
            spectral_efficiency,
        },
    )
}

/// Reference timeline written as an explicit event simulation: the GPU is a
/// single server, each layer becomes ready when its download completes.
pub fn simulate_pipeline(costs: &LayerCosts, z: &[f64]) -> f64 {
    let mut gpu_free_at = costs.start_latency_s;
    let mut arrivals = Vec::new();
    let mut clock = 0.0;
    for tau in &costs.download_s {
        clock += tau;
        arrivals.push(clock);
    }
    for (l, ready) in arrivals.iter().enumerate() {
        let start = if *ready > gpu_free_at { *ready } else { gpu_free_at };
        gpu_free_at = start + costs.memcpy_s[l] + costs.compute_s[l] / z[l];
    }
    gpu_free_at
}

/// Random layer costs with 1..=max_layers layers.
pub fn arb_costs(max_layers: usize) -> impl Strategy<Value = LayerCosts> {
    (1..=max_layers).prop_flat_map(|n| {
        (
            prop::collection::vec(1e-3..0.3f64, n),
            prop::collection::vec(0.0..5e-3f64, n),
            prop::collection::vec(1e-3..0.2f64, n),
            0.0..0.08f64,
            0.0..0.5f64,
            0.5..20.0f64,
        )
            .prop_map(|(download_s, memcpy_s, compute_s, start, base, scale)| LayerCosts {
                download_s,
                memcpy_s,
                compute_s,
                start_latency_s: start,
                base_energy_j: base,
                energy_scale_j: scale,
            })
    })
}

/// Costs together with a budget strictly between the instantiation energy
/// and the full-clock energy.
pub fn arb_tight(max_layers: usize) -> impl Strategy<Value = (LayerCosts, f64)> {
    (arb_costs(max_layers), 0.05..0.95f64).prop_map(|(c, frac)| {
        let full = c.energy(&vec![1.0; c.num_layers()]);
        let budget = c.base_energy_j + frac * (full - c.base_energy_j);
        (c, budget)
    })
}
