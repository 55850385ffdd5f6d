//! Layer download/inference times, the pipelined end-to-end timeline, the
//! sequential download-then-infer timeline, and inference energy.

use serde::{Deserialize, Serialize};

use crate::channel::{BsConfig, ChannelState};
use crate::error::{Result, SlideError};
use crate::profiles::{memcpy_latency, DeviceProfile, LayerProfile, ModelProfile, UserSpec};

/// Per-layer GPU frequency scaling factors, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerAllocation {
    pub gpu_scale: Vec<f64>,
}

impl LayerAllocation {
    pub fn uniform(num_layers: usize, scale: f64) -> Self {
        LayerAllocation {
            gpu_scale: vec![scale; num_layers],
        }
    }

    pub fn zeros(num_layers: usize) -> Self {
        Self::uniform(num_layers, 0.0)
    }

    pub fn full_speed(num_layers: usize) -> Self {
        Self::uniform(num_layers, 1.0)
    }

    pub fn len(&self) -> usize {
        self.gpu_scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gpu_scale.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.gpu_scale.iter().all(|&z| z == 0.0)
    }
}

/// How the end-to-end latency of a layer sequence is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatencyModel {
    /// Layer `l` may start once it is downloaded and layer `l-1` is done.
    #[default]
    Slide,
    /// Inference starts after the whole model is downloaded; instantiation
    /// overlaps the download.
    Dai,
    /// Sum of total download time and total inference time, nothing overlapped.
    DaiStrict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTimeline {
    pub download_done_s: Vec<f64>,
    pub inference_start_s: Vec<f64>,
    pub inference_done_s: Vec<f64>,
    pub e2e_latency_s: f64,
    pub energy_j: f64,
}

/// `S / (y B R)`.
pub fn layer_download_time(
    layer: &LayerProfile,
    y: f64,
    bs: &BsConfig,
    ch: &ChannelState,
) -> Result<f64> {
    if !(y > 0.0) {
        return Err(SlideError::Domain(format!(
            "download time needs a positive bandwidth fraction, got {y}"
        )));
    }
    Ok(layer.size_bits / (y * bs.total_bandwidth_hz * ch.spectral_efficiency))
}

/// Compute time of a layer at the maximum GPU clock, `b W kappa / f`.
pub fn full_speed_compute_time(device: &DeviceProfile, layer: &LayerProfile, batch_size: u32) -> f64 {
    f64::from(batch_size) * layer.flops * device.cycles_per_flop / device.gpu_freq_hz
}

/// `V1 + b W kappa / (z f)`.
pub fn layer_inference_time(
    device: &DeviceProfile,
    layer: &LayerProfile,
    batch_size: u32,
    gpu_scale: f64,
) -> Result<f64> {
    if !(gpu_scale > 0.0) {
        return Err(SlideError::Domain(format!(
            "inference time needs a positive gpu scale, got {gpu_scale}"
        )));
    }
    Ok(memcpy_latency(device, layer) + full_speed_compute_time(device, layer, batch_size) / gpu_scale)
}

/// `e1 + sum_l Psi f^2 kappa b W_l z_l^2`.
pub fn inference_energy(user: &UserSpec, model: &ModelProfile, alloc: &LayerAllocation) -> f64 {
    let d = &user.device;
    let b = f64::from(user.batch_size);
    let coeff = d.power_coeff * d.gpu_freq_hz * d.gpu_freq_hz * d.cycles_per_flop * b;
    d.instantiation_energy(model.id)
        + model
            .layers
            .iter()
            .zip(&alloc.gpu_scale)
            .map(|(layer, z)| coeff * layer.flops * z * z)
            .sum::<f64>()
}

/// Everything the timeline needs for one (user, model) pair, with the
/// per-layer download times for one bandwidth fraction.
///
/// The solvers work on this form: `compute_s[l]` is the compute time at full
/// clock, so the inference time at scale `z` is `memcpy_s[l] + compute_s[l] / z`
/// and the compute energy is `energy_scale_j * sum_l compute_s[l] * z_l^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCosts {
    pub download_s: Vec<f64>,
    pub memcpy_s: Vec<f64>,
    pub compute_s: Vec<f64>,
    /// Stored instantiation latency of the model on the device.
    pub start_latency_s: f64,
    pub base_energy_j: f64,
    /// `Psi f^3`, converting `sum compute_s z^2` into joules.
    pub energy_scale_j: f64,
}

impl LayerCosts {
    /// Costs with no download part; used for y = 0 and for energy-only work.
    pub fn compute_only(user: &UserSpec, model: &ModelProfile) -> Self {
        let d = &user.device;
        LayerCosts {
            download_s: vec![0.0; model.num_layers()],
            memcpy_s: model.layers.iter().map(|l| memcpy_latency(d, l)).collect(),
            compute_s: model
                .layers
                .iter()
                .map(|l| full_speed_compute_time(d, l, user.batch_size))
                .collect(),
            start_latency_s: d.instantiation_latency(model.id),
            base_energy_j: d.instantiation_energy(model.id),
            energy_scale_j: d.power_coeff * d.gpu_freq_hz.powi(3),
        }
    }

    pub fn new(
        user: &UserSpec,
        model: &ModelProfile,
        y: f64,
        bs: &BsConfig,
        ch: &ChannelState,
    ) -> Result<Self> {
        let mut costs = Self::compute_only(user, model);
        for (slot, layer) in costs.download_s.iter_mut().zip(&model.layers) {
            *slot = layer_download_time(layer, y, bs, ch)?;
        }
        Ok(costs)
    }

    pub fn num_layers(&self) -> usize {
        self.compute_s.len()
    }

    pub fn total_download_s(&self) -> f64 {
        self.download_s.iter().sum()
    }

    /// Budget left for computation in `compute_s`-weighted units,
    /// `(Q - e1) / (Psi f^3)`.
    pub fn compute_budget(&self, energy_budget_j: f64) -> f64 {
        (energy_budget_j - self.base_energy_j) / self.energy_scale_j
    }

    pub fn energy(&self, gpu_scale: &[f64]) -> f64 {
        self.base_energy_j + self.energy_scale_j * weighted_square_sum(&self.compute_s, gpu_scale)
    }

    fn check(&self, gpu_scale: &[f64]) -> Result<()> {
        if gpu_scale.len() != self.num_layers() {
            return Err(SlideError::invalid(
                "gpu_scale",
                format!("expected {} entries, got {}", self.num_layers(), gpu_scale.len()),
            ));
        }
        if let Some(z) = gpu_scale.iter().find(|z| !(**z > 0.0 && **z <= 1.0)) {
            return Err(SlideError::Domain(format!("gpu scale {z} outside (0, 1]")));
        }
        Ok(())
    }

    /// End-to-end latency only, without allocating a timeline record.
    /// Assumes a checked allocation.
    pub fn latency(&self, model: LatencyModel, gpu_scale: &[f64]) -> f64 {
        match model {
            LatencyModel::Slide => {
                let mut downloaded = 0.0;
                let mut done = self.start_latency_s;
                for l in 0..self.num_layers() {
                    downloaded += self.download_s[l];
                    done = downloaded.max(done) + self.memcpy_s[l] + self.compute_s[l] / gpu_scale[l];
                }
                done
            }
            LatencyModel::Dai | LatencyModel::DaiStrict => {
                let mut done = if model == LatencyModel::DaiStrict {
                    self.total_download_s()
                } else {
                    self.dai_start()
                };
                // same association as the pipelined branch, so the two agree
                // bit for bit whenever no layer waits for its download
                for l in 0..self.num_layers() {
                    done = done + self.memcpy_s[l] + self.compute_s[l] / gpu_scale[l];
                }
                done
            }
        }
    }

    fn dai_start(&self) -> f64 {
        self.total_download_s().max(self.start_latency_s)
    }

    pub fn timeline(&self, model: LatencyModel, gpu_scale: &[f64]) -> Result<ScheduleTimeline> {
        self.check(gpu_scale)?;
        let n = self.num_layers();
        let mut download_done_s = Vec::with_capacity(n);
        let mut inference_start_s = Vec::with_capacity(n);
        let mut inference_done_s = Vec::with_capacity(n);
        let mut downloaded = 0.0;
        let mut done = match model {
            LatencyModel::Slide => self.start_latency_s,
            LatencyModel::Dai => self.dai_start(),
            LatencyModel::DaiStrict => self.total_download_s(),
        };
        for l in 0..n {
            downloaded += self.download_s[l];
            download_done_s.push(downloaded);
            let start = match model {
                LatencyModel::Slide => downloaded.max(done),
                _ => done,
            };
            done = start + self.memcpy_s[l] + self.compute_s[l] / gpu_scale[l];
            inference_start_s.push(start);
            inference_done_s.push(done);
        }
        Ok(ScheduleTimeline {
            download_done_s,
            inference_start_s,
            inference_done_s,
            e2e_latency_s: done,
            energy_j: self.energy(gpu_scale),
        })
    }
}

pub(crate) fn weighted_square_sum(weights: &[f64], z: &[f64]) -> f64 {
    weights.iter().zip(z).map(|(w, z)| w * z * z).sum()
}

/// Pipelined timeline: `t_0` is the instantiation latency and
/// `t_l = max(sum_{l' <= l} tau_l', t_{l-1}) + T_l(z_l)`.
pub fn slide_timeline(
    user: &UserSpec,
    model: &ModelProfile,
    y: f64,
    alloc: &LayerAllocation,
    bs: &BsConfig,
    ch: &ChannelState,
) -> Result<ScheduleTimeline> {
    LayerCosts::new(user, model, y, bs, ch)?.timeline(LatencyModel::Slide, &alloc.gpu_scale)
}

/// Download-then-infer timeline. With `strict` the instantiation latency is
/// dropped and the latency is `sum tau + sum T`; otherwise instantiation
/// overlaps the download, `max(sum tau, t_0) + sum T`.
pub fn dai_timeline(
    user: &UserSpec,
    model: &ModelProfile,
    y: f64,
    alloc: &LayerAllocation,
    bs: &BsConfig,
    ch: &ChannelState,
    strict: bool,
) -> Result<ScheduleTimeline> {
    let kind = if strict {
        LatencyModel::DaiStrict
    } else {
        LatencyModel::Dai
    };
    LayerCosts::new(user, model, y, bs, ch)?.timeline(kind, &alloc.gpu_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn device(v1_rate: f64, kappa: f64, f: f64, psi: f64, t0: f64, e1: f64) -> DeviceProfile {
        DeviceProfile {
            name: String::new(),
            gpu_freq_hz: f,
            cycles_per_flop: kappa,
            power_coeff: psi,
            mem_to_gpu_rate_bps: v1_rate,
            instantiation_latency_s: t0,
            instantiation_energy_j: e1,
            rated_power_w: None,
            overrides: BTreeMap::new(),
        }
    }

    fn layer(size_bits: f64, flops: f64) -> LayerProfile {
        LayerProfile {
            index: 0,
            size_bits,
            flops,
        }
    }

    fn costs(tau: &[f64], compute: &[f64], t0: f64) -> LayerCosts {
        LayerCosts {
            download_s: tau.to_vec(),
            memcpy_s: vec![0.0; tau.len()],
            compute_s: compute.to_vec(),
            start_latency_s: t0,
            base_energy_j: 0.0,
            energy_scale_j: 1.0,
        }
    }

    #[test]
    fn download_time_hand_values() {
        let bs = BsConfig {
            total_bandwidth_hz: 1e8,
            ..BsConfig::default()
        };
        let ch = ChannelState {
            gain_linear: 1.0,
            spectral_efficiency: 2.0,
        };
        let l = layer(8e6, 1.0);
        assert!((layer_download_time(&l, 0.5, &bs, &ch).unwrap() - 0.08).abs() < 1e-15);
        let unit = layer(2e8, 1.0);
        assert_eq!(layer_download_time(&unit, 1.0, &bs, &ch).unwrap(), 1.0);
        let a = layer_download_time(&l, 0.2, &bs, &ch).unwrap();
        let b = layer_download_time(&l, 0.4, &bs, &ch).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-15);
        assert!(layer_download_time(&l, 0.0, &bs, &ch).is_err());
    }

    #[test]
    fn inference_time_hand_values() {
        let d = device(1e9, 2.0, 1e9, 1e-27, 0.0, 0.0);
        let l = layer(1e7, 1e9);
        let t = layer_inference_time(&d, &l, 1, 1.0).unwrap();
        assert!((t - 2.01).abs() < 1e-12);
        let half = layer_inference_time(&d, &l, 1, 0.5).unwrap();
        assert!((half - 0.01 - 2.0 * (t - 0.01)).abs() < 1e-12);
        assert!(layer_inference_time(&d, &l, 1, 0.0).is_err());
    }

    #[test]
    fn energy_hand_values() {
        let d = device(1e9, 2.0, 1e9, 1e-27, 0.0, 0.3);
        let model = ModelProfile {
            id: 0,
            name: String::new(),
            precision_tag: String::new(),
            accuracy: 0.9,
            tasks: vec![],
            layers: vec![layer(1.0, 1e9)],
        };
        let user = UserSpec {
            user_id: 0,
            device: d,
            batch_size: 1,
            deadline_s: 1.0,
            energy_budget_j: 10.0,
            compatible_models: vec![0],
            position_m: [10.0, 0.0],
            speed_mps: 0.0,
            heading_rad: 0.0,
        };
        assert_eq!(inference_energy(&user, &model, &LayerAllocation::zeros(1)), 0.3);
        let full = inference_energy(&user, &model, &LayerAllocation::full_speed(1));
        assert!((full - 2.3).abs() < 1e-12);
        let c = LayerCosts::compute_only(&user, &model);
        assert!((c.energy(&[1.0]) - full).abs() < 1e-12);
    }

    #[test]
    fn slide_recursion_cases() {
        // download-bound single layer
        let c = costs(&[0.5], &[0.2], 0.1);
        assert!((c.latency(LatencyModel::Slide, &[1.0]) - 0.7).abs() < 1e-15);
        // t0 > tau1 and second layer compute bound
        let c = costs(&[0.1, 0.1], &[0.5, 0.4], 0.3);
        let tl = c.timeline(LatencyModel::Slide, &[1.0, 1.0]).unwrap();
        assert!((tl.e2e_latency_s - (0.3 + 0.5 + 0.4)).abs() < 1e-15);
        assert_eq!(tl.inference_start_s[1], tl.inference_done_s[0]);
    }

    #[test]
    fn dai_against_slide_hand_example() {
        let c = costs(&[1.0, 1.0], &[1.0, 0.1], 0.0);
        let s = c.latency(LatencyModel::Slide, &[1.0, 1.0]);
        let d = c.latency(LatencyModel::Dai, &[1.0, 1.0]);
        assert!((s - 2.1).abs() < 1e-12);
        assert!((d - 3.1).abs() < 1e-12);
        let one = costs(&[0.4], &[0.2], 0.0);
        assert_eq!(
            one.latency(LatencyModel::Slide, &[1.0]),
            one.latency(LatencyModel::Dai, &[1.0])
        );
    }

    #[test]
    fn strict_dai_ignores_instantiation() {
        let c = costs(&[0.1], &[0.2], 0.5);
        assert!((c.latency(LatencyModel::Dai, &[1.0]) - 0.7).abs() < 1e-15);
        assert!((c.latency(LatencyModel::DaiStrict, &[1.0]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn timeline_rejects_zero_scale() {
        let c = costs(&[0.1, 0.1], &[0.2, 0.2], 0.0);
        assert!(c.timeline(LatencyModel::Slide, &[1.0, 0.0]).is_err());
        assert!(c.timeline(LatencyModel::Slide, &[1.0]).is_err());
    }
}
