//! Downlink channel model: log-distance path loss with flat Rayleigh block
//! fading, and the worst-case gain seen along a straight-line trajectory.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlideError};
use crate::profiles::UserSpec;
use crate::rng::substream;

/// Number of trajectory samples used by [`worst_case_channel`].
pub const TRAJECTORY_SAMPLES: usize = 10;

fn default_tx_psd() -> f64 {
    -29.0
}
fn default_noise_psd() -> f64 {
    -174.0
}
fn default_radius() -> f64 {
    200.0
}
fn default_exponent() -> f64 {
    3.5
}
fn default_ref_db() -> f64 {
    30.0
}
fn default_min_distance() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsConfig {
    pub total_bandwidth_hz: f64,
    #[serde(default = "default_tx_psd")]
    pub tx_psd_dbm_per_hz: f64,
    #[serde(default = "default_noise_psd")]
    pub noise_psd_dbm_per_hz: f64,
    #[serde(default = "default_radius")]
    pub coverage_radius_m: f64,
    #[serde(default = "default_exponent")]
    pub pathloss_exponent: f64,
    /// Loss at the 1 m reference distance.
    #[serde(default = "default_ref_db")]
    pub pathloss_ref_db: f64,
    /// Users closer than this are evaluated at this distance.
    #[serde(default = "default_min_distance")]
    pub min_distance_m: f64,
}

impl Default for BsConfig {
    fn default() -> Self {
        BsConfig {
            total_bandwidth_hz: 400e6,
            tx_psd_dbm_per_hz: default_tx_psd(),
            noise_psd_dbm_per_hz: default_noise_psd(),
            coverage_radius_m: default_radius(),
            pathloss_exponent: default_exponent(),
            pathloss_ref_db: default_ref_db(),
            min_distance_m: default_min_distance(),
        }
    }
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl BsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_bandwidth_hz.is_finite() && self.total_bandwidth_hz > 0.0) {
            return Err(SlideError::invalid("bs.total_bandwidth_hz", "must be positive"));
        }
        if !(self.coverage_radius_m.is_finite() && self.coverage_radius_m > 0.0) {
            return Err(SlideError::invalid("bs.coverage_radius_m", "must be positive"));
        }
        if !(self.min_distance_m > 0.0 && self.min_distance_m <= self.coverage_radius_m) {
            return Err(SlideError::invalid(
                "bs.min_distance_m",
                "must lie in (0, coverage_radius_m]",
            ));
        }
        Ok(())
    }

    /// Transmit PSD in W/Hz.
    pub fn tx_psd_w(&self) -> f64 {
        dbm_to_watts(self.tx_psd_dbm_per_hz)
    }

    /// Noise PSD in W/Hz.
    pub fn noise_psd_w(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_per_hz)
    }

    pub fn pathloss_db(&self, distance_m: f64) -> f64 {
        self.pathloss_ref_db + 10.0 * self.pathloss_exponent * distance_m.log10()
    }

    pub fn pathloss_gain(&self, distance_m: f64) -> f64 {
        10f64.powf(-self.pathloss_db(distance_m) / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub gain_linear: f64,
    /// Bits/s/Hz.
    pub spectral_efficiency: f64,
}

/// log2(1 + snr).
pub fn spectral_efficiency_from_snr(snr: f64) -> f64 {
    (1.0 + snr).log2()
}

impl ChannelState {
    pub fn from_gain(bs: &BsConfig, gain_linear: f64) -> Self {
        let snr = bs.tx_psd_w() * gain_linear / bs.noise_psd_w();
        ChannelState {
            gain_linear,
            spectral_efficiency: spectral_efficiency_from_snr(snr),
        }
    }
}

/// |h|^2 of the block-fading coefficient tied to `seed`.
pub fn fading_power(seed: u64) -> f64 {
    let mut rng = substream(seed, "fading");
    Exp1.sample(&mut rng)
}

/// Draws a Rayleigh-faded channel at `distance_m`. Bit-identical for equal seeds.
pub fn sample_channel(bs: &BsConfig, distance_m: f64, rng_seed: u64) -> Result<ChannelState> {
    if !(distance_m > 0.0 && distance_m <= bs.coverage_radius_m) {
        return Err(SlideError::DistanceOutOfRange {
            distance_m,
            radius_m: bs.coverage_radius_m,
        });
    }
    let d = distance_m.max(bs.min_distance_m);
    Ok(ChannelState::from_gain(
        bs,
        bs.pathloss_gain(d) * fading_power(rng_seed),
    ))
}

/// One point of a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time_s: f64,
    /// Distance to the BS after clamping into the coverage disk.
    pub distance_m: f64,
    pub clamped: bool,
}

/// Evenly spaced samples of the user's straight-line path over `[0, horizon_s]`.
pub fn trajectory(bs: &BsConfig, user: &UserSpec, horizon_s: f64) -> Vec<TrajectoryPoint> {
    let (sin_h, cos_h) = user.heading_rad.sin_cos();
    (0..TRAJECTORY_SAMPLES)
        .map(|j| {
            let t = horizon_s * j as f64 / (TRAJECTORY_SAMPLES - 1) as f64;
            let x = user.position_m[0] + user.speed_mps * t * cos_h;
            let y = user.position_m[1] + user.speed_mps * t * sin_h;
            let raw = x.hypot(y);
            let clamped = raw > bs.coverage_radius_m;
            TrajectoryPoint {
                time_s: t,
                distance_m: raw.clamp(bs.min_distance_m, bs.coverage_radius_m),
                clamped,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub state: ChannelState,
    /// Index of the minimizing trajectory sample.
    pub sample_index: usize,
    /// Set when part of the trajectory left the coverage disk.
    pub clamped: bool,
}

/// Minimum-gain channel over the user's trajectory within `horizon_s`.
///
/// Fading is held constant for the horizon (block fading), so only the
/// large-scale loss varies along the path and a static user reproduces
/// [`sample_channel`] at its start position.
pub fn worst_case_channel(
    bs: &BsConfig,
    user: &UserSpec,
    horizon_s: f64,
    rng_seed: u64,
) -> Result<WorstCase> {
    if !(horizon_s.is_finite() && horizon_s > 0.0) {
        return Err(SlideError::Domain(format!("horizon {horizon_s} s must be positive")));
    }
    let start = user.position_m[0].hypot(user.position_m[1]).max(bs.min_distance_m);
    if start > bs.coverage_radius_m {
        return Err(SlideError::DistanceOutOfRange {
            distance_m: start,
            radius_m: bs.coverage_radius_m,
        });
    }
    let fading = fading_power(rng_seed);
    let points = trajectory(bs, user, horizon_s);
    let clamped = points.iter().any(|p| p.clamped);
    let (sample_index, gain) = points
        .iter()
        .map(|p| bs.pathloss_gain(p.distance_m) * fading)
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, g)| if g < best.1 { (j, g) } else { best });
    Ok(WorstCase {
        state: ChannelState::from_gain(bs, gain),
        sample_index,
        clamped,
    })
}

/// Uniform point in the annulus `[min_distance, radius]` of the coverage disk.
pub fn uniform_position<R: Rng>(bs: &BsConfig, rng: &mut R) -> [f64; 2] {
    let r_min2 = bs.min_distance_m.powi(2);
    let r_max2 = bs.coverage_radius_m.powi(2);
    let r = (r_min2 + rng.random::<f64>() * (r_max2 - r_min2)).sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    [r * theta.cos(), r * theta.sin()]
}
