//! Domain types shared across the engine.
//!
//! Intensity settings are addressed by index: `0` is the signal intensity,
//! `1..N` are the nonzero decoys in decreasing order and `N` is the vacuum.
//! Users are indexed `0..N` and port `j` interferes users `j` and `j + 1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

/// Physical layer: detectors and fiber. Missing fields take the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub detector_efficiency: f64,
    /// Dark-count probability per detector per time bin.
    pub dark_count_rate: f64,
    /// Fiber attenuation in dB/km.
    #[serde(rename = "fiber_alpha_db_per_km")]
    pub fiber_alpha: f64,
    /// Length of each user-to-relay arm.
    pub distance_km: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            detector_efficiency: 0.77,
            dark_count_rate: 3.03e-9,
            fiber_alpha: 0.16,
            distance_km: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn at_distance(mut self, distance_km: f64) -> Self {
        self.distance_km = distance_km;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let eta = self.detector_efficiency;
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid(
                "detector_efficiency",
                format!("{eta} not in [0, 1]"),
            ));
        }
        let pd = self.dark_count_rate;
        if !(0.0..1.0).contains(&pd) {
            return Err(Error::invalid(
                "dark_count_rate",
                format!("{pd} not in [0, 1)"),
            ));
        }
        if !(self.fiber_alpha > 0.0 && self.fiber_alpha.is_finite()) {
            return Err(Error::invalid(
                "fiber_alpha_db_per_km",
                format!("{} must be positive", self.fiber_alpha),
            ));
        }
        if !(self.distance_km >= 0.0 && self.distance_km.is_finite()) {
            return Err(Error::invalid(
                "distance_km",
                format!("{} must be a nonnegative length", self.distance_km),
            ));
        }
        Ok(())
    }
}

/// Source settings common to all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(rename = "users")]
    pub num_users: usize,
    pub signal_intensity: f64,
    /// `N` entries: `N - 1` strictly decreasing nonzero decoys followed by the vacuum.
    pub decoy_intensities: Vec<f64>,
    /// One probability per setting, signal first, vacuum last (`N + 1` entries).
    pub send_probabilities: Vec<f64>,
    pub phase_slices: u32,
}

impl SourceConfig {
    /// Number of intensity settings, vacuum included.
    pub fn num_settings(&self) -> usize {
        self.decoy_intensities.len() + 1
    }

    pub fn num_ports(&self) -> usize {
        self.num_users - 1
    }

    pub fn vacuum_index(&self) -> usize {
        self.num_settings() - 1
    }

    /// Intensity of setting `k` (0 is the signal).
    pub fn intensity(&self, k: usize) -> f64 {
        if k == 0 {
            self.signal_intensity
        } else {
            self.decoy_intensities[k - 1]
        }
    }

    pub fn intensities(&self) -> Vec<f64> {
        (0..self.num_settings())
            .map(|k| self.intensity(k))
            .collect()
    }

    pub fn probability(&self, k: usize) -> f64 {
        self.send_probabilities[k]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_users;
        if n < 3 {
            return Err(Error::invalid(
                "users",
                format!("{n} users; at least 3 required"),
            ));
        }
        if self.phase_slices < 4 || !self.phase_slices.is_multiple_of(2) {
            return Err(Error::invalid(
                "phase_slices",
                format!("{} must be an even integer >= 4", self.phase_slices),
            ));
        }
        if !(self.signal_intensity > 0.0 && self.signal_intensity.is_finite()) {
            return Err(Error::invalid(
                "signal_intensity",
                format!("{} must be positive", self.signal_intensity),
            ));
        }
        if self.decoy_intensities.len() != n {
            return Err(Error::invalid(
                "decoy_intensities",
                format!(
                    "expected {n} entries ({} nonzero decoys and the vacuum), got {}",
                    n - 1,
                    self.decoy_intensities.len()
                ),
            ));
        }
        if *self.decoy_intensities.last().unwrap() != 0.0 {
            return Err(Error::invalid(
                "decoy_intensities",
                "last decoy must be the vacuum (0)",
            ));
        }
        let intensities = self.intensities();
        for w in intensities.windows(2) {
            if !(w[0] > w[1]) || !w[1].is_finite() {
                return Err(Error::invalid(
                    "decoy_intensities",
                    format!(
                        "intensities not strictly decreasing: {} followed by {}",
                        w[0], w[1]
                    ),
                ));
            }
        }
        if self.send_probabilities.len() != self.num_settings() {
            return Err(Error::invalid(
                "send_probabilities",
                format!(
                    "expected {} entries, got {}",
                    self.num_settings(),
                    self.send_probabilities.len()
                ),
            ));
        }
        for &p in &self.send_probabilities {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(
                    "send_probabilities",
                    format!("{p} not in (0, 1)"),
                ));
            }
        }
        let total: f64 = self.send_probabilities.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(Error::invalid(
                "send_probabilities",
                format!("normalization: probabilities sum to {total}, not 1"),
            ));
        }
        Ok(())
    }
}

/// Finite-key parameters. Missing fields take the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    /// Total number of time bins.
    pub data_size: f64,
    pub eps_ec: f64,
    pub eps_pa: f64,
    /// Failure probability of each Chernoff-bound application.
    pub eps_chernoff: f64,
    pub ec_efficiency: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        SecurityParams {
            data_size: 1e14,
            eps_ec: 1e-15,
            eps_pa: 1e-10,
            eps_chernoff: 1e-10,
            ec_efficiency: 1.1,
        }
    }
}

impl SecurityParams {
    /// `ln(1 / eps_chernoff)`.
    pub fn beta(&self) -> f64 {
        -self.eps_chernoff.ln()
    }

    pub fn validate(&self) -> Result<()> {
        for (field, eps) in [
            ("eps_ec", self.eps_ec),
            ("eps_pa", self.eps_pa),
            ("eps_chernoff", self.eps_chernoff),
        ] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::invalid(field, format!("{eps} not in (0, 1)")));
            }
        }
        if !(self.data_size >= 1.0 && self.data_size.is_finite()) {
            return Err(Error::invalid(
                "data_size",
                format!("{} must be at least 1", self.data_size),
            ));
        }
        if !(self.ec_efficiency >= 1.0 && self.ec_efficiency.is_finite()) {
            return Err(Error::invalid(
                "ec_efficiency",
                format!("{} must be at least 1", self.ec_efficiency),
            ));
        }
        Ok(())
    }
}

/// A source, channel and security triple that passed validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBundle")]
pub struct Bundle {
    source: SourceConfig,
    channel: ChannelParams,
    security: SecurityParams,
}

#[derive(Deserialize)]
struct RawBundle {
    source: SourceConfig,
    channel: ChannelParams,
    security: SecurityParams,
}

impl TryFrom<RawBundle> for Bundle {
    type Error = Error;

    fn try_from(raw: RawBundle) -> Result<Self> {
        Bundle::validate(raw.source, raw.channel, raw.security)
    }
}

impl Bundle {
    /// Checks every invariant and reports the first violation.
    pub fn validate(
        source: SourceConfig,
        channel: ChannelParams,
        security: SecurityParams,
    ) -> Result<Self> {
        channel.validate()?;
        source.validate()?;
        security.validate()?;
        Ok(Bundle {
            source,
            channel,
            security,
        })
    }

    pub fn source(&self) -> &SourceConfig {
        &self.source
    }

    pub fn channel(&self) -> &ChannelParams {
        &self.channel
    }

    pub fn security(&self) -> &SecurityParams {
        &self.security
    }

    pub fn num_users(&self) -> usize {
        self.source.num_users
    }

    pub fn with_source(&self, source: SourceConfig) -> Result<Self> {
        Bundle::validate(source, self.channel, self.security)
    }

    pub fn with_channel(&self, channel: ChannelParams) -> Result<Self> {
        Bundle::validate(self.source.clone(), channel, self.security)
    }

    pub fn with_distance(&self, distance_km: f64) -> Result<Self> {
        self.with_channel(self.channel.at_distance(distance_km))
    }

    pub fn with_security(&self, security: SecurityParams) -> Result<Self> {
        Bundle::validate(self.source.clone(), self.channel, security)
    }
}

/// Expected post-matching statistics of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceStats {
    pub phase_slices: u32,
    /// `[k][j]`: retained `(k|k)` clicks at port `j` in any single slice.
    pub retained_clicks: Vec<Vec<f64>>,
    /// `[j]`: size of each per-slice set at port `j`.
    pub slice_totals: Vec<f64>,
    /// `[k]`: sifted coincidences with common intensity `k`.
    pub sifted: Vec<f64>,
    pub adjacent_error: f64,
    /// Error rate between user 1 and users `2..=N`.
    pub marginal_errors: Vec<f64>,
}

impl CoincidenceStats {
    /// Retained clicks for slice `m`; the model makes every slice identical.
    pub fn retained(&self, k: usize, port: usize, m: u32) -> f64 {
        debug_assert!(m < self.phase_slices / 2);
        self.retained_clicks[k][port]
    }

    pub fn min_slice_total(&self) -> f64 {
        self.slice_totals
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn worst_marginal_error(&self) -> f64 {
        self.marginal_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// A negative intermediate bound that was replaced by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampNote {
    pub quantity: String,
    pub raw: f64,
}

/// Lower bounds on photon-number contributions to the signal coincidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    /// Photon number `n` mapped to a lower bound on `s_mu^n`.
    pub s_mu_n_lower: BTreeMap<u32, f64>,
    pub phase_error_upper: f64,
    /// Failure-probability budget consumed by finite-size conversions.
    pub eps_spent: f64,
    pub clamped: Vec<ClampNote>,
}

/// Which phase-error estimate feeds the key rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseErrorSource {
    /// Photon-number contributions computed exactly (unlimited decoy settings).
    Exact,
    /// The closed-form decoy estimator with the configured settings.
    Decoy,
    /// Decoy estimator with Chernoff corrections on every count.
    DecoyFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// `max(key_rate_raw, 0)`.
    pub key_rate: f64,
    pub key_rate_raw: f64,
    /// `None` when the channel is lossless and the bound diverges.
    pub multicast_bound: Option<f64>,
    pub phase_error_upper: f64,
    pub adjacent_error: f64,
    pub marginal_errors: Vec<f64>,
    pub worst_marginal_error: f64,
    pub sifted_signal: f64,
    /// Sifted signal coincidences per time bin.
    pub signal_efficiency: f64,
    /// Error-correction and privacy-amplification penalties per time bin.
    pub finite_correction: f64,
    pub phase_error_source: PhaseErrorSource,
    pub distance_km: f64,
    pub data_size: f64,
    pub eps_spent: f64,
    pub clamped: Vec<ClampNote>,
    /// Set for exact phase errors on short arms, where the first-order
    /// photon-number terms overstate the coincidences.
    #[serde(default)]
    pub approximation_limited: bool,
    pub params_used: SourceConfig,
}
