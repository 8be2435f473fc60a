//! Detection-layer formulas for a single measuring port.
//!
//! Two weak coherent pulses with intensities `k_a`, `k_b` (already halved by
//! the relay's input splitter) interfere on a balanced beam splitter watched
//! by two threshold detectors. A click is successful when exactly one
//! detector fires.

use crate::error::{Error, Result};
use crate::model::ChannelParams;
use crate::special::{bessel_i0m1, binomial};

/// Arm transmittance `10^(-alpha L / 10)`.
pub fn transmittance(channel: &ChannelParams) -> f64 {
    10f64.powf(-channel.fiber_alpha * channel.distance_km / 10.0)
}

/// Overall efficiency of one arm: fiber, the relay's input splitter and the detector.
pub fn total_efficiency(channel: &ChannelParams) -> f64 {
    0.5 * channel.detector_efficiency * transmittance(channel)
}

/// Single-click statistics of one port for a pair of intensities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortGain {
    /// Probability that neither detector fires when the fields do not
    /// interfere: `(1 - p_d) exp(-eta_t (k_a + k_b) / 2)`.
    pub vacuum_yield: f64,
    /// Single-click probability averaged over a uniform phase difference.
    pub phase_averaged: f64,
    one_minus_yield: f64,
    amplitude: f64,
}

impl PortGain {
    pub fn new(k_a: f64, k_b: f64, eta_t: f64, p_d: f64) -> Self {
        let half_mean = 0.5 * eta_t * (k_a + k_b);
        let vacuum_yield = (1.0 - p_d) * (-half_mean).exp();
        // 1 - y without cancellation when both the loss term and p_d are tiny
        let one_minus_yield = p_d + (1.0 - p_d) * -(-half_mean).exp_m1();
        let amplitude = eta_t * (k_a * k_b).sqrt();
        let i0m1 = bessel_i0m1(amplitude).expect("amplitude is nonnegative");
        PortGain {
            vacuum_yield,
            phase_averaged: 2.0 * vacuum_yield * (i0m1 + one_minus_yield),
            one_minus_yield,
            amplitude,
        }
    }

    /// Single-click probability at a fixed phase difference.
    pub fn fixed_phase(&self, delta_theta: f64) -> f64 {
        let c = self.amplitude * delta_theta.cos();
        let cosh_m1 = 2.0 * (0.5 * c).sinh().powi(2);
        2.0 * self.vacuum_yield * (cosh_m1 + self.one_minus_yield)
    }
}

/// `q^{dtheta}`: probability that exactly one detector clicks.
pub fn gain_fixed_phase(k_a: f64, k_b: f64, delta_theta: f64, eta_t: f64, p_d: f64) -> f64 {
    PortGain::new(k_a, k_b, eta_t, p_d).fixed_phase(delta_theta)
}

/// `q = 2 y I0(eta_t sqrt(k_a k_b)) - 2 y^2`.
pub fn gain_phase_averaged(k_a: f64, k_b: f64, eta_t: f64, p_d: f64) -> f64 {
    PortGain::new(k_a, k_b, eta_t, p_d).phase_averaged
}

/// Single-click probability for equal intensities sent in phase.
pub fn matched_gain(k: f64, eta_t: f64, p_d: f64) -> f64 {
    gain_fixed_phase(k, k, 0.0, eta_t, p_d)
}

/// Fraction of matched single clicks that land on the wrong detector.
pub fn adjacent_bit_error(mu: f64, eta_t: f64, p_d: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::OutOfDomain {
            name: "mu",
            value: mu,
            domain: "[0, inf)",
        });
    }
    let x = eta_t * mu;
    // numerator e^{-x} - y = p_d e^{-x}; denominator e^x + e^{-x} - 2y
    let wrong = p_d * (-x).exp();
    let total = 2.0 * x.sinh() + 2.0 * wrong;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateChannel(format!(
            "no single clicks at eta_t = {eta_t:e}, mu = {mu}, p_d = {p_d:e}"
        )));
    }
    Ok(wrong / total)
}

/// Bit-flip rate between user 1 and a user `links` ports away: the
/// probability that an odd number of the `links` adjacent pairs flipped.
pub fn marginal_error(adjacent: f64, links: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&adjacent) {
        return Err(Error::OutOfDomain {
            name: "adjacent error",
            value: adjacent,
            domain: "[0, 1]",
        });
    }
    if links == 0 {
        return Err(Error::OutOfDomain {
            name: "links",
            value: 0.0,
            domain: "{1, 2, ...}",
        });
    }
    let j = links + 1;
    let e = adjacent;
    let sum = (0..=(j - 2) / 2)
        .map(|i| {
            binomial((j - 1) as u64, (2 * i + 1) as i64)
                * e.powi((2 * i + 1) as i32)
                * (1.0 - e).powi((j - 2 * i - 2) as i32)
        })
        .sum();
    Ok(sum)
}
