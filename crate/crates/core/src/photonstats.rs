//! Photon-number-resolved signal statistics.
//!
//! `s_mu^n` counts the signal coincidences to which the users jointly
//! contributed `n` photons. Each port is treated on its own (multi-port
//! click corrections are dropped), which is tight once the channel is lossy.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matching::CoincidenceModel;
use crate::model::Bundle;
use crate::special::{binomial, ln_factorial};

pub const DEFAULT_MAX_PHOTONS: u32 = 20;

/// Probability that exactly one detector fires after `f` and `g` photons
/// interfere on a balanced splitter.
pub fn threshold_click_prob(f: u32, g: u32, p_d: f64) -> f64 {
    let n = f + g;
    if n == 0 {
        return 2.0 * p_d * (1.0 - p_d);
    }
    // all photons leave through the same output: C(n, f) / 2^n per side
    2.0 * (1.0 - p_d) * binomial(u64::from(n), i64::from(f)) * 0.5f64.powi(n as i32)
}

/// `Y_(l,r)`: single-click probability when the two users send `l` and `r` photons.
pub fn pair_yield(l: u32, r: u32, eta_t: f64, p_d: f64) -> f64 {
    let lost = 1.0 - eta_t;
    let mut total = 0.0;
    for f in 0..=l {
        for g in 0..=r {
            let survive =
                binomial(u64::from(l), i64::from(f)) * binomial(u64::from(r), i64::from(g));
            let weight = survive * eta_t.powi((f + g) as i32) * lost.powi((l + r - f - g) as i32);
            total += weight * threshold_click_prob(f, g, p_d);
        }
    }
    total
}

/// Per-port and per-photon-number building blocks for one configuration.
#[derive(Debug, Clone)]
pub struct PhotonModel {
    /// `[n]`: expected retained `(mu|mu)` clicks at one port with `n` photons
    /// sent by its two users, before dividing by the port's slice total.
    port_terms: Vec<f64>,
    slice_totals: Vec<f64>,
    half_slices: f64,
    s_mu: f64,
    num_users: usize,
}

impl PhotonModel {
    pub fn new(bundle: &Bundle, max_photons: u32) -> Result<Self> {
        let model = CoincidenceModel::new(bundle);
        let stats = model.stats()?;
        let source = bundle.source();
        let eta_t = model.eta_t();
        let p_d = bundle.channel().dark_count_rate;
        let mu = source.signal_intensity;
        let slices = f64::from(source.phase_slices);
        let p_mu = source.probability(0);
        let scale = 4.0 * bundle.security().data_size * p_mu * p_mu / (slices * slices);
        let port_terms = (0..=max_photons)
            .map(|n| {
                // e^{-2mu} mu^n / (l! (n - l)!) grouped in log space
                (0..=n)
                    .map(|l| {
                        let ln_w = -2.0 * mu + f64::from(n) * mu.ln()
                            - ln_factorial(u64::from(l))
                            - ln_factorial(u64::from(n - l));
                        ln_w.exp() * pair_yield(l, n - l, eta_t, p_d)
                    })
                    .sum::<f64>()
                    * scale
            })
            .collect();
        Ok(PhotonModel {
            port_terms,
            slice_totals: stats.slice_totals.clone(),
            half_slices: 0.5 * slices,
            s_mu: stats.sifted[0],
            num_users: source.num_users,
        })
    }

    pub fn max_photons(&self) -> u32 {
        (self.port_terms.len() - 1) as u32
    }

    /// Signal coincidences from the matching model.
    pub fn s_mu(&self) -> f64 {
        self.s_mu
    }

    /// `s_mu^n`, summing over every split of `n` photons among the ports.
    pub fn s_mu_n(&self, n: u32) -> f64 {
        assert!(
            n <= self.max_photons(),
            "photon number {n} beyond the tabulated range"
        );
        let ports = self.slice_totals.len();
        let n_min = self
            .slice_totals
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(n_min > 0.0) {
            return 0.0;
        }
        let mut parts = vec![0u32; ports];
        let mut total = 0.0;
        compositions(n, &mut parts, 0, &mut |parts| {
            total += parts
                .iter()
                .zip(&self.slice_totals)
                .map(|(&nj, &tot)| self.port_terms[nj as usize] / tot)
                .product::<f64>();
        });
        self.half_slices * n_min * total
    }

    /// Every `s_mu^n` for `n` up to the tabulated maximum.
    pub fn terms(&self) -> BTreeMap<u32, f64> {
        (0..=self.max_photons())
            .map(|n| (n, self.s_mu_n(n)))
            .collect()
    }

    /// Photon-number parity whose contributions count as phase-error free.
    pub fn good_parity(&self) -> u32 {
        parity_for(self.num_users)
    }
}

/// Even photon numbers for an odd number of users and vice versa.
pub fn parity_for(num_users: usize) -> u32 {
    if num_users % 2 == 1 {
        0
    } else {
        1
    }
}

fn compositions(remaining: u32, parts: &mut [u32], pos: usize, visit: &mut impl FnMut(&[u32])) {
    if pos + 1 == parts.len() {
        parts[pos] = remaining;
        visit(parts);
        return;
    }
    for first in 0..=remaining {
        parts[pos] = first;
        compositions(remaining - first, parts, pos + 1, visit);
    }
}

/// `s_mu^n` for the configured signal intensity.
pub fn signal_coincidences_nphoton(n: u32, bundle: &Bundle) -> Result<f64> {
    Ok(PhotonModel::new(bundle, n)?.s_mu_n(n))
}

/// Phase error computed from the exact photon-number contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPhaseError {
    pub phase_error: f64,
    pub s_mu: f64,
    /// Contributions of the good parity, keyed by photon number.
    pub terms: BTreeMap<u32, f64>,
    /// Relative size of the last included term; a convergence indicator.
    pub last_term_ratio: f64,
    /// `sum_n s_mu^n / s_mu` over all parities up to the cutoff. Above 1 the
    /// per-port terms, which leave out the relay's choice among several
    /// successful ports, overstate the coincidences.
    pub total_ratio: f64,
}

/// `1 - sum over good-parity n of s_mu^n / s_mu`, clamped to `[0, 1]`.
pub fn phase_error_from_terms(terms: &BTreeMap<u32, f64>, s_mu: f64) -> Result<f64> {
    if !(s_mu > 0.0) {
        return Err(Error::NoSignal);
    }
    let good: f64 = terms.values().sum();
    Ok((1.0 - good / s_mu).clamp(0.0, 1.0))
}

/// Truncating at `max_photons` drops nonnegative terms, so the result can
/// only overstate the phase error. When the photon-number terms add up to
/// more than `s_mu` they are normalized by their own total instead, which
/// keeps short, high-intensity links from reporting a spuriously small error.
pub fn phase_error_exact(bundle: &Bundle, max_photons: u32) -> Result<ExactPhaseError> {
    let users = bundle.num_users() as u32;
    if max_photons < users {
        return Err(Error::invalid(
            "max_photons",
            format!("{max_photons} is below the number of users {users}"),
        ));
    }
    let model = PhotonModel::new(bundle, max_photons)?;
    let parity = model.good_parity();
    let terms: BTreeMap<u32, f64> = (parity..=max_photons)
        .step_by(2)
        .map(|n| (n, model.s_mu_n(n)))
        .collect();
    let s_mu = model.s_mu();
    let total: f64 = (0..=max_photons).map(|n| model.s_mu_n(n)).sum();
    let phase_error = phase_error_from_terms(&terms, s_mu.max(total))?;
    let last = terms.values().next_back().copied().unwrap_or(0.0);
    Ok(ExactPhaseError {
        phase_error,
        s_mu,
        terms,
        last_term_ratio: last / s_mu,
        total_ratio: total / s_mu,
    })
}
