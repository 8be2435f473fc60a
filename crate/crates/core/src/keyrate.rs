//! Conference key rate and the repeaterless multicast bound.

use serde::{Deserialize, Serialize};

use crate::channel;
use crate::decoy::{self, ObservedCounts};
use crate::error::{Error, Result};
use crate::matching::CoincidenceModel;
use crate::model::{
    Bundle, ChannelParams, ClampNote, CoincidenceStats, PhaseErrorSource, RateReport,
};
use crate::photonstats::{self, DEFAULT_MAX_PHOTONS};
use crate::special::binary_entropy;

/// Which rate an evaluation computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Asymptotic rate with the phase error from exact photon-number statistics.
    AsymptoticExact,
    /// Asymptotic rate with the configured decoy settings.
    AsymptoticDecoy,
    /// Finite-size rate (three users).
    Finite,
}

impl Objective {
    pub fn phase_error_source(self) -> PhaseErrorSource {
        match self {
            Objective::AsymptoticExact => PhaseErrorSource::Exact,
            Objective::AsymptoticDecoy => PhaseErrorSource::Decoy,
            Objective::Finite => PhaseErrorSource::DecoyFinite,
        }
    }
}

/// `-log2(1 - eta^2)`; `None` for a lossless arm, where the bound diverges.
pub fn multicast_bound(channel: &ChannelParams) -> Option<f64> {
    let eta = channel::transmittance(channel);
    if eta >= 1.0 {
        return None;
    }
    Some(-(-eta * eta).ln_1p() / std::f64::consts::LN_2)
}

/// Error-correction and privacy-amplification penalties per time bin.
pub fn finite_correction(bundle: &Bundle) -> f64 {
    let sec = bundle.security();
    let users = bundle.num_users() as f64;
    ((2.0 * (users - 1.0) / sec.eps_ec).log2() + 2.0 * (1.0 / (2.0 * sec.eps_pa)).log2())
        / sec.data_size
}

/// `Q (1 - H2(phi) - f max_j H2(E_1j))` with `Q = s_mu / data_size`.
pub fn secret_fraction_rate(
    signal_efficiency: f64,
    phase_error: f64,
    worst_marginal: f64,
    ec_efficiency: f64,
) -> Result<f64> {
    // past 1/2 the entropy would fall again; the estimate carries no secrecy there
    let h_phase = binary_entropy(phase_error.min(0.5))?;
    let h_bit = binary_entropy(worst_marginal.min(0.5))?;
    Ok(signal_efficiency * (1.0 - h_phase - ec_efficiency * h_bit))
}

struct PhaseEstimate {
    value: f64,
    eps_spent: f64,
    clamped: Vec<ClampNote>,
    approximation_limited: bool,
}

/// Below this arm length the first-order photon-number terms are unreliable.
pub const APPROXIMATION_LIMIT_KM: f64 = 10.0;

fn phase_estimate(
    bundle: &Bundle,
    stats: &CoincidenceStats,
    objective: Objective,
) -> Result<PhaseEstimate> {
    match objective {
        Objective::AsymptoticExact => {
            let max_photons = DEFAULT_MAX_PHOTONS.max(bundle.num_users() as u32);
            let exact = photonstats::phase_error_exact(bundle, max_photons)?;
            Ok(PhaseEstimate {
                value: exact.phase_error,
                eps_spent: 0.0,
                clamped: Vec::new(),
                approximation_limited: exact.total_ratio > 1.01
                    || bundle.channel().distance_km < APPROXIMATION_LIMIT_KM,
            })
        }
        Objective::AsymptoticDecoy => {
            let bounds =
                decoy::bounds_asymptotic(&ObservedCounts::from_stats(bundle.source(), stats))?;
            Ok(PhaseEstimate {
                value: bounds.phase_error_upper,
                eps_spent: bounds.eps_spent,
                clamped: bounds.clamped,
                approximation_limited: false,
            })
        }
        Objective::Finite => {
            let bounds = decoy::bounds_3user_finite(
                &ObservedCounts::from_stats(bundle.source(), stats),
                bundle.security(),
            )?;
            Ok(PhaseEstimate {
                value: bounds.phase_error_upper,
                eps_spent: bounds.eps_spent,
                clamped: bounds.clamped,
                approximation_limited: false,
            })
        }
    }
}

/// Evaluates the rate for `objective`, keeping every intermediate.
pub fn evaluate(bundle: &Bundle, objective: Objective) -> Result<RateReport> {
    if objective == Objective::Finite && bundle.num_users() != 3 {
        return Err(Error::Unsupported(format!(
            "finite-size rate needs 3 users, got {}",
            bundle.num_users()
        )));
    }
    let stats = CoincidenceModel::new(bundle).stats()?;
    let s_mu = stats.sifted[0];
    if !(s_mu > 0.0) {
        return Err(Error::NoSignal);
    }
    let phase = phase_estimate(bundle, &stats, objective)?;
    let sec = bundle.security();
    let signal_efficiency = s_mu / sec.data_size;
    let worst = stats.worst_marginal_error();
    let asymptotic =
        secret_fraction_rate(signal_efficiency, phase.value, worst, sec.ec_efficiency)?;
    let correction = if objective == Objective::Finite {
        finite_correction(bundle)
    } else {
        0.0
    };
    let key_rate_raw = asymptotic - correction;
    Ok(RateReport {
        key_rate: key_rate_raw.max(0.0),
        key_rate_raw,
        multicast_bound: multicast_bound(bundle.channel()),
        phase_error_upper: phase.value,
        adjacent_error: stats.adjacent_error,
        worst_marginal_error: worst,
        marginal_errors: stats.marginal_errors,
        sifted_signal: s_mu,
        signal_efficiency,
        finite_correction: correction,
        phase_error_source: objective.phase_error_source(),
        distance_km: bundle.channel().distance_km,
        data_size: sec.data_size,
        eps_spent: phase.eps_spent,
        clamped: phase.clamped,
        approximation_limited: phase.approximation_limited,
        params_used: bundle.source().clone(),
    })
}

/// Asymptotic rate; `exact_phase_error` selects unlimited decoys.
pub fn asymptotic_rate(bundle: &Bundle, exact_phase_error: bool) -> Result<RateReport> {
    let objective = if exact_phase_error {
        Objective::AsymptoticExact
    } else {
        Objective::AsymptoticDecoy
    };
    evaluate(bundle, objective)
}

/// Finite-size rate for three users.
pub fn finite_rate(bundle: &Bundle) -> Result<RateReport> {
    evaluate(bundle, Objective::Finite)
}
