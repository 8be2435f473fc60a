//! Decoy-state lower bounds on photon-number contributions.
//!
//! With every user sending intensity `k`, the joint state is a phase-randomized
//! coherent state of total intensity `c k`, `c = 2(N - 1)`. After normalizing
//! each sifted count as
//!
//! `S_k = p_mu^c e^{c k} s_k / (p_k^c e^{c mu})`
//!
//! one gets `S_k = sum_n (k / mu)^n s_mu^n`, a power series in `k` whose
//! low-order coefficients are isolated by Gaussian elimination across the
//! decoy intensities.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ClampNote, CoincidenceStats, DecoyBounds, SecurityParams, SourceConfig};

/// Sifted counts per setting together with the source that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedCounts {
    pub num_users: usize,
    /// Signal first, vacuum last.
    pub intensities: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub sifted: Vec<f64>,
}

impl ObservedCounts {
    pub fn new(source: &SourceConfig, sifted: Vec<f64>) -> Self {
        ObservedCounts {
            num_users: source.num_users,
            intensities: source.intensities(),
            probabilities: source.send_probabilities.clone(),
            sifted,
        }
    }

    pub fn from_stats(source: &SourceConfig, stats: &CoincidenceStats) -> Self {
        Self::new(source, stats.sifted.clone())
    }

    fn exponent(&self) -> f64 {
        2.0 * (self.num_users as f64 - 1.0)
    }

    fn signal(&self) -> f64 {
        self.sifted[0]
    }

    fn check(&self) -> Result<()> {
        let settings = self.num_users + 1;
        if self.intensities.len() != settings
            || self.probabilities.len() != settings
            || self.sifted.len() != settings
        {
            return Err(Error::DecoyOrdering(format!(
                "{} users need {settings} settings",
                self.num_users
            )));
        }
        if *self.intensities.last().unwrap() != 0.0 {
            return Err(Error::DecoyOrdering(
                "last setting must be the vacuum".into(),
            ));
        }
        for w in self.intensities.windows(2) {
            if !(w[0] > w[1]) {
                return Err(Error::DecoyOrdering(format!(
                    "intensities must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(p) = self.probabilities.iter().find(|&&p| !(p > 0.0)) {
            return Err(Error::DecoyOrdering(format!(
                "send probability {p} must be positive"
            )));
        }
        if let Some(s) = self.sifted.iter().find(|&&s| !(s >= 0.0)) {
            return Err(Error::DecoyOrdering(format!(
                "count {s} must be nonnegative"
            )));
        }
        Ok(())
    }

    /// `S_k` with the given counts in place of the observed ones.
    fn normalized(&self, counts: &[f64]) -> Vec<f64> {
        let c = self.exponent();
        let mu = self.intensities[0];
        let ln_p_mu = self.probabilities[0].ln();
        self.intensities
            .iter()
            .zip(&self.probabilities)
            .zip(counts)
            .map(|((&k, &p), &s)| (c * (ln_p_mu - p.ln() + k - mu)).exp() * s)
            .collect()
    }
}

/// Expected-value interval `(lower, upper)` for an observed count.
pub fn chernoff_expected_bounds(observed: f64, eps: f64) -> (f64, f64) {
    let beta = -eps.ln();
    let upper = observed + beta + (2.0 * beta * observed + beta * beta).sqrt();
    let lower = observed - 0.5 * beta - (2.0 * beta * observed + 0.25 * beta * beta).sqrt();
    (lower.max(0.0), upper)
}

/// Lower bound on an observed count from a lower bound on its expectation.
pub fn chernoff_observed_lower(expected_lower: f64, eps: f64) -> f64 {
    let beta = -eps.ln();
    let x = expected_lower.max(0.0);
    (x - (2.0 * beta * x).sqrt()).max(0.0)
}

/// Elimination ladder over the nonzero intensities `x[0] > x[1] > ...`.
struct Ladder {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl Ladder {
    // `s` holds `S_k - S_o` for each nonzero intensity.
    fn new(x: &[f64], s: &[f64]) -> Self {
        let a: Vec<f64> = (0..x.len() - 1)
            .map(|i| x[i + 1] * s[i] - x[i] * s[i + 1])
            .collect();
        let b: Vec<f64> = (0..a.len().saturating_sub(1))
            .map(|i| a[i + 1] * x[i] * (x[i] - x[i + 1]) - a[i] * x[i + 2] * (x[i + 1] - x[i + 2]))
            .collect();
        let c = (0..b.len().saturating_sub(1))
            .map(|i| {
                b[i] * x[i + 3] * (x[i + 2] - x[i + 3]) * (x[i + 1] - x[i + 3])
                    - b[i + 1] * x[i] * (x[i] - x[i + 1]) * (x[i] - x[i + 2])
            })
            .collect();
        Ladder { a, b, c }
    }
}

/// Bounds before clamping, keyed by photon number.
fn raw_bounds(num_users: usize, x: &[f64], s_o: f64, diff: &[f64]) -> Result<Vec<(u32, f64)>> {
    let ladder = Ladder::new(x, diff);
    let (a, b, c) = (&ladder.a, &ladder.b, &ladder.c);
    match num_users {
        3 => {
            let (mu, nu, om) = (x[0], x[1], x[2]);
            let s2 = mu * (mu * (mu * mu - nu * nu) * a[1] - om * (nu * nu - om * om) * a[0])
                / (nu * om * (mu - nu) * (nu - om) * (mu - om));
            Ok(vec![(0, s_o), (2, s2)])
        }
        4 => {
            let (mu, nu, om, xi) = (x[0], x[1], x[2], x[3]);
            let s1 = mu * (om * om * diff[3] - xi * xi * diff[2]) / (xi * om * (om - xi));
            let s3 = mu
                * mu
                * (b[0] * xi * (om - xi) * (nu - xi) * (xi + om + nu)
                    - b[1] * mu * (mu - nu) * (mu - om) * (mu + nu + om))
                / (nu
                    * om
                    * xi
                    * (mu - nu)
                    * (mu - xi)
                    * (nu - xi)
                    * (nu - om)
                    * (mu - om)
                    * (om - xi));
            Ok(vec![(1, s1), (3, s3)])
        }
        5 => {
            let (mu, nu, om, xi, tau) = (x[0], x[1], x[2], x[3], x[4]);
            // a[2] and a[3] eliminate n = 0, 1, 3 using the three weakest decoys
            let s2 =
                mu * mu * (om * (om * om - xi * xi) * a[3] - tau * (xi * xi - tau * tau) * a[2])
                    / (om * xi * tau * (om - xi) * (xi - tau) * (om - tau));
            let s4 = mu.powi(3)
                * (c[0] * tau * (om - tau) * (xi - tau) * (nu - tau) * (nu + om + xi + tau)
                    - c[1] * mu * (mu - nu) * (mu - om) * (mu - xi) * (mu + nu + om + xi))
                / (om
                    * nu
                    * xi
                    * tau
                    * (mu - nu)
                    * (mu - om)
                    * (mu - xi)
                    * (nu - om)
                    * (nu - xi)
                    * (om - xi)
                    * (om - tau)
                    * (xi - tau)
                    * (nu - tau)
                    * (mu - tau));
            Ok(vec![(0, s_o), (2, s2), (4, s4)])
        }
        n => Err(Error::Unsupported(format!(
            "decoy estimation is available for 3, 4 or 5 users, not {n}"
        ))),
    }
}

fn finish(raw: Vec<(u32, f64)>, s_mu: f64, eps_spent: f64) -> Result<DecoyBounds> {
    if !(s_mu > 0.0) {
        return Err(Error::NoSignal);
    }
    let mut clamped = Vec::new();
    let mut s_mu_n_lower = BTreeMap::new();
    for (n, value) in raw {
        if !(value >= 0.0) {
            clamped.push(ClampNote {
                quantity: format!("s_mu^{n}"),
                raw: value,
            });
        }
        s_mu_n_lower.insert(n, if value >= 0.0 { value } else { 0.0 });
    }
    let phase_error_upper = phase_error_upper(&s_mu_n_lower, s_mu);
    Ok(DecoyBounds {
        s_mu_n_lower,
        phase_error_upper,
        eps_spent,
        clamped,
    })
}

/// `1 - sum of bounds / s_mu`, clamped to `[0, 1]`.
pub fn phase_error_upper(bounds: &BTreeMap<u32, f64>, s_mu: f64) -> f64 {
    let good: f64 = bounds.values().sum();
    (1.0 - good / s_mu).clamp(0.0, 1.0)
}

fn asymptotic(observed: &ObservedCounts, users: usize) -> Result<DecoyBounds> {
    if observed.num_users != users {
        return Err(Error::Unsupported(format!(
            "expected {users} users, got {}",
            observed.num_users
        )));
    }
    observed.check()?;
    let norm = observed.normalized(&observed.sifted);
    let s_o = *norm.last().unwrap();
    let diff: Vec<f64> = norm[..users].iter().map(|&s| s - s_o).collect();
    let raw = raw_bounds(users, &observed.intensities[..users], s_o, &diff)?;
    finish(raw, observed.signal(), 0.0)
}

pub fn bounds_3user_asymptotic(observed: &ObservedCounts) -> Result<DecoyBounds> {
    asymptotic(observed, 3)
}

pub fn bounds_4user_asymptotic(observed: &ObservedCounts) -> Result<DecoyBounds> {
    asymptotic(observed, 4)
}

pub fn bounds_5user_asymptotic(observed: &ObservedCounts) -> Result<DecoyBounds> {
    asymptotic(observed, 5)
}

/// Asymptotic bounds for whichever user count the counts describe.
pub fn bounds_asymptotic(observed: &ObservedCounts) -> Result<DecoyBounds> {
    asymptotic(observed, observed.num_users)
}

/// Three-user bounds with every count replaced by its pessimistic Chernoff
/// expectation and the results converted back to observed lower bounds.
pub fn bounds_3user_finite(observed: &ObservedCounts, sec: &SecurityParams) -> Result<DecoyBounds> {
    if observed.num_users != 3 {
        return Err(Error::Unsupported(format!(
            "finite-size decoy bounds need 3 users, got {}",
            observed.num_users
        )));
    }
    observed.check()?;
    let eps = sec.eps_chernoff;
    let bound = |k: usize| chernoff_expected_bounds(observed.sifted[k], eps);
    // s_o and s_nu enter with positive weight, s_omega and s_mu with negative weight
    let pessimistic = vec![bound(0).1, bound(1).0, bound(2).1, bound(3).0];
    let norm = observed.normalized(&pessimistic);
    let s_o = norm[3];
    let diff: Vec<f64> = norm[..3].iter().map(|&s| s - s_o).collect();
    let raw = raw_bounds(3, &observed.intensities[..3], s_o, &diff)?;
    let converted = raw
        .into_iter()
        .map(|(n, expected)| {
            let value = if expected >= 0.0 {
                chernoff_observed_lower(expected, eps)
            } else {
                expected
            };
            (n, value)
        })
        .collect();
    // four count intervals plus two conversions
    finish(converted, observed.signal(), 6.0 * eps)
}
