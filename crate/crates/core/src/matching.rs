//! Expected post-measurement matching statistics.
//!
//! A time bin lands in set `T_j^m` when port `j` clicked successfully, the
//! relay announced that port, both neighbours sent the same intensity and
//! their phase slices agree modulo `M/2`. Matching then pairs one bin from
//! every port's set per slice until the smallest set runs out.

use crate::channel::{self, PortGain};
use crate::error::Result;
use crate::model::{Bundle, CoincidenceStats};

/// Gains for every intensity pair of one configuration.
#[derive(Debug, Clone)]
pub struct CoincidenceModel<'a> {
    bundle: &'a Bundle,
    eta_t: f64,
    /// `[k_a][k_b]` phase-averaged single-click probabilities.
    averaged: Vec<Vec<f64>>,
    /// `[k]` in-phase single-click probability for matched intensities.
    matched: Vec<f64>,
}

impl<'a> CoincidenceModel<'a> {
    pub fn new(bundle: &'a Bundle) -> Self {
        let source = bundle.source();
        let eta_t = channel::total_efficiency(bundle.channel());
        let p_d = bundle.channel().dark_count_rate;
        let intensities = source.intensities();
        let averaged = intensities
            .iter()
            .map(|&ka| {
                intensities
                    .iter()
                    .map(|&kb| PortGain::new(ka, kb, eta_t, p_d).phase_averaged)
                    .collect()
            })
            .collect();
        let matched = intensities
            .iter()
            .map(|&k| channel::matched_gain(k, eta_t, p_d))
            .collect();
        CoincidenceModel {
            bundle,
            eta_t,
            averaged,
            matched,
        }
    }

    pub fn bundle(&self) -> &Bundle {
        self.bundle
    }

    pub fn eta_t(&self) -> f64 {
        self.eta_t
    }

    /// Expected size of `T_j^m` restricted to intensity `k` (any slice `m`).
    pub fn retained_clicks(&self, k: usize, port: usize) -> f64 {
        let source = self.bundle.source();
        let users = source.num_users;
        let settings = source.num_settings();
        let slices = f64::from(source.phase_slices);
        let data_size = self.bundle.security().data_size;
        let p_k = source.probability(k);
        let prefactor = 4.0 * data_size * p_k * p_k * self.matched[k] / (slices * slices);
        if prefactor == 0.0 {
            return 0.0;
        }

        let others: Vec<usize> = (0..users).filter(|&u| u != port && u != port + 1).collect();
        let other_ports: Vec<usize> = (0..users - 1).filter(|&v| v != port).collect();
        let mut assignment = vec![k; users];
        let mut gains = vec![0.0; other_ports.len()];
        let mut sum = 0.0;

        // odometer over the intensities of the users outside {port, port + 1}
        let mut digits = vec![0usize; others.len()];
        loop {
            let mut weight = 1.0;
            for (&user, &digit) in others.iter().zip(&digits) {
                assignment[user] = digit;
                weight *= source.probability(digit);
            }
            for (g, &v) in gains.iter_mut().zip(&other_ports) {
                *g = self.averaged[assignment[v]][assignment[v + 1]];
            }
            sum += weight * selection_factor(&gains);

            let mut pos = 0;
            loop {
                if pos == digits.len() {
                    return prefactor * sum;
                }
                digits[pos] += 1;
                if digits[pos] < settings {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    /// Expected size of `T_j^m` over all intensities.
    pub fn slice_total(&self, port: usize) -> f64 {
        (0..self.bundle.source().num_settings())
            .map(|k| self.retained_clicks(k, port))
            .sum()
    }

    /// Full set of expected statistics.
    pub fn stats(&self) -> Result<CoincidenceStats> {
        let source = self.bundle.source();
        let ports = source.num_ports();
        let retained: Vec<Vec<f64>> = (0..source.num_settings())
            .map(|k| (0..ports).map(|j| self.retained_clicks(k, j)).collect())
            .collect();
        let slice_totals: Vec<f64> = (0..ports)
            .map(|j| retained.iter().map(|row| row[j]).sum())
            .collect();
        let sifted = (0..source.num_settings())
            .map(|k| sift(source.phase_slices, &retained[k], &slice_totals))
            .collect();
        let p_d = self.bundle.channel().dark_count_rate;
        let adjacent_error = channel::adjacent_bit_error(source.signal_intensity, self.eta_t, p_d)?;
        let marginal_errors = (1..source.num_users)
            .map(|links| channel::marginal_error(adjacent_error, links))
            .collect::<Result<Vec<_>>>()?;
        Ok(CoincidenceStats {
            phase_slices: source.phase_slices,
            retained_clicks: retained,
            slice_totals,
            sifted,
            adjacent_error,
            marginal_errors,
        })
    }
}

/// Expected probability that the relay announces a given successful port
/// when the other ports succeed independently with probabilities `gains`:
/// `E[1 / (1 + L)] = sum over subsets S of (-1)^|S| / (|S| + 1) prod_S q`.
pub fn selection_factor(gains: &[f64]) -> f64 {
    let n = gains.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones();
        let mut prod = 1.0;
        for (i, &q) in gains.iter().enumerate() {
            if mask & (1 << i) != 0 {
                prod *= q;
            }
        }
        let sign = if size % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * prod / f64::from(size + 1);
    }
    total
}

/// `s_k = (M/2) n_min prod_j n_(k|k)_j / n_j`.
fn sift(phase_slices: u32, retained: &[f64], totals: &[f64]) -> f64 {
    let n_min = totals.iter().copied().fold(f64::INFINITY, f64::min);
    if !(n_min > 0.0) {
        return 0.0;
    }
    let ratio: f64 = retained.iter().zip(totals).map(|(&r, &t)| r / t).product();
    0.5 * f64::from(phase_slices) * n_min * ratio
}

/// Expected `n_(k|k)_j^m` for setting `k` at port `port`.
pub fn retained_clicks(k: usize, port: usize, bundle: &Bundle) -> f64 {
    CoincidenceModel::new(bundle).retained_clicks(k, port)
}

/// Expected `n_j^m`.
pub fn slice_total(port: usize, bundle: &Bundle) -> f64 {
    CoincidenceModel::new(bundle).slice_total(port)
}

/// Expected sifted coincidences `s_k`.
pub fn sifted_coincidences(k: usize, bundle: &Bundle) -> f64 {
    let model = CoincidenceModel::new(bundle);
    let ports = bundle.source().num_ports();
    let retained: Vec<f64> = (0..ports).map(|j| model.retained_clicks(k, j)).collect();
    let totals: Vec<f64> = (0..ports).map(|j| model.slice_total(j)).collect();
    sift(bundle.source().phase_slices, &retained, &totals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChannelParams, SecurityParams, SourceConfig};
    use proptest::prelude::*;

    fn bundle(users: usize, distance: f64) -> Bundle {
        let (decoys, probs) = match users {
            3 => (vec![0.1, 0.02, 0.0], vec![0.5, 0.2, 0.2, 0.1]),
            4 => (vec![0.2, 0.1, 0.02, 0.0], vec![0.4, 0.2, 0.2, 0.1, 0.1]),
            _ => (
                vec![0.25, 0.2, 0.1, 0.02, 0.0],
                vec![0.3, 0.2, 0.2, 0.1, 0.1, 0.1],
            ),
        };
        let source = SourceConfig {
            num_users: users,
            signal_intensity: 0.3,
            decoy_intensities: decoys,
            send_probabilities: probs,
            phase_slices: 16,
        };
        Bundle::validate(
            source,
            ChannelParams::default().at_distance(distance),
            SecurityParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn selection_factor_matches_expectation() {
        // E[1/(1+L)] by enumerating every success pattern of the other ports
        let gains = [0.3, 0.05, 0.7];
        let mut want = 0.0;
        for pattern in 0u32..8 {
            let mut p = 1.0;
            for (i, &q) in gains.iter().enumerate() {
                p *= if pattern & (1 << i) != 0 { q } else { 1.0 - q };
            }
            want += p / f64::from(pattern.count_ones() + 1);
        }
        assert!((selection_factor(&gains) - want).abs() < 1e-15);
        assert_eq!(selection_factor(&[]), 1.0);
    }

    #[test]
    fn three_user_expansion() {
        let b = bundle(3, 50.0);
        let model = CoincidenceModel::new(&b);
        let source = b.source();
        let m = f64::from(source.phase_slices);
        let n = b.security().data_size;
        for k in 0..source.num_settings() {
            let pk = source.probability(k);
            // port 0: the other user is user 2, the other port joins users 1 and 2
            let sum0: f64 = (0..source.num_settings())
                .map(|w| source.probability(w) * (1.0 - model.averaged[k][w] / 2.0))
                .sum();
            let want0 = 4.0 * n * pk * pk * model.matched[k] / (m * m) * sum0;
            let got0 = model.retained_clicks(k, 0);
            assert!(((got0 - want0) / want0).abs() < 1e-14);
            let sum1: f64 = (0..source.num_settings())
                .map(|w| source.probability(w) * (1.0 - model.averaged[w][k] / 2.0))
                .sum();
            let want1 = 4.0 * n * pk * pk * model.matched[k] / (m * m) * sum1;
            assert!(((model.retained_clicks(k, 1) - want1) / want1).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_ports_for_three_users() {
        let b = bundle(3, 50.0);
        let a = slice_total(0, &b);
        let c = slice_total(1, &b);
        assert!(((a - c) / a).abs() < 1e-14);
    }

    #[test]
    fn symmetric_sift_collapses() {
        let b = bundle(3, 80.0);
        let stats = CoincidenceModel::new(&b).stats().unwrap();
        let n0 = stats.slice_totals[0];
        for k in 0..4 {
            let want = 8.0 * n0 * (stats.retained_clicks[k][0] / n0).powi(2);
            assert!(((stats.sifted[k] - want) / want).abs() < 1e-12);
            assert!((sifted_coincidences(k, &b) - stats.sifted[k]).abs() <= 1e-9 * want);
        }
        let total: f64 = stats.sifted.iter().sum();
        assert!(total <= 8.0 * stats.min_slice_total());
    }

    #[test]
    fn single_intensity_mixture() {
        let b = bundle(3, 50.0);
        let mut source = b.source().clone();
        source.send_probabilities = vec![1.0 - 3e-12, 1e-12, 1e-12, 1e-12];
        let b = b.with_source(source).unwrap();
        let model = CoincidenceModel::new(&b);
        let total = model.slice_total(0);
        assert!(((total - model.retained_clicks(0, 0)) / total).abs() < 1e-10);
    }

    #[test]
    fn empty_factor_gives_no_coincidences() {
        assert_eq!(sift(16, &[0.0, 5.0], &[10.0, 10.0]), 0.0);
        assert_eq!(sift(16, &[0.0, 0.0], &[0.0, 10.0]), 0.0);
    }

    #[test]
    fn counts_scale_linearly_with_data_size() {
        let b = bundle(4, 120.0);
        let mut sec = *b.security();
        sec.data_size *= 7.0;
        let scaled = b.with_security(sec).unwrap();
        let s1 = CoincidenceModel::new(&b).stats().unwrap();
        let s7 = CoincidenceModel::new(&scaled).stats().unwrap();
        for k in 0..5 {
            assert!((s7.sifted[k] / s1.sifted[k] - 7.0).abs() < 1e-12);
            for j in 0..3 {
                assert!((s7.retained_clicks[k][j] / s1.retained_clicks[k][j] - 7.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn totals_are_sums_of_retained() {
        for users in 3..=5 {
            let stats = CoincidenceModel::new(&bundle(users, 30.0)).stats().unwrap();
            for j in 0..users - 1 {
                let sum: f64 = stats.retained_clicks.iter().map(|r| r[j]).sum();
                assert_eq!(sum, stats.slice_totals[j]);
                for k in 0..=users {
                    assert!(stats.retained_clicks[k][j] >= 0.0);
                    assert!(stats.sifted[k] <= 0.5 * 16.0 * stats.min_slice_total());
                }
            }
        }
    }

    proptest! {
        #[test]
        fn selection_factor_in_unit_interval(
            users in 3usize..=5, distance in 0.0f64..300.0, mu in 0.05f64..1.0,
        ) {
            let b = bundle(users, distance);
            let mut source = b.source().clone();
            source.signal_intensity = mu.max(source.decoy_intensities[0] + 1e-3);
            let b = b.with_source(source).unwrap();
            let model = CoincidenceModel::new(&b);
            for v in &model.averaged {
                let gains = vec![v[0]; users - 2];
                let f = selection_factor(&gains);
                prop_assert!(f > 0.0 && f <= 1.0);
            }
        }
    }
}
