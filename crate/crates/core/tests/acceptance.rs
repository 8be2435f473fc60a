//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use mfqcka::channel::{self, marginal_error};
use mfqcka::decoy::{bounds_asymptotic, chernoff_expected_bounds, ObservedCounts};
use mfqcka::keyrate::{self, Objective};
use mfqcka::matching::CoincidenceModel;
use mfqcka::montecarlo::{compare_to_analytic, extract_bits, run_protocol, Pulse, RetainedClick};
use mfqcka::optimizer::{default_source, optimize_with_continuation, scan_distances, SearchSpec};
use mfqcka::photonstats::PhotonModel;
use mfqcka::special::{bessel_i0, binary_entropy};
use mfqcka::{Bundle, ChannelParams, SecurityParams, SourceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn finite_bundle(distance: f64, data_size: f64) -> Bundle {
    Bundle::validate(
        default_source(3, 16),
        ChannelParams::default().at_distance(distance),
        SecurityParams {
            data_size,
            ..SecurityParams::default()
        },
    )
    .unwrap()
}

fn fifty_km_optimum() -> Bundle {
    optimize_with_continuation(
        &SearchSpec::default(),
        Objective::Finite,
        &finite_bundle(50.0, 1e14),
    )
    .unwrap()
    .bundle
}

fn point_reproduction() -> Outcome {
    let best = optimize_with_continuation(
        &SearchSpec::default(),
        Objective::Finite,
        &finite_bundle(50.0, 1e14),
    )
    .unwrap();
    let rate = best.report.key_rate;
    let rel = (rate - 1.44e-4).abs() / 1.44e-4;
    outcome(
        rel <= 0.15,
        format!(
            "R(50 km, 1e14) = {rate:.4e} vs 1.44e-4 ({:+.1}%), mu = {:.4}",
            100.0 * (rate / 1.44e-4 - 1.0),
            best.bundle.source().signal_intensity
        ),
    )
}

fn distance_reach() -> Outcome {
    let spec = SearchSpec::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (data_size, distance) in [(1e13, 270.0), (1e14, 300.0), (1e15, 310.0)] {
        let best = optimize_with_continuation(
            &spec,
            Objective::Finite,
            &finite_bundle(distance, data_size),
        )
        .unwrap();
        let rate = best.report.key_rate_raw;
        pass &= rate > 0.0;
        parts.push(format!("R({distance} km, {data_size:e}) = {rate:.3e}"));
    }
    outcome(pass, parts.join(", "))
}

fn capacity_crossing() -> Outcome {
    let spec = SearchSpec::default();
    let mut parts = Vec::new();

    let distances: Vec<f64> = (0..=4).map(|i| 240.0 + 10.0 * f64::from(i)).collect();
    let scan = scan_distances(
        &distances,
        &spec,
        Objective::Finite,
        &finite_bundle(240.0, 1e15),
    )
    .unwrap();
    let above: Vec<f64> = scan
        .iter()
        .filter(|o| o.report.key_rate > o.report.multicast_bound.unwrap())
        .map(|o| o.report.distance_km)
        .collect();
    let mut pass = !above.is_empty();
    parts.push(format!("finite 1e15 above bound at {above:?} km"));

    let distances: Vec<f64> = (0..=6).map(|i| 150.0 + 25.0 * f64::from(i)).collect();
    for users in 3..=5 {
        let b = Bundle::validate(
            default_source(users, 16),
            ChannelParams::default().at_distance(150.0),
            SecurityParams::default(),
        )
        .unwrap();
        let scan = scan_distances(&distances, &spec, Objective::AsymptoticDecoy, &b).unwrap();
        let above: Vec<f64> = scan
            .iter()
            .filter(|o| o.report.key_rate > o.report.multicast_bound.unwrap())
            .map(|o| o.report.distance_km)
            .collect();
        pass &= !above.is_empty();
        match (above.first(), above.last()) {
            (Some(a), Some(z)) => parts.push(format!("N={users} above on [{a}, {z}] km")),
            _ => parts.push(format!("N={users} never above")),
        }
    }
    outcome(pass, parts.join("; "))
}

fn soundness_bundle(users: usize, distance: f64, mu: f64) -> Bundle {
    let decoys = match users {
        3 => vec![0.5 * mu, 0.1 * mu, 0.0],
        4 => vec![0.6 * mu, 0.3 * mu, 0.1 * mu, 0.0],
        _ => vec![0.7 * mu, 0.45 * mu, 0.25 * mu, 0.08 * mu, 0.0],
    };
    let mut probs = vec![0.4];
    probs.extend(std::iter::repeat_n(0.6 / users as f64, users));
    let source = SourceConfig {
        num_users: users,
        signal_intensity: mu,
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

fn decoy_soundness() -> Outcome {
    let mut points = 0;
    let mut violations = Vec::new();
    for users in 3..=5 {
        for distance in [50.0, 100.0, 150.0, 200.0, 250.0, 300.0] {
            for mu in [0.05, 0.2, 0.5] {
                let b = soundness_bundle(users, distance, mu);
                let stats = CoincidenceModel::new(&b).stats().unwrap();
                let bounds =
                    bounds_asymptotic(&ObservedCounts::from_stats(b.source(), &stats)).unwrap();
                let photons = PhotonModel::new(&b, 20).unwrap();
                for (&n, &lower) in &bounds.s_mu_n_lower {
                    if lower > photons.s_mu_n(n) * (1.0 + 1e-9) {
                        violations.push(format!("N={users} L={distance} mu={mu} n={n}"));
                    }
                }
                points += 1;
            }
        }
    }

    // optimized curves, warm-started from 250 km
    let spec = SearchSpec::default();
    let distances = [250.0, 260.0, 270.0, 280.0, 290.0, 300.0];
    let start = Bundle::validate(
        default_source(3, 16),
        ChannelParams::default().at_distance(250.0),
        SecurityParams::default(),
    )
    .unwrap();
    let decoy = scan_distances(&distances, &spec, Objective::AsymptoticDecoy, &start).unwrap();
    let exact = scan_distances(&distances, &spec, Objective::AsymptoticExact, &start).unwrap();
    let mut ratios = Vec::new();
    let mut ratio_ok = true;
    for (d, e) in decoy
        .iter()
        .zip(&exact)
        .filter(|(d, _)| d.report.distance_km >= 280.0)
    {
        let ratio = d.report.key_rate / e.report.key_rate;
        // the finite-decoy rate at its own optimum must not beat the exact rate there
        let same = keyrate::evaluate(&d.bundle, Objective::AsymptoticExact).unwrap();
        ratio_ok &= (0.5..=1.0).contains(&ratio) && d.report.key_rate <= same.key_rate;
        ratios.push(format!("{}:{ratio:.3}", d.report.distance_km));
    }
    outcome(
        points >= 50 && violations.is_empty() && ratio_ok,
        format!(
            "{points} grid points, {} violations{}; decoy/exact rate ratio {}",
            violations.len(),
            if violations.is_empty() {
                String::new()
            } else {
                format!(" ({})", violations.join(", "))
            },
            ratios.join(" ")
        ),
    )
}

fn monte_carlo_equivalence() -> Outcome {
    let optimum = fifty_km_optimum();
    let mut pass = true;
    let mut parts = Vec::new();
    for (distance, seed) in [(25.0, 25), (50.0, 50)] {
        let b = optimum.with_distance(distance).unwrap();
        let summary = run_protocol(&b, 100_000_000, seed).unwrap();
        let report = compare_to_analytic(&summary, &b).unwrap();
        pass &= report.is_clean();
        parts.push(format!(
            "{distance} km: {} statistics compared, max |z| = {:.2}, {} skipped",
            report.compared(),
            report.max_abs_z(),
            report.statistics.len() - report.compared()
        ));
    }
    // at the nominal dark-count rate adjacent errors are too rare to test
    let noisy = optimum
        .with_channel(ChannelParams {
            dark_count_rate: 1e-3,
            ..ChannelParams::default().at_distance(25.0)
        })
        .unwrap();
    let summary = run_protocol(&noisy, 100_000_000, 7).unwrap();
    let report = compare_to_analytic(&summary, &noisy).unwrap();
    let adjacent: Vec<f64> = report
        .statistics
        .iter()
        .filter(|s| s.name.starts_with("adjacent_errors[k=0"))
        .filter_map(|s| s.z)
        .collect();
    pass &= report.is_clean() && !adjacent.is_empty();
    parts.push(format!(
        "p_d = 1e-3 at 25 km: max |z| = {:.2}, adjacent-error z = {:?}",
        report.max_abs_z(),
        adjacent
            .iter()
            .map(|z| format!("{z:.2}"))
            .collect::<Vec<_>>()
    ));
    outcome(pass, parts.join("; "))
}

fn ideal_coincidences(users: usize, phase_slices: u32) -> Vec<Vec<RetainedClick>> {
    let pulses = 2 * (users - 1);
    let half = phase_slices / 2;
    let mut out = Vec::new();
    for slice in 0..half {
        for bits in 0u32..1 << pulses {
            for phases in 0u32..1 << pulses {
                let pulse = |i: usize| Pulse {
                    phase_index: slice + half * ((phases >> i) & 1),
                    bit: ((bits >> i) & 1) as u8,
                };
                out.push(
                    (0..users - 1)
                        .map(|j| {
                            let (left, right) = (pulse(2 * j), pulse(2 * j + 1));
                            // ideal detection: left detector iff the pulses arrive in phase
                            let d = left.phase_bit(phase_slices)
                                ^ left.bit
                                ^ right.phase_bit(phase_slices)
                                ^ right.bit;
                            RetainedClick {
                                port: j,
                                intensity: 0,
                                left,
                                right,
                                detector: Some(d),
                            }
                        })
                        .collect(),
                );
            }
        }
    }
    out
}

fn ghz_invariant() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut symbolic = 0;
    for users in [3, 4] {
        for slices in [4, 8, 16] {
            for c in ideal_coincidences(users, slices) {
                let bits = extract_bits(&c, slices).unwrap();
                pass &= bits.iter().all(|&b| b == bits[0]);
                symbolic += 1;
            }
        }
    }
    parts.push(format!("{symbolic} symbolic patterns"));
    for users in [3, 4, 5] {
        for slices in [4, 16] {
            let b = Bundle::validate(
                default_source(users, slices),
                ChannelParams {
                    dark_count_rate: 0.0,
                    ..ChannelParams::default().at_distance(10.0)
                },
                SecurityParams::default(),
            )
            .unwrap();
            let s = run_protocol(&b, 1_000_000, 100 + users as u64).unwrap();
            let sifted: u64 = s.sifted.iter().sum();
            pass &= s.total_conference_errors() == 0 && sifted > 0;
            parts.push(format!(
                "N={users} M={slices}: {sifted} coincidences, {} errors",
                s.total_conference_errors()
            ));
        }
    }
    outcome(pass, parts.join(", "))
}

fn chernoff_coverage() -> Outcome {
    let (n, p, eps, samples) = (10_000u64, 0.01, 1e-3, 100_000);
    let truth = n as f64 * p;
    let dist = Binomial::new(n, p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let (mut below, mut above) = (0u32, 0u32);
    for _ in 0..samples {
        let x = dist.sample(&mut rng) as f64;
        let (lo, hi) = chernoff_expected_bounds(x, eps);
        below += u32::from(truth < lo);
        above += u32::from(truth > hi);
    }
    let allowed = 10.0 * eps * samples as f64;
    outcome(
        f64::from(below) <= allowed && f64::from(above) <= allowed,
        format!("violations: {below} above the mean's lower bound, {above} past the upper, allowed {allowed} per side"),
    )
}

fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut sum) = (1.0, 1.0);
    let mut k = 1.0;
    while term > 1e-18 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn parity_enumeration(e: f64, links: usize) -> f64 {
    (0u32..1 << links)
        .filter(|mask| mask.count_ones() % 2 == 1)
        .map(|mask| {
            (0..links)
                .map(|i| if mask >> i & 1 == 1 { e } else { 1.0 - e })
                .product::<f64>()
        })
        .sum()
}

fn numeric_kernels() -> Outcome {
    let mut worst_i0: f64 = 0.0;
    for i in 0..=2000 {
        let x = f64::from(i) * 0.01;
        let rel = (bessel_i0(x).unwrap() - i0_series(x)).abs() / i0_series(x);
        worst_i0 = worst_i0.max(rel);
    }

    let endpoints = binary_entropy(0.0) == Ok(0.0)
        && binary_entropy(1.0) == Ok(0.0)
        && binary_entropy(0.5) == Ok(1.0)
        && binary_entropy(-0.1).is_err()
        && binary_entropy(1.1).is_err();
    let symmetric = (1..1000).all(|i| {
        let x = f64::from(i) / 1000.0;
        (binary_entropy(x).unwrap() - binary_entropy(1.0 - x).unwrap()).abs() <= 1e-15
    });

    // dyadic error rates keep every product and sum exact
    let mut exact = true;
    let mut worst_marginal: f64 = 0.0;
    for links in 1..=7 {
        for e in [0.0, 0.125, 0.25, 0.375, 0.5, 1.0] {
            exact &= marginal_error(e, links).unwrap() == parity_enumeration(e, links);
        }
        for e in [1e-7, 0.013, 0.2, 0.37] {
            let (got, want) = (
                marginal_error(e, links).unwrap(),
                parity_enumeration(e, links),
            );
            worst_marginal = worst_marginal.max((got - want).abs() / want);
        }
    }
    let adjacent = channel::adjacent_bit_error(0.1, 1e-3, 1e-6).unwrap();
    exact &= marginal_error(adjacent, 1).unwrap() == adjacent;

    outcome(
        worst_i0 <= 1e-12 && endpoints && symmetric && exact && worst_marginal <= 1e-14,
        format!(
            "I0 worst rel err {worst_i0:.2e}; H2 endpoints {endpoints}, symmetric {symmetric}; \
             marginal error exact on dyadic rates {exact}, worst rel err elsewhere {worst_marginal:.1e}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        (
            "1 point reproduction",
            point_reproduction,
            Duration::from_secs(600),
        ),
        (
            "2 distance reach",
            distance_reach,
            Duration::from_secs(1800),
        ),
        (
            "3 capacity crossing",
            capacity_crossing,
            Duration::from_secs(1800),
        ),
        (
            "4 decoy soundness",
            decoy_soundness,
            Duration::from_secs(600),
        ),
        (
            "5 Monte Carlo equivalence",
            monte_carlo_equivalence,
            Duration::from_secs(1200),
        ),
        ("6 GHZ invariant", ghz_invariant, Duration::from_secs(300)),
        (
            "7 Chernoff coverage",
            chernoff_coverage,
            Duration::from_secs(120),
        ),
        (
            "8 numeric kernels",
            numeric_kernels,
            Duration::from_secs(60),
        ),
    ];
    let mut failures = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= budget;
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {name}: {} ({:.1} s of {} s) {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            result.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
