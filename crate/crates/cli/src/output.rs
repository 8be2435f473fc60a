//! CSV rows and text reports.

use std::fmt::Write as _;

use mfqcka::montecarlo::ConsistencyReport;
use mfqcka::RateReport;

/// Scientific notation with 10 significant digits, independent of locale.
pub fn sci(x: f64) -> String {
    format!("{x:.9e}")
}

pub fn csv_header(users: usize) -> String {
    let mut cols: Vec<String> = [
        "distance_km",
        "users",
        "data_size",
        "key_rate",
        "key_rate_raw",
        "multicast_bound",
        "phase_error_upper",
        "adjacent_error",
        "worst_marginal_error",
        "s_mu",
        "mu",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((1..=users).map(|i| format!("decoy_intensity_{i}")));
    cols.extend((0..=users).map(|k| format!("send_probability_{k}")));
    cols.push("seed".into());
    cols.join(",")
}

pub fn csv_row(report: &RateReport, seed: u64) -> String {
    let source = &report.params_used;
    let mut cols = vec![
        sci(report.distance_km),
        source.num_users.to_string(),
        sci(report.data_size),
        sci(report.key_rate),
        sci(report.key_rate_raw),
        // a lossless arm has no finite bound
        sci(report.multicast_bound.unwrap_or(f64::INFINITY)),
        sci(report.phase_error_upper),
        sci(report.adjacent_error),
        sci(report.worst_marginal_error),
        sci(report.sifted_signal),
        sci(source.signal_intensity),
    ];
    cols.extend(source.decoy_intensities.iter().map(|&x| sci(x)));
    cols.extend(source.send_probabilities.iter().map(|&p| sci(p)));
    cols.push(seed.to_string());
    cols.join(",")
}

pub fn csv_document(reports: &[RateReport], seed: u64) -> String {
    let users = reports.first().map_or(3, |r| r.params_used.num_users);
    let mut out = csv_header(users);
    out.push('\n');
    for r in reports {
        out.push_str(&csv_row(r, seed));
        out.push('\n');
    }
    out
}

pub fn consistency_table(report: &ConsistencyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<36} {:>12} {:>16} {:>8}",
        "statistic", "observed", "expected", "z"
    );
    for s in &report.statistics {
        let z = s.z.map_or_else(|| "-".to_string(), |z| format!("{z:.2}"));
        let mark = if s.flagged { "  FLAGGED" } else { "" };
        let _ = writeln!(
            out,
            "{:<36} {:>12} {:>16} {:>8}{mark}",
            s.name,
            s.observed,
            sci(s.expected),
            z
        );
    }
    let flagged = report.flagged().count();
    let _ = writeln!(
        out,
        "{} compared, {} skipped (expected < 10), {} flagged, max |z| = {:.2}",
        report.compared(),
        report.statistics.len() - report.compared(),
        flagged,
        report.max_abs_z()
    );
    out
}
