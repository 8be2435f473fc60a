//! Event-level simulation of the protocol.
//!
//! Each time bin draws every user's intensity, phase slice and random bit,
//! evaluates all ports' threshold detectors at the intensity level, lets the
//! relay announce one successful port uniformly at random and applies click
//! filtering. Matching, sifting and bit extraction happen once all bins are
//! in, slice by slice.
//!
//! Bins are generated in shards of [`SHARD_BINS`]; shard `i` draws from
//! stream `i` of a ChaCha8 generator keyed by the run seed, so results do not
//! depend on how many worker threads run the shards.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel;
use crate::error::{Error, Result};
use crate::matching::CoincidenceModel;
use crate::model::{Bundle, SecurityParams};

/// Bins per generation shard.
pub const SHARD_BINS: u64 = 1 << 20;
/// `|z|` above which a statistic is flagged.
pub const Z_THRESHOLD: f64 = 5.0;
/// Statistics with a smaller expected count are skipped.
pub const MIN_EXPECTED: f64 = 10.0;

// stream reserved for the matching shuffles; shards count up from 0
const MATCHING_STREAM: u64 = u64::MAX;

/// One user's choices in one time bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSetting {
    /// Intensity index (0 = signal, last = vacuum).
    pub intensity: usize,
    /// `M_j` in `0..M`.
    pub phase_index: u32,
    pub bit: u8,
}

/// What a port's two detectors did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClickOutcome {
    None,
    LeftOnly,
    RightOnly,
    Both,
}

impl ClickOutcome {
    pub fn is_success(self) -> bool {
        matches!(self, ClickOutcome::LeftOnly | ClickOutcome::RightOnly)
    }

    /// `d = 0` for the left detector, `1` for the right one.
    pub fn detector(self) -> Option<u8> {
        match self {
            ClickOutcome::LeftOnly => Some(0),
            ClickOutcome::RightOnly => Some(1),
            _ => None,
        }
    }
}

/// Everything that happened in one time bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBinRecord {
    pub users: Vec<UserSetting>,
    pub outcomes: Vec<ClickOutcome>,
    /// Port the relay announced, if any port clicked successfully.
    pub selected: Option<usize>,
}

impl TimeBinRecord {
    /// `d_j`, published only for the announced port.
    pub fn announcement(&self, port: usize) -> Option<u8> {
        match self.selected {
            Some(p) if p == port => self.outcomes[port].detector(),
            _ => None,
        }
    }

    /// The announced click if it survives click filtering.
    pub fn retained(&self, phase_slices: u32) -> Option<RetainedClick> {
        let port = self.selected?;
        let half = phase_slices / 2;
        let (a, b) = (self.users[port], self.users[port + 1]);
        if a.intensity != b.intensity || a.phase_index % half != b.phase_index % half {
            return None;
        }
        Some(RetainedClick {
            port,
            intensity: a.intensity,
            left: Pulse::from(a),
            right: Pulse::from(b),
            detector: self.announcement(port),
        })
    }
}

/// Phase slice and bit of one pulse that entered a retained click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pulse {
    pub phase_index: u32,
    pub bit: u8,
}

impl Pulse {
    /// Phase computational value `floor(2 M_j / M)`.
    pub fn phase_bit(self, phase_slices: u32) -> u8 {
        u8::from(self.phase_index >= phase_slices / 2)
    }
}

impl From<UserSetting> for Pulse {
    fn from(u: UserSetting) -> Self {
        Pulse {
            phase_index: u.phase_index,
            bit: u.bit,
        }
    }
}

/// A time bin in some set `T_j^m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetainedClick {
    pub port: usize,
    pub intensity: usize,
    /// Pulse of user `port`.
    pub left: Pulse,
    /// Pulse of user `port + 1`.
    pub right: Pulse,
    pub detector: Option<u8>,
}

impl RetainedClick {
    pub fn slice(&self, phase_slices: u32) -> u32 {
        self.left.phase_index % (phase_slices / 2)
    }

    /// Detector that fires under ideal detection:
    /// `(m_a xor r_a) xor (m_b xor r_b)`.
    pub fn ideal_detector(&self, phase_slices: u32) -> u8 {
        self.left.phase_bit(phase_slices)
            ^ self.left.bit
            ^ self.right.phase_bit(phase_slices)
            ^ self.right.bit
    }
}

/// `1 - (1 - p_d) e^{-I}`.
pub fn click_probability(mean_photons: f64, p_d: f64) -> f64 {
    -(-mean_photons).exp_m1() + p_d * (-mean_photons).exp()
}

/// Mean photon numbers reaching the left and right detectors:
/// `eta_t (k_a + k_b) / 2 +- eta_t sqrt(k_a k_b) cos(dphi)`.
pub fn detector_intensities(k_a: f64, k_b: f64, cos_delta: f64, eta_t: f64) -> (f64, f64) {
    let mean = 0.5 * eta_t * (k_a + k_b);
    let beat = eta_t * (k_a * k_b).sqrt() * cos_delta;
    // AM-GM keeps both nonnegative; rounding might not
    ((mean + beat).max(0.0), (mean - beat).max(0.0))
}

fn sample_outcome<R: Rng + ?Sized>(left: f64, right: f64, rng: &mut R) -> ClickOutcome {
    let l = rng.random::<f64>() < left;
    let r = rng.random::<f64>() < right;
    match (l, r) {
        (false, false) => ClickOutcome::None,
        (true, false) => ClickOutcome::LeftOnly,
        (false, true) => ClickOutcome::RightOnly,
        (true, true) => ClickOutcome::Both,
    }
}

/// Fires both detectors of one port independently.
pub fn detect_port<R: Rng + ?Sized>(
    left_mean: f64,
    right_mean: f64,
    p_d: f64,
    rng: &mut R,
) -> Result<ClickOutcome> {
    for (name, value) in [
        ("left detector intensity", left_mean),
        ("right detector intensity", right_mean),
    ] {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::OutOfDomain {
                name,
                value,
                domain: "[0, inf)",
            });
        }
    }
    Ok(sample_outcome(
        click_probability(left_mean, p_d),
        click_probability(right_mean, p_d),
        rng,
    ))
}

/// Precomputed per-bin sampling tables for one configuration.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    bundle: &'a Bundle,
    cumulative: Vec<f64>,
    /// `[left, right]` click probabilities by `(k_a, k_b, phase offset)`.
    clicks: Vec<[f64; 2]>,
}

impl<'a> Simulator<'a> {
    pub fn new(bundle: &'a Bundle) -> Self {
        let source = bundle.source();
        let slices = source.phase_slices as usize;
        let eta_t = channel::total_efficiency(bundle.channel());
        let p_d = bundle.channel().dark_count_rate;
        let intensities = source.intensities();

        let cos: Vec<f64> = (0..slices)
            .map(|d| match (4 * d) % (4 * slices) {
                0 => 1.0,
                x if x == 2 * slices => -1.0,
                x if x == slices || x == 3 * slices => 0.0,
                _ => (std::f64::consts::TAU * d as f64 / slices as f64).cos(),
            })
            .collect();
        let mut clicks = Vec::with_capacity(intensities.len() * intensities.len() * slices);
        for &ka in &intensities {
            for &kb in &intensities {
                for &c in &cos {
                    let (l, r) = detector_intensities(ka, kb, c, eta_t);
                    clicks.push([click_probability(l, p_d), click_probability(r, p_d)]);
                }
            }
        }

        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = source
            .send_probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cumulative.last_mut().unwrap() = f64::INFINITY;

        Simulator {
            bundle,
            cumulative,
            clicks,
        }
    }

    pub fn bundle(&self) -> &Bundle {
        self.bundle
    }

    /// Draws `(k_j, M_j, r_j)` for every user.
    pub fn sample_settings<R: Rng + ?Sized>(&self, rng: &mut R, users: &mut [UserSetting]) {
        let slices = self.bundle.source().phase_slices;
        for u in users.iter_mut() {
            let x = rng.random::<f64>();
            let intensity = self.cumulative.iter().position(|&c| x < c).unwrap();
            let v = rng.random_range(0..2 * slices);
            *u = UserSetting {
                intensity,
                phase_index: v % slices,
                bit: (v / slices) as u8,
            };
        }
    }

    /// Detector outcomes of every port for fixed settings.
    pub fn detect<R: Rng + ?Sized>(
        &self,
        users: &[UserSetting],
        rng: &mut R,
        outcomes: &mut [ClickOutcome],
    ) {
        let source = self.bundle.source();
        let slices = source.phase_slices;
        let settings = source.num_settings();
        let half = slices / 2;
        let phase = |u: &UserSetting| (u.phase_index + u32::from(u.bit) * half) % slices;
        for (j, out) in outcomes.iter_mut().enumerate() {
            let (a, b) = (&users[j], &users[j + 1]);
            let offset = (phase(a) + slices - phase(b)) % slices;
            let [l, r] = self.clicks
                [(a.intensity * settings + b.intensity) * slices as usize + offset as usize];
            *out = sample_outcome(l, r, rng);
        }
    }

    /// Relay's uniform choice among successful ports.
    pub fn announce<R: Rng + ?Sized>(outcomes: &[ClickOutcome], rng: &mut R) -> Option<usize> {
        let count = outcomes.iter().filter(|o| o.is_success()).count();
        if count == 0 {
            return None;
        }
        let pick = rng.random_range(0..count);
        outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_success())
            .nth(pick)
            .map(|(j, _)| j)
    }

    /// Runs detection and announcement for given settings.
    pub fn bin_from_settings<R: Rng + ?Sized>(
        &self,
        users: Vec<UserSetting>,
        rng: &mut R,
    ) -> TimeBinRecord {
        let mut outcomes = vec![ClickOutcome::None; users.len() - 1];
        self.detect(&users, rng, &mut outcomes);
        let selected = Self::announce(&outcomes, rng);
        TimeBinRecord {
            users,
            outcomes,
            selected,
        }
    }

    /// One complete time bin.
    pub fn simulate_bin<R: Rng + ?Sized>(&self, rng: &mut R) -> TimeBinRecord {
        let users = self.bundle.num_users();
        let mut settings = vec![
            UserSetting {
                intensity: 0,
                phase_index: 0,
                bit: 0
            };
            users
        ];
        self.sample_settings(rng, &mut settings);
        self.bin_from_settings(settings, rng)
    }

    fn run_shard(&self, seed: u64, shard: u64, bins: u64) -> (u64, Vec<RetainedClick>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shard);
        let users = self.bundle.num_users();
        let slices = self.bundle.source().phase_slices;
        let mut record = TimeBinRecord {
            users: vec![
                UserSetting {
                    intensity: 0,
                    phase_index: 0,
                    bit: 0
                };
                users
            ],
            outcomes: vec![ClickOutcome::None; users - 1],
            selected: None,
        };
        let mut announced = 0;
        let mut kept = Vec::new();
        for _ in 0..bins {
            self.sample_settings(&mut rng, &mut record.users);
            self.detect(&record.users, &mut rng, &mut record.outcomes);
            record.selected = Self::announce(&record.outcomes, &mut rng);
            if record.selected.is_some() {
                announced += 1;
                if let Some(click) = record.retained(slices) {
                    kept.push(click);
                }
            }
        }
        (announced, kept)
    }
}

/// Counts from one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub bins_simulated: u64,
    pub bundle: Bundle,
    /// Bins in which at least one port clicked successfully.
    pub announced_bins: u64,
    /// `[k][port][m]` sizes of `T_j^m` restricted to intensity `k`.
    pub retained_clicks: Vec<Vec<Vec<u64>>>,
    /// `[port][m]` sizes of `T_j^m`.
    pub slice_totals: Vec<Vec<u64>>,
    /// Matched tuples before the common-intensity check.
    pub coincidences: u64,
    /// `[k]` coincidences with common intensity `k`.
    pub sifted: Vec<u64>,
    /// `[k][port]` retained clicks on the wrong detector.
    pub adjacent_errors: Vec<Vec<u64>>,
    /// `[k][u - 1]` sifted coincidences where user `u` disagrees with user 0.
    pub conference_errors: Vec<Vec<u64>>,
}

impl TrialSummary {
    pub fn total_conference_errors(&self) -> u64 {
        self.conference_errors.iter().flatten().sum()
    }
}

/// Simulates `num_bins` time bins and post-processes them.
pub fn run_protocol(bundle: &Bundle, num_bins: u64, seed: u64) -> Result<TrialSummary> {
    run_sharded(bundle, num_bins, seed, SHARD_BINS)
}

fn run_sharded(bundle: &Bundle, num_bins: u64, seed: u64, shard_bins: u64) -> Result<TrialSummary> {
    if num_bins == 0 {
        return Err(Error::invalid("bins", "at least one time bin is required"));
    }
    let sim = Simulator::new(bundle);
    let source = bundle.source();
    let slices = source.phase_slices;
    let half = (slices / 2) as usize;
    let ports = source.num_ports();
    let settings = source.num_settings();

    let shards = num_bins.div_ceil(shard_bins);
    let generated: Vec<(u64, Vec<RetainedClick>)> = (0..shards)
        .into_par_iter()
        .map(|i| sim.run_shard(seed, i, shard_bins.min(num_bins - i * shard_bins)))
        .collect();

    let mut announced_bins = 0;
    let mut retained_clicks = vec![vec![vec![0u64; half]; ports]; settings];
    let mut adjacent_errors = vec![vec![0u64; ports]; settings];
    let mut sets: Vec<Vec<Vec<RetainedClick>>> = vec![vec![Vec::new(); ports]; half];
    for (announced, kept) in generated {
        announced_bins += announced;
        for click in kept {
            let m = click.slice(slices) as usize;
            retained_clicks[click.intensity][click.port][m] += 1;
            if click.detector != Some(click.ideal_detector(slices)) {
                adjacent_errors[click.intensity][click.port] += 1;
            }
            sets[m][click.port].push(click);
        }
    }
    let slice_totals = (0..ports)
        .map(|j| (0..half).map(|m| sets[m][j].len() as u64).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MATCHING_STREAM);
    let mut coincidences = 0;
    let mut sifted = vec![0u64; settings];
    let mut conference_errors = vec![vec![0u64; ports]; settings];
    let mut tuple = Vec::with_capacity(ports);
    for slice_sets in &mut sets {
        for set in slice_sets.iter_mut() {
            set.shuffle(&mut rng);
        }
        let draws = slice_sets.iter().map(Vec::len).min().unwrap_or(0);
        coincidences += draws as u64;
        for i in 0..draws {
            tuple.clear();
            tuple.extend(slice_sets.iter().map(|set| set[i]));
            let k = tuple[0].intensity;
            if tuple.iter().any(|c| c.intensity != k) {
                continue;
            }
            sifted[k] += 1;
            let bits = extract_bits(&tuple, slices)?;
            for (u, &b) in bits.iter().enumerate().skip(1) {
                if b != bits[0] {
                    conference_errors[k][u - 1] += 1;
                }
            }
        }
    }

    Ok(TrialSummary {
        seed,
        bins_simulated: num_bins,
        bundle: bundle.clone(),
        announced_bins,
        retained_clicks,
        slice_totals,
        coincidences,
        sifted,
        adjacent_errors,
        conference_errors,
    })
}

/// Final key bits of all users for one coincidence, ordered by port.
///
/// User 0 keeps `r_0`. User `u` combines its bit from port `u - 1`, the
/// published `r'_k` and `m~_k` of the users between, every announced `d_k`
/// for `k < u` and the phase values `m_0..=m_u`.
pub fn extract_bits(coincidence: &[RetainedClick], phase_slices: u32) -> Result<Vec<u8>> {
    if coincidence.len() < 2 {
        return Err(Error::invalid(
            "coincidence",
            format!("{} ports; at least 2 required", coincidence.len()),
        ));
    }
    let mut bits = Vec::with_capacity(coincidence.len() + 1);
    bits.push(coincidence[0].left.bit);
    let mut d_acc = 0;
    let mut m_acc = coincidence[0].left.phase_bit(phase_slices);
    let mut chain = 0;
    for (k, click) in coincidence.iter().enumerate() {
        d_acc ^= click
            .detector
            .ok_or(Error::MissingAnnouncement { port: k })?;
        let right = click.right;
        m_acc ^= right.phase_bit(phase_slices);
        bits.push(right.bit ^ chain ^ d_acc ^ m_acc);
        if let Some(next) = coincidence.get(k + 1) {
            // user k + 1 publishes r xor r~ and m~
            let tilde = next.left;
            chain ^= right.bit ^ tilde.bit ^ tilde.phase_bit(phase_slices);
        }
    }
    Ok(bits)
}

/// One simulated count against its analytic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub name: String,
    pub observed: u64,
    pub expected: f64,
    pub z: Option<f64>,
    pub flagged: bool,
    pub note: Option<String>,
}

/// z-scores of every tracked count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub statistics: Vec<Statistic>,
}

impl ConsistencyReport {
    pub fn flagged(&self) -> impl Iterator<Item = &Statistic> {
        self.statistics.iter().filter(|s| s.flagged)
    }

    pub fn is_clean(&self) -> bool {
        self.flagged().next().is_none()
    }

    pub fn max_abs_z(&self) -> f64 {
        self.statistics
            .iter()
            .filter_map(|s| s.z)
            .fold(0.0, |a, z| a.max(z.abs()))
    }

    pub fn compared(&self) -> usize {
        self.statistics.iter().filter(|s| s.z.is_some()).count()
    }
}

fn statistic(name: String, observed: u64, expected: f64) -> Statistic {
    if !(expected >= MIN_EXPECTED) {
        return Statistic {
            name,
            observed,
            expected,
            z: None,
            flagged: false,
            note: Some(format!(
                "skipped: expected count {expected:.3e} below {MIN_EXPECTED}"
            )),
        };
    }
    let z = (observed as f64 - expected) / expected.sqrt();
    Statistic {
        name,
        observed,
        expected,
        z: Some(z),
        flagged: z.abs() > Z_THRESHOLD,
        note: None,
    }
}

/// Compares `summary` with the analytic model of `bundle` at the same number of bins.
pub fn compare_to_analytic(summary: &TrialSummary, bundle: &Bundle) -> Result<ConsistencyReport> {
    let source = bundle.source();
    let settings = source.num_settings();
    let ports = source.num_ports();
    let half = (source.phase_slices / 2) as usize;
    let shape_ok = summary.retained_clicks.len() == settings
        && summary
            .retained_clicks
            .iter()
            .all(|k| k.len() == ports && k.iter().all(|j| j.len() == half))
        && summary.sifted.len() == settings;
    if !shape_ok {
        return Err(Error::invalid(
            "summary",
            "counts do not match the users, intensities or phase slices of the configuration",
        ));
    }
    let analytic = bundle.with_security(SecurityParams {
        data_size: summary.bins_simulated as f64,
        ..*bundle.security()
    })?;
    let model = CoincidenceModel::new(&analytic);
    let stats = model.stats()?;
    let p_d = analytic.channel().dark_count_rate;

    let mut out = Vec::new();
    for k in 0..settings {
        for j in 0..ports {
            for m in 0..half {
                out.push(statistic(
                    format!("retained[k={k},port={j},slice={m}]"),
                    summary.retained_clicks[k][j][m],
                    stats.retained_clicks[k][j],
                ));
            }
        }
    }
    for j in 0..ports {
        for m in 0..half {
            out.push(statistic(
                format!("slice_total[port={j},slice={m}]"),
                summary.slice_totals[j][m],
                stats.slice_totals[j],
            ));
        }
    }
    for k in 0..settings {
        out.push(statistic(
            format!("sifted[k={k}]"),
            summary.sifted[k],
            stats.sifted[k],
        ));
    }
    for k in 0..settings {
        let intensity = source.intensity(k);
        if intensity == 0.0 {
            continue;
        }
        let rate = channel::adjacent_bit_error(intensity, model.eta_t(), p_d)?;
        for j in 0..ports {
            out.push(statistic(
                format!("adjacent_errors[k={k},port={j}]"),
                summary.adjacent_errors[k][j],
                rate * half as f64 * stats.retained_clicks[k][j],
            ));
        }
    }
    for (u, &e) in stats.marginal_errors.iter().enumerate() {
        out.push(statistic(
            format!("conference_errors[k=0,user={}]", u + 1),
            summary.conference_errors[0][u],
            stats.sifted[0] * e,
        ));
    }
    Ok(ConsistencyReport { statistics: out })
}
