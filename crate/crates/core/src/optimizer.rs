//! Derivative-free maximization of the key rate over source settings.
//!
//! The search runs Nelder-Mead in `log10` coordinates over the nonzero
//! intensities and the non-vacuum send probabilities. Every candidate is
//! projected onto the feasible set (ordered intensities, probabilities that
//! leave room for the vacuum) before it is evaluated, so the simplex itself
//! never has to respect the constraints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyrate::{self, Objective};
use crate::model::{Bundle, RateReport, SourceConfig};

/// Value substituted for candidates whose evaluation fails.
const FAILED: f64 = -1e300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpec {
    /// Range for every nonzero intensity.
    pub intensity_bounds: (f64, f64),
    /// Range for every non-vacuum send probability; the vacuum takes the
    /// remainder but never less than the lower bound.
    pub probability_bounds: (f64, f64),
    /// Smallest ratio between consecutive intensities.
    pub min_intensity_ratio: f64,
    pub restarts: usize,
    /// Evaluation budget per restart.
    pub max_evals: usize,
    /// Relative spread of simplex values at which a restart stops.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            intensity_bounds: (1e-4, 1.0),
            probability_bounds: (1e-4, 0.999),
            min_intensity_ratio: 1.05,
            restarts: 8,
            max_evals: 2000,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl SearchSpec {
    pub fn validate(&self, num_users: usize) -> Result<()> {
        let (lo, hi) = self.intensity_bounds;
        if !(lo > 0.0 && hi <= 1.0 && lo < hi) {
            return Err(Error::invalid(
                "intensity_bounds",
                format!("({lo}, {hi}) must lie in (0, 1]"),
            ));
        }
        let (plo, phi) = self.probability_bounds;
        if !(plo > 0.0 && phi < 1.0 && plo < phi) {
            return Err(Error::invalid(
                "probability_bounds",
                format!("({plo}, {phi}) must lie in (0, 1)"),
            ));
        }
        if !(self.min_intensity_ratio > 1.0) {
            return Err(Error::invalid("min_intensity_ratio", "must exceed 1"));
        }
        let needed = self.min_intensity_ratio.powi(num_users as i32 - 1);
        if hi / lo < needed {
            return Err(Error::Optimizer(format!(
                "intensity range ({lo}, {hi}) cannot hold {} ordered intensities",
                num_users
            )));
        }
        if (num_users + 1) as f64 * plo > 1.0 {
            return Err(Error::Optimizer(format!(
                "probability floor {plo} leaves no room for {} settings",
                num_users + 1
            )));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts", "at least one restart required"));
        }
        if self.max_evals == 0 {
            return Err(Error::invalid("max_evals", "budget must be positive"));
        }
        Ok(())
    }

    /// Maps an unconstrained `log10` point onto a feasible source.
    pub fn project(&self, template: &SourceConfig, point: &[f64]) -> SourceConfig {
        let n = template.num_users;
        let (lo, hi) = self.intensity_bounds;
        let r = self.min_intensity_ratio;
        let mut x: Vec<f64> = point[..n]
            .iter()
            .map(|&v| finite_or(10f64.powf(v), lo).clamp(lo, hi))
            .collect();
        x.sort_by(|a, b| b.total_cmp(a));
        for i in 1..n {
            x[i] = x[i].min(x[i - 1] / r);
        }
        if x[n - 1] < lo {
            x[n - 1] = lo;
            for i in (0..n - 1).rev() {
                x[i] = x[i].max(x[i + 1] * r).min(hi);
            }
        }

        let (plo, phi) = self.probability_bounds;
        let mut p: Vec<f64> = point[n..]
            .iter()
            .map(|&v| finite_or(10f64.powf(v), plo).clamp(plo, phi))
            .collect();
        let budget = 1.0 - plo;
        for _ in 0..64 {
            let total: f64 = p.iter().sum();
            if total <= budget {
                break;
            }
            // shrink only the entries that can still move
            let free: f64 = p.iter().filter(|&&v| v > plo).map(|&v| v - plo).sum();
            let excess = total - budget;
            let keep = ((free - excess) / free).max(0.0);
            for v in &mut p {
                *v = plo + (*v - plo) * keep;
            }
        }
        let vacuum = 1.0 - p.iter().sum::<f64>();
        p.push(vacuum.max(plo));

        SourceConfig {
            num_users: n,
            signal_intensity: x[0],
            decoy_intensities: x[1..].iter().copied().chain([0.0]).collect(),
            send_probabilities: p,
            phase_slices: template.phase_slices,
        }
    }

    /// Inverse of `project` on feasible sources.
    pub fn encode(&self, source: &SourceConfig) -> Vec<f64> {
        let n = source.num_users;
        (0..n)
            .map(|k| source.intensity(k).log10())
            .chain(source.send_probabilities[..n].iter().map(|p| p.log10()))
            .collect()
    }

    fn random_point(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (lo, hi) = self.intensity_bounds;
        let (plo, _) = self.probability_bounds;
        let mut point: Vec<f64> = (0..n)
            .map(|_| rng.random_range(lo.log10()..hi.log10()))
            .collect();
        // draw a point of the simplex, then keep it inside the probability box
        let weights: Vec<f64> = (0..=n)
            .map(|_| -rng.random_range(1e-12f64..1.0).ln())
            .collect();
        let total: f64 = weights.iter().sum();
        point.extend(weights[..n].iter().map(|w| (w / total).max(plo).log10()));
        point
    }
}

fn finite_or(v: f64, fallback: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        fallback
    }
}

/// A reasonable starting point for `num_users` users.
pub fn default_source(num_users: usize, phase_slices: u32) -> SourceConfig {
    let mu = 0.1;
    let decoys = (1..num_users)
        .map(|i| mu * 0.35f64.powi(i as i32))
        .chain([0.0])
        .collect();
    let rest = 0.3 / num_users as f64;
    SourceConfig {
        num_users,
        signal_intensity: mu,
        decoy_intensities: decoys,
        send_probabilities: std::iter::once(0.7)
            .chain(std::iter::repeat_n(rest, num_users))
            .collect(),
        phase_slices,
    }
}

/// Result of one local search.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub start_value: f64,
    pub evaluations: usize,
}

/// Maximizes `f` from `start` with an axis-aligned initial simplex of size `step`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    step: f64,
    max_evals: usize,
    tolerance: f64,
) -> LocalResult {
    let dim = start.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            FAILED
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let start_value = eval(start);
    simplex.push((start.to_vec(), start_value));
    for i in 0..dim {
        let mut x = start.to_vec();
        x[i] += step;
        let v = eval(&x);
        simplex.push((x, v));
    }
    let mut evaluations = dim + 1;

    // standard coefficients, adapted to the dimension
    let d = dim as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / d, 0.75 - 1.0 / (2.0 * d), 1.0 - 1.0 / d);

    while evaluations < max_evals {
        // best first; stable sort keeps the earlier vertex on ties
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = (best - worst).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= tolerance * best.abs() && size <= 1e-9 {
            break;
        }
        if spread == 0.0 && size <= 1e-9 {
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|i| simplex[..dim].iter().map(|(x, _)| x[i]).sum::<f64>() / d)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(alpha);
        let fr = eval(&reflected);
        evaluations += 1;
        let second_worst = simplex[dim - 1].1;
        if fr > best {
            let expanded = along(alpha * gamma);
            let fe = eval(&expanded);
            evaluations += 1;
            simplex[dim] = if fe > fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr > second_worst {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr > worst {
            let x = along(alpha * rho);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(-rho);
            let v = eval(&x);
            (x, v)
        };
        evaluations += 1;
        if fc > worst.max(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        // shrink toward the best vertex
        let anchor = simplex[0].0.clone();
        for (x, v) in simplex[1..].iter_mut() {
            for (xi, ai) in x.iter_mut().zip(&anchor) {
                *xi = ai + sigma * (*xi - ai);
            }
            *v = eval(x);
        }
        evaluations += dim;
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (point, value) = simplex.swap_remove(0);
    LocalResult {
        point,
        value,
        start_value,
        evaluations,
    }
}

/// Multi-start maximization of `f` over the box `bounds`; points outside the
/// box are clamped before evaluation.
pub fn maximize<F>(
    f: F,
    bounds: &[(f64, f64)],
    restarts: usize,
    max_evals: usize,
    seed: u64,
) -> LocalResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let clamp = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(bounds)
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect()
    };
    let results: Vec<LocalResult> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let start: Vec<f64> = bounds
                .iter()
                .map(|&(lo, hi)| {
                    if lo < hi {
                        rng.random_range(lo..hi)
                    } else {
                        lo
                    }
                })
                .collect();
            let width = bounds.iter().map(|&(lo, hi)| hi - lo).fold(0.0, f64::max);
            let mut local = nelder_mead(|x| f(&clamp(x)), &start, 0.1 * width, max_evals, 1e-14);
            local.point = clamp(&local.point);
            local
        })
        .collect();
    best_of(results)
}

fn best_of(results: Vec<LocalResult>) -> LocalResult {
    let mut iter = results.into_iter();
    let mut best = iter.next().expect("at least one restart");
    for r in iter {
        if r.value > best.value {
            best = r;
        }
    }
    best
}

/// Best settings found at one distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub bundle: Bundle,
    pub report: RateReport,
    pub evaluations: usize,
    /// Objective value at the start of each restart, in restart order.
    pub start_values: Vec<f64>,
}

fn objective_value(spec: &SearchSpec, objective: Objective, bundle: &Bundle, point: &[f64]) -> f64 {
    let source = spec.project(bundle.source(), point);
    match bundle
        .with_source(source)
        .and_then(|b| keyrate::evaluate(&b, objective))
    {
        Ok(report) => search_score(&report),
        Err(_) => FAILED,
    }
}

/// The raw rate when positive. Otherwise the rate per sifted coincidence,
/// which is also negative but does not reward shrinking the signal to zero.
pub fn search_score(report: &RateReport) -> f64 {
    let raw = report.key_rate_raw;
    let score = if raw > 0.0 {
        raw
    } else {
        raw / report.signal_efficiency
    };
    if score.is_finite() {
        score
    } else {
        FAILED
    }
}

/// Maximizes the raw key rate at the bundle's distance. Restart 0 starts from
/// the bundle's own source settings; the others start from seeded random points.
pub fn optimize_at_distance(
    spec: &SearchSpec,
    objective: Objective,
    bundle: &Bundle,
) -> Result<Optimum> {
    let n = bundle.num_users();
    spec.validate(n)?;
    let warm = spec.encode(&spec.project(bundle.source(), &spec.encode(bundle.source())));
    let results: Vec<LocalResult> = (0..spec.restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                warm.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(r as u64);
                spec.random_point(n, &mut rng)
            };
            nelder_mead(
                |x| objective_value(spec, objective, bundle, x),
                &start,
                0.3,
                spec.max_evals,
                spec.tolerance,
            )
        })
        .collect();
    let start_values = results.iter().map(|r| r.start_value).collect();
    let evaluations = results.iter().map(|r| r.evaluations).sum();
    let best = best_of(results);
    let source = spec.project(bundle.source(), &best.point);
    let best_bundle = bundle.with_source(source)?;
    let report = keyrate::evaluate(&best_bundle, objective)
        .map_err(|e| Error::Optimizer(format!("no feasible point evaluates cleanly: {e}")))?;
    Ok(Optimum {
        bundle: best_bundle,
        report,
        evaluations,
        start_values,
    })
}

/// Distance at which a continuation path starts.
pub const CONTINUATION_START_KM: f64 = 50.0;
/// Spacing of a continuation path.
pub const CONTINUATION_STEP_KM: f64 = 20.0;

/// Like [`optimize_at_distance`], but when no positive rate turns up it
/// walks out from [`CONTINUATION_START_KM`], warm-starting each step from
/// the previous optimum. Far out, random starts tend to land where the
/// phase-error estimate has saturated and the landscape is flat.
pub fn optimize_with_continuation(
    spec: &SearchSpec,
    objective: Objective,
    bundle: &Bundle,
) -> Result<Optimum> {
    let direct = optimize_at_distance(spec, objective, bundle)?;
    let target = bundle.channel().distance_km;
    if direct.report.key_rate_raw > 0.0 || target <= CONTINUATION_START_KM {
        return Ok(direct);
    }
    let mut path = Vec::new();
    let mut d = CONTINUATION_START_KM;
    while d < target {
        path.push(d);
        d += CONTINUATION_STEP_KM;
    }
    path.push(target);
    let mut current = bundle.clone();
    let mut evaluations = direct.evaluations;
    let mut last = None;
    for distance in path {
        let best = optimize_at_distance(spec, objective, &current.with_distance(distance)?)?;
        evaluations += best.evaluations;
        current = best.bundle.clone();
        last = Some(best);
    }
    let walked = last.expect("path ends at the target");
    let mut best = if search_score(&walked.report) > search_score(&direct.report) {
        walked
    } else {
        direct
    };
    best.evaluations = evaluations;
    Ok(best)
}

/// Optimizes at each distance in order, seeding each search with the
/// previous distance's optimum. The first distance falls back on
/// [`optimize_with_continuation`].
pub fn scan_distances(
    distances: &[f64],
    spec: &SearchSpec,
    objective: Objective,
    bundle: &Bundle,
) -> Result<Vec<Optimum>> {
    if distances.is_empty() {
        return Err(Error::invalid("distances", "empty distance list"));
    }
    let mut current = bundle.clone();
    let mut out = Vec::with_capacity(distances.len());
    for (i, &distance) in distances.iter().enumerate() {
        let at = current.with_distance(distance)?;
        let best = if i == 0 {
            optimize_with_continuation(spec, objective, &at)?
        } else {
            optimize_at_distance(spec, objective, &at)?
        };
        current = best.bundle.clone();
        out.push(best);
    }
    Ok(out)
}
