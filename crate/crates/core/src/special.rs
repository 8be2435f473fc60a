//! Scalar special functions.

use crate::error::{Error, Result};

/// Above this argument the Hankel asymptotic expansion of `I0` is used.
const I0_SERIES_LIMIT: f64 = 30.0;

/// Binary Shannon entropy with `H(0) = H(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutOfDomain {
            name: "x",
            value: x,
            domain: "[0, 1]",
        });
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> Result<f64> {
    check_bessel_arg(x)?;
    if x <= I0_SERIES_LIMIT {
        Ok(1.0 + i0_series_tail(x))
    } else {
        Ok(i0_asymptotic(x))
    }
}

/// `I0(x) - 1`, accurate for small `x` where `I0(x)` rounds to 1.
pub fn bessel_i0m1(x: f64) -> Result<f64> {
    check_bessel_arg(x)?;
    if x <= I0_SERIES_LIMIT {
        Ok(i0_series_tail(x))
    } else {
        Ok(i0_asymptotic(x) - 1.0)
    }
}

fn check_bessel_arg(x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            name: "x",
            value: x,
            domain: "[0, inf)",
        })
    }
}

// sum_{k >= 1} (x/2)^{2k} / (k!)^2; all terms are positive so there is no cancellation.
fn i0_series_tail(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 0.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term <= sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

// e^x / sqrt(2 pi x) * sum_k ((2k-1)!!)^2 / (k! 8^k x^k), truncated at the smallest term.
fn i0_asymptotic(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        let next = term * odd * odd / (k as f64 * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    x.exp() / (2.0 * std::f64::consts::PI * x).sqrt() * sum
}

/// Binomial coefficient `C(n, k)`; zero outside `0 <= k <= n`.
pub fn binomial(n: u64, k: i64) -> f64 {
    if k < 0 || k as u64 > n {
        return 0.0;
    }
    let k = (k as u64).min(n - k as u64);
    let mut acc: u128 = 1;
    for i in 0..k {
        match acc.checked_mul((n - i) as u128) {
            // exact: acc * (n - i) is divisible by (i + 1) at every step
            Some(v) => acc = v / (i + 1) as u128,
            None => return (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)).exp(),
        }
    }
    acc as f64
}

/// `ln(n!)`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 170 {
        return (2..=n).map(|i| (i as f64).ln()).sum();
    }
    // Stirling series; the first neglected term is below 1e-17 for n > 170.
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    x * x.ln() - x
        + 0.5 * (2.0 * std::f64::consts::PI * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

/// `n!` as a float (exact up to 22!).
pub fn factorial(n: u64) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent route: terms from log-gamma, summed from the smallest term upward.
    fn i0_series_oracle(x: f64) -> f64 {
        if x == 0.0 {
            return 1.0;
        }
        let half = (0.5 * x).ln();
        let terms: Vec<f64> = (0..200u64)
            .map(|k| (2.0 * k as f64 * half - 2.0 * ln_factorial(k)).exp())
            .collect();
        terms.iter().rev().sum()
    }

    // Trapezoid rule on the periodic integral (1/pi) int_0^pi e^{x cos t} dt.
    fn i0_quadrature_oracle(x: f64) -> f64 {
        let n = 400;
        let h = std::f64::consts::PI / n as f64;
        let mut s = 0.5 * (x.exp() + (-x).exp());
        for i in 1..n {
            s += (x * (i as f64 * h).cos()).exp();
        }
        s / n as f64
    }

    #[test]
    fn entropy_reference_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        let h = binary_entropy(0.11).unwrap();
        assert!((h - 0.499_916).abs() < 1e-5, "{h}");
        assert!(binary_entropy(-1e-12).is_err());
        assert!(binary_entropy(1.5).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn i0_reference_values() {
        assert_eq!(bessel_i0(0.0).unwrap(), 1.0);
        assert!((bessel_i0(1.0).unwrap() - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(2.0).unwrap() - 2.279_585_302_336_067_3).abs() < 1e-14);
        assert!(bessel_i0(-0.1).is_err());
    }

    #[test]
    fn i0_matches_series_on_grid() {
        for i in 0..1000 {
            let x = 20.0 * i as f64 / 999.0;
            let got = bessel_i0(x).unwrap();
            let want = i0_series_oracle(x);
            assert!(
                ((got - want) / want).abs() <= 1e-12,
                "x = {x}: {got} vs {want}"
            );
            let quad = i0_quadrature_oracle(x);
            assert!(
                ((got - quad) / quad).abs() <= 1e-12,
                "x = {x}: {got} vs {quad}"
            );
        }
    }

    #[test]
    fn i0_asymptotic_branch_is_continuous() {
        for x in [30.5, 40.0, 100.0] {
            let got = bessel_i0(x).unwrap();
            let want = i0_quadrature_oracle(x);
            assert!(((got - want) / want).abs() <= 1e-12, "x = {x}");
        }
    }

    #[test]
    fn i0m1_small_arguments() {
        let x = 1e-6;
        let got = bessel_i0m1(x).unwrap();
        let want = 0.25e-12 + 1e-24 / 64.0;
        assert!(((got - want) / want).abs() < 1e-15);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(3, 1), 3.0);
        assert_eq!(binomial(5, -1), 0.0);
        assert_eq!(binomial(5, 6), 0.0);
        let product: f64 = (1..=15u64).map(|i| (15 + i) as f64 / i as f64).product();
        assert_eq!(binomial(30, 15), 155_117_520.0);
        assert_eq!(binomial(30, 15), product.round());
    }

    #[test]
    fn binomial_pascal_rule() {
        for n in 1..=40u64 {
            for k in 0..=n as i64 {
                assert_eq!(
                    binomial(n, k),
                    binomial(n - 1, k - 1) + binomial(n - 1, k),
                    "n = {n}, k = {k}"
                );
            }
        }
    }

    #[test]
    fn ln_factorial_branches_agree() {
        let direct: f64 = (2..=171u64).map(|i| (i as f64).ln()).sum();
        assert!((ln_factorial(171) - direct).abs() < 1e-10);
        assert!((factorial(10) - 3_628_800.0).abs() == 0.0);
    }

    proptest! {
        #[test]
        fn entropy_symmetric(x in 0.0f64..=1.0) {
            let a = binary_entropy(x).unwrap();
            let b = binary_entropy(1.0 - x).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
