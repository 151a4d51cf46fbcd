use acurai_core::harness::{format_interval, wilson_interval};
use proptest::prelude::*;

/// Roots of the score equation (p - q)^2 = z^2 q (1 - q) / n, by bisection.
fn score_roots(x: u64, n: u64, z: f64) -> (f64, f64) {
    let p = x as f64 / n as f64;
    let f = |q: f64| (p - q).powi(2) - z * z * q * (1.0 - q) / n as f64;
    let bisect = |mut lo: f64, mut hi: f64| {
        // f(lo) and f(hi) have opposite signs
        let rising = f(hi) > f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == rising {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let low = if x == 0 { 0.0 } else { bisect(0.0, p) };
    let high = if x == n { 1.0 } else { bisect(p, 1.0) };
    (low, high)
}

#[test]
fn paper_interval_for_37_of_37() {
    let (low, high) = wilson_interval(37, 37, 1.96).unwrap();
    assert!((low - 0.9059).abs() <= 0.0005, "{low}");
    assert_eq!(high, 1.0);
    let (ol, oh) = score_roots(37, 37, 1.96);
    assert!((low - ol).abs() < 1e-9 && (high - oh).abs() < 1e-9);
    assert_eq!(format_interval(low, high), "[0.91, 1]");
}

#[test]
fn zero_successes_mirrors_the_paper_case() {
    let (low, high) = wilson_interval(0, 37, 1.96).unwrap();
    assert_eq!(low, 0.0);
    assert!((high - 0.0941).abs() <= 0.0005, "{high}");
}

#[test]
fn half_is_symmetric() {
    let (low, high) = wilson_interval(18, 36, 1.96).unwrap();
    assert!((low + high - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_root_finding(n in 1u64..5000, frac in 0.0f64..=1.0, z in 0.5f64..4.0) {
        let x = ((n as f64) * frac).round() as u64;
        let (low, high) = wilson_interval(x, n, z).unwrap();
        let (ol, oh) = score_roots(x, n, z);
        prop_assert!((low - ol).abs() < 1e-9, "low {low} vs {ol}");
        prop_assert!((high - oh).abs() < 1e-9, "high {high} vs {oh}");
        prop_assert!((0.0..=1.0).contains(&low) && low <= high && high <= 1.0);
    }

    #[test]
    fn mirror_symmetry(n in 1u64..5000, frac in 0.0f64..=1.0, z in 0.5f64..4.0) {
        let x = ((n as f64) * frac).round() as u64;
        let (l1, h1) = wilson_interval(x, n, z).unwrap();
        let (l2, h2) = wilson_interval(n - x, n, z).unwrap();
        prop_assert!((l1 - (1.0 - h2)).abs() < 1e-12);
        prop_assert!((h1 - (1.0 - l2)).abs() < 1e-12);
    }

    #[test]
    fn width_shrinks_with_n(base in 1u64..500, k in 1u64..20, frac in 0.0f64..=1.0, z in 0.5f64..4.0) {
        // same p at n and k*n
        let x = ((base as f64) * frac).round() as u64;
        let (l1, h1) = wilson_interval(x, base, z).unwrap();
        let (l2, h2) = wilson_interval(x * (k + 1), base * (k + 1), z).unwrap();
        prop_assert!(h2 - l2 < h1 - l1);
    }
}
