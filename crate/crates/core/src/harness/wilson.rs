use super::HarnessError;

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Result<(f64, f64), HarnessError> {
    if n == 0 || successes > n {
        return Err(HarnessError::InvalidCounts { successes, n });
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(HarnessError::InvalidZ(z));
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(((center - half).clamp(0.0, 1.0), (center + half).clamp(0.0, 1.0)))
}

/// Two-decimal display with trailing zeros dropped: 1.0 -> "1", 0.9059 -> "0.91".
pub fn format_bound(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

pub fn format_interval(low: f64, high: f64) -> String {
    format!("[{}, {}]", format_bound(low), format_bound(high))
}
