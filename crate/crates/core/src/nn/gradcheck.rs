//! Central finite differences, used by tests to validate analytic gradients.

/// Relative error with a floor on the denominator.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// `∂f/∂xᵢ ≈ (f(x + hεᵢ) − f(x − hεᵢ)) / 2h` for every coordinate.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error between two gradient vectors.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differentiates_a_cubic() {
        let g = central_diff(&[1.5, -2.0], 1e-5, |x| x[0].powi(3) + 2.0 * x[1]);
        assert!(rel_error(g[0], 6.75, 1e-8) < 1e-9);
        assert!(rel_error(g[1], 2.0, 1e-8) < 1e-9);
    }
}
