//! Standard normal CDF and quantile function (absolute error below 1e-10).

use statrs::function::erf::{erfc, erfc_inv};

/// `Phi(x) = P(Z <= x)` for standard normal `Z`.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of [`cdf`] on `(0, 1)`; returns `-inf`/`inf` at the endpoints.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Tabulated standard normal values (Abramowitz & Stegun, 26.2).
    const CDF_TABLE: [(f64, f64); 6] = [
        (0.0, 0.5),
        (1.0, 0.841_344_746_068_542_9),
        (-1.0, 0.158_655_253_931_457_05),
        (1.96, 0.975_002_104_851_780),
        (3.0, 0.998_650_101_968_369_9),
        (-5.0, 2.866_515_718_791_939e-7),
    ];

    #[test]
    fn cdf_matches_table() {
        for (x, p) in CDF_TABLE {
            assert!((cdf(x) - p).abs() < 1e-10, "Phi({x}) = {}", cdf(x));
        }
    }

    #[test]
    fn quantile_matches_table() {
        assert_eq!(quantile(0.5), 0.0);
        assert!((quantile(0.7) - 0.524_400_512_708_041).abs() < 1e-12);
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((quantile(0.55) - 0.125_661_346_855_074).abs() < 1e-12);
        assert!((quantile(1e-6) + 4.753_424_308_822_899).abs() < 1e-9);
    }

    #[test]
    fn round_trip() {
        for i in 1..200 {
            let p = i as f64 / 200.0;
            assert!((cdf(quantile(p)) - p).abs() < 1e-10);
        }
    }
}
