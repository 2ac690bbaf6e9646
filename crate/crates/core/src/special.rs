//! Hyperbolic expressions with removable singularities at the origin.

/// Below this argument the closed forms are replaced by their Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// `sinh(s)/s`, with value 1 at the origin.
pub fn sinhc(s: f64) -> f64 {
    let a = s.abs();
    if a < SERIES_THRESHOLD {
        let s2 = s * s;
        1.0 + s2 / 6.0 + s2 * s2 / 120.0
    } else {
        s.sinh() / s
    }
}

/// `(cosh s − sinh(s)/s) / s²`, which tends to 1/3.
///
/// The numerator cancels catastrophically for small `s`; the series
/// `Σ_{k≥1} 2k s^{2k−2} / (2k+1)!` is used for `|s| < 0.5`, where twelve terms
/// reach full double precision.
pub fn cosh_minus_sinhc_over_sq(s: f64) -> f64 {
    let a = s.abs();
    if a < 0.5 {
        let s2 = s * s;
        let mut term = 1.0 / 6.0; // 1/(2k+1)! at k = 1
        let mut power = 1.0;
        let mut sum = 0.0;
        for k in 1..=12 {
            let kf = k as f64;
            sum += 2.0 * kf * term * power;
            term /= (2.0 * kf + 2.0) * (2.0 * kf + 3.0);
            power *= s2;
        }
        sum
    } else {
        (s.cosh() - s.sinh() / s) / (s * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinhc_limits() {
        assert_eq!(sinhc(0.0), 1.0);
        let s = 2e-6;
        assert!((sinhc(s) - s.sinh() / s).abs() < 1e-15);
    }

    #[test]
    fn f_over_sq_is_continuous_at_switch() {
        let below = cosh_minus_sinhc_over_sq(0.5 - 1e-12);
        let above = cosh_minus_sinhc_over_sq(0.5 + 1e-12);
        assert!((below - above).abs() < 1e-13);
        assert!((cosh_minus_sinhc_over_sq(0.0) - 1.0 / 3.0).abs() < 1e-16);
    }
}
