//! Number formatting shared by the CSV exports.

/// Formats `x` with 9 significant digits. Plain notation for exponents in
/// [-5, 9), scientific otherwise.
pub fn sig9(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .expect("rust scientific format");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn significant(s: &str) -> usize {
        let mantissa = s.split('e').next().unwrap();
        let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
        digits.trim_start_matches('0').len()
    }

    #[test]
    fn fixed_and_scientific() {
        assert_eq!(sig9(0.95), "0.950000000");
        assert_eq!(sig9(1.0), "1.00000000");
        assert_eq!(sig9(-0.1883), "-0.188300000");
        assert_eq!(sig9(75.0), "75.0000000");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1e-7), "1.00000000e-7");
        assert_eq!(sig9(123456789.0), "123456789");
    }

    #[test]
    fn nine_digits_and_round_trip_close() {
        for &x in &[1.2345678912, 9.9999999999, 0.000123456789, -42.4242424242, 3.3e12] {
            let s = sig9(x);
            assert!(significant(&s) == 9 || s.contains('e'), "{s}");
            let back: f64 = s.parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-8, "{x} -> {s}");
        }
    }
}
