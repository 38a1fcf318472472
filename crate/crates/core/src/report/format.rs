//! Number formatting shared by every writer.

/// `%.6g`: six significant digits, trailing zeros trimmed, exponent form
/// outside `[1e-4, 1e6)`.
pub fn sig6(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{}e{sign}{:02}", trim(mantissa), exp.abs());
    }
    let prec = (5 - exp) as usize;
    trim(&format!("{v:.prec$}")).to_string()
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Fixed decimals with an ASCII minus, never `-0.000`.
pub fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-0.972, "-0.972"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (1.23456789, "1.23457"),
            (99999.95, "99999.9"),
            (999999.5, "1e+06"),
            (-2.5e-10, "-2.5e-10"),
            (100.0, "100"),
        ];
        for (v, want) in cases {
            assert_eq!(sig6(v), want, "{v}");
        }
        assert_eq!(sig6(f64::NAN), "NaN");
    }

    #[test]
    fn fixed_decimals() {
        assert_eq!(fixed(-0.9724, 3), "-0.972");
        assert_eq!(fixed(-0.0001, 3), "0.000");
        assert_eq!(fixed(0.185, 3), "0.185");
    }
}
