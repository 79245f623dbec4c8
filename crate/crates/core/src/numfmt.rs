//! Number formatting for machine-readable files and human summaries.

/// 17 significant digits, enough to round-trip any `f64`.
pub fn full(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// 6 significant digits, `%g`-style, always with a decimal point.
pub fn short(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0.0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        let s = format!("{v:.5e}");
        let (mant, e) = s.split_once('e').expect("exponent form");
        return format!("{}e{e}", trim(mant));
    }
    let decimals = (5 - exp).max(0) as usize;
    trim(&format!("{v:.decimals$}"))
}

fn trim(s: &str) -> String {
    if !s.contains('.') {
        return format!("{s}.0");
    }
    let t = s.trim_end_matches('0');
    if t.ends_with('.') {
        format!("{t}0")
    } else {
        t.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_form() {
        assert_eq!(short(0.0), "0.0");
        assert_eq!(short(1.0), "1.0");
        assert_eq!(short(0.447213595499958), "0.447214");
        assert_eq!(short(-123456.7), "-123457.0");
        assert_eq!(short(1234567.0), "1.23457e6");
        assert_eq!(short(1.5e-7), "1.5e-7");
        assert_eq!(short(0.44), "0.44");
    }

    #[test]
    fn full_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(full(v).parse::<f64>().unwrap(), v);
        }
    }
}
