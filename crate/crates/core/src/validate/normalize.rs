use crate::taskgen::Family;

/// Canonical answer form used for every exact comparison: trimmed and
/// lowercased. Arithmetic answers also drop thousands separators, leading
/// `+` signs and a trailing `.0`, and `-0` becomes `0`.
pub fn normalize_answer(text: &str, family: Family) -> String {
    let base = normalize(text);
    if family != Family::ArithmeticTwoStep {
        return base;
    }

    let mut s = base.as_str();
    while let Some(rest) = s.strip_prefix('+') {
        s = rest.trim();
    }

    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        let between_digits = i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit();
        if c == ',' && between_digits {
            continue;
        }
        out.push(c);
    }

    if let Some(int_part) = out.strip_suffix(".0") {
        let digits = int_part.strip_prefix('-').unwrap_or(int_part);
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            out.truncate(int_part.len());
        }
    }
    if out == "-0" {
        out = "0".to_string();
    }
    out
}

/// `str(x).strip().lower()` for strings.
pub fn normalize(text: &str) -> String {
    text.trim().to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(normalize_answer(" Leo ", Family::ObjectTracking), "leo");
        assert_eq!(normalize_answer("1,234", Family::ArithmeticTwoStep), "1234");
        assert_eq!(normalize_answer("TRUE", Family::BooleanLogic), "true");
    }

    #[test]
    fn arithmetic_canonicalization() {
        let n = |s| normalize_answer(s, Family::ArithmeticTwoStep);
        assert_eq!(n("+9"), "9");
        assert_eq!(n("-0"), "0");
        assert_eq!(n("9.0"), "9");
        assert_eq!(n("-0.0"), "0");
        assert_eq!(n("1,234,567"), "1234567");
        assert_eq!(n("9.5"), "9.5");
        assert_eq!(n("1.0.0"), "1.0.0");
        // separators only count between digits
        assert_eq!(n("1,,2"), "1,,2");
        // non-arithmetic families leave digits alone
        assert_eq!(normalize_answer("1,234", Family::SymbolicString), "1,234");
    }

    proptest! {
        #[test]
        fn idempotent(s in "[ +\\-0-9,.a-zA-Z]{0,12}") {
            for family in Family::ALL {
                let once = normalize_answer(&s, family);
                prop_assert_eq!(normalize_answer(&once, family), once.clone());
            }
        }

        #[test]
        fn idempotent_unicode(s in "\\PC{0,10}") {
            let once = normalize_answer(&s, Family::ArithmeticTwoStep);
            prop_assert_eq!(normalize_answer(&once, Family::ArithmeticTwoStep), once.clone());
        }
    }
}
