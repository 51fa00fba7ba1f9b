//! Number formatting for output files: six significant digits in fixed
//! decimal notation, so outputs diff cleanly.

use serde::Serialize;
use serde_json::Value;

/// `x` with six significant digits, no exponent.
///
/// ```
/// use moe_placement::experiment::sig6;
/// assert_eq!(sig6(0.0123456789), "0.0123457");
/// assert_eq!(sig6(1234567.0), "1234570");
/// assert_eq!(sig6(2.5), "2.50000");
/// assert_eq!(sig6(0.0), "0");
/// ```
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding may carry into a new leading digit (9.999995 -> 10.00000)
    let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    let significant = digits.trim_start_matches('0').len();
    if significant > 6 && decimals > 0 {
        let d = decimals - 1;
        return format!("{x:.d$}");
    }
    if exp > 5 {
        let scale = 10f64.powi(exp - 5);
        return format!("{:.0}", (x / scale).round() * scale);
    }
    s
}

/// `x` rounded to six significant digits.
pub fn round6(x: f64) -> f64 {
    sig6(x).parse().unwrap_or(x)
}

/// Round every float inside a JSON value.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if !n.is_i64() && !n.is_u64() => {
            let f = n.as_f64().unwrap_or(0.0);
            serde_json::Number::from_f64(round6(f)).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        v => v,
    }
}

/// Pretty JSON with rounded floats and a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let v = round_json(serde_json::to_value(value).expect("serializable"));
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

/// One compact JSON line with rounded floats.
pub fn to_json_line<T: Serialize>(value: &T) -> String {
    let v = round_json(serde_json::to_value(value).expect("serializable"));
    let mut s = serde_json::to_string(&v).expect("serializable");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carries_and_magnitudes() {
        assert_eq!(sig6(9.9999996), "10.0000");
        assert_eq!(sig6(-0.5), "-0.500000");
        assert_eq!(sig6(123456.4), "123456");
        assert_eq!(sig6(1e-7), "0.000000100000");
        assert_eq!(round6(1.0 / 3.0), 0.333333);
    }

    #[test]
    fn json_rounding_leaves_integers() {
        let v = serde_json::json!({"a": 1, "b": [0.123456789, 2]});
        assert_eq!(round_json(v), serde_json::json!({"a": 1, "b": [0.123457, 2]}));
    }
}
