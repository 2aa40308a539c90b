//! Text encoding of exact utilizations: `"num/den"`, integers, or decimals
//! with at most six fractional digits.

use thiserror::Error;

use crate::taskmodel::Util;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid rational {input:?}: {reason}")]
pub struct ParseRatioError {
    pub input: String,
    pub reason: &'static str,
}

pub fn parse_ratio(text: &str) -> Result<Util, ParseRatioError> {
    let fail = |reason| ParseRatioError {
        input: text.to_string(),
        reason,
    };
    let s = text.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num: i128 = num.trim().parse().map_err(|_| fail("numerator is not an integer"))?;
        let den: i128 = den.trim().parse().map_err(|_| fail("denominator is not an integer"))?;
        if den == 0 {
            return Err(fail("zero denominator"));
        }
        return Ok(Util::new(num, den));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(fail("decimals need 1 to 6 fractional digits"));
        }
        let negative = int.starts_with('-');
        let int: i128 = match int {
            "" | "-" => 0,
            _ => int.parse().map_err(|_| fail("integer part is not an integer"))?,
        };
        let scale = 10i128.pow(frac.len() as u32);
        let frac: i128 = frac.parse().map_err(|_| fail("fraction is not an integer"))?;
        let magnitude = int.abs() * scale + frac;
        let num = if negative || int < 0 { -magnitude } else { magnitude };
        return Ok(Util::new(num, scale));
    }
    s.parse::<i128>()
        .map(Util::from_integer)
        .map_err(|_| fail("expected num/den, an integer or a decimal"))
}

pub fn format_ratio(value: &Util) -> String {
    format!("{}/{}", value.numer(), value.denom())
}

/// Serde adapter storing a [`Util`] as a `"num/den"` string.
pub mod serde_text {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use super::{format_ratio, parse_ratio};
    use crate::taskmodel::Util;

    pub fn serialize<S: Serializer>(value: &Util, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_ratio(value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Util, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_ratio(&text).map_err(D::Error::custom)
    }
}

/// Serde adapter for a list of [`Util`] values as `"num/den"` strings.
pub mod serde_text_list {
    use serde::{de::Error, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    use super::{format_ratio, parse_ratio};
    use crate::taskmodel::Util;

    pub fn serialize<S: Serializer>(values: &[Util], serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(values.len()))?;
        for v in values {
            seq.serialize_element(&format_ratio(v))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<Util>, D::Error> {
        Vec::<String>::deserialize(deserializer)?
            .iter()
            .map(|t| parse_ratio(t).map_err(D::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_forms() {
        assert_eq!(parse_ratio("3/2").unwrap(), Util::new(3, 2));
        assert_eq!(parse_ratio(" 6/4 ").unwrap(), Util::new(3, 2));
        assert_eq!(parse_ratio("1").unwrap(), Util::from_integer(1));
        assert_eq!(parse_ratio("0.75").unwrap(), Util::new(3, 4));
        assert_eq!(parse_ratio("1.000001").unwrap(), Util::new(1_000_001, 1_000_000));
        assert_eq!(parse_ratio(".5").unwrap(), Util::new(1, 2));
        assert_eq!(parse_ratio("-0.5").unwrap(), Util::new(-1, 2));
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "1/0", "a/2", "0.1234567", "1.", "x", "1.2.3"] {
            assert!(parse_ratio(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn format_reduces() {
        assert_eq!(format_ratio(&Util::new(2, 4)), "1/2");
        assert_eq!(format_ratio(&Util::from_integer(1)), "1/1");
    }
}
