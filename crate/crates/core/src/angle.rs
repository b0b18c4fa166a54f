//! Parsing of angles written as `0.75pi`, `3pi/4`, `-pi/2` or plain radians.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub fn parse_angle(text: &str) -> Result<f64> {
    let s: String = text.trim().chars().filter(|c| !c.is_whitespace()).collect();
    let s = s.replace('π', "pi");
    let bad = || Error::Config(format!("cannot parse angle {text:?}"));
    let value = if let Some(pos) = s.find("pi") {
        let (coef, rest) = s.split_at(pos);
        let rest = &rest[2..];
        let coef = coef.trim_end_matches('*');
        let k = match coef {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => c.parse::<f64>().map_err(|_| bad())?,
        };
        let div = match rest {
            "" => 1.0,
            r => r
                .strip_prefix('/')
                .ok_or_else(bad)?
                .parse::<f64>()
                .map_err(|_| bad())?,
        };
        k * PI / div
    } else {
        s.parse::<f64>().map_err(|_| bad())?
    };
    if !value.is_finite() {
        return Err(bad());
    }
    Ok(value)
}
