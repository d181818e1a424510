//! Flag / spec-file merging. A spec file is a JSON object with the same keys
//! as the long flags (snake_case); any flag given on the command line wins.

use std::path::Path;

use clap::ValueEnum;
use pnlrank::order::{Method, Y0Policy};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Rankg,
    Ranks,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rankg => Method::RankG,
            MethodArg::Ranks => Method::RankS,
        }
    }
}

/// `zero`, `median`, or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Y0Arg {
    Value(f64),
    Named(String),
}

impl std::str::FromStr for Y0Arg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(s.parse::<f64>().map_or_else(|_| Y0Arg::Named(s.to_string()), Y0Arg::Value))
    }
}

impl Y0Arg {
    pub fn policy(&self) -> Result<Y0Policy, CliError> {
        match self {
            Y0Arg::Value(v) if v.is_finite() => Ok(Y0Policy::Explicit(*v)),
            Y0Arg::Named(s) if s == "median" => Ok(Y0Policy::Median),
            Y0Arg::Named(s) if s == "zero" => Ok(Y0Policy::Zero),
            other => Err(CliError::Validation(format!("--y0 must be zero, median or a finite number, got {other:?}"))),
        }
    }
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read spec file {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("spec file {}: {e}", path.display())))
}

/// Recursively writes the non-null entries of `top` over `base`.
pub fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                if v.is_null() {
                    continue;
                }
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) if !t.is_null() => *b = t,
        _ => {}
    }
}

/// Flag values over the optional spec file.
pub fn merge_flags<T: Serialize + DeserializeOwned>(flags: &T, spec: Option<&Path>) -> Result<T, CliError> {
    let mut base = match spec {
        Some(p) => read_json(p)?,
        None => Value::Object(Default::default()),
    };
    if !base.is_object() {
        return Err(CliError::Validation("spec file must contain a JSON object".into()));
    }
    let top = serde_json::to_value(flags).map_err(|e| CliError::Validation(e.to_string()))?;
    overlay(&mut base, top);
    serde_json::from_value(base).map_err(|e| CliError::Validation(format!("spec file: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overlay_keeps_base_where_flags_are_absent() {
        let mut base = json!({"a": 1, "nested": {"x": 1, "y": 2}});
        overlay(&mut base, json!({"a": null, "b": 3, "nested": {"y": 5}}));
        assert_eq!(base, json!({"a": 1, "b": 3, "nested": {"x": 1, "y": 5}}));
    }

    #[test]
    fn y0_parses_names_and_numbers() {
        assert_eq!("median".parse::<Y0Arg>().unwrap().policy().unwrap(), Y0Policy::Median);
        assert_eq!("-1.5".parse::<Y0Arg>().unwrap().policy().unwrap(), Y0Policy::Explicit(-1.5));
        assert!("mean".parse::<Y0Arg>().unwrap().policy().is_err());
    }
}
