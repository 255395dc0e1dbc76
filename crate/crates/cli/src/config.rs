//! Merging `--config` JSON with command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};
use crate::manifest::MANIFEST_FORMAT;

/// Parses a positive count written as an integer or in exponent form (`1e6`).
pub fn parse_count(s: &str) -> std::result::Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a count"))?;
    if !(v >= 0.0 && v.fract() == 0.0 && v <= 1e15) {
        return Err(format!("{s:?} is not a whole non-negative count"));
    }
    Ok(v as usize)
}

/// Reads a config file. A run manifest is accepted too, in which case its
/// `config` object is used and its command must match.
pub fn load(path: &Path, command: &str) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = v else {
        return Err(CliError::Usage(format!(
            "config {} is not a JSON object",
            path.display()
        )));
    };
    if map.get("format").and_then(Value::as_str) == Some(MANIFEST_FORMAT) {
        let recorded = map.get("command").and_then(Value::as_str).unwrap_or_default();
        if recorded != command {
            return Err(CliError::Usage(format!(
                "manifest {} records command {recorded:?}, not {command:?}",
                path.display()
            )));
        }
        return Ok(map.get("config").cloned().unwrap_or(Value::Object(Map::new())));
    }
    Ok(Value::Object(map))
}

/// Overlays the flags that were given onto the config object and
/// deserializes the result. The option type rejects unknown keys.
pub fn resolve<F: Serialize, O: DeserializeOwned>(flags: &F, config: Option<Value>) -> Result<O> {
    let mut base = match config {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(CliError::Usage("config must be a JSON object".into())),
        None => Map::new(),
    };
    if let Value::Object(f) = serde_json::to_value(flags)? {
        for (k, v) in f {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Usage(format!("options: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize)]
    struct Flags {
        #[serde(skip_serializing_if = "Option::is_none")]
        a: Option<u32>,
        #[serde(skip_serializing_if = "Option::is_none")]
        b: Option<String>,
    }

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields, default)]
    struct Opts {
        a: u32,
        b: String,
    }

    impl Default for Opts {
        fn default() -> Self {
            Self { a: 1, b: "x".into() }
        }
    }

    #[test]
    fn flags_override_config() {
        let cfg = serde_json::json!({"a": 5, "b": "cfg"});
        let o: Opts = resolve(
            &Flags {
                a: None,
                b: Some("flag".into()),
            },
            Some(cfg),
        )
        .unwrap();
        assert_eq!(o, Opts { a: 5, b: "flag".into() });
        let d: Opts = resolve(&Flags { a: None, b: None }, None).unwrap();
        assert_eq!(d, Opts::default());
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let cfg = serde_json::json!({"a": 5, "typo": 1});
        let e = resolve::<_, Opts>(&Flags { a: None, b: None }, Some(cfg)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn counts() {
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert_eq!(parse_count("2500"), Ok(2500));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
        assert!(parse_count("many").is_err());
    }
}
