//! JSON experiment configs with `//` comment lines.

use std::path::Path;

use fedsim_core::engine::ExperimentConfig;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

/// A parsed config together with the hash of its canonical form.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

/// Blanks out lines whose first non-space characters are `//`. Line numbers
/// are preserved so parser errors still point at the right place.
pub fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| if l.trim_start().starts_with("//") { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n")
}

/// SHA-256 of the document re-serialized with sorted keys and no whitespace,
/// so key order, formatting and comments do not change it.
pub fn canonical_hash(doc: &Value) -> String {
    // serde_json's default map is ordered by key.
    let canonical = serde_json::to_vec(doc).expect("a parsed JSON value always serializes");
    Sha256::digest(&canonical)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn parse_config(text: &str) -> CliResult<LoadedConfig> {
    let cleaned = strip_comments(text);
    let doc: Value =
        serde_json::from_str(&cleaned).map_err(|e| CliError::Usage(format!("config is not valid JSON: {e}")))?;
    let config: ExperimentConfig =
        serde_json::from_value(doc.clone()).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    config.resolve()?;
    Ok(LoadedConfig {
        config,
        hash: canonical_hash(&doc),
    })
}

/// Reads `path`, or falls back to the built-in defaults when no path is
/// given.
pub fn load_config(path: Option<&Path>) -> CliResult<LoadedConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text).map_err(|e| match e {
                CliError::Usage(m) => CliError::Usage(format!("{}: {m}", p.display())),
                other => other,
            })
        }
        None => {
            let config = ExperimentConfig::default();
            let doc = serde_json::to_value(&config).expect("config serializes");
            Ok(LoadedConfig {
                config,
                hash: canonical_hash(&doc),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order_and_comments() {
        let a = parse_config(r#"{"seed": 3, "rounds": 5, "aggregator": {"name": "fedavgm", "beta": 0.5}}"#).unwrap();
        let b = parse_config(
            "// comment\n{\n  \"aggregator\": {\"beta\": 0.5, \"name\": \"fedavgm\"},\n  // another\n  \"rounds\": 5,\n  \"seed\": 3\n}",
        )
        .unwrap();
        assert_eq!(a.hash, b.hash);
        assert_eq!(a.config, b.config);
        let c = parse_config(r#"{"seed": 4, "rounds": 5, "aggregator": {"name": "fedavgm", "beta": 0.5}}"#).unwrap();
        assert_ne!(a.hash, c.hash);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config(r#"{"rouns": 5}"#).unwrap_err();
        assert!(err.to_string().contains("rouns"), "{err}");
        let err = parse_config(r#"{"aggregator": {"nmae": "fedavg"}}"#).unwrap_err();
        assert!(err.to_string().contains("nmae"), "{err}");
    }

    #[test]
    fn bad_strategy_names_are_config_errors() {
        let err = parse_config(r#"{"aggregator": {"name": "fedprox"}}"#).unwrap_err();
        assert_eq!(err.exit_code(), crate::EXIT_USAGE);
        assert!(err.to_string().contains("fedprox"));
    }

    #[test]
    fn sha256_known_vector() {
        // sha256 of the five bytes `"abc"`, quotes included
        assert_eq!(
            canonical_hash(&Value::String("abc".into())),
            "6cc43f858fbb763301637b5af970e2a46b46f461f27e5a0f41e009c59b827b25"
        );
    }
}
